#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unetmer/tensor.hpp"

namespace unetmer {

using LabelMap = Tensor<std::uint8_t>;

// Per-class binary confusion counts (class vs rest).
struct Confusion {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Confusion confusion_counts(const LabelMap& pred, const LabelMap& gt, int cls);

// All metrics treat class 0 as background. For K=2 they score foreground
// class 1; for K>2 they macro-average the per-foreground-class scores.
// Empty-denominator convention: a class absent from both maps contributes
// 1.0 (agreement on absence), absent from exactly one contributes 0.0.
double dice(const LabelMap& pred, const LabelMap& gt, int num_classes);
double jaccard(const LabelMap& pred, const LabelMap& gt, int num_classes);
double pixel_accuracy(const LabelMap& pred, const LabelMap& gt, int num_classes);
double sensitivity(const LabelMap& pred, const LabelMap& gt, int num_classes);
double specificity(const LabelMap& pred, const LabelMap& gt, int num_classes);

struct MetricValues {
  double jaccard = 0, dice = 0, accuracy = 0, sensitivity = 0, specificity = 0;
};

MetricValues compute_metrics(const LabelMap& pred, const LabelMap& gt, int num_classes);

struct MetricsReport {
  std::vector<std::string> ids;
  std::vector<MetricValues> per_image;
  MetricValues mean;
  MetricValues stddev;
};

MetricsReport aggregate_metrics(std::vector<std::string> ids,
                                std::vector<MetricValues> per_image);

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace unetmer
