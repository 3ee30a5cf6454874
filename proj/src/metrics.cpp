#include "unetmer/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "unetmer/common.hpp"

namespace unetmer {

namespace {

void check_pair(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  check(pred.shape() == gt.shape(), "label map shapes differ: " + pred.shape_str() + " vs " +
                                        gt.shape_str());
  check(num_classes >= 2, "num_classes must be >= 2");
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    check(pred[i] < num_classes, "prediction label >= num_classes");
    check(gt[i] < num_classes, "ground-truth label >= num_classes");
  }
}

// Macro-average a per-class score over the foreground classes.
template <class Fn>
double macro_over_foreground(const LabelMap& pred, const LabelMap& gt, int num_classes,
                             Fn score) {
  double total = 0;
  for (int cls = 1; cls < num_classes; ++cls) total += score(confusion_counts(pred, gt, cls));
  return total / static_cast<double>(num_classes - 1);
}

}  // namespace

Confusion confusion_counts(const LabelMap& pred, const LabelMap& gt, int cls) {
  Confusion c;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred[i] == cls;
    const bool g = gt[i] == cls;
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
    c.tn += !p && !g;
  }
  return c;
}

double dice(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  check_pair(pred, gt, num_classes);
  return macro_over_foreground(pred, gt, num_classes, [](const Confusion& c) {
    const double denom = static_cast<double>(2 * c.tp + c.fp + c.fn);
    return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / denom;
  });
}

double jaccard(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  check_pair(pred, gt, num_classes);
  return macro_over_foreground(pred, gt, num_classes, [](const Confusion& c) {
    const double denom = static_cast<double>(c.tp + c.fp + c.fn);
    return denom == 0 ? 1.0 : static_cast<double>(c.tp) / denom;
  });
}

double pixel_accuracy(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  check_pair(pred, gt, num_classes);
  return macro_over_foreground(pred, gt, num_classes, [](const Confusion& c) {
    return static_cast<double>(c.tp + c.tn) /
           static_cast<double>(c.tp + c.fp + c.fn + c.tn);
  });
}

double sensitivity(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  check_pair(pred, gt, num_classes);
  return macro_over_foreground(pred, gt, num_classes, [](const Confusion& c) {
    if (c.tp + c.fn == 0) return c.tp + c.fp == 0 ? 1.0 : 0.0;
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  });
}

double specificity(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  check_pair(pred, gt, num_classes);
  return macro_over_foreground(pred, gt, num_classes, [](const Confusion& c) {
    if (c.tn + c.fp == 0) return c.tn + c.fn == 0 ? 1.0 : 0.0;
    return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  });
}

MetricValues compute_metrics(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  MetricValues v;
  v.jaccard = jaccard(pred, gt, num_classes);
  v.dice = dice(pred, gt, num_classes);
  v.accuracy = pixel_accuracy(pred, gt, num_classes);
  v.sensitivity = sensitivity(pred, gt, num_classes);
  v.specificity = specificity(pred, gt, num_classes);
  return v;
}

MetricsReport aggregate_metrics(std::vector<std::string> ids,
                                std::vector<MetricValues> per_image) {
  check(!per_image.empty(), "no metric values to aggregate");
  check(ids.size() == per_image.size(), "ids/value count mismatch");
  MetricsReport report;
  report.ids = std::move(ids);
  report.per_image = std::move(per_image);

  const double n = static_cast<double>(report.per_image.size());
  auto fold = [&](auto member) {
    double mean = 0;
    for (const auto& v : report.per_image) mean += v.*member;
    mean /= n;
    double var = 0;
    for (const auto& v : report.per_image) {
      const double d = v.*member - mean;
      var += d * d;
    }
    return std::pair<double, double>{mean, std::sqrt(var / n)};
  };
  std::tie(report.mean.jaccard, report.stddev.jaccard) = fold(&MetricValues::jaccard);
  std::tie(report.mean.dice, report.stddev.dice) = fold(&MetricValues::dice);
  std::tie(report.mean.accuracy, report.stddev.accuracy) = fold(&MetricValues::accuracy);
  std::tie(report.mean.sensitivity, report.stddev.sensitivity) =
      fold(&MetricValues::sensitivity);
  std::tie(report.mean.specificity, report.stddev.specificity) =
      fold(&MetricValues::specificity);
  return report;
}

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream os(path);
  check_io(bool(os), "cannot write metrics: " + path.string());
  os << "id,jaccard,dice,accuracy,sensitivity,specificity\n";
  auto row = [&](const std::string& id, const MetricValues& v) {
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", id.c_str(), v.jaccard,
                  v.dice, v.accuracy, v.sensitivity, v.specificity);
    os << line;
  };
  for (std::size_t i = 0; i < report.ids.size(); ++i) row(report.ids[i], report.per_image[i]);
  row("mean", report.mean);
  row("std", report.stddev);
  check_io(bool(os), "failed writing metrics: " + path.string());
}

}  // namespace unetmer
