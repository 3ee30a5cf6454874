#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <utility>

#include "unetmer/metrics.hpp"

namespace unetmer {

// Scale-discrepancy confidence: Dice agreement between the segmentation maps
// B_{s=i} and B_{s=j} of one image. Symmetric, in [0,1], 1 when the maps
// agree exactly (including agreement on an empty foreground).
double confidence_score(const LabelMap& b_i, const LabelMap& b_j, int num_classes);

// Sample Pearson correlation; throws ValidationError when either input has
// zero variance or fewer than two points.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// For each d in deciles: rank descending by score (stable), keep the top
// ceil(d% * N) samples, report their mean Dice. d=100 reproduces the global
// mean.
std::vector<std::pair<double, double>> coverage_curve(const std::vector<double>& scores,
                                                      const std::vector<double>& dices,
                                                      const std::vector<double>& deciles);

using ScalePair = std::pair<int, int>;

struct ConfidenceEntry {
  std::string id;
  std::map<ScalePair, double> confidence;  // C_ij per configured pair
  std::optional<double> dice_s1;           // Dice of B_{s=1} when gt is available
};

struct ConfidenceReport {
  ScalePair pair_used;
  std::vector<ConfidenceEntry> entries;  // input order
  std::vector<std::size_t> ranking;      // ascending by C: most difficult first
  std::map<ScalePair, double> pearson_r;
  std::vector<std::pair<double, double>> coverage;  // only when gt present
};

// Ranks images by difficulty (ascending confidence) using the chosen scale
// pair; attaches Pearson correlations and the coverage curve when ground
// truth Dice values are present. Ties keep input order.
ConfidenceReport rank_by_difficulty(std::vector<ConfidenceEntry> entries, ScalePair pair,
                                    const std::vector<double>& deciles = {10, 20, 30, 40, 50,
                                                                          60, 70, 80, 90, 100});

// ProtoSeg segmentation-ability score of a feature map [C_f, h_f, w_f]
// against a reference mask [H, W]: nearest-prototype (cosine) assignment of
// every feature position to the foreground or background prototype, scored
// by binary Dice at full resolution. Returns nullopt when the mask has no
// foreground or no background at feature resolution (SA undefined).
std::optional<double> protoseg_sa(const Tensor<float>& feature_map, const LabelMap& reference);

void write_ranking_csv(const ConfidenceReport& report, const std::filesystem::path& path);
void write_coverage_csv(const ConfidenceReport& report, const std::filesystem::path& path);
void write_records_jsonl(const ConfidenceReport& report, const std::filesystem::path& path);

}  // namespace unetmer
