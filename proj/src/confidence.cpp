#include "unetmer/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "unetmer/common.hpp"
#include "unetmer/dataset.hpp"

namespace unetmer {

double confidence_score(const LabelMap& b_i, const LabelMap& b_j, int num_classes) {
  return dice(b_i, b_j, num_classes);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  check(x.size() == y.size(), "pearson: length mismatch");
  check(x.size() >= 2, "pearson: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  check(sxx > 0 && syy > 0, "pearson: zero variance, correlation undefined");
  return sxy / std::sqrt(sxx * syy);
}

std::vector<std::pair<double, double>> coverage_curve(const std::vector<double>& scores,
                                                      const std::vector<double>& dices,
                                                      const std::vector<double>& deciles) {
  check(!scores.empty(), "coverage_curve: empty inputs");
  check(scores.size() == dices.size(), "coverage_curve: length mismatch");
  for (double d : deciles) check(0.0 < d && d <= 100.0, "decile must lie in (0, 100]");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double n = static_cast<double>(scores.size());
  std::vector<std::pair<double, double>> curve;
  curve.reserve(deciles.size());
  for (double d : deciles) {
    // The epsilon keeps float-representation noise (e.g. d = 200/3) from
    // bumping the count past the intended ceil(d% * N).
    auto keep = static_cast<std::size_t>(std::ceil(d * n / 100.0 - 1e-9));
    keep = std::clamp<std::size_t>(keep, 1, scores.size());
    double mean = 0;
    for (std::size_t i = 0; i < keep; ++i) mean += dices[order[i]];
    curve.emplace_back(d, mean / static_cast<double>(keep));
  }
  return curve;
}

ConfidenceReport rank_by_difficulty(std::vector<ConfidenceEntry> entries, ScalePair pair,
                                    const std::vector<double>& deciles) {
  check(!entries.empty(), "rank_by_difficulty: no entries");
  check(pair.first != pair.second, "confidence pair must use two distinct scales");
  for (const auto& e : entries)
    check(e.confidence.count(pair),
          "entry " + e.id + " is missing confidence for the requested scale pair");

  ConfidenceReport report;
  report.pair_used = pair;
  report.entries = std::move(entries);

  report.ranking.resize(report.entries.size());
  std::iota(report.ranking.begin(), report.ranking.end(), 0);
  std::stable_sort(report.ranking.begin(), report.ranking.end(), [&](std::size_t a,
                                                                     std::size_t b) {
    return report.entries[a].confidence.at(pair) < report.entries[b].confidence.at(pair);
  });

  std::vector<double> dices;
  for (const auto& e : report.entries)
    if (e.dice_s1) dices.push_back(*e.dice_s1);
  if (dices.size() == report.entries.size() && dices.size() >= 2) {
    for (const auto& [p, unused] : report.entries.front().confidence) {
      std::vector<double> scores;
      scores.reserve(report.entries.size());
      for (const auto& e : report.entries) scores.push_back(e.confidence.at(p));
      try {
        report.pearson_r[p] = pearson(scores, dices);
      } catch (const ValidationError&) {
        // Degenerate (constant) scores or dices: correlation stays unreported.
      }
    }
    std::vector<double> scores;
    for (const auto& e : report.entries) scores.push_back(e.confidence.at(pair));
    report.coverage = coverage_curve(scores, dices, deciles);
  }
  return report;
}

std::optional<double> protoseg_sa(const Tensor<float>& feature_map, const LabelMap& reference) {
  check(feature_map.ndim() == 3, "protoseg_sa expects feature map [C, h, w]");
  check(reference.ndim() == 2, "protoseg_sa expects reference mask [H, W]");
  const std::size_t C = feature_map.dim(0), h = feature_map.dim(1), w = feature_map.dim(2);

  // Binary problem: any nonzero label is foreground.
  LabelMap binary({reference.dim(0), reference.dim(1)});
  for (std::size_t i = 0; i < reference.numel(); ++i) binary[i] = reference[i] != 0;
  LabelMap small = resize_nearest(binary, h, w);

  std::size_t n_fg = 0;
  for (std::size_t i = 0; i < small.numel(); ++i) n_fg += small[i];
  const std::size_t n_bg = small.numel() - n_fg;
  if (n_fg == 0 || n_bg == 0) return std::nullopt;

  std::vector<double> proto_fg(C, 0.0), proto_bg(C, 0.0);
  for (std::size_t i = 0; i < h * w; ++i) {
    auto& proto = small[i] ? proto_fg : proto_bg;
    for (std::size_t c = 0; c < C; ++c) proto[c] += feature_map[c * h * w + i];
  }
  for (std::size_t c = 0; c < C; ++c) {
    proto_fg[c] /= static_cast<double>(n_fg);
    proto_bg[c] /= static_cast<double>(n_bg);
  }

  auto norm = [&](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  const double nfg = norm(proto_fg), nbg = norm(proto_bg);

  LabelMap assigned({h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    double dot_fg = 0, dot_bg = 0, nx = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const double x = feature_map[c * h * w + i];
      dot_fg += x * proto_fg[c];
      dot_bg += x * proto_bg[c];
      nx += x * x;
    }
    nx = std::sqrt(nx);
    const double sim_fg = (nx > 0 && nfg > 0) ? dot_fg / (nx * nfg) : 0.0;
    const double sim_bg = (nx > 0 && nbg > 0) ? dot_bg / (nx * nbg) : 0.0;
    assigned[i] = sim_fg > sim_bg ? 1 : 0;  // ties go to background
  }

  LabelMap upsampled = resize_nearest(assigned, reference.dim(0), reference.dim(1));
  return dice(upsampled, binary, 2);
}

void write_ranking_csv(const ConfidenceReport& report, const std::filesystem::path& path) {
  std::ofstream os(path);
  check_io(bool(os), "cannot write ranking: " + path.string());
  os << "rank,id,confidence,dice_s1\n";
  for (std::size_t r = 0; r < report.ranking.size(); ++r) {
    const auto& e = report.entries[report.ranking[r]];
    os << r << ',' << e.id << ',' << e.confidence.at(report.pair_used) << ',';
    if (e.dice_s1)
      os << *e.dice_s1;
    else
      os << "-";
    os << '\n';
  }
  check_io(bool(os), "failed writing ranking: " + path.string());
}

void write_coverage_csv(const ConfidenceReport& report, const std::filesystem::path& path) {
  std::ofstream os(path);
  check_io(bool(os), "cannot write coverage: " + path.string());
  os << "d,mean_dice\n";
  for (const auto& [d, mean] : report.coverage) os << d << ',' << mean << '\n';
  check_io(bool(os), "failed writing coverage: " + path.string());
}

void write_records_jsonl(const ConfidenceReport& report, const std::filesystem::path& path) {
  std::ofstream os(path);
  check_io(bool(os), "cannot write records: " + path.string());
  std::vector<std::size_t> rank_of(report.entries.size());
  for (std::size_t r = 0; r < report.ranking.size(); ++r) rank_of[report.ranking[r]] = r;
  for (std::size_t i = 0; i < report.entries.size(); ++i) {
    const auto& e = report.entries[i];
    nlohmann::json rec;
    rec["id"] = e.id;
    rec["rank"] = rank_of[i];
    nlohmann::json c;
    for (const auto& [p, v] : e.confidence)
      c["c_" + std::to_string(p.first) + std::to_string(p.second)] = v;
    rec["confidence"] = c;
    if (e.dice_s1) rec["dice_s1"] = *e.dice_s1;
    os << rec.dump() << '\n';
  }
  check_io(bool(os), "failed writing records: " + path.string());
}

}  // namespace unetmer
