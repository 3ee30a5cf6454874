#pragma once

#include <map>

#include "unetmer/confidence.hpp"
#include "unetmer/dataset.hpp"
#include "unetmer/metrics.hpp"
#include "unetmer/model.hpp"

namespace unetmer {

// Predicted/ground-truth label pair at full (possibly stitched 3D) extent.
struct ScoredItem {
  std::string id;
  Tensor<std::uint8_t> pred;
  Tensor<std::uint8_t> gt;
};

// Runs B_{s} over a sample set. Samples sharing a volume_key are stitched
// into [D, H, W] volumes before scoring, matching how 3D corpora are
// evaluated; standalone samples score as 2D slices.
template <class T>
std::vector<ScoredItem> predict_split(UNetmer<T>& model, const std::vector<Sample>& samples,
                                      int s) {
  std::vector<ScoredItem> items;
  std::map<std::string, std::vector<std::size_t>> volumes;  // key -> sample indices
  std::vector<std::size_t> standalone;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].volume_key.empty())
      standalone.push_back(i);
    else
      volumes[samples[i].volume_key].push_back(i);
  }

  for (std::size_t i : standalone) {
    Tensor<T> image = samples[i].image.template cast<T>();
    items.push_back({samples[i].id, model.predict(image, s), samples[i].mask});
  }
  for (auto& [key, indices] : volumes) {
    std::vector<std::pair<int, Tensor<std::uint8_t>>> preds, gts;
    for (std::size_t i : indices) {
      Tensor<T> image = samples[i].image.template cast<T>();
      preds.emplace_back(samples[i].slice_index, model.predict(image, s));
      gts.emplace_back(samples[i].slice_index, samples[i].mask);
    }
    items.push_back({key, slices_to_volume(preds, key), slices_to_volume(gts, key)});
  }
  return items;
}

template <class T>
MetricsReport evaluate_split(UNetmer<T>& model, const std::vector<Sample>& samples, int s,
                             int num_classes) {
  check(!samples.empty(), "no samples to evaluate");
  auto items = predict_split(model, samples, s);
  std::vector<std::string> ids;
  std::vector<MetricValues> values;
  for (const auto& item : items) {
    ids.push_back(item.id);
    values.push_back(compute_metrics(item.pred, item.gt, num_classes));
  }
  return aggregate_metrics(std::move(ids), std::move(values));
}

// Computes C_ij for every distinct pair of the model's configured scales,
// plus Dice of B_{s=1} against ground truth when requested.
template <class T>
ConfidenceReport confidence_split(UNetmer<T>& model, const std::vector<Sample>& samples,
                                  ScalePair pair, bool with_gt,
                                  const std::vector<double>& deciles = {10, 20, 30, 40, 50, 60,
                                                                        70, 80, 90, 100}) {
  check(!samples.empty(), "no samples to rank");
  const auto& scales = model.config().scales;
  check(scales.size() >= 2, "confidence requires >= 2 scales");
  check(pair.first != pair.second, "confidence pair must use two distinct scales");
  const int num_classes = model.config().backbone.num_classes;

  std::vector<ConfidenceEntry> entries;
  entries.reserve(samples.size());
  for (const auto& sample : samples) {
    Tensor<T> image = sample.image.template cast<T>();
    ConfidenceEntry entry;
    entry.id = sample.id;

    std::map<int, Tensor<std::uint8_t>> maps;
    auto need = [&](int s) {
      if (!maps.count(s)) maps[s] = model.predict(image, s);
    };
    for (std::size_t a = 0; a < scales.size(); ++a)
      for (std::size_t b = a + 1; b < scales.size(); ++b) {
        const int i = std::min(scales[a], scales[b]);
        const int j = std::max(scales[a], scales[b]);
        need(i);
        need(j);
        entry.confidence[{i, j}] = confidence_score(maps.at(i), maps.at(j), num_classes);
      }
    if (with_gt) {
      need(1);
      entry.dice_s1 = dice(maps.at(1), sample.mask, num_classes);
    }
    entries.push_back(std::move(entry));
  }
  return rank_by_difficulty(std::move(entries), pair, deciles);
}

// Mean SA over the last two feature maps (final decoder feature and logits),
// the ProtoSeg ranking baseline. reference: ground-truth mask, or the model's
// own B_{s=1} when ground truth is absent.
template <class T>
std::optional<double> protoseg_baseline_score(UNetmer<T>& model, const Sample& sample,
                                              bool use_gt) {
  Tensor<T> image = sample.image.template cast<T>();
  const LabelMap reference = use_gt ? sample.mask : model.predict(image, 1);
  auto feats = model.forward_features(image, 1);
  check(feats.size() >= 2, "expected at least two feature maps");
  double total = 0;
  int count = 0;
  for (std::size_t k = feats.size() - 2; k < feats.size(); ++k) {
    auto sa = protoseg_sa(feats[k].second.template cast<float>(), reference);
    if (sa) {
      total += *sa;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return total / count;
}

}  // namespace unetmer
