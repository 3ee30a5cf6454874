#pragma once

#include <cmath>
#include <filesystem>
#include <ostream>

#include "unetmer/checkpoint.hpp"
#include "unetmer/dataset.hpp"
#include "unetmer/metrics.hpp"
#include "unetmer/model.hpp"

namespace unetmer {

enum class ScaleMixing { RoundRobin, UniformRandom };

struct TrainConfig {
  int epochs = 100;
  int batch_size = 16;
  double lr0 = 1e-4;
  int lr_halving_period = 20;  // epochs
  std::vector<int> scales = {1};
  std::uint64_t seed = 0;
  ScaleMixing mixing = ScaleMixing::RoundRobin;
  int checkpoint_every = 0;  // epochs; 0 = only best/final
  std::filesystem::path out_dir;  // empty = no checkpoints or history file

  void validate() const {
    check(epochs >= 1, "epochs must be >= 1");
    check(batch_size >= 1, "batch_size must be >= 1");
    check(lr0 > 0, "lr0 must be positive");
    check(lr_halving_period >= 1, "lr_halving_period must be >= 1");
    check(!scales.empty(), "training scales must be nonempty");
  }
};

// lr0 * 0.5^floor(epoch / period). Halving is an exact exponent shift, so
// the schedule values are exact doubles.
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  check(epoch >= 0 && epoch < cfg.epochs, "epoch out of range");
  return cfg.lr0 * std::pow(0.5, epoch / cfg.lr_halving_period);
}

// Deterministic round-robin over the ordered scale set, keyed by the global
// optimization step.
inline int sample_scale(std::size_t step, const std::vector<int>& scales) {
  check(!scales.empty(), "scales must be nonempty");
  return scales[step % scales.size()];
}

// Mean per-pixel cross-entropy over the batch. Accumulates in double and
// optionally writes (softmax - onehot) / (N*H*W) into dlogits.
template <class T>
double cross_entropy(const Tensor<T>& logits, const Tensor<std::uint8_t>& labels,
                     Tensor<T>* dlogits = nullptr) {
  check(logits.ndim() == 4, "cross_entropy expects logits [N, K, H, W]");
  check(labels.ndim() == 3, "cross_entropy expects labels [N, H, W]");
  const std::size_t N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  check(labels.dim(0) == N && labels.dim(1) == H && labels.dim(2) == W,
        "logits/labels shape mismatch");
  const std::size_t hw = H * W;
  const double inv_count = 1.0 / static_cast<double>(N * hw);
  if (dlogits) *dlogits = Tensor<T>(logits.shape());

  double total = 0;
  std::vector<double> probs(K);
  for (std::size_t n = 0; n < N; ++n) {
    const T* base = logits.data() + n * K * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      const std::uint8_t label = labels[n * hw + i];
      check(label < K, "label " + std::to_string(int(label)) + " >= num_classes " +
                           std::to_string(K));
      double mx = base[i];
      for (std::size_t k = 1; k < K; ++k)
        mx = std::max(mx, static_cast<double>(base[k * hw + i]));
      double sum = 0;
      for (std::size_t k = 0; k < K; ++k) {
        probs[k] = std::exp(static_cast<double>(base[k * hw + i]) - mx);
        sum += probs[k];
      }
      total += std::log(sum) - (static_cast<double>(base[label * hw + i]) - mx);
      if (dlogits) {
        T* dbase = dlogits->data() + n * K * hw;
        for (std::size_t k = 0; k < K; ++k) {
          const double p = probs[k] / sum;
          dbase[k * hw + i] =
              static_cast<T>((p - (k == label ? 1.0 : 0.0)) * inv_count);
        }
      }
    }
  }
  return total * inv_count;
}

template <class T>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const nn::ParamList<T>& params, double lr) {
    if (m_.empty()) {
      for (const auto& [name, p] : params) {
        m_.emplace_back(Tensor<T>::zeros(p->value.shape()));
        v_.emplace_back(Tensor<T>::zeros(p->value.shape()));
      }
    }
    check(m_.size() == params.size(), "adam state does not match parameter list");
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i].second;
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t j = 0; j < p.value.numel(); ++j) {
        const double g = p.grad[j];
        const double mj = b1_ * m[j] + (1.0 - b1_) * g;
        const double vj = b2_ * v[j] + (1.0 - b2_) * g * g;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        p.value[j] -= static_cast<T>(lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
      }
    }
  }

 private:
  double b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_dice_s1 = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t steps = 0;
  double best_val_dice = -1.0;
  int best_epoch = -1;
};

inline void write_history(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream os(path);
  check_io(bool(os), "cannot write history: " + path.string());
  os << "epoch lr train_loss val_dice_s1\n";
  for (const auto& r : history.epochs) {
    char line[160];
    std::snprintf(line, sizeof(line), "%d %.10g %.8f %.6f\n", r.epoch, r.lr, r.train_loss,
                  r.val_dice_s1);
    os << line;
  }
}

namespace detail_train {

template <class T>
std::pair<Tensor<T>, Tensor<std::uint8_t>> assemble_batch(const std::vector<Sample>& samples,
                                                          const std::vector<std::size_t>& idx,
                                                          std::size_t lo, std::size_t hi) {
  const auto& first = samples[idx[lo]];
  const std::size_t C = first.image.dim(0), H = first.image.dim(1), W = first.image.dim(2);
  Tensor<T> images({hi - lo, C, H, W});
  Tensor<std::uint8_t> labels({hi - lo, H, W});
  for (std::size_t b = lo; b < hi; ++b) {
    const Sample& s = samples[idx[b]];
    check(s.image.dim(0) == C && s.image.dim(1) == H && s.image.dim(2) == W,
          "samples disagree on image shape");
    for (std::size_t i = 0; i < C * H * W; ++i)
      images[(b - lo) * C * H * W + i] = static_cast<T>(s.image[i]);
    std::copy(s.mask.data(), s.mask.data() + H * W, labels.data() + (b - lo) * H * W);
  }
  return {std::move(images), std::move(labels)};
}

}  // namespace detail_train

// Mean Dice of B_{s=1} over a sample set, evaluated in batches.
template <class T>
double validation_dice_s1(UNetmer<T>& model, const std::vector<Sample>& samples,
                          std::size_t batch_size) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  double total = 0;
  for (std::size_t lo = 0; lo < samples.size(); lo += batch_size) {
    const std::size_t hi = std::min(samples.size(), lo + batch_size);
    auto [images, labels] = detail_train::assemble_batch<T>(samples, idx, lo, hi);
    Tensor<T> logits = model.forward_at_scale(images, 1, false);
    Tensor<std::uint8_t> pred = argmax_labels(logits);
    const std::size_t hw = labels.dim(1) * labels.dim(2);
    for (std::size_t b = 0; b < hi - lo; ++b) {
      Tensor<std::uint8_t> p({labels.dim(1), labels.dim(2)});
      Tensor<std::uint8_t> g({labels.dim(1), labels.dim(2)});
      std::copy(pred.data() + b * hw, pred.data() + (b + 1) * hw, p.data());
      std::copy(labels.data() + b * hw, labels.data() + (b + 1) * hw, g.data());
      total += dice(p, g, model.config().backbone.num_classes);
    }
  }
  return total / static_cast<double>(samples.size());
}

// Joint multi-scale training: one scale per optimization step (round-robin
// by default), cross-entropy on the stitched full-image logits, Adam with
// the halving lr schedule. Reproducible given the seed.
template <class T>
TrainHistory train(UNetmer<T>& model, const std::vector<Sample>& train_samples,
                   const std::vector<Sample>& val_samples, const TrainConfig& cfg,
                   std::ostream* log = nullptr) {
  cfg.validate();
  check(!train_samples.empty(), "empty training set");
  for (int s : cfg.scales)
    check(std::find(model.config().scales.begin(), model.config().scales.end(), s) !=
              model.config().scales.end(),
          "training scale " + std::to_string(s) + " not in model config");

  Rng rng(cfg.seed);
  Adam<T> adam;
  auto params = model.parameters();
  TrainHistory history;

  const bool save_outputs = !cfg.out_dir.empty();
  if (save_outputs) std::filesystem::create_directories(cfg.out_dir);

  std::vector<std::size_t> idx(train_samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    check(lr == cfg.lr0 * std::pow(0.5, epoch / cfg.lr_halving_period),
          "lr schedule invariant violated");
    rng.shuffle(idx);

    double epoch_loss = 0;
    std::size_t epoch_steps = 0;
    for (std::size_t lo = 0; lo < idx.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(idx.size(), lo + cfg.batch_size);
      const int s = (cfg.mixing == ScaleMixing::RoundRobin)
                        ? sample_scale(history.steps, cfg.scales)
                        : cfg.scales[rng.uniform_int(cfg.scales.size())];
      auto [images, labels] = detail_train::assemble_batch<T>(train_samples, idx, lo, hi);

      nn::zero_grads(params);
      Tensor<T> logits = model.forward_at_scale(images, s, true);
      Tensor<T> dlogits;
      const double loss = cross_entropy(logits, labels, &dlogits);
      if (!std::isfinite(loss))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                              std::to_string(history.steps));
      model.backward(dlogits);
      adam.step(params, lr);
      for (const auto& [name, p] : params)
        for (std::size_t j = 0; j < p->value.numel(); ++j)
          if (!std::isfinite(static_cast<double>(p->value[j])))
            throw DivergenceError("non-finite parameter " + name + " after epoch " +
                                  std::to_string(epoch) + " step " +
                                  std::to_string(history.steps));

      epoch_loss += loss;
      ++epoch_steps;
      ++history.steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = epoch_loss / static_cast<double>(epoch_steps);
    rec.val_dice_s1 = validation_dice_s1(model, val_samples,
                                         static_cast<std::size_t>(cfg.batch_size));
    history.epochs.push_back(rec);

    if (!std::isnan(rec.val_dice_s1) && rec.val_dice_s1 > history.best_val_dice) {
      history.best_val_dice = rec.val_dice_s1;
      history.best_epoch = epoch;
      if (save_outputs) save_checkpoint(model, cfg.out_dir / "checkpoint_best");
    }
    if (save_outputs && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(model, cfg.out_dir / ("checkpoint_epoch_" + std::to_string(epoch)));

    if (log) {
      char line[200];
      std::snprintf(line, sizeof(line),
                    "epoch %3d  lr %.3g  train_loss %.5f  val_dice_s1 %.4f\n", epoch, lr,
                    rec.train_loss, rec.val_dice_s1);
      (*log) << line << std::flush;
    }
  }

  if (save_outputs) {
    save_checkpoint(model, cfg.out_dir / "checkpoint_final");
    write_history(history, cfg.out_dir / "history.txt");
  }
  return history;
}

// Runs one forward/backward on the given batch and returns the names of
// parameters whose gradient is identically zero (dead branches).
template <class T>
std::vector<std::string> dead_gradients(UNetmer<T>& model, const Tensor<T>& images,
                                        const Tensor<std::uint8_t>& labels, int s) {
  auto params = model.parameters();
  nn::zero_grads(params);
  Tensor<T> logits = model.forward_at_scale(images, s, true);
  Tensor<T> dlogits;
  cross_entropy(logits, labels, &dlogits);
  model.backward(dlogits);
  std::vector<std::string> dead;
  for (const auto& [name, p] : params) {
    bool all_zero = true;
    for (std::size_t j = 0; j < p->grad.numel() && all_zero; ++j)
      if (p->grad[j] != T(0)) all_zero = false;
    if (all_zero) dead.push_back(name);
  }
  return dead;
}

}  // namespace unetmer
