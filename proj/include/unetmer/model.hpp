#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <set>

#include "unetmer/backbone.hpp"
#include "unetmer/bottleneck.hpp"
#include "unetmer/patchify.hpp"

namespace unetmer {

struct UNetmerConfig {
  BackboneConfig backbone;
  TransformerConfig transformer;
  std::vector<int> scales = {1};
  std::size_t input_h = 64;
  std::size_t input_w = 64;
  bool use_transformer = true;

  // Fills derived fields (embed_dim from the bottleneck width) and validates.
  UNetmerConfig resolved() const {
    UNetmerConfig cfg = *this;
    cfg.backbone.validate();
    check(!cfg.scales.empty(), "scales must be nonempty");
    std::set<int> seen;
    for (int s : cfg.scales) {
      check_scale(s);
      check(seen.insert(s).second, "duplicate scale " + std::to_string(s));
    }
    const std::size_t s_max = static_cast<std::size_t>(
        *std::max_element(cfg.scales.begin(), cfg.scales.end()));
    const std::size_t unit = s_max << cfg.backbone.n_pool;
    check(cfg.input_h % unit == 0 && cfg.input_w % unit == 0,
          "input size " + std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w) +
              " must be divisible by max(scales)*2^n_pool = " + std::to_string(unit));
    if (cfg.use_transformer) {
      if (cfg.transformer.embed_dim == 0)
        cfg.transformer.embed_dim = static_cast<int>(cfg.backbone.bottleneck_channels());
      check(cfg.transformer.embed_dim ==
                static_cast<int>(cfg.backbone.bottleneck_channels()),
            "transformer embed_dim must equal the backbone bottleneck width");
      cfg.transformer.validate();
    }
    return cfg;
  }
};

template <class T>
struct MultiScaleOutput {
  std::map<int, Tensor<T>> logits;            // scale -> [num_classes, H, W]
  std::map<int, Tensor<std::uint8_t>> labels; // scale -> per-pixel argmax B_{s=i}
};

template <class T>
Tensor<std::uint8_t> argmax_labels(const Tensor<T>& logits) {
  check(logits.ndim() == 3 || logits.ndim() == 4, "argmax_labels expects [K,H,W] or [N,K,H,W]");
  const bool batched = logits.ndim() == 4;
  const std::size_t N = batched ? logits.dim(0) : 1;
  const std::size_t K = logits.dim(batched ? 1 : 0);
  const std::size_t H = logits.dim(batched ? 2 : 1), W = logits.dim(batched ? 3 : 2);
  Tensor<std::uint8_t> out(batched ? std::vector<std::size_t>{N, H, W}
                                   : std::vector<std::size_t>{H, W});
  const std::size_t hw = H * W;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < hw; ++i) {
      const T* base = logits.data() + (n * K) * hw;
      std::size_t best = 0;
      T bv = base[i];
      for (std::size_t k = 1; k < K; ++k) {
        const T v = base[k * hw + i];
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      out[n * hw + i] = static_cast<std::uint8_t>(best);
    }
  return out;
}

template <class T>
Tensor<T> squeeze0(const Tensor<T>& t) {
  check(t.dim(0) == 1, "squeeze0: leading dim != 1");
  std::vector<std::size_t> shape(t.shape().begin() + 1, t.shape().end());
  return t.reshaped(shape);
}

template <class T>
Tensor<T> unsqueeze0(const Tensor<T>& t) {
  std::vector<std::size_t> shape{1};
  shape.insert(shape.end(), t.shape().begin(), t.shape().end());
  return t.reshaped(shape);
}

// The full model M_s = (P_s, E, T, D): split into patches, encode each patch
// with the shared backbone encoder, mix global context across patches with
// the transformer, decode per patch, stitch. One parameter set serves every
// scale, and with use_transformer=false the bottleneck passes through
// untouched (no transformer or position-embedding parameters exist at all).
template <class T>
class UNetmer {
 public:
  explicit UNetmer(const UNetmerConfig& config, std::uint64_t seed = 0)
      : cfg_(config.resolved()), backbone_(cfg_.backbone) {
    if (cfg_.use_transformer)
      neck_ = std::make_unique<TransformerNeck<T>>(
          cfg_.transformer, token_count(cfg_.input_h, cfg_.input_w, cfg_.backbone.n_pool));
    Rng rng(seed);
    backbone_.init(rng);
    if (neck_) neck_->init(rng);
  }

  // images [N, C, H, W] -> logits [N, num_classes, H, W]. Any s in {1,2,4,8}
  // satisfying the divisibility constraints is accepted at inference.
  Tensor<T> forward_at_scale(const Tensor<T>& images, int s, bool train) {
    check_scale(s);
    check(images.ndim() == 4, "forward expects [N, C, H, W], got " + images.shape_str());
    check(images.dim(1) == static_cast<std::size_t>(cfg_.backbone.in_channels),
          "channel count mismatch");
    const std::size_t N = images.dim(0);

    Tensor<T> patches = split_batch(images, s);
    EncoderOutput<T> enc = backbone_.encode(patches, train);
    last_s_ = s;
    last_n_ = N;
    last_hb_ = enc.bottleneck.dim(2);
    last_wb_ = enc.bottleneck.dim(3);

    Tensor<T> tau_hat;
    if (neck_) {
      Tensor<T> tokens = tokenize_batch(enc.bottleneck, s, N);
      tokens = neck_->forward(tokens, train);
      tau_hat = detokenize_batch(tokens, s, last_hb_, last_wb_);
    } else {
      tau_hat = enc.bottleneck;
    }
    Tensor<T> patch_logits = backbone_.decode(tau_hat, enc.skips, train);
    return stitch_batch(patch_logits, s, N);
  }

  // Backpropagates through the cached last forward_at_scale(train=true) call.
  void backward(const Tensor<T>& dlogits) {
    check(last_s_ != 0, "backward without a prior forward");
    Tensor<T> dpatch_logits = split_batch(dlogits, last_s_);
    auto [dtau_hat, dskips] = backbone_.decoder().backward(dpatch_logits);
    Tensor<T> dtau;
    if (neck_) {
      Tensor<T> dtokens = tokenize_batch(dtau_hat, last_s_, last_n_);
      dtokens = neck_->backward(dtokens);
      dtau = detokenize_batch(dtokens, last_s_, last_hb_, last_wb_);
    } else {
      dtau = std::move(dtau_hat);
    }
    backbone_.encoder().backward(dskips, dtau);
  }

  // One forward per configured scale on the identical parameter set;
  // B_{s=i} is the per-pixel argmax at scale i.
  MultiScaleOutput<T> forward_multiscale(const Tensor<T>& image) {
    check(image.ndim() == 3, "forward_multiscale expects [C, H, W]");
    MultiScaleOutput<T> out;
    for (int s : cfg_.scales) {
      Tensor<T> logits = squeeze0(forward_at_scale(unsqueeze0(image), s, false));
      out.labels[s] = argmax_labels(logits);
      out.logits[s] = std::move(logits);
    }
    return out;
  }

  Tensor<std::uint8_t> predict(const Tensor<T>& image, int s) {
    return argmax_labels(squeeze0(forward_at_scale(unsqueeze0(image), s, false)));
  }

  // Named full-image feature maps of an eval-mode forward at scale s, in
  // network order, ending with the last decoder feature and the logits.
  std::vector<std::pair<std::string, Tensor<T>>> forward_features(const Tensor<T>& image,
                                                                  int s) {
    check(image.ndim() == 3, "forward_features expects [C, H, W]");
    Tensor<T> patches = split_batch(unsqueeze0(image), s);
    EncoderOutput<T> enc = backbone_.encode(patches, false);
    const std::size_t hb = enc.bottleneck.dim(2), wb = enc.bottleneck.dim(3);

    std::vector<std::pair<std::string, Tensor<T>>> feats;
    for (std::size_t i = 0; i < enc.skips.size(); ++i)
      feats.emplace_back("enc" + std::to_string(i),
                         squeeze0(stitch_batch(enc.skips[i], s, 1)));
    feats.emplace_back("bottleneck", squeeze0(stitch_batch(enc.bottleneck, s, 1)));

    Tensor<T> tau_hat;
    if (neck_) {
      Tensor<T> tokens = neck_->forward(tokenize_batch(enc.bottleneck, s, 1), false);
      tau_hat = detokenize_batch(tokens, s, hb, wb);
      feats.emplace_back("neck", squeeze0(stitch_batch(tau_hat, s, 1)));
    } else {
      tau_hat = enc.bottleneck;
    }
    Tensor<T> patch_logits = backbone_.decode(tau_hat, enc.skips, false);
    for (const auto& [name, tensor] : backbone_.decoder().features())
      feats.emplace_back(name, squeeze0(stitch_batch(*tensor, s, 1)));
    feats.emplace_back("logits", squeeze0(stitch_batch(patch_logits, s, 1)));
    return feats;
  }

  nn::ParamList<T> parameters() {
    nn::ParamList<T> p;
    backbone_.params("backbone", p);
    if (neck_) neck_->params("neck", p);
    return p;
  }

  nn::BufferList<T> buffers() {
    nn::BufferList<T> b;
    backbone_.buffers("backbone", b);
    return b;
  }

  std::size_t parameter_count() { return nn::total_params(parameters()); }

  const UNetmerConfig& config() const { return cfg_; }
  Backbone<T>& backbone() { return backbone_; }
  TransformerNeck<T>* neck() { return neck_.get(); }

 private:
  UNetmerConfig cfg_;
  Backbone<T> backbone_;
  std::unique_ptr<TransformerNeck<T>> neck_;

  int last_s_ = 0;
  std::size_t last_n_ = 0, last_hb_ = 0, last_wb_ = 0;
};

}  // namespace unetmer
