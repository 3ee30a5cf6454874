#pragma once

#include <memory>
#include <string>
#include <vector>

#include "unetmer/nn/layers.hpp"

namespace unetmer {

enum class Variant { UNet, AttentionUNet, UNetPP };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::UNet: return "unet";
    case Variant::AttentionUNet: return "attention_unet";
    case Variant::UNetPP: return "unetpp";
  }
  return "unet";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "unet") return Variant::UNet;
  if (s == "attention_unet" || s == "attunet") return Variant::AttentionUNet;
  if (s == "unetpp" || s == "unet++") return Variant::UNetPP;
  throw ValidationError("unknown backbone variant: " + s);
}

struct BackboneConfig {
  Variant variant = Variant::UNet;
  int in_channels = 1;
  int base_channels = 16;  // width doubles at each pooling stage
  int n_pool = 4;
  int num_classes = 2;

  void validate() const {
    check(in_channels >= 1, "in_channels must be >= 1");
    check(base_channels >= 1, "base_channels must be >= 1");
    check(n_pool >= 1, "n_pool must be >= 1");
    check(num_classes >= 2, "num_classes must be >= 2");
  }
  std::size_t width(int level) const {
    return static_cast<std::size_t>(base_channels) << level;
  }
  std::size_t bottleneck_channels() const { return width(n_pool); }
};

template <class T>
struct EncoderOutput {
  std::vector<Tensor<T>> skips;  // strides 1, 2, ..., 2^(n_pool-1)
  Tensor<T> bottleneck;          // stride 2^n_pool
};

// Two 3x3 conv -> BN -> ReLU units.
template <class T>
class ConvBlock {
 public:
  ConvBlock(std::size_t in_ch, std::size_t out_ch)
      : conv1_(in_ch, out_ch, 3, 1), bn1_(out_ch), conv2_(out_ch, out_ch, 3, 1), bn2_(out_ch) {}

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    auto h = relu1_.forward(bn1_.forward(conv1_.forward(x, train), train), train);
    return relu2_.forward(bn2_.forward(conv2_.forward(h, train), train), train);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    auto d = conv2_.backward(bn2_.backward(relu2_.backward(dy)));
    return conv1_.backward(bn1_.backward(relu1_.backward(d)));
  }

  void params(const std::string& prefix, nn::ParamList<T>& out) {
    conv1_.params(prefix + ".conv1", out);
    bn1_.params(prefix + ".bn1", out);
    conv2_.params(prefix + ".conv2", out);
    bn2_.params(prefix + ".bn2", out);
  }

  void buffers(const std::string& prefix, nn::BufferList<T>& out) {
    bn1_.buffers(prefix + ".bn1", out);
    bn2_.buffers(prefix + ".bn2", out);
  }

 private:
  nn::Conv2d<T> conv1_;
  nn::BatchNorm2d<T> bn1_;
  nn::Conv2d<T> conv2_;
  nn::BatchNorm2d<T> bn2_;
  nn::ReLU<T> relu1_, relu2_;
};

// Shared encoder column: ConvBlock + 2x2 max-pool per stage, then a
// bottleneck ConvBlock. Applied to patches of any size >= 2^n_pool per side
// with one parameter set.
template <class T>
class Encoder {
 public:
  explicit Encoder(const BackboneConfig& cfg) : cfg_(cfg) {
    std::size_t in_ch = static_cast<std::size_t>(cfg.in_channels);
    for (int i = 0; i < cfg.n_pool; ++i) {
      stages_.push_back(std::make_unique<ConvBlock<T>>(in_ch, cfg.width(i)));
      pools_.emplace_back();
      in_ch = cfg.width(i);
    }
    bottom_ = std::make_unique<ConvBlock<T>>(in_ch, cfg.bottleneck_channels());
  }

  void init(Rng& rng) {
    for (auto& s : stages_) s->init(rng);
    bottom_->init(rng);
  }

  EncoderOutput<T> forward(const Tensor<T>& x, bool train) {
    check(x.ndim() == 4, "encoder expects [N, C, H, W]");
    const std::size_t H = x.dim(2), W = x.dim(3);
    const std::size_t stride = std::size_t{1} << cfg_.n_pool;
    check(H >= stride && W >= stride,
          "patch smaller than 2^n: " + std::to_string(H) + "x" + std::to_string(W) +
              " vs 2^" + std::to_string(cfg_.n_pool));
    check(H % stride == 0 && W % stride == 0,
          "patch size must be divisible by 2^n_pool, got " + x.shape_str());

    EncoderOutput<T> out;
    Tensor<T> cur = x;
    for (int i = 0; i < cfg_.n_pool; ++i) {
      cur = stages_[i]->forward(cur, train);
      out.skips.push_back(cur);
      cur = pools_[i].forward(cur, train);
    }
    out.bottleneck = bottom_->forward(cur, train);
    return out;
  }

  // dskips[i] may be empty when a decoder variant does not touch that skip.
  Tensor<T> backward(const std::vector<Tensor<T>>& dskips, const Tensor<T>& dbottleneck) {
    Tensor<T> d = bottom_->backward(dbottleneck);
    for (int i = cfg_.n_pool - 1; i >= 0; --i) {
      Tensor<T> dstage = pools_[i].backward(d);
      if (!dskips[i].empty()) nn::add_inplace(dstage, dskips[i]);
      d = stages_[i]->backward(dstage);
    }
    return d;
  }

  void params(const std::string& prefix, nn::ParamList<T>& out) {
    for (std::size_t i = 0; i < stages_.size(); ++i)
      stages_[i]->params(prefix + ".stage" + std::to_string(i), out);
    bottom_->params(prefix + ".bottom", out);
  }

  void buffers(const std::string& prefix, nn::BufferList<T>& out) {
    for (std::size_t i = 0; i < stages_.size(); ++i)
      stages_[i]->buffers(prefix + ".stage" + std::to_string(i), out);
    bottom_->buffers(prefix + ".bottom", out);
  }

 private:
  BackboneConfig cfg_;
  std::vector<std::unique_ptr<ConvBlock<T>>> stages_;
  std::vector<nn::MaxPool2d<T>> pools_;
  std::unique_ptr<ConvBlock<T>> bottom_;
};

// Additive attention gate: alpha = sigmoid(psi(relu(Wg g + Wx x))), out = alpha .* x.
template <class T>
class AttentionGate {
 public:
  AttentionGate(std::size_t channels, std::size_t inter)
      : wg_(channels, inter, 1, 0), wx_(channels, inter, 1, 0), psi_(inter, 1, 1, 0) {}

  void init(Rng& rng) {
    wg_.init(rng);
    wx_.init(rng);
    psi_.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& g, bool train) {
    x_ = x;
    auto z = wg_.forward(g, train);
    nn::add_inplace(z, wx_.forward(x, train));
    alpha_ = sigmoid_.forward(psi_.forward(relu_.forward(z, train), train), train);  // [N,1,H,W]
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor<T> y(x.shape());
    for (std::size_t n = 0; n < N; ++n) {
      const T* a = &alpha_(n, 0, 0, 0);
      for (std::size_t c = 0; c < C; ++c) {
        const T* px = &x_(n, c, 0, 0);
        T* py = &y(n, c, 0, 0);
        for (std::size_t i = 0; i < HW; ++i) py[i] = px[i] * a[i];
      }
    }
    return y;
  }

  // Returns (dx, dg).
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dy) {
    const std::size_t N = dy.dim(0), C = dy.dim(1), HW = dy.dim(2) * dy.dim(3);
    Tensor<T> dx(dy.shape());
    Tensor<T> dalpha({N, 1, dy.dim(2), dy.dim(3)});
    dalpha.fill(T(0));
    for (std::size_t n = 0; n < N; ++n) {
      const T* a = &alpha_(n, 0, 0, 0);
      T* da = &dalpha(n, 0, 0, 0);
      for (std::size_t c = 0; c < C; ++c) {
        const T* pdy = &dy(n, c, 0, 0);
        const T* px = &x_(n, c, 0, 0);
        T* pdx = &dx(n, c, 0, 0);
        for (std::size_t i = 0; i < HW; ++i) {
          pdx[i] = pdy[i] * a[i];
          da[i] += pdy[i] * px[i];
        }
      }
    }
    auto dz = relu_.backward(psi_.backward(sigmoid_.backward(dalpha)));
    Tensor<T> dg = wg_.backward(dz);
    nn::add_inplace(dx, wx_.backward(dz));
    return {std::move(dx), std::move(dg)};
  }

  void params(const std::string& prefix, nn::ParamList<T>& out) {
    wg_.params(prefix + ".wg", out);
    wx_.params(prefix + ".wx", out);
    psi_.params(prefix + ".psi", out);
  }

 private:
  nn::Conv2d<T> wg_, wx_, psi_;
  nn::ReLU<T> relu_;
  nn::Sigmoid<T> sigmoid_;
  Tensor<T> x_, alpha_;
};

// Decoder contract shared by the three variants: consume the (possibly
// transformer-enhanced) bottleneck plus encoder skips, emit per-patch logits.
template <class T>
class Decoder {
 public:
  virtual ~Decoder() = default;
  virtual void init(Rng& rng) = 0;
  virtual Tensor<T> forward(const Tensor<T>& tau_hat, const std::vector<Tensor<T>>& skips,
                            bool train) = 0;
  // Returns (d_tau_hat, d_skips).
  virtual std::pair<Tensor<T>, std::vector<Tensor<T>>> backward(const Tensor<T>& dlogits) = 0;
  virtual void params(const std::string& prefix, nn::ParamList<T>& out) = 0;
  virtual void buffers(const std::string& prefix, nn::BufferList<T>& out) = 0;
  // Named per-level outputs of the last forward, shallow last.
  virtual std::vector<std::pair<std::string, const Tensor<T>*>> features() const = 0;
};

// Plain U-Net decoder: upsample, 3x3 conv, concat skip, ConvBlock per level.
template <class T>
class UNetDecoder : public Decoder<T> {
 public:
  explicit UNetDecoder(const BackboneConfig& cfg) : cfg_(cfg) {
    for (int i = 0; i < cfg.n_pool; ++i) {
      ups_.emplace_back();
      upconvs_.push_back(std::make_unique<nn::Conv2d<T>>(cfg.width(i + 1), cfg.width(i), 3, 1));
      blocks_.push_back(std::make_unique<ConvBlock<T>>(2 * cfg.width(i), cfg.width(i)));
    }
    head_ = std::make_unique<nn::Conv2d<T>>(cfg.width(0), cfg.num_classes, 1, 0);
  }

  void init(Rng& rng) override {
    for (auto& c : upconvs_) c->init(rng);
    for (auto& b : blocks_) b->init(rng);
    head_->init(rng);
  }

  Tensor<T> forward(const Tensor<T>& tau_hat, const std::vector<Tensor<T>>& skips,
                    bool train) override {
    check(static_cast<int>(skips.size()) == cfg_.n_pool, "decoder: wrong number of skips");
    level_out_.assign(cfg_.n_pool, Tensor<T>());
    Tensor<T> cur = tau_hat;
    for (int i = cfg_.n_pool - 1; i >= 0; --i) {
      Tensor<T> up = upconvs_[i]->forward(ups_[i].forward(cur, train), train);
      check(up.dim(2) == skips[i].dim(2) && up.dim(3) == skips[i].dim(3),
            "decoder: skip/bottleneck shapes inconsistent at level " + std::to_string(i));
      cur = blocks_[i]->forward(nn::concat_channels(up, skips[i]), train);
      level_out_[i] = cur;
    }
    return head_->forward(cur, train);
  }

  std::pair<Tensor<T>, std::vector<Tensor<T>>> backward(const Tensor<T>& dlogits) override {
    std::vector<Tensor<T>> dskips(cfg_.n_pool);
    Tensor<T> d = head_->backward(dlogits);
    for (int i = 0; i < cfg_.n_pool; ++i) {
      auto parts = nn::split_channels(blocks_[i]->backward(d), {cfg_.width(i), cfg_.width(i)});
      dskips[i] = std::move(parts[1]);
      d = ups_[i].backward(upconvs_[i]->backward(parts[0]));
    }
    return {std::move(d), std::move(dskips)};
  }

  void params(const std::string& prefix, nn::ParamList<T>& out) override {
    for (int i = 0; i < cfg_.n_pool; ++i) {
      upconvs_[i]->params(prefix + ".up" + std::to_string(i), out);
      blocks_[i]->params(prefix + ".block" + std::to_string(i), out);
    }
    head_->params(prefix + ".head", out);
  }

  void buffers(const std::string& prefix, nn::BufferList<T>& out) override {
    for (int i = 0; i < cfg_.n_pool; ++i)
      blocks_[i]->buffers(prefix + ".block" + std::to_string(i), out);
  }

  std::vector<std::pair<std::string, const Tensor<T>*>> features() const override {
    std::vector<std::pair<std::string, const Tensor<T>*>> f;
    for (int i = cfg_.n_pool - 1; i >= 0; --i)
      f.emplace_back("dec" + std::to_string(i), &level_out_[i]);
    return f;
  }

 private:
  BackboneConfig cfg_;
  std::vector<nn::Upsample2x<T>> ups_;
  std::vector<std::unique_ptr<nn::Conv2d<T>>> upconvs_;
  std::vector<std::unique_ptr<ConvBlock<T>>> blocks_;
  std::unique_ptr<nn::Conv2d<T>> head_;
  std::vector<Tensor<T>> level_out_;
};

// U-Net decoder with additive attention gates on the skip connections.
template <class T>
class AttentionUNetDecoder : public Decoder<T> {
 public:
  explicit AttentionUNetDecoder(const BackboneConfig& cfg) : cfg_(cfg) {
    for (int i = 0; i < cfg.n_pool; ++i) {
      ups_.emplace_back();
      upconvs_.push_back(std::make_unique<nn::Conv2d<T>>(cfg.width(i + 1), cfg.width(i), 3, 1));
      gates_.push_back(std::make_unique<AttentionGate<T>>(
          cfg.width(i), std::max<std::size_t>(1, cfg.width(i) / 2)));
      blocks_.push_back(std::make_unique<ConvBlock<T>>(2 * cfg.width(i), cfg.width(i)));
    }
    head_ = std::make_unique<nn::Conv2d<T>>(cfg.width(0), cfg.num_classes, 1, 0);
  }

  void init(Rng& rng) override {
    for (auto& c : upconvs_) c->init(rng);
    for (auto& g : gates_) g->init(rng);
    for (auto& b : blocks_) b->init(rng);
    head_->init(rng);
  }

  Tensor<T> forward(const Tensor<T>& tau_hat, const std::vector<Tensor<T>>& skips,
                    bool train) override {
    check(static_cast<int>(skips.size()) == cfg_.n_pool, "decoder: wrong number of skips");
    level_out_.assign(cfg_.n_pool, Tensor<T>());
    Tensor<T> cur = tau_hat;
    for (int i = cfg_.n_pool - 1; i >= 0; --i) {
      Tensor<T> up = upconvs_[i]->forward(ups_[i].forward(cur, train), train);
      Tensor<T> gated = gates_[i]->forward(skips[i], up, train);
      cur = blocks_[i]->forward(nn::concat_channels(up, gated), train);
      level_out_[i] = cur;
    }
    return head_->forward(cur, train);
  }

  std::pair<Tensor<T>, std::vector<Tensor<T>>> backward(const Tensor<T>& dlogits) override {
    std::vector<Tensor<T>> dskips(cfg_.n_pool);
    Tensor<T> d = head_->backward(dlogits);
    for (int i = 0; i < cfg_.n_pool; ++i) {
      auto parts = nn::split_channels(blocks_[i]->backward(d), {cfg_.width(i), cfg_.width(i)});
      auto [dskip, dgate_g] = gates_[i]->backward(parts[1]);
      dskips[i] = std::move(dskip);
      nn::add_inplace(parts[0], dgate_g);
      d = ups_[i].backward(upconvs_[i]->backward(parts[0]));
    }
    return {std::move(d), std::move(dskips)};
  }

  void params(const std::string& prefix, nn::ParamList<T>& out) override {
    for (int i = 0; i < cfg_.n_pool; ++i) {
      upconvs_[i]->params(prefix + ".up" + std::to_string(i), out);
      gates_[i]->params(prefix + ".gate" + std::to_string(i), out);
      blocks_[i]->params(prefix + ".block" + std::to_string(i), out);
    }
    head_->params(prefix + ".head", out);
  }

  void buffers(const std::string& prefix, nn::BufferList<T>& out) override {
    for (int i = 0; i < cfg_.n_pool; ++i)
      blocks_[i]->buffers(prefix + ".block" + std::to_string(i), out);
  }

  std::vector<std::pair<std::string, const Tensor<T>*>> features() const override {
    std::vector<std::pair<std::string, const Tensor<T>*>> f;
    for (int i = cfg_.n_pool - 1; i >= 0; --i)
      f.emplace_back("dec" + std::to_string(i), &level_out_[i]);
    return f;
  }

 private:
  BackboneConfig cfg_;
  std::vector<nn::Upsample2x<T>> ups_;
  std::vector<std::unique_ptr<nn::Conv2d<T>>> upconvs_;
  std::vector<std::unique_ptr<AttentionGate<T>>> gates_;
  std::vector<std::unique_ptr<ConvBlock<T>>> blocks_;
  std::unique_ptr<nn::Conv2d<T>> head_;
  std::vector<Tensor<T>> level_out_;
};

// U-Net++ decoder: nested dense skip pathways. Node (i, j) at row i, column
// j >= 1 consumes X[i][0..j-1] plus the upsampled X[i+1][j-1]; deep
// supervision is off, only the head on X[0][n_pool] is used.
template <class T>
class UNetPPDecoder : public Decoder<T> {
 public:
  explicit UNetPPDecoder(const BackboneConfig& cfg) : cfg_(cfg) {
    const int n = cfg.n_pool;
    nodes_.resize(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 1; j <= n - i; ++j) {
        Node node;
        node.upconv = std::make_unique<nn::Conv2d<T>>(cfg.width(i + 1), cfg.width(i), 3, 1);
        node.block = std::make_unique<ConvBlock<T>>((static_cast<std::size_t>(j) + 1) *
                                                        cfg.width(i),
                                                    cfg.width(i));
        nodes_[i].push_back(std::move(node));
      }
    }
    head_ = std::make_unique<nn::Conv2d<T>>(cfg.width(0), cfg.num_classes, 1, 0);
  }

  void init(Rng& rng) override {
    for (auto& row : nodes_)
      for (auto& node : row) {
        node.upconv->init(rng);
        node.block->init(rng);
      }
    head_->init(rng);
  }

  Tensor<T> forward(const Tensor<T>& tau_hat, const std::vector<Tensor<T>>& skips,
                    bool train) override {
    const int n = cfg_.n_pool;
    check(static_cast<int>(skips.size()) == n, "decoder: wrong number of skips");
    x_.assign(n + 1, {});
    for (int i = 0; i < n; ++i) {
      x_[i].assign(n - i + 1, Tensor<T>());
      x_[i][0] = skips[i];
    }
    x_[n].assign(1, tau_hat);

    for (int j = 1; j <= n; ++j)
      for (int i = 0; i + j <= n; ++i) {
        Node& node = nodes_[i][j - 1];
        Tensor<T> up = node.upconv->forward(node.up.forward(x_[i + 1][j - 1], train), train);
        std::vector<const Tensor<T>*> parts;
        for (int q = 0; q < j; ++q) parts.push_back(&x_[i][q]);
        parts.push_back(&up);
        x_[i][j] = node.block->forward(nn::concat_channels(parts), train);
      }
    return head_->forward(x_[0][n], train);
  }

  std::pair<Tensor<T>, std::vector<Tensor<T>>> backward(const Tensor<T>& dlogits) override {
    const int n = cfg_.n_pool;
    // Gradient accumulators mirroring x_.
    std::vector<std::vector<Tensor<T>>> dx(n + 1);
    for (int i = 0; i < n; ++i) dx[i].assign(n - i + 1, Tensor<T>());
    dx[n].assign(1, Tensor<T>());

    dx[0][n] = head_->backward(dlogits);
    for (int j = n; j >= 1; --j)
      for (int i = 0; i + j <= n; ++i) {
        Node& node = nodes_[i][j - 1];
        std::vector<std::size_t> counts(static_cast<std::size_t>(j) + 1, cfg_.width(i));
        auto parts = nn::split_channels(node.block->backward(dx[i][j]), counts);
        for (int q = 0; q < j; ++q) accumulate(dx[i][q], parts[q]);
        Tensor<T> dup = node.up.backward(node.upconv->backward(parts[j]));
        accumulate(dx[i + 1][j - 1], dup);
      }

    std::vector<Tensor<T>> dskips(n);
    for (int i = 0; i < n; ++i) dskips[i] = std::move(dx[i][0]);
    return {std::move(dx[n][0]), std::move(dskips)};
  }

  void params(const std::string& prefix, nn::ParamList<T>& out) override {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      for (std::size_t j = 0; j < nodes_[i].size(); ++j) {
        const std::string p =
            prefix + ".x" + std::to_string(i) + "_" + std::to_string(j + 1);
        nodes_[i][j].upconv->params(p + ".up", out);
        nodes_[i][j].block->params(p + ".block", out);
      }
    head_->params(prefix + ".head", out);
  }

  void buffers(const std::string& prefix, nn::BufferList<T>& out) override {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      for (std::size_t j = 0; j < nodes_[i].size(); ++j)
        nodes_[i][j].block->buffers(
            prefix + ".x" + std::to_string(i) + "_" + std::to_string(j + 1) + ".block", out);
  }

  std::vector<std::pair<std::string, const Tensor<T>*>> features() const override {
    std::vector<std::pair<std::string, const Tensor<T>*>> f;
    const int n = cfg_.n_pool;
    for (int j = 1; j <= n; ++j)
      for (int i = 0; i + j <= n; ++i)
        f.emplace_back("x" + std::to_string(i) + "_" + std::to_string(j), &x_[i][j]);
    return f;
  }

 private:
  struct Node {
    nn::Upsample2x<T> up;
    std::unique_ptr<nn::Conv2d<T>> upconv;
    std::unique_ptr<ConvBlock<T>> block;
  };

  static void accumulate(Tensor<T>& acc, const Tensor<T>& g) {
    if (acc.empty())
      acc = g;
    else
      nn::add_inplace(acc, g);
  }

  BackboneConfig cfg_;
  std::vector<std::vector<Node>> nodes_;  // nodes_[i][j-1] is node (i, j)
  std::unique_ptr<nn::Conv2d<T>> head_;
  std::vector<std::vector<Tensor<T>>> x_;
};

template <class T>
std::unique_ptr<Decoder<T>> make_decoder(const BackboneConfig& cfg) {
  switch (cfg.variant) {
    case Variant::UNet: return std::make_unique<UNetDecoder<T>>(cfg);
    case Variant::AttentionUNet: return std::make_unique<AttentionUNetDecoder<T>>(cfg);
    case Variant::UNetPP: return std::make_unique<UNetPPDecoder<T>>(cfg);
  }
  throw ValidationError("unknown backbone variant");
}

// Weight-bearing encoder/decoder pair. One parameter set regardless of the
// patch size it is applied to.
template <class T>
class Backbone {
 public:
  explicit Backbone(const BackboneConfig& cfg) : cfg_(cfg), encoder_(cfg) {
    cfg.validate();
    decoder_ = make_decoder<T>(cfg);
  }

  void init(Rng& rng) {
    encoder_.init(rng);
    decoder_->init(rng);
  }

  EncoderOutput<T> encode(const Tensor<T>& patches, bool train) {
    return encoder_.forward(patches, train);
  }

  Tensor<T> decode(const Tensor<T>& tau_hat, const std::vector<Tensor<T>>& skips, bool train) {
    return decoder_->forward(tau_hat, skips, train);
  }

  // Whole-image forward without patchification or transformer.
  Tensor<T> forward(const Tensor<T>& x, bool train) {
    auto enc = encode(x, train);
    return decode(enc.bottleneck, enc.skips, train);
  }

  Tensor<T> backward(const Tensor<T>& dlogits) {
    auto [dtau, dskips] = decoder_->backward(dlogits);
    return encoder_.backward(dskips, dtau);
  }

  Encoder<T>& encoder() { return encoder_; }
  Decoder<T>& decoder() { return *decoder_; }
  const BackboneConfig& config() const { return cfg_; }

  void params(const std::string& prefix, nn::ParamList<T>& out) {
    encoder_.params(prefix + ".encoder", out);
    decoder_->params(prefix + ".decoder", out);
  }

  void buffers(const std::string& prefix, nn::BufferList<T>& out) {
    encoder_.buffers(prefix + ".encoder", out);
    decoder_->buffers(prefix + ".decoder", out);
  }

  std::size_t parameter_count() {
    nn::ParamList<T> p;
    params("backbone", p);
    return nn::total_params(p);
  }

 private:
  BackboneConfig cfg_;
  Encoder<T> encoder_;
  std::unique_ptr<Decoder<T>> decoder_;
};

}  // namespace unetmer
