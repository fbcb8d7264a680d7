#pragma once

// Convolutional-autoencoder generator with bottleneck attribute channels, and
// a patch discriminator with an auxiliary domain classifier.
//
// Feature maps are (N, 1, 60, W): height is the feature dimension, width is
// time in frames.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "stc/domain.hpp"
#include "stc/nn/layers.hpp"
#include "stc/nn/loss.hpp"

namespace stc::stargan {

using nn::Parameter;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

struct StageGeometry {
  int kh, kw, sh, sw, ph, pw;
  int output_padding_h;  // used by the mirrored transposed stage
};

// Downsampling stages in order; depth d uses the first d.
inline constexpr std::array<StageGeometry, 4> kStages = {{
    {4, 8, 2, 2, 1, 3, 0},
    {4, 8, 2, 2, 1, 3, 0},
    {4, 7, 3, 1, 1, 3, 1},
    {5, 7, 1, 1, 0, 3, 0},
}};

struct StageShape {
  int channels, height, width;
  bool operator==(const StageShape&) const = default;
};

struct GeneratorConfig {
  int depth = 3;
  int channel_divisor = 1;  // scales every width down for desk-scale runs
  int stem_channels = 64;
  std::array<int, 4> stage_channels = {128, 256, 512, 1024};
  int input_height = 60;
  int crop_width = 400;
  int num_domains = kNumDomains;

  void validate() const {
    if (depth < 2 || depth > 4) throw ConfigError("depth must be 2, 3 or 4, got " + std::to_string(depth));
    if (channel_divisor < 1) throw ConfigError("channel_divisor must be positive");
    if (stem_channels % channel_divisor != 0) throw ConfigError("channel_divisor must divide every channel width");
    for (int c : stage_channels)
      if (c % channel_divisor != 0) throw ConfigError("channel_divisor must divide every channel width");
    if (num_domains != kNumDomains) throw ConfigError("num_domains must be 4");
    if (input_height < 1) throw ConfigError("input_height must be positive");
  }

  int stem() const { return stem_channels / channel_divisor; }
  int stage(int i) const { return stage_channels.at(i) / channel_divisor; }
  // Channels entering down-stage i (= leaving up-stage i).
  int stage_input(int i) const { return i == 0 ? stem() : stage(i - 1); }
};

// Encoder stage output shapes for a 60 x width input, without running the net.
inline std::vector<StageShape> stage_shapes(const GeneratorConfig& cfg, int width) {
  cfg.validate();
  std::vector<StageShape> out;
  int h = cfg.input_height, w = width;
  for (int i = 0; i < cfg.depth; ++i) {
    const auto& g = kStages[i];
    h = nn::conv_out(h, g.kh, g.sh, g.ph);
    w = nn::conv_out(w, g.kw, g.sw, g.pw);
    out.push_back({cfg.stage(i), h, w});
  }
  return out;
}

// (height, channels) of the bottleneck.
inline std::pair<int, int> bottleneck(const GeneratorConfig& cfg) {
  const auto s = stage_shapes(cfg, cfg.crop_width).back();
  return {s.height, s.channels};
}

inline std::string bottleneck_label(const GeneratorConfig& cfg) {
  GeneratorConfig full = cfg;
  full.channel_divisor = 1;
  const auto [h, c] = bottleneck(full);
  return std::to_string(h) + "x" + std::to_string(c);
}

namespace detail {

inline void check_input(const Shape& s, int height) {
  if (s.size() != 4 || s[1] != 1 || s[2] != height)
    throw ArgumentError("expected input of shape (N, 1, " + std::to_string(height) + ", W), got " +
                        nn::to_string(s));
}

inline void check_attrs(std::span<const int> attrs, int batch) {
  if (static_cast<int>(attrs.size()) != batch) throw ArgumentError("one attribute per batch item required");
  for (int a : attrs)
    if (a < 0 || a >= kNumDomains) throw ArgumentError("attribute index " + std::to_string(a) + " out of range");
}

}  // namespace detail

template <class T>
class Generator {
 public:
  explicit Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    stem_ = nn::Conv2d<T>("G.stem", 1, 2 * cfg_.stem(), 3, 9, 1, 1, 1, 4, rng);
    for (int i = 0; i < cfg_.depth; ++i) {
      const auto& g = kStages[i];
      const std::string n = "G.down" + std::to_string(i);
      down_.emplace_back(n + ".conv", cfg_.stage_input(i), 2 * cfg_.stage(i), g.kh, g.kw, g.sh, g.sw, g.ph, g.pw,
                         rng);
      down_norm_.emplace_back(n + ".norm", 2 * cfg_.stage(i));
    }
    for (int i = cfg_.depth - 1; i >= 0; --i) {
      const auto& g = kStages[i];
      const std::string n = "G.up" + std::to_string(i);
      const int cin = cfg_.stage(i) + (i == cfg_.depth - 1 ? cfg_.num_domains : 0);
      up_.emplace_back(n + ".conv", cin, 2 * cfg_.stage_input(i), g.kh, g.kw, g.sh, g.sw, g.ph, g.pw,
                       g.output_padding_h, 0, rng);
      up_norm_.emplace_back(n + ".norm", 2 * cfg_.stage_input(i));
    }
    head_ = nn::Conv2d<T>("G.head", cfg_.stem(), 1, 7, 7, 1, 1, 3, 3, rng);
  }

  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  const GeneratorConfig& config() const { return cfg_; }

  // Returns the bottleneck; `trace` receives every stage output shape.
  Var encode(Tape<T>& t, Var x, bool train = true, std::vector<Shape>* trace = nullptr) {
    const Shape& s = t.shape(x);
    detail::check_input(s, cfg_.input_height);
    if (s[3] % 4 != 0) throw ArgumentError("input width must be divisible by 4, got " + std::to_string(s[3]));
    Var h = nn::glu(t, stem_(t, x, train));
    for (int i = 0; i < cfg_.depth; ++i) {
      h = nn::glu(t, down_norm_[i](t, down_[i](t, h, train), train));
      if (trace) trace->push_back(t.shape(h));
    }
    return h;
  }

  // Appends num_domains channels; channel k is all ones iff k == attr.
  Var inject_attribute(Tape<T>& t, Var latent, std::span<const int> attrs) {
    const Shape& s = t.shape(latent);
    detail::check_attrs(attrs, s.at(0));
    Tensor<T> onehot({s[0], cfg_.num_domains, s[2], s[3]});
    for (int n = 0; n < s[0]; ++n)
      for (int y = 0; y < s[2]; ++y)
        for (int x = 0; x < s[3]; ++x) onehot.at(n, attrs[n], y, x) = T(1);
    return nn::concat_channels(t, latent, t.constant(std::move(onehot)));
  }

  Var decode(Tape<T>& t, Var z, bool train = true) {
    Var h = z;
    for (std::size_t i = 0; i < up_.size(); ++i) h = nn::glu(t, up_norm_[i](t, up_[i](t, h, train), train));
    return head_(t, h, train);
  }

  Var generate(Tape<T>& t, Var x, std::span<const int> attrs, bool train = true) {
    return decode(t, inject_attribute(t, encode(t, x, train), attrs), train);
  }

  std::vector<Parameter<T>*> params() {
    std::vector<Parameter<T>*> out;
    stem_.collect(out);
    for (std::size_t i = 0; i < down_.size(); ++i) {
      down_[i].collect(out);
      down_norm_[i].collect(out);
    }
    for (std::size_t i = 0; i < up_.size(); ++i) {
      up_[i].collect(out);
      up_norm_[i].collect(out);
    }
    head_.collect(out);
    return out;
  }

 private:
  GeneratorConfig cfg_;
  nn::Conv2d<T> stem_;
  std::vector<nn::Conv2d<T>> down_;
  std::vector<nn::InstanceNorm<T>> down_norm_;
  std::vector<nn::ConvTranspose2d<T>> up_;
  std::vector<nn::InstanceNorm<T>> up_norm_;
  nn::Conv2d<T> head_;
};

struct DiscriminatorConfig {
  std::array<int, 4> channels = {64, 128, 256, 512};
  int channel_divisor = 1;
  int input_height = 60;
  int num_domains = kNumDomains;

  int width(int i) const { return std::max(1, channels.at(i) / channel_divisor); }
};

template <class T>
struct Judgement {
  Var realness;  // (N, 1, h, w) patch scores
  Var logits;    // (N, num_domains)
};

template <class T>
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg_.channel_divisor < 1) throw ConfigError("channel_divisor must be positive");
    convs_.emplace_back("D.conv0", 1, cfg_.width(0), 3, 9, 1, 1, 1, 4, rng);
    for (int i = 1; i < 4; ++i)
      convs_.emplace_back("D.conv" + std::to_string(i), cfg_.width(i - 1), cfg_.width(i), 3, 8, 2, 2, 1, 3, rng);
    head_ = nn::Conv2d<T>("D.head", cfg_.width(3), 1, 3, 3, 1, 1, 1, 1, rng);
    cls_ = nn::Linear<T>("D.cls", cfg_.width(3), cfg_.num_domains, rng);
  }

  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  const DiscriminatorConfig& config() const { return cfg_; }

  Judgement<T> operator()(Tape<T>& t, Var x, bool train = true) {
    detail::check_input(t.shape(x), cfg_.input_height);
    Var h = x;
    for (auto& c : convs_) h = nn::leaky_relu(t, c(t, h, train), T(0.2));
    return {head_(t, h, train), cls_(t, nn::global_avg_pool(t, h), train)};
  }

  std::vector<Parameter<T>*> params() {
    std::vector<Parameter<T>*> out;
    for (auto& c : convs_) c.collect(out);
    head_.collect(out);
    cls_.collect(out);
    return out;
  }

 private:
  DiscriminatorConfig cfg_;
  std::vector<nn::Conv2d<T>> convs_;
  nn::Conv2d<T> head_;
  nn::Linear<T> cls_;
};

struct LossWeights {
  double cls = 1.0;
  double rec = 10.0;
  bool cycle = false;  // optional cycle-consistency term
  double cyc = 10.0;
};

struct LossParts {
  double g_adv = 0, g_cls = 0, g_rec = 0, g_cyc = 0;
  double d_adv = 0, d_cls = 0;
};

template <class T>
struct Losses {
  Var g_total{}, d_total{};
  LossParts parts;
};

namespace detail {

template <class T>
double scalar(Tape<T>& t, Var v) {
  return static_cast<double>(t.value(v)[0]);
}

}  // namespace detail

// Generator objective. D is evaluated with frozen parameters.
template <class T>
Var generator_loss(Tape<T>& t, Generator<T>& g, Discriminator<T>& d, Var x, std::span<const int> src,
                   std::span<const int> tgt, const LossWeights& w, LossParts& parts, bool train_g = true) {
  // The attribute enters only at the bottleneck, so one encoding serves both
  // the conversion and the reconstruction.
  Var latent = g.encode(t, x, train_g);
  Var fake = g.decode(t, g.inject_attribute(t, latent, tgt), train_g);
  const auto judged = d(t, fake, false);
  Var adv = nn::lsgan_g(t, judged.realness);
  Var cls = nn::cross_entropy(t, judged.logits, tgt);
  Var rec = nn::l1(t, g.decode(t, g.inject_attribute(t, latent, src), train_g), x);
  parts.g_adv = detail::scalar(t, adv);
  parts.g_cls = detail::scalar(t, cls);
  parts.g_rec = detail::scalar(t, rec);
  std::vector<std::pair<Var, T>> terms = {{adv, T(1)}, {cls, static_cast<T>(w.cls)}, {rec, static_cast<T>(w.rec)}};
  if (w.cycle) {
    Var cyc = nn::l1(t, g.generate(t, fake, src, train_g), x);
    parts.g_cyc = detail::scalar(t, cyc);
    terms.push_back({cyc, static_cast<T>(w.cyc)});
  }
  return nn::weighted_sum(t, std::move(terms));
}

// Discriminator objective. The fake batch is produced with G frozen and
// enters the tape as a constant.
template <class T>
Var discriminator_loss(Tape<T>& t, Generator<T>& g, Discriminator<T>& d, Var x, std::span<const int> src,
                       std::span<const int> tgt, const LossWeights& w, LossParts& parts) {
  Tensor<T> fake_value;
  {
    Tape<T> scratch;
    Var xs = scratch.constant(t.value(x));
    fake_value = scratch.value(g.generate(scratch, xs, tgt, false));
  }
  Var fake = t.constant(std::move(fake_value));
  const auto real_j = d(t, x);
  const auto fake_j = d(t, fake);
  Var adv = nn::lsgan_d(t, real_j.realness, fake_j.realness);
  Var cls = nn::cross_entropy(t, real_j.logits, src);
  parts.d_adv = detail::scalar(t, adv);
  parts.d_cls = detail::scalar(t, cls);
  return nn::weighted_sum(t, {{adv, T(1)}, {cls, static_cast<T>(w.cls)}});
}

// Both objectives on one tape.
template <class T>
Losses<T> compute_losses(Tape<T>& t, Generator<T>& g, Discriminator<T>& d, Var x, std::span<const int> src,
                         std::span<const int> tgt, const LossWeights& w) {
  Losses<T> out;
  out.g_total = generator_loss(t, g, d, x, src, tgt, w, out.parts);
  out.d_total = discriminator_loss(t, g, d, x, src, tgt, w, out.parts);
  return out;
}

}  // namespace stc::stargan
