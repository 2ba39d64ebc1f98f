#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "augsal/checkpoint.hpp"
#include "augsal/error.hpp"
#include "augsal/nn.hpp"
#include "augsal/tensor.hpp"

namespace augsal {

struct ReadoutConfig {
  std::vector<std::size_t> llfr_hidden_dims{32};
  std::vector<std::size_t> hlfr_conv_channels{32, 32};
  // The HLFR averages over an S x S grid of sub-boxes of the region; 1 is a plain masked mean.
  std::size_t hlfr_pool_grid = 3;
  std::size_t num_classes = 3;
  std::vector<std::size_t> sr_channels{16, 16, 16, 16, 16, 16, 1};
  std::uint64_t seed = 0;

  void validate() const {
    require(sr_channels.size() == 7, ErrorCode::kConfig, "readouts.sr_channels must have exactly 7 entries");
    require(sr_channels.back() == 1, ErrorCode::kConfig, "readouts.sr_channels must end with a single channel");
    for (auto c : sr_channels) require(c >= 1, ErrorCode::kConfig, "readouts.sr_channels entries must be >= 1");
    require(num_classes >= 2, ErrorCode::kConfig, "readouts.num_classes must be >= 2");
    for (auto c : llfr_hidden_dims) require(c >= 1, ErrorCode::kConfig, "readouts.llfr_hidden_dims entries must be >= 1");
    require(hlfr_pool_grid >= 1 && hlfr_pool_grid <= 8, ErrorCode::kConfig, "readouts.hlfr_pool_grid must be in [1, 8]");
    require(!hlfr_conv_channels.empty(), ErrorCode::kConfig, "readouts.hlfr_conv_channels must be nonempty");
    for (auto c : hlfr_conv_channels)
      require(c >= 1, ErrorCode::kConfig, "readouts.hlfr_conv_channels entries must be >= 1");
  }
};

/// Image-space box mapped outward onto a grid downsampled by `factor`.
inline PatchRegion latent_region(const PatchRegion& r, std::size_t factor, std::size_t grid_h, std::size_t grid_w) {
  require_fits(r, grid_h * factor, grid_w * factor);
  const int f = static_cast<int>(factor);
  return PatchRegion(r.x0 / f, r.y0 / f, (r.x1 + f - 1) / f, (r.y1 + f - 1) / f);
}

namespace detail {

/// Cell (i, j) of an n x n split of the region; every cell keeps at least one row and column.
inline PatchRegion grid_cell(const PatchRegion& r, std::size_t n, std::size_t i, std::size_t j) {
  auto split = [n](int lo, int hi, std::size_t k) {
    const int len = hi - lo;
    const int a = lo + static_cast<int>(k * static_cast<std::size_t>(len) / n);
    const int b = lo + static_cast<int>((k + 1) * static_cast<std::size_t>(len) / n);
    return std::pair{a, std::max(b, a + 1)};
  };
  const auto [y0, y1] = split(r.y0, r.y1, i);
  const auto [x0, x1] = split(r.x0, r.x1, j);
  return PatchRegion(x0, y0, x1, y1);
}

/// Per-channel mean over the region cells, of x or of x^2.
inline std::vector<double> region_mean(const Tensor& x, const PatchRegion& r, bool squared) {
  std::vector<double> out(x.channels(), 0.0);
  const double inv = 1.0 / static_cast<double>(r.area());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    double acc = 0.0;
    for (int y = r.y0; y < r.y1; ++y)
      for (int xx = r.x0; xx < r.x1; ++xx) {
        const double v = x.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx));
        acc += squared ? v * v : v;
      }
    out[c] = acc * inv;
  }
  return out;
}

inline void region_mean_backward(const Tensor& x, const PatchRegion& r, bool squared, std::span<const double> g,
                                 Tensor& gx) {
  const double inv = 1.0 / static_cast<double>(r.area());
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (int y = r.y0; y < r.y1; ++y)
      for (int xx = r.x0; xx < r.x1; ++xx) {
        const auto yy = static_cast<std::size_t>(y), xc = static_cast<std::size_t>(xx);
        gx.at(c, yy, xc) += g[c] * inv * (squared ? 2.0 * x.at(c, yy, xc) : 1.0);
      }
}

}  // namespace detail

/// Stack of dense layers with SiLU between them.
struct Mlp {
  std::vector<nn::Dense> layers;

  struct Cache {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> pre;
  };

  Mlp() = default;
  Mlp(const std::string& name, std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
      std::mt19937_64& rng) {
    std::size_t prev = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      layers.emplace_back(name + ".fc" + std::to_string(i), prev, hidden[i], rng);
      prev = hidden[i];
    }
    layers.emplace_back(name + ".fc" + std::to_string(hidden.size()), prev, out, rng);
  }

  nn::ParamList params() {
    nn::ParamList out;
    for (auto& l : layers)
      for (auto* p : l.params()) out.push_back(p);
    return out;
  }

  std::vector<double> forward(std::span<const double> x, Cache* cache) const {
    std::vector<double> h(x.begin(), x.end());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (cache) cache->inputs.push_back(h);
      std::vector<double> y = layers[i].forward(h);
      if (cache) cache->pre.push_back(y);
      if (i + 1 < layers.size())
        for (auto& v : y) v = nn::silu(v);
      h = std::move(y);
    }
    return h;
  }

  std::vector<double> backward(const Cache& cache, std::span<const double> gy, nn::Grads& g,
                               std::size_t offset) const {
    std::vector<double> grad(gy.begin(), gy.end());
    for (std::size_t i = layers.size(); i-- > 0;) {
      if (i + 1 < layers.size())
        for (std::size_t j = 0; j < grad.size(); ++j) grad[j] *= nn::silu_grad(cache.pre[i][j]);
      grad = layers[i].backward(cache.inputs[i], grad, g[offset + 2 * i], g[offset + 2 * i + 1]);
    }
    return grad;
  }
};

/// Low-level feature readout: six property heads over a shared pooled trunk.
class Llfr {
 public:
  struct Cache {
    PatchRegion cells;
    std::vector<double> trunk;
    std::array<Mlp::Cache, kNumProperties> heads;
    std::array<double, kNumProperties> raw{};
  };

  Llfr() = default;
  Llfr(std::size_t low_channels, std::size_t factor, const ReadoutConfig& cfg)
      : channels_(low_channels), factor_(factor) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed ^ 0x11f40001ULL);
    for (std::size_t i = 0; i < kNumProperties; ++i)
      heads_[i] = Mlp(std::string("llfr.") + property_name(i), 4 * low_channels, cfg.llfr_hidden_dims, 1, rng);
  }

  std::size_t trunk_size() const noexcept { return 4 * channels_; }

  std::vector<double> trunk(const Tensor& low, const PatchRegion& cells) const {
    std::vector<double> t;
    t.reserve(trunk_size());
    const PatchRegion all = PatchRegion::full(low.height(), low.width());
    for (const auto& [r, sq] : {std::pair{cells, false}, std::pair{cells, true}, std::pair{all, false},
                                std::pair{all, true}}) {
      const auto part = detail::region_mean(low, r, sq);
      t.insert(t.end(), part.begin(), part.end());
    }
    return t;
  }

  /// Six outputs: sigmoid for the means, softplus for the contrasts.
  std::array<double, kNumProperties> forward(const Tensor& low, const PatchRegion& region,
                                             Cache* cache = nullptr) const {
    require(low.channels() == channels_, ErrorCode::kDimsMismatch, "llfr: low-level channel count mismatch");
    const PatchRegion cells = latent_region(region, factor_, low.height(), low.width());
    const auto t = trunk(low, cells);
    std::array<double, kNumProperties> out{};
    for (std::size_t i = 0; i < kNumProperties; ++i) {
      const double raw = heads_[i].forward(t, cache ? &cache->heads[i] : nullptr)[0];
      out[i] = i <= kBrightness ? nn::sigmoid(raw) : nn::softplus(raw);
      if (cache) cache->raw[i] = raw;
    }
    if (cache) {
      cache->cells = cells;
      cache->trunk = t;
    }
    return out;
  }

  PropertyVector predict(const Tensor& low, const PatchRegion& region) const {
    return PropertyVector(forward(low, region));
  }

  /// Returns dL/d(low); accumulates head gradients starting at `offset` (params() order).
  Tensor backward(const Tensor& low, const Cache& cache, const std::array<double, kNumProperties>& d_out,
                  nn::Grads& g, std::size_t offset) const {
    std::vector<double> g_trunk(trunk_size(), 0.0);
    std::size_t slot = offset;
    for (std::size_t i = 0; i < kNumProperties; ++i) {
      const double raw = cache.raw[i];
      const double d_raw = d_out[i] * (i <= kBrightness ? nn::sigmoid(raw) * (1.0 - nn::sigmoid(raw))
                                                         : nn::sigmoid(raw));
      const std::array<double, 1> gy{d_raw};
      const auto gt = heads_[i].backward(cache.heads[i], gy, g, slot);
      for (std::size_t j = 0; j < gt.size(); ++j) g_trunk[j] += gt[j];
      slot += 2 * heads_[i].layers.size();
    }
    Tensor g_low(low.channels(), low.height(), low.width());
    const PatchRegion all = PatchRegion::full(low.height(), low.width());
    const std::size_t c = channels_;
    detail::region_mean_backward(low, cache.cells, false, std::span(g_trunk).subspan(0, c), g_low);
    detail::region_mean_backward(low, cache.cells, true, std::span(g_trunk).subspan(c, c), g_low);
    detail::region_mean_backward(low, all, false, std::span(g_trunk).subspan(2 * c, c), g_low);
    detail::region_mean_backward(low, all, true, std::span(g_trunk).subspan(3 * c, c), g_low);
    return g_low;
  }

  nn::ParamList params() {
    nn::ParamList out;
    for (auto& h : heads_)
      for (auto* p : h.params()) out.push_back(p);
    return out;
  }
  nn::ConstParamList params() const {
    auto list = const_cast<Llfr*>(this)->params();
    return {list.begin(), list.end()};
  }

 private:
  std::size_t channels_ = 0;
  std::size_t factor_ = 1;
  std::array<Mlp, kNumProperties> heads_;
};

/// High-level feature readout: bias-free conv stack, masked pooling over the region, linear classifier.
class Hlfr {
 public:
  struct Cache {
    PatchRegion cells;
    std::vector<Tensor> inputs;
    std::vector<Tensor> pre;
    std::vector<double> pooled;
  };

  Hlfr() = default;
  Hlfr(std::size_t high_channels, std::size_t factor, const ReadoutConfig& cfg)
      : channels_(high_channels), factor_(factor), grid_(cfg.hlfr_pool_grid) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed ^ 0x41f40002ULL);
    std::size_t prev = high_channels;
    for (std::size_t i = 0; i < cfg.hlfr_conv_channels.size(); ++i) {
      convs_.emplace_back("hlfr.conv" + std::to_string(i), prev, cfg.hlfr_conv_channels[i], 3, rng, 1.0, false);
      prev = cfg.hlfr_conv_channels[i];
    }
    head_ = nn::Dense("hlfr.head", grid_ * grid_ * prev, cfg.num_classes, rng);
  }

  std::size_t num_classes() const noexcept { return head_.out; }

  std::vector<double> forward(const Tensor& high, const PatchRegion& region, Cache* cache = nullptr) const {
    require(high.channels() == channels_, ErrorCode::kDimsMismatch, "hlfr: high-level channel count mismatch");
    const PatchRegion cells = latent_region(region, factor_, high.height(), high.width());
    Tensor h = high;
    for (const auto& conv : convs_) {
      Tensor pre = conv.forward(h);
      if (cache) {
        cache->inputs.push_back(h);
        cache->pre.push_back(pre);
      }
      h = nn::silu(pre);
    }
    std::vector<double> pooled;
    for (std::size_t i = 0; i < grid_; ++i)
      for (std::size_t j = 0; j < grid_; ++j) {
        const auto part = detail::region_mean(h, detail::grid_cell(cells, grid_, i, j), false);
        pooled.insert(pooled.end(), part.begin(), part.end());
      }
    if (cache) {
      cache->cells = cells;
      cache->pooled = pooled;
    }
    return head_.forward(pooled);
  }

  int predict(const Tensor& high, const PatchRegion& region) const {
    const auto logits = forward(high, region);
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }

  /// Returns dL/d(high); gradient slots follow params().
  Tensor backward(const Cache& cache, std::span<const double> d_logits, nn::Grads& g, std::size_t offset) const {
    const std::size_t n = convs_.size();
    const auto g_pooled = head_.backward(cache.pooled, d_logits, g[offset + n], g[offset + n + 1]);
    const Tensor& last = cache.pre.back();
    Tensor gh(last.channels(), last.height(), last.width());
    const std::size_t c = last.channels();
    for (std::size_t i = 0, k = 0; i < grid_; ++i)
      for (std::size_t j = 0; j < grid_; ++j, ++k)
        detail::region_mean_backward(last, detail::grid_cell(cache.cells, grid_, i, j), false,
                                     std::span(g_pooled).subspan(k * c, c), gh);
    for (std::size_t i = n; i-- > 0;) gh = convs_[i].backward(cache.inputs[i], nn::silu_backward(cache.pre[i], gh), g[offset + i]);
    return gh;
  }

  nn::ParamList params() {
    nn::ParamList out;
    for (auto& c : convs_) out.push_back(&c.weight);
    out.push_back(&head_.weight);
    out.push_back(&head_.bias);
    return out;
  }
  nn::ConstParamList params() const {
    auto list = const_cast<Hlfr*>(this)->params();
    return {list.begin(), list.end()};
  }

 private:
  std::size_t channels_ = 0;
  std::size_t factor_ = 1;
  std::size_t grid_ = 1;
  std::vector<nn::Conv2d> convs_;
  nn::Dense head_;
};

/// Saliency readout: seven 3x3 conv stages with SiLU and additive skips from two stages back,
/// bilinear upsampling of the final logits to image resolution, then a sigmoid.
class SaliencyReadout {
 public:
  struct Cache {
    std::vector<Tensor> x;    // x[0] input, x[i] output of stage i (i = 1..6)
    std::vector<Tensor> pre;  // pre[i - 1] pre-activation of stage i (i = 1..7)
    Tensor out;               // sigmoid output at image resolution
  };

  SaliencyReadout() = default;
  SaliencyReadout(std::size_t in_channels, std::size_t factor, const ReadoutConfig& cfg)
      : in_(in_channels), factor_(factor) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed ^ 0x5a1e0003ULL);
    std::vector<std::size_t> ch = {in_channels};
    ch.insert(ch.end(), cfg.sr_channels.begin(), cfg.sr_channels.end());
    stages_.resize(7);
    proj_.resize(7);
    has_proj_.assign(7, false);
    for (std::size_t i = 1; i <= 7; ++i) {
      stages_[i - 1] = nn::Conv2d("sr.stage" + std::to_string(i), ch[i - 1], ch[i], 3, rng);
      if (i >= 2 && i <= 6 && ch[i - 2] != ch[i]) {
        proj_[i - 1] = nn::Conv2d("sr.skip" + std::to_string(i), ch[i - 2], ch[i], 1, rng);
        has_proj_[i - 1] = true;
      }
    }
  }

  std::size_t input_channels() const noexcept { return in_; }

  Tensor forward_raw(const Tensor& input, std::size_t out_h, std::size_t out_w, Cache* cache = nullptr) const {
    require(input.channels() == in_, ErrorCode::kDimsMismatch, "sr: input channel count mismatch");
    std::vector<Tensor> x = {input};
    std::vector<Tensor> pre;
    for (std::size_t i = 1; i <= 7; ++i) {
      pre.push_back(stages_[i - 1].forward(x[i - 1]));
      if (i == 7) break;
      Tensor xi = nn::silu(pre.back());
      if (i >= 2) nn::add_into(xi, has_proj_[i - 1] ? proj_[i - 1].forward(x[i - 2]) : x[i - 2]);
      x.push_back(std::move(xi));
    }
    Tensor out = nn::resize_bilinear(pre.back(), out_h, out_w);
    for (auto& v : out.values()) v = nn::sigmoid(v);
    if (cache) {
      cache->x = std::move(x);
      cache->pre = std::move(pre);
      cache->out = out;
    }
    return out;
  }

  /// Prediction at image resolution (latent grid times the downsample factor).
  SaliencyMap forward(const FeatureBundle& bundle) const {
    const Tensor input = nn::concat_channels({&bundle.low_level(), &bundle.high_level()});
    return SaliencyMap(forward_raw(input, bundle.height() * factor_, bundle.width() * factor_));
  }

  /// Returns dL/d(input) given dL/d(output); gradient slots follow params().
  Tensor backward(const Cache& cache, const Tensor& g_out, nn::Grads& g, std::size_t offset) const {
    const auto slots = slot_table();
    Tensor g_up = g_out;
    for (std::size_t i = 0; i < g_up.size(); ++i) g_up[i] *= cache.out[i] * (1.0 - cache.out[i]);
    const Tensor& logits = cache.pre.back();
    Tensor g_pre = nn::resize_bilinear_backward(g_up, logits.height(), logits.width());

    std::vector<Tensor> gx(7);
    for (std::size_t i = 0; i < 7; ++i) gx[i] = Tensor(cache.x[i].channels(), cache.x[i].height(), cache.x[i].width());
    for (std::size_t i = 7; i >= 1; --i) {
      if (i < 7) g_pre = nn::silu_backward(cache.pre[i - 1], gx[i]);
      const auto [sw, sb] = slots.stage[i - 1];
      nn::add_into(gx[i - 1], stages_[i - 1].backward(cache.x[i - 1], g_pre, g[offset + sw], g[offset + sb]));
      if (i >= 2 && i < 7) {
        if (has_proj_[i - 1]) {
          const auto [pw, pb] = slots.proj[i - 1];
          nn::add_into(gx[i - 2], proj_[i - 1].backward(cache.x[i - 2], gx[i], g[offset + pw], g[offset + pb]));
        } else {
          nn::add_into(gx[i - 2], gx[i]);
        }
      }
    }
    return gx[0];
  }

  nn::ParamList params() {
    nn::ParamList out;
    for (std::size_t i = 0; i < 7; ++i) {
      out.push_back(&stages_[i].weight);
      out.push_back(&stages_[i].bias);
      if (has_proj_[i]) {
        out.push_back(&proj_[i].weight);
        out.push_back(&proj_[i].bias);
      }
    }
    return out;
  }
  nn::ConstParamList params() const {
    auto list = const_cast<SaliencyReadout*>(this)->params();
    return {list.begin(), list.end()};
  }

 private:
  struct Slots {
    std::array<std::pair<std::size_t, std::size_t>, 7> stage{};
    std::array<std::pair<std::size_t, std::size_t>, 7> proj{};
  };

  Slots slot_table() const {
    Slots s;
    std::size_t k = 0;
    for (std::size_t i = 0; i < 7; ++i) {
      s.stage[i] = {k, k + 1};
      k += 2;
      if (has_proj_[i]) {
        s.proj[i] = {k, k + 1};
        k += 2;
      }
    }
    return s;
  }

  std::size_t in_ = 0;
  std::size_t factor_ = 1;
  std::vector<nn::Conv2d> stages_;
  std::vector<nn::Conv2d> proj_;
  std::vector<bool> has_proj_;
};

}  // namespace augsal
