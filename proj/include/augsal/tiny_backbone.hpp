#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "augsal/backbone.hpp"
#include "augsal/checkpoint.hpp"
#include "augsal/nn.hpp"

namespace augsal {

/// Vocabulary of the desk-scale backbone: scene words of the synthetic dataset.
inline const std::vector<std::string>& tiny_vocabulary() {
  static const std::vector<std::string> vocab = {
      kEmptyToken, "<unk>",  "a",    "and",   "red",    "green",  "blue",     "yellow",
      "purple",    "cyan",   "orange", "white", "circle", "square", "triangle"};
  return vocab;
}

/// Trainable latent-diffusion stand-in: a linear patch autoencoder plus a small U-Net
/// denoiser with one per-token cross-attention block at latent resolution.
class TinyBackbone final : public Backbone {
 public:
  explicit TinyBackbone(BackboneConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    require(cfg_.implementation == BackboneKind::kTiny, ErrorCode::kConfig, "TinyBackbone needs implementation=tiny");
    const auto& vocab = tiny_vocabulary();
    for (std::size_t i = 0; i < vocab.size(); ++i) token_ids_[vocab[i]] = i;

    std::mt19937_64 rng(cfg_.seed ^ 0x7b1a5eULL);
    const std::size_t f2 = cfg_.downsample_factor * cfg_.downsample_factor;
    const std::size_t lc = cfg_.latent_channels;
    const std::size_t c1 = cfg_.hidden_channels, c2 = cfg_.bottleneck_channels;

    encoder_ = nn::Conv2d("backbone.encoder", 3 * f2, lc, 1, rng);
    decoder_ = nn::Conv2d("backbone.decoder", lc, 3 * f2, 1, rng);
    init_identity_autoencoder(rng);

    conv_in_ = nn::Conv2d("backbone.unet.conv_in", lc + 1, c1, 3, rng);
    conv_q_ = nn::Conv2d("backbone.unet.attn_q", c1, cfg_.attention_dim, 1, rng);
    embed_ = nn::Param("backbone.unet.token_embedding", {vocab.size(), cfg_.embedding_dim});
    nn::init_uniform(embed_, 1.0, rng);
    std::fill_n(embed_.value.begin(), cfg_.embedding_dim, 0.0);  // empty token stays zero
    wk_ = nn::Param("backbone.unet.attn_k", {cfg_.attention_dim, cfg_.embedding_dim});
    wv_ = nn::Param("backbone.unet.attn_v", {c1, cfg_.embedding_dim});
    nn::init_uniform(wk_, std::sqrt(3.0 / static_cast<double>(cfg_.embedding_dim)), rng);
    nn::init_uniform(wv_, std::sqrt(3.0 / static_cast<double>(cfg_.embedding_dim)), rng);
    conv_down_ = nn::Conv2d("backbone.unet.down", c1, c2, 3, rng);
    conv_mid_ = nn::Conv2d("backbone.unet.mid", c2, c2, 3, rng);
    conv_dec0_ = nn::Conv2d("backbone.unet.dec0", c2, c2, 3, rng);
    conv_dec1_ = nn::Conv2d("backbone.unet.dec1", c2 + c1, c1, 3, rng);
    conv_out_ = nn::Conv2d("backbone.unet.conv_out", c1, lc, 3, rng, 0.1);
    aggregate_ = nn::Conv2d("backbone.aggregate", raw_feature_channels(),
                            cfg_.feature_channels_low + cfg_.feature_channels_high, 1, rng);

    latent_range_.assign(lc, {0.0, 0.0});
    for (std::size_t c = 0; c < std::min<std::size_t>(3, lc); ++c) latent_range_[c] = {0.0, 1.0};
  }

  const BackboneConfig& config() const override { return cfg_; }

  std::size_t raw_feature_channels() const { return 2 * cfg_.bottleneck_channels + cfg_.hidden_channels; }

  // ---- geometry -----------------------------------------------------------------------

  Tensor space_to_depth(const ImageTensor& img) const {
    check_divisible(img);
    const std::size_t f = cfg_.downsample_factor;
    Tensor out(3 * f * f, img.height() / f, img.width() / f);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t dy = 0; dy < f; ++dy)
        for (std::size_t dx = 0; dx < f; ++dx)
          for (std::size_t y = 0; y < out.height(); ++y)
            for (std::size_t x = 0; x < out.width(); ++x)
              out.at((c * f + dy) * f + dx, y, x) = img.at(c, y * f + dy, x * f + dx);
    return out;
  }

  Tensor depth_to_space(const Tensor& t) const {
    const std::size_t f = cfg_.downsample_factor;
    Tensor out(3, t.height() * f, t.width() * f);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t dy = 0; dy < f; ++dy)
        for (std::size_t dx = 0; dx < f; ++dx)
          for (std::size_t y = 0; y < t.height(); ++y)
            for (std::size_t x = 0; x < t.width(); ++x)
              out.at(c, y * f + dy, x * f + dx) = t.at((c * f + dy) * f + dx, y, x);
    return out;
  }

  LatentTensor encode(const ImageTensor& img) const override { return LatentTensor(encoder_.forward(space_to_depth(img))); }

  /// Decoder output before clamping.
  Tensor decode_raw(const Tensor& z) const { return depth_to_space(decoder_.forward(z)); }

  ImageTensor decode(const LatentTensor& z) const override {
    require(z.channels() == cfg_.latent_channels, ErrorCode::kDimsMismatch, "latent channel count mismatch");
    Tensor img = decode_raw(z.tensor());
    for (auto& v : img.values()) v = std::clamp(v, 0.0, 1.0);
    return ImageTensor(std::move(img));
  }

  // ---- diffusion ------------------------------------------------------------------------

  double sigma(std::size_t t) const { return static_cast<double>(t) / static_cast<double>(cfg_.num_timesteps); }
  double signal(std::size_t t) const { return std::sqrt(1.0 - sigma(t) * sigma(t)); }

  /// Fixed-seed standard normal field for a latent shape.
  Tensor inversion_noise(std::size_t channels, std::size_t height, std::size_t width) const {
    std::mt19937_64 rng(cfg_.seed ^ 0x1a7e47ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor eps(channels, height, width);
    for (auto& v : eps.values()) v = normal(rng);
    return eps;
  }

  Tensor add_noise(const Tensor& z, const Tensor& eps, std::size_t t) const {
    Tensor zt(z.channels(), z.height(), z.width());
    const double a = signal(t), s = sigma(t);
    for (std::size_t i = 0; i < z.size(); ++i) zt[i] = a * z[i] + s * eps[i];
    return zt;
  }

  LatentTensor noise_latent(const LatentTensor& z) const override {
    return LatentTensor(
        add_noise(z.tensor(), inversion_noise(z.channels(), z.height(), z.width()), cfg_.inversion_steps));
  }

  std::vector<std::size_t> token_ids(const Prompt& prompt) const {
    require(!prompt.empty(), ErrorCode::kInvalidArgument, "prompt must hold at least one token");
    std::vector<std::size_t> ids;
    for (const auto& tok : prompt) {
      auto it = token_ids_.find(tok);
      ids.push_back(it == token_ids_.end() ? token_ids_.at("<unk>") : it->second);
    }
    return ids;
  }

  bool in_vocabulary(const std::string& token) const override { return token_ids_.count(token) != 0; }

  /// Activations of one denoiser pass, kept for feature extraction and backprop.
  struct Pass {
    Tensor x_in, pre1, h1, q, h1p, pooled, pre2, e2, pre3, b, pre4, d0, u, cat, pre5, d1, out;
    std::vector<std::size_t> tokens;
    std::vector<double> keys;     // T x attention_dim
    std::vector<double> values;   // T x hidden
    std::vector<double> weights;  // pixels x T
  };

  Pass run_unet(const Tensor& z_t, std::size_t t, const std::vector<std::size_t>& tokens,
                const AttentionInjection* inject) const {
    const std::size_t h = z_t.height(), w = z_t.width();
    require(h >= 2 && w >= 2, ErrorCode::kDimsMismatch, "latent grid must be at least 2x2");
    const std::size_t c1 = cfg_.hidden_channels, d = cfg_.attention_dim, e = cfg_.embedding_dim;
    const std::size_t nt = tokens.size(), np = h * w;
    if (inject) {
      require(inject->token_index < nt, ErrorCode::kRange, "injection token index out of range");
      require(inject->map.channels() == 1 && inject->map.height() == h && inject->map.width() == w,
              ErrorCode::kDimsMismatch, "injected map must match the latent grid");
    }

    Pass p;
    p.tokens = tokens;
    Tensor tplane(1, h, w, sigma(t));
    p.x_in = nn::concat_channels({&z_t, &tplane});
    p.pre1 = conv_in_.forward(p.x_in);
    p.h1 = nn::silu(p.pre1);
    p.q = conv_q_.forward(p.h1);

    p.keys.assign(nt * d, 0.0);
    p.values.assign(nt * c1, 0.0);
    for (std::size_t j = 0; j < nt; ++j) {
      const double* emb = embed_.value.data() + tokens[j] * e;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < e; ++k) p.keys[j * d + i] += wk_.value[i * e + k] * emb[k];
      for (std::size_t c = 0; c < c1; ++c)
        for (std::size_t k = 0; k < e; ++k) p.values[j * c1 + c] += wv_.value[c * e + k] * emb[k];
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    p.weights.assign(np * nt, 0.0);
    p.h1p = p.h1;
    std::vector<double> logits(nt);
    for (std::size_t px = 0; px < np; ++px) {
      for (std::size_t j = 0; j < nt; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += p.q[i * np + px] * p.keys[j * d + i];
        logits[j] = acc * inv_sqrt_d;
      }
      std::optional<std::pair<std::size_t, double>> inj;
      if (inject) inj = std::pair{inject->token_index, inject->map[px]};
      std::span<double> wrow(p.weights.data() + px * nt, nt);
      attention_weights(logits, inj, wrow);
      for (std::size_t c = 0; c < c1; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < nt; ++j) acc += wrow[j] * p.values[j * c1 + c];
        p.h1p[c * np + px] += acc;
      }
    }

    p.pooled = nn::avg_pool2(p.h1p);
    p.pre2 = conv_down_.forward(p.pooled);
    p.e2 = nn::silu(p.pre2);
    p.pre3 = conv_mid_.forward(p.e2);
    p.b = nn::silu(p.pre3);
    p.pre4 = conv_dec0_.forward(p.b);
    p.d0 = nn::silu(p.pre4);
    p.u = nn::resize_bilinear(p.d0, h, w);
    p.cat = nn::concat_channels({&p.u, &p.h1p});
    p.pre5 = conv_dec1_.forward(p.cat);
    p.d1 = nn::silu(p.pre5);
    p.out = conv_out_.forward(p.d1);
    return p;
  }

  /// Bottleneck output and both decoder blocks, resampled to the latent grid and stacked.
  Tensor raw_features(const Pass& p) const {
    const Tensor b_up = nn::resize_bilinear(p.b, p.u.height(), p.u.width());
    return nn::concat_channels({&b_up, &p.u, &p.d1});
  }

  Tensor raw_features(const ImageTensor& img, const Prompt& prompt) const {
    const LatentTensor zt = noise_latent(encode(img));
    return raw_features(run_unet(zt.tensor(), cfg_.inversion_steps, token_ids(prompt), nullptr));
  }

  FeatureBundle aggregate(const Tensor& raw) const {
    const Tensor agg = aggregate_.forward(raw);
    return FeatureBundle(nn::slice_channels(agg, 0, cfg_.feature_channels_low),
                         nn::slice_channels(agg, cfg_.feature_channels_low, cfg_.feature_channels_high));
  }

  Inversion invert_and_extract(const ImageTensor& img, const Prompt& prompt) const override {
    const auto ids = token_ids(prompt);
    LatentTensor z = encode(img);
    LatentTensor zt = noise_latent(z);
    const Pass p = run_unet(zt.tensor(), cfg_.inversion_steps, ids, nullptr);
    std::vector<Tensor> maps;
    const std::size_t np = zt.height() * zt.width();
    for (std::size_t j = 0; j < ids.size(); ++j) {
      Tensor m(1, zt.height(), zt.width());
      for (std::size_t px = 0; px < np; ++px) m[px] = p.weights[px * ids.size() + j];
      maps.push_back(std::move(m));
    }
    return Inversion{std::move(z), std::move(zt), aggregate(raw_features(p)), AttentionStack(std::move(maps), prompt)};
  }

  FeatureBundle extract_features(const ImageTensor& img, const Prompt& prompt) const {
    return aggregate(raw_features(img, prompt));
  }

  LatentTensor denoise(const LatentTensor& z_t, const Prompt& prompt,
                       const std::optional<AttentionInjection>& injection = std::nullopt) const override {
    require(z_t.channels() == cfg_.latent_channels, ErrorCode::kDimsMismatch, "latent channel count mismatch");
    const auto ids = token_ids(prompt);
    const std::size_t steps = std::min(cfg_.num_denoise_steps, cfg_.inversion_steps);
    Tensor z = z_t.tensor();
    std::size_t t = cfg_.inversion_steps;
    for (std::size_t k = 1; k <= steps; ++k) {
      const std::size_t t_next = cfg_.inversion_steps * (steps - k) / steps;
      const bool inject_now = injection && (cfg_.inject_all_steps || k == 1);
      const Pass p = run_unet(z, t, ids, inject_now ? &*injection : nullptr);
      const double a = signal(t), s = sigma(t), a_next = signal(t_next), s_next = sigma(t_next);
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double x0 = (z[i] - s * p.out[i]) / a;
        z[i] = t_next == 0 ? x0 : a_next * x0 + s_next * p.out[i];
      }
      t = t_next;
    }
    return LatentTensor(std::move(z));
  }

  std::vector<std::pair<double, double>> latent_range() const override { return latent_range_; }
  void set_latent_range(std::vector<std::pair<double, double>> r) { latent_range_ = std::move(r); }

  // ---- parameters ------------------------------------------------------------------------

  nn::ParamList autoencoder_params() { return {&encoder_.weight, &encoder_.bias, &decoder_.weight, &decoder_.bias}; }

  nn::ParamList denoiser_params() {
    nn::ParamList out;
    for (auto* conv : {&conv_in_, &conv_q_})
      for (auto* p : conv->params()) out.push_back(p);
    out.push_back(&embed_);
    out.push_back(&wk_);
    out.push_back(&wv_);
    for (auto* conv : {&conv_down_, &conv_mid_, &conv_dec0_, &conv_dec1_, &conv_out_})
      for (auto* p : conv->params()) out.push_back(p);
    return out;
  }

  nn::ParamList aggregation_params() { return aggregate_.params(); }

  nn::ParamList all_params() {
    auto out = autoencoder_params();
    for (auto* p : denoiser_params()) out.push_back(p);
    for (auto* p : aggregation_params()) out.push_back(p);
    return out;
  }

  nn::ConstParamList all_params() const {
    auto list = const_cast<TinyBackbone*>(this)->all_params();
    return {list.begin(), list.end()};
  }

  void save(Checkpoint& ck) const {
    ck.put_all(all_params());
    Json range = Json::array();
    for (const auto& [lo, hi] : latent_range_) range.push_back({lo, hi});
    ck.meta["backbone.latent_range"] = range;
  }

  void load(const Checkpoint& ck) {
    ck.get_all(all_params());
    if (ck.meta.contains("backbone.latent_range")) {
      latent_range_.clear();
      for (const auto& r : ck.meta.at("backbone.latent_range")) latent_range_.emplace_back(r[0].get<double>(), r[1].get<double>());
    }
  }

  // ---- gradients -------------------------------------------------------------------------

  /// Reconstruction MSE of the unclamped decoder; accumulates autoencoder gradients in order
  /// (encoder.weight, encoder.bias, decoder.weight, decoder.bias).
  double autoencoder_loss(const ImageTensor& img, nn::Grads& g, std::size_t offset) const {
    const Tensor x = space_to_depth(img);
    const Tensor z = encoder_.forward(x);
    const Tensor y = decoder_.forward(z);
    Tensor gy(y.channels(), y.height(), y.width());
    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double d = y[i] - x[i];
      loss += d * d * inv_n;
      gy[i] = 2.0 * d * inv_n;
    }
    const Tensor gz = decoder_.backward(z, gy, g[offset + 2], g[offset + 3]);
    encoder_.backward(x, gz, g[offset + 0], g[offset + 1]);
    return loss;
  }

  /// Noise-prediction MSE at timestep t; accumulates denoiser gradients (denoiser_params order).
  double denoise_loss(const Tensor& z, const Tensor& eps, std::size_t t, const std::vector<std::size_t>& tokens,
                      nn::Grads& g, std::size_t offset) const {
    const Pass p = run_unet(add_noise(z, eps, t), t, tokens, nullptr);
    Tensor gout(p.out.channels(), p.out.height(), p.out.width());
    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(p.out.size());
    for (std::size_t i = 0; i < p.out.size(); ++i) {
      const double d = p.out[i] - eps[i];
      loss += d * d * inv_n;
      gout[i] = 2.0 * d * inv_n;
    }
    unet_backward(p, gout, g, offset);
    return loss;
  }

  /// Backprop through the U-Net; gradient slots follow denoiser_params().
  void unet_backward(const Pass& p, const Tensor& gout, nn::Grads& g, std::size_t o) const {
    const std::size_t h = p.h1.height(), w = p.h1.width(), np = h * w;
    const std::size_t c1 = cfg_.hidden_channels, c2 = cfg_.bottleneck_channels;
    const std::size_t d = cfg_.attention_dim, e = cfg_.embedding_dim, nt = p.tokens.size();
    // Slots: 0/1 conv_in, 2/3 conv_q, 4 embed, 5 wk, 6 wv, 7/8 down, 9/10 mid, 11/12 dec0, 13/14 dec1, 15/16 out.
    const Tensor g_d1 = conv_out_.backward(p.d1, gout, g[o + 15], g[o + 16]);
    const Tensor g_cat = conv_dec1_.backward(p.cat, nn::silu_backward(p.pre5, g_d1), g[o + 13], g[o + 14]);
    const Tensor g_u = nn::slice_channels(g_cat, 0, c2);
    Tensor g_h1p = nn::slice_channels(g_cat, c2, c1);
    const Tensor g_d0 = nn::resize_bilinear_backward(g_u, p.d0.height(), p.d0.width());
    const Tensor g_b = conv_dec0_.backward(p.b, nn::silu_backward(p.pre4, g_d0), g[o + 11], g[o + 12]);
    const Tensor g_e2 = conv_mid_.backward(p.e2, nn::silu_backward(p.pre3, g_b), g[o + 9], g[o + 10]);
    const Tensor g_pool = conv_down_.backward(p.pooled, nn::silu_backward(p.pre2, g_e2), g[o + 7], g[o + 8]);
    nn::add_into(g_h1p, nn::avg_pool2_backward(g_pool, h, w));

    // Cross-attention: h1p = h1 + sum_j W_j V_j.
    Tensor g_h1 = g_h1p;
    Tensor g_q(d, h, w);
    std::vector<double> g_keys(nt * d, 0.0), g_values(nt * c1, 0.0), g_w(nt), g_l(nt);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t px = 0; px < np; ++px) {
      const double* wrow = p.weights.data() + px * nt;
      double dot = 0.0;
      for (std::size_t j = 0; j < nt; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < c1; ++c) {
          const double ga = g_h1p[c * np + px];
          acc += ga * p.values[j * c1 + c];
          g_values[j * c1 + c] += wrow[j] * ga;
        }
        g_w[j] = acc;
        dot += wrow[j] * acc;
      }
      for (std::size_t j = 0; j < nt; ++j) g_l[j] = wrow[j] * (g_w[j] - dot) * inv_sqrt_d;
      for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < d; ++i) {
          g_q[i * np + px] += g_l[j] * p.keys[j * d + i];
          g_keys[j * d + i] += g_l[j] * p.q[i * np + px];
        }
    }
    nn::add_into(g_h1, conv_q_.backward(p.h1, g_q, g[o + 2], g[o + 3]));
    auto g_embed = g[o + 4];
    auto g_wk = g[o + 5];
    auto g_wv = g[o + 6];
    for (std::size_t j = 0; j < nt; ++j) {
      const std::size_t tok = p.tokens[j];
      const double* emb = embed_.value.data() + tok * e;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < e; ++k) {
          g_wk[i * e + k] += g_keys[j * d + i] * emb[k];
          if (tok != 0) g_embed[tok * e + k] += g_keys[j * d + i] * wk_.value[i * e + k];
        }
      for (std::size_t c = 0; c < c1; ++c)
        for (std::size_t k = 0; k < e; ++k) {
          g_wv[c * e + k] += g_values[j * c1 + c] * emb[k];
          if (tok != 0) g_embed[tok * e + k] += g_values[j * c1 + c] * wv_.value[c * e + k];
        }
    }
    conv_in_.backward(p.x_in, nn::silu_backward(p.pre1, g_h1), g[o + 0], g[o + 1]);
  }

  /// Gradient of a loss on the aggregated features w.r.t. the aggregation layer.
  void aggregate_backward(const Tensor& raw, const Tensor& g_low, const Tensor& g_high, nn::Grads& g,
                          std::size_t offset) const {
    const Tensor gagg = nn::concat_channels({&g_low, &g_high});
    aggregate_.backward(raw, gagg, g[offset], g[offset + 1]);
  }

 private:
  void init_identity_autoencoder(std::mt19937_64& rng) {
    const std::size_t f2 = cfg_.downsample_factor * cfg_.downsample_factor;
    const std::size_t lc = cfg_.latent_channels;
    std::fill(encoder_.weight.value.begin(), encoder_.weight.value.end(), 0.0);
    std::fill(decoder_.weight.value.begin(), decoder_.weight.value.end(), 0.0);
    std::fill(encoder_.bias.value.begin(), encoder_.bias.value.end(), 0.0);
    std::fill(decoder_.bias.value.begin(), decoder_.bias.value.end(), 0.0);
    // Channels 0..2 carry block-mean R, G, B; extra channels start with small random
    // encoder rows and zero decoder columns, so decode(encode(x)) is the block mean.
    std::uniform_real_distribution<double> small(-0.05, 0.05);
    for (std::size_t c = 0; c < lc; ++c)
      for (std::size_t k = 0; k < 3 * f2; ++k)
        encoder_.weight.value[c * 3 * f2 + k] = c < 3 ? (k / f2 == c ? 1.0 / static_cast<double>(f2) : 0.0) : small(rng);
    for (std::size_t k = 0; k < 3 * f2; ++k)
      if (k / f2 < lc) decoder_.weight.value[k * lc + k / f2] = 1.0;
  }

  BackboneConfig cfg_;
  std::map<std::string, std::size_t> token_ids_;
  nn::Conv2d encoder_, decoder_;
  nn::Conv2d conv_in_, conv_q_;
  nn::Param embed_, wk_, wv_;
  nn::Conv2d conv_down_, conv_mid_, conv_dec0_, conv_dec1_, conv_out_;
  nn::Conv2d aggregate_;
  std::vector<std::pair<double, double>> latent_range_;
};

struct BackboneTrainOptions {
  std::size_t steps = 2000;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct BackboneLogRow {
  std::size_t step = 0;
  double autoencoder_loss = 0.0;
  double denoise_loss = 0.0;
};

/// Joint training of the autoencoder and the denoiser on (image, prompt) pairs. The denoiser
/// sees the encoder output as a constant.
class BackboneTrainer {
 public:
  BackboneTrainer(TinyBackbone& model, const std::vector<ImageTensor>& images, const std::vector<Prompt>& prompts,
                  BackboneTrainOptions opt)
      : model_(model), images_(images), prompts_(prompts), opt_(opt), n_ae_(model.autoencoder_params().size()) {
    require(!images_.empty() && images_.size() == prompts_.size(), ErrorCode::kData,
            "backbone training needs one prompt per image");
    params_ = model_.autoencoder_params();
    for (auto* p : model_.denoiser_params()) params_.push_back(p);
    adam_ = std::make_unique<nn::AdamW>(params_, std::vector<double>(params_.size(), opt_.lr));
  }

  std::size_t steps_done() const noexcept { return static_cast<std::size_t>(adam_->steps()); }
  nn::AdamW& optimizer() noexcept { return *adam_; }

  BackboneLogRow step() {
    const std::size_t step = steps_done();
    auto rng = nn::step_rng(opt_.seed, 0xbacb, step);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, images_.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_t(1, model_.config().num_timesteps - 1);
    nn::Grads g(params_);
    BackboneLogRow row{step, 0.0, 0.0};
    for (std::size_t b = 0; b < opt_.batch_size; ++b) {
      const std::size_t idx = pick(rng);
      const std::size_t t = pick_t(rng);
      row.autoencoder_loss += model_.autoencoder_loss(images_[idx], g, 0);
      const Tensor z = model_.encode(images_[idx]).tensor();
      Tensor eps(z.channels(), z.height(), z.width());
      for (auto& v : eps.values()) v = normal(rng);
      row.denoise_loss += model_.denoise_loss(z, eps, t, model_.token_ids(prompts_[idx]), g, n_ae_);
    }
    const double inv_b = 1.0 / static_cast<double>(opt_.batch_size);
    g.scale(inv_b);
    row.autoencoder_loss *= inv_b;
    row.denoise_loss *= inv_b;
    require(std::isfinite(row.autoencoder_loss) && std::isfinite(row.denoise_loss), ErrorCode::kNumerical,
            "backbone loss diverged at step " + std::to_string(step));
    adam_->step(g);
    return row;
  }

  /// Runs the remaining steps, then records the per-channel latent range over the training images.
  std::vector<BackboneLogRow> run(const std::function<void(const BackboneLogRow&)>& on_step = {}) {
    std::vector<BackboneLogRow> log;
    while (steps_done() < opt_.steps) {
      log.push_back(step());
      if (on_step) on_step(log.back());
    }
    update_latent_range();
    return log;
  }

  void update_latent_range() {
    std::vector<std::pair<double, double>> range(model_.config().latent_channels,
                                                 {std::numeric_limits<double>::infinity(),
                                                  -std::numeric_limits<double>::infinity()});
    for (const auto& img : images_) {
      const auto z = model_.encode(img);
      for (std::size_t c = 0; c < z.channels(); ++c)
        for (double v : z.tensor().channel(c)) {
          range[c].first = std::min(range[c].first, v);
          range[c].second = std::max(range[c].second, v);
        }
    }
    model_.set_latent_range(std::move(range));
  }

 private:
  TinyBackbone& model_;
  const std::vector<ImageTensor>& images_;
  const std::vector<Prompt>& prompts_;
  BackboneTrainOptions opt_;
  std::size_t n_ae_;
  nn::ParamList params_;
  std::unique_ptr<nn::AdamW> adam_;
};

inline std::vector<BackboneLogRow> train_backbone(TinyBackbone& model, const std::vector<ImageTensor>& images,
                                                  const std::vector<Prompt>& prompts,
                                                  const BackboneTrainOptions& opt,
                                                  const std::function<void(const BackboneLogRow&)>& on_step = {}) {
  BackboneTrainer trainer(model, images, prompts, opt);
  return trainer.run(on_step);
}

}  // namespace augsal
