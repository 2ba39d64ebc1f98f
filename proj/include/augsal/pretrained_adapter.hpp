#pragma once

#include <algorithm>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "augsal/backbone.hpp"
#include "augsal/error.hpp"
#include "augsal/tensor.hpp"

namespace augsal {

/// Output of one runtime inversion call, before contract checks.
struct RuntimeInversion {
  Tensor latent;
  Tensor noisy_latent;
  Tensor low_features;
  Tensor high_features;
  std::vector<Tensor> attention;  // one map per prompt token
};

/// Bridge to an external latent-diffusion runtime (e.g. an exported U-Net behind an inference engine).
class AdapterRuntime {
 public:
  virtual ~AdapterRuntime() = default;
  virtual Tensor encode(const Tensor& rgb) = 0;
  virtual Tensor decode(const Tensor& latent) = 0;
  virtual Tensor noise(const Tensor& latent) = 0;
  virtual RuntimeInversion invert(const Tensor& rgb, const std::vector<std::string>& tokens) = 0;
  /// `inject` is (token index, single-channel map) or empty.
  virtual Tensor denoise(const Tensor& noisy, const std::vector<std::string>& tokens,
                         const std::optional<std::pair<std::size_t, Tensor>>& inject) = 0;
  virtual bool knows_token(const std::string& token) = 0;
  virtual std::vector<std::pair<double, double>> latent_range() = 0;
};

/// Backbone over an AdapterRuntime; every runtime result is checked against the configured geometry.
class PretrainedAdapter final : public Backbone {
 public:
  PretrainedAdapter(BackboneConfig cfg, std::shared_ptr<AdapterRuntime> runtime)
      : cfg_(std::move(cfg)), rt_(std::move(runtime)) {
    require(rt_ != nullptr, ErrorCode::kConfig, "pretrained adapter needs a runtime");
    cfg_.validate();
    require(cfg_.implementation == BackboneKind::kPretrainedAdapter, ErrorCode::kConfig,
            "backbone.implementation must be pretrained_adapter for the adapter");
  }

  const BackboneConfig& config() const override { return cfg_; }

  LatentTensor encode(const ImageTensor& img) const override {
    check_divisible(img);
    return check_latent(rt_->encode(img.tensor()), img.height() / cfg_.downsample_factor,
                        img.width() / cfg_.downsample_factor, "encode");
  }

  ImageTensor decode(const LatentTensor& z) const override {
    Tensor out = rt_->decode(z.tensor());
    require(out.channels() == 3 && out.height() == z.height() * cfg_.downsample_factor &&
                out.width() == z.width() * cfg_.downsample_factor,
            ErrorCode::kDimsMismatch, "adapter decode returned wrong dims");
    for (auto& v : out.values()) v = std::clamp(v, 0.0, 1.0);
    return ImageTensor(std::move(out));
  }

  LatentTensor noise_latent(const LatentTensor& z) const override {
    return check_latent(rt_->noise(z.tensor()), z.height(), z.width(), "noise");
  }

  Inversion invert_and_extract(const ImageTensor& img, const Prompt& prompt) const override {
    check_divisible(img);
    require(!prompt.empty(), ErrorCode::kInvalidArgument, "prompt must be nonempty");
    RuntimeInversion r = rt_->invert(img.tensor(), prompt);
    const std::size_t gh = img.height() / cfg_.downsample_factor, gw = img.width() / cfg_.downsample_factor;
    LatentTensor z = check_latent(std::move(r.latent), gh, gw, "invert");
    LatentTensor zt = check_latent(std::move(r.noisy_latent), gh, gw, "invert");
    require(r.low_features.channels() == cfg_.feature_channels_low &&
                r.high_features.channels() == cfg_.feature_channels_high,
            ErrorCode::kDimsMismatch, "adapter features disagree with configured channel counts");
    require(r.low_features.height() == gh && r.low_features.width() == gw, ErrorCode::kDimsMismatch,
            "adapter features must lie on the latent grid");
    FeatureBundle fb(std::move(r.low_features), std::move(r.high_features));
    return Inversion{std::move(z), std::move(zt), std::move(fb), AttentionStack(std::move(r.attention), prompt)};
  }

  LatentTensor denoise(const LatentTensor& z_t, const Prompt& prompt,
                       const std::optional<AttentionInjection>& injection = std::nullopt) const override {
    std::optional<std::pair<std::size_t, Tensor>> inj;
    if (injection) {
      require(injection->token_index < prompt.size(), ErrorCode::kInvalidArgument, "injection token index out of range");
      require(injection->map.channels() == 1 && injection->map.height() == z_t.height() &&
                  injection->map.width() == z_t.width(),
              ErrorCode::kDimsMismatch, "injection map must be single-channel on the latent grid");
      inj.emplace(injection->token_index, injection->map);
    }
    return check_latent(rt_->denoise(z_t.tensor(), prompt, inj), z_t.height(), z_t.width(), "denoise");
  }

  bool in_vocabulary(const std::string& token) const override { return rt_->knows_token(token); }

  std::vector<std::pair<double, double>> latent_range() const override { return rt_->latent_range(); }

 private:
  LatentTensor check_latent(Tensor t, std::size_t h, std::size_t w, const char* what) const {
    require(t.channels() == cfg_.latent_channels && t.height() == h && t.width() == w, ErrorCode::kDimsMismatch,
            std::string("adapter ") + what + " returned a latent of the wrong shape");
    return LatentTensor(std::move(t));
  }

  BackboneConfig cfg_;
  std::shared_ptr<AdapterRuntime> rt_;
};

}  // namespace augsal
