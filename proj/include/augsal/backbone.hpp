#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "augsal/error.hpp"
#include "augsal/tensor.hpp"

namespace augsal {

using Prompt = std::vector<std::string>;

/// Whitespace tokenizer, lowercased.
inline Prompt tokenize(const std::string& caption) {
  Prompt out;
  std::istringstream in(caption);
  std::string word;
  while (in >> word) {
    for (auto& ch : word) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    out.push_back(word);
  }
  return out;
}

/// Reserved token that carries injected attention without adding semantics.
inline const std::string kEmptyToken = "<empty>";

enum class BackboneKind { kTiny, kPretrainedAdapter };

struct BackboneConfig {
  BackboneKind implementation = BackboneKind::kTiny;
  std::size_t latent_channels = 4;
  std::size_t downsample_factor = 8;
  std::size_t feature_channels_low = 16;
  std::size_t feature_channels_high = 16;
  std::size_t num_denoise_steps = 1;
  // Forward-noising timestep used for inversion, in [1, num_timesteps).
  std::size_t inversion_steps = 3;
  std::uint64_t seed = 0;
  // Tiny-backbone geometry.
  std::size_t num_timesteps = 10;
  std::size_t hidden_channels = 16;
  std::size_t bottleneck_channels = 32;
  std::size_t attention_dim = 8;
  std::size_t embedding_dim = 16;
  bool inject_all_steps = true;

  void validate() const {
    require(latent_channels >= 1, ErrorCode::kConfig, "backbone.latent_channels must be >= 1");
    require(downsample_factor >= 1 && (downsample_factor & (downsample_factor - 1)) == 0, ErrorCode::kConfig,
            "backbone.downsample_factor must be a power of two");
    require(num_denoise_steps >= 1 && inversion_steps >= 1, ErrorCode::kConfig,
            "backbone step counts must be >= 1");
    require(inversion_steps < num_timesteps, ErrorCode::kConfig,
            "backbone.inversion_steps must be below num_timesteps");
    require(feature_channels_low >= 1 && feature_channels_high >= 1, ErrorCode::kConfig,
            "backbone feature channel counts must be >= 1");
  }
};

/// Replacement attention for one prompt slot during denoising.
struct AttentionInjection {
  Tensor map;  // single channel, latent grid
  std::size_t token_index = 0;
};

struct Inversion {
  LatentTensor latent;        // encoded image
  LatentTensor noisy_latent;  // latent forward-noised to the inversion timestep
  FeatureBundle features;
  AttentionStack attention;
};

/// Per-pixel token weights. Without injection this is a softmax over the logits. With an
/// injected value m at slot k the remaining slots keep their softmax proportions (over the
/// remaining logits) scaled by r / (r + m), where r is the mass they held before injection,
/// and slot k receives m / (r + m). The weights therefore sum to one, and m = 0 reproduces
/// exactly the softmax of a prompt without slot k.
inline void attention_weights(std::span<const double> logits, std::optional<std::pair<std::size_t, double>> inject,
                              std::span<double> out) {
  const std::size_t n = logits.size();
  const std::size_t skip = inject ? inject->first : n;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    if (j != skip) mx = std::max(mx, logits[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = j == skip ? 0.0 : std::exp(logits[j] - mx);
    sum += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] = j == skip ? 0.0 : out[j] / sum;
  if (!inject || inject->second == 0.0) return;

  const double m = inject->second;
  // Mass of the remaining slots under the full softmax: sum / (sum + exp(l_k - mx)).
  const double r = sum / (sum + std::exp(logits[skip] - mx));
  const double scale = r / (r + m);
  for (std::size_t j = 0; j < n; ++j)
    if (j != skip) out[j] *= scale;
  out[skip] = m / (r + m);
}

/// Linearised decoder: rgb ~= z^T A + bias.
struct DecoderFit {
  Eigen::Matrix<double, Eigen::Dynamic, 3> matrix;  // latent_channels x 3
  Eigen::RowVector3d bias;
  double residual_rms = 0.0;
  double holdout_rms = 0.0;
  std::size_t num_pairs = 0;
};

/// Interface shared by the trainable tiny backbone and the pretrained-model adapter.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual const BackboneConfig& config() const = 0;
  virtual LatentTensor encode(const ImageTensor& img) const = 0;
  virtual ImageTensor decode(const LatentTensor& z) const = 0;
  /// Deterministic forward noising to the inversion timestep.
  virtual LatentTensor noise_latent(const LatentTensor& z) const = 0;
  virtual Inversion invert_and_extract(const ImageTensor& img, const Prompt& prompt) const = 0;
  virtual LatentTensor denoise(const LatentTensor& z_t, const Prompt& prompt,
                               const std::optional<AttentionInjection>& injection = std::nullopt) const = 0;
  virtual bool in_vocabulary(const std::string& token) const = 0;
  /// Per-channel [min, max] of latents seen in training; used to sample decoder-fit inputs.
  virtual std::vector<std::pair<double, double>> latent_range() const = 0;

  void check_divisible(const ImageTensor& img) const {
    const auto f = config().downsample_factor;
    require(img.height() % f == 0 && img.width() % f == 0, ErrorCode::kDimsMismatch,
            "image dims " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                " not divisible by downsample factor " + std::to_string(f));
  }

  /// Least-squares fit of decoded RGB against latent values over uniformly sampled latents.
  DecoderFit approximate_decoder_matrix(std::size_t num_fit = 10240, std::size_t grid = 16) const {
    const auto range = latent_range();
    const std::size_t channels = config().latent_channels;
    const std::size_t f = config().downsample_factor;
    require(range.size() == channels, ErrorCode::kDimsMismatch, "latent range must cover every channel");
    const std::size_t per_grid = grid * grid;
    const std::size_t grids = (num_fit + per_grid - 1) / per_grid;

    auto sample = [&](std::uint64_t seed, Eigen::MatrixXd& design, Eigen::MatrixXd& target) {
      std::mt19937_64 rng(seed);
      const std::size_t rows = grids * per_grid * f * f;
      design.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(channels + 1));
      target.resize(static_cast<Eigen::Index>(rows), 3);
      Eigen::Index row = 0;
      for (std::size_t g = 0; g < grids; ++g) {
        Tensor z(channels, grid, grid);
        for (std::size_t c = 0; c < channels; ++c) {
          std::uniform_real_distribution<double> dist(range[c].first, std::nextafter(range[c].second, 1e300));
          for (auto& v : z.channel(c)) v = range[c].first == range[c].second ? range[c].first : dist(rng);
        }
        const ImageTensor img = decode(LatentTensor(z));
        for (std::size_t y = 0; y < grid; ++y)
          for (std::size_t x = 0; x < grid; ++x)
            for (std::size_t dy = 0; dy < f; ++dy)
              for (std::size_t dx = 0; dx < f; ++dx, ++row) {
                for (std::size_t c = 0; c < channels; ++c) design(row, static_cast<Eigen::Index>(c)) = z.at(c, y, x);
                design(row, static_cast<Eigen::Index>(channels)) = 1.0;
                for (std::size_t c = 0; c < 3; ++c) target(row, static_cast<Eigen::Index>(c)) = img.at(c, y * f + dy, x * f + dx);
              }
      }
    };

    Eigen::MatrixXd design, target, hold_design, hold_target;
    sample(config().seed ^ 0xdec0de01ULL, design, target);
    sample(config().seed ^ 0xdec0de02ULL, hold_design, hold_target);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(design);
    const Eigen::MatrixXd coef = cod.solve(target);

    DecoderFit fit;
    fit.matrix = coef.topRows(static_cast<Eigen::Index>(channels));
    fit.bias = coef.row(static_cast<Eigen::Index>(channels));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(fit.matrix);
    const auto& sv = svd.singularValues();
    require(sv.size() >= 3 && sv(2) > 1e-10 * std::max(1.0, sv(0)), ErrorCode::kRankDeficient,
            "decoder fit has rank below 3");
    fit.num_pairs = static_cast<std::size_t>(design.rows());
    auto rms = [&](const Eigen::MatrixXd& d, const Eigen::MatrixXd& t) {
      return std::sqrt((d * coef - t).squaredNorm() / static_cast<double>(t.size()));
    };
    fit.residual_rms = rms(design, target);
    fit.holdout_rms = rms(hold_design, hold_target);
    return fit;
  }
};

}  // namespace augsal
