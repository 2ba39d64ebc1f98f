#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "augsal/backbone.hpp"
#include "augsal/checkpoint.hpp"
#include "augsal/error.hpp"
#include "augsal/image_io.hpp"
#include "augsal/nn.hpp"
#include "augsal/photometrics.hpp"
#include "augsal/readouts.hpp"
#include "augsal/tensor.hpp"
#include "augsal/tensor_io.hpp"

namespace augsal {

/// Latent direction whose decoded effect is a unit change on every RGB channel.
struct GammaScale {
  std::vector<double> gamma;

  GammaScale() = default;
  explicit GammaScale(std::vector<double> g) : gamma(std::move(g)) {
    double n2 = 0.0;
    for (double v : gamma) {
      require(std::isfinite(v), ErrorCode::kNonFinite, "gamma must be finite");
      n2 += v * v;
    }
    require(n2 > 0.0, ErrorCode::kNumerical, "gamma must be nonzero");
  }
  std::size_t size() const noexcept { return gamma.size(); }
  double operator[](std::size_t i) const { return gamma[i]; }
};

/// Row of ones times the pseudo-inverse of A (C x 3). With full column rank the pseudo-inverse
/// is (A^T A)^-1 A^T, so gamma^T = A y with (A^T A) y = 1.
inline GammaScale compute_gamma(const Eigen::MatrixXd& a) {
  require(a.cols() == 3 && a.rows() >= 3, ErrorCode::kDimsMismatch, "decoder matrix must be C x 3 with C >= 3");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  require(sv(2) > 1e-12 * std::max(1.0, sv(0)), ErrorCode::kRankDeficient, "decoder matrix has rank below 3");
  const Eigen::Matrix3d gram = a.transpose() * a;
  const Eigen::Vector3d y = gram.ldlt().solve(Eigen::Vector3d::Ones());
  const Eigen::VectorXd g = a * y;
  return GammaScale(std::vector<double>(g.data(), g.data() + g.size()));
}

/// Block mean when the target grid divides the source, bilinear otherwise.
inline Tensor resize_to_grid(const Tensor& map, std::size_t height, std::size_t width) {
  if (map.height() == height && map.width() == width) return map;
  if (map.height() % height != 0 || map.width() % width != 0) return nn::resize_bilinear(map, height, width);
  const std::size_t fy = map.height() / height, fx = map.width() / width;
  Tensor out(map.channels(), height, width);
  const double inv = 1.0 / static_cast<double>(fy * fx);
  for (std::size_t c = 0; c < map.channels(); ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < fy; ++dy)
          for (std::size_t dx = 0; dx < fx; ++dx) acc += map.at(c, y * fy + dy, x * fx + dx);
        out.at(c, y, x) = acc * inv;
      }
  return out;
}

/// Latent-grid mask taken to image resolution, clamped to [0, 1].
inline Tensor upsample_mask(const Tensor& mask, std::size_t height, std::size_t width) {
  Tensor up = nn::resize_bilinear(mask, height, width);
  for (auto& v : up.values()) v = std::clamp(v, 0.0, 1.0);
  return up;
}

struct RegionSelection {
  Tensor mask;  // latent grid, max 1 (or all zero)
  std::size_t token_index = 0;
};

/// Token whose attention map has the largest inner product with the saliency map (lowest index on
/// ties); the mask is that map times the saliency, rescaled to max 1.
inline RegionSelection select_region(const AttentionStack& attention, const Tensor& saliency) {
  const std::size_t h = attention.map(0).height(), w = attention.map(0).width();
  const Tensor s = resize_to_grid(saliency, h, w);
  double smax = 0.0;
  for (double v : s.values()) smax = std::max(smax, v);
  require(smax > 0.0, ErrorCode::kInvalidArgument, "saliency map has no salient region");

  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < attention.size(); ++i) {
    double score = 0.0;
    const auto& c = attention.map(i);
    for (std::size_t p = 0; p < s.size(); ++p) score += c[p] * s[p];
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  Tensor mask(1, h, w);
  double mmax = 0.0;
  for (std::size_t p = 0; p < s.size(); ++p) {
    mask[p] = attention.map(best)[p] * s[p];
    mmax = std::max(mmax, mask[p]);
  }
  if (mmax > 0.0)
    for (auto& v : mask.values()) v /= mmax;
  return {std::move(mask), best};
}

inline RegionSelection select_region(const AttentionStack& attention, const SaliencyMap& saliency) {
  return select_region(attention, saliency.tensor());
}

enum class ContrastPivot { kGammaProjected, kChannelMean };

namespace detail {

inline void require_mask_for(const Tensor& mask, const LatentTensor& z) {
  require(mask.channels() == 1 && mask.height() == z.height() && mask.width() == z.width(), ErrorCode::kDimsMismatch,
          "mask must be single-channel on the latent grid");
  validate_mask(mask);
}

}  // namespace detail

/// Z_E = Z + M (alpha - 1)(Z - pivot), i.e. M (alpha (Z - pivot) + pivot) + (1 - M) Z. The pivot is the
/// mask-weighted channel mean; by default it is projected onto gamma, so the deviation being amplified
/// is measured from a gray level of the region rather than from each channel's own mean.
inline LatentTensor contrast_edit(const LatentTensor& z, const Tensor& mask, double alpha, const GammaScale& gamma,
                                  ContrastPivot pivot_mode = ContrastPivot::kGammaProjected) {
  detail::require_mask_for(mask, z);
  require(std::isfinite(alpha) && alpha > 0.0, ErrorCode::kRange, "contrast strength must be positive");
  require(gamma.size() == z.channels(), ErrorCode::kDimsMismatch, "gamma length must equal latent channels");
  if (alpha == 1.0) return z;
  double wsum = 0.0;
  for (double m : mask.values()) wsum += m;
  if (wsum == 0.0) {
    warn("contrast edit with an empty mask is the identity");
    return z;
  }
  const std::size_t nc = z.channels(), np = mask.size();
  std::vector<double> mu(nc, 0.0);
  for (std::size_t c = 0; c < nc; ++c) {
    double acc = 0.0;
    for (std::size_t p = 0; p < np; ++p) acc += mask[p] * z.tensor()[c * np + p];
    mu[c] = acc / wsum;
  }
  std::vector<double> pivot = mu;
  if (pivot_mode == ContrastPivot::kGammaProjected) {
    double dot = 0.0, gg = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      dot += mu[c] * gamma[c];
      gg += gamma[c] * gamma[c];
    }
    for (std::size_t c = 0; c < nc; ++c) pivot[c] = dot / gg * gamma[c];
  }
  Tensor out = z.tensor();
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t p = 0; p < np; ++p)
      if (mask[p] != 0.0) out[c * np + p] += mask[p] * (alpha - 1.0) * (out[c * np + p] - pivot[c]);
  return LatentTensor(std::move(out));
}

/// Z_E = Z + M alpha gamma.
inline LatentTensor brightness_edit(const LatentTensor& z, const Tensor& mask, double alpha, const GammaScale& gamma) {
  detail::require_mask_for(mask, z);
  require(std::isfinite(alpha) && alpha >= 0.0, ErrorCode::kRange, "brightness strength must be nonnegative");
  require(gamma.size() == z.channels(), ErrorCode::kDimsMismatch, "gamma length must equal latent channels");
  if (alpha == 0.0) return z;
  const std::size_t np = mask.size();
  Tensor out = z.tensor();
  for (std::size_t c = 0; c < z.channels(); ++c)
    for (std::size_t p = 0; p < np; ++p)
      if (mask[p] != 0.0) out[c * np + p] += mask[p] * alpha * gamma[c];
  return LatentTensor(std::move(out));
}

inline Prompt token_insert(const Prompt& prompt, std::size_t index, const std::string& token) {
  require(index < prompt.size(), ErrorCode::kRange, "token index out of range");
  Prompt out = prompt;
  out.insert(out.begin() + static_cast<std::ptrdiff_t>(index), token);
  return out;
}

inline Prompt token_insert_for_photometric(const Prompt& prompt, std::size_t index) {
  return token_insert(prompt, index, kEmptyToken);
}

struct EditResult {
  EditKind kind = EditKind::kBrightnessIncrease;
  LatentTensor edited_latent{Tensor(1, 1, 1)};  // latent decoded into edited_image
  ImageTensor edited_image{Tensor(3, 1, 1)};
  double requested_alpha = 0.0;
  double applied_alpha = 0.0;
  std::size_t selected_token_index = 0;
  Tensor mask;
  PatchRegion region;  // image-space box around the mask
  Prompt prompt;
  Prompt edited_prompt;
  bool constraint_triggered = false;
  bool constraint_exhausted = false;
};

using EditClosure = std::function<EditResult(double alpha)>;
using PropertyProbe = std::function<std::array<double, kNumProperties>(const EditResult&)>;

/// Applies the edit at the requested strength and moves the strength halfway to the identity value
/// while any probed property deviates from `original` by more than twice the population std. After
/// max_halvings failed reductions the identity edit is returned, flagged as exhausted.
inline EditResult constrain(const EditClosure& apply, double requested_alpha, double identity_alpha,
                            const PopulationStats& stats, const std::array<double, kNumProperties>& original,
                            const PropertyProbe& probe, std::size_t max_halvings = 6) {
  double alpha = requested_alpha;
  for (std::size_t k = 0; k <= max_halvings; ++k) {
    EditResult r = apply(alpha);
    const auto props = probe(r);
    bool ok = true;
    for (std::size_t i = 0; i < kNumProperties; ++i)
      if (std::abs(props[i] - original[i]) > 2.0 * stats.std[i]) ok = false;
    if (ok) {
      r.requested_alpha = requested_alpha;
      r.applied_alpha = alpha;
      r.constraint_triggered = k > 0;
      return r;
    }
    alpha = identity_alpha + 0.5 * (alpha - identity_alpha);
  }
  warn("edit still exceeds the population bound after " + std::to_string(max_halvings) +
       " reductions; returning the identity edit");
  EditResult r = apply(identity_alpha);
  r.requested_alpha = requested_alpha;
  r.applied_alpha = identity_alpha;
  r.constraint_triggered = true;
  r.constraint_exhausted = true;
  return r;
}

/// Image-space bounding box of mask cells at or above `threshold` (relative to the mask maximum).
inline PatchRegion mask_region(const Tensor& mask, std::size_t factor, double threshold = 0.5) {
  double mx = 0.0;
  for (double v : mask.values()) mx = std::max(mx, v);
  if (mx <= 0.0) return PatchRegion::full(mask.height() * factor, mask.width() * factor);
  int x0 = static_cast<int>(mask.width()), y0 = static_cast<int>(mask.height()), x1 = 0, y1 = 0;
  for (std::size_t y = 0; y < mask.height(); ++y)
    for (std::size_t x = 0; x < mask.width(); ++x)
      if (mask.at(0, y, x) >= threshold * mx) {
        x0 = std::min(x0, static_cast<int>(x));
        y0 = std::min(y0, static_cast<int>(y));
        x1 = std::max(x1, static_cast<int>(x) + 1);
        y1 = std::max(y1, static_cast<int>(y) + 1);
      }
  const int f = static_cast<int>(factor);
  return {x0 * f, y0 * f, x1 * f, y1 * f};
}

struct EditorConfig {
  ContrastPivot pivot = ContrastPivot::kGammaProjected;
  std::size_t max_halvings = 6;
  double region_threshold = 0.5;
};

/// Automated edit pipeline over a frozen backbone and a trained LLFR.
class EditPipeline {
 public:
  EditPipeline(const Backbone& backbone, const Llfr& llfr, PopulationStats stats, EditorConfig cfg = {})
      : bb_(backbone), llfr_(llfr), stats_(std::move(stats)), cfg_(cfg),
        gamma_(compute_gamma(backbone.approximate_decoder_matrix().matrix)) {}

  EditPipeline(const Backbone& backbone, const Llfr& llfr, PopulationStats stats, GammaScale gamma,
               EditorConfig cfg = {})
      : bb_(backbone), llfr_(llfr), stats_(std::move(stats)), cfg_(cfg), gamma_(std::move(gamma)) {}

  const GammaScale& gamma() const noexcept { return gamma_; }
  const PopulationStats& stats() const noexcept { return stats_; }
  const Backbone& backbone() const noexcept { return bb_; }

  /// decode(denoise(noise(encode(img)))) with the unedited prompt.
  ImageTensor reconstruct(const ImageTensor& img, const Prompt& prompt) const {
    return bb_.decode(bb_.denoise(bb_.noise_latent(bb_.encode(img)), prompt));
  }

  EditResult run(const ImageTensor& img, const Prompt& prompt, const SaliencyMap& saliency,
                 const EditSpec& spec) const {
    require(saliency.height() == img.height() && saliency.width() == img.width(), ErrorCode::kDimsMismatch,
            "saliency map must match the image");
    const Inversion inv = bb_.invert_and_extract(img, prompt);
    RegionSelection sel;
    if (spec.mask()) {
      require(spec.mask()->same_grid(inv.latent.tensor()), ErrorCode::kDimsMismatch, "mask must be on the latent grid");
      sel = select_region(inv.attention, *spec.mask());
      sel.mask = *spec.mask();
    } else {
      sel = select_region(inv.attention, saliency);
    }
    const PatchRegion region = mask_region(sel.mask, bb_.config().downsample_factor, cfg_.region_threshold);
    const auto original = llfr_.forward(inv.features.low_level(), region);
    const double identity = identity_strength(spec.kind());

    EditClosure apply;
    if (spec.kind() == EditKind::kColorChange) {
      const std::string& color = *spec.target_color();
      require(bb_.in_vocabulary(color), ErrorCode::kInvalidArgument, "color '" + color + "' is not in the vocabulary");
      apply = [&, color](double a) { return color_step(inv, prompt, sel, color, a); };
    } else {
      apply = [&, kind = spec.kind()](double a) { return photometric_step(inv, prompt, sel, kind, a); };
    }
    auto probe = [&](const EditResult& r) {
      return llfr_.forward(bb_.invert_and_extract(r.edited_image, prompt).features.low_level(), region);
    };
    EditResult out = constrain(apply, spec.alpha(), identity, stats_, original, probe, cfg_.max_halvings);
    out.region = region;
    return out;
  }

  /// Inserts the color word before the selected token and injects intensity * M at its slot.
  EditResult color_edit(const ImageTensor& img, const Prompt& prompt, const std::string& color, const Tensor& mask,
                        std::size_t token_index, double intensity) const {
    require(bb_.in_vocabulary(color), ErrorCode::kInvalidArgument, "color '" + color + "' is not in the vocabulary");
    const Inversion inv = bb_.invert_and_extract(img, prompt);
    return color_step(inv, prompt, RegionSelection{mask, token_index}, color, intensity);
  }

 private:
  EditResult photometric_step(const Inversion& inv, const Prompt& prompt, const RegionSelection& sel, EditKind kind,
                              double alpha) const {
    const LatentTensor ze = kind == EditKind::kContrastIncrease
                                ? contrast_edit(inv.latent, sel.mask, alpha, gamma_, cfg_.pivot)
                                : brightness_edit(inv.latent, sel.mask, alpha, gamma_);
    // The empty token carries the mask with a weight that vanishes at the identity strength.
    const double kappa = std::min(1.0, std::abs(alpha - identity_strength(kind)));
    Tensor injected = sel.mask;
    for (auto& v : injected.values()) v *= kappa;
    EditResult r;
    r.kind = kind;
    r.prompt = prompt;
    r.edited_prompt = token_insert_for_photometric(prompt, sel.token_index);
    r.edited_latent =
        bb_.denoise(bb_.noise_latent(ze), r.edited_prompt, AttentionInjection{std::move(injected), sel.token_index});
    r.edited_image = bb_.decode(r.edited_latent);
    r.selected_token_index = sel.token_index;
    r.mask = sel.mask;
    return r;
  }

  EditResult color_step(const Inversion& inv, const Prompt& prompt, const RegionSelection& sel,
                        const std::string& color, double intensity) const {
    Tensor injected = sel.mask;
    for (auto& v : injected.values()) v *= intensity;
    EditResult r;
    r.kind = EditKind::kColorChange;
    r.prompt = prompt;
    r.edited_prompt = token_insert(prompt, sel.token_index, color);
    r.edited_latent =
        bb_.denoise(inv.noisy_latent, r.edited_prompt, AttentionInjection{std::move(injected), sel.token_index});
    r.edited_image = bb_.decode(r.edited_latent);
    r.selected_token_index = sel.token_index;
    r.mask = sel.mask;
    r.requested_alpha = r.applied_alpha = intensity;
    return r;
  }

  const Backbone& bb_;
  const Llfr& llfr_;
  PopulationStats stats_;
  EditorConfig cfg_;
  GammaScale gamma_;
};

inline std::string join_prompt(const Prompt& p) {
  std::string out;
  for (const auto& t : p) out += (out.empty() ? "" : " ") + t;
  return out;
}

/// Writes edited.png, mask.png, AUGSAL1 tensors and manifest.json into `dir`.
inline void save_edit_result(const EditResult& r, const std::filesystem::path& dir, const Json& extra = Json::object()) {
  std::filesystem::create_directories(dir);
  save_png(r.edited_image, dir / "edited.png");
  write_tensor(r.edited_image, dir / "edited_image.aug");
  write_tensor(r.edited_latent, dir / "edited_latent.aug");
  write_tensor(r.mask, dir / "mask.aug");
  save_gray16_png(upsample_mask(r.mask, r.edited_image.height(), r.edited_image.width()), dir / "mask.png");
  Json m;
  m["kind"] = to_string(r.kind);
  m["requested_alpha"] = r.requested_alpha;
  m["applied_alpha"] = r.applied_alpha;
  m["selected_token_index"] = r.selected_token_index;
  m["selected_token"] = r.prompt.empty() ? "" : r.prompt.at(r.selected_token_index);
  m["prompt"] = join_prompt(r.prompt);
  m["edited_prompt"] = join_prompt(r.edited_prompt);
  m["region"] = {r.region.x0, r.region.y0, r.region.x1, r.region.y1};
  m["constraint_triggered"] = r.constraint_triggered;
  m["constraint_exhausted"] = r.constraint_exhausted;
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_json(m, dir / "manifest.json");
}

}  // namespace augsal
