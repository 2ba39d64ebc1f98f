#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "augsal/editor.hpp"
#include "augsal/error.hpp"
#include "augsal/tensor.hpp"

namespace augsal {

/// What the edited image is trained against.
enum class AugmentTarget { kBoosted, kOriginal, kConsistency };

/// Which prediction the edit loss treats as the fixed target.
enum class EditLossRoles { kOriginalTarget, kEditedTarget };

struct AugmentConfig {
  double p = 0.5;
  std::vector<EditKind> edit_kinds{EditKind::kContrastIncrease, EditKind::kBrightnessIncrease, EditKind::kColorChange};
  // Indexed by EditKind.
  std::array<std::pair<double, double>, 3> alpha_range{{{1.2, 2.0}, {0.1, 0.9}, {0.5, 1.5}}};
  std::vector<std::string> color_palette{"red", "green", "blue", "yellow"};
  double boost = 0.15;
  AugmentTarget target = AugmentTarget::kBoosted;
  EditLossRoles roles = EditLossRoles::kOriginalTarget;
  double edit_loss_weight = 1.0;
  std::uint64_t seed = 0;

  std::pair<double, double> range(EditKind k) const { return alpha_range[static_cast<std::size_t>(k)]; }

  void validate() const {
    require(p >= 0.0 && p <= 1.0, ErrorCode::kConfig, "augmentor.p must be in [0, 1]");
    require(!edit_kinds.empty(), ErrorCode::kConfig, "augmentor.edit_kinds must be nonempty");
    require(boost >= 0.0 && std::isfinite(boost), ErrorCode::kConfig, "augmentor.boost must be >= 0");
    require(edit_loss_weight >= 0.0, ErrorCode::kConfig, "augmentor.edit_loss_weight must be >= 0");
    for (std::size_t k = 0; k < 3; ++k) {
      const auto [lo, hi] = alpha_range[k];
      require(std::isfinite(lo) && std::isfinite(hi) && lo <= hi, ErrorCode::kConfig,
              std::string("augmentor.alpha_range.") + to_string(static_cast<EditKind>(k)) + " must satisfy lo <= hi");
      require(lo >= identity_strength(static_cast<EditKind>(k)), ErrorCode::kConfig,
              std::string("augmentor.alpha_range.") + to_string(static_cast<EditKind>(k)) +
                  " must not decrease saliency");
    }
    if (std::find(edit_kinds.begin(), edit_kinds.end(), EditKind::kColorChange) != edit_kinds.end())
      require(!color_palette.empty(), ErrorCode::kConfig, "augmentor.color_palette must be nonempty for color edits");
  }
};

struct AugmentDecision {
  bool original = true;
  EditKind kind = EditKind::kBrightnessIncrease;
  double alpha = 0.0;
  std::optional<std::string> color;
};

/// Original with probability p; otherwise a uniformly chosen kind with a uniform strength.
inline AugmentDecision sample_step(const AugmentConfig& cfg, std::mt19937_64& rng) {
  AugmentDecision d;
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.p) return d;
  d.original = false;
  d.kind = cfg.edit_kinds[std::uniform_int_distribution<std::size_t>(0, cfg.edit_kinds.size() - 1)(rng)];
  const auto [lo, hi] = cfg.range(d.kind);
  d.alpha = lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
  if (d.kind == EditKind::kColorChange)
    d.color = cfg.color_palette[std::uniform_int_distribution<std::size_t>(0, cfg.color_palette.size() - 1)(rng)];
  return d;
}

struct AugmentedSample {
  ImageTensor input;
  Tensor target;
  bool edited = false;
  std::optional<Tensor> mask_image;  // edit mask at image resolution
  std::optional<EditResult> edit;
};

/// S raised by boost * M_img and clamped to [0, 1].
inline Tensor boosted_target(const Tensor& s, const Tensor& mask_image, double boost) {
  require(s.same_shape(mask_image), ErrorCode::kDimsMismatch, "mask must match the saliency map");
  Tensor t = s;
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::clamp(s[i] + boost * mask_image[i], 0.0, 1.0);
  return t;
}

/// Training pair for one sampler decision; nullopt (with a warning) if the edit pipeline fails.
inline std::optional<AugmentedSample> augmented_batch(const ImageTensor& image, const SaliencyMap& s,
                                                      const Prompt& prompt, const AugmentDecision& decision,
                                                      const EditPipeline& pipeline, const AugmentConfig& cfg) {
  if (decision.original) return AugmentedSample{image, s.tensor(), false, std::nullopt, std::nullopt};
  try {
    const EditSpec spec(decision.kind, decision.alpha, decision.color, std::nullopt, true);
    EditResult r = pipeline.run(image, prompt, s, spec);
    Tensor m_img = upsample_mask(r.mask, image.height(), image.width());
    Tensor target = cfg.target == AugmentTarget::kBoosted ? boosted_target(s.tensor(), m_img, cfg.boost) : s.tensor();
    ImageTensor edited = r.edited_image;
    return AugmentedSample{std::move(edited), std::move(target), true, std::move(m_img), std::move(r)};
  } catch (const Error& e) {
    warn(std::string("skipping augmented sample: ") + e.what());
    return std::nullopt;
  }
}

}  // namespace augsal
