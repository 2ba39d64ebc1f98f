#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "augsal/error.hpp"

namespace augsal {

/// Dense channel-major array of shape (channels, height, width).
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0)
      : channels_(channels), height_(height), width_(width), data_(channels * height * width, fill) {}

  Tensor(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> data)
      : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
    require(data_.size() == channels_ * height_ * width_, ErrorCode::kDimsMismatch,
            "tensor payload size does not match shape");
  }

  std::size_t channels() const noexcept { return channels_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t plane() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * height_ + y) * width_ + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data_[(c * height_ + y) * width_ + x]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  std::span<double> channel(std::size_t c) { return {data_.data() + c * plane(), plane()}; }
  std::span<const double> channel(std::size_t c) const { return {data_.data() + c * plane(), plane()}; }

  bool same_shape(const Tensor& other) const noexcept {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }
  bool same_grid(const Tensor& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline void require_finite(const Tensor& t, const char* what) {
  for (double v : t.values())
    require(std::isfinite(v), ErrorCode::kNonFinite, std::string(what) + " contains NaN or Inf");
}

inline void require_range(const Tensor& t, double lo, double hi, const char* what) {
  for (double v : t.values())
    require(v >= lo && v <= hi, ErrorCode::kRange,
            std::string(what) + " value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                std::to_string(hi) + "]");
}

inline void require_nonempty_grid(const Tensor& t, const char* what) {
  require(t.height() > 0 && t.width() > 0, ErrorCode::kDimsMismatch, std::string(what) + " has an empty grid");
}

}  // namespace detail

inline void validate_image(const Tensor& t) {
  require(t.channels() == 3, ErrorCode::kDimsMismatch, "image must have 3 channels (R, G, B)");
  detail::require_nonempty_grid(t, "image");
  detail::require_finite(t, "image");
  detail::require_range(t, 0.0, 1.0, "image");
}

inline void validate_latent(const Tensor& t) {
  require(t.channels() >= 1, ErrorCode::kDimsMismatch, "latent must have at least one channel");
  detail::require_nonempty_grid(t, "latent");
  detail::require_finite(t, "latent");
}

inline void validate_saliency(const Tensor& t) {
  require(t.channels() == 1, ErrorCode::kDimsMismatch, "saliency map must have one channel");
  detail::require_nonempty_grid(t, "saliency map");
  detail::require_finite(t, "saliency map");
  detail::require_range(t, 0.0, 1.0, "saliency map");
}

inline void validate_mask(const Tensor& t) {
  require(t.channels() == 1, ErrorCode::kDimsMismatch, "mask must have one channel");
  detail::require_nonempty_grid(t, "mask");
  detail::require_finite(t, "mask");
  detail::require_range(t, 0.0, 1.0, "mask");
}

/// H x W x 3 image, channel order R, G, B, values in [0, 1].
class ImageTensor {
 public:
  explicit ImageTensor(Tensor data) : data_(std::move(data)) { validate_image(data_); }

  std::size_t height() const noexcept { return data_.height(); }
  std::size_t width() const noexcept { return data_.width(); }
  std::size_t size() const noexcept { return data_.size(); }
  double operator[](std::size_t i) const { return data_[i]; }
  std::span<const double> values() const noexcept { return data_.values(); }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data_.at(c, y, x); }
  const Tensor& tensor() const noexcept { return data_; }

  friend bool operator==(const ImageTensor& a, const ImageTensor& b) { return a.data_ == b.data_; }

 private:
  Tensor data_;
};

/// Spatially downsampled latent; any channel count, finite values.
class LatentTensor {
 public:
  explicit LatentTensor(Tensor data) : data_(std::move(data)) { validate_latent(data_); }

  std::size_t channels() const noexcept { return data_.channels(); }
  std::size_t height() const noexcept { return data_.height(); }
  std::size_t width() const noexcept { return data_.width(); }
  std::size_t size() const noexcept { return data_.size(); }
  double operator[](std::size_t i) const { return data_[i]; }
  std::span<const double> values() const noexcept { return data_.values(); }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data_.at(c, y, x); }
  const Tensor& tensor() const noexcept { return data_; }

  friend bool operator==(const LatentTensor& a, const LatentTensor& b) { return a.data_ == b.data_; }

 private:
  Tensor data_;
};

/// Nonnegative single-channel map with max value at most 1.
class SaliencyMap {
 public:
  explicit SaliencyMap(Tensor data) : data_(std::move(data)) { validate_saliency(data_); }

  std::size_t height() const noexcept { return data_.height(); }
  std::size_t width() const noexcept { return data_.width(); }
  std::size_t size() const noexcept { return data_.size(); }
  double at(std::size_t y, std::size_t x) const { return data_.at(0, y, x); }
  double operator[](std::size_t i) const { return data_[i]; }
  std::span<const double> values() const noexcept { return data_.values(); }
  const Tensor& tensor() const noexcept { return data_; }

  friend bool operator==(const SaliencyMap& a, const SaliencyMap& b) { return a.data_ == b.data_; }

 private:
  Tensor data_;
};

/// Half-open pixel box [x0, x1) x [y0, y1).
struct PatchRegion {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  PatchRegion() = default;
  PatchRegion(int x0_, int y0_, int x1_, int y1_) : x0(x0_), y0(y0_), x1(x1_), y1(y1_) {
    require(x0 >= 0 && y0 >= 0, ErrorCode::kRange, "patch origin must be nonnegative");
    require(x0 < x1 && y0 < y1, ErrorCode::kEmptyRegion, "patch region is empty");
  }

  static PatchRegion full(std::size_t height, std::size_t width) {
    return {0, 0, static_cast<int>(width), static_cast<int>(height)};
  }

  int width() const noexcept { return x1 - x0; }
  int height() const noexcept { return y1 - y0; }
  std::size_t area() const noexcept { return static_cast<std::size_t>(width()) * static_cast<std::size_t>(height()); }

  bool fits(std::size_t height_px, std::size_t width_px) const noexcept {
    return x1 <= static_cast<int>(width_px) && y1 <= static_cast<int>(height_px);
  }

  friend bool operator==(const PatchRegion&, const PatchRegion&) = default;
};

inline void require_fits(const PatchRegion& r, std::size_t height, std::size_t width) {
  require(r.fits(height, width), ErrorCode::kRange, "patch region exceeds image bounds");
}

struct FixationPoint {
  int x = 0;
  int y = 0;
  friend bool operator==(const FixationPoint&, const FixationPoint&) = default;
};

/// Eye-fixation coordinates on an image of known size.
class FixationSet {
 public:
  FixationSet(std::size_t height, std::size_t width, std::vector<FixationPoint> points,
              std::vector<int> observers = {})
      : height_(height), width_(width), points_(std::move(points)), observers_(std::move(observers)) {
    require(observers_.empty() || observers_.size() == points_.size(), ErrorCode::kLengthMismatch,
            "observer ids must be absent or one per fixation");
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto& p = points_[i];
      require(p.x >= 0 && p.y >= 0 && p.x < static_cast<int>(width_) && p.y < static_cast<int>(height_),
              ErrorCode::kRange,
              "fixation " + std::to_string(i) + " (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                  ") outside image bounds");
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  const std::vector<FixationPoint>& points() const noexcept { return points_; }
  const std::vector<int>& observers() const noexcept { return observers_; }
  bool empty() const noexcept { return points_.empty(); }

  /// Binary raster, one where at least one fixation landed.
  std::vector<unsigned char> raster() const {
    std::vector<unsigned char> out(height_ * width_, 0);
    for (const auto& p : points_) out[static_cast<std::size_t>(p.y) * width_ + static_cast<std::size_t>(p.x)] = 1;
    return out;
  }

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<FixationPoint> points_;
  std::vector<int> observers_;
};

/// Paired low-level and high-level feature maps on the latent grid.
class FeatureBundle {
 public:
  FeatureBundle(Tensor low_level, Tensor high_level) : low_(std::move(low_level)), high_(std::move(high_level)) {
    require(low_.same_grid(high_), ErrorCode::kDimsMismatch, "feature maps must share spatial dims");
    detail::require_nonempty_grid(low_, "feature bundle");
    detail::require_finite(low_, "low-level features");
    detail::require_finite(high_, "high-level features");
  }

  const Tensor& low_level() const noexcept { return low_; }
  const Tensor& high_level() const noexcept { return high_; }
  std::size_t height() const noexcept { return low_.height(); }
  std::size_t width() const noexcept { return low_.width(); }

 private:
  Tensor low_;
  Tensor high_;
};

enum Property : std::size_t {
  kMeanR = 0,
  kMeanG,
  kMeanB,
  kBrightness,
  kLocalContrast,
  kGlobalContrast,
  kNumProperties
};

inline const char* property_name(std::size_t p) {
  static constexpr std::array<const char*, kNumProperties> names = {"mu_r", "mu_g", "mu_b",
                                                                     "mu_br", "c_local", "c_global"};
  return names.at(p);
}

/// (mu_r, mu_g, mu_b, mu_br, c_local, c_global).
class PropertyVector {
 public:
  PropertyVector() = default;
  explicit PropertyVector(const std::array<double, kNumProperties>& values) : values_(values) {
    for (std::size_t i = 0; i < kNumProperties; ++i)
      require(std::isfinite(values_[i]), ErrorCode::kNonFinite, std::string(property_name(i)) + " not finite");
    for (std::size_t i = kMeanR; i <= kBrightness; ++i)
      require(values_[i] >= 0.0 && values_[i] <= 1.0, ErrorCode::kRange,
              std::string(property_name(i)) + " outside [0, 1]");
    require(values_[kLocalContrast] >= 0.0 && values_[kGlobalContrast] >= 0.0, ErrorCode::kRange,
            "contrasts must be nonnegative");
  }

  double operator[](std::size_t i) const { return values_.at(i); }
  const std::array<double, kNumProperties>& values() const noexcept { return values_; }

  friend bool operator==(const PropertyVector&, const PropertyVector&) = default;

 private:
  std::array<double, kNumProperties> values_{};
};

/// Per-token cross-attention maps on the latent grid.
class AttentionStack {
 public:
  AttentionStack(std::vector<Tensor> maps, std::vector<std::string> tokens)
      : maps_(std::move(maps)), tokens_(std::move(tokens)) {
    require(maps_.size() == tokens_.size(), ErrorCode::kLengthMismatch,
            std::to_string(maps_.size()) + " attention maps for " + std::to_string(tokens_.size()) + " tokens");
    require(!maps_.empty(), ErrorCode::kLengthMismatch, "attention stack must hold at least one map");
    for (const auto& m : maps_) {
      require(m.channels() == 1 && m.same_grid(maps_.front()), ErrorCode::kDimsMismatch,
              "attention maps must be single-channel on a common grid");
      detail::require_finite(m, "attention map");
      for (double v : m.values()) require(v >= 0.0, ErrorCode::kRange, "attention values must be nonnegative");
    }
  }

  std::size_t size() const noexcept { return maps_.size(); }
  const Tensor& map(std::size_t i) const { return maps_.at(i); }
  const std::string& token(std::size_t i) const { return tokens_.at(i); }
  const std::vector<Tensor>& maps() const noexcept { return maps_; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<Tensor> maps_;
  std::vector<std::string> tokens_;
};

enum class EditKind { kContrastIncrease, kBrightnessIncrease, kColorChange };

inline const char* to_string(EditKind kind) {
  switch (kind) {
    case EditKind::kContrastIncrease: return "contrast_increase";
    case EditKind::kBrightnessIncrease: return "brightness_increase";
    case EditKind::kColorChange: return "color_change";
  }
  return "unknown";
}

inline EditKind parse_edit_kind(const std::string& s) {
  if (s == "contrast" || s == "contrast_increase") return EditKind::kContrastIncrease;
  if (s == "brightness" || s == "brightness_increase") return EditKind::kBrightnessIncrease;
  if (s == "color" || s == "color_change") return EditKind::kColorChange;
  fail(ErrorCode::kInvalidArgument, "unknown edit kind '" + s + "'");
}

/// Strength value at which an edit of this kind is a no-op.
inline double identity_strength(EditKind kind) { return kind == EditKind::kContrastIncrease ? 1.0 : 0.0; }

/// Edit request. The mask is optional until the pipeline resolves it from attention and saliency.
class EditSpec {
 public:
  EditSpec(EditKind kind, double alpha, std::optional<std::string> target_color = std::nullopt,
           std::optional<Tensor> mask = std::nullopt, bool augmentation_mode = false)
      : kind_(kind), alpha_(alpha), color_(std::move(target_color)), mask_(std::move(mask)) {
    require(std::isfinite(alpha_), ErrorCode::kNonFinite, "edit strength must be finite");
    // alpha == identity value is allowed so identity edits can be requested explicitly.
    require(alpha_ >= 0.0, ErrorCode::kRange, "edit strength must be nonnegative");
    require(kind_ != EditKind::kContrastIncrease || alpha_ > 0.0, ErrorCode::kRange,
            "contrast strength must be positive");
    if (augmentation_mode && kind_ == EditKind::kContrastIncrease)
      require(alpha_ >= 1.0, ErrorCode::kRange, "augmentation uses saliency-increasing contrast edits only");
    require(color_.has_value() == (kind_ == EditKind::kColorChange), ErrorCode::kInvalidArgument,
            "target color is required for color edits and only for them");
    if (mask_) validate_mask(*mask_);
  }

  EditKind kind() const noexcept { return kind_; }
  double alpha() const noexcept { return alpha_; }
  const std::optional<std::string>& target_color() const noexcept { return color_; }
  const std::optional<Tensor>& mask() const noexcept { return mask_; }

 private:
  EditKind kind_;
  double alpha_;
  std::optional<std::string> color_;
  std::optional<Tensor> mask_;
};

}  // namespace augsal
