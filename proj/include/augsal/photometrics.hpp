#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "augsal/error.hpp"
#include "augsal/tensor.hpp"

namespace augsal {

/// ITU-R BT.601 luma.
inline double luma(double r, double g, double b) {
  // Rounding can push white a ulp past 1.
  return std::min(1.0, 0.299 * r + 0.587 * g + 0.114 * b);
}

inline double luma_at(const ImageTensor& img, std::size_t y, std::size_t x) {
  return luma(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
}

inline std::array<double, 3> mean_rgb(const ImageTensor& img, const PatchRegion& region) {
  require_fits(region, img.height(), img.width());
  std::array<double, 3> sum{};
  for (int y = region.y0; y < region.y1; ++y)
    for (int x = region.x0; x < region.x1; ++x)
      for (std::size_t c = 0; c < 3; ++c) sum[c] += img.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  const double n = static_cast<double>(region.area());
  return {sum[0] / n, sum[1] / n, sum[2] / n};
}

inline double brightness(const ImageTensor& img, const PatchRegion& region) {
  require_fits(region, img.height(), img.width());
  double sum = 0.0;
  for (int y = region.y0; y < region.y1; ++y)
    for (int x = region.x0; x < region.x1; ++x)
      sum += luma_at(img, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  return sum / static_cast<double>(region.area());
}

/// Population standard deviation of luma inside the region.
inline double local_contrast(const ImageTensor& img, const PatchRegion& region) {
  const double mu = brightness(img, region);
  double ss = 0.0;
  for (int y = region.y0; y < region.y1; ++y)
    for (int x = region.x0; x < region.x1; ++x) {
      const double d = luma_at(img, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) - mu;
      ss += d * d;
    }
  return std::sqrt(ss / static_cast<double>(region.area()));
}

/// Whole-image luma standard deviation.
inline double global_contrast(const ImageTensor& img) {
  return local_contrast(img, PatchRegion::full(img.height(), img.width()));
}

inline PropertyVector property_vector(const ImageTensor& img, const PatchRegion& region) {
  const auto rgb = mean_rgb(img, region);
  return PropertyVector({rgb[0], rgb[1], rgb[2], brightness(img, region), local_contrast(img, region),
                         global_contrast(img)});
}

struct PopulationStats {
  PropertyVector mean;
  PropertyVector std;
};

/// Random box with each side in [min_frac, max_frac] of the image side, position uniform.
inline PatchRegion sample_patch(std::size_t height, std::size_t width, double min_frac, double max_frac,
                                std::mt19937_64& rng) {
  require(min_frac > 0.0 && min_frac <= max_frac && max_frac <= 1.0, ErrorCode::kInvalidArgument,
          "patch fractions must satisfy 0 < min <= max <= 1");
  auto side_bounds = [&](std::size_t side) {
    const auto s = static_cast<double>(side);
    const int lo = std::max(1, static_cast<int>(std::ceil(min_frac * s - 1e-9)));
    const int hi = static_cast<int>(std::floor(max_frac * s + 1e-9));
    require(lo <= hi, ErrorCode::kInvalidArgument,
            "no integer side length in [" + std::to_string(min_frac) + ", " + std::to_string(max_frac) + "] x " +
                std::to_string(side));
    return std::pair{lo, hi};
  };
  const auto [wlo, whi] = side_bounds(width);
  const auto [hlo, hhi] = side_bounds(height);
  const int pw = std::uniform_int_distribution<int>(wlo, whi)(rng);
  const int ph = std::uniform_int_distribution<int>(hlo, hhi)(rng);
  const int x0 = std::uniform_int_distribution<int>(0, static_cast<int>(width) - pw)(rng);
  const int y0 = std::uniform_int_distribution<int>(0, static_cast<int>(height) - ph)(rng);
  return {x0, y0, x0 + pw, y0 + ph};
}

inline PatchRegion sample_patch(std::size_t height, std::size_t width, double min_frac, double max_frac,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_patch(height, width, min_frac, max_frac, rng);
}

/// Componentwise mean and population std of property vectors over sampled patches.
template <typename ImageRange>
PopulationStats population_stats(const ImageRange& images, int patches_per_image, std::uint64_t seed,
                                 double min_frac = 0.2, double max_frac = 0.5) {
  require(patches_per_image >= 1, ErrorCode::kInvalidArgument, "need at least one patch per image");
  std::mt19937_64 rng(seed);
  std::vector<std::array<double, kNumProperties>> rows;
  for (const ImageTensor& img : images)
    for (int k = 0; k < patches_per_image; ++k)
      rows.push_back(property_vector(img, sample_patch(img.height(), img.width(), min_frac, max_frac, rng)).values());
  require(!rows.empty(), ErrorCode::kData, "population statistics need a nonempty dataset");

  std::array<double, kNumProperties> mean{}, var{};
  for (const auto& r : rows)
    for (std::size_t i = 0; i < kNumProperties; ++i) mean[i] += r[i];
  for (auto& m : mean) m /= static_cast<double>(rows.size());
  for (const auto& r : rows)
    for (std::size_t i = 0; i < kNumProperties; ++i) var[i] += (r[i] - mean[i]) * (r[i] - mean[i]);
  std::array<double, kNumProperties> sd{};
  for (std::size_t i = 0; i < kNumProperties; ++i) sd[i] = std::sqrt(var[i] / static_cast<double>(rows.size()));
  return {PropertyVector(mean), PropertyVector(sd)};
}

}  // namespace augsal
