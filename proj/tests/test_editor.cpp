#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_support.hpp"

using namespace augsal;
using testing_support::small_backbone;
using testing_support::WarningCapture;

namespace {

Tensor random_tensor(std::size_t c, std::size_t h, std::size_t w, std::mt19937_64& rng) {
  Tensor t(c, h, w);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

Tensor random_mask(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  Tensor m(1, h, w);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : m.values()) v = u(rng) < 0.4 ? 0.0 : u(rng);
  return m;
}

GammaScale random_gamma(std::size_t c, std::mt19937_64& rng) {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(c), 3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
  return compute_gamma(a);
}

PopulationStats stats_with_std(const std::array<double, kNumProperties>& sd) {
  PopulationStats s;
  s.mean = PropertyVector(std::array<double, kNumProperties>{0.5, 0.5, 0.5, 0.5, 0.1, 0.1});
  s.std = PropertyVector(sd);
  return s;
}

}  // namespace

TEST(Editor, GammaMapsToUnitColourShift) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::MatrixXd a(4, 3);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
    const GammaScale g = compute_gamma(a);
    ASSERT_EQ(g.size(), 4u);
    for (Eigen::Index k = 0; k < 3; ++k) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < 4; ++c) s += g[static_cast<std::size_t>(c)] * a(c, k);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Editor, GammaOfPaddedIdentity) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(4, 3);
  a.topRows(3) = Eigen::Matrix3d::Identity();
  const GammaScale g = compute_gamma(a);
  EXPECT_EQ(g.gamma, (std::vector<double>{1.0, 1.0, 1.0, 0.0}));
}

TEST(Editor, GammaRejectsRankDeficientMatrices) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(4, 3);
  a(0, 0) = 1.0;
  a(1, 1) = 1.0;
  a(2, 0) = 2.0;
  EXPECT_ERROR_CODE(compute_gamma(a), ErrorCode::kRankDeficient);
  EXPECT_ERROR_CODE(compute_gamma(Eigen::MatrixXd::Ones(2, 3)), ErrorCode::kDimsMismatch);
}

TEST(Editor, IdentityStrengthsReturnTheInputExactly) {
  std::mt19937_64 rng(2);
  const LatentTensor z(random_tensor(4, 6, 6, rng));
  const Tensor mask = random_mask(6, 6, rng);
  const GammaScale g = random_gamma(4, rng);
  EXPECT_TRUE(contrast_edit(z, mask, 1.0, g).tensor() == z.tensor());
  EXPECT_TRUE(brightness_edit(z, mask, 0.0, g).tensor() == z.tensor());
  const Tensor empty(1, 6, 6, 0.0);
  EXPECT_TRUE(brightness_edit(z, empty, 0.7, g).tensor() == z.tensor());
  WarningCapture warnings;
  EXPECT_TRUE(contrast_edit(z, empty, 1.7, g).tensor() == z.tensor());
  EXPECT_EQ(warnings.messages.size(), 1u);
}

TEST(Editor, EditsLeaveCellsOutsideTheMaskUntouched) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const LatentTensor z(random_tensor(4, 7, 5, rng));
    const Tensor mask = random_mask(7, 5, rng);
    const GammaScale g = random_gamma(4, rng);
    const LatentTensor b = brightness_edit(z, mask, 0.6, g);
    const LatentTensor c = contrast_edit(z, mask, 1.8, g, trial % 2 ? ContrastPivot::kChannelMean
                                                                    : ContrastPivot::kGammaProjected);
    for (std::size_t ch = 0; ch < 4; ++ch)
      for (std::size_t p = 0; p < mask.size(); ++p)
        if (mask[p] == 0.0) {
          EXPECT_EQ(b[ch * mask.size() + p], z[ch * mask.size() + p]);
          EXPECT_EQ(c[ch * mask.size() + p], z[ch * mask.size() + p]);
        }
  }
}

TEST(Editor, BrightnessShiftsLinearlyDecodedColourByAlphaTimesMask) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    Eigen::MatrixXd a(4, 3);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
    const GammaScale g = compute_gamma(a);
    const LatentTensor z(random_tensor(4, 5, 5, rng));
    const Tensor mask = random_mask(5, 5, rng);
    const double alpha = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
    const LatentTensor ze = brightness_edit(z, mask, alpha, g);
    for (std::size_t p = 0; p < mask.size(); ++p)
      for (Eigen::Index k = 0; k < 3; ++k) {
        double before = 0.0, after = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
          before += z[c * 25 + p] * a(static_cast<Eigen::Index>(c), k);
          after += ze[c * 25 + p] * a(static_cast<Eigen::Index>(c), k);
        }
        EXPECT_NEAR(after - before, alpha * mask[p], 1e-9);
      }
  }
}

TEST(Editor, ContrastScalesDeviationFromPivot) {
  std::mt19937_64 rng(5);
  const LatentTensor z(random_tensor(4, 4, 4, rng));
  Tensor mask(1, 4, 4, 0.0);
  for (std::size_t p = 0; p < 8; ++p) mask[p] = 1.0;
  const GammaScale g = random_gamma(4, rng);
  const double alpha = 1.6;
  std::array<double, 4> mu{};
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t p = 0; p < 8; ++p) mu[c] += z[c * 16 + p] / 8.0;
  }
  const LatentTensor mean_pivot = contrast_edit(z, mask, alpha, g, ContrastPivot::kChannelMean);
  double dot = 0.0, gg = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    dot += mu[c] * g[c];
    gg += g[c] * g[c];
  }
  const LatentTensor projected = contrast_edit(z, mask, alpha, g, ContrastPivot::kGammaProjected);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t p = 0; p < 8; ++p) {
      EXPECT_NEAR(mean_pivot[c * 16 + p], mu[c] + alpha * (z[c * 16 + p] - mu[c]), 1e-12);
      const double pivot = dot / gg * g[c];
      EXPECT_NEAR(projected[c * 16 + p], pivot + alpha * (z[c * 16 + p] - pivot), 1e-12);
    }
}

TEST(Editor, StrengthValidation) {
  std::mt19937_64 rng(6);
  const LatentTensor z(random_tensor(4, 4, 4, rng));
  const Tensor mask = random_mask(4, 4, rng);
  const GammaScale g = random_gamma(4, rng);
  EXPECT_ERROR_CODE(contrast_edit(z, mask, 0.0, g), ErrorCode::kRange);
  EXPECT_ERROR_CODE(brightness_edit(z, mask, -0.1, g), ErrorCode::kRange);
  EXPECT_ERROR_CODE(brightness_edit(z, random_mask(3, 4, rng), 0.5, g), ErrorCode::kDimsMismatch);
  EXPECT_ERROR_CODE(brightness_edit(z, mask, 0.5, random_gamma(5, rng)), ErrorCode::kDimsMismatch);
}

TEST(Editor, SelectRegionMatchesBruteForce) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 4 + trial % 5, w = 3 + trial % 4, n = 1 + trial % 6;
    std::vector<Tensor> maps;
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor m(1, h, w);
      for (auto& v : m.values()) v = u(rng);
      maps.push_back(m);
      tokens.push_back("t" + std::to_string(i));
    }
    const AttentionStack stack(maps, tokens);
    Tensor sal(1, h, w);
    for (auto& v : sal.values()) v = u(rng);

    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      double score = 0.0;
      for (std::size_t p = 0; p < h * w; ++p) score += maps[i][p] * sal[p];
      if (score > best_score) {
        best_score = score;
        best = i;
      }
    }
    double mx = 0.0;
    for (std::size_t p = 0; p < h * w; ++p) mx = std::max(mx, maps[best][p] * sal[p]);

    const RegionSelection sel = select_region(stack, sal);
    EXPECT_EQ(sel.token_index, best);
    for (std::size_t p = 0; p < h * w; ++p) EXPECT_NEAR(sel.mask[p], maps[best][p] * sal[p] / mx, 1e-12);
  }
}

TEST(Editor, SelectRegionPoolsImageResolutionSaliency) {
  Tensor a(1, 2, 2, 0.0), b(1, 2, 2, 0.0);
  a[0] = 1.0;
  b[3] = 1.0;
  const AttentionStack stack({a, b}, {"x", "y"});
  Tensor sal(1, 4, 4, 0.0);
  sal.at(0, 3, 3) = 1.0;
  const RegionSelection sel = select_region(stack, sal);
  EXPECT_EQ(sel.token_index, 1u);
  EXPECT_EQ(sel.mask[3], 1.0);
  EXPECT_ERROR_CODE(select_region(stack, Tensor(1, 4, 4, 0.0)), ErrorCode::kInvalidArgument);
}

TEST(Editor, ResizeToGridAveragesBlocks) {
  Tensor m(1, 4, 6);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<double>(i);
  const Tensor r = resize_to_grid(m, 2, 3);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 3; ++x) {
      const double expect = (m.at(0, 2 * y, 2 * x) + m.at(0, 2 * y, 2 * x + 1) + m.at(0, 2 * y + 1, 2 * x) +
                             m.at(0, 2 * y + 1, 2 * x + 1)) / 4.0;
      EXPECT_NEAR(r.at(0, y, x), expect, 1e-12);
    }
  EXPECT_TRUE(resize_to_grid(m, 4, 6) == m);
}

TEST(Editor, MaskRegionMatchesBruteForce) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor mask = random_mask(6, 7, rng);
    double mx = 0.0;
    for (double v : mask.values()) mx = std::max(mx, v);
    int x0 = 100, y0 = 100, x1 = -1, y1 = -1;
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 7; ++x)
        if (mask.at(0, y, x) >= 0.5 * mx) {
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
    const PatchRegion r = mask_region(mask, 4, 0.5);
    EXPECT_EQ(r.x0, 4 * x0);
    EXPECT_EQ(r.y0, 4 * y0);
    EXPECT_EQ(r.x1, 4 * (x1 + 1));
    EXPECT_EQ(r.y1, 4 * (y1 + 1));
  }
  const PatchRegion full = mask_region(Tensor(1, 3, 3, 0.0), 2);
  EXPECT_EQ(full.area(), 36);
}

TEST(Editor, TokenInsertion) {
  const Prompt p = {"a", "red", "circle"};
  EXPECT_EQ(token_insert(p, 2, "blue"), (Prompt{"a", "red", "blue", "circle"}));
  EXPECT_EQ(token_insert_for_photometric(p, 0), (Prompt{kEmptyToken, "a", "red", "circle"}));
  EXPECT_ERROR_CODE(token_insert(p, 3, "x"), ErrorCode::kRange);
}

TEST(Editor, ConstrainHalvesTowardIdentity) {
  const auto stats = stats_with_std({0.1, 0.1, 0.1, 0.1, 0.1, 0.1});
  const std::array<double, kNumProperties> original{0.3, 0.3, 0.3, 0.3, 0.05, 0.05};
  EditClosure apply = [](double a) {
    EditResult r;
    r.applied_alpha = a;
    return r;
  };
  PropertyProbe probe = [&](const EditResult& r) {
    auto p = original;
    p[kBrightness] += r.applied_alpha;
    return p;
  };
  const EditResult r = constrain(apply, 0.9, 0.0, stats, original, probe);
  EXPECT_DOUBLE_EQ(r.applied_alpha, 0.1125);
  EXPECT_DOUBLE_EQ(r.requested_alpha, 0.9);
  EXPECT_TRUE(r.constraint_triggered);
  EXPECT_FALSE(r.constraint_exhausted);

  const EditResult within = constrain(apply, 0.15, 0.0, stats, original, probe);
  EXPECT_DOUBLE_EQ(within.applied_alpha, 0.15);
  EXPECT_FALSE(within.constraint_triggered);
}

TEST(Editor, ConstrainNeverExceedsTwoSigmaUnlessExhausted) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int exhausted = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::array<double, kNumProperties> sd{};
    for (auto& v : sd) v = 0.01 + 0.2 * u(rng);
    const auto stats = stats_with_std(sd);
    const std::array<double, kNumProperties> original{0.4, 0.4, 0.4, 0.4, 0.1, 0.1};
    std::array<double, kNumProperties> slope{};
    for (auto& v : slope) v = 2.0 * u(rng) - 1.0;
    const double power = 0.5 + 2.0 * u(rng);
    const bool contrast = trial % 2 == 0;
    const double identity = contrast ? 1.0 : 0.0;
    const double requested = contrast ? 1.0 + 3.0 * u(rng) : 0.05 + 0.95 * u(rng);
    const double offset = trial % 17 == 0 ? 0.9 : 0.0;  // some scenarios cannot be satisfied
    EditClosure apply = [](double a) {
      EditResult r;
      r.applied_alpha = a;
      return r;
    };
    PropertyProbe probe = [&](const EditResult& r) {
      auto p = original;
      const double d = std::pow(std::abs(r.applied_alpha - identity), power);
      for (std::size_t i = 0; i < kNumProperties; ++i) p[i] += slope[i] * d + (d > 0 ? offset : 0.0);
      return p;
    };
    WarningCapture warnings;
    const EditResult r = constrain(apply, requested, identity, stats, original, probe, 6);
    if (r.constraint_exhausted) {
      ++exhausted;
      EXPECT_EQ(r.applied_alpha, identity);
      EXPECT_EQ(warnings.messages.size(), 1u);
      continue;
    }
    const auto props = probe(r);
    for (std::size_t i = 0; i < kNumProperties; ++i) EXPECT_LE(std::abs(props[i] - original[i]), 2.0 * sd[i]);

    double expect = requested;
    for (int k = 0; k < 7; ++k) {
      EditResult probe_at;
      probe_at.applied_alpha = expect;
      const auto p = probe(probe_at);
      bool ok = true;
      for (std::size_t i = 0; i < kNumProperties; ++i) ok = ok && std::abs(p[i] - original[i]) <= 2.0 * sd[i];
      if (ok) break;
      expect = identity + 0.5 * (expect - identity);
    }
    EXPECT_EQ(r.applied_alpha, expect);
  }
  EXPECT_GT(exhausted, 0);
}

class EditorPipeline : public ::testing::Test {
 protected:
  EditorPipeline() : bb(small_backbone(3)), llfr(6, 2, readout_config()) {}

  static ReadoutConfig readout_config() {
    ReadoutConfig c;
    c.seed = 3;
    c.llfr_hidden_dims = {8};
    return c;
  }

  PopulationStats wide_stats() const { return stats_with_std({1, 1, 1, 1, 1, 1}); }

  TinyBackbone bb;
  Llfr llfr;
};

TEST_F(EditorPipeline, PhotometricEditProducesConsistentResult) {
  std::mt19937_64 rng(10);
  const ImageTensor img = oracle::random_image(16, 16, rng);
  const Prompt prompt = {"a", "red", "circle"};
  const SaliencyMap sal = oracle::random_saliency(16, 16, rng);
  const EditPipeline pipe(bb, llfr, wide_stats());
  const EditResult r = pipe.run(img, prompt, sal, EditSpec(EditKind::kBrightnessIncrease, 0.4));
  EXPECT_EQ(r.kind, EditKind::kBrightnessIncrease);
  EXPECT_EQ(r.applied_alpha, 0.4);
  EXPECT_FALSE(r.constraint_triggered);
  EXPECT_EQ(r.edited_image.height(), 16u);
  EXPECT_EQ(r.mask.height(), 8u);
  EXPECT_EQ(r.edited_prompt.size(), prompt.size() + 1);
  EXPECT_EQ(r.edited_prompt[r.selected_token_index], kEmptyToken);
  EXPECT_TRUE(bb.decode(r.edited_latent).tensor() == r.edited_image.tensor());
  EXPECT_GT(r.region.area(), 0);

  const EditResult again = pipe.run(img, prompt, sal, EditSpec(EditKind::kBrightnessIncrease, 0.4));
  EXPECT_TRUE(again.edited_image.tensor() == r.edited_image.tensor());
}

TEST_F(EditorPipeline, IdentityStrengthReproducesReconstruction) {
  std::mt19937_64 rng(11);
  const ImageTensor img = oracle::random_image(16, 16, rng);
  const Prompt prompt = {"a", "blue", "square"};
  const SaliencyMap sal = oracle::random_saliency(16, 16, rng);
  const EditPipeline pipe(bb, llfr, wide_stats());
  const EditResult r = pipe.run(img, prompt, sal, EditSpec(EditKind::kContrastIncrease, 1.0));
  Prompt with_empty = token_insert_for_photometric(prompt, r.selected_token_index);
  const ImageTensor expect = bb.decode(bb.denoise(bb.noise_latent(bb.encode(img)), with_empty,
                                                  AttentionInjection{Tensor(1, 8, 8, 0.0), r.selected_token_index}));
  EXPECT_TRUE(r.edited_image.tensor() == expect.tensor());
  EXPECT_TRUE(bb.decode(bb.denoise(bb.noise_latent(bb.encode(img)), prompt)).tensor() == expect.tensor());
}

TEST_F(EditorPipeline, ColorEditInsertsWordAndRejectsUnknownColors) {
  std::mt19937_64 rng(12);
  const ImageTensor img = oracle::random_image(16, 16, rng);
  const Prompt prompt = {"a", "red", "circle"};
  const EditPipeline pipe(bb, llfr, wide_stats());
  const Tensor mask = random_mask(8, 8, rng);
  const EditResult r = pipe.color_edit(img, prompt, "blue", mask, 2, 0.8);
  EXPECT_EQ(r.edited_prompt, (Prompt{"a", "red", "blue", "circle"}));
  EXPECT_EQ(r.applied_alpha, 0.8);
  EXPECT_ERROR_CODE(pipe.color_edit(img, prompt, "mauve", mask, 2, 0.8), ErrorCode::kInvalidArgument);
  EXPECT_ERROR_CODE(pipe.run(img, prompt, oracle::random_saliency(16, 16, rng),
                             EditSpec(EditKind::kColorChange, 0.5, std::string("mauve"))),
                    ErrorCode::kInvalidArgument);
}

TEST_F(EditorPipeline, TightBoundsTriggerConstraint) {
  std::mt19937_64 rng(13);
  const ImageTensor img = oracle::random_image(16, 16, rng);
  const Prompt prompt = {"a", "red", "circle"};
  WarningCapture warnings;
  const EditPipeline pipe(bb, llfr, stats_with_std({0, 0, 0, 0, 0, 0}));
  const EditResult r = pipe.run(img, prompt, oracle::random_saliency(16, 16, rng),
                                EditSpec(EditKind::kBrightnessIncrease, 0.8));
  EXPECT_TRUE(r.constraint_triggered);
  EXPECT_LT(r.applied_alpha, 0.8);
}
