#include <map>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_support.hpp"

using namespace augsal;
using testing_support::small_backbone;
using testing_support::WarningCapture;

TEST(Augmentor, ProbabilityOneAlwaysKeepsOriginal) {
  AugmentConfig cfg;
  cfg.p = 1.0;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) EXPECT_TRUE(sample_step(cfg, rng).original);
}

TEST(Augmentor, ProbabilityZeroAlwaysEditsWithinRange) {
  AugmentConfig cfg;
  cfg.p = 0.0;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const AugmentDecision d = sample_step(cfg, rng);
    ASSERT_FALSE(d.original);
    const auto [lo, hi] = cfg.range(d.kind);
    EXPECT_GE(d.alpha, lo);
    EXPECT_LE(d.alpha, hi);
    EXPECT_EQ(d.color.has_value(), d.kind == EditKind::kColorChange);
    if (d.color)
      EXPECT_NE(std::find(cfg.color_palette.begin(), cfg.color_palette.end(), *d.color), cfg.color_palette.end());
  }
}

TEST(Augmentor, DecisionFrequenciesMatchConfiguration) {
  AugmentConfig cfg;
  cfg.p = 0.4;
  std::mt19937_64 rng(3);
  const int n = 10000;
  std::map<int, int> counts;
  int originals = 0;
  for (int i = 0; i < n; ++i) {
    const AugmentDecision d = sample_step(cfg, rng);
    if (d.original) ++originals;
    else ++counts[static_cast<int>(d.kind)];
  }
  EXPECT_NEAR(static_cast<double>(originals) / n, 0.4, 0.02);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(static_cast<double>(counts[k]) / n, 0.6 / 3.0, 0.02);
}

TEST(Augmentor, RestrictedKindsAndDegenerateRange) {
  AugmentConfig cfg;
  cfg.p = 0.0;
  cfg.edit_kinds = {EditKind::kBrightnessIncrease};
  cfg.alpha_range[static_cast<std::size_t>(EditKind::kBrightnessIncrease)] = {0.3, 0.3};
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const AugmentDecision d = sample_step(cfg, rng);
    EXPECT_EQ(d.kind, EditKind::kBrightnessIncrease);
    EXPECT_EQ(d.alpha, 0.3);
  }
}

TEST(Augmentor, ConfigValidation) {
  AugmentConfig cfg;
  cfg.p = 1.5;
  EXPECT_ERROR_CODE(cfg.validate(), ErrorCode::kConfig);
  cfg = AugmentConfig{};
  cfg.alpha_range[static_cast<std::size_t>(EditKind::kContrastIncrease)] = {0.5, 2.0};
  EXPECT_ERROR_CODE(cfg.validate(), ErrorCode::kConfig);
  cfg = AugmentConfig{};
  cfg.color_palette.clear();
  EXPECT_ERROR_CODE(cfg.validate(), ErrorCode::kConfig);
  cfg.edit_kinds = {EditKind::kContrastIncrease};
  EXPECT_NO_THROW(cfg.validate());
  cfg.boost = -0.1;
  EXPECT_ERROR_CODE(cfg.validate(), ErrorCode::kConfig);
}

TEST(Augmentor, BoostedTargetIsClampedAndMonotone) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const SaliencyMap s = oracle::random_saliency(9, 11, rng);
    Tensor m(1, 9, 11);
    for (auto& v : m.values()) v = u(rng);
    const Tensor zero = boosted_target(s.tensor(), m, 0.0);
    EXPECT_TRUE(zero == s.tensor());
    const Tensor lo = boosted_target(s.tensor(), m, 0.1);
    const Tensor hi = boosted_target(s.tensor(), m, 0.4);
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_GE(lo[i], s[i]);
      EXPECT_GE(hi[i], lo[i]);
      EXPECT_LE(hi[i], 1.0);
      EXPECT_NEAR(lo[i], std::min(1.0, s[i] + 0.1 * m[i]), 1e-15);
    }
  }
  EXPECT_ERROR_CODE(boosted_target(Tensor(1, 3, 3), Tensor(1, 3, 4), 0.1), ErrorCode::kDimsMismatch);
}

class AugmentorPipeline : public ::testing::Test {
 protected:
  AugmentorPipeline() : bb(small_backbone(4)), llfr(6, 2, ReadoutConfig{}) {
    PopulationStats st;
    st.mean = PropertyVector(std::array<double, kNumProperties>{0.5, 0.5, 0.5, 0.5, 0.1, 0.1});
    st.std = PropertyVector(std::array<double, kNumProperties>{1, 1, 1, 1, 1, 1});
    pipe = std::make_unique<EditPipeline>(bb, llfr, st);
  }
  TinyBackbone bb;
  Llfr llfr;
  std::unique_ptr<EditPipeline> pipe;
};

TEST_F(AugmentorPipeline, OriginalDecisionPassesThrough) {
  std::mt19937_64 rng(6);
  const ImageTensor img = oracle::random_image(16, 16, rng);
  const SaliencyMap s = oracle::random_saliency(16, 16, rng);
  const auto out = augmented_batch(img, s, {"a", "red", "circle"}, AugmentDecision{}, *pipe, AugmentConfig{});
  ASSERT_TRUE(out);
  EXPECT_FALSE(out->edited);
  EXPECT_TRUE(out->input.tensor() == img.tensor());
  EXPECT_TRUE(out->target == s.tensor());
}

TEST_F(AugmentorPipeline, EditedDecisionBoostsInsideMask) {
  std::mt19937_64 rng(7);
  const ImageTensor img = oracle::random_image(16, 16, rng);
  const SaliencyMap s = oracle::random_saliency(16, 16, rng);
  AugmentDecision d;
  d.original = false;
  d.kind = EditKind::kBrightnessIncrease;
  d.alpha = 0.5;
  AugmentConfig cfg;
  const auto out = augmented_batch(img, s, {"a", "red", "circle"}, d, *pipe, cfg);
  ASSERT_TRUE(out);
  EXPECT_TRUE(out->edited);
  ASSERT_TRUE(out->mask_image);
  EXPECT_EQ(out->mask_image->height(), 16u);
  EXPECT_TRUE(out->target == boosted_target(s.tensor(), *out->mask_image, cfg.boost));
  EXPECT_TRUE(out->input.tensor() == out->edit->edited_image.tensor());

  cfg.target = AugmentTarget::kOriginal;
  const auto plain = augmented_batch(img, s, {"a", "red", "circle"}, d, *pipe, cfg);
  ASSERT_TRUE(plain);
  EXPECT_TRUE(plain->target == s.tensor());
}

TEST_F(AugmentorPipeline, FailedEditIsSkippedWithWarning) {
  std::mt19937_64 rng(8);
  const ImageTensor img = oracle::random_image(16, 16, rng);
  const SaliencyMap s = oracle::random_saliency(16, 16, rng);
  AugmentDecision d;
  d.original = false;
  d.kind = EditKind::kColorChange;
  d.alpha = 1.0;
  d.color = "mauve";
  WarningCapture warnings;
  EXPECT_FALSE(augmented_batch(img, s, {"a", "red", "circle"}, d, *pipe, AugmentConfig{}));
  ASSERT_EQ(warnings.messages.size(), 1u);
  EXPECT_NE(warnings.messages[0].find("mauve"), std::string::npos);
}
