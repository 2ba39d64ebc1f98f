#include "oracles.hpp"
#include "test_support.hpp"

using namespace augsal;

TEST(Photometrics, MatchLoopOracleOnRandomInstances) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 120; ++trial) {
    const auto h = oracle::dim(rng), w = oracle::dim(rng);
    const ImageTensor img = oracle::random_image(h, w, rng);
    const PatchRegion r = oracle::random_patch(h, w, rng);
    const auto ref = oracle::properties(img, r);
    const auto got = property_vector(img, r);
    for (std::size_t i = 0; i < kNumProperties; ++i) EXPECT_NEAR(got[i], ref[i], 1e-12) << property_name(i);
  }
}

TEST(Photometrics, ConstantPatchHasZeroContrast) {
  const ImageTensor img(Tensor(3, 8, 8, 0.4));
  const PatchRegion r(1, 1, 5, 6);
  EXPECT_NEAR(local_contrast(img, r), 0.0, 1e-12);
  EXPECT_NEAR(global_contrast(img), 0.0, 1e-12);
  EXPECT_NEAR(brightness(img, r), 0.4, 1e-15);
}

TEST(Photometrics, WhiteImageLumaStaysInRange) {
  const ImageTensor img(Tensor(3, 4, 4, 1.0));
  EXPECT_LE(brightness(img, PatchRegion::full(4, 4)), 1.0);
  EXPECT_NO_THROW(property_vector(img, PatchRegion::full(4, 4)));
}

TEST(Photometrics, RejectsOutOfBoundsRegion) {
  const ImageTensor img(Tensor(3, 4, 4, 0.5));
  EXPECT_ERROR_CODE(brightness(img, PatchRegion(0, 0, 5, 2)), ErrorCode::kRange);
}

TEST(Photometrics, SamplePatchRespectsFractions) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 500; ++i) {
    const PatchRegion p = sample_patch(32, 20, 0.2, 0.5, rng);
    EXPECT_TRUE(p.fits(32, 20));
    EXPECT_GE(p.width(), 4);
    EXPECT_LE(p.width(), 10);
    EXPECT_GE(p.height(), 7);
    EXPECT_LE(p.height(), 16);
  }
  EXPECT_ERROR_CODE(sample_patch(32, 32, 0.6, 0.5, rng), ErrorCode::kInvalidArgument);
  EXPECT_EQ(sample_patch(32, 32, 0.2, 0.5, std::uint64_t{9}), sample_patch(32, 32, 0.2, 0.5, std::uint64_t{9}));
}

TEST(Photometrics, PopulationStatsMatchLoop) {
  std::mt19937_64 rng(5);
  std::vector<ImageTensor> imgs;
  for (int i = 0; i < 6; ++i) imgs.push_back(oracle::random_image(16, 16, rng));
  const PopulationStats st = population_stats(imgs, 3, 77);
  std::mt19937_64 replay(77);
  std::vector<std::array<double, 6>> rows;
  for (const auto& img : imgs)
    for (int k = 0; k < 3; ++k) rows.push_back(oracle::properties(img, sample_patch(16, 16, 0.2, 0.5, replay)));
  for (std::size_t i = 0; i < kNumProperties; ++i) {
    long double m = 0, v = 0;
    for (const auto& r : rows) m += r[i];
    m /= rows.size();
    for (const auto& r : rows) v += (r[i] - m) * (r[i] - m);
    EXPECT_NEAR(st.mean[i], static_cast<double>(m), 1e-12);
    EXPECT_NEAR(st.std[i], static_cast<double>(std::sqrt(v / rows.size())), 1e-12);
  }
}
