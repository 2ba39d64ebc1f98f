#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_support.hpp"

using namespace augsal;
using testing_support::max_fd_error;

namespace {

Tensor random_tensor(std::size_t c, std::size_t h, std::size_t w, std::mt19937_64& rng) {
  Tensor t(c, h, w);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

std::vector<double> random_weights(std::size_t n, std::mt19937_64& rng) {
  std::vector<double> w(n);
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto& v : w) v = d(rng);
  return w;
}

/// Largest relative error of an input gradient against central differences on sampled entries.
double max_input_fd_error(Tensor& x, const Tensor& analytic, const std::function<double()>& loss, std::size_t samples,
                          std::mt19937_64& rng, double h = 1e-6) {
  double worst = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, x.size() - 1)(rng);
    const double keep = x[k];
    x[k] = keep + h;
    const double up = loss();
    x[k] = keep - h;
    const double down = loss();
    x[k] = keep;
    worst = std::max(worst, oracle::rel_err((up - down) / (2 * h), analytic[k], 1e-5));
  }
  return worst;
}

ReadoutConfig config(std::uint64_t seed) {
  ReadoutConfig c;
  c.seed = seed;
  c.llfr_hidden_dims = {12};
  c.hlfr_conv_channels = {8, 8};
  c.sr_channels = {8, 8, 6, 6, 4, 4, 1};
  return c;
}

}  // namespace

TEST(Readouts, LatentRegionMapsOutward) {
  const PatchRegion cells = latent_region(PatchRegion(3, 4, 9, 13), 4, 8, 8);
  EXPECT_EQ(cells.x0, 0);
  EXPECT_EQ(cells.y0, 1);
  EXPECT_EQ(cells.x1, 3);
  EXPECT_EQ(cells.y1, 4);
  const PatchRegion whole = latent_region(PatchRegion(0, 0, 32, 32), 8, 4, 4);
  EXPECT_EQ(whole.area(), 16);
  EXPECT_ERROR_CODE(latent_region(PatchRegion(0, 0, 33, 8), 8, 4, 4), ErrorCode::kRange);
}

TEST(Readouts, LlfrOutputsRespectPropertyDomains) {
  std::mt19937_64 rng(1);
  Llfr llfr(5, 2, config(3));
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor low = random_tensor(5, 8, 8, rng);
    const PatchRegion r = oracle::random_patch(16, 16, rng);
    const auto out = llfr.forward(low, r);
    for (std::size_t i = 0; i < kNumProperties; ++i) {
      EXPECT_GE(out[i], 0.0);
      if (i <= kBrightness) EXPECT_LE(out[i], 1.0);
    }
  }
  EXPECT_ERROR_CODE(llfr.forward(random_tensor(4, 8, 8, rng), PatchRegion(0, 0, 4, 4)), ErrorCode::kDimsMismatch);
}

TEST(Readouts, LlfrGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  Llfr llfr(5, 2, config(4));
  for (int trial = 0; trial < 5; ++trial) {
    Tensor low = random_tensor(5, 6, 7, rng);
    const PatchRegion r = oracle::random_patch(12, 14, rng);
    const auto w = random_weights(kNumProperties, rng);
    auto loss = [&] {
      const auto out = llfr.forward(low, r);
      double s = 0.0;
      for (std::size_t i = 0; i < kNumProperties; ++i) s += w[i] * out[i];
      return s;
    };
    auto params = llfr.params();
    nn::Grads g(params);
    Llfr::Cache cache;
    llfr.forward(low, r, &cache);
    std::array<double, kNumProperties> d{};
    std::copy(w.begin(), w.end(), d.begin());
    const Tensor g_low = llfr.backward(low, cache, d, g, 0);
    EXPECT_LT(max_fd_error(params, g, loss, 4, rng), 1e-3);
    EXPECT_LT(max_input_fd_error(low, g_low, loss, 20, rng), 1e-3);
  }
}

TEST(Readouts, HlfrGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  Hlfr hlfr(6, 2, config(5));
  EXPECT_EQ(hlfr.num_classes(), 3u);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor high = random_tensor(6, 6, 6, rng);
    const PatchRegion r = oracle::random_patch(12, 12, rng);
    const auto w = random_weights(3, rng);
    auto loss = [&] {
      const auto logits = hlfr.forward(high, r);
      double s = 0.0;
      for (std::size_t i = 0; i < 3; ++i) s += w[i] * logits[i];
      return s;
    };
    auto params = hlfr.params();
    nn::Grads g(params);
    Hlfr::Cache cache;
    hlfr.forward(high, r, &cache);
    const Tensor g_high = hlfr.backward(cache, w, g, 0);
    EXPECT_LT(max_fd_error(params, g, loss, 6, rng), 1e-3);
    EXPECT_LT(max_input_fd_error(high, g_high, loss, 20, rng), 1e-3);
  }
}

TEST(Readouts, HlfrPredictIsArgmax) {
  std::mt19937_64 rng(4);
  Hlfr hlfr(6, 2, config(6));
  const Tensor high = random_tensor(6, 8, 8, rng);
  const PatchRegion r(2, 2, 10, 12);
  const auto logits = hlfr.forward(high, r);
  const int best = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  EXPECT_EQ(hlfr.predict(high, r), best);
}

TEST(Readouts, SaliencyGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  SaliencyReadout sr(7, 2, config(7));
  Tensor input = random_tensor(7, 5, 6, rng);
  const Tensor w = random_tensor(1, 10, 12, rng);
  auto loss = [&] {
    const Tensor out = sr.forward_raw(input, 10, 12);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += w[i] * out[i];
    return s;
  };
  auto params = sr.params();
  nn::Grads g(params);
  SaliencyReadout::Cache cache;
  sr.forward_raw(input, 10, 12, &cache);
  const Tensor g_in = sr.backward(cache, w, g, 0);
  EXPECT_LT(max_fd_error(params, g, loss, 4, rng), 1e-3);
  EXPECT_LT(max_input_fd_error(input, g_in, loss, 30, rng), 1e-3);
}

TEST(Readouts, SaliencyOutputIsAMapAtImageResolution) {
  std::mt19937_64 rng(6);
  SaliencyReadout sr(8, 4, config(8));
  const FeatureBundle f(random_tensor(4, 4, 5, rng), random_tensor(4, 4, 5, rng));
  const SaliencyMap s = sr.forward(f);
  EXPECT_EQ(s.height(), 16u);
  EXPECT_EQ(s.width(), 20u);
  for (double v : s.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  const FeatureBundle wrong(random_tensor(3, 4, 5, rng), random_tensor(4, 4, 5, rng));
  EXPECT_ERROR_CODE(sr.forward(wrong), ErrorCode::kDimsMismatch);
}

TEST(Readouts, SeedsAreReproducible) {
  std::mt19937_64 rng(7);
  const Tensor high = random_tensor(6, 8, 8, rng);
  Hlfr a(6, 2, config(9)), b(6, 2, config(9)), c(6, 2, config(10));
  const PatchRegion r(0, 0, 16, 16);
  EXPECT_EQ(a.forward(high, r), b.forward(high, r));
  EXPECT_NE(a.forward(high, r), c.forward(high, r));
}

TEST(Readouts, ConfigValidation) {
  ReadoutConfig c;
  c.num_classes = 1;
  EXPECT_ERROR_CODE(c.validate(), ErrorCode::kConfig);
  c = ReadoutConfig{};
  c.hlfr_conv_channels.clear();
  EXPECT_ERROR_CODE(c.validate(), ErrorCode::kConfig);
}
