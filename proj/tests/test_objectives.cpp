#include <cmath>

#include "oracles.hpp"
#include "test_support.hpp"

using namespace augsal;

namespace {

std::vector<double> vec(const SaliencyMap& s) { return {s.values().begin(), s.values().end()}; }

/// Central differences of f at x, compared with the analytic gradient.
template <typename F>
void check_gradient(F f, std::vector<double> x, const std::vector<double>& analytic, double tol = 1e-4) {
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    const double numeric = (fp - fm) / (2 * h);
    EXPECT_LE(oracle::rel_err(analytic[i], numeric, 1e-5), tol) << "i=" << i << " a=" << analytic[i] << " n=" << numeric;
  }
}

}  // namespace

TEST(Objectives, LossesMatchLoopOracles) {
  std::mt19937_64 rng(21);
  LossWeights w;
  w.lambda = {0, 0.7, 1.3, 0.4, 2.0, 0.6, 1.7};
  for (int trial = 0; trial < 120; ++trial) {
    const auto h = oracle::dim(rng), wd = oracle::dim(rng);
    const auto s = vec(oracle::random_saliency(h, wd, rng));
    const auto q = vec(oracle::random_saliency(h, wd, rng));
    const auto m = vec(oracle::random_saliency(h, wd, rng));
    EXPECT_NEAR(kld(s, q, w.eps), oracle::kld(s, q, w.eps), 1e-12);
    EXPECT_NEAR(cc(s, q), oracle::cc(s, q), 1e-12);
    EXPECT_NEAR(saliency_loss_with_grad(s, q, w).value, oracle::saliency_loss(s, q, 0.6, 1.7, w.eps), 1e-12);
    EXPECT_NEAR(edit_loss_with_grad(s, q, m).value, oracle::edit_loss(s, q, m, 1e-7), 1e-12);

    ReadoutPrediction pred;
    std::array<double, 6> target{};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 6; ++i) {
      pred.properties[i] = u(rng);
      target[i] = u(rng);
    }
    pred.logits = {u(rng) * 4 - 2, u(rng) * 4 - 2, u(rng) * 4 - 2};
    const int label = trial % 3;
    EXPECT_NEAR(readout_loss(pred, PropertyVector(target), label, w),
                oracle::readout_loss(pred.properties, target, pred.logits, label, w.lambda), 1e-12);
  }
}

TEST(Objectives, IdentityValues) {
  std::mt19937_64 rng(3);
  const auto s = vec(oracle::random_saliency(10, 12, rng));
  EXPECT_NEAR(cc(s, s), 1.0, 1e-15);
  double previous = 1.0;
  for (double eps : {1e-5, 1e-7, 1e-9}) {
    const double self = std::abs(kld(s, s, eps));
    EXPECT_LE(self, eps * static_cast<double>(s.size()));
    EXPECT_LT(self, previous);
    previous = self;
  }
  std::vector<double> scaled = s;
  for (auto& v : scaled) v *= 0.5;
  EXPECT_NEAR(kld(s, scaled, 1e-7), kld(s, s, 1e-7), 1e-12);
}

TEST(Objectives, DegenerateInputsRaise) {
  const std::vector<double> zero(16, 0.0), flat(16, 0.5), ramp = [] {
    std::vector<double> r(16);
    for (int i = 0; i < 16; ++i) r[i] = i / 15.0;
    return r;
  }();
  EXPECT_ERROR_CODE(kld(ramp, zero), ErrorCode::kNumerical);
  EXPECT_ERROR_CODE(cc(ramp, flat), ErrorCode::kNumerical);
  EXPECT_ERROR_CODE(edit_loss_with_grad(ramp, ramp, zero), ErrorCode::kInvalidArgument);
  EXPECT_ERROR_CODE(kld(ramp, std::vector<double>(4, 1.0)), ErrorCode::kDimsMismatch);
  EXPECT_ERROR_CODE(cross_entropy(std::vector<double>{0.0, 1.0}, 2), ErrorCode::kRange);
  LossWeights w;
  w.lambda[3] = -1;
  EXPECT_ERROR_CODE(w.validate(), ErrorCode::kConfig);
}

TEST(Objectives, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(31);
  LossWeights w;
  w.lambda = {0, 0.7, 1.3, 0.4, 2.0, 0.6, 1.7};
  for (int trial = 0; trial < 20; ++trial) {
    const auto h = oracle::dim(rng, 4, 9), wd = oracle::dim(rng, 4, 9);
    const auto s = vec(oracle::random_saliency(h, wd, rng));
    auto q = vec(oracle::random_saliency(h, wd, rng));
    for (auto& v : q) v = 0.05 + 0.9 * v;  // keep away from the edit-loss clamp
    const auto m = vec(oracle::random_saliency(h, wd, rng));

    check_gradient([&](const std::vector<double>& x) { return kld(s, x, w.eps); }, q, kld_with_grad(s, q, w.eps).grad);
    check_gradient([&](const std::vector<double>& x) { return cc(s, x); }, q, cc_with_grad(s, q).grad);
    check_gradient([&](const std::vector<double>& x) { return saliency_loss_with_grad(s, x, w).value; }, q,
                   saliency_loss_with_grad(s, q, w).grad);
    check_gradient([&](const std::vector<double>& x) { return edit_loss_with_grad(s, x, m).value; }, q,
                   edit_loss_with_grad(s, q, m).grad);

    ReadoutPrediction pred;
    std::array<double, 6> target{};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 6; ++i) {
      pred.properties[i] = u(rng);
      target[i] = u(rng);
    }
    pred.logits = {u(rng), u(rng) * 3, -u(rng)};
    const int label = trial % 3;
    const ReadoutGrad g = readout_loss_with_grad(pred, PropertyVector(target), label, w);
    std::vector<double> x(pred.properties.begin(), pred.properties.end());
    x.insert(x.end(), pred.logits.begin(), pred.logits.end());
    std::vector<double> analytic(g.d_properties.begin(), g.d_properties.end());
    analytic.insert(analytic.end(), g.d_logits.begin(), g.d_logits.end());
    check_gradient(
        [&](const std::vector<double>& v) {
          ReadoutPrediction p;
          std::copy_n(v.begin(), 6, p.properties.begin());
          p.logits.assign(v.begin() + 6, v.end());
          return readout_loss(p, PropertyVector(target), label, w);
        },
        x, analytic);
  }
}

TEST(Objectives, EditLossHasNoGradientOutsideMask) {
  std::mt19937_64 rng(8);
  const auto s = vec(oracle::random_saliency(6, 6, rng));
  const auto q = vec(oracle::random_saliency(6, 6, rng));
  std::vector<double> m(36, 0.0);
  m[7] = 1.0;
  m[20] = 0.5;
  const auto g = edit_loss_with_grad(s, q, m).grad;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (m[i] == 0.0) EXPECT_EQ(g[i], 0.0);
}
