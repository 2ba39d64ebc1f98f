#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "augsal/error.hpp"
#include "augsal/tensor.hpp"

namespace augsal {

struct LossWeights {
  // lambda[0] unused so indices match lambda_1..lambda_6.
  std::array<double, 7> lambda{0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  double eps = 1e-7;

  void validate() const {
    for (std::size_t i = 1; i < lambda.size(); ++i)
      require(std::isfinite(lambda[i]) && lambda[i] >= 0.0, ErrorCode::kConfig,
              "lambda_" + std::to_string(i) + " must be finite and nonnegative");
    require(std::isfinite(eps) && eps > 0.0, ErrorCode::kConfig, "eps must be positive");
  }
};

/// Scalar loss with its gradient w.r.t. the prediction argument.
struct LossValue {
  double value = 0.0;
  std::vector<double> grad;
};

namespace detail {

inline double checked_sum(std::span<const double> v, const char* what) {
  double s = 0.0;
  for (double x : v) s += x;
  require(std::isfinite(s) && s > 0.0, ErrorCode::kNumerical, std::string(what) + " has no mass to normalize");
  return s;
}

inline void require_same_size(std::size_t a, std::size_t b) {
  require(a == b, ErrorCode::kDimsMismatch, "maps differ in size");
}

}  // namespace detail

/// sum_i s_i log(eps + s_i / (eps + q_i)) on sum-normalized maps; gradient w.r.t. the raw prediction.
inline LossValue kld_with_grad(std::span<const double> target, std::span<const double> pred, double eps) {
  detail::require_same_size(target.size(), pred.size());
  const double zs = detail::checked_sum(target, "ground-truth map");
  const double zq = detail::checked_sum(pred, "predicted map");
  const std::size_t n = target.size();
  LossValue out;
  out.grad.resize(n);
  double dot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = target[i] / zs;
    const double q = pred[i] / zq;
    const double r = s / (eps + q);
    out.value += s * std::log(eps + r);
    const double gq = -s * s / ((eps + r) * (eps + q) * (eps + q));
    out.grad[i] = gq;
    dot += gq * q;
  }
  for (auto& g : out.grad) g = (g - dot) / zq;
  return out;
}

inline double kld(std::span<const double> target, std::span<const double> pred, double eps = 1e-7) {
  return kld_with_grad(target, pred, eps).value;
}

inline double kld(const SaliencyMap& s, const SaliencyMap& s_pred, double eps = 1e-7) {
  require(s.tensor().same_shape(s_pred.tensor()), ErrorCode::kDimsMismatch, "kld: maps differ in shape");
  return kld(s.values(), s_pred.values(), eps);
}

/// Pearson correlation and its gradient w.r.t. the prediction.
inline LossValue cc_with_grad(std::span<const double> target, std::span<const double> pred) {
  detail::require_same_size(target.size(), pred.size());
  const auto n = static_cast<double>(target.size());
  const double ma = std::accumulate(target.begin(), target.end(), 0.0) / n;
  const double mb = std::accumulate(pred.begin(), pred.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double a = target[i] - ma, b = pred[i] - mb;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
  }
  require(saa > 0.0 && sbb > 0.0, ErrorCode::kNumerical, "correlation undefined for a constant map");
  const double denom = std::sqrt(saa * sbb);
  LossValue out;
  out.value = sab / denom;
  out.grad.resize(target.size());
  // Both centered vectors sum to zero, so the centering Jacobian drops out.
  for (std::size_t i = 0; i < target.size(); ++i)
    out.grad[i] = (target[i] - ma) / denom - out.value * (pred[i] - mb) / sbb;
  return out;
}

inline double cc(std::span<const double> target, std::span<const double> pred) {
  return cc_with_grad(target, pred).value;
}

inline double cc(const SaliencyMap& s, const SaliencyMap& s_pred) {
  require(s.tensor().same_shape(s_pred.tensor()), ErrorCode::kDimsMismatch, "cc: maps differ in shape");
  return cc(s.values(), s_pred.values());
}

/// lambda_5 (1 - CC) + lambda_6 KLD.
inline LossValue saliency_loss_with_grad(std::span<const double> target, std::span<const double> pred,
                                         const LossWeights& w) {
  const auto c = cc_with_grad(target, pred);
  const auto k = kld_with_grad(target, pred, w.eps);
  LossValue out;
  out.value = w.lambda[5] * (1.0 - c.value) + w.lambda[6] * k.value;
  out.grad.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out.grad[i] = -w.lambda[5] * c.grad[i] + w.lambda[6] * k.grad[i];
  return out;
}

inline double saliency_loss(const SaliencyMap& s, const SaliencyMap& s_pred, const LossWeights& w = {}) {
  require(s.tensor().same_shape(s_pred.tensor()), ErrorCode::kDimsMismatch, "saliency loss: shape mismatch");
  return saliency_loss_with_grad(s.values(), s_pred.values(), w).value;
}

/// Binary cross-entropy between M*target (held fixed) and M*pred, averaged over pixels with M > 0.
/// Gradient is w.r.t. pred.
inline LossValue edit_loss_with_grad(std::span<const double> target, std::span<const double> pred,
                                     std::span<const double> mask, double eps = 1e-7) {
  detail::require_same_size(target.size(), pred.size());
  detail::require_same_size(target.size(), mask.size());
  std::size_t n = 0;
  for (double m : mask) n += m > 0.0 ? 1 : 0;
  require(n > 0, ErrorCode::kInvalidArgument, "edit loss needs a nonzero mask");
  LossValue out;
  out.grad.assign(pred.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!(mask[i] > 0.0)) continue;
    const double t = mask[i] * target[i];
    const double raw = mask[i] * pred[i];
    const double y = std::clamp(raw, eps, 1.0 - eps);
    double term = 0.0;
    if (t > 0.0) term += t * std::log(y);
    if (t < 1.0) term += (1.0 - t) * std::log(1.0 - y);
    out.value -= term * inv_n;
    if (raw > eps && raw < 1.0 - eps) out.grad[i] = -(t / y - (1.0 - t) / (1.0 - y)) * mask[i] * inv_n;
  }
  return out;
}

inline double edit_loss(const SaliencyMap& s_pred, const SaliencyMap& s_pred_edited, const Tensor& mask,
                        double eps = 1e-7) {
  require(s_pred.tensor().same_shape(s_pred_edited.tensor()) && s_pred.tensor().same_shape(mask),
          ErrorCode::kDimsMismatch, "edit loss: maps must share dims");
  return edit_loss_with_grad(s_pred.values(), s_pred_edited.values(), mask.values(), eps).value;
}

/// Raw readout predictions: six photometric values plus class logits.
struct ReadoutPrediction {
  std::array<double, kNumProperties> properties{};
  std::vector<double> logits;
};

struct ReadoutGrad {
  double value = 0.0;
  std::array<double, kNumProperties> d_properties{};
  std::vector<double> d_logits;
};

/// Softmax cross-entropy of logits against a class id.
inline double cross_entropy(std::span<const double> logits, int label, std::vector<double>* grad = nullptr) {
  require(label >= 0 && static_cast<std::size_t>(label) < logits.size(), ErrorCode::kRange, "class label out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double lse = mx + std::log(z);
  if (grad) {
    grad->resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) (*grad)[i] = std::exp(logits[i] - lse);
    (*grad)[static_cast<std::size_t>(label)] -= 1.0;
  }
  return lse - logits[static_cast<std::size_t>(label)];
}

/// Weighted sum of squared-L2 property terms (local contrast unweighted) and lambda_4 * CE.
/// Either part may be skipped: pass an empty logits vector or set with_properties = false.
inline ReadoutGrad readout_loss_with_grad(const ReadoutPrediction& pred, const PropertyVector& target, int label,
                                          const LossWeights& w, bool with_properties = true) {
  ReadoutGrad out;
  if (with_properties) {
    const std::array<double, kNumProperties> weight = {w.lambda[1], w.lambda[1], w.lambda[1],
                                                       w.lambda[2], 1.0,         w.lambda[3]};
    for (std::size_t i = 0; i < kNumProperties; ++i) {
      const double d = pred.properties[i] - target[i];
      out.value += weight[i] * d * d;
      out.d_properties[i] = 2.0 * weight[i] * d;
    }
  }
  if (!pred.logits.empty()) {
    std::vector<double> g;
    out.value += w.lambda[4] * cross_entropy(pred.logits, label, &g);
    out.d_logits.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) out.d_logits[i] = w.lambda[4] * g[i];
  }
  return out;
}

inline double readout_loss(const ReadoutPrediction& pred, const PropertyVector& target, int label,
                           const LossWeights& w = {}) {
  return readout_loss_with_grad(pred, target, label, w).value;
}

}  // namespace augsal
