#pragma once

// Minimal differentiable building blocks: every layer is a const function of its
// parameters, and backward passes accumulate into caller-owned gradient buffers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "augsal/error.hpp"
#include "augsal/tensor.hpp"

namespace augsal::nn {

/// Per-step generator so that a resumed run draws the same stream as an uninterrupted one.
inline std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t salt, std::size_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(step),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(step) >> 32)};
  return std::mt19937_64(seq);
}

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;

  Param() = default;
  Param(std::string n, std::vector<std::size_t> s) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (auto d : shape) count *= d;
    value.assign(count, 0.0);
  }
  std::size_t size() const noexcept { return value.size(); }
};

using ParamList = std::vector<Param*>;
using ConstParamList = std::vector<const Param*>;

/// One gradient buffer per parameter, aligned with a ParamList.
struct Grads {
  std::vector<std::vector<double>> buffers;

  explicit Grads(const ParamList& params) {
    for (const auto* p : params) buffers.emplace_back(p->size(), 0.0);
  }
  std::span<double> operator[](std::size_t i) { return buffers[i]; }
  void zero() {
    for (auto& b : buffers) std::fill(b.begin(), b.end(), 0.0);
  }
  void scale(double s) {
    for (auto& b : buffers)
      for (auto& g : b) g *= s;
  }
};

inline void init_uniform(Param& p, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : p.value) v = dist(rng);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline Tensor silu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = silu(v);
  return y;
}

/// Multiplies an upstream gradient by SiLU'(pre).
inline Tensor silu_backward(const Tensor& pre, const Tensor& gy) {
  Tensor gx = gy;
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= silu_grad(pre[i]);
  return gx;
}

/// Same-padded k x k convolution, stride 1.
struct Conv2d {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t k = 3;
  Param weight;  // (out, in * k * k)
  Param bias;    // (out)

  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::mt19937_64& rng,
         double gain = 1.0, bool with_bias = true)
      : in(in_ch), out(out_ch), k(kernel), weight(name + ".weight", {out_ch, in_ch * kernel * kernel}),
        bias(name + ".bias", {with_bias ? out_ch : 0}) {
    require(kernel % 2 == 1, ErrorCode::kInvalidArgument, "kernel size must be odd");
    init_uniform(weight, gain * std::sqrt(3.0 / static_cast<double>(in_ch * kernel * kernel)), rng);
  }

  bool has_bias() const noexcept { return !bias.value.empty(); }

  ParamList params() {
    if (!has_bias()) return {&weight};
    return {&weight, &bias};
  }

  Matrix im2col(const Tensor& x) const {
    const std::size_t h = x.height(), w = x.width(), r = k / 2;
    Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(in * k * k), static_cast<Eigen::Index>(h * w));
    for (std::size_t c = 0; c < in; ++c)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto row = static_cast<Eigen::Index>((c * k + ky) * k + kx);
          for (std::size_t y = 0; y < h; ++y) {
            const long sy = static_cast<long>(y + ky) - static_cast<long>(r);
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            for (std::size_t xx = 0; xx < w; ++xx) {
              const long sx = static_cast<long>(xx + kx) - static_cast<long>(r);
              if (sx < 0 || sx >= static_cast<long>(w)) continue;
              cols(row, static_cast<Eigen::Index>(y * w + xx)) =
                  x.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
          }
        }
    return cols;
  }

  Tensor forward(const Tensor& x) const {
    require(x.channels() == in, ErrorCode::kDimsMismatch,
            weight.name + ": expected " + std::to_string(in) + " input channels, got " + std::to_string(x.channels()));
    Tensor y(out, x.height(), x.width());
    MatrixMap ym(y.storage().data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(x.plane()));
    ConstMatrixMap wm(weight.value.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in * k * k));
    if (k == 1) {
      ConstMatrixMap xm(x.storage().data(), static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(x.plane()));
      ym.noalias() = wm * xm;
    } else {
      ym.noalias() = wm * im2col(x);
    }
    if (has_bias()) ym.colwise() += ConstVectorMap(bias.value.data(), static_cast<Eigen::Index>(out));
    return y;
  }

  /// Returns dL/dx; accumulates dL/dW and dL/db (gb is ignored without a bias).
  Tensor backward(const Tensor& x, const Tensor& gy, std::span<double> gw, std::span<double> gb = {}) const {
    const auto n = static_cast<Eigen::Index>(x.plane());
    ConstMatrixMap gym(gy.storage().data(), static_cast<Eigen::Index>(out), n);
    ConstMatrixMap wm(weight.value.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in * k * k));
    MatrixMap gwm(gw.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in * k * k));
    if (has_bias()) VectorMap(gb.data(), static_cast<Eigen::Index>(out)) += gym.rowwise().sum();

    Tensor gx(in, x.height(), x.width());
    if (k == 1) {
      ConstMatrixMap xm(x.storage().data(), static_cast<Eigen::Index>(in), n);
      gwm.noalias() += gym * xm.transpose();
      MatrixMap(gx.storage().data(), static_cast<Eigen::Index>(in), n).noalias() = wm.transpose() * gym;
      return gx;
    }
    const Matrix cols = im2col(x);
    gwm.noalias() += gym * cols.transpose();
    const Matrix gcols = wm.transpose() * gym;
    const std::size_t h = x.height(), w = x.width(), r = k / 2;
    for (std::size_t c = 0; c < in; ++c)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto row = static_cast<Eigen::Index>((c * k + ky) * k + kx);
          for (std::size_t y = 0; y < h; ++y) {
            const long sy = static_cast<long>(y + ky) - static_cast<long>(r);
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            for (std::size_t xx = 0; xx < w; ++xx) {
              const long sx = static_cast<long>(xx + kx) - static_cast<long>(r);
              if (sx < 0 || sx >= static_cast<long>(w)) continue;
              gx.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) +=
                  gcols(row, static_cast<Eigen::Index>(y * w + xx));
            }
          }
        }
    return gx;
  }
};

/// Fully connected layer y = W x + b.
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  Param weight;  // (out, in)
  Param bias;    // (out)

  Dense() = default;
  Dense(const std::string& name, std::size_t in_dim, std::size_t out_dim, std::mt19937_64& rng, double gain = 1.0)
      : in(in_dim), out(out_dim), weight(name + ".weight", {out_dim, in_dim}), bias(name + ".bias", {out_dim}) {
    init_uniform(weight, gain * std::sqrt(3.0 / static_cast<double>(in_dim)), rng);
  }

  ParamList params() { return {&weight, &bias}; }

  std::vector<double> forward(std::span<const double> x) const {
    require(x.size() == in, ErrorCode::kDimsMismatch, weight.name + ": input size mismatch");
    std::vector<double> y(bias.value);
    ConstMatrixMap wm(weight.value.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    VectorMap(y.data(), static_cast<Eigen::Index>(out)).noalias() +=
        wm * ConstVectorMap(x.data(), static_cast<Eigen::Index>(in));
    return y;
  }

  std::vector<double> backward(std::span<const double> x, std::span<const double> gy, std::span<double> gw,
                               std::span<double> gb) const {
    ConstVectorMap gyv(gy.data(), static_cast<Eigen::Index>(out));
    ConstVectorMap xv(x.data(), static_cast<Eigen::Index>(in));
    MatrixMap(gw.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)).noalias() +=
        gyv * xv.transpose();
    VectorMap(gb.data(), static_cast<Eigen::Index>(out)) += gyv;
    std::vector<double> gx(in);
    ConstMatrixMap wm(weight.value.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    VectorMap(gx.data(), static_cast<Eigen::Index>(in)).noalias() = wm.transpose() * gyv;
    return gx;
  }
};

namespace detail {

struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

// Half-pixel-centre bilinear taps (PyTorch align_corners = false).
inline Taps bilinear_taps(std::size_t in, std::size_t out) {
  Taps t;
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    t.lo.push_back(lo);
    t.hi.push_back(std::min(lo + 1, in - 1));
    t.frac.push_back(src - static_cast<double>(lo));
  }
  return t;
}

}  // namespace detail

inline Tensor resize_bilinear(const Tensor& x, std::size_t height, std::size_t width) {
  if (x.height() == height && x.width() == width) return x;
  const auto ty = detail::bilinear_taps(x.height(), height);
  const auto tx = detail::bilinear_taps(x.width(), width);
  Tensor y(x.channels(), height, width);
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const double a = x.at(c, ty.lo[i], tx.lo[j]), b = x.at(c, ty.lo[i], tx.hi[j]);
        const double d = x.at(c, ty.hi[i], tx.lo[j]), e = x.at(c, ty.hi[i], tx.hi[j]);
        const double top = a + (b - a) * tx.frac[j];
        const double bot = d + (e - d) * tx.frac[j];
        y.at(c, i, j) = top + (bot - top) * ty.frac[i];
      }
  return y;
}

/// Adjoint of resize_bilinear.
inline Tensor resize_bilinear_backward(const Tensor& gy, std::size_t in_height, std::size_t in_width) {
  if (gy.height() == in_height && gy.width() == in_width) return gy;
  const auto ty = detail::bilinear_taps(in_height, gy.height());
  const auto tx = detail::bilinear_taps(in_width, gy.width());
  Tensor gx(gy.channels(), in_height, in_width);
  for (std::size_t c = 0; c < gy.channels(); ++c)
    for (std::size_t i = 0; i < gy.height(); ++i)
      for (std::size_t j = 0; j < gy.width(); ++j) {
        const double g = gy.at(c, i, j);
        const double fy = ty.frac[i], fx = tx.frac[j];
        gx.at(c, ty.lo[i], tx.lo[j]) += g * (1 - fy) * (1 - fx);
        gx.at(c, ty.lo[i], tx.hi[j]) += g * (1 - fy) * fx;
        gx.at(c, ty.hi[i], tx.lo[j]) += g * fy * (1 - fx);
        gx.at(c, ty.hi[i], tx.hi[j]) += g * fy * fx;
      }
  return gx;
}

/// 2x2 average pooling; odd trailing rows/columns are dropped.
inline Tensor avg_pool2(const Tensor& x) {
  Tensor y(x.channels(), x.height() / 2, x.width() / 2);
  for (std::size_t c = 0; c < y.channels(); ++c)
    for (std::size_t i = 0; i < y.height(); ++i)
      for (std::size_t j = 0; j < y.width(); ++j)
        y.at(c, i, j) = 0.25 * (x.at(c, 2 * i, 2 * j) + x.at(c, 2 * i, 2 * j + 1) + x.at(c, 2 * i + 1, 2 * j) +
                                x.at(c, 2 * i + 1, 2 * j + 1));
  return y;
}

inline Tensor avg_pool2_backward(const Tensor& gy, std::size_t in_height, std::size_t in_width) {
  Tensor gx(gy.channels(), in_height, in_width);
  for (std::size_t c = 0; c < gy.channels(); ++c)
    for (std::size_t i = 0; i < gy.height(); ++i)
      for (std::size_t j = 0; j < gy.width(); ++j) {
        const double g = 0.25 * gy.at(c, i, j);
        gx.at(c, 2 * i, 2 * j) += g;
        gx.at(c, 2 * i, 2 * j + 1) += g;
        gx.at(c, 2 * i + 1, 2 * j) += g;
        gx.at(c, 2 * i + 1, 2 * j + 1) += g;
      }
  return gx;
}

/// Stacks tensors along the channel axis; all must share a grid.
inline Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  std::size_t channels = 0;
  for (const auto* p : parts) {
    require(p->same_grid(*parts.front()), ErrorCode::kDimsMismatch, "concat: grids differ");
    channels += p->channels();
  }
  Tensor out(channels, parts.front()->height(), parts.front()->width());
  auto it = out.storage().begin();
  for (const auto* p : parts) it = std::copy(p->storage().begin(), p->storage().end(), it);
  return out;
}

inline Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  require(begin + count <= x.channels(), ErrorCode::kDimsMismatch, "channel slice out of range");
  Tensor out(count, x.height(), x.width());
  std::copy_n(x.storage().begin() + static_cast<std::ptrdiff_t>(begin * x.plane()), count * x.plane(),
              out.storage().begin());
  return out;
}

inline void add_into(Tensor& acc, const Tensor& x) {
  require(acc.same_shape(x), ErrorCode::kDimsMismatch, "add: shapes differ");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay and a learning rate per parameter.
class AdamW {
 public:
  using Options = AdamWOptions;

  AdamW(ParamList params, std::vector<double> lrs, Options opt = {})
      : params_(std::move(params)), lrs_(std::move(lrs)), opt_(opt) {
    require(params_.size() == lrs_.size(), ErrorCode::kInvalidArgument, "one learning rate per parameter");
    for (const auto* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  void step(const Grads& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& w = params_[i]->value;
      const auto& g = grads.buffers[i];
      const double lr = lrs_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        m_[i][j] = opt_.beta1 * m_[i][j] + (1.0 - opt_.beta1) * g[j];
        v_[i][j] = opt_.beta2 * v_[i][j] + (1.0 - opt_.beta2) * g[j] * g[j];
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        w[j] -= lr * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * w[j]);
      }
    }
  }

  std::uint64_t steps() const noexcept { return t_; }
  void set_steps(std::uint64_t t) noexcept { t_ = t; }
  std::vector<std::vector<double>>& first_moments() noexcept { return m_; }
  std::vector<std::vector<double>>& second_moments() noexcept { return v_; }
  const ParamList& params() const noexcept { return params_; }

 private:
  ParamList params_;
  std::vector<double> lrs_;
  Options opt_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace augsal::nn
