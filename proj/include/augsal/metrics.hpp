#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "augsal/checkpoint.hpp"
#include "augsal/error.hpp"
#include "augsal/objectives.hpp"
#include "augsal/tensor.hpp"

namespace augsal {

/// Fixation raster convolved with an untruncated Gaussian (zero outside the image), scaled to max 1.
inline SaliencyMap blur_fixations(const FixationSet& fix, double sigma = 19.0) {
  require(sigma > 0.0 && std::isfinite(sigma), ErrorCode::kInvalidArgument, "blur sigma must be positive");
  require(!fix.empty(), ErrorCode::kInvalidArgument, "cannot blur an empty fixation set");
  const std::size_t h = fix.height(), w = fix.width();
  const auto raster = fix.raster();
  const std::size_t n = std::max(h, w);
  std::vector<double> kernel(n);
  for (std::size_t d = 0; d < n; ++d) kernel[d] = std::exp(-static_cast<double>(d * d) / (2.0 * sigma * sigma));

  std::vector<double> rows(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (!raster[y * w + x]) continue;
      for (std::size_t xx = 0; xx < w; ++xx) rows[y * w + xx] += kernel[xx > x ? xx - x : x - xx];
    }
  Tensor out(1, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t yy = 0; yy < h; ++yy) {
      const double k = kernel[yy > y ? yy - y : y - yy];
      for (std::size_t x = 0; x < w; ++x) out[yy * w + x] += k * rows[y * w + x];
    }
  double mx = 0.0;
  for (double v : out.values()) mx = std::max(mx, v);
  for (auto& v : out.values()) v /= mx;
  return SaliencyMap(std::move(out));
}

namespace detail {

/// Area under the ROC curve of positives vs negatives: P(pos > neg) + 0.5 P(pos == neg).
inline double roc_area(std::vector<double> pos, std::vector<double> neg) {
  require(!pos.empty() && !neg.empty(), ErrorCode::kInvalidArgument, "ROC area needs positives and negatives");
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  // Count, for each positive, negatives strictly below and equal.
  double wins = 0.0;
  std::size_t lo = 0, hi = 0;
  for (double p : pos) {
    while (lo < neg.size() && neg[lo] < p) ++lo;
    while (hi < neg.size() && neg[hi] <= p) ++hi;
    wins += static_cast<double>(lo) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

inline void require_map_matches(const SaliencyMap& s, const FixationSet& fix) {
  require(s.height() == fix.height() && s.width() == fix.width(), ErrorCode::kDimsMismatch,
          "saliency map and fixations disagree on image size");
  require(!fix.empty(), ErrorCode::kInvalidArgument, "metric needs at least one fixation");
}

inline bool is_constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

}  // namespace detail

/// ROC area with fixated pixels as positives and every other pixel as a negative.
inline double auc_judd(const SaliencyMap& pred, const FixationSet& fix) {
  detail::require_map_matches(pred, fix);
  if (detail::is_constant(pred.values())) return 0.5;
  const auto raster = fix.raster();
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < raster.size(); ++i) (raster[i] ? pos : neg).push_back(pred[i]);
  if (neg.empty()) return 0.5;
  return detail::roc_area(std::move(pos), std::move(neg));
}

/// Fixations of other images mapped into this image's pixel grid (proportional rescaling).
inline std::vector<unsigned char> shuffled_negatives(const FixationSet& target, const std::vector<const FixationSet*>& others) {
  std::vector<unsigned char> out(target.height() * target.width(), 0);
  for (const auto* o : others)
    for (const auto& p : o->points()) {
      const auto x = static_cast<std::size_t>(p.x) * target.width() / o->width();
      const auto y = static_cast<std::size_t>(p.y) * target.height() / o->height();
      out[y * target.width() + x] = 1;
    }
  return out;
}

/// ROC area with fixated pixels as positives and a shuffle set of other images' fixated pixels as negatives.
inline double sauc(const SaliencyMap& pred, const FixationSet& fix, const std::vector<unsigned char>& negatives) {
  detail::require_map_matches(pred, fix);
  require(negatives.size() == pred.size(), ErrorCode::kDimsMismatch, "shuffle set must match the map");
  if (detail::is_constant(pred.values())) return 0.5;
  const auto raster = fix.raster();
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < raster.size(); ++i) {
    if (raster[i]) pos.push_back(pred[i]);
    if (negatives[i]) neg.push_back(pred[i]);
  }
  require(!neg.empty(), ErrorCode::kInvalidArgument, "sAUC needs a nonempty shuffle set");
  return detail::roc_area(std::move(pos), std::move(neg));
}

/// Mean z-score of the prediction over fixated pixels (sample standard deviation).
inline double nss(const SaliencyMap& pred, const FixationSet& fix) {
  detail::require_map_matches(pred, fix);
  const auto v = pred.values();
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  require(ss > 0.0 && v.size() > 1, ErrorCode::kNumerical, "NSS undefined for a constant map");
  const double sd = std::sqrt(ss / (n - 1.0));
  const auto raster = fix.raster();
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < raster.size(); ++i)
    if (raster[i]) {
      acc += (v[i] - mean) / sd;
      ++count;
    }
  return acc / static_cast<double>(count);
}

/// Histogram intersection of the sum-normalized maps.
inline double sim(const SaliencyMap& pred, const SaliencyMap& gt) {
  require(pred.tensor().same_shape(gt.tensor()), ErrorCode::kDimsMismatch, "sim: maps differ in shape");
  const double za = detail::checked_sum(pred.values(), "predicted map");
  const double zb = detail::checked_sum(gt.values(), "ground-truth map");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::min(pred[i] / za, gt[i] / zb);
  return s;
}

/// KL(gt || pred) on sum-normalized maps with the loss's epsilon convention.
inline double kl_metric(const SaliencyMap& pred, const SaliencyMap& gt, double eps = 1e-7) { return kld(gt, pred, eps); }

inline double cc_metric(const SaliencyMap& pred, const SaliencyMap& gt) { return cc(gt, pred); }

struct MetricReport {
  double auc_judd = 0.0;
  double sauc = 0.0;
  double nss = 0.0;
  double cc = 0.0;
  double sim = 0.0;
  double kl = 0.0;
  std::size_t n_images = 0;

  Json to_json() const {
    Json j;
    j["AUC"] = auc_judd;
    j["KL"] = kl;
    j["NSS"] = nss;
    j["CC"] = cc;
    j["SAUC"] = sauc;
    j["SIM"] = sim;
    j["n_images"] = n_images;
    return j;
  }

  /// Aligned table in the column order AUC, KL, NSS, CC, SAUC, SIM.
  std::string table(const std::string& label = "model") const {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof buf, "%-12s %8s %8s %8s %8s %8s %8s %8s\n", "", "AUC", "KL", "NSS", "CC", "SAUC",
                  "SIM", "images");
    out += buf;
    std::snprintf(buf, sizeof buf, "%-12s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8zu\n", label.c_str(), auc_judd, kl, nss,
                  cc, sauc, sim, n_images);
    out += buf;
    return out;
  }
};

struct EvalItem {
  SaliencyMap prediction;
  SaliencyMap ground_truth;
  FixationSet fixations;
};

struct MetricsConfig {
  double blur_sigma = 19.0;
  std::size_t shuffle_images = 10;
  std::uint64_t seed = 0;
  double eps = 1e-7;
};

/// Per-image metrics; sAUC negatives come from `shuffle_images` other images picked with a seeded shuffle.
inline std::vector<MetricReport> evaluate_per_image(const std::vector<EvalItem>& items, const MetricsConfig& cfg) {
  require(!items.empty(), ErrorCode::kData, "evaluation needs at least one image");
  std::vector<MetricReport> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    MetricReport r;
    r.n_images = 1;
    r.auc_judd = auc_judd(it.prediction, it.fixations);
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < items.size(); ++j)
      if (j != i) order.push_back(j);
    std::mt19937_64 rng(cfg.seed ^ (0x5a0c0000ULL + i));
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(std::min(order.size(), cfg.shuffle_images));
    std::vector<const FixationSet*> others;
    for (auto j : order) others.push_back(&items[j].fixations);
    // A lone image has no other fixations; its sAUC falls back to all non-fixated pixels.
    if (others.empty()) {
      r.sauc = r.auc_judd;
    } else {
      r.sauc = sauc(it.prediction, it.fixations, shuffled_negatives(it.fixations, others));
    }
    r.nss = nss(it.prediction, it.fixations);
    r.cc = cc_metric(it.prediction, it.ground_truth);
    r.sim = sim(it.prediction, it.ground_truth);
    r.kl = kl_metric(it.prediction, it.ground_truth, cfg.eps);
    out.push_back(r);
  }
  return out;
}

inline MetricReport average(const std::vector<MetricReport>& rows) {
  MetricReport m;
  for (const auto& r : rows) {
    m.auc_judd += r.auc_judd;
    m.sauc += r.sauc;
    m.nss += r.nss;
    m.cc += r.cc;
    m.sim += r.sim;
    m.kl += r.kl;
  }
  const auto n = static_cast<double>(rows.size());
  m.auc_judd /= n;
  m.sauc /= n;
  m.nss /= n;
  m.cc /= n;
  m.sim /= n;
  m.kl /= n;
  m.n_images = rows.size();
  return m;
}

inline MetricReport evaluate(const std::vector<EvalItem>& items, const MetricsConfig& cfg = {}) {
  return average(evaluate_per_image(items, cfg));
}

}  // namespace augsal
