#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "augsal/augmentor.hpp"
#include "augsal/checkpoint.hpp"
#include "augsal/dataset.hpp"
#include "augsal/editor.hpp"
#include "augsal/nn.hpp"
#include "augsal/objectives.hpp"
#include "augsal/photometrics.hpp"
#include "augsal/readouts.hpp"
#include "augsal/tiny_backbone.hpp"

namespace augsal {

namespace detail {

inline ImageTensor mirror(const ImageTensor& img) {
  Tensor out(3, img.height(), img.width());
  const std::size_t w = img.width();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < img.height(); ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y, w - 1 - x);
  return ImageTensor(std::move(out));
}

inline PatchRegion mirror(const PatchRegion& r, std::size_t width) {
  const int w = static_cast<int>(width);
  return PatchRegion(w - r.x1, r.y0, w - r.x0, r.y1);
}

/// Shifts a region by up to `jitter` pixels per axis without leaving the image.
inline PatchRegion jitter(const PatchRegion& r, std::size_t height, std::size_t width, int jitter,
                          std::mt19937_64& rng) {
  if (jitter <= 0) return r;
  std::uniform_int_distribution<int> d(-jitter, jitter);
  const int dx = std::clamp(d(rng), -r.x0, static_cast<int>(width) - r.x1);
  const int dy = std::clamp(d(rng), -r.y0, static_cast<int>(height) - r.y1);
  return PatchRegion(r.x0 + dx, r.y0 + dy, r.x1 + dx, r.y1 + dy);
}

inline void append_params(nn::ParamList& out, std::vector<double>& lrs, const nn::ParamList& add, double lr) {
  for (auto* p : add) {
    out.push_back(p);
    lrs.push_back(lr);
  }
}

}  // namespace detail

struct ReadoutTrainOptions {
  std::size_t steps = 20000;
  std::size_t batch_size = 8;
  double lr_features = 5e-5;
  double lr_readouts = 1e-4;
  double patch_min = 0.2;
  double patch_max = 0.5;
  bool mirror = true;
  std::size_t box_jitter = 1;
  LossWeights weights;
  std::uint64_t seed = 0;
};

struct ReadoutLogRow {
  std::size_t step = 0;
  double total = 0.0;
  double rgb = 0.0;
  double brightness = 0.0;
  double local_contrast = 0.0;
  double global_contrast = 0.0;
  double cross_entropy = 0.0;
};

/// AdamW over the aggregation layer (lr_features) and both feature readouts (lr_readouts). The
/// denoiser and autoencoder are only read.
class ReadoutTrainer {
 public:
  ReadoutTrainer(TinyBackbone& backbone, Llfr& llfr, Hlfr& hlfr, const DatasetManifest& data,
                 ReadoutTrainOptions opt)
      : bb_(backbone), llfr_(llfr), hlfr_(hlfr), data_(data), opt_(std::move(opt)) {
    detail::append_params(params_, lrs_, bb_.aggregation_params(), opt_.lr_features);
    detail::append_params(params_, lrs_, llfr_.params(), opt_.lr_readouts);
    detail::append_params(params_, lrs_, hlfr_.params(), opt_.lr_readouts);
    adam_ = std::make_unique<nn::AdamW>(params_, lrs_);
    opt_.weights.validate();
    require(!data_.entries.empty(), ErrorCode::kData, "readout training needs a nonempty dataset");
    for (const auto& e : data_.entries) {
      raw_.push_back(bb_.raw_features(e.image, e.prompt()));
      if (opt_.mirror) {
        mirrored_.push_back(detail::mirror(e.image));
        raw_mirrored_.push_back(bb_.raw_features(mirrored_.back(), e.prompt()));
      }
    }
  }

  std::size_t steps_done() const noexcept { return static_cast<std::size_t>(adam_->steps()); }
  nn::AdamW& optimizer() noexcept { return *adam_; }

  ReadoutLogRow step() {
    const std::size_t step = steps_done();
    auto rng = nn::step_rng(opt_.seed, 0x4ead, step);
    std::uniform_int_distribution<std::size_t> pick(0, data_.entries.size() - 1);
    nn::Grads g(params_);
    const std::size_t n_agg = bb_.aggregation_params().size();
    const std::size_t n_llfr = llfr_.params().size();
    ReadoutLogRow row;
    row.step = step;
    for (std::size_t b = 0; b < opt_.batch_size; ++b) {
      const std::size_t idx = pick(rng);
      const auto& e = data_.entries[idx];
      const bool flip = opt_.mirror && std::bernoulli_distribution(0.5)(rng);
      const ImageTensor& image = flip ? mirrored_[idx] : e.image;
      const Tensor& raw = flip ? raw_mirrored_[idx] : raw_[idx];
      const PatchRegion patch = sample_patch(image.height(), image.width(), opt_.patch_min, opt_.patch_max, rng);
      const PropertyVector target = property_vector(image, patch);
      const FeatureBundle f = bb_.aggregate(raw);

      Llfr::Cache lc;
      ReadoutPrediction pred;
      pred.properties = llfr_.forward(f.low_level(), patch, &lc);
      Hlfr::Cache hc;
      int label = 0;
      if (!e.boxes.empty()) {
        const auto& box = e.boxes[std::uniform_int_distribution<std::size_t>(0, e.boxes.size() - 1)(rng)];
        label = box.category_id;
        const PatchRegion region = flip ? detail::mirror(box.box, image.width()) : box.box;
        pred.logits = hlfr_.forward(
            f.high_level(), detail::jitter(region, image.height(), image.width(), static_cast<int>(opt_.box_jitter), rng), &hc);
      }
      const ReadoutGrad lg = readout_loss_with_grad(pred, target, label, opt_.weights);
      const auto& w = opt_.weights.lambda;
      for (std::size_t c = 0; c < 3; ++c) row.rgb += w[1] * sq(pred.properties[c] - target[c]);
      row.brightness += w[2] * sq(pred.properties[kBrightness] - target[kBrightness]);
      row.local_contrast += sq(pred.properties[kLocalContrast] - target[kLocalContrast]);
      row.global_contrast += w[3] * sq(pred.properties[kGlobalContrast] - target[kGlobalContrast]);
      if (!pred.logits.empty()) row.cross_entropy += w[4] * cross_entropy(pred.logits, label);
      row.total += lg.value;

      const Tensor g_low = llfr_.backward(f.low_level(), lc, lg.d_properties, g, n_agg);
      Tensor g_high(f.high_level().channels(), f.height(), f.width());
      if (!pred.logits.empty()) g_high = hlfr_.backward(hc, lg.d_logits, g, n_agg + n_llfr);
      bb_.aggregate_backward(raw, g_low, g_high, g, 0);
    }
    const double inv = 1.0 / static_cast<double>(opt_.batch_size);
    g.scale(inv);
    for (double* v : {&row.total, &row.rgb, &row.brightness, &row.local_contrast, &row.global_contrast,
                      &row.cross_entropy})
      *v *= inv;
    require(std::isfinite(row.total), ErrorCode::kNumerical,
            "readout loss diverged at step " + std::to_string(step) + " (value " + std::to_string(row.total) + ")");
    adam_->step(g);
    return row;
  }

  std::vector<ReadoutLogRow> run(const std::function<void(const ReadoutLogRow&)>& on_step = {}) {
    std::vector<ReadoutLogRow> log;
    while (steps_done() < opt_.steps) {
      log.push_back(step());
      if (on_step) on_step(log.back());
    }
    return log;
  }

 private:
  static double sq(double x) { return x * x; }

  TinyBackbone& bb_;
  Llfr& llfr_;
  Hlfr& hlfr_;
  const DatasetManifest& data_;
  ReadoutTrainOptions opt_;
  nn::ParamList params_;
  std::vector<double> lrs_;
  std::unique_ptr<nn::AdamW> adam_;
  std::vector<Tensor> raw_;
  std::vector<ImageTensor> mirrored_;
  std::vector<Tensor> raw_mirrored_;
};

struct SaliencyTrainOptions {
  std::size_t steps = 22000;
  std::size_t batch_size = 8;
  double lr = 1e-4;
  LossWeights weights;
  std::uint64_t seed = 0;
};

struct SaliencyLogRow {
  std::size_t step = 0;
  double total = 0.0;
  double saliency = 0.0;
  double edit = 0.0;
  std::size_t edited = 0;
};

/// AdamW over the saliency readout; features come from the frozen backbone and aggregation layer.
/// With an augmentor, each sample follows its sampling rule and edited samples add the edit loss.
class SaliencyTrainer {
 public:
  SaliencyTrainer(const TinyBackbone& backbone, SaliencyReadout& sr, const DatasetManifest& data,
                  SaliencyTrainOptions opt, const EditPipeline* pipeline = nullptr,
                  const AugmentConfig* augment = nullptr)
      : bb_(backbone), sr_(sr), data_(data), opt_(std::move(opt)), pipeline_(pipeline), aug_(augment),
        params_(sr.params()), adam_(params_, std::vector<double>(params_.size(), opt_.lr)) {
    opt_.weights.validate();
    require(!data_.entries.empty(), ErrorCode::kData, "saliency training needs a nonempty dataset");
    require((pipeline_ == nullptr) == (aug_ == nullptr), ErrorCode::kInvalidArgument,
            "augmentation needs both an edit pipeline and an augmentor config");
    if (aug_) aug_->validate();
    for (const auto& e : data_.entries) {
      require(e.saliency.has_value(), ErrorCode::kData, "saliency training needs ground truth for " + e.id);
      inputs_.push_back(input_of(bb_.extract_features(e.image, e.prompt())));
    }
  }

  std::size_t steps_done() const noexcept { return static_cast<std::size_t>(adam_.steps()); }
  nn::AdamW& optimizer() noexcept { return adam_; }

  SaliencyLogRow step() {
    const std::size_t step = steps_done();
    auto rng = nn::step_rng(opt_.seed, 0x5a11, step);
    std::mt19937_64 aug_rng = nn::step_rng(aug_ ? aug_->seed : 0, 0xa06, step);
    std::uniform_int_distribution<std::size_t> pick(0, data_.entries.size() - 1);
    nn::Grads g(params_);
    SaliencyLogRow row;
    row.step = step;
    for (std::size_t b = 0; b < opt_.batch_size; ++b) {
      const std::size_t idx = pick(rng);
      const auto& e = data_.entries[idx];
      const std::size_t h = e.image.height(), w = e.image.width();
      std::optional<AugmentedSample> as;
      if (aug_) {
        const AugmentDecision d = sample_step(*aug_, aug_rng);
        if (!d.original) as = augmented_batch(e.image, *e.saliency, e.prompt(), d, *pipeline_, *aug_);
      }
      if (!as) {
        SaliencyReadout::Cache c;
        const Tensor pred = sr_.forward_raw(inputs_[idx], h, w, &c);
        const LossValue l = saliency_loss_with_grad(e.saliency->values(), pred.values(), opt_.weights);
        row.saliency += l.value;
        sr_.backward(c, Tensor(1, h, w, l.grad), g, 0);
        continue;
      }
      ++row.edited;
      const Tensor edited_input = input_of(bb_.extract_features(as->input, e.prompt()));
      SaliencyReadout::Cache ce, co;
      const Tensor pred_e = sr_.forward_raw(edited_input, h, w, &ce);
      const Tensor pred_o = sr_.forward_raw(inputs_[idx], h, w, &co);
      Tensor g_e(1, h, w), g_o(1, h, w);
      if (aug_->target != AugmentTarget::kConsistency) {
        const LossValue l = saliency_loss_with_grad(as->target.values(), pred_e.values(), opt_.weights);
        row.saliency += l.value;
        for (std::size_t i = 0; i < g_e.size(); ++i) g_e[i] += l.grad[i];
      }
      const double we = aug_->edit_loss_weight;
      const bool edited_pred = aug_->roles == EditLossRoles::kOriginalTarget;
      const LossValue el = edit_loss_with_grad(edited_pred ? pred_o.values() : pred_e.values(),
                                               edited_pred ? pred_e.values() : pred_o.values(),
                                               as->mask_image->values(), opt_.weights.eps);
      row.edit += we * el.value;
      Tensor& ge = edited_pred ? g_e : g_o;
      for (std::size_t i = 0; i < ge.size(); ++i) ge[i] += we * el.grad[i];
      sr_.backward(ce, g_e, g, 0);
      if (!edited_pred) sr_.backward(co, g_o, g, 0);
    }
    const double inv = 1.0 / static_cast<double>(opt_.batch_size);
    g.scale(inv);
    row.saliency *= inv;
    row.edit *= inv;
    row.total = row.saliency + row.edit;
    require(std::isfinite(row.total), ErrorCode::kNumerical,
            "saliency loss diverged at step " + std::to_string(step) + " (value " + std::to_string(row.total) + ")");
    adam_.step(g);
    return row;
  }

  std::vector<SaliencyLogRow> run(const std::function<void(const SaliencyLogRow&)>& on_step = {}) {
    std::vector<SaliencyLogRow> log;
    while (steps_done() < opt_.steps) {
      log.push_back(step());
      if (on_step) on_step(log.back());
    }
    return log;
  }

  static Tensor input_of(const FeatureBundle& f) { return nn::concat_channels({&f.low_level(), &f.high_level()}); }

 private:
  const TinyBackbone& bb_;
  SaliencyReadout& sr_;
  const DatasetManifest& data_;
  SaliencyTrainOptions opt_;
  const EditPipeline* pipeline_;
  const AugmentConfig* aug_;
  nn::ParamList params_;
  nn::AdamW adam_;
  std::vector<Tensor> inputs_;
};

/// Saliency prediction for an image through the frozen backbone.
inline SaliencyMap predict_saliency(const TinyBackbone& bb, const SaliencyReadout& sr, const ImageTensor& img,
                                    const Prompt& prompt) {
  return sr.forward(bb.extract_features(img, prompt));
}

}  // namespace augsal
