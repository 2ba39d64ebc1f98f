#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "augsal/augmentor.hpp"
#include "augsal/backbone.hpp"
#include "augsal/checkpoint.hpp"
#include "augsal/editor.hpp"
#include "augsal/metrics.hpp"
#include "augsal/objectives.hpp"
#include "augsal/readouts.hpp"

namespace augsal {

struct SyntheticConfig {
  std::size_t n_images = 500;
  std::size_t height = 32;
  std::size_t width = 32;
  double val_fraction = 0.2;
};

struct TrainingConfig {
  std::size_t backbone_steps = 2000;
  std::size_t backbone_batch_size = 4;
  double backbone_lr = 1e-3;
  std::size_t readout_steps = 20000;
  std::size_t readout_batch_size = 8;
  double lr_features = 5e-5;
  double lr_readouts = 1e-4;
  std::size_t saliency_steps = 22000;
  std::size_t saliency_batch_size = 8;
  double saliency_lr = 1e-4;
  double patch_min_frac = 0.2;
  double patch_max_frac = 0.5;
  std::size_t stats_patches_per_image = 4;
  bool readout_mirror = true;
  std::size_t readout_box_jitter = 1;
  std::size_t checkpoint_every = 500;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path dataset_root;
  std::filesystem::path output_dir;
  SyntheticConfig synthetic;
  BackboneConfig backbone;
  ReadoutConfig readouts;
  LossWeights loss_weights;
  TrainingConfig training;
  EditorConfig editor;
  AugmentConfig augmentor;
  MetricsConfig metrics;
};

namespace detail {

/// Reads keys out of one JSON object and rejects any key it was not asked about.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j_.is_object(), ErrorCode::kConfig, path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorCode::kConfig, "invalid value for " + name(key));
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const Json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  Section sub(const char* key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, name(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      require(seen_.count(k) != 0, ErrorCode::kConfig, "unknown config key " + name(k));
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline const char* pivot_name(ContrastPivot p) {
  return p == ContrastPivot::kGammaProjected ? "gamma_projected" : "channel_mean";
}
inline const char* target_name(AugmentTarget t) {
  switch (t) {
    case AugmentTarget::kBoosted: return "boosted";
    case AugmentTarget::kOriginal: return "original";
    case AugmentTarget::kConsistency: return "consistency";
  }
  return "boosted";
}
inline const char* roles_name(EditLossRoles r) {
  return r == EditLossRoles::kOriginalTarget ? "original_target" : "edited_target";
}

}  // namespace detail

inline Json to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["dataset_root"] = c.dataset_root.string();
  j["output_dir"] = c.output_dir.string();
  j["synthetic"] = {{"n_images", c.synthetic.n_images},
                    {"height", c.synthetic.height},
                    {"width", c.synthetic.width},
                    {"val_fraction", c.synthetic.val_fraction}};
  const auto& b = c.backbone;
  j["backbone"] = {{"implementation", b.implementation == BackboneKind::kTiny ? "tiny" : "pretrained_adapter"},
                   {"latent_channels", b.latent_channels},
                   {"downsample_factor", b.downsample_factor},
                   {"feature_channels_low", b.feature_channels_low},
                   {"feature_channels_high", b.feature_channels_high},
                   {"num_denoise_steps", b.num_denoise_steps},
                   {"inversion_steps", b.inversion_steps},
                   {"num_timesteps", b.num_timesteps},
                   {"hidden_channels", b.hidden_channels},
                   {"bottleneck_channels", b.bottleneck_channels},
                   {"attention_dim", b.attention_dim},
                   {"embedding_dim", b.embedding_dim},
                   {"inject_all_steps", b.inject_all_steps}};
  j["readouts"] = {{"llfr_hidden_dims", c.readouts.llfr_hidden_dims},
                   {"hlfr_conv_channels", c.readouts.hlfr_conv_channels},
                   {"hlfr_pool_grid", c.readouts.hlfr_pool_grid},
                   {"num_classes", c.readouts.num_classes},
                   {"sr_channels", c.readouts.sr_channels}};
  Json lw;
  for (std::size_t i = 1; i <= 6; ++i) lw["lambda_" + std::to_string(i)] = c.loss_weights.lambda[i];
  lw["eps"] = c.loss_weights.eps;
  j["loss_weights"] = lw;
  const auto& t = c.training;
  j["training"] = {{"backbone_steps", t.backbone_steps},
                   {"backbone_batch_size", t.backbone_batch_size},
                   {"backbone_lr", t.backbone_lr},
                   {"readout_steps", t.readout_steps},
                   {"readout_batch_size", t.readout_batch_size},
                   {"lr_features", t.lr_features},
                   {"lr_readouts", t.lr_readouts},
                   {"saliency_steps", t.saliency_steps},
                   {"saliency_batch_size", t.saliency_batch_size},
                   {"saliency_lr", t.saliency_lr},
                   {"patch_min_frac", t.patch_min_frac},
                   {"patch_max_frac", t.patch_max_frac},
                   {"stats_patches_per_image", t.stats_patches_per_image},
                   {"readout_mirror", t.readout_mirror},
                   {"readout_box_jitter", t.readout_box_jitter},
                   {"checkpoint_every", t.checkpoint_every}};
  j["editor"] = {{"pivot", detail::pivot_name(c.editor.pivot)},
                 {"max_halvings", c.editor.max_halvings},
                 {"region_threshold", c.editor.region_threshold}};
  const auto& a = c.augmentor;
  Json kinds = Json::array();
  for (auto k : a.edit_kinds) kinds.push_back(to_string(k));
  Json ranges;
  for (std::size_t k = 0; k < 3; ++k)
    ranges[to_string(static_cast<EditKind>(k))] = {a.alpha_range[k].first, a.alpha_range[k].second};
  j["augmentor"] = {{"p", a.p},
                    {"edit_kinds", kinds},
                    {"alpha_range", ranges},
                    {"color_palette", a.color_palette},
                    {"boost", a.boost},
                    {"target", detail::target_name(a.target)},
                    {"edit_loss_roles", detail::roles_name(a.roles)},
                    {"edit_loss_weight", a.edit_loss_weight},
                    {"seed", a.seed}};
  j["metrics"] = {{"blur_sigma", c.metrics.blur_sigma},
                  {"shuffle_images", c.metrics.shuffle_images},
                  {"seed", c.metrics.seed},
                  {"eps", c.metrics.eps}};
  return j;
}

inline RunConfig parse_config(const Json& j) {
  RunConfig c;
  detail::Section root(j, "");
  require(j.contains("seed"), ErrorCode::kConfig, "missing required config key seed");
  root.get("seed", c.seed);
  std::string s;
  root.get("dataset_root", s);
  c.dataset_root = s;
  s.clear();
  root.get("output_dir", s);
  c.output_dir = s;
  require(!c.dataset_root.empty(), ErrorCode::kConfig, "missing required config key dataset_root");
  require(!c.output_dir.empty(), ErrorCode::kConfig, "missing required config key output_dir");

  {
    auto sec = root.sub("synthetic");
    sec.get("n_images", c.synthetic.n_images);
    sec.get("height", c.synthetic.height);
    sec.get("width", c.synthetic.width);
    sec.get("val_fraction", c.synthetic.val_fraction);
    sec.finish();
    require(c.synthetic.n_images >= 1, ErrorCode::kConfig, "synthetic.n_images must be >= 1");
    require(c.synthetic.val_fraction >= 0.0 && c.synthetic.val_fraction < 1.0, ErrorCode::kConfig,
            "synthetic.val_fraction must be in [0, 1)");
  }
  {
    auto sec = root.sub("backbone");
    auto& b = c.backbone;
    std::string impl = "tiny";
    sec.get("implementation", impl);
    require(impl == "tiny" || impl == "pretrained_adapter", ErrorCode::kConfig,
            "backbone.implementation must be tiny or pretrained_adapter");
    b.implementation = impl == "tiny" ? BackboneKind::kTiny : BackboneKind::kPretrainedAdapter;
    sec.get("latent_channels", b.latent_channels);
    sec.get("downsample_factor", b.downsample_factor);
    sec.get("feature_channels_low", b.feature_channels_low);
    sec.get("feature_channels_high", b.feature_channels_high);
    sec.get("num_denoise_steps", b.num_denoise_steps);
    sec.get("inversion_steps", b.inversion_steps);
    sec.get("num_timesteps", b.num_timesteps);
    sec.get("hidden_channels", b.hidden_channels);
    sec.get("bottleneck_channels", b.bottleneck_channels);
    sec.get("attention_dim", b.attention_dim);
    sec.get("embedding_dim", b.embedding_dim);
    sec.get("inject_all_steps", b.inject_all_steps);
    sec.finish();
    b.seed = c.seed;
    b.validate();
  }
  {
    auto sec = root.sub("readouts");
    sec.get("llfr_hidden_dims", c.readouts.llfr_hidden_dims);
    sec.get("hlfr_conv_channels", c.readouts.hlfr_conv_channels);
    sec.get("hlfr_pool_grid", c.readouts.hlfr_pool_grid);
    sec.get("num_classes", c.readouts.num_classes);
    sec.get("sr_channels", c.readouts.sr_channels);
    sec.finish();
    c.readouts.seed = c.seed;
    c.readouts.validate();
  }
  {
    auto sec = root.sub("loss_weights");
    for (std::size_t i = 1; i <= 6; ++i) sec.get(("lambda_" + std::to_string(i)).c_str(), c.loss_weights.lambda[i]);
    sec.get("eps", c.loss_weights.eps);
    sec.finish();
    c.loss_weights.validate();
  }
  {
    auto sec = root.sub("training");
    auto& t = c.training;
    sec.get("backbone_steps", t.backbone_steps);
    sec.get("backbone_batch_size", t.backbone_batch_size);
    sec.get("backbone_lr", t.backbone_lr);
    sec.get("readout_steps", t.readout_steps);
    sec.get("readout_batch_size", t.readout_batch_size);
    sec.get("lr_features", t.lr_features);
    sec.get("lr_readouts", t.lr_readouts);
    sec.get("saliency_steps", t.saliency_steps);
    sec.get("saliency_batch_size", t.saliency_batch_size);
    sec.get("saliency_lr", t.saliency_lr);
    sec.get("patch_min_frac", t.patch_min_frac);
    sec.get("patch_max_frac", t.patch_max_frac);
    sec.get("stats_patches_per_image", t.stats_patches_per_image);
    sec.get("readout_mirror", t.readout_mirror);
    sec.get("readout_box_jitter", t.readout_box_jitter);
    sec.get("checkpoint_every", t.checkpoint_every);
    sec.finish();
    require(t.backbone_batch_size >= 1 && t.readout_batch_size >= 1 && t.saliency_batch_size >= 1, ErrorCode::kConfig,
            "training batch sizes must be >= 1");
    require(t.backbone_lr > 0 && t.lr_features >= 0 && t.lr_readouts > 0 && t.saliency_lr > 0, ErrorCode::kConfig,
            "training learning rates must be positive");
    require(t.patch_min_frac > 0 && t.patch_min_frac <= t.patch_max_frac && t.patch_max_frac <= 1, ErrorCode::kConfig,
            "training.patch_min_frac/patch_max_frac must satisfy 0 < min <= max <= 1");
    require(t.stats_patches_per_image >= 1, ErrorCode::kConfig, "training.stats_patches_per_image must be >= 1");
    require(t.readout_box_jitter <= 8, ErrorCode::kConfig, "training.readout_box_jitter must be <= 8");
    require(t.checkpoint_every >= 1, ErrorCode::kConfig, "training.checkpoint_every must be >= 1");
  }
  {
    auto sec = root.sub("editor");
    std::string pivot = "gamma_projected";
    sec.get("pivot", pivot);
    require(pivot == "gamma_projected" || pivot == "channel_mean", ErrorCode::kConfig,
            "editor.pivot must be gamma_projected or channel_mean");
    c.editor.pivot = pivot == "gamma_projected" ? ContrastPivot::kGammaProjected : ContrastPivot::kChannelMean;
    sec.get("max_halvings", c.editor.max_halvings);
    sec.get("region_threshold", c.editor.region_threshold);
    sec.finish();
    require(c.editor.region_threshold > 0 && c.editor.region_threshold <= 1, ErrorCode::kConfig,
            "editor.region_threshold must be in (0, 1]");
  }
  {
    auto sec = root.sub("augmentor");
    auto& a = c.augmentor;
    a.seed = c.seed;
    sec.get("p", a.p);
    if (sec.has("edit_kinds")) {
      a.edit_kinds.clear();
      for (const auto& k : sec.raw("edit_kinds")) {
        require(k.is_string(), ErrorCode::kConfig, "augmentor.edit_kinds entries must be strings");
        try {
          a.edit_kinds.push_back(parse_edit_kind(k.get<std::string>()));
        } catch (const Error&) {
          fail(ErrorCode::kConfig, "augmentor.edit_kinds: unknown kind " + k.get<std::string>());
        }
      }
    }
    if (sec.has("alpha_range")) {
      detail::Section ranges(sec.raw("alpha_range"), "augmentor.alpha_range");
      for (std::size_t k = 0; k < 3; ++k) {
        std::vector<double> r;
        const char* key = to_string(static_cast<EditKind>(k));
        ranges.get(key, r);
        if (r.empty()) continue;
        require(r.size() == 2, ErrorCode::kConfig, ranges.name(key) + " must be [lo, hi]");
        a.alpha_range[k] = {r[0], r[1]};
      }
      ranges.finish();
    }
    sec.get("color_palette", a.color_palette);
    sec.get("boost", a.boost);
    std::string target = "boosted", roles = "original_target";
    sec.get("target", target);
    sec.get("edit_loss_roles", roles);
    require(target == "boosted" || target == "original" || target == "consistency", ErrorCode::kConfig,
            "augmentor.target must be boosted, original or consistency");
    a.target = target == "boosted" ? AugmentTarget::kBoosted
               : target == "original" ? AugmentTarget::kOriginal
                                      : AugmentTarget::kConsistency;
    require(roles == "original_target" || roles == "edited_target", ErrorCode::kConfig,
            "augmentor.edit_loss_roles must be original_target or edited_target");
    a.roles = roles == "original_target" ? EditLossRoles::kOriginalTarget : EditLossRoles::kEditedTarget;
    sec.get("edit_loss_weight", a.edit_loss_weight);
    sec.get("seed", a.seed);
    sec.finish();
    a.validate();
  }
  {
    auto sec = root.sub("metrics");
    c.metrics.seed = c.seed;
    sec.get("blur_sigma", c.metrics.blur_sigma);
    sec.get("shuffle_images", c.metrics.shuffle_images);
    sec.get("seed", c.metrics.seed);
    sec.get("eps", c.metrics.eps);
    sec.finish();
    require(c.metrics.blur_sigma > 0, ErrorCode::kConfig, "metrics.blur_sigma must be positive");
    require(c.metrics.eps > 0, ErrorCode::kConfig, "metrics.eps must be positive");
  }
  root.finish();
  return c;
}

/// Relative paths in the file resolve against the file's directory.
inline RunConfig load_config(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorCode::kConfig, "config file not found: " + path.string());
  Json j;
  try {
    j = read_json(path);
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, e.what());
  }
  RunConfig c = parse_config(j);
  const auto base = path.parent_path();
  if (c.dataset_root.is_relative()) c.dataset_root = base / c.dataset_root;
  if (c.output_dir.is_relative()) c.output_dir = base / c.output_dir;
  return c;
}

/// 64-bit FNV-1a of a JSON document's compact serialization, as 16 hex digits.
inline std::string json_hash(const Json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Hash of the experiment settings with defaults filled in. Dataset and output locations are left
/// out so the same experiment hashes equally wherever it runs.
inline std::string config_hash(const RunConfig& c) {
  Json j = to_json(c);
  j.erase("dataset_root");
  j.erase("output_dir");
  return json_hash(j);
}

/// Like config_hash but also ignoring step counts and checkpoint cadence, so a run can be extended.
inline std::string resume_key(const RunConfig& c) {
  Json j = to_json(c);
  j.erase("dataset_root");
  j.erase("output_dir");
  for (const char* k : {"backbone_steps", "readout_steps", "saliency_steps", "checkpoint_every"}) j["training"].erase(k);
  return json_hash(j);
}

}  // namespace augsal
