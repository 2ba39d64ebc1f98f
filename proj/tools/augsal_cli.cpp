// augsal: config-driven pipeline driver.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "augsal/augsal.hpp"

namespace fs = std::filesystem;
using namespace augsal;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitOther = 1;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
      return kExitConfig;
    case ErrorCode::kData:
    case ErrorCode::kIo:
    case ErrorCode::kMalformedHeader:
    case ErrorCode::kDtypeMismatch:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kTruncatedPayload:
      return kExitData;
    case ErrorCode::kNumerical:
    case ErrorCode::kNonFinite:
    case ErrorCode::kRankDeficient:
      return kExitNumerical;
    default:
      return kExitOther;
  }
}

struct Context {
  RunConfig cfg;
  std::string hash;
  std::string key;
  std::string command;

  fs::path checkpoint(const std::string& stage) const { return cfg.output_dir / "checkpoints" / stage; }
  fs::path log(const std::string& stage) const { return cfg.output_dir / "logs" / (stage + ".csv"); }

  Json manifest(Json extra = Json::object()) const {
    Json m;
    m["command"] = command;
    m["config_hash"] = hash;
    m["seed"] = cfg.seed;
    for (const auto& [k, v] : extra.items()) m[k] = v;
    return m;
  }
};

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Replaces `dir` with whatever `fill` writes into a sibling staging directory.
template <typename Fill>
void write_dir_atomically(const fs::path& dir, Fill&& fill) {
  const fs::path staging = dir.string() + ".partial";
  fs::remove_all(staging);
  fs::create_directories(staging);
  try {
    fill(staging);
  } catch (...) {
    fs::remove_all(staging);
    throw;
  }
  fs::remove_all(dir);
  fs::rename(staging, dir);
}

/// CSV log that, on resume, keeps exactly the rows of the steps already taken.
class CsvLog {
 public:
  CsvLog(const fs::path& path, const std::string& header, std::size_t keep_rows) : path_(path) {
    fs::create_directories(path.parent_path());
    std::vector<std::string> lines{header};
    if (keep_rows > 0) {
      std::ifstream in(path);
      std::string line;
      std::getline(in, line);
      require(line == header, ErrorCode::kData, "log " + path.string() + " does not match the checkpoint");
      while (lines.size() <= keep_rows && std::getline(in, line)) lines.push_back(line);
      require(lines.size() == keep_rows + 1, ErrorCode::kData,
              "log " + path.string() + " is shorter than the checkpointed step count");
    }
    out_.open(path, std::ios::trunc);
    require(static_cast<bool>(out_), ErrorCode::kIo, "cannot write " + path.string());
    for (const auto& l : lines) out_ << l << '\n';
    out_.flush();
  }

  void row(std::size_t step, const std::vector<double>& values) {
    out_ << step;
    for (double v : values) out_ << ',' << fmt17(v);
    out_ << '\n';
  }
  void flush() { out_.flush(); }

 private:
  fs::path path_;
  std::ofstream out_;
};

DatasetManifest require_split(const Context& ctx, const std::string& split) {
  require(fs::is_directory(ctx.cfg.dataset_root), ErrorCode::kData,
          "dataset root " + ctx.cfg.dataset_root.string() + " does not exist");
  return load_dataset(ctx.cfg.dataset_root, split);
}

Checkpoint require_checkpoint(const Context& ctx, const std::string& stage, const std::string& producer) {
  const fs::path dir = ctx.checkpoint(stage);
  require(fs::exists(dir / "manifest.json"), ErrorCode::kData,
          "missing checkpoint " + dir.string() + "; run " + producer + " first");
  Checkpoint ck = Checkpoint::load(dir);
  require(ck.meta.value("complete", false), ErrorCode::kData,
          "checkpoint " + dir.string() + " is incomplete; rerun " + producer + " to finish it");
  return ck;
}

/// Loads a resumable checkpoint if its settings match, else nullopt; `restart` discards it.
std::optional<Checkpoint> resumable(const Context& ctx, const std::string& stage, bool restart) {
  const fs::path dir = ctx.checkpoint(stage);
  if (restart) fs::remove_all(dir);
  if (!fs::exists(dir / "manifest.json")) return std::nullopt;
  Checkpoint ck = Checkpoint::load(dir);
  require(ck.meta.value("resume_key", std::string()) == ctx.key, ErrorCode::kConfig,
          "checkpoint " + dir.string() + " was written with different settings; pass --restart to discard it");
  return ck;
}

struct Models {
  std::unique_ptr<TinyBackbone> backbone;
  Llfr llfr;
  Hlfr hlfr;
  PopulationStats stats;
};

std::unique_ptr<TinyBackbone> load_backbone(const Context& ctx) {
  auto bb = std::make_unique<TinyBackbone>(ctx.cfg.backbone);
  bb->load(require_checkpoint(ctx, "backbone", "train-backbone"));
  return bb;
}

Models load_models(const Context& ctx) {
  Models m;
  m.backbone = load_backbone(ctx);
  const Checkpoint ck = require_checkpoint(ctx, "readouts", "train-readouts");
  const auto& b = ctx.cfg.backbone;
  m.llfr = Llfr(b.feature_channels_low, b.downsample_factor, ctx.cfg.readouts);
  m.hlfr = Hlfr(b.feature_channels_high, b.downsample_factor, ctx.cfg.readouts);
  ck.get_all(m.backbone->aggregation_params());
  ck.get_all(m.llfr.params());
  ck.get_all(m.hlfr.params());
  auto stat = [&](const std::string& name) {
    const auto it = ck.arrays.find(name);
    require(it != ck.arrays.end() && it->second.values.size() == kNumProperties, ErrorCode::kData,
            "readout checkpoint lacks " + name);
    std::array<double, kNumProperties> a{};
    std::copy(it->second.values.begin(), it->second.values.end(), a.begin());
    return PropertyVector(a);
  };
  m.stats = PopulationStats{stat("stats.mean"), stat("stats.std")};
  return m;
}

SaliencyReadout make_saliency_readout(const Context& ctx) {
  const auto& b = ctx.cfg.backbone;
  return SaliencyReadout(b.feature_channels_low + b.feature_channels_high, b.downsample_factor, ctx.cfg.readouts);
}

SaliencyReadout load_saliency_readout(const Context& ctx, const std::string& stage) {
  SaliencyReadout sr = make_saliency_readout(ctx);
  require_checkpoint(ctx, stage, stage == "saliency" ? "train-saliency" : "train-saliency --augment")
      .get_all(sr.params());
  return sr;
}

/// Steps a trainer to `total`, logging every step and checkpointing on the configured cadence.
template <typename Trainer, typename Row, typename Fill>
void run_stage(const Context& ctx, const std::string& stage, Trainer& trainer, std::size_t total, CsvLog& log,
               std::vector<double> (*columns)(const Row&), Fill&& fill_checkpoint) {
  auto save = [&](bool complete) {
    log.flush();
    write_dir_atomically(ctx.checkpoint(stage), [&](const fs::path& dir) {
      Checkpoint ck;
      fill_checkpoint(ck);
      save_optimizer(ck, "optim", trainer.optimizer());
      ck.meta["stage"] = stage;
      ck.meta["steps"] = trainer.steps_done();
      ck.meta["complete"] = complete;
      ck.meta["config_hash"] = ctx.hash;
      ck.meta["resume_key"] = ctx.key;
      ck.save(dir);
    });
  };
  const std::size_t every = ctx.cfg.training.checkpoint_every;
  while (trainer.steps_done() < total) {
    const Row row = trainer.step();
    log.row(row.step, columns(row));
    if (trainer.steps_done() % every == 0 && trainer.steps_done() < total) save(false);
  }
  save(true);
}

// ---- subcommands --------------------------------------------------------------------------

int cmd_generate_synthetic(const Context& ctx) {
  const auto& c = ctx.cfg;
  const fs::path root = c.dataset_root;
  if (fs::exists(root) && !fs::is_empty(root)) {
    const bool ours = fs::exists(root / "manifest.json") &&
                      read_json(root / "manifest.json").value("generator", std::string()) == "synthetic";
    require(ours, ErrorCode::kConfig,
            "dataset_root " + root.string() + " exists and was not produced by generate-synthetic; refusing to overwrite");
  }
  SyntheticOptions opt;
  opt.height = c.synthetic.height;
  opt.width = c.synthetic.width;
  auto [train, val] = generate_synthetic(c.synthetic.n_images, c.seed, c.synthetic.val_fraction, opt);
  if (root.has_parent_path()) fs::create_directories(root.parent_path());
  write_dir_atomically(root, [&](const fs::path& dir) {
    save_dataset(train, dir);
    save_dataset(val, dir);
    write_json(ctx.manifest({{"generator", "synthetic"},
                             {"n_train", train.size()},
                             {"n_val", val.size()},
                             {"height", opt.height},
                             {"width", opt.width}}),
               dir / "manifest.json");
  });
  std::cout << "wrote " << train.size() << " train and " << val.size() << " val images to " << root.string() << '\n';
  return kExitOk;
}

std::vector<double> backbone_columns(const BackboneLogRow& r) { return {r.autoencoder_loss, r.denoise_loss}; }

int cmd_train_backbone(const Context& ctx, bool restart) {
  const DatasetManifest data = require_split(ctx, "train");
  const auto images = data.images();
  const auto prompts = data.prompts();
  TinyBackbone bb(ctx.cfg.backbone);
  const auto& t = ctx.cfg.training;
  BackboneTrainer trainer(bb, images, prompts, {t.backbone_steps, t.backbone_batch_size, t.backbone_lr, ctx.cfg.seed});
  const auto ck = resumable(ctx, "backbone", restart);
  if (ck) {
    bb.load(*ck);
    require(load_optimizer(*ck, "optim", trainer.optimizer()), ErrorCode::kData, "backbone checkpoint lacks optimizer state");
  }
  CsvLog log(ctx.log("backbone"), "step,autoencoder_loss,denoise_loss", trainer.steps_done());
  // The latent range is measured after the final step, so it is refreshed before the last save.
  run_stage(ctx, "backbone", trainer, t.backbone_steps, log, &backbone_columns, [&](Checkpoint& out) {
    if (trainer.steps_done() >= t.backbone_steps) trainer.update_latent_range();
    bb.save(out);
  });
  std::cout << "backbone: " << trainer.steps_done() << " steps, checkpoint " << ctx.checkpoint("backbone").string()
            << '\n';
  return kExitOk;
}

std::vector<double> readout_columns(const ReadoutLogRow& r) {
  return {r.total, r.rgb, r.brightness, r.local_contrast, r.global_contrast, r.cross_entropy};
}

int cmd_train_readouts(const Context& ctx, bool restart) {
  const DatasetManifest data = require_split(ctx, "train");
  auto bb = load_backbone(ctx);
  const auto& c = ctx.cfg;
  const auto& t = c.training;
  Llfr llfr(c.backbone.feature_channels_low, c.backbone.downsample_factor, c.readouts);
  Hlfr hlfr(c.backbone.feature_channels_high, c.backbone.downsample_factor, c.readouts);
  const auto ck = resumable(ctx, "readouts", restart);
  if (ck) {
    ck->get_all(bb->aggregation_params());
    ck->get_all(llfr.params());
    ck->get_all(hlfr.params());
  }
  ReadoutTrainOptions opt;
  opt.steps = t.readout_steps;
  opt.batch_size = t.readout_batch_size;
  opt.lr_features = t.lr_features;
  opt.lr_readouts = t.lr_readouts;
  opt.patch_min = t.patch_min_frac;
  opt.patch_max = t.patch_max_frac;
  opt.mirror = t.readout_mirror;
  opt.box_jitter = t.readout_box_jitter;
  opt.weights = c.loss_weights;
  opt.seed = c.seed;
  ReadoutTrainer trainer(*bb, llfr, hlfr, data, opt);
  if (ck) require(load_optimizer(*ck, "optim", trainer.optimizer()), ErrorCode::kData, "readout checkpoint lacks optimizer state");
  const PopulationStats stats = population_stats(data.images(), static_cast<int>(t.stats_patches_per_image),
                                                 c.seed ^ 0x57a75ULL, t.patch_min_frac, t.patch_max_frac);
  CsvLog log(ctx.log("readouts"), "step,total,rgb,brightness,local_contrast,global_contrast,cross_entropy",
             trainer.steps_done());
  run_stage(ctx, "readouts", trainer, t.readout_steps, log, &readout_columns, [&](Checkpoint& out) {
    out.put_all(bb->aggregation_params());
    out.put_all(llfr.params());
    out.put_all(hlfr.params());
    const auto& m = stats.mean.values();
    const auto& s = stats.std.values();
    out.put("stats.mean", {kNumProperties}, {m.begin(), m.end()});
    out.put("stats.std", {kNumProperties}, {s.begin(), s.end()});
  });
  std::cout << "readouts: " << trainer.steps_done() << " steps, checkpoint " << ctx.checkpoint("readouts").string()
            << '\n';
  return kExitOk;
}

std::vector<double> saliency_columns(const SaliencyLogRow& r) {
  return {r.total, r.saliency, r.edit, static_cast<double>(r.edited)};
}

int cmd_train_saliency(const Context& ctx, bool augment, bool restart) {
  const DatasetManifest data = require_split(ctx, "train");
  Models m = load_models(ctx);
  const auto& c = ctx.cfg;
  const std::string stage = augment ? "saliency_augmented" : "saliency";
  SaliencyReadout sr = make_saliency_readout(ctx);
  const auto ck = resumable(ctx, stage, restart);
  if (ck) ck->get_all(sr.params());
  std::unique_ptr<EditPipeline> pipeline;
  if (augment) pipeline = std::make_unique<EditPipeline>(*m.backbone, m.llfr, m.stats, c.editor);
  SaliencyTrainOptions opt{c.training.saliency_steps, c.training.saliency_batch_size, c.training.saliency_lr,
                           c.loss_weights, c.seed};
  SaliencyTrainer trainer(*m.backbone, sr, data, opt, pipeline.get(), augment ? &c.augmentor : nullptr);
  if (ck) require(load_optimizer(*ck, "optim", trainer.optimizer()), ErrorCode::kData, "saliency checkpoint lacks optimizer state");
  CsvLog log(ctx.log(stage), "step,total,saliency,edit,edited", trainer.steps_done());
  run_stage(ctx, stage, trainer, c.training.saliency_steps, log, &saliency_columns,
            [&](Checkpoint& out) { out.put_all(sr.params()); });
  std::cout << stage << ": " << trainer.steps_done() << " steps, checkpoint " << ctx.checkpoint(stage).string() << '\n';
  return kExitOk;
}

/// Caption for an image inside a dataset split (root/split/images/id.png -> root/split/captions/id.txt).
std::optional<std::string> sibling_caption(const fs::path& image) {
  const fs::path cap = image.parent_path().parent_path() / "captions" / (image.stem().string() + ".txt");
  if (!fs::exists(cap)) return std::nullopt;
  return detail::read_text(cap);
}

SaliencyMap load_saliency_file(const fs::path& p) {
  require(fs::exists(p), ErrorCode::kData, "saliency file not found: " + p.string());
  return p.extension() == ".png" ? load_saliency_png(p) : read_saliency_tensor(p);
}

int cmd_edit(const Context& ctx, const std::string& image_path, const std::string& kind_name, double alpha,
             const std::string& color, const std::string& caption_arg, const std::string& saliency_path,
             const std::string& name_arg) {
  const EditKind kind = [&] {
    try {
      return parse_edit_kind(kind_name);
    } catch (const Error&) {
      fail(ErrorCode::kConfig, "--kind must be contrast_increase, brightness_increase or color_change");
    }
  }();
  require(kind != EditKind::kColorChange || !color.empty(), ErrorCode::kConfig, "--color is required for color edits");
  const fs::path img_path = image_path;
  require(fs::exists(img_path), ErrorCode::kData, "image not found: " + img_path.string());
  const ImageTensor img = load_image(img_path);
  std::string caption = caption_arg;
  if (caption.empty()) {
    const auto sib = sibling_caption(img_path);
    require(sib.has_value(), ErrorCode::kData, "no caption for " + img_path.string() + "; pass --caption");
    caption = *sib;
  }
  const Prompt prompt = tokenize(caption);
  Models m = load_models(ctx);
  const SaliencyMap s = saliency_path.empty()
                            ? predict_saliency(*m.backbone, load_saliency_readout(ctx, "saliency"), img, prompt)
                            : load_saliency_file(saliency_path);
  const EditPipeline pipeline(*m.backbone, m.llfr, m.stats, ctx.cfg.editor);
  const std::optional<std::string> col = kind == EditKind::kColorChange ? std::optional(color) : std::nullopt;
  const double identity = identity_strength(kind);

  const std::string name = name_arg.empty() ? img_path.stem().string() + "_" + to_string(kind) : name_arg;
  const fs::path out = ctx.cfg.output_dir / "edits" / name;
  std::vector<EditResult> levels;
  for (double frac : {1.0 / 3.0, 2.0 / 3.0, 1.0})
    levels.push_back(pipeline.run(img, prompt, s, EditSpec(kind, identity + frac * (alpha - identity), col)));

  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_dir_atomically(out, [&](const fs::path& dir) {
    Json lv = Json::array();
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const std::string sub = "level" + std::to_string(i + 1);
      save_edit_result(levels[i], dir / sub, {{"config_hash", ctx.hash}});
      lv.push_back({{"dir", sub},
                    {"requested_alpha", levels[i].requested_alpha},
                    {"applied_alpha", levels[i].applied_alpha},
                    {"constraint_triggered", levels[i].constraint_triggered},
                    {"constraint_exhausted", levels[i].constraint_exhausted}});
    }
    std::vector<Tensor> panels{img.tensor(), upsample_mask(levels.back().mask, img.height(), img.width())};
    for (const auto& r : levels) panels.push_back(r.edited_image.tensor());
    save_png(hconcat(panels), dir / "grid.png");
    write_json(ctx.manifest({{"image", img_path.filename().string()},
                             {"caption", caption},
                             {"kind", to_string(kind)},
                             {"alpha", alpha},
                             {"color", color},
                             {"selected_token_index", levels.back().selected_token_index},
                             {"levels", lv}}),
               dir / "manifest.json");
  });
  const auto& last = levels.back();
  std::cout << "edit " << to_string(kind) << ": token " << last.selected_token_index << " ("
            << last.prompt.at(last.selected_token_index) << "), applied alpha " << fmt17(last.applied_alpha)
            << (last.constraint_exhausted ? " [constraint exhausted]" : "") << ", wrote " << out.string() << '\n';
  return kExitOk;
}

int cmd_augment(const Context& ctx, std::size_t n) {
  require(n >= 1, ErrorCode::kConfig, "--n must be >= 1");
  const DatasetManifest data = require_split(ctx, "train");
  Models m = load_models(ctx);
  const EditPipeline pipeline(*m.backbone, m.llfr, m.stats, ctx.cfg.editor);
  AugmentConfig acfg = ctx.cfg.augmentor;
  acfg.p = 0.0;
  const fs::path out = ctx.cfg.output_dir / "augment";
  fs::create_directories(ctx.cfg.output_dir);
  write_dir_atomically(out, [&](const fs::path& dir) {
    Json index = Json::array();
    std::size_t written = 0, skipped = 0;
    for (std::size_t draw = 0; written < n && draw < 10 * n; ++draw) {
      auto rng = nn::step_rng(acfg.seed, 0xa0a0, draw);
      const auto& e = data.entries[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)];
      require(e.saliency.has_value(), ErrorCode::kData, "augmentation needs ground-truth saliency for " + e.id);
      const AugmentDecision d = sample_step(acfg, rng);
      const auto sample = augmented_batch(e.image, *e.saliency, e.prompt(), d, pipeline, acfg);
      if (!sample) {
        ++skipped;
        continue;
      }
      char sub[24];
      std::snprintf(sub, sizeof sub, "%06zu", written++);
      save_edit_result(*sample->edit, dir / sub,
                       {{"config_hash", ctx.hash}, {"source_id", e.id}, {"color", d.color.value_or("")}});
      write_tensor(sample->target, dir / sub / "target.aug");
      index.push_back({{"dir", sub}, {"source_id", e.id}, {"kind", to_string(d.kind)}, {"alpha", d.alpha}});
    }
    require(written == n, ErrorCode::kNumerical, "edit pipeline failed too often to produce the requested samples");
    write_json(ctx.manifest({{"n", n}, {"skipped", skipped}, {"samples", index}}), dir / "manifest.json");
  });
  std::cout << "wrote " << n << " augmented samples to " << out.string() << '\n';
  return kExitOk;
}

int cmd_evaluate(const Context& ctx, const std::string& split, const std::string& predictions,
                 const std::string& model) {
  const DatasetManifest data = require_split(ctx, split);
  require(model == "saliency" || model == "saliency_augmented", ErrorCode::kConfig,
          "--model must be saliency or saliency_augmented");
  std::unique_ptr<TinyBackbone> bb;
  std::optional<SaliencyReadout> sr;
  if (predictions.empty()) {
    bb = load_models(ctx).backbone;
    sr = load_saliency_readout(ctx, model);
  } else {
    require(fs::is_directory(predictions), ErrorCode::kData, "predictions directory not found: " + predictions);
  }
  std::vector<EvalItem> items;
  std::vector<std::string> ids;
  for (const auto& e : data.entries) {
    require(e.fixations.has_value(), ErrorCode::kData, "evaluation needs fixations for " + e.id);
    SaliencyMap pred = [&] {
      if (sr) return predict_saliency(*bb, *sr, e.image, e.prompt());
      const fs::path aug = fs::path(predictions) / (e.id + ".aug");
      return load_saliency_file(fs::exists(aug) ? aug : fs::path(predictions) / (e.id + ".png"));
    }();
    SaliencyMap gt = e.saliency ? *e.saliency : blur_fixations(*e.fixations, ctx.cfg.metrics.blur_sigma);
    items.push_back({std::move(pred), std::move(gt), *e.fixations});
    ids.push_back(e.id);
  }
  const auto rows = evaluate_per_image(items, ctx.cfg.metrics);
  const MetricReport report = average(rows);
  const std::string source = predictions.empty() ? model : "predictions";
  const fs::path out = ctx.cfg.output_dir / "eval" / (split + "_" + source);
  fs::create_directories(out.parent_path());
  write_dir_atomically(out, [&](const fs::path& dir) {
    write_json(ctx.manifest({{"split", split}, {"source", source}, {"metrics", report.to_json()}}),
               dir / "report.json");
    std::ofstream(dir / "report.txt") << report.table(source);
    std::ofstream csv(dir / "per_image.csv");
    csv << "id,AUC,KL,NSS,CC,SAUC,SIM\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
      csv << ids[i] << ',' << fmt17(rows[i].auc_judd) << ',' << fmt17(rows[i].kl) << ',' << fmt17(rows[i].nss) << ','
          << fmt17(rows[i].cc) << ',' << fmt17(rows[i].sauc) << ',' << fmt17(rows[i].sim) << '\n';
  });
  std::cout << report.table(source);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"augsal: diffusion-feature saliency prediction and saliency-guided augmentation"};
  app.footer(
      "Exit codes: 0 success, 2 configuration or usage error, 3 data error, 4 numerical failure, 1 other error.\n"
      "Outputs are written under output_dir from the config; every manifest carries the config hash.");
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("-c,--config", config_path, "run configuration (JSON)")->required();
  std::optional<std::size_t> steps;

  bool restart = false;
  auto* gen = app.add_subcommand("generate-synthetic", "render the synthetic shapes dataset into dataset_root");
  auto* tb = app.add_subcommand("train-backbone", "train the tiny autoencoder and denoiser");
  auto* tr = app.add_subcommand("train-readouts", "train the feature aggregation and the LLFR/HLFR heads");
  auto* ts = app.add_subcommand("train-saliency", "train the saliency readout on frozen features");
  for (auto* sc : {tb, tr, ts}) {
    sc->add_option("--steps", steps, "override the configured step count");
    sc->add_flag("--restart", restart, "discard an existing checkpoint instead of resuming");
  }
  bool augment = false;
  ts->add_flag("--augment", augment, "train with saliency-guided augmentation");

  auto* ed = app.add_subcommand("edit", "saliency-guided edit of one image at three intensities");
  std::string image, kind, color, caption, saliency, name;
  double alpha = 0.0;
  ed->add_option("--image", image, "input image (PNG/JPEG)")->required();
  ed->add_option("--kind", kind, "contrast_increase | brightness_increase | color_change")->required();
  ed->add_option("--alpha", alpha, "edit strength (color: injection intensity)")->required();
  ed->add_option("--color", color, "target color word for color edits");
  ed->add_option("--caption", caption, "caption; defaults to the dataset caption next to the image");
  ed->add_option("--saliency", saliency, "saliency map (.aug or 16-bit .png); defaults to the trained readout");
  ed->add_option("--name", name, "output directory name under output_dir/edits");

  auto* au = app.add_subcommand("augment", "pre-generate augmented training samples");
  std::size_t n = 0;
  au->add_option("--n", n, "number of samples")->required();

  auto* ev = app.add_subcommand("evaluate", "compute AUC, KL, NSS, CC, sAUC and SIM on a split");
  std::string split = "val", predictions, model = "saliency";
  ev->add_option("--split", split, "dataset split");
  ev->add_option("--predictions", predictions, "directory of <id>.aug or <id>.png predictions");
  ev->add_option("--model", model, "saliency | saliency_augmented (when no predictions are given)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    Context ctx;
    ctx.cfg = load_config(config_path);
    if (steps) {
      auto& t = ctx.cfg.training;
      (tb->parsed() ? t.backbone_steps : tr->parsed() ? t.readout_steps : t.saliency_steps) = *steps;
    }
    ctx.hash = config_hash(ctx.cfg);
    ctx.key = resume_key(ctx.cfg);
    ctx.command = app.get_subcommands().front()->get_name();
    if (gen->parsed()) return cmd_generate_synthetic(ctx);
    if (tb->parsed()) return cmd_train_backbone(ctx, restart);
    if (tr->parsed()) return cmd_train_readouts(ctx, restart);
    if (ts->parsed()) return cmd_train_saliency(ctx, augment, restart);
    if (ed->parsed()) return cmd_edit(ctx, image, kind, alpha, color, caption, saliency, name);
    if (au->parsed()) return cmd_augment(ctx, n);
    if (ev->parsed()) return cmd_evaluate(ctx, split, predictions, model);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitOther;
}
