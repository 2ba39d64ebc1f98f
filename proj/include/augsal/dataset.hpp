#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "augsal/backbone.hpp"
#include "augsal/checkpoint.hpp"
#include "augsal/error.hpp"
#include "augsal/image_io.hpp"
#include "augsal/tensor.hpp"
#include "augsal/tensor_io.hpp"

namespace augsal {

// Dataset layout: <root>/<split>/{images/<id>.png, saliency/<id>.aug|png, fixations/<id>.json,
// captions/<id>.txt, boxes/<id>.json}. Only images/ and captions/ are mandatory.

struct BoxLabel {
  int category_id = 0;
  PatchRegion box;
};

struct DatasetEntry {
  std::string id;
  ImageTensor image;
  std::optional<SaliencyMap> saliency;
  std::optional<FixationSet> fixations;
  std::string caption;
  std::vector<BoxLabel> boxes;

  Prompt prompt() const { return tokenize(caption); }
};

struct DatasetManifest {
  std::string split;
  std::vector<DatasetEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  std::vector<ImageTensor> images() const {
    std::vector<ImageTensor> out;
    for (const auto& e : entries) out.push_back(e.image);
    return out;
  }
  std::vector<Prompt> prompts() const {
    std::vector<Prompt> out;
    for (const auto& e : entries) out.push_back(e.prompt());
    return out;
  }
};

namespace detail {

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::string s = ss.str();
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + p.string());
  out << s << '\n';
}

}  // namespace detail

inline FixationSet parse_fixations(const Json& j, std::size_t height, std::size_t width, const std::string& origin) {
  require(j.is_array(), ErrorCode::kData, origin + ": fixations must be a JSON list of [x, y]");
  std::vector<FixationPoint> pts;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& p = j[i];
    require(p.is_array() && p.size() == 2 && p[0].is_number_integer() && p[1].is_number_integer(), ErrorCode::kData,
            origin + ": fixation " + std::to_string(i) + " is not an integer [x, y] pair");
    const int x = p[0].get<int>(), y = p[1].get<int>();
    require(x >= 0 && y >= 0 && x < static_cast<int>(width) && y < static_cast<int>(height), ErrorCode::kData,
            origin + ": fixation " + std::to_string(i) + " (" + std::to_string(x) + ", " + std::to_string(y) +
                ") outside the " + std::to_string(width) + "x" + std::to_string(height) + " image");
    pts.push_back({x, y});
  }
  return FixationSet(height, width, std::move(pts));
}

inline std::vector<BoxLabel> parse_boxes(const Json& j, std::size_t height, std::size_t width, const std::string& origin) {
  require(j.is_array(), ErrorCode::kData, origin + ": boxes must be a JSON list");
  std::vector<BoxLabel> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& b = j[i];
    require(b.contains("category_id") && b.contains("bbox") && b["bbox"].size() == 4, ErrorCode::kData,
            origin + ": box " + std::to_string(i) + " needs category_id and bbox [x, y, w, h]");
    const auto bb = b["bbox"].get<std::vector<double>>();
    const int x0 = static_cast<int>(std::floor(bb[0])), y0 = static_cast<int>(std::floor(bb[1]));
    const int x1 = static_cast<int>(std::ceil(bb[0] + bb[2])), y1 = static_cast<int>(std::ceil(bb[1] + bb[3]));
    require(x0 >= 0 && y0 >= 0 && x1 <= static_cast<int>(width) && y1 <= static_cast<int>(height) && x0 < x1 && y0 < y1,
            ErrorCode::kData, origin + ": box " + std::to_string(i) + " is empty or outside the image");
    out.push_back({b["category_id"].get<int>(), PatchRegion(x0, y0, x1, y1)});
  }
  return out;
}

inline DatasetManifest load_dataset(const std::filesystem::path& root, const std::string& split) {
  namespace fs = std::filesystem;
  const fs::path dir = root / split;
  const fs::path images = dir / "images";
  require(fs::is_directory(images), ErrorCode::kData, "empty dataset: no images directory at " + images.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorCode::kData, "empty dataset: no images in " + images.string());

  DatasetManifest m;
  m.split = split;
  for (const auto& f : files) {
    const std::string id = f.stem().string();
    DatasetEntry e{id, load_image(f), std::nullopt, std::nullopt, "", {}};
    const auto h = e.image.height(), w = e.image.width();
    const fs::path cap = dir / "captions" / (id + ".txt");
    require(fs::exists(cap), ErrorCode::kData, "caption missing for image " + id + " (" + cap.string() + ")");
    e.caption = detail::read_text(cap);
    require(!tokenize(e.caption).empty(), ErrorCode::kData, "caption empty for image " + id);

    const fs::path sal_aug = dir / "saliency" / (id + ".aug");
    const fs::path sal_png = dir / "saliency" / (id + ".png");
    if (fs::exists(sal_aug)) e.saliency = read_saliency_tensor(sal_aug);
    else if (fs::exists(sal_png)) e.saliency = load_saliency_png(sal_png);
    if (e.saliency)
      require(e.saliency->height() == h && e.saliency->width() == w, ErrorCode::kData,
              "saliency map for " + id + " does not match the image size");

    const fs::path fix = dir / "fixations" / (id + ".json");
    if (fs::exists(fix)) e.fixations = parse_fixations(read_json(fix), h, w, fix.string());
    const fs::path box = dir / "boxes" / (id + ".json");
    if (fs::exists(box)) e.boxes = parse_boxes(read_json(box), h, w, box.string());
    m.entries.push_back(std::move(e));
  }
  return m;
}

// ---- synthetic scenes --------------------------------------------------------------------

enum class Shape { kCircle = 0, kSquare = 1, kTriangle = 2 };

inline const char* shape_name(Shape s) {
  switch (s) {
    case Shape::kCircle: return "circle";
    case Shape::kSquare: return "square";
    case Shape::kTriangle: return "triangle";
  }
  return "unknown";
}

struct NamedColor {
  const char* name;
  std::array<double, 3> rgb;
};

inline const std::vector<NamedColor>& synthetic_palette() {
  static const std::vector<NamedColor> palette = {
      {"red", {0.90, 0.12, 0.10}},    {"green", {0.15, 0.80, 0.20}}, {"blue", {0.15, 0.30, 0.95}},
      {"yellow", {0.92, 0.85, 0.15}}, {"purple", {0.62, 0.20, 0.85}}, {"cyan", {0.15, 0.80, 0.85}},
      {"orange", {0.95, 0.55, 0.10}}, {"white", {0.95, 0.95, 0.95}}};
  return palette;
}

inline std::array<double, 3> palette_rgb(const std::string& name) {
  for (const auto& c : synthetic_palette())
    if (name == c.name) return c.rgb;
  fail(ErrorCode::kInvalidArgument, "unknown color '" + name + "'");
}

struct SceneObject {
  Shape shape = Shape::kCircle;
  std::string color;
  std::array<double, 3> rgb{};  // rendered color (palette color times shade)
  int x0 = 0;                   // top-left of the bounding square
  int y0 = 0;
  int size = 8;
  double salience = 1.0;
};

struct SyntheticSceneSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  std::array<double, 3> background{0.2, 0.2, 0.2};
  std::vector<SceneObject> objects;

  void validate() const {
    for (const auto& o : objects) {
      require(o.x0 >= 0 && o.y0 >= 0 && o.size >= 1 && o.x0 + o.size <= static_cast<int>(width) &&
                  o.y0 + o.size <= static_cast<int>(height),
              ErrorCode::kRange, "scene object outside the canvas");
      require(o.salience >= 0.0, ErrorCode::kRange, "object salience must be nonnegative");
    }
  }
};

inline bool shape_covers(const SceneObject& o, double px, double py) {
  const double s = static_cast<double>(o.size);
  const double u = px - o.x0, v = py - o.y0;  // pixel centre in object coordinates
  if (u < 0 || v < 0 || u >= s || v >= s) return false;
  switch (o.shape) {
    case Shape::kSquare: return true;
    case Shape::kCircle: {
      const double r = s / 2.0;
      return (u - r) * (u - r) + (v - r) * (v - r) <= r * r;
    }
    case Shape::kTriangle: {
      // Apex at top centre, base along the bottom edge.
      const double half = 0.5 * s * (v / s);
      return std::abs(u - s / 2.0) <= half;
    }
  }
  return false;
}

inline ImageTensor render_scene(const SyntheticSceneSpec& scene) {
  scene.validate();
  Tensor img(3, scene.height, scene.width);
  for (std::size_t y = 0; y < scene.height; ++y)
    for (std::size_t x = 0; x < scene.width; ++x) {
      std::array<double, 3> c = scene.background;
      for (const auto& o : scene.objects)
        if (shape_covers(o, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) c = o.rgb;
      for (std::size_t k = 0; k < 3; ++k) img.at(k, y, x) = quantize8(c[k]);
    }
  return ImageTensor(std::move(img));
}

/// RGB distance between object and background, scaled to [0, 1].
inline double color_contrast(const SceneObject& o, const std::array<double, 3>& background) {
  double d = 0.0;
  for (std::size_t k = 0; k < 3; ++k) d += (o.rgb[k] - background[k]) * (o.rgb[k] - background[k]);
  return std::sqrt(d / 3.0);
}

/// Mixture weight of each object: intrinsic salience times contrast against the background.
inline std::vector<double> mixture_weights(const SyntheticSceneSpec& scene) {
  std::vector<double> w;
  for (const auto& o : scene.objects) w.push_back(o.salience * color_contrast(o, scene.background));
  return w;
}

/// Unnormalized Gaussian mixture centred on the objects (std 0.35 x object size).
inline Tensor scene_mixture(const SyntheticSceneSpec& scene) {
  const auto w = mixture_weights(scene);
  Tensor m(1, scene.height, scene.width);
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const auto& o = scene.objects[k];
    const double cx = o.x0 + o.size / 2.0, cy = o.y0 + o.size / 2.0;
    const double sd = 0.35 * o.size;
    for (std::size_t y = 0; y < scene.height; ++y)
      for (std::size_t x = 0; x < scene.width; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        m.at(0, y, x) += w[k] * std::exp(-(dx * dx + dy * dy) / (2.0 * sd * sd));
      }
  }
  return m;
}

/// Mixture scaled to max 1.
inline SaliencyMap scene_saliency(const SyntheticSceneSpec& scene) {
  Tensor m = scene_mixture(scene);
  double mx = 0.0;
  for (double v : m.values()) mx = std::max(mx, v);
  require(mx > 0.0, ErrorCode::kData, "scene has no salient object");
  for (auto& v : m.values()) v /= mx;
  return SaliencyMap(std::move(m));
}

inline std::string scene_caption(const SyntheticSceneSpec& scene) {
  std::string out;
  for (const auto& o : scene.objects) {
    if (!out.empty()) out += " and ";
    out += "a " + o.color + " " + shape_name(o.shape);
  }
  return out;
}

struct SyntheticOptions {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  int min_size = 8;
  int max_size = 14;
  std::size_t fixations_per_image = 24;
};

/// Random scene: dark background, non-overlapping shapes with palette colors at varying shade.
inline SyntheticSceneSpec sample_scene(std::mt19937_64& rng, const SyntheticOptions& opt = {}) {
  SyntheticSceneSpec s;
  s.height = opt.height;
  s.width = opt.width;
  std::uniform_real_distribution<double> bg(0.05, 0.3), tint(-0.03, 0.03);
  const double base = bg(rng);
  for (auto& c : s.background) c = std::clamp(base + tint(rng), 0.0, 1.0);
  const std::size_t n = std::uniform_int_distribution<std::size_t>(opt.min_objects, opt.max_objects)(rng);
  const auto& palette = synthetic_palette();
  for (std::size_t k = 0; k < n; ++k) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      SceneObject o;
      o.shape = static_cast<Shape>(std::uniform_int_distribution<int>(0, 2)(rng));
      const auto& col = palette[std::uniform_int_distribution<std::size_t>(0, palette.size() - 1)(rng)];
      o.color = col.name;
      const double shade = std::uniform_real_distribution<double>(0.45, 1.0)(rng);
      for (std::size_t c = 0; c < 3; ++c) o.rgb[c] = col.rgb[c] * shade;
      o.size = std::uniform_int_distribution<int>(opt.min_size, opt.max_size)(rng);
      o.x0 = std::uniform_int_distribution<int>(0, static_cast<int>(opt.width) - o.size)(rng);
      o.y0 = std::uniform_int_distribution<int>(0, static_cast<int>(opt.height) - o.size)(rng);
      o.salience = std::uniform_real_distribution<double>(0.5, 1.5)(rng);
      bool overlap = false;
      for (const auto& p : s.objects)
        if (o.x0 < p.x0 + p.size + 1 && p.x0 < o.x0 + o.size + 1 && o.y0 < p.y0 + p.size + 1 &&
            p.y0 < o.y0 + o.size + 1)
          overlap = true;
      if (!overlap) {
        s.objects.push_back(o);
        break;
      }
    }
  }
  return s;
}

/// Fixations drawn from the saliency map treated as a distribution.
inline FixationSet sample_fixations(const SaliencyMap& s, std::size_t count, std::mt19937_64& rng) {
  std::discrete_distribution<std::size_t> pick(s.values().begin(), s.values().end());
  std::vector<FixationPoint> pts;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t idx = pick(rng);
    pts.push_back({static_cast<int>(idx % s.width()), static_cast<int>(idx / s.width())});
  }
  return FixationSet(s.height(), s.width(), std::move(pts));
}

inline DatasetEntry scene_entry(const std::string& id, const SyntheticSceneSpec& scene, std::size_t n_fix,
                                std::mt19937_64& rng) {
  DatasetEntry e{id, render_scene(scene), scene_saliency(scene), std::nullopt, scene_caption(scene), {}};
  e.fixations = sample_fixations(*e.saliency, n_fix, rng);
  for (const auto& o : scene.objects)
    e.boxes.push_back({static_cast<int>(o.shape), PatchRegion(o.x0, o.y0, o.x0 + o.size, o.y0 + o.size)});
  return e;
}

inline void save_entry(const DatasetEntry& e, const std::filesystem::path& split_dir) {
  namespace fs = std::filesystem;
  for (const char* sub : {"images", "saliency", "fixations", "captions", "boxes"}) fs::create_directories(split_dir / sub);
  save_png(e.image, split_dir / "images" / (e.id + ".png"));
  if (e.saliency) write_tensor(*e.saliency, split_dir / "saliency" / (e.id + ".aug"));
  if (e.fixations) {
    Json f = Json::array();
    for (const auto& p : e.fixations->points()) f.push_back({p.x, p.y});
    write_json(f, split_dir / "fixations" / (e.id + ".json"));
  }
  detail::write_text(split_dir / "captions" / (e.id + ".txt"), e.caption);
  Json b = Json::array();
  for (const auto& bl : e.boxes)
    b.push_back({{"category_id", bl.category_id}, {"bbox", {bl.box.x0, bl.box.y0, bl.box.width(), bl.box.height()}}});
  write_json(b, split_dir / "boxes" / (e.id + ".json"));
}

/// Renders n scenes; the first round(n * (1 - val_fraction)) go to train, the rest to val.
inline std::pair<DatasetManifest, DatasetManifest> generate_synthetic(std::size_t n_images, std::uint64_t seed,
                                                                      double val_fraction = 0.2,
                                                                      const SyntheticOptions& opt = {}) {
  require(n_images >= 1, ErrorCode::kInvalidArgument, "need at least one synthetic image");
  require(val_fraction >= 0.0 && val_fraction < 1.0, ErrorCode::kInvalidArgument, "val_fraction must be in [0, 1)");
  std::mt19937_64 rng(seed ^ 0x5e7e11ULL);
  const auto n_train = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(n_images) * (1.0 - val_fraction))));
  DatasetManifest train{"train", {}}, val{"val", {}};
  for (std::size_t i = 0; i < n_images; ++i) {
    char id[24];
    std::snprintf(id, sizeof id, "%06zu", i);
    const auto scene = sample_scene(rng, opt);
    (i < n_train ? train : val).entries.push_back(scene_entry(id, scene, opt.fixations_per_image, rng));
  }
  return {std::move(train), std::move(val)};
}

inline void save_dataset(const DatasetManifest& m, const std::filesystem::path& root) {
  for (const auto& e : m.entries) save_entry(e, root / m.split);
}

}  // namespace augsal
