#pragma once

// TrainConfig: every hyperparameter of both stages, read from and written
// to one TOML file. The schema is declared once in visit_config() and shared
// by the writer, the reader and the documentation dump.

#include "d4d/camera.hpp"
#include "d4d/core.hpp"
#include "d4d/fields.hpp"
#include "d4d/guidance.hpp"
#include "d4d/losses.hpp"
#include "d4d/optim.hpp"
#include "d4d/toml.hpp"
#include "d4d/toy.hpp"

#include <array>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace d4d {

enum class Precision { kFloat, kDouble };

struct RenderConfig {
  int samples_train = 64;
  int samples_eval = 256;
  bool jitter = true;
  int threads = 1;
};

struct StaticStageConfig {
  int iterations = 10000;
  // Resolution schedule: phase k starts at phase_starts[k].
  std::vector<int> phase_starts{0, 5000};
  std::vector<int> phase_resolutions{64, 256};
  std::vector<int> phase_batches{8, 4};
  int guidance_res_3d = 256;
  int guidance_res_2d = 512;
  StageOneWeights weights{1.0, 1.0};
  double guidance_scale_2d = 100.0;
  double guidance_scale_3d = 50.0;
  Range noise_start{0.02, 0.98};
  Range noise_end{0.02, 0.98};
  SdsWeights sds{1.0, 0.0};
  double lr_grid = 0.01;
  double lr_mlp = 0.001;
  // false: the 2D view reuses view 0 of each multi-view group.
  bool independent_2d_camera = false;

  struct Phase {
    int resolution;
    int batch;
  };
  Phase phase_at(int iteration) const {
    std::size_t k = 0;
    while (k + 1 < phase_starts.size() && iteration >= phase_starts[k + 1]) ++k;
    return {phase_resolutions[k], phase_batches[k]};
  }
  NoiseSchedule noise() const { return {noise_start, noise_end, iterations}; }
};

struct DynamicStageConfig {
  int iterations = 10000;
  int width = 144;
  int height = 80;
  int guidance_width = 576;
  int guidance_height = 320;
  int frames = 24;
  int batch = 1;
  TimeWindowRange window{0.8, 1.0};
  Range noise_start{0.99, 0.99};
  Range noise_end{0.2, 0.5};
  StageTwoWeights weights{1000.0, 0.1};
  double sds_latent = 1.0;
  double guidance_scale = 100.0;
  LevelSchedule levels{4, 500};
  double lr_grid = 0.001;
  double lr_mlp = 0.001;
  int freeze_check_every = 100;

  NoiseSchedule noise() const { return {noise_start, noise_end, iterations}; }
};

// Image-conditioned runs: a reference view supervises stage one.
struct ReferenceConfig {
  std::string image;  // PNG path; empty disables the term
  std::string mask;
  double azimuth = 0.0;
  double elevation = 0.0;
  double radius = 2.0;
  double fov_y = 40.0;
  ReferenceWeights weights{1000.0, 100.0};
};

struct ProviderConfig {
  // remote | echo | analytic | sphere
  std::string type = "remote";
  std::string endpoint = "http://127.0.0.1:8765";
  double timeout_s = 120.0;
  int retries = 3;
  std::array<double, 3> color{0.5, 0.5, 0.5};
  double blend = 1.0;
};

struct GuidanceConfig {
  std::string prompt = "A cat singing";
  ProviderConfig image2d;
  ProviderConfig multiview3d;
  ProviderConfig video;
};

struct OutputConfig {
  int checkpoint_every = 1000;
  int log_every = 1;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  Precision precision = Precision::kFloat;
  FieldConfig model;
  CameraRanges camera;
  RenderConfig render;
  AdamConfig optimizer;  // lr fields unused; stages carry their own rates
  StaticStageConfig static_stage;
  DynamicStageConfig dynamic_stage;
  ReferenceConfig reference;
  GuidanceConfig guidance;
  OutputConfig output;

  void validate() const;
  AdamConfig adam_for_static() const {
    AdamConfig a = optimizer;
    a.lr_grid = static_stage.lr_grid;
    a.lr_mlp = static_stage.lr_mlp;
    return a;
  }
  AdamConfig adam_for_dynamic() const {
    AdamConfig a = optimizer;
    a.lr_grid = dynamic_stage.lr_grid;
    a.lr_mlp = dynamic_stage.lr_mlp;
    return a;
  }
};

// ---------------------------------------------------------------------------
// Schema. V provides section(name, comment) and field(key, ref, comment).

template <typename V>
void visit_grid(V& v, GridConfig& g) {
  v.field("levels", g.levels, "resolution levels L");
  v.field("base_res", g.base_res, "coarsest cells per axis N_min");
  v.field("max_res", g.max_res, "finest cells per axis N_max");
  v.field("features_per_level", g.features_per_level, "feature channels per level F");
  v.field("table_size_log2", g.table_size_log2, "hash table entries per level = 2^this");
  v.field("interpolation", g.interpolation, "linear | smoothstep");
}

template <typename V>
void visit_provider(V& v, ProviderConfig& p) {
  v.field("type", p.type, "remote | echo | analytic | sphere");
  v.field("endpoint", p.endpoint, "base URL of a guidance service (type = remote)");
  v.field("timeout_s", p.timeout_s, "per-request timeout in seconds");
  v.field("retries", p.retries, "retries after a transport failure");
  v.field("color", p.color, "analytic provider mean colour");
  v.field("blend", p.blend, "analytic provider blend in (0, 1]");
}

template <typename V>
void visit_config(V& v, TrainConfig& c) {
  v.section("", "");
  v.field("seed", c.seed, "seed for parameter init, cameras, time windows and noise levels");
  v.field("precision", c.precision, "f32 (production) | f64 (verification)");

  v.section("model.canonical_grid", "Canonical 3D hash grid.");
  visit_grid(v, c.model.canonical_grid);
  v.section("model.deformation_grid", "Deformation 4D hash grid (x, y, z, t).");
  visit_grid(v, c.model.deformation_grid);
  v.section("model", "Network heads and scene bounds.");
  v.field("density_hidden_layers", c.model.density_hidden_layers, "");
  v.field("density_width", c.model.density_width, "");
  v.field("geo_feature_dim", c.model.geo_feature_dim, "feature width passed from density to colour head");
  v.field("color_hidden_layers", c.model.color_hidden_layers, "");
  v.field("color_width", c.model.color_width, "");
  v.field("deform_hidden_layers", c.model.deform_hidden_layers, "");
  v.field("deform_width", c.model.deform_width, "");
  v.field("background_hidden_layers", c.model.background_hidden_layers, "");
  v.field("background_width", c.model.background_width, "");
  v.field("density_bias", c.model.density_bias, "added to the raw density before softplus");
  v.field("grid_init_range", c.model.grid_init_range, "grid tables start uniform in [-r, r]");
  v.field("scene_min", c.model.scene_min, "");
  v.field("scene_max", c.model.scene_max, "");

  v.section("camera", "Camera sampling ranges, [min, max].");
  v.field("azimuth", c.camera.azimuth, "degrees");
  v.field("elevation", c.camera.elevation, "degrees");
  v.field("radius", c.camera.radius, "world units");
  v.field("fov_y", c.camera.fov_y, "degrees");

  v.section("render", "Volume rendering.");
  v.field("samples_train", c.render.samples_train, "samples per ray while training");
  v.field("samples_eval", c.render.samples_eval, "samples per ray for exported renders");
  v.field("jitter", c.render.jitter, "stratified jitter (seeded per pixel)");
  v.field("threads", c.render.threads, "render worker threads");

  v.section("optimizer", "AdamW shared settings; learning rates live in each stage.");
  v.field("beta1", c.optimizer.beta1, "");
  v.field("beta2", c.optimizer.beta2, "");
  v.field("eps", c.optimizer.eps, "");
  v.field("weight_decay", c.optimizer.weight_decay, "decoupled weight decay");
  v.field("clip_norm", c.optimizer.clip_norm, "global gradient-norm clip; <= 0 disables");

  auto& s = c.static_stage;
  v.section("static", "Stage one: canonical field under 2D + multi-view guidance.");
  v.field("iterations", s.iterations, "");
  v.field("phase_starts", s.phase_starts, "iteration at which each resolution phase begins");
  v.field("phase_resolutions", s.phase_resolutions, "square render size per phase");
  v.field("phase_batches", s.phase_batches, "images per step per phase (multiple of 4)");
  v.field("guidance_res_3d", s.guidance_res_3d, "multi-view renders are upsampled to this");
  v.field("guidance_res_2d", s.guidance_res_2d, "2D-guidance renders are upsampled to this");
  v.field("lambda_2d", s.weights.lambda_2d, "per-prompt; 1.2 for several prompts");
  v.field("lambda_3d", s.weights.lambda_3d, "");
  v.field("guidance_scale_2d", s.guidance_scale_2d, "");
  v.field("guidance_scale_3d", s.guidance_scale_3d, "");
  v.field("noise_start", s.noise_start, "noise-level range [lo, hi] at iteration 0");
  v.field("noise_end", s.noise_end, "noise-level range at the last iteration");
  v.field("sds_latent", s.sds.latent, "latent residual weight");
  v.field("sds_dec", s.sds.dec, "decoded-RGB residual weight");
  v.field("lr_grid", s.lr_grid, "");
  v.field("lr_mlp", s.lr_mlp, "");
  v.field("independent_2d_camera", s.independent_2d_camera,
          "sample a separate camera for 2D guidance instead of reusing view 0");

  auto& d = c.dynamic_stage;
  v.section("dynamic", "Stage two: deformation field under video guidance.");
  v.field("iterations", d.iterations, "");
  v.field("width", d.width, "render width (the TV weight is calibrated to this size)");
  v.field("height", d.height, "render height");
  v.field("guidance_width", d.guidance_width, "frames are upsampled to this before guidance");
  v.field("guidance_height", d.guidance_height, "");
  v.field("frames", d.frames, "frames per video");
  v.field("batch", d.batch, "videos per step");
  v.field("window_min", d.window.min_length, "time-window length ~ U[min, max]");
  v.field("window_max", d.window.max_length, "");
  v.field("noise_start", d.noise_start, "");
  v.field("noise_end", d.noise_end, "");
  v.field("lambda_tv", d.weights.lambda_tv, "displacement total-variation weight");
  v.field("lambda_dec", d.weights.lambda_dec, "decoded-RGB weight in the video loss");
  v.field("sds_latent", d.sds_latent, "latent weight in the video loss");
  v.field("guidance_scale", d.guidance_scale, "");
  v.field("level_initial", d.levels.initial_levels, "active deformation levels at iteration 0");
  v.field("level_step", d.levels.step_every, "add one level every this many iterations");
  v.field("lr_grid", d.lr_grid, "");
  v.field("lr_mlp", d.lr_mlp, "");
  v.field("freeze_check_every", d.freeze_check_every, "verify frozen checksums this often");

  v.section("reference", "Image-conditioned runs (empty image disables).");
  v.field("image", c.reference.image, "PNG path");
  v.field("mask", c.reference.mask, "foreground mask PNG path (grayscale)");
  v.field("azimuth", c.reference.azimuth, "");
  v.field("elevation", c.reference.elevation, "");
  v.field("radius", c.reference.radius, "");
  v.field("fov_y", c.reference.fov_y, "");
  v.field("weight_rgb", c.reference.weights.rgb, "");
  v.field("weight_mask", c.reference.weights.mask, "");

  v.section("guidance", "");
  v.field("prompt", c.guidance.prompt, "");
  v.section("guidance.image2d", "2D image guidance provider.");
  visit_provider(v, c.guidance.image2d);
  v.section("guidance.multiview3d", "Multi-view guidance provider.");
  visit_provider(v, c.guidance.multiview3d);
  v.section("guidance.video", "Video guidance provider.");
  visit_provider(v, c.guidance.video);

  v.section("output", "");
  v.field("checkpoint_every", c.output.checkpoint_every, "0 disables periodic checkpoints");
  v.field("log_every", c.output.log_every, "metrics line every this many iterations; 0 disables the log");
}

// ---------------------------------------------------------------------------
// Writer.

namespace detail {

inline std::string enum_text(Interpolation i) {
  return i == Interpolation::kLinear ? "linear" : "smoothstep";
}
inline std::string enum_text(Precision p) { return p == Precision::kFloat ? "f32" : "f64"; }

class TomlWriter {
 public:
  explicit TomlWriter(bool comments) : comments_(comments) {}

  void section(const std::string& name, const std::string& comment) {
    if (!name.empty()) {
      os_ << "\n";
      if (comments_ && !comment.empty()) os_ << "# " << comment << "\n";
      os_ << "[" << name << "]\n";
    }
  }

  template <typename T>
  void field(const std::string& key, const T& value, const std::string& comment) {
    os_ << key << " = " << text(value);
    if (comments_ && !comment.empty()) os_ << "  # " << comment;
    os_ << "\n";
  }

  std::string str() const { return os_.str(); }

 private:
  static std::string text(int v) { return std::to_string(v); }
  static std::string text(std::uint64_t v) { return std::to_string(v); }
  static std::string text(double v) { return toml::format_double(v); }
  static std::string text(bool v) { return v ? "true" : "false"; }
  static std::string text(const std::string& v) { return toml::quote(v); }
  static std::string text(Interpolation v) { return toml::quote(enum_text(v)); }
  static std::string text(Precision v) { return toml::quote(enum_text(v)); }
  static std::string text(const Range& r) {
    return "[" + text(r.lo) + ", " + text(r.hi) + "]";
  }
  template <std::size_t N>
  static std::string text(const std::array<double, N>& a) {
    std::string s = "[";
    for (std::size_t i = 0; i < N; ++i) s += (i ? ", " : "") + text(a[i]);
    return s + "]";
  }
  static std::string text(const std::vector<int>& a) {
    std::string s = "[";
    for (std::size_t i = 0; i < a.size(); ++i) s += (i ? ", " : "") + text(a[i]);
    return s + "]";
  }

  bool comments_;
  std::ostringstream os_;
};

class TomlReader {
 public:
  explicit TomlReader(const toml::Document& doc) : doc_(doc) {}

  void section(const std::string& name, const std::string&) { prefix_ = name; }

  template <typename T>
  void field(const std::string& key, T& out, const std::string&) {
    const std::string full = prefix_.empty() ? key : prefix_ + "." + key;
    known_.insert(full);
    auto it = doc_.find(full);
    if (it == doc_.end()) return;  // absent keys keep their defaults
    read(full, it->second, out);
  }

  // Keys present in the file but not in the schema.
  std::vector<std::string> unknown() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : doc_)
      if (!known_.count(k)) out.push_back(k);
    return out;
  }

 private:
  [[noreturn]] static void bad(const std::string& key, const std::string& want) {
    throw ConfigError("config key '" + key + "' must be " + want);
  }

  static double number(const std::string& key, const toml::Value& v) {
    if (v.is_int()) return double(std::get<std::int64_t>(v.data));
    if (v.is_float()) return std::get<double>(v.data);
    bad(key, "a number");
  }

  static void read(const std::string& key, const toml::Value& v, int& out) {
    if (!v.is_int()) bad(key, "an integer");
    const auto x = std::get<std::int64_t>(v.data);
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
      bad(key, "a 32-bit integer");
    out = static_cast<int>(x);
  }
  static void read(const std::string& key, const toml::Value& v, std::uint64_t& out) {
    if (!v.is_int() || std::get<std::int64_t>(v.data) < 0) bad(key, "a non-negative integer");
    out = static_cast<std::uint64_t>(std::get<std::int64_t>(v.data));
  }
  static void read(const std::string& key, const toml::Value& v, double& out) { out = number(key, v); }
  static void read(const std::string& key, const toml::Value& v, bool& out) {
    if (!v.is_bool()) bad(key, "true or false");
    out = std::get<bool>(v.data);
  }
  static void read(const std::string& key, const toml::Value& v, std::string& out) {
    if (!v.is_string()) bad(key, "a string");
    out = std::get<std::string>(v.data);
  }
  static void read(const std::string& key, const toml::Value& v, Interpolation& out) {
    std::string s;
    read(key, v, s);
    if (s == "linear") out = Interpolation::kLinear;
    else if (s == "smoothstep") out = Interpolation::kSmoothstep;
    else bad(key, "\"linear\" or \"smoothstep\"");
  }
  static void read(const std::string& key, const toml::Value& v, Precision& out) {
    std::string s;
    read(key, v, s);
    if (s == "f32") out = Precision::kFloat;
    else if (s == "f64") out = Precision::kDouble;
    else bad(key, "\"f32\" or \"f64\"");
  }
  static const toml::Array& array(const std::string& key, const toml::Value& v, std::size_t n) {
    if (!v.is_array()) bad(key, "an array");
    const auto& a = std::get<toml::Array>(v.data);
    if (n && a.size() != n) bad(key, "an array of " + std::to_string(n) + " numbers");
    return a;
  }
  static void read(const std::string& key, const toml::Value& v, Range& out) {
    const auto& a = array(key, v, 2);
    out = {number(key, a[0]), number(key, a[1])};
  }
  template <std::size_t N>
  static void read(const std::string& key, const toml::Value& v, std::array<double, N>& out) {
    const auto& a = array(key, v, N);
    for (std::size_t i = 0; i < N; ++i) out[i] = number(key, a[i]);
  }
  static void read(const std::string& key, const toml::Value& v, std::vector<int>& out) {
    const auto& a = array(key, v, 0);
    out.clear();
    for (const auto& x : a) {
      int i = 0;
      read(key, x, i);
      out.push_back(i);
    }
  }

  const toml::Document& doc_;
  std::string prefix_;
  std::set<std::string> known_;
};

}  // namespace detail

inline std::string to_toml(const TrainConfig& cfg, bool comments = true) {
  detail::TomlWriter w(comments);
  TrainConfig copy = cfg;
  visit_config(w, copy);
  return w.str();
}

// Canonical (comment-free) serialisation hash, stored in checkpoints.
inline std::uint64_t config_hash(const TrainConfig& cfg) {
  const std::string text = to_toml(cfg, false);
  return fnv1a(text.data(), text.size());
}

inline void TrainConfig::validate() const {
  model.validate();
  camera.validate();
  optimizer.validate();
  adam_for_static().validate();
  adam_for_dynamic().validate();
  if (render.samples_train < 1 || render.samples_eval < 1)
    throw ConfigError("samples per ray must be positive");
  if (render.threads < 1) throw ConfigError("render.threads must be >= 1");

  const auto& s = static_stage;
  if (s.iterations < 0) throw ConfigError("static.iterations must be non-negative");
  if (s.phase_starts.empty() || s.phase_starts.size() != s.phase_resolutions.size() ||
      s.phase_starts.size() != s.phase_batches.size())
    throw ConfigError("static phase arrays must be non-empty and equally long");
  if (s.phase_starts[0] != 0) throw ConfigError("static.phase_starts must begin at 0");
  for (std::size_t k = 0; k < s.phase_starts.size(); ++k) {
    if (k && s.phase_starts[k] <= s.phase_starts[k - 1])
      throw ConfigError("static.phase_starts must be strictly increasing");
    if (s.phase_resolutions[k] < 1) throw ConfigError("static phase resolution must be positive");
    if (s.phase_batches[k] < 4 || s.phase_batches[k] % 4)
      throw ConfigError("static phase batch must be a positive multiple of 4");
  }
  if (s.guidance_res_2d < 1 || s.guidance_res_3d < 1) throw ConfigError("guidance resolutions must be positive");
  if (s.weights.lambda_2d < 0 || s.weights.lambda_3d < 0) throw ConfigError("lambda weights must be non-negative");
  if (s.sds.latent < 0 || s.sds.dec < 0) throw ConfigError("sds weights must be non-negative");
  s.noise().validate();

  const auto& d = dynamic_stage;
  if (d.iterations < 0) throw ConfigError("dynamic.iterations must be non-negative");
  if (d.width < 1 || d.height < 1 || d.guidance_width < 1 || d.guidance_height < 1)
    throw ConfigError("dynamic resolutions must be positive");
  if (d.frames < 2) throw ConfigError("dynamic.frames must be >= 2");
  if (d.batch < 1) throw ConfigError("dynamic.batch must be >= 1");
  if (!(0 < d.window.min_length && d.window.min_length <= d.window.max_length &&
        d.window.max_length <= 1))
    throw ConfigError("dynamic window lengths must satisfy 0 < min <= max <= 1");
  if (d.weights.lambda_tv < 0 || d.weights.lambda_dec < 0 || d.sds_latent < 0)
    throw ConfigError("dynamic loss weights must be non-negative");
  if (d.levels.initial_levels < 1 || d.levels.step_every < 1)
    throw ConfigError("level schedule needs initial >= 1 and step >= 1");
  if (d.freeze_check_every < 1) throw ConfigError("dynamic.freeze_check_every must be >= 1");
  d.noise().validate();

  for (const auto* p : {&guidance.image2d, &guidance.multiview3d, &guidance.video}) {
    if (p->type != "remote" && p->type != "echo" && p->type != "analytic" && p->type != "sphere")
      throw ConfigError("unknown provider type '" + p->type +
                        "' (expected remote, echo, analytic or sphere)");
    if (p->type == "analytic" && !(p->blend > 0 && p->blend <= 1))
      throw ConfigError("analytic provider blend must be in (0, 1]");
    if (p->timeout_s <= 0 || p->retries < 0) throw ConfigError("provider timeout/retries invalid");
  }
  if (!reference.image.empty() && reference.mask.empty())
    throw ConfigError("reference.image requires reference.mask");
  if (output.checkpoint_every < 0 || output.log_every < 0)
    throw ConfigError("output intervals invalid");
}

inline TrainConfig config_from_toml(std::string_view text) {
  const auto doc = toml::parse(text);
  TrainConfig cfg;
  detail::TomlReader r(doc);
  visit_config(r, cfg);
  const auto unknown = r.unknown();
  if (!unknown.empty()) throw ConfigError("unknown config key '" + unknown.front() + "'");
  cfg.model.sync_domains();
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_toml(ss.str());
}

// ---------------------------------------------------------------------------
// Presets.

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"text4d", "image4d", "toy"};
  return names;
}

inline TrainConfig make_preset(const std::string& name) {
  TrainConfig c;
  if (name == "text4d") return c;
  if (name == "image4d") {
    c.guidance.prompt = "";
    c.reference.image = "reference.png";
    c.reference.mask = "reference_mask.png";
    return c;
  }
  if (name == "toy") {
    c.seed = 7;
    c.precision = Precision::kFloat;
    c.model = toy_field_config();
    c.camera.elevation = {0.0, 30.0};
    c.camera.radius = {1.6, 1.8};
    c.camera.fov_y = {40.0, 45.0};
    c.render.samples_train = 24;
    c.render.samples_eval = 64;
    auto& s = c.static_stage;
    s.iterations = 1000;
    s.phase_starts = {0};
    s.phase_resolutions = {32};
    s.phase_batches = {4};
    s.guidance_res_2d = s.guidance_res_3d = 32;
    auto& d = c.dynamic_stage;
    d.iterations = 1000;
    d.width = d.height = d.guidance_width = d.guidance_height = 32;
    d.frames = 8;
    d.levels = {4, 500};
    d.lr_grid = 0.01;
    d.weights.lambda_tv = 1.0;
    c.guidance.prompt = "a textured sphere sliding along +x";
    for (auto* p : {&c.guidance.image2d, &c.guidance.multiview3d, &c.guidance.video}) p->type = "sphere";
    c.output.checkpoint_every = 0;
    return c;
  }
  std::string list;
  for (const auto& n : preset_names()) list += (list.empty() ? "" : ", ") + n;
  throw UsageError("unknown preset '" + name + "' (available: " + list + ")");
}

// Commented TOML for a preset, headed by notes the schema comments cannot carry.
inline std::string preset_toml(const std::string& name) {
  const TrainConfig cfg = make_preset(name);
  std::string head = "# d4d training configuration, preset '" + name + "'.\n";
  if (name == "text4d")
    head +=
        "# static.lambda_2d is 1.0 by default; prompts that need a stronger 2D prior\n"
        "# use 1.2 (e.g. \"A cat singing\", \"A fox playing a video game\").\n";
  if (name == "image4d")
    head += "# Point reference.image / reference.mask at the conditioning image and its mask.\n";
  if (name == "toy")
    head +=
        "# Tiny resolutions for CPU runs. The 'sphere' providers return renders of an\n"
        "# analytic textured sphere translating by (0.2, 0, 0) over t in [0, 1].\n";
  return head + to_toml(cfg, true);
}

}  // namespace d4d
