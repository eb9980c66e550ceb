#pragma once

// Two-stage training loop. Stage one fits the canonical field and the
// background under 2D and multi-view guidance; stage two freezes both and
// fits the deformation field under video guidance.
//
// A run is a StageRun: model, optimizer, RNG and iteration counter. All
// randomness of an iteration is drawn from the run's RNG, so a run resumed
// from a checkpoint continues bit-identically.

#include "d4d/camera.hpp"
#include "d4d/checkpoint.hpp"
#include "d4d/config.hpp"
#include "d4d/core.hpp"
#include "d4d/fields.hpp"
#include "d4d/guidance.hpp"
#include "d4d/image_io.hpp"
#include "d4d/losses.hpp"
#include "d4d/optim.hpp"
#include "d4d/remote.hpp"
#include "d4d/renderer.hpp"
#include "d4d/toy.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace d4d {

struct Providers {
  GuidanceProvider* image2d = nullptr;
  GuidanceProvider* multiview3d = nullptr;
  GuidanceProvider* video = nullptr;
};

// Builds one provider from its config section.
inline std::unique_ptr<GuidanceProvider> make_provider(const ProviderConfig& p,
                                                       const FieldConfig& model) {
  if (p.type == "remote") {
    RemoteOptions ro;
    ro.timeout_s = p.timeout_s;
    ro.retries = p.retries;
    return std::make_unique<RemoteProvider>(p.endpoint, ro);
  }
  if (p.type == "echo") return make_echo_provider();
  if (p.type == "analytic") return std::make_unique<AnalyticProvider>(p.color, p.blend);
  if (p.type == "sphere") return make_sphere_provider(SphereScene{}, model.scene_min, model.scene_max);
  throw ConfigError("unknown provider type '" + p.type + "' (remote | echo | analytic | sphere)");
}

// Owns the providers a config asks for. Stages construct only what they use.
struct ProviderSet {
  std::unique_ptr<GuidanceProvider> image2d, multiview3d, video;

  static ProviderSet for_static(const TrainConfig& cfg) {
    ProviderSet s;
    if (cfg.static_stage.weights.lambda_2d > 0)
      s.image2d = make_provider(cfg.guidance.image2d, cfg.model);
    if (cfg.static_stage.weights.lambda_3d > 0)
      s.multiview3d = make_provider(cfg.guidance.multiview3d, cfg.model);
    return s;
  }
  static ProviderSet for_dynamic(const TrainConfig& cfg) {
    ProviderSet s;
    s.video = make_provider(cfg.guidance.video, cfg.model);
    return s;
  }
  Providers view() const { return {image2d.get(), multiview3d.get(), video.get()}; }
};

// One row of the JSONL metrics log.
struct StepMetrics {
  Stage stage = Stage::kStatic;
  int iteration = 0;
  double loss = 0;
  double l2d = 0;
  double l3d = 0;
  double reference = 0;
  double video = 0;
  double tv = 0;
  double mean_abs_d = 0;
  double opacity_mean = 0;
  double grad_norm = 0;
  double noise_t = 0;
  int active_levels = 0;
  int resolution = 0;
  double wall_s = 0;

  std::string to_json() const {
    nlohmann::ordered_json j;
    j["stage"] = stage_name(stage);
    j["iteration"] = iteration;
    j["loss"] = loss;
    if (stage == Stage::kStatic) {
      j["l2d"] = l2d;
      j["l3d"] = l3d;
      j["reference"] = reference;
      j["resolution"] = resolution;
    } else {
      j["video"] = video;
      j["tv"] = tv;
      j["mean_abs_d"] = mean_abs_d;
      j["active_levels"] = active_levels;
    }
    j["opacity_mean"] = opacity_mean;
    j["grad_norm"] = grad_norm;
    j["noise_t"] = noise_t;
    j["wall_s"] = wall_s;
    return j.dump();
  }
};

struct TrainOptions {
  // Periodic and final checkpoints; empty disables them.
  std::string checkpoint_path;
  // JSONL metrics; empty disables the file.
  std::string metrics_path;
  std::ostream* log = nullptr;
  // Stop (and checkpoint) once this iteration count is reached; < 0 runs
  // to the configured length.
  int stop_at = -1;
  // Restrict training cameras to this set (drawn uniformly). Empty samples
  // from the config's camera ranges.
  std::vector<Camera> fixed_cameras;
  std::function<void(const StepMetrics&)> on_step;
};

template <typename Real>
struct StageRun {
  SceneModel<Real>* model = nullptr;
  Stage stage = Stage::kStatic;
  AdamW<Real> opt;
  Rng rng;
  int iteration = 0;
};

namespace detail {

inline std::uint64_t stage_seed(const TrainConfig& cfg, Stage s) {
  return mix_seed(cfg.seed, s == Stage::kStatic ? 0x5157A71Cull : 0xD7A41Cull);
}

template <typename Real>
void configure_groups(SceneModel<Real>& model, Stage s) {
  if (s == Stage::kStatic) {
    model.thaw(ParamGroup::kCanonical);
    model.thaw(ParamGroup::kBackground);
    model.freeze(ParamGroup::kDeformation);
  } else {
    model.freeze(ParamGroup::kCanonical);
    model.freeze(ParamGroup::kBackground);
    model.thaw(ParamGroup::kDeformation);
  }
}

template <typename Real>
CheckpointMeta make_meta(const StageRun<Real>& run, const TrainConfig& cfg) {
  CheckpointMeta m;
  m.stage = run.stage;
  m.iteration = static_cast<std::uint64_t>(run.iteration);
  m.config_hash = config_hash(cfg);
  m.deformation_levels = static_cast<std::uint32_t>(run.model->deformation.encoding().active_levels());
  m.optimizer_step = run.opt.steps();
  m.rng_state = rng_state(run.rng);
  return m;
}

template <typename Real>
void save_run(const StageRun<Real>& run, const TrainConfig& cfg, const std::string& path) {
  if (path.empty()) return;
  save_checkpoint(path, *run.model, &run.opt, make_meta(run, cfg));
}

inline Camera pick_camera(Rng& rng, const TrainOptions& o, const CameraRanges& ranges, int w, int h,
                          CameraMode mode) {
  if (o.fixed_cameras.empty()) return sample_camera(rng, mode, ranges, w, h);
  std::uniform_int_distribution<std::size_t> pick(0, o.fixed_cameras.size() - 1);
  Camera c = o.fixed_cameras[pick(rng)];
  c.width = w;
  c.height = h;
  return c;
}

template <typename Real>
double mean_opacity(const std::vector<RenderOutput<Real>>& frames) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& f : frames) {
    for (Real v : f.opacity->value) s += double(v);
    n += f.opacity->numel();
  }
  return n ? s / double(n) : 0.0;
}

// Mean over pixels of |d| for the opacity-weighted displacement maps.
template <typename Real>
double mean_abs_displacement(const std::vector<RenderOutput<Real>>& frames) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& f : frames) {
    const auto& d = f.displacement->value;
    for (std::size_t p = 0; p < f.pixels(); ++p) {
      const double x = d[3 * p], y = d[3 * p + 1], z = d[3 * p + 2];
      s += std::sqrt(x * x + y * y + z * z);
    }
    n += f.pixels();
  }
  return n ? s / double(n) : 0.0;
}

// Reference view loaded once per run.
struct ReferenceData {
  bool enabled = false;
  Camera camera;
  std::vector<double> image;
  std::vector<double> mask;
};

inline ReferenceData load_reference(const ReferenceConfig& r) {
  ReferenceData d;
  if (r.image.empty()) return d;
  const Image im = read_png(r.image, 3);
  d.enabled = true;
  d.image = im.data;
  if (r.mask.empty()) {
    d.mask.assign(std::size_t(im.width) * im.height, 1.0);
  } else {
    const Image m = read_png(r.mask, 1);
    if (m.width != im.width || m.height != im.height)
      throw ConfigError("reference mask size differs from the reference image");
    d.mask = m.data;
  }
  d.camera.azimuth = r.azimuth;
  d.camera.elevation = r.elevation;
  d.camera.radius = r.radius;
  d.camera.fov_y = r.fov_y;
  d.camera.width = im.width;
  d.camera.height = im.height;
  d.camera.validate();
  return d;
}

class MetricsSink {
 public:
  explicit MetricsSink(const TrainOptions& o) : opt_(o) {
    if (!o.metrics_path.empty()) {
      file_.open(o.metrics_path, std::ios::app);
      if (!file_) throw IoError("cannot open metrics log '" + o.metrics_path + "'");
    }
  }
  void write(const StepMetrics& m, int log_every) {
    if (opt_.on_step) opt_.on_step(m);
    if (log_every <= 0 || m.iteration % log_every != 0) return;
    const std::string line = m.to_json();
    if (file_) file_ << line << '\n' << std::flush;
    if (opt_.log) *opt_.log << line << '\n';
  }

 private:
  const TrainOptions& opt_;
  std::ofstream file_;
};

// Rethrows provider failures and numeric faults after flushing a checkpoint
// so the run can be inspected or resumed.
template <typename Real, typename Fn>
void guarded_step(StageRun<Real>& run, const TrainConfig& cfg, const TrainOptions& o, Fn&& fn) {
  try {
    fn();
  } catch (const TransportError&) {
    save_run(run, cfg, o.checkpoint_path);
    throw;
  } catch (const ProviderError&) {
    save_run(run, cfg, o.checkpoint_path);
    throw;
  } catch (const NumericError&) {
    if (!o.checkpoint_path.empty()) save_run(run, cfg, o.checkpoint_path + ".diag");
    throw;
  }
}

inline void check_finite_loss(double loss, Stage s, int it) {
  if (!std::isfinite(loss))
    throw NumericError(stage_name(s) + " loss is not finite at iteration " + std::to_string(it));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Run construction.

template <typename Real>
StageRun<Real> begin_stage(SceneModel<Real>& model, const TrainConfig& cfg, Stage s) {
  cfg.validate();
  StageRun<Real> run;
  run.model = &model;
  run.stage = s;
  detail::configure_groups(model, s);
  run.opt = AdamW<Real>(model.params(),
                        s == Stage::kStatic ? cfg.adam_for_static() : cfg.adam_for_dynamic());
  run.rng.seed(detail::stage_seed(cfg, s));
  run.iteration = 0;
  if (s == Stage::kDynamic) model.deformation.set_active_levels(0, cfg.dynamic_stage.levels);
  return run;
}

// Restores a run from a checkpoint written by either stage. A config hash
// mismatch is a ConfigError unless force is set.
template <typename Real>
StageRun<Real> resume_stage(SceneModel<Real>& model, const TrainConfig& cfg, const std::string& path,
                            bool force = false) {
  const Checkpoint ck = decode_checkpoint(read_file(path));
  if (ck.meta.config_hash != config_hash(cfg) && !force)
    throw ConfigError("checkpoint '" + path + "' was written under a different config (use --force)");
  StageRun<Real> run = begin_stage(model, cfg, ck.meta.stage);
  apply_checkpoint(ck, model.params(), &run.opt);
  restore_rng(run.rng, ck.meta.rng_state);
  run.iteration = static_cast<int>(ck.meta.iteration);
  if (run.stage == Stage::kDynamic)
    model.deformation.set_active_levels(run.iteration, cfg.dynamic_stage.levels);
  return run;
}

// Loads only the model weights of a checkpoint (for rendering or to seed
// stage two from a finished stage one).
template <typename Real>
CheckpointMeta load_weights(SceneModel<Real>& model, const std::string& path) {
  const Checkpoint ck = decode_checkpoint(read_file(path));
  apply_checkpoint<Real>(ck, model.params(), nullptr);
  return ck.meta;
}

// ---------------------------------------------------------------------------
// Stage one.

struct StaticResult {
  int iterations = 0;
  double final_loss = 0;
};

template <typename Real>
StaticResult run_static(StageRun<Real>& run, const Providers& prov, const TrainConfig& cfg,
                        const TrainOptions& o = {}) {
  if (run.stage != Stage::kStatic) throw UsageError("run_static needs a static-stage run");
  const auto& sc = cfg.static_stage;
  const auto noise = sc.noise();
  const auto reference = detail::load_reference(cfg.reference);
  const int end = o.stop_at >= 0 ? std::min(o.stop_at, sc.iterations) : sc.iterations;
  detail::MetricsSink sink(o);
  SceneModel<Real>& model = *run.model;
  const auto t0 = std::chrono::steady_clock::now();
  StaticResult result;

  while (run.iteration < end) {
    const int it = run.iteration;
    StepMetrics m;
    m.stage = Stage::kStatic;
    m.iteration = it;
    detail::guarded_step(run, cfg, o, [&] {
      const auto phase = sc.phase_at(it);
      if (phase.batch % 4 != 0) throw ConfigError("static batch must be a multiple of 4");
      const int groups = phase.batch / 4;
      const double t = sample_noise_level(noise, it, run.rng);
      const std::uint64_t req_seed = run.rng();

      RenderOptions ro;
      ro.samples_per_ray = cfg.render.samples_train;
      ro.jitter = cfg.render.jitter;
      ro.use_deformation = false;
      ro.threads = cfg.render.threads;

      GuidanceCall c2{cfg.guidance.prompt, t, sc.guidance_scale_2d, req_seed, sc.sds};
      GuidanceCall c3{cfg.guidance.prompt, t, sc.guidance_scale_3d, req_seed, sc.sds};

      Tape<Real> tape;
      std::vector<NodePtr<Real>> parts;
      std::vector<Real> weights;
      std::vector<RenderOutput<Real>> renders;
      const bool need_2d = sc.weights.lambda_2d > 0;
      for (int g = 0; g < groups; ++g) {
        const Camera base = detail::pick_camera(run.rng, o, cfg.camera, phase.resolution,
                                                phase.resolution, CameraMode::kStatic);
        StageOneViews<Real> views;
        for (const Camera& cam : four_view_cameras(base)) {
          ro.jitter_seed = run.rng();
          auto r = render_frame(tape, model, cam, Real(0), ro);
          renders.push_back(r);
          views.multiview.push_back(upsample(tape, r.rgb, sc.guidance_res_3d, sc.guidance_res_3d));
          Camera gc = cam;
          gc.width = gc.height = sc.guidance_res_3d;
          views.multiview_cameras.push_back(gc);
        }
        if (need_2d) {
          NodePtr<Real> single = renders[renders.size() - 4].rgb;
          Camera sc2 = views.multiview_cameras[0];
          if (sc.independent_2d_camera) {
            sc2 = detail::pick_camera(run.rng, o, cfg.camera, phase.resolution, phase.resolution,
                                      CameraMode::kStatic);
            ro.jitter_seed = run.rng();
            auto r = render_frame(tape, model, sc2, Real(0), ro);
            renders.push_back(r);
            single = r.rgb;
          }
          views.single = upsample(tape, single, sc.guidance_res_2d, sc.guidance_res_2d);
          sc2.width = sc2.height = sc.guidance_res_2d;
          views.single_camera = sc2;
        }
        StageOneTerms terms;
        auto l = stage1_loss(tape, views, prov.image2d, prov.multiview3d, sc.weights, c2, c3, &terms);
        m.l2d += terms.l2d / groups;
        m.l3d += terms.l3d / groups;
        parts.push_back(l);
        weights.push_back(static_cast<Real>(1.0 / groups));
      }
      if (reference.enabled) {
        RenderOptions rr = ro;
        rr.jitter_seed = run.rng();
        auto r = render_frame(tape, model, reference.camera, Real(0), rr);
        auto l = reference_view_loss(tape, r, reference.image, reference.mask, cfg.reference.weights);
        m.reference = double(l->value[0]);
        parts.push_back(l);
        weights.push_back(Real(1));
      }
      auto loss = weighted_sum(tape, parts, weights);
      m.loss = double(loss->value[0]);
      detail::check_finite_loss(m.loss, Stage::kStatic, it);
      tape.backward(loss);
      m.grad_norm = run.opt.step();
      for (auto* p : model.params()) p->zero_grad();
      m.opacity_mean = detail::mean_opacity(renders);
      m.noise_t = t;
      m.resolution = phase.resolution;
    });
    ++run.iteration;
    m.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.final_loss = m.loss;
    sink.write(m, cfg.output.log_every);
    if (cfg.output.checkpoint_every > 0 && run.iteration % cfg.output.checkpoint_every == 0)
      detail::save_run(run, cfg, o.checkpoint_path);
  }
  detail::save_run(run, cfg, o.checkpoint_path);
  result.iterations = run.iteration;
  return result;
}

// ---------------------------------------------------------------------------
// Stage two.

struct DynamicResult {
  int iterations = 0;
  double final_loss = 0;
  double final_mean_abs_d = 0;
};

template <typename Real>
DynamicResult run_dynamic(StageRun<Real>& run, const Providers& prov, const TrainConfig& cfg,
                          const TrainOptions& o = {}) {
  if (run.stage != Stage::kDynamic) throw UsageError("run_dynamic needs a dynamic-stage run");
  if (!prov.video) throw ConfigError("stage two needs a video guidance provider");
  const auto& dc = cfg.dynamic_stage;
  const auto noise = dc.noise();
  const int end = o.stop_at >= 0 ? std::min(o.stop_at, dc.iterations) : dc.iterations;
  detail::MetricsSink sink(o);
  SceneModel<Real>& model = *run.model;
  const std::uint64_t canon_sum = model.group_checksum(ParamGroup::kCanonical);
  const std::uint64_t bg_sum = model.group_checksum(ParamGroup::kBackground);
  const auto t0 = std::chrono::steady_clock::now();
  DynamicResult result;

  while (run.iteration < end) {
    const int it = run.iteration;
    StepMetrics m;
    m.stage = Stage::kDynamic;
    m.iteration = it;
    detail::guarded_step(run, cfg, o, [&] {
      m.active_levels = model.deformation.set_active_levels(it, dc.levels);
      const double t = sample_noise_level(noise, it, run.rng);
      const std::uint64_t req_seed = run.rng();
      GuidanceCall call{cfg.guidance.prompt, t, dc.guidance_scale, req_seed, {dc.sds_latent, 0.0}};

      RenderOptions ro;
      ro.samples_per_ray = cfg.render.samples_train;
      ro.jitter = cfg.render.jitter;
      ro.use_deformation = true;
      ro.threads = cfg.render.threads;

      Tape<Real> tape;
      std::vector<NodePtr<Real>> parts;
      std::vector<Real> weights;
      std::vector<RenderOutput<Real>> renders;
      for (int b = 0; b < dc.batch; ++b) {
        const Camera cam =
            detail::pick_camera(run.rng, o, cfg.camera, dc.width, dc.height, CameraMode::kDynamic);
        const auto ts = sample_time_window(run.rng, dc.frames, dc.window);
        ro.jitter_seed = run.rng();
        auto video = render_video(tape, model, cam, ts, ro);
        std::vector<NodePtr<Real>> rgb, disp;
        for (auto& f : video.frames) {
          rgb.push_back(upsample(tape, f.rgb, dc.guidance_height, dc.guidance_width));
          disp.push_back(f.displacement);
          renders.push_back(f);
        }
        Camera gc = cam;
        gc.width = dc.guidance_width;
        gc.height = dc.guidance_height;
        StageTwoTerms terms;
        auto l = stage2_loss(tape, rgb, disp, gc, ts, *prov.video, dc.weights, call, &terms);
        m.video += terms.video / dc.batch;
        m.tv += terms.tv / dc.batch;
        parts.push_back(l);
        weights.push_back(static_cast<Real>(1.0 / dc.batch));
      }
      auto loss = weighted_sum(tape, parts, weights);
      m.loss = double(loss->value[0]);
      detail::check_finite_loss(m.loss, Stage::kDynamic, it);
      tape.backward(loss);
      m.grad_norm = run.opt.step();
      for (auto* p : model.params()) p->zero_grad();
      m.opacity_mean = detail::mean_opacity(renders);
      m.mean_abs_d = detail::mean_abs_displacement(renders);
      m.noise_t = t;
    });
    ++run.iteration;
    if (dc.freeze_check_every > 0 && run.iteration % dc.freeze_check_every == 0) {
      if (model.group_checksum(ParamGroup::kCanonical) != canon_sum ||
          model.group_checksum(ParamGroup::kBackground) != bg_sum)
        throw NumericError("frozen canonical or background parameters changed during stage two");
    }
    m.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.final_loss = m.loss;
    result.final_mean_abs_d = m.mean_abs_d;
    sink.write(m, cfg.output.log_every);
    if (cfg.output.checkpoint_every > 0 && run.iteration % cfg.output.checkpoint_every == 0)
      detail::save_run(run, cfg, o.checkpoint_path);
  }
  detail::save_run(run, cfg, o.checkpoint_path);
  result.iterations = run.iteration;
  return result;
}

// Fresh-run conveniences.
template <typename Real>
StaticResult train_static(SceneModel<Real>& model, const Providers& prov, const TrainConfig& cfg,
                          const TrainOptions& o = {}) {
  auto run = begin_stage(model, cfg, Stage::kStatic);
  return run_static(run, prov, cfg, o);
}

template <typename Real>
DynamicResult train_dynamic(SceneModel<Real>& model, const Providers& prov, const TrainConfig& cfg,
                            const TrainOptions& o = {}) {
  auto run = begin_stage(model, cfg, Stage::kDynamic);
  return run_dynamic(run, prov, cfg, o);
}

}  // namespace d4d
