// d4d command-line front end.
//
// Exit codes: 0 ok, 1 verification failure, 2 usage or config error,
// 3 I/O error, 4 provider or transport error.

#include "d4d/d4d.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace d4d;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
};

TrainConfig load_with_seed(const std::string& path, const Globals& g) {
  TrainConfig cfg = load_config(path);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

// Runs fn<Real>() for the precision named in the config.
template <typename Fn>
int with_precision(const TrainConfig& cfg, Fn&& fn) {
  if (cfg.precision == Precision::kDouble) return fn.template operator()<double>();
  return fn.template operator()<float>();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string frame_name(const std::string& dir, const std::string& stem, int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04d.png", k);
  return (fs::path(dir) / (stem + buf)).string();
}

// ---------------------------------------------------------------------------

int cmd_init_config(const std::string& path, const std::string& preset, bool force) {
  const std::string text = preset_toml(preset);  // validates the preset name
  if (fs::exists(path) && !force)
    throw UsageError("'" + path + "' exists; pass --force to overwrite");
  write_file(path, text);
  std::cout << "wrote " << path << " (preset " << preset << ")\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string out = "run";
  std::string resume;
  std::string from;  // stage-one checkpoint for train-dynamic
  bool force = false;
  bool quiet = false;
};

int cmd_train_static(const TrainArgs& a, const Globals& g) {
  const TrainConfig cfg = load_with_seed(a.config, g);
  ensure_dir(a.out);
  return with_precision(cfg, [&]<typename Real>() {
    SceneModel<Real> model(cfg.model, cfg.seed);
    auto providers = ProviderSet::for_static(cfg);
    TrainOptions o;
    o.checkpoint_path = (fs::path(a.out) / "static.ckpt").string();
    o.metrics_path = (fs::path(a.out) / "static_metrics.jsonl").string();
    if (!a.quiet) o.log = &std::cout;
    StageRun<Real> run = a.resume.empty() ? begin_stage(model, cfg, Stage::kStatic)
                                          : resume_stage(model, cfg, a.resume, a.force);
    if (run.stage != Stage::kStatic) throw UsageError("'" + a.resume + "' is not a stage-one checkpoint");
    const auto r = run_static(run, providers.view(), cfg, o);
    std::cout << "static stage done: " << r.iterations << " iterations, final loss " << r.final_loss
              << ", checkpoint " << o.checkpoint_path << "\n";
    return 0;
  });
}

int cmd_train_dynamic(const TrainArgs& a, const Globals& g) {
  const TrainConfig cfg = load_with_seed(a.config, g);
  if (a.from.empty() && a.resume.empty())
    throw UsageError("train-dynamic needs --from <stage-one checkpoint> or --resume");
  ensure_dir(a.out);
  return with_precision(cfg, [&]<typename Real>() {
    SceneModel<Real> model(cfg.model, cfg.seed);
    auto providers = ProviderSet::for_dynamic(cfg);
    TrainOptions o;
    o.checkpoint_path = (fs::path(a.out) / "dynamic.ckpt").string();
    o.metrics_path = (fs::path(a.out) / "dynamic_metrics.jsonl").string();
    if (!a.quiet) o.log = &std::cout;
    StageRun<Real> run;
    if (!a.resume.empty()) {
      run = resume_stage(model, cfg, a.resume, a.force);
      if (run.stage != Stage::kDynamic)
        throw UsageError("'" + a.resume + "' is not a stage-two checkpoint");
    } else {
      const Checkpoint ck = decode_checkpoint(read_file(a.from));
      if (ck.meta.stage != Stage::kStatic)
        throw UsageError("'" + a.from + "' is not a stage-one checkpoint");
      // Stage two records the stage-one config: one file drives both stages.
      if (ck.meta.config_hash != config_hash(cfg) && !a.force)
        throw ConfigError("'" + a.from + "' was trained under a different config (use --force)");
      apply_checkpoint<Real>(ck, model.params(), nullptr);
      run = begin_stage(model, cfg, Stage::kDynamic);
    }
    const auto r = run_dynamic(run, providers.view(), cfg, o);
    std::cout << "dynamic stage done: " << r.iterations << " iterations, final loss "
              << r.final_loss << ", mean |d| " << r.final_mean_abs_d << ", checkpoint "
              << o.checkpoint_path << "\n";
    return 0;
  });
}

struct RenderArgs {
  std::string checkpoint;
  std::string config;
  std::string out = "render";
  std::string outputs = "rgb";
  double azimuth = 0, elevation = 15, radius = -1, fov = -1;
  int width = 0, height = 0;
  int turntable = 0;
  double time = 0;
  std::string time_range;  // "start:end:count"
  int samples = 0;
};

int cmd_render(const RenderArgs& a, const Globals& g) {
  bool want_rgb = false, want_opacity = false, want_disp = false;
  for (const auto& o : split_list(a.outputs)) {
    if (o == "rgb") want_rgb = true;
    else if (o == "opacity") want_opacity = true;
    else if (o == "displacement") want_disp = true;
    else throw UsageError("unknown output channel '" + o + "' (rgb, opacity, displacement)");
  }
  const TrainConfig cfg = load_with_seed(a.config, g);

  Camera base;
  base.azimuth = a.azimuth;
  base.elevation = a.elevation;
  base.radius = a.radius > 0 ? a.radius : 0.5 * (cfg.camera.radius.lo + cfg.camera.radius.hi);
  base.fov_y = a.fov > 0 ? a.fov : 0.5 * (cfg.camera.fov_y.lo + cfg.camera.fov_y.hi);
  base.width = a.width > 0 ? a.width : cfg.dynamic_stage.width;
  base.height = a.height > 0 ? a.height : cfg.dynamic_stage.height;
  base.validate();

  // Either a turntable at one time or a time sweep from one camera.
  std::vector<Camera> cams;
  std::vector<double> times;
  if (a.turntable > 0) {
    if (!a.time_range.empty()) throw UsageError("--turntable and --time-range are exclusive");
    for (int k = 0; k < a.turntable; ++k) {
      Camera c = base;
      c.azimuth = wrap_degrees(base.azimuth + 360.0 * k / a.turntable);
      cams.push_back(c);
      times.push_back(a.time);
    }
  } else if (!a.time_range.empty()) {
    double t0 = 0, t1 = 1;
    int n = 0;
    if (std::sscanf(a.time_range.c_str(), "%lf:%lf:%d", &t0, &t1, &n) != 3 || n < 1)
      throw UsageError("--time-range expects start:end:count");
    for (int k = 0; k < n; ++k) {
      cams.push_back(base);
      times.push_back(n == 1 ? t0 : t0 + (t1 - t0) * k / (n - 1));
    }
  } else {
    cams.push_back(base);
    times.push_back(a.time);
  }
  ensure_dir(a.out);

  return with_precision(cfg, [&]<typename Real>() {
    SceneModel<Real> model(cfg.model, cfg.seed);
    const auto meta = load_weights(model, a.checkpoint);
    RenderOptions ro;
    ro.samples_per_ray = a.samples > 0 ? a.samples : cfg.render.samples_eval;
    ro.jitter = false;
    ro.threads = cfg.render.threads;
    ro.use_deformation = meta.stage == Stage::kDynamic;
    DisplacementVideo dv;
    dv.width = base.width;
    dv.height = base.height;
    for (std::size_t k = 0; k < cams.size(); ++k) {
      const auto f = render_frame(model, cams[k], static_cast<Real>(times[k]), ro);
      if (want_rgb) {
        Image im{f.width, f.height, 3, std::vector<double>(f.rgb->value.begin(), f.rgb->value.end())};
        write_png(frame_name(a.out, "rgb", int(k)), im);
      }
      if (want_opacity) {
        Image im{f.width, f.height, 1,
                 std::vector<double>(f.opacity->value.begin(), f.opacity->value.end())};
        write_png(frame_name(a.out, "opacity", int(k)), im);
      }
      if (want_disp) {
        dv.frames++;
        for (Real v : f.displacement->value) dv.data.push_back(static_cast<float>(v));
      }
    }
    if (want_disp) write_displacement((fs::path(a.out) / "displacement.d4dd").string(), dv);
    std::cout << "rendered " << cams.size() << " frame(s) to " << a.out << "\n";
    return 0;
  });
}

int print_report(const verify::Report& r) {
  std::cout << r.to_text();
  std::cout << (r.passed() ? "all checks passed" : "verification FAILED") << "\n";
  return r.passed() ? 0 : int(ExitCode::kVerificationFailed);
}

int cmd_verify(const std::string& suite) {
  if (suite == "all") {
    verify::Report all;
    for (const auto& s : verify::suite_names()) {
      auto r = verify::run_suite(s);
      all.checks.insert(all.checks.end(), r.checks.begin(), r.checks.end());
    }
    return print_report(all);
  }
  return print_report(verify::run_suite(suite));
}

int cmd_gradcheck(const std::string& target) {
  verify::Report r;
  auto one = [&](const std::string& name, auto fn) {
    r.checks.push_back(verify::run_check(name, fn));
  };
  const bool all = target == "all";
  bool known = all;
  auto want = [&](const char* t) {
    const bool w = all || target == t;
    known |= w;
    return w;
  };
  if (want("encode")) one("encode", [](std::ostream& os) {
    const bool a = verify::fd_encode(os, 3);
    const bool b = verify::fd_encode(os, 4);
    return a && b;
  });
  if (want("deform")) one("deform", [](std::ostream& os) { return verify::fd_deform(os); });
  if (want("render")) one("render", [](std::ostream& os) { return verify::fd_render(os); });
  if (want("tv")) one("tv", [](std::ostream& os) { return verify::fd_tv(os); });
  if (want("stage1")) one("stage1", [](std::ostream& os) { return verify::fd_stage1(os); });
  if (want("stage2")) one("stage2", [](std::ostream& os) { return verify::fd_stage2(os); });
  if (!known)
    throw UsageError("unknown gradcheck target '" + target +
                     "' (all, encode, deform, render, tv, stage1, stage2)");
  return print_report(r);
}

int cmd_info(const std::string& config, const std::string& checkpoint) {
  std::cout << "d4d engine\n";
  std::cout << "  checkpoint format D4DCKPT1 v" << kCheckpointVersion << ", guidance protocol "
            << protocol::kVersionString << "\n";
  std::cout << "  presets:";
  for (const auto& p : preset_names()) std::cout << " " << p;
  std::cout << "\n  verify suites:";
  for (const auto& s : verify::suite_names()) std::cout << " " << s;
  std::cout << "\n";
  if (!config.empty()) {
    const TrainConfig cfg = load_config(config);
    std::cout << "config " << config << "\n";
    std::cout << "  hash " << std::hex << config_hash(cfg) << std::dec << "\n";
    std::cout << "  precision " << (cfg.precision == Precision::kDouble ? "f64" : "f32") << "\n";
    SceneModel<float> model(cfg.model, cfg.seed);
    std::size_t total = 0;
    for (auto* p : model.params()) total += p->numel();
    std::cout << "  parameters " << total << " in " << model.params().size() << " tensors\n";
    std::cout << "  static " << cfg.static_stage.iterations << " iterations, dynamic "
              << cfg.dynamic_stage.iterations << " iterations, " << cfg.dynamic_stage.frames
              << " frames at " << cfg.dynamic_stage.width << "x" << cfg.dynamic_stage.height << "\n";
    std::cout << "  providers: 2d=" << cfg.guidance.image2d.type
              << " 3d=" << cfg.guidance.multiview3d.type << " video=" << cfg.guidance.video.type << "\n";
  }
  if (!checkpoint.empty()) {
    const Checkpoint ck = decode_checkpoint(read_file(checkpoint));
    std::cout << "checkpoint " << checkpoint << "\n";
    std::cout << "  stage " << stage_name(ck.meta.stage) << ", iteration " << ck.meta.iteration
              << ", optimizer step " << ck.meta.optimizer_step << "\n";
    std::cout << "  config hash " << std::hex << ck.meta.config_hash << std::dec
              << ", deformation levels " << ck.meta.deformation_levels << "\n";
    for (const auto& t : ck.tensors) {
      std::cout << "  " << t.name << " [";
      for (std::size_t i = 0; i < t.shape.size(); ++i) std::cout << (i ? "," : "") << t.shape[i];
      std::cout << "] " << (t.dtype == 0 ? "f32" : "f64") << (t.frozen ? " frozen" : "")
                << (t.has_moments ? " +moments" : "") << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"d4d: two-stage 4D scene synthesis engine"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");

  std::string init_path, preset = "text4d";
  bool init_force = false;
  auto* init = app.add_subcommand("init-config", "write a fully commented config file");
  init->add_option("path", init_path, "output TOML path")->required();
  init->add_option("--preset", preset, "text4d | image4d | toy");
  init->add_flag("--force", init_force, "overwrite an existing file");

  TrainArgs ts, td;
  auto* tstatic = app.add_subcommand("train-static", "stage one: canonical field and background");
  tstatic->add_option("--config", ts.config, "config TOML")->required();
  tstatic->add_option("--out", ts.out, "output directory");
  tstatic->add_option("--resume", ts.resume, "resume from a stage-one checkpoint");
  tstatic->add_flag("--force", ts.force, "accept a checkpoint written under another config");
  tstatic->add_flag("--quiet", ts.quiet, "no per-iteration log on stdout");

  auto* tdyn = app.add_subcommand("train-dynamic", "stage two: deformation field");
  tdyn->add_option("--config", td.config, "config TOML")->required();
  tdyn->add_option("--from", td.from, "finished stage-one checkpoint");
  tdyn->add_option("--out", td.out, "output directory");
  tdyn->add_option("--resume", td.resume, "resume from a stage-two checkpoint");
  tdyn->add_flag("--force", td.force, "accept a checkpoint written under another config");
  tdyn->add_flag("--quiet", td.quiet, "no per-iteration log on stdout");

  RenderArgs ra;
  auto* render = app.add_subcommand("render", "render frames from a checkpoint");
  render->add_option("--checkpoint", ra.checkpoint, "checkpoint to render")->required();
  render->add_option("--config", ra.config, "config the checkpoint was trained with")->required();
  render->add_option("--out", ra.out, "output directory");
  render->add_option("--outputs", ra.outputs, "comma list of rgb, opacity, displacement");
  render->add_option("--azimuth", ra.azimuth, "degrees");
  render->add_option("--elevation", ra.elevation, "degrees");
  render->add_option("--radius", ra.radius, "world units (default: middle of the config range)");
  render->add_option("--fov", ra.fov, "vertical field of view, degrees");
  render->add_option("--width", ra.width, "pixels (default: stage-two render width)");
  render->add_option("--height", ra.height, "pixels (default: stage-two render height)");
  render->add_option("--turntable", ra.turntable, "number of evenly spaced azimuths");
  render->add_option("--time", ra.time, "time in [0, 1]");
  render->add_option("--time-range", ra.time_range, "start:end:count time sweep");
  render->add_option("--samples", ra.samples, "samples per ray (default: render.samples_eval)");

  std::string grad_target = "all";
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--target", grad_target, "all | encode | deform | render | tv | stage1 | stage2");

  std::string suite = "all";
  auto* verify_cmd = app.add_subcommand("verify", "run verification suites");
  verify_cmd->add_option("--suite", suite, "grids | renderer | losses | e2e-toy | all");

  std::string info_config, info_ckpt;
  auto* info = app.add_subcommand("info", "build, config and checkpoint summary");
  info->add_option("--config", info_config, "config TOML");
  info->add_option("--checkpoint", info_ckpt, "checkpoint file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : int(ExitCode::kUsage);
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*init) return cmd_init_config(init_path, preset, init_force);
    if (*tstatic) return cmd_train_static(ts, g);
    if (*tdyn) return cmd_train_dynamic(td, g);
    if (*render) return cmd_render(ra, g);
    if (*gradcheck) return cmd_gradcheck(grad_target);
    if (*verify_cmd) return cmd_verify(suite);
    if (*info) return cmd_info(info_config, info_ckpt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return int(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return int(ExitCode::kUsage);
  }
  return int(ExitCode::kUsage);
}
