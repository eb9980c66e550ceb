#include "d4d/trainer.hpp"
#include "d4d/verify.hpp"

#include "helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace d4d {
namespace {

// Few iterations at tiny resolution on the toy preset.
TrainConfig small_config(int static_iters, int dynamic_iters) {
  auto c = make_preset("toy");
  c.precision = Precision::kDouble;
  c.render.samples_train = 8;
  c.render.samples_eval = 8;
  c.render.jitter = false;
  auto& s = c.static_stage;
  s.iterations = static_iters;
  s.phase_resolutions = {12};
  s.guidance_res_2d = s.guidance_res_3d = 12;
  auto& d = c.dynamic_stage;
  d.iterations = dynamic_iters;
  d.width = d.height = d.guidance_width = d.guidance_height = 8;
  d.frames = 3;
  d.levels = {1, 2};
  d.freeze_check_every = 1;
  c.output.checkpoint_every = 0;
  return c;
}

// Wraps a provider and fails (or returns NaN) on a chosen call.
class FaultyProvider : public GuidanceProvider {
 public:
  enum class Mode { kThrow, kNan };
  FaultyProvider(int fail_on_call, Mode mode) : fail_on_(fail_on_call), mode_(mode) {}
  std::string id() const override { return "faulty"; }
  bool supports(GuidanceKind) const override { return true; }
  GuidanceResponse denoise(const GuidanceRequest& r) override {
    ++calls;
    GuidanceResponse resp;
    resp.provider_id = id();
    resp.denoised_rgb = r.images;
    if (calls == fail_on_) {
      if (mode_ == Mode::kThrow) throw ProviderError("model crashed");
      resp.denoised_rgb[0] = std::numeric_limits<double>::quiet_NaN();
    }
    return resp;
  }
  int calls = 0;

 private:
  int fail_on_;
  Mode mode_;
};

double mean_abs_to(const std::vector<double>& rgb, double v) {
  double s = 0;
  for (double x : rgb) s += std::abs(x - v);
  return s / double(rgb.size());
}

double view_distance(SceneModel<double>& model, double gray) {
  double total = 0;
  const auto cams = ring_cameras(4, 15.0, 1.7, 42.0, 12, 12);
  RenderOptions ro;
  ro.samples_per_ray = 8;
  ro.jitter = false;
  ro.use_deformation = false;
  for (const auto& cam : cams) total += mean_abs_to(render_frame(model, cam, 0.0, ro).rgb->value, gray);
  return total / double(cams.size());
}

TEST(TrainStatic, AnalyticGrayProvidersPullViewsToGray) {
  auto cfg = small_config(150, 0);
  for (auto* p : {&cfg.guidance.image2d, &cfg.guidance.multiview3d}) {
    p->type = "analytic";
    p->color = {0.2, 0.2, 0.2};
    p->blend = 1.0;
  }
  SceneModel<double> model(cfg.model, cfg.seed);
  const double before = view_distance(model, 0.2);
  auto providers = ProviderSet::for_static(cfg);
  train_static(model, providers.view(), cfg);
  const double after = view_distance(model, 0.2);
  EXPECT_GT(before, 0.2);
  EXPECT_LT(after, 0.05) << "before " << before;
}

TEST(TrainStatic, ZeroIterationsLeaveTheModelAndWriteACheckpoint) {
  auto cfg = small_config(0, 0);
  const auto dir = test::temp_dir("zero_iters");
  SceneModel<double> model(cfg.model, cfg.seed), fresh(cfg.model, cfg.seed);
  auto providers = ProviderSet::for_static(cfg);
  TrainOptions o;
  o.checkpoint_path = dir + "/static.ckpt";
  const auto r = train_static(model, providers.view(), cfg, o);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(checksum(model.params()), checksum(fresh.params()));
  ASSERT_TRUE(std::filesystem::exists(o.checkpoint_path));
  SceneModel<double> loaded(cfg.model, cfg.seed + 1);
  const auto meta = load_checkpoint(o.checkpoint_path, loaded, static_cast<AdamW<double>*>(nullptr),
                                    config_hash(cfg));
  EXPECT_EQ(meta.iteration, 0u);
  EXPECT_EQ(meta.stage, Stage::kStatic);
  EXPECT_EQ(checksum(loaded.params()), checksum(fresh.params()));
}

TEST(TrainStatic, MetricsLogHasOneJsonLinePerIteration) {
  auto cfg = small_config(4, 0);
  const auto dir = test::temp_dir("metrics");
  SceneModel<double> model(cfg.model, cfg.seed);
  auto providers = ProviderSet::for_static(cfg);
  TrainOptions o;
  o.metrics_path = dir + "/m.jsonl";
  int callbacks = 0;
  o.on_step = [&](const StepMetrics&) { ++callbacks; };
  train_static(model, providers.view(), cfg, o);
  std::ifstream in(o.metrics_path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("stage"), "static");
    EXPECT_TRUE(j.at("loss").is_number());
    EXPECT_TRUE(j.contains("wall_s"));
    EXPECT_TRUE(j.contains("opacity_mean"));
    ++lines;
  }
  EXPECT_EQ(lines, 4);
  EXPECT_EQ(callbacks, 4);
}

TEST(TrainStatic, ProviderFailureFlushesACheckpoint) {
  auto cfg = small_config(10, 0);
  cfg.static_stage.weights.lambda_2d = 0.0;
  const auto dir = test::temp_dir("provider_fail");
  SceneModel<double> model(cfg.model, cfg.seed);
  FaultyProvider faulty(4, FaultyProvider::Mode::kThrow);
  TrainOptions o;
  o.checkpoint_path = dir + "/static.ckpt";
  EXPECT_THROW(train_static(model, Providers{nullptr, &faulty, nullptr}, cfg, o), ProviderError);
  ASSERT_TRUE(std::filesystem::exists(o.checkpoint_path));
  SceneModel<double> loaded(cfg.model, 99);
  const auto meta = load_checkpoint(o.checkpoint_path, loaded, static_cast<AdamW<double>*>(nullptr));
  EXPECT_EQ(meta.iteration, 3u);
  EXPECT_EQ(checksum(loaded.params()), checksum(model.params()));
}

TEST(TrainDynamic, NonFiniteLossAbortsWithDiagnostics) {
  auto cfg = small_config(0, 10);
  const auto dir = test::temp_dir("nan");
  SceneModel<double> model(cfg.model, cfg.seed);
  FaultyProvider faulty(2, FaultyProvider::Mode::kNan);
  TrainOptions o;
  o.checkpoint_path = dir + "/dynamic.ckpt";
  EXPECT_THROW(train_dynamic(model, Providers{nullptr, nullptr, &faulty}, cfg, o), NumericError);
  EXPECT_TRUE(std::filesystem::exists(o.checkpoint_path + ".diag"));
}

TEST(TrainDynamic, CanonicalAndBackgroundStayBitIdentical) {
  auto cfg = small_config(0, 6);
  SceneModel<double> model(cfg.model, cfg.seed);
  const auto canonical = model.group_checksum(ParamGroup::kCanonical);
  const auto background = model.group_checksum(ParamGroup::kBackground);
  const auto deformation = model.group_checksum(ParamGroup::kDeformation);
  auto providers = ProviderSet::for_dynamic(cfg);
  std::vector<int> levels;
  TrainOptions o;
  o.on_step = [&](const StepMetrics& m) { levels.push_back(m.active_levels); };
  train_dynamic(model, providers.view(), cfg, o);
  EXPECT_EQ(model.group_checksum(ParamGroup::kCanonical), canonical);
  EXPECT_EQ(model.group_checksum(ParamGroup::kBackground), background);
  EXPECT_NE(model.group_checksum(ParamGroup::kDeformation), deformation);
  EXPECT_TRUE(model.is_frozen(ParamGroup::kCanonical));
  // One level at first, another every two iterations, capped at four.
  EXPECT_EQ(levels, (std::vector<int>{1, 1, 2, 2, 3, 3}));
}

TEST(TrainDynamic, SphereOracleLossDropsTenfold) {
  // Canonical fitted to the sphere at t = 0, then the deformation learns the motion.
  auto cfg = make_preset("toy");
  cfg.render.samples_train = 16;
  auto& d = cfg.dynamic_stage;
  d.iterations = 2000;
  d.width = d.height = d.guidance_width = d.guidance_height = 12;
  d.frames = 4;
  d.weights.lambda_tv = 0.0;
  cfg.output.log_every = 0;
  SceneModel<float> model(cfg.model, cfg.seed);
  CanonicalFitOptions fo;
  fo.iterations = 600;
  fit_canonical(model, SphereScene{}, fo);
  auto providers = ProviderSet::for_dynamic(cfg);
  std::vector<double> losses;
  TrainOptions o;
  o.fixed_cameras = ring_cameras(4, 15, 1.7, 40, 12, 12);
  o.on_step = [&](const StepMetrics& m) { losses.push_back(m.loss); };
  train_dynamic(model, providers.view(), cfg, o);
  // Averages over the first and last 50 steps smooth out the random time windows.
  double first = 0, last = 0;
  for (int i = 0; i < 50; ++i) {
    first += losses[i];
    last += losses[losses.size() - 1 - i];
  }
  EXPECT_GE(first / last, 10.0) << "first " << first / 50 << " last " << last / 50;
}

TEST(TrainDynamic, NeedsAVideoProvider) {
  auto cfg = small_config(0, 2);
  SceneModel<double> model(cfg.model, cfg.seed);
  EXPECT_THROW(train_dynamic(model, Providers{}, cfg), ConfigError);
}

TEST(Trainer, UnknownProviderTypeIsConfigError) {
  ProviderConfig p;
  p.type = "magic";
  EXPECT_THROW(make_provider(p, FieldConfig{}), ConfigError);
}

TEST(Trainer, ResumeMismatchedConfigNeedsForce) {
  auto cfg = small_config(2, 0);
  const auto dir = test::temp_dir("resume_hash");
  SceneModel<double> model(cfg.model, cfg.seed);
  auto providers = ProviderSet::for_static(cfg);
  TrainOptions o;
  o.checkpoint_path = dir + "/s.ckpt";
  train_static(model, providers.view(), cfg, o);
  auto other = cfg;
  other.static_stage.iterations = 3;
  SceneModel<double> m2(cfg.model, cfg.seed);
  EXPECT_THROW(resume_stage(m2, other, o.checkpoint_path, false), ConfigError);
  auto run = resume_stage(m2, other, o.checkpoint_path, true);
  EXPECT_EQ(run.iteration, 2);
}

TEST(Trainer, SeededRunsAndResumeAreBitIdentical) {
  const auto c = verify::determinism();
  EXPECT_TRUE(c.passed) << c.detail;
}

}  // namespace
}  // namespace d4d
