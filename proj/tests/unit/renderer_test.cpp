#include "d4d/fields.hpp"
#include "d4d/renderer.hpp"
#include "d4d/verify.hpp"

#include "helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace d4d {
namespace {

using test::fill;
using test::tiny_fields;

Camera small_camera(double az = 30, int size = 6) {
  Camera c;
  c.azimuth = az;
  c.elevation = 15;
  c.radius = 1.6;
  c.fov_y = 45;
  c.width = c.height = size;
  return c;
}

RenderOptions few_samples(int n = 8) {
  RenderOptions o;
  o.samples_per_ray = n;
  o.jitter = false;
  return o;
}

void randomize(const ParamList<double>& ps, std::uint64_t seed, double range = 1.0) {
  Rng rng(seed);
  for (auto* p : ps) test::fill_uniform(*p, rng, -range, range);
}

// Constant displacement d for every point and time.
void constant_deformation(SceneModel<double>& model, double dx) {
  auto& head = model.deformation.head();
  const int last = head.layer_count() - 1;
  fill(head.weight(last), 0.0);
  fill(head.bias(last), 0.0);
  head.bias(last).value[0] = dx;
}

TEST(RenderFrame, NoDensityShowsBackground) {
  auto cfg = tiny_fields();
  cfg.density_bias = -200.0;
  SceneModel<double> model(cfg, 1);
  fill(model.canonical.density_head().bias(model.canonical.density_head().layer_count() - 1), 0.0);
  fill(model.canonical.density_head().weight(model.canonical.density_head().layer_count() - 1), 0.0);
  const auto cam = small_camera();
  const auto out = render_frame(model, cam, 0.5, few_samples());
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const std::size_t p = std::size_t(y) * cam.width + x;
      const Eigen::Vector3d d = cam.pixel_direction(x, y);
      const auto bg = shade_background(model.background, Vec3<double>(d));
      EXPECT_NEAR(out.opacity->value[p], 0.0, 1e-60);
      for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(out.rgb->value[3 * p + c], bg[c], 1e-12);
        EXPECT_EQ(out.displacement->value[3 * p + c], 0.0);
      }
    }
}

TEST(RenderFrame, CameraMissingTheBoxRendersBackground) {
  SceneModel<double> model(tiny_fields(), 2);
  randomize(model.canonical.params(), 3);
  Camera cam = small_camera(0);
  cam.elevation = 0;
  cam.look_at = {0.0, 10.0, 0.0};
  const auto out = render_frame(model, cam, 0.0, few_samples());
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const std::size_t p = std::size_t(y) * cam.width + x;
      const auto bg = shade_background(model.background, Vec3<double>(cam.pixel_direction(x, y)));
      EXPECT_EQ(out.opacity->value[p], 0.0);
      for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(out.rgb->value[3 * p + c], bg[c], 1e-15);
        EXPECT_EQ(out.displacement->value[3 * p + c], 0.0);
      }
    }
}

TEST(RenderFrame, OutputsAreBounded) {
  SceneModel<double> model(tiny_fields(), 4);
  randomize(model.canonical.params(), 5, 2.0);
  const auto out = render_frame(model, small_camera(), 0.3, few_samples(16));
  for (double v : out.opacity->value) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (double v : out.rgb->value) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0 + 1e-12);
  }
}

TEST(RenderFrame, UniformMediumConvergesToClosedForm) {
  const auto c = verify::renderer_analytic();
  EXPECT_TRUE(c.passed) << c.detail;
}

TEST(RenderFrame, ZeroDeformationGivesZeroDisplacement) {
  SceneModel<double> model(tiny_fields(), 6);
  randomize(model.canonical.params(), 7);
  const auto out = render_frame(model, small_camera(), 0.7, few_samples());
  for (double v : out.displacement->value) EXPECT_EQ(v, 0.0);
}

TEST(RenderFrame, TimeAndSampleValidation) {
  SceneModel<double> model(tiny_fields(), 1);
  EXPECT_THROW(render_frame(model, small_camera(), 1.5, few_samples()), DomainError);
  EXPECT_THROW(render_frame(model, small_camera(), 0.5, few_samples(0)), UsageError);
}

TEST(RenderFrame, ThreadsDoNotChangeTheImage) {
  SceneModel<double> model(tiny_fields(), 8);
  randomize(model.canonical.params(), 9);
  auto opt = few_samples();
  const auto a = render_frame(model, small_camera(), 0.2, opt);
  opt.threads = 3;
  const auto b = render_frame(model, small_camera(), 0.2, opt);
  EXPECT_EQ(a.rgb->value, b.rgb->value);
  EXPECT_EQ(a.opacity->value, b.opacity->value);
}

TEST(RenderVideo, ZeroDeformationFramesAreIdentical) {
  SceneModel<double> model(tiny_fields(), 10);
  randomize(model.canonical.params(), 11);
  const auto ts = time_window(0.0, 1.0, 24);
  const auto v = render_video(model, small_camera(), ts, few_samples());
  ASSERT_EQ(v.frames.size(), 24u);
  for (const auto& f : v.frames) {
    EXPECT_EQ(f.rgb->value, v.frames[0].rgb->value);
    for (double d : f.displacement->value) EXPECT_EQ(d, 0.0);
  }
}

TEST(RenderVideo, ConstantDeformationFramesMatchEachOtherNotCanonical) {
  SceneModel<double> model(tiny_fields(), 12);
  randomize(model.canonical.params(), 13);
  constant_deformation(model, 0.15);
  const auto ts = time_window(0.0, 1.0, 6);
  const auto v = render_video(model, small_camera(), ts, few_samples());
  for (const auto& f : v.frames) EXPECT_EQ(f.rgb->value, v.frames[0].rgb->value);
  auto opt = few_samples();
  opt.use_deformation = false;
  const auto canonical = render_frame(model, small_camera(), 0.0, opt);
  EXPECT_NE(canonical.rgb->value, v.frames[0].rgb->value);
}

TEST(RenderVideo, TimestampValidation) {
  SceneModel<double> model(tiny_fields(), 1);
  EXPECT_THROW(render_video(model, small_camera(), {0.5}, few_samples()), UsageError);
  EXPECT_THROW(render_video(model, small_camera(), {0.0, 0.3, 1.0}, few_samples()), UsageError);
  EXPECT_THROW(render_video(model, small_camera(), {0.5, 1.5}, few_samples()), DomainError);
}

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, -1.0, 1.0);
  return v;
}

TEST(RenderBackward, ZeroUpstreamGivesZeroGradients) {
  SceneModel<double> model(tiny_fields(), 14);
  randomize(model.params(), 15, 0.5);
  const auto out = render_frame(model, small_camera(), 0.4, few_samples());
  zero_grads(model.params());
  const std::vector<double> z3(3 * out.pixels(), 0.0), z1(out.pixels(), 0.0);
  render_backward<double>(out, z3, z1, z3);
  for (auto* p : model.params())
    for (double g : p->grad) EXPECT_EQ(g, 0.0) << p->name;
}

TEST(RenderBackward, FrozenCanonicalGetsNoGradient) {
  SceneModel<double> model(tiny_fields(), 16);
  randomize(model.params(), 17, 0.5);
  model.freeze(ParamGroup::kCanonical);
  model.freeze(ParamGroup::kBackground);
  const auto out = render_frame(model, small_camera(), 0.4, few_samples());
  zero_grads(model.params());
  const auto d_rgb = random_vector(3 * out.pixels(), 18);
  const std::vector<double> z1(out.pixels(), 0.0), z3(3 * out.pixels(), 0.0);
  render_backward<double>(out, d_rgb, z1, z3);
  for (auto* p : model.canonical.params())
    for (double g : p->grad) EXPECT_EQ(g, 0.0) << p->name;
  double deformation_norm = 0;
  for (auto* p : model.deformation.params())
    for (double g : p->grad) deformation_norm += g * g;
  EXPECT_GT(deformation_norm, 0.0);
}

TEST(RenderBackward, MatchesFiniteDifferences) {
  auto cfg = tiny_fields(4);
  cfg.canonical_grid.interpolation = cfg.deformation_grid.interpolation = Interpolation::kSmoothstep;
  SceneModel<double> model(cfg, 19);
  randomize(model.params(), 20, 0.5);
  const auto cam = small_camera(40, 4);
  const auto opt = few_samples(8);
  const auto w_rgb = random_vector(3 * 16, 21), w_op = random_vector(16, 22),
             w_disp = random_vector(3 * 16, 23);
  auto loss = [&] {
    const auto out = render_frame(model, cam, 0.6, opt);
    double s = 0;
    for (std::size_t i = 0; i < w_rgb.size(); ++i)
      s += w_rgb[i] * out.rgb->value[i] + w_disp[i] * out.displacement->value[i];
    for (std::size_t i = 0; i < w_op.size(); ++i) s += w_op[i] * out.opacity->value[i];
    return s;
  };
  auto grad = [&] {
    const auto out = render_frame(model, cam, 0.6, opt);
    render_backward<double>(out, w_rgb, w_op, w_disp);
  };
  FdOptions fo;
  fo.five_point = true;
  fo.max_coords = 200;
  const auto report = fd_check<double>(model.params(), loss, grad, fo);
  EXPECT_TRUE(report.passed) << report.to_text();
}

TEST(RenderBackward, MissingCacheIsUsageError) {
  SceneModel<double> model(tiny_fields(), 1);
  auto opt = few_samples();
  opt.keep_cache = false;
  const auto out = render_frame(model, small_camera(), 0.5, opt);
  const std::vector<double> z3(3 * out.pixels(), 0.0), z1(out.pixels(), 0.0);
  EXPECT_THROW(render_backward<double>(out, z3, z1, z3), UsageError);
}

TEST(RenderBackward, ThreadedGradientsAgree) {
  SceneModel<double> model(tiny_fields(), 24);
  randomize(model.params(), 25, 0.5);
  const auto d_rgb = random_vector(3 * 36, 26), d_op = random_vector(36, 27),
             d_disp = random_vector(3 * 36, 28);
  auto collect = [&](int threads) {
    auto opt = few_samples();
    opt.threads = threads;
    zero_grads(model.params());
    const auto out = render_frame(model, small_camera(), 0.5, opt);
    render_backward<double>(out, d_rgb, d_op, d_disp);
    std::vector<double> all;
    for (auto* p : model.params()) all.insert(all.end(), p->grad.begin(), p->grad.end());
    return all;
  };
  const auto a = collect(1), b = collect(3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12 * (1 + std::abs(a[i])));
}

TEST(Upsample, BilinearAdjointMatchesForward) {
  // <resize(x), y> == <x, resize^T(y)> for random x, y.
  const int h = 3, w = 4, c = 3, H = 7, W = 9;
  const auto x = random_vector(std::size_t(h) * w * c, 30);
  const auto y = random_vector(std::size_t(H) * W * c, 31);
  const auto rx = resize_bilinear<double>(x, h, w, c, H, W);
  std::vector<double> ty(x.size(), 0.0);
  resize_bilinear_backward<double>(y, h, w, c, H, W, ty);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) lhs += rx[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Upsample, ConstantImageStaysConstant) {
  const std::vector<double> in(2 * 2 * 3, 0.25);
  for (double v : resize_bilinear<double>(in, 2, 2, 3, 5, 8)) EXPECT_EQ(v, 0.25);
}

}  // namespace
}  // namespace d4d
