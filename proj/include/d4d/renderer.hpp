#pragma once

// Differentiable emission-absorption volume rendering.
//
// Each ray is clipped to the scene box and split into N equal bins; sample i
// sits at t_i = near + (i + u_i) * (far - near) / N with u_i = 1/2 or a
// seeded jitter, and covers delta_i = t_{i+1} - t_i (the last one runs to
// far). Samples are warped to canonical space, x_c = x_d + d(x_d, t), and
//
//   alpha_i = 1 - exp(-sigma_i delta_i),  w_i = alpha_i prod_{j<i} (1 - alpha_j)
//   rgb     = sum_i w_i c_i + (1 - sum_i w_i) * background(dir)
//   opacity = sum_i w_i,  displacement = sum_i w_i d_i
//
// The backward pass re-evaluates each ray's samples instead of caching
// per-sample network activations for the whole frame.

#include "d4d/camera.hpp"
#include "d4d/core.hpp"
#include "d4d/fields.hpp"
#include "d4d/grad.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <thread>
#include <vector>

namespace d4d {

template <typename Real>
struct RayBundle {
  std::vector<Real> origins;     // 3 per ray
  std::vector<Real> directions;  // 3 per ray, unit length
  std::vector<Real> near;
  std::vector<Real> far;
  std::vector<int> pixel;  // y * width + x
  std::vector<char> hit;

  std::size_t size() const { return near.size(); }
};

// Slab test against an axis-aligned box; returns false on a miss.
inline bool intersect_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                          const std::array<double, 3>& lo, const std::array<double, 3>& hi,
                          double& t_near, double& t_far) {
  t_near = 0.0;
  t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-12) {
      if (o[a] < lo[a] || o[a] > hi[a]) return false;
      continue;
    }
    double t0 = (lo[a] - o[a]) / d[a];
    double t1 = (hi[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  return t_far > t_near;
}

template <typename Real>
RayBundle<Real> generate_rays(const Camera& cam, const std::array<double, 3>& box_min,
                              const std::array<double, 3>& box_max) {
  cam.validate();
  RayBundle<Real> rays;
  const std::size_t n = std::size_t(cam.width) * cam.height;
  rays.origins.resize(3 * n);
  rays.directions.resize(3 * n);
  rays.near.resize(n);
  rays.far.resize(n);
  rays.pixel.resize(n);
  rays.hit.resize(n);
  const Eigen::Vector3d o = cam.position();
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const std::size_t i = std::size_t(y) * cam.width + x;
      const Eigen::Vector3d d = cam.pixel_direction(x, y);
      double t0 = 0, t1 = 0;
      const bool hit = intersect_box(o, d, box_min, box_max, t0, t1);
      for (int a = 0; a < 3; ++a) {
        rays.origins[3 * i + a] = static_cast<Real>(o[a]);
        rays.directions[3 * i + a] = static_cast<Real>(d[a]);
      }
      rays.near[i] = static_cast<Real>(hit ? t0 : 0.0);
      rays.far[i] = static_cast<Real>(hit ? t1 : 0.0);
      rays.pixel[i] = static_cast<int>(i);
      rays.hit[i] = hit;
    }
  }
  return rays;
}

struct RenderOptions {
  int samples_per_ray = 64;
  bool jitter = true;
  std::uint64_t jitter_seed = 0;
  // Static-stage renders skip the deformation field entirely.
  bool use_deformation = true;
  // Keep what render_backward needs; evaluation renders can drop it.
  bool keep_cache = true;
  int threads = 1;
};

template <typename Real>
class SceneModel;

template <typename Real>
struct RenderCache {
  RayBundle<Real> rays;
  RenderOptions options;
  Real time = Real(0);
  std::array<double, 3> box_min{};
  std::array<double, 3> box_max{};
  SceneModel<Real>* model = nullptr;
};

template <typename Real>
struct RenderOutput {
  int width = 0;
  int height = 0;
  Real time = Real(0);
  NodePtr<Real> rgb;           // H x W x 3
  NodePtr<Real> opacity;       // H x W
  NodePtr<Real> displacement;  // H x W x 3
  std::shared_ptr<const RenderCache<Real>> cache;

  std::size_t pixels() const { return std::size_t(width) * height; }
};

template <typename Real>
struct VideoBatch {
  std::vector<RenderOutput<Real>> frames;
  std::vector<double> timestamps;
  Camera camera;
};

namespace detail {

// Stratified sample distances and interval lengths along one ray.
template <typename Real>
void ray_samples(Real t_near, Real t_far, int n, bool jitter, std::uint64_t seed, int pixel,
                 Real* ts, Real* deltas) {
  const Real bin = (t_far - t_near) / Real(n);
  Rng rng(mix_seed(seed, std::uint64_t(pixel)));
  for (int i = 0; i < n; ++i) {
    const Real u = jitter ? static_cast<Real>(uniform01(rng)) : Real(0.5);
    ts[i] = t_near + (Real(i) + u) * bin;
  }
  for (int i = 0; i + 1 < n; ++i) deltas[i] = ts[i + 1] - ts[i];
  deltas[n - 1] = t_far - ts[n - 1];
}

template <typename Real>
void sample_points(const RayBundle<Real>& rays, std::size_t r, const Real* ts, int n,
                   const std::array<double, 3>& lo, const std::array<double, 3>& hi, Real* xs) {
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) {
      const Real v = rays.origins[3 * r + a] + ts[i] * rays.directions[3 * r + a];
      xs[3 * i + a] = std::clamp(v, static_cast<Real>(lo[a]), static_cast<Real>(hi[a]));
    }
}

// Per-ray scratch reused across rays.
template <typename Real>
struct RayScratch {
  std::vector<Real> ts, deltas, xs, xc, disp, alpha, trans, weight;
  std::vector<char> clamped;
  typename DeformationField<Real>::Batch deform;
  typename CanonicalField<Real>::Batch canon;

  void resize(int n) {
    ts.resize(n);
    deltas.resize(n);
    xs.resize(3 * std::size_t(n));
    xc.resize(3 * std::size_t(n));
    disp.resize(3 * std::size_t(n));
    alpha.resize(n);
    trans.resize(n);
    weight.resize(n);
    clamped.resize(3 * std::size_t(n));
  }
};

template <typename Real>
void evaluate_ray(const SceneModel<Real>& model, const RayBundle<Real>& rays, std::size_t r,
                  Real t, const RenderOptions& opt, const std::array<double, 3>& lo,
                  const std::array<double, 3>& hi, RayScratch<Real>& s) {
  const int n = opt.samples_per_ray;
  s.resize(n);
  ray_samples(rays.near[r], rays.far[r], n, opt.jitter, opt.jitter_seed, rays.pixel[r],
              s.ts.data(), s.deltas.data());
  sample_points(rays, r, s.ts.data(), n, lo, hi, s.xs.data());
  if (opt.use_deformation) {
    model.deformation.forward_batch(s.xs.data(), t, n, s.deform);
    for (int i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a) s.disp[3 * i + a] = s.deform.out(a, i);
      bool flags[3];
      warp_to_canonical(model.config(), &s.xs[3 * i], &s.disp[3 * i], &s.xc[3 * i], flags);
      for (int a = 0; a < 3; ++a) s.clamped[3 * i + a] = flags[a];
    }
  } else {
    s.xc = s.xs;
    std::fill(s.disp.begin(), s.disp.end(), Real(0));
    std::fill(s.clamped.begin(), s.clamped.end(), 0);
  }
  model.canonical.forward_batch(s.xc.data(), n, s.canon);
  Real trans = Real(1);
  for (int i = 0; i < n; ++i) {
    s.alpha[i] = -std::expm1(-s.canon.sigma[i] * s.deltas[i]);
    s.trans[i] = trans;
    s.weight[i] = trans * s.alpha[i];
    trans *= Real(1) - s.alpha[i];
  }
}

// Parameter-gradient destinations in registry order (see SceneModel::params).
template <typename Real>
struct GradTargets {
  std::vector<Real*> canonical;
  std::vector<Real*> deformation;
  std::vector<Real*> background;

  bool any_deformation() const {
    return std::any_of(deformation.begin(), deformation.end(), [](Real* p) { return p; });
  }
};

template <typename Real>
GradTargets<Real> own_targets(SceneModel<Real>& model) {
  GradTargets<Real> g;
  for (auto* p : model.canonical.params()) g.canonical.push_back(p->frozen ? nullptr : p->grad.data());
  for (auto* p : model.deformation.params())
    g.deformation.push_back(p->frozen ? nullptr : p->grad.data());
  for (auto* p : model.background.params())
    g.background.push_back(p->frozen ? nullptr : p->grad.data());
  return g;
}

// Private zero-initialised buffers shaped like the model's unfrozen tensors.
template <typename Real>
struct GradBuffers {
  std::vector<std::vector<Real>> storage;
  GradTargets<Real> targets;

  explicit GradBuffers(SceneModel<Real>& model) {
    auto add = [&](const ParamList<Real>& ps, std::vector<Real*>& out) {
      for (auto* p : ps) {
        if (p->frozen) {
          out.push_back(nullptr);
          continue;
        }
        storage.emplace_back(p->numel(), Real(0));
        out.push_back(storage.back().data());
      }
    };
    storage.reserve(model.params().size());
    add(model.canonical.params(), targets.canonical);
    add(model.deformation.params(), targets.deformation);
    add(model.background.params(), targets.background);
  }

  void reduce_into(SceneModel<Real>& model) const {
    auto merge = [](const ParamList<Real>& ps, const std::vector<Real*>& src) {
      for (std::size_t i = 0; i < ps.size(); ++i) {
        if (!src[i]) continue;
        auto& g = ps[i]->grad;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += src[i][k];
      }
    };
    merge(model.canonical.params(), targets.canonical);
    merge(model.deformation.params(), targets.deformation);
    merge(model.background.params(), targets.background);
  }
};

// Runs fn(worker, begin, end) over a static contiguous partition of [0, n).
template <typename Fn>
void parallel_ranges(std::size_t n, int threads, Fn&& fn) {
  threads = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (threads == 1) {
    fn(0, std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    const std::size_t b = n * w / threads, e = n * (w + 1) / threads;
    pool.emplace_back([&fn, w, b, e] { fn(w, b, e); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

template <typename Real>
RenderOutput<Real> render_frame(SceneModel<Real>& model, const Camera& camera, Real t,
                                const RenderOptions& opt = {}) {
  if (!(t >= Real(0) && t <= Real(1))) throw DomainError("render time outside [0, 1]");
  if (opt.samples_per_ray < 1) throw UsageError("samples_per_ray must be positive");
  const auto& cfg = model.config();
  auto cache = std::make_shared<RenderCache<Real>>();
  cache->rays = generate_rays<Real>(camera, cfg.scene_min, cfg.scene_max);
  cache->options = opt;
  cache->time = t;
  cache->box_min = cfg.scene_min;
  cache->box_max = cfg.scene_max;
  cache->model = &model;

  RenderOutput<Real> out;
  out.width = camera.width;
  out.height = camera.height;
  out.time = t;
  const std::size_t W = camera.width, H = camera.height;
  out.rgb = make_node<Real>({H, W, 3});
  out.opacity = make_node<Real>({H, W});
  out.displacement = make_node<Real>({H, W, 3});

  const auto& rays = cache->rays;
  detail::parallel_ranges(rays.size(), opt.threads, [&](int, std::size_t b, std::size_t e) {
    detail::RayScratch<Real> s;
    for (std::size_t r = b; r < e; ++r) {
      const int px = rays.pixel[r];
      const Vec3<Real> bg = model.background.shade(&rays.directions[3 * r], nullptr);
      Real opacity = Real(0);
      Vec3<Real> rgb = Vec3<Real>::Zero(), disp = Vec3<Real>::Zero();
      if (rays.hit[r]) {
        detail::evaluate_ray(model, rays, r, t, opt, cache->box_min, cache->box_max, s);
        for (int i = 0; i < opt.samples_per_ray; ++i) {
          const Real w = s.weight[i];
          opacity += w;
          for (int a = 0; a < 3; ++a) {
            rgb[a] += w * s.canon.rgb[3 * i + a];
            disp[a] += w * s.disp[3 * i + a];
          }
        }
      }
      for (int a = 0; a < 3; ++a) {
        out.rgb->value[3 * px + a] = rgb[a] + (Real(1) - opacity) * bg[a];
        out.displacement->value[3 * px + a] = disp[a];
      }
      out.opacity->value[px] = opacity;
    }
  });
  if (opt.keep_cache) out.cache = std::move(cache);
  return out;
}

// Accumulates parameter gradients of a loss with the given upstream
// gradients (on rgb, opacity and displacement) into the model. Frozen groups
// receive nothing.
template <typename Real>
void render_backward(const RenderOutput<Real>& output, std::span<const Real> d_rgb,
                     std::span<const Real> d_opacity, std::span<const Real> d_disp) {
  if (!output.cache) throw UsageError("render_backward: frame was rendered without a cache");
  const auto& cache = *output.cache;
  SceneModel<Real>& model = *cache.model;
  const auto& rays = cache.rays;
  const auto& opt = cache.options;
  const std::size_t np = output.pixels();
  if (d_rgb.size() != 3 * np || d_opacity.size() != np || d_disp.size() != 3 * np)
    throw UsageError("render_backward: upstream gradient shape mismatch");

  const int threads = std::max(1, std::min<int>(opt.threads, static_cast<int>(rays.size())));
  std::vector<detail::GradBuffers<Real>> buffers;
  if (threads > 1)
    for (int w = 0; w < threads; ++w) buffers.emplace_back(model);
  const auto direct = detail::own_targets(model);

  detail::parallel_ranges(rays.size(), threads, [&](int w, std::size_t b, std::size_t e) {
    const auto& targets = threads > 1 ? buffers[w].targets : direct;
    const bool need_deform = opt.use_deformation && targets.any_deformation();
    const int n = opt.samples_per_ray;

    const bool bg_grads = std::any_of(targets.background.begin(), targets.background.end(),
                                      [](Real* p) { return p; });
    typename Mlp<Real>::Cache bg_cache;
    auto background_backward = [&](std::size_t r, const Vec3<Real>& d_bg) {
      if (!bg_grads || d_bg.isZero()) return;
      const Vec3<Real> bg = model.background.shade(&rays.directions[3 * r], &bg_cache);
      model.background.backward_one(bg_cache, bg, d_bg, targets.background);
    };

    detail::RayScratch<Real> s;
    std::vector<Real> d_sigma, d_c, d_xc, d_d, score, scratch_dxt;
    for (std::size_t r = b; r < e; ++r) {
      const int px = rays.pixel[r];
      const Vec3<Real> g_rgb(d_rgb[3 * px], d_rgb[3 * px + 1], d_rgb[3 * px + 2]);
      const Real g_op = d_opacity[px];
      const Vec3<Real> g_disp(d_disp[3 * px], d_disp[3 * px + 1], d_disp[3 * px + 2]);
      if (!rays.hit[r]) {
        background_backward(r, g_rgb);
        continue;
      }
      if (g_rgb.isZero() && g_op == Real(0) && g_disp.isZero()) continue;

      detail::evaluate_ray(model, rays, r, cache.time, opt, cache.box_min, cache.box_max, s);
      Real opacity = Real(0);
      for (int i = 0; i < n; ++i) opacity += s.weight[i];
      background_backward(r, (Real(1) - opacity) * g_rgb);

      // d loss / d w_i
      score.assign(n, Real(0));
      const Vec3<Real> bgc = model.background.shade(&rays.directions[3 * r], nullptr);
      for (int i = 0; i < n; ++i) {
        Real v = g_op;
        for (int a = 0; a < 3; ++a)
          v += g_rgb[a] * (s.canon.rgb[3 * i + a] - bgc[a]) + g_disp[a] * s.disp[3 * i + a];
        score[i] = v;
      }
      // d loss / d alpha_i = T_i (score_i - R_i),
      // R_i = sum_{k>i} score_k alpha_k prod_{i<j<k} (1 - alpha_j).
      d_sigma.assign(n, Real(0));
      Real tail = Real(0);
      for (int i = n - 1; i >= 0; --i) {
        const Real d_alpha = s.trans[i] * (score[i] - tail);
        d_sigma[i] = d_alpha * s.deltas[i] * (Real(1) - s.alpha[i]);
        tail = score[i] * s.alpha[i] + (Real(1) - s.alpha[i]) * tail;
      }
      d_c.assign(3 * std::size_t(n), Real(0));
      for (int i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a) d_c[3 * i + a] = s.weight[i] * g_rgb[a];

      d_xc.assign(3 * std::size_t(n), Real(0));
      model.canonical.backward_batch(s.xc.data(), n, s.canon, d_sigma.data(), d_c.data(),
                                     targets.canonical, need_deform ? d_xc.data() : nullptr);
      if (!need_deform) continue;
      d_d.assign(3 * std::size_t(n), Real(0));
      for (int i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a)
          d_d[3 * i + a] = s.weight[i] * g_disp[a] + (s.clamped[3 * i + a] ? Real(0) : d_xc[3 * i + a]);
      model.deformation.backward_batch(s.xs.data(), cache.time, n, s.deform, d_d.data(),
                                       targets.deformation, nullptr);
    }
  });
  for (auto& buf : buffers) buf.reduce_into(model);
}

// Tape-recording variant: the adjoint reads the gradients that downstream
// stages accumulated on the output nodes.
template <typename Real>
RenderOutput<Real> render_frame(Tape<Real>& tape, SceneModel<Real>& model, const Camera& camera,
                                Real t, RenderOptions opt = {}) {
  opt.keep_cache = true;
  auto out = render_frame(model, camera, t, opt);
  tape.record([out] {
    render_backward<Real>(out, out.rgb->grad, out.opacity->grad, out.displacement->grad);
  });
  return out;
}

inline void check_timestamps(const std::vector<double>& ts) {
  if (ts.size() < 2) throw UsageError("a video needs at least two timestamps");
  const double step = (ts.back() - ts.front()) / double(ts.size() - 1);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    if (ts[k] < 0.0 || ts[k] > 1.0) throw DomainError("timestamp outside [0, 1]");
    if (k > 0 && !(ts[k] > ts[k - 1])) throw UsageError("timestamps must be strictly increasing");
    if (std::abs(ts[k] - (ts.front() + step * double(k))) > 1e-9)
      throw UsageError("timestamps must be evenly spaced");
  }
}

template <typename Real>
VideoBatch<Real> render_video(SceneModel<Real>& model, const Camera& camera,
                              const std::vector<double>& timestamps, const RenderOptions& opt = {}) {
  check_timestamps(timestamps);
  VideoBatch<Real> v;
  v.camera = camera;
  v.timestamps = timestamps;
  for (double t : timestamps) v.frames.push_back(render_frame(model, camera, static_cast<Real>(t), opt));
  return v;
}

template <typename Real>
VideoBatch<Real> render_video(Tape<Real>& tape, SceneModel<Real>& model, const Camera& camera,
                              const std::vector<double>& timestamps, const RenderOptions& opt = {}) {
  check_timestamps(timestamps);
  VideoBatch<Real> v;
  v.camera = camera;
  v.timestamps = timestamps;
  for (double t : timestamps)
    v.frames.push_back(render_frame(tape, model, camera, static_cast<Real>(t), opt));
  return v;
}

// Forward-only rendering of any scene exposing
//   void query(const Real* xs, int n, Real t, Real* sigma, Real* rgb, Real* disp) const;
//   Vec3<Real> background(const Vec3<Real>& dir) const;
// Used for analytic reference scenes.
template <typename Real, typename Scene>
RenderOutput<Real> render_scene(const Scene& scene, const Camera& camera, Real t,
                                const std::array<double, 3>& box_min,
                                const std::array<double, 3>& box_max, const RenderOptions& opt = {}) {
  const auto rays = generate_rays<Real>(camera, box_min, box_max);
  RenderOutput<Real> out;
  out.width = camera.width;
  out.height = camera.height;
  out.time = t;
  const std::size_t W = camera.width, H = camera.height;
  out.rgb = make_node<Real>({H, W, 3});
  out.opacity = make_node<Real>({H, W});
  out.displacement = make_node<Real>({H, W, 3});
  const int n = opt.samples_per_ray;
  std::vector<Real> ts(n), deltas(n), xs(3 * std::size_t(n)), sigma(n), rgb(3 * std::size_t(n)),
      disp(3 * std::size_t(n));
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const int px = rays.pixel[r];
    Real opacity = Real(0);
    Vec3<Real> c = Vec3<Real>::Zero(), dsum = Vec3<Real>::Zero();
    if (rays.hit[r]) {
      detail::ray_samples(rays.near[r], rays.far[r], n, opt.jitter, opt.jitter_seed, px, ts.data(),
                          deltas.data());
      detail::sample_points(rays, r, ts.data(), n, box_min, box_max, xs.data());
      scene.query(xs.data(), n, t, sigma.data(), rgb.data(), disp.data());
      Real trans = Real(1);
      for (int i = 0; i < n; ++i) {
        const Real alpha = -std::expm1(-sigma[i] * deltas[i]);
        const Real w = trans * alpha;
        trans *= Real(1) - alpha;
        opacity += w;
        for (int a = 0; a < 3; ++a) {
          c[a] += w * rgb[3 * i + a];
          dsum[a] += w * disp[3 * i + a];
        }
      }
    }
    const Vec3<Real> dir(rays.directions[3 * r], rays.directions[3 * r + 1],
                         rays.directions[3 * r + 2]);
    const Vec3<Real> bg = scene.background(dir);
    for (int a = 0; a < 3; ++a) {
      out.rgb->value[3 * px + a] = c[a] + (Real(1) - opacity) * bg[a];
      out.displacement->value[3 * px + a] = dsum[a];
    }
    out.opacity->value[px] = opacity;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear resampling (half-pixel centres, edge clamped).

namespace detail {

struct Tap {
  int i0, i1;
  double f;
};

inline std::vector<Tap> resample_taps(int src, int dst) {
  std::vector<Tap> taps(dst);
  const double scale = double(src) / double(dst);
  for (int k = 0; k < dst; ++k) {
    double p = (k + 0.5) * scale - 0.5;
    p = std::clamp(p, 0.0, double(src - 1));
    const int i0 = static_cast<int>(std::floor(p));
    const int i1 = std::min(i0 + 1, src - 1);
    taps[k] = {i0, i1, p - i0};
  }
  return taps;
}

}  // namespace detail

template <typename Real>
std::vector<Real> resize_bilinear(std::span<const Real> in, int h, int w, int c, int H, int W) {
  if (in.size() != std::size_t(h) * w * c) throw UsageError("resize_bilinear: input shape mismatch");
  const auto ty = detail::resample_taps(h, H), tx = detail::resample_taps(w, W);
  std::vector<Real> out(std::size_t(H) * W * c);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int k = 0; k < c; ++k) {
        auto at = [&](int yy, int xx) { return in[(std::size_t(yy) * w + xx) * c + k]; };
        const Real fy = static_cast<Real>(ty[y].f), fx = static_cast<Real>(tx[x].f);
        const Real top = (Real(1) - fx) * at(ty[y].i0, tx[x].i0) + fx * at(ty[y].i0, tx[x].i1);
        const Real bot = (Real(1) - fx) * at(ty[y].i1, tx[x].i0) + fx * at(ty[y].i1, tx[x].i1);
        out[(std::size_t(y) * W + x) * c + k] = (Real(1) - fy) * top + fy * bot;
      }
  return out;
}

template <typename Real>
void resize_bilinear_backward(std::span<const Real> d_out, int h, int w, int c, int H, int W,
                              std::span<Real> d_in) {
  const auto ty = detail::resample_taps(h, H), tx = detail::resample_taps(w, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int k = 0; k < c; ++k) {
        const Real g = d_out[(std::size_t(y) * W + x) * c + k];
        if (g == Real(0)) continue;
        const Real fy = static_cast<Real>(ty[y].f), fx = static_cast<Real>(tx[x].f);
        auto add = [&](int yy, int xx, Real v) { d_in[(std::size_t(yy) * w + xx) * c + k] += v; };
        add(ty[y].i0, tx[x].i0, g * (Real(1) - fy) * (Real(1) - fx));
        add(ty[y].i0, tx[x].i1, g * (Real(1) - fy) * fx);
        add(ty[y].i1, tx[x].i0, g * fy * (Real(1) - fx));
        add(ty[y].i1, tx[x].i1, g * fy * fx);
      }
}

// Image node (H x W x C) resized to (height, width); a no-op when sizes match.
template <typename Real>
NodePtr<Real> upsample(Tape<Real>& tape, const NodePtr<Real>& in, int height, int width) {
  if (in->shape.size() != 3) throw UsageError("upsample expects an H x W x C node");
  const int h = static_cast<int>(in->shape[0]), w = static_cast<int>(in->shape[1]),
            c = static_cast<int>(in->shape[2]);
  if (h == height && w == width) return in;
  auto out = make_node<Real>({std::size_t(height), std::size_t(width), std::size_t(c)});
  out->value = resize_bilinear<Real>(in->value, h, w, c, height, width);
  tape.record([in, out, h, w, c, height, width] {
    resize_bilinear_backward<Real>(out->grad, h, w, c, height, width, in->grad);
  });
  return out;
}

}  // namespace d4d
