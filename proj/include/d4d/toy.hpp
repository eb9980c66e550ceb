#pragma once

// Analytic toy scene: a soft, semi-transparent, textured sphere sliding
// along +x. Its true warp to canonical space is known in closed form,
// d(x_d, t) = -velocity * t, which makes end-to-end fits checkable.

#include "d4d/camera.hpp"
#include "d4d/core.hpp"
#include "d4d/fields.hpp"
#include "d4d/guidance.hpp"
#include "d4d/optim.hpp"
#include "d4d/renderer.hpp"

#include <array>
#include <cmath>
#include <memory>
#include <vector>

namespace d4d {

struct SphereScene {
  std::array<double, 3> center{-0.1, 0.0, 0.0};  // canonical (t = 0) centre
  std::array<double, 3> velocity{0.2, 0.0, 0.0};
  double radius = 0.35;
  double edge = 0.04;  // width of the soft boundary
  double sigma_max = 4.0;
  std::array<double, 3> bg{0.85, 0.85, 0.9};

  // Density and colour at a canonical-space point.
  double density(const double* xc) const {
    double r2 = 0;
    for (int a = 0; a < 3; ++a) r2 += (xc[a] - center[a]) * (xc[a] - center[a]);
    return sigma_max * sigmoid((radius - std::sqrt(r2)) / edge);
  }
  void color(const double* xc, double* rgb) const {
    const double u = xc[0] - center[0], v = xc[1] - center[1], w = xc[2] - center[2];
    rgb[0] = 0.5 + 0.35 * std::sin(7.0 * u + 2.0 * w);
    rgb[1] = 0.5 + 0.35 * std::sin(7.0 * v + 1.0);
    rgb[2] = 0.5 + 0.35 * std::cos(5.0 * w - 3.0 * u);
  }
  std::array<double, 3> true_displacement(double t) const {
    return {-velocity[0] * t, -velocity[1] * t, -velocity[2] * t};
  }
  std::array<double, 3> center_at(double t) const {
    return {center[0] + velocity[0] * t, center[1] + velocity[1] * t, center[2] + velocity[2] * t};
  }

  // Interface used by render_scene.
  template <typename Real>
  void query(const Real* xs, int n, Real t, Real* sigma, Real* rgb, Real* disp) const {
    const auto d = true_displacement(double(t));
    for (int i = 0; i < n; ++i) {
      double xc[3], c[3];
      for (int a = 0; a < 3; ++a) xc[a] = double(xs[3 * i + a]) + d[a];
      sigma[i] = static_cast<Real>(density(xc));
      color(xc, c);
      for (int a = 0; a < 3; ++a) {
        rgb[3 * i + a] = static_cast<Real>(c[a]);
        disp[3 * i + a] = static_cast<Real>(d[a]);
      }
    }
  }
  template <typename Real>
  Vec3<Real> background(const Vec3<Real>&) const {
    return Vec3<Real>(Real(bg[0]), Real(bg[1]), Real(bg[2]));
  }
};

// Oracle whose targets are renders of the sphere at the request's cameras
// and timestamps (time 0 when the request carries none).
inline std::unique_ptr<OracleProvider> make_sphere_provider(const SphereScene& scene,
                                                            std::array<double, 3> box_min,
                                                            std::array<double, 3> box_max,
                                                            int samples = 64) {
  auto gen = [scene, box_min, box_max, samples](const GuidanceRequest& req) {
    std::vector<double> out;
    out.reserve(req.numel());
    RenderOptions opt;
    opt.samples_per_ray = samples;
    opt.jitter = false;
    for (int k = 0; k < req.n; ++k) {
      Camera cam = req.cameras.at(k);
      cam.width = req.width;
      cam.height = req.height;
      const double t = req.timestamps.empty() ? 0.0 : req.timestamps.at(k);
      const auto frame = render_scene<double>(scene, cam, t, box_min, box_max, opt);
      out.insert(out.end(), frame.rgb->value.begin(), frame.rgb->value.end());
    }
    return out;
  };
  return std::make_unique<OracleProvider>(gen, OracleProvider::all_kinds(), "sphere-oracle");
}

struct CanonicalFitOptions {
  int iterations = 1500;
  int batch = 512;
  int background_batch = 64;
  double lr_grid = 0.01;
  double lr_mlp = 0.003;
  std::uint64_t seed = 11;
};

struct CanonicalFitReport {
  double density_rmse = 0;
  double color_rmse = 0;  // inside the sphere
  double background_rmse = 0;
};

// Direct 3D regression of the canonical field and background onto the
// sphere at t = 0. Density is fitted in log space so the empty region is
// pushed towards zero without dominating the loss.
template <typename Real>
CanonicalFitReport fit_canonical(SceneModel<Real>& model, const SphereScene& scene,
                                 const CanonicalFitOptions& opt = {}) {
  const auto& cfg = model.config();
  ParamList<Real> params = model.canonical.params();
  for (auto* p : model.background.params()) params.push_back(p);
  AdamConfig ac;
  ac.lr_grid = opt.lr_grid;
  ac.lr_mlp = opt.lr_mlp;
  ac.weight_decay = 0.0;
  ac.clip_norm = 0.0;
  AdamW<Real> adam(params, ac);
  Rng rng(opt.seed);

  const int n = opt.batch;
  std::vector<Real> xs(3 * std::size_t(n)), d_sigma(n), d_rgb(3 * std::size_t(n));
  std::vector<double> sig_true(n), rgb_true(3 * std::size_t(n)), weight(n);
  typename CanonicalField<Real>::Batch batch;
  std::vector<Real*> cgrads;
  for (auto* p : model.canonical.params()) cgrads.push_back(p->grad.data());
  std::vector<Real*> bgrads;
  for (auto* p : model.background.params()) bgrads.push_back(p->grad.data());
  typename Mlp<Real>::Cache bg_cache;

  auto sample_points = [&] {
    for (int i = 0; i < n; ++i) {
      double x[3];
      // Half the points near the sphere, half anywhere in the box.
      const bool near = (i % 2) == 0;
      for (int a = 0; a < 3; ++a) {
        if (near) {
          x[a] = scene.center[a] + uniform(rng, -1.3, 1.3) * scene.radius;
        } else {
          x[a] = uniform(rng, cfg.scene_min[a], cfg.scene_max[a]);
        }
        x[a] = std::clamp(x[a], cfg.scene_min[a], cfg.scene_max[a]);
        xs[3 * i + a] = static_cast<Real>(x[a]);
      }
      sig_true[i] = scene.density(x);
      scene.color(x, &rgb_true[3 * i]);
      weight[i] = sig_true[i] / scene.sigma_max;  // colour only matters where dense
    }
  };

  CanonicalFitReport rep;
  for (int it = 0; it <= opt.iterations; ++it) {
    sample_points();
    model.canonical.forward_batch(xs.data(), n, batch);
    double se_sigma = 0, se_rgb = 0, w_rgb = 0;
    for (int i = 0; i < n; ++i) {
      const double s = double(batch.sigma[i]);
      // residual on log(1 + sigma)
      const double r = std::log1p(s) - std::log1p(sig_true[i]);
      se_sigma += r * r;
      d_sigma[i] = static_cast<Real>(2.0 * r / (1.0 + s) / n);
      for (int c = 0; c < 3; ++c) {
        const double rc = double(batch.rgb[3 * i + c]) - rgb_true[3 * i + c];
        se_rgb += weight[i] * rc * rc;
        w_rgb += weight[i];
        d_rgb[3 * i + c] = static_cast<Real>(2.0 * weight[i] * rc / n);
      }
    }
    rep.density_rmse = std::sqrt(se_sigma / n);
    rep.color_rmse = std::sqrt(se_rgb / std::max(1e-12, w_rgb));
    if (it == opt.iterations) break;
    for (auto* p : params) p->zero_grad();
    model.canonical.backward_batch(xs.data(), n, batch, d_sigma.data(), d_rgb.data(), cgrads,
                                   nullptr);
    double se_bg = 0;
    for (int k = 0; k < opt.background_batch; ++k) {
      Vec3<Real> dir;
      do {
        for (int a = 0; a < 3; ++a) dir[a] = static_cast<Real>(normal01(rng));
      } while (dir.norm() < Real(1e-6));
      dir.normalize();
      const Vec3<Real> c = model.background.shade(dir.data(), &bg_cache);
      Vec3<Real> g;
      for (int a = 0; a < 3; ++a) {
        const double r = double(c[a]) - scene.bg[a];
        se_bg += r * r;
        g[a] = static_cast<Real>(2.0 * r / opt.background_batch);
      }
      model.background.backward_one(bg_cache, c, g, bgrads);
    }
    rep.background_rmse = std::sqrt(se_bg / (3.0 * opt.background_batch));
    adam.step();
  }
  for (auto* p : params) p->zero_grad();
  return rep;
}

// Toy model configuration: small grids, narrow heads, box [-0.6, 0.6]^3.
inline FieldConfig toy_field_config() {
  FieldConfig m;
  m.canonical_grid.levels = 6;
  m.canonical_grid.base_res = 4;
  m.canonical_grid.max_res = 48;
  m.canonical_grid.table_size_log2 = 14;
  m.deformation_grid.levels = 4;
  m.deformation_grid.base_res = 2;
  m.deformation_grid.max_res = 12;
  m.deformation_grid.table_size_log2 = 14;
  m.density_width = m.color_width = m.deform_width = m.background_width = 32;
  m.deform_hidden_layers = 2;
  m.background_hidden_layers = 1;
  m.scene_min = {-0.6, -0.6, -0.6};
  m.scene_max = {0.6, 0.6, 0.6};
  m.sync_domains();
  return m;
}

// k cameras evenly spaced in azimuth around the scene.
inline std::vector<Camera> ring_cameras(int k, double elevation, double radius, double fov,
                                        int width, int height, double azimuth0 = 0.0) {
  std::vector<Camera> cams;
  for (int i = 0; i < k; ++i) {
    Camera c;
    c.azimuth = wrap_degrees(azimuth0 + 360.0 * i / k);
    c.elevation = elevation;
    c.radius = radius;
    c.fov_y = fov;
    c.width = width;
    c.height = height;
    cams.push_back(c);
  }
  return cams;
}

inline double psnr(const std::vector<double>& a, const std::vector<double>& b) {
  const double mse = mean_squared(a, b);
  if (mse <= 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace d4d
