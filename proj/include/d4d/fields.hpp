#pragma once

// Neural fields making up a dynamic scene: a canonical density/color field, a
// 4D deformation field mapping deformed-space points to canonical space
// (x_c = x_d + d), and a view-direction background shader.

#include "d4d/core.hpp"
#include "d4d/grad.hpp"
#include "d4d/gridenc.hpp"
#include "d4d/mlp.hpp"

#include <algorithm>
#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace d4d {

struct FieldConfig {
  GridConfig canonical_grid = GridConfig::canonical();
  int density_hidden_layers = 1;
  int density_width = 64;
  int geo_feature_dim = 15;
  int color_hidden_layers = 1;
  int color_width = 64;

  GridConfig deformation_grid = GridConfig::deformation();
  int deform_hidden_layers = 4;
  int deform_width = 64;

  int background_hidden_layers = 3;
  int background_width = 64;

  // Constant shift added to the raw density before softplus.
  double density_bias = -1.0;
  double grid_init_range = 1e-4;
  std::array<double, 3> scene_min{-1.0, -1.0, -1.0};
  std::array<double, 3> scene_max{1.0, 1.0, 1.0};

  // Grid domains follow the scene bounds (time spans [0, 1]).
  void sync_domains() {
    for (int a = 0; a < 3; ++a) {
      canonical_grid.domain_min[a] = deformation_grid.domain_min[a] = scene_min[a];
      canonical_grid.domain_max[a] = deformation_grid.domain_max[a] = scene_max[a];
    }
    deformation_grid.domain_min[3] = 0.0;
    deformation_grid.domain_max[3] = 1.0;
  }

  void validate() const {
    if (canonical_grid.input_dim != 3) throw ConfigError("canonical grid must be 3-D");
    if (deformation_grid.input_dim != 4) throw ConfigError("deformation grid must be 4-D");
    canonical_grid.validate();
    deformation_grid.validate();
    for (int a = 0; a < 3; ++a)
      if (!(scene_max[a] > scene_min[a])) throw ConfigError("scene bounds must have positive extent");
    if (density_width < 1 || color_width < 1 || deform_width < 1 || background_width < 1 ||
        geo_feature_dim < 1)
      throw ConfigError("network widths must be positive");
  }
};

enum class ParamGroup { kCanonical, kDeformation, kBackground };

inline std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kCanonical: return "canonical";
    case ParamGroup::kDeformation: return "deformation";
    case ParamGroup::kBackground: return "background";
  }
  return "?";
}

inline ParamGroup parse_group(std::string_view s) {
  if (s == "canonical") return ParamGroup::kCanonical;
  if (s == "deformation") return ParamGroup::kDeformation;
  if (s == "background") return ParamGroup::kBackground;
  throw UsageError("unknown parameter group '" + std::string(s) +
                   "' (expected canonical, deformation or background)");
}

template <typename Real>
struct CanonicalSample {
  Real density;
  Vec3<Real> rgb;
};

template <typename Real>
class CanonicalField {
 public:
  struct Batch {
    Matrix<Real> features;
    typename Mlp<Real>::Cache density_cache, color_cache;
    Matrix<Real> density_out;  // (1 + geo) x n
    Matrix<Real> color_out;    // 3 x n, logits
    std::vector<Real> sigma;
    std::vector<Real> rgb;  // 3 x n, column-major
  };

  CanonicalField() = default;
  explicit CanonicalField(const FieldConfig& cfg)
      : encoding_(cfg.canonical_grid, "canonical.grid", "canonical"),
        density_head_("canonical.density", "canonical", cfg.canonical_grid.output_dim(),
                      cfg.density_width, cfg.density_hidden_layers, 1 + cfg.geo_feature_dim),
        color_head_("canonical.color", "canonical", cfg.geo_feature_dim, cfg.color_width,
                    cfg.color_hidden_layers, 3),
        density_bias_(static_cast<Real>(cfg.density_bias)),
        scene_min_(cfg.scene_min),
        scene_max_(cfg.scene_max) {}

  void init(Rng& rng, double grid_range) {
    encoding_.init_uniform(rng, grid_range);
    density_head_.init(rng);
    color_head_.init(rng);
  }

  HashGridEncoding<Real>& encoding() { return encoding_; }
  const HashGridEncoding<Real>& encoding() const { return encoding_; }
  Mlp<Real>& density_head() { return density_head_; }
  Mlp<Real>& color_head() { return color_head_; }
  const Mlp<Real>& density_head() const { return density_head_; }
  const Mlp<Real>& color_head() const { return color_head_; }
  Real density_bias() const { return density_bias_; }

  ParamList<Real> params() {
    ParamList<Real> out{&encoding_.tables()};
    for (auto& p : density_head_.params()) out.push_back(&p);
    for (auto& p : color_head_.params()) out.push_back(&p);
    return out;
  }

  // xs: 3 x n column-major points inside the scene box.
  void forward_batch(const Real* xs, int n, Batch& b) const {
    const int enc = encoding_.output_dim();
    b.features.resize(enc, n);
    for (int i = 0; i < n; ++i) encoding_.encode(xs + 3 * i, b.features.data() + enc * i);
    density_head_.forward(b.features, b.density_out, &b.density_cache);
    Matrix<Real> geo = b.density_out.bottomRows(b.density_out.rows() - 1);
    color_head_.forward(geo, b.color_out, &b.color_cache);
    b.sigma.resize(n);
    b.rgb.resize(3 * std::size_t(n));
    for (int i = 0; i < n; ++i) {
      b.sigma[i] = softplus(b.density_out(0, i) + density_bias_);
      for (int c = 0; c < 3; ++c) b.rgb[3 * i + c] = sigmoid(b.color_out(c, i));
    }
  }

  // grads: [table, density head params..., color head params...], null = skip.
  // dx (3 x n) is accumulated into when non-null.
  void backward_batch(const Real* xs, int n, const Batch& b, const Real* d_sigma,
                      const Real* d_rgb, std::span<Real* const> grads, Real* dx) const {
    const std::size_t nd = density_head_.params().size();
    Matrix<Real> d_color(3, n);
    Matrix<Real> d_density(b.density_out.rows(), n);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) {
        const Real s = b.rgb[3 * i + c];
        d_color(c, i) = d_rgb[3 * i + c] * s * (Real(1) - s);
      }
      d_density(0, i) = d_sigma[i] * sigmoid(b.density_out(0, i) + density_bias_);
    }
    Matrix<Real> d_geo;
    color_head_.backward(b.color_cache, d_color, &d_geo, grads.subspan(1 + nd));
    d_density.bottomRows(d_density.rows() - 1) = d_geo;
    const bool need_features = grads[0] != nullptr || dx != nullptr;
    Matrix<Real> d_feat;
    density_head_.backward(b.density_cache, d_density, need_features ? &d_feat : nullptr,
                           grads.subspan(1, nd));
    if (!need_features) return;
    const int enc = encoding_.output_dim();
    for (int i = 0; i < n; ++i)
      encoding_.encode_backward(xs + 3 * i, d_feat.data() + enc * i, dx ? dx + 3 * i : nullptr,
                                grads[0]);
  }

  bool in_bounds(const Real* x) const {
    for (int a = 0; a < 3; ++a) {
      const double v = static_cast<double>(x[a]);
      if (!(v >= scene_min_[a] - HashGridEncoding<Real>::kSpillTolerance &&
            v <= scene_max_[a] + HashGridEncoding<Real>::kSpillTolerance))
        return false;
    }
    return true;
  }

 private:
  HashGridEncoding<Real> encoding_;
  Mlp<Real> density_head_;
  Mlp<Real> color_head_;
  Real density_bias_ = Real(-1);
  std::array<double, 3> scene_min_{};
  std::array<double, 3> scene_max_{};
};

struct LevelSchedule {
  int initial_levels = 4;
  int step_every = 500;
};

template <typename Real>
class DeformationField {
 public:
  struct Batch {
    Matrix<Real> features;
    typename Mlp<Real>::Cache cache;
    Matrix<Real> out;  // 3 x n displacement
  };

  DeformationField() = default;
  explicit DeformationField(const FieldConfig& cfg)
      : encoding_(cfg.deformation_grid, "deformation.grid", "deformation"),
        head_("deformation.head", "deformation", cfg.deformation_grid.output_dim(),
              cfg.deform_width, cfg.deform_hidden_layers, 3) {}

  // The output layer starts at zero so the initial warp is the identity.
  void init(Rng& rng, double grid_range) {
    encoding_.init_uniform(rng, grid_range);
    head_.init(rng, /*zero_last=*/true);
  }

  HashGridEncoding<Real>& encoding() { return encoding_; }
  const HashGridEncoding<Real>& encoding() const { return encoding_; }
  Mlp<Real>& head() { return head_; }
  const Mlp<Real>& head() const { return head_; }

  ParamList<Real> params() {
    ParamList<Real> out{&encoding_.tables()};
    for (auto& p : head_.params()) out.push_back(&p);
    return out;
  }

  // xs: 3 x n deformed-space points, all at time t.
  void forward_batch(const Real* xs, Real t, int n, Batch& b) const {
    const int enc = encoding_.output_dim();
    b.features.resize(enc, n);
    std::array<Real, 4> q{};
    for (int i = 0; i < n; ++i) {
      q = {xs[3 * i], xs[3 * i + 1], xs[3 * i + 2], t};
      encoding_.encode(q.data(), b.features.data() + enc * i);
    }
    head_.forward(b.features, b.out, &b.cache);
  }

  // d_disp: 3 x n. dxt (4 x n, accumulated) receives d loss / d (x_d, t).
  void backward_batch(const Real* xs, Real t, int n, const Batch& b, const Real* d_disp,
                      std::span<Real* const> grads, Real* dxt) const {
    Matrix<Real> d_out = Eigen::Map<const Matrix<Real>>(d_disp, 3, n);
    const bool need_features = grads[0] != nullptr || dxt != nullptr;
    Matrix<Real> d_feat;
    head_.backward(b.cache, d_out, need_features ? &d_feat : nullptr, grads.subspan(1));
    if (!need_features) return;
    const int enc = encoding_.output_dim();
    std::array<Real, 4> q{};
    for (int i = 0; i < n; ++i) {
      q = {xs[3 * i], xs[3 * i + 1], xs[3 * i + 2], t};
      encoding_.encode_backward(q.data(), d_feat.data() + enc * i, dxt ? dxt + 4 * i : nullptr,
                                grads[0]);
    }
  }

  int set_active_levels(int iteration, const LevelSchedule& schedule) {
    if (iteration < 0) throw UsageError("iteration must be non-negative");
    const int step = std::max(1, schedule.step_every);
    const long long want = (long long)schedule.initial_levels + iteration / step;
    const int count = static_cast<int>(std::clamp<long long>(want, 0, encoding_.levels()));
    encoding_.set_active_levels(count);
    return count;
  }

 private:
  HashGridEncoding<Real> encoding_;
  Mlp<Real> head_;
};

template <typename Real>
class BackgroundShader {
 public:
  BackgroundShader() = default;
  explicit BackgroundShader(const FieldConfig& cfg)
      : net_("background.net", "background", 3, cfg.background_width,
             cfg.background_hidden_layers, 3) {}

  void init(Rng& rng) { net_.init(rng); }
  Mlp<Real>& net() { return net_; }
  const Mlp<Real>& net() const { return net_; }

  ParamList<Real> params() {
    ParamList<Real> out;
    for (auto& p : net_.params()) out.push_back(&p);
    return out;
  }

  // Colour seen along a unit direction; every caller goes through this one
  // path so background pixels match point queries bit for bit.
  Vec3<Real> shade(const Real* dir, typename Mlp<Real>::Cache* cache) const {
    Matrix<Real> d(3, 1), logits;
    for (int a = 0; a < 3; ++a) d(a, 0) = dir[a];
    net_.forward(d, logits, cache);
    return Vec3<Real>(sigmoid(logits(0, 0)), sigmoid(logits(1, 0)), sigmoid(logits(2, 0)));
  }

  void backward_one(const typename Mlp<Real>::Cache& cache, const Vec3<Real>& rgb,
                    const Vec3<Real>& d_rgb, std::span<Real* const> grads) const {
    Matrix<Real> d_logits(3, 1);
    for (int a = 0; a < 3; ++a) d_logits(a, 0) = d_rgb[a] * rgb[a] * (Real(1) - rgb[a]);
    net_.backward(cache, d_logits, nullptr, grads);
  }

 private:
  Mlp<Real> net_;
};

template <typename Real>
class SceneModel {
 public:
  SceneModel() = default;
  SceneModel(FieldConfig cfg, std::uint64_t seed) : config_(std::move(cfg)) {
    config_.sync_domains();
    config_.validate();
    canonical = CanonicalField<Real>(config_);
    deformation = DeformationField<Real>(config_);
    background = BackgroundShader<Real>(config_);
    Rng rng(seed);
    canonical.init(rng, config_.grid_init_range);
    deformation.init(rng, config_.grid_init_range);
    background.init(rng);
  }

  const FieldConfig& config() const { return config_; }

  // Registry order: canonical, deformation, background.
  ParamList<Real> params() {
    ParamList<Real> out = canonical.params();
    for (auto* p : deformation.params()) out.push_back(p);
    for (auto* p : background.params()) out.push_back(p);
    return out;
  }

  ParamList<Real> group_params(ParamGroup g) {
    switch (g) {
      case ParamGroup::kCanonical: return canonical.params();
      case ParamGroup::kDeformation: return deformation.params();
      case ParamGroup::kBackground: return background.params();
    }
    return {};
  }

  void freeze(ParamGroup g) { set_frozen(g, true); }
  void thaw(ParamGroup g) { set_frozen(g, false); }
  void freeze(std::string_view g) { freeze(parse_group(g)); }
  void thaw(std::string_view g) { thaw(parse_group(g)); }

  bool is_frozen(ParamGroup g) {
    auto ps = group_params(g);
    return std::all_of(ps.begin(), ps.end(), [](auto* p) { return p->frozen; });
  }

  std::uint64_t group_checksum(ParamGroup g) { return checksum(group_params(g)); }

  CanonicalField<Real> canonical;
  DeformationField<Real> deformation;
  BackgroundShader<Real> background;

 private:
  void set_frozen(ParamGroup g, bool frozen) {
    for (auto* p : group_params(g)) {
      p->frozen = frozen;
      if (frozen) p->zero_grad();
    }
  }

  FieldConfig config_;
};

// ---------------------------------------------------------------------------
// Point queries.

template <typename Real>
CanonicalSample<Real> query_canonical(const CanonicalField<Real>& field, const Vec3<Real>& x) {
  if (!field.in_bounds(x.data())) throw DomainError("canonical query outside the scene bounds");
  typename CanonicalField<Real>::Batch b;
  field.forward_batch(x.data(), 1, b);
  return {b.sigma[0], Vec3<Real>(b.rgb[0], b.rgb[1], b.rgb[2])};
}

template <typename Real>
struct DeformResult {
  Vec3<Real> x_c;
  Vec3<Real> d;
  std::array<bool, 3> clamped{};
};

// Clamps x_d + d onto the scene box; clamped axes are flagged so callers can
// zero the gradient flowing back through them.
template <typename Real>
inline void warp_to_canonical(const FieldConfig& cfg, const Real* x_d, const Real* d, Real* x_c,
                              bool* clamped) {
  for (int a = 0; a < 3; ++a) {
    const Real v = x_d[a] + d[a];
    const Real lo = static_cast<Real>(cfg.scene_min[a]);
    const Real hi = static_cast<Real>(cfg.scene_max[a]);
    clamped[a] = v < lo || v > hi;
    x_c[a] = std::clamp(v, lo, hi);
  }
}

template <typename Real>
DeformResult<Real> deform(const SceneModel<Real>& model, const Vec3<Real>& x_d, Real t) {
  if (!(t >= Real(0) && t <= Real(1))) throw DomainError("time outside [0, 1]");
  typename DeformationField<Real>::Batch b;
  model.deformation.forward_batch(x_d.data(), t, 1, b);
  DeformResult<Real> r;
  r.d = Vec3<Real>(b.out(0, 0), b.out(1, 0), b.out(2, 0));
  warp_to_canonical(model.config(), x_d.data(), r.d.data(), r.x_c.data(), r.clamped.data());
  return r;
}

// d loss / d (x_d, t) for a loss depending on the displacement d(x_d, t).
template <typename Real>
std::array<Real, 4> deform_input_grad(const DeformationField<Real>& field, const Vec3<Real>& x_d,
                                      Real t, const Vec3<Real>& d_disp) {
  typename DeformationField<Real>::Batch b;
  field.forward_batch(x_d.data(), t, 1, b);
  std::array<Real, 4> g{};
  const std::vector<Real*> none(1 + field.head().params().size(), nullptr);
  field.backward_batch(x_d.data(), t, 1, b, d_disp.data(), none, g.data());
  return g;
}

template <typename Real>
Vec3<Real> shade_background(const BackgroundShader<Real>& bg, const Vec3<Real>& dir) {
  if (std::abs(static_cast<double>(dir.norm()) - 1.0) > 1e-6)
    throw UsageError("background direction must be unit length");
  return bg.shade(dir.data(), nullptr);
}

template <typename Real>
int set_active_levels(DeformationField<Real>& field, int iteration, const LevelSchedule& s) {
  return field.set_active_levels(iteration, s);
}

}  // namespace d4d
