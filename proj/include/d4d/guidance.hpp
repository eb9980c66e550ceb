#pragma once

// Denoising guidance in the reconstruction formulation: a provider receives
// clean renders plus a noise level and returns 1-step denoised targets; the
// engine then penalises the residual between its renders and those targets.
// Targets are constants (stop-gradient), so providers never touch a tape.

#include "d4d/camera.hpp"
#include "d4d/core.hpp"
#include "d4d/grad.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace d4d {

enum class GuidanceKind { kImage2d, kMultiview3d, kVideo };

inline std::string_view kind_name(GuidanceKind k) {
  switch (k) {
    case GuidanceKind::kImage2d: return "image2d";
    case GuidanceKind::kMultiview3d: return "multiview3d";
    case GuidanceKind::kVideo: return "video";
  }
  return "?";
}

inline GuidanceKind parse_kind(std::string_view s) {
  if (s == "image2d") return GuidanceKind::kImage2d;
  if (s == "multiview3d") return GuidanceKind::kMultiview3d;
  if (s == "video") return GuidanceKind::kVideo;
  throw UsageError("unknown guidance kind '" + std::string(s) + "'");
}

// Image count implied by a request kind. Videos default to 24 frames but
// reduced configurations send fewer, so any count >= 2 is accepted.
inline bool count_matches(GuidanceKind k, int n) {
  switch (k) {
    case GuidanceKind::kImage2d: return n == 1;
    case GuidanceKind::kMultiview3d: return n == 4;
    case GuidanceKind::kVideo: return n >= 2;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Noise-level schedule.

struct NoiseSchedule {
  Range start{0.99, 0.99};
  Range end{0.2, 0.5};
  int total_iters = 10000;

  // Fixed U[0.02, 0.98], the stage-one default.
  static NoiseSchedule fixed(double lo, double hi, int total) { return {{lo, hi}, {lo, hi}, total}; }

  void validate() const {
    for (const Range* r : {&start, &end})
      if (!(0.0 < r->lo && r->lo <= r->hi && r->hi < 1.0))
        throw ConfigError("noise ranges must satisfy 0 < lo <= hi < 1");
    if (total_iters < 0) throw ConfigError("noise schedule total_iters must be non-negative");
  }

  Range range_at(int iteration) const {
    if (iteration < 0 || iteration > total_iters)
      throw UsageError("noise schedule iteration " + std::to_string(iteration) +
                       " outside [0, " + std::to_string(total_iters) + "]");
    const double f = total_iters == 0 ? 0.0 : double(iteration) / double(total_iters);
    return {start.lo + (end.lo - start.lo) * f, start.hi + (end.hi - start.hi) * f};
  }
};

inline double sample_noise_level(const NoiseSchedule& schedule, int iteration, Rng& rng) {
  const Range r = schedule.range_at(iteration);
  return r.lo + (r.hi - r.lo) * uniform01(rng);
}

// ---------------------------------------------------------------------------
// Requests and responses. Pixel data is N x H x W x 3, row-major,
// frame-major; it travels as float32 on the wire but stays double in-process
// so echo-style providers reproduce double renders exactly.

struct GuidanceRequest {
  GuidanceKind kind = GuidanceKind::kImage2d;
  int n = 1;
  int height = 0;
  int width = 0;
  std::vector<double> images;
  std::string prompt;
  std::vector<Camera> cameras;
  // In-process only (oracle providers that synthesise a reference need it).
  std::vector<double> timestamps;
  double t = 0.5;
  double guidance_scale = 100.0;
  std::uint64_t seed = 0;

  std::size_t numel() const { return std::size_t(n) * height * width * 3; }

  void validate() const {
    if (!count_matches(kind, n))
      throw UsageError("guidance request: " + std::to_string(n) + " images do not fit kind " +
                       std::string(kind_name(kind)));
    if (height < 1 || width < 1) throw UsageError("guidance request: empty images");
    if (images.size() != numel()) throw UsageError("guidance request: payload size mismatch");
    if (cameras.size() != std::size_t(n))
      throw UsageError("guidance request: need one camera per image");
    if (!(t > 0.0 && t < 1.0)) throw UsageError("guidance request: noise level outside (0, 1)");
  }
};

struct GuidanceResponse {
  std::string provider_id;
  std::vector<double> denoised_rgb;
  bool has_latent = false;
  std::array<int, 4> latent_shape{0, 0, 0, 0};  // N, h, w, C
  std::vector<double> denoised_latent;
  std::vector<double> rendered_latent;
};

class GuidanceProvider {
 public:
  virtual ~GuidanceProvider() = default;
  virtual std::string id() const = 0;
  virtual bool supports(GuidanceKind kind) const = 0;
  virtual bool latent_support() const { return false; }
  // Must be deterministic in (request, request.seed).
  virtual GuidanceResponse denoise(const GuidanceRequest& request) = 0;
};

inline void check_response(const GuidanceRequest& req, const GuidanceResponse& resp) {
  if (resp.denoised_rgb.size() != req.numel())
    throw ProviderError("provider '" + resp.provider_id + "' returned " +
                        std::to_string(resp.denoised_rgb.size()) + " rgb values, expected " +
                        std::to_string(req.numel()));
  if (resp.has_latent) {
    const auto& s = resp.latent_shape;
    const std::size_t n = std::size_t(s[0]) * s[1] * s[2] * s[3];
    if (n == 0 || resp.denoised_latent.size() != n || resp.rendered_latent.size() != n)
      throw ProviderError("provider '" + resp.provider_id + "' returned inconsistent latents");
  }
}

// ---------------------------------------------------------------------------
// Built-in providers.

// Returns a fixed or generated reference regardless of noise level and seed.
class OracleProvider : public GuidanceProvider {
 public:
  using Generator = std::function<std::vector<double>(const GuidanceRequest&)>;

  explicit OracleProvider(Generator gen, std::vector<GuidanceKind> kinds = all_kinds(),
                          std::string id = "oracle")
      : gen_(std::move(gen)), kinds_(std::move(kinds)), id_(std::move(id)) {}

  // Fixed targets; must match the request payload size exactly.
  explicit OracleProvider(std::vector<double> targets, std::vector<GuidanceKind> kinds = all_kinds())
      : OracleProvider([t = std::move(targets)](const GuidanceRequest&) { return t; },
                       std::move(kinds)) {}

  std::string id() const override { return id_; }
  bool supports(GuidanceKind k) const override {
    return std::find(kinds_.begin(), kinds_.end(), k) != kinds_.end();
  }

  GuidanceResponse denoise(const GuidanceRequest& req) override {
    req.validate();
    GuidanceResponse r;
    r.provider_id = id_;
    r.denoised_rgb = gen_(req);
    if (r.denoised_rgb.size() != req.numel())
      throw ProviderError("oracle target shape does not match the request");
    return r;
  }

  static std::vector<GuidanceKind> all_kinds() {
    return {GuidanceKind::kImage2d, GuidanceKind::kMultiview3d, GuidanceKind::kVideo};
  }

 private:
  Generator gen_;
  std::vector<GuidanceKind> kinds_;
  std::string id_;
};

// Echo: the denoised target is the render itself, so every loss is zero.
inline std::unique_ptr<OracleProvider> make_echo_provider() {
  return std::make_unique<OracleProvider>(
      [](const GuidanceRequest& r) { return r.images; }, OracleProvider::all_kinds(), "echo");
}

// Toy diffusion with a known optimum:
//   target = (1 - blend) * rendered + blend * mean_image.
// The mean image is H x W x 3 (broadcast over frames) or a constant colour.
class AnalyticProvider : public GuidanceProvider {
 public:
  AnalyticProvider(std::array<double, 3> color, double blend) : color_(color), blend_(blend) {
    check_blend();
  }
  AnalyticProvider(std::vector<double> mean_image, int height, int width, double blend)
      : mean_(std::move(mean_image)), height_(height), width_(width), blend_(blend) {
    check_blend();
    if (mean_.size() != std::size_t(height) * width * 3)
      throw UsageError("analytic provider: mean image shape mismatch");
  }

  std::string id() const override { return "analytic"; }
  bool supports(GuidanceKind) const override { return true; }

  GuidanceResponse denoise(const GuidanceRequest& req) override {
    req.validate();
    if (!mean_.empty() && (req.height != height_ || req.width != width_))
      throw ProviderError("analytic provider: mean image is " + std::to_string(height_) + "x" +
                          std::to_string(width_) + ", request is " + std::to_string(req.height) +
                          "x" + std::to_string(req.width));
    GuidanceResponse r;
    r.provider_id = id();
    r.denoised_rgb.resize(req.numel());
    const std::size_t per_frame = std::size_t(req.height) * req.width * 3;
    for (std::size_t i = 0; i < req.numel(); ++i) {
      const double m = mean_.empty() ? color_[i % 3] : mean_[i % per_frame];
      r.denoised_rgb[i] = (1.0 - blend_) * req.images[i] + blend_ * m;
    }
    return r;
  }

 private:
  void check_blend() const {
    if (!(blend_ > 0.0 && blend_ <= 1.0)) throw UsageError("analytic provider: blend must be in (0, 1]");
  }

  std::array<double, 3> color_{0.5, 0.5, 0.5};
  std::vector<double> mean_;
  int height_ = 0;
  int width_ = 0;
  double blend_ = 1.0;
};

// ---------------------------------------------------------------------------
// Reconstruction loss.

struct SdsWeights {
  double latent = 1.0;
  double dec = 0.1;
};

inline double mean_squared(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = a[i] - b[i];
    s += r * r;
  }
  return a.empty() ? 0.0 : s / double(a.size());
}

// Scale on the RGB residual gradient. The latent term cannot be
// differentiated through the provider's encoder, so its gradient rides on
// the decoded-RGB pathway; an RGB-only response uses the same total weight.
inline double rgb_gradient_weight(const SdsWeights& w) { return w.latent + w.dec; }

// Loss value:
//   with latents: latent * mse(latents) + dec * mse(rgb)
//   RGB only:     (latent + dec) * mse(rgb)
inline double sds_reconstruction_loss(const std::vector<double>& rendered_rgb,
                                      const GuidanceResponse& resp, const SdsWeights& w,
                                      bool provider_has_latents = false) {
  if (rendered_rgb.size() != resp.denoised_rgb.size())
    throw UsageError("sds loss: rendered and denoised shapes differ");
  if (w.latent < 0 || w.dec < 0) throw UsageError("sds loss: weights must be non-negative");
  if (provider_has_latents && w.latent > 0 && !resp.has_latent)
    throw ProviderError("provider '" + resp.provider_id + "' claims latent support but sent none");
  const double rgb = mean_squared(rendered_rgb, resp.denoised_rgb);
  if (resp.has_latent)
    return w.latent * mean_squared(resp.rendered_latent, resp.denoised_latent) + w.dec * rgb;
  return rgb_gradient_weight(w) * rgb;
}

// Tape variant over a list of H x W x 3 image nodes (frame-major order).
template <typename Real>
NodePtr<Real> sds_reconstruction_loss(Tape<Real>& tape, const std::vector<NodePtr<Real>>& images,
                                      const GuidanceResponse& resp, const SdsWeights& w,
                                      bool provider_has_latents = false) {
  std::vector<double> flat;
  for (const auto& im : images) flat.insert(flat.end(), im->value.begin(), im->value.end());
  auto out = scalar_node<Real>(
      static_cast<Real>(sds_reconstruction_loss(flat, resp, w, provider_has_latents)));
  const double scale = 2.0 * rgb_gradient_weight(w) / double(std::max<std::size_t>(1, flat.size()));
  // Copy of the targets; the provider's buffers are never referenced again.
  tape.record([images, out, target = resp.denoised_rgb, scale] {
    const double g = scale * double(out->grad[0]);
    std::size_t k = 0;
    for (const auto& im : images)
      for (std::size_t i = 0; i < im->numel(); ++i, ++k)
        im->grad[i] += static_cast<Real>(g * (double(im->value[i]) - target[k]));
  });
  return out;
}

// Packs image nodes into a request.
template <typename Real>
GuidanceRequest make_request(GuidanceKind kind, const std::vector<NodePtr<Real>>& images,
                             std::vector<Camera> cameras, std::vector<double> timestamps,
                             const std::string& prompt, double t, double guidance_scale,
                             std::uint64_t seed) {
  if (images.empty()) throw UsageError("guidance request needs at least one image");
  GuidanceRequest req;
  req.kind = kind;
  req.n = static_cast<int>(images.size());
  req.height = static_cast<int>(images[0]->shape.at(0));
  req.width = static_cast<int>(images[0]->shape.at(1));
  for (const auto& im : images) {
    if (im->shape != images[0]->shape) throw UsageError("guidance images differ in shape");
    req.images.insert(req.images.end(), im->value.begin(), im->value.end());
  }
  req.cameras = std::move(cameras);
  req.timestamps = std::move(timestamps);
  req.prompt = prompt;
  req.t = t;
  req.guidance_scale = guidance_scale;
  req.seed = seed;
  return req;
}

}  // namespace d4d
