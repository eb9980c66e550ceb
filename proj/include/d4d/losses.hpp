#pragma once

// Stage objectives:
//   stage one:  lambda_2d * L_2d(I) + lambda_3d * L_3d(I)
//   stage two:  L_video(V) + lambda_tv * L_tv(D)
// plus reference-view supervision for image-conditioned runs.

#include "d4d/camera.hpp"
#include "d4d/core.hpp"
#include "d4d/grad.hpp"
#include "d4d/guidance.hpp"
#include "d4d/renderer.hpp"

#include <span>
#include <string>
#include <vector>

namespace d4d {

struct StageOneWeights {
  double lambda_2d = 1.0;
  double lambda_3d = 1.0;
};

struct StageTwoWeights {
  double lambda_tv = 1000.0;
  double lambda_dec = 0.1;
};

struct ReferenceWeights {
  double rgb = 1000.0;
  double mask = 100.0;
};

// ---------------------------------------------------------------------------
// Total variation of a displacement video D (T x H x W x 3): summed squared
// backward differences along x, y and t. Terms whose neighbour would fall
// outside the video are dropped (no wraparound).

template <typename Real>
Real tv_loss(std::span<const Real> d, int T, int H, int W) {
  if (T < 1 || H < 1 || W < 1) throw UsageError("tv_loss: empty video");
  if (d.size() != std::size_t(T) * H * W * 3) throw UsageError("tv_loss: shape mismatch");
  auto at = [&](int t, int y, int x, int c) {
    return d[((std::size_t(t) * H + y) * W + x) * 3 + c];
  };
  Real sum = Real(0);
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c) {
          const Real v = at(t, y, x, c);
          if (x > 0) sum += (at(t, y, x - 1, c) - v) * (at(t, y, x - 1, c) - v);
          if (y > 0) sum += (at(t, y - 1, x, c) - v) * (at(t, y - 1, x, c) - v);
          if (t > 0) sum += (at(t - 1, y, x, c) - v) * (at(t - 1, y, x, c) - v);
        }
  return sum;
}

// Accumulates scale * d tv / d D into grad.
template <typename Real>
void tv_loss_grad(std::span<const Real> d, int T, int H, int W, Real scale, std::span<Real> grad) {
  if (d.size() != std::size_t(T) * H * W * 3 || grad.size() != d.size())
    throw UsageError("tv_loss_grad: shape mismatch");
  auto idx = [&](int t, int y, int x, int c) { return ((std::size_t(t) * H + y) * W + x) * 3 + c; };
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c) {
          const std::size_t i = idx(t, y, x, c);
          auto pair = [&](std::size_t j) {
            const Real g = Real(2) * scale * (d[i] - d[j]);
            grad[i] += g;
            grad[j] -= g;
          };
          if (x > 0) pair(idx(t, y, x - 1, c));
          if (y > 0) pair(idx(t, y - 1, x, c));
          if (t > 0) pair(idx(t - 1, y, x, c));
        }
}

// Tape variant over per-frame H x W x 3 displacement nodes.
template <typename Real>
NodePtr<Real> tv_loss(Tape<Real>& tape, const std::vector<NodePtr<Real>>& frames) {
  if (frames.empty()) throw UsageError("tv_loss: empty video");
  const int H = static_cast<int>(frames[0]->shape.at(0));
  const int W = static_cast<int>(frames[0]->shape.at(1));
  const int T = static_cast<int>(frames.size());
  std::vector<Real> flat;
  flat.reserve(std::size_t(T) * H * W * 3);
  for (const auto& f : frames) {
    if (f->shape != frames[0]->shape) throw UsageError("tv_loss: frames differ in shape");
    flat.insert(flat.end(), f->value.begin(), f->value.end());
  }
  auto out = scalar_node<Real>(tv_loss<Real>(flat, T, H, W));
  tape.record([frames, out, flat = std::move(flat), T, H, W] {
    std::vector<Real> g(flat.size(), Real(0));
    tv_loss_grad<Real>(flat, T, H, W, out->grad[0], g);
    std::size_t k = 0;
    for (const auto& f : frames)
      for (std::size_t i = 0; i < f->numel(); ++i) f->grad[i] += g[k++];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Guidance terms.

// Shared request context for one loss evaluation.
struct GuidanceCall {
  std::string prompt;
  double t = 0.5;
  double guidance_scale = 100.0;
  std::uint64_t seed = 0;
  SdsWeights sds{1.0, 0.0};
};

// Queries the provider with the given images and returns the reconstruction
// loss node. Capability mismatches are configuration errors.
template <typename Real>
NodePtr<Real> guidance_term(Tape<Real>& tape, GuidanceProvider& provider, GuidanceKind kind,
                            const std::vector<NodePtr<Real>>& images, std::vector<Camera> cameras,
                            std::vector<double> timestamps, const GuidanceCall& call) {
  if (!provider.supports(kind))
    throw ConfigError("provider '" + provider.id() + "' does not support " +
                      std::string(kind_name(kind)) + " guidance");
  const auto req = make_request(kind, images, std::move(cameras), std::move(timestamps), call.prompt,
                                call.t, call.guidance_scale, call.seed);
  const auto resp = provider.denoise(req);
  check_response(req, resp);
  return sds_reconstruction_loss(tape, images, resp, call.sds, provider.latent_support());
}

// Stage-one images: one view for 2D guidance, four orbit views for 3D.
template <typename Real>
struct StageOneViews {
  NodePtr<Real> single;
  Camera single_camera;
  std::vector<NodePtr<Real>> multiview;
  std::vector<Camera> multiview_cameras;
};

struct StageOneTerms {
  double l2d = 0.0;
  double l3d = 0.0;
};

// lambda_2d * L_2d + lambda_3d * L_3d. A zero weight skips its provider.
template <typename Real>
NodePtr<Real> stage1_loss(Tape<Real>& tape, const StageOneViews<Real>& views,
                          GuidanceProvider* g2d, GuidanceProvider* g3d, const StageOneWeights& w,
                          const GuidanceCall& call2d, const GuidanceCall& call3d,
                          StageOneTerms* terms = nullptr) {
  if (w.lambda_2d < 0 || w.lambda_3d < 0) throw ConfigError("stage-one weights must be non-negative");
  std::vector<NodePtr<Real>> parts;
  std::vector<Real> weights;
  if (w.lambda_2d > 0) {
    if (!g2d) throw ConfigError("stage one needs a 2D guidance provider");
    auto l = guidance_term(tape, *g2d, GuidanceKind::kImage2d, {views.single},
                           {views.single_camera}, {}, call2d);
    if (terms) terms->l2d = double(l->value[0]);
    parts.push_back(l);
    weights.push_back(static_cast<Real>(w.lambda_2d));
  }
  if (w.lambda_3d > 0) {
    if (!g3d) throw ConfigError("stage one needs a multi-view guidance provider");
    auto l = guidance_term(tape, *g3d, GuidanceKind::kMultiview3d, views.multiview,
                           views.multiview_cameras, {}, call3d);
    if (terms) terms->l3d = double(l->value[0]);
    parts.push_back(l);
    weights.push_back(static_cast<Real>(w.lambda_3d));
  }
  return weighted_sum(tape, parts, weights);
}

struct StageTwoTerms {
  double video = 0.0;
  double tv = 0.0;
};

// L_video over the (possibly upsampled) RGB frames plus lambda_tv times the
// TV of the displacement frames at render resolution.
template <typename Real>
NodePtr<Real> stage2_loss(Tape<Real>& tape, const std::vector<NodePtr<Real>>& rgb_frames,
                          const std::vector<NodePtr<Real>>& displacement_frames,
                          const Camera& camera, const std::vector<double>& timestamps,
                          GuidanceProvider& gvid, const StageTwoWeights& w, GuidanceCall call,
                          StageTwoTerms* terms = nullptr) {
  if (w.lambda_tv < 0 || w.lambda_dec < 0) throw ConfigError("stage-two weights must be non-negative");
  call.sds.dec = w.lambda_dec;
  std::vector<Camera> cams(rgb_frames.size(), camera);
  auto video = guidance_term(tape, gvid, GuidanceKind::kVideo, rgb_frames, std::move(cams),
                             timestamps, call);
  std::vector<NodePtr<Real>> parts{video};
  std::vector<Real> weights{Real(1)};
  double tv_value = 0.0;
  if (w.lambda_tv > 0) {
    auto tv = tv_loss(tape, displacement_frames);
    tv_value = double(tv->value[0]);
    parts.push_back(tv);
    weights.push_back(static_cast<Real>(w.lambda_tv));
  }
  if (terms) *terms = {double(video->value[0]), tv_value};
  return weighted_sum(tape, parts, weights);
}

// ---------------------------------------------------------------------------
// Reference view: rgb * mean(((rgb - ref) * mask)^2) + mask * mean((opacity - mask)^2),
// means taken over all elements.

template <typename Real>
NodePtr<Real> reference_view_loss(Tape<Real>& tape, const RenderOutput<Real>& render,
                                  const std::vector<double>& ref_image,
                                  const std::vector<double>& ref_mask, const ReferenceWeights& w) {
  const std::size_t np = render.pixels();
  if (ref_image.size() != 3 * np || ref_mask.size() != np)
    throw UsageError("reference_view_loss: reference shape does not match the render");
  for (double m : ref_mask)
    if (!(m >= 0.0 && m <= 1.0)) throw UsageError("reference_view_loss: mask outside [0, 1]");
  double rgb_sum = 0, mask_sum = 0;
  for (std::size_t p = 0; p < np; ++p) {
    for (int c = 0; c < 3; ++c) {
      const double r = (double(render.rgb->value[3 * p + c]) - ref_image[3 * p + c]) * ref_mask[p];
      rgb_sum += r * r;
    }
    const double r = double(render.opacity->value[p]) - ref_mask[p];
    mask_sum += r * r;
  }
  auto out = scalar_node<Real>(
      static_cast<Real>(w.rgb * rgb_sum / double(3 * np) + w.mask * mask_sum / double(np)));
  tape.record([render, out, ref_image, ref_mask, w, np] {
    const double g = double(out->grad[0]);
    const double krgb = 2.0 * w.rgb / double(3 * np), kmask = 2.0 * w.mask / double(np);
    for (std::size_t p = 0; p < np; ++p) {
      const double m = ref_mask[p];
      for (int c = 0; c < 3; ++c) {
        const double r = double(render.rgb->value[3 * p + c]) - ref_image[3 * p + c];
        render.rgb->grad[3 * p + c] += static_cast<Real>(g * krgb * r * m * m);
      }
      render.opacity->grad[p] +=
          static_cast<Real>(g * kmask * (double(render.opacity->value[p]) - m));
    }
  });
  return out;
}

}  // namespace d4d
