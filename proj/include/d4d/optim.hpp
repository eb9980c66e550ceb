#pragma once

// Adam with decoupled weight decay (AdamW), per-kind learning rates and
// optional global-norm gradient clipping. Update order follows PyTorch:
//   p <- p * (1 - lr * wd)
//   m <- b1 m + (1 - b1) g,   v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m / bc1) / (sqrt(v / bc2) + eps)

#include "d4d/core.hpp"
#include "d4d/grad.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace d4d {

struct AdamConfig {
  double lr_grid = 0.01;
  double lr_mlp = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-15;
  double weight_decay = 0.01;
  // Global-norm clip threshold; <= 0 disables clipping.
  double clip_norm = 10.0;

  void validate() const {
    if (!(lr_grid > 0 && lr_mlp > 0)) throw ConfigError("learning rates must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
      throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(eps > 0)) throw ConfigError("Adam eps must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("weight decay must be non-negative");
  }
};

template <typename Real>
struct AdamMoments {
  std::vector<Real> m;
  std::vector<Real> v;
};

template <typename Real>
class AdamW {
 public:
  AdamW() = default;
  AdamW(ParamList<Real> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    moments_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      moments_[i].m.assign(params_[i]->numel(), Real(0));
      moments_[i].v.assign(params_[i]->numel(), Real(0));
    }
  }

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return step_; }
  void set_steps(std::uint64_t s) { step_ = s; }
  const ParamList<Real>& params() const { return params_; }
  std::vector<AdamMoments<Real>>& moments() { return moments_; }
  const std::vector<AdamMoments<Real>>& moments() const { return moments_; }

  double learning_rate(const ParamTensor<Real>& p) const {
    return p.kind == ParamKind::kGrid ? cfg_.lr_grid : cfg_.lr_mlp;
  }

  // Global L2 norm over unfrozen gradients. Raises on non-finite entries.
  double grad_norm() const {
    double s = 0;
    for (const auto* p : params_) {
      if (p->frozen) continue;
      for (Real g : p->grad) {
        if (!std::isfinite(static_cast<double>(g)))
          throw NumericError("non-finite gradient in tensor '" + p->name + "'");
        s += static_cast<double>(g) * g;
      }
    }
    return std::sqrt(s);
  }

  // Applies one update from the tensors' current grads; returns the
  // pre-clip gradient norm. Frozen tensors are left untouched.
  double step() {
    const double norm = grad_norm();
    const double clip = cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    const double sqrt_bc2 = std::sqrt(bc2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto* p = params_[i];
      if (p->frozen) continue;
      const double lr = learning_rate(*p);
      const Real decay = static_cast<Real>(1.0 - lr * cfg_.weight_decay);
      const Real b1 = static_cast<Real>(cfg_.beta1), b2 = static_cast<Real>(cfg_.beta2);
      const Real step_size = static_cast<Real>(lr / bc1);
      const Real inv_sqrt_bc2 = static_cast<Real>(1.0 / sqrt_bc2);
      const Real eps = static_cast<Real>(cfg_.eps);
      auto& m = moments_[i].m;
      auto& v = moments_[i].v;
      for (std::size_t k = 0; k < p->numel(); ++k) {
        const Real g = p->grad[k] * static_cast<Real>(clip);
        p->value[k] *= decay;
        m[k] = b1 * m[k] + (Real(1) - b1) * g;
        v[k] = b2 * v[k] + (Real(1) - b2) * g * g;
        p->value[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
      }
    }
    return norm;
  }

 private:
  ParamList<Real> params_;
  AdamConfig cfg_;
  std::vector<AdamMoments<Real>> moments_;
  std::uint64_t step_ = 0;
};

}  // namespace d4d
