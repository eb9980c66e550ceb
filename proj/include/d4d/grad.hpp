#pragma once

// Reverse-mode plumbing for the fixed training pipelines. Each pipeline stage
// (render, upsample, loss terms) computes its forward value eagerly and
// records a hand-derived adjoint on a Tape; backward() replays the adjoints
// in exact reverse order.

#include "d4d/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace d4d {

enum class ParamKind { kGrid, kMlp };

template <typename Real>
struct ParamTensor {
  std::string name;
  std::string group;
  ParamKind kind = ParamKind::kMlp;
  std::vector<std::size_t> shape;
  AlignedVector<Real> value;
  AlignedVector<Real> grad;
  bool frozen = false;

  ParamTensor() = default;
  ParamTensor(std::string n, std::string g, ParamKind k, std::vector<std::size_t> s)
      : name(std::move(n)), group(std::move(g)), kind(k), shape(std::move(s)) {
    const std::size_t count = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                              std::multiplies<>());
    value.assign(count, Real(0));
    grad.assign(count, Real(0));
  }

  std::size_t numel() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), Real(0)); }

  // Byte-level checksum of the values (used for freeze invariants).
  std::uint64_t checksum() const {
    return fnv1a(value.data(), value.size() * sizeof(Real));
  }
};

template <typename Real>
using ParamList = std::vector<ParamTensor<Real>*>;

template <typename Real>
std::uint64_t checksum(const ParamList<Real>& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto* p : params) h = fnv1a(p->value.data(), p->value.size() * sizeof(Real), h);
  return h;
}

template <typename Real>
void zero_grads(const ParamList<Real>& params) {
  for (auto* p : params) p->zero_grad();
}

// A value produced by a pipeline stage, with its adjoint buffer.
template <typename Real>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<Real> value;
  std::vector<Real> grad;

  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    const std::size_t count = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                              std::multiplies<>());
    value.assign(count, Real(0));
    grad.assign(count, Real(0));
  }
  std::size_t numel() const { return value.size(); }
};

template <typename Real>
using NodePtr = std::shared_ptr<Tensor<Real>>;

template <typename Real>
NodePtr<Real> make_node(std::vector<std::size_t> shape) {
  return std::make_shared<Tensor<Real>>(std::move(shape));
}

template <typename Real>
class Tape {
 public:
  void record(std::function<void()> adjoint) {
    if (consumed_) throw UsageError("tape already consumed by backward(); record a new pass");
    ops_.push_back(std::move(adjoint));
  }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded adjoint in reverse.
  void backward(const NodePtr<Real>& loss) {
    if (ops_.empty()) throw UsageError("backward() on an empty tape");
    if (consumed_) throw UsageError("backward() called twice on the same tape");
    if (!loss || loss->numel() != 1)
      throw UsageError("backward() needs a scalar loss node");
    consumed_ = true;
    loss->grad[0] += Real(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  std::size_t size() const { return ops_.size(); }
  bool empty() const { return ops_.empty(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

// Scalar leaf holding a constant value (no adjoint).
template <typename Real>
NodePtr<Real> scalar_node(Real v) {
  auto n = make_node<Real>({1});
  n->value[0] = v;
  return n;
}

// out = sum_i weights[i] * terms[i] (all scalar nodes).
template <typename Real>
NodePtr<Real> weighted_sum(Tape<Real>& tape, const std::vector<NodePtr<Real>>& terms,
                           const std::vector<Real>& weights) {
  if (terms.size() != weights.size()) throw UsageError("weighted_sum: size mismatch");
  auto out = make_node<Real>({1});
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i]->numel() != 1) throw UsageError("weighted_sum: non-scalar term");
    out->value[0] += weights[i] * terms[i]->value[0];
  }
  tape.record([out, terms, weights] {
    for (std::size_t i = 0; i < terms.size(); ++i) terms[i]->grad[0] += weights[i] * out->grad[0];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference verification harness.

class NondeterminismError : public NumericError {
 public:
  using NumericError::NumericError;
};

struct FdOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  // Tensors larger than this are checked with random directional probes.
  std::size_t max_coords = 1000;
  int probes = 8;
  // Denominator floor for the relative error of near-zero derivatives.
  double abs_floor = 1e-7;
  std::uint64_t seed = 1234;
  // Five-point central stencil (truncation O(h^4)) instead of two-point.
  bool five_point = false;
};

struct FdEntry {
  std::string param;
  // Coordinate index, or -1 for a directional probe.
  long long coord = -1;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct FdReport {
  double max_rel_err = 0;
  std::string worst_param;
  long long worst_coord = -1;
  std::size_t checks = 0;
  bool passed = true;
  double tolerance = 0;
  std::vector<FdEntry> failures;

  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(6);
    os << (passed ? "PASS" : "FAIL") << " checks=" << checks << " max_rel_err=" << max_rel_err
       << " tolerance=" << tolerance << " worst=" << worst_param;
    if (worst_coord >= 0) os << "[" << worst_coord << "]";
    os << "\n";
    for (const auto& f : failures) {
      os << "  " << f.param;
      if (f.coord >= 0) os << "[" << f.coord << "]";
      else os << " (probe)";
      os << " analytic=" << f.analytic << " numeric=" << f.numeric << " rel_err=" << f.rel_err
         << "\n";
    }
    return os.str();
  }
};

inline double fd_relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Compares analytic gradients against central differences.
//   loss_fn: evaluates the scalar loss at the current parameter values.
//   grad_fn: writes the analytic gradient into each ParamTensor::grad.
// Frozen tensors are skipped.
template <typename Real>
FdReport fd_check(const ParamList<Real>& params, const std::function<Real()>& loss_fn,
                  const std::function<void()>& grad_fn, const FdOptions& opt = {}) {
  FdReport report;
  report.tolerance = opt.tolerance;

  zero_grads(params);
  grad_fn();
  std::vector<AlignedVector<Real>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  const Real base0 = loss_fn();
  const Real base1 = loss_fn();
  if (!(base0 == base1) && !(std::isnan(base0) && std::isnan(base1)))
    throw NondeterminismError("fd_check: loss is not deterministic under a fixed seed");

  const Real h = static_cast<Real>(opt.step);
  auto note = [&](const std::string& name, long long coord, double a, double n) {
    ++report.checks;
    const double err = fd_relative_error(a, n, opt.abs_floor);
    if (report.checks == 1 || err > report.max_rel_err || std::isnan(err)) {
      report.max_rel_err = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
      report.worst_param = name;
      report.worst_coord = coord;
    }
    if (!(err <= opt.tolerance)) {
      report.passed = false;
      if (report.failures.size() < 16) report.failures.push_back({name, coord, a, n, err});
    }
  };

  // Derivative along the perturbation eval(k) = loss(p + k h e).
  auto central = [&](auto&& eval) {
    const double f1 = static_cast<double>(eval(1.0)), fm1 = static_cast<double>(eval(-1.0));
    if (!opt.five_point) return (f1 - fm1) / (2.0 * opt.step);
    const double f2 = static_cast<double>(eval(2.0)), fm2 = static_cast<double>(eval(-2.0));
    return (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * opt.step);
  };

  Rng rng(opt.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto* p = params[pi];
    if (p->frozen) continue;
    const auto& g = analytic[pi];
    if (p->numel() <= opt.max_coords) {
      for (std::size_t i = 0; i < p->numel(); ++i) {
        const Real saved = p->value[i];
        const double numeric = central([&](double k) {
          p->value[i] = saved + static_cast<Real>(k) * h;
          const Real v = loss_fn();
          p->value[i] = saved;
          return v;
        });
        note(p->name, static_cast<long long>(i), static_cast<double>(g[i]), numeric);
      }
    } else {
      std::vector<Real> dir(p->numel());
      for (int k = 0; k < opt.probes; ++k) {
        double norm2 = 0;
        for (auto& d : dir) {
          d = static_cast<Real>(normal01(rng));
          norm2 += static_cast<double>(d) * d;
        }
        const Real inv = static_cast<Real>(1.0 / std::sqrt(norm2));
        double directional = 0;
        for (std::size_t i = 0; i < dir.size(); ++i) {
          dir[i] *= inv;
          directional += static_cast<double>(g[i]) * dir[i];
        }
        const AlignedVector<Real> saved = p->value;
        const double numeric = central([&](double k) {
          for (std::size_t i = 0; i < dir.size(); ++i)
            p->value[i] = saved[i] + static_cast<Real>(k) * h * dir[i];
          const Real v = loss_fn();
          p->value = saved;
          return v;
        });
        note(p->name, -1, directional, numeric);
      }
    }
  }
  // Leave the analytic gradient in place for the caller.
  for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
  return report;
}

}  // namespace d4d
