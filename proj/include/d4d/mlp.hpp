#pragma once

#include "d4d/core.hpp"
#include "d4d/grad.hpp"

#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

namespace d4d {

template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

// Fully-connected network: softplus hidden layers, linear output. Inputs and
// outputs are batched column-wise (features x samples).
template <typename Real>
class Mlp {
 public:
  using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  struct Cache {
    std::vector<Matrix<Real>> act;  // act[0] = input, act[k] = hidden k output
  };

  Mlp() = default;

  Mlp(const std::string& name, const std::string& group, int in, int width, int hidden_layers,
      int out)
      : in_(in), out_(out) {
    std::vector<int> dims{in};
    for (int i = 0; i < hidden_layers; ++i) dims.push_back(width);
    dims.push_back(out);
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
      const auto prefix = name + ".l" + std::to_string(k);
      params_.emplace_back(prefix + ".weight", group, ParamKind::kMlp,
                           std::vector<std::size_t>{std::size_t(dims[k + 1]), std::size_t(dims[k])});
      params_.emplace_back(prefix + ".bias", group, ParamKind::kMlp,
                           std::vector<std::size_t>{std::size_t(dims[k + 1])});
    }
  }

  int input_dim() const { return in_; }
  int output_dim() const { return out_; }
  int layer_count() const { return static_cast<int>(params_.size() / 2); }
  int hidden_layers() const { return layer_count() - 1; }
  int width() const { return layer_count() > 1 ? static_cast<int>(params_[0].shape[0]) : 0; }

  ParamTensor<Real>& weight(int k) { return params_[2 * k]; }
  ParamTensor<Real>& bias(int k) { return params_[2 * k + 1]; }
  const ParamTensor<Real>& weight(int k) const { return params_[2 * k]; }
  const ParamTensor<Real>& bias(int k) const { return params_[2 * k + 1]; }
  std::vector<ParamTensor<Real>>& params() { return params_; }
  const std::vector<ParamTensor<Real>>& params() const { return params_; }

  // He-uniform weights, zero biases. zero_last zeroes the output layer.
  void init(Rng& rng, bool zero_last = false) {
    for (int k = 0; k < layer_count(); ++k) {
      auto& w = weight(k);
      const double bound = std::sqrt(6.0 / double(w.shape[1]));
      for (auto& v : w.value) v = static_cast<Real>(uniform(rng, -bound, bound));
      std::fill(bias(k).value.begin(), bias(k).value.end(), Real(0));
    }
    if (zero_last) std::fill(weight(layer_count() - 1).value.begin(),
                             weight(layer_count() - 1).value.end(), Real(0));
  }

  void forward(const Matrix<Real>& input, Matrix<Real>& output, Cache* cache) const {
    Matrix<Real> a = input;
    if (cache) {
      cache->act.resize(layer_count());
      cache->act[0] = input;
    }
    for (int k = 0; k < layer_count(); ++k) {
      Matrix<Real> z = weight_map(k) * a;
      z.colwise() += bias_map(k);
      if (k + 1 == layer_count()) {
        output = std::move(z);
        break;
      }
      Matrix<Real> h = softplus_of(z);
      if (cache) cache->act[k + 1] = h;
      a = std::move(h);
    }
  }

  // Accumulates parameter gradients into grads[2k] (weight) / grads[2k+1]
  // (bias) when non-null and writes d loss / d input into d_input if given.
  void backward(const Cache& cache, const Matrix<Real>& d_output, Matrix<Real>* d_input,
                std::span<Real* const> grads) const {
    Matrix<Real> delta = d_output;
    for (int k = layer_count() - 1; k >= 0; --k) {
      const Matrix<Real>& a_prev = cache.act[k];
      if (grads[2 * k]) {
        Eigen::Map<RowMajor> gw(grads[2 * k], weight(k).shape[0], weight(k).shape[1]);
        gw.noalias() += delta * a_prev.transpose();
      }
      if (grads[2 * k + 1]) {
        Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>> gb(grads[2 * k + 1], bias(k).numel());
        gb.noalias() += delta.rowwise().sum();
      }
      if (k == 0 && !d_input) break;
      Matrix<Real> back = weight_map(k).transpose() * delta;
      if (k == 0) {
        *d_input = std::move(back);
        break;
      }
      // softplus'(z) = sigmoid(z) = 1 - exp(-softplus(z))
      const auto& h = cache.act[k];
      delta = back.array() * (-(-h.array()).expm1());
    }
  }

  // Single-sample convenience.
  std::vector<Real> operator()(std::span<const Real> x) const {
    Matrix<Real> in(in_, 1);
    for (int i = 0; i < in_; ++i) in(i, 0) = x[i];
    Matrix<Real> out;
    forward(in, out, nullptr);
    return std::vector<Real>(out.data(), out.data() + out_);
  }

  // Gradient pointers into each tensor's own grad buffer (null when frozen).
  std::vector<Real*> own_grad_ptrs() {
    std::vector<Real*> ptrs;
    for (auto& p : params_) ptrs.push_back(p.frozen ? nullptr : p.grad.data());
    return ptrs;
  }

 private:
  Eigen::Map<const RowMajor> weight_map(int k) const {
    const auto& w = weight(k);
    return Eigen::Map<const RowMajor>(w.value.data(), w.shape[0], w.shape[1]);
  }
  Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> bias_map(int k) const {
    const auto& b = bias(k);
    return Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>(b.value.data(), b.numel());
  }

  static Matrix<Real> softplus_of(const Matrix<Real>& z) {
    return z.array().max(Real(0)) + (-z.array().abs()).exp().log1p();
  }

  int in_ = 0;
  int out_ = 0;
  std::vector<ParamTensor<Real>> params_;
};

}  // namespace d4d
