#pragma once

// Multi-resolution hash-encoded feature grids over 3D or 4D inputs.
//
// Level l has N_l = floor(N_min * b^l) cells per axis with the growth factor
// b = exp((ln N_max - ln N_min) / (L - 1)). A level whose (N_l + 1)^dim
// lattice points fit into the table is indexed densely; finer levels hash
// the integer lattice point with
//
//   h(c) = (c_1*P_1 xor c_2*P_2 xor ... xor c_dim*P_dim) mod table_size
//
// where the products are taken in unsigned 64-bit arithmetic and
//   P_1 = 1, P_2 = 2654435761, P_3 = 805459861, P_4 = 3674653429.

#include "d4d/core.hpp"
#include "d4d/grad.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace d4d {

inline constexpr std::array<std::uint64_t, 4> kHashPrimes{1ull, 2654435761ull, 805459861ull,
                                                          3674653429ull};

// Per-axis interpolation weights inside a cell. kSmoothstep keeps corner
// values and the cell-midpoint average but is C1 across cell faces.
enum class Interpolation { kLinear, kSmoothstep };

struct GridConfig {
  int input_dim = 3;
  int levels = 16;
  int base_res = 16;
  int max_res = 4096;
  int features_per_level = 2;
  int table_size_log2 = 19;
  std::array<double, 4> domain_min{-1.0, -1.0, -1.0, 0.0};
  std::array<double, 4> domain_max{1.0, 1.0, 1.0, 1.0};
  Interpolation interpolation = Interpolation::kLinear;

  static GridConfig canonical() { return GridConfig{}; }

  static GridConfig deformation() {
    GridConfig c;
    c.input_dim = 4;
    c.levels = 12;
    c.base_res = 4;
    c.max_res = 232;
    return c;
  }

  void validate() const {
    if (input_dim != 3 && input_dim != 4) throw ConfigError("grid input_dim must be 3 or 4");
    if (levels < 1) throw ConfigError("grid needs at least one level");
    if (base_res < 1 || max_res < base_res) throw ConfigError("grid requires 1 <= base_res <= max_res");
    if (features_per_level < 1) throw ConfigError("grid features_per_level must be >= 1");
    if (table_size_log2 < 1 || table_size_log2 > 30) throw ConfigError("grid table_size_log2 out of range");
    for (int a = 0; a < input_dim; ++a)
      if (!(domain_max[a] > domain_min[a])) throw ConfigError("grid domain must have positive extent");
  }

  double growth_factor() const {
    if (levels == 1) return 1.0;
    return std::exp((std::log(double(max_res)) - std::log(double(base_res))) / (levels - 1));
  }

  std::uint64_t table_size() const { return std::uint64_t{1} << table_size_log2; }
  int output_dim() const { return levels * features_per_level; }
};

inline int level_resolution(const GridConfig& config, int level) {
  if (level < 0 || level >= config.levels)
    throw UsageError("level index " + std::to_string(level) + " outside [0, " +
                     std::to_string(config.levels) + ")");
  if (level == 0) return config.base_res;
  if (level == config.levels - 1) return config.max_res;
  const long double log_ratio =
      (std::log((long double)config.max_res) - std::log((long double)config.base_res)) /
      (long double)(config.levels - 1);
  const long double n = (long double)config.base_res * std::exp(log_ratio * level);
  return static_cast<int>(std::floor(n));
}

inline std::uint64_t hash_index(std::span<const std::uint32_t> coords, std::uint64_t table_size) {
  std::uint64_t h = 0;
  for (std::size_t a = 0; a < coords.size(); ++a) h ^= std::uint64_t{coords[a]} * kHashPrimes[a];
  return h % table_size;
}

template <typename Real>
class HashGridEncoding {
 public:
  // Points may spill this far (world units) outside the domain before a query
  // is rejected; they are clamped to the boundary.
  static constexpr double kSpillTolerance = 1e-6;

  HashGridEncoding() = default;

  HashGridEncoding(const GridConfig& config, const std::string& name, const std::string& group)
      : config_(config) {
    config_.validate();
    const int L = config_.levels;
    resolution_.resize(L);
    offset_.resize(L);
    size_.resize(L);
    dense_.resize(L);
    level_mask_.assign(L, true);
    std::uint64_t total = 0;
    for (int l = 0; l < L; ++l) {
      resolution_[l] = level_resolution(config_, l);
      std::uint64_t lattice = 1;
      bool fits = true;
      for (int a = 0; a < config_.input_dim; ++a) {
        lattice *= std::uint64_t(resolution_[l]) + 1;
        if (lattice > config_.table_size()) fits = false;
      }
      dense_[l] = fits;
      size_[l] = fits ? lattice : config_.table_size();
      offset_[l] = total;
      total += size_[l];
    }
    tables_ = ParamTensor<Real>(name, group, ParamKind::kGrid,
                                {static_cast<std::size_t>(total),
                                 static_cast<std::size_t>(config_.features_per_level)});
  }

  void init_uniform(Rng& rng, double range = 1e-4) {
    for (auto& v : tables_.value) v = static_cast<Real>(uniform(rng, -range, range));
  }

  const GridConfig& config() const { return config_; }
  int output_dim() const { return config_.output_dim(); }
  int input_dim() const { return config_.input_dim; }
  int levels() const { return config_.levels; }
  int resolution(int level) const { return resolution_.at(level); }
  bool is_dense(int level) const { return dense_.at(level); }
  std::uint64_t level_offset(int level) const { return offset_.at(level); }
  std::uint64_t level_size(int level) const { return size_.at(level); }

  ParamTensor<Real>& tables() { return tables_; }
  const ParamTensor<Real>& tables() const { return tables_; }

  const std::vector<bool>& level_mask() const { return level_mask_; }
  void set_level_active(int level, bool active) { level_mask_.at(level) = active; }
  void set_active_levels(int count) {
    for (int l = 0; l < config_.levels; ++l) level_mask_[l] = l < count;
  }
  int active_levels() const {
    int n = 0;
    for (bool b : level_mask_) n += b;
    return n;
  }

  // Table row for an integer lattice point on a level.
  std::uint64_t entry_index(int level, std::span<const std::uint32_t> coords) const {
    std::uint64_t local;
    if (dense_[level]) {
      local = 0;
      std::uint64_t stride = 1;
      for (std::size_t a = 0; a < coords.size(); ++a) {
        local += coords[a] * stride;
        stride *= std::uint64_t(resolution_[level]) + 1;
      }
    } else {
      local = hash_index(coords, size_[level]);
    }
    return offset_[level] + local;
  }

  // out has output_dim() entries.
  void encode(const Real* x, Real* out) const {
    Cell cell;
    locate(x, cell);
    const int F = config_.features_per_level;
    const int dim = config_.input_dim;
    const int corners = 1 << dim;
    for (int l = 0; l < config_.levels; ++l) {
      Real* o = out + l * F;
      for (int f = 0; f < F; ++f) o[f] = Real(0);
      if (!level_mask_[l]) continue;
      LevelCell lc;
      level_cell(cell, l, lc);
      for (int c = 0; c < corners; ++c) {
        Real w = Real(1);
        std::array<std::uint32_t, 4> coords{};
        for (int a = 0; a < dim; ++a) {
          const bool hi = (c >> a) & 1;
          w *= hi ? lc.w[a] : Real(1) - lc.w[a];
          coords[a] = lc.base[a] + (hi ? 1u : 0u);
        }
        const Real* feat = &tables_.value[entry_index(l, {coords.data(), std::size_t(dim)}) * F];
        for (int f = 0; f < F; ++f) o[f] += w * feat[f];
      }
    }
  }

  // Adjoint of encode. dx (input_dim entries) and table_grad (tables().numel()
  // entries) are accumulated into; either may be null. Axes that were clamped
  // onto the domain boundary receive no input gradient.
  void encode_backward(const Real* x, const Real* upstream, Real* dx, Real* table_grad) const {
    Cell cell;
    locate(x, cell);
    const int F = config_.features_per_level;
    const int dim = config_.input_dim;
    const int corners = 1 << dim;
    std::array<Real, 4> du{};
    for (int l = 0; l < config_.levels; ++l) {
      if (!level_mask_[l]) continue;
      const Real* g = upstream + l * F;
      bool any = false;
      for (int f = 0; f < F; ++f) any |= g[f] != Real(0);
      if (!any) continue;
      LevelCell lc;
      level_cell(cell, l, lc);
      for (int c = 0; c < corners; ++c) {
        std::array<std::uint32_t, 4> coords{};
        std::array<Real, 4> axis_w{};
        Real w = Real(1);
        for (int a = 0; a < dim; ++a) {
          const bool hi = (c >> a) & 1;
          axis_w[a] = hi ? lc.w[a] : Real(1) - lc.w[a];
          w *= axis_w[a];
          coords[a] = lc.base[a] + (hi ? 1u : 0u);
        }
        const std::uint64_t row = entry_index(l, {coords.data(), std::size_t(dim)});
        if (table_grad) {
          Real* tg = table_grad + row * F;
          for (int f = 0; f < F; ++f) tg[f] += w * g[f];
        }
        if (dx) {
          const Real* feat = &tables_.value[row * F];
          Real dot = Real(0);
          for (int f = 0; f < F; ++f) dot += feat[f] * g[f];
          if (dot == Real(0)) continue;
          for (int a = 0; a < dim; ++a) {
            Real dw = ((c >> a) & 1) ? lc.dw[a] : -lc.dw[a];
            for (int b = 0; b < dim; ++b)
              if (b != a) dw *= axis_w[b];
            du[a] += dot * dw * Real(resolution_[l]);
          }
        }
      }
    }
    if (dx) {
      for (int a = 0; a < dim; ++a)
        if (!cell.clamped[a]) dx[a] += du[a] * cell.inv_extent[a];
    }
  }

  std::vector<Real> encode(std::span<const Real> x) const {
    check_dim(x.size());
    std::vector<Real> out(output_dim());
    encode(x.data(), out.data());
    return out;
  }

  // Sparse table gradient: (row, feature vector) pairs in visit order.
  struct Gradient {
    std::vector<Real> dx;
    std::vector<std::uint64_t> rows;
    std::vector<Real> table_values;
  };

  Gradient encode_grad(std::span<const Real> x, std::span<const Real> upstream) const {
    check_dim(x.size());
    if (upstream.size() != std::size_t(output_dim())) throw UsageError("encode_grad: upstream size");
    Gradient g;
    g.dx.assign(config_.input_dim, Real(0));
    std::vector<Real> dense(tables_.numel(), Real(0));
    encode_backward(x.data(), upstream.data(), g.dx.data(), dense.data());
    const int F = config_.features_per_level;
    for (std::size_t r = 0; r < dense.size() / F; ++r) {
      bool touched = false;
      for (int f = 0; f < F; ++f) touched |= dense[r * F + f] != Real(0);
      if (!touched) continue;
      g.rows.push_back(r);
      for (int f = 0; f < F; ++f) g.table_values.push_back(dense[r * F + f]);
    }
    return g;
  }

  // Per-level interpolation weights for a point; each set sums to one.
  std::vector<Real> corner_weights(std::span<const Real> x, int level) const {
    check_dim(x.size());
    Cell cell;
    locate(x.data(), cell);
    LevelCell lc;
    level_cell(cell, level, lc);
    const int dim = config_.input_dim;
    std::vector<Real> ws(std::size_t(1) << dim);
    for (std::size_t c = 0; c < ws.size(); ++c) {
      Real w = Real(1);
      for (int a = 0; a < dim; ++a) w *= ((c >> a) & 1) ? lc.w[a] : Real(1) - lc.w[a];
      ws[c] = w;
    }
    return ws;
  }

 private:
  struct Cell {
    std::array<Real, 4> u{};
    std::array<Real, 4> inv_extent{};
    std::array<bool, 4> clamped{};
  };

  struct LevelCell {
    std::array<std::uint32_t, 4> base{};
    std::array<Real, 4> w{};   // weight of the upper corner per axis
    std::array<Real, 4> dw{};  // d w / d frac
  };

  void check_dim(std::size_t n) const {
    if (n != std::size_t(config_.input_dim))
      throw UsageError("grid expects " + std::to_string(config_.input_dim) + "-D input");
  }

  void locate(const Real* x, Cell& cell) const {
    for (int a = 0; a < config_.input_dim; ++a) {
      const double lo = config_.domain_min[a];
      const double hi = config_.domain_max[a];
      double v = static_cast<double>(x[a]);
      if (!(v >= lo - kSpillTolerance && v <= hi + kSpillTolerance))
        throw DomainError("grid query outside domain on axis " + std::to_string(a));
      cell.clamped[a] = false;
      if (v < lo) {
        v = lo;
        cell.clamped[a] = true;
      } else if (v > hi) {
        v = hi;
        cell.clamped[a] = true;
      }
      const Real extent = static_cast<Real>(hi - lo);
      cell.u[a] = (static_cast<Real>(v) - static_cast<Real>(lo)) / extent;
      cell.inv_extent[a] = Real(1) / extent;
    }
  }

  void level_cell(const Cell& cell, int level, LevelCell& lc) const {
    const int n = resolution_[level];
    for (int a = 0; a < config_.input_dim; ++a) {
      const Real p = cell.u[a] * Real(n);
      Real fl = std::floor(p);
      if (fl < Real(0)) fl = Real(0);
      if (fl > Real(n - 1)) fl = Real(n - 1);
      const Real frac = p - fl;
      lc.base[a] = static_cast<std::uint32_t>(fl);
      if (config_.interpolation == Interpolation::kLinear) {
        lc.w[a] = frac;
        lc.dw[a] = Real(1);
      } else {
        lc.w[a] = frac * frac * (Real(3) - Real(2) * frac);
        lc.dw[a] = Real(6) * frac * (Real(1) - frac);
      }
    }
  }

  GridConfig config_;
  std::vector<int> resolution_;
  std::vector<std::uint64_t> offset_;
  std::vector<std::uint64_t> size_;
  std::vector<bool> dense_;
  std::vector<bool> level_mask_;
  ParamTensor<Real> tables_;
};

}  // namespace d4d
