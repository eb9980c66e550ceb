#include "d4d/gridenc.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace d4d {
namespace {

GridConfig unit_grid(int dim, int levels, int base, int max, int log2) {
  GridConfig g;
  g.input_dim = dim;
  g.levels = levels;
  g.base_res = base;
  g.max_res = max;
  g.table_size_log2 = log2;
  for (int a = 0; a < 4; ++a) {
    g.domain_min[a] = 0.0;
    g.domain_max[a] = 1.0;
  }
  return g;
}

TEST(LevelResolution, CanonicalEndpoints) {
  const auto g = GridConfig::canonical();
  EXPECT_EQ(level_resolution(g, 0), 16);
  EXPECT_EQ(level_resolution(g, 15), 4096);
}

TEST(LevelResolution, CanonicalSecondLevel) {
  // floor(16 * 256^(1/15)) = floor(23.39...)
  EXPECT_EQ(level_resolution(GridConfig::canonical(), 1), 23);
}

TEST(LevelResolution, DeformationSecondLevel) {
  // floor(4 * 58^(1/11)) = floor(5.78...)
  EXPECT_EQ(level_resolution(GridConfig::deformation(), 1), 5);
}

TEST(LevelResolution, OutOfRangeIsUsageError) {
  const auto g = GridConfig::canonical();
  EXPECT_THROW(level_resolution(g, 16), UsageError);
  EXPECT_THROW(level_resolution(g, -1), UsageError);
}

TEST(LevelResolution, NonDecreasing) {
  const auto g = GridConfig::canonical();
  for (int l = 1; l < g.levels; ++l) EXPECT_GE(level_resolution(g, l), level_resolution(g, l - 1));
}

TEST(HashIndex, OriginMapsToZero) {
  const std::array<std::uint32_t, 3> c{0, 0, 0};
  EXPECT_EQ(hash_index(c, 1u << 19), 0u);
  EXPECT_EQ(hash_index(c, 7), 0u);
}

TEST(HashIndex, FirstAxisPrimeIsOne) {
  const std::array<std::uint32_t, 3> c{1, 0, 0};
  EXPECT_EQ(hash_index(c, 1u << 19), 1u);
}

TEST(HashIndex, MatchesScalarRecomputation) {
  const std::array<std::uint32_t, 3> c{3, 7, 11};
  // Written out by hand: 64-bit wrapping products, xor, then mod 2^19.
  const std::uint64_t a = 3ull * 1ull;
  const std::uint64_t b = 7ull * 2654435761ull;
  const std::uint64_t d = 11ull * 805459861ull;
  const std::uint64_t expected = (a ^ b ^ d) & ((1ull << 19) - 1);
  EXPECT_EQ(hash_index(c, 1u << 19), expected);
}

TEST(Encode, CornerReturnsStoredFeature) {
  HashGridEncoding<double> enc(unit_grid(3, 2, 4, 8, 12), "g", "g");
  Rng rng(1);
  enc.init_uniform(rng, 1.0);
  ASSERT_TRUE(enc.is_dense(0));
  ASSERT_TRUE(enc.is_dense(1));
  const std::vector<double> x{0.25, 0.5, 0.75};
  const auto out = enc.encode(std::span<const double>(x));
  const int F = enc.config().features_per_level;
  const std::array<std::array<std::uint32_t, 3>, 2> corners{{{1, 2, 3}, {2, 4, 6}}};
  for (int l = 0; l < 2; ++l) {
    const auto row = enc.entry_index(l, corners[l]);
    for (int f = 0; f < F; ++f) EXPECT_EQ(out[l * F + f], enc.tables().value[row * F + f]);
  }
}

TEST(Encode, ZeroTablesGiveZeroVector) {
  HashGridEncoding<double> enc(GridConfig::deformation(), "g", "g");
  const std::vector<double> x{0.1, -0.3, 0.7, 0.4};
  const auto out = enc.encode(std::span<const double>(x));
  ASSERT_EQ(out.size(), std::size_t(enc.output_dim()));
  for (double v : out) EXPECT_EQ(v, 0.0);
}

TEST(Encode, EdgeMidpointAveragesCorners) {
  HashGridEncoding<double> enc(unit_grid(3, 1, 4, 4, 12), "g", "g");
  Rng rng(2);
  enc.init_uniform(rng, 1.0);
  const std::vector<double> x{1.5 / 4, 0.5, 0.75};
  const auto out = enc.encode(std::span<const double>(x));
  const std::array<std::uint32_t, 3> lo{1, 2, 3}, hi{2, 2, 3};
  const auto& t = enc.tables().value;
  for (int f = 0; f < 2; ++f) {
    const double avg = 0.5 * (t[enc.entry_index(0, lo) * 2 + f] + t[enc.entry_index(0, hi) * 2 + f]);
    EXPECT_NEAR(out[f], avg, 1e-15);
  }
}

TEST(Encode, SmoothstepKeepsCornersAndMidpoints) {
  auto cfg = unit_grid(3, 1, 4, 4, 12);
  cfg.interpolation = Interpolation::kSmoothstep;
  HashGridEncoding<double> enc(cfg, "g", "g");
  Rng rng(3);
  enc.init_uniform(rng, 1.0);
  const std::vector<double> corner{0.25, 0.5, 0.75}, mid{1.5 / 4, 0.5, 0.75};
  const auto& t = enc.tables().value;
  const std::array<std::uint32_t, 3> lo{1, 2, 3}, hi{2, 2, 3};
  const auto c = enc.encode(std::span<const double>(corner));
  const auto m = enc.encode(std::span<const double>(mid));
  for (int f = 0; f < 2; ++f) {
    EXPECT_EQ(c[f], t[enc.entry_index(0, lo) * 2 + f]);
    EXPECT_NEAR(m[f], 0.5 * (t[enc.entry_index(0, lo) * 2 + f] + t[enc.entry_index(0, hi) * 2 + f]),
                1e-15);
  }
}

TEST(Encode, CornerWeightsSumToOne) {
  HashGridEncoding<double> enc(GridConfig::deformation(), "g", "g");
  const std::vector<double> x{0.13, -0.77, 0.51, 0.29};
  for (int l = 0; l < enc.levels(); ++l) {
    const auto w = enc.corner_weights(std::span<const double>(x), l);
    ASSERT_EQ(w.size(), 16u);
    double s = 0;
    for (double v : w) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-14);
  }
}

TEST(Encode, FarOutsideIsDomainError) {
  HashGridEncoding<double> enc(GridConfig::canonical(), "g", "g");
  const std::vector<double> x{5.0, 0.0, 0.0};
  EXPECT_THROW(enc.encode(std::span<const double>(x)), DomainError);
  const std::vector<double> wrong_dim{0.0, 0.0};
  EXPECT_THROW(enc.encode(std::span<const double>(wrong_dim)), UsageError);
}

TEST(Encode, SpillWithinToleranceIsClamped) {
  HashGridEncoding<double> enc(unit_grid(3, 2, 4, 8, 12), "g", "g");
  Rng rng(4);
  enc.init_uniform(rng, 1.0);
  const std::vector<double> edge{1.0, 0.3, 0.0}, spill{1.0 + 5e-7, 0.3, -5e-7};
  EXPECT_EQ(enc.encode(std::span<const double>(edge)), enc.encode(std::span<const double>(spill)));
  const std::vector<double> beyond{1.0 + 1e-5, 0.3, 0.0};
  EXPECT_THROW(enc.encode(std::span<const double>(beyond)), DomainError);
}

TEST(Encode, HashedLevelsUseTheWholeTable) {
  HashGridEncoding<double> enc(unit_grid(3, 3, 4, 64, 8), "g", "g");
  EXPECT_TRUE(enc.is_dense(0));
  EXPECT_FALSE(enc.is_dense(2));
  EXPECT_EQ(enc.level_size(2), 256u);
  EXPECT_EQ(enc.level_offset(1), enc.level_size(0));
}

TEST(Encode, ContinuityUnderTinyPerturbation) {
  const auto cfg = unit_grid(3, 4, 4, 32, 10);
  HashGridEncoding<double> enc(cfg, "g", "g");
  Rng rng(5);
  enc.init_uniform(rng, 1.0);
  double max_abs = 0;
  for (double v : enc.tables().value) max_abs = std::max(max_abs, std::abs(v));
  // Per level, each feature is Lipschitz with constant 2 * max|feature| * N_l per axis.
  double lipschitz = 0;
  for (int l = 0; l < cfg.levels; ++l) lipschitz += 2.0 * max_abs * enc.resolution(l) * 3;
  const double eps = 1e-7;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(3), y(3);
    for (int a = 0; a < 3; ++a) {
      x[a] = uniform(rng, 0.0, 1.0 - eps);
      y[a] = x[a] + eps;
    }
    const auto fx = enc.encode(std::span<const double>(x));
    const auto fy = enc.encode(std::span<const double>(y));
    double delta = 0;
    for (std::size_t i = 0; i < fx.size(); ++i) delta = std::max(delta, std::abs(fx[i] - fy[i]));
    EXPECT_LE(delta, lipschitz * eps * (1 + 1e-6));
  }
}

TEST(EncodeGrad, ZeroUpstreamGivesZeroGradients) {
  HashGridEncoding<double> enc(unit_grid(4, 3, 2, 8, 10), "g", "g");
  Rng rng(6);
  enc.init_uniform(rng, 1.0);
  const std::vector<double> x{0.3, 0.6, 0.2, 0.9};
  const std::vector<double> up(enc.output_dim(), 0.0);
  const auto g = enc.encode_grad(std::span<const double>(x), std::span<const double>(up));
  for (double v : g.dx) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(g.rows.empty());
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_input_gradient(const GridConfig& cfg, std::uint64_t seed) {
  HashGridEncoding<double> enc(cfg, "g", "g");
  Rng rng(seed);
  enc.init_uniform(rng, 1.0);
  const int dim = cfg.input_dim;
  const double h = 1e-4;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(dim), up(enc.output_dim());
    for (auto& v : x) v = uniform(rng, 0.05, 0.95);
    for (auto& v : up) v = uniform(rng, -1.0, 1.0);
    const auto g = enc.encode_grad(std::span<const double>(x), std::span<const double>(up));
    for (int a = 0; a < dim; ++a) {
      // Five-point stencil: the smoothstep interpolant has a large third derivative.
      auto f = [&](double k) {
        auto xs = x;
        xs[a] += k * h;
        return dot(enc.encode(std::span<const double>(xs)), up);
      };
      const double numeric = (-f(2) + 8 * f(1) - 8 * f(-1) + f(-2)) / (12 * h);
      auto xp = x, xm = x;
      xp[a] += 2 * h;
      xm[a] -= 2 * h;
      const double denom = std::max({std::abs(numeric), std::abs(g.dx[a]), 1e-7});
      // A step that crosses a cell face changes the interpolant's slope.
      bool crosses = false;
      for (int l = 0; l < cfg.levels; ++l) {
        const double n = enc.resolution(l);
        crosses |= std::floor(xp[a] * n) != std::floor(xm[a] * n);
      }
      if (crosses) continue;
      EXPECT_LT(std::abs(numeric - g.dx[a]) / denom, 1e-5) << "axis " << a << " trial " << trial;
    }
  }
}

TEST(EncodeGrad, InputGradientMatchesFiniteDifferences3d) {
  check_input_gradient(unit_grid(3, 4, 2, 16, 8), 7);
}

TEST(EncodeGrad, InputGradientMatchesFiniteDifferences4d) {
  check_input_gradient(unit_grid(4, 3, 2, 9, 8), 8);
}

TEST(EncodeGrad, InputGradientMatchesFiniteDifferencesSmoothstep) {
  auto cfg = unit_grid(3, 3, 2, 8, 8);
  cfg.interpolation = Interpolation::kSmoothstep;
  check_input_gradient(cfg, 9);
}

TEST(EncodeGrad, TableGradientIsTheInterpolationWeights) {
  HashGridEncoding<double> enc(unit_grid(3, 1, 4, 4, 12), "g", "g");
  const std::vector<double> x{0.3, 0.55, 0.8};
  std::vector<double> up(enc.output_dim(), 0.0);
  up[0] = 1.0;
  const auto g = enc.encode_grad(std::span<const double>(x), std::span<const double>(up));
  const auto w = enc.corner_weights(std::span<const double>(x), 0);
  double total = 0;
  for (std::size_t k = 0; k < g.rows.size(); ++k) total += g.table_values[2 * k];
  EXPECT_EQ(g.rows.size(), 8u);
  EXPECT_NEAR(total, 1.0, 1e-14);
  double wsum = 0;
  for (double v : w) wsum += v;
  EXPECT_NEAR(total, wsum, 1e-14);
}

TEST(EncodeGrad, ConstantLevelContributesNoInputGradient) {
  const auto cfg = unit_grid(3, 2, 4, 8, 12);
  HashGridEncoding<double> enc(cfg, "g", "g");
  const int F = cfg.features_per_level;
  auto& t = enc.tables().value;
  for (std::uint64_t r = enc.level_offset(1); r < enc.level_offset(1) + enc.level_size(1); ++r)
    for (int f = 0; f < F; ++f) t[r * F + f] = 0.7 + 0.1 * f;
  Rng rng(10);
  std::vector<double> up(enc.output_dim());
  for (auto& v : up) v = uniform(rng, -1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x(3);
    for (auto& v : x) v = uniform(rng, 0.0, 1.0);
    const auto g = enc.encode_grad(std::span<const double>(x), std::span<const double>(up));
    for (double v : g.dx) EXPECT_NEAR(v, 0.0, 1e-12);
  }
}

TEST(EncodeGrad, MaskedLevelsAreSkipped) {
  HashGridEncoding<double> enc(unit_grid(4, 3, 2, 8, 10), "g", "g");
  Rng rng(11);
  enc.init_uniform(rng, 1.0);
  enc.set_active_levels(1);
  EXPECT_EQ(enc.active_levels(), 1);
  const std::vector<double> x{0.3, 0.6, 0.2, 0.9};
  const auto out = enc.encode(std::span<const double>(x));
  for (int i = 2; i < enc.output_dim(); ++i) EXPECT_EQ(out[i], 0.0);
  const std::vector<double> up(enc.output_dim(), 1.0);
  const auto g = enc.encode_grad(std::span<const double>(x), std::span<const double>(up));
  for (auto r : g.rows) EXPECT_LT(r, enc.level_offset(1));
}

}  // namespace
}  // namespace d4d
