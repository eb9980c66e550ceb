#pragma once

#include "d4d/fields.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>

#include <unistd.h>

namespace d4d::test {

// Small fields over [-0.6, 0.6]^3 for fast unit tests.
inline FieldConfig tiny_fields(int width = 8) {
  FieldConfig m;
  m.canonical_grid.levels = 3;
  m.canonical_grid.base_res = 2;
  m.canonical_grid.max_res = 8;
  m.canonical_grid.table_size_log2 = 10;
  m.deformation_grid.levels = 3;
  m.deformation_grid.base_res = 2;
  m.deformation_grid.max_res = 6;
  m.deformation_grid.table_size_log2 = 10;
  m.density_width = m.color_width = m.deform_width = m.background_width = width;
  m.geo_feature_dim = 4;
  m.deform_hidden_layers = 2;
  m.background_hidden_layers = 1;
  m.scene_min = {-0.6, -0.6, -0.6};
  m.scene_max = {0.6, 0.6, 0.6};
  m.sync_domains();
  return m;
}

template <typename Real>
void fill_uniform(ParamTensor<Real>& p, Rng& rng, double lo, double hi) {
  for (auto& v : p.value) v = static_cast<Real>(uniform(rng, lo, hi));
}

template <typename Real>
void fill(ParamTensor<Real>& p, Real v) {
  std::fill(p.value.begin(), p.value.end(), v);
}

// Fresh per-test directory under the system temp dir.
inline std::string temp_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("d4d_unit_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace d4d::test
