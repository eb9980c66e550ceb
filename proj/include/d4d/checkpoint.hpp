#pragma once

// Binary checkpoint, all integers little-endian:
//
//   "D4DCKPT1"
//   u32 version | u32 stage (0 static, 1 dynamic) | u64 iteration | u64 config hash
//   u32 active deformation levels | u64 optimizer step
//   u32 len + rng state text (mt19937_64 stream form)
//   u32 tensor count, then per tensor:
//     u32 len + name | u8 dtype (0 f32le, 1 f64le) | u32 ndim + u64 dims
//     u8 frozen | data | u8 has_moments [| m | v]
//   u64 FNV-1a of every preceding byte
//
// Loading parses and validates the whole file before touching the model.

#include "d4d/core.hpp"
#include "d4d/fields.hpp"
#include "d4d/grad.hpp"
#include "d4d/image_io.hpp"
#include "d4d/optim.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

namespace d4d {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'D', '4', 'D', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Stage : std::uint32_t { kStatic = 0, kDynamic = 1 };

inline std::string stage_name(Stage s) { return s == Stage::kStatic ? "static" : "dynamic"; }

struct CheckpointMeta {
  Stage stage = Stage::kStatic;
  std::uint64_t iteration = 0;
  std::uint64_t config_hash = 0;
  std::uint32_t deformation_levels = 0;
  std::uint64_t optimizer_step = 0;
  std::string rng_state;
};

struct TensorRecord {
  std::string name;
  std::uint8_t dtype = 0;
  std::vector<std::uint64_t> shape;
  bool frozen = false;
  std::string data;
  bool has_moments = false;
  std::string m;
  std::string v;
};

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<TensorRecord> tensors;
};

template <typename Real>
constexpr std::uint8_t dtype_code() {
  static_assert(sizeof(Real) == 4 || sizeof(Real) == 8);
  return sizeof(Real) == 4 ? 0 : 1;
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void restore_rng(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw FormatError("checkpoint rng state is corrupt");
}

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) { s_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void str(const std::string& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    raw(v.data(), v.size());
  }
  std::string& bytes() { return s_; }

 private:
  std::string s_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view s) : s_(s) {}
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) throw LengthError("checkpoint truncated");
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto v = s_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  template <typename T>
  T pod() {
    T v;
    std::memcpy(&v, raw(sizeof(T)).data(), sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    return std::string(raw(n));
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return s_.size() - pos_; }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename Real>
std::string encode_checkpoint(const ParamList<Real>& params, const AdamW<Real>* opt,
                              const CheckpointMeta& meta) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 8);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(meta.stage));
  w.u64(meta.iteration);
  w.u64(meta.config_hash);
  w.u32(meta.deformation_levels);
  w.u64(opt ? opt->steps() : meta.optimizer_step);
  w.str(meta.rng_state);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    w.str(p->name);
    w.u8(dtype_code<Real>());
    w.u32(static_cast<std::uint32_t>(p->shape.size()));
    for (auto d : p->shape) w.u64(d);
    w.u8(p->frozen ? 1 : 0);
    w.raw(p->value.data(), p->numel() * sizeof(Real));
    const bool moments = opt && i < opt->moments().size() && opt->params()[i] == p;
    w.u8(moments ? 1 : 0);
    if (moments) {
      w.raw(opt->moments()[i].m.data(), p->numel() * sizeof(Real));
      w.raw(opt->moments()[i].v.data(), p->numel() * sizeof(Real));
    }
  }
  const std::uint64_t h = fnv1a(w.bytes().data(), w.bytes().size());
  w.u64(h);
  return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < 8) throw LengthError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw FormatError("not a d4d checkpoint (bad magic)");
  r.raw(8);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto stage = r.pod<std::uint32_t>();
  if (stage > 1) throw FormatError("checkpoint has an unknown stage tag");
  ck.meta.stage = static_cast<Stage>(stage);
  ck.meta.iteration = r.pod<std::uint64_t>();
  ck.meta.config_hash = r.pod<std::uint64_t>();
  ck.meta.deformation_levels = r.pod<std::uint32_t>();
  ck.meta.optimizer_step = r.pod<std::uint64_t>();
  ck.meta.rng_state = r.str();
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = r.str();
    t.dtype = r.pod<std::uint8_t>();
    if (t.dtype > 1) throw FormatError("tensor '" + t.name + "' has an unknown dtype");
    const auto ndim = r.pod<std::uint32_t>();
    if (ndim > 8) throw FormatError("tensor '" + t.name + "' has too many dimensions");
    std::uint64_t numel = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      t.shape.push_back(r.pod<std::uint64_t>());
      numel *= t.shape.back();
    }
    const std::uint64_t elem = t.dtype == 0 ? 4 : 8;
    if (numel > (std::uint64_t{1} << 40)) throw FormatError("tensor '" + t.name + "' is implausibly large");
    t.frozen = r.pod<std::uint8_t>() != 0;
    t.data = std::string(r.raw(numel * elem));
    t.has_moments = r.pod<std::uint8_t>() != 0;
    if (t.has_moments) {
      t.m = std::string(r.raw(numel * elem));
      t.v = std::string(r.raw(numel * elem));
    }
    ck.tensors.push_back(std::move(t));
  }
  const std::size_t body = r.pos();
  const auto stored = r.pod<std::uint64_t>();
  if (r.remaining() != 0) throw LengthError("checkpoint has trailing bytes");
  if (stored != fnv1a(bytes.data(), body)) throw FormatError("checkpoint checksum mismatch");
  return ck;
}

// Copies a decoded checkpoint into params (and optimizer moments when opt is
// given). Everything is validated first; on error nothing is modified.
template <typename Real>
void apply_checkpoint(const Checkpoint& ck, const ParamList<Real>& params, AdamW<Real>* opt) {
  if (ck.tensors.size() != params.size())
    throw FormatError("checkpoint holds " + std::to_string(ck.tensors.size()) +
                      " tensors, model has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = ck.tensors[i];
    const auto* p = params[i];
    if (t.name != p->name) throw FormatError("checkpoint tensor '" + t.name + "' where '" + p->name + "' expected");
    if (t.dtype != dtype_code<Real>())
      throw FormatError("tensor '" + t.name + "' precision differs from the model");
    if (t.shape.size() != p->shape.size() ||
        !std::equal(t.shape.begin(), t.shape.end(), p->shape.begin()))
      throw FormatError("tensor '" + t.name + "' shape differs from the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = ck.tensors[i];
    auto* p = params[i];
    std::memcpy(p->value.data(), t.data.data(), t.data.size());
    p->frozen = t.frozen;
    p->zero_grad();
    if (opt && t.has_moments) {
      std::memcpy(opt->moments()[i].m.data(), t.m.data(), t.m.size());
      std::memcpy(opt->moments()[i].v.data(), t.v.data(), t.v.size());
    }
  }
  if (opt) opt->set_steps(ck.meta.optimizer_step);
}

template <typename Real>
void save_checkpoint(const std::string& path, SceneModel<Real>& model, const AdamW<Real>* opt,
                     const CheckpointMeta& meta) {
  write_file(path, encode_checkpoint(model.params(), opt, meta));
}

// expected_hash = 0 skips the config check; force accepts a mismatch.
template <typename Real>
CheckpointMeta load_checkpoint(const std::string& path, SceneModel<Real>& model, AdamW<Real>* opt,
                               std::uint64_t expected_hash = 0, bool force = false) {
  const Checkpoint ck = decode_checkpoint(read_file(path));
  if (expected_hash && ck.meta.config_hash != expected_hash && !force)
    throw ConfigError("checkpoint '" + path + "' was written under a different config (use --force)");
  apply_checkpoint(ck, model.params(), opt);
  return ck.meta;
}

}  // namespace d4d
