#include "d4d/checkpoint.hpp"
#include "d4d/image_io.hpp"

#include "helpers.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <string>

namespace d4d {
namespace {

using test::tiny_fields;

template <typename Real>
std::string snapshot(SceneModel<Real>& model, AdamW<Real>* opt, std::uint64_t hash = 77) {
  CheckpointMeta meta;
  meta.stage = Stage::kDynamic;
  meta.iteration = 123;
  meta.config_hash = hash;
  meta.deformation_levels = 5;
  Rng rng(9);
  rng.discard(17);
  meta.rng_state = rng_state(rng);
  return encode_checkpoint(model.params(), opt, meta);
}

// A few optimizer steps so the moments are non-trivial.
template <typename Real>
void train_a_little(SceneModel<Real>& model, AdamW<Real>& opt) {
  Rng rng(5);
  for (int s = 0; s < 3; ++s) {
    for (auto* p : model.params())
      for (auto& g : p->grad) g = static_cast<Real>(uniform(rng, -1, 1));
    opt.step();
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  SceneModel<double> a(tiny_fields(), 1);
  AdamW<double> oa(a.params(), AdamConfig{});
  train_a_little(a, oa);
  a.freeze(ParamGroup::kCanonical);
  const auto bytes = snapshot(a, &oa);

  SceneModel<double> b(tiny_fields(), 2);
  AdamW<double> ob(b.params(), AdamConfig{});
  const auto ck = decode_checkpoint(bytes);
  apply_checkpoint(ck, b.params(), &ob);
  const auto pa = a.params(), pb = b.params();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(std::memcmp(pa[i]->value.data(), pb[i]->value.data(), pa[i]->numel() * 8), 0);
    EXPECT_EQ(pa[i]->frozen, pb[i]->frozen);
    EXPECT_EQ(oa.moments()[i].m, ob.moments()[i].m);
    EXPECT_EQ(oa.moments()[i].v, ob.moments()[i].v);
  }
  EXPECT_EQ(ob.steps(), 3u);
  EXPECT_EQ(ck.meta.stage, Stage::kDynamic);
  EXPECT_EQ(ck.meta.iteration, 123u);
  EXPECT_EQ(ck.meta.deformation_levels, 5u);
  // Re-encoding the loaded state reproduces the file byte for byte.
  EXPECT_EQ(snapshot(b, &ob), bytes);
}

TEST(Checkpoint, RngStateSurvives) {
  SceneModel<float> model(tiny_fields(), 1);
  const auto ck = decode_checkpoint(snapshot<float>(model, nullptr));
  Rng restored, expected(9);
  expected.discard(17);
  restore_rng(restored, ck.meta.rng_state);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(restored(), expected());
  EXPECT_THROW(restore_rng(restored, "not a state"), FormatError);
}

TEST(Checkpoint, TruncationIsLengthErrorWithoutMutation) {
  SceneModel<double> a(tiny_fields(), 1);
  const auto bytes = snapshot<double>(a, nullptr);
  const auto dir = test::temp_dir("ckpt_trunc");
  for (std::size_t cut : {std::size_t(4), std::size_t(40), bytes.size() / 2, bytes.size() - 1}) {
    const std::string path = dir + "/cut.ckpt";
    write_file(path, bytes.substr(0, cut));
    SceneModel<double> b(tiny_fields(), 2);
    const auto before = checksum(b.params());
    EXPECT_THROW(load_checkpoint(path, b, static_cast<AdamW<double>*>(nullptr)), LengthError)
        << "cut at " << cut;
    EXPECT_EQ(checksum(b.params()), before);
  }
}

TEST(Checkpoint, BadMagicIsFormatError) {
  SceneModel<double> a(tiny_fields(), 1);
  auto bytes = snapshot<double>(a, nullptr);
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, UnknownVersionIsFormatError) {
  SceneModel<double> a(tiny_fields(), 1);
  auto bytes = snapshot<double>(a, nullptr);
  bytes[8] = 9;
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, CorruptPayloadFailsTheChecksum) {
  SceneModel<double> a(tiny_fields(), 1);
  auto bytes = snapshot<double>(a, nullptr);
  bytes[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(decode_checkpoint(bytes), IoError);
}

TEST(Checkpoint, ConfigHashMismatchNeedsForce) {
  SceneModel<double> a(tiny_fields(), 1);
  const auto dir = test::temp_dir("ckpt_hash");
  const std::string path = dir + "/a.ckpt";
  write_file(path, snapshot<double>(a, nullptr, 1111));
  SceneModel<double> b(tiny_fields(), 2);
  EXPECT_THROW(load_checkpoint(path, b, static_cast<AdamW<double>*>(nullptr), 2222), ConfigError);
  EXPECT_NE(checksum(b.params()), checksum(a.params()));
  EXPECT_NO_THROW(load_checkpoint(path, b, static_cast<AdamW<double>*>(nullptr), 2222, true));
  EXPECT_EQ(checksum(b.params()), checksum(a.params()));
}

TEST(Checkpoint, ShapeOrPrecisionMismatchIsFormatError) {
  SceneModel<double> a(tiny_fields(), 1);
  const auto ck = decode_checkpoint(snapshot<double>(a, nullptr));
  SceneModel<double> wide(tiny_fields(16), 1);
  EXPECT_THROW(apply_checkpoint(ck, wide.params(), static_cast<AdamW<double>*>(nullptr)), FormatError);
  SceneModel<float> single(tiny_fields(), 1);
  EXPECT_THROW(apply_checkpoint(ck, single.params(), static_cast<AdamW<float>*>(nullptr)), FormatError);
}

TEST(Checkpoint, FileRoundTrip) {
  SceneModel<float> a(tiny_fields(), 3);
  const auto dir = test::temp_dir("ckpt_file");
  CheckpointMeta meta;
  meta.iteration = 7;
  save_checkpoint(dir + "/x.ckpt", a, static_cast<const AdamW<float>*>(nullptr), meta);
  SceneModel<float> b(tiny_fields(), 4);
  const auto m = load_checkpoint(dir + "/x.ckpt", b, static_cast<AdamW<float>*>(nullptr));
  EXPECT_EQ(m.iteration, 7u);
  EXPECT_EQ(checksum(a.params()), checksum(b.params()));
}

TEST(DisplacementFile, RoundTripIsBitExact) {
  DisplacementVideo v;
  v.width = 3;
  v.height = 2;
  v.frames = 4;
  Rng rng(8);
  for (std::size_t i = 0; i < 3 * 2 * 4 * 3; ++i) v.data.push_back(float(uniform(rng, -1, 1)));
  const auto bytes = encode_displacement(v);
  const auto w = decode_displacement(bytes);
  EXPECT_EQ(w.width, 3u);
  EXPECT_EQ(w.height, 2u);
  EXPECT_EQ(w.frames, 4u);
  EXPECT_EQ(std::memcmp(v.data.data(), w.data.data(), v.data.size() * 4), 0);
  EXPECT_THROW(decode_displacement(bytes.substr(0, bytes.size() - 2)), LengthError);
  auto bad = bytes;
  bad[0] = 'Z';
  EXPECT_THROW(decode_displacement(bad), FormatError);
}

TEST(ImageFile, PngRoundTripQuantisesToBytes) {
  Image img;
  img.width = 4;
  img.height = 3;
  img.channels = 3;
  for (int i = 0; i < 36; ++i) img.data.push_back(i / 35.0);
  const auto dir = test::temp_dir("png");
  write_png(dir + "/a.png", img);
  const auto back = read_png(dir + "/a.png");
  ASSERT_EQ(back.data.size(), img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 0.5 / 255 + 1e-12);
  EXPECT_THROW(read_png(dir + "/missing.png"), IoError);
}

}  // namespace
}  // namespace d4d
