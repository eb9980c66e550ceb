#include "d4d/guidance.hpp"
#include "d4d/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

namespace d4d {
namespace {

GuidanceRequest image_request(int n, int h, int w, std::uint64_t seed) {
  GuidanceRequest r;
  r.kind = n == 1 ? GuidanceKind::kImage2d : n == 4 ? GuidanceKind::kMultiview3d : GuidanceKind::kVideo;
  r.n = n;
  r.height = h;
  r.width = w;
  r.cameras.assign(n, Camera{});
  r.t = 0.5;
  r.seed = seed;
  Rng rng(seed);
  r.images.resize(r.numel());
  for (auto& v : r.images) v = uniform01(rng);
  return r;
}

TEST(NoiseSchedule, StartIsExactlyPointNineNine) {
  const NoiseSchedule s;
  Rng rng(1);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_noise_level(s, 0, rng), 0.99);
}

TEST(NoiseSchedule, EndAndMidpointRanges) {
  const NoiseSchedule s;
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double end = sample_noise_level(s, s.total_iters, rng);
    EXPECT_GE(end, 0.2);
    EXPECT_LE(end, 0.5);
    const double mid = sample_noise_level(s, s.total_iters / 2, rng);
    EXPECT_GE(mid, 0.595 - 1e-12);
    EXPECT_LE(mid, 0.745 + 1e-12);
  }
  const auto r = s.range_at(s.total_iters / 2);
  EXPECT_NEAR(r.lo, 0.595, 1e-12);
  EXPECT_NEAR(r.hi, 0.745, 1e-12);
}

TEST(NoiseSchedule, BoundsNeverIncrease) {
  const NoiseSchedule s;
  Range prev = s.range_at(0);
  for (int it = 1; it <= s.total_iters; it += 37) {
    const Range r = s.range_at(it);
    EXPECT_LE(r.lo, prev.lo);
    EXPECT_LE(r.hi, prev.hi);
    prev = r;
  }
}

TEST(NoiseSchedule, OutOfRangeIterationIsUsageError) {
  const NoiseSchedule s;
  Rng rng(3);
  EXPECT_THROW(sample_noise_level(s, -1, rng), UsageError);
  EXPECT_THROW(sample_noise_level(s, s.total_iters + 1, rng), UsageError);
}

TEST(NoiseSchedule, FixedStageOneRange) {
  const auto s = NoiseSchedule::fixed(0.02, 0.98, 100);
  Rng rng(4);
  for (int it : {0, 50, 100}) {
    const double t = sample_noise_level(s, it, rng);
    EXPECT_GE(t, 0.02);
    EXPECT_LE(t, 0.98);
  }
}

GuidanceResponse rgb_response(const std::vector<double>& target) {
  GuidanceResponse r;
  r.provider_id = "test";
  r.denoised_rgb = target;
  return r;
}

TEST(SdsLoss, PerfectReconstructionIsZero) {
  const std::vector<double> x{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  EXPECT_EQ(sds_reconstruction_loss(x, rgb_response(x), SdsWeights{1.0, 0.1}), 0.0);
}

TEST(SdsLoss, LatentPlusDecodedUnitResiduals) {
  const std::vector<double> x{0.0, 0.0, 0.0}, y{1.0, -1.0, 1.0};
  GuidanceResponse r = rgb_response(y);
  r.has_latent = true;
  r.latent_shape = {1, 1, 1, 4};
  r.rendered_latent = {0.0, 0.0, 0.0, 0.0};
  r.denoised_latent = {1.0, 1.0, -1.0, -1.0};
  EXPECT_NEAR(sds_reconstruction_loss(x, r, SdsWeights{1.0, 0.1}), 1.1, 1e-15);
}

TEST(SdsLoss, DoublingResidualsQuadruplesTheLoss) {
  const std::vector<double> x{0.2, 0.4, 0.6, 0.1, 0.3, 0.5};
  std::vector<double> t1(x.size()), t2(x.size());
  Rng rng(5);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = uniform(rng, -0.3, 0.3);
    t1[i] = x[i] + r;
    t2[i] = x[i] + 2 * r;
  }
  const SdsWeights w{1.0, 0.1};
  EXPECT_NEAR(sds_reconstruction_loss(x, rgb_response(t2), w),
              4 * sds_reconstruction_loss(x, rgb_response(t1), w), 1e-14);
}

TEST(SdsLoss, MissingLatentsFromALatentProviderIsProviderError) {
  const std::vector<double> x{0.1, 0.2, 0.3};
  EXPECT_THROW(sds_reconstruction_loss(x, rgb_response(x), SdsWeights{1.0, 0.1}, true),
               ProviderError);
  EXPECT_NO_THROW(sds_reconstruction_loss(x, rgb_response(x), SdsWeights{0.0, 0.1}, true));
}

TEST(SdsLoss, ShapeAndWeightErrors) {
  EXPECT_THROW(sds_reconstruction_loss({0.1, 0.2}, rgb_response({0.1}), SdsWeights{}), UsageError);
  EXPECT_THROW(sds_reconstruction_loss({0.1}, rgb_response({0.1}), SdsWeights{-1.0, 0.0}), UsageError);
}

TEST(SdsLoss, TapeGradientIsTheResidual) {
  auto img = make_node<double>({1, 2, 3});
  img->value = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  const std::vector<double> target{0.0, 0.0, 0.0, 1.0, 1.0, 1.0};
  Tape<double> tape;
  const SdsWeights w{1.0, 0.1};
  auto loss = sds_reconstruction_loss<double>(tape, {img}, rgb_response(target), w);
  EXPECT_NEAR(loss->value[0], 1.1 * mean_squared(img->value, target), 1e-15);
  tape.backward(loss);
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_NEAR(img->grad[i], 2 * 1.1 * (img->value[i] - target[i]) / 6, 1e-15);
}

TEST(SdsLoss, ProviderOutputsAreNotOnTheTape) {
  // Changing the response after the loss is recorded must not move the gradient.
  auto img = make_node<double>({1, 1, 3});
  img->value = {0.5, 0.5, 0.5};
  auto resp = rgb_response({0.0, 0.0, 0.0});
  Tape<double> tape;
  auto loss = sds_reconstruction_loss<double>(tape, {img}, resp, SdsWeights{1.0, 0.0});
  resp.denoised_rgb = {1.0, 1.0, 1.0};
  tape.backward(loss);
  for (double g : img->grad) EXPECT_NEAR(g, 2.0 * 0.5 / 3, 1e-15);
}

TEST(OracleProvider, EqualReferenceGivesZeroLoss) {
  const auto req = image_request(4, 3, 2, 6);
  OracleProvider p{req.images};
  const auto resp = p.denoise(req);
  EXPECT_EQ(sds_reconstruction_loss(req.images, resp, SdsWeights{1.0, 0.1}), 0.0);
}

TEST(OracleProvider, WrongTargetShapeIsProviderError) {
  const auto req = image_request(1, 3, 2, 7);
  OracleProvider p{std::vector<double>(5, 0.0)};
  EXPECT_THROW(p.denoise(req), ProviderError);
}

TEST(OracleProvider, SinglePixelConvergesToReference) {
  ParamTensor<double> pixel("pixel", "test", ParamKind::kMlp, {3});
  const std::vector<double> reference{0.3, 0.7, 0.45};
  OracleProvider oracle{reference};
  AdamConfig ac;
  ac.lr_mlp = 0.01;
  ac.weight_decay = 0.0;
  ac.clip_norm = 0.0;
  AdamW<double> opt({&pixel}, ac);
  int converged_at = -1;
  for (int step = 0; step < 500; ++step) {
    auto img = make_node<double>({1, 1, 3});
    img->value.assign(pixel.value.begin(), pixel.value.end());
    Tape<double> tape;
    tape.record([img, &pixel] {
      for (int c = 0; c < 3; ++c) pixel.grad[c] += img->grad[c];
    });
    GuidanceRequest req;
    req.n = req.height = req.width = 1;
    req.images = img->value;
    req.cameras = {Camera{}};
    auto loss = sds_reconstruction_loss<double>(tape, {img}, oracle.denoise(req), SdsWeights{1.0, 0.0});
    pixel.zero_grad();
    tape.backward(loss);
    opt.step();
    double err = 0;
    for (int c = 0; c < 3; ++c) err = std::max(err, std::abs(pixel.value[c] - reference[c]));
    if (err < 1e-3 && converged_at < 0) converged_at = step + 1;
  }
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(pixel.value[c], reference[c], 1e-3);
  EXPECT_GT(converged_at, 0);
}

TEST(AnalyticProvider, FullBlendEqualsOracleOfMean) {
  const int h = 2, w = 3;
  std::vector<double> mean(std::size_t(h) * w * 3);
  Rng rng(8);
  for (auto& v : mean) v = uniform01(rng);
  AnalyticProvider analytic(mean, h, w, 1.0);
  OracleProvider oracle{mean};
  const auto req = image_request(1, h, w, 9);
  EXPECT_EQ(analytic.denoise(req).denoised_rgb, oracle.denoise(req).denoised_rgb);
}

TEST(AnalyticProvider, MeanImageIsAFixedPoint) {
  const std::array<double, 3> gray{0.5, 0.5, 0.5};
  AnalyticProvider p(gray, 0.3);
  auto req = image_request(4, 2, 2, 10);
  std::fill(req.images.begin(), req.images.end(), 0.5);
  EXPECT_EQ(sds_reconstruction_loss(req.images, p.denoise(req), SdsWeights{1.0, 0.1}), 0.0);
}

TEST(AnalyticProvider, PartialBlendInterpolates) {
  AnalyticProvider p(std::array<double, 3>{1.0, 0.0, 0.5}, 0.25);
  auto req = image_request(1, 1, 1, 11);
  req.images = {0.2, 0.4, 0.6};
  const auto out = p.denoise(req).denoised_rgb;
  EXPECT_NEAR(out[0], 0.75 * 0.2 + 0.25 * 1.0, 1e-15);
  EXPECT_NEAR(out[1], 0.75 * 0.4, 1e-15);
  EXPECT_NEAR(out[2], 0.75 * 0.6 + 0.25 * 0.5, 1e-15);
}

TEST(AnalyticProvider, SmallStepDescentIsMonotone) {
  // Plain gradient descent on the pixels of a random image.
  AnalyticProvider p(std::array<double, 3>{0.2, 0.6, 0.9}, 0.5);
  auto req = image_request(1, 3, 3, 14);
  double previous = std::numeric_limits<double>::infinity(), first = 0;
  for (int step = 0; step < 200; ++step) {
    auto img = make_node<double>({3, 3, 3});
    img->value = req.images;
    Tape<double> tape;
    auto loss = sds_reconstruction_loss<double>(tape, {img}, p.denoise(req), SdsWeights{1.0, 0.0});
    tape.backward(loss);
    const double l = loss->value[0];
    EXPECT_LE(l, previous) << "step " << step;
    if (step == 0) first = l;
    previous = l;
    for (std::size_t i = 0; i < req.images.size(); ++i) req.images[i] -= 0.5 * img->grad[i];
  }
  EXPECT_LT(previous, 1e-3 * first);
}

TEST(AnalyticProvider, InvalidBlendIsUsageError) {
  EXPECT_THROW(AnalyticProvider(std::array<double, 3>{}, 0.0), UsageError);
  EXPECT_THROW(AnalyticProvider(std::array<double, 3>{}, 1.5), UsageError);
}

TEST(Providers, DeterministicForEqualRequests) {
  AnalyticProvider analytic(std::array<double, 3>{0.2, 0.3, 0.4}, 0.6);
  auto echo = make_echo_provider();
  const auto req = image_request(6, 2, 2, 12);
  EXPECT_EQ(analytic.denoise(req).denoised_rgb, analytic.denoise(req).denoised_rgb);
  EXPECT_EQ(echo->denoise(req).denoised_rgb, req.images);
}

TEST(GuidanceRequest, KindCountsAreEnforced) {
  auto req = image_request(4, 2, 2, 13);
  req.kind = GuidanceKind::kImage2d;
  EXPECT_THROW(req.validate(), UsageError);
  req.kind = GuidanceKind::kVideo;
  EXPECT_NO_THROW(req.validate());
  req.t = 1.0;
  EXPECT_THROW(req.validate(), UsageError);
  EXPECT_THROW(parse_kind("audio"), UsageError);
  EXPECT_EQ(parse_kind(kind_name(GuidanceKind::kMultiview3d)), GuidanceKind::kMultiview3d);
}

}  // namespace
}  // namespace d4d
