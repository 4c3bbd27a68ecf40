#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>
#include <tuple>

#include "gcame/gcame.hpp"
#include "gcame/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace gcame;

namespace {

GradientCapture constant_capture(int h, int w, double value, int channels = 1) {
  GradientCapture cap;
  cap.layer_id = "synthetic";
  cap.activation = Tensor(channels, h, w);
  cap.gradient = Tensor(channels, h, w);
  std::fill(cap.gradient.data.begin(), cap.gradient.data.end(), value);
  return cap;
}

GaussianMaskSpec random_spec(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim(3, 40);
  std::uniform_real_distribution<double> sig(0.1, 6.0);
  GaussianMaskSpec s;
  s.grid_h = dim(rng);
  s.grid_w = dim(rng);
  s.center_row = std::uniform_int_distribution<int>(0, s.grid_h - 1)(rng);
  s.center_col = std::uniform_int_distribution<int>(0, s.grid_w - 1)(rng);
  s.sigma = sig(rng);
  return s;
}

}  // namespace

// h = w = 80, H = W = 640, mean G = e^2:
// R = 2, S = 8, floor((80 - 1) / 2) = 39, sigma = 2 ln 8 * 3 / 39.
TEST(ComputeSigma, MatchesHandEvaluatedValue) {
  const auto cap = constant_capture(80, 80, std::exp(2.0));
  const auto spec = compute_sigma(cap, 0, 640, 640, CenterLocation{40, 40});
  EXPECT_NEAR(spec.sigma, 0.31991408333535936, 1e-6);
  EXPECT_NEAR(spec.scale_r, 2.0, 1e-12);
  EXPECT_NEAR(spec.scale_s, 8.0, 1e-12);
  EXPECT_EQ(spec.normalizer, 6400);
  EXPECT_FALSE(spec.degenerate);
}

TEST(ComputeSigma, LogOfOneClampsToSigmaMinExactly) {
  // R = ln 1 = 0.
  auto spec = compute_sigma(constant_capture(80, 80, 1.0), 0, 640, 640, CenterLocation{});
  EXPECT_EQ(spec.sigma, kSigmaMin);
  // S = 1 when the feature map has the image's resolution.
  spec = compute_sigma(constant_capture(80, 80, std::exp(2.0)), 0, 80, 80, CenterLocation{});
  EXPECT_EQ(spec.sigma, kSigmaMin);
}

TEST(ComputeSigma, LargeMagnitudeClampsToUpperBound) {
  const auto spec = compute_sigma(constant_capture(80, 80, 1e300), 0, 640, 640, CenterLocation{});
  EXPECT_DOUBLE_EQ(spec.sigma, 13.0);
  EXPECT_DOUBLE_EQ(sigma_max(80, 80), 13.0);
}

TEST(ComputeSigma, NegativeLogUsesMagnitude) {
  // mean G = e^-2 gives R = -2; the sigma is the same as for e^2.
  const auto spec = compute_sigma(constant_capture(80, 80, std::exp(-2.0)), 0, 640, 640, {});
  EXPECT_NEAR(spec.sigma, 0.31991408333535936, 1e-6);
  EXPECT_NEAR(spec.scale_r, -2.0, 1e-12);
}

TEST(ComputeSigma, ZeroMeanAndTinyGridAreDegenerate) {
  auto spec = compute_sigma(constant_capture(80, 80, 0.0), 0, 640, 640, {});
  EXPECT_TRUE(spec.degenerate);
  EXPECT_EQ(spec.sigma, kSigmaMin);
  spec = compute_sigma(constant_capture(2, 2, 5.0), 0, 640, 640, {});
  EXPECT_TRUE(spec.degenerate);
  EXPECT_EQ(spec.sigma, kSigmaMin);
}

TEST(ComputeSigma, LogBaseIsConfigurable) {
  GcameOptions opt;
  opt.log_base = 10.0;
  const auto spec = compute_sigma(constant_capture(80, 80, std::exp(20.0)), 0, 640, 640, {}, opt);
  EXPECT_NEAR(spec.sigma, std::abs(std::log10(std::exp(20.0)) * std::log10(8.0) * 3.0 / 39.0), 1e-12);
}

TEST(ComputeSigma, ChannelOutOfRangeIsLookupError) {
  EXPECT_THROW(compute_sigma(constant_capture(8, 8, 1.0), 3, 64, 64, {}), LookupError);
}

TEST(GaussianMask, PropertiesHoldOnRandomSpecs) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto spec = random_spec(rng);
    const Grid m = generate_gaussian_mask(spec);
    const int cy = spec.center_row, cx = spec.center_col;
    ASSERT_EQ(m.at(cy, cx), 1.0) << trial;
    for (double v : m.data) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    // Exact mirror symmetry about the centre along both axes.
    for (int d = 1; cy - d >= 0 && cy + d < spec.grid_h; ++d)
      for (int x = 0; x < spec.grid_w; ++x) ASSERT_EQ(m.at(cy - d, x), m.at(cy + d, x));
    for (int d = 1; cx - d >= 0 && cx + d < spec.grid_w; ++d)
      for (int y = 0; y < spec.grid_h; ++y) ASSERT_EQ(m.at(y, cx - d), m.at(y, cx + d));
    // Closed form at every pixel.
    for (int y = 0; y < spec.grid_h; ++y)
      for (int x = 0; x < spec.grid_w; ++x) {
        const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        ASSERT_NEAR(m.at(y, x), std::exp(-r2 / (2 * spec.sigma * spec.sigma)), 1e-9);
      }
    // Wider sigma never lowers an off-centre value.
    auto wider = spec;
    wider.sigma *= 1.5;
    const Grid w = generate_gaussian_mask(wider);
    for (std::size_t i = 0; i < m.size(); ++i) ASSERT_GE(w.data[i], m.data[i]);
  }
}

TEST(GaussianMask, OneSigmaOffCentreIsExpMinusHalf) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto spec = random_spec(rng);
    spec.grid_h = spec.grid_w = 41;
    spec.center_row = spec.center_col = 20;
    const int d = 1 + trial % 10;
    spec.sigma = d;
    const Grid m = generate_gaussian_mask(spec);
    const double expected = std::exp(-0.5);
    EXPECT_NEAR(m.at(20, 20 + d) / m.at(20, 20), expected, 1e-9);
    EXPECT_NEAR(m.at(20 - d, 20), expected, 1e-9);
  }
}

TEST(GaussianMask, RejectsBadSpecs) {
  GaussianMaskSpec s;
  s.grid_h = s.grid_w = 4;
  s.center_row = 4;
  EXPECT_THROW(generate_gaussian_mask(s), ConfigError);
  s.center_row = 0;
  s.sigma = 0;
  EXPECT_THROW(generate_gaussian_mask(s), ConfigError);
}

TEST(LocateCenter, OneStageSinglePixel) {
  auto cap = constant_capture(6, 6, 0.0, 2);
  cap.gradient.at(1, 3, 4) = -0.2;
  const auto c = locate_center(cap, ModelKind::OneStage);
  EXPECT_EQ(c.row, 3);
  EXPECT_EQ(c.col, 4);
  EXPECT_FALSE(c.fallback);
}

TEST(LocateCenter, OneStageSeveralPixelsFallsBackToArgmax) {
  auto cap = constant_capture(6, 6, 0.0, 2);
  cap.gradient.at(0, 1, 1) = 0.1;
  cap.gradient.at(1, 2, 5) = -0.7;
  const auto c = locate_center(cap, ModelKind::OneStage);
  EXPECT_TRUE(c.fallback);
  EXPECT_EQ(c.row, 2);
  EXPECT_EQ(c.col, 5);
}

TEST(LocateCenter, TwoStageUsesChannelSumAndBreaksTiesRowMajor) {
  auto cap = constant_capture(5, 5, 0.0, 2);
  cap.gradient.at(0, 4, 0) = 1.0;
  cap.gradient.at(1, 4, 0) = -1.0;  // cancels
  cap.gradient.at(0, 2, 3) = 0.5;
  cap.gradient.at(0, 1, 4) = -0.5;  // same magnitude, earlier in row-major order
  const auto c = locate_center(cap, ModelKind::TwoStage);
  EXPECT_EQ(c.row, 1);
  EXPECT_EQ(c.col, 4);
  EXPECT_FALSE(c.fallback);
}

TEST(LocateCenter, AllZeroGradientIsNoSignal) {
  EXPECT_THROW(locate_center(constant_capture(4, 4, 0.0), ModelKind::Toy), NoSignalError);
}

TEST(WeightFeatureMaps, AlphaIsChannelMeanAndSplitsBySign) {
  auto cap = constant_capture(2, 2, 0.0, 3);
  for (double& v : cap.gradient.plane(0)) v = 0.5;
  cap.gradient.at(1, 0, 0) = -4.0;
  const auto w = weight_feature_maps(cap);
  EXPECT_DOUBLE_EQ(w.alpha[0], 0.5);
  EXPECT_DOUBLE_EQ(w.alpha[1], -1.0);
  EXPECT_DOUBLE_EQ(w.alpha[2], 0.0);
  EXPECT_EQ(w.positive, std::vector<int>{0});
  EXPECT_EQ(w.negative, std::vector<int>{1});
}

TEST(LayerSaliency, NegativeChannelsSubtractBeforeRelu) {
  LayerExplanation le;
  le.capture = constant_capture(1, 2, 0.0, 2);
  le.capture.activation.at(0, 0, 0) = 1.0;
  le.capture.activation.at(0, 0, 1) = 1.0;
  le.capture.activation.at(1, 0, 0) = 3.0;
  le.weighting.alpha = {1.0, -0.5};
  le.weighting.positive = {0};
  le.weighting.negative = {1};
  const Grid g = layer_saliency(le, true);
  EXPECT_DOUBLE_EQ(g.at(0, 0), 0.0);  // 1 - 1.5 clipped
  EXPECT_DOUBLE_EQ(g.at(0, 1), 1.0);
}

TEST(CombineSaliency, AllSkippableIsEmptyExplanation) {
  std::vector<LayerExplanation> layers(2);
  for (auto& l : layers) l.capture.skippable = true;
  EXPECT_THROW(combine_saliency(layers, 32, 32), EmptyExplanationError);
}

TEST(Explain, UnitMasksReduceToSignedGradcam) {
  const auto start = std::chrono::steady_clock::now();
  const auto toy = test::trained_toy();
  for (int i = 0; i < 5; ++i) {
    const auto scene = generate_scene(SceneConfig{}, 500 + i);
    const auto dets = toy->postprocess(toy->forward(scene.image).raw, kDefaultObjectnessThreshold);
    ASSERT_FALSE(dets.empty());
    GcameOptions opt;
    opt.force_unit_masks = true;
    const auto map = explain(*toy, scene.image, ExplanationTarget::of(dets[0]), opt);
    EXPECT_EQ(map.method_tag, "gradcam");
    EXPECT_LE(oracle::max_abs_diff(map.values, oracle::signed_gradcam(*toy, scene.image, dets[0])), 1e-6);
  }
  for (const char* adapter : {"yolox", "fasterrcnn"}) {
    DetectorSpec spec;
    spec.adapter = adapter;
    const auto m = make_detector(spec);
    const auto img = test::random_image(31);
    const auto det = detection_from_row(m->forward(img).raw, 0);
    GcameOptions opt;
    opt.force_unit_masks = true;
    const auto map = explain(*m, img, ExplanationTarget::of(det), opt);
    EXPECT_LE(oracle::max_abs_diff(map.values, oracle::signed_gradcam(*m, img, det)), 1e-6) << adapter;
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 10.0);
}

TEST(Explain, SaliencyStaysInUnitRange) {
  const auto toy = test::trained_toy();
  for (int seed = 0; seed < 100; ++seed) {
    const auto img = test::random_image(seed);
    const auto det = detection_from_row(toy->forward(img).raw, seed % 256);
    const auto map = explain(*toy, img, ExplanationTarget::of(det));
    ASSERT_EQ(map.values.size(), 128u * 128u);
    EXPECT_NO_THROW(validate(map)) << seed;
    EXPECT_EQ(map.method_tag, "gcame");
  }
}

TEST(Explain, OtherArchitecturesProduceValidMaps) {
  for (const char* adapter : {"yolox", "fasterrcnn"}) {
    DetectorSpec spec;
    spec.adapter = adapter;
    const auto m = make_detector(spec);
    for (int seed = 0; seed < 5; ++seed) {
      const auto img = test::random_image(seed);
      const auto det = detection_from_row(m->forward(img).raw, seed);
      const auto map = explain(*m, img, ExplanationTarget::of(det));
      EXPECT_NO_THROW(validate(map)) << adapter << " " << seed;
      EXPECT_EQ(map.layer_ids.size(), map.sigmas.size());
    }
  }
}

TEST(Explain, OneStageSkipsBranchesWithoutGradient) {
  DetectorSpec spec;
  spec.adapter = "yolox";
  const auto m = make_detector(spec);
  const auto img = test::random_image(3);
  const auto map = explain(*m, img, ExplanationTarget::of(detection_from_row(m->forward(img).raw, 0)));
  EXPECT_TRUE(map.has_flag("skipped_layer:head.cls_convs.1"));
  EXPECT_TRUE(map.has_flag("skipped_layer:head.cls_convs.2"));
  EXPECT_FALSE(map.has_flag("skipped_layer:head.cls_convs.0"));
}

TEST(Explain, IsDeterministic) {
  const auto toy = test::trained_toy();
  const auto scene = generate_scene(SceneConfig{}, 77);
  const auto dets = toy->postprocess(toy->forward(scene.image).raw, kDefaultObjectnessThreshold);
  ASSERT_FALSE(dets.empty());
  const auto a = explain(*toy, scene.image, ExplanationTarget::of(dets[0]));
  const auto b = explain(*toy, scene.image, ExplanationTarget::of(dets[0]));
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.sigmas, b.sigmas);
}

// Shifting the object by two feature cells shifts the explanation with it.
TEST(Explain, FollowsTranslatedObject) {
  const auto toy = test::trained_toy();
  auto centroid = [&](int x, int y) {
    const auto scene = test::square_scene(x, y, 16);
    const auto dets = toy->postprocess(toy->forward(scene.image).raw, kDefaultObjectnessThreshold);
    EXPECT_FALSE(dets.empty());
    const auto map = explain(*toy, scene.image, ExplanationTarget::of(dets.at(0)));
    double sx = 0, sy = 0, s = 0;
    for (int r = 0; r < map.height; ++r)
      for (int c = 0; c < map.width; ++c) {
        sx += c * map.at(r, c);
        sy += r * map.at(r, c);
        s += map.at(r, c);
      }
    return std::pair{sx / s, sy / s};
  };
  const auto [x0, y0] = centroid(32, 40);
  const auto [x1, y1] = centroid(48, 40);
  const auto [x2, y2] = centroid(32, 56);
  EXPECT_NEAR(x1 - x0, 16.0, 4.0);
  EXPECT_NEAR(y1 - y0, 0.0, 4.0);
  EXPECT_NEAR(y2 - y0, 16.0, 4.0);
  EXPECT_NEAR(x2 - x0, 0.0, 4.0);
}

TEST(Explain, ConstantDetectorHasNoTargetLayers) {
  const test::ConstantDetector m(RawOutput{1, {{0, 0, 40, 40, 0.9, 0.9}}});
  const auto img = test::random_image(1);
  EXPECT_THROW(explain(m, img, ExplanationTarget::of(detection_from_row(m.forward(img).raw, 0))),
               StageError);
}

TEST(Explain, SingleObjectPeakLiesInPredictedBox) {
  const auto toy = test::trained_toy();
  for (const auto& [x, y, size] : {std::tuple{40, 56, 18}, {70, 30, 22}, {20, 20, 16}, {90, 90, 20},
                                   {56, 56, 12}}) {
    const auto scene = test::square_scene(x, y, size);
    const auto dets = toy->postprocess(toy->forward(scene.image).raw, kDefaultObjectnessThreshold);
    ASSERT_EQ(dets.size(), 1u) << x << "," << y;
    const auto map = explain(*toy, scene.image, ExplanationTarget::of(dets[0]));
    EXPECT_TRUE(pointing_game(map, dets[0].box).hit) << x << "," << y << " size " << size;
  }
}
