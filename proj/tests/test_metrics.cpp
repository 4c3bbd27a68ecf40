#include <gtest/gtest.h>

#include <json.hpp>
#include <random>

#include "gcame/gcame.hpp"
#include "gcame/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace gcame;

namespace {

Detection det(Box b, double obj, std::vector<double> scores, int cls) {
  Detection d;
  d.box = b;
  d.objectness = obj;
  d.class_scores = std::move(scores);
  d.class_index = cls;
  return d;
}

EvalRecord record(const std::string& method, bool hit, double ebpg, bool tiny) {
  EvalRecord r;
  r.method_tag = method;
  r.pg_hit = hit;
  r.ebpg = ebpg;
  r.tiny = tiny;
  r.runtime_s = 0.5;
  return r;
}

}  // namespace

TEST(PairwiseIou, MatchesRasterOracle) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const Box a = oracle::random_int_box(rng, 40, 50), b = oracle::random_int_box(rng, 40, 50);
    ASSERT_NEAR(pairwise_iou(a, b), oracle::raster_iou(a, b, 40, 50), 1e-9) << i;
  }
}

TEST(PairwiseIou, Symmetric) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 200; ++i) {
    const Box a = oracle::random_int_box(rng, 30, 30), b = oracle::random_int_box(rng, 30, 30);
    EXPECT_EQ(pairwise_iou(a, b), pairwise_iou(b, a));
  }
}

TEST(EnergyBasedPg, MatchesPixelLoopOracle) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> f(-5.0, 70.0);
  for (int i = 0; i < 1000; ++i) {
    const auto map = oracle::random_map(rng, 48, 64);
    Box b = i % 2 ? oracle::random_int_box(rng, 48, 64) : Box{f(rng), f(rng), 0, 0};
    if (i % 2 == 0) {
      b.x2 = b.x1 + 1 + std::abs(f(rng));
      b.y2 = b.y1 + 1 + std::abs(f(rng));
    }
    const auto r = energy_based_pg(map, b);
    ASSERT_NEAR(r.value, oracle::loop_ebpg(map, b), 1e-9) << i;
    ASSERT_FALSE(r.zero_energy);
  }
}

TEST(EnergyBasedPg, ZeroMapIsFlagged) {
  const auto map = test::make_map(8, 8, std::vector<float>(64, 0.0f));
  const auto r = energy_based_pg(map, {0, 0, 4, 4});
  EXPECT_EQ(r.value, 0.0);
  EXPECT_TRUE(r.zero_energy);
}

TEST(PointingGame, HitMissAndZeroMap) {
  std::vector<float> v(100, 0.1f);
  v[3 * 10 + 7] = 0.9f;
  const auto map = test::make_map(10, 10, v);
  EXPECT_TRUE(pointing_game(map, {6, 2, 9, 5}).hit);
  EXPECT_FALSE(pointing_game(map, {0, 0, 5, 5}).hit);
  const auto zero = pointing_game(test::make_map(10, 10, std::vector<float>(100, 0.0f)), {0, 0, 10, 10});
  EXPECT_FALSE(zero.hit);
  EXPECT_TRUE(zero.zero_map);
}

TEST(PointingGame, AnyTiedMaximumInsideCounts) {
  std::vector<float> v(100, 0.0f);
  v[0] = 1.0f;
  v[99] = 1.0f;
  EXPECT_TRUE(pointing_game(test::make_map(10, 10, v), {8, 8, 10, 10}).hit);
}

TEST(PointingGame, ThreeHitsOneMissIsThreeQuarters) {
  EXPECT_EQ(pointing_game_score({true, true, false, true}), 0.75);
}

TEST(ConfidenceDrop, ArithmeticCases) {
  EXPECT_EQ(confidence_drop_from_scores(0.9, 0.45), 50.0);
  EXPECT_EQ(confidence_drop_from_scores(0.5, 0.8), 0.0);
  EXPECT_EQ(confidence_drop_from_scores(0.0, 0.0), 0.0);
  EXPECT_EQ(confidence_drop_from_scores(0.8, 0.0), 100.0);
}

TEST(TargetConfidence, MaxOfIouTimesClassScore) {
  const std::vector<Detection> dets = {det({0, 0, 10, 10}, 0.9, {0.7, 0.3}, 0),
                                       det({0, 0, 20, 10}, 0.9, {0.95, 0.05}, 0)};
  EXPECT_DOUBLE_EQ(target_confidence({0, 0, 10, 10}, 0, dets), 0.7);
  EXPECT_DOUBLE_EQ(target_confidence({0, 0, 10, 10}, 1, dets), 0.3);
  EXPECT_EQ(target_confidence({0, 0, 10, 10}, 0, {}), 0.0);
}

TEST(TopFractionMask, ExactBudgetAndRowMajorTies) {
  std::vector<float> v(100, 0.5f);
  v[42] = 1.0f;
  bool degenerate = false;
  const auto m = top_fraction_mask(test::make_map(10, 10, v), 0.2, &degenerate);
  EXPECT_EQ(std::count(m.begin(), m.end(), 1), 20);
  EXPECT_EQ(m[42], 1);
  for (int i = 0; i < 19; ++i) EXPECT_EQ(m[i], 1) << i;
  EXPECT_EQ(m[19], 0);
  EXPECT_TRUE(degenerate);

  std::mt19937_64 rng(1);
  const auto r = oracle::random_map(rng, 20, 30);
  const auto m2 = top_fraction_mask(r, 0.2, &degenerate);
  EXPECT_EQ(std::count(m2.begin(), m2.end(), 1), 120);
  EXPECT_FALSE(degenerate);
}

TEST(TopFractionMask, InvariantToPositiveScaling) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    auto a = oracle::random_map(rng, 16, 16);
    auto b = a;
    for (float& x : b.values) x *= 0.25f;
    EXPECT_EQ(top_fraction_mask(a, 0.2), top_fraction_mask(b, 0.2));
    EXPECT_EQ(salient_region_mask(a, 0.2), salient_region_mask(b, 0.2));
  }
}

TEST(SalientRegionMask, ConstantMapsSelectAllOrNothing) {
  const auto ones = salient_region_mask(test::make_map(8, 8, std::vector<float>(64, 1.0f)), 0.2);
  EXPECT_EQ(std::count(ones.begin(), ones.end(), 1), 64);
  const auto zeros = salient_region_mask(test::make_map(8, 8, std::vector<float>(64, 0.0f)), 0.2);
  EXPECT_EQ(std::count(zeros.begin(), zeros.end(), 1), 0);
}

TEST(PerturbImage, ReplacesOnlyMaskedPixels) {
  const auto img = test::random_image(3, 32, 32);
  std::vector<std::uint8_t> mask(32 * 32, 0);
  mask[5] = 1;
  const auto out = perturb_image(img, mask, {0.1, 0.2, 0.3});
  EXPECT_EQ(out.pixels.at(0, 0, 5), 0.1);
  EXPECT_EQ(out.pixels.at(2, 0, 5), 0.3);
  EXPECT_EQ(out.pixels.at(1, 0, 6), img.pixels.at(1, 0, 6));
  const auto mean = channel_mean(img);
  double s = 0;
  for (double v : img.pixels.plane(1)) s += v;
  EXPECT_NEAR(mean[1], s / (32 * 32), 1e-12);
}

TEST(ConfidenceDrop, OnToyDetectorIsBoundedAndExplained) {
  const auto toy = test::trained_toy();
  for (int seed = 0; seed < 5; ++seed) {
    const auto scene = generate_scene(SceneConfig{}, 900 + seed);
    const auto dets = toy->postprocess(toy->forward(scene.image).raw, 0.25);
    ASSERT_FALSE(dets.empty());
    const auto map = explain(*toy, scene.image, ExplanationTarget::of(dets[0]));
    const auto r = confidence_drop(*toy, scene.image, map, dets[0]);
    EXPECT_GE(r.percent, 0.0);
    EXPECT_LE(r.percent, 100.0);
    EXPECT_GT(r.original, 0.0);
    EXPECT_EQ(r.percent, confidence_drop_from_scores(r.original, r.perturbed));
  }
}

TEST(InformationDrop, FullSaliencyNearZeroAndBelowEmptySaliency) {
  for (int seed = 0; seed < 3; ++seed) {
    const auto scene = generate_scene(SceneConfig{}, 40 + seed);
    const auto ones = test::make_map(128, 128, std::vector<float>(128 * 128, 1.0f));
    const auto zeros = test::make_map(128, 128, std::vector<float>(128 * 128, 0.0f));
    const auto full = information_drop(scene.image, ones);
    const auto empty = information_drop(scene.image, zeros);
    ASSERT_TRUE(full.available);
    ASSERT_TRUE(empty.available);
    EXPECT_LE(std::abs(full.percent), 2.0);
    EXPECT_LT(full.percent, empty.percent);
  }
}

TEST(InformationDrop, SizeArithmetic) {
  EXPECT_EQ(information_drop_from_sizes(1000, 750), 25.0);
  EXPECT_EQ(information_drop_from_sizes(1000, 1000), 0.0);
}

TEST(BokehImage, KeepsSalientPixelsSharp) {
  const auto scene = generate_scene(SceneConfig{}, 4);
  std::vector<float> v(128 * 128, 0.0f);
  for (int y = 10; y < 30; ++y)
    for (int x = 10; x < 30; ++x) v[y * 128 + x] = 1.0f;
  const auto out = bokeh_image(scene.image, test::make_map(128, 128, v), 0.2);
  EXPECT_EQ(out.pixels.at(0, 15, 15), scene.image.pixels.at(0, 15, 15));
  double changed = 0;
  for (std::size_t i = 0; i < out.pixels.data.size(); ++i)
    changed += out.pixels.data[i] != scene.image.pixels.data[i];
  EXPECT_GT(changed, 0);
}

TEST(IsTiny, AreaThreshold) {
  // 0.005 * 128 * 128 = 81.92
  EXPECT_TRUE(is_tiny(Box{0, 0, 9, 9}, 128, 128));
  EXPECT_FALSE(is_tiny(Box{0, 0, 10, 10}, 128, 128));
}

TEST(AggregateReport, PerObjectMeansAndTinySubset) {
  std::vector<EvalRecord> recs = {record("gcame", true, 0.8, false), record("gcame", false, 0.4, true),
                                  record("gcame", true, 0.6, true), record("drise", true, 0.2, false)};
  const auto rep = aggregate_report(recs);
  ASSERT_EQ(rep.methods.size(), 2u);
  const auto& g = rep.methods[0].method == "gcame" ? rep.methods[0] : rep.methods[1];
  EXPECT_EQ(g.overall.count, 3);
  EXPECT_NEAR(*g.overall.pg, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(*g.overall.ebpg, 0.6, 1e-12);
  EXPECT_EQ(g.tiny.count, 2);
  EXPECT_NEAR(*g.tiny.pg, 0.5, 1e-12);
  EXPECT_NEAR(*g.tiny.ebpg, 0.5, 1e-12);
  EXPECT_FALSE(g.overall.confidence_drop.has_value());
  EXPECT_THROW(aggregate_report({}), ConfigError);
}

TEST(AggregateReport, JsonAndCsvCarryEveryRecord) {
  std::vector<EvalRecord> recs = {record("gcame", true, 0.8, false), record("gcame", false, 0.4, true)};
  const auto rep = aggregate_report(recs);
  const auto j = nlohmann::json::parse(report_json(rep));
  EXPECT_EQ(j["schema_version"], "v1");
  EXPECT_EQ(j["averaging"], "per_object");
  EXPECT_EQ(j["records"].size(), 2u);
  const std::string csv = report_csv(rep);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
