#include <gtest/gtest.h>

#include <random>

#include "gcame/detection.hpp"
#include "gcame/error.hpp"

using namespace gcame;

namespace {

RawOutput one_row(double obj) {
  RawOutput raw;
  raw.num_classes = 3;
  raw.rows.push_back({10, 20, 50, 80, obj, 0.1, 0.8, 0.1});
  return raw;
}

}  // namespace

TEST(ParseDetections, ArgmaxClassAboveThreshold) {
  const auto dets = parse_detections(one_row(0.9), 0.5);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].class_index, 1);
  EXPECT_EQ(dets[0].box, (Box{10, 20, 50, 80}));
  EXPECT_EQ(dets[0].box_index, 0);
}

TEST(ParseDetections, BelowThresholdIsDropped) {
  EXPECT_TRUE(parse_detections(one_row(0.9), 0.95).empty());
}

TEST(ParseDetections, SortedByObjectnessDescending) {
  RawOutput raw;
  raw.num_classes = 1;
  raw.rows.push_back({0, 0, 10, 10, 0.6, 0.5});
  raw.rows.push_back({5, 5, 20, 20, 0.9, 0.5});
  const auto dets = parse_detections(raw, 0.1);
  ASSERT_EQ(dets.size(), 2u);
  EXPECT_DOUBLE_EQ(dets[0].objectness, 0.9);
  EXPECT_DOUBLE_EQ(dets[1].objectness, 0.6);
  EXPECT_EQ(dets[0].box_index, 1);
  EXPECT_EQ(dets[1].box_index, 0);
}

TEST(ParseDetections, EqualObjectnessKeepsRowOrder) {
  RawOutput raw;
  raw.num_classes = 1;
  for (int i = 0; i < 4; ++i) raw.rows.push_back({0, 0, 10.0 + i, 10, 0.7, 0.5});
  const auto dets = parse_detections(raw, 0.0);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(dets[i].box_index, i);
}

TEST(ParseDetections, MalformedRowNamesLayout) {
  RawOutput raw;
  raw.num_classes = 3;
  raw.rows.push_back({1, 2, 3, 4, 0.5, 0.1});
  try {
    parse_detections(raw, 0.0);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("4+1+C"), std::string::npos);
  }
}

TEST(ParseDetections, PureAndBoxIndexRoundTrips) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  RawOutput raw;
  raw.num_classes = 2;
  for (int i = 0; i < 50; ++i) {
    const double x = 100 * u(rng), y = 100 * u(rng);
    raw.rows.push_back({x, y, x + 1 + 20 * u(rng), y + 1 + 20 * u(rng), u(rng), u(rng), u(rng)});
  }
  const auto a = parse_detections(raw, 0.3);
  const auto b = parse_detections(raw, 0.3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].box, b[i].box);
    EXPECT_EQ(a[i].box_index, b[i].box_index);
    const auto& row = raw.rows[a[i].box_index];
    EXPECT_EQ(a[i].box, (Box{row[0], row[1], row[2], row[3]}));
    EXPECT_EQ(detection_from_row(raw, a[i].box_index).box, a[i].box);
  }
}

TEST(NonMaxSuppression, SuppressesOverlapsPerClass) {
  RawOutput raw;
  raw.num_classes = 2;
  raw.rows.push_back({0, 0, 10, 10, 0.9, 0.9, 0.1});
  raw.rows.push_back({1, 0, 11, 10, 0.8, 0.9, 0.1});   // same class, IoU 0.82
  raw.rows.push_back({1, 0, 11, 10, 0.7, 0.1, 0.9});   // other class
  raw.rows.push_back({50, 50, 60, 60, 0.6, 0.9, 0.1}); // disjoint
  const auto kept = non_max_suppression(parse_detections(raw, 0.0), 0.45);
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_EQ(kept[0].box_index, 0);
  EXPECT_EQ(kept[1].box_index, 2);
  EXPECT_EQ(kept[2].box_index, 3);
}

TEST(ExplanationTarget, DefaultsToClassScore) {
  const auto d = parse_detections(one_row(0.9), 0.0).front();
  const auto t = ExplanationTarget::of(d);
  EXPECT_EQ(t.score_kind, ScoreKind::ClassScore);
  EXPECT_EQ(t.target_class, 1);
}
