#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gcame/box.hpp"
#include "gcame/tensor.hpp"

namespace gcame {

/// RGB image, channel-major 3 x H x W, values in [0, 1].
struct ImageInput {
  Tensor pixels;
  std::optional<std::string> source_path;

  int height() const { return pixels.height; }
  int width() const { return pixels.width; }
};

/// Throws ConfigError unless the image is 3-channel, at least 32x32 and
/// every value is finite and within [0, 1].
void validate(const ImageInput& image);

/// One predicted box in the (x1, y1, x2, y2, p_obj, p_1..p_C) layout.
struct Detection {
  Box box;
  double objectness = 0.0;
  std::vector<double> class_scores;
  int class_index = 0;
  int box_index = 0;  // row of the raw model output this came from

  double class_score() const { return class_scores.at(class_index); }
};

/// Raw dense prediction rows, each of length 4 + 1 + num_classes.
struct RawOutput {
  int num_classes = 0;
  std::vector<std::vector<double>> rows;
};

/// Rows with objectness >= threshold, sorted by objectness descending
/// (ties keep row order). Throws FormatError on malformed rows.
std::vector<Detection> parse_detections(const RawOutput& raw, double score_threshold);

/// Rebuilds the Detection for a single row, regardless of threshold.
Detection detection_from_row(const RawOutput& raw, int box_index);

/// Greedy per-class NMS on an objectness-sorted list.
std::vector<Detection> non_max_suppression(std::vector<Detection> dets, double iou_threshold);

enum class ScoreKind { ClassScore, ObjectnessWeighted };

struct ExplanationTarget {
  Detection detection;
  ScoreKind score_kind = ScoreKind::ClassScore;
  int target_class = 0;

  static ExplanationTarget of(const Detection& d, ScoreKind kind = ScoreKind::ClassScore) {
    return {d, kind, d.class_index};
  }
};

}  // namespace gcame
