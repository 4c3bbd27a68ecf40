#include "gcame/detection.hpp"

#include <algorithm>
#include <cmath>

#include "gcame/error.hpp"

namespace gcame {

void validate(const ImageInput& image) {
  const Tensor& p = image.pixels;
  if (p.channels != 3) throw ConfigError("image must have 3 channels");
  if (p.height < 32 || p.width < 32)
    throw ConfigError("image must be at least 32x32, got " + std::to_string(p.height) + "x" +
                      std::to_string(p.width));
  for (double v : p.data)
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw ConfigError("image pixel values must be finite and within [0,1]");
}

Detection detection_from_row(const RawOutput& raw, int box_index) {
  const std::size_t expected = 5 + static_cast<std::size_t>(raw.num_classes);
  if (box_index < 0 || box_index >= static_cast<int>(raw.rows.size()))
    throw LookupError("box index " + std::to_string(box_index) + " out of range");
  const auto& row = raw.rows[box_index];
  if (row.size() != expected)
    throw FormatError("raw output row " + std::to_string(box_index) + " has length " +
                      std::to_string(row.size()) + "; expected 4+1+C = " +
                      std::to_string(expected) + " (x1,y1,x2,y2,p_obj,p_1..p_C)");
  Detection d;
  d.box = {row[0], row[1], row[2], row[3]};
  d.objectness = row[4];
  d.class_scores.assign(row.begin() + 5, row.end());
  d.class_index = static_cast<int>(
      std::max_element(d.class_scores.begin(), d.class_scores.end()) - d.class_scores.begin());
  d.box_index = box_index;
  return d;
}

std::vector<Detection> parse_detections(const RawOutput& raw, double score_threshold) {
  if (raw.num_classes < 1) throw FormatError("raw output must declare C >= 1 classes");
  std::vector<Detection> out;
  for (int i = 0; i < static_cast<int>(raw.rows.size()); ++i) {
    Detection d = detection_from_row(raw, i);
    if (d.objectness >= score_threshold) out.push_back(std::move(d));
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    return a.objectness > b.objectness;
  });
  return out;
}

std::vector<Detection> non_max_suppression(std::vector<Detection> dets, double iou_threshold) {
  std::vector<Detection> kept;
  for (auto& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_index == d.class_index && pairwise_iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(std::move(d));
  }
  return kept;
}

}  // namespace gcame
