#pragma once

#include <string>
#include <vector>

#include "gcame/detection.hpp"
#include "gcame/tensor.hpp"

namespace gcame {

/// Per-pixel attribution at input resolution, values in [0, 1].
struct SaliencyMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;  // row-major
  ExplanationTarget target;
  std::string method_tag;
  std::vector<std::string> layer_ids;
  std::vector<double> sigmas;
  std::vector<std::string> flags;

  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  bool has_flag(const std::string& f) const;
};

/// Throws ConfigError unless every value is finite and within [0, 1].
void validate(const SaliencyMap& map);

/// Bilinear resize with half-pixel centres and edge clamping.
Grid resize_bilinear(const Grid& src, int height, int width);

/// Min-max normalisation to [0, 1]; a constant grid maps to all zeros.
std::vector<float> normalize_min_max(const Grid& g);

}  // namespace gcame
