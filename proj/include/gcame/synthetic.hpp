#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gcame/dataset.hpp"

namespace gcame {

// Synthetic circle (class 0) vs square (class 1) scenes for the toy detector.

enum class Shape { Circle = 0, Square = 1 };

struct SceneConfig {
  int height = 128;
  int width = 128;
  int min_objects = 1;
  int max_objects = 3;
  int min_size = 8;
  int max_size = 28;
  int min_gap = 3;  // free pixels between object boxes
};

struct SceneObject {
  Shape shape = Shape::Square;
  int x = 0;  // top-left corner
  int y = 0;
  int size = 8;

  Box box() const { return {double(x), double(y), double(x + size), double(y + size)}; }
};

struct SyntheticScene {
  ImageInput image;
  std::vector<GroundTruthBox> objects;
};

/// Draws the given objects over a seeded background (smooth gradient plus
/// mild noise); shape colours are drawn from the same seed.
SyntheticScene render_scene(const std::vector<SceneObject>& objects, std::uint64_t seed,
                            int height = 128, int width = 128);

/// Random non-overlapping scene.
SyntheticScene generate_scene(const SceneConfig& config, std::uint64_t seed);

/// Two tiny same-class squares a short distance apart.
SyntheticScene tiny_pair_scene(std::uint64_t seed, int height = 128, int width = 128);

/// Blank background, no objects.
SyntheticScene blank_scene(std::uint64_t seed, int height = 128, int width = 128);

/// Writes `count` scenes as PNGs plus a COCO annotation file into `dir`.
/// Returns the annotation path.
std::filesystem::path export_synthetic_dataset(const std::filesystem::path& dir, int count,
                                               std::uint64_t seed, const SceneConfig& config = {});

}  // namespace gcame
