#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "gcame/detector.hpp"
#include "gcame/detectors.hpp"
#include "gcame/error.hpp"
#include "gcame/saliency.hpp"
#include "gcame/synthetic.hpp"

namespace gcame::test {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(GCAME_FIXTURE_DIR) / name;
}

inline std::unique_ptr<Detector> trained_toy() {
  return load_checkpoint(fixture("toy_detector_v1.bin"));
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("gcame_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline ImageInput random_image(std::uint64_t seed, int h = 128, int w = 128) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageInput img;
  img.pixels = Tensor(3, h, w);
  for (double& v : img.pixels.data) v = u(rng);
  return img;
}

inline SaliencyMap make_map(int h, int w, std::vector<float> values) {
  SaliencyMap m;
  m.height = h;
  m.width = w;
  m.values = std::move(values);
  m.method_tag = "test";
  return m;
}

/// Single square object with a fixed top-left corner.
inline SyntheticScene square_scene(int x, int y, int size, std::uint64_t seed = 1) {
  return render_scene({SceneObject{Shape::Square, x, y, size}}, seed);
}

/// Detector whose output ignores the input image: one fixed row per cell.
class ConstantDetector final : public Detector {
 public:
  explicit ConstantDetector(RawOutput raw) : Detector(DetectorSpec{}), raw_(std::move(raw)) {}
  ModelKind kind() const override { return ModelKind::Toy; }
  std::unique_ptr<Detector> clone() const override {
    return std::make_unique<ConstantDetector>(*this);
  }
  ForwardCache forward(const ImageInput&) const override {
    ForwardCache c;
    c.raw = raw_;
    return c;
  }
  std::vector<Tensor> backward_score(const ForwardCache&, int, int, ScoreKind) const override {
    throw NotDifferentiableError("constant detector has no gradient");
  }

 private:
  RawOutput raw_;
};

}  // namespace gcame::test
