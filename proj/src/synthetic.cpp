#include "gcame/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "gcame/error.hpp"

namespace gcame {

namespace {

bool inside(const SceneObject& o, int row, int col) {
  const double px = col + 0.5, py = row + 0.5;
  if (o.shape == Shape::Square)
    return px >= o.x && px <= o.x + o.size && py >= o.y && py <= o.y + o.size;
  const double r = o.size / 2.0;
  const double dx = px - (o.x + r), dy = py - (o.y + r);
  return dx * dx + dy * dy <= r * r;
}

bool separated(const SceneObject& a, const SceneObject& b, int gap) {
  return a.x + a.size + gap <= b.x || b.x + b.size + gap <= a.x || a.y + a.size + gap <= b.y ||
         b.y + b.size + gap <= a.y;
}

}  // namespace

SyntheticScene render_scene(const std::vector<SceneObject>& objects, std::uint64_t seed,
                            int height, int width) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SyntheticScene scene;
  Tensor& px = scene.image.pixels;
  px = Tensor(3, height, width);

  // Dark background: base colour plus a linear gradient and pixel noise.
  double base[3], gx[3], gy[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.08 + 0.25 * u(rng);
    gx[c] = (u(rng) - 0.5) * 0.15;
    gy[c] = (u(rng) - 0.5) * 0.15;
  }
  std::normal_distribution<double> noise(0.0, 0.02);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        px.at(c, y, x) = base[c] + gx[c] * x / width + gy[c] * y / height + noise(rng);

  for (const SceneObject& o : objects) {
    double colour[3];
    for (double& v : colour) v = 0.55 + 0.45 * u(rng);
    for (int y = std::max(0, o.y); y < std::min(height, o.y + o.size); ++y)
      for (int x = std::max(0, o.x); x < std::min(width, o.x + o.size); ++x)
        if (inside(o, y, x))
          for (int c = 0; c < 3; ++c) px.at(c, y, x) = colour[c] + noise(rng);
    GroundTruthBox gt;
    gt.box = o.box();
    gt.class_index = static_cast<int>(o.shape);
    scene.objects.push_back(gt);
  }
  // Quantise to 8 bits so in-memory scenes equal their PNG exports.
  for (double& v : px.data) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return scene;
}

SyntheticScene generate_scene(const SceneConfig& config, std::uint64_t seed) {
  if (config.min_size < 2 || config.max_size < config.min_size ||
      config.max_size > std::min(config.height, config.width) || config.min_objects < 0 ||
      config.max_objects < config.min_objects)
    throw ConfigError("invalid synthetic scene configuration");
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<int> count(config.min_objects, config.max_objects);
  std::uniform_int_distribution<int> size(config.min_size, config.max_size);
  std::uniform_int_distribution<int> shape(0, 1);
  const int n = count(rng);
  std::vector<SceneObject> objects;
  for (int attempt = 0; static_cast<int>(objects.size()) < n && attempt < 200; ++attempt) {
    SceneObject o;
    o.shape = static_cast<Shape>(shape(rng));
    o.size = size(rng);
    o.x = std::uniform_int_distribution<int>(1, config.width - o.size - 1)(rng);
    o.y = std::uniform_int_distribution<int>(1, config.height - o.size - 1)(rng);
    bool ok = true;
    for (const auto& other : objects) ok = ok && separated(o, other, config.min_gap);
    if (ok) objects.push_back(o);
  }
  return render_scene(objects, seed, config.height, config.width);
}

SyntheticScene tiny_pair_scene(std::uint64_t seed, int height, int width) {
  std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
  // 9 x 9 = 81 px, under 0.5% of a 128 x 128 image.
  constexpr int kSize = 9;
  std::uniform_int_distribution<int> gap_dist(10, 16);
  std::uniform_int_distribution<int> horizontal(0, 1);
  const int gap = gap_dist(rng);
  const bool side_by_side = horizontal(rng) == 1;
  const int span_major = 2 * kSize + gap;
  const int major_len = side_by_side ? width : height;
  const int minor_len = side_by_side ? height : width;
  const int m0 = std::uniform_int_distribution<int>(4, major_len - span_major - 4)(rng);
  const int n0 = std::uniform_int_distribution<int>(4, minor_len - kSize - 4)(rng);
  const int jitter = std::uniform_int_distribution<int>(-3, 3)(rng);
  SceneObject a{Shape::Square, 0, 0, kSize}, b{Shape::Square, 0, 0, kSize};
  const int n1 = std::clamp(n0 + jitter, 1, minor_len - kSize - 1);
  if (side_by_side) {
    a.x = m0, a.y = n0;
    b.x = m0 + kSize + gap, b.y = n1;
  } else {
    a.y = m0, a.x = n0;
    b.y = m0 + kSize + gap, b.x = n1;
  }
  return render_scene({a, b}, seed, height, width);
}

SyntheticScene blank_scene(std::uint64_t seed, int height, int width) {
  return render_scene({}, seed, height, width);
}

std::filesystem::path export_synthetic_dataset(const std::filesystem::path& dir, int count,
                                               std::uint64_t seed, const SceneConfig& config) {
  std::filesystem::create_directories(dir / "images");
  DatasetIndex index;
  index.categories = {{1, "circle"}, {2, "square"}};
  index.category_ids = {1, 2};
  for (int i = 0; i < count; ++i) {
    const std::int64_t id = i + 1;
    SyntheticScene scene = generate_scene(config, seed + static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof name, "images/%06lld.png", static_cast<long long>(id));
    save_image(scene.image, dir / name);
    index.images.push_back({id, name, config.height, config.width});
    for (auto& gt : scene.objects) gt.image_id = id;
    index.annotations[id] = std::move(scene.objects);
  }
  const auto path = dir / "annotations.json";
  save_coco(index, path);
  return path;
}

}  // namespace gcame
