#include "gcame/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "gcame/error.hpp"

namespace gcame {

SaliencyMap gradcam_explain(const Detector& model, const ImageInput& image,
                            const ExplanationTarget& target) {
  GcameOptions opts;
  opts.force_unit_masks = true;
  opts.score_kind = target.score_kind;
  return explain(model, image, target, opts);
}

SaliencyMap gradcam_explain(const Detector& model, const ImageInput& image, int target_class,
                            double threshold) {
  const auto dets = model.postprocess(model.forward(image).raw, threshold);
  for (const Detection& d : dets) {
    if (d.class_index != target_class) continue;
    ExplanationTarget t = ExplanationTarget::of(d);
    return gradcam_explain(model, image, t);
  }
  throw LookupError("no detection of class " + std::to_string(target_class) + " to explain");
}

void DRiseConfig::validate() const {
  if (grid_h < 2 || grid_w < 2) throw ConfigError("D-RISE grid must be at least 2x2");
  if (!(occurrence_prob > 0.0 && occurrence_prob < 1.0))
    throw ConfigError("D-RISE occurrence probability must lie in (0,1)");
  if (num_masks < 1) throw ConfigError("D-RISE needs at least one mask");
  if (batch_size < 1 || threads < 1) throw ConfigError("D-RISE batch size and threads must be >= 1");
}

RandomMaskStream::RandomMaskStream(const DRiseConfig& config, int height, int width)
    : config_(config),
      height_(height),
      width_(width),
      cell_h_((height + config.grid_h - 1) / config.grid_h),
      cell_w_((width + config.grid_w - 1) / config.grid_w),
      rng_(config.seed) {
  config_.validate();
}

Grid RandomMaskStream::next() {
  std::bernoulli_distribution keep(config_.occurrence_prob);
  Grid cells(config_.grid_h, config_.grid_w);
  for (double& v : cells.data) v = keep(rng_) ? 1.0 : 0.0;
  // Upsample so one grid cell spans cell_h x cell_w pixels over a canvas one
  // cell larger than the image, then crop at a random offset.
  const int up_h = (config_.grid_h + 1) * cell_h_;
  const int up_w = (config_.grid_w + 1) * cell_w_;
  const Grid up = resize_bilinear(cells, up_h, up_w);
  const int dy = std::uniform_int_distribution<int>(0, cell_h_ - 1)(rng_);
  const int dx = std::uniform_int_distribution<int>(0, cell_w_ - 1)(rng_);
  Grid mask(height_, width_);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) mask.at(y, x) = up.at(y + dy, x + dx);
  return mask;
}

std::vector<Grid> generate_random_masks(const DRiseConfig& config, int height, int width,
                                        int count) {
  RandomMaskStream stream(config, height, width);
  std::vector<Grid> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(stream.next());
  return out;
}

double drise_similarity(const Detection& target, int target_class,
                        const std::vector<Detection>& detections, bool use_objectness) {
  double best = 0.0;
  for (const Detection& d : detections) {
    double s = pairwise_iou(target.box, d.box) * d.class_scores.at(target_class);
    if (use_objectness) s *= d.objectness;
    best = std::max(best, s);
  }
  return best;
}

std::vector<SaliencyMap> drise_explain(const Detector& model, const ImageInput& image,
                                       const std::vector<Detection>& targets,
                                       const DRiseConfig& config) {
  config.validate();
  validate(image);
  const int h = image.height(), w = image.width();
  const std::size_t n_targets = targets.size();
  std::vector<Grid> sums(n_targets, Grid(h, w));
  std::vector<double> s_min(n_targets, INFINITY), s_max(n_targets, -INFINITY);
  std::vector<int> with_detections(n_targets, 0);

  RandomMaskStream stream(config, h, w);
  std::vector<Grid> batch;
  std::vector<std::vector<double>> scores;
  for (int done = 0; done < config.num_masks;) {
    const int n = std::min(config.batch_size, config.num_masks - done);
    batch.clear();
    for (int i = 0; i < n; ++i) batch.push_back(stream.next());
    scores.assign(n, std::vector<double>(n_targets, 0.0));
    std::vector<int> detected(n, 0);

    auto score = [&](int i) {
      ImageInput masked;
      masked.pixels = image.pixels;
      const std::size_t plane = masked.pixels.plane_size();
      for (int c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < plane; ++p) masked.pixels.data[c * plane + p] *= batch[i].data[p];
      const auto dets = parse_detections(model.forward(masked).raw, config.score_threshold);
      detected[i] = !dets.empty();
      for (std::size_t t = 0; t < n_targets; ++t)
        scores[i][t] = drise_similarity(targets[t], targets[t].class_index, dets,
                                        config.use_objectness);
    };
    if (config.threads <= 1) {
      for (int i = 0; i < n; ++i) score(i);
    } else {
      std::vector<std::thread> pool;
      for (int k = 0; k < config.threads; ++k)
        pool.emplace_back([&, k] {
          for (int i = k; i < n; i += config.threads) score(i);
        });
      for (auto& th : pool) th.join();
    }
    // Accumulate in mask order so the result does not depend on scheduling.
    for (int i = 0; i < n; ++i)
      for (std::size_t t = 0; t < n_targets; ++t) {
        const double s = scores[i][t];
        s_min[t] = std::min(s_min[t], s);
        s_max[t] = std::max(s_max[t], s);
        with_detections[t] += detected[i];
        if (s == 0.0) continue;
        for (std::size_t p = 0; p < sums[t].size(); ++p) sums[t].data[p] += s * batch[i].data[p];
      }
    done += n;
  }

  std::vector<SaliencyMap> out;
  for (std::size_t t = 0; t < n_targets; ++t) {
    SaliencyMap map;
    map.height = h;
    map.width = w;
    map.target = ExplanationTarget::of(targets[t]);
    map.method_tag = "drise";
    if (!(s_max[t] > s_min[t])) {
      map.values.assign(static_cast<std::size_t>(h) * w, 1.0f);
      map.flags.push_back("degenerate");
      if (with_detections[t] == 0) map.flags.push_back("no_detections");
    } else {
      map.values = normalize_min_max(sums[t]);
    }
    out.push_back(std::move(map));
  }
  return out;
}

SaliencyMap drise_explain(const Detector& model, const ImageInput& image,
                          const Detection& target, const DRiseConfig& config) {
  return drise_explain(model, image, std::vector<Detection>{target}, config).front();
}

}  // namespace gcame
