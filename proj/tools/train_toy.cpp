// Offline trainer for the bundled toy detector checkpoint.
//
//   train_toy --out fixtures/toy_detector_v1.bin
//
// Trains on freshly generated synthetic scenes (no dataset on disk) and
// reports recall on a held-out set of 200 scenes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include <CLI11.hpp>

#include "gcame/detectors.hpp"
#include "gcame/synthetic.hpp"

using namespace gcame;

namespace {

constexpr std::uint64_t kEvalSeedBase = 1'000'000'000ULL;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Adam {
  double lr = 2e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  int t = 0;
  std::vector<ConvGraph::ParamGrad> m, v;

  void step(std::vector<Layer*>& layers, const std::vector<ConvGraph::ParamGrad>& g, double rate) {
    if (m.empty()) m = v = g, zero();
    ++t;
    const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
    auto upd = [&](std::vector<double>& w, const std::vector<double>& gr, std::vector<double>& mm,
                   std::vector<double>& vv) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        mm[i] = b1 * mm[i] + (1 - b1) * gr[i];
        vv[i] = b2 * vv[i] + (1 - b2) * gr[i] * gr[i];
        w[i] -= rate * (mm[i] / c1) / (std::sqrt(vv[i] / c2) + eps);
      }
    };
    for (std::size_t l = 0; l < layers.size(); ++l) {
      upd(layers[l]->weight, g[l].weight, m[l].weight, v[l].weight);
      upd(layers[l]->bias, g[l].bias, m[l].bias, v[l].bias);
    }
  }
  void zero() {
    for (auto& p : m) std::fill(p.weight.begin(), p.weight.end(), 0.0), std::fill(p.bias.begin(), p.bias.end(), 0.0);
    for (auto& p : v) std::fill(p.weight.begin(), p.weight.end(), 0.0), std::fill(p.bias.begin(), p.bias.end(), 0.0);
  }
};

// Positive cells of one object: the cell holding its centre plus cells whose
// centre lies inside the box within 1.5 strides of the object centre.
bool is_positive(const Box& b, int row, int col, int stride) {
  const double cx = (col + 0.5) * stride, cy = (row + 0.5) * stride;
  const double gx = b.center_x(), gy = b.center_y();
  if (static_cast<int>(gx / stride) == col && static_cast<int>(gy / stride) == row) return true;
  return cx > b.x1 && cx < b.x2 && cy > b.y1 && cy < b.y2 && std::abs(cx - gx) <= 1.5 * stride &&
         std::abs(cy - gy) <= 1.5 * stride;
}

struct LossTotals {
  double obj = 0, cls = 0, reg = 0;
  int positives = 0;
};

// Accumulates parameter gradients for one scene.
void train_scene(const ToyDetector& model, const SyntheticScene& scene,
                 std::vector<ConvGraph::ParamGrad>& pgrads, LossTotals& totals, double scale) {
  const auto& lv = model.levels().front();
  const ConvGraph& g = model.graph();
  const auto acts = g.forward(scene.image.pixels);
  const Tensor& cls = acts[lv.cls_pred];
  const Tensor& reg = acts[lv.reg_pred];
  const Tensor& obj = acts[lv.obj_pred];
  std::vector<Tensor> grads(g.nodes().size());
  grads[lv.cls_pred] = Tensor(cls.channels, cls.height, cls.width);
  grads[lv.reg_pred] = Tensor(reg.channels, reg.height, reg.width);
  grads[lv.obj_pred] = Tensor(obj.channels, obj.height, obj.width);

  int npos = 0;
  std::vector<int> owner(obj.plane_size(), -1);
  for (int y = 0; y < obj.height; ++y)
    for (int x = 0; x < obj.width; ++x) {
      double best_area = 1e18;
      for (std::size_t k = 0; k < scene.objects.size(); ++k) {
        const Box& b = scene.objects[k].box;
        if (is_positive(b, y, x, lv.stride) && b.area() < best_area) {
          best_area = b.area();
          owner[y * obj.width + x] = static_cast<int>(k);
        }
      }
      npos += owner[y * obj.width + x] >= 0;
    }
  const double norm = scale / std::max(1, npos);

  for (int y = 0; y < obj.height; ++y)
    for (int x = 0; x < obj.width; ++x) {
      const int k = owner[y * obj.width + x];
      const double po = sigmoid(obj.at(0, y, x));
      const double to = k >= 0 ? 1.0 : 0.0;
      totals.obj -= to * std::log(po + 1e-12) + (1 - to) * std::log(1 - po + 1e-12);
      grads[lv.obj_pred].at(0, y, x) = (po - to) * norm;
      if (k < 0) continue;
      const GroundTruthBox& gt = scene.objects[k];
      for (int c = 0; c < cls.channels; ++c) {
        const double pc = sigmoid(cls.at(c, y, x));
        const double tc = c == gt.class_index ? 1.0 : 0.0;
        totals.cls -= tc * std::log(pc + 1e-12) + (1 - tc) * std::log(1 - pc + 1e-12);
        grads[lv.cls_pred].at(c, y, x) = (pc - tc) * norm;
      }
      const double cx = (x + 0.5) * lv.stride, cy = (y + 0.5) * lv.stride;
      const double d[4] = {cx - gt.box.x1, cy - gt.box.y1, gt.box.x2 - cx, gt.box.y2 - cy};
      for (int r = 0; r < 4; ++r) {
        const double target = std::log(std::max(d[r], 0.25 * lv.stride) / lv.stride);
        const double diff = reg.at(r, y, x) - target;
        totals.reg += std::abs(diff);
        grads[lv.reg_pred].at(r, y, x) = (diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0) * norm;
      }
    }
  totals.positives += npos;
  g.backward(scene.image.pixels, acts, grads, &pgrads);
}

SyntheticScene training_scene(std::mt19937_64& rng, std::uint64_t seed) {
  const double r = std::uniform_real_distribution<double>(0, 1)(rng);
  if (r < 0.15) return tiny_pair_scene(seed);
  if (r < 0.20) return blank_scene(seed);
  SceneConfig cfg;
  cfg.min_size = 8;
  cfg.max_size = 28;
  return generate_scene(cfg, seed);
}

struct Recall {
  int hits = 0, total = 0;
  double value() const { return total ? double(hits) / total : 0.0; }
};

void count_hits(const Detector& model, const SyntheticScene& scene, Recall& rec) {
  const auto dets = model.postprocess(model.forward(scene.image).raw, kDefaultObjectnessThreshold);
  for (const auto& gt : scene.objects) {
    ++rec.total;
    for (const auto& d : dets)
      if (d.class_index == gt.class_index && pairwise_iou(d.box, gt.box) >= 0.5) {
        ++rec.hits;
        break;
      }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train the toy detector on synthetic circle/square scenes"};
  std::string out = "fixtures/toy_detector_v1.bin";
  int iterations = 6000;
  int batch = 8;
  double lr = 2e-3;
  std::uint64_t seed = 7;
  int eval_images = 200;
  app.add_option("--out", out, "checkpoint path");
  app.add_option("--iterations", iterations);
  app.add_option("--batch", batch);
  app.add_option("--lr", lr);
  app.add_option("--seed", seed, "weight-init and data seed");
  app.add_option("--eval-images", eval_images);
  CLI11_PARSE(app, argc, argv);

  DetectorSpec spec;
  spec.seed = seed;
  ToyDetector model(spec);
  auto layers = model.mutable_layers();
  for (Layer* l : layers) {
    if (l->role == LayerRole::ObjPred) std::fill(l->bias.begin(), l->bias.end(), -4.6);
    if (l->role == LayerRole::ClsPred) std::fill(l->bias.begin(), l->bias.end(), -2.0);
  }

  std::mt19937_64 rng(seed);
  Adam adam;
  const auto start = std::chrono::steady_clock::now();
  LossTotals totals;
  for (int it = 0; it < iterations; ++it) {
    auto pgrads = model.graph().zero_param_grads();
    for (int b = 0; b < batch; ++b) {
      const std::uint64_t s = seed * 10'000'000ULL + static_cast<std::uint64_t>(it) * batch + b;
      train_scene(model, training_scene(rng, s), pgrads, totals, 1.0 / batch);
    }
    const double progress = double(it) / iterations;
    const double rate = lr * (0.02 + 0.98 * 0.5 * (1 + std::cos(M_PI * progress)));
    adam.step(layers, pgrads, rate);
    if ((it + 1) % 200 == 0) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      const double n = 200.0 * batch;
      std::printf("iter %5d  obj %.4f  cls %.4f  reg %.4f  pos/img %.1f  lr %.2e  %.0fs\n", it + 1,
                  totals.obj / n, totals.cls / std::max(1, totals.positives),
                  totals.reg / std::max(1, totals.positives), totals.positives / n, rate, secs);
      std::fflush(stdout);
      totals = {};
    }
  }

  Recall recall, tiny;
  SceneConfig eval_cfg;
  eval_cfg.min_size = 12;
  for (int i = 0; i < eval_images; ++i) {
    count_hits(model, generate_scene(eval_cfg, kEvalSeedBase + i), recall);
    count_hits(model, tiny_pair_scene(kEvalSeedBase + i), tiny);
  }
  std::printf("eval recall %.4f (%d/%d)  tiny-pair recall %.4f (%d/%d)\n", recall.value(),
              recall.hits, recall.total, tiny.value(), tiny.hits, tiny.total);

  save_checkpoint(model, out);
  std::printf("wrote %s  weight hash %016llx\n", out.c_str(),
              static_cast<unsigned long long>(model.weight_hash()));
  return 0;
}
