#include "gcame/sanity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "gcame/error.hpp"

namespace gcame {

std::string_view to_string(RandomizationMode mode) {
  return mode == RandomizationMode::Cascading ? "cascading" : "independent";
}

RandomizationMode randomization_mode_from_string(std::string_view s) {
  if (s == "cascading") return RandomizationMode::Cascading;
  if (s == "independent") return RandomizationMode::Independent;
  throw ConfigError("unknown randomization mode '" + std::string(s) + "'");
}

std::vector<std::string> RandomizationPlan::layers_to_randomize() const {
  if (target_layer.empty()) return {};
  const auto it = std::find(layer_ids.begin(), layer_ids.end(), target_layer);
  if (it == layer_ids.end())
    throw LookupError("randomization target '" + target_layer + "' is not in the layer list");
  if (mode == RandomizationMode::Independent) return {target_layer};
  return {layer_ids.begin(), it + 1};
}

std::string RandomizationPlan::label() const {
  if (target_layer.empty()) return "none";
  return std::string(to_string(mode)) + ":" + target_layer;
}

std::vector<std::string> default_randomization_order(const Detector& model) {
  std::vector<std::string> out;
  for (const Layer* l : model.layers())
    if (!l->is_regression()) out.push_back(l->name);
  std::reverse(out.begin(), out.end());
  return out;
}

std::unique_ptr<Detector> randomize(const Detector& model, const RandomizationPlan& plan) {
  if (!(plan.init_std > 0.0)) throw ConfigError("randomization std must be positive");
  auto copy = model.clone();
  std::mt19937_64 rng(plan.seed);
  for (const std::string& name : plan.layers_to_randomize()) {
    Layer* layer = copy->find_layer(name);
    if (!layer) throw LookupError("model has no layer named '" + name + "'");
    init_normal(*layer, plan.init_std, rng);
  }
  return copy;
}

namespace {

std::vector<double> average_ranks(const std::vector<float>& v) {
  std::vector<int> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_correlation(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw ConfigError("rank correlation needs equal-length inputs");
  if (a == b) return 1.0;
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - ma, db = rb[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (!(va > 0.0) || !(vb > 0.0)) return 0.0;
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

double structural_similarity(const SaliencyMap& a, const SaliencyMap& b) {
  if (a.height != b.height || a.width != b.width)
    throw ConfigError("structural similarity needs equal-shape maps");
  if (a.values == b.values) return 1.0;
  cv::Mat x(a.height, a.width, CV_64F), y(b.height, b.width, CV_64F);
  for (int i = 0; i < a.height; ++i)
    for (int j = 0; j < a.width; ++j) {
      x.at<double>(i, j) = a.at(i, j);
      y.at<double>(i, j) = b.at(i, j);
    }
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  auto blur = [](const cv::Mat& m) {
    cv::Mat out;
    cv::GaussianBlur(m, out, cv::Size(11, 11), 1.5, 1.5, cv::BORDER_REFLECT_101);
    return out;
  };
  const cv::Mat mx = blur(x), my = blur(y);
  const cv::Mat sxx = blur(x.mul(x)) - mx.mul(mx);
  const cv::Mat syy = blur(y.mul(y)) - my.mul(my);
  const cv::Mat sxy = blur(x.mul(y)) - mx.mul(my);
  const cv::Mat num = (2 * mx.mul(my) + c1).mul(2 * sxy + c2);
  const cv::Mat den = (mx.mul(mx) + my.mul(my) + c1).mul(sxx + syy + c2);
  cv::Mat ssim;
  cv::divide(num, den, ssim);
  return cv::mean(ssim)[0];
}

SanityReport sanity_suite(const Detector& model, const ImageInput& image,
                          const ExplanationTarget& target,
                          const std::vector<RandomizationPlan>& plans,
                          const GcameOptions& options) {
  SanityReport report;
  report.baseline = explain(model, image, target, options);
  const TargetLayerSet layers = select_target_layers(model);
  for (const RandomizationPlan& plan : plans) {
    SanityResult res;
    res.plan = plan;
    const auto copy = randomize(model, plan);
    ForwardCapture fc = forward_with_capture(*copy, image, layers);
    const Detection row = detection_from_row(fc.session.cache().raw, target.detection.box_index);
    const bool detected = row.objectness >= kDefaultObjectnessThreshold;
    if (!detected) res.flags.push_back("no_detection");
    try {
      res.map = explain_in_session(fc.session, target, options);
    } catch (const EmptyExplanationError&) {
      res.flags.push_back("empty_explanation");
      res.map = report.baseline;
      res.map.values.assign(res.map.values.size(), 0.0f);
      res.map.flags = {"empty_explanation"};
      report.results.push_back(std::move(res));
      continue;
    }
    const auto [lo, hi] = std::minmax_element(res.map.values.begin(), res.map.values.end());
    if (*lo == *hi && res.map.values != report.baseline.values) {
      res.flags.push_back("constant_explanation");
    } else {
      res.map_rank_correlation = spearman_correlation(report.baseline.values, res.map.values);
      res.map_ssim = structural_similarity(report.baseline, res.map);
      if (detected) {
        res.rank_correlation = res.map_rank_correlation;
        res.ssim = res.map_ssim;
      }
    }
    report.results.push_back(std::move(res));
  }
  return report;
}

std::string sanity_table_json(const SanityReport& report) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = "v1";
  const Box& b = report.baseline.target.detection.box;
  doc["target"] = {{"box", {b.x1, b.y1, b.x2, b.y2}},
                   {"class_index", report.baseline.target.target_class},
                   {"box_index", report.baseline.target.detection.box_index}};
  doc["plans"] = nlohmann::ordered_json::array();
  for (const auto& r : report.results)
    doc["plans"].push_back({{"label", r.plan.label()},
                            {"mode", std::string(to_string(r.plan.mode))},
                            {"target_layer", r.plan.target_layer},
                            {"randomized_layers", r.plan.layers_to_randomize()},
                            {"init_std", r.plan.init_std},
                            {"seed", r.plan.seed},
                            {"rank_correlation", r.rank_correlation},
                            {"ssim", r.ssim},
                            {"map_rank_correlation", r.map_rank_correlation},
                            {"map_ssim", r.map_ssim},
                            {"flags", r.flags}});
  return doc.dump(2) + "\n";
}

}  // namespace gcame
