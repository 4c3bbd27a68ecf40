#include "gcame/gcame.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "gcame/error.hpp"

namespace gcame {

namespace {

bool all_zero(const Tensor& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](double v) { return v == 0.0; });
}

// Argmax of |sum_k G[k]|, smallest row-major index on ties.
CenterLocation argmax_center(const GradientCapture& cap) {
  const Tensor& g = cap.gradient;
  double best = -1.0;
  CenterLocation loc;
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      double s = 0.0;
      for (int c = 0; c < g.channels; ++c) s += g.at(c, y, x);
      if (std::abs(s) > best) {
        best = std::abs(s);
        loc.row = y;
        loc.col = x;
      }
    }
  }
  return loc;
}

}  // namespace

std::vector<GradientCapture> compute_gradient_maps(const CaptureSession& session,
                                                   const ExplanationTarget& target) {
  const Detector& model = session.model();
  const auto grads =
      model.backward_score(session.cache(), target.detection.box_index, target.target_class,
                           target.score_kind);
  std::vector<GradientCapture> out;
  for (std::size_t i = 0; i < session.layers().size(); ++i) {
    const std::string& id = session.layers().layer_ids[i];
    GradientCapture cap;
    cap.layer_id = id;
    cap.stride = session.layers().strides.at(i);
    cap.activation = session.activation(id);
    cap.gradient = grads.at(model.node_index(id));
    for (double v : cap.gradient.data)
      if (!std::isfinite(v))
        throw NotDifferentiableError("non-finite gradient at layer '" + id + "'");
    cap.skippable = all_zero(cap.gradient);
    out.push_back(std::move(cap));
  }
  return out;
}

CenterLocation locate_center(const GradientCapture& capture, ModelKind kind) {
  const Tensor& g = capture.gradient;
  if (all_zero(g))
    throw NoSignalError("gradient map of layer '" + capture.layer_id +
                        "' is all zero; skip this layer");
  if (kind == ModelKind::OneStage) {
    int nonzero = 0;
    CenterLocation loc;
    for (int y = 0; y < g.height && nonzero < 2; ++y) {
      for (int x = 0; x < g.width && nonzero < 2; ++x) {
        bool any = false;
        for (int c = 0; c < g.channels && !any; ++c) any = g.at(c, y, x) != 0.0;
        if (any) {
          if (nonzero == 0) loc = {y, x, false};
          ++nonzero;
        }
      }
    }
    if (nonzero == 1) return loc;
    CenterLocation fb = argmax_center(capture);
    fb.fallback = true;
    return fb;
  }
  return argmax_center(capture);
}

ChannelWeighting weight_feature_maps(const GradientCapture& capture) {
  const Tensor& g = capture.gradient;
  ChannelWeighting w;
  w.alpha.resize(g.channels);
  const double n = static_cast<double>(g.plane_size());
  for (int c = 0; c < g.channels; ++c) {
    double sum = 0.0;
    for (double v : g.plane(c)) sum += v;
    w.alpha[c] = sum / n;
    if (w.alpha[c] > 0.0) w.positive.push_back(c);
    else if (w.alpha[c] < 0.0) w.negative.push_back(c);
  }
  return w;
}

double sigma_max(int grid_h, int grid_w, double sigma_min) {
  const double half = std::floor((std::sqrt(static_cast<double>(grid_h) * grid_w) - 1.0) / 2.0);
  return std::max(sigma_min, half / 3.0);
}

GaussianMaskSpec compute_sigma(const GradientCapture& capture, int channel, int image_height,
                               int image_width, const CenterLocation& center,
                               const GcameOptions& options) {
  const Tensor& g = capture.gradient;
  if (channel < 0 || channel >= g.channels)
    throw LookupError("channel " + std::to_string(channel) + " out of range");
  GaussianMaskSpec spec;
  spec.center_row = center.row;
  spec.center_col = center.col;
  spec.grid_h = g.height;
  spec.grid_w = g.width;
  spec.normalizer = g.height * g.width;

  const double hw = static_cast<double>(spec.normalizer);
  double mean = 0.0;
  for (double v : g.plane(channel)) mean += v;
  mean /= hw;

  const double ln_base = std::log(options.log_base);
  spec.scale_s = std::sqrt(static_cast<double>(image_height) * image_width / hw);
  const double half = std::floor((std::sqrt(hw) - 1.0) / 2.0);
  const double upper = sigma_max(g.height, g.width, options.sigma_min);

  if (mean == 0.0 || half < 1.0) {
    spec.scale_r = mean == 0.0 ? -std::numeric_limits<double>::infinity()
                               : std::log(std::abs(mean)) / ln_base;
    spec.sigma = options.sigma_min;
    spec.degenerate = true;
    return spec;
  }
  spec.scale_r = std::log(std::abs(mean)) / ln_base;
  const double raw = spec.scale_r * (std::log(spec.scale_s) / ln_base) * 3.0 / half;
  // The kernel depends on sigma^2 only, so the magnitude is what gets clamped.
  spec.sigma = std::clamp(std::abs(raw), options.sigma_min, upper);
  return spec;
}

GaussianMaskSpec compute_sigma(const GradientCapture& capture, int channel,
                               const ImageInput& image, const CenterLocation& center,
                               const GcameOptions& options) {
  return compute_sigma(capture, channel, image.height(), image.width(), center, options);
}

Grid generate_gaussian_mask(const GaussianMaskSpec& spec) {
  if (spec.center_row < 0 || spec.center_row >= spec.grid_h || spec.center_col < 0 ||
      spec.center_col >= spec.grid_w)
    throw ConfigError("Gaussian centre lies outside the grid");
  if (!(spec.sigma > 0.0)) throw ConfigError("Gaussian sigma must be positive");
  Grid mask(spec.grid_h, spec.grid_w);
  const double two_var = 2.0 * spec.sigma * spec.sigma;
  const double coeff = 1.0 / (std::numbers::pi * two_var);
  for (int i = 0; i < spec.grid_h; ++i) {
    const double di = i - spec.center_row;
    for (int j = 0; j < spec.grid_w; ++j) {
      const double dj = j - spec.center_col;
      mask.at(i, j) = coeff * std::exp(-(di * di + dj * dj) / two_var);
    }
  }
  const double peak = coeff;  // value at the centre
  for (double& v : mask.data) v /= peak;
  mask.at(spec.center_row, spec.center_col) = 1.0;
  return mask;
}

Grid layer_saliency(const LayerExplanation& layer, bool unit_masks) {
  const Tensor& a = layer.capture.activation;
  const auto& alpha = layer.weighting.alpha;
  Grid acc(a.height, a.width);
  std::map<double, Grid> mask_cache;
  auto mask_for = [&](int k) -> const Grid* {
    if (unit_masks) return nullptr;
    const GaussianMaskSpec& spec = layer.masks.at(k);
    auto it = mask_cache.find(spec.sigma);
    if (it == mask_cache.end()) it = mask_cache.emplace(spec.sigma, generate_gaussian_mask(spec)).first;
    return &it->second;
  };
  auto add_channel = [&](int k, double weight) {
    const Grid* m = mask_for(k);
    const auto plane = a.plane(k);
    for (std::size_t i = 0; i < acc.size(); ++i)
      acc.data[i] += (m ? m->data[i] : 1.0) * weight * plane[i];
  };
  for (int k : layer.weighting.positive) add_channel(k, alpha[k]);
  for (int k : layer.weighting.negative) add_channel(k, alpha[k]);  // alpha < 0: subtracts |alpha| A
  for (double& v : acc.data) v = std::max(v, 0.0);
  return acc;
}

Grid combine_saliency(std::span<const LayerExplanation> layers, int image_height,
                      int image_width, bool unit_masks) {
  Grid total(image_height, image_width);
  bool any = false;
  for (const LayerExplanation& layer : layers) {
    if (layer.capture.skippable) continue;
    any = true;
    const Grid up = resize_bilinear(layer_saliency(layer, unit_masks), image_height, image_width);
    for (std::size_t i = 0; i < total.size(); ++i) total.data[i] += up.data[i];
  }
  if (!any) throw EmptyExplanationError("no target layer received gradient; nothing to explain");
  return total;
}

std::vector<LayerExplanation> prepare_layers(const CaptureSession& session,
                                             const ExplanationTarget& target,
                                             const GcameOptions& options,
                                             std::vector<std::string>* flags) {
  std::vector<GradientCapture> captures;
  try {
    captures = compute_gradient_maps(session, target);
  } catch (const Error& e) {
    throw StageError("compute_gradient_maps", e.what());
  }
  const ModelKind kind = session.model().kind();
  const ImageInput& image = session.image();
  std::vector<LayerExplanation> layers;
  for (auto& cap : captures) {
    LayerExplanation le;
    if (cap.skippable) {
      if (flags) flags->push_back("skipped_layer:" + cap.layer_id);
      le.capture = std::move(cap);
      layers.push_back(std::move(le));
      continue;
    }
    try {
      le.center = locate_center(cap, kind);
    } catch (const NoSignalError&) {
      if (flags) flags->push_back("skipped_layer:" + cap.layer_id);
      cap.skippable = true;
      le.capture = std::move(cap);
      layers.push_back(std::move(le));
      continue;
    }
    if (le.center.fallback && flags) flags->push_back("center_fallback:" + cap.layer_id);
    le.weighting = weight_feature_maps(cap);
    le.masks.resize(cap.channels());
    try {
      for (int k = 0; k < cap.channels(); ++k)
        if (le.weighting.alpha[k] != 0.0)
          le.masks[k] = compute_sigma(cap, k, image, le.center, options);
    } catch (const Error& e) {
      throw StageError("compute_sigma", e.what());
    }
    le.capture = std::move(cap);
    layers.push_back(std::move(le));
  }
  return layers;
}

SaliencyMap explain_in_session(const CaptureSession& session, const ExplanationTarget& target,
                               const GcameOptions& options) {
  SaliencyMap map;
  const auto layers = prepare_layers(session, target, options, &map.flags);
  const ImageInput& image = session.image();
  Grid total;
  try {
    total = combine_saliency(layers, image.height(), image.width(), options.force_unit_masks);
  } catch (const EmptyExplanationError&) {
    throw;
  } catch (const Error& e) {
    throw StageError("combine_saliency", e.what());
  }
  map.height = image.height();
  map.width = image.width();
  map.values = normalize_min_max(total);
  map.target = target;
  map.method_tag = options.force_unit_masks ? "gradcam" : "gcame";
  for (const auto& le : layers) {
    map.layer_ids.push_back(le.capture.layer_id);
    double sum = 0.0;
    int n = 0;
    for (int k : le.weighting.positive) sum += le.masks[k].sigma, ++n;
    for (int k : le.weighting.negative) sum += le.masks[k].sigma, ++n;
    map.sigmas.push_back(n ? sum / n : 0.0);
  }
  if (std::all_of(map.values.begin(), map.values.end(), [](float v) { return v == 0.0f; }))
    map.flags.push_back("zero_map");
  return map;
}

SaliencyMap explain(const Detector& model, const ImageInput& image,
                    const ExplanationTarget& target, const GcameOptions& options) {
  ForwardCapture fc = [&] {
    try {
      return forward_with_capture(model, image, select_target_layers(model));
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError("forward_with_capture", e.what());
    }
  }();
  return explain_in_session(fc.session, target, options);
}

}  // namespace gcame
