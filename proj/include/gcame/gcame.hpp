#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gcame/detector.hpp"
#include "gcame/saliency.hpp"

namespace gcame {

/// Activation A and gradient G (dS/dA) of one target layer, both k x h x w.
struct GradientCapture {
  std::string layer_id;
  int stride = 1;
  Tensor activation;
  Tensor gradient;
  bool skippable = false;  // no gradient reached this layer

  int channels() const { return activation.channels; }
  int feature_height() const { return activation.height; }
  int feature_width() const { return activation.width; }
};

/// alpha[k] = mean of G[k]; channels split by the sign of alpha.
struct ChannelWeighting {
  std::vector<double> alpha;
  std::vector<int> positive;  // alpha > 0
  std::vector<int> negative;  // alpha < 0
};

struct GaussianMaskSpec {
  int center_row = 0;
  int center_col = 0;
  double sigma = 1.0;
  int grid_h = 1;
  int grid_w = 1;
  double scale_r = 0.0;  // ln |mean G|
  double scale_s = 1.0;  // sqrt(HW / hw)
  int normalizer = 1;    // hw
  bool degenerate = false;
};

struct CenterLocation {
  int row = 0;
  int col = 0;
  bool fallback = false;  // one-stage gradient was not a single pixel; argmax used
};

constexpr double kSigmaMin = 0.1;

/// Tunables; the defaults are the library's documented behaviour.
struct GcameOptions {
  double sigma_min = kSigmaMin;
  /// Base of the logarithms in the sigma formula.
  double log_base = std::exp(1.0);
  ScoreKind score_kind = ScoreKind::ClassScore;
  /// Test hook: every Gaussian mask is replaced by ones, which reduces the
  /// method to signed GradCAM.
  bool force_unit_masks = false;
};

/// Everything needed to build one layer's contribution.
struct LayerExplanation {
  GradientCapture capture;
  ChannelWeighting weighting;
  CenterLocation center;
  /// One spec per channel; only entries for channels in the positive or
  /// negative set are used.
  std::vector<GaussianMaskSpec> masks;
};

/// One backward pass of the target score; one capture per target layer.
std::vector<GradientCapture> compute_gradient_maps(const CaptureSession& session,
                                                   const ExplanationTarget& target);

/// Object centre on the feature map. One-stage: the single nonzero pixel of
/// G (argmax fallback). Two-stage and toy: argmax of |sum_k G[k]|. Ties go
/// to the smallest row-major index. Throws NoSignalError for all-zero G.
CenterLocation locate_center(const GradientCapture& capture, ModelKind kind);

ChannelWeighting weight_feature_maps(const GradientCapture& capture);

/// R = log|mean G[channel]|, S = sqrt(HW / hw),
/// sigma = |R log S * 3 / floor((sqrt(hw) - 1) / 2)| clamped to
/// [sigma_min, floor((sqrt(hw) - 1) / 2) / 3].
GaussianMaskSpec compute_sigma(const GradientCapture& capture, int channel, int image_height,
                               int image_width, const CenterLocation& center,
                               const GcameOptions& options = {});
GaussianMaskSpec compute_sigma(const GradientCapture& capture, int channel,
                               const ImageInput& image, const CenterLocation& center,
                               const GcameOptions& options = {});

/// Upper bound on sigma for an h x w feature map.
double sigma_max(int grid_h, int grid_w, double sigma_min = kSigmaMin);

/// grid_h x grid_w Gaussian centred on the spec's centre, divided by its
/// peak so the centre is exactly 1.
Grid generate_gaussian_mask(const GaussianMaskSpec& spec);

/// Feature-map saliency of one layer:
/// ReLU(sum_{k+} M_k * alpha_k A_k - sum_{k-} M_k * |alpha_k| A_k).
Grid layer_saliency(const LayerExplanation& layer, bool unit_masks);

/// Per-layer maps upsampled bilinearly to H x W, summed, min-max normalised.
/// Throws EmptyExplanationError when every layer is skippable.
Grid combine_saliency(std::span<const LayerExplanation> layers, int image_height,
                      int image_width, bool unit_masks = false);

/// Builds every layer's explanation artifacts for a target in an existing session.
std::vector<LayerExplanation> prepare_layers(const CaptureSession& session,
                                             const ExplanationTarget& target,
                                             const GcameOptions& options,
                                             std::vector<std::string>* flags = nullptr);

/// Explains a target using the activations already retained in `session`.
SaliencyMap explain_in_session(const CaptureSession& session, const ExplanationTarget& target,
                               const GcameOptions& options = {});

/// Full pipeline: forward with capture, gradients, centre, weights, sigma,
/// masks, combination. Deterministic for fixed weights and input.
SaliencyMap explain(const Detector& model, const ImageInput& image,
                    const ExplanationTarget& target, const GcameOptions& options = {});

}  // namespace gcame
