#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "gcame/gcame.hpp"

namespace gcame {

/// Signed GradCAM: the G-CAME pipeline with every Gaussian mask replaced by
/// ones. Highlights every object of the target class.
SaliencyMap gradcam_explain(const Detector& model, const ImageInput& image,
                            const ExplanationTarget& target);
/// Explains the highest-objectness detection of `target_class`
/// (LookupError if the model detects none).
SaliencyMap gradcam_explain(const Detector& model, const ImageInput& image, int target_class,
                            double threshold = kDefaultObjectnessThreshold);

struct DRiseConfig {
  int grid_h = 16;
  int grid_w = 16;
  double occurrence_prob = 0.5;
  int num_masks = 4000;
  std::uint64_t seed = 0;
  int batch_size = 64;   // masks generated and scored per chunk
  int threads = 1;       // scoring workers per chunk; results are order-independent
  bool use_objectness = false;  // multiply the similarity by the box objectness
  double score_threshold = kDefaultObjectnessThreshold;

  void validate() const;
};

/// Reproducible stream of RISE masks: a Bernoulli(p) grid upsampled
/// bilinearly to (grid + 1) cells and cropped at a random sub-cell offset.
class RandomMaskStream {
 public:
  RandomMaskStream(const DRiseConfig& config, int height, int width);
  Grid next();

 private:
  DRiseConfig config_;
  int height_;
  int width_;
  int cell_h_;
  int cell_w_;
  std::mt19937_64 rng_;
};

std::vector<Grid> generate_random_masks(const DRiseConfig& config, int height, int width,
                                        int count);

/// max_j IoU(target, box_j) * p_c(box_j) [* p_obj] over detections.
double drise_similarity(const Detection& target, int target_class,
                        const std::vector<Detection>& detections, bool use_objectness);

/// D-RISE saliency sum_m s_m M_m, min-max normalised. If every mask scores
/// the same (including no detections at all) the map is uniform ones and
/// flagged "degenerate".
SaliencyMap drise_explain(const Detector& model, const ImageInput& image,
                          const Detection& target, const DRiseConfig& config);

/// Several targets in one image share the same masked forward passes.
std::vector<SaliencyMap> drise_explain(const Detector& model, const ImageInput& image,
                                       const std::vector<Detection>& targets,
                                       const DRiseConfig& config);

}  // namespace gcame
