#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gcame/baselines.hpp"
#include "gcame/metrics.hpp"

namespace gcame {

enum class Method { Gcame, Gradcam, Drise };
std::string_view to_string(Method m);
Method method_from_string(std::string_view s);

enum class Metric { PointingGame, Ebpg, ConfidenceDrop, InformationDrop };
std::string_view to_string(Metric m);
/// Accepts pg, ebpg, cd / confidence_drop, id / information_drop.
Metric metric_from_string(std::string_view s);

struct ExplainOptions {
  GcameOptions gcame;
  DRiseConfig drise;
  /// Replaces the adapter's default target layers when set.
  std::optional<TargetLayerSet> layers;
};

struct TimedMaps {
  std::vector<SaliencyMap> maps;
  std::vector<double> seconds;  // wall time attributed to each target
};

/// Explains each target with one method. G-CAME and GradCAM share one
/// forward pass per image; D-RISE shares its masked passes and splits the
/// wall time evenly over the targets.
TimedMaps explain_targets(Method method, const Detector& model, const ImageInput& image,
                          const std::vector<Detection>& targets, const ExplainOptions& options);

struct MatchedObject {
  GroundTruthBox gt;
  Detection detection;
};

/// Best same-class detection per ground-truth box by IoU (at least
/// `min_iou`); unmatched boxes are returned through `unmatched`.
std::vector<MatchedObject> match_objects(const std::vector<Detection>& detections,
                                         const std::vector<GroundTruthBox>& gts, double min_iou,
                                         std::vector<GroundTruthBox>* unmatched = nullptr);

struct EvalOptions {
  std::vector<Method> methods{Method::Gcame};
  std::vector<Metric> metrics{Metric::PointingGame, Metric::Ebpg};
  bool tiny_only = false;
  double threshold = kDefaultObjectnessThreshold;
  double match_iou = 0.5;
  PerturbationSpec perturbation;
  ExplainOptions explain;
};

struct ImageEvaluation {
  std::vector<EvalRecord> records;
  int unmatched = 0;
};

ImageEvaluation evaluate_image(const Detector& model, const ImageInput& image,
                               std::int64_t image_id, const std::vector<GroundTruthBox>& gts,
                               const EvalOptions& options);

}  // namespace gcame
