#pragma once

#include <any>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "gcame/detection.hpp"
#include "gcame/graph.hpp"

namespace gcame {

enum class ModelKind { OneStage, TwoStage, Toy };

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view s);

/// Shape parameters shared by every adapter. `seed` drives weight init.
struct DetectorSpec {
  std::string adapter = "toy";  // "toy", "yolox" or "fasterrcnn"
  int input_height = 128;
  int input_width = 128;
  int num_classes = 2;
  std::uint64_t seed = 7;

  friend bool operator==(const DetectorSpec&, const DetectorSpec&) = default;
};

struct LayerInfo {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  LayerRole role = LayerRole::Backbone;
  int stride = 1;   // input pixels per output pixel
  int branch = -1;  // detection-head / FPN branch, -1 when shared
};

/// Result of a forward pass: every graph node's output plus the decoded rows.
/// `aux` carries adapter-specific state needed by backward_score.
struct ForwardCache {
  std::vector<Tensor> activations;
  RawOutput raw;
  std::any aux;
};

/// Uniform detector interface: layers, forward pass and a differentiable
/// target-score accessor.
class Detector {
 public:
  virtual ~Detector() = default;

  virtual ModelKind kind() const = 0;
  virtual std::unique_ptr<Detector> clone() const = 0;
  virtual ForwardCache forward(const ImageInput& image) const = 0;

  /// Gradient of the target score w.r.t. every graph node's output.
  /// ScoreKind::ClassScore differentiates p_c of row `box_index`;
  /// ObjectnessWeighted differentiates p_obj * p_c.
  virtual std::vector<Tensor> backward_score(const ForwardCache& cache, int box_index,
                                             int target_class, ScoreKind kind) const = 0;

  /// Native post-processing: objectness threshold then per-class NMS.
  virtual std::vector<Detection> postprocess(const RawOutput& raw, double threshold) const;

  const DetectorSpec& spec() const { return spec_; }
  int num_classes() const { return spec_.num_classes; }
  const ConvGraph& graph() const { return graph_; }

  /// Every parametrised layer (graph layers followed by any dense head layers).
  virtual std::vector<const Layer*> layers() const;
  virtual std::vector<Layer*> mutable_layers();
  const Layer* find_layer(std::string_view name) const;
  Layer* find_layer(std::string_view name);

  std::vector<LayerInfo> layer_infos() const;
  std::uint64_t weight_hash() const;

  int node_index(const std::string& layer_name) const;

  double nms_iou = 0.45;

 protected:
  explicit Detector(DetectorSpec spec) : spec_(std::move(spec)) {}
  void check_input(const ImageInput& image) const;
  void init_weights();
  /// Head branch index used in layer_infos; -1 if shared.
  virtual int branch_of(const Layer& layer) const;

  DetectorSpec spec_;
  ConvGraph graph_;
};

/// Ordered target layers with their strides.
struct TargetLayerSet {
  std::vector<std::string> layer_ids;
  std::vector<int> strides;

  std::size_t size() const { return layer_ids.size(); }
};

/// Which one-stage head convolution is hooked.
enum class OneStageHook { ClsBranch, SharedStem };

/// One-stage: last classification-branch convolution of every head branch
/// (regression branch never included). Two-stage: last convolution of every
/// FPN branch. Toy: its declared head layer.
TargetLayerSet select_target_layers(const Detector& model, ModelKind kind,
                                    OneStageHook hook = OneStageHook::ClsBranch);
inline TargetLayerSet select_target_layers(const Detector& model) {
  return select_target_layers(model, model.kind());
}

/// Holds the retained activations of one forward pass. Bound to one model;
/// not thread-safe.
class CaptureSession {
 public:
  CaptureSession(const Detector& model, ImageInput image, TargetLayerSet layers,
                 ForwardCache cache);

  const Detector& model() const { return *model_; }
  const ImageInput& image() const { return image_; }
  const TargetLayerSet& layers() const { return layers_; }
  const ForwardCache& cache() const { return cache_; }

  /// Retained activation of a target layer; LookupError for any other layer.
  const Tensor& activation(const std::string& layer_id) const;

 private:
  const Detector* model_;
  ImageInput image_;
  TargetLayerSet layers_;
  ForwardCache cache_;
};

struct ForwardCapture {
  std::vector<Detection> detections;
  CaptureSession session;
};

constexpr double kDefaultObjectnessThreshold = 0.25;

ForwardCapture forward_with_capture(const Detector& model, const ImageInput& image,
                                    const TargetLayerSet& layers,
                                    double threshold = kDefaultObjectnessThreshold);

// Factory and persistence.
std::unique_ptr<Detector> make_detector(const DetectorSpec& spec);
std::unique_ptr<Detector> build_toy_detector(const DetectorSpec& spec);

/// Binary checkpoint: magic, format version, spec, then every layer's
/// name, shape and little-endian float64 parameters.
void save_checkpoint(const Detector& model, const std::filesystem::path& path);
std::unique_ptr<Detector> load_checkpoint(const std::filesystem::path& path);
/// Loads and checks the stored spec against `expected` (ConfigError on mismatch).
std::unique_ptr<Detector> load_checkpoint(const std::filesystem::path& path,
                                          const DetectorSpec& expected);

}  // namespace gcame
