#pragma once

#include "gcame/detector.hpp"

namespace gcame {

/// Anchor-free dense head shared by the toy and YOLOX-style detectors: each
/// cell of each level predicts one box (l, t, r, b distances, log-space in
/// stride units), one objectness logit and C class logits through 1x1 convs.
class DenseHeadDetector : public Detector {
 public:
  struct Level {
    int stride = 8;
    int cls_pred = -1;  // node indices
    int reg_pred = -1;
    int obj_pred = -1;
  };

  ForwardCache forward(const ImageInput& image) const override;
  std::vector<Tensor> backward_score(const ForwardCache& cache, int box_index, int target_class,
                                     ScoreKind kind) const override;

  const std::vector<Level>& levels() const { return levels_; }

  /// Maps a raw row index to (level, cell row, cell col).
  struct Cell {
    int level = 0;
    int row = 0;
    int col = 0;
  };
  Cell cell_of(int box_index) const;
  int row_of(const Cell& cell) const;

 protected:
  using Detector::Detector;
  int grid_height(int level) const { return spec_.input_height / levels_[level].stride; }
  int grid_width(int level) const { return spec_.input_width / levels_[level].stride; }

  std::vector<Level> levels_;
};

/// Small single-head detector used for desk-scale verification.
/// Backbone of three stride-2 convolutions (total stride 8), then a
/// classification branch and a regression branch.
class ToyDetector final : public DenseHeadDetector {
 public:
  explicit ToyDetector(DetectorSpec spec);
  ModelKind kind() const override { return ModelKind::Toy; }
  std::unique_ptr<Detector> clone() const override {
    return std::make_unique<ToyDetector>(*this);
  }

  static constexpr const char* kHeadLayer = "head.cls_conv";
};

/// YOLOX-style one-stage detector with three head branches at strides
/// 8, 16 and 32. Each branch has a shared 1x1 stem, then separate
/// classification and regression convolutions.
class YoloxDetector final : public DenseHeadDetector {
 public:
  explicit YoloxDetector(DetectorSpec spec);
  ModelKind kind() const override { return ModelKind::OneStage; }
  std::unique_ptr<Detector> clone() const override {
    return std::make_unique<YoloxDetector>(*this);
  }
};

/// Two-stage detector: backbone, four-level FPN (P2-P5), per-level RPN, and
/// an ROI head that average-pools a 2x2 grid from the proposal's FPN level
/// and classifies it with two dense layers.
class TwoStageDetector final : public Detector {
 public:
  explicit TwoStageDetector(DetectorSpec spec);
  ModelKind kind() const override { return ModelKind::TwoStage; }
  std::unique_ptr<Detector> clone() const override {
    return std::make_unique<TwoStageDetector>(*this);
  }

  ForwardCache forward(const ImageInput& image) const override;
  std::vector<Tensor> backward_score(const ForwardCache& cache, int box_index, int target_class,
                                     ScoreKind kind) const override;

  std::vector<const Layer*> layers() const override;
  std::vector<Layer*> mutable_layers() override;

  static constexpr int kLevels = 4;
  static constexpr int kFpnChannels = 16;
  static constexpr int kMaxProposals = 32;

 private:
  struct LevelNodes {
    int stride = 4;
    int fpn_out = -1;
    int rpn_obj = -1;
    int rpn_box = -1;
  };

  std::vector<LevelNodes> levels_;
  Layer fc1_;
  Layer cls_;
};

}  // namespace gcame
