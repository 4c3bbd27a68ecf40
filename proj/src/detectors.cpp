#include "gcame/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gcame/error.hpp"

namespace gcame {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// d sigmoid / dx from the logit. p * (1 - p) rounds to 0 once p == 1.0.
double sigmoid_slope(double x) {
  const double e = std::exp(-std::abs(x));
  return e / ((1.0 + e) * (1.0 + e));
}

constexpr double kMaxLogDistance = 6.0;

void check_target(const ForwardCache& cache, int box_index, int target_class, int num_classes) {
  if (box_index < 0 || box_index >= static_cast<int>(cache.raw.rows.size()))
    throw LookupError("box index " + std::to_string(box_index) + " out of range (" +
                      std::to_string(cache.raw.rows.size()) + " rows)");
  if (target_class < 0 || target_class >= num_classes)
    throw LookupError("target class " + std::to_string(target_class) + " out of range (C=" +
                      std::to_string(num_classes) + ")");
}

}  // namespace

// ------------------------------------------------------------- dense head

DenseHeadDetector::Cell DenseHeadDetector::cell_of(int box_index) const {
  int offset = box_index;
  for (int l = 0; l < static_cast<int>(levels_.size()); ++l) {
    const int n = grid_height(l) * grid_width(l);
    if (offset < n) return {l, offset / grid_width(l), offset % grid_width(l)};
    offset -= n;
  }
  throw LookupError("box index " + std::to_string(box_index) + " out of range");
}

int DenseHeadDetector::row_of(const Cell& cell) const {
  int offset = 0;
  for (int l = 0; l < cell.level; ++l) offset += grid_height(l) * grid_width(l);
  return offset + cell.row * grid_width(cell.level) + cell.col;
}

ForwardCache DenseHeadDetector::forward(const ImageInput& image) const {
  check_input(image);
  ForwardCache cache;
  cache.activations = graph_.forward(image.pixels);
  cache.raw.num_classes = spec_.num_classes;
  const double img_w = spec_.input_width;
  const double img_h = spec_.input_height;
  for (const Level& lv : levels_) {
    const Tensor& cls = cache.activations[lv.cls_pred];
    const Tensor& reg = cache.activations[lv.reg_pred];
    const Tensor& obj = cache.activations[lv.obj_pred];
    for (int y = 0; y < cls.height; ++y) {
      for (int x = 0; x < cls.width; ++x) {
        const double cx = (x + 0.5) * lv.stride;
        const double cy = (y + 0.5) * lv.stride;
        auto dist = [&](int k) {
          return std::exp(std::clamp(reg.at(k, y, x), -kMaxLogDistance, kMaxLogDistance)) *
                 lv.stride;
        };
        std::vector<double> row;
        row.reserve(5 + spec_.num_classes);
        row.push_back(std::clamp(cx - dist(0), 0.0, img_w));
        row.push_back(std::clamp(cy - dist(1), 0.0, img_h));
        row.push_back(std::clamp(cx + dist(2), 0.0, img_w));
        row.push_back(std::clamp(cy + dist(3), 0.0, img_h));
        row.push_back(sigmoid(obj.at(0, y, x)));
        for (int c = 0; c < spec_.num_classes; ++c) row.push_back(sigmoid(cls.at(c, y, x)));
        cache.raw.rows.push_back(std::move(row));
      }
    }
  }
  return cache;
}

std::vector<Tensor> DenseHeadDetector::backward_score(const ForwardCache& cache, int box_index,
                                                      int target_class, ScoreKind kind) const {
  check_target(cache, box_index, target_class, spec_.num_classes);
  const Cell cell = cell_of(box_index);
  const Level& lv = levels_[cell.level];
  const auto& row = cache.raw.rows[box_index];
  const double p = row[5 + target_class];
  const double o = row[4];

  std::vector<Tensor> grads(graph_.nodes().size());
  const Tensor& cls = cache.activations[lv.cls_pred];
  grads[lv.cls_pred] = Tensor(cls.channels, cls.height, cls.width);
  double cls_seed = sigmoid_slope(cls.at(target_class, cell.row, cell.col));
  if (kind == ScoreKind::ObjectnessWeighted) {
    cls_seed *= o;
    const Tensor& obj = cache.activations[lv.obj_pred];
    grads[lv.obj_pred] = Tensor(obj.channels, obj.height, obj.width);
    grads[lv.obj_pred].at(0, cell.row, cell.col) = p * sigmoid_slope(obj.at(0, cell.row, cell.col));
  }
  grads[lv.cls_pred].at(target_class, cell.row, cell.col) = cls_seed;
  graph_.backward(Tensor{}, cache.activations, grads, nullptr);
  return grads;
}

// --------------------------------------------------------------- toy model

ToyDetector::ToyDetector(DetectorSpec spec) : DenseHeadDetector(std::move(spec)) {
  const int c = spec_.num_classes;
  int x = graph_.add_conv(make_conv("backbone.conv1", LayerRole::Backbone, 3, 16, 3, 2, true),
                          ConvGraph::kImage);
  x = graph_.add_conv(make_conv("backbone.conv2", LayerRole::Backbone, 16, 32, 3, 2, true), x);
  x = graph_.add_conv(make_conv("backbone.conv3", LayerRole::Backbone, 32, 32, 3, 2, true), x);
  const int cls_conv =
      graph_.add_conv(make_conv(kHeadLayer, LayerRole::ClsBranch, 32, 32, 3, 1, true), x);
  const int reg_conv =
      graph_.add_conv(make_conv("head.reg_conv", LayerRole::RegBranch, 32, 32, 3, 1, true), x);
  Level lv;
  lv.stride = 8;
  lv.cls_pred = graph_.add_conv(
      make_conv("head.cls_pred", LayerRole::ClsPred, 32, c, 1, 1, false), cls_conv);
  lv.reg_pred = graph_.add_conv(
      make_conv("head.reg_pred", LayerRole::RegPred, 32, 4, 1, 1, false), reg_conv);
  lv.obj_pred = graph_.add_conv(
      make_conv("head.obj_pred", LayerRole::ObjPred, 32, 1, 1, 1, false), reg_conv);
  levels_.push_back(lv);
  init_weights();
}

// ----------------------------------------------------------- YOLOX-style

YoloxDetector::YoloxDetector(DetectorSpec spec) : DenseHeadDetector(std::move(spec)) {
  const int c = spec_.num_classes;
  int x = graph_.add_conv(make_conv("backbone.stem", LayerRole::Backbone, 3, 8, 3, 2, true),
                          ConvGraph::kImage);
  x = graph_.add_conv(make_conv("backbone.dark2", LayerRole::Backbone, 8, 16, 3, 2, true), x);
  const int dark3 =
      graph_.add_conv(make_conv("backbone.dark3", LayerRole::Backbone, 16, 24, 3, 2, true), x);
  const int dark4 =
      graph_.add_conv(make_conv("backbone.dark4", LayerRole::Backbone, 24, 32, 3, 2, true), dark3);
  const int dark5 =
      graph_.add_conv(make_conv("backbone.dark5", LayerRole::Backbone, 32, 32, 3, 2, true), dark4);
  const int feats[3] = {dark3, dark4, dark5};
  const int in_ch[3] = {24, 32, 32};
  for (int i = 0; i < 3; ++i) {
    const std::string s = "." + std::to_string(i);
    const int stem = graph_.add_conv(
        make_conv("head.stems" + s, LayerRole::Neck, in_ch[i], 16, 1, 1, true), feats[i]);
    const int cls_conv = graph_.add_conv(
        make_conv("head.cls_convs" + s, LayerRole::ClsBranch, 16, 16, 3, 1, true), stem);
    const int reg_conv = graph_.add_conv(
        make_conv("head.reg_convs" + s, LayerRole::RegBranch, 16, 16, 3, 1, true), stem);
    Level lv;
    lv.stride = 8 << i;
    lv.cls_pred = graph_.add_conv(
        make_conv("head.cls_preds" + s, LayerRole::ClsPred, 16, c, 1, 1, false), cls_conv);
    lv.reg_pred = graph_.add_conv(
        make_conv("head.reg_preds" + s, LayerRole::RegPred, 16, 4, 1, 1, false), reg_conv);
    lv.obj_pred = graph_.add_conv(
        make_conv("head.obj_preds" + s, LayerRole::ObjPred, 16, 1, 1, 1, false), reg_conv);
    levels_.push_back(lv);
  }
  init_weights();
}

// -------------------------------------------------------------- two-stage

namespace {

struct Proposal {
  int level = 0;      // RPN level that produced the proposal
  int roi_level = 0;  // FPN level the ROI is pooled from
  int cell_y = 0;
  int cell_x = 0;
  Box box;
  double objectness = 0.0;
  // ROI pooling bookkeeping: flat feature-pixel indices (y * w + x) per bin.
  std::vector<std::vector<int>> bins;
  std::vector<double> pooled;
  std::vector<double> hidden;  // fc1 output after ReLU
  std::vector<double> probs;   // softmax over background + C
};

struct TwoStageAux {
  std::vector<Proposal> proposals;
};

std::vector<double> softmax(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double sum = 0;
  for (std::size_t i = 0; i < z.size(); ++i) sum += (p[i] = std::exp(z[i] - m));
  for (double& v : p) v /= sum;
  return p;
}

}  // namespace

TwoStageDetector::TwoStageDetector(DetectorSpec spec) : Detector(std::move(spec)) {
  int x = graph_.add_conv(make_conv("backbone.conv1", LayerRole::Backbone, 3, 8, 3, 2, true),
                          ConvGraph::kImage);
  const int widths[kLevels] = {16, 24, 32, 32};
  int c_nodes[kLevels];
  int prev_ch = 8;
  for (int i = 0; i < kLevels; ++i) {
    x = graph_.add_conv(make_conv("backbone.c" + std::to_string(i + 2), LayerRole::Backbone,
                                  prev_ch, widths[i], 3, 2, true),
                        x);
    c_nodes[i] = x;
    prev_ch = widths[i];
  }
  int inner[kLevels];
  for (int i = 0; i < kLevels; ++i)
    inner[i] = graph_.add_conv(make_conv("fpn.inner." + std::to_string(i), LayerRole::Neck,
                                         widths[i], kFpnChannels, 1, 1, false),
                               c_nodes[i]);
  int merged[kLevels];
  merged[kLevels - 1] = inner[kLevels - 1];
  for (int i = kLevels - 2; i >= 0; --i)
    merged[i] = graph_.add_upsample_add("fpn.merge." + std::to_string(i), inner[i], merged[i + 1]);
  for (int i = 0; i < kLevels; ++i) {
    const std::string s = "." + std::to_string(i);
    LevelNodes lv;
    lv.stride = 4 << i;
    lv.fpn_out = graph_.add_conv(
        make_conv("fpn.layer" + s, LayerRole::Neck, kFpnChannels, kFpnChannels, 3, 1, false),
        merged[i]);
    const int rpn = graph_.add_conv(
        make_conv("rpn.conv" + s, LayerRole::Rpn, kFpnChannels, kFpnChannels, 3, 1, true),
        lv.fpn_out);
    lv.rpn_obj = graph_.add_conv(make_conv("rpn.obj" + s, LayerRole::Rpn, kFpnChannels, 1, 1, 1,
                                           false),
                                 rpn);
    lv.rpn_box = graph_.add_conv(make_conv("rpn.box" + s, LayerRole::Rpn, kFpnChannels, 4, 1, 1,
                                           false),
                                 rpn);
    levels_.push_back(lv);
  }
  fc1_ = make_linear("roi.fc1", LayerRole::RoiHead, kFpnChannels * 4, 32);
  fc1_.relu = true;
  cls_ = make_linear("roi.cls", LayerRole::RoiHead, 32, spec_.num_classes + 1);
  init_weights();
}

std::vector<const Layer*> TwoStageDetector::layers() const {
  auto out = Detector::layers();
  out.push_back(&fc1_);
  out.push_back(&cls_);
  return out;
}

std::vector<Layer*> TwoStageDetector::mutable_layers() {
  auto out = Detector::mutable_layers();
  out.push_back(&fc1_);
  out.push_back(&cls_);
  return out;
}

ForwardCache TwoStageDetector::forward(const ImageInput& image) const {
  check_input(image);
  ForwardCache cache;
  cache.activations = graph_.forward(image.pixels);
  const double img_w = spec_.input_width;
  const double img_h = spec_.input_height;

  // Region proposals: one square anchor of side 4 * stride per cell.
  std::vector<Proposal> candidates;
  for (int l = 0; l < kLevels; ++l) {
    const LevelNodes& lv = levels_[l];
    const Tensor& obj = cache.activations[lv.rpn_obj];
    const Tensor& deltas = cache.activations[lv.rpn_box];
    const double anchor = 4.0 * lv.stride;
    for (int y = 0; y < obj.height; ++y) {
      for (int x = 0; x < obj.width; ++x) {
        const double cx = (x + 0.5) * lv.stride + deltas.at(0, y, x) * anchor;
        const double cy = (y + 0.5) * lv.stride + deltas.at(1, y, x) * anchor;
        const double w = anchor * std::exp(std::clamp(deltas.at(2, y, x), -3.0, 3.0));
        const double h = anchor * std::exp(std::clamp(deltas.at(3, y, x), -3.0, 3.0));
        Proposal p;
        p.level = l;
        p.cell_y = y;
        p.cell_x = x;
        p.box = {std::clamp(cx - w / 2, 0.0, img_w), std::clamp(cy - h / 2, 0.0, img_h),
                 std::clamp(cx + w / 2, 0.0, img_w), std::clamp(cy + h / 2, 0.0, img_h)};
        p.objectness = sigmoid(obj.at(0, y, x));
        if (p.box.width() >= 1.0 && p.box.height() >= 1.0) candidates.push_back(std::move(p));
      }
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Proposal& a, const Proposal& b) { return a.objectness > b.objectness; });
  TwoStageAux aux;
  for (auto& p : candidates) {
    if (static_cast<int>(aux.proposals.size()) >= kMaxProposals) break;
    const bool overlaps = std::any_of(aux.proposals.begin(), aux.proposals.end(),
                                      [&](const Proposal& k) { return pairwise_iou(k.box, p.box) > 0.7; });
    if (!overlaps) aux.proposals.push_back(std::move(p));
  }

  // ROI head.
  cache.raw.num_classes = spec_.num_classes;
  for (Proposal& p : aux.proposals) {
    const double scale = std::sqrt(p.box.area());
    const int level = std::clamp(
        static_cast<int>(std::floor(std::log2(std::max(scale, 1.0) / 16.0))), 0, kLevels - 1);
    p.roi_level = level;
    const int stride = levels_[level].stride;
    const Tensor& feat = cache.activations[levels_[level].fpn_out];
    p.bins.assign(4, {});
    p.pooled.assign(static_cast<std::size_t>(kFpnChannels) * 4, 0.0);
    for (int by = 0; by < 2; ++by) {
      for (int bx = 0; bx < 2; ++bx) {
        const double x0 = p.box.x1 + bx * p.box.width() / 2, x1 = x0 + p.box.width() / 2;
        const double y0 = p.box.y1 + by * p.box.height() / 2, y1 = y0 + p.box.height() / 2;
        auto& bin = p.bins[by * 2 + bx];
        for (int fy = 0; fy < feat.height; ++fy) {
          const double py = (fy + 0.5) * stride;
          if (py < y0 || py >= y1) continue;
          for (int fx = 0; fx < feat.width; ++fx) {
            const double px = (fx + 0.5) * stride;
            if (px >= x0 && px < x1) bin.push_back(fy * feat.width + fx);
          }
        }
        if (bin.empty()) {
          const int fx = std::clamp(static_cast<int>((x0 + x1) / 2 / stride), 0, feat.width - 1);
          const int fy = std::clamp(static_cast<int>((y0 + y1) / 2 / stride), 0, feat.height - 1);
          bin.push_back(fy * feat.width + fx);
        }
        for (int c = 0; c < kFpnChannels; ++c) {
          double acc = 0.0;
          for (int idx : bin) acc += feat.plane(c)[idx];
          p.pooled[c * 4 + by * 2 + bx] = acc / static_cast<double>(bin.size());
        }
      }
    }
    p.hidden = linear_forward(fc1_, p.pooled);
    for (double& v : p.hidden) v = std::max(v, 0.0);
    p.probs = softmax(linear_forward(cls_, p.hidden));
    std::vector<double> row = {p.box.x1, p.box.y1, p.box.x2, p.box.y2, p.objectness};
    row.insert(row.end(), p.probs.begin() + 1, p.probs.end());
    cache.raw.rows.push_back(std::move(row));
  }
  cache.aux = std::move(aux);
  return cache;
}

std::vector<Tensor> TwoStageDetector::backward_score(const ForwardCache& cache, int box_index,
                                                     int target_class, ScoreKind kind) const {
  check_target(cache, box_index, target_class, spec_.num_classes);
  const auto* aux = std::any_cast<TwoStageAux>(&cache.aux);
  if (!aux)
    throw NotDifferentiableError(
        "score accessor 'roi.cls' has no retained ROI state; run forward() on this model first");
  const Proposal& p = aux->proposals.at(box_index);
  const int k = target_class + 1;
  const double pc = p.probs[k];
  const double weight = kind == ScoreKind::ObjectnessWeighted ? p.objectness : 1.0;

  std::vector<double> g_logits(p.probs.size());
  for (std::size_t i = 0; i < p.probs.size(); ++i)
    g_logits[i] = weight * pc * ((static_cast<int>(i) == k ? 1.0 : 0.0) - p.probs[i]);
  std::vector<double> g_hidden = linear_backward_input(cls_, g_logits);
  for (std::size_t i = 0; i < g_hidden.size(); ++i)
    if (p.hidden[i] <= 0.0) g_hidden[i] = 0.0;
  const std::vector<double> g_pooled = linear_backward_input(fc1_, g_hidden);

  std::vector<Tensor> grads(graph_.nodes().size());
  const int fpn = levels_[p.roi_level].fpn_out;
  const Tensor& feat = cache.activations[fpn];
  grads[fpn] = Tensor(feat.channels, feat.height, feat.width);
  for (int b = 0; b < 4; ++b) {
    const auto& bin = p.bins[b];
    const double share = 1.0 / static_cast<double>(bin.size());
    for (int c = 0; c < kFpnChannels; ++c)
      for (int idx : bin) grads[fpn].plane(c)[idx] += g_pooled[c * 4 + b] * share;
  }
  if (kind == ScoreKind::ObjectnessWeighted) {
    // Proposal geometry is treated as constant; only the RPN logit is differentiated.
    const int obj = levels_[p.level].rpn_obj;
    const Tensor& o = cache.activations[obj];
    grads[obj] = Tensor(o.channels, o.height, o.width);
    grads[obj].at(0, p.cell_y, p.cell_x) = pc * sigmoid_slope(o.at(0, p.cell_y, p.cell_x));
  }
  graph_.backward(Tensor{}, cache.activations, grads, nullptr);
  return grads;
}

}  // namespace gcame
