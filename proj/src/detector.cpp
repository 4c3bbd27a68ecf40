#include "gcame/detector.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

#include "gcame/detectors.hpp"
#include "gcame/error.hpp"

namespace gcame {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::OneStage: return "one_stage";
    case ModelKind::TwoStage: return "two_stage";
    case ModelKind::Toy: return "toy";
  }
  return "unknown";
}

ModelKind model_kind_from_string(std::string_view s) {
  if (s == "one_stage") return ModelKind::OneStage;
  if (s == "two_stage") return ModelKind::TwoStage;
  if (s == "toy") return ModelKind::Toy;
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- Detector

std::vector<Detection> Detector::postprocess(const RawOutput& raw, double threshold) const {
  return non_max_suppression(parse_detections(raw, threshold), nms_iou);
}

std::vector<const Layer*> Detector::layers() const {
  std::vector<const Layer*> out;
  for (const Layer& l : graph_.layers()) out.push_back(&l);
  return out;
}

std::vector<Layer*> Detector::mutable_layers() {
  std::vector<Layer*> out;
  for (Layer& l : graph_.layers()) out.push_back(&l);
  return out;
}

const Layer* Detector::find_layer(std::string_view name) const {
  for (const Layer* l : layers())
    if (l->name == name) return l;
  return nullptr;
}

Layer* Detector::find_layer(std::string_view name) {
  for (Layer* l : mutable_layers())
    if (l->name == name) return l;
  return nullptr;
}

int Detector::branch_of(const Layer& layer) const {
  if (layer.role == LayerRole::Backbone) return -1;
  const auto dot = layer.name.rfind('.');
  if (dot == std::string::npos || dot + 1 >= layer.name.size()) return -1;
  const std::string tail = layer.name.substr(dot + 1);
  if (!std::all_of(tail.begin(), tail.end(), [](char c) { return c >= '0' && c <= '9'; }))
    return -1;
  return std::stoi(tail);
}

std::vector<LayerInfo> Detector::layer_infos() const {
  const auto& nodes = graph_.nodes();
  std::vector<int> node_stride(nodes.size(), 1);
  std::vector<LayerInfo> infos;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    const int in_stride = n.input == ConvGraph::kImage ? 1 : node_stride[n.input];
    if (n.op == ConvGraph::Op::Conv) {
      const Layer& l = graph_.layers()[n.layer];
      node_stride[i] = in_stride * l.stride;
      infos.push_back({l.name, l.kind, l.role, node_stride[i], branch_of(l)});
    } else {
      node_stride[i] = in_stride;
    }
  }
  const auto all = layers();
  for (std::size_t i = graph_.layers().size(); i < all.size(); ++i)
    infos.push_back({all[i]->name, all[i]->kind, all[i]->role, 0, branch_of(*all[i])});
  return infos;
}

std::uint64_t Detector::weight_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Layer* l : layers()) {
    h ^= hash_layer(*l);
    h *= 1099511628211ULL;
  }
  return h;
}

int Detector::node_index(const std::string& layer_name) const {
  const auto idx = graph_.find_node(layer_name);
  if (!idx) throw LookupError("model has no layer '" + layer_name + "'");
  return *idx;
}

void Detector::check_input(const ImageInput& image) const {
  validate(image);
  if (image.height() != spec_.input_height || image.width() != spec_.input_width)
    throw ConfigError("model expects " + std::to_string(spec_.input_height) + "x" +
                      std::to_string(spec_.input_width) + " input, got " +
                      std::to_string(image.height()) + "x" + std::to_string(image.width()));
}

void Detector::init_weights() {
  std::mt19937_64 rng(spec_.seed);
  for (Layer* l : mutable_layers()) init_he_normal(*l, rng);
}

// ------------------------------------------------------- target layer choice

TargetLayerSet select_target_layers(const Detector& model, ModelKind kind, OneStageHook hook) {
  const auto infos = model.layer_infos();
  if (std::none_of(infos.begin(), infos.end(),
                   [](const LayerInfo& i) { return i.kind == LayerKind::Conv; }))
    throw UnsupportedArchitectureError("model has no convolution layers");

  LayerRole wanted = LayerRole::ClsBranch;
  if (kind == ModelKind::TwoStage || hook == OneStageHook::SharedStem) wanted = LayerRole::Neck;

  // Last matching convolution per branch, branches in order of appearance.
  std::vector<int> branch_order;
  std::map<int, const LayerInfo*> last;
  for (const LayerInfo& info : infos) {
    if (info.kind != LayerKind::Conv || info.role != wanted || info.stride <= 0) continue;
    if (!last.contains(info.branch)) branch_order.push_back(info.branch);
    last[info.branch] = &info;
  }
  if (branch_order.empty())
    throw UnsupportedArchitectureError(std::string("no ") + std::string(to_string(wanted)) +
                                       " convolution found for " +
                                       std::string(to_string(kind)) + " target selection");
  TargetLayerSet set;
  for (int b : branch_order) {
    set.layer_ids.push_back(last[b]->name);
    set.strides.push_back(last[b]->stride);
  }
  return set;
}

// ---------------------------------------------------------- capture session

CaptureSession::CaptureSession(const Detector& model, ImageInput image, TargetLayerSet layers,
                               ForwardCache cache)
    : model_(&model), image_(std::move(image)), layers_(std::move(layers)),
      cache_(std::move(cache)) {}

const Tensor& CaptureSession::activation(const std::string& layer_id) const {
  if (std::find(layers_.layer_ids.begin(), layers_.layer_ids.end(), layer_id) ==
      layers_.layer_ids.end())
    throw LookupError("layer '" + layer_id + "' is not a target layer of this session");
  return cache_.activations.at(model_->node_index(layer_id));
}

ForwardCapture forward_with_capture(const Detector& model, const ImageInput& image,
                                    const TargetLayerSet& layers, double threshold) {
  if (layers.layer_ids.empty()) throw ConfigError("target layer set is empty");
  for (const auto& id : layers.layer_ids) model.node_index(id);
  ForwardCache cache;
  try {
    cache = model.forward(image);
  } catch (const Error& e) {
    throw StageError("forward(" + std::string(to_string(model.kind())) + ")", e.what());
  }
  auto dets = model.postprocess(cache.raw, threshold);
  return {std::move(dets), CaptureSession(model, image, layers, std::move(cache))};
}

// ------------------------------------------------------- factory and files

std::unique_ptr<Detector> make_detector(const DetectorSpec& spec) {
  if (spec.num_classes < 1) throw ConfigError("detector needs at least one class");
  if (spec.input_height % 32 != 0 || spec.input_width % 32 != 0)
    throw ConfigError("detector input size must be a multiple of 32");
  if (spec.adapter == "toy") return std::make_unique<ToyDetector>(spec);
  if (spec.adapter == "yolox") return std::make_unique<YoloxDetector>(spec);
  if (spec.adapter == "fasterrcnn") return std::make_unique<TwoStageDetector>(spec);
  throw ConfigError("unknown detector adapter '" + spec.adapter +
                    "' (expected toy, yolox or fasterrcnn)");
}

std::unique_ptr<Detector> build_toy_detector(const DetectorSpec& spec) {
  DetectorSpec s = spec;
  if (s.adapter != "toy") throw ConfigError("build_toy_detector requires adapter 'toy'");
  return make_detector(s);
}

namespace {

constexpr char kMagic[8] = {'G', 'C', 'A', 'M', 'E', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_doubles(std::ostream& os, const std::vector<double>& v) {
  put<std::uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("checkpoint truncated");
  return v;
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > (1u << 16)) throw FormatError("checkpoint string too long");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw FormatError("checkpoint truncated");
  return s;
}

std::vector<double> get_doubles(std::istream& is, std::size_t expected, const std::string& what) {
  const auto n = get<std::uint64_t>(is);
  if (n != expected)
    throw ConfigError("checkpoint " + what + " has " + std::to_string(n) +
                      " values, model expects " + std::to_string(expected));
  std::vector<double> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw FormatError("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const Detector& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  const DetectorSpec& s = model.spec();
  put_string(os, s.adapter);
  put<std::int32_t>(os, s.input_height);
  put<std::int32_t>(os, s.input_width);
  put<std::int32_t>(os, s.num_classes);
  put<std::uint64_t>(os, s.seed);
  const auto layers = model.layers();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(layers.size()));
  for (const Layer* l : layers) {
    put_string(os, l->name);
    put<std::int32_t>(os, l->in_channels);
    put<std::int32_t>(os, l->out_channels);
    put<std::int32_t>(os, l->kernel);
    put_doubles(os, l->weight);
    put_doubles(os, l->bias);
  }
  if (!os) throw Error("failed writing checkpoint '" + path.string() + "'");
}

std::unique_ptr<Detector> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError("'" + path.string() + "' is not a detector checkpoint");
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  DetectorSpec spec;
  spec.adapter = get_string(is);
  spec.input_height = get<std::int32_t>(is);
  spec.input_width = get<std::int32_t>(is);
  spec.num_classes = get<std::int32_t>(is);
  spec.seed = get<std::uint64_t>(is);
  auto model = make_detector(spec);
  const auto layers = model->mutable_layers();
  const auto n = get<std::uint32_t>(is);
  if (n != layers.size())
    throw ConfigError("checkpoint has " + std::to_string(n) + " layers, '" + spec.adapter +
                      "' expects " + std::to_string(layers.size()));
  for (Layer* l : layers) {
    const std::string name = get_string(is);
    const int in = get<std::int32_t>(is);
    const int out = get<std::int32_t>(is);
    const int k = get<std::int32_t>(is);
    if (name != l->name || in != l->in_channels || out != l->out_channels || k != l->kernel)
      throw ConfigError("checkpoint layer '" + name + "' does not match model layer '" +
                        l->name + "'");
    l->weight = get_doubles(is, l->weight.size(), name + ".weight");
    l->bias = get_doubles(is, l->bias.size(), name + ".bias");
  }
  return model;
}

std::unique_ptr<Detector> load_checkpoint(const std::filesystem::path& path,
                                          const DetectorSpec& expected) {
  auto model = load_checkpoint(path);
  const DetectorSpec& got = model->spec();
  if (got.adapter != expected.adapter || got.input_height != expected.input_height ||
      got.input_width != expected.input_width || got.num_classes != expected.num_classes)
    throw ConfigError("checkpoint spec (" + got.adapter + ", " +
                      std::to_string(got.input_height) + "x" + std::to_string(got.input_width) +
                      ", C=" + std::to_string(got.num_classes) + ") does not match requested (" +
                      expected.adapter + ", " + std::to_string(expected.input_height) + "x" +
                      std::to_string(expected.input_width) +
                      ", C=" + std::to_string(expected.num_classes) + ")");
  return model;
}

}  // namespace gcame
