#include "gcame/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gcame/error.hpp"

namespace gcame {

static_assert(std::endian::native == std::endian::little, "saliency binaries are little-endian");

namespace {

std::filesystem::path sidecar(const std::filesystem::path& bin) {
  return std::filesystem::path(bin.string() + ".json");
}

std::string_view score_kind_name(ScoreKind k) {
  return k == ScoreKind::ClassScore ? "class_score" : "objectness_weighted";
}

ScoreKind score_kind_from(const std::string& s) {
  if (s == "class_score") return ScoreKind::ClassScore;
  if (s == "objectness_weighted") return ScoreKind::ObjectnessWeighted;
  throw FormatError("unknown score kind '" + s + "'");
}

}  // namespace

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void save_saliency(const SaliencyMap& map, const std::filesystem::path& bin_path) {
  validate(map);
  std::vector<std::uint8_t> bytes(map.values.size() * sizeof(float));
  std::memcpy(bytes.data(), map.values.data(), bytes.size());
  write_bytes(bin_path, bytes);

  const Detection& d = map.target.detection;
  nlohmann::ordered_json doc;
  doc["schema_version"] = "v1";
  doc["dtype"] = "float32";
  doc["order"] = "row-major";
  doc["height"] = map.height;
  doc["width"] = map.width;
  doc["method_tag"] = map.method_tag;
  doc["target"] = {{"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
                   {"objectness", d.objectness},
                   {"class_scores", d.class_scores},
                   {"class_index", d.class_index},
                   {"box_index", d.box_index},
                   {"target_class", map.target.target_class},
                   {"score_kind", std::string(score_kind_name(map.target.score_kind))}};
  doc["sigmas"] = map.sigmas;
  doc["layer_ids"] = map.layer_ids;
  doc["flags"] = map.flags;
  const std::string text = doc.dump(2) + "\n";
  write_bytes(sidecar(bin_path), {text.begin(), text.end()});
}

SaliencyMap load_saliency(const std::filesystem::path& bin_path) {
  const auto meta_bytes = read_bytes(sidecar(bin_path));
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(meta_bytes.begin(), meta_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("saliency sidecar is not valid JSON: " + std::string(e.what()));
  }
  SaliencyMap map;
  try {
    if (doc.at("dtype") != "float32") throw FormatError("saliency dtype must be float32");
    map.height = doc.at("height").get<int>();
    map.width = doc.at("width").get<int>();
    map.method_tag = doc.at("method_tag").get<std::string>();
    const auto& t = doc.at("target");
    const auto box = t.at("box").get<std::vector<double>>();
    if (box.size() != 4) throw FormatError("target box must have 4 values");
    Detection& d = map.target.detection;
    d.box = {box[0], box[1], box[2], box[3]};
    d.objectness = t.at("objectness").get<double>();
    d.class_scores = t.at("class_scores").get<std::vector<double>>();
    d.class_index = t.at("class_index").get<int>();
    d.box_index = t.at("box_index").get<int>();
    map.target.target_class = t.at("target_class").get<int>();
    map.target.score_kind = score_kind_from(t.at("score_kind").get<std::string>());
    map.sigmas = doc.at("sigmas").get<std::vector<double>>();
    map.layer_ids = doc.at("layer_ids").get<std::vector<std::string>>();
    map.flags = doc.at("flags").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed saliency sidecar: " + std::string(e.what()));
  }
  const auto bytes = read_bytes(bin_path);
  const std::size_t n = static_cast<std::size_t>(map.height) * map.width;
  if (bytes.size() != n * sizeof(float))
    throw FormatError("saliency binary holds " + std::to_string(bytes.size()) +
                      " bytes, expected " + std::to_string(n * sizeof(float)));
  map.values.resize(n);
  std::memcpy(map.values.data(), bytes.data(), bytes.size());
  validate(map);
  return map;
}

cv::Mat to_bgr(const ImageInput& image) {
  const Tensor& p = image.pixels;
  cv::Mat bgr(p.height, p.width, CV_8UC3);
  for (int y = 0; y < p.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < p.width; ++x)
      for (int c = 0; c < 3; ++c)
        row[x][2 - c] = cv::saturate_cast<uchar>(std::lround(p.at(c, y, x) * 255.0));
  }
  return bgr;
}

cv::Mat colorize(const SaliencyMap& map) {
  cv::Mat gray(map.height, map.width, CV_8UC1);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x)
      gray.at<uchar>(y, x) = cv::saturate_cast<uchar>(std::lround(map.at(y, x) * 255.0));
  cv::Mat heat;
  cv::applyColorMap(gray, heat, cv::COLORMAP_JET);
  return heat;
}

cv::Mat overlay_image(const ImageInput& image, const SaliencyMap& map, const Detection& detection,
                      const std::vector<std::string>& class_names) {
  if (map.height != image.height() || map.width != image.width())
    throw ConfigError("saliency map is " + std::to_string(map.height) + "x" +
                      std::to_string(map.width) + " but the image is " +
                      std::to_string(image.height()) + "x" + std::to_string(image.width()));
  cv::Mat out = to_bgr(image);
  const cv::Mat heat = colorize(map);
  for (int y = 0; y < out.rows; ++y)
    for (int x = 0; x < out.cols; ++x) {
      const double a = kOverlayAlpha * map.at(y, x);
      if (a <= 0.0) continue;
      auto& px = out.at<cv::Vec3b>(y, x);
      const auto& h = heat.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c)
        px[c] = cv::saturate_cast<uchar>(std::lround((1.0 - a) * px[c] + a * h[c]));
    }
  const Box& b = detection.box;
  const cv::Point p1(static_cast<int>(std::lround(b.x1)), static_cast<int>(std::lround(b.y1)));
  const cv::Point p2(static_cast<int>(std::lround(b.x2)) - 1,
                     static_cast<int>(std::lround(b.y2)) - 1);
  const cv::Scalar green(0, 255, 0);
  cv::rectangle(out, p1, p2, green, 1, cv::LINE_8);
  const int cls = detection.class_index;
  std::string label = cls >= 0 && cls < static_cast<int>(class_names.size())
                          ? class_names[cls]
                          : "class " + std::to_string(cls);
  if (!detection.class_scores.empty()) {
    char buf[16];
    std::snprintf(buf, sizeof buf, " %.2f", detection.class_score());
    label += buf;
  }
  const int ty = p1.y >= 10 ? p1.y - 3 : std::min(out.rows - 2, p2.y + 10);
  cv::putText(out, label, {p1.x, ty}, cv::FONT_HERSHEY_SIMPLEX, 0.3, green, 1, cv::LINE_8);
  return out;
}

std::vector<std::uint8_t> render_overlay(const ImageInput& image, const SaliencyMap& map,
                                         const Detection& detection,
                                         const std::vector<std::string>& class_names) {
  std::vector<uchar> png;
  cv::imencode(".png", overlay_image(image, map, detection, class_names), png);
  return {png.begin(), png.end()};
}

std::vector<std::uint8_t> contact_sheet(const std::vector<cv::Mat>& panels,
                                        const std::vector<std::string>& captions, int columns) {
  if (panels.empty()) throw ConfigError("contact sheet needs at least one panel");
  if (columns < 1) throw ConfigError("contact sheet needs at least one column");
  const int ph = panels.front().rows, pw = panels.front().cols;
  constexpr int kCaption = 14, kPad = 4;
  const int n = static_cast<int>(panels.size());
  const int cols = std::min(columns, n);
  const int rows = (n + cols - 1) / cols;
  cv::Mat sheet(rows * (ph + kCaption + kPad) + kPad, cols * (pw + kPad) + kPad, CV_8UC3,
                cv::Scalar(255, 255, 255));
  for (int i = 0; i < n; ++i) {
    if (panels[i].rows != ph || panels[i].cols != pw || panels[i].type() != CV_8UC3)
      throw ConfigError("contact sheet panels must share size and type");
    const int x = kPad + (i % cols) * (pw + kPad);
    const int y = kPad + (i / cols) * (ph + kCaption + kPad);
    if (i < static_cast<int>(captions.size()))
      cv::putText(sheet, captions[i], {x, y + kCaption - 4}, cv::FONT_HERSHEY_SIMPLEX, 0.3,
                  cv::Scalar(0, 0, 0), 1, cv::LINE_8);
    panels[i].copyTo(sheet(cv::Rect(x, y + kCaption, pw, ph)));
  }
  std::vector<uchar> png;
  cv::imencode(".png", sheet, png);
  return {png.begin(), png.end()};
}

}  // namespace gcame
