#include "gcame/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gcame/error.hpp"

namespace gcame {

namespace {

void check_box(const Box& box) {
  if (!box.valid()) throw ConfigError("box must satisfy x1 < x2 and y1 < y2");
}

int pixel_budget(std::size_t n, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw ConfigError("keep fraction must lie in (0,1]");
  return static_cast<int>(std::lround(keep_fraction * static_cast<double>(n)));
}

// Pixel order by descending saliency; equal values keep row-major order.
std::vector<int> saliency_order(const SaliencyMap& map) {
  std::vector<int> idx(map.values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return map.values[a] > map.values[b]; });
  return idx;
}

cv::Mat to_bgr8(const ImageInput& image) {
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

ImageInput from_bgr8(const cv::Mat& bgr) {
  ImageInput img;
  img.pixels = Tensor(3, bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x)
      for (int c = 0; c < 3; ++c) img.pixels.at(c, y, x) = row[x][2 - c] / 255.0;
  }
  return img;
}

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

PointingResult pointing_game(const SaliencyMap& map, const Box& box) {
  check_box(box);
  PointingResult r;
  if (map.values.empty()) return r;
  const float peak = *std::max_element(map.values.begin(), map.values.end());
  if (peak <= 0.0f) {
    r.zero_map = true;
    return r;
  }
  for (int y = 0; y < map.height && !r.hit; ++y)
    for (int x = 0; x < map.width; ++x)
      if (map.at(y, x) == peak && box.contains_pixel(y, x)) {
        r.hit = true;
        break;
      }
  return r;
}

double pointing_game_score(const std::vector<bool>& hits) {
  if (hits.empty()) throw ConfigError("pointing game needs at least one result");
  return static_cast<double>(std::count(hits.begin(), hits.end(), true)) / hits.size();
}

EnergyResult energy_based_pg(const SaliencyMap& map, const Box& box) {
  check_box(box);
  double inside = 0.0, total = 0.0;
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y1 - 0.5)));
  const int y1 = std::min(map.height - 1, static_cast<int>(std::ceil(box.y2 - 0.5)));
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x1 - 0.5)));
  const int x1 = std::min(map.width - 1, static_cast<int>(std::ceil(box.x2 - 0.5)));
  for (float v : map.values) total += v;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (box.contains_pixel(y, x)) inside += map.at(y, x);
  EnergyResult r;
  if (!(total > 0.0)) {
    r.zero_energy = true;
    return r;
  }
  r.value = std::clamp(inside / total, 0.0, 1.0);
  return r;
}

std::vector<std::uint8_t> top_fraction_mask(const SaliencyMap& map, double keep_fraction,
                                            bool* degenerate) {
  const int budget = pixel_budget(map.values.size(), keep_fraction);
  const auto order = saliency_order(map);
  std::vector<std::uint8_t> mask(map.values.size(), 0);
  for (int i = 0; i < budget; ++i) mask[order[i]] = 1;
  if (degenerate) {
    *degenerate = budget > 0 && budget < static_cast<int>(order.size()) &&
                  map.values[order[budget - 1]] == map.values[order[budget]];
  }
  return mask;
}

std::vector<std::uint8_t> salient_region_mask(const SaliencyMap& map, double keep_fraction) {
  const int budget = pixel_budget(map.values.size(), keep_fraction);
  std::vector<std::uint8_t> mask(map.values.size(), 0);
  if (budget == 0) return mask;
  std::vector<float> sorted = map.values;
  std::nth_element(sorted.begin(), sorted.begin() + (budget - 1), sorted.end(),
                   std::greater<float>());
  const float threshold = sorted[budget - 1];
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = map.values[i] >= threshold && map.values[i] > 0.0f;
  return mask;
}

std::array<double, 3> channel_mean(const ImageInput& image) {
  std::array<double, 3> mean{};
  const std::size_t n = image.pixels.plane_size();
  for (int c = 0; c < 3; ++c) {
    const auto plane = image.pixels.plane(c);
    mean[c] = std::accumulate(plane.begin(), plane.end(), 0.0) / static_cast<double>(n);
  }
  return mean;
}

ImageInput perturb_image(const ImageInput& image, const std::vector<std::uint8_t>& mask,
                         const std::array<double, 3>& fill) {
  if (mask.size() != image.pixels.plane_size())
    throw ConfigError("perturbation mask does not match the image size");
  ImageInput out = image;
  for (int c = 0; c < 3; ++c) {
    auto plane = out.pixels.plane(c);
    for (std::size_t i = 0; i < plane.size(); ++i)
      if (mask[i]) plane[i] = fill[c];
  }
  return out;
}

double target_confidence(const Box& box, int target_class,
                         const std::vector<Detection>& detections) {
  double best = 0.0;
  for (const Detection& d : detections)
    best = std::max(best, pairwise_iou(box, d.box) * d.class_scores.at(target_class));
  return best;
}

double confidence_drop_from_scores(double original, double perturbed) {
  if (!(original > 0.0)) return 0.0;
  return std::max(original - perturbed, 0.0) / original * 100.0;
}

ConfidenceDropResult confidence_drop(const Detector& model, const ImageInput& image,
                                     const SaliencyMap& map, const Detection& target,
                                     const PerturbationSpec& spec, double threshold) {
  if (map.height != image.height() || map.width != image.width())
    throw ConfigError("saliency map shape does not match the image");
  ConfidenceDropResult r;
  const auto mask = top_fraction_mask(map, spec.keep_fraction, &r.degenerate);
  const auto fill = spec.fill_value.value_or(channel_mean(image));
  const ImageInput perturbed = perturb_image(image, mask, fill);

  const auto before = parse_detections(model.forward(image).raw, threshold);
  const auto after = parse_detections(model.forward(perturbed).raw, threshold);
  r.original = target_confidence(target.box, target.class_index, before);
  r.perturbed = target_confidence(target.box, target.class_index, after);
  r.no_detections = after.empty();
  r.percent = confidence_drop_from_scores(r.original, r.perturbed);
  return r;
}

ImageInput bokeh_image(const ImageInput& image, const SaliencyMap& map, double keep_fraction) {
  if (map.height != image.height() || map.width != image.width())
    throw ConfigError("saliency map shape does not match the image");
  const auto keep = salient_region_mask(map, keep_fraction);
  const cv::Mat sharp = to_bgr8(image);
  cv::Mat blurred;
  const double sigma = 0.05 * std::min(image.height(), image.width());
  cv::GaussianBlur(sharp, blurred, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT_101);
  for (int y = 0; y < sharp.rows; ++y)
    for (int x = 0; x < sharp.cols; ++x)
      if (keep[static_cast<std::size_t>(y) * sharp.cols + x])
        blurred.at<cv::Vec3b>(y, x) = sharp.at<cv::Vec3b>(y, x);
  return from_bgr8(blurred);
}

std::optional<std::size_t> encoded_size(const ImageInput& image) {
  std::vector<uchar> buf;
  try {
    if (!cv::imencode(".webp", to_bgr8(image), buf, {cv::IMWRITE_WEBP_QUALITY, kWebpQuality}))
      return std::nullopt;
  } catch (const cv::Exception&) {
    return std::nullopt;
  }
  return buf.size();
}

double information_drop_from_sizes(std::size_t original_bytes, std::size_t bokeh_bytes) {
  if (original_bytes == 0) throw ConfigError("original encoded size is zero");
  return (1.0 - static_cast<double>(bokeh_bytes) / static_cast<double>(original_bytes)) * 100.0;
}

InformationDropResult information_drop(const ImageInput& image, const SaliencyMap& map,
                                       double keep_fraction) {
  InformationDropResult r;
  const auto original = encoded_size(image);
  const auto bokeh = encoded_size(bokeh_image(image, map, keep_fraction));
  if (!original || !bokeh || *original == 0) return r;
  r.available = true;
  r.original_bytes = *original;
  r.bokeh_bytes = *bokeh;
  r.percent = information_drop_from_sizes(*original, *bokeh);
  return r;
}

bool is_tiny(const Box& box, int image_height, int image_width) {
  check_box(box);
  return box.area() / (static_cast<double>(image_height) * image_width) <= kTinyAreaRatio;
}

bool is_tiny(const Detection& detection, const ImageInput& image) {
  return is_tiny(detection.box, image.height(), image.width());
}

MetricReport aggregate_report(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw ConfigError("cannot aggregate an empty record list");
  MetricReport report;
  report.records = records;
  std::vector<std::string> methods;
  for (const auto& r : records)
    if (std::find(methods.begin(), methods.end(), r.method_tag) == methods.end())
      methods.push_back(r.method_tag);
  std::sort(methods.begin(), methods.end());

  auto means = [&](const std::string& method, bool tiny_only) {
    MetricMeans m;
    double pg = 0, ebpg = 0, cd = 0, id = 0;
    int n_pg = 0, n_ebpg = 0, n_cd = 0, n_id = 0;
    for (const auto& r : records) {
      if (r.method_tag != method || (tiny_only && !r.tiny)) continue;
      ++m.count;
      m.runtime_s += r.runtime_s;
      if (r.pg_hit) pg += *r.pg_hit, ++n_pg;
      if (r.ebpg) ebpg += *r.ebpg, ++n_ebpg;
      if (r.confidence_drop) cd += *r.confidence_drop, ++n_cd;
      if (r.information_drop) id += *r.information_drop, ++n_id;
    }
    if (m.count) m.runtime_s /= m.count;
    if (n_pg) m.pg = pg / n_pg;
    if (n_ebpg) m.ebpg = ebpg / n_ebpg;
    if (n_cd) m.confidence_drop = cd / n_cd;
    if (n_id) m.information_drop = id / n_id;
    return m;
  };
  for (const auto& method : methods)
    report.methods.push_back({method, means(method, false), means(method, true)});
  return report;
}

std::string report_json(const MetricReport& report) {
  using nlohmann::ordered_json;
  auto opt = [](const auto& o) -> ordered_json { return o ? ordered_json(*o) : ordered_json(); };
  auto box = [](const Box& b) { return ordered_json::array({b.x1, b.y1, b.x2, b.y2}); };
  auto means = [&](const MetricMeans& m) {
    return ordered_json{{"count", m.count},
                        {"pg", opt(m.pg)},
                        {"ebpg", opt(m.ebpg)},
                        {"confidence_drop", opt(m.confidence_drop)},
                        {"information_drop", opt(m.information_drop)},
                        {"runtime_s", m.runtime_s}};
  };
  ordered_json doc;
  doc["schema_version"] = report.schema_version;
  doc["averaging"] = "per_object";
  doc["tiny_only"] = report.tiny_only;
  doc["unmatched_objects"] = report.unmatched_objects;
  doc["methods"] = ordered_json::array();
  for (const auto& m : report.methods)
    doc["methods"].push_back(
        {{"method", m.method}, {"overall", means(m.overall)}, {"tiny", means(m.tiny)}});
  doc["reference"] = {{"gcame",
                       {{"pg", reference::kGcamePointingGame},
                        {"pg_tiny", reference::kGcamePointingGameTiny},
                        {"ebpg", reference::kGcameEbpg},
                        {"ebpg_tiny", reference::kGcameEbpgTiny},
                        {"confidence_drop", reference::kGcameConfidenceDrop},
                        {"information_drop", reference::kGcameInformationDrop},
                        {"runtime_s", reference::kGcameRuntimeS}}},
                      {"drise",
                       {{"ebpg", reference::kDriseEbpg}, {"runtime_s", reference::kDriseRuntimeS}}}};
  doc["records"] = ordered_json::array();
  for (const auto& r : report.records)
    doc["records"].push_back({{"image_id", r.image_id},
                              {"method", r.method_tag},
                              {"class_index", r.class_index},
                              {"target_box", box(r.target_box)},
                              {"matched_box", box(r.matched_box)},
                              {"tiny", r.tiny},
                              {"pg_hit", opt(r.pg_hit)},
                              {"ebpg", opt(r.ebpg)},
                              {"confidence_drop", opt(r.confidence_drop)},
                              {"information_drop", opt(r.information_drop)},
                              {"runtime_s", r.runtime_s},
                              {"flags", r.flags}});
  return doc.dump(2) + "\n";
}

std::string report_csv(const MetricReport& report) {
  std::string out =
      "image_id,method,class_index,target_x1,target_y1,target_x2,target_y2,matched_x1,"
      "matched_y1,matched_x2,matched_y2,tiny,pg_hit,ebpg,confidence_drop,information_drop,"
      "runtime_s,flags\n";
  auto opt = [](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  for (const auto& r : report.records) {
    std::string flags;
    for (const auto& f : r.flags) flags += (flags.empty() ? "" : ";") + f;
    out += std::to_string(r.image_id) + "," + r.method_tag + "," + std::to_string(r.class_index);
    for (const Box* b : {&r.target_box, &r.matched_box})
      out += "," + num(b->x1) + "," + num(b->y1) + "," + num(b->x2) + "," + num(b->y2);
    out += std::string(",") + (r.tiny ? "1" : "0") + "," +
           (r.pg_hit ? (*r.pg_hit ? "1" : "0") : "") + "," + opt(r.ebpg) + "," +
           opt(r.confidence_drop) + "," + opt(r.information_drop) + "," + num(r.runtime_s) +
           "," + flags + "\n";
  }
  return out;
}

}  // namespace gcame
