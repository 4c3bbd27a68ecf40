#include "gcame/dataset.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gcame/error.hpp"

namespace gcame {

using nlohmann::json;

std::size_t DatasetIndex::annotation_count() const {
  std::size_t n = 0;
  for (const auto& [id, boxes] : annotations) n += boxes.size();
  return n;
}

const ImageRecord& DatasetIndex::image(std::int64_t id) const {
  for (const auto& rec : images)
    if (rec.image_id == id) return rec;
  throw LookupError("image id " + std::to_string(id) + " not in dataset");
}

DatasetIndex load_coco(const std::filesystem::path& annotation_path) {
  std::ifstream in(annotation_path);
  if (!in) throw ConfigError("cannot open annotation file " + annotation_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("annotation file " + annotation_path.string() + " is not valid JSON: " +
                      e.what());
  }
  if (!doc.is_object() || !doc.contains("images") || !doc.contains("annotations"))
    throw FormatError("annotation file lacks 'images' or 'annotations' arrays");

  DatasetIndex index;
  index.root = annotation_path.parent_path();
  auto warn = [&](std::string msg) {
    ++index.skipped;
    index.warnings.push_back(std::move(msg));
  };

  try {
    for (const auto& c : doc.value("categories", json::array()))
      index.categories[c.at("id").get<std::int64_t>()] = c.value("name", "");
    for (const auto& [id, name] : index.categories) index.category_ids.push_back(id);

    for (const auto& im : doc.at("images")) {
      ImageRecord rec;
      rec.image_id = im.at("id").get<std::int64_t>();
      rec.file_name = im.at("file_name").get<std::string>();
      rec.height = im.at("height").get<int>();
      rec.width = im.at("width").get<int>();
      index.images.push_back(rec);
      index.annotations[rec.image_id];
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed image or category entry: ") + e.what());
  }

  for (const auto& a : doc.at("annotations")) {
    const std::string where = "annotation " + (a.contains("id") ? a["id"].dump() : "?");
    if (!a.contains("bbox") || !a["bbox"].is_array() || a["bbox"].size() != 4 ||
        !a.contains("image_id") || !a.contains("category_id")) {
      warn(where + ": missing bbox, image_id or category_id");
      continue;
    }
    const auto image_id = a["image_id"].get<std::int64_t>();
    const auto rec = std::find_if(index.images.begin(), index.images.end(),
                                  [&](const ImageRecord& r) { return r.image_id == image_id; });
    if (rec == index.images.end()) {
      warn(where + ": unknown image id");
      continue;
    }
    const auto cat = std::find(index.category_ids.begin(), index.category_ids.end(),
                               a["category_id"].get<std::int64_t>());
    if (cat == index.category_ids.end()) {
      warn(where + ": unknown category id");
      continue;
    }
    const auto& b = a["bbox"];
    const double x = b[0].get<double>(), y = b[1].get<double>();
    const double w = b[2].get<double>(), h = b[3].get<double>();
    if (!(w > 0) || !(h > 0)) {
      warn(where + ": non-positive width or height");
      continue;
    }
    GroundTruthBox gt;
    gt.box = {x, y, x + w, y + h};
    gt.class_index = static_cast<int>(cat - index.category_ids.begin());
    gt.image_id = image_id;
    if (gt.box.x1 < 0 || gt.box.y1 < 0 || gt.box.x2 > rec->width || gt.box.y2 > rec->height) {
      warn(where + ": box outside image bounds");
      continue;
    }
    index.annotations[image_id].push_back(gt);
  }
  return index;
}

void save_coco(const DatasetIndex& index, const std::filesystem::path& annotation_path) {
  json doc;
  doc["images"] = json::array();
  for (const auto& rec : index.images)
    doc["images"].push_back(
        {{"id", rec.image_id}, {"file_name", rec.file_name}, {"height", rec.height},
         {"width", rec.width}});
  doc["categories"] = json::array();
  for (const auto& [id, name] : index.categories)
    doc["categories"].push_back({{"id", id}, {"name", name}});
  doc["annotations"] = json::array();
  std::int64_t ann_id = 1;
  for (const auto& rec : index.images) {
    const auto it = index.annotations.find(rec.image_id);
    if (it == index.annotations.end()) continue;
    for (const auto& gt : it->second) {
      const Box& b = gt.box;
      doc["annotations"].push_back(
          {{"id", ann_id++},
           {"image_id", gt.image_id},
           {"category_id", index.category_ids.at(gt.class_index)},
           {"bbox", {b.x1, b.y1, b.width(), b.height()}},
           {"area", b.area()},
           {"iscrowd", 0}});
    }
  }
  std::ofstream out(annotation_path);
  if (!out) throw ConfigError("cannot write " + annotation_path.string());
  out << doc.dump(1) << '\n';
}

ImageInput load_image(const std::filesystem::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw ConfigError("cannot read image " + path.string());
  ImageInput img;
  img.pixels = Tensor(3, bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x)
      for (int c = 0; c < 3; ++c) img.pixels.at(c, y, x) = row[x][2 - c] / 255.0;
  }
  img.source_path = path.string();
  return img;
}

void save_image(const ImageInput& image, const std::filesystem::path& path) {
  const Tensor& p = image.pixels;
  cv::Mat bgr(p.height, p.width, CV_8UC3);
  for (int y = 0; y < p.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < p.width; ++x)
      for (int c = 0; c < 3; ++c)
        row[x][2 - c] = cv::saturate_cast<uchar>(std::lround(p.at(c, y, x) * 255.0));
  }
  if (!cv::imwrite(path.string(), bgr)) throw ConfigError("cannot write image " + path.string());
}

}  // namespace gcame
