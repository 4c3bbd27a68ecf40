#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gcame/box.hpp"
#include "gcame/detection.hpp"

namespace gcame {

struct GroundTruthBox {
  Box box;
  int class_index = 0;
  std::int64_t image_id = 0;
};

struct ImageRecord {
  std::int64_t image_id = 0;
  std::string file_name;  // relative to the annotation file's directory
  int height = 0;
  int width = 0;
};

/// COCO annotations in xyxy form. Class indices are 0-based positions of
/// the category ids in ascending order.
struct DatasetIndex {
  std::vector<ImageRecord> images;
  std::map<std::int64_t, std::vector<GroundTruthBox>> annotations;
  std::map<std::int64_t, std::string> categories;
  std::vector<std::int64_t> category_ids;  // class index -> COCO category id
  std::filesystem::path root;              // directory of the annotation file
  int skipped = 0;                         // malformed annotations dropped on load
  std::vector<std::string> warnings;

  std::size_t annotation_count() const;
  const ImageRecord& image(std::int64_t id) const;
  std::filesystem::path image_path(const ImageRecord& rec) const { return root / rec.file_name; }
};

/// Parses COCO JSON (FormatError on unparsable input). Boxes are converted
/// from xywh to xyxy; annotations with non-positive size, unknown image or
/// category, or out-of-bounds boxes are skipped and counted.
DatasetIndex load_coco(const std::filesystem::path& annotation_path);
void save_coco(const DatasetIndex& index, const std::filesystem::path& annotation_path);

// PNG/any OpenCV-readable image <-> channel-major RGB tensor in [0, 1].
ImageInput load_image(const std::filesystem::path& path);
void save_image(const ImageInput& image, const std::filesystem::path& path);

}  // namespace gcame
