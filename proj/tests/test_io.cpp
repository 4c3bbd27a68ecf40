#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <opencv2/imgcodecs.hpp>

#include "gcame/dataset.hpp"
#include "gcame/io.hpp"
#include "support.hpp"

using namespace gcame;

namespace {

SaliencyMap sample_map() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<float> v(40 * 56);
  for (auto& x : v) x = u(rng);
  v[7] = 0.0f;
  v[8] = 1.0f;
  v[9] = std::nextafter(0.5f, 1.0f);
  auto m = test::make_map(40, 56, v);
  m.method_tag = "gcame";
  m.layer_ids = {"head.cls_conv"};
  m.sigmas = {0.3199140833353594};
  m.flags = {"center_fallback:x"};
  m.target.detection.box = {1.5, 2.25, 30, 33.125};
  m.target.detection.objectness = 0.875;
  m.target.detection.class_scores = {0.1, 0.9};
  m.target.detection.class_index = 1;
  m.target.detection.box_index = 17;
  m.target.target_class = 1;
  m.target.score_kind = ScoreKind::ObjectnessWeighted;
  return m;
}

Detection box_detection(Box b) {
  Detection d;
  d.box = b;
  d.class_scores = {0.1, 0.93};
  d.class_index = 1;
  return d;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

}  // namespace

TEST(SaliencyIo, RoundTripsBitExactly) {
  const auto dir = test::temp_dir("io_rt");
  const auto m = sample_map();
  save_saliency(m, dir / "a.bin");
  EXPECT_EQ(std::filesystem::file_size(dir / "a.bin"), 40u * 56u * 4u);
  const auto back = load_saliency(dir / "a.bin");
  ASSERT_EQ(back.values.size(), m.values.size());
  EXPECT_EQ(std::memcmp(back.values.data(), m.values.data(), m.values.size() * 4), 0);
  EXPECT_EQ(back.height, 40);
  EXPECT_EQ(back.width, 56);
  EXPECT_EQ(back.method_tag, m.method_tag);
  EXPECT_EQ(back.layer_ids, m.layer_ids);
  EXPECT_EQ(back.sigmas, m.sigmas);
  EXPECT_EQ(back.flags, m.flags);
  EXPECT_EQ(back.target.detection.box, m.target.detection.box);
  EXPECT_EQ(back.target.detection.class_scores, m.target.detection.class_scores);
  EXPECT_EQ(back.target.detection.box_index, 17);
  EXPECT_EQ(back.target.score_kind, ScoreKind::ObjectnessWeighted);
  save_saliency(back, dir / "b.bin");
  EXPECT_EQ(read_bytes(dir / "a.bin"), read_bytes(dir / "b.bin"));
  EXPECT_EQ(read_bytes(dir / "a.bin.json"), read_bytes(dir / "b.bin.json"));
}

TEST(SaliencyIo, LittleEndianFloat32Layout) {
  const auto dir = test::temp_dir("io_le");
  auto m = test::make_map(1, 2, {1.0f, 0.5f});
  save_saliency(m, dir / "m.bin");
  const auto bytes = read_bytes(dir / "m.bin");
  EXPECT_EQ(bytes, (std::vector<std::uint8_t>{0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x3f}));
}

TEST(SaliencyIo, SizeMismatchIsFormatError) {
  const auto dir = test::temp_dir("io_bad");
  save_saliency(sample_map(), dir / "m.bin");
  write_bytes(dir / "m.bin", {1, 2, 3});
  EXPECT_THROW(load_saliency(dir / "m.bin"), FormatError);
  write_file(dir / "m.bin.json", "{not json");
  EXPECT_THROW(load_saliency(dir / "m.bin"), FormatError);
}

TEST(Overlay, ZeroMapLeavesImageApartFromBoxAndLabel) {
  const auto img = test::random_image(8, 128, 128);
  const auto zero = test::make_map(128, 128, std::vector<float>(128 * 128, 0.0f));
  const cv::Mat out = overlay_image(img, zero, box_detection({60, 60, 100, 100}), {"circle", "square"});
  const cv::Mat base = to_bgr(img);
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x) {
      const bool outline = (x >= 60 && x <= 99 && (y == 60 || y == 99)) ||
                           (y >= 60 && y <= 99 && (x == 60 || x == 99));
      const bool label = y >= 45 && y < 60 && x >= 58;
      if (outline) {
        EXPECT_EQ(out.at<cv::Vec3b>(y, x), cv::Vec3b(0, 255, 0));
      } else if (!label) {
        ASSERT_EQ(out.at<cv::Vec3b>(y, x), base.at<cv::Vec3b>(y, x)) << y << "," << x;
      }
    }
}

TEST(Overlay, PeakBlendsHalfJetRed) {
  ImageInput img;
  img.pixels = Tensor(3, 64, 64);  // black
  std::vector<float> v(64 * 64, 0.0f);
  v[5 * 64 + 5] = 1.0f;
  const cv::Mat out = overlay_image(img, test::make_map(64, 64, v), box_detection({40, 40, 60, 60}));
  const cv::Mat heat = colorize(test::make_map(64, 64, v));
  const cv::Vec3b top = heat.at<cv::Vec3b>(5, 5);
  EXPECT_EQ(top, cv::Vec3b(0, 0, 128));  // JET at 255
  const cv::Vec3b px = out.at<cv::Vec3b>(5, 5);
  EXPECT_EQ(px, cv::Vec3b(0, 0, 64));
  EXPECT_EQ(out.at<cv::Vec3b>(5, 6), cv::Vec3b(0, 0, 0));
}

TEST(Overlay, DeterministicPngAndShapeCheck) {
  const auto img = test::random_image(9, 128, 128);
  auto m = sample_map();
  const auto square = test::make_map(128, 128, std::vector<float>(128 * 128, 0.25f));
  const auto a = render_overlay(img, square, box_detection({2, 3, 40, 50}));
  const auto b = render_overlay(img, square, box_detection({2, 3, 40, 50}));
  EXPECT_EQ(a, b);
  const cv::Mat decoded = cv::imdecode(a, cv::IMREAD_COLOR);
  EXPECT_EQ(decoded.rows, 128);
  EXPECT_EQ(decoded.cols, 128);
  EXPECT_THROW(render_overlay(img, m, box_detection({2, 3, 40, 50})), ConfigError);
}

TEST(ContactSheet, TilesPanels) {
  const cv::Mat p(32, 32, CV_8UC3, cv::Scalar(10, 20, 30));
  const auto png = contact_sheet({p, p, p}, {"a", "b", "c"}, 2);
  const cv::Mat sheet = cv::imdecode(png, cv::IMREAD_COLOR);
  // Two columns and two rows of 32 px panels, 4 px gutters, 14 px captions.
  EXPECT_EQ(sheet.cols, 2 * (32 + 4) + 4);
  EXPECT_EQ(sheet.rows, 2 * (32 + 14 + 4) + 4);
  EXPECT_EQ(sheet.at<cv::Vec3b>(4 + 14, 4), cv::Vec3b(10, 20, 30));
  EXPECT_THROW(contact_sheet({}, {}), ConfigError);
}

TEST(ImageIo, PngRoundTripIsQuantisedExactly) {
  const auto dir = test::temp_dir("img");
  const auto scene = generate_scene(SceneConfig{}, 3);  // already on the /255 lattice
  save_image(scene.image, dir / "s.png");
  const auto back = load_image(dir / "s.png");
  EXPECT_EQ(back.pixels.data, scene.image.pixels.data);
}

TEST(LoadCoco, ConvertsBoxesAndSkipsBadAnnotations) {
  const auto dir = test::temp_dir("coco");
  write_file(dir / "ann.json", R"({
    "images": [{"id": 1, "file_name": "a.png", "height": 128, "width": 128},
               {"id": 2, "file_name": "b.png", "height": 128, "width": 128}],
    "categories": [{"id": 2, "name": "square"}, {"id": 1, "name": "circle"}],
    "annotations": [
      {"id": 10, "image_id": 1, "category_id": 1, "bbox": [10, 20, 30, 40]},
      {"id": 11, "image_id": 1, "category_id": 2, "bbox": [50, 50, 8, 8]},
      {"id": 12, "image_id": 2, "category_id": 2, "bbox": [0, 0, 16, 16]},
      {"id": 13, "image_id": 2, "category_id": 2, "bbox": [5, 5, 0, 16]}
    ]})");
  const auto idx = load_coco(dir / "ann.json");
  EXPECT_EQ(idx.images.size(), 2u);
  EXPECT_EQ(idx.annotation_count(), 3u);
  EXPECT_EQ(idx.skipped, 1);
  EXPECT_EQ(idx.warnings.size(), 1u);
  EXPECT_EQ(idx.category_ids, (std::vector<std::int64_t>{1, 2}));
  const auto& a = idx.annotations.at(1);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].box, (Box{10, 20, 40, 60}));
  EXPECT_EQ(a[0].class_index, 0);
  EXPECT_EQ(a[1].class_index, 1);
  EXPECT_EQ(idx.image_path(idx.image(2)), dir / "b.png");
}

TEST(LoadCoco, UnparsableJsonIsFormatError) {
  const auto dir = test::temp_dir("coco_bad");
  write_file(dir / "ann.json", "{\"images\": [");
  EXPECT_THROW(load_coco(dir / "ann.json"), FormatError);
}

TEST(ExportSyntheticDataset, WritesLoadableCoco) {
  const auto dir = test::temp_dir("synth");
  const auto path = export_synthetic_dataset(dir, 4, 12);
  const auto idx = load_coco(path);
  EXPECT_EQ(idx.images.size(), 4u);
  EXPECT_EQ(idx.skipped, 0);
  for (const auto& rec : idx.images) EXPECT_TRUE(std::filesystem::exists(idx.image_path(rec)));
}
