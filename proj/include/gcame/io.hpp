#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "gcame/saliency.hpp"

namespace gcame {

// Saliency persistence: raw little-endian float32, row-major, plus a JSON
// sidecar at <path>.json holding shape, method, target, sigmas, layers, flags.
void save_saliency(const SaliencyMap& map, const std::filesystem::path& bin_path);
SaliencyMap load_saliency(const std::filesystem::path& bin_path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// Overlay rendering. The heatmap uses OpenCV's JET colormap; each pixel is
// blended with alpha = 0.5 * saliency, so a zero map leaves the image as is.
constexpr double kOverlayAlpha = 0.5;

/// JET colouring of round(255 * saliency), BGR.
cv::Mat colorize(const SaliencyMap& map);
cv::Mat overlay_image(const ImageInput& image, const SaliencyMap& map, const Detection& detection,
                      const std::vector<std::string>& class_names = {});
/// PNG bytes of overlay_image; ConfigError on shape mismatch.
std::vector<std::uint8_t> render_overlay(const ImageInput& image, const SaliencyMap& map,
                                         const Detection& detection,
                                         const std::vector<std::string>& class_names = {});

/// Tiles BGR panels of equal size into a grid with a caption above each.
std::vector<std::uint8_t> contact_sheet(const std::vector<cv::Mat>& panels,
                                        const std::vector<std::string>& captions,
                                        int columns = 4);

cv::Mat to_bgr(const ImageInput& image);

}  // namespace gcame
