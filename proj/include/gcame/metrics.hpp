#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gcame/dataset.hpp"
#include "gcame/detector.hpp"
#include "gcame/saliency.hpp"

namespace gcame {

// Localisation ---------------------------------------------------------------

struct PointingResult {
  bool hit = false;
  bool zero_map = false;  // all-zero map: counted as a miss
};

/// Hit iff any pixel attaining the global maximum lies inside the box.
PointingResult pointing_game(const SaliencyMap& map, const Box& box);
/// hits / (hits + misses).
double pointing_game_score(const std::vector<bool>& hits);

struct EnergyResult {
  double value = 0.0;
  bool zero_energy = false;
};

/// Share of the map's total energy whose pixel centres fall inside the box.
EnergyResult energy_based_pg(const SaliencyMap& map, const Box& box);

// Faithfulness ---------------------------------------------------------------

struct PerturbationSpec {
  double keep_fraction = 0.20;
  /// Replacement colour; defaults to the per-channel mean of the image.
  std::optional<std::array<double, 3>> fill_value;
};

/// Exactly round(keep_fraction * H * W) pixels of highest saliency; ties are
/// taken in row-major order. `degenerate` is set when the budget boundary
/// falls inside a run of equal values.
std::vector<std::uint8_t> top_fraction_mask(const SaliencyMap& map, double keep_fraction,
                                            bool* degenerate = nullptr);

/// Pixels whose saliency is at least the value at the keep_fraction budget
/// and strictly positive. Ties are all kept, so a constant map selects
/// everything (or nothing when it is zero).
std::vector<std::uint8_t> salient_region_mask(const SaliencyMap& map, double keep_fraction);

std::array<double, 3> channel_mean(const ImageInput& image);

/// I * (1 - M) + fill * M.
ImageInput perturb_image(const ImageInput& image, const std::vector<std::uint8_t>& mask,
                         const std::array<double, 3>& fill);

/// max_j IoU(box, L_j) * p_c(L_j) over detections.
double target_confidence(const Box& box, int target_class,
                         const std::vector<Detection>& detections);

/// max(P - P~, 0) / P * 100; 0 when P is 0.
double confidence_drop_from_scores(double original, double perturbed);

struct ConfidenceDropResult {
  double percent = 0.0;
  double original = 0.0;
  double perturbed = 0.0;
  bool no_detections = false;  // nothing detected on the perturbed image
  bool degenerate = false;     // tie at the 20% saliency threshold
};

ConfidenceDropResult confidence_drop(const Detector& model, const ImageInput& image,
                                     const SaliencyMap& map, const Detection& target,
                                     const PerturbationSpec& spec = {},
                                     double threshold = kDefaultObjectnessThreshold);

constexpr int kWebpQuality = 50;

/// Salient region kept sharp, the rest Gaussian-blurred with sigma equal to
/// 5% of the smaller image side.
ImageInput bokeh_image(const ImageInput& image, const SaliencyMap& map, double keep_fraction);

/// Lossy WebP size at kWebpQuality; nullopt if the encoder fails.
std::optional<std::size_t> encoded_size(const ImageInput& image);

/// (1 - bokeh / original) * 100.
double information_drop_from_sizes(std::size_t original_bytes, std::size_t bokeh_bytes);

struct InformationDropResult {
  bool available = false;
  double percent = 0.0;
  std::size_t original_bytes = 0;
  std::size_t bokeh_bytes = 0;
};

InformationDropResult information_drop(const ImageInput& image, const SaliencyMap& map,
                                       double keep_fraction = 0.20);

// Tiny objects -----------------------------------------------------------------

constexpr double kTinyAreaRatio = 0.005;

bool is_tiny(const Box& box, int image_height, int image_width);
bool is_tiny(const Detection& detection, const ImageInput& image);

// Aggregation ----------------------------------------------------------------

struct EvalRecord {
  std::int64_t image_id = 0;
  Box target_box;   // ground truth L_i
  Box matched_box;  // explained detection L_j
  int class_index = 0;
  std::optional<bool> pg_hit;  // unset when PG was not requested
  std::optional<double> ebpg;
  std::optional<double> confidence_drop;
  std::optional<double> information_drop;
  bool tiny = false;
  std::string method_tag;
  double runtime_s = 0.0;
  std::vector<std::string> flags;
};

struct MetricMeans {
  int count = 0;
  std::optional<double> pg;
  std::optional<double> ebpg;
  std::optional<double> confidence_drop;
  std::optional<double> information_drop;
  double runtime_s = 0.0;
};

struct MethodSummary {
  std::string method;
  MetricMeans overall;
  MetricMeans tiny;
};

/// Published reference numbers, kept for side-by-side display only.
namespace reference {
constexpr double kGcamePointingGame = 0.98;
constexpr double kGcamePointingGameTiny = 0.158;
constexpr double kGcameEbpg = 0.671;
constexpr double kGcameEbpgTiny = 0.261;
constexpr double kGcameConfidenceDrop = 36.8;
constexpr double kGcameInformationDrop = 29.15;
constexpr double kGcameRuntimeS = 0.435;
constexpr double kDriseEbpg = 0.184;
constexpr double kDriseRuntimeS = 252.0;
}  // namespace reference

struct MetricReport {
  std::string schema_version = "v1";
  bool tiny_only = false;       // records were restricted to tiny objects
  int unmatched_objects = 0;    // ground-truth boxes with no matching detection
  std::vector<MethodSummary> methods;
  std::vector<EvalRecord> records;
};

/// Per-method overall and tiny-only means, each averaged per object.
/// Throws ConfigError on empty input.
MetricReport aggregate_report(const std::vector<EvalRecord>& records);

std::string report_json(const MetricReport& report);
std::string report_csv(const MetricReport& report);

}  // namespace gcame
