#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gcame/gcame.hpp"

namespace gcame {

enum class RandomizationMode { Cascading, Independent };

std::string_view to_string(RandomizationMode mode);
RandomizationMode randomization_mode_from_string(std::string_view s);

/// `layer_ids` lists candidate layers from the top of the network down.
/// Cascading re-initialises every listed layer from the top down to and
/// including `target_layer`; independent re-initialises `target_layer` only.
/// An empty `target_layer` is the no-op plan.
struct RandomizationPlan {
  RandomizationMode mode = RandomizationMode::Cascading;
  std::vector<std::string> layer_ids;
  std::string target_layer;
  double init_std = 0.1;
  std::uint64_t seed = 0;

  std::vector<std::string> layers_to_randomize() const;
  std::string label() const;
};

/// Every layer outside the regression branch, top to bottom.
std::vector<std::string> default_randomization_order(const Detector& model);

/// Copy of `model` with the plan's layers redrawn from N(0, init_std^2).
/// The source model is untouched. LookupError for unknown layers.
std::unique_ptr<Detector> randomize(const Detector& model, const RandomizationPlan& plan);

/// Spearman rank correlation (average ranks for ties). Identical inputs give
/// exactly 1; a constant input against a different one gives 0.
double spearman_correlation(const std::vector<float>& a, const std::vector<float>& b);

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// data range 1. Identical maps give exactly 1.
double structural_similarity(const SaliencyMap& a, const SaliencyMap& b);

/// `rank_correlation` and `ssim` are the reported similarities. They are 0
/// when the copy no longer detects the target row. `map_rank_correlation`
/// and `map_ssim` always compare the two maps as computed.
struct SanityResult {
  RandomizationPlan plan;
  SaliencyMap map;
  double rank_correlation = 0.0;
  double ssim = 0.0;
  double map_rank_correlation = 0.0;
  double map_ssim = 0.0;
  std::vector<std::string> flags;
};

struct SanityReport {
  SaliencyMap baseline;
  std::vector<SanityResult> results;
};

/// Explains `target` with the original model and with every randomised copy
/// (same box row and class). A copy whose objectness for that row falls
/// below kDefaultObjectnessThreshold scores 0 with flag "no_detection". An
/// empty or constant explanation from a copy scores 0 and is flagged.
SanityReport sanity_suite(const Detector& model, const ImageInput& image,
                          const ExplanationTarget& target,
                          const std::vector<RandomizationPlan>& plans,
                          const GcameOptions& options = {});

std::string sanity_table_json(const SanityReport& report);

}  // namespace gcame
