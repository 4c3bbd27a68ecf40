#include "gcame/pipeline.hpp"

#include <algorithm>
#include <chrono>

#include "gcame/error.hpp"

namespace gcame {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Gcame: return "gcame";
    case Method::Gradcam: return "gradcam";
    case Method::Drise: return "drise";
  }
  return "?";
}

Method method_from_string(std::string_view s) {
  if (s == "gcame") return Method::Gcame;
  if (s == "gradcam") return Method::Gradcam;
  if (s == "drise") return Method::Drise;
  throw ConfigError("unknown method '" + std::string(s) + "' (expected gcame, gradcam or drise)");
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::PointingGame: return "pg";
    case Metric::Ebpg: return "ebpg";
    case Metric::ConfidenceDrop: return "cd";
    case Metric::InformationDrop: return "id";
  }
  return "?";
}

Metric metric_from_string(std::string_view s) {
  if (s == "pg") return Metric::PointingGame;
  if (s == "ebpg") return Metric::Ebpg;
  if (s == "cd" || s == "confidence_drop") return Metric::ConfidenceDrop;
  if (s == "id" || s == "information_drop") return Metric::InformationDrop;
  throw ConfigError("unknown metric '" + std::string(s) + "' (expected pg, ebpg, cd or id)");
}

TimedMaps explain_targets(Method method, const Detector& model, const ImageInput& image,
                          const std::vector<Detection>& targets, const ExplainOptions& options) {
  TimedMaps out;
  if (targets.empty()) return out;
  if (method == Method::Drise) {
    const auto t0 = Clock::now();
    out.maps = drise_explain(model, image, targets, options.drise);
    out.seconds.assign(targets.size(), seconds_since(t0) / static_cast<double>(targets.size()));
    return out;
  }
  GcameOptions opts = options.gcame;
  opts.force_unit_masks = method == Method::Gradcam;
  const TargetLayerSet layers = options.layers ? *options.layers : select_target_layers(model);
  // The shared forward pass is charged to the first target, as a
  // standalone explanation of it would be.
  auto t0 = Clock::now();
  ForwardCapture fc = forward_with_capture(model, image, layers);
  for (const Detection& d : targets) {
    ExplanationTarget t = ExplanationTarget::of(d, opts.score_kind);
    out.maps.push_back(explain_in_session(fc.session, t, opts));
    out.seconds.push_back(seconds_since(t0));
    t0 = Clock::now();
  }
  return out;
}

std::vector<MatchedObject> match_objects(const std::vector<Detection>& detections,
                                         const std::vector<GroundTruthBox>& gts, double min_iou,
                                         std::vector<GroundTruthBox>* unmatched) {
  std::vector<MatchedObject> out;
  for (const GroundTruthBox& gt : gts) {
    const Detection* best = nullptr;
    double best_iou = min_iou;
    for (const Detection& d : detections) {
      if (d.class_index != gt.class_index) continue;
      const double iou = pairwise_iou(gt.box, d.box);
      if (iou >= best_iou && (!best || iou > best_iou)) {
        best = &d;
        best_iou = iou;
      }
    }
    if (best) out.push_back({gt, *best});
    else if (unmatched) unmatched->push_back(gt);
  }
  return out;
}

ImageEvaluation evaluate_image(const Detector& model, const ImageInput& image,
                               std::int64_t image_id, const std::vector<GroundTruthBox>& gts,
                               const EvalOptions& options) {
  if (options.metrics.empty()) throw ConfigError("no metrics requested");
  ImageEvaluation ev;
  const auto detections = model.postprocess(model.forward(image).raw, options.threshold);
  std::vector<GroundTruthBox> unmatched;
  auto matched = match_objects(detections, gts, options.match_iou, &unmatched);
  ev.unmatched = static_cast<int>(unmatched.size());
  if (options.tiny_only)
    std::erase_if(matched, [&](const MatchedObject& m) { return !is_tiny(m.detection, image); });
  if (matched.empty()) return ev;

  std::vector<Detection> targets;
  for (const auto& m : matched) targets.push_back(m.detection);
  auto has = [&](Metric m) {
    return std::find(options.metrics.begin(), options.metrics.end(), m) != options.metrics.end();
  };

  for (Method method : options.methods) {
    const TimedMaps tm = explain_targets(method, model, image, targets, options.explain);
    for (std::size_t i = 0; i < matched.size(); ++i) {
      const SaliencyMap& map = tm.maps[i];
      EvalRecord r;
      r.image_id = image_id;
      r.target_box = matched[i].gt.box;
      r.matched_box = matched[i].detection.box;
      r.class_index = matched[i].gt.class_index;
      r.tiny = is_tiny(matched[i].detection, image);
      r.method_tag = std::string(to_string(method));
      r.runtime_s = tm.seconds[i];
      r.flags = map.flags;
      if (has(Metric::PointingGame)) {
        const auto pg = pointing_game(map, r.target_box);
        r.pg_hit = pg.hit;
        if (pg.zero_map) r.flags.push_back("pg_zero_map");
      }
      if (has(Metric::Ebpg)) {
        const auto e = energy_based_pg(map, r.target_box);
        r.ebpg = e.value;
        if (e.zero_energy) r.flags.push_back("ebpg_zero_energy");
      }
      if (has(Metric::ConfidenceDrop)) {
        const auto cd = confidence_drop(model, image, map, matched[i].detection,
                                        options.perturbation, options.threshold);
        r.confidence_drop = cd.percent;
        if (cd.no_detections) r.flags.push_back("cd_no_detections");
        if (cd.degenerate) r.flags.push_back("cd_tied_threshold");
      }
      if (has(Metric::InformationDrop)) {
        const auto id = information_drop(image, map, options.perturbation.keep_fraction);
        if (id.available) r.information_drop = id.percent;
        else r.flags.push_back("id_unavailable");
      }
      ev.records.push_back(std::move(r));
    }
  }
  return ev;
}

}  // namespace gcame
