#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "gcame/error.hpp"
#include "gcame/io.hpp"
#include "gcame/pipeline.hpp"
#include "gcame/sanity.hpp"
#include "gcame/synthetic.hpp"

#ifndef GCAME_DEFAULT_TOY_WEIGHTS
#define GCAME_DEFAULT_TOY_WEIGHTS ""
#endif

namespace gcame::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kListOptions = {"layers", "methods", "metrics", "randomize-layers"};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

std::string env_name(const std::string& option) {
  std::string n = "GCAME_";
  for (char c : option) n += c == '-' ? '_' : static_cast<char>(std::toupper(c));
  return n;
}

std::vector<std::string> json_values(const json& v) {
  auto scalar = [](const json& x) -> std::string {
    if (x.is_string()) return x.get<std::string>();
    if (x.is_boolean()) return x.get<bool>() ? "true" : "false";
    return x.dump();
  };
  std::vector<std::string> out;
  if (v.is_array()) {
    for (const auto& x : v) out.push_back(scalar(x));
    if (out.empty()) out.push_back("");
  } else {
    out.push_back(scalar(v));
  }
  return out;
}

const json* lookup(const json& section, const std::string& name) {
  if (!section.is_object()) return nullptr;
  std::string underscored = name;
  std::replace(underscored.begin(), underscored.end(), '-', '_');
  for (const std::string& key : {name, underscored}) {
    const auto it = section.find(key);
    if (it != section.end()) return &*it;
  }
  return nullptr;
}

// Fills options not given on the command line from GCAME_* variables, then
// from the config file (subcommand section first, then top level).
void merge_sources(CLI::App& app, CLI::App* sub, const json& file) {
  std::vector<CLI::Option*> options = app.get_options();
  if (sub)
    for (CLI::Option* o : sub->get_options()) options.push_back(o);
  for (CLI::Option* o : options) {
    const std::string name = o->get_single_name();
    if (o->count() > 0 || name.empty() || name == "help" || name == "config") continue;
    const bool is_list =
        std::find(kListOptions.begin(), kListOptions.end(), name) != kListOptions.end();
    std::vector<std::string> values;
    if (const char* env = std::getenv(env_name(name).c_str())) {
      values = is_list ? split_list(env) : std::vector<std::string>{env};
      if (values.empty()) values.push_back("");
    } else {
      const json* v = nullptr;
      if (sub) v = lookup(file.value(sub->get_name(), json::object()), name);
      if (!v) v = lookup(file, name);
      if (!v) continue;
      values = json_values(*v);
    }
    for (auto& s : values) o->add_result(s);
    o->run_callback();
  }
}

std::unique_ptr<Detector> load_model(const RunConfig& c, std::ostream& err) {
  if (c.model != "toy" && c.model != "yolox" && c.model != "fasterrcnn")
    throw UsageError("unknown model '" + c.model + "' (expected toy, yolox or fasterrcnn)");
  std::string weights = c.weights;
  if (weights.empty() && c.model == "toy" && fs::exists(GCAME_DEFAULT_TOY_WEIGHTS))
    weights = GCAME_DEFAULT_TOY_WEIGHTS;
  if (!weights.empty()) {
    auto model = load_checkpoint(weights);
    if (model->spec().adapter != c.model)
      throw ConfigError("checkpoint " + weights + " is for '" + model->spec().adapter +
                        "', not '" + c.model + "'");
    model->nms_iou = 0.45;
    return model;
  }
  err << "warning: no weights for '" << c.model << "'; using seeded initialisation\n";
  DetectorSpec spec;
  spec.adapter = c.model;
  return make_detector(spec);
}

ImageInput load_input(const RunConfig& c, const Detector& model) {
  if (c.image.empty()) throw UsageError("--image is required");
  ImageInput image = load_image(c.image);
  if (image.height() != model.spec().input_height || image.width() != model.spec().input_width)
    throw ConfigError("image " + c.image + " is " + std::to_string(image.height()) + "x" +
                      std::to_string(image.width()) + " but the model expects " +
                      std::to_string(model.spec().input_height) + "x" +
                      std::to_string(model.spec().input_width));
  return image;
}

ExplainOptions explain_options(const RunConfig& c, const Detector& model) {
  ExplainOptions o;
  if (c.score_kind == "class_score") o.gcame.score_kind = ScoreKind::ClassScore;
  else if (c.score_kind == "objectness_weighted") o.gcame.score_kind = ScoreKind::ObjectnessWeighted;
  else throw UsageError("unknown --score-kind '" + c.score_kind + "'");
  o.drise.grid_h = o.drise.grid_w = c.grid;
  o.drise.occurrence_prob = c.occurrence_prob;
  o.drise.num_masks = c.num_masks;
  o.drise.seed = c.seed;
  o.drise.threads = c.threads;
  o.drise.score_threshold = c.threshold;
  try {
    o.drise.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (c.hook != "cls" && c.hook != "stem") throw UsageError("--hook must be cls or stem");
  if (!c.layers.empty()) {
    TargetLayerSet set;
    const auto infos = model.layer_infos();
    for (const auto& id : c.layers) {
      const auto it = std::find_if(infos.begin(), infos.end(),
                                   [&](const LayerInfo& i) { return i.name == id; });
      if (it == infos.end() || it->kind != LayerKind::Conv)
        throw ConfigError("target layer '" + id + "' is not a convolution of this model");
      set.layer_ids.push_back(id);
      set.strides.push_back(it->stride);
    }
    o.layers = set;
  } else if (c.hook == "stem" && model.kind() == ModelKind::OneStage) {
    o.layers = select_target_layers(model, ModelKind::OneStage, OneStageHook::SharedStem);
  }
  return o;
}

std::vector<Detection> detect(const Detector& model, const ImageInput& image, double threshold) {
  return model.postprocess(model.forward(image).raw, threshold);
}

std::vector<Detection> pick_targets(const std::vector<Detection>& dets, int box) {
  if (box < 0) return dets;
  if (box >= static_cast<int>(dets.size()))
    throw ConfigError("--box " + std::to_string(box) + " but only " +
                      std::to_string(dets.size()) + " detections");
  return {dets[box]};
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, {text.begin(), text.end()});
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(precision) << v;
  return ss.str();
}

Method parse_method(const std::string& s) {
  try {
    return method_from_string(s);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

// ------------------------------------------------------------- commands

int cmd_explain(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const Method method = parse_method(c.method);
  const auto model = load_model(c, err);
  const ImageInput image = load_input(c, *model);
  const ExplainOptions opts = explain_options(c, *model);
  const auto targets = pick_targets(detect(*model, image, c.threshold), c.box);
  if (targets.empty()) {
    out << "no detections above threshold " << c.threshold << "; nothing to explain\n";
    return kOk;
  }
  const TimedMaps tm = explain_targets(method, *model, image, targets, opts);
  const std::string stem = fs::path(c.image).stem().string();
  const fs::path root(c.output_dir);
  for (std::size_t k = 0; k < tm.maps.size(); ++k) {
    const std::string base = stem + "_" + c.method + "_" + std::to_string(k);
    const fs::path bin = root / "saliency" / (base + ".bin");
    const fs::path png = root / "overlays" / (base + ".png");
    save_saliency(tm.maps[k], bin);
    write_bytes(png, render_overlay(image, tm.maps[k], targets[k], {"circle", "square"}));
    out << bin.string() << "\n" << png.string() << "\n";
  }
  return kOk;
}

int cmd_evaluate(const RunConfig& c, bool metrics_given, std::ostream& out, std::ostream& err) {
  if (c.annotations.empty()) throw UsageError("--annotations is required");
  EvalOptions opts;
  opts.metrics.clear();
  std::vector<std::string> names = metrics_given ? c.metrics : std::vector<std::string>{"pg", "ebpg"};
  std::erase(names, "");
  if (names.empty()) throw UsageError("--metrics is empty; name at least one of pg, ebpg, cd, id");
  for (const auto& m : names) {
    try {
      opts.metrics.push_back(metric_from_string(m));
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  opts.methods.clear();
  for (const auto& m : c.methods.empty() ? std::vector<std::string>{c.method} : c.methods)
    opts.methods.push_back(parse_method(m));
  if (c.jobs < 1) throw UsageError("--jobs must be at least 1");

  const auto model = load_model(c, err);
  opts.explain = explain_options(c, *model);
  opts.tiny_only = c.tiny_only;
  opts.threshold = c.threshold;

  const DatasetIndex index = load_coco(c.annotations);
  for (const auto& w : index.warnings) err << "warning: " << w << "\n";
  std::size_t n = index.images.size();
  if (c.limit > 0) n = std::min<std::size_t>(n, c.limit);

  std::vector<ImageEvaluation> results(n);
  std::vector<std::string> failures(n);
  auto work = [&](std::size_t first) {
    for (std::size_t i = first; i < n; i += c.jobs) {
      const ImageRecord& rec = index.images[i];
      try {
        ImageInput image = load_image(index.image_path(rec));
        results[i] = evaluate_image(*model, image, rec.image_id,
                                    index.annotations.at(rec.image_id), opts);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 1; j < c.jobs; ++j) pool.emplace_back(work, j);
  work(0);
  for (auto& t : pool) t.join();

  std::vector<EvalRecord> records;
  int unmatched = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!failures[i].empty())
      throw Error("image " + std::to_string(index.images[i].image_id) + ": " + failures[i]);
    records.insert(records.end(), results[i].records.begin(), results[i].records.end());
    unmatched += results[i].unmatched;
  }
  if (records.empty())
    throw Error(c.tiny_only ? "no tiny objects were detected and matched; nothing to report"
                            : "no objects were detected and matched; nothing to report");
  MetricReport report = aggregate_report(records);
  report.tiny_only = c.tiny_only;
  report.unmatched_objects = unmatched;
  const fs::path dir = fs::path(c.output_dir) / "reports";
  write_text(dir / "report.json", report_json(report));
  write_text(dir / "report.csv", report_csv(report));

  auto cell = [](const std::optional<double>& v, int p = 3) { return v ? fmt(*v, p) : "-"; };
  out << "method   objects  PG     EBPG   CD      ID      time/object(s)\n";
  for (const auto& m : report.methods)
    for (const auto* part : {&m.overall, &m.tiny}) {
      if (part == &m.tiny && part->count == 0) continue;
      out << std::left << std::setw(9) << (part == &m.tiny ? m.method + "*" : m.method)
          << std::setw(9) << part->count << std::setw(7) << cell(part->pg) << std::setw(7)
          << cell(part->ebpg) << std::setw(8) << cell(part->confidence_drop, 2) << std::setw(8)
          << cell(part->information_drop, 2) << fmt(part->runtime_s) << "\n";
    }
  out << "(* tiny objects only)  unmatched ground-truth boxes: " << unmatched << "\n";
  out << (dir / "report.json").string() << "\n";
  return kOk;
}

int cmd_sanity(const RunConfig& c, std::ostream& out, std::ostream& err) {
  if (c.mode != "cascading" && c.mode != "independent" && c.mode != "both")
    throw UsageError("--mode must be cascading, independent or both");
  if (!(c.init_std > 0)) throw UsageError("--init-std must be positive");
  const auto model = load_model(c, err);
  const ImageInput image = load_input(c, *model);
  const ExplainOptions eo = explain_options(c, *model);
  const auto dets = detect(*model, image, c.threshold);
  if (dets.empty()) throw Error("no detections to run the sanity check on");
  const Detection target = pick_targets(dets, std::max(c.box, 0)).front();

  const auto order = default_randomization_order(*model);
  const auto layers = c.randomize_layers.empty() ? order : c.randomize_layers;
  std::vector<RandomizationPlan> plans;
  RandomizationPlan noop;
  noop.layer_ids = order;
  noop.seed = c.seed;
  plans.push_back(noop);
  for (const auto mode : {RandomizationMode::Cascading, RandomizationMode::Independent}) {
    if (c.mode != "both" && c.mode != to_string(mode)) continue;
    for (const auto& layer : layers) {
      RandomizationPlan p = noop;
      p.mode = mode;
      p.target_layer = layer;
      p.init_std = c.init_std;
      plans.push_back(p);
    }
  }
  const SanityReport report =
      sanity_suite(*model, image, ExplanationTarget::of(target, eo.gcame.score_kind), plans, eo.gcame);

  const fs::path root(c.output_dir);
  write_text(root / "reports" / "sanity.json", sanity_table_json(report));
  std::vector<cv::Mat> panels{overlay_image(image, report.baseline, target)};
  std::vector<std::string> captions{"original"};
  for (const auto& r : report.results) {
    panels.push_back(overlay_image(image, r.map, target));
    captions.push_back(r.plan.label());
  }
  write_bytes(root / "overlays" / "sanity_contact_sheet.png", contact_sheet(panels, captions));

  out << std::left << std::setw(40) << "plan" << std::setw(10) << "spearman" << std::setw(10)
      << "ssim" << std::setw(14) << "map_spearman" << "map_ssim\n";
  for (const auto& r : report.results) {
    out << std::setw(40) << r.plan.label() << std::setw(10) << fmt(r.rank_correlation)
        << std::setw(10) << fmt(r.ssim) << std::setw(14) << fmt(r.map_rank_correlation)
        << fmt(r.map_ssim);
    for (const auto& f : r.flags) out << "  [" << f << "]";
    out << "\n";
  }
  return kOk;
}

int cmd_compare(const RunConfig& c, std::ostream& out, std::ostream& err) {
  std::vector<Method> methods;
  for (const auto& m : c.methods.empty() ? std::vector<std::string>{"gcame", "gradcam", "drise"}
                                          : c.methods)
    methods.push_back(parse_method(m));
  const auto model = load_model(c, err);
  const ImageInput image = load_input(c, *model);
  const ExplainOptions opts = explain_options(c, *model);
  const auto targets = pick_targets(detect(*model, image, c.threshold), c.box);
  if (targets.empty()) throw Error("no detections to compare explanations on");

  nlohmann::ordered_json doc;
  doc["schema_version"] = "v1";
  doc["objects"] = targets.size();
  doc["drise_num_masks"] = c.num_masks;
  doc["methods"] = nlohmann::ordered_json::array();
  std::vector<std::array<std::string, 3>> rows;
  for (Method m : methods) {
    const TimedMaps tm = explain_targets(m, *model, image, targets, opts);
    double total = 0, ebpg = 0;
    for (std::size_t i = 0; i < tm.maps.size(); ++i) {
      total += tm.seconds[i];
      ebpg += energy_based_pg(tm.maps[i], targets[i].box).value;
    }
    const double per = total / targets.size();
    ebpg /= targets.size();
    rows.push_back({std::string(to_string(m)), fmt(per, 4), fmt(ebpg, 3)});
    doc["methods"].push_back({{"method", std::string(to_string(m))},
                              {"runtime_s_per_object", per},
                              {"runtime_s_total", total},
                              {"ebpg_predicted_box", ebpg}});
  }
  write_text(fs::path(c.output_dir) / "reports" / "compare.json", doc.dump(2) + "\n");

  out << std::left << std::setw(26) << "Metric";
  for (const auto& r : rows) out << std::setw(12) << r[0];
  out << "\n" << std::setw(26) << "Running time (s/object)";
  for (const auto& r : rows) out << std::setw(12) << r[1];
  out << "\n" << std::setw(26) << "EBPG (predicted box)";
  for (const auto& r : rows) out << std::setw(12) << r[2];
  out << "\n" << targets.size() << " object(s); D-RISE masks: " << c.num_masks << "\n";
  return kOk;
}

int cmd_synth(const RunConfig& c, std::ostream& out) {
  if (c.dir.empty()) throw UsageError("--dir is required");
  if (c.count < 1) throw UsageError("--count must be at least 1");
  SceneConfig cfg;
  cfg.min_size = c.min_size;
  cfg.max_size = c.max_size;
  try {
    out << export_synthetic_dataset(c.dir, c.count, c.seed, cfg).string() << "\n";
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig c;
  std::string config_path;
  CLI::App app{"Per-object saliency explanations for object detectors", "gcame"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", config_path, "JSON file with option defaults");
  app.add_option("--model", c.model, "detector adapter: toy, yolox or fasterrcnn");
  app.add_option("--weights", c.weights, "checkpoint path (toy defaults to the bundled one)");
  app.add_option("--hook", c.hook, "one-stage target layer: cls or stem");
  app.add_option("--layers", c.layers, "explicit target layer ids")->delimiter(',');
  app.add_option("--threshold", c.threshold, "objectness threshold");
  app.add_option("--seed", c.seed, "seed for every stochastic step");
  app.add_option("--out", c.output_dir, "output directory");
  app.add_option("--score-kind", c.score_kind, "class_score or objectness_weighted");

  auto add_drise = [&](CLI::App* s) {
    s->add_option("--num-masks", c.num_masks, "D-RISE mask count");
    s->add_option("--grid", c.grid, "D-RISE grid size");
    s->add_option("--occurrence-prob", c.occurrence_prob, "D-RISE cell keep probability");
    s->add_option("--threads", c.threads, "D-RISE scoring threads");
  };

  auto* explain = app.add_subcommand("explain", "explain one image's detections");
  explain->add_option("--image", c.image, "input image");
  explain->add_option("--method", c.method, "gcame, gradcam or drise");
  explain->add_option("--box", c.box, "detection rank to explain (default: all)");
  add_drise(explain);

  auto* evaluate = app.add_subcommand("evaluate", "evaluate explanations over a COCO dataset");
  evaluate->add_option("--annotations", c.annotations, "COCO annotation JSON");
  CLI::Option* metrics_opt =
      evaluate->add_option("--metrics", c.metrics, "pg, ebpg, cd, id")->delimiter(',');
  evaluate->add_option("--method", c.method, "gcame, gradcam or drise");
  evaluate->add_option("--methods", c.methods, "several methods")->delimiter(',');
  evaluate->add_flag("--tiny-only", c.tiny_only, "only objects with area <= 0.5% of the image");
  evaluate->add_option("--limit", c.limit, "evaluate at most this many images");
  evaluate->add_option("--jobs", c.jobs, "worker threads");
  add_drise(evaluate);

  auto* sanity = app.add_subcommand("sanity", "model-parameter randomization test");
  sanity->add_option("--image", c.image, "input image");
  sanity->add_option("--box", c.box, "detection rank to explain (default 0)");
  sanity->add_option("--mode", c.mode, "cascading, independent or both");
  sanity->add_option("--init-std", c.init_std, "std of the re-initialisation");
  sanity->add_option("--randomize-layers", c.randomize_layers, "layers, top first")
      ->delimiter(',');

  auto* compare = app.add_subcommand("compare", "time gcame, gradcam and drise side by side");
  compare->add_option("--image", c.image, "input image");
  compare->add_option("--methods", c.methods, "methods to compare")->delimiter(',');
  compare->add_option("--box", c.box, "detection rank (default: all)");
  add_drise(compare);

  auto* synth = app.add_subcommand("synth", "write a synthetic COCO dataset");
  synth->add_option("--dir", c.dir, "output directory");
  synth->add_option("--count", c.count, "number of images");
  synth->add_option("--min-size", c.min_size, "smallest object side (px)");
  synth->add_option("--max-size", c.max_size, "largest object side (px)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    json file = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw UsageError("cannot open config file " + config_path);
      try {
        file = json::parse(in);
      } catch (const json::exception& e) {
        throw UsageError("config file " + config_path + " is not valid JSON");
      }
      if (!file.is_object()) throw UsageError("config file must hold a JSON object");
    }
    merge_sources(app, sub, file);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    const std::string name = sub->get_name();
    if (name == "explain") return cmd_explain(c, out, err);
    if (name == "evaluate") return cmd_evaluate(c, metrics_opt->count() > 0, out, err);
    if (name == "sanity") return cmd_sanity(c, out, err);
    if (name == "compare") return cmd_compare(c, out, err);
    return cmd_synth(c, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << sub->help();
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace gcame::cli
