#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace gcame::cli {

enum ExitCode { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Everything a run can be configured with. Sources in order of precedence:
/// command-line flags, GCAME_* environment variables, the --config JSON file.
struct RunConfig {
  // model
  std::string model = "toy";
  std::string weights;
  std::string hook = "cls";  // one-stage target: cls branch or shared stem
  std::vector<std::string> layers;
  double threshold = 0.25;
  // explanation
  std::string method = "gcame";
  std::vector<std::string> methods;
  std::string score_kind = "class_score";
  int box = -1;
  int num_masks = 4000;
  int grid = 16;
  double occurrence_prob = 0.5;
  int threads = 1;
  // io
  std::string image;
  std::string annotations;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  // evaluate
  std::vector<std::string> metrics;
  bool tiny_only = false;
  int limit = 0;
  int jobs = 1;
  // sanity
  std::string mode = "cascading";
  double init_std = 0.1;
  std::vector<std::string> randomize_layers;
  // synth
  std::string dir;
  int count = 200;
  int min_size = 8;
  int max_size = 28;
};

/// Runs the command line; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gcame::cli
