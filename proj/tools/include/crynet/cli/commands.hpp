#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace crynet::cli {

/// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kPartial = 2,         // some inputs failed, the rest were processed
  kSplitLeakage = 3,
  kCalibration = 4,     // calibration or fusion configuration
  kEvalInput = 5,
  kCaseStudy = 6,
};

/// Maps an exception raised by `command` onto an exit code.
int exit_code_for(const std::exception& e, std::string_view command);

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

using Path = std::filesystem::path;

struct SynthOptions {
  Path out;
  Path config;
  std::optional<double> snr_db;
  std::optional<int> clips_per_class;
  std::optional<std::uint64_t> seed;
};

struct ExtractOptions {
  Path in;
  Path manifest;
  Path out;
  std::string features;  // empty keeps the config's subset
  int jobs = 0;          // 0 = hardware concurrency
  Path config;
};

struct SplitOptions {
  Path manifest;         // read (unless `in` is set) and rewritten in place
  Path in;               // build the manifest from this directory first
  std::string dataset = "generic";
  std::string fractions;  // "0.7,0.1,0.2"
  std::optional<std::uint64_t> seed;
  bool no_stratify = false;
  Path config;
};

struct TrainOptions {
  Path manifest;
  Path config;
  std::string cell;
  Path out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> patience;
  std::optional<double> lr;
  std::string filters;  // "128,64,32"
};

struct PredictOptions {
  Path ckpt;
  Path manifest;
  Path out;
  std::string split = "test";  // or "all"
};

struct CalibrateOptions {
  std::vector<Path> ckpts;
  std::vector<Path> logits;     // stored logit tables, used in place of checkpoints
  std::vector<Path> manifests;  // one per checkpoint
  std::vector<std::string> domains;
  Path out;
  bool append = false;
  Path config;
};

struct FuseOptions {
  Path ensemble;
  Path manifest;
  Path out;
  std::optional<double> tau;
  std::string mode;
  Path config;
};

struct EvalOptions {
  std::vector<Path> preds;  // one file per seed when sweeping
  Path manifest;
  Path out;
  std::vector<std::uint64_t> seeds;
};

struct CaseStudyOptions {
  std::optional<double> tau;
  std::string mode;
  Path fixture;  // defaults to the compiled-in fixture
  Path out;
  Path config;
};

struct ReportOptions {
  std::vector<Path> inputs;
  Path out;
};

int cmd_synth(const SynthOptions& o, Streams io);
int cmd_extract(const ExtractOptions& o, Streams io);
int cmd_split(const SplitOptions& o, Streams io);
int cmd_train(const TrainOptions& o, Streams io);
int cmd_predict(const PredictOptions& o, Streams io);
int cmd_calibrate(const CalibrateOptions& o, Streams io);
int cmd_fuse(const FuseOptions& o, Streams io);
int cmd_eval(const EvalOptions& o, Streams io);
int cmd_casestudies(const CaseStudyOptions& o, Streams io);
int cmd_report(const ReportOptions& o, Streams io);

/// Parses `args` (without the program name) and runs one subcommand.
/// Library errors are reported on `err` and turned into exit codes.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace crynet::cli
