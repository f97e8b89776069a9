#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

namespace fanet::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitData = 2,
  kExitNumeric = 3,
  kExitIncompatibleCheckpoint = 4,
  kExitGradcheck = 5,
};

struct TrainOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> resume;
};

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::optional<std::filesystem::path> split;
  std::string subset = "val";  // used with --split
  std::optional<std::filesystem::path> out;  // default: <checkpoint dir>/eval
};

struct ExplainOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path image;
  std::filesystem::path out;
};

struct ProjectOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path out;
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::string corrupt_op;
};

struct SynthOptions {
  std::filesystem::path out;
  std::size_t per_class = 16;
  std::size_t size = 32;
  std::uint64_t seed = 0;
};

// Each command throws fanet errors; run() maps them to exit codes.
int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& err);
int cmd_explain(const ExplainOptions& o, std::ostream& out, std::ostream& err);
int cmd_project(const ProjectOptions& o, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out, std::ostream& err);
int cmd_synth(const SynthOptions& o, std::ostream& out, std::ostream& err);

/// Parses arguments and dispatches. Failures print one line
/// `error code=<n> kind=<kind>: <message>` to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fanet::cli
