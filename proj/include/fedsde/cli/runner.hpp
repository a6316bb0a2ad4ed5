#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsde/cli/config.hpp"

namespace fedsde::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { exit_ok = 0, exit_failure = 1, exit_invalid = 2, exit_numerical = 3 };

struct Artifact {
  std::string name;
  std::string content;
};

/// Runs the experiment in memory. Throws NumericalAbort on a non-finite
/// state and InvalidArgument on preconditions the config checks missed.
std::vector<Artifact> produce_artifacts(const ExperimentConfig& config, int threads);

/// Writes each artifact to a temporary name then renames it into place, the
/// manifest last. On failure every temporary is removed.
void write_artifacts(const std::string& directory, const std::vector<Artifact>& artifacts,
                     const Artifact& manifest);

/// JSON text with every float printed to 17 significant digits.
std::string json_text(const nlohmann::json& value);

struct RunOptions {
  std::optional<std::string> out_dir;
  std::optional<int> threads;
};

int run_command(const std::string& config_path, const RunOptions& options, std::ostream& out, std::ostream& err);
int validate_command(const std::string& config_path, std::ostream& out, std::ostream& err);

}  // namespace fedsde::cli
