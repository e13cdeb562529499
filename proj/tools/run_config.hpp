#pragma once

#include <filesystem>
#include <string>

#include <CLI11.hpp>

namespace drbd::cli {

/// Fills options of `cmd` that were not given on the command line from a
/// JSON object keyed by long option name ("batch-size" or "batch_size").
/// Arrays supply one result per element. Unknown keys are rejected.
void apply_json_config(CLI::App& cmd, const std::filesystem::path& file);

/// Every option of `cmd` with its effective value, as a JSON object with
/// sorted keys. Reloading it through apply_json_config reproduces the run.
std::string effective_config_json(const CLI::App& cmd);

/// Writes effective_config_json(cmd) to dir/config.json.
void echo_config(const CLI::App& cmd, const std::filesystem::path& dir);

}  // namespace drbd::cli
