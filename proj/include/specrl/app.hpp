#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

/**
 * @file app.hpp
 * @brief Command implementations behind the `specrl` executable.
 *
 * Config files are JSON objects:
 *
 *     {
 *       "schema_version": 1,
 *       "seed": 7,
 *       "epochs": 10, "steps_per_epoch": 8, "prompts_per_batch": 32,
 *       "group_size": 8, "max_len": 32,
 *       "lenience": "e^0.5", "resume_mode": "paper_faithful",
 *       "rollout_mode": "spec_rl",
 *       "learning_rate": 100, "kl_coef": 1e-4, "clip_low": 0.2, "clip_high": 0.2,
 *       "updates_per_batch": 2, "context_window": 3,
 *       "task": {"digits": 1, "modulus": 3},
 *       "output": {"dir": "out", "metrics_file": "metrics.csv", ...},
 *       "sweep": ["0", "1", "e^0.5", "inf"]
 *     }
 *
 * Only "schema_version" and "seed" are required. Unknown keys are rejected so
 * that typos do not silently fall back to defaults.
 */

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "specrl/trainer.hpp"

namespace specrl {

inline constexpr int kConfigSchemaVersion = 1;

/// Schema violation; field() is the dotted path of the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

struct OutputOptions {
  std::filesystem::path dir = "out";
  std::string metrics_file = "metrics.csv";
  std::string policy_file = "policy.txt";
  bool cache_snapshot = true;
  std::string cache_file = "cache.jsonl";
  bool trace = true;
  std::string trace_file = "trace.jsonl";
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  TrainConfig train;
  OutputOptions output;
  std::vector<LenienceSetting> sweep;
};

/// Parses JSON text; throws ConfigError naming the field.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Command-line values that take precedence over the config file.
struct Overrides {
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> rollout_mode;
  std::vector<std::string> lenience;  ///< train: one token; sweep: the list
};

/// Both streams receive human-readable progress and errors. Exit codes:
/// 0 success, 1 runtime or I/O failure, 2 configuration error, 3 divergence.
int cmd_train(const std::filesystem::path& config_path, const Overrides& overrides,
              std::ostream& out, std::ostream& err);
int cmd_sweep(const std::filesystem::path& config_path, const Overrides& overrides,
              std::ostream& out, std::ostream& err);
/// Writes overlap.csv into `out_dir`, or to `out` when `out_dir` is empty.
int cmd_analyze(const std::filesystem::path& trace_path,
                const std::optional<std::filesystem::path>& out_dir, std::ostream& out,
                std::ostream& err);

/// Parses argv and dispatches to a command.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

/// Epoch -> prompt -> slot-indexed responses.
using TraceEpochs = std::map<std::int64_t, EpochResponses>;

/// Reads JSONL records {"epoch", "prompt_id", "slot", "tokens"}. Throws
/// ParseError with the line number on malformed or duplicate records.
TraceEpochs read_trace(const std::filesystem::path& path);

/// One report per consecutive epoch pair. Throws MalformedInput naming the
/// first missing epoch when the epochs are not contiguous.
std::vector<OverlapReport> trace_overlap(const TraceEpochs& trace);

}  // namespace specrl
