#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specrl/policy.hpp"

namespace specrl {

// ---------------------------------------------------------------------------
// Cross-epoch overlap
// ---------------------------------------------------------------------------

enum class RougeVariant { kRecall, kF1 };

struct RougeScore {
  double value = 0.0;
  bool degenerate = false;  ///< reference was empty; value forced to 0
};

/// Multiset unigram overlap of `candidate` against `reference` (the previous
/// epoch's response). kRecall divides the clipped match count by
/// |reference|; kF1 is the harmonic mean of that recall and precision.
RougeScore rouge1(std::span<const Token> reference, std::span<const Token> candidate,
                  RougeVariant variant = RougeVariant::kRecall);

/// prompt_id -> responses, index-aligned by group slot.
using EpochResponses = std::map<std::uint64_t, std::vector<TokenSeq>>;

struct OverlapReport {
  std::int64_t epoch = 0;
  double mean_rouge1 = 0.0;
  std::vector<double> values;  ///< one per (prompt, slot) pair, in key order
  std::size_t degenerate_pairs = 0;
};

/// Pairs slot i of each prompt across the two epochs and averages rouge1 over
/// all pairs. Throws MalformedInput listing prompts missing from either side.
OverlapReport epoch_overlap(const EpochResponses& prev_epoch, const EpochResponses& curr_epoch,
                            std::int64_t epoch = 0, RougeVariant variant = RougeVariant::kRecall);

// ---------------------------------------------------------------------------
// Policy-shift diagnostics
// ---------------------------------------------------------------------------

/// Mean over contexts of the exact categorical KL(new || old).
double kl_estimate(const Policy& policy_new, const Policy& policy_old,
                   std::span<const TokenSeq> contexts);

/// Spearman rank correlation with average ranks for ties. NaN when either
/// side is constant or fewer than two points are given.
double spearman(std::span<const double> xs, std::span<const double> ys);

// ---------------------------------------------------------------------------
// Metrics sink
// ---------------------------------------------------------------------------

/// One row of the metrics CSV: a training step, or an epoch summary when
/// `step` is empty.
struct MetricsRecord {
  std::int64_t epoch = 0;
  std::optional<std::int64_t> step;
  std::uint64_t tokens_generated = 0;
  std::uint64_t tokens_reused = 0;
  std::uint64_t baseline_tokens = 0;  ///< paired vanilla run's generated tokens
  double speedup = 1.0;               ///< baseline_tokens / tokens_generated
  double mean_prefix_len = 0.0;
  double full_reuse_ratio = 0.0;
  double rouge1 = 0.0;
  double mean_reward = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  std::size_t samples = 0;
  std::uint64_t response_tokens = 0;  ///< sum of response lengths

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

/// baseline / generated, or +inf when nothing was generated.
double speedup_ratio(std::uint64_t baseline_tokens, std::uint64_t tokens_generated);

/// Append-only CSV with columns
/// epoch,step,tokens_generated,tokens_reused,speedup,mean_prefix_len,
/// full_reuse_ratio,rouge1,mean_reward,entropy,kl,clip_fraction.
/// Epoch-summary rows carry "summary" in the step column.
class MetricsCsvWriter {
 public:
  explicit MetricsCsvWriter(const std::filesystem::path& path);

  void write(const MetricsRecord& record);
  void flush() { out_.flush(); }

  static const char* header();
  static std::string format_row(const MetricsRecord& record);

 private:
  std::ofstream out_;
};

/// Reads a file written by MetricsCsvWriter; throws ParseError with the line number.
std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

/// Round-trippable decimal text for a double ("%.17g", "inf", "nan").
std::string format_double(double v);

}  // namespace specrl
