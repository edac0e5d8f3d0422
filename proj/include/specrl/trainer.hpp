#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

/**
 * @file trainer.hpp
 * @brief Toy verifiable-reward training loop; see RolloutMode for the ways a
 *        batch can be rolled out.
 *
 * Task: digitwise modular sum. A prompt is `a + b` written as two D-digit
 * strings over base M; the target response is the D digits
 * (a_i + b_i) mod M followed by eos. Reward is 1 for an exact match and 0
 * otherwise.
 *
 * Each epoch visits every prompt exactly once, split into steps_per_epoch
 * batches of prompts_per_batch prompts; every prompt is rolled out
 * group_size times (one per cache slot). Rollouts of epoch t are committed
 * to the cache when epoch t ends and can be reused from epoch t + 1.
 */

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "specrl/cache.hpp"
#include "specrl/metrics.hpp"
#include "specrl/policy.hpp"
#include "specrl/spec_rollout.hpp"

namespace specrl {

struct Prompt {
  std::uint64_t id = 0;
  TokenSeq tokens;
};

class ModularSumTask {
 public:
  /// Tokens 0..modulus-1 are digits, `modulus` is '+', `modulus + 1` is eos.
  ModularSumTask(int digits, int modulus);

  int digits() const noexcept { return digits_; }
  int modulus() const noexcept { return modulus_; }
  Vocab vocab() const { return Vocab(modulus_ + 2, eos()); }
  Token plus() const noexcept { return static_cast<Token>(modulus_); }
  Token eos() const noexcept { return static_cast<Token>(modulus_ + 1); }

  /// `count` prompts with ids 0..count-1, drawn from a stream seeded by `seed`.
  std::vector<Prompt> generate(std::size_t count, std::uint64_t seed) const;

  /// Digitwise sum; throws MalformedInput if `prompt` is not `a + b`.
  TokenSeq answer(std::span<const Token> prompt) const;

  /// 1 iff the response, with a trailing eos removed, equals answer(prompt).
  double reward(std::span<const Token> prompt, std::span<const Token> response) const;

  /// Human-readable form, e.g. "18+29" or "37<eos>".
  std::string render(std::span<const Token> tokens) const;

 private:
  int digits_;
  int modulus_;
};

enum class RolloutMode { kVanilla, kSpecRl, kRandomReuse };

std::string to_string(RolloutMode mode);
/// "vanilla", "spec_rl" or "random_reuse"; throws InvalidConfig otherwise.
RolloutMode parse_rollout_mode(std::string_view text);

struct TrainConfig {
  int epochs = 10;
  int steps_per_epoch = 8;
  int prompts_per_batch = 32;
  int group_size = 8;
  int max_len = 32;
  LenienceSetting lenience = LenienceSetting::from_log(0.5);
  ResumeMode resume_mode = ResumeMode::kPaperFaithful;
  RolloutMode rollout_mode = RolloutMode::kSpecRl;
  double learning_rate = 100.0;
  double kl_coef = 1e-4;
  double clip_low = 0.2;
  double clip_high = 0.2;
  /// Gradient steps taken on each rollout batch; steps after the first see
  /// importance ratios != 1, which is what the clip diagnostic measures.
  int updates_per_batch = 2;
  int context_window = 3;
  int task_digits = 1;
  int task_modulus = 3;
  std::uint64_t seed = 0;

  std::size_t num_prompts() const {
    return static_cast<std::size_t>(steps_per_epoch) * static_cast<std::size_t>(prompts_per_batch);
  }
};

/// Throws InvalidConfig naming the offending field.
void validate(const TrainConfig& config);

/// Per-rollout binary rewards -> group-relative advantages
/// (r_i - mean) / (std + 1e-6) with the population std; all zeros when every
/// reward is equal. Throws MalformedInput for fewer than two rewards.
std::vector<double> group_advantages(std::span<const double> rewards);

/// Draft policy that generated each cached entry, keyed by prompt id. Only
/// needed for exact-residual resume.
using DraftPolicies = std::map<std::uint64_t, std::shared_ptr<const Policy>>;

struct BatchRollout {
  std::vector<Trajectory> trajectories;                        ///< prompt-major, slot-minor
  std::vector<std::optional<VerificationResult>> verifications;  ///< empty on cache miss / vanilla
  std::vector<CachedRollout> refreshed;                        ///< entries to commit at epoch end
  std::vector<std::optional<double>> prev_overlap;             ///< rouge1 vs cached response, if any
};

/// Rolls out every (prompt, slot) of the batch. Each pair draws from its own
/// RNG substreams keyed by (seed, epoch, prompt, slot), so the result does not
/// depend on batch order.
BatchRollout rollout_batch(const Policy& policy, const ModularSumTask& task,
                           const RolloutCache& cache, const TrainConfig& config, std::int64_t epoch,
                           std::span<const Prompt> prompts,
                           const DraftPolicies* draft_policies = nullptr);

using EpochMetrics = MetricsRecord;

/// Per-step generated-token counts of a paired vanilla run, in step order.
using BaselineTokens = std::vector<std::uint64_t>;

struct TraceRecord {
  std::int64_t epoch;
  std::uint64_t prompt_id;
  std::uint32_t slot;
  TokenSeq tokens;
};

struct RunObserver {
  std::function<void(const MetricsRecord&)> on_step;
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(const TraceRecord&)> on_trace;
};

struct ExperimentResult {
  std::vector<MetricsRecord> steps;
  std::vector<EpochMetrics> epochs;
  Policy final_policy;
  RolloutCache final_cache;
};

/// Runs config.epochs * config.steps_per_epoch steps. Speedup columns use
/// `baseline` when given; otherwise a vanilla run uses its own counts and any
/// other mode runs the paired vanilla experiment (same seed) first.
/// On Divergence the records produced so far have already been passed to
/// `observer`, and the exception propagates.
ExperimentResult run_experiment(const TrainConfig& config, const RunObserver& observer = {},
                                const BaselineTokens* baseline = nullptr);

/// Generated-token count per step, for use as a BaselineTokens.
BaselineTokens step_tokens(const ExperimentResult& result);

}  // namespace specrl
