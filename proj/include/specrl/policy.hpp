#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

/**
 * @file policy.hpp
 * @brief Tabular contextual softmax policy over a finite vocabulary.
 *
 * The policy conditions on the last `k` tokens of prompt + response. Contexts
 * shorter than `k` are left-padded with a pad symbol equal to `vocab.size`,
 * which is never a generatable token, so every context key is unambiguous.
 * Each context owns one row of `vocab.size` logits; probabilities are
 * softmax(logits / temperature).
 *
 * Per-token probabilities are stored as plain probabilities (trajectories,
 * cache entries), while ratios p_new / p_old are always formed as
 * exp(log p_new - log p_old). The two are equal for any probability in
 * (0, 1]; the log form only avoids underflow for tiny probabilities.
 */

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "specrl/rng.hpp"

namespace specrl {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

struct Vocab {
  int size = 2;
  Token eos_id = 1;

  Vocab() = default;
  Vocab(int size, Token eos_id);

  bool contains(Token t) const noexcept { return t >= 0 && t < size; }
  Token pad() const noexcept { return static_cast<Token>(size); }

  friend bool operator==(const Vocab&, const Vocab&) = default;
};

class Policy {
 public:
  /// All logits zero, i.e. the uniform policy.
  Policy(Vocab vocab, int context_window, double temperature = 1.0);

  const Vocab& vocab() const noexcept { return vocab_; }
  int context_window() const noexcept { return window_; }
  double temperature() const noexcept { return temperature_; }
  std::size_t num_contexts() const noexcept { return num_contexts_; }

  /// Row index for the context formed by the last `k` tokens of `history`.
  /// Throws MalformedInput on an invalid token id.
  std::size_t context_index(std::span<const Token> history) const;

  std::span<double> logits(std::size_t context) {
    return {params_.data() + context * stride(), stride()};
  }
  std::span<const double> logits(std::size_t context) const {
    return {params_.data() + context * stride(), stride()};
  }

  /// Flat logit table, row-major by context index.
  std::vector<double>& params() noexcept { return params_; }
  const std::vector<double>& params() const noexcept { return params_; }

  /// Softmax of one row at this policy's temperature.
  std::vector<double> dist_at(std::size_t context) const;
  std::vector<double> log_dist_at(std::size_t context) const;

  friend bool operator==(const Policy&, const Policy&) = default;

 private:
  std::size_t stride() const noexcept { return static_cast<std::size_t>(vocab_.size); }

  Vocab vocab_;
  int window_;
  double temperature_;
  std::size_t num_contexts_;
  std::vector<double> params_;
};

/// A prompt-conditioned response and the probability of each response token
/// under the policy recorded for it.
struct Trajectory {
  std::uint64_t prompt_id = 0;
  std::uint32_t slot = 0;
  TokenSeq prompt;
  TokenSeq response;
  std::vector<double> gen_probs;
  double reward = 0.0;
};

/// Throws MalformedInput unless len(gen_probs) == len(response) and every
/// probability lies in (0, 1].
void validate_trajectory(const Trajectory& t, const Vocab& vocab);

std::vector<double> next_token_dist(const Policy& policy, std::span<const Token> context);

/// Probability of each response token given prompt + the response before it.
std::vector<double> score_sequence(const Policy& policy, std::span<const Token> prompt,
                                   std::span<const Token> response);

struct Continuation {
  TokenSeq tokens;
  std::vector<double> probs;
};

/// Samples autoregressively after `prefix` until eos or until the response
/// (prefix + continuation) reaches `max_len` tokens.
Continuation sample_continuation(const Policy& policy, std::span<const Token> prompt,
                                 std::span<const Token> prefix, int max_len,
                                 UniformSource& stream);

/// Mean Shannon entropy (nats) of the next-token distribution over `contexts`.
double policy_entropy(const Policy& policy, std::span<const TokenSeq> contexts);

// ---------------------------------------------------------------------------
// Clipped-surrogate update
// ---------------------------------------------------------------------------

struct UpdateConfig {
  double learning_rate = 1.0;
  double clip_low = 0.2;
  double clip_high = 0.2;
  double kl_coef = 1e-4;
};

/// One (trajectory, advantage, behavior probabilities) triple. Views only;
/// the referenced storage must outlive the call.
struct UpdateItem {
  std::span<const Token> prompt;
  std::span<const Token> response;
  double advantage = 0.0;
  std::span<const double> old_probs;
};

struct UpdateStats {
  double clip_fraction = 0.0;  ///< share of tokens where the clipped branch binds
  double mean_kl = 0.0;        ///< token-mean KL(updated || reference) after the step
  double mean_entropy = 0.0;   ///< token-mean entropy before the step
  double objective = 0.0;      ///< surrogate value before the step
  std::size_t num_tokens = 0;
};

/// Token-mean clipped surrogate minus kl_coef * KL(policy || reference) per token.
double surrogate_objective(const Policy& policy, const Policy& reference,
                           std::span<const UpdateItem> batch, const UpdateConfig& config);

/// Gradient of surrogate_objective w.r.t. the flat logit table. Fills `stats`
/// (except mean_kl) when non-null.
std::vector<double> surrogate_gradient(const Policy& policy, const Policy& reference,
                                       std::span<const UpdateItem> batch,
                                       const UpdateConfig& config, UpdateStats* stats = nullptr);

struct UpdateResult {
  Policy policy;
  UpdateStats stats;
};

/// One gradient-ascent step. The KL penalty is taken against `reference`, or
/// against the pre-step policy when `reference` is null. Throws Divergence on
/// a non-finite gradient.
UpdateResult update(const Policy& policy, std::span<const UpdateItem> batch,
                    const UpdateConfig& config, const Policy* reference = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_policy(const Policy& policy, const std::filesystem::path& path);
Policy load_policy(const std::filesystem::path& path);

}  // namespace specrl
