#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

/**
 * @file spec_rollout.hpp
 * @brief Verify a cached rollout under the current policy, keep the accepted
 *        prefix, and regenerate from the first rejected position.
 *
 * Token i of the cached draft is accepted with probability
 *
 *     a_i = min(1, lenience * p_new_i / p_old_i)
 *
 * where p_old_i is the probability recorded when the draft was generated and
 * p_new_i is the current policy's probability of the same token in the same
 * context. The scan draws one uniform per token and stops at the first
 * u_i > a_i; that index is the rejection position n (1-based), and
 * n = len + 1 means every token was accepted.
 *
 * Two ways to fill position n:
 *  - kPaperFaithful: sample position n from the current policy's full
 *    next-token distribution, then continue autoregressively.
 *  - kExactResidual: sample position n from normalize(max(0, p_new - p_old))
 *    over the vocabulary, which makes the output distributed exactly as
 *    direct sampling from the current policy. Requires lenience == 1 and the
 *    draft policy's full distribution at position n.
 */

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "specrl/cache.hpp"
#include "specrl/policy.hpp"
#include "specrl/rng.hpp"

namespace specrl {

class LenienceSetting {
 public:
  enum class Kind { kFinite, kZero, kInfinite };

  /// Throws InvalidConfig unless 0 < value < inf.
  static LenienceSetting finite(double value);
  /// finite(e^log_value) with log_value kept exactly.
  static LenienceSetting from_log(double log_value);
  static LenienceSetting zero() { return LenienceSetting(Kind::kZero, 0.0, 0.0); }
  static LenienceSetting infinite() { return LenienceSetting(Kind::kInfinite, 0.0, 0.0); }

  /// Accepts "0", "inf", "e^x", or a positive decimal such as "1" or "1.5".
  /// Throws InvalidConfig naming the token otherwise.
  static LenienceSetting parse(std::string_view token);

  Kind kind() const noexcept { return kind_; }
  /// Only meaningful for kFinite.
  double value() const noexcept { return value_; }
  double log_value() const noexcept { return log_value_; }
  bool is_exactly_one() const noexcept { return kind_ == Kind::kFinite && value_ == 1.0; }

  /// Canonical spelling: "0", "inf", "e^<x>" or the decimal value.
  std::string label() const;

  /// Total order: zero < every finite value < infinite.
  friend bool operator<(const LenienceSetting& a, const LenienceSetting& b);
  friend bool operator==(const LenienceSetting& a, const LenienceSetting& b);

 private:
  LenienceSetting(Kind kind, double value, double log_value)
      : kind_(kind), value_(value), log_value_(log_value) {}

  Kind kind_;
  double value_;
  double log_value_;
  bool from_exponent_ = false;
};

enum class ResumeMode { kPaperFaithful, kExactResidual };

std::string to_string(ResumeMode mode);
/// "paper_faithful" or "exact_residual"; throws InvalidConfig otherwise.
ResumeMode parse_resume_mode(std::string_view text);

/// Throws InvalidConfig when kExactResidual is combined with lenience != 1.
void check_resume_mode(ResumeMode mode, const LenienceSetting& lenience);

struct VerificationResult {
  std::vector<double> accept_probs;
  std::vector<double> uniforms;         ///< only the uniforms actually drawn
  std::size_t rejection_position = 1;   ///< 1-based; len + 1 when fully reused
  std::size_t reused_tokens = 0;
  std::size_t generated_tokens = 0;
  bool fully_reused = false;
};

/// Elementwise min(1, lenience * new/old), computed as exp(log l + log new - log old).
std::vector<double> acceptance_probs(std::span<const double> old_probs,
                                     std::span<const double> new_probs,
                                     const LenienceSetting& lenience);

struct RejectionScan {
  std::size_t position = 1;
  std::vector<double> uniforms;
};

/// Draws uniforms in token order and stops at the first u > a_i.
RejectionScan find_rejection(std::span<const double> accept_probs, UniformSource& stream);

/// Normalized positive part of (target - draft). Throws InternalInvariant if it has no mass.
std::vector<double> residual_distribution(std::span<const double> target,
                                          std::span<const double> draft);

/// Regenerates from the rejection position onward. `draft_dist` is the draft
/// policy's next-token distribution at that position and is required in
/// kExactResidual mode. Returned probabilities are current-policy
/// probabilities of the emitted tokens.
Continuation resume(const Policy& policy, std::span<const Token> prompt,
                    std::span<const Token> verified_prefix,
                    std::optional<std::span<const double>> draft_dist, ResumeMode mode,
                    const LenienceSetting& lenience, int max_len, UniformSource& stream);

struct SpecRolloutResult {
  Trajectory trajectory;
  VerificationResult verification;
};

/// Verify-then-resume for one cached draft. Verification uniforms come from
/// `verify_stream`; all resampling uses `generate_stream`. Only the first
/// `max_len` cached tokens are considered. `draft_policy` is required in
/// kExactResidual mode. The trajectory's gen_probs hold current-policy
/// probabilities for every token, reused or generated; reward is left at 0.
SpecRolloutResult speculative_rollout(const Policy& policy, std::uint64_t prompt_id,
                                      std::span<const Token> prompt, const CachedRollout& cached,
                                      const LenienceSetting& lenience, ResumeMode mode,
                                      int max_len, UniformSource& verify_stream,
                                      UniformSource& generate_stream,
                                      const Policy* draft_policy = nullptr);

/// Baseline that skips verification: the rejection position is uniform on
/// [1, len + 1], then paper-faithful resume. The VerificationResult carries no
/// acceptance probabilities or uniforms.
SpecRolloutResult random_reuse_rollout(const Policy& policy, std::uint64_t prompt_id,
                                       std::span<const Token> prompt, const CachedRollout& cached,
                                       int max_len, SeededStream& position_stream,
                                       UniformSource& generate_stream);

}  // namespace specrl
