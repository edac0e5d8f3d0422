#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

/**
 * @file oracle.hpp
 * @brief Exact output distributions by brute-force enumeration.
 *
 * These routines never sample. They walk every terminated response (ending in
 * eos, or reaching max_len) and multiply conditional probabilities along the
 * way. enumerate_spec additionally integrates over the cached draft and over
 * the verification uniforms: a draft rejected at position n contributes with
 * weight prod_{i<n} a_i * (1 - a_n), a fully accepted draft with prod_i a_i.
 *
 * The acceptance rule is evaluated here from first principles and does not
 * call into spec_rollout, so the two can check each other.
 */

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>

#include "specrl/policy.hpp"
#include "specrl/spec_rollout.hpp"

namespace specrl {

/// Terminated response -> probability, in lexicographic sequence order.
using SequenceDistribution = std::map<TokenSeq, double>;

/// Largest number of terminated responses an enumeration will visit.
inline constexpr double kMaxEnumeratedSequences = 1e6;

/// Number of distinct terminated responses of length 1..max_len over the vocab.
double count_sequences(int vocab_size, int max_len);

/// Exact distribution of sample_continuation(policy, prompt, {}, max_len).
SequenceDistribution enumerate_direct(const Policy& policy, std::span<const Token> prompt,
                                      int max_len);

/// Exact distribution of the speculative rollout output when the cached draft
/// is itself a direct sample from `policy_old`.
SequenceDistribution enumerate_spec(const Policy& policy_new, const Policy& policy_old,
                                    std::span<const Token> prompt, int max_len,
                                    const LenienceSetting& lenience, ResumeMode mode);

double total_mass(const SequenceDistribution& dist);

/// 0.5 * sum |a - b| over the union of supports.
double total_variation(const SequenceDistribution& a, const SequenceDistribution& b);

// ---------------------------------------------------------------------------
// Frozen regression fixtures
// ---------------------------------------------------------------------------

/// A tiny (draft policy, target policy, prompt, max_len) instance with the
/// distributions this module produced for it when the fixture was frozen.
struct OracleFixture {
  std::string name;
  Policy policy_old;
  Policy policy_new;
  TokenSeq prompt;
  int max_len = 1;
  SequenceDistribution direct_new;
  SequenceDistribution direct_old;
  SequenceDistribution spec_paper;   ///< paper-faithful resume, lenience 1
  double paper_tv = 0.0;             ///< TV(spec_paper, direct_new)
};

/// Computes every frozen field from the policies.
OracleFixture make_fixture(std::string name, Policy policy_old, Policy policy_new,
                           TokenSeq prompt, int max_len);

/// JSON with hex-encoded doubles; load(save(f)) reproduces every value bit for bit.
void save_fixture(const OracleFixture& fixture, const std::filesystem::path& path);
OracleFixture load_fixture(const std::filesystem::path& path);

}  // namespace specrl
