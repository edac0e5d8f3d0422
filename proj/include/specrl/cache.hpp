#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <utility>
#include <vector>

#include "specrl/policy.hpp"

namespace specrl {

/// A stored response from an earlier epoch; the draft for speculative verification.
struct CachedRollout {
  std::uint64_t prompt_id = 0;
  std::uint32_t slot = 0;
  TokenSeq response;
  std::vector<double> old_probs;  ///< per-token probability under the generating policy
  std::int64_t epoch = 0;         ///< epoch that produced the response
  double reward = 0.0;

  friend bool operator==(const CachedRollout&, const CachedRollout&) = default;
};

/// Throws MalformedInput unless the response is non-empty and each of its
/// tokens has one probability in (0, 1].
void validate_rollout(const CachedRollout& rollout);

/// One entry per (prompt, group slot). A put replaces whatever the slot held,
/// so the store never keeps more than one generation per slot.
class RolloutCache {
 public:
  using Key = std::pair<std::uint64_t, std::uint32_t>;

  /// `capacity` bounds the number of slots; 0 means unbounded.
  explicit RolloutCache(std::size_t capacity = 0) : capacity_(capacity) {}

  /// Stored entry or nullptr.
  const CachedRollout* get(std::uint64_t prompt_id, std::uint32_t slot) const;

  /// Like get(), but only returns entries written before `current_epoch`.
  const CachedRollout* lookup(std::uint64_t prompt_id, std::uint32_t slot,
                              std::int64_t current_epoch) const;

  /// Throws MalformedInput for an invalid rollout and std::length_error when a
  /// new slot would exceed the capacity.
  void put(CachedRollout rollout);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return entries_.empty(); }

  /// Entries in (prompt_id, slot) order.
  const std::map<Key, CachedRollout>& entries() const noexcept { return entries_; }

  friend bool operator==(const RolloutCache& a, const RolloutCache& b) {
    return a.entries_ == b.entries_;
  }

  /// Versioned header line followed by one JSON record per slot; floating-point
  /// values are written as hexadecimal literals so a reload is bit-exact.
  void persist(const std::filesystem::path& path) const;

  /// Throws ParseError naming the offending line.
  static RolloutCache load(const std::filesystem::path& path, std::size_t capacity = 0);

 private:
  std::size_t capacity_;
  std::map<Key, CachedRollout> entries_;
};

}  // namespace specrl
