#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace specrl {

/// Source of uniforms in the open interval (0, 1).
///
/// Open on both ends so that an acceptance probability of exactly 0 always
/// rejects and exactly 1 always accepts.
class UniformSource {
 public:
  virtual ~UniformSource() = default;
  virtual double next() = 0;
};

/// Independent substream purposes. Each (seed, epoch, prompt, slot, purpose)
/// tuple maps to its own generator, so batch order never changes results and
/// lenience sweeps sharing a seed see identical verification uniforms.
enum class StreamPurpose : std::uint64_t {
  kVerify = 1,
  kGenerate = 2,
  kRandomReuse = 3,
  kShuffle = 4,
  kTask = 5,
  kInit = 6,
};

/// Mixes a list of words into a single 64-bit seed (splitmix64 finalizer chain).
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> words);

/// mt19937_64-backed uniform stream; the bits-to-double map is fixed here so
/// results do not depend on the standard library's distribution classes.
class SeededStream final : public UniformSource {
 public:
  explicit SeededStream(std::uint64_t seed) : engine_(seed) {}

  SeededStream(std::uint64_t experiment_seed, StreamPurpose purpose, std::uint64_t epoch,
               std::uint64_t prompt_id, std::uint64_t slot)
      : engine_(derive_seed({experiment_seed, static_cast<std::uint64_t>(purpose), epoch,
                             prompt_id, slot})) {}

  double next() override {
    // 53 random bits, offset by half an ulp: result lies strictly inside (0, 1).
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform integer in [lo, hi].
  std::int64_t next_int(std::int64_t lo, std::int64_t hi);

 private:
  std::mt19937_64 engine_;
};

/// Replays a fixed list of uniforms; throws once exhausted. Test and oracle helper.
class ScriptedStream final : public UniformSource {
 public:
  explicit ScriptedStream(std::vector<double> values) : values_(std::move(values)) {}

  double next() override;
  std::size_t consumed() const noexcept { return pos_; }

 private:
  std::vector<double> values_;
  std::size_t pos_ = 0;
};

/// Index of the categorical outcome selected by uniform `u` (inverse CDF).
/// Zero-probability entries are never selected.
std::size_t sample_categorical(std::span<const double> probs, double u);

}  // namespace specrl
