// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include "specrl/rng.hpp"

#include <cmath>
#include <stdexcept>

#include "specrl/error.hpp"

namespace specrl {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t w : words) h = splitmix64(h ^ splitmix64(w));
  return h;
}

std::int64_t SeededStream::next_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw MalformedInput("next_int: empty range");
  const auto span = static_cast<double>(hi - lo + 1);
  auto offset = static_cast<std::int64_t>(std::floor(next() * span));
  if (offset > hi - lo) offset = hi - lo;
  return lo + offset;
}

double ScriptedStream::next() {
  if (pos_ >= values_.size()) throw std::out_of_range("ScriptedStream exhausted");
  return values_[pos_++];
}

std::size_t sample_categorical(std::span<const double> probs, double u) {
  if (probs.empty()) throw MalformedInput("sample_categorical: empty distribution");
  double total = 0.0;
  for (double p : probs) total += p;
  const double target = u * total;
  double cum = 0.0;
  std::size_t last_positive = probs.size();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = i;
    cum += probs[i];
    if (target < cum) return i;
  }
  if (last_positive == probs.size()) throw InternalInvariant("sample_categorical: no positive mass");
  // Rounding left target >= cum; fall back to the last outcome with mass.
  return last_positive;
}

}  // namespace specrl
