// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

// Regenerates the frozen oracle fixtures under tests/fixtures.
//
//   make_fixtures <output-dir>
//
// Fixture contents are fully determined by the constants below, so rerunning
// the tool reproduces the checked-in files byte for byte.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "specrl/oracle.hpp"

namespace {

using namespace specrl;

/// Same next-token distribution in every context.
Policy constant_policy(const Vocab& vocab, int window, std::initializer_list<double> probs) {
  Policy p(vocab, window);
  for (std::size_t c = 0; c < p.num_contexts(); ++c) {
    auto row = p.logits(c);
    std::size_t i = 0;
    for (double q : probs) row[i++] = std::log(q);
  }
  return p;
}

Policy random_policy(const Vocab& vocab, int window, double scale, std::uint64_t seed) {
  Policy p(vocab, window);
  SeededStream stream(seed, StreamPurpose::kInit, 0, 0, 0);
  for (double& v : p.params()) v = scale * (2.0 * stream.next() - 1.0);
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <output-dir>\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);

  struct Spec {
    const char* name;
    Policy old_policy;
    Policy new_policy;
    TokenSeq prompt;
    int max_len;
  };
  const Vocab v2(2, 1), v3(3, 2), v4(4, 3);
  const Spec specs[] = {
      // Token 0 is "a", token 1 is eos.
      {"two_token_len2", constant_policy(v2, 1, {0.5, 0.5}), constant_policy(v2, 1, {0.8, 0.2}),
       {0}, 2},
      {"two_token_len3", constant_policy(v2, 1, {0.5, 0.5}), constant_policy(v2, 1, {0.8, 0.2}),
       {0}, 3},
      {"vocab2_len3_ctx", random_policy(v2, 2, 2.0, 11), random_policy(v2, 2, 2.0, 12), {0, 0}, 3},
      {"vocab3_len2", random_policy(v3, 2, 1.5, 21), random_policy(v3, 2, 1.5, 22), {1}, 2},
      {"vocab3_len3", random_policy(v3, 2, 1.5, 31), random_policy(v3, 2, 1.5, 32), {0, 1}, 3},
      {"vocab4_len3", random_policy(v4, 1, 1.0, 41), random_policy(v4, 1, 1.0, 42), {2}, 3},
  };

  for (const auto& s : specs) {
    const auto f = make_fixture(s.name, s.old_policy, s.new_policy, s.prompt, s.max_len);
    const auto path = dir / (std::string(s.name) + ".json");
    save_fixture(f, path);
    std::printf("%-18s sequences=%zu paper_tv=%.17g\n", s.name, f.direct_new.size(), f.paper_tv);
  }
  return 0;
}
