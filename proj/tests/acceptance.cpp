// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

// Acceptance gate: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "specrl/app.hpp"
#include "specrl/error.hpp"
#include "specrl/oracle.hpp"
#include "test_util.hpp"

namespace specrl {
namespace {

namespace fs = std::filesystem;
using testing::random_policy;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int precision = 6) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Runs shared by criteria 6, 7 and 8.
struct ToyRuns {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<ExperimentResult> vanilla, spec;
  double seconds = 0.0;
};

const ToyRuns& toy_runs() {
  static const ToyRuns runs = [] {
    ToyRuns r;
    const Timer t;
    for (auto seed : r.seeds) {
      TrainConfig c;
      c.seed = seed;
      c.rollout_mode = RolloutMode::kVanilla;
      r.vanilla.push_back(run_experiment(c));
      const auto base = step_tokens(r.vanilla.back());
      c.rollout_mode = RolloutMode::kSpecRl;
      c.lenience = LenienceSetting::from_log(0.5);
      r.spec.push_back(run_experiment(c, {}, &base));
    }
    r.seconds = t.seconds();
    return r;
  }();
  return runs;
}

std::uint64_t tokens_after_first_epoch(const ExperimentResult& r) {
  std::uint64_t n = 0;
  for (const auto& e : r.epochs)
    if (e.epoch > 1) n += e.tokens_generated;
  return n;
}

// Random (old policy, new policy, prompt, draft) instance for rollout checks.
struct Instance {
  Policy old_policy;
  Policy new_policy;
  TokenSeq prompt;
  CachedRollout cached;
  int max_len;
};

Instance random_instance(std::uint64_t seed) {
  SeededStream s(seed);
  const int size = static_cast<int>(s.next_int(2, 6));
  const Vocab vocab(size, static_cast<Token>(size - 1));
  const int window = static_cast<int>(s.next_int(1, 3));
  const double scale = 0.5 + 3.0 * s.next();
  auto old_policy = random_policy(vocab, window, scale, 3 * seed + 1);
  auto new_policy = random_policy(vocab, window, scale, 3 * seed + 2);
  TokenSeq prompt;
  for (auto n = s.next_int(0, 3); n > 0; --n) prompt.push_back(static_cast<Token>(s.next_int(0, size - 1)));
  const int max_len = static_cast<int>(s.next_int(1, 12));
  auto draft = sample_continuation(old_policy, prompt, {}, max_len, s);
  CachedRollout cached{0, 0, draft.tokens, draft.probs, 1, 0.0};
  return {std::move(old_policy), std::move(new_policy), std::move(prompt), std::move(cached), max_len};
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const Timer t;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(testing::fixture_dir()))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  double worst = 0.0;
  bool in_range = true;
  for (const auto& f : files) {
    const auto fx = load_fixture(f);
    in_range = in_range && fx.policy_new.vocab().size <= 4 && fx.max_len <= 3;
    const auto spec = enumerate_spec(fx.policy_new, fx.policy_old, fx.prompt, fx.max_len,
                                     LenienceSetting::finite(1.0), ResumeMode::kExactResidual);
    worst = std::max(worst, total_variation(spec, enumerate_direct(fx.policy_new, fx.prompt, fx.max_len)));
  }
  const double secs = t.seconds();
  return {!files.empty() && in_range && worst < 1e-9 && secs < 10.0,
          std::to_string(files.size()) + " fixtures, max TV " + num(worst, 3) + ", " + num(secs, 3) + " s"};
}

Outcome criterion2() {
  const double hand_value = 0.078;
  const auto fx = load_fixture(testing::fixture_dir() / "two_token_len2.json");
  const auto spec = enumerate_spec(fx.policy_new, fx.policy_old, fx.prompt, fx.max_len,
                                   LenienceSetting::finite(1.0), ResumeMode::kPaperFaithful);
  const double tv = total_variation(spec, enumerate_direct(fx.policy_new, fx.prompt, fx.max_len));
  const double stored_gap = std::abs(tv - fx.paper_tv);
  const double hand_gap = std::abs(tv - hand_value);
  return {stored_gap <= 1e-12 && hand_gap <= 1e-12 && tv > 0.0,
          "TV " + num(tv, 17) + ", |TV - 0.078| " + num(hand_gap, 3) + ", |TV - frozen| " +
              num(stored_gap, 3)};
}

Outcome criterion3() {
  const int n = 2000;
  std::size_t inf_bad = 0, zero_bad = 0, same_bad = 0;
  for (int i = 0; i < n; ++i) {
    const auto in = random_instance(10000 + static_cast<std::uint64_t>(i));
    auto roll = [&](const Policy& p, const LenienceSetting& l) {
      SeededStream verify(static_cast<std::uint64_t>(i), StreamPurpose::kVerify, 0, 0, 0);
      SeededStream gen(static_cast<std::uint64_t>(i), StreamPurpose::kGenerate, 0, 0, 0);
      return speculative_rollout(p, 0, in.prompt, in.cached, l, ResumeMode::kPaperFaithful,
                                 in.max_len, verify, gen);
    };
    if (roll(in.new_policy, LenienceSetting::infinite()).verification.generated_tokens != 0) ++inf_bad;
    if (roll(in.new_policy, LenienceSetting::zero()).verification.reused_tokens != 0) ++zero_bad;
    for (const auto& l : {LenienceSetting::finite(1.0), LenienceSetting::from_log(0.5),
                          LenienceSetting::infinite()}) {
      const auto r = roll(in.old_policy, l);
      if (!r.verification.fully_reused || r.trajectory.response != in.cached.response) ++same_bad;
    }
  }
  // Same identity inside the training loop: every epoch after the first is a cache hit.
  TrainConfig c;
  c.seed = 1;
  c.epochs = 3;
  c.lenience = LenienceSetting::infinite();
  const BaselineTokens base(static_cast<std::size_t>(c.epochs * c.steps_per_epoch), 1);
  std::uint64_t loop_generated = 0;
  for (const auto& s : run_experiment(c, {}, &base).steps)
    if (s.epoch > 1) loop_generated += s.tokens_generated;
  const bool ok = inf_bad == 0 && zero_bad == 0 && same_bad == 0 && loop_generated == 0;
  return {ok, std::to_string(n) + " instances: inf violations " + std::to_string(inf_bad) +
                  ", zero violations " + std::to_string(zero_bad) + ", identical-policy violations " +
                  std::to_string(same_bad) + "; trainer inf-lenience tokens after epoch 1 " +
                  std::to_string(loop_generated)};
}

Outcome criterion4() {
  // Part 1: coupled rejection positions.
  const std::vector<LenienceSetting> ladder{
      LenienceSetting::zero(),         LenienceSetting::from_log(-1.0), LenienceSetting::from_log(-0.2),
      LenienceSetting::finite(1.0),    LenienceSetting::from_log(0.2),  LenienceSetting::from_log(0.5),
      LenienceSetting::from_log(1.0),  LenienceSetting::from_log(2.0),  LenienceSetting::infinite()};
  const int n = 1500;
  std::size_t coupled_bad = 0;
  for (int i = 0; i < n; ++i) {
    const auto in = random_instance(50000 + static_cast<std::uint64_t>(i));
    std::size_t prev = 0;
    for (const auto& l : ladder) {
      SeededStream verify(static_cast<std::uint64_t>(i), StreamPurpose::kVerify, 0, 0, 0);
      SeededStream gen(static_cast<std::uint64_t>(i), StreamPurpose::kGenerate, 0, 0, 0);
      const auto r = speculative_rollout(in.new_policy, 0, in.prompt, in.cached, l,
                                         ResumeMode::kPaperFaithful, in.max_len, verify, gen);
      if (r.verification.rejection_position < prev) ++coupled_bad;
      prev = r.verification.rejection_position;
    }
  }

  // Part 2: the shipped toy sweep, compared epoch by epoch across lenience values.
  const auto cfg = load_config(fs::path(SPECRL_CONFIG_DIR) / "toy.json");
  auto sweep = cfg.sweep;
  std::sort(sweep.begin(), sweep.end());
  TrainConfig vanilla = cfg.train;
  vanilla.rollout_mode = RolloutMode::kVanilla;
  const auto base = step_tokens(run_experiment(vanilla));
  std::vector<ExperimentResult> runs;
  for (const auto& l : sweep) {
    TrainConfig c = cfg.train;
    c.rollout_mode = RolloutMode::kSpecRl;
    c.lenience = l;
    runs.push_back(run_experiment(c, {}, &base));
  }
  std::size_t token_bad = 0, reuse_bad = 0, pairs = 0, first_bad_epoch = 0;
  std::size_t epoch2_bad = 0, cumulative_bad = 0;
  std::vector<std::uint64_t> cumulative(runs.size(), 0);
  for (std::size_t e = 0; e < runs.front().epochs.size(); ++e) {
    for (std::size_t k = 0; k < runs.size(); ++k)
      if (e > 0) cumulative[k] += runs[k].epochs[e].tokens_generated;
    for (std::size_t k = 1; k < runs.size(); ++k) {
      const auto& lo = runs[k - 1].epochs[e];
      const auto& hi = runs[k].epochs[e];
      ++pairs;
      const bool tb = hi.tokens_generated > lo.tokens_generated;
      const bool rb = hi.full_reuse_ratio < lo.full_reuse_ratio;
      token_bad += tb;
      reuse_bad += rb;
      if ((tb || rb) && first_bad_epoch == 0) first_bad_epoch = e + 1;
      if (e == 1) epoch2_bad += tb + rb;
    }
  }
  for (std::size_t k = 1; k < runs.size(); ++k) cumulative_bad += cumulative[k] > cumulative[k - 1];

  std::string labels;
  for (const auto& l : sweep) labels += (labels.empty() ? "" : " ") + l.label();
  std::string detail = std::to_string(n) + " coupled instances x " + std::to_string(ladder.size()) +
                       " lenience values: " + std::to_string(coupled_bad) +
                       " violations; toy sweep {" + labels + "} over " + std::to_string(pairs) +
                       " adjacent epoch pairs: tokens_generated violations " +
                       std::to_string(token_bad) + ", full_reuse_ratio violations " +
                       std::to_string(reuse_bad);
  if (first_bad_epoch) detail += " (first at epoch " + std::to_string(first_bad_epoch) + ")";
  detail += "; epoch-2 violations " + std::to_string(epoch2_bad) +
            "; cumulative tokens from epoch 2 violations " + std::to_string(cumulative_bad);
  return {coupled_bad == 0 && token_bad == 0 && reuse_bad == 0, detail};
}

double objective_at(Policy p, std::size_t i, double x, const Policy& ref,
                    std::span<const UpdateItem> items, const UpdateConfig& cfg) {
  p.params()[i] = x;
  return surrogate_objective(p, ref, items, cfg);
}

Outcome criterion5() {
  const Timer t;
  const Vocab vocab(3, 2);
  double worst = 0.0;
  std::size_t components = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = random_policy(vocab, 2, 1.0, 500 + seed);
    const auto ref = random_policy(vocab, 2, 1.0, 600 + seed);
    SeededStream s(700 + seed);
    std::vector<TokenSeq> prompts, responses;
    std::vector<std::vector<double>> old_probs;
    std::vector<double> adv;
    for (int i = 0; i < 6; ++i) {
      prompts.push_back({static_cast<Token>(s.next_int(0, 1))});
      responses.push_back({static_cast<Token>(s.next_int(0, 2)), static_cast<Token>(s.next_int(0, 2))});
      auto probs = score_sequence(p, prompts.back(), responses.back());
      for (double& q : probs) q = std::clamp(q * (0.5 + 1.2 * s.next()), 1e-3, 1.0);
      old_probs.push_back(probs);
      adv.push_back(2.0 * s.next() - 1.0);
    }
    std::vector<UpdateItem> items;
    for (std::size_t i = 0; i < prompts.size(); ++i)
      items.push_back({prompts[i], responses[i], adv[i], old_probs[i]});
    const UpdateConfig cfg{1.0, 0.2, 0.28, 0.05};
    const auto analytic = surrogate_gradient(p, ref, items, cfg);
    const double h = 1e-5;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double x = p.params()[i];
      const double numeric =
          (objective_at(p, i, x + h, ref, items, cfg) - objective_at(p, i, x - h, ref, items, cfg)) / (2 * h);
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
      ++components;
    }
  }
  const double secs = t.seconds();
  return {worst < 1e-5 && secs < 5.0, std::to_string(components) +
                                          " gradient components, max relative error " +
                                          num(worst, 3) + ", " + num(secs, 3) + " s"};
}

Outcome criterion6() {
  const auto& r = toy_runs();
  bool ok = r.seconds < 300.0;
  std::string detail;
  for (std::size_t i = 0; i < r.seeds.size(); ++i) {
    const double rv = r.vanilla[i].epochs.back().mean_reward;
    const double rs = r.spec[i].epochs.back().mean_reward;
    const double ratio = static_cast<double>(tokens_after_first_epoch(r.spec[i])) /
                         static_cast<double>(tokens_after_first_epoch(r.vanilla[i]));
    ok = ok && std::abs(rs - rv) <= 0.05 && ratio <= 0.60 && r.vanilla[i].epochs.size() >= 8;
    detail += "seed " + std::to_string(r.seeds[i]) + ": reward " + num(rs, 4) + " vs " + num(rv, 4) +
              ", tokens ratio " + num(ratio, 4) + "; ";
  }
  return {ok, detail + num(r.seconds, 3) + " s"};
}

Outcome criterion7() {
  const auto& run = toy_runs().vanilla.front();
  std::vector<double> xs, ys;
  for (const auto& e : run.epochs)
    if (e.epoch >= 2) {
      xs.push_back(static_cast<double>(e.epoch));
      ys.push_back(e.rouge1);
    }
  const double rho = spearman(xs, ys);
  const double epoch2 = ys.empty() ? 0.0 : ys.front();
  std::string series;
  for (double y : ys) series += (series.empty() ? "" : " ") + num(y, 3);
  return {rho > 0.0 && epoch2 > 0.0, "seed 1 vanilla rouge1 epochs 2.." +
                                         std::to_string(run.epochs.size()) + ": " + series +
                                         "; spearman " + num(rho, 4)};
}

Outcome criterion8() {
  const auto& r = toy_runs();
  std::size_t checked = 0, bad = 0;
  auto check = [&](const ExperimentResult& run, const BaselineTokens& base) {
    for (std::size_t i = 0; i < run.steps.size(); ++i) {
      const auto& s = run.steps[i];
      ++checked;
      const double expected = s.tokens_generated == 0
                                  ? INFINITY
                                  : static_cast<double>(base[i]) / static_cast<double>(s.tokens_generated);
      if (s.tokens_generated + s.tokens_reused != s.response_tokens || s.baseline_tokens != base[i] ||
          s.speedup != expected)
        ++bad;
    }
  };
  for (std::size_t i = 0; i < r.seeds.size(); ++i) {
    const auto base = step_tokens(r.vanilla[i]);
    check(r.vanilla[i], base);
    check(r.spec[i], base);
  }
  TrainConfig c;
  c.seed = 1;
  c.rollout_mode = RolloutMode::kRandomReuse;
  const auto base = step_tokens(r.vanilla.front());
  check(run_experiment(c, {}, &base), base);
  c.rollout_mode = RolloutMode::kSpecRl;
  c.lenience = LenienceSetting::infinite();
  check(run_experiment(c, {}, &base), base);
  return {bad == 0 && checked > 0,
          std::to_string(checked) + " logged steps (vanilla, spec_rl, random_reuse, inf lenience), " +
              std::to_string(bad) + " mismatches"};
}

Outcome criterion9() {
  const auto dir = testing::scratch_dir("acceptance_determinism");
  const std::string config = fs::path(SPECRL_CONFIG_DIR) / "toy.json";
  std::ostringstream sink;
  auto train = [&](const std::string& out) {
    const std::vector<std::string> args{"specrl", "train", "--config", config, "--out", out};
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data(), sink, sink);
  };
  if (train((dir / "a").string()) != 0 || train((dir / "b").string()) != 0)
    return {false, "train command failed: " + sink.str()};
  bool ok = true;
  std::string detail;
  for (const char* f : {"metrics.csv", "trace.jsonl", "policy.txt", "cache.jsonl"}) {
    const bool same = testing::slurp(dir / "a" / f) == testing::slurp(dir / "b" / f);
    ok = ok && same;
    detail += std::string(f) + (same ? " identical" : " DIFFERS") + ", ";
  }

  const auto cfg = load_config(config);
  const auto direct = run_experiment(cfg.train);
  const auto policy = load_policy(dir / "a" / "policy.txt");
  const auto cache = RolloutCache::load(dir / "a" / "cache.jsonl");
  const bool policy_ok = policy == direct.final_policy;
  const bool cache_ok = cache == direct.final_cache;
  save_policy(policy, dir / "policy2.txt");
  cache.persist(dir / "cache2.jsonl");
  const bool bytes_ok =
      testing::slurp(dir / "policy2.txt") == testing::slurp(dir / "a" / "policy.txt") &&
      testing::slurp(dir / "cache2.jsonl") == testing::slurp(dir / "a" / "cache.jsonl");
  ok = ok && policy_ok && cache_ok && bytes_ok;
  detail += std::string("policy snapshot ") + (policy_ok ? "bit-exact" : "MISMATCH") + ", cache snapshot " +
            (cache_ok ? "bit-exact" : "MISMATCH") + " (" + std::to_string(cache.size()) +
            " entries), re-save " + (bytes_ok ? "byte-identical" : "DIFFERS");
  fs::remove_all(dir);
  return {ok, detail};
}

Outcome criterion10() {
  const TokenSeq abc{0, 1, 2}, acd{0, 2, 3};
  const double rouge = rouge1(abc, acd).value;
  const auto cur = testing::constant_policy(Vocab(2, 1), 1, {0.8, 0.2});
  const auto old = testing::constant_policy(Vocab(2, 1), 1, {0.5, 0.5});
  const double kl = kl_estimate(cur, old, std::vector<TokenSeq>{{0}});
  return {std::abs(rouge - 2.0 / 3.0) <= 1e-6 && std::abs(kl - 0.192745) <= 1e-6,
          "rouge1 " + num(rouge, 10) + ", KL " + num(kl, 10)};
}

}  // namespace
}  // namespace specrl

int main() {
  using specrl::Outcome;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"residual resume exactness", specrl::criterion1},
      {"paper_faithful resume bias", specrl::criterion2},
      {"lenience boundary identities", specrl::criterion3},
      {"lenience monotonicity", specrl::criterion4},
      {"surrogate gradient check", specrl::criterion5},
      {"toy efficiency with reward parity", specrl::criterion6},
      {"cross-epoch overlap trend", specrl::criterion7},
      {"token accounting identities", specrl::criterion8},
      {"determinism and snapshots", specrl::criterion9},
      {"rouge1 and KL unit values", specrl::criterion10},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
