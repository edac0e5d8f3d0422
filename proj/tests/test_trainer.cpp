// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include <cmath>

#include <gtest/gtest.h>

#include "specrl/error.hpp"
#include "specrl/trainer.hpp"
#include "test_util.hpp"

namespace specrl {
namespace {

TrainConfig small_config(RolloutMode mode = RolloutMode::kSpecRl) {
  TrainConfig c;
  c.epochs = 3;
  c.steps_per_epoch = 2;
  c.prompts_per_batch = 8;
  c.group_size = 4;
  c.max_len = 8;
  c.seed = 11;
  c.rollout_mode = mode;
  return c;
}

std::vector<TraceRecord> traces(const TrainConfig& c, ExperimentResult* result = nullptr) {
  std::vector<TraceRecord> out;
  RunObserver obs;
  obs.on_trace = [&](const TraceRecord& r) { out.push_back(r); };
  auto res = run_experiment(c, obs);
  if (result) *result = std::move(res);
  return out;
}

TEST(ModularSumTask, AnswerAndReward) {
  const ModularSumTask task(2, 10);
  const TokenSeq prompt{1, 8, 10, 2, 9};
  EXPECT_EQ(task.render(prompt), "18+29");
  EXPECT_EQ(task.answer(prompt), (TokenSeq{3, 7}));
  EXPECT_EQ(task.reward(prompt, TokenSeq{3, 7, 11}), 1.0);
  EXPECT_EQ(task.reward(prompt, TokenSeq{3, 7}), 1.0);
  EXPECT_EQ(task.reward(prompt, TokenSeq{3, 7, 7}), 0.0);
  EXPECT_EQ(task.reward(prompt, TokenSeq{3}), 0.0);
  EXPECT_EQ(task.reward(prompt, TokenSeq{}), 0.0);
  EXPECT_EQ(task.reward(prompt, TokenSeq{11}), 0.0);
  EXPECT_EQ(task.render(TokenSeq{3, 7, 11}), "37<eos>");
  EXPECT_THROW(task.answer(TokenSeq{1, 8, 2, 9}), MalformedInput);
  EXPECT_THROW(ModularSumTask(0, 10), InvalidConfig);
  EXPECT_THROW(ModularSumTask(1, 1), InvalidConfig);
}

TEST(ModularSumTask, GeneratedPromptsAreWellFormed) {
  const ModularSumTask task(1, 3);
  const auto a = task.generate(256, 5);
  EXPECT_EQ(a.size(), 256u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, i);
    EXPECT_NO_THROW(task.answer(a[i].tokens));
  }
  const auto b = task.generate(256, 5);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].tokens, b[i].tokens);
}

TEST(GroupAdvantages, Examples) {
  const auto two = group_advantages(std::vector<double>{1, 0});
  EXPECT_NEAR(two[0], 0.999998, 1e-6);
  EXPECT_NEAR(two[1], -0.999998, 1e-6);
  const auto four = group_advantages(std::vector<double>{1, 0, 0, 0});
  // mean 0.25, population std sqrt(3)/4
  EXPECT_NEAR(four[0], 0.75 / (std::sqrt(3.0) / 4 + 1e-6), 1e-12);
  EXPECT_NEAR(four[0], 1.732047, 1e-6);
  EXPECT_NEAR(four[1], -0.577349, 1e-6);
  EXPECT_EQ(group_advantages(std::vector<double>{1, 1, 1}), (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(group_advantages(std::vector<double>{0, 0}), (std::vector<double>{0, 0}));
  EXPECT_THROW(group_advantages(std::vector<double>{1}), MalformedInput);
}

TEST(GroupAdvantages, ZeroVarianceGroupLeavesPolicyUnchanged) {
  const Policy p(Vocab(5, 4), 3);
  const auto adv = group_advantages(std::vector<double>{0, 0, 0, 0});
  std::vector<UpdateItem> items;
  const TokenSeq prompt{0, 3, 1}, resp{1, 4};
  const std::vector<double> probs{0.2, 0.2};
  for (double a : adv) items.push_back({prompt, resp, a, probs});
  const auto r = update(p, items, UpdateConfig{100.0, 0.2, 0.2, 0.0}, &p);
  EXPECT_EQ(r.policy.params(), p.params());
}

TEST(Validate, ErrorsNameTheField) {
  auto expect_field = [](TrainConfig c, const std::string& field) {
    try {
      validate(c);
      ADD_FAILURE() << "expected InvalidConfig for " << field;
    } catch (const InvalidConfig& e) {
      EXPECT_EQ(std::string(e.what()).rfind(field + ":", 0), 0u) << e.what();
    }
  };
  TrainConfig c;
  EXPECT_NO_THROW(validate(c));
  c = {}; c.epochs = 0; expect_field(c, "epochs");
  c = {}; c.group_size = 1; expect_field(c, "group_size");
  c = {}; c.max_len = 0; expect_field(c, "max_len");
  c = {}; c.learning_rate = NAN; expect_field(c, "learning_rate");
  c = {}; c.clip_low = 1.0; expect_field(c, "clip_low");
  c = {}; c.updates_per_batch = 0; expect_field(c, "updates_per_batch");
  c = {}; c.task_modulus = 1; expect_field(c, "task.modulus");
  c = {};
  c.resume_mode = ResumeMode::kExactResidual;
  c.lenience = LenienceSetting::from_log(0.5);
  EXPECT_THROW(validate(c), InvalidConfig);
  c.lenience = LenienceSetting::finite(1.0);
  EXPECT_NO_THROW(validate(c));
  EXPECT_EQ(parse_rollout_mode("random_reuse"), RolloutMode::kRandomReuse);
  EXPECT_THROW(parse_rollout_mode("greedy"), InvalidConfig);
}

TEST(Trainer, FirstEpochMatchesVanilla) {
  ExperimentResult spec_res{{}, {}, Policy(Vocab(2, 1), 1), RolloutCache()};
  ExperimentResult van_res = spec_res;
  const auto spec = traces(small_config(RolloutMode::kSpecRl), &spec_res);
  const auto van = traces(small_config(RolloutMode::kVanilla), &van_res);
  ASSERT_EQ(spec.size(), van.size());
  std::size_t compared = 0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (spec[i].epoch != 1) continue;
    EXPECT_EQ(spec[i].prompt_id, van[i].prompt_id);
    EXPECT_EQ(spec[i].slot, van[i].slot);
    EXPECT_EQ(spec[i].tokens, van[i].tokens);
    ++compared;
  }
  EXPECT_EQ(compared, 64u);
  EXPECT_EQ(spec_res.epochs[0].tokens_generated, van_res.epochs[0].tokens_generated);
  EXPECT_EQ(spec_res.epochs[0].mean_reward, van_res.epochs[0].mean_reward);
  EXPECT_EQ(spec_res.epochs[0].tokens_reused, 0u);
}

TEST(Trainer, InfiniteLenienceGeneratesNothingAfterFirstEpoch) {
  auto c = small_config();
  c.lenience = LenienceSetting::infinite();
  const auto r = run_experiment(c);
  for (const auto& s : r.steps) {
    if (s.epoch == 1) continue;
    EXPECT_EQ(s.tokens_generated, 0u);
    EXPECT_EQ(s.full_reuse_ratio, 1.0);
    EXPECT_TRUE(std::isinf(s.speedup));
  }
}

TEST(Trainer, ZeroLenienceMatchesVanillaTokenCounts) {
  auto c = small_config();
  c.lenience = LenienceSetting::zero();
  const auto spec = run_experiment(c);
  const auto van = run_experiment(small_config(RolloutMode::kVanilla));
  ASSERT_EQ(spec.steps.size(), van.steps.size());
  for (std::size_t i = 0; i < spec.steps.size(); ++i) {
    EXPECT_EQ(spec.steps[i].tokens_generated, van.steps[i].tokens_generated);
    EXPECT_EQ(spec.steps[i].tokens_reused, 0u);
  }
  EXPECT_EQ(spec.final_policy, van.final_policy);
}

TEST(Trainer, ReuseReducesGeneratedTokens) {
  const auto r = run_experiment(small_config());
  EXPECT_LT(r.epochs[1].tokens_generated, r.epochs[0].tokens_generated);
  EXPECT_GT(r.epochs[1].tokens_reused, 0u);
  EXPECT_GT(r.epochs[1].speedup, 1.0);
}

TEST(Trainer, Deterministic) {
  const auto c = small_config();
  const auto a = run_experiment(c);
  const auto b = run_experiment(c);
  EXPECT_EQ(a.steps, b.steps);
  EXPECT_EQ(a.epochs, b.epochs);
  EXPECT_EQ(a.final_policy, b.final_policy);
  EXPECT_TRUE(a.final_cache == b.final_cache);
  auto other = c;
  other.seed = 12;
  EXPECT_NE(run_experiment(other).final_policy, a.final_policy);
}

TEST(Trainer, AccountingHoldsEveryStep) {
  for (auto mode : {RolloutMode::kVanilla, RolloutMode::kSpecRl, RolloutMode::kRandomReuse}) {
    SCOPED_TRACE(to_string(mode));
    const auto c = small_config(mode);
    const auto van = run_experiment(small_config(RolloutMode::kVanilla));
    const auto base = step_tokens(van);
    const auto r = run_experiment(c, {}, &base);
    for (std::size_t i = 0; i < r.steps.size(); ++i) {
      const auto& s = r.steps[i];
      EXPECT_EQ(s.tokens_generated + s.tokens_reused, s.response_tokens);
      EXPECT_EQ(s.baseline_tokens, base[i]);
      EXPECT_EQ(s.speedup, speedup_ratio(base[i], s.tokens_generated));
      EXPECT_EQ(s.samples, 32u);
    }
    for (const auto& e : r.epochs) EXPECT_EQ(e.tokens_generated + e.tokens_reused, e.response_tokens);
  }
}

TEST(Trainer, CacheHoldsOneEntryPerSlot) {
  auto c = small_config();
  c.epochs = 1;
  const auto one = run_experiment(c);
  EXPECT_EQ(one.final_cache.size(), 64u);
  c.epochs = 4;
  const auto four = run_experiment(c);
  EXPECT_EQ(four.final_cache.size(), 64u);
  for (const auto& [key, e] : four.final_cache.entries()) EXPECT_EQ(e.epoch, 4);
}

TEST(RolloutBatch, SameEpochEntriesAreNotVerified) {
  const auto c = small_config();
  const ModularSumTask task(c.task_digits, c.task_modulus);
  const auto prompts = task.generate(2, 1);
  const Policy policy(task.vocab(), c.context_window);
  RolloutCache cache;
  for (const auto& p : prompts)
    for (std::uint32_t s = 0; s < 4; ++s)
      cache.put({p.id, s, TokenSeq{0, task.eos()}, {0.2, 0.2}, 2, 0.0});

  const auto same = rollout_batch(policy, task, cache, c, 2, prompts);
  for (const auto& v : same.verifications) EXPECT_FALSE(v.has_value());
  const auto later = rollout_batch(policy, task, cache, c, 3, prompts);
  for (const auto& v : later.verifications) EXPECT_TRUE(v.has_value());
}

TEST(RolloutBatch, RefreshKeepsOriginalDraftProbabilities) {
  auto c = small_config();
  c.lenience = LenienceSetting::infinite();
  const ModularSumTask task(c.task_digits, c.task_modulus);
  const auto prompts = task.generate(1, 1);
  const Policy policy(task.vocab(), c.context_window);
  RolloutCache cache;
  for (std::uint32_t s = 0; s < 4; ++s)
    cache.put({0, s, TokenSeq{1, 2, task.eos()}, {0.3, 0.125, 0.7}, 1, 0.0});

  const auto br = rollout_batch(policy, task, cache, c, 2, prompts);
  ASSERT_EQ(br.refreshed.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(br.refreshed[i].old_probs, (std::vector<double>{0.3, 0.125, 0.7}));
    EXPECT_EQ(br.refreshed[i].epoch, 2);
    EXPECT_EQ(br.trajectories[i].gen_probs, std::vector<double>(3, 0.2));
  }
}

TEST(RolloutBatch, ExactResidualRefreshUsesCurrentProbabilities) {
  auto c = small_config();
  c.lenience = LenienceSetting::finite(1.0);
  c.resume_mode = ResumeMode::kExactResidual;
  const ModularSumTask task(c.task_digits, c.task_modulus);
  const auto prompts = task.generate(1, 1);
  const auto policy = std::make_shared<const Policy>(task.vocab(), c.context_window);
  RolloutCache cache;
  for (std::uint32_t s = 0; s < 4; ++s) cache.put({0, s, TokenSeq{1, task.eos()}, {0.2, 0.2}, 1, 0.0});
  const DraftPolicies drafts{{0, policy}};
  const auto br = rollout_batch(*policy, task, cache, c, 2, prompts, &drafts);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(br.verifications[i]->fully_reused);
    EXPECT_EQ(br.refreshed[i].old_probs, br.trajectories[i].gen_probs);
  }
  EXPECT_THROW(rollout_batch(*policy, task, cache, c, 2, prompts), InvalidConfig);
}

TEST(Trainer, ExactResidualModeRuns) {
  auto c = small_config();
  c.lenience = LenienceSetting::finite(1.0);
  c.resume_mode = ResumeMode::kExactResidual;
  const auto r = run_experiment(c);
  EXPECT_EQ(r.epochs.size(), 3u);
  EXPECT_GT(r.epochs[1].tokens_reused, 0u);
}

TEST(Trainer, RandomReuseModeRuns) {
  const auto r = run_experiment(small_config(RolloutMode::kRandomReuse));
  EXPECT_GT(r.epochs[1].tokens_reused, 0u);
  EXPECT_GT(r.epochs[1].tokens_generated, 0u);
}

TEST(Trainer, ObserverSeesEveryRecord) {
  std::vector<MetricsRecord> steps, epochs;
  RunObserver obs;
  obs.on_step = [&](const MetricsRecord& r) { steps.push_back(r); };
  obs.on_epoch = [&](const EpochMetrics& r) { epochs.push_back(r); };
  const auto r = run_experiment(small_config(), obs);
  EXPECT_EQ(steps, r.steps);
  EXPECT_EQ(epochs, r.epochs);
  for (const auto& e : epochs) EXPECT_FALSE(e.step.has_value());
}

TEST(Trainer, DivergencePropagatesAfterReportingPartialRecords) {
  auto c = small_config();
  c.learning_rate = 1e5;
  c.lenience = LenienceSetting::infinite();
  std::vector<MetricsRecord> seen;
  RunObserver obs;
  obs.on_step = [&](const MetricsRecord& r) { seen.push_back(r); };
  const BaselineTokens base(6, 100);
  EXPECT_THROW(run_experiment(c, obs, &base), Divergence);
  ASSERT_FALSE(seen.empty());
  EXPECT_EQ(seen.front().epoch, 1);
}

}  // namespace
}  // namespace specrl
