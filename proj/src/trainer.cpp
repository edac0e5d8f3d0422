// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include "specrl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "specrl/error.hpp"

namespace specrl {

// ---------------------------------------------------------------------------
// Task
// ---------------------------------------------------------------------------

ModularSumTask::ModularSumTask(int digits, int modulus) : digits_(digits), modulus_(modulus) {
  if (digits_ < 1) throw InvalidConfig("task.digits must be >= 1");
  if (modulus_ < 2) throw InvalidConfig("task.modulus must be >= 2");
}

std::vector<Prompt> ModularSumTask::generate(std::size_t count, std::uint64_t seed) const {
  SeededStream stream(seed, StreamPurpose::kTask, 0, 0, 0);
  std::vector<Prompt> prompts(count);
  for (std::size_t i = 0; i < count; ++i) {
    prompts[i].id = i;
    auto& t = prompts[i].tokens;
    for (int d = 0; d < digits_; ++d) t.push_back(static_cast<Token>(stream.next_int(0, modulus_ - 1)));
    t.push_back(plus());
    for (int d = 0; d < digits_; ++d) t.push_back(static_cast<Token>(stream.next_int(0, modulus_ - 1)));
  }
  return prompts;
}

TokenSeq ModularSumTask::answer(std::span<const Token> prompt) const {
  const auto d = static_cast<std::size_t>(digits_);
  if (prompt.size() != 2 * d + 1 || prompt[d] != plus())
    throw MalformedInput("prompt is not of the form a+b");
  TokenSeq out(d);
  for (std::size_t i = 0; i < d; ++i) {
    const Token a = prompt[i];
    const Token b = prompt[d + 1 + i];
    if (a < 0 || a >= modulus_ || b < 0 || b >= modulus_)
      throw MalformedInput("prompt digit out of range");
    out[i] = static_cast<Token>((a + b) % modulus_);
  }
  return out;
}

double ModularSumTask::reward(std::span<const Token> prompt, std::span<const Token> response) const {
  auto body = response;
  if (!body.empty() && body.back() == eos()) body = body.first(body.size() - 1);
  const auto target = answer(prompt);
  return std::equal(body.begin(), body.end(), target.begin(), target.end()) ? 1.0 : 0.0;
}

std::string ModularSumTask::render(std::span<const Token> tokens) const {
  std::string out;
  for (Token t : tokens) {
    if (t == plus())
      out += '+';
    else if (t == eos())
      out += "<eos>";
    else if (modulus_ <= 10 && t >= 0 && t < modulus_)
      out += static_cast<char>('0' + t);
    else
      out += "[" + std::to_string(t) + "]";
  }
  return out;
}

std::string to_string(RolloutMode mode) {
  switch (mode) {
    case RolloutMode::kVanilla:
      return "vanilla";
    case RolloutMode::kSpecRl:
      return "spec_rl";
    case RolloutMode::kRandomReuse:
      return "random_reuse";
  }
  return "?";
}

RolloutMode parse_rollout_mode(std::string_view text) {
  if (text == "vanilla") return RolloutMode::kVanilla;
  if (text == "spec_rl") return RolloutMode::kSpecRl;
  if (text == "random_reuse") return RolloutMode::kRandomReuse;
  throw InvalidConfig("unknown rollout mode '" + std::string(text) + "'");
}

void validate(const TrainConfig& c) {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) throw InvalidConfig(std::string(field) + ": " + what);
  };
  require(c.epochs >= 1, "epochs", "must be >= 1");
  require(c.steps_per_epoch >= 1, "steps_per_epoch", "must be >= 1");
  require(c.prompts_per_batch >= 1, "prompts_per_batch", "must be >= 1");
  require(c.group_size >= 2, "group_size", "must be >= 2 for group-relative advantages");
  require(c.max_len >= 1, "max_len", "must be >= 1");
  require(std::isfinite(c.learning_rate) && c.learning_rate >= 0.0, "learning_rate",
          "must be finite and non-negative");
  require(std::isfinite(c.kl_coef) && c.kl_coef >= 0.0, "kl_coef", "must be finite and >= 0");
  require(c.clip_low >= 0.0 && c.clip_low < 1.0, "clip_low", "must lie in [0, 1)");
  require(c.clip_high >= 0.0 && std::isfinite(c.clip_high), "clip_high", "must be >= 0");
  require(c.updates_per_batch >= 1, "updates_per_batch", "must be >= 1");
  require(c.context_window >= 1, "context_window", "must be >= 1");
  require(c.task_digits >= 1, "task.digits", "must be >= 1");
  require(c.task_modulus >= 2, "task.modulus", "must be >= 2");
  if (c.rollout_mode == RolloutMode::kSpecRl) check_resume_mode(c.resume_mode, c.lenience);
}

std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw MalformedInput("group_advantages: need at least two rewards");
  const auto n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double stddev = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  const bool all_equal =
      std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; });
  if (all_equal) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / (stddev + 1e-6);
  return out;
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

namespace {

/// Cache entry that replaces `cached` after this rollout. Reused tokens keep
/// the probability they were originally drafted with, so drift accumulates
/// across epochs instead of being re-based every epoch. Exact-residual output
/// is distributed exactly as the current policy, so there the current-policy
/// probabilities are the correct draft probabilities for every token.
CachedRollout refreshed_entry(const Trajectory& traj, const CachedRollout* cached,
                              const std::optional<VerificationResult>& verification,
                              const TrainConfig& config, std::int64_t epoch) {
  CachedRollout entry{traj.prompt_id, traj.slot, traj.response, traj.gen_probs, epoch, traj.reward};
  const bool keep_original = cached != nullptr && verification.has_value() &&
                             !(config.rollout_mode == RolloutMode::kSpecRl &&
                               config.resume_mode == ResumeMode::kExactResidual);
  if (keep_original) {
    const auto reused = verification->reused_tokens;
    std::copy_n(cached->old_probs.begin(), reused, entry.old_probs.begin());
  }
  return entry;
}

}  // namespace

BatchRollout rollout_batch(const Policy& policy, const ModularSumTask& task,
                           const RolloutCache& cache, const TrainConfig& config, std::int64_t epoch,
                           std::span<const Prompt> prompts, const DraftPolicies* draft_policies) {
  BatchRollout out;
  const auto group = static_cast<std::uint32_t>(config.group_size);
  const auto e = static_cast<std::uint64_t>(epoch);
  for (const auto& prompt : prompts) {
    for (std::uint32_t slot = 0; slot < group; ++slot) {
      SeededStream gen(config.seed, StreamPurpose::kGenerate, e, prompt.id, slot);
      const CachedRollout* cached = cache.lookup(prompt.id, slot, epoch);

      Trajectory traj;
      std::optional<VerificationResult> verification;
      if (config.rollout_mode == RolloutMode::kVanilla || cached == nullptr) {
        auto cont = sample_continuation(policy, prompt.tokens, {}, config.max_len, gen);
        traj.prompt_id = prompt.id;
        traj.slot = slot;
        traj.prompt = prompt.tokens;
        traj.response = std::move(cont.tokens);
        traj.gen_probs = std::move(cont.probs);
      } else if (config.rollout_mode == RolloutMode::kSpecRl) {
        SeededStream verify(config.seed, StreamPurpose::kVerify, e, prompt.id, slot);
        const Policy* draft = nullptr;
        if (config.resume_mode == ResumeMode::kExactResidual) {
          if (draft_policies == nullptr || !draft_policies->count(prompt.id))
            throw InvalidConfig("exact_residual resume: no draft policy recorded for prompt " +
                                std::to_string(prompt.id));
          draft = draft_policies->at(prompt.id).get();
        }
        auto res = speculative_rollout(policy, prompt.id, prompt.tokens, *cached, config.lenience,
                                       config.resume_mode, config.max_len, verify, gen, draft);
        traj = std::move(res.trajectory);
        verification = std::move(res.verification);
      } else {
        SeededStream position(config.seed, StreamPurpose::kRandomReuse, e, prompt.id, slot);
        auto res = random_reuse_rollout(policy, prompt.id, prompt.tokens, *cached, config.max_len,
                                        position, gen);
        traj = std::move(res.trajectory);
        verification = std::move(res.verification);
      }
      traj.reward = task.reward(traj.prompt, traj.response);

      out.prev_overlap.push_back(cached ? std::optional<double>(
                                              rouge1(cached->response, traj.response).value)
                                        : std::nullopt);
      out.refreshed.push_back(refreshed_entry(traj, cached, verification, config, epoch));
      out.trajectories.push_back(std::move(traj));
      out.verifications.push_back(std::move(verification));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment loop
// ---------------------------------------------------------------------------

namespace {

struct Accumulator {
  std::uint64_t generated = 0;
  std::uint64_t reused = 0;
  std::uint64_t response_tokens = 0;
  std::uint64_t baseline = 0;
  std::size_t samples = 0;
  std::size_t full_reuse = 0;
  double reward_sum = 0.0;
  double overlap_sum = 0.0;
  std::size_t overlap_count = 0;
  double entropy_sum = 0.0;
  double kl_sum = 0.0;
  double clip_sum = 0.0;
  std::size_t updates = 0;

  void add_rollout(const BatchRollout& br) {
    for (std::size_t i = 0; i < br.trajectories.size(); ++i) {
      const auto& t = br.trajectories[i];
      const auto len = t.response.size();
      response_tokens += len;
      reward_sum += t.reward;
      ++samples;
      if (const auto& v = br.verifications[i]) {
        generated += v->generated_tokens;
        reused += v->reused_tokens;
        if (v->fully_reused) ++full_reuse;
      } else {
        generated += len;
      }
      if (const auto& o = br.prev_overlap[i]) {
        overlap_sum += *o;
        ++overlap_count;
      }
    }
  }

  void merge(const Accumulator& o) {
    generated += o.generated;
    reused += o.reused;
    response_tokens += o.response_tokens;
    baseline += o.baseline;
    samples += o.samples;
    full_reuse += o.full_reuse;
    reward_sum += o.reward_sum;
    overlap_sum += o.overlap_sum;
    overlap_count += o.overlap_count;
    entropy_sum += o.entropy_sum;
    kl_sum += o.kl_sum;
    clip_sum += o.clip_sum;
    updates += o.updates;
  }

  MetricsRecord record(std::int64_t epoch, std::optional<std::int64_t> step) const {
    MetricsRecord r;
    r.epoch = epoch;
    r.step = step;
    r.tokens_generated = generated;
    r.tokens_reused = reused;
    r.baseline_tokens = baseline;
    r.speedup = speedup_ratio(baseline, generated);
    const auto n = static_cast<double>(std::max<std::size_t>(samples, 1));
    r.mean_prefix_len = static_cast<double>(reused) / n;
    r.full_reuse_ratio = static_cast<double>(full_reuse) / n;
    r.rouge1 = overlap_count ? overlap_sum / static_cast<double>(overlap_count) : 0.0;
    r.mean_reward = reward_sum / n;
    const auto u = static_cast<double>(std::max<std::size_t>(updates, 1));
    r.entropy = entropy_sum / u;
    r.kl = kl_sum / u;
    r.clip_fraction = clip_sum / u;
    r.samples = samples;
    r.response_tokens = response_tokens;
    return r;
  }
};

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededStream stream(seed, StreamPurpose::kShuffle, static_cast<std::uint64_t>(epoch), 0, 0);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(stream.next_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace

BaselineTokens step_tokens(const ExperimentResult& result) {
  BaselineTokens out;
  out.reserve(result.steps.size());
  for (const auto& s : result.steps) out.push_back(s.tokens_generated);
  return out;
}

ExperimentResult run_experiment(const TrainConfig& config, const RunObserver& observer,
                                const BaselineTokens* baseline) {
  validate(config);
  const std::size_t total_steps =
      static_cast<std::size_t>(config.epochs) * static_cast<std::size_t>(config.steps_per_epoch);

  BaselineTokens paired;
  if (baseline == nullptr && config.rollout_mode != RolloutMode::kVanilla) {
    TrainConfig vanilla = config;
    vanilla.rollout_mode = RolloutMode::kVanilla;
    paired = step_tokens(run_experiment(vanilla));
    baseline = &paired;
  }
  if (baseline != nullptr && baseline->size() < total_steps)
    throw InvalidConfig("baseline token series is shorter than the run");

  const ModularSumTask task(config.task_digits, config.task_modulus);
  const auto prompts = task.generate(config.num_prompts(), config.seed);
  Policy policy(task.vocab(), config.context_window, 1.0);
  RolloutCache cache(config.num_prompts() * static_cast<std::size_t>(config.group_size));

  const UpdateConfig update_config{config.learning_rate, config.clip_low, config.clip_high,
                                   config.kl_coef};
  const bool track_drafts = config.rollout_mode == RolloutMode::kSpecRl &&
                            config.resume_mode == ResumeMode::kExactResidual;
  DraftPolicies prev_drafts;

  std::vector<MetricsRecord> steps;
  std::vector<EpochMetrics> epochs;
  std::size_t global_step = 0;
  const auto batch = static_cast<std::size_t>(config.prompts_per_batch);
  const auto group = static_cast<std::size_t>(config.group_size);

  for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = epoch_order(prompts.size(), config.seed, epoch);
    std::vector<CachedRollout> pending;
    DraftPolicies curr_drafts;
    Accumulator epoch_acc;
    EpochResponses prev_responses, curr_responses;

    for (std::int64_t step = 0; step < config.steps_per_epoch; ++step) {
      std::vector<Prompt> step_prompts;
      for (std::size_t i = 0; i < batch; ++i)
        step_prompts.push_back(prompts[order[static_cast<std::size_t>(step) * batch + i]]);

      const auto br = rollout_batch(policy, task, cache, config, epoch, step_prompts, &prev_drafts);
      if (track_drafts) {
        auto snapshot = std::make_shared<const Policy>(policy);
        for (const auto& p : step_prompts) curr_drafts[p.id] = snapshot;
      }

      std::vector<double> advantages;
      advantages.reserve(br.trajectories.size());
      for (std::size_t g = 0; g < step_prompts.size(); ++g) {
        std::vector<double> rewards(group);
        for (std::size_t s = 0; s < group; ++s) rewards[s] = br.trajectories[g * group + s].reward;
        const auto adv = group_advantages(rewards);
        advantages.insert(advantages.end(), adv.begin(), adv.end());
      }
      std::vector<UpdateItem> items;
      items.reserve(br.trajectories.size());
      for (std::size_t i = 0; i < br.trajectories.size(); ++i) {
        const auto& t = br.trajectories[i];
        // Only reachable when an accepted draft token has underflowed to zero
        // under the current policy; its log-probability is -inf.
        for (double p : t.gen_probs)
          if (!(p > 0.0))
            throw Divergence("policy assigns zero probability to a response token (epoch " +
                             std::to_string(epoch) + ", step " + std::to_string(step) + ")");
        items.push_back({t.prompt, t.response, advantages[i], t.gen_probs});
      }

      Accumulator acc;
      acc.add_rollout(br);
      const Policy reference = policy;
      for (int k = 0; k < config.updates_per_batch; ++k) {
        auto res = update(policy, items, update_config, &reference);
        policy = std::move(res.policy);
        if (k == 0) acc.entropy_sum = res.stats.mean_entropy;
        acc.clip_sum += res.stats.clip_fraction;
        if (k + 1 == config.updates_per_batch) acc.kl_sum = res.stats.mean_kl;
      }
      // One diagnostic sample per step; clip fraction is averaged over inner updates.
      acc.clip_sum /= static_cast<double>(config.updates_per_batch);
      acc.updates = 1;
      acc.baseline = baseline ? (*baseline)[global_step] : acc.generated;

      const auto record = acc.record(epoch, step);
      steps.push_back(record);
      if (observer.on_step) observer.on_step(record);
      epoch_acc.merge(acc);

      for (std::size_t i = 0; i < br.trajectories.size(); ++i) {
        const auto& t = br.trajectories[i];
        if (observer.on_trace) observer.on_trace({epoch, t.prompt_id, t.slot, t.response});
        auto& slots = curr_responses[t.prompt_id];
        if (slots.size() <= t.slot) slots.resize(t.slot + 1);
        slots[t.slot] = t.response;
        if (const auto* prev = cache.get(t.prompt_id, t.slot); prev && prev->epoch == epoch - 1) {
          auto& ps = prev_responses[t.prompt_id];
          if (ps.size() <= t.slot) ps.resize(t.slot + 1);
          ps[t.slot] = prev->response;
        }
      }
      pending.insert(pending.end(), br.refreshed.begin(), br.refreshed.end());
      ++global_step;
    }

    auto epoch_record = epoch_acc.record(epoch, std::nullopt);
    if (!prev_responses.empty())
      epoch_record.rouge1 = epoch_overlap(prev_responses, curr_responses, epoch).mean_rouge1;
    epochs.push_back(epoch_record);
    if (observer.on_epoch) observer.on_epoch(epoch_record);

    for (auto& entry : pending) cache.put(std::move(entry));
    prev_drafts = std::move(curr_drafts);
  }

  return {std::move(steps), std::move(epochs), std::move(policy), std::move(cache)};
}

}  // namespace specrl
