// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include "specrl/spec_rollout.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>

#include "specrl/error.hpp"

namespace specrl {

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_decimal(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) return std::nullopt;
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// LenienceSetting
// ---------------------------------------------------------------------------

LenienceSetting LenienceSetting::finite(double value) {
  if (!(value > 0.0) || !std::isfinite(value))
    throw InvalidConfig("lenience must be a positive finite value");
  return LenienceSetting(Kind::kFinite, value, std::log(value));
}

LenienceSetting LenienceSetting::from_log(double log_value) {
  if (!std::isfinite(log_value)) throw InvalidConfig("lenience exponent must be finite");
  const double value = std::exp(log_value);
  if (!(value > 0.0) || !std::isfinite(value))
    throw InvalidConfig("lenience e^" + shortest(log_value) + " is not representable");
  LenienceSetting s(Kind::kFinite, value, log_value);
  s.from_exponent_ = true;
  return s;
}

LenienceSetting LenienceSetting::parse(std::string_view token) {
  std::string t(token);
  t.erase(std::remove_if(t.begin(), t.end(), [](unsigned char c) { return std::isspace(c); }),
          t.end());
  std::string lower = t;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "inf" || lower == "infinity" || lower == "+inf") return infinite();
  try {
    if (lower.rfind("e^", 0) == 0) {
      auto exponent = std::string_view(lower).substr(2);
      if (exponent.size() >= 2 && exponent.front() == '{' && exponent.back() == '}')
        exponent = exponent.substr(1, exponent.size() - 2);
      const auto x = parse_decimal(exponent);
      if (x) return from_log(*x);
    } else if (const auto v = parse_decimal(lower)) {
      if (*v == 0.0) return zero();
      return finite(*v);
    }
  } catch (const InvalidConfig&) {
  }
  throw InvalidConfig("unparseable lenience '" + std::string(token) + "'");
}

std::string LenienceSetting::label() const {
  switch (kind_) {
    case Kind::kZero:
      return "0";
    case Kind::kInfinite:
      return "inf";
    case Kind::kFinite:
      break;
  }
  return from_exponent_ ? "e^" + shortest(log_value_) : shortest(value_);
}

bool operator<(const LenienceSetting& a, const LenienceSetting& b) {
  auto rank = [](LenienceSetting::Kind k) {
    switch (k) {
      case LenienceSetting::Kind::kZero:
        return 0;
      case LenienceSetting::Kind::kFinite:
        return 1;
      case LenienceSetting::Kind::kInfinite:
        return 2;
    }
    return 1;
  };
  if (a.kind_ != b.kind_) return rank(a.kind_) < rank(b.kind_);
  return a.kind_ == LenienceSetting::Kind::kFinite && a.value_ < b.value_;
}

bool operator==(const LenienceSetting& a, const LenienceSetting& b) {
  return a.kind_ == b.kind_ && (a.kind_ != LenienceSetting::Kind::kFinite || a.value_ == b.value_);
}

std::string to_string(ResumeMode mode) {
  return mode == ResumeMode::kPaperFaithful ? "paper_faithful" : "exact_residual";
}

ResumeMode parse_resume_mode(std::string_view text) {
  if (text == "paper_faithful") return ResumeMode::kPaperFaithful;
  if (text == "exact_residual") return ResumeMode::kExactResidual;
  throw InvalidConfig("unknown resume mode '" + std::string(text) + "'");
}

void check_resume_mode(ResumeMode mode, const LenienceSetting& lenience) {
  if (mode == ResumeMode::kExactResidual && !lenience.is_exactly_one())
    throw InvalidConfig("exact_residual resume requires lenience 1, got " + lenience.label());
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

std::vector<double> acceptance_probs(std::span<const double> old_probs,
                                     std::span<const double> new_probs,
                                     const LenienceSetting& lenience) {
  if (old_probs.size() != new_probs.size())
    throw MalformedInput("acceptance_probs: length mismatch");
  for (std::size_t i = 0; i < old_probs.size(); ++i) {
    // A current-policy probability may underflow to 0; it is then never accepted.
    if (!(old_probs[i] > 0.0 && old_probs[i] <= 1.0) ||
        !(new_probs[i] >= 0.0 && new_probs[i] <= 1.0))
      throw MalformedInput("acceptance_probs: probability out of range");
  }
  std::vector<double> out(old_probs.size());
  switch (lenience.kind()) {
    case LenienceSetting::Kind::kZero:
      std::fill(out.begin(), out.end(), 0.0);
      return out;
    case LenienceSetting::Kind::kInfinite:
      std::fill(out.begin(), out.end(), 1.0);
      return out;
    case LenienceSetting::Kind::kFinite:
      break;
  }
  const double log_l = lenience.log_value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double log_ratio = log_l + std::log(new_probs[i]) - std::log(old_probs[i]);
    out[i] = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
  }
  return out;
}

RejectionScan find_rejection(std::span<const double> accept_probs, UniformSource& stream) {
  RejectionScan scan;
  scan.position = accept_probs.size() + 1;
  for (std::size_t i = 0; i < accept_probs.size(); ++i) {
    const double u = stream.next();
    scan.uniforms.push_back(u);
    if (u > accept_probs[i]) {
      scan.position = i + 1;
      break;
    }
  }
  return scan;
}

std::vector<double> residual_distribution(std::span<const double> target,
                                          std::span<const double> draft) {
  if (target.size() != draft.size()) throw MalformedInput("residual_distribution: size mismatch");
  std::vector<double> out(target.size());
  double mass = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::max(0.0, target[i] - draft[i]);
    mass += out[i];
  }
  if (!(mass > 0.0))
    throw InternalInvariant("residual distribution has no mass at a rejected position");
  for (double& v : out) v /= mass;
  return out;
}

Continuation resume(const Policy& policy, std::span<const Token> prompt,
                    std::span<const Token> verified_prefix,
                    std::optional<std::span<const double>> draft_dist, ResumeMode mode,
                    const LenienceSetting& lenience, int max_len, UniformSource& stream) {
  check_resume_mode(mode, lenience);
  if (mode == ResumeMode::kPaperFaithful)
    return sample_continuation(policy, prompt, verified_prefix, max_len, stream);

  if (!draft_dist) throw InvalidConfig("exact_residual resume needs the draft distribution");
  if (static_cast<std::size_t>(max_len) <= verified_prefix.size())
    throw MalformedInput("resume: no room left for the rejection-position token");
  TokenSeq history(prompt.begin(), prompt.end());
  history.insert(history.end(), verified_prefix.begin(), verified_prefix.end());
  const auto target = policy.dist_at(policy.context_index(history));
  if (draft_dist->size() != target.size())
    throw MalformedInput("resume: draft distribution has wrong size");
  const auto residual = residual_distribution(target, *draft_dist);
  const auto tok = static_cast<Token>(sample_categorical(residual, stream.next()));

  Continuation out;
  out.tokens.push_back(tok);
  out.probs.push_back(target[static_cast<std::size_t>(tok)]);
  TokenSeq prefix(verified_prefix.begin(), verified_prefix.end());
  prefix.push_back(tok);
  auto rest = sample_continuation(policy, prompt, prefix, max_len, stream);
  out.tokens.insert(out.tokens.end(), rest.tokens.begin(), rest.tokens.end());
  out.probs.insert(out.probs.end(), rest.probs.begin(), rest.probs.end());
  return out;
}

namespace {

SpecRolloutResult assemble(std::uint64_t prompt_id, std::span<const Token> prompt,
                           std::span<const Token> draft, std::span<const double> new_probs,
                           std::size_t position, Continuation suffix) {
  SpecRolloutResult res;
  auto& t = res.trajectory;
  t.prompt_id = prompt_id;
  t.prompt.assign(prompt.begin(), prompt.end());
  const std::size_t keep = position - 1;
  t.response.assign(draft.begin(), draft.begin() + static_cast<std::ptrdiff_t>(keep));
  t.gen_probs.assign(new_probs.begin(), new_probs.begin() + static_cast<std::ptrdiff_t>(keep));
  t.response.insert(t.response.end(), suffix.tokens.begin(), suffix.tokens.end());
  t.gen_probs.insert(t.gen_probs.end(), suffix.probs.begin(), suffix.probs.end());

  auto& v = res.verification;
  v.rejection_position = position;
  v.reused_tokens = keep;
  v.generated_tokens = suffix.tokens.size();
  v.fully_reused = position == draft.size() + 1;
  return res;
}

}  // namespace

SpecRolloutResult speculative_rollout(const Policy& policy, std::uint64_t prompt_id,
                                      std::span<const Token> prompt, const CachedRollout& cached,
                                      const LenienceSetting& lenience, ResumeMode mode,
                                      int max_len, UniformSource& verify_stream,
                                      UniformSource& generate_stream,
                                      const Policy* draft_policy) {
  check_resume_mode(mode, lenience);
  validate_rollout(cached);
  if (cached.prompt_id != prompt_id)
    throw MalformedInput("speculative_rollout: cache entry belongs to another prompt");
  if (max_len < 1) throw MalformedInput("speculative_rollout: max_len must be positive");
  if (mode == ResumeMode::kExactResidual && draft_policy == nullptr)
    throw InvalidConfig("exact_residual resume needs the draft policy");

  const std::size_t len = std::min(cached.response.size(), static_cast<std::size_t>(max_len));
  const std::span<const Token> draft(cached.response.data(), len);
  const std::span<const double> old_probs(cached.old_probs.data(), len);

  const auto new_probs = score_sequence(policy, prompt, draft);
  auto accept = acceptance_probs(old_probs, new_probs, lenience);
  auto scan = find_rejection(accept, verify_stream);

  Continuation suffix;
  if (scan.position <= len) {
    const auto prefix = draft.first(scan.position - 1);
    std::optional<std::vector<double>> draft_dist;
    if (mode == ResumeMode::kExactResidual) {
      TokenSeq history(prompt.begin(), prompt.end());
      history.insert(history.end(), prefix.begin(), prefix.end());
      draft_dist = draft_policy->dist_at(draft_policy->context_index(history));
    }
    std::optional<std::span<const double>> dd;
    if (draft_dist) dd = std::span<const double>(*draft_dist);
    suffix = resume(policy, prompt, prefix, dd, mode, lenience, max_len, generate_stream);
  }

  auto res = assemble(prompt_id, prompt, draft, new_probs, scan.position, std::move(suffix));
  res.trajectory.slot = cached.slot;
  res.verification.accept_probs = std::move(accept);
  res.verification.uniforms = std::move(scan.uniforms);
  return res;
}

SpecRolloutResult random_reuse_rollout(const Policy& policy, std::uint64_t prompt_id,
                                       std::span<const Token> prompt, const CachedRollout& cached,
                                       int max_len, SeededStream& position_stream,
                                       UniformSource& generate_stream) {
  validate_rollout(cached);
  if (cached.prompt_id != prompt_id)
    throw MalformedInput("random_reuse_rollout: cache entry belongs to another prompt");
  if (max_len < 1) throw MalformedInput("random_reuse_rollout: max_len must be positive");
  const std::size_t len = std::min(cached.response.size(), static_cast<std::size_t>(max_len));
  const std::span<const Token> draft(cached.response.data(), len);
  const auto new_probs = score_sequence(policy, prompt, draft);
  const auto position =
      static_cast<std::size_t>(position_stream.next_int(1, static_cast<std::int64_t>(len) + 1));
  Continuation suffix;
  if (position <= len)
    suffix = sample_continuation(policy, prompt, draft.first(position - 1), max_len,
                                 generate_stream);
  auto res = assemble(prompt_id, prompt, draft, new_probs, position, std::move(suffix));
  res.trajectory.slot = cached.slot;
  return res;
}

}  // namespace specrl
