// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include "specrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "specrl/error.hpp"
#include "specrl/hexfloat.hpp"

namespace specrl {

namespace {

constexpr const char* kCheckpointMagic = "specrl-policy";
constexpr int kCheckpointVersion = 1;
// Keeps (vocab+1)^k well inside memory at desk scale.
constexpr std::size_t kMaxTableEntries = std::size_t{1} << 26;

void log_softmax(std::span<const double> logits, double temperature, std::span<double> out) {
  double shift = -std::numeric_limits<double>::infinity();
  for (double z : logits) shift = std::max(shift, z / temperature);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z / temperature - shift);
  const double lse = shift + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] / temperature - lse;
}

double entropy_of(std::span<const double> probs, std::span<const double> log_probs) {
  double h = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) h -= probs[i] * log_probs[i];
  return std::max(h, 0.0);
}

/// Per-context softmax cache for one batch evaluation.
struct ContextCache {
  std::vector<double> probs;
  std::vector<double> log_probs;
};

}  // namespace

Vocab::Vocab(int size_, Token eos_id_) : size(size_), eos_id(eos_id_) {
  if (size < 2) throw MalformedInput("vocab size must be >= 2");
  if (eos_id < 0 || eos_id >= size) throw MalformedInput("eos_id out of range");
}

Policy::Policy(Vocab vocab, int context_window, double temperature)
    : vocab_(vocab), window_(context_window), temperature_(temperature), num_contexts_(1) {
  if (vocab_.size < 2 || !vocab_.contains(vocab_.eos_id)) throw MalformedInput("invalid vocab");
  if (window_ < 1) throw MalformedInput("context window must be positive");
  if (!(temperature_ > 0.0) || !std::isfinite(temperature_))
    throw MalformedInput("temperature must be positive and finite");
  const auto base = static_cast<std::size_t>(vocab_.size) + 1;
  for (int i = 0; i < window_; ++i) {
    num_contexts_ *= base;
    if (num_contexts_ * stride() > kMaxTableEntries)
      throw MalformedInput("logit table too large for vocab/window");
  }
  params_.assign(num_contexts_ * stride(), 0.0);
}

std::size_t Policy::context_index(std::span<const Token> history) const {
  const auto base = static_cast<std::size_t>(vocab_.size) + 1;
  std::size_t index = 0;
  const auto n = history.size();
  for (int j = window_; j >= 1; --j) {
    Token t = vocab_.pad();
    if (static_cast<std::size_t>(j) <= n) {
      t = history[n - static_cast<std::size_t>(j)];
      if (!vocab_.contains(t))
        throw MalformedInput("invalid token id " + std::to_string(t) + " in context");
    }
    index = index * base + static_cast<std::size_t>(t);
  }
  return index;
}

std::vector<double> Policy::log_dist_at(std::size_t context) const {
  std::vector<double> out(stride());
  log_softmax(logits(context), temperature_, out);
  return out;
}

std::vector<double> Policy::dist_at(std::size_t context) const {
  auto out = log_dist_at(context);
  for (double& v : out) v = std::exp(v);
  return out;
}

void validate_trajectory(const Trajectory& t, const Vocab& vocab) {
  if (t.gen_probs.size() != t.response.size())
    throw MalformedInput("trajectory: gen_probs length differs from response length");
  for (Token tok : t.response)
    if (!vocab.contains(tok)) throw MalformedInput("trajectory: invalid token id");
  for (double p : t.gen_probs)
    if (!(p > 0.0 && p <= 1.0)) throw MalformedInput("trajectory: probability outside (0, 1]");
}

std::vector<double> next_token_dist(const Policy& policy, std::span<const Token> context) {
  return policy.dist_at(policy.context_index(context));
}

std::vector<double> score_sequence(const Policy& policy, std::span<const Token> prompt,
                                   std::span<const Token> response) {
  if (response.empty()) throw MalformedInput("score_sequence: empty response");
  TokenSeq history(prompt.begin(), prompt.end());
  history.reserve(prompt.size() + response.size());
  std::vector<double> out;
  out.reserve(response.size());
  for (Token t : response) {
    if (!policy.vocab().contains(t)) throw MalformedInput("score_sequence: invalid token id");
    const auto log_probs = policy.log_dist_at(policy.context_index(history));
    out.push_back(std::exp(log_probs[static_cast<std::size_t>(t)]));
    history.push_back(t);
  }
  return out;
}

Continuation sample_continuation(const Policy& policy, std::span<const Token> prompt,
                                 std::span<const Token> prefix, int max_len,
                                 UniformSource& stream) {
  if (max_len < 0 || prefix.size() > static_cast<std::size_t>(max_len))
    throw MalformedInput("sample_continuation: prefix longer than max_len");
  const Token eos = policy.vocab().eos_id;
  TokenSeq history(prompt.begin(), prompt.end());
  history.insert(history.end(), prefix.begin(), prefix.end());
  policy.context_index(history);  // validates ids

  Continuation out;
  std::size_t length = prefix.size();
  bool ended = !prefix.empty() && prefix.back() == eos;
  while (!ended && length < static_cast<std::size_t>(max_len)) {
    const auto probs = policy.dist_at(policy.context_index(history));
    const auto tok = static_cast<Token>(sample_categorical(probs, stream.next()));
    out.tokens.push_back(tok);
    out.probs.push_back(probs[static_cast<std::size_t>(tok)]);
    history.push_back(tok);
    ++length;
    ended = tok == eos;
  }
  return out;
}

double policy_entropy(const Policy& policy, std::span<const TokenSeq> contexts) {
  if (contexts.empty()) throw MalformedInput("policy_entropy: no contexts");
  double total = 0.0;
  for (const auto& ctx : contexts) {
    const auto idx = policy.context_index(ctx);
    const auto lp = policy.log_dist_at(idx);
    const auto p = policy.dist_at(idx);
    total += entropy_of(p, lp);
  }
  return total / static_cast<double>(contexts.size());
}

// ---------------------------------------------------------------------------
// Surrogate objective and gradient
// ---------------------------------------------------------------------------

namespace {

struct TokenVisit {
  std::size_t context;
  Token token;
  double advantage;
  double old_log_prob;
};

std::vector<TokenVisit> collect_visits(const Policy& policy, std::span<const UpdateItem> batch) {
  std::vector<TokenVisit> visits;
  TokenSeq history;
  for (const auto& item : batch) {
    if (item.old_probs.size() != item.response.size())
      throw MalformedInput("update: old_probs length differs from response length");
    if (!std::isfinite(item.advantage)) throw MalformedInput("update: non-finite advantage");
    history.assign(item.prompt.begin(), item.prompt.end());
    for (std::size_t i = 0; i < item.response.size(); ++i) {
      const Token t = item.response[i];
      if (!policy.vocab().contains(t)) throw MalformedInput("update: invalid token id");
      const double p_old = item.old_probs[i];
      if (!(p_old > 0.0 && p_old <= 1.0))
        throw MalformedInput("update: old probability outside (0, 1]");
      visits.push_back({policy.context_index(history), t, item.advantage, std::log(p_old)});
      history.push_back(t);
    }
  }
  return visits;
}

class SoftmaxMemo {
 public:
  SoftmaxMemo(const Policy& policy) : policy_(policy) {}

  const ContextCache& at(std::size_t context) {
    auto it = std::lower_bound(keys_.begin(), keys_.end(), context);
    const auto pos = static_cast<std::size_t>(it - keys_.begin());
    if (it != keys_.end() && *it == context) return values_[pos];
    ContextCache c;
    c.log_probs = policy_.log_dist_at(context);
    c.probs.resize(c.log_probs.size());
    for (std::size_t i = 0; i < c.probs.size(); ++i) c.probs[i] = std::exp(c.log_probs[i]);
    keys_.insert(it, context);
    return *values_.insert(values_.begin() + static_cast<std::ptrdiff_t>(pos), std::move(c));
  }

 private:
  const Policy& policy_;
  std::vector<std::size_t> keys_;
  std::vector<ContextCache> values_;
};

double kl_of(const ContextCache& p, const ContextCache& q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i)
    kl += p.probs[i] * (p.log_probs[i] - q.log_probs[i]);
  return std::max(kl, 0.0);
}

void check_compatible(const Policy& a, const Policy& b) {
  if (!(a.vocab() == b.vocab()) || a.context_window() != b.context_window() ||
      a.temperature() != b.temperature())
    throw MalformedInput("policy and reference have different shapes");
}

}  // namespace

double surrogate_objective(const Policy& policy, const Policy& reference,
                           std::span<const UpdateItem> batch, const UpdateConfig& config) {
  check_compatible(policy, reference);
  const auto visits = collect_visits(policy, batch);
  if (visits.empty()) return 0.0;
  SoftmaxMemo cur(policy);
  SoftmaxMemo ref(reference);
  double total = 0.0;
  for (const auto& v : visits) {
    const auto& c = cur.at(v.context);
    const double ratio = std::exp(c.log_probs[static_cast<std::size_t>(v.token)] - v.old_log_prob);
    const double clipped = std::clamp(ratio, 1.0 - config.clip_low, 1.0 + config.clip_high);
    total += std::min(ratio * v.advantage, clipped * v.advantage);
    if (config.kl_coef != 0.0) total -= config.kl_coef * kl_of(c, ref.at(v.context));
  }
  return total / static_cast<double>(visits.size());
}

std::vector<double> surrogate_gradient(const Policy& policy, const Policy& reference,
                                       std::span<const UpdateItem> batch,
                                       const UpdateConfig& config, UpdateStats* stats) {
  check_compatible(policy, reference);
  const auto visits = collect_visits(policy, batch);
  std::vector<double> grad(policy.params().size(), 0.0);
  if (visits.empty()) {
    if (stats) *stats = UpdateStats{};
    return grad;
  }
  SoftmaxMemo cur(policy);
  SoftmaxMemo ref(reference);
  const auto vocab = static_cast<std::size_t>(policy.vocab().size);
  const double inv_temp = 1.0 / policy.temperature();
  const double inv_n = 1.0 / static_cast<double>(visits.size());

  std::size_t clipped_count = 0;
  double entropy_sum = 0.0;
  double objective = 0.0;
  for (const auto& v : visits) {
    const auto& c = cur.at(v.context);
    const auto tok = static_cast<std::size_t>(v.token);
    const double ratio = std::exp(c.log_probs[tok] - v.old_log_prob);
    const double clipped = std::clamp(ratio, 1.0 - config.clip_low, 1.0 + config.clip_high);
    const bool clip_active = (v.advantage > 0.0 && ratio > 1.0 + config.clip_high) ||
                             (v.advantage < 0.0 && ratio < 1.0 - config.clip_low);
    objective += std::min(ratio * v.advantage, clipped * v.advantage);
    entropy_sum += entropy_of(c.probs, c.log_probs);
    double* row = grad.data() + v.context * vocab;

    if (clip_active) {
      ++clipped_count;
    } else if (v.advantage != 0.0) {
      // d(r A)/dz_j = r A (1[j = t] - p_j) / T
      const double scale = ratio * v.advantage * inv_temp * inv_n;
      for (std::size_t j = 0; j < vocab; ++j) row[j] -= scale * c.probs[j];
      row[tok] += scale;
    }

    if (config.kl_coef != 0.0) {
      const auto& r = ref.at(v.context);
      const double kl = kl_of(c, r);
      objective -= config.kl_coef * kl;
      // dKL/dz_k = p_k (log p_k - log q_k - KL) / T
      const double scale = config.kl_coef * inv_temp * inv_n;
      for (std::size_t k = 0; k < vocab; ++k)
        row[k] -= scale * c.probs[k] * (c.log_probs[k] - r.log_probs[k] - kl);
    }
  }

  if (stats) {
    stats->num_tokens = visits.size();
    stats->clip_fraction = static_cast<double>(clipped_count) * inv_n;
    stats->mean_entropy = entropy_sum * inv_n;
    stats->objective = objective * inv_n;
    stats->mean_kl = 0.0;
  }
  return grad;
}

UpdateResult update(const Policy& policy, std::span<const UpdateItem> batch,
                    const UpdateConfig& config, const Policy* reference) {
  const Policy& ref = reference ? *reference : policy;
  UpdateStats stats;
  const auto grad = surrogate_gradient(policy, ref, batch, config, &stats);
  for (double g : grad)
    if (!std::isfinite(g)) throw Divergence("update: non-finite gradient");

  Policy next = policy;
  auto& params = next.params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i] += config.learning_rate * grad[i];
  for (double p : params)
    if (!std::isfinite(p)) throw Divergence("update: non-finite parameter after step");

  // KL(updated || reference) over the same token contexts.
  if (stats.num_tokens > 0) {
    const auto visits = collect_visits(next, batch);
    SoftmaxMemo upd(next);
    SoftmaxMemo rf(ref);
    double kl = 0.0;
    for (const auto& v : visits) kl += kl_of(upd.at(v.context), rf.at(v.context));
    stats.mean_kl = kl / static_cast<double>(visits.size());
  }
  return {std::move(next), stats};
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_policy(const Policy& policy, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "vocab_size " << policy.vocab().size << '\n';
  out << "eos_id " << policy.vocab().eos_id << '\n';
  out << "window " << policy.context_window() << '\n';
  out << "temperature " << format_hexfloat(policy.temperature()) << '\n';
  out << "contexts " << policy.num_contexts() << '\n';
  for (std::size_t c = 0; c < policy.num_contexts(); ++c) {
    const auto row = policy.logits(c);
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out << ' ';
      out << format_hexfloat(row[j]);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Policy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;

  auto next_line = [&]() -> std::string {
    if (!std::getline(in, line)) throw ParseError(line_no + 1, "unexpected end of checkpoint");
    ++line_no;
    return line;
  };
  auto keyed = [&](const char* key) -> std::string {
    std::istringstream ss(next_line());
    std::string k, v, extra;
    if (!(ss >> k >> v) || k != key || (ss >> extra))
      throw ParseError(line_no, std::string("expected '") + key + " <value>'");
    return v;
  };
  auto to_int = [&](const std::string& s) -> long long {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(s, &pos);
      if (pos != s.size()) throw ParseError(line_no, "bad integer '" + s + "'");
      return v;
    } catch (const std::logic_error&) {
      throw ParseError(line_no, "bad integer '" + s + "'");
    }
  };

  {
    std::istringstream ss(next_line());
    std::string magic;
    int version = 0;
    if (!(ss >> magic >> version) || magic != kCheckpointMagic)
      throw ParseError(line_no, "not a policy checkpoint");
    if (version != kCheckpointVersion)
      throw ParseError(line_no, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto vocab_size = static_cast<int>(to_int(keyed("vocab_size")));
  const auto eos = static_cast<Token>(to_int(keyed("eos_id")));
  const auto window = static_cast<int>(to_int(keyed("window")));
  const auto temp_text = keyed("temperature");
  const auto temperature = parse_hexfloat(temp_text);
  if (!temperature) throw ParseError(line_no, "bad temperature");
  const auto contexts = static_cast<std::size_t>(to_int(keyed("contexts")));

  Policy policy(Vocab(vocab_size, eos), window, *temperature);
  if (contexts != policy.num_contexts()) throw ParseError(line_no, "context count mismatch");
  for (std::size_t c = 0; c < contexts; ++c) {
    std::istringstream ss(next_line());
    auto row = policy.logits(c);
    std::string tok;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (!(ss >> tok)) throw ParseError(line_no, "short logit row");
      const auto v = parse_hexfloat(tok);
      if (!v || !std::isfinite(*v)) throw ParseError(line_no, "bad logit '" + tok + "'");
      row[j] = *v;
    }
    if (ss >> tok) throw ParseError(line_no, "long logit row");
  }
  return policy;
}

}  // namespace specrl
