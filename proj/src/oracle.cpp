// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include "specrl/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "specrl/error.hpp"
#include "specrl/hexfloat.hpp"

namespace specrl {

namespace {

void guard_size(const Policy& policy, int max_len) {
  if (max_len < 1) throw MalformedInput("enumeration needs max_len >= 1");
  const double n = count_sequences(policy.vocab().size, max_len);
  if (n > kMaxEnumeratedSequences)
    throw EnumerationTooLarge("refusing to enumerate ~" + std::to_string(n) + " sequences");
}

TokenSeq concat(std::span<const Token> a, std::span<const Token> b) {
  TokenSeq out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

bool terminated(const TokenSeq& response, Token eos, int max_len) {
  return (!response.empty() && response.back() == eos) ||
         response.size() >= static_cast<std::size_t>(max_len);
}

/// Adds weight * P(completion | response so far) for every terminated completion of `response`.
void extend(const Policy& policy, std::span<const Token> prompt, TokenSeq& response,
            double weight, int max_len, SequenceDistribution& out) {
  const Token eos = policy.vocab().eos_id;
  if (terminated(response, eos, max_len)) {
    out[response] += weight;
    return;
  }
  const auto probs = policy.dist_at(policy.context_index(concat(prompt, response)));
  for (std::size_t v = 0; v < probs.size(); ++v) {
    response.push_back(static_cast<Token>(v));
    extend(policy, prompt, response, weight * probs[v], max_len, out);
    response.pop_back();
  }
}

/// Acceptance probability min(1, lenience * q / p), from the definition.
double accept_prob(double q, double p, const LenienceSetting& lenience) {
  switch (lenience.kind()) {
    case LenienceSetting::Kind::kZero:
      return 0.0;
    case LenienceSetting::Kind::kInfinite:
      return 1.0;
    case LenienceSetting::Kind::kFinite:
      break;
  }
  return std::min(1.0, lenience.value() * q / p);
}

}  // namespace

double count_sequences(int vocab_size, int max_len) {
  double total = 0.0;
  double level = 1.0;
  for (int l = 1; l <= max_len; ++l) {
    level *= static_cast<double>(vocab_size);
    total += level;
  }
  return total;
}

SequenceDistribution enumerate_direct(const Policy& policy, std::span<const Token> prompt,
                                      int max_len) {
  guard_size(policy, max_len);
  SequenceDistribution out;
  TokenSeq response;
  extend(policy, prompt, response, 1.0, max_len, out);
  return out;
}

SequenceDistribution enumerate_spec(const Policy& policy_new, const Policy& policy_old,
                                    std::span<const Token> prompt, int max_len,
                                    const LenienceSetting& lenience, ResumeMode mode) {
  if (!(policy_new.vocab() == policy_old.vocab()))
    throw MalformedInput("enumerate_spec: vocabularies differ");
  check_resume_mode(mode, lenience);
  guard_size(policy_new, max_len);

  SequenceDistribution out;
  for (const auto& [draft, draft_prob] : enumerate_direct(policy_old, prompt, max_len)) {
    double survive = draft_prob;
    TokenSeq prefix;
    for (std::size_t i = 0; i < draft.size(); ++i) {
      const auto context = concat(prompt, prefix);
      const auto q = policy_new.dist_at(policy_new.context_index(context));
      const auto p = policy_old.dist_at(policy_old.context_index(context));
      const auto tok = static_cast<std::size_t>(draft[i]);
      const double a = accept_prob(q[tok], p[tok], lenience);
      const double reject = survive * (1.0 - a);
      if (reject > 0.0) {
        if (mode == ResumeMode::kPaperFaithful) {
          TokenSeq response = prefix;
          extend(policy_new, prompt, response, reject, max_len, out);
        } else {
          std::vector<double> residual(q.size());
          double mass = 0.0;
          for (std::size_t v = 0; v < q.size(); ++v) {
            residual[v] = std::max(0.0, q[v] - p[v]);
            mass += residual[v];
          }
          if (!(mass > 0.0)) throw InternalInvariant("enumerate_spec: empty residual");
          for (std::size_t v = 0; v < q.size(); ++v) {
            if (residual[v] == 0.0) continue;
            TokenSeq response = prefix;
            response.push_back(static_cast<Token>(v));
            extend(policy_new, prompt, response, reject * residual[v] / mass, max_len, out);
          }
        }
      }
      survive *= a;
      prefix.push_back(draft[i]);
    }
    if (survive > 0.0) out[draft] += survive;
  }
  return out;
}

double total_mass(const SequenceDistribution& dist) {
  double s = 0.0;
  for (const auto& [_, p] : dist) s += p;
  return s;
}

double total_variation(const SequenceDistribution& a, const SequenceDistribution& b) {
  double sum = 0.0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() || ib != b.end()) {
    if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
      sum += std::abs(ia->second);
      ++ia;
    } else if (ia == a.end() || ib->first < ia->first) {
      sum += std::abs(ib->second);
      ++ib;
    } else {
      sum += std::abs(ia->second - ib->second);
      ++ia;
      ++ib;
    }
  }
  return 0.5 * sum;
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

OracleFixture make_fixture(std::string name, Policy policy_old, Policy policy_new,
                           TokenSeq prompt, int max_len) {
  OracleFixture f{std::move(name), std::move(policy_old), std::move(policy_new),
                  std::move(prompt), max_len, {}, {}, {}, 0.0};
  const auto one = LenienceSetting::finite(1.0);
  f.direct_new = enumerate_direct(f.policy_new, f.prompt, max_len);
  f.direct_old = enumerate_direct(f.policy_old, f.prompt, max_len);
  f.spec_paper =
      enumerate_spec(f.policy_new, f.policy_old, f.prompt, max_len, one, ResumeMode::kPaperFaithful);
  f.paper_tv = total_variation(f.spec_paper, f.direct_new);
  return f;
}

namespace {

using nlohmann::json;

json policy_to_json(const Policy& p) {
  json j;
  j["vocab_size"] = p.vocab().size;
  j["eos_id"] = p.vocab().eos_id;
  j["window"] = p.context_window();
  j["temperature"] = format_hexfloat(p.temperature());
  auto logits = json::array();
  for (double v : p.params()) logits.push_back(format_hexfloat(v));
  j["logits"] = std::move(logits);
  return j;
}

double hex_value(const json& j) {
  const auto v = parse_hexfloat(j.get<std::string>());
  if (!v) throw ParseError(0, "bad hex float '" + j.get<std::string>() + "'");
  return *v;
}

Policy policy_from_json(const json& j) {
  Policy p(Vocab(j.at("vocab_size").get<int>(), j.at("eos_id").get<Token>()),
           j.at("window").get<int>(), hex_value(j.at("temperature")));
  const auto& logits = j.at("logits");
  if (logits.size() != p.params().size()) throw ParseError(0, "fixture logit table size mismatch");
  for (std::size_t i = 0; i < logits.size(); ++i) p.params()[i] = hex_value(logits[i]);
  return p;
}

json dist_to_json(const SequenceDistribution& d) {
  auto arr = json::array();
  for (const auto& [seq, prob] : d) {
    json e;
    e["tokens"] = seq;
    e["p"] = format_hexfloat(prob);
    e["approx"] = prob;
    arr.push_back(std::move(e));
  }
  return arr;
}

SequenceDistribution dist_from_json(const json& arr) {
  SequenceDistribution d;
  for (const auto& e : arr) d[e.at("tokens").get<TokenSeq>()] = hex_value(e.at("p"));
  return d;
}

}  // namespace

void save_fixture(const OracleFixture& f, const std::filesystem::path& path) {
  json j;
  j["format"] = "specrl-oracle-fixture";
  j["version"] = 1;
  j["name"] = f.name;
  j["prompt"] = f.prompt;
  j["max_len"] = f.max_len;
  j["policy_old"] = policy_to_json(f.policy_old);
  j["policy_new"] = policy_to_json(f.policy_new);
  j["direct_new"] = dist_to_json(f.direct_new);
  j["direct_old"] = dist_to_json(f.direct_old);
  j["spec_paper"] = dist_to_json(f.spec_paper);
  j["paper_tv"] = format_hexfloat(f.paper_tv);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(1) << '\n';
}

OracleFixture load_fixture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(0, path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "specrl-oracle-fixture" || j.value("version", 0) != 1)
    throw ParseError(0, path.string() + ": not a version-1 oracle fixture");
  OracleFixture f{j.at("name").get<std::string>(),
                  policy_from_json(j.at("policy_old")),
                  policy_from_json(j.at("policy_new")),
                  j.at("prompt").get<TokenSeq>(),
                  j.at("max_len").get<int>(),
                  dist_from_json(j.at("direct_new")),
                  dist_from_json(j.at("direct_old")),
                  dist_from_json(j.at("spec_paper")),
                  hex_value(j.at("paper_tv"))};
  return f;
}

}  // namespace specrl
