// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include "specrl/cache.hpp"

#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "specrl/error.hpp"
#include "specrl/hexfloat.hpp"

namespace specrl {

namespace {

constexpr const char* kCacheHeader = "specrl-cache 1";

double hex_field(const nlohmann::json& j, const char* name) {
  const auto& v = j.at(name);
  if (!v.is_string()) throw std::invalid_argument(std::string(name) + " must be a hex string");
  const auto parsed = parse_hexfloat(v.get<std::string>());
  if (!parsed) throw std::invalid_argument(std::string(name) + " is not a number");
  return *parsed;
}

}  // namespace

void validate_rollout(const CachedRollout& rollout) {
  if (rollout.response.empty()) throw MalformedInput("cached rollout: empty response");
  if (rollout.old_probs.size() != rollout.response.size())
    throw MalformedInput("cached rollout: old_probs length differs from response length");
  for (Token t : rollout.response)
    if (t < 0) throw MalformedInput("cached rollout: negative token id");
  for (double p : rollout.old_probs)
    if (!(p > 0.0 && p <= 1.0)) throw MalformedInput("cached rollout: probability outside (0, 1]");
}

const CachedRollout* RolloutCache::get(std::uint64_t prompt_id, std::uint32_t slot) const {
  const auto it = entries_.find({prompt_id, slot});
  return it == entries_.end() ? nullptr : &it->second;
}

const CachedRollout* RolloutCache::lookup(std::uint64_t prompt_id, std::uint32_t slot,
                                          std::int64_t current_epoch) const {
  const auto* entry = get(prompt_id, slot);
  if (entry == nullptr || entry->epoch >= current_epoch) return nullptr;
  return entry;
}

void RolloutCache::put(CachedRollout rollout) {
  validate_rollout(rollout);
  const Key key{rollout.prompt_id, rollout.slot};
  auto it = entries_.find(key);
  if (it != entries_.end()) {
    it->second = std::move(rollout);
    return;
  }
  if (capacity_ != 0 && entries_.size() >= capacity_)
    throw std::length_error("rollout cache capacity exceeded");
  entries_.emplace(key, std::move(rollout));
}

void RolloutCache::persist(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << kCacheHeader << '\n';
  for (const auto& [key, r] : entries_) {
    nlohmann::json rec;
    rec["prompt_id"] = r.prompt_id;
    rec["slot"] = r.slot;
    rec["epoch"] = r.epoch;
    rec["reward"] = format_hexfloat(r.reward);
    rec["response"] = r.response;
    auto probs = nlohmann::json::array();
    for (double p : r.old_probs) probs.push_back(format_hexfloat(p));
    rec["old_probs"] = std::move(probs);
    out << rec.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

RolloutCache RolloutCache::load(const std::filesystem::path& path, std::size_t capacity) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  if (line != kCacheHeader) throw ParseError(1, "unrecognized cache header '" + line + "'");

  RolloutCache cache(capacity);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      CachedRollout r;
      r.prompt_id = rec.at("prompt_id").get<std::uint64_t>();
      r.slot = rec.at("slot").get<std::uint32_t>();
      r.epoch = rec.at("epoch").get<std::int64_t>();
      r.reward = hex_field(rec, "reward");
      r.response = rec.at("response").get<TokenSeq>();
      for (const auto& p : rec.at("old_probs")) {
        const auto v = p.is_string() ? parse_hexfloat(p.get<std::string>()) : std::nullopt;
        if (!v) throw std::invalid_argument("old_probs entries must be hex strings");
        r.old_probs.push_back(*v);
      }
      if (cache.get(r.prompt_id, r.slot) != nullptr)
        throw std::invalid_argument("duplicate (prompt_id, slot) record");
      cache.put(std::move(r));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(line_no, std::string("corrupt cache record: ") + e.what());
    }
  }
  return cache;
}

}  // namespace specrl
