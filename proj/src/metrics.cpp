// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include "specrl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "specrl/error.hpp"

namespace specrl {

RougeScore rouge1(std::span<const Token> reference, std::span<const Token> candidate,
                  RougeVariant variant) {
  if (reference.empty()) return {0.0, true};
  std::unordered_map<Token, std::size_t> ref_counts;
  for (Token t : reference) ++ref_counts[t];
  std::size_t matched = 0;
  for (Token t : candidate) {
    auto it = ref_counts.find(t);
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++matched;
    }
  }
  const double recall = static_cast<double>(matched) / static_cast<double>(reference.size());
  if (variant == RougeVariant::kRecall) return {recall, false};
  if (matched == 0) return {0.0, false};
  const double precision = static_cast<double>(matched) / static_cast<double>(candidate.size());
  return {2.0 * precision * recall / (precision + recall), false};
}

OverlapReport epoch_overlap(const EpochResponses& prev_epoch, const EpochResponses& curr_epoch,
                            std::int64_t epoch, RougeVariant variant) {
  std::vector<std::uint64_t> missing_curr, missing_prev;
  for (const auto& [id, _] : prev_epoch)
    if (!curr_epoch.count(id)) missing_curr.push_back(id);
  for (const auto& [id, _] : curr_epoch)
    if (!prev_epoch.count(id)) missing_prev.push_back(id);
  if (!missing_curr.empty() || !missing_prev.empty()) {
    std::ostringstream msg;
    msg << "epoch_overlap: prompt keys differ;";
    if (!missing_curr.empty()) {
      msg << " missing from current epoch:";
      for (auto id : missing_curr) msg << ' ' << id;
      msg << ';';
    }
    if (!missing_prev.empty()) {
      msg << " missing from previous epoch:";
      for (auto id : missing_prev) msg << ' ' << id;
    }
    throw MalformedInput(msg.str());
  }

  OverlapReport report;
  report.epoch = epoch;
  for (const auto& [id, prev] : prev_epoch) {
    const auto& curr = curr_epoch.at(id);
    if (prev.size() != curr.size())
      throw MalformedInput("epoch_overlap: prompt " + std::to_string(id) +
                           " has a different number of slots in the two epochs");
    for (std::size_t s = 0; s < prev.size(); ++s) {
      const auto score = rouge1(prev[s], curr[s], variant);
      report.values.push_back(score.value);
      if (score.degenerate) ++report.degenerate_pairs;
    }
  }
  if (!report.values.empty())
    report.mean_rouge1 = std::accumulate(report.values.begin(), report.values.end(), 0.0) /
                         static_cast<double>(report.values.size());
  return report;
}

double kl_estimate(const Policy& policy_new, const Policy& policy_old,
                   std::span<const TokenSeq> contexts) {
  if (contexts.empty()) throw MalformedInput("kl_estimate: no contexts");
  if (!(policy_new.vocab() == policy_old.vocab()))
    throw MalformedInput("kl_estimate: vocabularies differ");
  double total = 0.0;
  for (const auto& ctx : contexts) {
    const auto lp = policy_new.log_dist_at(policy_new.context_index(ctx));
    const auto lq = policy_old.log_dist_at(policy_old.context_index(ctx));
    double kl = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
    total += std::max(kl, 0.0);
  }
  return total / static_cast<double>(contexts.size());
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw MalformedInput("spearman: length mismatch");
  const auto n = xs.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

double speedup_ratio(std::uint64_t baseline_tokens, std::uint64_t tokens_generated) {
  if (tokens_generated == 0) return std::numeric_limits<double>::infinity();
  return static_cast<double>(baseline_tokens) / static_cast<double>(tokens_generated);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// CSV sink
// ---------------------------------------------------------------------------

const char* MetricsCsvWriter::header() {
  return "epoch,step,tokens_generated,tokens_reused,speedup,mean_prefix_len,full_reuse_ratio,"
         "rouge1,mean_reward,entropy,kl,clip_fraction";
}

MetricsCsvWriter::MetricsCsvWriter(const std::filesystem::path& path)
    : out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out_ << header() << '\n';
}

std::string MetricsCsvWriter::format_row(const MetricsRecord& r) {
  std::string row = std::to_string(r.epoch) + ',';
  row += r.step ? std::to_string(*r.step) : std::string("summary");
  row += ',' + std::to_string(r.tokens_generated);
  row += ',' + std::to_string(r.tokens_reused);
  for (double v : {r.speedup, r.mean_prefix_len, r.full_reuse_ratio, r.rouge1, r.mean_reward,
                   r.entropy, r.kl, r.clip_fraction})
    row += ',' + format_double(v);
  return row;
}

void MetricsCsvWriter::write(const MetricsRecord& record) {
  out_ << format_row(record) << '\n';
  if (!out_) throw std::runtime_error("metrics write failed");
}

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != MetricsCsvWriter::header())
    throw ParseError(1, "unexpected metrics header");
  std::vector<MetricsRecord> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 12) throw ParseError(line_no, "expected 12 columns");
    try {
      MetricsRecord r;
      r.epoch = std::stoll(cells[0]);
      if (cells[1] != "summary") r.step = std::stoll(cells[1]);
      r.tokens_generated = std::stoull(cells[2]);
      r.tokens_reused = std::stoull(cells[3]);
      double* targets[] = {&r.speedup, &r.mean_prefix_len, &r.full_reuse_ratio, &r.rouge1,
                           &r.mean_reward, &r.entropy, &r.kl, &r.clip_fraction};
      for (std::size_t i = 0; i < 8; ++i) *targets[i] = std::stod(cells[4 + i]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw ParseError(line_no, "non-numeric metrics cell");
    }
  }
  return rows;
}

}  // namespace specrl
