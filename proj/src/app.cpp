// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include "specrl/app.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "specrl/error.hpp"

namespace specrl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

const char* json_type(const json& v) { return v.type_name(); }

std::int64_t as_int(const json& v, const std::string& field, std::int64_t lo, std::int64_t hi) {
  if (!v.is_number_integer()) throw ConfigError(field, std::string("expected integer, got ") + json_type(v));
  std::int64_t x;
  if (v.is_number_unsigned()) {
    const auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(hi)) throw ConfigError(field, "out of range");
    x = static_cast<std::int64_t>(u);
  } else {
    x = v.get<std::int64_t>();
  }
  if (x < lo || x > hi) throw ConfigError(field, "out of range");
  return x;
}

double as_double(const json& v, const std::string& field) {
  if (!v.is_number()) throw ConfigError(field, std::string("expected number, got ") + json_type(v));
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& field) {
  if (!v.is_string()) throw ConfigError(field, std::string("expected string, got ") + json_type(v));
  return v.get<std::string>();
}

bool as_bool(const json& v, const std::string& field) {
  if (!v.is_boolean()) throw ConfigError(field, std::string("expected boolean, got ") + json_type(v));
  return v.get<bool>();
}

LenienceSetting as_lenience(const json& v, const std::string& field) {
  try {
    if (v.is_string()) return LenienceSetting::parse(v.get<std::string>());
    if (v.is_number()) {
      const double x = v.get<double>();
      return x == 0.0 ? LenienceSetting::zero() : LenienceSetting::finite(x);
    }
  } catch (const InvalidConfig& e) {
    throw ConfigError(field, e.what());
  }
  throw ConfigError(field, std::string("expected string or number, got ") + json_type(v));
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& prefix) {
  for (const auto& [key, _] : obj.items())
    if (!known.count(key)) throw ConfigError(prefix + key, "unknown field");
}

int as_count(const json& v, const std::string& field) {
  return static_cast<int>(as_int(v, field, 0, std::numeric_limits<int>::max()));
}

/// Re-raises an InvalidConfig from validate() ("field: message") as ConfigError.
[[noreturn]] void rethrow_as_config_error(const InvalidConfig& e) {
  const std::string what = e.what();
  const auto colon = what.find(": ");
  if (colon == std::string::npos) throw ConfigError("config", what);
  throw ConfigError(what.substr(0, colon), what.substr(colon + 2));
}

void validate_or_throw(const TrainConfig& c) {
  try {
    validate(c);
  } catch (const InvalidConfig& e) {
    rethrow_as_config_error(e);
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config", "top level must be an object");

  reject_unknown(j,
                 {"schema_version", "seed", "epochs", "steps_per_epoch", "prompts_per_batch",
                  "group_size", "max_len", "lenience", "resume_mode", "rollout_mode",
                  "learning_rate", "kl_coef", "clip_low", "clip_high", "updates_per_batch",
                  "context_window", "task", "output", "sweep"},
                 "");

  ExperimentConfig cfg;
  if (!j.contains("schema_version")) throw ConfigError("schema_version", "missing required field");
  cfg.schema_version = static_cast<int>(as_int(j["schema_version"], "schema_version", 0, 1 << 20));
  if (cfg.schema_version != kConfigSchemaVersion)
    throw ConfigError("schema_version", "unsupported version " + std::to_string(cfg.schema_version) +
                                            " (expected " + std::to_string(kConfigSchemaVersion) + ")");
  if (!j.contains("seed")) throw ConfigError("seed", "missing required field");
  auto& t = cfg.train;
  t.seed = static_cast<std::uint64_t>(
      as_int(j["seed"], "seed", 0, std::numeric_limits<std::int64_t>::max()));

  if (j.contains("epochs")) t.epochs = as_count(j["epochs"], "epochs");
  if (j.contains("steps_per_epoch")) t.steps_per_epoch = as_count(j["steps_per_epoch"], "steps_per_epoch");
  if (j.contains("prompts_per_batch"))
    t.prompts_per_batch = as_count(j["prompts_per_batch"], "prompts_per_batch");
  if (j.contains("group_size")) t.group_size = as_count(j["group_size"], "group_size");
  if (j.contains("max_len")) t.max_len = as_count(j["max_len"], "max_len");
  if (j.contains("lenience")) t.lenience = as_lenience(j["lenience"], "lenience");
  try {
    if (j.contains("resume_mode"))
      t.resume_mode = parse_resume_mode(as_string(j["resume_mode"], "resume_mode"));
  } catch (const InvalidConfig& e) {
    throw ConfigError("resume_mode", e.what());
  }
  try {
    if (j.contains("rollout_mode"))
      t.rollout_mode = parse_rollout_mode(as_string(j["rollout_mode"], "rollout_mode"));
  } catch (const InvalidConfig& e) {
    throw ConfigError("rollout_mode", e.what());
  }
  if (j.contains("learning_rate")) t.learning_rate = as_double(j["learning_rate"], "learning_rate");
  if (j.contains("kl_coef")) t.kl_coef = as_double(j["kl_coef"], "kl_coef");
  if (j.contains("clip_low")) t.clip_low = as_double(j["clip_low"], "clip_low");
  if (j.contains("clip_high")) t.clip_high = as_double(j["clip_high"], "clip_high");
  if (j.contains("updates_per_batch"))
    t.updates_per_batch = as_count(j["updates_per_batch"], "updates_per_batch");
  if (j.contains("context_window")) t.context_window = as_count(j["context_window"], "context_window");

  if (j.contains("task")) {
    const auto& task = j["task"];
    if (!task.is_object()) throw ConfigError("task", "expected object");
    reject_unknown(task, {"digits", "modulus"}, "task.");
    if (task.contains("digits")) t.task_digits = as_count(task["digits"], "task.digits");
    if (task.contains("modulus")) t.task_modulus = as_count(task["modulus"], "task.modulus");
  }

  if (j.contains("output")) {
    const auto& o = j["output"];
    if (!o.is_object()) throw ConfigError("output", "expected object");
    reject_unknown(o,
                   {"dir", "metrics_file", "policy_file", "cache_snapshot", "cache_file", "trace",
                    "trace_file"},
                   "output.");
    auto& out = cfg.output;
    if (o.contains("dir")) out.dir = as_string(o["dir"], "output.dir");
    if (o.contains("metrics_file")) out.metrics_file = as_string(o["metrics_file"], "output.metrics_file");
    if (o.contains("policy_file")) out.policy_file = as_string(o["policy_file"], "output.policy_file");
    if (o.contains("cache_snapshot")) out.cache_snapshot = as_bool(o["cache_snapshot"], "output.cache_snapshot");
    if (o.contains("cache_file")) out.cache_file = as_string(o["cache_file"], "output.cache_file");
    if (o.contains("trace")) out.trace = as_bool(o["trace"], "output.trace");
    if (o.contains("trace_file")) out.trace_file = as_string(o["trace_file"], "output.trace_file");
    for (const auto* name : {&out.metrics_file, &out.policy_file, &out.cache_file, &out.trace_file})
      if (name->empty()) throw ConfigError("output", "file names must be non-empty");
  }

  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    if (!s.is_array()) throw ConfigError("sweep", "expected array");
    for (std::size_t i = 0; i < s.size(); ++i)
      cfg.sweep.push_back(as_lenience(s[i], "sweep[" + std::to_string(i) + "]"));
  }

  validate_or_throw(t);
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace {

void apply_common(ExperimentConfig& cfg, const Overrides& ov) {
  if (ov.out) cfg.output.dir = *ov.out;
  if (ov.seed) cfg.train.seed = *ov.seed;
  if (ov.rollout_mode) {
    try {
      cfg.train.rollout_mode = parse_rollout_mode(*ov.rollout_mode);
    } catch (const InvalidConfig& e) {
      throw ConfigError("--rollout-mode", e.what());
    }
  }
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string epoch_line(const MetricsRecord& r) {
  std::ostringstream s;
  s << "epoch " << r.epoch << ": reward=" << fixed(r.mean_reward, 4)
    << " generated=" << r.tokens_generated << " reused=" << r.tokens_reused
    << " speedup=" << fixed(r.speedup, 3) << " prefix=" << fixed(r.mean_prefix_len, 3)
    << " full_reuse=" << fixed(r.full_reuse_ratio, 3) << " rouge1=" << fixed(r.rouge1, 4)
    << " entropy=" << fixed(r.entropy, 4) << " kl=" << format_double(r.kl)
    << " clip=" << fixed(r.clip_fraction, 4);
  return s.str();
}

std::string trace_line(const TraceRecord& t) {
  json j;
  j["epoch"] = t.epoch;
  j["prompt_id"] = t.prompt_id;
  j["slot"] = t.slot;
  j["tokens"] = t.tokens;
  return j.dump();
}

/// Runs `body`, mapping the library's exception types onto exit codes.
template <class Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidConfig& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const Divergence& e) {
    err << "diverged: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int cmd_train(const fs::path& config_path, const Overrides& overrides, std::ostream& out,
              std::ostream& err) {
  return guarded(err, [&] {
    auto cfg = load_config(config_path);
    apply_common(cfg, overrides);
    if (overrides.lenience.size() > 1) throw ConfigError("--lenience", "train takes a single value");
    if (overrides.lenience.size() == 1)
      cfg.train.lenience = as_lenience(json(overrides.lenience.front()), "--lenience");
    validate_or_throw(cfg.train);

    const auto& o = cfg.output;
    fs::create_directories(o.dir);
    MetricsCsvWriter writer(o.dir / o.metrics_file);
    std::ofstream trace;
    if (o.trace) {
      trace.open(o.dir / o.trace_file, std::ios::binary | std::ios::trunc);
      if (!trace) throw std::runtime_error("cannot write " + (o.dir / o.trace_file).string());
    }

    RunObserver observer;
    observer.on_step = [&](const MetricsRecord& r) { writer.write(r); };
    observer.on_epoch = [&](const EpochMetrics& r) {
      writer.write(r);
      writer.flush();
      out << epoch_line(r) << '\n';
    };
    if (o.trace) observer.on_trace = [&](const TraceRecord& t) { trace << trace_line(t) << '\n'; };

    std::optional<ExperimentResult> result;
    try {
      result.emplace(run_experiment(cfg.train, observer));
    } catch (const Divergence&) {
      writer.flush();
      if (o.trace) trace.flush();
      throw;
    }
    save_policy(result->final_policy, o.dir / o.policy_file);
    if (o.cache_snapshot) result->final_cache.persist(o.dir / o.cache_file);
    writer.flush();
    if (o.trace) {
      trace.flush();
      if (!trace) throw std::runtime_error("failed writing " + (o.dir / o.trace_file).string());
    }
    return 0;
  });
}

int cmd_sweep(const fs::path& config_path, const Overrides& overrides, std::ostream& out,
              std::ostream& err) {
  return guarded(err, [&] {
    auto cfg = load_config(config_path);
    apply_common(cfg, overrides);
    if (!overrides.lenience.empty()) {
      cfg.sweep.clear();
      for (const auto& tok : overrides.lenience) cfg.sweep.push_back(as_lenience(json(tok), "--lenience"));
    }
    if (cfg.sweep.empty()) throw ConfigError("sweep", "must list at least one lenience value");

    TrainConfig vanilla = cfg.train;
    vanilla.rollout_mode = RolloutMode::kVanilla;
    validate_or_throw(vanilla);
    for (const auto& l : cfg.sweep) {
      TrainConfig c = cfg.train;
      c.rollout_mode = RolloutMode::kSpecRl;
      c.lenience = l;
      try {
        validate(c);
      } catch (const InvalidConfig& e) {
        throw ConfigError("sweep", "lenience " + l.label() + ": " + e.what());
      }
    }

    const auto& o = cfg.output;
    fs::create_directories(o.dir);
    std::ofstream summary(o.dir / "sweep.csv", std::ios::binary | std::ios::trunc);
    std::ofstream per_epoch(o.dir / "sweep_epochs.csv", std::ios::binary | std::ios::trunc);
    if (!summary || !per_epoch) throw std::runtime_error("cannot write sweep outputs in " + o.dir.string());
    summary << "lenience,rollout_mode,tokens_generated,tokens_generated_after_epoch1,tokens_reused,"
               "speedup,speedup_after_epoch1,final_reward,final_mean_prefix_len,"
               "final_full_reuse_ratio\n";
    per_epoch << "lenience,epoch,tokens_generated,tokens_reused,speedup,mean_prefix_len,"
                 "full_reuse_ratio,mean_reward,rouge1\n";

    const auto base_run = run_experiment(vanilla);
    const auto baseline = step_tokens(base_run);
    std::uint64_t base_total = 0, base_after = 0;
    for (const auto& e : base_run.epochs) {
      base_total += e.tokens_generated;
      if (e.epoch > 1) base_after += e.tokens_generated;
    }

    auto emit = [&](const std::string& label, RolloutMode mode, const ExperimentResult& r) {
      std::uint64_t gen = 0, after = 0, reused = 0;
      for (const auto& e : r.epochs) {
        gen += e.tokens_generated;
        reused += e.tokens_reused;
        if (e.epoch > 1) after += e.tokens_generated;
        per_epoch << label << ',' << e.epoch << ',' << e.tokens_generated << ',' << e.tokens_reused
                  << ',' << format_double(e.speedup) << ',' << format_double(e.mean_prefix_len)
                  << ',' << format_double(e.full_reuse_ratio) << ','
                  << format_double(e.mean_reward) << ',' << format_double(e.rouge1) << '\n';
      }
      const auto& last = r.epochs.back();
      summary << label << ',' << to_string(mode) << ',' << gen << ',' << after << ',' << reused
              << ',' << format_double(speedup_ratio(base_total, gen)) << ','
              << format_double(speedup_ratio(base_after, after)) << ','
              << format_double(last.mean_reward) << ',' << format_double(last.mean_prefix_len)
              << ',' << format_double(last.full_reuse_ratio) << '\n';
      out << "lenience " << label << ": tokens=" << gen << " after_epoch1=" << after
          << " speedup=" << fixed(speedup_ratio(base_total, gen), 3)
          << " final_reward=" << fixed(last.mean_reward, 4) << '\n';
    };

    emit("vanilla", RolloutMode::kVanilla, base_run);
    for (const auto& l : cfg.sweep) {
      TrainConfig c = cfg.train;
      c.rollout_mode = RolloutMode::kSpecRl;
      c.lenience = l;
      emit(l.label(), RolloutMode::kSpecRl, run_experiment(c, {}, &baseline));
    }
    summary.flush();
    per_epoch.flush();
    if (!summary || !per_epoch) throw std::runtime_error("failed writing sweep outputs");
    return 0;
  });
}

// ---------------------------------------------------------------------------
// Trace analysis
// ---------------------------------------------------------------------------

TraceEpochs read_trace(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace " + path.string());

  std::map<std::int64_t, std::map<std::uint64_t, std::map<std::uint32_t, TokenSeq>>> raw;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw ParseError(lineno, "not valid JSON");
    }
    try {
      if (!j.is_object()) throw ParseError(lineno, "record must be an object");
      for (const char* key : {"epoch", "prompt_id", "slot", "tokens"})
        if (!j.contains(key)) throw ParseError(lineno, std::string("missing field '") + key + "'");
      const auto epoch = as_int(j["epoch"], "epoch", 0, std::numeric_limits<std::int64_t>::max());
      const auto pid = static_cast<std::uint64_t>(
          as_int(j["prompt_id"], "prompt_id", 0, std::numeric_limits<std::int64_t>::max()));
      const auto slot = static_cast<std::uint32_t>(
          as_int(j["slot"], "slot", 0, std::numeric_limits<std::uint32_t>::max()));
      if (!j["tokens"].is_array()) throw ParseError(lineno, "tokens must be an array");
      TokenSeq tokens;
      for (const auto& t : j["tokens"])
        tokens.push_back(static_cast<Token>(
            as_int(t, "tokens", 0, std::numeric_limits<Token>::max())));
      if (!raw[epoch][pid].emplace(slot, std::move(tokens)).second)
        throw ParseError(lineno, "duplicate record for epoch " + std::to_string(epoch) +
                                     ", prompt " + std::to_string(pid) + ", slot " +
                                     std::to_string(slot));
    } catch (const ConfigError& e) {
      throw ParseError(lineno, e.what());
    }
  }

  TraceEpochs out;
  for (auto& [epoch, prompts] : raw) {
    auto& responses = out[epoch];
    for (auto& [pid, slots] : prompts) {
      auto& vec = responses[pid];
      std::uint32_t expect = 0;
      for (auto& [slot, tokens] : slots) {
        if (slot != expect)
          throw ParseError(0, "epoch " + std::to_string(epoch) + ", prompt " + std::to_string(pid) +
                                  ": slot " + std::to_string(expect) + " missing");
        vec.push_back(std::move(tokens));
        ++expect;
      }
    }
  }
  return out;
}

std::vector<OverlapReport> trace_overlap(const TraceEpochs& trace) {
  std::vector<OverlapReport> out;
  const EpochResponses* prev = nullptr;
  std::int64_t prev_epoch = 0;
  for (const auto& [epoch, responses] : trace) {
    if (prev != nullptr) {
      if (epoch != prev_epoch + 1)
        throw MalformedInput("epoch " + std::to_string(prev_epoch + 1) +
                             " missing from trace (jumps from " + std::to_string(prev_epoch) +
                             " to " + std::to_string(epoch) + ")");
      out.push_back(epoch_overlap(*prev, responses, epoch));
    }
    prev = &responses;
    prev_epoch = epoch;
  }
  return out;
}

int cmd_analyze(const fs::path& trace_path, const std::optional<fs::path>& out_dir,
                std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto reports = trace_overlap(read_trace(trace_path));
    std::ostringstream csv;
    csv << "epoch,prev_epoch,mean_rouge1,pairs,degenerate_pairs\n";
    for (const auto& r : reports)
      csv << r.epoch << ',' << r.epoch - 1 << ',' << format_double(r.mean_rouge1) << ','
          << r.values.size() << ',' << r.degenerate_pairs << '\n';
    if (out_dir) {
      fs::create_directories(*out_dir);
      std::ofstream f(*out_dir / "overlap.csv", std::ios::binary | std::ios::trunc);
      f << csv.str();
      f.flush();
      if (!f) throw std::runtime_error("cannot write " + (*out_dir / "overlap.csv").string());
      for (const auto& r : reports)
        out << "epoch " << r.epoch << " vs " << r.epoch - 1
            << ": mean_rouge1=" << fixed(r.mean_rouge1, 4) << '\n';
    } else {
      out << csv.str();
    }
    return 0;
  });
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Speculative rollout reuse laboratory", "specrl"};
  app.require_subcommand(1);

  std::string config;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string rollout_mode;
  std::vector<std::string> lenience;
  std::string trace;

  auto add_run_options = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON experiment config")->required();
    cmd->add_option("--out", out_dir, "output directory (overrides output.dir)");
    cmd->add_option("--seed-override", seed, "experiment seed (overrides seed)");
    cmd->add_option("--rollout-mode", rollout_mode, "vanilla | spec_rl | random_reuse");
  };

  auto* train = app.add_subcommand("train", "run one training experiment");
  add_run_options(train);
  train->add_option("--lenience", lenience, "lenience: 0, inf, e^x or a positive number")
      ->expected(1);

  auto* sweep = app.add_subcommand("sweep", "one run per lenience value, coupled seeds");
  add_run_options(sweep);
  sweep->add_option("--lenience", lenience, "lenience list, comma separated")->delimiter(',');

  auto* analyze = app.add_subcommand("analyze", "cross-epoch overlap of a trace file");
  analyze->add_option("trace", trace, "trace JSONL written by train")->required();
  analyze->add_option("--out", out_dir, "directory for overlap.csv (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  Overrides ov;
  auto* active = app.get_subcommands().front();
  if (active->count("--out")) ov.out = out_dir;
  if (active != analyze) {
    if (active->count("--seed-override")) ov.seed = seed;
    if (active->count("--rollout-mode")) ov.rollout_mode = rollout_mode;
    ov.lenience = lenience;
  }

  if (active == train) return cmd_train(config, ov, out, err);
  if (active == sweep) return cmd_sweep(config, ov, out, err);
  return cmd_analyze(trace, ov.out, out, err);
}

}  // namespace specrl
