#pragma once
// Command-line front end. Subcommands: synthesize, verify, simulate,
// export-plots, catalog. All state lives in files (JSON for configs,
// certificates, and reports; CSV for numeric series), outputs are
// byte-identical for a fixed seed, and timestamps appear only in log
// metadata. Exit codes: 0 found/clean/completed, 1 config or IO error,
// 2 infeasible, 3 budget exhausted, 4 verification counterexample.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "funnel/learn.hpp"
#include "funnel/sim.hpp"

namespace funnel {
namespace cli {

constexpr int kExitOk = 0;              // certificate found / report clean / run completed
constexpr int kExitError = 1;           // config, schema, or IO problems
constexpr int kExitInfeasible = 2;      // the learner's constraint set became empty
constexpr int kExitExhausted = 3;       // iteration budget ran out without a verdict
constexpr int kExitCounterexample = 4;  // verification or concatenation check failed

struct CliError {
  int code = kExitError;
  std::string message;
};

// ---------------------------------------------------------------------------
// Config file handling. One JSON object covers every subcommand; unknown keys
// are rejected so typos cannot silently fall back to defaults.

struct InlineStraight {
  double length = 4.0;
  double speed = 2.0;
};

struct RunConfig {
  std::string scenario;                    // catalog id, or "oval" for the pair
  std::optional<InlineStraight> segment;   // inline alternative to a catalog id
  TimingMode mode = TimingMode::kPathFollowing;
  uint64_t seed = 0;
  int budget = 0;           // learner iterations (synthesize)
  long loop_budget = 0;     // falsifier draws per learner iteration
  long verify_budget = 0;   // final escalated check / verify subcommand default
  FunnelThresholds thresholds;
  double u0_min = 0.0, u0_max = 0.0;
  double delta = 0.0, eps_pd = 0.0, p_max = 0.0, radius_min = 0.0, ramp_fraction = 0.0;
  double circular_speed = kPi / 2;
  MpcConfig mpc;
  SimOptions sim;
  int laps = 1;
  int runs = 100;
  ExtractionStrategy strategy = ExtractionStrategy::kMinNormQp;
  Disturbance disturbance;

  // Numeric defaults mirror the library defaults exactly (no drift).
  RunConfig() {
    const SynthesisConfig d;
    budget = d.max_iterations;
    loop_budget = d.loop_budget;
    verify_budget = d.final_budget;
    thresholds = d.thresholds;
    delta = d.delta;
    eps_pd = d.eps_pd;
    p_max = d.p_max;
    radius_min = d.radius_min;
    ramp_fraction = d.ramp_fraction;
    mpc = d.demo_config;
    const InputPolytope box;
    u0_min = box.u0_min;
    u0_max = box.u0_max;
  }
};

namespace detail_cli {

inline void reject_unknown_keys(const nlohmann::json& obj,
                                const std::vector<std::string>& allowed,
                                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw CliError{kExitError, "config: unknown key '" + where + it.key() + "'"};
    }
  }
}

inline const nlohmann::json& require_object(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw CliError{kExitError, "config: '" + where + "' must be an object"};
  return j;
}

inline double as_number(const nlohmann::json& obj, const std::string& key,
                        const std::string& where) {
  const auto& v = obj.at(key);
  if (!v.is_number()) throw CliError{kExitError, "config: '" + where + key + "' must be a number"};
  return v.get<double>();
}

inline double positive_number(const nlohmann::json& obj, const std::string& key,
                              const std::string& where) {
  const double x = as_number(obj, key, where);
  if (!(x > 0.0)) throw CliError{kExitError, "config: '" + where + key + "' must be > 0"};
  return x;
}

inline long positive_integer(const nlohmann::json& obj, const std::string& key,
                             const std::string& where) {
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long>() < 1) {
    throw CliError{kExitError, "config: '" + where + key + "' must be an integer >= 1"};
  }
  return v.get<long>();
}

inline uint64_t unsigned_integer(const nlohmann::json& obj, const std::string& key,
                                 const std::string& where) {
  const auto& v = obj.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw CliError{kExitError, "config: '" + where + key + "' must be a nonnegative integer"};
  }
  return v.get<uint64_t>();
}

inline std::string require_string(const nlohmann::json& obj, const std::string& key,
                                  const std::string& where) {
  const auto& v = obj.at(key);
  if (!v.is_string()) throw CliError{kExitError, "config: '" + where + key + "' must be a string"};
  return v.get<std::string>();
}

template <int N, typename VecT>
void fixed_vector(const nlohmann::json& obj, const std::string& key, const std::string& where,
                  VecT* out) {
  const auto& v = obj.at(key);
  if (!v.is_array() || v.size() != N) {
    throw CliError{kExitError,
                   "config: '" + where + key + "' must be an array of " + std::to_string(N) +
                       " numbers"};
  }
  for (int i = 0; i < N; ++i) {
    if (!v[i].is_number()) {
      throw CliError{kExitError, "config: '" + where + key + "' must contain numbers only"};
    }
    (*out)[i] = v[i].get<double>();
  }
}

inline Disturbance parse_disturbance(const nlohmann::json& j, const std::string& where) {
  require_object(j, where);
  const std::string kind = require_string(j, "kind", where);
  if (kind == "none") {
    reject_unknown_keys(j, {"kind"}, where);
    return Disturbance::none();
  }
  if (kind == "state-impulse") {
    reject_unknown_keys(j, {"kind", "time", "offset"}, where);
    Vec4 offset = Vec4::Zero();
    fixed_vector<4>(j, "offset", where, &offset);
    const double time = as_number(j, "time", where);
    if (time < 0.0) throw CliError{kExitError, "config: '" + where + "time' must be >= 0"};
    return Disturbance::state_impulse(time, offset);
  }
  if (kind == "input-noise") {
    reject_unknown_keys(j, {"kind", "gamma_std", "thrust_std", "seed"}, where);
    const double gs = j.contains("gamma_std") ? as_number(j, "gamma_std", where) : 0.0;
    const double ts = j.contains("thrust_std") ? as_number(j, "thrust_std", where) : 0.0;
    if (gs < 0.0 || ts < 0.0) {
      throw CliError{kExitError, "config: '" + where + "' noise std must be >= 0"};
    }
    const uint64_t seed = j.contains("seed") ? unsigned_integer(j, "seed", where) : 0;
    return Disturbance::input_noise(gs, ts, seed);
  }
  if (kind == "parameter-error") {
    reject_unknown_keys(j, {"kind", "wheelbase_multiplier"}, where);
    return Disturbance::parameter_error(positive_number(j, "wheelbase_multiplier", where));
  }
  throw CliError{kExitError, "config: '" + where + "kind' must be one of none, state-impulse, "
                             "input-noise, parameter-error"};
}

}  // namespace detail_cli

// Reads a JSON file, turning parse failures into line:column diagnostics.
inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError{kExitError, path + ": cannot open"};
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    size_t line = 1, column = 1;
    for (size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw CliError{kExitError, path + ":" + std::to_string(line) + ":" + std::to_string(column) +
                                   ": " + e.what()};
  }
}

// Applies a validated config object on top of the defaults in `cfg`.
inline void apply_config(const nlohmann::json& j, RunConfig* cfg) {
  using namespace detail_cli;
  require_object(j, "<root>");
  reject_unknown_keys(j, {"scenario",   "segment",      "mode",          "seed",
                          "budget",     "loop_budget",  "verify_budget", "thresholds",
                          "u0_min",     "u0_max",       "delta",         "eps_pd",
                          "p_max",      "radius_min",   "ramp_fraction", "circular_speed",
                          "mpc",        "sim",          "runs"},
                      "");

  if (j.contains("scenario")) {
    cfg->scenario = require_string(j, "scenario", "");
    const auto ids = catalog_ids();
    if (cfg->scenario != "oval" &&
        std::find(ids.begin(), ids.end(), cfg->scenario) == ids.end()) {
      throw CliError{kExitError, "config: unknown scenario '" + cfg->scenario + "'"};
    }
  }
  if (j.contains("segment")) {
    const auto& seg = require_object(j.at("segment"), "segment");
    reject_unknown_keys(seg, {"type", "length", "speed"}, "segment.");
    if (require_string(seg, "type", "segment.") != "straight") {
      throw CliError{kExitError, "config: 'segment.type' must be \"straight\""};
    }
    InlineStraight inl;
    inl.length = positive_number(seg, "length", "segment.");
    inl.speed = positive_number(seg, "speed", "segment.");
    cfg->segment = inl;
  }
  if (j.contains("scenario") && j.contains("segment")) {
    throw CliError{kExitError, "config: give either 'scenario' or 'segment', not both"};
  }
  if (j.contains("mode")) {
    try {
      cfg->mode = timing_mode_from_string(require_string(j, "mode", ""));
    } catch (const std::invalid_argument& e) {
      throw CliError{kExitError, std::string("config: ") + e.what()};
    }
  }
  if (j.contains("seed")) cfg->seed = unsigned_integer(j, "seed", "");
  if (j.contains("budget")) cfg->budget = static_cast<int>(positive_integer(j, "budget", ""));
  if (j.contains("loop_budget")) cfg->loop_budget = positive_integer(j, "loop_budget", "");
  if (j.contains("verify_budget")) cfg->verify_budget = positive_integer(j, "verify_budget", "");
  if (j.contains("thresholds")) {
    const auto& th = require_object(j.at("thresholds"), "thresholds");
    reject_unknown_keys(th, {"beta", "beta_lower", "lambda"}, "thresholds.");
    if (th.contains("beta")) cfg->thresholds.beta = positive_number(th, "beta", "thresholds.");
    if (th.contains("beta_lower")) {
      cfg->thresholds.beta_lower = positive_number(th, "beta_lower", "thresholds.");
    }
    if (th.contains("lambda")) {
      cfg->thresholds.lambda = positive_number(th, "lambda", "thresholds.");
    }
    if (!(cfg->thresholds.beta_lower < cfg->thresholds.beta)) {
      throw CliError{kExitError, "config: thresholds require beta_lower < beta"};
    }
  }
  if (j.contains("u0_min")) cfg->u0_min = positive_number(j, "u0_min", "");
  if (j.contains("u0_max")) cfg->u0_max = positive_number(j, "u0_max", "");
  if (!(cfg->u0_min <= 1.0 && 1.0 <= cfg->u0_max)) {
    throw CliError{kExitError, "config: timing bounds must satisfy u0_min <= 1 <= u0_max"};
  }
  if (j.contains("delta")) cfg->delta = positive_number(j, "delta", "");
  if (j.contains("eps_pd")) cfg->eps_pd = positive_number(j, "eps_pd", "");
  if (j.contains("p_max")) cfg->p_max = positive_number(j, "p_max", "");
  if (j.contains("radius_min")) cfg->radius_min = positive_number(j, "radius_min", "");
  if (j.contains("ramp_fraction")) {
    cfg->ramp_fraction = positive_number(j, "ramp_fraction", "");
    if (cfg->ramp_fraction > 1.0) {
      throw CliError{kExitError, "config: 'ramp_fraction' must be in (0, 1]"};
    }
  }
  if (j.contains("circular_speed")) cfg->circular_speed = positive_number(j, "circular_speed", "");
  if (j.contains("mpc")) {
    const auto& m = require_object(j.at("mpc"), "mpc");
    reject_unknown_keys(m,
                        {"horizon", "dt", "restarts", "iterations", "state_weight",
                         "input_weight", "theta_weight", "terminal_scale"},
                        "mpc.");
    if (m.contains("horizon")) cfg->mpc.horizon = static_cast<int>(positive_integer(m, "horizon", "mpc."));
    if (m.contains("dt")) cfg->mpc.dt = positive_number(m, "dt", "mpc.");
    if (m.contains("restarts")) cfg->mpc.restarts = static_cast<int>(positive_integer(m, "restarts", "mpc."));
    if (m.contains("iterations")) {
      cfg->mpc.iterations = static_cast<int>(positive_integer(m, "iterations", "mpc."));
    }
    if (m.contains("state_weight")) fixed_vector<4>(m, "state_weight", "mpc.", &cfg->mpc.state_weight);
    if (m.contains("input_weight")) fixed_vector<3>(m, "input_weight", "mpc.", &cfg->mpc.input_weight);
    if (m.contains("theta_weight")) {
      cfg->mpc.theta_weight = as_number(m, "theta_weight", "mpc.");
      if (cfg->mpc.theta_weight < 0.0) {
        throw CliError{kExitError, "config: 'mpc.theta_weight' must be >= 0"};
      }
    }
    if (m.contains("terminal_scale")) cfg->mpc.terminal_scale = positive_number(m, "terminal_scale", "mpc.");
  }
  if (j.contains("sim")) {
    const auto& s = require_object(j.at("sim"), "sim");
    reject_unknown_keys(s, {"dt", "dt_ctrl", "horizon", "laps", "strategy", "disturbance"},
                        "sim.");
    if (s.contains("dt")) cfg->sim.dt = positive_number(s, "dt", "sim.");
    if (s.contains("dt_ctrl")) cfg->sim.dt_ctrl = positive_number(s, "dt_ctrl", "sim.");
    if (s.contains("horizon")) cfg->sim.horizon = positive_number(s, "horizon", "sim.");
    const double ratio = cfg->sim.dt_ctrl / cfg->sim.dt;
    if (ratio < 1.0 - 1e-9 || std::abs(ratio - std::round(ratio)) > 1e-9) {
      throw CliError{kExitError, "config: 'sim.dt_ctrl' must be a multiple of 'sim.dt'"};
    }
    if (s.contains("laps")) cfg->laps = static_cast<int>(positive_integer(s, "laps", "sim."));
    if (s.contains("strategy")) {
      try {
        cfg->strategy = extraction_strategy_from_string(require_string(s, "strategy", "sim."));
      } catch (const std::invalid_argument& e) {
        throw CliError{kExitError, std::string("config: ") + e.what()};
      }
    }
    if (s.contains("disturbance")) {
      cfg->disturbance = detail_cli::parse_disturbance(s.at("disturbance"), "sim.disturbance.");
    }
  }
  if (j.contains("runs")) cfg->runs = static_cast<int>(positive_integer(j, "runs", ""));
}

// ---------------------------------------------------------------------------
// Shared plumbing.

inline std::string iso8601_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%FT%TZ", std::gmtime(&t));
  return buf;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CliError{kExitError, path.string() + ": cannot write"};
  out << text;
  if (!out) throw CliError{kExitError, path.string() + ": write failed"};
}

inline Certificate load_certificate(const std::string& path) {
  const nlohmann::json j = load_json_file(path);
  try {
    return Certificate::from_json(j);
  } catch (const std::exception& e) {
    throw CliError{kExitError, path + ": " + e.what()};
  }
}

inline Scenario scenario_from_config(const RunConfig& cfg) {
  Scenario sc;
  if (cfg.segment) {
    const double half = cfg.segment->length / 2.0;
    sc.id = "inline-straight";
    sc.segment = detail::make_straight(sc.id, -half, half, cfg.segment->speed);
    const Region ball{BallRegion{Vec4::Zero(), 0.5}};
    const Region box{BoxRegion{Vec4(-1, -1, -1, -3), Vec4(1, 1, 1, 3)}};
    sc.regions = RegionSpec::constant(ball, ball, box);
  } else {
    ScenarioParams params;
    params.circular_speed = cfg.circular_speed;
    sc = make_scenario(cfg.scenario, params);
  }
  sc.inputs.u0_min = cfg.u0_min;
  sc.inputs.u0_max = cfg.u0_max;
  return sc;
}

// Certificates carry their scenario id; non-catalog details (inline segments,
// overridden circular speed) must be re-supplied through the config.
inline Scenario scenario_for_certificate(const Certificate& cert, const RunConfig& cfg) {
  if (cert.scenario == "inline-straight") {
    if (!cfg.segment) {
      throw CliError{kExitError,
                     "certificate references an inline segment; pass the matching --config"};
    }
    return scenario_from_config(cfg);
  }
  ScenarioParams params;
  params.circular_speed = cfg.circular_speed;
  Scenario sc = make_scenario(cert.scenario, params);
  sc.inputs = cert.inputs;
  return sc;
}

inline SynthesisConfig synthesis_config(const RunConfig& cfg) {
  SynthesisConfig s;
  s.mode = cfg.mode;
  s.max_iterations = cfg.budget;
  s.loop_budget = cfg.loop_budget;
  s.final_budget = cfg.verify_budget;
  s.seed = cfg.seed;
  s.thresholds = cfg.thresholds;
  s.delta = cfg.delta;
  s.p_max = cfg.p_max;
  s.eps_pd = cfg.eps_pd;
  s.radius_min = cfg.radius_min;
  s.ramp_fraction = cfg.ramp_fraction;
  s.demo_config = cfg.mpc;
  return s;
}

inline nlohmann::json falsifier_report_json(const FalsifierReport& rep) {
  nlohmann::json j;
  j["clean"] = rep.clean();
  j["total_samples"] = rep.total_samples;
  nlohmann::json conditions = nlohmann::json::array();
  for (int c = 0; c < 4; ++c) {
    nlohmann::json e;
    e["condition"] = to_string(static_cast<FunnelCondition>(c));
    e["drawn"] = rep.conditions[c].drawn;
    e["accepted"] = rep.conditions[c].accepted;
    e["vacuous"] = rep.conditions[c].vacuous;
    if (std::isfinite(rep.conditions[c].worst_margin)) {
      e["worst_margin"] = rep.conditions[c].worst_margin;
    }
    conditions.push_back(std::move(e));
  }
  j["conditions"] = std::move(conditions);
  nlohmann::json cxs = nlohmann::json::array();
  const size_t shown = std::min<size_t>(rep.counterexamples.size(), 10);
  for (size_t k = 0; k < shown; ++k) {
    const Counterexample& cx = rep.counterexamples[k];
    nlohmann::json e;
    e["condition"] = to_string(cx.condition);
    e["theta"] = cx.theta;
    e["b"] = {cx.b[0], cx.b[1], cx.b[2], cx.b[3]};
    e["margin"] = cx.margin;
    if (cx.condition == FunnelCondition::kDecrease) {
      e["input"] = {cx.input[0], cx.input[1], cx.input[2]};
    }
    cxs.push_back(std::move(e));
  }
  j["counterexamples"] = std::move(cxs);
  return j;
}

inline int exit_code_for(SynthesisOutcome outcome) {
  switch (outcome) {
    case SynthesisOutcome::kFound: return kExitOk;
    case SynthesisOutcome::kInfeasible: return kExitInfeasible;
    default: return kExitExhausted;
  }
}

// ---------------------------------------------------------------------------
// Subcommands. Each returns the process exit code.

inline std::string write_synthesis_outputs(const SynthesisReport& rep, const Scenario& sc,
                                           const std::filesystem::path& out_dir) {
  const std::string stem = sc.id + "-" + to_string(rep.mode);
  nlohmann::json log = rep.to_json();
  log["metadata"] = {{"written_at", iso8601_now()}};
  write_text_file(out_dir / (stem + "-synthesis-log.json"), log.dump(2) + "\n");
  std::string cert_path;
  if (rep.certificate) {
    cert_path = (out_dir / (stem + "-certificate.json")).string();
    write_text_file(cert_path, rep.certificate->to_json().dump(2) + "\n");
  }
  return cert_path;
}

// The oval is accepted as a pair: each half's goal set must land inside the
// other half's initial set, checked by boundary sampling, before the two
// certificates can be chained lap after lap.
inline int cmd_synthesize_oval(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  RunConfig half = cfg;
  half.scenario = "oval-half-1";
  const Scenario sc1 = scenario_from_config(half);
  half.scenario = "oval-half-2";
  const Scenario sc2 = scenario_from_config(half);

  const SynthesisReport rep1 = synthesize(sc1, synthesis_config(cfg));
  const SynthesisReport rep2 = synthesize(sc2, synthesis_config(cfg));
  write_synthesis_outputs(rep1, sc1, out_dir);
  write_synthesis_outputs(rep2, sc2, out_dir);
  std::cout << "synthesize oval-half-1 mode=" << to_string(cfg.mode)
            << " outcome=" << to_string(rep1.outcome) << " iterations=" << rep1.iterations
            << "\n";
  std::cout << "synthesize oval-half-2 mode=" << to_string(cfg.mode)
            << " outcome=" << to_string(rep2.outcome) << " iterations=" << rep2.iterations
            << "\n";
  if (rep1.outcome == SynthesisOutcome::kInfeasible ||
      rep2.outcome == SynthesisOutcome::kInfeasible) {
    return kExitInfeasible;
  }
  if (rep1.outcome != SynthesisOutcome::kFound || rep2.outcome != SynthesisOutcome::kFound) {
    return kExitExhausted;
  }

  const int n = 1000;
  const auto count_outside = [n](const Region& goal, const Region& initial, uint64_t seed) {
    int outside = 0;
    for (const Vec4& z : region_boundary_samples(goal, n, seed)) {
      if (!region_contains(initial, z, 1e-9)) ++outside;
    }
    return outside;
  };
  const int bad12 = count_outside(sc1.regions.goal, sc2.regions.initial, cfg.seed ^ 0x0Au);
  const int bad21 = count_outside(sc2.regions.goal, sc1.regions.initial, cfg.seed ^ 0x0Bu);

  nlohmann::json pair;
  pair["format"] = "funnel-oval-pair/1";
  pair["halves"] = {"oval-half-1", "oval-half-2"};
  pair["mode"] = to_string(cfg.mode);
  pair["seed"] = cfg.seed;
  pair["containment"] = {
      {"goal1_in_initial2", {{"samples", n}, {"violations", bad12}}},
      {"goal2_in_initial1", {{"samples", n}, {"violations", bad21}}}};
  pair["accepted"] = bad12 == 0 && bad21 == 0;
  write_text_file(out_dir / "oval-pair.json", pair.dump(2) + "\n");
  std::cout << "oval pair containment: goal1-in-initial2 violations=" << bad12
            << " goal2-in-initial1 violations=" << bad21
            << (pair["accepted"].get<bool>() ? " (accepted)" : " (rejected)") << "\n";
  return pair["accepted"].get<bool>() ? kExitOk : kExitCounterexample;
}

inline int cmd_synthesize(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.scenario.empty() && !cfg.segment) {
    throw CliError{kExitError,
                   "synthesize: select a scenario (--scenario, or 'scenario'/'segment' in the "
                   "config)"};
  }
  if (cfg.scenario == "oval") return cmd_synthesize_oval(cfg, out_dir);
  const Scenario sc = scenario_from_config(cfg);
  const SynthesisReport rep = synthesize(sc, synthesis_config(cfg));
  const std::string cert_path = write_synthesis_outputs(rep, sc, out_dir);
  std::cout << "synthesize " << sc.id << " mode=" << to_string(rep.mode)
            << " outcome=" << to_string(rep.outcome) << " iterations=" << rep.iterations;
  if (!cert_path.empty()) std::cout << " certificate=" << cert_path;
  std::cout << "\n";
  return exit_code_for(rep.outcome);
}

inline int cmd_verify(const std::string& cert_path, const RunConfig& cfg, long budget,
                      const std::filesystem::path& out_dir) {
  const Certificate cert = load_certificate(cert_path);
  const Scenario sc = scenario_for_certificate(cert, cfg);
  FalsifyOptions opts;
  opts.budget = budget;
  opts.seed = cfg.seed;
  const FalsifierReport rep = falsify(cert.funnel, sc, cert.inputs, opts);

  nlohmann::json out;
  out["format"] = "funnel-verify-report/1";
  out["scenario"] = cert.scenario;
  out["mode"] = to_string(cert.mode);
  out["budget"] = budget;
  out["seed"] = cfg.seed;
  out["report"] = falsifier_report_json(rep);
  const std::string stem = std::filesystem::path(cert_path).stem().string();
  write_text_file(out_dir / (stem + "-verify-report.json"), out.dump(2) + "\n");
  std::cout << "verify " << cert.scenario << " mode=" << to_string(cert.mode)
            << " samples=" << rep.total_samples
            << (rep.clean() ? " clean" : " counterexamples=" +
                                             std::to_string(rep.counterexamples.size()))
            << "\n";
  return rep.clean() ? kExitOk : kExitCounterexample;
}

inline int cmd_simulate(const std::string& cert_path, const RunConfig& cfg,
                        const std::filesystem::path& out_dir) {
  const Certificate cert = load_certificate(cert_path);
  const Scenario sc = scenario_for_certificate(cert, cfg);
  const std::vector<Leg> legs(cfg.laps, Leg{cert, sc});

  BatchOptions opts;
  opts.runs = cfg.runs;
  opts.seed = cfg.seed;
  opts.disturbance = cfg.disturbance;
  opts.sim = cfg.sim;
  opts.controller.strategy = cfg.strategy;
  opts.controller.dt_ctrl = cfg.sim.dt_ctrl;
  const BatchResult res = batch_experiment(legs, initial_state_sampler(sc), opts);

  nlohmann::json details = nlohmann::json::array();
  for (int run = 0; run < cfg.runs; ++run) {
    const TraceRecord& tr = res.traces[run];
    char name[32];
    std::snprintf(name, sizeof name, "trace-%03d.csv", run);
    std::ostringstream csv;
    tr.write_csv(csv);
    write_text_file(out_dir / name, csv.str());
    nlohmann::json d = tr.to_json();
    d["trace"] = name;
    details.push_back(std::move(d));
  }
  nlohmann::json summary;
  summary["format"] = "funnel-sim-summary/1";
  summary["scenario"] = res.traces.front().scenario_id;
  summary["mode"] = to_string(cert.mode);
  summary["strategy"] = to_string(cfg.strategy);
  summary["laps"] = cfg.laps;
  summary["seed"] = cfg.seed;
  summary["aggregate"] = res.summary.to_json();
  summary["details"] = std::move(details);
  write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");
  std::cout << "simulate " << res.traces.front().scenario_id << " runs=" << cfg.runs
            << " reached=" << res.summary.reached << " safe=" << res.summary.safe << " -> "
            << out_dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Plot bundles: per-figure CSVs aggregated over a set of trace files.

struct TraceTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  int col(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    return it == columns.end() ? -1 : static_cast<int>(it - columns.begin());
  }
};

inline TraceTable read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CliError{kExitError, path + ": cannot open"};
  std::string line;
  if (!std::getline(in, line)) throw CliError{kExitError, path + ": empty file"};
  TraceTable table;
  std::istringstream header(line);
  for (std::string cell; std::getline(header, cell, ',');) table.columns.push_back(cell);
  for (const char* required :
       {"t", "leg", "theta", "alpha", "x", "y", "v", "u0", "gamma", "thrust", "value", "margin"}) {
    if (table.col(required) < 0) {
      throw CliError{kExitError, path + ": not a trace CSV (missing column '" +
                                     std::string(required) + "')"};
    }
  }
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream cells(line);
    for (std::string cell; std::getline(cells, cell, ',');) {
      char* end = nullptr;
      row.push_back(std::strtod(cell.c_str(), &end));
      if (end == cell.c_str()) {
        throw CliError{kExitError,
                       path + ":" + std::to_string(line_no) + ": non-numeric cell '" + cell + "'"};
      }
    }
    if (row.size() != table.columns.size()) {
      throw CliError{kExitError, path + ":" + std::to_string(line_no) + ": expected " +
                                     std::to_string(table.columns.size()) + " cells"};
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline int cmd_export_plots(const std::vector<std::string>& files,
                            const std::filesystem::path& out_dir) {
  if (files.empty()) throw CliError{kExitError, "export-plots: no traces"};
  std::vector<TraceTable> tables;
  tables.reserve(files.size());
  for (const std::string& f : files) tables.push_back(read_trace_csv(f));
  const bool with_clearance =
      std::all_of(tables.begin(), tables.end(),
                  [](const TraceTable& t) { return t.col("clearance") >= 0; });

  std::ostringstream xy, speed, value, margin;
  xy << "run,t,leg,x,y,alpha\n";
  speed << "run,t,v,u0,thrust\n";
  value << "run,t,theta,value\n";
  margin << "run,t,theta,margin" << (with_clearance ? ",clearance\n" : "\n");
  size_t total_rows = 0;
  for (size_t run = 0; run < tables.size(); ++run) {
    const TraceTable& tb = tables[run];
    const int ct = tb.col("t"), cleg = tb.col("leg"), cth = tb.col("theta"), cx = tb.col("x"),
              cy = tb.col("y"), ca = tb.col("alpha"), cv = tb.col("v"), cu = tb.col("u0"),
              cthr = tb.col("thrust"), cval = tb.col("value"), cm = tb.col("margin"),
              ccl = tb.col("clearance");
    for (const auto& row : tb.rows) {
      xy << run << ',' << row[ct] << ',' << row[cleg] << ',' << row[cx] << ',' << row[cy] << ','
         << row[ca] << "\n";
      speed << run << ',' << row[ct] << ',' << row[cv] << ',' << row[cu] << ',' << row[cthr]
            << "\n";
      value << run << ',' << row[ct] << ',' << row[cth] << ',' << row[cval] << "\n";
      margin << run << ',' << row[ct] << ',' << row[cth] << ',' << row[cm];
      if (with_clearance) margin << ',' << row[ccl];
      margin << "\n";
      ++total_rows;
    }
  }
  write_text_file(out_dir / "xy-path.csv", xy.str());
  write_text_file(out_dir / "speed-vs-t.csv", speed.str());
  write_text_file(out_dir / "value-vs-t.csv", value.str());
  write_text_file(out_dir / "margin-profile.csv", margin.str());
  std::cout << "export-plots traces=" << tables.size() << " rows=" << total_rows << " -> "
            << out_dir.string() << "\n";
  return kExitOk;
}

inline const char* region_kind(const Region& region) {
  switch (region.index()) {
    case 0: return "ball";
    case 1: return "box";
    case 2: return "ellipsoid";
    default: return "obstacle-complement";
  }
}

inline int cmd_catalog(const std::filesystem::path& out_dir) {
  nlohmann::json entries = nlohmann::json::array();
  for (const std::string& id : catalog_ids()) {
    const Scenario sc = make_scenario(id);
    nlohmann::json e;
    e["id"] = id;
    e["T"] = sc.segment.T;
    e["initial"] = region_kind(sc.regions.initial);
    e["goal"] = region_kind(sc.regions.goal);
    e["safe"] = sc.regions.safe_is_constant ? region_kind(sc.regions.safe_constant)
                                            : "theta-dependent";
    e["obstacle"] = sc.obstacle.has_value();
    entries.push_back(e);
    std::cout << id << "  T=" << sc.segment.T << "  initial=" << e["initial"].get<std::string>()
              << " goal=" << e["goal"].get<std::string>()
              << " safe=" << e["safe"].get<std::string>()
              << (sc.obstacle ? "  [obstacle]" : "") << "\n";
  }
  if (!out_dir.empty()) {
    nlohmann::json j;
    j["format"] = "funnel-catalog/1";
    j["scenarios"] = std::move(entries);
    write_text_file(out_dir / "catalog.json", j.dump(2) + "\n");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Argument parsing and dispatch.

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"control funnel toolkit for path-segment references"};
  app.require_subcommand(1);

  std::string config_path, scenario, mode, cert_path, out_dir = ".";
  uint64_t seed = 0;
  long budget = 0;
  int runs = 0;
  std::vector<std::string> trace_files;

  const auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file (schema-validated)");
    sub->add_option("--seed", seed, "seed for every random draw");
    sub->add_option("--out-dir", out_dir, "directory for output files");
  };

  CLI::App* synth = app.add_subcommand("synthesize", "search for a funnel certificate");
  synth->add_option("--scenario", scenario, "catalog scenario id, or 'oval' for the pair");
  synth->add_option("--mode", mode, "timing mode: pf or tt")
      ->check(CLI::IsMember({"pf", "tt"}));
  synth->add_option("--budget", budget, "learner iteration budget");
  add_config(synth);

  CLI::App* verify = app.add_subcommand("verify", "falsification-check a certificate file");
  verify->add_option("certificate", cert_path, "certificate JSON file")->required();
  verify->add_option("--budget", budget, "falsifier sample budget");
  add_config(verify);

  CLI::App* simulate = app.add_subcommand("simulate", "closed-loop runs from sampled starts");
  simulate->add_option("certificate", cert_path, "certificate JSON file")->required();
  simulate->add_option("--runs", runs, "number of closed-loop runs");
  add_config(simulate);

  CLI::App* exportp = app.add_subcommand("export-plots", "bundle trace CSVs into plot files");
  exportp->add_option("traces", trace_files, "trace CSV files from 'simulate'");
  exportp->add_option("--out-dir", out_dir, "directory for output files");

  CLI::App* catalog = app.add_subcommand("catalog", "list builtin scenarios");
  catalog->add_option("--out-dir", out_dir, "also write catalog.json here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);  // prints help or the parse error
    return rc == 0 ? kExitOk : kExitError;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) apply_config(load_json_file(config_path), &cfg);
    if (!scenario.empty()) {
      cfg.scenario = scenario;
      cfg.segment.reset();
    }
    if (!mode.empty()) cfg.mode = timing_mode_from_string(mode);
    if (synth->count("--seed") || verify->count("--seed") || simulate->count("--seed")) {
      cfg.seed = seed;
    }
    if (synth->count("--budget")) {
      if (budget < 1) throw CliError{kExitError, "--budget must be >= 1"};
      cfg.budget = static_cast<int>(budget);
    }
    if (simulate->count("--runs")) {
      if (runs < 1) throw CliError{kExitError, "--runs must be >= 1"};
      cfg.runs = runs;
    }

    if (app.got_subcommand(synth)) return cmd_synthesize(cfg, out_dir);
    if (app.got_subcommand(verify)) {
      long samples = cfg.verify_budget;
      if (verify->count("--budget")) {
        if (budget < 1) throw CliError{kExitError, "--budget must be >= 1"};
        samples = budget;
      }
      return cmd_verify(cert_path, cfg, samples, out_dir);
    }
    if (app.got_subcommand(simulate)) return cmd_simulate(cert_path, cfg, out_dir);
    if (app.got_subcommand(exportp)) return cmd_export_plots(trace_files, out_dir);
    if (app.got_subcommand(catalog)) {
      return cmd_catalog(catalog->count("--out-dir") ? out_dir : "");
    }
    return kExitError;  // unreachable: require_subcommand(1)
  } catch (const CliError& e) {
    std::cerr << "funnel: " << e.message << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "funnel: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace cli
}  // namespace funnel
