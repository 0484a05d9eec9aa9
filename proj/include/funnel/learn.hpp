#pragma once
// Counterexample-guided synthesis of funnel functions. The learner keeps a
// polytope of linear constraints over the 11 funnel parameters (upper
// triangle of C plus c0), proposes the Chebyshev center as the next
// candidate, asks the falsifier for violations, converts them into fresh
// rows (querying the demonstrator for decrease witnesses), and repeats until
// the falsifier comes back clean at full budget, the polytope collapses, or
// the iteration budget runs out. Positive definiteness of C is enforced
// lazily through eigenvector cuts.

#include <chrono>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "funnel/demonstrator.hpp"
#include "funnel/lp.hpp"
#include "funnel/verify.hpp"
#include "json.hpp"

namespace funnel {

enum class SynthesisOutcome { kFound, kInfeasible, kBudgetExhausted };

inline const char* to_string(SynthesisOutcome o) {
  switch (o) {
    case SynthesisOutcome::kFound: return "found";
    case SynthesisOutcome::kInfeasible: return "infeasible";
    default: return "budget-exhausted";
  }
}

// One linear inequality a.p <= rhs over the parameter vector, together with
// where it came from: the violated condition, the witness state, and the
// demonstrated input when the row pins the decrease direction.
struct LearnerRow {
  ParamVec a = ParamVec::Zero();
  double rhs = 0.0;
  std::string origin;  // bounds | guard | seed | counterexample | pd-cut
  FunnelCondition condition = FunnelCondition::kInitial;
  double theta = 0.0;
  Vec4 witness = Vec4::Zero();
  bool demonstrated = false;
  Vec3 input = Vec3::Zero();
  bool active = true;  // decrease rows can be retired (see LearnerPolytope)
};

inline LearnerRow row_from_counterexample(const Counterexample& cx, const ReferenceSegment& ref,
                                          const std::optional<Vec3>& demo_input,
                                          const FunnelThresholds& th, double delta) {
  LearnerRow row;
  row.origin = "counterexample";
  row.condition = cx.condition;
  row.theta = cx.theta;
  row.witness = cx.b;
  switch (cx.condition) {
    case FunnelCondition::kInitial:
      row.a = value_coefficients(0.0, cx.b);
      row.rhs = th.beta - delta;
      break;
    case FunnelCondition::kGoal:
      row.a = -value_coefficients(ref.T, cx.b);
      row.rhs = -(th.beta + delta);
      break;
    case FunnelCondition::kSafe:
      row.a = -value_coefficients(cx.theta, cx.b);
      row.rhs = -(th.beta + delta);
      break;
    case FunnelCondition::kDecrease: {
      if (!demo_input) {
        throw std::invalid_argument("row_from_counterexample: decrease row needs a demonstration");
      }
      row.demonstrated = true;
      row.input = *demo_input;
      const Vec4 bdot =
          body_deviation_field(BodyState::from_vec(cx.b), ref, cx.theta, *demo_input);
      row.a = decrease_coefficients(cx.b, bdot, (*demo_input)[0]);
      row.rhs = -(th.lambda + delta);
      break;
    }
  }
  return row;
}

struct SynthesisConfig {
  TimingMode mode = TimingMode::kPathFollowing;
  int max_iterations = 300;
  long loop_budget = 10000;     // falsifier draws per loop iteration
  long final_budget = 100000;   // escalated check before declaring found
  uint64_t seed = 0;
  FunnelThresholds thresholds;
  double delta = 1e-3;          // strictness margin on every row
  double p_max = 1e3;           // bounding box on parameters
  double eps_pd = 1e-3;         // eigenvalue floor enforced by cuts
  double radius_min = 1e-9;     // Chebyshev radius below which the set is empty
  double ramp_fraction = 0.5;   // cap on c0*T as a fraction of beta_lower
  int seed_boundary = 200;      // pre-sampled boundary rows per set condition
  int seed_demos = 24;          // pre-demonstrated decrease rows
  int counterexample_rows = 8;  // violations converted to rows per iteration
  int max_pd_cuts = 200;        // eigencut re-solves per proposal
  MpcConfig demo_config = light_demo_config();

  // In-loop demonstrations trade polish for speed; the defaults of MpcConfig
  // stay available to callers who want the slower, more thorough settings.
  static MpcConfig light_demo_config() {
    MpcConfig cfg;
    cfg.horizon = 16;
    cfg.restarts = 2;
    cfg.iterations = 30;
    return cfg;
  }
};

struct IterationLog {
  int iteration = 0;
  double radius = 0.0;
  ParamVec candidate = ParamVec::Zero();
  int pd_cuts = 0;
  int rows_added = 0;
  int rows_retired = 0;
  int violations = 0;
  double worst_margin = 0.0;  // most positive falsifier margin this iteration
  double seconds = 0.0;
};

struct SynthesisReport {
  SynthesisOutcome outcome = SynthesisOutcome::kBudgetExhausted;
  std::string scenario_id;
  TimingMode mode = TimingMode::kPathFollowing;
  uint64_t seed = 0;
  int iterations = 0;
  std::optional<Certificate> certificate;
  std::vector<LearnerRow> rows;
  std::vector<IterationLog> iteration_log;
  FalsifierReport final_report;  // the last falsifier verdict
  double seconds = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "funnel-synthesis-log/1";
    j["outcome"] = to_string(outcome);
    j["scenario"] = scenario_id;
    j["mode"] = to_string(mode);
    j["seed"] = seed;
    j["iterations"] = iterations;
    j["seconds"] = seconds;
    if (certificate) j["certificate"] = certificate->to_json();
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& row : rows) {
      nlohmann::json r;
      r["origin"] = row.origin;
      r["condition"] = to_string(row.condition);
      r["theta"] = row.theta;
      r["witness"] = {row.witness[0], row.witness[1], row.witness[2], row.witness[3]};
      r["rhs"] = row.rhs;
      r["a"] = std::vector<double>(row.a.data(), row.a.data() + kFunnelParams);
      r["active"] = row.active;
      if (row.demonstrated) r["input"] = {row.input[0], row.input[1], row.input[2]};
      rows_json.push_back(std::move(r));
    }
    j["rows"] = std::move(rows_json);
    nlohmann::json iters = nlohmann::json::array();
    for (const auto& it : iteration_log) {
      nlohmann::json e;
      e["iteration"] = it.iteration;
      e["radius"] = it.radius;
      e["candidate"] = std::vector<double>(it.candidate.data(), it.candidate.data() + kFunnelParams);
      e["pd_cuts"] = it.pd_cuts;
      e["rows_added"] = it.rows_added;
      e["rows_retired"] = it.rows_retired;
      e["violations"] = it.violations;
      e["worst_margin"] = it.worst_margin;
      e["seconds"] = it.seconds;
      iters.push_back(std::move(e));
    }
    j["iteration_log"] = std::move(iters);
    return j;
  }
};

namespace detail {

class LearnerPolytope {
 public:
  explicit LearnerPolytope(double p_max) {
    for (int k = 0; k < kFunnelParams; ++k) {
      ParamVec e = ParamVec::Zero();
      e[k] = 1.0;
      add_raw(e, p_max, "bounds");
      add_raw(-e, p_max, "bounds");
    }
  }

  // Returns false when the row is numerically empty (nothing to add).
  bool add(LearnerRow row) {
    if (row.a.norm() < 1e-14) return false;
    lp_.add(row.a, row.rhs);
    rows_.push_back(std::move(row));
    return true;
  }

  ChebyshevResult<kFunnelParams> center() const { return lp_.chebyshev_center(); }
  const std::vector<LearnerRow>& rows() const { return rows_; }

  // The decrease condition only binds inside the band of the eventual
  // certificate, but demonstration rows pin a specific input at a specific
  // state unconditionally. Rows collected against earlier candidates (whose
  // bands sat elsewhere) can therefore over-constrain the system. When that
  // empties the polytope, retire the oldest demonstration rows first: if a
  // retired state still matters, the falsifier re-finds it against the
  // current candidate and the demonstrator answers it afresh.
  int retire_oldest_decrease_rows(int count) {
    int retired = 0;
    const size_t n = rows_.size();
    for (size_t step = 0; step < n && retired < count; ++step) {
      LearnerRow& row = rows_[(retire_cursor_ + step) % n];
      if (!row.active || row.condition != FunnelCondition::kDecrease) continue;
      if (row.origin != "seed" && row.origin != "counterexample") continue;
      row.active = false;
      ++retired;
      retire_cursor_ = (retire_cursor_ + step + 1) % n;
    }
    if (retired > 0) rebuild();
    return retired;
  }

 private:
  void add_raw(const ParamVec& a, double rhs, const char* origin) {
    LearnerRow row;
    row.a = a;
    row.rhs = rhs;
    row.origin = origin;
    lp_.add(a, rhs);
    rows_.push_back(std::move(row));
  }

  void rebuild() {
    lp_ = ConstraintSet<kFunnelParams>{};
    for (const auto& row : rows_) {
      if (row.active) lp_.add(row.a, row.rhs);
    }
  }

  ConstraintSet<kFunnelParams> lp_;
  std::vector<LearnerRow> rows_;
  size_t retire_cursor_ = 0;  // round-robin so repeated retirements differ
};

// Deterministic shell states for the pre-demonstrated decrease rows. The
// radii straddle where the decrease band of a plausible certificate lives:
// for level sets pinned near beta by I/G of radius ~0.5, band states sit at
// deviation norms around [sqrt(beta_lower)/2, 0.58*sqrt(beta)]. Seeding any
// closer to the path would demand decrease where theta-pressure (c0 > 0)
// makes it impossible, poisoning the constraint system.
inline std::vector<std::pair<double, Vec4>> decrease_seed_states(const Scenario& sc, int count,
                                                                 const FunnelThresholds& thresholds,
                                                                 uint64_t seed) {
  std::vector<std::pair<double, Vec4>> out;
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 13);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double lo = 0.5 * std::sqrt(thresholds.beta_lower);
  const double hi = 0.58 * std::sqrt(thresholds.beta);
  int guard = 0;
  while (static_cast<int>(out.size()) < count && guard < 100 * count) {
    ++guard;
    const double theta = uni(rng) * sc.segment.T;
    Vec4 dir(normal(rng), normal(rng), normal(rng), normal(rng));
    const double n = dir.norm();
    if (n < 1e-12) continue;
    const Vec4 x = (lo + (hi - lo) * uni(rng)) / n * dir;
    if (!region_contains(sc.regions.safe(theta), x)) continue;
    out.emplace_back(theta, x);
  }
  return out;
}

}  // namespace detail

inline SynthesisReport synthesize(const Scenario& sc, const SynthesisConfig& cfg) {
  using Clock = std::chrono::steady_clock;
  const auto t_start = Clock::now();
  const auto elapsed = [&](Clock::time_point from) {
    return std::chrono::duration<double>(Clock::now() - from).count();
  };
  detail::require(cfg.max_iterations >= 1, "synthesize: needs at least one iteration");

  const InputPolytope inputs = input_box_for_mode(sc.inputs, cfg.mode);
  MpcConfig demo_cfg = cfg.demo_config;
  demo_cfg.box = inputs;

  SynthesisReport report;
  report.scenario_id = sc.id;
  report.mode = cfg.mode;
  report.seed = cfg.seed;

  detail::LearnerPolytope polytope(cfg.p_max);
  const double beta = cfg.thresholds.beta;
  const double lambda = cfg.thresholds.lambda;

  {
    // No valid funnel admits band states at zero deviation (the value can
    // only grow there), so c0 * T < beta_lower is forced; the tighter cap
    // c0 * T <= ramp_fraction * beta_lower keeps the band floor away from
    // the path, where the gradient (and with it every input's leverage on
    // V) shrinks linearly while the theta-ramp cost c0 * u0 does not.
    LearnerRow guard;
    guard.a = ParamVec::Zero();
    guard.a[kFunnelParams - 1] = sc.segment.T;
    guard.rhs = cfg.ramp_fraction * cfg.thresholds.beta_lower - cfg.delta;
    guard.origin = "guard";
    guard.condition = FunnelCondition::kDecrease;
    polytope.add(std::move(guard));
  }

  // Batch seeding: boundary rows for the three set conditions, demonstrated
  // rows for the decrease condition. These are counterexamples found eagerly.
  const auto seed_set_rows = [&](FunnelCondition cond, const Region& region, double theta,
                                 uint64_t salt) {
    const auto pts = region_boundary_samples(region, cfg.seed_boundary, cfg.seed ^ salt);
    for (const Vec4& x : pts) {
      Counterexample cx;
      cx.condition = cond;
      cx.theta = theta;
      cx.b = x;
      LearnerRow row = row_from_counterexample(cx, sc.segment, std::nullopt, cfg.thresholds,
                                               cfg.delta);
      row.origin = "seed";
      polytope.add(std::move(row));
    }
  };
  seed_set_rows(FunnelCondition::kInitial, sc.regions.initial, 0.0, 0xA11CE);
  seed_set_rows(FunnelCondition::kGoal, sc.regions.goal, sc.segment.T, 0xB0B);
  for (int i = 0; i < cfg.seed_boundary; ++i) {
    const double theta =
        sc.segment.T * (cfg.seed_boundary == 1 ? 0.0 : i / (cfg.seed_boundary - 1.0));
    const auto pts = region_boundary_samples(sc.regions.safe(theta), 1,
                                             cfg.seed ^ (0xCAFE + 977 * i));
    for (const Vec4& x : pts) {
      Counterexample cx;
      cx.condition = FunnelCondition::kSafe;
      cx.theta = theta;
      cx.b = x;
      LearnerRow row = row_from_counterexample(cx, sc.segment, std::nullopt, cfg.thresholds,
                                               cfg.delta);
      row.origin = "seed";
      polytope.add(std::move(row));
    }
  }
  {
    const auto states = detail::decrease_seed_states(sc, cfg.seed_demos, cfg.thresholds, cfg.seed);
    std::vector<Demonstration> demos(states.size());
    parallel_for(static_cast<int>(states.size()), [&](int i) {
      demos[i] = demonstrate_detail(states[i].first, BodyState::from_vec(states[i].second),
                                    sc.segment, demo_cfg, cfg.seed * 65537u + i);
    });
    for (size_t i = 0; i < states.size(); ++i) {
      Counterexample cx;
      cx.condition = FunnelCondition::kDecrease;
      cx.theta = states[i].first;
      cx.b = states[i].second;
      LearnerRow row = row_from_counterexample(cx, sc.segment, demos[i].affine_input,
                                               cfg.thresholds, cfg.delta);
      row.origin = "seed";
      polytope.add(std::move(row));
    }
  }

  const auto finish = [&](SynthesisOutcome outcome, int iterations) {
    report.outcome = outcome;
    report.iterations = iterations;
    report.rows = polytope.rows();
    report.seconds = elapsed(t_start);
    return report;
  };

  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const auto t_iter = Clock::now();
    IterationLog log;
    log.iteration = it;

    // Propose the Chebyshev center, adding eigenvector cuts until the shape
    // matrix clears the positive-definiteness floor.
    FunnelCandidate candidate;
    while (true) {
      const auto center = polytope.center();
      if (center.status == LpStatus::kNumericalFailure) {
        throw std::runtime_error("synthesize: constraint LP failed numerically");
      }
      log.radius = center.radius;
      if (center.radius < cfg.radius_min) {
        const int retired = polytope.retire_oldest_decrease_rows(2 * cfg.counterexample_rows);
        if (retired > 0) {
          log.rows_retired += retired;
          continue;
        }
        report.iteration_log.push_back(log);
        return finish(SynthesisOutcome::kInfeasible, it);
      }
      candidate = candidate_from_params(center.center, cfg.thresholds);
      Vec4 evec;
      const double lam_min = min_eigen(candidate.C, &evec);
      if (lam_min >= cfg.eps_pd) {
        log.candidate = center.center;
        break;
      }
      if (++log.pd_cuts > cfg.max_pd_cuts) {
        throw std::runtime_error("synthesize: eigenvector cuts failed to reach a PD candidate");
      }
      LearnerRow cut;
      cut.a = -value_coefficients(0.0, evec);
      cut.rhs = -cfg.eps_pd;
      cut.origin = "pd-cut";
      cut.condition = FunnelCondition::kDecrease;
      cut.witness = evec;
      polytope.add(std::move(cut));
    }

    // Falsify cheaply; only a clean sweep pays for the full-budget check.
    FalsifyOptions fo;
    fo.budget = cfg.loop_budget;
    fo.seed = cfg.seed * 10007u + static_cast<uint64_t>(it);
    FalsifierReport falsified = falsify(candidate, sc, inputs, fo);
    if (falsified.clean()) {
      FalsifyOptions full = fo;
      full.budget = cfg.final_budget;
      full.seed = fo.seed ^ 0x5DEECE66DULL;
      falsified = falsify(candidate, sc, inputs, full);
      if (falsified.clean()) {
        Certificate cert;
        cert.scenario = sc.id;
        cert.mode = cfg.mode;
        cert.funnel = candidate;
        cert.inputs = inputs;
        cert.seed = cfg.seed;
        cert.learner_iterations = it;
        cert.verify_budget = cfg.final_budget;
        cert.verified = true;
        report.certificate = cert;
        report.final_report = falsified;
        log.seconds = elapsed(t_iter);
        report.iteration_log.push_back(log);
        return finish(SynthesisOutcome::kFound, it);
      }
    }
    log.violations = static_cast<int>(falsified.counterexamples.size());
    for (const auto& cond : falsified.conditions) {
      log.worst_margin = std::max(log.worst_margin, cond.worst_margin);
    }
    report.final_report = falsified;

    const int take = std::min<int>(cfg.counterexample_rows,
                                   static_cast<int>(falsified.counterexamples.size()));
    for (int k = 0; k < take; ++k) {
      const Counterexample& cx = falsified.counterexamples[k];
      std::optional<Vec3> demo;
      if (cx.condition == FunnelCondition::kDecrease) {
        demo = demonstrate_detail(cx.theta, BodyState::from_vec(cx.b), sc.segment, demo_cfg,
                                  cfg.seed * 92821u + 1000 * it + k)
                   .affine_input;
      }
      if (polytope.add(row_from_counterexample(cx, sc.segment, demo, cfg.thresholds,
                                               cfg.delta))) {
        ++log.rows_added;
      }
    }
    log.seconds = elapsed(t_iter);
    report.iteration_log.push_back(log);
  }
  return finish(SynthesisOutcome::kBudgetExhausted, cfg.max_iterations);
}

}  // namespace funnel
