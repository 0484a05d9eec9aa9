#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "funnel/control.hpp"
#include "funnel/dynamics.hpp"
#include "funnel/parallel.hpp"
#include "funnel/reference.hpp"

namespace funnel {

// ---------------------------------------------------------------------------
// Disturbances injected into closed-loop runs.

struct Disturbance {
  enum class Kind { kNone, kStateImpulse, kInputNoise, kParameterError };
  Kind kind = Kind::kNone;
  double impulse_time = 0.0;           // state impulse: when it strikes
  Vec4 impulse_offset = Vec4::Zero();  // state impulse: added to the state once
  double gamma_noise_std = 0.0;        // input noise: per controller update
  double thrust_noise_std = 0.0;
  uint64_t noise_seed = 0;
  double wheelbase_multiplier = 1.0;   // parameter error: plant vs model

  static Disturbance none() { return {}; }

  static Disturbance state_impulse(double time, const Vec4& offset) {
    Disturbance d;
    d.kind = Kind::kStateImpulse;
    d.impulse_time = time;
    d.impulse_offset = offset;
    return d;
  }

  static Disturbance input_noise(double gamma_std, double thrust_std, uint64_t seed) {
    Disturbance d;
    d.kind = Kind::kInputNoise;
    d.gamma_noise_std = gamma_std;
    d.thrust_noise_std = thrust_std;
    d.noise_seed = seed;
    return d;
  }

  static Disturbance parameter_error(double multiplier) {
    Disturbance d;
    d.kind = Kind::kParameterError;
    d.wheelbase_multiplier = multiplier;
    return d;
  }
};

// ---------------------------------------------------------------------------
// Traces and verdicts.

struct TraceSample {
  double t = 0.0;
  int leg = 0;
  double theta = 0.0;
  Vec4 state = Vec4::Zero();  // inertial (alpha, x, y, v)
  Vec4 body = Vec4::Zero();   // deviation at theta
  ControlInput input;         // applied to the plant over [t, t + dt)
  double value = 0.0;         // funnel value V(theta, body)
  bool in_safe = true;
  bool at_goal = false;       // theta == T and body in the leg's goal set
  double clearance = std::numeric_limits<double>::infinity();  // obstacle runs
};

enum class RunEnd { kGoal, kSafetyViolation, kDivergence, kHorizon };

inline const char* to_string(RunEnd e) {
  switch (e) {
    case RunEnd::kGoal: return "goal";
    case RunEnd::kSafetyViolation: return "safety-violation";
    case RunEnd::kDivergence: return "divergence";
    default: return "horizon";
  }
}

struct TraceRecord {
  std::string scenario_id;
  TimingMode mode = TimingMode::kPathFollowing;
  ExtractionStrategy strategy = ExtractionStrategy::kMinNormQp;
  int legs = 1;
  std::vector<TraceSample> samples;

  RunEnd end = RunEnd::kHorizon;
  bool reached_goal = false;
  double t_star = std::numeric_limits<double>::quiet_NaN();
  bool stayed_safe = true;
  bool diverged = false;
  double min_obstacle_clearance = std::numeric_limits<double>::infinity();
  double max_abs_y_dev = 0.0;
  double max_speed_step = 0.0;     // largest |v_{k+1} - v_k| between samples
  double funnel_containment = 0.0; // fraction of samples with V <= beta
  double beta = 1.0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "funnel-trace/1";
    j["scenario"] = scenario_id;
    j["mode"] = to_string(mode);
    j["strategy"] = to_string(strategy);
    j["legs"] = legs;
    j["samples"] = samples.size();
    j["end"] = to_string(end);
    j["reached_goal"] = reached_goal;
    if (reached_goal) j["t_star"] = t_star;
    j["stayed_safe"] = stayed_safe;
    j["diverged"] = diverged;
    if (std::isfinite(min_obstacle_clearance)) j["min_obstacle_clearance"] = min_obstacle_clearance;
    j["max_abs_y_dev"] = max_abs_y_dev;
    j["max_speed_step"] = max_speed_step;
    j["funnel_containment"] = funnel_containment;
    return j;
  }

  void write_csv(std::ostream& os) const {
    os << "t,leg,theta,alpha,x,y,v,alpha_R,x_R,y_R,v_R,u0,gamma,thrust,value,margin,in_safe,at_goal";
    const bool with_clearance = std::isfinite(min_obstacle_clearance);
    if (with_clearance) os << ",clearance";
    os << "\n";
    for (const auto& s : samples) {
      os << s.t << ',' << s.leg << ',' << s.theta;
      for (int i = 0; i < 4; ++i) os << ',' << s.state[i];
      for (int i = 0; i < 4; ++i) os << ',' << s.body[i];
      os << ',' << s.input.u0 << ',' << s.input.gamma << ',' << s.input.thrust;
      os << ',' << s.value << ',' << (beta - s.value);
      os << ',' << (s.in_safe ? 1 : 0) << ',' << (s.at_goal ? 1 : 0);
      if (with_clearance) os << ',' << s.clearance;
      os << "\n";
    }
  }
};

// Verdicts are pure functions of the stored series; runs populate them with
// this same helper so tests can re-derive and compare field by field.
inline void recompute_verdicts(TraceRecord* trace) {
  trace->reached_goal = false;
  trace->t_star = std::numeric_limits<double>::quiet_NaN();
  trace->stayed_safe = true;
  trace->min_obstacle_clearance = std::numeric_limits<double>::infinity();
  trace->max_abs_y_dev = 0.0;
  trace->max_speed_step = 0.0;
  int contained = 0;
  for (size_t k = 0; k < trace->samples.size(); ++k) {
    const TraceSample& s = trace->samples[k];
    if (!s.in_safe) trace->stayed_safe = false;
    if (s.leg == trace->legs - 1 && s.at_goal && !trace->reached_goal) {
      trace->reached_goal = true;
      trace->t_star = s.t;
    }
    trace->min_obstacle_clearance = std::min(trace->min_obstacle_clearance, s.clearance);
    trace->max_abs_y_dev = std::max(trace->max_abs_y_dev, std::abs(s.body[2]));
    if (k > 0) {
      trace->max_speed_step =
          std::max(trace->max_speed_step, std::abs(s.state[3] - trace->samples[k - 1].state[3]));
    }
    if (s.value <= trace->beta) ++contained;
  }
  trace->funnel_containment =
      trace->samples.empty() ? 0.0 : static_cast<double>(contained) / trace->samples.size();
}

// ---------------------------------------------------------------------------
// Closed-loop runner.

struct SimOptions {
  double dt = 0.01;       // plant integration step
  double dt_ctrl = 0.01;  // controller update period (a multiple of dt)
  double horizon = 60.0;  // wall-clock cap across all legs
};

// One certified funnel driving one scenario segment; runs chain legs when a
// leg reaches its goal (lap wraps, concatenated ovals, longer straights).
struct Leg {
  Certificate cert;
  Scenario scenario;
};

// Copy of the segment shifted in the plane (the deviation dynamics are
// translation-invariant, so a certificate carries over to the shifted copy).
inline ReferenceSegment translate_segment(const ReferenceSegment& seg, double dx, double dy) {
  ReferenceSegment out = seg;
  const auto base = seg.state_fn;
  out.state_fn = [base, dx, dy](double th) {
    Vec4 s = base(th);
    s[1] += dx;
    s[2] += dy;
    return s;
  };
  return out;
}

inline TraceRecord run_legs(const std::vector<Leg>& legs, const InertialState& x0,
                            const Disturbance& dist = Disturbance::none(),
                            const SimOptions& opts = {},
                            const ControllerOptions& ctrl_opts = {}) {
  TraceRecord out;
  out.legs = static_cast<int>(legs.size());
  out.scenario_id = legs.front().scenario.id;
  for (size_t li = 1; li < legs.size(); ++li) out.scenario_id += "+" + legs[li].scenario.id;
  out.mode = legs.front().cert.mode;
  out.strategy = ctrl_opts.strategy;
  out.beta = legs.front().cert.funnel.thresholds.beta;

  std::mt19937_64 noise_rng(dist.noise_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int ctrl_every = std::max(1, static_cast<int>(std::llround(opts.dt_ctrl / opts.dt)));

  InertialState s = x0;
  double t = 0.0;
  bool impulse_pending = dist.kind == Disturbance::Kind::kStateImpulse;
  long k = 0;

  for (size_t li = 0; li < legs.size(); ++li) {
    const Leg& leg = legs[li];
    const ReferenceSegment& seg = leg.scenario.segment;
    const double plant_wheelbase = leg.cert.inputs.wheelbase * dist.wheelbase_multiplier;

    // Headings are angles: re-express the state in the branch of the new
    // leg's starting heading so lap wraps do not look like 2*pi deviations.
    s.alpha -= 2.0 * kPi * std::round((s.alpha - seg.state_fn(0.0)[0]) / (2.0 * kPi));

    Controller ctrl(leg.cert, seg, ctrl_opts);
    ControlInput held;
    bool leg_done = false;

    while (!leg_done) {
      if (t > opts.horizon + 1e-12) {
        out.end = RunEnd::kHorizon;
        recompute_verdicts(&out);
        return out;
      }
      if (impulse_pending && t + 1e-12 >= dist.impulse_time) {
        s = InertialState::from_vec(s.vec() + dist.impulse_offset);
        impulse_pending = false;
      }

      TraceSample sample;
      sample.t = t;
      sample.leg = static_cast<int>(li);
      if (k % ctrl_every == 0) {
        const ControlStep step = ctrl.step(s, opts.dt_ctrl);
        held = step.input;
        if (dist.kind == Disturbance::Kind::kInputNoise) {
          held.gamma = std::clamp(held.gamma + dist.gamma_noise_std * gauss(noise_rng),
                                  leg.cert.inputs.gamma_min, leg.cert.inputs.gamma_max);
          held.thrust = std::clamp(held.thrust + dist.thrust_noise_std * gauss(noise_rng),
                                   leg.cert.inputs.thrust_min, leg.cert.inputs.thrust_max);
        }
        sample.theta = step.theta;
        sample.body = step.body;
        sample.value = step.value;
      } else {
        sample.theta = ctrl.theta();
        sample.body = to_body(s, seg, sample.theta).vec();
        sample.value = leg.cert.funnel.value(sample.theta, sample.body);
      }
      sample.state = s.vec();
      sample.input = held;
      sample.in_safe = region_contains(leg.scenario.regions.safe(sample.theta), sample.body);
      sample.at_goal = sample.theta >= seg.T &&
                       region_contains(leg.scenario.regions.goal, sample.body);
      if (leg.scenario.obstacle) {
        sample.clearance =
            polygon_signed_distance(Vec2(s.x, s.y), leg.scenario.obstacle->polygon) -
            leg.scenario.obstacle->inflation;
      }
      out.samples.push_back(sample);

      if (!sample.in_safe) {
        out.end = RunEnd::kSafetyViolation;
        recompute_verdicts(&out);
        return out;
      }
      if (sample.at_goal) {
        if (li + 1 == legs.size()) {
          out.end = RunEnd::kGoal;
          recompute_verdicts(&out);
          return out;
        }
        leg_done = true;  // hand the state to the next leg
        continue;
      }

      const auto piece = integrate(
          s, [&](double) { return held; }, opts.dt, opts.dt, plant_wheelbase);
      if (piece.diverged || piece.states.size() < 2) {
        out.diverged = true;
        out.end = RunEnd::kDivergence;
        recompute_verdicts(&out);
        return out;
      }
      s = piece.states.back();
      t += opts.dt;
      ++k;
    }
  }
  out.end = RunEnd::kHorizon;  // unreachable: legs loop exits via returns
  recompute_verdicts(&out);
  return out;
}

inline TraceRecord run_closed_loop(const Certificate& cert, const Scenario& scenario,
                                   const InertialState& x0,
                                   const Disturbance& dist = Disturbance::none(),
                                   const SimOptions& opts = {},
                                   const ControllerOptions& ctrl_opts = {}) {
  return run_legs({Leg{cert, scenario}}, x0, dist, opts, ctrl_opts);
}

// ---------------------------------------------------------------------------
// Batches.

struct BatchOptions {
  int runs = 100;
  uint64_t seed = 0;
  Disturbance disturbance;  // input-noise seeds are re-derived per run
  SimOptions sim;
  ControllerOptions controller;
};

struct BatchSummary {
  int runs = 0;
  int reached = 0;
  int safe = 0;
  double t_star_min = std::numeric_limits<double>::infinity();
  double t_star_max = -std::numeric_limits<double>::infinity();
  double t_star_mean = 0.0;
  double max_abs_y_dev = 0.0;
  double min_clearance = std::numeric_limits<double>::infinity();

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["runs"] = runs;
    j["reached"] = reached;
    j["safe"] = safe;
    if (reached > 0) {
      j["t_star"] = {{"min", t_star_min}, {"max", t_star_max}, {"mean", t_star_mean}};
    }
    j["max_abs_y_dev"] = max_abs_y_dev;
    if (std::isfinite(min_clearance)) j["min_clearance"] = min_clearance;
    return j;
  }
};

struct BatchResult {
  std::vector<TraceRecord> traces;
  BatchSummary summary;
};

// Uniform initial states from the scenario's initial set at theta = 0.
inline std::function<InertialState(std::mt19937_64&)> initial_state_sampler(
    const Scenario& scenario) {
  return [&scenario](std::mt19937_64& rng) {
    const Vec4 b = region_interior_sample(scenario.regions.initial, rng);
    return to_inertial(BodyState::from_vec(b), scenario.segment, 0.0);
  };
}

inline BatchResult batch_experiment(const std::vector<Leg>& legs,
                                    const std::function<InertialState(std::mt19937_64&)>& sampler,
                                    const BatchOptions& opts) {
  BatchResult out;
  out.traces.resize(opts.runs);
  // Each run derives its own seeds and writes its own slot, so sharding the
  // batch across workers cannot change the result.
  parallel_for(opts.runs, [&](int run) {
    std::mt19937_64 rng(opts.seed * 0x9e3779b97f4a7c15ULL + run);
    const InertialState x0 = sampler(rng);
    Disturbance dist = opts.disturbance;
    if (dist.kind == Disturbance::Kind::kInputNoise) {
      dist.noise_seed = opts.seed ^ (0xD15EA5EULL + 7919ULL * run);
    }
    out.traces[run] = run_legs(legs, x0, dist, opts.sim, opts.controller);
  });

  BatchSummary& sum = out.summary;
  sum.runs = opts.runs;
  double t_total = 0.0;
  for (const auto& tr : out.traces) {
    if (tr.reached_goal) {
      ++sum.reached;
      sum.t_star_min = std::min(sum.t_star_min, tr.t_star);
      sum.t_star_max = std::max(sum.t_star_max, tr.t_star);
      t_total += tr.t_star;
    }
    if (tr.stayed_safe) ++sum.safe;
    sum.max_abs_y_dev = std::max(sum.max_abs_y_dev, tr.max_abs_y_dev);
    sum.min_clearance = std::min(sum.min_clearance, tr.min_obstacle_clearance);
  }
  if (sum.reached > 0) sum.t_star_mean = t_total / sum.reached;
  return out;
}

}  // namespace funnel
