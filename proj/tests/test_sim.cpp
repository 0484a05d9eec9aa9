#include "funnel/sim.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "funnel/learn.hpp"

namespace funnel {
namespace {

// A certificate for the 4 m straight found by the synthesizer and verified
// falsification-clean (same fixture as the controller tests).
Certificate straight4_certificate(TimingMode mode = TimingMode::kPathFollowing) {
  Certificate cert;
  cert.scenario = "straight-4m";
  cert.mode = mode;
  cert.funnel.C = Mat4::Identity() * 3.63;
  cert.funnel.C(0, 1) = cert.funnel.C(1, 0) = -0.351;
  cert.funnel.c0 = 0.114;
  cert.inputs = input_box_for_mode(InputPolytope::defaults(), mode);
  cert.verified = true;
  return cert;
}

Certificate must_synthesize(const std::string& id, TimingMode mode) {
  SynthesisConfig cfg;
  cfg.mode = mode;
  cfg.seed = 1;
  const SynthesisReport rep = synthesize(make_scenario(id), cfg);
  if (rep.outcome != SynthesisOutcome::kFound) {
    throw std::runtime_error("synthesis failed for fixture " + id);
  }
  return *rep.certificate;
}

// Synthesis is deterministic, so each fixture is built once per binary.
const Certificate& pf8() {
  static const Certificate c = must_synthesize("straight-8m", TimingMode::kPathFollowing);
  return c;
}
const Certificate& tt8() {
  static const Certificate c = must_synthesize("straight-8m", TimingMode::kTimeTracking);
  return c;
}
const Certificate& pf4() {
  static const Certificate c = must_synthesize("straight-4m", TimingMode::kPathFollowing);
  return c;
}

InertialState body_start(const Scenario& s, const Vec4& b0) {
  return to_inertial(BodyState::from_vec(b0), s.segment, 0.0);
}

TEST(Verdicts, RecomputeRederivesEveryStoredVerdictFromTheSamples) {
  const Scenario s4 = make_scenario("straight-4m");
  const Certificate cert = straight4_certificate();
  const TraceRecord run = run_closed_loop(cert, s4, body_start(s4, Vec4(0, 0.2, -0.2, 0)));
  ASSERT_EQ(run.end, RunEnd::kGoal);

  TraceRecord scrubbed = run;
  scrubbed.reached_goal = false;
  scrubbed.t_star = -1.0;
  scrubbed.stayed_safe = false;
  scrubbed.max_abs_y_dev = 99.0;
  scrubbed.max_speed_step = 99.0;
  scrubbed.funnel_containment = -1.0;
  scrubbed.min_obstacle_clearance = -1.0;
  recompute_verdicts(&scrubbed);

  EXPECT_EQ(scrubbed.reached_goal, run.reached_goal);
  EXPECT_EQ(scrubbed.t_star, run.t_star);
  EXPECT_EQ(scrubbed.stayed_safe, run.stayed_safe);
  EXPECT_EQ(scrubbed.max_abs_y_dev, run.max_abs_y_dev);
  EXPECT_EQ(scrubbed.max_speed_step, run.max_speed_step);
  EXPECT_EQ(scrubbed.funnel_containment, run.funnel_containment);
  EXPECT_EQ(scrubbed.min_obstacle_clearance, run.min_obstacle_clearance);

  // Independent derivations of the aggregates from the raw series.
  double max_dv = 0.0, max_y = 0.0;
  int contained = 0;
  for (size_t k = 0; k < run.samples.size(); ++k) {
    if (k > 0) {
      max_dv = std::max(max_dv, std::abs(run.samples[k].state[3] - run.samples[k - 1].state[3]));
    }
    max_y = std::max(max_y, std::abs(run.samples[k].body[2]));
    contained += run.samples[k].value <= run.beta;
  }
  EXPECT_DOUBLE_EQ(run.max_speed_step, max_dv);
  EXPECT_DOUBLE_EQ(run.max_abs_y_dev, max_y);
  EXPECT_DOUBLE_EQ(run.funnel_containment,
                   static_cast<double>(contained) / run.samples.size());
  const auto first_goal = std::find_if(run.samples.begin(), run.samples.end(),
                                       [](const TraceSample& s) { return s.at_goal; });
  ASSERT_NE(first_goal, run.samples.end());
  EXPECT_DOUBLE_EQ(run.t_star, first_goal->t);
  EXPECT_FALSE(std::isfinite(run.min_obstacle_clearance));  // no obstacle in this scenario
}

TEST(Verdicts, GoalCountsOnlyOnTheFinalLeg) {
  TraceRecord trace;
  trace.legs = 2;
  trace.beta = 1.0;
  TraceSample a;
  a.t = 1.0;
  a.leg = 0;
  a.at_goal = true;  // intermediate leg hand-off, not the mission goal
  TraceSample b;
  b.t = 3.5;
  b.leg = 1;
  trace.samples = {a, b};
  recompute_verdicts(&trace);
  EXPECT_FALSE(trace.reached_goal);
  EXPECT_TRUE(std::isnan(trace.t_star));
  EXPECT_TRUE(trace.stayed_safe);

  trace.samples[1].at_goal = true;
  recompute_verdicts(&trace);
  EXPECT_TRUE(trace.reached_goal);
  EXPECT_DOUBLE_EQ(trace.t_star, 3.5);

  trace.samples[0].in_safe = false;
  recompute_verdicts(&trace);
  EXPECT_FALSE(trace.stayed_safe);
}

TEST(ClosedLoop, ReferenceStartReachesTheGoalInsideTheFunnel) {
  const Scenario s4 = make_scenario("straight-4m");
  const Certificate cert = straight4_certificate();
  const TraceRecord run = run_closed_loop(cert, s4, s4.segment.state_at(0.0));
  EXPECT_EQ(run.end, RunEnd::kGoal);
  EXPECT_TRUE(run.reached_goal);
  EXPECT_TRUE(run.stayed_safe);
  // Traversal time bounded by the timing box: theta advances at rate in
  // [u0_min, u0_max] = [0.2, 2], so t* for T = 2 lies in [1, 10].
  EXPECT_GE(run.t_star, 1.0);
  EXPECT_LE(run.t_star, 10.0);
  EXPECT_DOUBLE_EQ(run.funnel_containment, 1.0);
  EXPECT_LT(run.max_abs_y_dev, 0.05);  // nothing perturbs a reference start
}

TEST(ClosedLoop, StartOutsideTheSafeSetTerminatesImmediately) {
  const Scenario s4 = make_scenario("straight-4m");
  const Certificate cert = straight4_certificate();
  const TraceRecord run = run_closed_loop(cert, s4, body_start(s4, Vec4(0, 1.5, 0, 0)));
  EXPECT_EQ(run.end, RunEnd::kSafetyViolation);
  EXPECT_EQ(run.samples.size(), 1u);
  EXPECT_FALSE(run.stayed_safe);
  EXPECT_FALSE(run.reached_goal);
}

TEST(ClosedLoop, HorizonCapsARunBeforeItFinishes) {
  const Scenario s4 = make_scenario("straight-4m");
  const Certificate cert = straight4_certificate();
  SimOptions opts;
  opts.horizon = 0.5;  // well short of the ~2 s traversal
  const TraceRecord run = run_closed_loop(cert, s4, s4.segment.state_at(0.0),
                                          Disturbance::none(), opts);
  EXPECT_EQ(run.end, RunEnd::kHorizon);
  EXPECT_FALSE(run.reached_goal);
  EXPECT_TRUE(run.stayed_safe);
  EXPECT_EQ(run.samples.size(), 51u);  // samples at t = 0, 0.01, ..., 0.5
}

// Matched starts that are behind schedule (negative along-track and speed
// deviation): following the path lets the timing absorb the error, so those
// runs take longer but change speed less than runs that track the clock.
TEST(ClosedLoop, TimingModesSplitOnMatchedBehindScheduleStarts) {
  const Scenario s8 = make_scenario("straight-8m");
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Vec4> starts = {Vec4(0, 0, -0.45, 0), Vec4(0, 0, -0.30, 0), Vec4(0, 0, 0, -0.40)};
  for (int k = 0; k < 20; ++k) {
    // Shallow speed deficits (v_R > -0.2) can make both modes saturate the
    // thrust for one step, tying the speed-step metric; stay clear of that.
    Vec4 b0;
    b0[0] = -0.1 + 0.2 * uni(rng);
    b0[1] = -0.1 + 0.2 * uni(rng);
    b0[2] = -0.45 + 0.15 * uni(rng);
    b0[3] = -0.40 + 0.20 * uni(rng);
    starts.push_back(b0);
  }
  for (const Vec4& b0 : starts) {
    const InertialState x0 = body_start(s8, b0);
    const TraceRecord rpf = run_closed_loop(pf8(), s8, x0);
    const TraceRecord rtt = run_closed_loop(tt8(), s8, x0);
    ASSERT_TRUE(rpf.reached_goal && rpf.stayed_safe) << "b0 " << b0.transpose();
    ASSERT_TRUE(rtt.reached_goal && rtt.stayed_safe) << "b0 " << b0.transpose();
    EXPECT_GT(rpf.t_star, rtt.t_star) << "b0 " << b0.transpose();
    EXPECT_LT(rpf.max_speed_step, rtt.max_speed_step) << "b0 " << b0.transpose();
  }
}

TEST(ClosedLoop, LapWrapKeepsHeadingDeviationSmallAcrossTwoCircuits) {
  const Scenario circ = make_scenario("circular");
  const Certificate cert = must_synthesize("circular", TimingMode::kPathFollowing);
  const std::vector<Leg> legs{{cert, circ}, {cert, circ}};
  const TraceRecord run = run_legs(legs, circ.segment.state_at(0.0));
  EXPECT_EQ(run.end, RunEnd::kGoal);
  EXPECT_TRUE(run.stayed_safe);
  EXPECT_GE(run.t_star, 2.0 * circ.segment.T * 0.9);
  EXPECT_LE(run.t_star, 2.0 * circ.segment.T * 1.2);
  // The heading grows by 2*pi per lap; rebranching at the leg hand-off keeps
  // the recorded deviation small instead of jumping by a full turn.
  double max_heading_dev = 0.0;
  int max_leg = 0;
  for (const TraceSample& s : run.samples) {
    max_heading_dev = std::max(max_heading_dev, std::abs(s.body[0]));
    max_leg = std::max(max_leg, s.leg);
  }
  EXPECT_EQ(max_leg, 1);
  EXPECT_LT(max_heading_dev, 0.3);
}

TEST(ClosedLoop, TranslatedSegmentsChainIntoALongerPath) {
  const Scenario s8 = make_scenario("straight-8m");
  Scenario s4_shifted = make_scenario("straight-4m");
  s4_shifted.segment = translate_segment(s4_shifted.segment, 6.0, 0.0);

  // The shifted copy picks up exactly where the 8 m segment ends (x = 4).
  for (double th : {0.0, 0.7, 2.0}) {
    const Vec4 base = make_scenario("straight-4m").segment.state_fn(th);
    const Vec4 shifted = s4_shifted.segment.state_fn(th);
    EXPECT_DOUBLE_EQ(shifted[1], base[1] + 6.0);
    EXPECT_DOUBLE_EQ(shifted[2], base[2]);
    EXPECT_DOUBLE_EQ(shifted[0], base[0]);
    EXPECT_DOUBLE_EQ(shifted[3], base[3]);
  }

  const std::vector<Leg> legs{{pf8(), s8}, {pf4(), s4_shifted}};
  const TraceRecord run = run_legs(legs, body_start(s8, Vec4(0, 0, -0.1, 0)));
  EXPECT_EQ(run.end, RunEnd::kGoal);
  EXPECT_TRUE(run.stayed_safe);
  EXPECT_EQ(run.scenario_id, "straight-8m+straight-4m");
  // 12 m at a 2 m/s reference: about 6 s, allow moderate timing slack.
  EXPECT_GE(run.t_star, 5.1);
  EXPECT_LE(run.t_star, 6.9);
  EXPECT_NEAR(run.samples.back().state[1], 8.0, 0.2);
  for (size_t k = 1; k < run.samples.size(); ++k) {
    EXPECT_LE(run.samples[k - 1].leg, run.samples[k].leg);  // legs never rewind
  }
}

TEST(Disturbances, StateImpulseIsAbsorbedWithoutLeavingTheFunnel) {
  const Scenario s4 = make_scenario("straight-4m");
  // Bump the inertial x; on this segment that is the along-track direction.
  const Disturbance impulse = Disturbance::state_impulse(0.8, Vec4(0, 0.25, 0, 0));
  const TraceRecord run = run_closed_loop(pf4(), s4, s4.segment.state_at(0.0), impulse);
  EXPECT_EQ(run.end, RunEnd::kGoal);
  EXPECT_TRUE(run.stayed_safe);
  EXPECT_DOUBLE_EQ(run.funnel_containment, 1.0);
  EXPECT_NEAR(run.max_abs_y_dev, 0.25, 0.02);  // the jump itself, then decay
  // The bump lands ahead of schedule, so the timing speeds up to catch the
  // reference and the run finishes in under the nominal duration, with the
  // residual deviation still decaying inside the goal set.
  EXPECT_LT(run.t_star, s4.segment.T);
  EXPECT_LT(std::abs(run.samples.back().body[2]), 0.2);
}

TEST(Disturbances, InputNoiseIsDeterministicPerSeedAndRespectsTheInputBox) {
  const Scenario s4 = make_scenario("straight-4m");
  const Certificate cert = straight4_certificate();
  const Disturbance noisy = Disturbance::input_noise(0.05, 0.5, 99);
  const TraceRecord a = run_closed_loop(cert, s4, s4.segment.state_at(0.0), noisy);
  const TraceRecord b = run_closed_loop(cert, s4, s4.segment.state_at(0.0), noisy);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (size_t k = 0; k < a.samples.size(); ++k) {
    EXPECT_EQ(a.samples[k].state, b.samples[k].state);
    EXPECT_EQ(a.samples[k].input.gamma, b.samples[k].input.gamma);
    EXPECT_EQ(a.samples[k].input.thrust, b.samples[k].input.thrust);
  }
  for (const TraceSample& s : a.samples) {
    EXPECT_GE(s.input.gamma, cert.inputs.gamma_min);
    EXPECT_LE(s.input.gamma, cert.inputs.gamma_max);
    EXPECT_GE(s.input.thrust, cert.inputs.thrust_min);
    EXPECT_LE(s.input.thrust, cert.inputs.thrust_max);
  }
  EXPECT_TRUE(a.reached_goal);
  EXPECT_TRUE(a.stayed_safe);

  const TraceRecord c =
      run_closed_loop(cert, s4, s4.segment.state_at(0.0), Disturbance::input_noise(0.05, 0.5, 100));
  bool differs = c.samples.size() != a.samples.size();
  for (size_t k = 0; !differs && k < a.samples.size(); ++k) {
    differs = a.samples[k].input.thrust != c.samples[k].input.thrust;
  }
  EXPECT_TRUE(differs);  // a fresh seed draws a fresh noise path
}

TEST(Disturbances, WheelbaseErrorUpToThirtyPercentStillConverges) {
  const Scenario s4 = make_scenario("straight-4m");
  const InertialState x0 = body_start(s4, Vec4(0, 0.3, 0, 0));
  for (double mult : {0.85, 1.15, 1.30}) {
    const TraceRecord run = run_closed_loop(pf4(), s4, x0, Disturbance::parameter_error(mult));
    EXPECT_EQ(run.end, RunEnd::kGoal) << "wheelbase multiplier " << mult;
    EXPECT_TRUE(run.stayed_safe) << "wheelbase multiplier " << mult;
    EXPECT_DOUBLE_EQ(run.funnel_containment, 1.0) << "wheelbase multiplier " << mult;
  }
}

TEST(Batches, SummaryAggregatesMatchTheIndividualTraces) {
  const Scenario s4 = make_scenario("straight-4m");
  const std::vector<Leg> legs{{straight4_certificate(), s4}};
  BatchOptions opts;
  opts.runs = 25;
  opts.seed = 11;
  const BatchResult batch = batch_experiment(legs, initial_state_sampler(s4), opts);

  ASSERT_EQ(batch.traces.size(), 25u);
  EXPECT_EQ(batch.summary.runs, 25);
  EXPECT_EQ(batch.summary.reached, 25);
  EXPECT_EQ(batch.summary.safe, 25);

  double lo = std::numeric_limits<double>::infinity(), hi = -lo, total = 0.0, max_y = 0.0;
  for (const TraceRecord& tr : batch.traces) {
    ASSERT_TRUE(tr.reached_goal);
    EXPECT_GE(tr.t_star, 1.0);
    EXPECT_LE(tr.t_star, 10.0);
    lo = std::min(lo, tr.t_star);
    hi = std::max(hi, tr.t_star);
    total += tr.t_star;
    max_y = std::max(max_y, tr.max_abs_y_dev);
  }
  EXPECT_DOUBLE_EQ(batch.summary.t_star_min, lo);
  EXPECT_DOUBLE_EQ(batch.summary.t_star_max, hi);
  EXPECT_DOUBLE_EQ(batch.summary.t_star_mean, total / 25.0);
  EXPECT_DOUBLE_EQ(batch.summary.max_abs_y_dev, max_y);

  const BatchResult again = batch_experiment(legs, initial_state_sampler(s4), opts);
  EXPECT_EQ(batch.summary.to_json().dump(), again.summary.to_json().dump());
}

TEST(Batches, InputNoiseSeedsAreRederivedPerRun) {
  const Scenario s4 = make_scenario("straight-4m");
  const std::vector<Leg> legs{{straight4_certificate(), s4}};
  BatchOptions opts;
  opts.runs = 3;
  opts.seed = 5;
  opts.disturbance = Disturbance::input_noise(0.03, 0.3, 0);
  const BatchResult batch = batch_experiment(legs, initial_state_sampler(s4), opts);
  const BatchResult again = batch_experiment(legs, initial_state_sampler(s4), opts);
  for (int run = 0; run < 3; ++run) {
    ASSERT_EQ(batch.traces[run].samples.size(), again.traces[run].samples.size());
    for (size_t k = 0; k < batch.traces[run].samples.size(); ++k) {
      EXPECT_EQ(batch.traces[run].samples[k].state, again.traces[run].samples[k].state);
    }
  }
  // Distinct runs see distinct noise paths even from identical start states.
  bool inputs_differ = false;
  const size_t shared = std::min(batch.traces[0].samples.size(), batch.traces[1].samples.size());
  for (size_t k = 0; !inputs_differ && k < shared; ++k) {
    inputs_differ = batch.traces[0].samples[k].input.thrust !=
                    batch.traces[1].samples[k].input.thrust;
  }
  EXPECT_TRUE(inputs_differ);
}

TEST(Export, CsvHasOneRowPerSampleAndAddsClearanceOnlyForObstacleRuns) {
  const Scenario s4 = make_scenario("straight-4m");
  const TraceRecord run = run_closed_loop(straight4_certificate(), s4, s4.segment.state_at(0.0));
  std::ostringstream csv;
  run.write_csv(csv);
  std::istringstream lines(csv.str());
  std::string line;
  size_t rows = 0;
  while (std::getline(lines, line)) {
    if (rows == 0) {
      EXPECT_EQ(line,
                "t,leg,theta,alpha,x,y,v,alpha_R,x_R,y_R,v_R,u0,gamma,thrust,value,margin,"
                "in_safe,at_goal");
    } else {
      EXPECT_EQ(std::count(line.begin(), line.end(), ','), 17);
    }
    ++rows;
  }
  EXPECT_EQ(rows, run.samples.size() + 1);

  TraceRecord obstacle_run;
  obstacle_run.samples.resize(2);
  obstacle_run.samples[0].clearance = 0.5;
  obstacle_run.samples[1].clearance = 0.3;
  recompute_verdicts(&obstacle_run);
  EXPECT_DOUBLE_EQ(obstacle_run.min_obstacle_clearance, 0.3);
  std::ostringstream obs_csv;
  obstacle_run.write_csv(obs_csv);
  std::istringstream obs_lines(obs_csv.str());
  ASSERT_TRUE(std::getline(obs_lines, line));
  EXPECT_EQ(line.substr(line.size() - 10), ",clearance");
  ASSERT_TRUE(std::getline(obs_lines, line));
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 18);
}

TEST(Export, TraceJsonReportsOutcomeFieldsConditionally) {
  const Scenario s4 = make_scenario("straight-4m");
  const Certificate cert = straight4_certificate();
  const TraceRecord goal_run = run_closed_loop(cert, s4, s4.segment.state_at(0.0));
  const nlohmann::json j = goal_run.to_json();
  EXPECT_EQ(j.at("format"), "funnel-trace/1");
  EXPECT_EQ(j.at("mode"), "pf");
  EXPECT_EQ(j.at("strategy"), "min-norm-qp");
  EXPECT_EQ(j.at("end"), "goal");
  EXPECT_EQ(j.at("samples").get<size_t>(), goal_run.samples.size());
  EXPECT_TRUE(j.contains("t_star"));
  EXPECT_FALSE(j.contains("min_obstacle_clearance"));  // straight has no obstacle

  SimOptions opts;
  opts.horizon = 0.5;
  const TraceRecord capped =
      run_closed_loop(cert, s4, s4.segment.state_at(0.0), Disturbance::none(), opts);
  const nlohmann::json jc = capped.to_json();
  EXPECT_EQ(jc.at("end"), "horizon");
  EXPECT_FALSE(jc.contains("t_star"));  // only reported when the goal is reached
}

}  // namespace
}  // namespace funnel
