#pragma once
// Sampling-based falsifier for funnel conditions. Each condition contributes
// a task that maps low-discrepancy points of the unit cube onto its domain
// and scores a violation margin (>= 0 means the condition fails there). The
// worst candidates are polished by coordinate ascent in cube space, which
// keeps the whole procedure deterministic for a fixed seed.
//
// Conditions on a candidate V(theta, b) = b'Cb + c0 theta over a segment:
//   initial   x in I                 : V(0, x) < beta
//   goal      x not in int G         : V(T, x) > beta
//   safe      x not in int S(theta)  : V(theta, x) > beta
//   decrease  x in S, V in band      : some admissible input gives
//                                      dV/dt < -lambda

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "funnel/funnel_function.hpp"
#include "funnel/parallel.hpp"
#include "funnel/sobol.hpp"

namespace funnel {

enum class FunnelCondition : int { kInitial = 0, kGoal = 1, kSafe = 2, kDecrease = 3 };

inline const char* to_string(FunnelCondition c) {
  switch (c) {
    case FunnelCondition::kInitial: return "initial";
    case FunnelCondition::kGoal: return "goal";
    case FunnelCondition::kSafe: return "safe";
    default: return "decrease";
  }
}

struct Counterexample {
  FunnelCondition condition = FunnelCondition::kInitial;
  double theta = 0.0;
  Vec4 b = Vec4::Zero();
  double margin = 0.0;          // violation magnitude (>= 0 is a violation)
  Vec3 input = Vec3::Zero();    // decrease condition: the worst-case input
};

struct ConditionReport {
  long drawn = 0;
  long accepted = 0;
  double worst_margin = -std::numeric_limits<double>::infinity();
  bool vacuous = false;  // domain sampling acceptance fell below threshold
};

struct FalsifierReport {
  std::vector<Counterexample> counterexamples;  // violations only, worst first
  std::array<ConditionReport, 4> conditions;
  long total_samples = 0;

  bool clean() const { return counterexamples.empty(); }
};

struct FalsifyOptions {
  long budget = 100000;   // total cube draws across all conditions
  uint64_t seed = 0;
  int top_k = 8;          // candidates refined per condition
  int refine_steps = 50;
  std::array<double, 4> shares{0.2, 0.2, 0.2, 0.4};
  double vacuous_acceptance = 1e-4;
};

// One falsification task: maps a unit-cube point onto a candidate violation.
// Returns nullopt when the point falls outside the condition's domain.
struct ConditionTask {
  FunnelCondition condition;
  int dims = 4;
  std::function<std::optional<Counterexample>(const double*)> eval;
};

// ---------------------------------------------------------------------------
// Generic kernel.

inline FalsifierReport falsify_tasks(const std::vector<ConditionTask>& tasks,
                                     const FalsifyOptions& options) {
  FalsifierReport report;
  std::vector<Counterexample> harvest;

  for (size_t ti = 0; ti < tasks.size(); ++ti) {
    const ConditionTask& task = tasks[ti];
    const int ci = static_cast<int>(task.condition);
    ConditionReport& cond = report.conditions[ci];
    const long budget = std::max<long>(1, std::lround(options.budget * options.shares[ci]));

    // Draw the whole block up front (the generator is sequential), then
    // evaluate into index-addressed slots so results are thread-invariant.
    SobolSequence sobol(task.dims, options.seed * 0x9e3779b9u + 101 * ci + 7);
    std::vector<double> cube(static_cast<size_t>(budget) * task.dims);
    for (long i = 0; i < budget; ++i) sobol.next(&cube[i * task.dims]);

    std::vector<std::optional<Counterexample>> evals(budget);
    parallel_for(static_cast<int>(budget), [&](int i) {
      evals[i] = task.eval(&cube[static_cast<size_t>(i) * task.dims]);
    });

    cond.drawn += budget;
    report.total_samples += budget;

    std::vector<int> order;  // indices of the top candidates, worst first
    for (long i = 0; i < budget; ++i) {
      if (!evals[i]) continue;
      ++cond.accepted;
      cond.worst_margin = std::max(cond.worst_margin, evals[i]->margin);
      order.push_back(static_cast<int>(i));
    }
    std::partial_sort(order.begin(),
                      order.begin() + std::min<size_t>(options.top_k, order.size()), order.end(),
                      [&](int lhs, int rhs) {
                        if (evals[lhs]->margin != evals[rhs]->margin) {
                          return evals[lhs]->margin > evals[rhs]->margin;
                        }
                        return lhs < rhs;
                      });
    if (order.size() > static_cast<size_t>(options.top_k)) order.resize(options.top_k);

    if (cond.accepted < std::max<long>(1, std::lround(budget * options.vacuous_acceptance))) {
      cond.vacuous = true;
    }

    // Coordinate ascent on the margin in cube coordinates.
    for (int idx : order) {
      std::vector<double> u(cube.begin() + static_cast<size_t>(idx) * task.dims,
                            cube.begin() + static_cast<size_t>(idx + 1) * task.dims);
      Counterexample best = *evals[idx];
      double step = 0.12;
      for (int it = 0; it < options.refine_steps; ++it) {
        bool improved = false;
        for (int d = 0; d < task.dims; ++d) {
          for (const double sign : {+1.0, -1.0}) {
            const double saved = u[d];
            u[d] = std::clamp(saved + sign * step, 0.0, 1.0 - 1e-12);
            const auto trial = task.eval(u.data());
            if (trial && trial->margin > best.margin) {
              best = *trial;
              improved = true;
            } else {
              u[d] = saved;
            }
          }
        }
        if (!improved) step *= 0.6;
        if (step < 1e-7) break;
      }
      cond.worst_margin = std::max(cond.worst_margin, best.margin);
      if (best.margin >= 0.0) harvest.push_back(best);
    }
  }

  std::sort(harvest.begin(), harvest.end(), [](const Counterexample& x, const Counterexample& y) {
    return x.margin > y.margin;
  });
  report.counterexamples = std::move(harvest);
  return report;
}

// ---------------------------------------------------------------------------
// Funnel tasks for a scenario.

namespace detail {

// Scales z away from the region's natural center; used to probe shells
// around the goal set and outside the safe box.
inline Vec4 scale_about_center(const Region& region, const Vec4& z, double s) {
  if (const auto* ball = std::get_if<BallRegion>(&region)) {
    return ball->center + s * (z - ball->center);
  }
  if (std::get_if<EllipsoidRegion>(&region)) {
    return s * z;
  }
  const Box4 bb = region_bounding_box(region);
  const Vec4 center = 0.5 * (bb.lo + bb.hi);
  return center + s * (z - center);
}

}  // namespace detail

inline std::vector<ConditionTask> funnel_falsify_tasks(const FunnelCandidate& f,
                                                       const Scenario& scenario,
                                                       const InputPolytope& inputs) {
  const ReferenceSegment& seg = scenario.segment;
  const double T = seg.T;
  const double beta = f.thresholds.beta;
  const double beta_lower = f.thresholds.beta_lower;
  const double lambda = f.thresholds.lambda;

  std::vector<ConditionTask> tasks;

  // --- initial: V(0, x) < beta on I (boundary-biased, plus interior) ---
  {
    ConditionTask task;
    task.condition = FunnelCondition::kInitial;
    task.dims = 5;
    const Region I = scenario.regions.initial;
    const Box4 bb = region_bounding_box(I);
    task.eval = [f, I, bb, beta](const double* u) -> std::optional<Counterexample> {
      Vec4 x;
      if (u[4] < 0.7) {
        const auto z = region_boundary_point(I, {u[0], u[1], u[2], u[3]});
        if (!z) return std::nullopt;
        x = *z;
      } else {
        for (int k = 0; k < 4; ++k) x[k] = bb.lo[k] + u[k] * (bb.hi[k] - bb.lo[k]);
        if (!region_contains(I, x)) return std::nullopt;
      }
      Counterexample ce;
      ce.condition = FunnelCondition::kInitial;
      ce.theta = 0.0;
      ce.b = x;
      ce.margin = f.value(0.0, x) - beta;
      return ce;
    };
    tasks.push_back(std::move(task));
  }

  // --- goal: V(T, x) > beta outside int G (boundary shell) ---
  {
    ConditionTask task;
    task.condition = FunnelCondition::kGoal;
    task.dims = 5;
    const Region G = scenario.regions.goal;
    task.eval = [f, G, T, beta](const double* u) -> std::optional<Counterexample> {
      const auto z = region_boundary_point(G, {u[0], u[1], u[2], u[3]});
      if (!z) return std::nullopt;
      const double s = 1.0 + 0.6 * u[4];
      const Vec4 x = detail::scale_about_center(G, *z, s);
      Counterexample ce;
      ce.condition = FunnelCondition::kGoal;
      ce.theta = T;
      ce.b = x;
      ce.margin = beta - f.value(T, x);
      return ce;
    };
    tasks.push_back(std::move(task));
  }

  // --- safe: V(theta, x) > beta outside int S(theta) ---
  {
    ConditionTask task;
    task.condition = FunnelCondition::kSafe;
    task.dims = 6;
    const RegionSpec regions = scenario.regions;
    task.eval = [f, regions, T, beta](const double* u) -> std::optional<Counterexample> {
      const double theta = u[0] * T;
      const Region S = regions.safe(theta);
      Vec4 x;
      if (const auto* obs = std::get_if<ObstacleComplementRegion>(&S)) {
        if (u[1] < 0.5) {
          // Inside (or on) the inflated obstacle: shrink a ring point toward
          // the polygon's center; heading/speed deviations spread over the box.
          const Vec2 ring =
              inflated_polygon_boundary_point(obs->polygon, obs->inflation, 2.0 * u[1]);
          Vec2 centroid = Vec2::Zero();
          for (const auto& vtx : obs->polygon) centroid += vtx;
          centroid /= static_cast<double>(obs->polygon.size());
          const Vec2 xy = centroid + u[4] * (ring - centroid);
          const double alpha_R = obs->box_lo[0] + u[2] * (obs->box_hi[0] - obs->box_lo[0]);
          const double v_R = obs->box_lo[3] + u[3] * (obs->box_hi[3] - obs->box_lo[3]);
          x = obs->from_inertial_xy(xy, alpha_R, v_R);
        } else {
          const Region carrier{BoxRegion{obs->box_lo, obs->box_hi}};
          const auto z = region_boundary_point(carrier, {2.0 * (u[1] - 0.5), u[2], u[3], u[4]});
          if (!z) return std::nullopt;
          x = detail::scale_about_center(carrier, *z, 1.0 + 0.6 * u[5]);
        }
      } else {
        const auto z = region_boundary_point(S, {u[1], u[2], u[3], u[4]});
        if (!z) return std::nullopt;
        x = detail::scale_about_center(S, *z, 1.0 + 0.6 * u[5]);
      }
      Counterexample ce;
      ce.condition = FunnelCondition::kSafe;
      ce.theta = theta;
      ce.b = x;
      ce.margin = beta - f.value(theta, x);
      return ce;
    };
    tasks.push_back(std::move(task));
  }

  // --- decrease: min over inputs of dV/dt <= -lambda on the band ---
  {
    ConditionTask task;
    task.condition = FunnelCondition::kDecrease;
    task.dims = 6;
    const RegionSpec regions = scenario.regions;
    const Eigen::LLT<Mat4> llt(f.C);
    const bool pd = (llt.info() == Eigen::Success);
    const Mat4 U = pd ? Mat4(llt.matrixU()) : Mat4::Identity();
    task.eval = [f, regions, T, beta, beta_lower, lambda, inputs, pd, U,
                 seg](const double* u) -> std::optional<Counterexample> {
      const double theta = u[0] * T;
      const Region S = regions.safe(theta);
      Vec4 x;
      if (pd) {
        // Sample the band directly: level in [beta_lower, beta], direction
        // on the sphere, then map through the shape matrix.
        const double level = beta_lower + u[1] * (beta - beta_lower);
        const double shape = level - f.c0 * theta;
        if (shape <= 0.0) return std::nullopt;
        const double r1 = std::sqrt(-2.0 * std::log(std::max(u[2], 1e-300)));
        const double r2 = std::sqrt(-2.0 * std::log(std::max(u[4], 1e-300)));
        Vec4 g(r1 * std::cos(2 * kPi * u[3]), r1 * std::sin(2 * kPi * u[3]),
               r2 * std::cos(2 * kPi * u[5]), r2 * std::sin(2 * kPi * u[5]));
        const double n = g.norm();
        if (n < 1e-300) return std::nullopt;
        x = std::sqrt(shape) * U.triangularView<Eigen::Upper>().solve(Vec4(g / n));
      } else {
        // Shape matrix not positive definite yet: rejection-sample the band
        // inside the safe carrier box.
        const Box4 bb = region_bounding_box(S);
        for (int k = 0; k < 4; ++k) x[k] = bb.lo[k] + u[1 + k] * (bb.hi[k] - bb.lo[k]);
        const double val = f.value(theta, x);
        if (val < beta_lower || val > beta) return std::nullopt;
      }
      if (!region_contains(S, x)) return std::nullopt;
      Counterexample ce;
      ce.condition = FunnelCondition::kDecrease;
      ce.theta = theta;
      ce.b = x;
      Vec3 argmin;
      const double worst = vdot_box_min(f, seg, theta, x, inputs, &argmin);
      ce.margin = worst + lambda;
      ce.input = argmin;
      return ce;
    };
    tasks.push_back(std::move(task));
  }

  return tasks;
}

// Falsifies the funnel conditions for a scenario; `inputs` should already
// reflect the timing mode (u0 pinned to 1 for time tracking).
inline FalsifierReport falsify(const FunnelCandidate& f, const Scenario& scenario,
                               const InputPolytope& inputs, const FalsifyOptions& options = {}) {
  return falsify_tasks(funnel_falsify_tasks(f, scenario, inputs), options);
}

}  // namespace funnel
