#pragma once
// Finite-horizon input optimizer ("demonstrator"). Given a deviation state on
// a reference segment it searches piecewise-constant input sequences that
// drive the deviation toward zero, and returns the first action of the best
// sequence. The search is multi-start projected gradient with forward
// finite-difference gradients; one restart is seeded with the recovered
// reference inputs, the rest draw uniformly from the input box. Deterministic
// for a fixed seed.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "funnel/parallel.hpp"
#include "funnel/reference.hpp"

namespace funnel {

struct MpcConfig {
  int horizon = 20;
  double dt = 0.05;
  Vec4 state_weight{1.0, 1.0, 1.0, 0.5};     // diagonal of Q_b
  double theta_weight = 0.0;                 // optional pull toward theta = T
  Vec3 input_weight{0.1, 0.1, 0.01};         // diagonal of R, on v - v_ref(theta)
  double terminal_scale = 10.0;              // Q_f = terminal_scale * Q_b
  int restarts = 4;
  int iterations = 60;                       // projected-gradient steps per restart
  InputPolytope box = InputPolytope::defaults();
};

struct MpcRollout {
  double cost = 0.0;
  std::vector<double> theta;  // horizon + 1 knots
  std::vector<Vec4> b;
};

struct Demonstration {
  ControlInput input;                  // first action of the best plan
  Vec3 affine_input = Vec3::Zero();    // same action as (u0, w, thrust)
  double cost = std::numeric_limits<double>::infinity();
  std::vector<Vec3> plan;              // full best input sequence
  std::vector<double> initial_costs;   // per restart, +inf when discarded
  std::vector<double> final_costs;
};

// Rolls a fixed input plan through the deviation dynamics with RK4 on the
// joint (theta, b) state. theta saturates at the segment end; past it the
// reference is frozen, so the horizon effectively truncates. The cost is the
// plain sum of stage terms plus the terminal term (no dt weighting).
inline MpcRollout mpc_rollout(double theta0, const BodyState& b0, const ReferenceSegment& ref,
                              const MpcConfig& cfg, const std::vector<Vec3>& plan) {
  detail::require(static_cast<int>(plan.size()) == cfg.horizon,
                  "mpc_rollout: plan length must equal the horizon");
  const double T = ref.T;
  const double l = cfg.box.wheelbase;
  MpcRollout out;
  out.theta.reserve(cfg.horizon + 1);
  out.b.reserve(cfg.horizon + 1);

  double theta = std::clamp(theta0, 0.0, T);
  Vec4 b = b0.vec();
  const auto stage_weight = [&](double th, const Vec4& x, const Vec3& v) {
    const ControlInput r = reference_input(ref, std::clamp(th, 0.0, T), l);
    const Vec3 vref(r.u0, std::tan(r.gamma) / l, r.thrust);
    const Vec3 dv = v - vref;
    return x.dot(cfg.state_weight.cwiseProduct(x)) + dv.dot(cfg.input_weight.cwiseProduct(dv)) +
           cfg.theta_weight * (th - T) * (th - T);
  };
  const auto field = [&](double th, const Vec4& x, const Vec3& v) -> Vec4 {
    return body_deviation_field(BodyState::from_vec(x), ref, std::clamp(th, 0.0, T), v);
  };

  for (int k = 0; k < cfg.horizon; ++k) {
    out.theta.push_back(theta);
    out.b.push_back(b);
    const Vec3& v = plan[k];
    out.cost += stage_weight(theta, b, v);

    const double h = cfg.dt;
    const Vec4 k1 = field(theta, b, v);
    const Vec4 k2 = field(theta + 0.5 * h * v[0], b + 0.5 * h * k1, v);
    const Vec4 k3 = field(theta + 0.5 * h * v[0], b + 0.5 * h * k2, v);
    const Vec4 k4 = field(theta + h * v[0], b + h * k3, v);
    b += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    theta = std::clamp(theta + h * v[0], 0.0, T);
  }
  out.theta.push_back(theta);
  out.b.push_back(b);
  out.cost += cfg.terminal_scale * b.dot(cfg.state_weight.cwiseProduct(b));
  if (!std::isfinite(out.cost) || !b.allFinite()) {
    out.cost = std::numeric_limits<double>::infinity();
  }
  return out;
}

namespace detail {

inline double mpc_plan_cost(double theta0, const BodyState& b0, const ReferenceSegment& ref,
                            const MpcConfig& cfg, const std::vector<Vec3>& plan) {
  return mpc_rollout(theta0, b0, ref, cfg, plan).cost;
}

}  // namespace detail

inline Demonstration demonstrate_detail(double theta, const BodyState& b,
                                        const ReferenceSegment& ref, const MpcConfig& cfg,
                                        uint64_t seed = 0) {
  detail::require(cfg.horizon >= 2, "demonstrate: horizon must be at least 2");
  detail::require(cfg.dt > 0.0, "demonstrate: dt must be positive");
  detail::require(cfg.restarts >= 1, "demonstrate: needs at least one restart");
  detail::require(theta >= -1e-9 && theta <= ref.T + 1e-9,
                  "demonstrate: theta outside the segment");
  const int H = cfg.horizon;
  const double l = cfg.box.wheelbase;
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<std::vector<Vec3>> plans(cfg.restarts, std::vector<Vec3>(H));
  {
    // Restart 0 follows the recovered reference inputs at the unit-rate
    // prediction of theta; it is always a feasible, competent baseline.
    double th = std::clamp(theta, 0.0, ref.T);
    for (int k = 0; k < H; ++k) {
      const ControlInput r = reference_input(ref, th, l);
      plans[0][k] = cfg.box.clamp_affine(Vec3(r.u0, std::tan(r.gamma) / l, r.thrust));
      th = std::min(ref.T, th + cfg.dt);
    }
  }
  const Vec3 lo = cfg.box.affine_lo(), hi = cfg.box.affine_hi();
  for (int rst = 1; rst < cfg.restarts; ++rst) {
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 31 * rst + 5);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int k = 0; k < H; ++k) {
      for (int j = 0; j < 3; ++j) plans[rst][k][j] = lo[j] + uni(rng) * (hi[j] - lo[j]);
    }
  }

  std::vector<double> init_costs(cfg.restarts, inf), final_costs(cfg.restarts, inf);
  parallel_for(cfg.restarts, [&](int rst) {
    std::vector<Vec3>& plan = plans[rst];
    double cost = detail::mpc_plan_cost(theta, b, ref, cfg, plan);
    init_costs[rst] = cost;
    if (!std::isfinite(cost)) return;  // discarded restart

    std::vector<Vec3> grad(H), trial(H);
    double alpha = 0.1;
    for (int it = 0; it < cfg.iterations; ++it) {
      bool grad_ok = true;
      for (int k = 0; k < H && grad_ok; ++k) {
        for (int j = 0; j < 3; ++j) {
          const double saved = plan[k][j];
          const double h = 1e-6 * (1.0 + std::abs(saved));
          plan[k][j] = saved + h;
          const double bumped = detail::mpc_plan_cost(theta, b, ref, cfg, plan);
          plan[k][j] = saved;
          if (!std::isfinite(bumped)) {
            grad_ok = false;
            break;
          }
          grad[k][j] = (bumped - cost) / h;
        }
      }
      if (!grad_ok) break;

      alpha = std::min(alpha * 2.0, 1.0);
      bool accepted = false;
      for (int back = 0; back < 30; ++back) {
        double predicted = 0.0;
        for (int k = 0; k < H; ++k) {
          trial[k] = cfg.box.clamp_affine(plan[k] - alpha * grad[k]);
          predicted += grad[k].dot(plan[k] - trial[k]);
        }
        if (predicted <= 0.0) break;  // projected step is stationary
        const double trial_cost = detail::mpc_plan_cost(theta, b, ref, cfg, trial);
        if (trial_cost < cost - 1e-4 * predicted) {
          plan.swap(trial);
          cost = trial_cost;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) break;
    }
    final_costs[rst] = cost;
  });

  int best = -1;
  for (int rst = 0; rst < cfg.restarts; ++rst) {
    if (std::isfinite(final_costs[rst]) && (best < 0 || final_costs[rst] < final_costs[best])) {
      best = rst;
    }
  }
  if (best < 0) throw std::runtime_error("demonstrator failed");

  Demonstration out;
  out.cost = final_costs[best];
  out.plan = plans[best];
  out.affine_input = cfg.box.clamp_affine(out.plan.front());
  out.input = ControlInput{out.affine_input[0], cfg.box.gamma_from_w(out.affine_input[1]),
                           out.affine_input[2]};
  out.initial_costs = std::move(init_costs);
  out.final_costs = std::move(final_costs);
  return out;
}

inline ControlInput demonstrate(double theta, const BodyState& b, const ReferenceSegment& ref,
                                const MpcConfig& cfg, uint64_t seed = 0) {
  return demonstrate_detail(theta, b, ref, cfg, seed).input;
}

}  // namespace funnel
