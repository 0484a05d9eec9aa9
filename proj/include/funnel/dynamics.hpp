#pragma once
// Kinematic bicycle model: state and input types, vector field, affine-in-input
// decomposition, and a fixed-step RK4 integrator for piecewise-constant inputs.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace funnel {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat4 = Eigen::Matrix4d;
using Mat42 = Eigen::Matrix<double, 4, 2>;
using Mat43 = Eigen::Matrix<double, 4, 3>;

inline constexpr double kDefaultWheelbase = 0.34;  // [m]
inline constexpr double kPi = 3.14159265358979323846;

namespace detail {

// Precondition check that surfaces a diagnostic instead of UB.
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline bool all_finite(const Eigen::Ref<const Eigen::VectorXd>& z) {
  return z.allFinite();
}

}  // namespace detail

// Car state. Heading alpha is measured so that the velocity direction in the
// plane is (sin(-alpha), cos(alpha)): alpha = 0 drives toward +y, alpha =
// -pi/2 toward +x. Kept unwrapped (no modular reduction) so that multi-lap
// references stay continuous.
struct InertialState {
  double alpha = 0.0;  // heading [rad]
  double x = 0.0;      // position [m]
  double y = 0.0;      // position [m]
  double v = 0.0;      // forward speed [m/s]

  Vec4 vec() const { return Vec4(alpha, x, y, v); }
  static InertialState from_vec(const Vec4& z) { return {z[0], z[1], z[2], z[3]}; }
};

// Plant input. `u0` is the virtual timing-rate input of the path-following
// controller; it does not act on the plant itself but is carried here so one
// type covers demonstrations, extraction, and logging.
struct ControlInput {
  double u0 = 1.0;      // timing rate [1/s]
  double gamma = 0.0;   // steering angle [rad]
  double thrust = 0.0;  // longitudinal acceleration [m/s^2]
};

// Box of admissible inputs over (u0, gamma, thrust). The affine coordinates
// are (u0, w, thrust) with w = tan(gamma)/l, in which the deviation dynamics
// are affine; tan is monotone on (-pi/2, pi/2) so the box maps to a box.
struct InputPolytope {
  double u0_min = 0.2, u0_max = 2.0;
  double gamma_min = -kPi / 4, gamma_max = kPi / 4;
  double thrust_min = -4.0, thrust_max = 4.0;
  double wheelbase = kDefaultWheelbase;

  static InputPolytope defaults(double l = kDefaultWheelbase) {
    InputPolytope p;
    p.wheelbase = l;
    return p;
  }

  // Trajectory-tracking variant: theta advances at unit rate, so the timing
  // input collapses to the zero-width interval [1, 1].
  InputPolytope with_fixed_u0(double u0 = 1.0) const {
    InputPolytope p = *this;
    p.u0_min = p.u0_max = u0;
    return p;
  }

  double w_min() const { return std::tan(gamma_min) / wheelbase; }
  double w_max() const { return std::tan(gamma_max) / wheelbase; }

  Vec3 affine_lo() const { return Vec3(u0_min, w_min(), thrust_min); }
  Vec3 affine_hi() const { return Vec3(u0_max, w_max(), thrust_max); }
  Vec3 affine_center() const { return 0.5 * (affine_lo() + affine_hi()); }

  bool contains_affine(const Vec3& v, double tol = 1e-9) const {
    const Vec3 lo = affine_lo(), hi = affine_hi();
    for (int i = 0; i < 3; ++i) {
      if (v[i] < lo[i] - tol || v[i] > hi[i] + tol) return false;
    }
    return true;
  }

  Vec3 clamp_affine(const Vec3& v) const {
    const Vec3 lo = affine_lo(), hi = affine_hi();
    Vec3 out;
    for (int i = 0; i < 3; ++i) out[i] = std::min(std::max(v[i], lo[i]), hi[i]);
    return out;
  }

  // Exact minimum of a + g.v over the box: separable, each coordinate picks
  // the bound matching the sign of its coefficient.
  double minimize_affine(double a, const Vec3& g, Vec3* argmin = nullptr) const {
    const Vec3 lo = affine_lo(), hi = affine_hi();
    double val = a;
    for (int i = 0; i < 3; ++i) {
      const double pick = (g[i] >= 0.0) ? lo[i] : hi[i];
      val += g[i] * pick;
      if (argmin) (*argmin)[i] = pick;
    }
    return val;
  }

  double gamma_from_w(double w) const { return std::atan(w * wheelbase); }
};

// Bicycle vector field, eq. of motion of the rear-axle point:
//   alpha' = (v/l) tan(gamma), x' = v sin(-alpha), y' = v cos(alpha),
//   v' = thrust.
inline Vec4 bicycle_vector_field(const InertialState& s, double gamma, double thrust,
                                 double wheelbase = kDefaultWheelbase) {
  detail::require(std::isfinite(s.alpha) && std::isfinite(s.x) && std::isfinite(s.y) &&
                      std::isfinite(s.v),
                  "bicycle_vector_field: non-finite state");
  detail::require(std::isfinite(gamma) && std::isfinite(thrust),
                  "bicycle_vector_field: non-finite input");
  detail::require(wheelbase > 0.0, "bicycle_vector_field: wheelbase must be positive");
  return Vec4((s.v / wheelbase) * std::tan(gamma), -s.v * std::sin(s.alpha),
              s.v * std::cos(s.alpha), thrust);
}

// Decomposition f = f0 + G * [w, thrust]^T with w = tan(gamma)/l. The plant is
// control-affine in these coordinates, which is what makes exact minimization
// of the funnel derivative over the input box possible.
inline void affine_input_form(const InertialState& s, Vec4* f0, Mat42* G) {
  detail::require(f0 != nullptr && G != nullptr, "affine_input_form: null output");
  *f0 = Vec4(0.0, -s.v * std::sin(s.alpha), s.v * std::cos(s.alpha), 0.0);
  G->setZero();
  (*G)(0, 0) = s.v;   // alpha' = v * w
  (*G)(3, 1) = 1.0;   // v' = thrust
}

struct IntegrationResult {
  std::vector<double> times;
  std::vector<InertialState> states;
  bool diverged = false;
};

// Fixed-step RK4 under a piecewise-constant input schedule: the input is
// sampled at the beginning of each step and held across the whole step.
// The schedule's u0 field is ignored (it only drives funnel timing).
// Aborts (flagging `diverged`) once any state component exceeds the bound.
inline IntegrationResult integrate(
    const InertialState& x0, const std::function<ControlInput(double)>& input_at, double dt,
    double horizon, double wheelbase = kDefaultWheelbase, double divergence_bound = 1e6) {
  detail::require(dt > 0.0, "integrate: dt must be positive");
  detail::require(horizon >= 0.0, "integrate: horizon must be nonnegative");
  detail::require(detail::all_finite(x0.vec()), "integrate: non-finite initial state");

  const int n_steps = static_cast<int>(std::llround(horizon / dt));
  IntegrationResult out;
  out.times.reserve(n_steps + 1);
  out.states.reserve(n_steps + 1);
  out.times.push_back(0.0);
  out.states.push_back(x0);

  Vec4 z = x0.vec();
  for (int k = 0; k < n_steps; ++k) {
    const ControlInput u = input_at(k * dt);
    const double gamma = u.gamma, thrust = u.thrust;
    detail::require(std::isfinite(gamma) && std::isfinite(thrust),
                    "integrate: non-finite input from schedule");
    const auto f = [&](const Vec4& zz) {
      return bicycle_vector_field(InertialState::from_vec(zz), gamma, thrust, wheelbase);
    };
    const Vec4 k1 = f(z);
    const Vec4 k2 = f(z + 0.5 * dt * k1);
    const Vec4 k3 = f(z + 0.5 * dt * k2);
    const Vec4 k4 = f(z + dt * k3);
    z += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

    if (!z.allFinite() || z.cwiseAbs().maxCoeff() > divergence_bound) {
      out.diverged = true;
      break;
    }
    out.times.push_back((k + 1) * dt);
    out.states.push_back(InertialState::from_vec(z));
  }
  return out;
}

}  // namespace funnel
