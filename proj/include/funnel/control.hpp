#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "funnel/funnel_function.hpp"
#include "funnel/reference.hpp"

namespace funnel {

// ---------------------------------------------------------------------------
// Feedback extraction: turn a funnel function into executable inputs.

enum class ExtractionStrategy {
  kSontagClamp,  // universal-formula descent direction, then box clamping
  kMinNormQp,    // closest admissible input to the reference that decreases V
};

inline const char* to_string(ExtractionStrategy s) {
  return s == ExtractionStrategy::kSontagClamp ? "sontag-clamp" : "min-norm-qp";
}

inline ExtractionStrategy extraction_strategy_from_string(const std::string& s) {
  if (s == "sontag-clamp") return ExtractionStrategy::kSontagClamp;
  if (s == "min-norm-qp") return ExtractionStrategy::kMinNormQp;
  throw std::invalid_argument("extraction strategy must be 'sontag-clamp' or 'min-norm-qp', got '" +
                              s + "'");
}

namespace detail {

// Sontag's formula for Vdot = a' + g . d over the offset d = v - v_c:
// d = -((a' + sqrt(a'^2 + |g|^4)) / |g|^2) g, which achieves
// Vdot = -sqrt(a'^2 + |g|^4) < 0 whenever g != 0, regardless of a'.
inline Vec3 sontag_offset(double a_shifted, const Vec3& g) {
  const double gn2 = g.squaredNorm();
  if (gn2 < 1e-18) return Vec3::Zero();
  const double coef = (a_shifted + std::sqrt(a_shifted * a_shifted + gn2 * gn2)) / gn2;
  return -coef * g;
}

// Zero-width box axes (e.g. the pinned timing rate of trajectory tracking)
// carry no authority; fold their contribution into the constant so the
// descent direction is computed in the genuinely free coordinates.
inline void fold_pinned_axes(const InputPolytope& inputs, double* a, Vec3* g) {
  const Vec3 lo = inputs.affine_lo(), hi = inputs.affine_hi();
  for (int i = 0; i < 3; ++i) {
    if (hi[i] - lo[i] < 1e-12) {
      *a += (*g)[i] * lo[i];
      (*g)[i] = 0.0;
    }
  }
}

// Exact box minimizer of g . v, taking the center on coordinates the
// objective ignores (the least aggressive of the tied choices). Coefficients
// below the gradient-vanishing threshold count as ignored: rotation entries
// of the frame transform leave 1e-17 crumbs that must not pick a bound.
inline Vec3 box_argmin(const Vec3& g, const InputPolytope& inputs) {
  const Vec3 lo = inputs.affine_lo(), hi = inputs.affine_hi(), c = inputs.affine_center();
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    v[i] = std::abs(g[i]) < 1e-9 ? c[i] : (g[i] > 0.0 ? lo[i] : hi[i]);
  }
  return v;
}

// Minimizer of |v - v_nom|^2 over the box intersected with g . v <= target,
// or nullopt when the two sets are disjoint. KKT reduces the problem to a
// line search: v(mu) = clamp(v_nom - (mu/2) g) with the smallest mu >= 0
// satisfying the constraint. h(mu) = g . v(mu) is piecewise linear and
// nonincreasing with at most one breakpoint per coordinate, so evaluating h
// at the breakpoints and interpolating on the bracketing segment is exact.
inline std::optional<Vec3> min_norm_in_halfspace(const Vec3& v_nom, const Vec3& g, double target,
                                                 const InputPolytope& inputs) {
  const auto v_at = [&](double mu) { return inputs.clamp_affine(v_nom - 0.5 * mu * g); };
  if (g.dot(v_at(0.0)) <= target) return v_at(0.0);

  const Vec3 lo = inputs.affine_lo(), hi = inputs.affine_hi();
  double h_floor = 0.0;
  for (int i = 0; i < 3; ++i) h_floor += g[i] * (g[i] >= 0.0 ? lo[i] : hi[i]);
  if (h_floor > target) return std::nullopt;

  std::vector<double> breakpoints;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(g[i]) < 1e-15) continue;
    const double bound = g[i] > 0.0 ? lo[i] : hi[i];
    breakpoints.push_back(2.0 * (v_at(0.0)[i] - bound) / g[i]);
  }
  std::sort(breakpoints.begin(), breakpoints.end());

  double mu_prev = 0.0;
  double h_prev = g.dot(v_at(0.0));
  for (const double mu : breakpoints) {
    if (mu <= mu_prev) continue;
    const double h = g.dot(v_at(mu));
    if (h <= target) {
      // h_prev > target >= h, so the segment has positive slope drop.
      const double mu_star = mu_prev + (mu - mu_prev) * (h_prev - target) / (h_prev - h);
      return v_at(mu_star);
    }
    mu_prev = mu;
    h_prev = h;
  }
  // Beyond the last breakpoint h equals the box floor, which is feasible;
  // reaching here means the floor is attained only in the limit of roundoff.
  return v_at(breakpoints.empty() ? 1.0 : breakpoints.back() + 1.0);
}

}  // namespace detail

// Input (in affine coordinates (u0, w, thrust)) extracted from the funnel at
// parameter theta and deviation b. Both strategies saturate by construction;
// min-norm-qp falls back to the exact worst-case-decrease input when no
// admissible input meets the decrease target (outside the certified band
// that can happen, inside it cannot for a verified funnel).
inline Vec3 extract_affine(const FunnelCandidate& f, const ReferenceSegment& seg, double theta,
                           const Vec4& b, const InputPolytope& inputs,
                           ExtractionStrategy strategy) {
  auto [a, g] = vdot_affine(f, seg, theta, b);
  detail::fold_pinned_axes(inputs, &a, &g);

  if (strategy == ExtractionStrategy::kSontagClamp) {
    const Vec3 vc = inputs.affine_center();
    return inputs.clamp_affine(vc + detail::sontag_offset(a + g.dot(vc), g));
  }

  const ControlInput ref = reference_input(seg, theta, inputs.wheelbase);
  const Vec3 v_nom = inputs.clamp_affine(
      Vec3(ref.u0, std::tan(ref.gamma) / inputs.wheelbase, ref.thrust));
  const double target = -f.thresholds.lambda - a;
  if (const auto v = detail::min_norm_in_halfspace(v_nom, g, target, inputs)) return *v;
  return detail::box_argmin(g, inputs);
}

inline ControlInput extract_control(const FunnelCandidate& f, double theta, const Vec4& b,
                                    const ReferenceSegment& seg, const InputPolytope& inputs,
                                    ExtractionStrategy strategy) {
  const Vec3 v = extract_affine(f, seg, theta, b, inputs, strategy);
  ControlInput u;
  u.u0 = v[0];
  u.gamma = inputs.gamma_from_w(v[1]);
  u.thrust = v[2];
  return u;
}

// ---------------------------------------------------------------------------
// Closed-loop controller: tracks the path parameter and emits plant inputs.

struct ControllerOptions {
  ExtractionStrategy strategy = ExtractionStrategy::kMinNormQp;
  double dt_ctrl = 0.01;  // update period the simulator drives the loop at
};

// One controller update, kept rich enough for logging and diagnostics.
struct ControlStep {
  ControlInput input;          // gamma/thrust act on the plant; u0 recorded
  Vec3 affine = Vec3::Zero();  // (u0, w, thrust) as certified
  double theta = 0.0;          // parameter the step was computed at
  Vec4 body = Vec4::Zero();    // deviation from the reference at that theta
  double value = 0.0;          // funnel value V(theta, body)
};

// Single-owner mutable state: the path parameter advances at the extracted
// timing rate u0 (path following) or at unit rate (time tracking), clamped to
// the segment domain. theta is monotone because the input box keeps u0 > 0.
class Controller {
 public:
  Controller(const Certificate& cert, ReferenceSegment segment, ControllerOptions opts = {})
      : funnel_(cert.funnel),
        mode_(cert.mode),
        inputs_(cert.inputs),
        segment_(std::move(segment)),
        opts_(opts) {}

  TimingMode mode() const { return mode_; }
  double theta() const { return theta_; }
  const ReferenceSegment& segment() const { return segment_; }
  const FunnelCandidate& funnel() const { return funnel_; }
  const InputPolytope& inputs() const { return inputs_; }
  const ControllerOptions& options() const { return opts_; }

  void reset(double theta = 0.0) { theta_ = std::clamp(theta, 0.0, segment_.T); }

  ControlStep step(const InertialState& s, double dt) {
    ControlStep out;
    out.theta = theta_;
    out.body = to_body(s, segment_, theta_).vec();
    out.value = funnel_.value(theta_, out.body);
    out.affine = extract_affine(funnel_, segment_, theta_, out.body, inputs_, opts_.strategy);
    out.input.u0 = out.affine[0];
    out.input.gamma = inputs_.gamma_from_w(out.affine[1]);
    out.input.thrust = out.affine[2];
    const double rate = mode_ == TimingMode::kTimeTracking ? 1.0 : out.affine[0];
    theta_ = std::min(theta_ + rate * dt, segment_.T);
    return out;
  }

 private:
  FunnelCandidate funnel_;
  TimingMode mode_;
  InputPolytope inputs_;
  ReferenceSegment segment_;
  ControllerOptions opts_;
  double theta_ = 0.0;
};

}  // namespace funnel
