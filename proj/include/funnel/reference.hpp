#pragma once
// Reference path segments, moving-frame deviation coordinates, and the region
// types (initial / goal / safe sets) that define a path-segment scenario.
//
// A segment is a feasible reference x_r : [0, T] -> state with derivative
// r = dx_r/dtheta. Deviations are expressed in a body-fixed frame anchored at
// x_r(theta): the y_R axis is aligned with the vehicle axis, x_R is the
// lateral offset, alpha_R and v_R are heading and speed offsets.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "funnel/dynamics.hpp"

namespace funnel {

// Deviation from the reference in the body-fixed frame at x_r(theta).
struct BodyState {
  double alpha_R = 0.0;
  double x_R = 0.0;  // lateral offset [m]
  double y_R = 0.0;  // longitudinal offset [m]
  double v_R = 0.0;  // speed offset [m/s]

  Vec4 vec() const { return Vec4(alpha_R, x_R, y_R, v_R); }
  static BodyState from_vec(const Vec4& z) { return {z[0], z[1], z[2], z[3]}; }
};

// ---------------------------------------------------------------------------
// Piecewise polynomials (used for fitted reference components).

// Polynomial pieces in a local coordinate t in [-1, 1] per knot interval.
struct PiecewisePoly {
  std::vector<double> knots;                 // size pieces + 1, increasing
  std::vector<Eigen::VectorXd> coeffs;       // per piece, monomial coeffs in t

  int piece_index(double x) const {
    const int n = static_cast<int>(coeffs.size());
    auto it = std::upper_bound(knots.begin(), knots.end(), x);
    int i = static_cast<int>(it - knots.begin()) - 1;
    return std::clamp(i, 0, n - 1);
  }

  double eval(double x) const {
    const int i = piece_index(x);
    const double a = knots[i], b = knots[i + 1];
    const double t = (2.0 * x - (a + b)) / (b - a);
    const Eigen::VectorXd& c = coeffs[i];
    double acc = 0.0;
    for (int k = static_cast<int>(c.size()) - 1; k >= 0; --k) acc = acc * t + c[k];
    return acc;
  }

  double deriv(double x) const {
    const int i = piece_index(x);
    const double a = knots[i], b = knots[i + 1];
    const double t = (2.0 * x - (a + b)) / (b - a);
    const Eigen::VectorXd& c = coeffs[i];
    double acc = 0.0;
    for (int k = static_cast<int>(c.size()) - 1; k >= 1; --k) acc = acc * t + k * c[k];
    return acc * (2.0 / (b - a));
  }
};

// Interpolates f at Chebyshev-Lobatto nodes on each of `pieces` equal
// subintervals of [a, b] with the given polynomial degree.
inline PiecewisePoly fit_chebyshev(const std::function<double(double)>& f, double a, double b,
                                   int pieces, int degree) {
  detail::require(pieces >= 1 && degree >= 1 && b > a, "fit_chebyshev: bad arguments");
  PiecewisePoly out;
  out.knots.resize(pieces + 1);
  out.coeffs.resize(pieces);
  for (int i = 0; i <= pieces; ++i) out.knots[i] = a + (b - a) * i / pieces;

  const int n = degree + 1;
  Eigen::MatrixXd V(n, n);
  Eigen::VectorXd y(n), nodes(n);
  for (int j = 0; j < n; ++j) nodes[j] = std::cos(kPi * j / degree);  // in [-1, 1]
  for (int j = 0; j < n; ++j) {
    double p = 1.0;
    for (int k = 0; k < n; ++k) {
      V(j, k) = p;
      p *= nodes[j];
    }
  }
  const auto lu = V.fullPivLu();
  for (int i = 0; i < pieces; ++i) {
    const double lo = out.knots[i], hi = out.knots[i + 1];
    for (int j = 0; j < n; ++j) y[j] = f(0.5 * (lo + hi) + 0.5 * (hi - lo) * nodes[j]);
    out.coeffs[i] = lu.solve(y);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reference segments.

struct ReferenceSegment {
  std::string id;
  double T = 1.0;                          // parameter domain [0, T]
  std::function<Vec4(double)> state_fn;    // theta -> (alpha_r, x_r, y_r, v_r)
  std::function<Vec4(double)> deriv_fn;    // theta -> r(theta) = d x_r / d theta

  InertialState state_at(double theta) const { return InertialState::from_vec(state_fn(theta)); }
  Vec4 r(double theta) const { return deriv_fn(theta); }
};

// Reference inputs recovered from the segment: gamma from the heading rate,
// thrust from the speed rate, at unit timing rate. Exact for feasible
// segments; gamma falls back to 0 where the reference speed vanishes.
inline ControlInput reference_input(const ReferenceSegment& seg, double theta,
                                    double wheelbase = kDefaultWheelbase) {
  const Vec4 s = seg.state_fn(theta);
  const Vec4 r = seg.deriv_fn(theta);
  ControlInput u;
  u.u0 = 1.0;
  u.gamma = (std::abs(s[3]) > 1e-12) ? std::atan(wheelbase * r[0] / s[3]) : 0.0;
  u.thrust = r[3];
  return u;
}

// Max dynamics residual of the segment over n uniformly spaced samples:
// the reference inputs are recovered (and clamped to the admissible box), and
// the defect max_i |r(theta) - f(x_r(theta), u_r(theta))|_inf is returned.
// Saturation of the recovered inputs therefore shows up as residual.
struct FeasibilityReport {
  double max_residual = 0.0;
  double worst_theta = 0.0;
};

inline FeasibilityReport feasibility_residual(const ReferenceSegment& seg,
                                              const InputPolytope& inputs, int n_samples = 100) {
  FeasibilityReport rep;
  for (int i = 0; i < n_samples; ++i) {
    const double theta = seg.T * i / (n_samples - 1);
    const Vec4 s = seg.state_fn(theta);
    const Vec4 r = seg.deriv_fn(theta);
    ControlInput u = reference_input(seg, theta, inputs.wheelbase);
    u.gamma = std::clamp(u.gamma, inputs.gamma_min, inputs.gamma_max);
    u.thrust = std::clamp(u.thrust, inputs.thrust_min, inputs.thrust_max);
    const Vec4 f = bicycle_vector_field(InertialState::from_vec(s), u.gamma, u.thrust,
                                        inputs.wheelbase);
    const double res = (r - f).cwiseAbs().maxCoeff();
    if (res > rep.max_residual) {
      rep.max_residual = res;
      rep.worst_theta = theta;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Frame maps between inertial states and body deviations.

inline BodyState to_body(const InertialState& s, const ReferenceSegment& seg, double theta) {
  detail::require(theta >= -1e-9 && theta <= seg.T + 1e-9,
                  "to_body: theta outside segment domain [0, T]");
  detail::require(detail::all_finite(s.vec()), "to_body: non-finite state");
  const Vec4 sr = seg.state_fn(std::clamp(theta, 0.0, seg.T));
  const double c = std::cos(sr[0]), sn = std::sin(sr[0]);
  const double dx = s.x - sr[1], dy = s.y - sr[2];
  BodyState b;
  b.alpha_R = s.alpha - sr[0];
  b.x_R = c * dx + sn * dy;
  b.y_R = -sn * dx + c * dy;
  b.v_R = s.v - sr[3];
  return b;
}

inline InertialState to_inertial(const BodyState& b, const ReferenceSegment& seg, double theta) {
  detail::require(theta >= -1e-9 && theta <= seg.T + 1e-9,
                  "to_inertial: theta outside segment domain [0, T]");
  const Vec4 sr = seg.state_fn(std::clamp(theta, 0.0, seg.T));
  const double c = std::cos(sr[0]), sn = std::sin(sr[0]);
  InertialState s;
  s.alpha = b.alpha_R + sr[0];
  s.x = c * b.x_R - sn * b.y_R + sr[1];
  s.y = sn * b.x_R + c * b.y_R + sr[2];
  s.v = b.v_R + sr[3];
  return s;
}

// Time derivative of the body deviation under plant inputs (w, thrust) and
// timing rate u0 (theta' = u0), with v = (u0, w, thrust) in affine
// coordinates. Derivation: differentiate the to_body map along the closed
// loop; the rotation's theta-dependence contributes the skew term.
inline Vec4 body_deviation_field(const BodyState& b, const ReferenceSegment& seg, double theta,
                                 const Vec3& v_affine) {
  const Vec4 sr = seg.state_fn(theta);
  const Vec4 rr = seg.deriv_fn(theta);
  const double u0 = v_affine[0], w = v_affine[1], thrust = v_affine[2];
  const double alpha = b.alpha_R + sr[0];
  const double v = b.v_R + sr[3];
  const double c = std::cos(sr[0]), sn = std::sin(sr[0]);

  const double px_dot = -v * std::sin(alpha);
  const double py_dot = v * std::cos(alpha);
  const double qx = px_dot - rr[1] * u0;  // inertial position defect
  const double qy = py_dot - rr[2] * u0;

  Vec4 db;
  db[0] = v * w - rr[0] * u0;
  db[1] = rr[0] * u0 * b.y_R + (c * qx + sn * qy);
  db[2] = -rr[0] * u0 * b.x_R + (-sn * qx + c * qy);
  db[3] = thrust - rr[3] * u0;
  return db;
}

// Affine decomposition b' = d0 + D * (u0, w, thrust). The field is exactly
// affine in these coordinates, so the columns are formed in closed form.
inline void body_deviation_affine(const BodyState& b, const ReferenceSegment& seg, double theta,
                                  Vec4* d0, Mat43* D) {
  detail::require(d0 != nullptr && D != nullptr, "body_deviation_affine: null output");
  const Vec4 sr = seg.state_fn(theta);
  const Vec4 rr = seg.deriv_fn(theta);
  const double alpha = b.alpha_R + sr[0];
  const double v = b.v_R + sr[3];
  const double c = std::cos(sr[0]), sn = std::sin(sr[0]);

  const double px_dot = -v * std::sin(alpha);
  const double py_dot = v * std::cos(alpha);

  (*d0)[0] = 0.0;
  (*d0)[1] = c * px_dot + sn * py_dot;
  (*d0)[2] = -sn * px_dot + c * py_dot;
  (*d0)[3] = 0.0;

  D->setZero();
  // Timing-rate column: frame transport plus reference drift.
  (*D)(0, 0) = -rr[0];
  (*D)(1, 0) = rr[0] * b.y_R - (c * rr[1] + sn * rr[2]);
  (*D)(2, 0) = -rr[0] * b.x_R - (-sn * rr[1] + c * rr[2]);
  (*D)(3, 0) = -rr[3];
  // Steering column (w): heading rate only.
  (*D)(0, 1) = v;
  // Thrust column.
  (*D)(3, 2) = 1.0;
}

// Parameter of the closest reference state under the metric |s - x_r|_P,
// found by a dense grid scan refined with ternary search. Metrics only.
inline double project_to_path(const InertialState& s, const ReferenceSegment& seg,
                              const Mat4& P = Mat4::Identity(), int n_grid = 2048) {
  const auto dist2 = [&](double th) {
    const Vec4 d = s.vec() - seg.state_fn(th);
    return d.dot(P * d);
  };
  int best = 0;
  double best_val = dist2(0.0);
  for (int i = 1; i <= n_grid; ++i) {
    const double val = dist2(seg.T * i / n_grid);
    if (val < best_val) {
      best_val = val;
      best = i;
    }
  }
  double lo = seg.T * std::max(0, best - 1) / n_grid;
  double hi = seg.T * std::min(n_grid, best + 1) / n_grid;
  for (int it = 0; it < 80; ++it) {
    const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
    if (dist2(m1) <= dist2(m2)) hi = m2; else lo = m1;
  }
  return 0.5 * (lo + hi);
}

// Rigid transform of a segment: heading shifted by dalpha, positions rotated
// by dalpha and translated by (dx, dy). The bicycle field is equivariant
// under this map, so feasibility is preserved. Used to chain segments
// (lap wrap-around adds 2*pi to the heading; straight extensions translate).
inline ReferenceSegment transformed_segment(const ReferenceSegment& seg, double dalpha, double dx,
                                            double dy) {
  ReferenceSegment out;
  out.id = seg.id + "+rigid";
  out.T = seg.T;
  const double c = std::cos(dalpha), sn = std::sin(dalpha);
  auto base_state = seg.state_fn;
  auto base_deriv = seg.deriv_fn;
  out.state_fn = [base_state, dalpha, c, sn, dx, dy](double th) {
    const Vec4 z = base_state(th);
    return Vec4(z[0] + dalpha, c * z[1] - sn * z[2] + dx, sn * z[1] + c * z[2] + dy, z[3]);
  };
  out.deriv_fn = [base_deriv, c, sn](double th) {
    const Vec4 r = base_deriv(th);
    return Vec4(r[0], c * r[1] - sn * r[2], sn * r[1] + c * r[2], r[3]);
  };
  return out;
}

// ---------------------------------------------------------------------------
// Regions in deviation coordinates.

struct BallRegion {
  Vec4 center = Vec4::Zero();
  double radius = 0.5;
};

struct BoxRegion {
  Vec4 lo = Vec4::Constant(-1.0);
  Vec4 hi = Vec4::Constant(1.0);
};

struct EllipsoidRegion {  // { z : z' Q z <= level }
  Mat4 Q = Mat4::Identity();
  double level = 1.0;
};

// Complement of an inflated convex obstacle, carried in deviation coordinates
// through the reference pose at the anchoring theta, intersected with a
// finite sampling box (the raw complement is unbounded).
struct ObstacleComplementRegion {
  std::vector<Vec2> polygon;   // convex, counter-clockwise, inertial xy
  double inflation = 0.25;     // footprint radius [m]
  double frame_alpha = 0.0;    // reference pose anchoring the frame
  Vec2 frame_pos = Vec2::Zero();
  Vec4 box_lo = Vec4(-1.0, -3.0, -3.0, -3.0);
  Vec4 box_hi = Vec4(1.0, 3.0, 3.0, 3.0);

  Vec2 to_inertial_xy(const Vec4& z) const {
    const double c = std::cos(frame_alpha), sn = std::sin(frame_alpha);
    return Vec2(c * z[1] - sn * z[2] + frame_pos[0], sn * z[1] + c * z[2] + frame_pos[1]);
  }
  Vec4 from_inertial_xy(const Vec2& p, double alpha_R, double v_R) const {
    const double c = std::cos(frame_alpha), sn = std::sin(frame_alpha);
    const Vec2 d = p - frame_pos;
    return Vec4(alpha_R, c * d[0] + sn * d[1], -sn * d[0] + c * d[1], v_R);
  }
};

using Region = std::variant<BallRegion, BoxRegion, EllipsoidRegion, ObstacleComplementRegion>;

// --- convex polygon helpers (xy plane) ---

inline bool point_in_convex_polygon(const Vec2& p, const std::vector<Vec2>& poly) {
  const int n = static_cast<int>(poly.size());
  for (int i = 0; i < n; ++i) {
    const Vec2 a = poly[i], b = poly[(i + 1) % n];
    const Vec2 e = b - a, d = p - a;
    if (e[0] * d[1] - e[1] * d[0] < 0.0) return false;  // right of a CCW edge
  }
  return true;
}

inline double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = (len2 > 0.0) ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

// Signed distance to the polygon set: negative inside (depth to the nearest
// edge), positive outside.
inline double polygon_signed_distance(const Vec2& p, const std::vector<Vec2>& poly) {
  const int n = static_cast<int>(poly.size());
  double edge_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    edge_min = std::min(edge_min, point_segment_distance(p, poly[i], poly[(i + 1) % n]));
  }
  return point_in_convex_polygon(p, poly) ? -edge_min : edge_min;
}

// Point on the boundary of the polygon inflated by `radius`, parameterized by
// normalized arclength t in [0, 1): straight offset edges joined by corner
// arcs spanning the exterior angles.
inline Vec2 inflated_polygon_boundary_point(const std::vector<Vec2>& poly, double radius,
                                            double t) {
  const int n = static_cast<int>(poly.size());
  struct Piece {
    bool arc;
    Vec2 a, b;        // segment endpoints (if !arc)
    Vec2 center;      // arc data (if arc)
    double ang0, dang;
    double len;
  };
  std::vector<Piece> pieces;
  double total = 0.0;
  auto normal_angle = [](const Vec2& a, const Vec2& b) {
    const Vec2 e = b - a;
    return std::atan2(-e[0], e[1]);  // outward normal of a CCW edge
  };
  for (int i = 0; i < n; ++i) {
    const Vec2 a = poly[i], b = poly[(i + 1) % n], c = poly[(i + 2) % n];
    const double na = normal_angle(a, b);
    const Vec2 off(radius * std::cos(na), radius * std::sin(na));
    Piece seg{false, a + off, b + off, Vec2::Zero(), 0, 0, (b - a).norm()};
    pieces.push_back(seg);
    total += seg.len;
    double nb = normal_angle(b, c);
    double d = nb - na;
    while (d < 0) d += 2 * kPi;  // exterior turn of a convex CCW polygon
    Piece arc{true, Vec2::Zero(), Vec2::Zero(), b, na, d, radius * d};
    pieces.push_back(arc);
    total += arc.len;
  }
  double s = std::clamp(t, 0.0, 1.0 - 1e-15) * total;
  for (const Piece& pc : pieces) {
    if (pc.len <= 0.0) continue;
    if (s <= pc.len) {
      if (!pc.arc) {
        const double u = (pc.len > 0) ? s / pc.len : 0.0;
        return pc.a + u * (pc.b - pc.a);
      }
      const double ang = pc.ang0 + (s / radius);
      return pc.center + radius * Vec2(std::cos(ang), std::sin(ang));
    }
    s -= pc.len;
  }
  return pieces.back().arc ? pieces.back().center : pieces.back().b;  // unreachable
}

// --- region operations ---

inline bool region_contains(const Region& region, const Vec4& z, double tol = 0.0) {
  if (const auto* ball = std::get_if<BallRegion>(&region)) {
    return (z - ball->center).norm() <= ball->radius + tol;
  }
  if (const auto* box = std::get_if<BoxRegion>(&region)) {
    for (int i = 0; i < 4; ++i) {
      if (z[i] < box->lo[i] - tol || z[i] > box->hi[i] + tol) return false;
    }
    return true;
  }
  if (const auto* ell = std::get_if<EllipsoidRegion>(&region)) {
    return z.dot(ell->Q * z) <= ell->level + tol;
  }
  const auto& obs = std::get<ObstacleComplementRegion>(region);
  for (int i = 0; i < 4; ++i) {
    if (z[i] < obs.box_lo[i] - tol || z[i] > obs.box_hi[i] + tol) return false;
  }
  return polygon_signed_distance(obs.to_inertial_xy(z), obs.polygon) >= obs.inflation - tol;
}

struct Box4 {
  Vec4 lo, hi;
};

// Axis-aligned bounding box of the region (carrier box for sampling).
inline Box4 region_bounding_box(const Region& region) {
  if (const auto* ball = std::get_if<BallRegion>(&region)) {
    return {ball->center - Vec4::Constant(ball->radius),
            ball->center + Vec4::Constant(ball->radius)};
  }
  if (const auto* box = std::get_if<BoxRegion>(&region)) {
    return {box->lo, box->hi};
  }
  if (const auto* ell = std::get_if<EllipsoidRegion>(&region)) {
    const Mat4 Qinv = ell->Q.inverse();
    Vec4 half;
    for (int i = 0; i < 4; ++i) half[i] = std::sqrt(std::max(0.0, ell->level * Qinv(i, i)));
    return {-half, half};
  }
  const auto& obs = std::get<ObstacleComplementRegion>(region);
  return {obs.box_lo, obs.box_hi};
}

// Maps a point of the unit 4-cube onto the region boundary. The map is exact
// (points land within 1e-9 of the boundary); for the obstacle kind, carrier
// box faces covered by the inflated obstacle are rejected (nullopt).
inline std::optional<Vec4> region_boundary_point(const Region& region,
                                                 const std::array<double, 4>& u) {
  auto unit_sphere = [](const std::array<double, 4>& uu) {
    // Box-Muller: two uniform pairs -> four gaussians -> normalize.
    const double r1 = std::sqrt(-2.0 * std::log(std::max(uu[0], 1e-300)));
    const double r2 = std::sqrt(-2.0 * std::log(std::max(uu[2], 1e-300)));
    Vec4 g(r1 * std::cos(2 * kPi * uu[1]), r1 * std::sin(2 * kPi * uu[1]),
           r2 * std::cos(2 * kPi * uu[3]), r2 * std::sin(2 * kPi * uu[3]));
    const double n = g.norm();
    return (n > 0) ? Vec4(g / n) : Vec4(1, 0, 0, 0);
  };
  if (const auto* ball = std::get_if<BallRegion>(&region)) {
    return ball->center + ball->radius * unit_sphere(u);
  }
  if (const auto* box = std::get_if<BoxRegion>(&region)) {
    const Vec4 width = box->hi - box->lo;
    std::array<double, 8> area{};
    double total = 0.0;
    for (int f = 0; f < 8; ++f) {
      const int axis = f / 2;
      double a = 1.0;
      for (int j = 0; j < 4; ++j) {
        if (j != axis) a *= width[j];
      }
      area[f] = a;
      total += a;
    }
    double pick = u[0] * total;
    int face = 0;
    while (face < 7 && pick > area[face]) {
      pick -= area[face];
      ++face;
    }
    const int axis = face / 2;
    Vec4 z;
    z[axis] = (face % 2 == 0) ? box->lo[axis] : box->hi[axis];
    const std::array<double, 3> rest{u[1], u[2], u[3]};
    int k = 0;
    for (int j = 0; j < 4; ++j) {
      if (j == axis) continue;
      z[j] = box->lo[j] + rest[k++] * width[j];
    }
    return z;
  }
  if (const auto* ell = std::get_if<EllipsoidRegion>(&region)) {
    const Vec4 s = unit_sphere(u);
    const Eigen::LLT<Mat4> llt(ell->Q);
    // z = sqrt(level) * L^{-T} s satisfies z'Qz = level.
    const Vec4 z = llt.matrixU().solve(s);
    return Vec4(std::sqrt(ell->level) * z);
  }
  const auto& obs = std::get<ObstacleComplementRegion>(region);
  if (u[0] < 0.5) {
    // Inflated-obstacle ring, with the remaining coordinates spread over the
    // unconstrained deviation directions.
    const double t = u[0] * 2.0;
    const Vec2 p = inflated_polygon_boundary_point(obs.polygon, obs.inflation, t);
    const double alpha_R = obs.box_lo[0] + u[1] * (obs.box_hi[0] - obs.box_lo[0]);
    const double v_R = obs.box_lo[3] + u[2] * (obs.box_hi[3] - obs.box_lo[3]);
    const Vec4 z = obs.from_inertial_xy(p, alpha_R, v_R);
    if (z[1] < obs.box_lo[1] || z[1] > obs.box_hi[1] || z[2] < obs.box_lo[2] ||
        z[2] > obs.box_hi[2]) {
      return std::nullopt;
    }
    return z;
  }
  // Carrier box face, rejected if it lands inside the inflated obstacle.
  BoxRegion carrier{obs.box_lo, obs.box_hi};
  std::array<double, 4> uu{(u[0] - 0.5) * 2.0, u[1], u[2], u[3]};
  const auto z = region_boundary_point(Region(carrier), uu);
  if (!z) return std::nullopt;
  if (polygon_signed_distance(obs.to_inertial_xy(*z), obs.polygon) < obs.inflation) {
    return std::nullopt;
  }
  return z;
}

// Deterministic boundary sample set (seeded).
inline std::vector<Vec4> region_boundary_samples(const Region& region, int n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Vec4> out;
  out.reserve(n);
  int guard = 0;
  while (static_cast<int>(out.size()) < n && guard < 100 * n + 1000) {
    ++guard;
    const std::array<double, 4> u{uni(rng), uni(rng), uni(rng), uni(rng)};
    if (auto z = region_boundary_point(region, u)) out.push_back(*z);
  }
  return out;
}

// Uniform sample from the region interior by carrier-box rejection (seeded
// generator passed in so callers control reproducibility).
inline Vec4 region_interior_sample(const Region& region, std::mt19937_64& rng) {
  const Box4 bb = region_bounding_box(region);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int tries = 0; tries < 100000; ++tries) {
    Vec4 z;
    for (int i = 0; i < 4; ++i) z[i] = bb.lo[i] + uni(rng) * (bb.hi[i] - bb.lo[i]);
    if (region_contains(region, z)) return z;
  }
  throw std::runtime_error("region_interior_sample: rejection sampling failed");
}

// ---------------------------------------------------------------------------
// Scenario = segment + regions + input box.

struct RegionSpec {
  Region initial;                          // I
  Region goal;                             // G
  std::function<Region(double)> safe;      // S(theta)
  bool safe_is_constant = true;
  Region safe_constant;                    // valid if safe_is_constant

  static RegionSpec constant(Region I, Region G, Region S) {
    RegionSpec spec;
    spec.initial = std::move(I);
    spec.goal = std::move(G);
    spec.safe_constant = S;
    spec.safe_is_constant = true;
    spec.safe = [S](double) { return S; };
    return spec;
  }
};

struct ObstacleInfo {
  std::vector<Vec2> polygon;
  double inflation = 0.25;
};

struct Scenario {
  std::string id;
  ReferenceSegment segment;
  RegionSpec regions;
  InputPolytope inputs = InputPolytope::defaults();
  std::optional<ObstacleInfo> obstacle;  // set for obstacle scenarios (metrics)
};

namespace detail {

inline ReferenceSegment make_straight(const std::string& id, double x0, double x1,
                                      double speed) {
  ReferenceSegment seg;
  seg.id = id;
  seg.T = (x1 - x0) / speed;
  seg.state_fn = [x0, speed](double th) { return Vec4(-kPi / 2, x0 + speed * th, 0.0, speed); };
  seg.deriv_fn = [speed](double) { return Vec4(0.0, speed, 0.0, 0.0); };
  return seg;
}

inline ReferenceSegment make_circular(double radius, double speed) {
  ReferenceSegment seg;
  seg.id = "circular";
  const double rate = speed / radius;  // heading rate per unit theta
  seg.T = 2 * kPi / rate;              // one lap
  seg.state_fn = [radius, rate, speed](double th) {
    return Vec4(rate * th, radius * std::cos(rate * th), radius * std::sin(rate * th), speed);
  };
  seg.deriv_fn = [radius, rate](double th) {
    return Vec4(rate, -radius * rate * std::sin(rate * th), radius * rate * std::cos(rate * th),
                0.0);
  };
  return seg;
}

// Half of the ellipse x^2/4 + y^2 = 1, traversed counter-clockwise at
// constant parameter rate; `second` selects the (-2,0) -> (2,0) half. The
// exact tangent heading / induced speed are fitted per component by
// piecewise degree-5 polynomials (the published construction splits the oval
// into two fitted halves).
inline ReferenceSegment make_oval_half(bool second, double T_half = 2.4, int pieces = 24,
                                       int degree = 5) {
  const double off = second ? kPi : 0.0;
  const double rate = kPi / T_half;  // d(phi)/d(theta)
  auto alpha_exact = [off, rate](double th) {
    const double phi = off + rate * th;
    const double s = std::sin(phi), c = std::cos(phi);
    // Unwrapped heading of the tangent (atan2(2 s, c) lifted continuously).
    return phi + std::atan2(s * c, c * c + 2.0 * s * s);
  };
  auto x_exact = [off, rate](double th) { return 2.0 * std::cos(off + rate * th); };
  auto y_exact = [off, rate](double th) { return std::sin(off + rate * th); };
  auto v_exact = [off, rate](double th) {
    const double s = std::sin(off + rate * th);
    return rate * std::sqrt(1.0 + 3.0 * s * s);
  };

  auto polys = std::make_shared<std::array<PiecewisePoly, 4>>();
  (*polys)[0] = fit_chebyshev(alpha_exact, 0.0, T_half, pieces, degree);
  (*polys)[1] = fit_chebyshev(x_exact, 0.0, T_half, pieces, degree);
  (*polys)[2] = fit_chebyshev(y_exact, 0.0, T_half, pieces, degree);
  (*polys)[3] = fit_chebyshev(v_exact, 0.0, T_half, pieces, degree);

  ReferenceSegment seg;
  seg.id = second ? "oval-half-2" : "oval-half-1";
  seg.T = T_half;
  seg.state_fn = [polys](double th) {
    return Vec4((*polys)[0].eval(th), (*polys)[1].eval(th), (*polys)[2].eval(th),
                (*polys)[3].eval(th));
  };
  seg.deriv_fn = [polys](double th) {
    return Vec4((*polys)[0].deriv(th), (*polys)[1].deriv(th), (*polys)[2].deriv(th),
                (*polys)[3].deriv(th));
  };
  return seg;
}

inline std::vector<Vec2> square_polygon(double half_width) {
  return {Vec2(-half_width, -half_width), Vec2(half_width, -half_width),
          Vec2(half_width, half_width), Vec2(-half_width, half_width)};
}

// Swerve reference for the obstacle scenario: constant x-rate with an
// analytic Gaussian lateral bump, engaged 1.5 m before the obstacle.
inline ReferenceSegment make_obstacle_swerve(double amp = 1.1, double width = 1.15,
                                             double x_rate = 2.0, double x_span = 1.5) {
  ReferenceSegment seg;
  seg.id = "obstacle";
  seg.T = 2.0 * x_span / x_rate;
  const double w2 = width * width;
  auto bump = [amp, w2](double x) { return amp * std::exp(-x * x / w2); };
  auto bump_d = [amp, w2, bump](double x) { return -2.0 * x / w2 * bump(x); };
  auto bump_dd = [amp, w2, bump](double x) {
    return (4.0 * x * x / (w2 * w2) - 2.0 / w2) * bump(x);
  };
  seg.state_fn = [=](double th) {
    const double x = -x_span + x_rate * th;
    const double yx = bump_d(x);
    // Tangent (x_rate, x_rate*yx): alpha with sin(-a) ~ px', cos(a) ~ py'.
    const double alpha = std::atan2(-x_rate, x_rate * yx);
    const double v = x_rate * std::sqrt(1.0 + yx * yx);
    return Vec4(alpha, x, bump(x), v);
  };
  seg.deriv_fn = [=](double th) {
    const double x = -x_span + x_rate * th;
    const double yx = bump_d(x), yxx = bump_dd(x);
    // d/dth atan2(-a, a*yx) = -(-a)*(a*yxx*xdot)/(a^2 + a^2 yx^2).
    const double dalpha = yxx * x_rate / (1.0 + yx * yx);
    const double dv = x_rate * yx * yxx * x_rate / std::sqrt(1.0 + yx * yx);
    return Vec4(dalpha, x_rate, yx * x_rate, dv);
  };
  return seg;
}

}  // namespace detail

struct ScenarioParams {
  double circular_speed = kPi / 2;  // reference speed for the circular path
};

inline std::vector<std::string> catalog_ids() {
  return {"straight-4m",  "straight-8m", "restricted-velocity", "circular",
          "oval-half-1", "oval-half-2", "obstacle"};
}

// Builtin path-segment catalog. All regions are expressed in deviation
// coordinates (alpha_R, x_R, y_R, v_R).
inline Scenario make_scenario(const std::string& id, const ScenarioParams& params = {}) {
  const Region ball_half{BallRegion{Vec4::Zero(), 0.5}};
  const Region box_wide{BoxRegion{Vec4(-1, -1, -1, -3), Vec4(1, 1, 1, 3)}};
  const Region box_lap{BoxRegion{Vec4(-1, -3, -3, -3), Vec4(1, 3, 3, 3)}};

  Scenario sc;
  sc.id = id;
  sc.inputs = InputPolytope::defaults();
  if (id == "straight-4m") {
    sc.segment = detail::make_straight(id, -2.0, 2.0, 2.0);
    sc.regions = RegionSpec::constant(ball_half, ball_half, box_wide);
    return sc;
  }
  if (id == "straight-8m") {
    sc.segment = detail::make_straight(id, -4.0, 4.0, 2.0);
    sc.regions = RegionSpec::constant(ball_half, ball_half, box_wide);
    return sc;
  }
  if (id == "restricted-velocity") {
    sc.segment = detail::make_straight(id, -4.0, 4.0, 2.0);
    EllipsoidRegion tight;
    tight.Q = Vec4(4.0, 4.0, 4.0, 16.0).asDiagonal();
    tight.level = 1.0;
    const Region box_slow{BoxRegion{Vec4(-1, -1, -1, -0.5), Vec4(1, 1, 1, 0.5)}};
    sc.regions = RegionSpec::constant(Region{tight}, Region{tight}, box_slow);
    return sc;
  }
  if (id == "circular") {
    sc.segment = detail::make_circular(1.5, params.circular_speed);
    sc.regions = RegionSpec::constant(ball_half, ball_half, box_lap);
    return sc;
  }
  if (id == "oval-half-1" || id == "oval-half-2") {
    sc.segment = detail::make_oval_half(id == "oval-half-2");
    sc.regions = RegionSpec::constant(ball_half, ball_half, box_lap);
    return sc;
  }
  if (id == "obstacle") {
    sc.segment = detail::make_obstacle_swerve();
    sc.obstacle = ObstacleInfo{detail::square_polygon(0.15), 0.25};
    RegionSpec spec;
    spec.initial = Region{BallRegion{Vec4::Zero(), 0.25}};
    spec.goal = Region{BallRegion{Vec4::Zero(), 0.5}};  // relaxed goal
    spec.safe_is_constant = false;
    const auto seg = sc.segment;
    const auto obstacle = *sc.obstacle;
    spec.safe = [seg, obstacle](double th) {
      const Vec4 sr = seg.state_fn(std::clamp(th, 0.0, seg.T));
      ObstacleComplementRegion r;
      r.polygon = obstacle.polygon;
      r.inflation = obstacle.inflation;
      r.frame_alpha = sr[0];
      r.frame_pos = Vec2(sr[1], sr[2]);
      return Region{r};
    };
    spec.safe_constant = spec.safe(0.0);
    sc.regions = spec;
    return sc;
  }
  throw std::invalid_argument("make_scenario: unknown scenario id '" + id + "'");
}

}  // namespace funnel
