#pragma once
// Funnel candidates V(theta, b) = b' C b + c0 * theta over body deviations b,
// linear in the 11 free parameters (upper triangle of symmetric C, plus c0).
// Provides the parameter packing, the value / decrease functionals used to
// build linear constraints on those parameters, level-set helpers, and a
// serializable certificate record.

#include <cstdint>
#include <random>
#include <string>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "funnel/dynamics.hpp"
#include "funnel/reference.hpp"

namespace funnel {

inline constexpr int kFunnelParams = 11;
using ParamVec = Eigen::Matrix<double, kFunnelParams, 1>;

// Fixed thresholds shared by synthesis and verification. The band floor and
// decrease rate trade off against each other: every quadratic shape has band
// states where the gradient is orthogonal to all input directions, and there
// only the passive drift (which scales with the band-floor radius and the
// shape's off-diagonal couplings) can pay for the decrease. With I = G balls
// of radius 0.5 the level conditions pin the eigenvalues of C near 4*beta,
// capping the couplings, so beta_lower must sit high enough and lambda low
// enough that drift covers lambda + c0 * theta' at the band floor.
struct FunnelThresholds {
  double beta = 1.0;         // funnel boundary level (normalization)
  double beta_lower = 0.6;   // decrease band floor
  double lambda = 0.015;     // required decrease rate inside the band
};

struct FunnelCandidate {
  Mat4 C = Mat4::Identity();
  double c0 = 0.0;
  FunnelThresholds thresholds;

  double value(double theta, const Vec4& b) const { return b.dot(C * b) + c0 * theta; }
  Vec4 grad_b(const Vec4& b) const { return 2.0 * (C * b); }

  bool in_band(double v) const {
    return v >= thresholds.beta_lower && v <= thresholds.beta;
  }
};

// --- parameter packing: upper triangle of C row-major, then c0 ---

inline ParamVec params_from_candidate(const FunnelCandidate& f) {
  ParamVec p;
  int k = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = i; j < 4; ++j) p[k++] = f.C(i, j);
  }
  p[k] = f.c0;
  return p;
}

inline FunnelCandidate candidate_from_params(const ParamVec& p,
                                             const FunnelThresholds& thresholds = {}) {
  FunnelCandidate f;
  f.thresholds = thresholds;
  int k = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = i; j < 4; ++j) {
      f.C(i, j) = p[k];
      f.C(j, i) = p[k];
      ++k;
    }
  }
  f.c0 = p[k];
  return f;
}

// Coefficients a with a . p = V(theta, b) for the packed parameters.
inline ParamVec value_coefficients(double theta, const Vec4& b) {
  ParamVec a;
  int k = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = i; j < 4; ++j) a[k++] = (i == j) ? b[i] * b[i] : 2.0 * b[i] * b[j];
  }
  a[k] = theta;
  return a;
}

// Coefficients a with a . p = d/dt V along deviation rate bdot at timing rate
// u0 (the c0 slot picks up theta' = u0).
inline ParamVec decrease_coefficients(const Vec4& b, const Vec4& bdot, double u0) {
  ParamVec a;
  int k = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = i; j < 4; ++j) {
      a[k++] = (i == j) ? 2.0 * b[i] * bdot[i] : 2.0 * (b[i] * bdot[j] + b[j] * bdot[i]);
    }
  }
  a[k] = u0;
  return a;
}

// d/dt V as an affine function of the input v = (u0, w, thrust):
// returns (a, g) with Vdot = a + g . v at deviation b, parameter theta.
inline std::pair<double, Vec3> vdot_affine(const FunnelCandidate& f, const ReferenceSegment& seg,
                                           double theta, const Vec4& b) {
  Vec4 d0;
  Mat43 D;
  body_deviation_affine(BodyState::from_vec(b), seg, theta, &d0, &D);
  const Vec4 grad = f.grad_b(b);
  Vec3 g = D.transpose() * grad;
  g[0] += f.c0;  // theta' = u0 contributes c0 * u0
  return {grad.dot(d0), g};
}

// Worst-case decrease over the input box: min over admissible v of Vdot.
inline double vdot_box_min(const FunnelCandidate& f, const ReferenceSegment& seg, double theta,
                           const Vec4& b, const InputPolytope& inputs, Vec3* argmin = nullptr) {
  const auto [a, g] = vdot_affine(f, seg, theta, b);
  return inputs.minimize_affine(a, g, argmin);
}

// Smallest eigenvalue of C and its eigenvector (for positive-definiteness
// cuts on the shape matrix).
inline double min_eigen(const Mat4& C, Vec4* eigvec = nullptr) {
  const Eigen::SelfAdjointEigenSolver<Mat4> es(C);
  if (eigvec) *eigvec = es.eigenvectors().col(0);
  return es.eigenvalues()[0];
}

// Uniform sample from the sublevel set { b : b' C b <= level } (requires
// C positive definite). Used to seed runs from the funnel head.
inline Vec4 sublevel_sample(const Mat4& C, double level, std::mt19937_64& rng) {
  detail::require(level > 0.0, "sublevel_sample: level must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Vec4 g(normal(rng), normal(rng), normal(rng), normal(rng));
  const double n = g.norm();
  if (n < 1e-300) g = Vec4(1, 0, 0, 0);
  else g /= n;
  const double radius = std::pow(uni(rng), 0.25);  // uniform in the 4-ball
  const Eigen::LLT<Mat4> llt(C);
  detail::require(llt.info() == Eigen::Success, "sublevel_sample: C not positive definite");
  const Vec4 dir = llt.matrixU().solve(g);
  return std::sqrt(level) * radius * dir;
}

// ---------------------------------------------------------------------------
// Serializable certificate.

enum class TimingMode { kPathFollowing, kTimeTracking };

inline std::string to_string(TimingMode m) {
  return m == TimingMode::kPathFollowing ? "pf" : "tt";
}

inline TimingMode timing_mode_from_string(const std::string& s) {
  if (s == "pf") return TimingMode::kPathFollowing;
  if (s == "tt") return TimingMode::kTimeTracking;
  throw std::invalid_argument("timing mode must be 'pf' or 'tt', got '" + s + "'");
}

// Input box actually certified (TT pins u0 to 1).
inline InputPolytope input_box_for_mode(const InputPolytope& base, TimingMode mode) {
  return mode == TimingMode::kTimeTracking ? base.with_fixed_u0(1.0) : base;
}

struct Certificate {
  std::string scenario;
  TimingMode mode = TimingMode::kPathFollowing;
  FunnelCandidate funnel;
  InputPolytope inputs;
  uint64_t seed = 0;
  int learner_iterations = 0;
  long verify_budget = 0;
  bool verified = false;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "funnel-certificate/1";
    j["scenario"] = scenario;
    j["mode"] = to_string(mode);
    std::vector<double> c(16);
    for (int i = 0; i < 4; ++i) {
      for (int k = 0; k < 4; ++k) c[4 * i + k] = funnel.C(i, k);
    }
    j["C"] = c;
    j["c0"] = funnel.c0;
    j["beta"] = funnel.thresholds.beta;
    j["beta_lower"] = funnel.thresholds.beta_lower;
    j["lambda"] = funnel.thresholds.lambda;
    j["inputs"] = {{"u0_min", inputs.u0_min},         {"u0_max", inputs.u0_max},
                   {"gamma_min", inputs.gamma_min},   {"gamma_max", inputs.gamma_max},
                   {"thrust_min", inputs.thrust_min}, {"thrust_max", inputs.thrust_max},
                   {"wheelbase", inputs.wheelbase}};
    j["seed"] = seed;
    j["learner_iterations"] = learner_iterations;
    j["verify_budget"] = verify_budget;
    j["verified"] = verified;
    return j;
  }

  static Certificate from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != "funnel-certificate/1") {
      throw std::invalid_argument("certificate: missing or unknown format tag");
    }
    Certificate cert;
    cert.scenario = j.at("scenario").get<std::string>();
    cert.mode = timing_mode_from_string(j.at("mode").get<std::string>());
    const auto c = j.at("C").get<std::vector<double>>();
    if (c.size() != 16) throw std::invalid_argument("certificate: C must have 16 entries");
    for (int i = 0; i < 4; ++i) {
      for (int k = 0; k < 4; ++k) cert.funnel.C(i, k) = c[4 * i + k];
    }
    if ((cert.funnel.C - cert.funnel.C.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
      throw std::invalid_argument("certificate: C must be symmetric");
    }
    cert.funnel.c0 = j.at("c0").get<double>();
    cert.funnel.thresholds.beta = j.at("beta").get<double>();
    cert.funnel.thresholds.beta_lower = j.at("beta_lower").get<double>();
    cert.funnel.thresholds.lambda = j.at("lambda").get<double>();
    const auto& ji = j.at("inputs");
    cert.inputs.u0_min = ji.at("u0_min").get<double>();
    cert.inputs.u0_max = ji.at("u0_max").get<double>();
    cert.inputs.gamma_min = ji.at("gamma_min").get<double>();
    cert.inputs.gamma_max = ji.at("gamma_max").get<double>();
    cert.inputs.thrust_min = ji.at("thrust_min").get<double>();
    cert.inputs.thrust_max = ji.at("thrust_max").get<double>();
    cert.inputs.wheelbase = ji.at("wheelbase").get<double>();
    cert.seed = j.value("seed", uint64_t{0});
    cert.learner_iterations = j.value("learner_iterations", 0);
    cert.verify_budget = j.value("verify_budget", 0L);
    cert.verified = j.value("verified", false);
    return cert;
  }
};

}  // namespace funnel
