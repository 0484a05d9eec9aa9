#include "funnel/funnel_function.hpp"

#include <gtest/gtest.h>

#include <random>

namespace funnel {
namespace {

ParamVec random_params(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  ParamVec p;
  for (int k = 0; k < kFunnelParams; ++k) p[k] = normal(rng);
  return p;
}

TEST(Params, PackUnpackRoundTrip) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const ParamVec p = random_params(rng);
    const FunnelCandidate f = candidate_from_params(p);
    EXPECT_TRUE(f.C.isApprox(f.C.transpose()));
    EXPECT_LT((params_from_candidate(f) - p).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Params, ValueCoefficientsReproduceTheQuadratic) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const ParamVec p = random_params(rng);
    const FunnelCandidate f = candidate_from_params(p);
    const Vec4 b(uni(rng), uni(rng), uni(rng), uni(rng));
    const double theta = std::abs(uni(rng));
    const double via_coeffs = value_coefficients(theta, b).dot(p);
    EXPECT_NEAR(via_coeffs, f.value(theta, b), 1e-11);
  }
}

TEST(Params, DecreaseCoefficientsMatchChainRule) {
  // a . p for a = decrease_coefficients(b, bdot, u0) must equal
  // 2 b'C bdot + c0 u0 for every packed p.
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const ParamVec p = random_params(rng);
    const FunnelCandidate f = candidate_from_params(p);
    const Vec4 b(uni(rng), uni(rng), uni(rng), uni(rng));
    const Vec4 bdot(uni(rng), uni(rng), uni(rng), uni(rng));
    const double u0 = 0.2 + std::abs(uni(rng));
    const double via_coeffs = decrease_coefficients(b, bdot, u0).dot(p);
    const double direct = f.grad_b(b).dot(bdot) + f.c0 * u0;
    EXPECT_NEAR(via_coeffs, direct, 1e-10);
  }
}

TEST(Vdot, AffineFormMatchesDeviationField) {
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (const auto& id : {"circular", "obstacle", "straight-8m"}) {
    const Scenario sc = make_scenario(id);
    for (int trial = 0; trial < 50; ++trial) {
      const ParamVec p = random_params(rng);
      const FunnelCandidate f = candidate_from_params(p);
      const double theta = sc.segment.T * 0.5 * (uni(rng) + 1.0);
      const Vec4 b(uni(rng), uni(rng), uni(rng), uni(rng));
      const auto [a, g] = vdot_affine(f, sc.segment, theta, b);
      for (int k = 0; k < 5; ++k) {
        const Vec3 v(0.2 + std::abs(uni(rng)), 2 * uni(rng), 3 * uni(rng));
        const Vec4 bdot = body_deviation_field(BodyState::from_vec(b), sc.segment, theta, v);
        const double via_field = decrease_coefficients(b, bdot, v[0]).dot(p);
        EXPECT_NEAR(a + g.dot(v), via_field, 1e-9) << id;
      }
    }
  }
}

// Oracle: differentiate V(theta(t), b(t)) along an actual closed-loop
// trajectory by central differences.
TEST(Vdot, MatchesFiniteDifferenceOfValueAlongTrajectory) {
  std::mt19937_64 rng(45);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (const auto& id : {"circular", "obstacle"}) {
    const Scenario sc = make_scenario(id);
    for (int trial = 0; trial < 25; ++trial) {
      ParamVec p = random_params(rng);
      const FunnelCandidate f = candidate_from_params(p);
      const double th0 = sc.segment.T * (0.25 + 0.5 * 0.5 * (uni(rng) + 1.0));
      const BodyState b0{0.2 * uni(rng), 0.2 * uni(rng), 0.2 * uni(rng), 0.2 * uni(rng)};
      const InertialState s0 = to_inertial(b0, sc.segment, th0);
      const double u0 = 1.0 + 0.5 * uni(rng);
      const double gamma = 0.4 * uni(rng);
      const double thrust = 1.5 * uni(rng);
      const double w = std::tan(gamma) / sc.inputs.wheelbase;

      const double h = 1e-5;
      const auto inp = [&](double) { return ControlInput{u0, gamma, thrust}; };
      const Vec4 zp = integrate(s0, inp, h, h, sc.inputs.wheelbase).states.back().vec();
      const auto fdyn = [&](const Vec4& z) {
        return bicycle_vector_field(InertialState::from_vec(z), gamma, thrust,
                                    sc.inputs.wheelbase);
      };
      const Vec4 z0 = s0.vec();
      const Vec4 k1 = fdyn(z0);
      const Vec4 k2 = fdyn(z0 - 0.5 * h * k1);
      const Vec4 k3 = fdyn(z0 - 0.5 * h * k2);
      const Vec4 k4 = fdyn(z0 - h * k3);
      const Vec4 zm = z0 - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);

      const double vp = f.value(
          th0 + u0 * h, to_body(InertialState::from_vec(zp), sc.segment, th0 + u0 * h).vec());
      const double vm = f.value(
          th0 - u0 * h, to_body(InertialState::from_vec(zm), sc.segment, th0 - u0 * h).vec());
      const double fd = (vp - vm) / (2 * h);

      const auto [a, g] = vdot_affine(f, sc.segment, th0, b0.vec());
      EXPECT_NEAR(a + g.dot(Vec3(u0, w, thrust)), fd, 5e-4) << id << " trial " << trial;
    }
  }
}

TEST(Vdot, BoxMinimumMatchesVertexEnumeration) {
  std::mt19937_64 rng(46);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  const Scenario sc = make_scenario("straight-4m");
  for (const TimingMode mode : {TimingMode::kPathFollowing, TimingMode::kTimeTracking}) {
    const InputPolytope box = input_box_for_mode(sc.inputs, mode);
    const Vec3 lo = box.affine_lo(), hi = box.affine_hi();
    for (int trial = 0; trial < 200; ++trial) {
      const FunnelCandidate f = candidate_from_params(random_params(rng));
      const double theta = sc.segment.T * 0.5 * (uni(rng) + 1.0);
      const Vec4 b(uni(rng), uni(rng), uni(rng), uni(rng));
      Vec3 argmin;
      const double got = vdot_box_min(f, sc.segment, theta, b, box, &argmin);
      const auto [a, g] = vdot_affine(f, sc.segment, theta, b);
      double best = std::numeric_limits<double>::infinity();
      for (int mask = 0; mask < 8; ++mask) {
        Vec3 v;
        for (int k = 0; k < 3; ++k) v[k] = (mask >> k) & 1 ? hi[k] : lo[k];
        best = std::min(best, a + g.dot(v));
      }
      EXPECT_NEAR(got, best, 1e-10);
      EXPECT_NEAR(a + g.dot(argmin), got, 1e-10);
    }
  }
}

TEST(ShapeMatrix, MinEigenMatchesSolver) {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 100; ++trial) {
    const FunnelCandidate f = candidate_from_params(random_params(rng));
    Vec4 v;
    const double lam = min_eigen(f.C, &v);
    EXPECT_NEAR(v.norm(), 1.0, 1e-12);
    EXPECT_LT((f.C * v - lam * v).cwiseAbs().maxCoeff(), 1e-10);
    // Rayleigh quotient at random probes cannot go below the smallest one.
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (int k = 0; k < 10; ++k) {
      Vec4 q(uni(rng), uni(rng), uni(rng), uni(rng));
      q.normalize();
      EXPECT_GE(q.dot(f.C * q), lam - 1e-10);
    }
  }
}

TEST(LevelSets, SublevelSamplingStaysInside) {
  std::mt19937_64 rng(48);
  Mat4 A;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) A(i, j) = normal(rng);
  }
  const Mat4 C = A.transpose() * A + 0.5 * Mat4::Identity();
  double max_level = 0.0;
  for (int i = 0; i < 5000; ++i) {
    const Vec4 b = sublevel_sample(C, 0.8, rng);
    const double val = b.dot(C * b);
    EXPECT_LE(val, 0.8 + 1e-12);
    max_level = std::max(max_level, val);
  }
  EXPECT_GT(max_level, 0.7);  // boundary neighborhood is actually reached
  EXPECT_THROW(sublevel_sample(Mat4::Identity(), -1.0, rng), std::invalid_argument);
}

TEST(Certificates, JsonRoundTrip) {
  Certificate cert;
  cert.scenario = "straight-8m";
  cert.mode = TimingMode::kTimeTracking;
  cert.funnel.C << 3.8, 0.1, 0.0, 0.2, 0.1, 3.9, 0.05, 0.0, 0.0, 0.05, 3.7, 0.0, 0.2, 0.0, 0.0,
      3.6;
  cert.funnel.c0 = 0.03;
  cert.inputs = InputPolytope::defaults().with_fixed_u0(1.0);
  cert.seed = 1234;
  cert.learner_iterations = 57;
  cert.verify_budget = 100000;
  cert.verified = true;

  const auto j = cert.to_json();
  const Certificate back = Certificate::from_json(j);
  EXPECT_EQ(back.scenario, cert.scenario);
  EXPECT_EQ(back.mode, cert.mode);
  EXPECT_LT((back.funnel.C - cert.funnel.C).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_DOUBLE_EQ(back.funnel.c0, cert.funnel.c0);
  EXPECT_DOUBLE_EQ(back.inputs.u0_min, 1.0);
  EXPECT_DOUBLE_EQ(back.inputs.u0_max, 1.0);
  EXPECT_EQ(back.seed, cert.seed);
  EXPECT_EQ(back.learner_iterations, 57);
  EXPECT_TRUE(back.verified);
}

TEST(Certificates, JsonValidationRejectsMalformedInput) {
  Certificate cert;
  cert.scenario = "straight-4m";
  auto good = cert.to_json();
  EXPECT_NO_THROW(Certificate::from_json(good));

  auto bad_format = good;
  bad_format["format"] = "something-else";
  EXPECT_THROW(Certificate::from_json(bad_format), std::invalid_argument);

  auto missing = good;
  missing.erase("C");
  EXPECT_THROW(Certificate::from_json(missing), nlohmann::json::exception);

  auto short_c = good;
  short_c["C"] = std::vector<double>(7, 0.0);
  EXPECT_THROW(Certificate::from_json(short_c), std::invalid_argument);

  auto asym = good;
  {
    std::vector<double> c(16, 0.0);
    c[1] = 1.0;  // C(0,1) != C(1,0)
    for (int i = 0; i < 4; ++i) c[5 * i] = 1.0;
    asym["C"] = c;
  }
  EXPECT_THROW(Certificate::from_json(asym), std::invalid_argument);

  auto bad_mode = good;
  bad_mode["mode"] = "warp";
  EXPECT_THROW(Certificate::from_json(bad_mode), std::invalid_argument);
}

TEST(Modes, InputBoxPinning) {
  const InputPolytope base = InputPolytope::defaults();
  const InputPolytope pf = input_box_for_mode(base, TimingMode::kPathFollowing);
  const InputPolytope tt = input_box_for_mode(base, TimingMode::kTimeTracking);
  EXPECT_DOUBLE_EQ(pf.u0_min, 0.2);
  EXPECT_DOUBLE_EQ(pf.u0_max, 2.0);
  EXPECT_DOUBLE_EQ(tt.u0_min, 1.0);
  EXPECT_DOUBLE_EQ(tt.u0_max, 1.0);
  EXPECT_EQ(to_string(TimingMode::kPathFollowing), "pf");
  EXPECT_EQ(timing_mode_from_string("tt"), TimingMode::kTimeTracking);
  EXPECT_THROW(timing_mode_from_string("x"), std::invalid_argument);
}

}  // namespace
}  // namespace funnel
