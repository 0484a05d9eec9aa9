#pragma once
// Chebyshev-center linear program over an accumulated constraint set
// { p : a_i . p <= b_i }: maximize r subject to a_i . p + |a_i| r <= b_i.
// The optimum is the center (and radius) of the largest inscribed ball; a
// non-positive radius signals an empty (or lower-dimensional) polytope.
//
// Solved by a two-phase revised simplex on the dual (the primal always
// admits a feasible point by pushing r down, and the caller's parameter box
// rows keep it bounded). The basis is refactorized every iteration - the
// basis matrix is only (n+1) x (n+1).

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace funnel {

enum class LpStatus {
  kOptimal,           // center and radius are valid
  kNumericalFailure,  // singular basis or iteration cap hit
};

template <int N>
struct ChebyshevResult {
  LpStatus status = LpStatus::kNumericalFailure;
  Eigen::Matrix<double, N, 1> center = Eigen::Matrix<double, N, 1>::Zero();
  double radius = -std::numeric_limits<double>::infinity();
  int iterations = 0;
};

// Constraint accumulator. Rows are stored normalized (|a| = 1), which makes
// the ball-inflation coefficient exactly 1 for every row.
template <int N>
class ConstraintSet {
 public:
  using VecN = Eigen::Matrix<double, N, 1>;

  void add(const VecN& a, double b) {
    const double norm = a.norm();
    if (!(norm > 1e-12)) {
      throw std::invalid_argument("ConstraintSet: zero constraint row");
    }
    rows_.push_back(a / norm);
    rhs_.push_back(b / norm);
  }

  int size() const { return static_cast<int>(rows_.size()); }
  const VecN& row(int i) const { return rows_[i]; }
  double rhs(int i) const { return rhs_[i]; }

  // Most violated row at p (positive = violation), or -inf margin if empty.
  double max_violation(const VecN& p) const {
    double worst = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < size(); ++i) worst = std::max(worst, rows_[i].dot(p) - rhs_[i]);
    return worst;
  }

  ChebyshevResult<N> chebyshev_center(int max_iterations = 0) const;

 private:
  std::vector<VecN> rows_;
  std::vector<double> rhs_;
};

namespace detail {

// Revised primal simplex for min h.y s.t. M y = c, y >= 0, where M is
// built column-by-column (dim x m). Returns false on numerical failure.
// On success, `basis` holds an optimal basis and `pi` the dual multipliers
// M_B^{-T} h_B (which for our outer problem is the primal optimum).
template <int Dim>
class EqualityFormSimplex {
 public:
  using VecD = Eigen::Matrix<double, Dim, 1>;

  EqualityFormSimplex(int m, const std::function<VecD(int)>& column,
                      const std::function<double(int)>& cost)
      : m_(m), column_(column), cost_(cost) {}

  // Runs from the given initial basis (must be feasible: M_B^{-1} c >= 0).
  // `allowed(j)` filters candidate entering columns.
  bool minimize(std::vector<int>& basis, const VecD& c,
                const std::function<bool(int)>& allowed, int max_iterations, double tol,
                VecD* pi_out) {
    Eigen::Matrix<double, Dim, Dim> B;
    VecD xb;
    int stall = 0;
    double last_obj = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iterations; ++it) {
      for (int k = 0; k < Dim; ++k) B.col(k) = column_(basis[k]);
      const Eigen::PartialPivLU<Eigen::Matrix<double, Dim, Dim>> lu(B);
      xb = lu.solve(c);
      if (!xb.allFinite()) return false;

      VecD hb;
      for (int k = 0; k < Dim; ++k) hb[k] = cost_(basis[k]);
      const VecD pi = lu.transpose().solve(hb);
      const double obj = hb.dot(xb);
      // Bland's rule kicks in after the objective stalls, guaranteeing
      // termination under degeneracy; Dantzig pricing otherwise.
      const bool bland = stall > 40;
      if (obj < last_obj - 1e-13 * (1.0 + std::abs(last_obj))) {
        last_obj = obj;
        stall = 0;
      } else {
        ++stall;
      }

      int enter = -1;
      double best = -tol;
      for (int j = 0; j < m_; ++j) {
        if (!allowed(j)) continue;
        bool basic = false;
        for (int k = 0; k < Dim; ++k) {
          if (basis[k] == j) {
            basic = true;
            break;
          }
        }
        if (basic) continue;
        const double rc = cost_(j) - column_(j).dot(pi);
        if (rc < best) {
          if (bland) {
            enter = j;
            break;
          }
          best = rc;
          enter = j;
        }
      }
      if (enter < 0) {
        if (pi_out) *pi_out = pi;
        iterations_ = it;
        return true;
      }

      const VecD dir = lu.solve(column_(enter));
      int leave = -1;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (int k = 0; k < Dim; ++k) {
        if (dir[k] > 1e-11) {
          const double ratio = xb[k] / dir[k];
          if (ratio < best_ratio - 1e-12 ||
              (ratio < best_ratio + 1e-12 &&
               (leave < 0 || basis[k] < basis[leave]))) {
            best_ratio = ratio;
            leave = k;
          }
        }
      }
      if (leave < 0) return false;  // unbounded dual: numerically impossible here
      basis[leave] = enter;
    }
    return false;  // iteration cap
  }

  int iterations() const { return iterations_; }

 private:
  int m_;
  std::function<VecD(int)> column_;
  std::function<double(int)> cost_;
  int iterations_ = 0;
};

}  // namespace detail

template <int N>
ChebyshevResult<N> ConstraintSet<N>::chebyshev_center(int max_iterations) const {
  constexpr int Dim = N + 1;  // (p, r)
  using VecD = Eigen::Matrix<double, Dim, 1>;
  ChebyshevResult<N> out;
  const int m = size();
  if (m == 0) return out;
  if (max_iterations <= 0) max_iterations = 200 + 30 * m;

  // Dual: min b.y s.t. sum_i y_i (a_i, 1) = e_r, y >= 0.
  // Columns 0..m-1 are constraint rows; columns m..m+Dim-1 are the phase-1
  // artificials (+-unit vectors).
  VecD c = VecD::Zero();
  c[N] = 1.0;

  const auto column = [&](int j) -> VecD {
    if (j < m) {
      VecD col;
      col.template head<N>() = rows_[j];
      col[N] = 1.0;  // rows are normalized
      return col;
    }
    VecD col = VecD::Zero();
    const int k = j - m;
    col[k] = (c[k] >= 0.0) ? 1.0 : -1.0;
    return col;
  };

  // Phase 1: minimize the artificial mass.
  const auto cost1 = [&](int j) { return j < m ? 0.0 : 1.0; };
  detail::EqualityFormSimplex<Dim> phase1(m + Dim, column, cost1);
  std::vector<int> basis(Dim);
  for (int k = 0; k < Dim; ++k) basis[k] = m + k;
  VecD pi;
  if (!phase1.minimize(basis, c, [](int) { return true; }, max_iterations, 1e-10, &pi)) {
    return out;
  }
  // Check that the artificials vanished.
  {
    Eigen::Matrix<double, Dim, Dim> B;
    for (int k = 0; k < Dim; ++k) B.col(k) = column(basis[k]);
    const VecD xb = B.partialPivLu().solve(c);
    double artificial_mass = 0.0;
    for (int k = 0; k < Dim; ++k) {
      if (basis[k] >= m) artificial_mass += std::abs(xb[k]);
    }
    if (artificial_mass > 1e-7) return out;  // dual infeasible: should not happen
  }

  // Phase 2: minimize b.y, artificials barred from entering.
  const auto cost2 = [&](int j) { return j < m ? rhs_[j] : 0.0; };
  detail::EqualityFormSimplex<Dim> phase2(m + Dim, column, cost2);
  if (!phase2.minimize(basis, c, [&](int j) { return j < m; }, max_iterations, 1e-10, &pi)) {
    return out;
  }

  out.status = LpStatus::kOptimal;
  out.center = pi.template head<N>();
  out.radius = pi[N];
  out.iterations = phase2.iterations();
  return out;
}

}  // namespace funnel
