// Copyright 2026 The cdyn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CDYN_QP_SOLVER_HPP_
#define CDYN_QP_SOLVER_HPP_

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>

namespace cdyn {

/**
 * Small dense convex QP with one-sided inequality rows:
 *
 *   minimize    1/2 x^T P x + q^T x
 *   subject to  A x >= l
 *
 * with P positive definite. Multipliers y >= 0 follow the convention
 * P x + q - A^T y = 0.
 *
 * @tparam N number of variables
 * @tparam MaxRows upper bound on the number of rows
 */
template <int N, int MaxRows>
struct DenseQp {
  using VecN = Eigen::Matrix<double, N, 1>;
  using MatN = Eigen::Matrix<double, N, N>;
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, N, Eigen::RowMajor,
                               MaxRows, N>;
  using VecM = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, MaxRows, 1>;

  MatN P = MatN::Identity();
  VecN q = VecN::Zero();
  RowMat A{0, N};
  VecM l{0};

  int rows() const { return static_cast<int>(A.rows()); }
};

struct QpSettings {
  double rho = 10.0;
  double sigma = 1e-8;
  double alpha = 1.6;
  double tolerance = 1e-6;  // on the KKT residual, infinity norm
  int max_iterations = 4000;
  int check_interval = 10;        // residual check and polish attempt
  int refactor_interval = 50;     // rho adaptation (and refactorisation)
  int warm_passes = 4;            // active-set polish passes before ADMM
};

enum class QpStatus { kSolved, kMaxIterations };

template <int N, int MaxRows>
struct QpResult {
  typename DenseQp<N, MaxRows>::VecN x;
  typename DenseQp<N, MaxRows>::VecM y;
  QpStatus status = QpStatus::kMaxIterations;
  int iterations = 0;
  double kkt_residual = std::numeric_limits<double>::infinity();
  bool polished = false;
};

// Stationarity, primal and dual feasibility and complementarity, each in
// infinity norm; the maximum of the four.
template <int N, int MaxRows>
double kkt_residual(const DenseQp<N, MaxRows>& qp,
                    const typename DenseQp<N, MaxRows>::VecN& x,
                    const typename DenseQp<N, MaxRows>::VecM& y) {
  const auto m = qp.rows();
  double r = (qp.P * x + qp.q - qp.A.transpose() * y).cwiseAbs().maxCoeff();
  for (int i = 0; i < m; ++i) {
    const double slack = qp.A.row(i).dot(x) - qp.l[i];
    r = std::max(r, std::max(0.0, -slack));
    r = std::max(r, std::max(0.0, -y[i]));
    r = std::max(r, std::abs(y[i] * slack));
  }
  return r;
}

namespace internal {

// Lawson-Hanson non-negative least squares min |E w - f|, w >= 0, for a short
// wide E (N rows, at most MaxCols columns).
template <int N, int MaxCols>
Eigen::Matrix<double, Eigen::Dynamic, 1, 0, MaxCols, 1> nnls(
    const Eigen::Matrix<double, N, Eigen::Dynamic, 0, N, MaxCols>& E,
    const Eigen::Matrix<double, N, 1>& f) {
  using VecC = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, MaxCols, 1>;
  using Sub = Eigen::Matrix<double, N, Eigen::Dynamic, 0, N, MaxCols>;
  const int m = static_cast<int>(E.cols());
  VecC w = VecC::Zero(m);
  bool passive[MaxCols] = {};
  const double tol = 1e-12 * std::max(1.0, E.cwiseAbs().maxCoeff() *
                                               std::max(1.0, f.cwiseAbs().maxCoeff()));

  auto solve_passive = [&](VecC& s) {
    int k = 0;
    int idx[MaxCols];
    for (int j = 0; j < m; ++j)
      if (passive[j]) idx[k++] = j;
    Sub sub(N, k);
    for (int c = 0; c < k; ++c) sub.col(c) = E.col(idx[c]);
    const Eigen::Matrix<double, Eigen::Dynamic, 1, 0, MaxCols, 1> sol =
        sub.completeOrthogonalDecomposition().solve(f);
    s.setZero(m);
    for (int c = 0; c < k; ++c) s[idx[c]] = sol[c];
  };

  for (int outer = 0; outer < 3 * m + 3; ++outer) {
    const VecC grad = E.transpose() * (f - E * w);
    int best = -1;
    double best_val = tol;
    for (int j = 0; j < m; ++j)
      if (!passive[j] && grad[j] > best_val) {
        best_val = grad[j];
        best = j;
      }
    if (best < 0) break;
    passive[best] = true;
    VecC s;
    for (int inner = 0; inner < 3 * m + 3; ++inner) {
      solve_passive(s);
      double step = 1.0;
      bool clipped = false;
      for (int j = 0; j < m; ++j)
        if (passive[j] && s[j] <= 0.0) {
          const double a = w[j] / (w[j] - s[j]);
          if (a < step) step = a;
          clipped = true;
        }
      if (!clipped) break;
      w += step * (s - w);
      for (int j = 0; j < m; ++j)
        if (passive[j] && w[j] <= tol) {
          passive[j] = false;
          w[j] = 0.0;
        }
      s = w;
    }
    w = s.cwiseMax(0.0);
  }
  return w;
}

}  // namespace internal

/**
 * ADMM in the operator-splitting form (x, z = A x), with over-relaxation,
 * rho adapted on a fixed iteration schedule, and an active-set polish. The
 * polish first runs a few active-set passes starting from the rows violated
 * by the unconstrained minimum, then on every residual check whose ADMM
 * active set is new. It solves the
 * equality-constrained problem on those rows, recovers non-negative
 * multipliers by NNLS and is accepted only if the full KKT residual meets
 * the tolerance. Fully deterministic.
 */
template <int N, int MaxRows>
QpResult<N, MaxRows> solve_qp(const DenseQp<N, MaxRows>& qp,
                              const QpSettings& settings = {}) {
  using Qp = DenseQp<N, MaxRows>;
  using VecN = typename Qp::VecN;
  using MatN = typename Qp::MatN;
  using VecM = typename Qp::VecM;
  const int m = qp.rows();
  QpResult<N, MaxRows> res;

  const Eigen::LLT<MatN> p_llt(qp.P);
  VecN x = p_llt.solve(-qp.q);
  if (m == 0 || ((qp.A * x - qp.l).minCoeff() >= 0.0)) {
    res.x = x;
    res.y = VecM::Zero(m);
    res.status = QpStatus::kSolved;
    res.kkt_residual = kkt_residual(qp, res.x, res.y);
    return res;
  }

  const MatN L = p_llt.matrixL();
  // Equality-constrained solve on a candidate active set, in the whitened
  // coordinates u = L^T x.
  auto polish = [&](const bool* active, VecN& xo, VecM& yo) {
    int idx[MaxRows];
    int k = 0;
    for (int i = 0; i < m; ++i)
      if (active[i]) idx[k++] = i;
    const VecN c = L.template triangularView<Eigen::Lower>().solve(qp.q);
    VecN u = -c;
    yo = VecM::Zero(m);
    if (k > 0) {
      Eigen::Matrix<double, Eigen::Dynamic, N, 0, MaxRows, N> M(k, N);
      VecM b(k);
      for (int r = 0; r < k; ++r) {
        M.row(r) = L.template triangularView<Eigen::Lower>()
                       .solve(qp.A.row(idx[r]).transpose())
                       .transpose();
        b[r] = qp.l[idx[r]];
      }
      u += M.completeOrthogonalDecomposition().solve(b + M * c);
      const Eigen::Matrix<double, N, Eigen::Dynamic, 0, N, MaxRows> Mt =
          M.transpose();
      const VecN rhs = u + c;
      const auto w = internal::nnls<N, MaxRows>(Mt, rhs);
      for (int r = 0; r < k; ++r) yo[idx[r]] = w[r];
    }
    xo = L.transpose().template triangularView<Eigen::Upper>().solve(u);
  };

  double rho = settings.rho;
  const double sigma = settings.sigma;
  const double alpha = settings.alpha;
  const auto At = qp.A.transpose();
  auto factor = [&](double r) {
    MatN K = qp.P + sigma * MatN::Identity() + r * (At * qp.A);
    return Eigen::LLT<MatN>(K);
  };
  Eigen::LLT<MatN> kkt = factor(rho);

  // First guess: the rows the unconstrained minimum violates, refined by a
  // few primal-dual active-set passes.
  bool active[MaxRows];
  bool tried[MaxRows];
  for (int i = 0; i < m; ++i) active[i] = qp.A.row(i).dot(x) < qp.l[i];
  for (int pass = 0; pass < settings.warm_passes; ++pass) {
    VecN xp;
    VecM yp;
    polish(active, xp, yp);
    const double r_pol = kkt_residual(qp, xp, yp);
    if (r_pol <= settings.tolerance) {
      res.x = xp;
      res.y = yp;
      res.kkt_residual = r_pol;
      res.polished = true;
      res.status = QpStatus::kSolved;
      return res;
    }
    std::copy(active, active + m, tried);
    bool changed = false;
    for (int i = 0; i < m; ++i) {
      const double slack = qp.A.row(i).dot(xp) - qp.l[i];
      const bool next = active[i] ? yp[i] > 0.0 : slack < -settings.tolerance;
      changed = changed || next != active[i];
      active[i] = next;
    }
    if (!changed) break;
  }

  VecM z = (qp.A * x).cwiseMax(qp.l);
  VecM w = VecM::Zero(m);  // ADMM dual, equals -y at convergence

  for (int it = 1; it <= settings.max_iterations; ++it) {
    const VecN rhs = sigma * x - qp.q + At * (rho * z - w);
    const VecN xt = kkt.solve(rhs);
    const VecM zt = qp.A * xt;
    x = alpha * xt + (1.0 - alpha) * x;
    const VecM zr = alpha * zt + (1.0 - alpha) * z;
    const VecM z_new = (zr + w / rho).cwiseMax(qp.l);
    w += rho * (zr - z_new);
    z = z_new;

    if (it % settings.check_interval == 0 || it == settings.max_iterations) {
      const VecM y = (-w).cwiseMax(0.0);
      const double r_admm = kkt_residual(qp, x, y);
      bool same = true;
      for (int i = 0; i < m; ++i) {
        active[i] = (z[i] - qp.l[i]) < -w[i];
        same = same && active[i] == tried[i];
        tried[i] = active[i];
      }
      // A set that already failed is not re-polished.
      VecN xp = x;
      VecM yp = y;
      double r_pol = std::numeric_limits<double>::infinity();
      if (!same || it == settings.max_iterations) {
        polish(active, xp, yp);
        r_pol = kkt_residual(qp, xp, yp);
      }
      res.iterations = it;
      if (r_pol <= settings.tolerance && r_pol <= r_admm) {
        res.x = xp;
        res.y = yp;
        res.kkt_residual = r_pol;
        res.polished = true;
        res.status = QpStatus::kSolved;
        return res;
      }
      if (r_admm <= settings.tolerance) {
        res.x = x;
        res.y = y;
        res.kkt_residual = r_admm;
        res.status = QpStatus::kSolved;
        return res;
      }
      if (it == settings.max_iterations) {
        const bool use_pol = r_pol < r_admm;
        res.x = use_pol ? xp : x;
        res.y = use_pol ? yp : y;
        res.kkt_residual = std::min(r_pol, r_admm);
        return res;
      }
    }

    if (it % settings.refactor_interval == 0) {
      const double prim = (qp.A * x - z).cwiseAbs().maxCoeff();
      const double dual = (qp.P * x + qp.q + At * w).cwiseAbs().maxCoeff();
      const double prim_scale = std::max(
          {(qp.A * x).cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff(), 1e-12});
      const double dual_scale =
          std::max({(qp.P * x).cwiseAbs().maxCoeff(),
                    (At * w).cwiseAbs().maxCoeff(),
                    qp.q.cwiseAbs().maxCoeff(), 1e-12});
      if (prim > 0.0 && dual > 0.0) {
        double ratio = std::sqrt((prim / prim_scale) / (dual / dual_scale));
        ratio = std::clamp(ratio, 0.2, 5.0);
        if (ratio > 1.5 || ratio < 1.0 / 1.5) {
          rho = std::clamp(rho * ratio, 1e-6, 1e6);
          kkt = factor(rho);
        }
      }
    }
  }
  return res;
}

}  // namespace cdyn

#endif  // CDYN_QP_SOLVER_HPP_
