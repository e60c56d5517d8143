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

#include <random>

#include <gtest/gtest.h>

#include "cdyn/qp_solver.hpp"
#include "test_util.hpp"

namespace cdyn {
namespace {

using Qp = DenseQp<3, 16>;

Qp random_qp(std::mt19937_64& rng, int rows) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.2, 2.0);
  Qp qp;
  Eigen::Matrix3d B;
  for (int i = 0; i < 9; ++i) B(i) = n(rng);
  qp.P = B * B.transpose() + u(rng) * Eigen::Matrix3d::Identity();
  for (int i = 0; i < 3; ++i) qp.q[i] = n(rng);
  qp.A.resize(rows, 3);
  qp.l.resize(rows);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < 3; ++c) qp.A(r, c) = n(rng);
    qp.l[r] = 0.5 * n(rng);
  }
  return qp;
}

double objective(const Qp& qp, const Qp::VecN& x) {
  return 0.5 * x.dot(qp.P * x) + qp.q.dot(x);
}

testing_util::BruteResult brute(const Qp& qp) {
  return testing_util::brute_force_qp(qp.P, qp.q, qp.A, qp.l);
}

TEST(SolveQp, UnconstrainedMinimum) {
  Qp qp;
  qp.P = Eigen::Vector3d(2.0, 4.0, 1.0).asDiagonal();
  qp.q = {-2.0, 4.0, 0.5};
  const auto res = solve_qp(qp);
  EXPECT_EQ(res.status, QpStatus::kSolved);
  EXPECT_NEAR(res.x[0], 1.0, 1e-14);
  EXPECT_NEAR(res.x[1], -1.0, 1e-14);
  EXPECT_NEAR(res.x[2], -0.5, 1e-14);
  EXPECT_EQ(res.y.size(), 0);
}

TEST(SolveQp, SingleActiveBound) {
  // min 1/2 |x|^2 - 3 x0  s.t. -x0 >= -1  ->  x0 = 1, y = 2.
  Qp qp;
  qp.P.setIdentity();
  qp.q = {-3.0, 0.0, 0.0};
  qp.A.resize(1, 3);
  qp.A << -1.0, 0.0, 0.0;
  qp.l.resize(1);
  qp.l << -1.0;
  const auto res = solve_qp(qp);
  ASSERT_EQ(res.status, QpStatus::kSolved);
  EXPECT_NEAR(res.x[0], 1.0, 1e-8);
  EXPECT_NEAR(res.y[0], 2.0, 1e-8);
  EXPECT_LE(res.kkt_residual, 1e-6);
}

TEST(SolveQp, DuplicateRowsSplitMultiplier) {
  // Two identical rows, the degenerate case of zero friction.
  Qp qp;
  qp.P.setIdentity();
  qp.q = {0.0, 2.0, 0.0};
  qp.A.resize(2, 3);
  qp.A << 0.0, 1.0, 0.0, 0.0, 1.0, 0.0;
  qp.l.resize(2);
  qp.l << 0.0, 0.0;
  const auto res = solve_qp(qp);
  ASSERT_EQ(res.status, QpStatus::kSolved);
  EXPECT_NEAR(res.x[1], 0.0, 1e-8);
  EXPECT_NEAR(res.y[0] + res.y[1], 2.0, 1e-8);
  EXPECT_LE(res.kkt_residual, 1e-6);
}

TEST(SolveQp, MatchesActiveSetEnumeration) {
  std::mt19937_64 rng(42);
  int compared = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const int rows = 1 + trial % 4;
    const Qp qp = random_qp(rng, rows);
    const auto oracle = brute(qp);
    if (!oracle.found) continue;  // infeasible draw
    const auto res = solve_qp(qp);
    ASSERT_EQ(res.status, QpStatus::kSolved) << trial;
    EXPECT_LE(res.kkt_residual, 1e-6) << trial;
    EXPECT_NEAR(objective(qp, res.x), oracle.objective, 1e-5) << trial;
    EXPECT_LE((res.x - oracle.x).cwiseAbs().maxCoeff(), 1e-5) << trial;
    ++compared;
  }
  EXPECT_GT(compared, 300);
}

TEST(SolveQp, ResidualDefinition) {
  Qp qp;
  qp.P.setIdentity();
  qp.A.resize(1, 3);
  qp.A << 1.0, 0.0, 0.0;
  qp.l.resize(1);
  qp.l << 1.0;
  Qp::VecN x(0.5, 0.0, 0.0);
  Qp::VecM y(1);
  y << 0.5;
  // stationarity 0, infeasibility 0.5, complementarity 0.25
  EXPECT_DOUBLE_EQ(kkt_residual(qp, x, y), 0.5);
}

TEST(SolveQp, IsDeterministic) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    const Qp qp = random_qp(rng, 4);
    const auto a = solve_qp(qp), b = solve_qp(qp);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.y, b.y);
    EXPECT_EQ(a.iterations, b.iterations);
  }
}

TEST(Nnls, RecoversNonNegativeSolution) {
  Eigen::Matrix<double, 3, Eigen::Dynamic, 0, 3, 16> E(3, 2);
  E << 1, 0, 0, 1, 0, 0;
  const Eigen::Vector3d f(2.0, -1.0, 0.0);
  const auto w = internal::nnls<3, 16>(E, f);
  EXPECT_NEAR(w[0], 2.0, 1e-12);
  EXPECT_NEAR(w[1], 0.0, 1e-12);
}

}  // namespace
}  // namespace cdyn
