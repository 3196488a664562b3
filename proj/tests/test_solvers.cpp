#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <limits>
#include <random>

#include "doctest.h"
#include "quad/solvers/nlp.hpp"
#include "quad/solvers/qp.hpp"

using namespace quad;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

MatX random_spd(int n, std::mt19937& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  MatX L(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) L(i, j) = g(rng);
  return L * L.transpose() + 0.5 * MatX::Identity(n, n);
}

// brute-force oracle: enumerate active subsets of the inequalities and pick
// the best KKT-consistent feasible candidate
VecX active_set_oracle(const MatX& P, const VecX& q, const MatX& A, const VecX& b) {
  const int n = P.rows(), m = A.rows();
  double best = kInf;
  VecX best_x;
  for (int mask = 0; mask < (1 << m); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < m; ++i) {
      if (mask & (1 << i)) act.push_back(i);
    }
    const int ma = static_cast<int>(act.size());
    if (ma > n) continue;
    MatX K = MatX::Zero(n + ma, n + ma);
    K.topLeftCorner(n, n) = P;
    VecX rhs(n + ma);
    rhs.head(n) = -q;
    for (int k = 0; k < ma; ++k) {
      K.block(n + k, 0, 1, n) = A.row(act[k]);
      K.block(0, n + k, n, 1) = A.row(act[k]).transpose();
      rhs[n + k] = b[act[k]];
    }
    Eigen::FullPivLU<MatX> lu(K);
    if (!lu.isInvertible()) continue;
    VecX sol = lu.solve(rhs);
    VecX x = sol.head(n);
    VecX y = sol.tail(ma);
    if (((A * x - b).array() > 1e-9).any()) continue;
    if ((y.array() < -1e-9).any()) continue;
    const double obj = 0.5 * x.dot(P * x) + q.dot(x);
    if (obj < best) {
      best = obj;
      best_x = x;
    }
  }
  return best_x;
}

}  // namespace

TEST_CASE("qp projection onto an equality") {
  const int n = 4;
  QpProblem p;
  p.P = 2.0 * MatX::Identity(n, n);
  p.q = VecX::Zero(n);
  p.A = MatX::Zero(1, n);
  p.A(0, 0) = 1.0;
  p.lower = VecX::Constant(1, 1.0);
  p.upper = VecX::Constant(1, 1.0);
  auto res = solve_qp(p);
  CHECK(res.status == QpStatus::kOptimal);
  CHECK((res.x - Vec4(1, 0, 0, 0)).norm() < 1e-8);
}

TEST_CASE("qp matches exhaustive active-set enumeration") {
  std::mt19937 rng(1234);
  std::normal_distribution<double> g(0.0, 1.0);
  int solved = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 10, m = 6;
    QpProblem p;
    p.P = random_spd(n, rng);
    p.q = VecX::NullaryExpr(n, [&](int) { return g(rng); });
    p.A = MatX::NullaryExpr(m, n, [&](int, int) { return g(rng); });
    p.upper = VecX::NullaryExpr(m, [&](int) { return std::abs(g(rng)) + 0.1; });
    p.lower = VecX::Constant(m, -kInf);

    VecX x_ref = active_set_oracle(p.P, p.q, p.A, p.upper);
    REQUIRE(x_ref.size() == n);

    auto res = solve_qp(p);
    CHECK(res.status == QpStatus::kOptimal);
    CHECK((res.x - x_ref).cwiseAbs().maxCoeff() < 1e-6);
    // the returned objective can never beat a feasible oracle vertex
    CHECK(res.objective <=
          0.5 * x_ref.dot(p.P * x_ref) + p.q.dot(x_ref) + 1e-8);
    ++solved;
  }
  CHECK(solved == 100);
}

TEST_CASE("qp kkt residuals at the solution") {
  std::mt19937 rng(77);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 12, m = 8;
    QpProblem p;
    p.P = random_spd(n, rng);
    p.q = VecX::NullaryExpr(n, [&](int) { return g(rng); });
    p.A = MatX::NullaryExpr(m, n, [&](int, int) { return g(rng); });
    p.upper = VecX::NullaryExpr(m, [&](int) { return std::abs(g(rng)) + 0.1; });
    p.lower = VecX::Constant(m, -kInf);
    p.lower.head(2) = p.upper.head(2);  // two equality rows
    auto res = solve_qp(p);
    CHECK(res.status == QpStatus::kOptimal);
    CHECK(res.kkt_stationarity < 1e-6);
    CHECK(res.kkt_primal < 1e-6);
    CHECK(res.kkt_complementarity < 1e-6);
  }
}

TEST_CASE("qp detects contradictory equalities") {
  QpProblem p;
  p.P = MatX::Identity(2, 2);
  p.q = VecX::Zero(2);
  p.A = MatX::Zero(2, 2);
  p.A(0, 0) = 1.0;
  p.A(1, 0) = 1.0;
  p.lower = VecX::Zero(2);
  p.upper = VecX::Zero(2);
  p.lower[1] = 1.0;
  p.upper[1] = 1.0;
  auto res = solve_qp(p);
  CHECK(res.status == QpStatus::kInfeasible);
}

TEST_CASE("qp warm start and determinism") {
  std::mt19937 rng(5);
  QpProblem p;
  p.P = random_spd(8, rng);
  p.q = VecX::Ones(8);
  p.A = MatX::Identity(8, 8);
  p.lower = VecX::Constant(8, -0.1);
  p.upper = VecX::Constant(8, 0.1);
  auto a = solve_qp(p);
  auto b = solve_qp(p);
  CHECK((a.x - b.x).norm() == 0.0);
  QpWarmStart warm{a.x, a.y};
  auto c = solve_qp(p, {}, &warm);
  CHECK(c.status == QpStatus::kOptimal);
  CHECK((c.x - a.x).cwiseAbs().maxCoeff() < 1e-7);
  CHECK(c.iterations <= a.iterations);
}

namespace {

NlpProblem scalar_bound_problem() {
  NlpProblem p;
  p.n = 1;
  p.m = 0;
  p.lower = VecX::Constant(1, 3.0);
  p.upper = VecX::Constant(1, kInf);
  p.c_lower.resize(0);
  p.c_upper.resize(0);
  p.objective = [](const VecX& x) { return (x[0] - 2.0) * (x[0] - 2.0); };
  p.gradient = [](const VecX& x) {
    return VecX::Constant(1, 2.0 * (x[0] - 2.0)).eval();
  };
  p.constraints = [](const VecX&, VecX&) {};
  p.jacobian = [](const VecX&, SparseTriplets&) {};
  return p;
}

}  // namespace

TEST_CASE("nlp active variable bound") {
  NlpProblem p = scalar_bound_problem();
  auto res = solve_nlp(p, VecX::Constant(1, 10.0));
  CHECK(res.status == NlpStatus::kOptimal);
  CHECK(res.x[0] == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("nlp symmetric equality") {
  NlpProblem p;
  p.n = 2;
  p.m = 1;
  p.lower = VecX::Constant(2, -kInf);
  p.upper = VecX::Constant(2, kInf);
  p.c_lower = VecX::Constant(1, 1.0);
  p.c_upper = VecX::Constant(1, 1.0);
  p.objective = [](const VecX& x) { return x.squaredNorm(); };
  p.gradient = [](const VecX& x) { return (2.0 * x).eval(); };
  p.constraints = [](const VecX& x, VecX& c) { c[0] = x[0] + x[1]; };
  p.jacobian = [](const VecX&, SparseTriplets& t) {
    t.emplace_back(0, 0, 1.0);
    t.emplace_back(0, 1, 1.0);
  };
  auto res = solve_nlp(p, VecX::Zero(2));
  CHECK(res.status == NlpStatus::kOptimal);
  CHECK(res.x[0] == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(res.x[1] == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("nlp equality-constrained quadratic matches the kkt solve") {
  std::mt19937 rng(99);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 6, me = 2;
    const MatX Q = random_spd(n, rng);
    const VecX cvec = VecX::NullaryExpr(n, [&](int) { return g(rng); });
    const MatX E = MatX::NullaryExpr(me, n, [&](int, int) { return g(rng); });
    const VecX d = VecX::NullaryExpr(me, [&](int) { return g(rng); });

    // closed-form KKT oracle
    MatX K = MatX::Zero(n + me, n + me);
    K.topLeftCorner(n, n) = Q;
    K.topRightCorner(n, me) = E.transpose();
    K.bottomLeftCorner(me, n) = E;
    VecX rhs(n + me);
    rhs << -cvec, d;
    const VecX x_ref = K.fullPivLu().solve(rhs).head(n);

    NlpProblem p;
    p.n = n;
    p.m = me;
    p.lower = VecX::Constant(n, -kInf);
    p.upper = VecX::Constant(n, kInf);
    p.c_lower = d;
    p.c_upper = d;
    p.objective = [&](const VecX& x) { return 0.5 * x.dot(Q * x) + cvec.dot(x); };
    p.gradient = [&](const VecX& x) { return (Q * x + cvec).eval(); };
    p.constraints = [&](const VecX& x, VecX& c) { c = E * x; };
    p.jacobian = [&](const VecX&, SparseTriplets& t) {
      for (int i = 0; i < me; ++i)
        for (int j = 0; j < n; ++j) t.emplace_back(i, j, E(i, j));
    };
    NlpSettings s;
    s.tol_feas = 1e-9;
    s.tol_opt = 1e-9;
    s.mu0 = 1e4;
    auto res = solve_nlp(p, VecX::Zero(n), s);
    CHECK((res.x - x_ref).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(res.max_violation < 1e-9);

    // violation trace is non-increasing after the first outer iteration,
    // checked down to the requested feasibility tolerance
    for (size_t k = 2; k < res.violation_trace.size(); ++k) {
      if (res.violation_trace[k - 1] < 2.0 * s.tol_feas) break;
      CHECK(res.violation_trace[k] <= res.violation_trace[k - 1] + 1e-12);
    }
  }
}

TEST_CASE("nlp derivative checker flags bad rows") {
  NlpProblem p;
  p.n = 2;
  p.m = 2;
  p.lower = VecX::Constant(2, -kInf);
  p.upper = VecX::Constant(2, kInf);
  p.c_lower = VecX::Zero(2);
  p.c_upper = VecX::Zero(2);
  p.objective = [](const VecX& x) { return x.squaredNorm(); };
  p.gradient = [](const VecX& x) { return (2.0 * x).eval(); };
  p.constraints = [](const VecX& x, VecX& c) {
    c[0] = x[0] * x[1];
    c[1] = x[0] + x[1];
  };
  p.jacobian = [](const VecX& x, SparseTriplets& t) {
    t.emplace_back(0, 0, x[1]);
    t.emplace_back(0, 1, x[0]);
    t.emplace_back(1, 0, 1.0);
    t.emplace_back(1, 1, 5.0);  // wrong on purpose
  };
  VecX x(2);
  x << 0.7, -0.3;
  auto rep = check_derivatives(p, x);
  REQUIRE(rep.bad_rows.size() == 1);
  CHECK(rep.bad_rows[0] == 1);
  CHECK(rep.max_gradient_error < 1e-7);
}
