#include <doctest.h>

#include "support.hpp"
#include "tubeplan/sensitivity.hpp"
#include "tubeplan/solver.hpp"

using namespace tubeplan;
using testsupport::random_feasible_program;
using testsupport::random_matrix;
using testsupport::random_vector;

namespace {

ConicProgram bound_lp() {
    ConicProgram prog;
    prog.P = Matrix::Zero(1, 1);
    prog.q = Vector::Ones(1);
    prog.A = -Matrix::Ones(1, 1);
    prog.b = -Vector::Ones(1);
    prog.cones = ConeSpec::nonneg(1);
    return prog;
}

ConicProgram perturbed(const ConicProgram& prog, const DataDerivative& d, double t) {
    ConicProgram out = prog;
    out.P += t * d.dP;
    out.q += t * d.dq;
    out.A += t * d.dA;
    out.b += t * d.db;
    return out;
}

DataDerivative random_direction(std::mt19937_64& rng, int n, int m) {
    DataDerivative d;
    Matrix S = random_matrix(rng, n, n, 0.3);
    d.dP = S + S.transpose();
    d.dq = random_vector(rng, n, 0.5);
    d.dA = random_matrix(rng, m, n, 0.3);
    d.db = random_vector(rng, m, 0.5);
    return d;
}

}  // namespace

TEST_CASE("factor succeeds at an interior barrier point") {
    ConicSolution sol = solve(bound_lp(), 1e-2);
    REQUIRE(sol.status == SolveStatus::Solved);
    CHECK_NOTHROW(KktFactorization::factor(bound_lp(), sol));
}

TEST_CASE("factor refuses weakly complementary solutions") {
    ConicSolution degenerate;
    degenerate.x = Vector::Ones(1);
    degenerate.s = Vector::Zero(1);
    degenerate.z = Vector::Zero(1);
    degenerate.status = SolveStatus::Solved;
    ConicProgram lp = bound_lp();
    lp.q(0) = 0.0;  // vertex with zero multiplier
    CHECK_THROWS_AS(KktFactorization::factor(lp, degenerate), NumericalError);
}

TEST_CASE("factor rejects mismatched dimensions") {
    ConicSolution bad;
    bad.x = Vector::Zero(2);
    bad.s = Vector::Ones(1);
    bad.z = Vector::Ones(1);
    bad.status = SolveStatus::Solved;
    CHECK_THROWS_AS(KktFactorization::factor(bound_lp(), bad), std::invalid_argument);
}

TEST_CASE("identity map: moving the target moves the solution one-for-one") {
    // min 1/2 (x - theta)^2 as min 1/2 x^2 - theta x with a distant slack row.
    ConicProgram prog;
    prog.P = Matrix::Identity(1, 1);
    prog.q = -Vector::Ones(1);  // theta = 1
    prog.A = -Matrix::Ones(1, 1);
    prog.b = Vector::Ones(1) * 100.0;
    prog.cones = ConeSpec::nonneg(1);
    ConicSolution sol = solve(prog, 1e-3);
    REQUIRE(sol.status == SolveStatus::Solved);
    auto fact = KktFactorization::factor(prog, sol);
    DataDerivative d = DataDerivative::zero(1, 1);
    d.dq(0) = -1.0;  // d theta = +1
    SolutionDerivative sd = fact.d_solution_d_data(d);
    CHECK(sd.dx(0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("bound translation moves the barrier LP solution one-for-one") {
    ConicSolution sol = solve(bound_lp(), 1e-3);
    REQUIRE(sol.status == SolveStatus::Solved);
    auto fact = KktFactorization::factor(bound_lp(), sol);
    DataDerivative d = DataDerivative::zero(1, 1);
    d.db(0) = -1.0;  // bound x >= 1 shifts to x >= 2
    SolutionDerivative sd = fact.d_solution_d_data(d);
    CHECK(sd.dx(0) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("kappa derivative of the 1-D barrier LP is 1") {
    ConicSolution sol = solve(bound_lp(), 1e-3);
    REQUIRE(sol.status == SolveStatus::Solved);
    auto fact = KktFactorization::factor(bound_lp(), sol);
    SolutionDerivative sd = fact.d_solution_d_kappa();
    CHECK(sd.dx(0) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("kappa derivative vanishes without cones") {
    ConicProgram prog;
    prog.P = Matrix::Identity(2, 2);
    prog.q = -Vector::Ones(2);
    prog.A = Matrix::Zero(0, 2);
    prog.b = Vector(0);
    ConicSolution sol = solve(prog, 1e-3);
    REQUIRE(sol.status == SolveStatus::Solved);
    auto fact = KktFactorization::factor(prog, sol);
    SolutionDerivative sd = fact.d_solution_d_kappa();
    CHECK(sd.dx.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("data derivatives match central finite differences") {
    std::mt19937_64 rng(321);
    std::uniform_int_distribution<int> nd(2, 12), md(2, 12);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        int n = nd(rng), m = md(rng);
        ConicProgram prog = random_feasible_program(rng, n, m);
        double kappa = (trial % 2 == 0) ? 1e-3 : 1e-4;
        ConicSolution sol = solve(prog, kappa);
        REQUIRE(sol.status == SolveStatus::Solved);
        auto fact = KktFactorization::factor(prog, sol);
        DataDerivative d = random_direction(rng, n, m);
        SolutionDerivative sd = fact.d_solution_d_data(d);

        const double h = 1e-5;
        ConicSolution plus = solve(perturbed(prog, d, h), kappa);
        ConicSolution minus = solve(perturbed(prog, d, -h), kappa);
        if (plus.status != SolveStatus::Solved || minus.status != SolveStatus::Solved) continue;
        Vector fd_x = (plus.x - minus.x) / (2.0 * h);
        Vector fd_z = (plus.z - minus.z) / (2.0 * h);
        CHECK(testsupport::rel_error(sd.dx, fd_x) < 1e-5);
        CHECK(testsupport::rel_error(sd.dz, fd_z) < 1e-5);
        ++checked;
    }
    CHECK(checked >= 95);
}

TEST_CASE("kappa derivatives match central finite differences") {
    std::mt19937_64 rng(654);
    for (int trial = 0; trial < 30; ++trial) {
        ConicProgram prog = random_feasible_program(rng, 6, 8);
        double kappa = 1e-3;
        ConicSolution sol = solve(prog, kappa);
        REQUIRE(sol.status == SolveStatus::Solved);
        auto fact = KktFactorization::factor(prog, sol);
        SolutionDerivative sd = fact.d_solution_d_kappa();

        const double h = 1e-6;
        ConicSolution plus = solve(prog, kappa + h);
        ConicSolution minus = solve(prog, kappa - h);
        REQUIRE(plus.status == SolveStatus::Solved);
        REQUIRE(minus.status == SolveStatus::Solved);
        Vector fd_x = (plus.x - minus.x) / (2.0 * h);
        CHECK(testsupport::rel_error(sd.dx, fd_x) < 1e-5);
    }
}

TEST_CASE("derivatives are linear in the direction") {
    std::mt19937_64 rng(987);
    for (int trial = 0; trial < 20; ++trial) {
        ConicProgram prog = random_feasible_program(rng, 5, 7);
        ConicSolution sol = solve(prog, 1e-3);
        REQUIRE(sol.status == SolveStatus::Solved);
        auto fact = KktFactorization::factor(prog, sol);
        DataDerivative d1 = random_direction(rng, 5, 7);
        DataDerivative d2 = random_direction(rng, 5, 7);
        DataDerivative combo;
        combo.dP = 0.3 * d1.dP - 1.7 * d2.dP;
        combo.dq = 0.3 * d1.dq - 1.7 * d2.dq;
        combo.dA = 0.3 * d1.dA - 1.7 * d2.dA;
        combo.db = 0.3 * d1.db - 1.7 * d2.db;
        Vector lhs = fact.d_solution_d_data(combo).dx;
        Vector rhs = 0.3 * fact.d_solution_d_data(d1).dx - 1.7 * fact.d_solution_d_data(d2).dx;
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9 * std::max(1.0, rhs.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("mixed second derivative: zero direction gives zero") {
    std::mt19937_64 rng(111);
    ConicProgram prog = random_feasible_program(rng, 4, 5);
    ConicSolution sol = solve(prog, 1e-3);
    REQUIRE(sol.status == SolveStatus::Solved);
    auto fact = KktFactorization::factor(prog, sol);
    DataDerivative zero = DataDerivative::zero(4, 5);
    SolutionDerivative d_data = fact.d_solution_d_data(zero);
    SolutionDerivative d_kappa = fact.d_solution_d_kappa();
    SolutionDerivative d2 = fact.d2_solution_d_data_d_kappa(zero, d_data, d_kappa);
    CHECK(d2.dx.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mixed second derivative of the 1-D barrier LP in b is zero") {
    // x(b, kappa) = -b + kappa, so d^2 x / db dkappa = 0.
    ConicSolution sol = solve(bound_lp(), 1e-3);
    REQUIRE(sol.status == SolveStatus::Solved);
    auto fact = KktFactorization::factor(bound_lp(), sol);
    DataDerivative d = DataDerivative::zero(1, 1);
    d.db(0) = 1.0;
    SolutionDerivative d_data = fact.d_solution_d_data(d);
    SolutionDerivative d_kappa = fact.d_solution_d_kappa();
    SolutionDerivative d2 = fact.d2_solution_d_data_d_kappa(d, d_data, d_kappa);
    CHECK(std::abs(d2.dx(0)) < 1e-8);
}

TEST_CASE("mixed second derivatives match nested finite differences") {
    std::mt19937_64 rng(222);
    int checked = 0;
    for (int trial = 0; trial < 40; ++trial) {
        ConicProgram prog = random_feasible_program(rng, 5, 6);
        double kappa = (trial % 2 == 0) ? 1e-3 : 1e-4;
        ConicSolution sol = solve(prog, kappa);
        REQUIRE(sol.status == SolveStatus::Solved);
        auto fact = KktFactorization::factor(prog, sol);
        DataDerivative d = random_direction(rng, 5, 6);
        SolutionDerivative d_data = fact.d_solution_d_data(d);
        SolutionDerivative d_kappa = fact.d_solution_d_kappa();
        SolutionDerivative d2 = fact.d2_solution_d_data_d_kappa(d, d_data, d_kappa);

        const double ht = 1e-4;
        const double hk = kappa * 0.1;
        auto xat = [&](double t, double kap) {
            ConicSolution s = solve(perturbed(prog, d, t), kap);
            REQUIRE(s.status == SolveStatus::Solved);
            return s.x;
        };
        Vector fd = (xat(ht, kappa + hk) - xat(-ht, kappa + hk) - xat(ht, kappa - hk) +
                     xat(-ht, kappa - hk)) /
                    (4.0 * ht * hk);
        double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
        if ((d2.dx - fd).cwiseAbs().maxCoeff() / scale < 1e-2) ++checked;
        CHECK((d2.dx - fd).cwiseAbs().maxCoeff() / scale < 1e-2);
    }
    CHECK(checked >= 38);
}
