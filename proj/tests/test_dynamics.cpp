#include <doctest.h>

#include "oracles.hpp"
#include "support.hpp"
#include "tubeplan/dynamics.hpp"

using namespace tubeplan;
using oracles::pusher1d_model;

namespace {

State st(double xa, double xo) {
    State s;
    s.x_a = Vector::Constant(1, xa);
    s.x_o = Vector::Constant(1, xo);
    return s;
}

Vector u1(double u) { return Vector::Constant(1, u); }

// Planar point pusher (2 actuated dofs) against a disc slider (3 object dofs).
MechanicalModel planar_disc_model(double mu = 0.5) {
    MechanicalModel m;
    m.dim = 2;
    m.n_a = 2;
    m.n_o = 3;
    m.K_a = 100.0 * Matrix::Identity(2, 2);
    m.M_o = Matrix::Zero(3, 3);
    m.M_o.diagonal() << 1.0, 1.0, 0.01;
    m.dt = 0.1;
    m.kappa_dyn = 1e-3;
    m.shapes.push_back({Sphere{0.05}, Body::actuated(0)});
    m.shapes.push_back({Sphere{0.15}, Body::object()});
    m.contacts.push_back({0, 1, mu, 2});
    return m;
}

State planar_state(double ax, double ay, double ox, double oy, double th) {
    State s;
    s.x_a = Vector(2);
    s.x_a << ax, ay;
    s.x_o = Vector(3);
    s.x_o << ox, oy, th;
    return s;
}

}  // namespace

TEST_CASE("assembled pusher program matches the block closed form") {
    MechanicalModel m = pusher1d_model();
    ConicProgram prog = assemble_program(m, st(0.0, 1.0), u1(0.3), 0.0);
    CHECK(prog.P(0, 0) == doctest::Approx(100.0));
    CHECK(prog.P(1, 1) == doctest::Approx(100.0));
    CHECK(prog.P(0, 1) == doctest::Approx(0.0));
    CHECK(prog.q(0) == doctest::Approx(-100.0 * 0.3));
    CHECK(prog.q(1) == doctest::Approx(-100.0 * 1.0));
    REQUIRE(prog.cones.blocks().size() == 1);
    CHECK(prog.cones.blocks()[0].kind == ConeKind::Nonneg);
}

TEST_CASE("no contacts: unconstrained quasidynamic step") {
    MechanicalModel m = pusher1d_model();
    m.contacts.clear();
    StepResult r = step_true(m, st(0.2, 1.0), u1(0.7));
    CHECK(r.x_next.x_a(0) == doctest::Approx(0.7).epsilon(1e-9));
    CHECK(r.x_next.x_o(0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("separated pusher stays put") {
    MechanicalModel m = pusher1d_model();
    StepResult r = step_true(m, st(0.0, 1.0), u1(0.0));
    CHECK(r.x_next.x_a(0) == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(r.x_next.x_o(0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(r.lambdas[0](0) == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("active contact matches the 2x2 elimination") {
    MechanicalModel m = pusher1d_model();
    StepResult r = step_true(m, st(0.0, 1.0), u1(1.5));
    CHECK(r.x_next.x_a(0) == doctest::Approx(1.2).epsilon(1e-7));
    CHECK(r.x_next.x_o(0) == doctest::Approx(1.3).epsilon(1e-7));
    CHECK(r.lambdas[0](0) == doctest::Approx(30.0).epsilon(1e-6));
}

TEST_CASE("true step tracks the active-set oracle over a grid") {
    MechanicalModel m = pusher1d_model();
    for (double u = -0.5; u <= 1.6; u += 0.07) {
        StepResult r = step_true(m, st(0.0, 1.0), u1(u));
        auto o = oracles::pusher1d_true(m, 0.0, 1.0, u);
        // the solver's vertex sits at the kappa floor, sqrt(kappa)-close at grazing
        CHECK(std::abs(r.x_next.x_a(0) - o.xa_next) < 5e-6);
        CHECK(std::abs(r.x_next.x_o(0) - o.xo_next) < 5e-6);
        CHECK(std::abs(r.lambdas[0](0) - o.lambda) < 5e-4);
    }
}

TEST_CASE("smoothed step matches the scalar barrier closed form") {
    MechanicalModel m = pusher1d_model();
    for (double u : {-0.3, 0.5, 0.85, 0.9, 0.95, 1.2}) {
        StepResult r = step_smoothed(m, st(0.0, 1.0), u1(u), 1e-3);
        auto o = oracles::pusher1d_smoothed(m, 0.0, 1.0, u, 1e-3);
        CHECK(std::abs(r.x_next.x_a(0) - o.xa_next) < 1e-9);
        CHECK(std::abs(r.x_next.x_o(0) - o.xo_next) < 1e-9);
        CHECK(std::abs(r.lambdas[0](0) - o.lambda) < 1e-7);
    }
}

TEST_CASE("force at a distance and far-field agreement") {
    MechanicalModel m = pusher1d_model();
    // grazing: positive force before touch
    StepResult graze = step_smoothed(m, st(0.0, 0.1), u1(0.0), 1e-3);
    CHECK(graze.lambdas[0](0) > 0.1);
    CHECK(graze.x_next.x_o(0) > 0.1);
    // far separation: smoothed matches true to 1e-6
    StepResult far_s = step_smoothed(m, st(0.0, 20.0), u1(0.0), 1e-3);
    StepResult far_t = step_true(m, st(0.0, 20.0), u1(0.0));
    CHECK(std::abs(far_s.x_next.x_o(0) - far_t.x_next.x_o(0)) < 1e-6);
    CHECK(std::abs(far_s.x_next.x_a(0) - far_t.x_next.x_a(0)) < 1e-6);
}

TEST_CASE("smoothed step converges to the true step as kappa drops") {
    MechanicalModel m = pusher1d_model();
    StepResult truth = step_true(m, st(0.0, 0.1), u1(0.0));
    double prev = std::numeric_limits<double>::infinity();
    for (double kappa : {1e-2, 1e-4, 1e-6, 1e-8, 1e-10}) {
        StepResult r = step_smoothed(m, st(0.0, 0.1), u1(0.0), kappa);
        double err = (r.x_next.full() - truth.x_next.full()).cwiseAbs().maxCoeff();
        CHECK(err < prev + 1e-12);
        prev = err;
    }
    CHECK(prev < 1e-6);
}

TEST_CASE("quasidynamic identity at rest") {
    MechanicalModel m = pusher1d_model();
    StepResult r = step_true(m, st(0.3, 0.8), u1(0.3));
    CHECK(std::abs(r.x_next.x_a(0) - 0.3) < 1e-9);
    CHECK(std::abs(r.x_next.x_o(0) - 0.8) < 1e-9);
}

TEST_CASE("true-step complementarity holds across random states") {
    MechanicalModel m = pusher1d_model();
    std::mt19937_64 rng(5150);
    std::uniform_real_distribution<double> pos(-0.5, 0.8), upos(-0.5, 1.2);
    for (int trial = 0; trial < 1000; ++trial) {
        double xa = pos(rng), xo = xa + 0.02 + std::abs(pos(rng));
        StepResult r = step_true(m, st(xa, xo), u1(upos(rng)));
        double nu_n = r.nus[0](0);
        double lam_n = r.lambdas[0](0);
        CHECK(nu_n >= -1e-8);
        CHECK(lam_n >= -1e-8);
        CHECK(nu_n * lam_n <= 1e-8);
    }
}

TEST_CASE("planar frictional step agrees with mode enumeration") {
    MechanicalModel m = planar_disc_model();
    std::mt19937_64 rng(808);
    std::uniform_real_distribution<double> du(-0.25, 0.25);
    int stick = 0, slide = 0, separate = 0;
    for (int trial = 0; trial < 120; ++trial) {
        // finger left of the disc, random approach and tangential drive
        State x = planar_state(-0.21 + du(rng) * 0.1, du(rng) * 0.05, 0.0, 0.0, du(rng));
        Vector u(2);
        u << x.x_a(0) + du(rng), x.x_a(1) + du(rng);
        StepResult r = step_true(m, x, u);

        // geometry rebuilt from first principles (disc contact)
        Vector ca = x.x_a, co = x.x_o.head(2);
        Vector d = ca - co;
        double dist = d.norm();
        Vector n = d / dist;
        Vector t(2);
        t << -n(1), n(0);
        double phi = dist - 0.05 - 0.15;
        Matrix J = Matrix::Zero(2, 5);
        J.block(0, 0, 1, 2) = n.transpose();
        J.block(0, 2, 1, 2) = -n.transpose();
        J.block(1, 0, 1, 2) = t.transpose();
        J.block(1, 2, 1, 2) = -t.transpose();
        J(1, 4) = -0.15;  // tangential lever of the contact point on the disc
        ConicProgram prog = assemble_program(m, x, u, 0.0);
        auto mode = oracles::planar_mode_step(prog.P, prog.q, J, phi, 0.5, x.full());
        REQUIRE(mode.has_value());
        CHECK((r.x_next.full() - mode->x_next).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((r.lambdas[0] - mode->lambda).cwiseAbs().maxCoeff() < 2e-5);
        if (std::string(mode->mode) == "stick") ++stick;
        else if (std::string(mode->mode) == "separate") ++separate;
        else ++slide;
    }
    // the sweep exercises all regimes
    CHECK(stick > 0);
    CHECK(slide > 0);
    CHECK(separate > 0);
}

TEST_CASE("sticking contact resists a small tangential drive") {
    MechanicalModel m = planar_disc_model();
    // finger pressing into the disc from the left, driving slightly upward
    State x = planar_state(-0.195, 0.0, 0.0, 0.0, 0.0);
    Vector u(2);
    u << -0.19, 0.004;
    StepResult r = step_true(m, x, u);
    CHECK(r.lambdas[0](0) > 0.0);
    CHECK(std::abs(r.lambdas[0](1)) < 0.5 * r.lambdas[0](0) + 1e-9);
    CHECK(r.nus[0].norm() < 1e-6);  // no contact-point slip
}

TEST_CASE("planar slider cone block is scaled by 1/mu") {
    MechanicalModel m = planar_disc_model(0.5);
    State x = planar_state(-0.21, 0.0, 0.0, 0.0, 0.0);
    ConicProgram prog = assemble_program(m, x, Vector::Zero(2), 0.0);
    REQUIRE(prog.cones.blocks().size() == 1);
    CHECK(prog.cones.blocks()[0].kind == ConeKind::SecondOrder);
    CHECK(prog.cones.blocks()[0].dim == 2);
    StepResult r = step_true(m, x, Vector::Zero(2));
    CHECK(in_friction_cone(0.5, r.lambdas[0]));
    CHECK(in_dual_friction_cone(0.5, r.nus[0]));
}

TEST_CASE("linearization in the no-contact region is the free dynamics") {
    MechanicalModel m = pusher1d_model();
    Linearization lin = linearize(m, st(0.0, 20.0), u1(0.0), 1e-3);
    CHECK(std::abs(lin.A(0, 0)) < 1e-3);
    CHECK(std::abs(lin.A(1, 1) - 1.0) < 1e-3);
    CHECK(std::abs(lin.B(0, 0) - 1.0) < 1e-3);
    CHECK(std::abs(lin.B(1, 0)) < 1e-3);
}

TEST_CASE("smoothed object gradient is positive everywhere") {
    MechanicalModel m = pusher1d_model();
    for (double u = -0.5; u <= 1.5; u += 0.1) {
        Linearization lin = linearize(m, st(0.0, 1.0), u1(u), 1e-3);
        CHECK(lin.B(1, 0) > 0.0);
    }
}

TEST_CASE("linearization matches finite differences on random planar states") {
    MechanicalModel m = planar_disc_model();
    std::mt19937_64 rng(2718);
    std::uniform_real_distribution<double> du(-0.08, 0.08);
    const double kappa = 1e-3;
    int checked = 0;
    for (int trial = 0; trial < 50; ++trial) {
        State x = planar_state(-0.22 + du(rng), du(rng), 0.0, 0.0, du(rng));
        Vector u(2);
        u << x.x_a(0) + du(rng), x.x_a(1) + du(rng);
        Linearization lin = linearize(m, x, u, kappa);
        const double h = 1e-6;
        Matrix Afd(5, 5), Bfd(5, 2);
        for (int j = 0; j < 5; ++j) {
            Vector xp = x.full(), xm = x.full();
            xp(j) += h;
            xm(j) -= h;
            Afd.col(j) = (step_smoothed(m, State::from_full(xp, 2), u, kappa).x_next.full() -
                          step_smoothed(m, State::from_full(xm, 2), u, kappa).x_next.full()) /
                         (2 * h);
        }
        for (int j = 0; j < 2; ++j) {
            Vector up = u, um = u;
            up(j) += h;
            um(j) -= h;
            Bfd.col(j) = (step_smoothed(m, x, up, kappa).x_next.full() -
                          step_smoothed(m, x, um, kappa).x_next.full()) /
                         (2 * h);
        }
        double errA = (lin.A - Afd).cwiseAbs().maxCoeff() /
                      std::max(1.0, Afd.cwiseAbs().maxCoeff());
        double errB = (lin.B - Bfd).cwiseAbs().maxCoeff() /
                      std::max(1.0, Bfd.cwiseAbs().maxCoeff());
        CHECK(errA < 1e-4);
        CHECK(errB < 1e-4);
        ++checked;
    }
    CHECK(checked == 50);
}

TEST_CASE("deviation columns vanish far outside the smoothing range") {
    MechanicalModel m = pusher1d_model();
    m.kappa_dyn = 1e-10;
    DeviationModel dev = deviation_model(m, st(0.0, 10.0), u1(0.0), 1e-10, false);
    CHECK(dev.E.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("deviation matrix sums to the kappa sensitivity of the step") {
    MechanicalModel m = planar_disc_model();
    State x = planar_state(-0.205, 0.01, 0.0, 0.0, 0.1);
    Vector u(2);
    u << -0.18, 0.01;
    const double kappa = 1e-3;
    DeviationModel dev = deviation_model(m, x, u, kappa, false);
    const double h = kappa * 0.1;
    Vector fd = (step_smoothed(m, x, u, kappa + h).x_next.full() -
                 step_smoothed(m, x, u, kappa - h).x_next.full()) /
                (2 * h);
    CHECK((dev.E.rowwise().sum() + kappa * fd).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("true dynamics lie in the deviation band over a control sweep") {
    MechanicalModel m = pusher1d_model();
    const double kappa = 1e-3;
    double wmin = 10.0, wmax = 0.0;
    for (int i = 0; i <= 200; ++i) {
        double u = -0.1 + 0.4 * i / 200.0;  // crosses the transition, grazing at u = 0.1
        auto f0 = oracles::pusher1d_true(m, 0.0, 0.2, u);
        StepResult fk = step_smoothed(m, st(0.0, 0.2), u1(u), kappa);
        DeviationModel dev = deviation_model(m, st(0.0, 0.2), u1(u), kappa, false);
        Vector truth(2), smooth(2);
        truth << f0.xa_next, f0.xo_next;
        smooth = fk.x_next.full();
        for (int c = 0; c < 2; ++c) {
            double lo = smooth(c) + std::min(dev.E(c, 0), 2.0 * dev.E(c, 0));
            double hi = smooth(c) + std::max(dev.E(c, 0), 2.0 * dev.E(c, 0));
            CHECK(truth(c) >= lo - 1e-9);
            CHECK(truth(c) <= hi + 1e-9);
            if (std::abs(dev.E(c, 0)) > 1e-12) {
                double w = (truth(c) - smooth(c)) / dev.E(c, 0);
                wmin = std::min(wmin, w);
                wmax = std::max(wmax, w);
            }
        }
    }
    CHECK(wmin <= 1.05);
    CHECK(wmax >= 1.95);
    CHECK(wmin >= 1.0 - 1e-6);
    CHECK(wmax <= 2.0 + 1e-6);
}

TEST_CASE("deviation jacobians match finite differences") {
    MechanicalModel m = pusher1d_model();
    const double kappa = 1e-3;
    for (double u : {0.05, 0.1, 0.15}) {
        DeviationModel dev = deviation_model(m, st(0.0, 0.2), u1(u), kappa, true);
        const double h = 1e-6;
        // control direction
        Matrix fd_u = (deviation_model(m, st(0.0, 0.2), u1(u + h), kappa, false).E -
                       deviation_model(m, st(0.0, 0.2), u1(u - h), kappa, false).E) /
                      (2 * h);
        CHECK((dev.dE_du[0] - fd_u).cwiseAbs().maxCoeff() <
              1e-3 * std::max(1.0, fd_u.cwiseAbs().maxCoeff()));
        // object-state direction
        Matrix fd_x = (deviation_model(m, st(0.0, 0.2 + h), u1(u), kappa, false).E -
                       deviation_model(m, st(0.0, 0.2 - h), u1(u), kappa, false).E) /
                      (2 * h);
        CHECK((dev.dE_dx[1] - fd_x).cwiseAbs().maxCoeff() <
              1e-3 * std::max(1.0, fd_x.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("deviation jacobians match finite differences on the planar model") {
    MechanicalModel m = planar_disc_model();
    const double kappa = 1e-3;
    State x = planar_state(-0.205, 0.01, 0.0, 0.0, 0.05);
    Vector u(2);
    u << -0.18, 0.02;
    DeviationModel dev = deviation_model(m, x, u, kappa, true);
    const double h = 1e-6;
    for (int j = 0; j < 5; ++j) {
        Vector xp = x.full(), xm = x.full();
        xp(j) += h;
        xm(j) -= h;
        Matrix fd = (deviation_model(m, State::from_full(xp, 2), u, kappa, false).E -
                     deviation_model(m, State::from_full(xm, 2), u, kappa, false).E) /
                    (2 * h);
        CHECK((dev.dE_dx[j] - fd).cwiseAbs().maxCoeff() <
              2e-3 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("smoothed jacobians are continuous across the contact boundary") {
    MechanicalModel m = pusher1d_model();
    double prev_b = std::numeric_limits<double>::quiet_NaN();
    double max_smooth_step = 0.0;
    double prev_true = std::numeric_limits<double>::quiet_NaN();
    double max_true_step = 0.0;
    for (double u = 0.051; u <= 0.15; u += 0.002) {  // grid straddles the kink
        double b = linearize(m, st(0.0, 0.2), u1(u), 1e-3).B(1, 0);
        if (!std::isnan(prev_b)) max_smooth_step = std::max(max_smooth_step, std::abs(b - prev_b));
        prev_b = b;
        const double h = 1e-7;
        double slope = (oracles::pusher1d_true(m, 0.0, 0.2, u + h).xo_next -
                        oracles::pusher1d_true(m, 0.0, 0.2, u - h).xo_next) /
                       (2 * h);
        if (!std::isnan(prev_true)) max_true_step = std::max(max_true_step, std::abs(slope - prev_true));
        prev_true = slope;
    }
    CHECK(max_smooth_step < 0.1);
    CHECK(max_true_step > 0.4);  // the true slope jumps 0 -> 1/2 at touchdown
}

TEST_CASE("coupling diagnostic") {
    // single contact: no cross terms
    CHECK(coupling_diagnostic(pusher1d_model(), st(0.0, 0.2)) == 0.0);

    // two fingers against separate world halfspaces: disjoint rows
    MechanicalModel m;
    m.dim = 2;
    m.n_a = 4;
    m.n_o = 2;
    m.K_a = 100.0 * Matrix::Identity(4, 4);
    m.M_o = Matrix::Identity(2, 2);
    m.dt = 0.1;
    HalfSpace floor_hs{Vector(2), 0.0};
    floor_hs.normal << 0, 1;
    m.shapes.push_back({Sphere{0.05}, Body::actuated(0)});
    m.shapes.push_back({Sphere{0.05}, Body::actuated(1)});
    m.shapes.push_back({floor_hs, Body::world()});
    m.contacts.push_back({0, 2, 0.0, 1});
    m.contacts.push_back({1, 2, 0.0, 1});
    State x;
    x.x_a = Vector(4);
    x.x_a << 0.0, 0.5, 1.0, 0.5;
    x.x_o = Vector::Zero(2);
    CHECK(coupling_diagnostic(m, x) == doctest::Approx(0.0));

    // two fingers on one object couple through the object inertia
    MechanicalModel two = planar_disc_model();
    two.n_a = 4;
    two.K_a = 100.0 * Matrix::Identity(4, 4);
    two.shapes.push_back({Sphere{0.05}, Body::actuated(1)});
    two.contacts.push_back({2, 1, 0.5, 2});
    State xs;
    xs.x_a = Vector(4);
    xs.x_a << -0.21, 0.0, 0.21, 0.0;
    xs.x_o = Vector::Zero(3);
    CHECK(coupling_diagnostic(two, xs) > 0.01);
}

TEST_CASE("model validation rejects bad data") {
    MechanicalModel m = pusher1d_model();
    m.dt = -1.0;
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    m = pusher1d_model();
    m.contacts[0].d = 2;  // planar friction in a 1-D task
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    m = pusher1d_model();
    m.contacts[0].mu = -0.5;
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
}
