#include <doctest.h>

#include "support.hpp"
#include "tubeplan/geometry.hpp"

using namespace tubeplan;

namespace {

// Box x in [2,3], y in [-1,1] as a body-frame polytope at identity pose.
ConvexPolytope shifted_box() {
    ConvexPolytope p;
    p.A = Matrix(4, 2);
    p.A << 1, 0, -1, 0, 0, 1, 0, -1;
    p.b = Vector(4);
    p.b << 3, -2, 1, 1;
    return p;
}

ConvexPolytope unit_box(double half) {
    ConvexPolytope p;
    p.A = Matrix(4, 2);
    p.A << 1, 0, -1, 0, 0, 1, 0, -1;
    p.b = Vector::Constant(4, half);
    return p;
}

// Independent oracle: Newton on the stationarity of the barrier-relaxed
// projection, (p - c) + kappa * sum_i a_i / s_i(p) = 0 with s = b - A p.
Vector newton_projection_oracle(const Vector& c, const Matrix& A, const Vector& b,
                                double kappa) {
    Vector p = c;
    // start strictly inside (analytic-center-ish step)
    p = Vector::Zero(2);
    p << 2.5, 0.0;
    for (int it = 0; it < 100; ++it) {
        Vector s = b - A * p;
        Vector g = p - c;
        Matrix H = Matrix::Identity(2, 2);
        for (int i = 0; i < A.rows(); ++i) {
            g += kappa * A.row(i).transpose() / s(i);
            H += kappa * A.row(i).transpose() * A.row(i) / (s(i) * s(i));
        }
        Vector dp = H.ldlt().solve(-g);
        double alpha = 1.0;
        while (alpha > 1e-14 && ((b - A * (p + alpha * dp)).array() <= 0.0).any()) alpha *= 0.5;
        p += alpha * dp;
        if (dp.cwiseAbs().maxCoeff() * alpha < 1e-14) break;
    }
    return p;
}

}  // namespace

TEST_CASE("exact projection onto a box face") {
    Vector c = Vector::Zero(2);
    RelaxedPoint rp = closest_point_relaxed(c, shifted_box(), Pose::identity(2), 0.0);
    CHECK(rp.point(0) == doctest::Approx(2.0).epsilon(1e-7));
    CHECK(rp.point(1) == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("projection of an interior point is the point itself") {
    Vector c(2);
    c << 2.5, 0.3;
    RelaxedPoint rp = closest_point_relaxed(c, shifted_box(), Pose::identity(2), 0.0);
    CHECK((rp.point - c).norm() < 1e-7);
}

TEST_CASE("relaxed projection matches the barrier-stationarity oracle") {
    Vector c = Vector::Zero(2);
    double kappa = 1e-3;
    RelaxedPoint rp = closest_point_relaxed(c, shifted_box(), Pose::identity(2), kappa);
    CHECK(rp.point(0) > 2.0);  // interior
    Vector oracle = newton_projection_oracle(c, rp.program.A, rp.program.b, kappa);
    CHECK((rp.point - oracle).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("relaxed projection converges to the exact projection as kappa drops") {
    Vector c(2);
    c << 0.0, 0.4;
    RelaxedPoint exact = closest_point_relaxed(c, shifted_box(), Pose::identity(2), 0.0);
    double prev = std::numeric_limits<double>::infinity();
    for (double kg : {1e-2, 1e-3, 1e-4}) {
        RelaxedPoint rp = closest_point_relaxed(c, shifted_box(), Pose::identity(2), kg);
        double err = (rp.point - exact.point).norm();
        CHECK(err < 10.0 * std::sqrt(kg));
        CHECK(err < prev);
        prev = err;
    }
}

TEST_CASE("sphere-sphere query") {
    Sphere s{0.5};
    Pose pa{Vector::Zero(2), 0.0}, pb{Vector::Zero(2), 0.0};
    pa.translation << 2, 0;
    ContactQuery q = contact_query(s, pa, s, pb, 0.0);
    CHECK(q.phi == doctest::Approx(1.0));
    CHECK(q.normal(0) == doctest::Approx(1.0));
    CHECK(q.normal(1) == doctest::Approx(0.0));
    CHECK((q.point_a - q.point_b).dot(q.normal) == doctest::Approx(q.phi));
}

TEST_CASE("sphere-halfspace query") {
    Sphere s{1.0};
    HalfSpace floor_hs{Vector(2), 0.0};
    floor_hs.normal << 0, 1;  // y <= 0 solid
    Pose pa{Vector(2), 0.0};
    pa.translation << 0, 2;
    ContactQuery q = contact_query(s, pa, floor_hs, Pose::identity(2), 0.0);
    CHECK(q.phi == doctest::Approx(1.0));
    CHECK(q.normal(1) == doctest::Approx(1.0));
    CHECK((q.point_a - q.point_b).dot(q.normal) == doctest::Approx(q.phi));
}

TEST_CASE("query order swap flips the normal") {
    Sphere s{1.0};
    HalfSpace floor_hs{Vector(2), 0.0};
    floor_hs.normal << 0, 1;
    Pose pa{Vector(2), 0.0};
    pa.translation << 0, 2;
    ContactQuery q = contact_query(floor_hs, Pose::identity(2), s, pa, 0.0);
    CHECK(q.phi == doctest::Approx(1.0));
    CHECK(q.normal(1) == doctest::Approx(-1.0));
}

TEST_CASE("unsupported pair is rejected") {
    ConvexPolytope box = unit_box(1.0);
    CHECK_THROWS_AS(
        contact_query(box, Pose::identity(2), box, Pose::identity(2), 0.0),
        std::invalid_argument);
}

TEST_CASE("relaxed corner normal lies strictly between face normals") {
    Sphere s{0.1};
    Pose pa{Vector(2), 0.0};
    pa.translation << 1.4, 1.4;  // toward the (+x, +y) corner of the unit box
    ContactQuery q = contact_query(s, pa, unit_box(1.0), Pose::identity(2), 1e-3);
    CHECK(q.normal(0) > 0.1);
    CHECK(q.normal(1) > 0.1);
    CHECK(q.normal.norm() == doctest::Approx(1.0));
    // Regression value: symmetric approach gives a diagonal normal.
    CHECK(q.normal(0) == doctest::Approx(q.normal(1)).epsilon(1e-9));
}

TEST_CASE("smoothed normals are continuous across a corner sweep") {
    Sphere s{0.1};
    ConvexPolytope box = unit_box(1.0);
    // Sweep grazing the (+x, +y) corner: the exact-projection normal turns the
    // full quarter-turn within one step, the relaxed one turns gradually.
    const double off = 1e-4 / std::sqrt(2.0);
    auto sweep = [&](double kappa_geom) {
        double max_step = 0.0;
        double prev = std::numeric_limits<double>::quiet_NaN();
        for (double t = -0.3; t <= 0.3; t += 0.005) {
            Pose pa{Vector(2), 0.0};
            pa.translation << 1.0 + off + t / std::sqrt(2.0), 1.0 + off - t / std::sqrt(2.0);
            ContactQuery q = contact_query(s, pa, box, Pose::identity(2), kappa_geom);
            double ang = std::atan2(q.normal(1), q.normal(0));
            if (!std::isnan(prev)) max_step = std::max(max_step, std::abs(ang - prev));
            prev = ang;
        }
        return max_step;
    };
    double smooth_step = sweep(1e-3);
    double exact_step = sweep(0.0);
    CHECK(smooth_step < 0.1);               // Lipschitz-scale increments
    CHECK(exact_step > 5.0 * smooth_step);  // the unsmoothed sweep jumps
}

TEST_CASE("query derivatives match finite differences") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> ud(-0.3, 0.3);
    Sphere s{0.2};
    ConvexPolytope box = unit_box(1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Pose pa{Vector(2), 0.0};
        pa.translation << 1.6 + ud(rng), 0.4 + ud(rng);
        Pose pb{Vector(2), ud(rng)};
        pb.translation << ud(rng), ud(rng);
        for (int variant = 0; variant < 3; ++variant) {
            Shape shape_b;
            if (variant == 0) shape_b = box;
            if (variant == 1) shape_b = Sphere{0.5};
            if (variant == 2) {
                HalfSpace hs{Vector(2), 0.0};
                hs.normal << 0, 1;
                shape_b = hs;
            }
            double kg = 1e-3;
            ContactQueryDiff d = contact_query_diff(s, pa, shape_b, pb, kg);
            const double h = 1e-6;
            for (int i = 0; i < 2; ++i) {
                Pose pp = pa, pm = pa;
                pp.translation(i) += h;
                pm.translation(i) -= h;
                double fd = (contact_query(s, pp, shape_b, pb, kg).phi -
                             contact_query(s, pm, shape_b, pb, kg).phi) /
                            (2 * h);
                CHECK(std::abs(d.d_center_a[i].dphi - fd) < 1e-5);
            }
            for (int i = 0; i < 2; ++i) {
                Pose pp = pb, pm = pb;
                pp.translation(i) += h;
                pm.translation(i) -= h;
                double fd = (contact_query(s, pa, shape_b, pp, kg).phi -
                             contact_query(s, pa, shape_b, pm, kg).phi) /
                            (2 * h);
                CHECK(std::abs(d.d_trans_b[i].dphi - fd) < 1e-5);
            }
            {
                Pose pp = pb, pm = pb;
                pp.rotation += h;
                pm.rotation -= h;
                ContactQuery qp = contact_query(s, pa, shape_b, pp, kg);
                ContactQuery qm = contact_query(s, pa, shape_b, pm, kg);
                double fd = (qp.phi - qm.phi) / (2 * h);
                CHECK(std::abs(d.d_rot_b->dphi - fd) < 1e-5);
                Vector fdn = (qp.normal - qm.normal) / (2 * h);
                CHECK((d.d_rot_b->dnormal - fdn).cwiseAbs().maxCoeff() < 1e-5);
                Vector fdp = (qp.point_b - qm.point_b) / (2 * h);
                CHECK((d.d_rot_b->dpoint_b - fdp).cwiseAbs().maxCoeff() < 1e-5);
            }
        }
    }
}
