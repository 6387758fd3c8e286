#include <doctest.h>

#include "support.hpp"
#include "tubeplan/cones.hpp"

using namespace tubeplan;
using testsupport::random_interior_point;
using testsupport::random_vector;

TEST_CASE("cone product blockwise formulas") {
    Vector s(2), z(2);
    s << 2, 3;
    z << 4, 5;
    Vector p = cone_product(ConeSpec::nonneg(2), s, z);
    CHECK(p(0) == doctest::Approx(8));
    CHECK(p(1) == doctest::Approx(15));

    Vector u(2), v(2);
    u << 1, 2;
    v << 3, 4;
    Vector q = cone_product(ConeSpec::second_order(2), u, v);
    CHECK(q(0) == doctest::Approx(11));
    CHECK(q(1) == doctest::Approx(10));

    ConeSpec mixed;
    mixed.append(ConeKind::Nonneg, 1).append(ConeKind::SecondOrder, 2);
    Vector e = cone_identity(mixed);
    CHECK(cone_product(mixed, e, Vector::Zero(3)).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(cone_product(mixed, Vector::Zero(2), Vector::Zero(3)),
                    std::invalid_argument);
}

TEST_CASE("cone identity elements") {
    Vector e1 = cone_identity(ConeSpec::nonneg(3));
    CHECK(e1.isApprox(Vector::Ones(3)));

    Vector e2 = cone_identity(ConeSpec::second_order(3));
    CHECK(e2(0) == 1.0);
    CHECK(e2.tail(2).cwiseAbs().maxCoeff() == 0.0);

    ConeSpec mixed;
    mixed.append(ConeKind::Nonneg, 1).append(ConeKind::SecondOrder, 2);
    Vector e3 = cone_identity(mixed);
    CHECK(e3(0) == 1.0);
    CHECK(e3(1) == 1.0);
    CHECK(e3(2) == 0.0);
}

TEST_CASE("barrier values") {
    Vector s1(2);
    s1 << 1, 1;
    CHECK(barrier_value(ConeSpec::nonneg(2), s1) == doctest::Approx(0.0));

    Vector s2(2);
    s2 << std::sqrt(2.0), 1.0;
    CHECK(barrier_value(ConeSpec::second_order(2), s2) == doctest::Approx(0.0));

    Vector s3(1);
    s3 << std::exp(1.0);
    CHECK(barrier_value(ConeSpec::nonneg(1), s3) == doctest::Approx(-1.0));

    Vector boundary(2);
    boundary << 1.0, 1.0;
    CHECK_THROWS_AS(barrier_value(ConeSpec::second_order(2), boundary), std::domain_error);
    CHECK_THROWS_AS(barrier_value(ConeSpec::nonneg(2), Vector::Zero(2)), std::domain_error);
}

TEST_CASE("cone membership") {
    Vector a(2);
    a << 0, 1;
    CHECK(in_cone(ConeSpec::nonneg(2), a));

    Vector b(2);
    b << 1, 2;
    CHECK_FALSE(in_cone(ConeSpec::second_order(2), b));

    Vector c(3);
    c << 5, 3, 4;
    CHECK(in_cone(ConeSpec::second_order(3), c));
    CHECK(in_dual_cone(ConeSpec::second_order(3), c));
}

TEST_CASE("cone product is bilinear on random vectors") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        ConeSpec spec = testsupport::random_cone_spec(rng, 8);
        Vector s = random_vector(rng, 8), z = random_vector(rng, 8);
        Vector w = random_vector(rng, 8);
        double a = 0.7, b = -1.3;
        Vector lhs = cone_product(spec, a * s + b * w, z);
        Vector rhs = a * cone_product(spec, s, z) + b * cone_product(spec, w, z);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
        // arrow operator realizes the product
        CHECK((cone_arrow(spec, s) * z - cone_product(spec, s, z)).cwiseAbs().maxCoeff() <
              1e-12);
    }
}

TEST_CASE("barrier gradient is a scaled dual-interior point") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        ConeSpec spec = testsupport::random_cone_spec(rng, 7);
        Vector s = random_interior_point(rng, spec);
        Vector g = barrier_gradient(spec, s);
        CHECK(strictly_interior(spec, Vector(-g)));
        CHECK(s.dot(-g) == doctest::Approx(spec.barrier_degree()).epsilon(1e-10));
    }
}

TEST_CASE("barrier hessian matches finite differences of the gradient") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        ConeSpec spec = testsupport::random_cone_spec(rng, 6);
        Vector s = random_interior_point(rng, spec);
        Matrix H = barrier_hessian(spec, s);
        for (int j = 0; j < s.size(); ++j) {
            Vector col = testsupport::central_diff_vec(
                [&](double t) {
                    Vector sp = s;
                    sp(j) = t;
                    return barrier_gradient(spec, sp);
                },
                s(j), 1e-6);
            CHECK(testsupport::rel_error(Vector(H.col(j)), col) < 1e-6);
        }
    }
}

TEST_CASE("step to boundary") {
    ConeSpec nn = ConeSpec::nonneg(2);
    Vector s(2), ds(2);
    s << 1, 2;
    ds << -1, -1;
    CHECK(step_to_boundary(nn, s, ds, 10.0) == doctest::Approx(1.0));

    ConeSpec soc = ConeSpec::second_order(2);
    Vector u(2), du(2);
    u << 2, 0;
    du << 0, 1;  // hits |s1| = s0 at t = 2
    CHECK(step_to_boundary(soc, u, du, 10.0) == doctest::Approx(2.0));
}
