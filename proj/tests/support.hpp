#pragma once

// Shared test utilities: random feasible program generation and finite
// difference helpers. Oracles stay independent of the code paths they check.

#include <Eigen/Dense>
#include <functional>
#include <random>

#include "tubeplan/conic.hpp"

namespace testsupport {

using tubeplan::ConeKind;
using tubeplan::ConeSpec;
using tubeplan::ConicProgram;
using tubeplan::Matrix;
using tubeplan::Vector;

inline Vector random_vector(std::mt19937_64& rng, int n, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = d(rng);
    return v;
}

inline Matrix random_matrix(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Matrix m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = d(rng);
    return m;
}

inline ConeSpec random_cone_spec(std::mt19937_64& rng, int target_dim) {
    std::uniform_int_distribution<int> kind(0, 1);
    std::uniform_int_distribution<int> nn_dim(1, 3);
    std::uniform_int_distribution<int> soc_dim(2, 4);
    ConeSpec spec;
    while (spec.total_dim() < target_dim) {
        int remaining = target_dim - spec.total_dim();
        if (remaining == 1 || kind(rng) == 0) {
            spec.append(ConeKind::Nonneg, std::min(remaining, nn_dim(rng)));
        } else {
            int d = soc_dim(rng);
            if (d > remaining) {
                spec.append(ConeKind::Nonneg, remaining);
            } else {
                spec.append(ConeKind::SecondOrder, d);
            }
        }
    }
    return spec;
}

// Strictly interior point of the cone.
inline Vector random_interior_point(std::mt19937_64& rng, const ConeSpec& spec) {
    std::uniform_real_distribution<double> mag(0.2, 2.0);
    Vector s(spec.total_dim());
    int off = 0;
    for (const auto& blk : spec.blocks()) {
        if (blk.kind == ConeKind::Nonneg) {
            for (int i = 0; i < blk.dim; ++i) s(off + i) = mag(rng);
        } else {
            Vector t = random_vector(rng, blk.dim - 1, 0.5);
            s(off) = t.norm() + mag(rng);
            s.segment(off + 1, blk.dim - 1) = t;
        }
        off += blk.dim;
    }
    return s;
}

// Feasible program with strictly positive definite P and an interior point
// baked into b, so every instance is solvable and bounded.
inline ConicProgram random_feasible_program(std::mt19937_64& rng, int n, int m) {
    ConicProgram prog;
    prog.cones = random_cone_spec(rng, m);
    Matrix L = random_matrix(rng, n, n, 1.0 / std::sqrt(static_cast<double>(n)));
    prog.P = L.transpose() * L + 0.1 * Matrix::Identity(n, n);
    prog.q = random_vector(rng, n);
    prog.A = random_matrix(rng, m, n, 1.0 / std::sqrt(static_cast<double>(n)));
    Vector x_feas = random_vector(rng, n);
    Vector s_int = random_interior_point(rng, prog.cones);
    prog.b = prog.A * x_feas + s_int;
    return prog;
}

inline double central_diff(const std::function<double(double)>& f, double x0, double h) {
    return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

inline Vector central_diff_vec(const std::function<Vector(double)>& f, double x0, double h) {
    return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

inline double rel_error(double got, double want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
}

inline double rel_error(const Vector& got, const Vector& want) {
    return (got - want).cwiseAbs().maxCoeff() / std::max(1.0, want.cwiseAbs().maxCoeff());
}

}  // namespace testsupport
