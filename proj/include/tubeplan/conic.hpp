#pragma once

#include <stdexcept>
#include <string>

#include "tubeplan/cones.hpp"

namespace tubeplan {

/// Thrown when a factorization or solve breaks down numerically.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Quadratic conic program
///   min 1/2 x'Px + q'x   s.t.  Ax + s = b,  s in K.
struct ConicProgram {
    Matrix P;
    Vector q;
    Matrix A;
    Vector b;
    ConeSpec cones;

    int num_vars() const { return static_cast<int>(q.size()); }
    int num_cone_rows() const { return cones.total_dim(); }

    /// Checks dimensions, symmetry of P and PSD-ness up to a small slack.
    /// Throws std::invalid_argument on violation.
    void validate() const;
};

enum class SolveStatus { Solved, MaxIter, Infeasible, NumericalFailure };

const char* to_string(SolveStatus s);

/// Primal-dual point at complementarity level kappa_achieved.
struct ConicSolution {
    Vector x;
    Vector s;
    Vector z;
    double kappa_achieved = 0.0;
    SolveStatus status = SolveStatus::NumericalFailure;
    int iterations = 0;
};

struct KktResiduals {
    double stationarity;      // ||Px + q + A'z||_inf
    double primal;            // ||Ax + s - b||_inf
    double complementarity;   // ||s∘z - kappa e||_inf
    double max() const { return std::max(stationarity, std::max(primal, complementarity)); }
};

KktResiduals kkt_residuals(const ConicProgram& prog, const ConicSolution& sol, double kappa);

/// Scales each cone block of (A, b) to unit magnitude; returns the per-row
/// factors d applied (constant within a block), so original duals are
/// recovered as z = d .* z_scaled. Exact for kappa = 0 solves.
Vector equilibrate_cone_rows(ConicProgram& prog);

/// KKT system matrix at (s, z):
///   [ P  A'    0   ]
///   [ A  0     I   ]
///   [ 0  L(s) L(z) ]
/// with unknown ordering (dx, dz, ds). Shared by the solver's Newton step and
/// by implicit differentiation.
Matrix kkt_matrix(const ConicProgram& prog, const Vector& s, const Vector& z);

}  // namespace tubeplan
