#pragma once

#include <Eigen/LU>
#include <memory>

#include "tubeplan/conic.hpp"

namespace tubeplan {

/// Directional derivative of problem data along one scalar parameter.
struct DataDerivative {
    Matrix dP;
    Vector dq;
    Matrix dA;
    Vector db;

    static DataDerivative zero(int n, int m) {
        return {Matrix::Zero(n, n), Vector::Zero(n), Matrix::Zero(m, n), Vector::Zero(m)};
    }
};

/// Directional derivative of a primal-dual solution.
struct SolutionDerivative {
    Vector dx, dz, ds;
};

/// Factored KKT matrix of one (program, solution) pair, reusable for any
/// number of right-hand sides. Valid only for the solution it was built from.
class KktFactorization {
  public:
    /// Requires a Solved solution with strictly interior s and z blockwise
    /// strict complementarity; throws NumericalError otherwise.
    static KktFactorization factor(const ConicProgram& prog, const ConicSolution& sol);

    /// Solves K d = -(dP x + dq + dA' z, dA x - db, 0).
    SolutionDerivative d_solution_d_data(const DataDerivative& d) const;

    /// Solves K d = (0, 0, e).
    SolutionDerivative d_solution_d_kappa() const;

    /// Solves K d2 = -(dK/dtheta) (dx/dkappa, dz/dkappa, ds/dkappa), where
    /// dK/dtheta assembles dP, dA and the arrow operators of d_data's ds, dz.
    SolutionDerivative d2_solution_d_data_d_kappa(const DataDerivative& d,
                                                  const SolutionDerivative& d_data,
                                                  const SolutionDerivative& d_kappa) const;

    int num_vars() const { return n_; }
    int num_cone_rows() const { return m_; }

  private:
    KktFactorization() = default;

    SolutionDerivative solve_kkt(const Vector& rhs) const;

    int n_ = 0, m_ = 0;
    ConeSpec cones_;
    Vector x_, s_, z_;
    Matrix K_;
    std::shared_ptr<Eigen::PartialPivLU<Matrix>> lu_;
};

}  // namespace tubeplan
