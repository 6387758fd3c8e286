#include "tubeplan/sensitivity.hpp"

namespace tubeplan {

namespace {

// Blockwise strict complementarity: s + z must be strictly interior, so the
// arrow rows [L(s) L(z)] have full rank. Weakly complementary blocks
// (both factors on the boundary) make K singular.
bool strictly_complementary(const ConeSpec& cones, const Vector& s, const Vector& z) {
    int off = 0;
    for (const auto& blk : cones.blocks()) {
        auto sb = s.segment(off, blk.dim);
        auto zb = z.segment(off, blk.dim);
        if (blk.kind == ConeKind::Nonneg) {
            for (int i = 0; i < blk.dim; ++i)
                if (sb(i) + zb(i) <= 1e-12) return false;
        } else {
            Vector w = sb + zb;
            double r = w(0) * w(0) - w.tail(blk.dim - 1).squaredNorm();
            if (w(0) <= 1e-12 || r <= 1e-14 * std::max(1.0, w.squaredNorm())) return false;
        }
        off += blk.dim;
    }
    return true;
}

}  // namespace

KktFactorization KktFactorization::factor(const ConicProgram& prog, const ConicSolution& sol) {
    const int n = prog.num_vars();
    const int m = prog.num_cone_rows();
    if (sol.x.size() != n || sol.s.size() != m || sol.z.size() != m)
        throw std::invalid_argument("KktFactorization: solution dimensions mismatch");
    if (sol.status != SolveStatus::Solved)
        throw std::invalid_argument("KktFactorization: solution is not Solved");
    if (m > 0 && !strictly_complementary(prog.cones, sol.s, sol.z))
        throw NumericalError("KktFactorization: weakly complementary block, K is singular");

    KktFactorization f;
    f.n_ = n;
    f.m_ = m;
    f.cones_ = prog.cones;
    f.x_ = sol.x;
    f.s_ = sol.s;
    f.z_ = sol.z;
    f.K_ = kkt_matrix(prog, sol.s, sol.z);
    f.lu_ = std::make_shared<Eigen::PartialPivLU<Matrix>>(f.K_);
    // Partial-pivot LU always completes; detect singularity by probing.
    Vector probe = f.lu_->solve(Vector::Ones(n + 2 * m));
    if (!probe.allFinite() || (f.K_ * probe - Vector::Ones(n + 2 * m)).cwiseAbs().maxCoeff() >
                                  1e-6 * std::max(1.0, probe.cwiseAbs().maxCoeff()))
        throw NumericalError("KktFactorization: KKT matrix is numerically singular");
    return f;
}

SolutionDerivative KktFactorization::solve_kkt(const Vector& rhs) const {
    Vector sol = lu_->solve(rhs);
    // One refinement pass.
    sol += lu_->solve(rhs - K_ * sol);
    if (!sol.allFinite()) throw NumericalError("KktFactorization: solve produced non-finite values");
    SolutionDerivative d;
    d.dx = sol.head(n_);
    d.dz = sol.segment(n_, m_);
    d.ds = sol.tail(m_);
    return d;
}

SolutionDerivative KktFactorization::d_solution_d_data(const DataDerivative& d) const {
    if (d.dP.rows() != n_ || d.dP.cols() != n_ || d.dq.size() != n_ || d.dA.rows() != m_ ||
        (m_ > 0 && d.dA.cols() != n_) || d.db.size() != m_)
        throw std::invalid_argument("d_solution_d_data: direction dimensions mismatch");
    Vector rhs(n_ + 2 * m_);
    rhs.head(n_) = -(d.dP * x_ + d.dq + d.dA.transpose() * z_);
    rhs.segment(n_, m_) = -(d.dA * x_ - d.db);
    rhs.tail(m_).setZero();
    return solve_kkt(rhs);
}

SolutionDerivative KktFactorization::d_solution_d_kappa() const {
    Vector rhs = Vector::Zero(n_ + 2 * m_);
    rhs.tail(m_) = cone_identity(cones_);
    return solve_kkt(rhs);
}

SolutionDerivative KktFactorization::d2_solution_d_data_d_kappa(
    const DataDerivative& d, const SolutionDerivative& d_data,
    const SolutionDerivative& d_kappa) const {
    if (d_data.dx.size() != n_ || d_kappa.dx.size() != n_)
        throw std::invalid_argument("d2_solution_d_data_d_kappa: derivative dimensions mismatch");
    // rhs = -(dK/dtheta) (dx_k, dz_k, ds_k) with
    //   dK/dtheta = [dP dA' 0; dA 0 0; 0 L(ds_dtheta) L(dz_dtheta)].
    Vector rhs(n_ + 2 * m_);
    rhs.head(n_) = -(d.dP * d_kappa.dx + d.dA.transpose() * d_kappa.dz);
    rhs.segment(n_, m_) = -(d.dA * d_kappa.dx);
    rhs.tail(m_) = -(cone_product(cones_, d_data.ds, d_kappa.dz) +
                     cone_product(cones_, d_data.dz, d_kappa.ds));
    return solve_kkt(rhs);
}

}  // namespace tubeplan
