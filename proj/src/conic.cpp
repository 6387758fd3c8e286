#include "tubeplan/conic.hpp"

#include <Eigen/Eigenvalues>

namespace tubeplan {

void ConicProgram::validate() const {
    const int n = num_vars();
    const int m = num_cone_rows();
    if (P.rows() != n || P.cols() != n)
        throw std::invalid_argument("ConicProgram: P must be n x n");
    if (A.rows() != m || (m > 0 && A.cols() != n))
        throw std::invalid_argument("ConicProgram: A must be m x n with m = cone dim");
    if (b.size() != m) throw std::invalid_argument("ConicProgram: b must have length m");
    if (n > 0) {
        double pn = P.cwiseAbs().maxCoeff();
        if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, pn))
            throw std::invalid_argument("ConicProgram: P must be symmetric");
        Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (P + P.transpose()),
                                                 Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, pn))
            throw std::invalid_argument("ConicProgram: P must be positive semidefinite");
    }
}

const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Solved: return "Solved";
        case SolveStatus::MaxIter: return "MaxIter";
        case SolveStatus::Infeasible: return "Infeasible";
        case SolveStatus::NumericalFailure: return "NumericalFailure";
    }
    return "?";
}

Vector equilibrate_cone_rows(ConicProgram& prog) {
    const int m = prog.num_cone_rows();
    Vector d = Vector::Ones(m);
    int off = 0;
    for (const auto& blk : prog.cones.blocks()) {
        double mag = std::max(prog.A.middleRows(off, blk.dim).cwiseAbs().maxCoeff(),
                              prog.b.segment(off, blk.dim).cwiseAbs().maxCoeff());
        double scale = 1.0 / std::max(mag, 1e-8);
        prog.A.middleRows(off, blk.dim) *= scale;
        prog.b.segment(off, blk.dim) *= scale;
        d.segment(off, blk.dim).setConstant(scale);
        off += blk.dim;
    }
    return d;
}

Matrix kkt_matrix(const ConicProgram& prog, const Vector& s, const Vector& z) {
    const int n = prog.num_vars();
    const int m = prog.num_cone_rows();
    Matrix K = Matrix::Zero(n + 2 * m, n + 2 * m);
    K.topLeftCorner(n, n) = prog.P;
    K.block(0, n, n, m) = prog.A.transpose();
    K.block(n, 0, m, n) = prog.A;
    K.block(n, n + m, m, m) = Matrix::Identity(m, m);
    K.block(n + m, n, m, m) = cone_arrow(prog.cones, s);
    K.block(n + m, n + m, m, m) = cone_arrow(prog.cones, z);
    return K;
}

KktResiduals kkt_residuals(const ConicProgram& prog, const ConicSolution& sol, double kappa) {
    const int n = prog.num_vars();
    const int m = prog.num_cone_rows();
    if (sol.x.size() != n || sol.s.size() != m || sol.z.size() != m)
        throw std::invalid_argument("kkt_residuals: solution dimensions do not match program");
    KktResiduals r{};
    Vector rd = prog.P * sol.x + prog.q;
    if (m > 0) rd += prog.A.transpose() * sol.z;
    r.stationarity = rd.size() > 0 ? rd.cwiseAbs().maxCoeff() : 0.0;
    if (m > 0) {
        Vector rp = prog.A * sol.x + sol.s - prog.b;
        r.primal = rp.cwiseAbs().maxCoeff();
        Vector rc = cone_product(prog.cones, sol.s, sol.z) -
                    kappa * cone_identity(prog.cones);
        r.complementarity = rc.cwiseAbs().maxCoeff();
    } else {
        r.primal = 0.0;
        r.complementarity = 0.0;
    }
    return r;
}

}  // namespace tubeplan
