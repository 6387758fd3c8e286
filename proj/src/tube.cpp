#include "tubeplan/tube.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "tubeplan/solver.hpp"

namespace tubeplan {

namespace {

int dual_norm_exponent(const DisturbanceSet& dset) {
    if (dset.norm_p == 2) return 2;
    if (dset.norm_p == 0) return 1;  // sup norm -> 1-norm tightening
    throw std::invalid_argument("DisturbanceSet: norm_p must be 2 or 0 (sup)");
}

double row_dual_norm(const Eigen::RowVectorXd& row, int q) {
    return q == 2 ? row.norm() : row.cwiseAbs().sum();
}

// State-deviation maps: dz_k = Z[k] * stacked dv under the linear dynamics.
std::vector<Matrix> state_maps(const LtvData& ltv) {
    const int nv = ltv.N * ltv.n_u;
    std::vector<Matrix> Z(ltv.N + 1, Matrix::Zero(ltv.n_x, nv));
    for (int k = 0; k < ltv.N; ++k) {
        Z[k + 1] = ltv.A[k] * Z[k];
        Z[k + 1].middleCols(k * ltv.n_u, ltv.n_u) += ltv.B[k];
    }
    return Z;
}

Matrix pseudo_inverse(const Matrix& M, bool& rank_deficient) {
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(M);
    rank_deficient = cod.rank() < std::min(M.rows(), M.cols());
    return cod.pseudoInverse();
}

// G_k split into state and control parts.
void split_stage(const StageConstraint& sc, int n_x, Matrix& Gx, Matrix& Gu) {
    Gx = sc.G.leftCols(n_x);
    Gu = sc.G.rightCols(sc.G.cols() - n_x);
}

// Initial response block at injection step j, with the linear correction.
Matrix initial_block(const LtvData& ltv, int j, const std::vector<Vector>& dz,
                     const std::vector<Vector>& dv) {
    Matrix X0 = ltv.E[j];
    if (!dz.empty() && j < static_cast<int>(ltv.dE_dz.size()))
        for (int dir = 0; dir < ltv.n_x; ++dir) X0 += ltv.dE_dz[j][dir] * dz[j](dir);
    if (!dv.empty() && j < static_cast<int>(ltv.dE_dv.size()))
        for (int dir = 0; dir < ltv.n_u; ++dir) X0 += ltv.dE_dv[j][dir] * dv[j](dir);
    return X0;
}

TubeResponse propagate_with_correction(const LtvData& ltv,
                                       const std::vector<std::vector<Matrix>>& Phi_u,
                                       const std::vector<Vector>& dz,
                                       const std::vector<Vector>& dv) {
    TubeResponse tube;
    tube.N = ltv.N;
    tube.n_x = ltv.n_x;
    tube.n_u = ltv.n_u;
    tube.n_c = ltv.n_c;
    tube.Phi_u = Phi_u;
    tube.Phi_x.assign(ltv.N, {});
    for (int j = 0; j < ltv.N; ++j) {
        Matrix X = initial_block(ltv, j, dz, dv);
        tube.Phi_x[j].push_back(X);
        for (int k = j + 1; k < ltv.N; ++k) {
            X = ltv.A[k] * X + ltv.B[k] * Phi_u[j][k - j - 1];
            tube.Phi_x[j].push_back(X);
        }
    }
    return tube;
}

double trace_of(const Matrix& A, const Matrix& B) { return (A.transpose() * B).trace(); }

}  // namespace

void LtvData::validate() const {
    if (N <= 0) throw std::invalid_argument("LtvData: N must be >= 1");
    if (static_cast<int>(A.size()) != N || static_cast<int>(B.size()) != N ||
        static_cast<int>(E.size()) != N)
        throw std::invalid_argument("LtvData: A, B, E must have N entries");
    for (int k = 0; k < N; ++k) {
        if (A[k].rows() != n_x || A[k].cols() != n_x || B[k].rows() != n_x ||
            B[k].cols() != n_u || E[k].rows() != n_x || E[k].cols() != n_c)
            throw std::invalid_argument("LtvData: inconsistent block dimensions");
    }
}

std::pair<std::vector<Vector>, std::vector<Vector>> simulate_closed_loop(
    const LtvData& ltv, const GainSchedule& gains, const std::vector<Vector>& w_seq) {
    ltv.validate();
    if (static_cast<int>(w_seq.size()) != ltv.N)
        throw std::invalid_argument("simulate_closed_loop: need N disturbance vectors");
    std::vector<Vector> dx(ltv.N + 1, Vector::Zero(ltv.n_x));
    std::vector<Vector> du(ltv.N, Vector::Zero(ltv.n_u));
    for (int k = 0; k < ltv.N; ++k) {
        Vector u = Vector::Zero(ltv.n_u);
        if (k < static_cast<int>(gains.K.size()))
            for (int j = 0; j <= k && j < static_cast<int>(gains.K[k].size()); ++j)
                u += gains.K[k][j] * dx[j];
        du[k] = u;
        dx[k + 1] = ltv.A[k] * dx[k] + ltv.B[k] * du[k] + ltv.E[k] * w_seq[k];
    }
    return {dx, du};
}

TubeResponse propagate_response(const LtvData& ltv,
                                const std::vector<std::vector<Matrix>>& Phi_u) {
    ltv.validate();
    if (static_cast<int>(Phi_u.size()) != ltv.N)
        throw std::invalid_argument("propagate_response: Phi_u must have N block rows");
    return propagate_with_correction(ltv, Phi_u, {}, {});
}

GainSchedule extract_gains(const TubeResponse& tube) {
    const int N = tube.N, n_x = tube.n_x, n_u = tube.n_u, n_c = tube.n_c;
    GainSchedule out;
    // M[j][i]: reconstruction of w_j from the deviation history dx_1..dx_{j+1}.
    std::vector<std::vector<Matrix>> M(N);
    for (int j = 0; j < N; ++j) {
        bool deficient = false;
        Matrix Ep = pseudo_inverse(tube.phi_x(j + 1, j), deficient);
        if (deficient && n_c <= n_x) out.rank_warning = true;
        M[j].assign(j + 2, Matrix::Zero(n_c, n_x));  // index i = 0..j+1
        M[j][j + 1] = Ep;
        for (int i = 1; i <= j; ++i) {
            Matrix acc = Matrix::Zero(n_x, n_x);
            for (int l = i - 1; l <= j - 1; ++l) acc += tube.phi_x(j + 1, l) * M[l][i];
            M[j][i] = -Ep * acc;
        }
    }
    out.K.assign(N, {});
    for (int k = 0; k < N; ++k) {
        out.K[k].assign(k + 1, Matrix::Zero(n_u, n_x));
        for (int i = 1; i <= k; ++i)
            for (int j = i - 1; j <= k - 1; ++j) out.K[k][i] += tube.phi_u(k, j) * M[j][i];
    }
    return out;
}

double tighten(const Vector& a, const DisturbanceSet& dset) {
    if (a.size() != dset.w_c.size())
        throw std::invalid_argument("tighten: row length does not match disturbance dim");
    int q = dual_norm_exponent(dset);
    double norm = q == 2 ? a.norm() : a.cwiseAbs().sum();
    return a.dot(dset.w_c) + dset.w_r * norm;
}

double RobustViolation::max_violation() const {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& v : stage)
        if (v.size() > 0) worst = std::max(worst, v.maxCoeff());
    if (terminal.size() > 0) worst = std::max(worst, terminal.maxCoeff());
    return worst;
}

RobustViolation robust_stage_violation(const TubeResponse& tube, const std::vector<Vector>& z,
                                       const std::vector<Vector>& v,
                                       const RobustConstraints& constraints,
                                       const DisturbanceSet& dset) {
    const int N = tube.N;
    const int q = dual_norm_exponent(dset);
    RobustViolation out;
    out.stage.resize(N);
    for (int k = 0; k < N; ++k) {
        const auto& sc = constraints.stage[k];
        if (sc.G.rows() == 0) {
            out.stage[k] = Vector(0);
            continue;
        }
        Vector zu(tube.n_x + tube.n_u);
        zu << z[k], v[k];
        Vector val = sc.G * zu + sc.g;
        Matrix Gx, Gu;
        split_stage(sc, tube.n_x, Gx, Gu);
        for (int j = 0; j < k; ++j) {
            Matrix C = Gx * tube.phi_x(k, j);
            if (k <= N - 1 && j <= k - 1 && k < N) C += (k < N) ? Gu * tube.phi_u(k, j) : Matrix();
            val += C * dset.w_c;
            for (int r = 0; r < C.rows(); ++r)
                val(r) += dset.w_r * row_dual_norm(C.row(r), q);
        }
        out.stage[k] = val;
    }
    if (constraints.G_f.rows() > 0) {
        Vector val = constraints.G_f * z[N] + constraints.g_f;
        for (int j = 0; j < N; ++j) {
            Matrix C = constraints.G_f * tube.phi_x(N, j);
            val += C * dset.w_c;
            for (int r = 0; r < C.rows(); ++r)
                val(r) += dset.w_r * row_dual_norm(C.row(r), q);
        }
        out.terminal = val;
    } else {
        out.terminal = Vector(0);
    }
    return out;
}

void compute_beta(const TubeResponse& tube, const RobustConstraints& constraints,
                  std::vector<std::vector<Vector>>& beta, std::vector<Vector>& beta_f) {
    const int N = tube.N;
    beta.assign(N, {});
    for (int k = 1; k < N; ++k) {
        const auto& sc = constraints.stage[k];
        Matrix Gx, Gu;
        if (sc.G.rows() > 0) split_stage(sc, tube.n_x, Gx, Gu);
        beta[k].assign(k, Vector::Zero(sc.G.rows()));
        for (int j = 0; j < k; ++j) {
            if (sc.G.rows() == 0) continue;
            Matrix C = Gx * tube.phi_x(k, j) + Gu * tube.phi_u(k, j);
            beta[k][j] = C.rowwise().squaredNorm();
        }
    }
    beta_f.assign(N, Vector::Zero(constraints.G_f.rows()));
    for (int j = 0; j < N; ++j) {
        if (constraints.G_f.rows() == 0) continue;
        Matrix C = constraints.G_f * tube.phi_x(N, j);
        beta_f[j] = C.rowwise().squaredNorm();
    }
}

void update_eta(const std::vector<std::vector<Vector>>& beta, const std::vector<Vector>& beta_f,
                const std::vector<Vector>& mu, const Vector& mu_f,
                const DisturbanceSet& dset, double epsilon_smooth,
                std::vector<std::vector<Vector>>& eta, std::vector<Vector>& eta_f) {
    const int N = static_cast<int>(beta.size());
    eta.assign(N, {});
    for (int k = 1; k < N; ++k) {
        eta[k].assign(k, Vector());
        for (int j = 0; j < k; ++j) {
            Vector root = (beta[k][j].array() + epsilon_smooth).sqrt().inverse();
            eta[k][j] = 0.5 * dset.w_r * root.cwiseProduct(mu[k]);
        }
    }
    eta_f.assign(beta_f.size(), Vector());
    for (size_t j = 0; j < beta_f.size(); ++j) {
        Vector root = (beta_f[j].array() + epsilon_smooth).sqrt().inverse();
        eta_f[j] = 0.5 * dset.w_r * root.cwiseProduct(mu_f);
    }
}

RiccatiOut riccati_tube_solve(const LtvData& ltv, const std::vector<Vector>& mu,
                              const Vector& mu_f,
                              const std::vector<std::vector<Vector>>& eta,
                              const std::vector<Vector>& eta_f, const CostSpec& cost,
                              const RobustConstraints& constraints,
                              const DisturbanceSet& dset, const std::vector<Vector>& dz,
                              const std::vector<Vector>& dv) {
    ltv.validate();
    const int N = ltv.N, n_x = ltv.n_x, n_u = ltv.n_u, n_c = ltv.n_c;
    RiccatiOut out;
    out.tube.N = N;
    out.tube.n_x = n_x;
    out.tube.n_u = n_u;
    out.tube.n_c = n_c;
    out.tube.Phi_x.assign(N, {});
    out.tube.Phi_u.assign(N, {});
    out.S_first.assign(N, Matrix());
    out.s_first.assign(N, Matrix());

    for (int j = 0; j < N; ++j) {
        // terminal blocks
        Matrix S = cost.Qbar_f;
        Matrix s = Matrix::Zero(n_x, n_c);
        if (constraints.G_f.rows() > 0) {
            if (!eta_f.empty() && eta_f[j].size() == constraints.G_f.rows())
                S = S + constraints.G_f.transpose() * eta_f[j].asDiagonal() * constraints.G_f;
            if (mu_f.size() == constraints.G_f.rows())
                s += 0.5 * constraints.G_f.transpose() * mu_f * dset.w_c.transpose();
        }
        double c_term = 0.0;
        std::vector<Matrix> Ks(N), ks(N);
        for (int k = N - 1; k >= j + 1; --k) {
            // stage weight blocks at step k
            Matrix Pxx = cost.Qbar, Puu = cost.Rbar;
            Matrix Pux = Matrix::Zero(n_u, n_x);
            Matrix px = Matrix::Zero(n_x, n_c), pu = Matrix::Zero(n_u, n_c);
            const auto& sc = constraints.stage[k];
            if (sc.G.rows() > 0) {
                Matrix Gx, Gu;
                split_stage(sc, n_x, Gx, Gu);
                if (k < static_cast<int>(eta.size()) && j < static_cast<int>(eta[k].size()) &&
                    eta[k][j].size() == sc.G.rows()) {
                    Pxx += Gx.transpose() * eta[k][j].asDiagonal() * Gx;
                    Puu += Gu.transpose() * eta[k][j].asDiagonal() * Gu;
                    Pux += Gu.transpose() * eta[k][j].asDiagonal() * Gx;
                }
                if (k < static_cast<int>(mu.size()) && mu[k].size() == sc.G.rows()) {
                    px += 0.5 * Gx.transpose() * mu[k] * dset.w_c.transpose();
                    pu += 0.5 * Gu.transpose() * mu[k] * dset.w_c.transpose();
                }
            }
            Matrix M = Puu + ltv.B[k].transpose() * S * ltv.B[k];
            Eigen::LDLT<Matrix> mf(M);
            if (mf.info() != Eigen::Success || !M.allFinite()) {
                M.diagonal().array() += 1e-10;
                mf.compute(M);
                out.regularized = true;
            }
            Matrix F = Pux + ltv.B[k].transpose() * S * ltv.A[k];
            Matrix f = pu + ltv.B[k].transpose() * s;
            Matrix H = Pxx + ltv.A[k].transpose() * S * ltv.A[k];
            Matrix h = px + ltv.A[k].transpose() * s;
            Ks[k] = -mf.solve(F);
            ks[k] = -mf.solve(f);
            c_term += trace_of(f, ks[k]);
            S = H + F.transpose() * Ks[k];
            s = h + F.transpose() * ks[k];
        }
        out.S_first[j] = S;
        out.s_first[j] = s;
        // forward pass
        Matrix X = initial_block(ltv, j, dz, dv);
        out.tube.Phi_x[j].push_back(X);
        for (int k = j + 1; k < N; ++k) {
            Matrix U = Ks[k] * X + ks[k];
            out.tube.Phi_u[j].push_back(U);
            X = ltv.A[k] * X + ltv.B[k] * U;
            out.tube.Phi_x[j].push_back(X);
        }
        const Matrix& X0 = out.tube.Phi_x[j][0];
        out.objective += trace_of(X0, out.S_first[j] * X0) + 2.0 * trace_of(out.s_first[j], X0) +
                         c_term;
    }
    return out;
}

double nominal_cost(const std::vector<Vector>& z, const std::vector<Vector>& v,
                    const CostSpec& cost) {
    double J = 0.0;
    for (const auto& zk : z) {
        Vector d = zk - cost.x_goal;
        J += 0.5 * d.dot(cost.Q * d);
    }
    for (size_t k = 0; k + 1 < v.size(); ++k) {
        Vector d = v[k] - v[k + 1];
        J += 0.5 * d.dot(cost.R * d);
    }
    return J;
}

double tube_cost(const TubeResponse& tube, const CostSpec& cost) {
    double Jt = 0.0;
    for (int j = 0; j < tube.N; ++j) {
        for (int k = j + 1; k < tube.N; ++k) {
            Jt += (cost.Qbar * tube.phi_x(k, j)).cwiseProduct(tube.phi_x(k, j)).sum();
            Jt += (cost.Rbar * tube.phi_u(k, j)).cwiseProduct(tube.phi_u(k, j)).sum();
        }
        Jt += (cost.Qbar_f * tube.phi_x(tube.N, j)).cwiseProduct(tube.phi_x(tube.N, j)).sum();
    }
    return Jt;
}

double inner_objective(const LtvData& ltv, const std::vector<Vector>& z,
                       const std::vector<Vector>& v, const CostSpec& cost,
                       const std::vector<Vector>& dz, const std::vector<Vector>& dv,
                       const TubeResponse& tube) {
    std::vector<Vector> zs(z.size()), vs(v.size());
    for (size_t k = 0; k < z.size(); ++k) zs[k] = z[k] + dz[k];
    for (size_t k = 0; k < v.size(); ++k) vs[k] = v[k] + dv[k];
    (void)ltv;
    return nominal_cost(zs, vs, cost) + tube_cost(tube, cost);
}

NominalQpOut nominal_qp_solve(const LtvData& ltv, const std::vector<Vector>& z,
                              const std::vector<Vector>& v, const CostSpec& cost,
                              const RobustConstraints& constraints,
                              const std::vector<Vector>& frozen_stage,
                              const Vector& frozen_terminal,
                              const std::vector<Matrix>& S_first,
                              const std::vector<Matrix>& s_first, double trust_region) {
    ltv.validate();
    const int N = ltv.N, n_x = ltv.n_x, n_u = ltv.n_u;
    const int nv = N * n_u;
    NominalQpOut out;

    if (trust_region < 1e-12) {
        // Degenerate trust region pins the increment at zero.
        out.status = SolveStatus::Solved;
        out.dz.assign(N + 1, Vector::Zero(n_x));
        out.dv.assign(N, Vector::Zero(n_u));
        out.mu.assign(N, Vector::Zero(0));
        for (int k = 0; k < N; ++k) out.mu[k] = Vector::Zero(constraints.stage[k].G.rows());
        out.mu_f = Vector::Zero(constraints.G_f.rows());
        return out;
    }

    std::vector<Matrix> Z = state_maps(ltv);
    Matrix P = Matrix::Zero(nv, nv);
    Vector q = Vector::Zero(nv);

    // goal-tracking quadratic
    for (int k = 0; k <= N; ++k) {
        if (Z[k].size() == 0) continue;
        P += Z[k].transpose() * cost.Q * Z[k];
        q += Z[k].transpose() * cost.Q * (z[k] - cost.x_goal);
    }
    // control-smoothness quadratic
    for (int k = 0; k + 1 < N; ++k) {
        Matrix Dsel = Matrix::Zero(n_u, nv);
        Dsel.middleCols(k * n_u, n_u) = Matrix::Identity(n_u, n_u);
        Dsel.middleCols((k + 1) * n_u, n_u) -= Matrix::Identity(n_u, n_u);
        P += Dsel.transpose() * cost.R * Dsel;
        q += Dsel.transpose() * cost.R * (v[k] - v[k + 1]);
    }
    // tube value-function expansion around the current response
    for (int j = 0; j < N; ++j) {
        const int nd = n_x + n_u;
        Matrix W(nd, nv);
        W.topRows(n_x) = Z[j];
        W.bottomRows(n_u).setZero();
        W.block(n_x, j * n_u, n_u, n_u) = Matrix::Identity(n_u, n_u);
        Matrix T = Matrix::Zero(nd, nd);
        Vector lin = Vector::Zero(nd);
        Matrix SE = S_first[j] * ltv.E[j] + s_first[j];
        auto dE_at = [&](int d) -> const Matrix& {
            return d < n_x ? ltv.dE_dz[j][d] : ltv.dE_dv[j][d - n_x];
        };
        for (int d1 = 0; d1 < nd; ++d1) {
            lin(d1) = 2.0 * trace_of(dE_at(d1), SE);
            for (int d2 = 0; d2 <= d1; ++d2) {
                T(d1, d2) = trace_of(dE_at(d1), S_first[j] * dE_at(d2));
                T(d2, d1) = T(d1, d2);
            }
        }
        P += 2.0 * W.transpose() * T * W;
        q += W.transpose() * lin;
    }

    // cone rows: stage + terminal inequalities, then the two trust regions
    int n_ineq = 0;
    for (int k = 0; k < N; ++k) n_ineq += static_cast<int>(constraints.stage[k].G.rows());
    n_ineq += static_cast<int>(constraints.G_f.rows());
    const int m = n_ineq + (1 + N * n_x) + (1 + N * n_u);
    Matrix Ac = Matrix::Zero(m, nv);
    Vector bc = Vector::Zero(m);
    ConeSpec cones;
    if (n_ineq > 0) cones.append(ConeKind::Nonneg, n_ineq);
    int row = 0;
    for (int k = 0; k < N; ++k) {
        const auto& sc = constraints.stage[k];
        if (sc.G.rows() == 0) continue;
        Matrix Gx, Gu;
        split_stage(sc, n_x, Gx, Gu);
        Matrix lin = Gx * Z[k];
        lin.middleCols(k * n_u, n_u) += Gu;
        Vector zu(n_x + n_u);
        zu << z[k], v[k];
        Vector cst = sc.G * zu + sc.g + frozen_stage[k];
        Ac.middleRows(row, sc.G.rows()) = lin;
        bc.segment(row, sc.G.rows()) = -cst;
        row += static_cast<int>(sc.G.rows());
    }
    if (constraints.G_f.rows() > 0) {
        Matrix lin = constraints.G_f * Z[N];
        Vector cst = constraints.G_f * z[N] + constraints.g_f + frozen_terminal;
        Ac.middleRows(row, constraints.G_f.rows()) = lin;
        bc.segment(row, constraints.G_f.rows()) = -cst;
        row += static_cast<int>(constraints.G_f.rows());
    }
    // || stacked dz || <= eps
    cones.append(ConeKind::SecondOrder, 1 + N * n_x);
    bc(row) = trust_region;
    ++row;
    for (int k = 1; k <= N; ++k) {
        Ac.middleRows(row, n_x) = -Z[k];
        row += n_x;
    }
    // || stacked dv || <= eps
    cones.append(ConeKind::SecondOrder, 1 + N * n_u);
    bc(row) = trust_region;
    ++row;
    Ac.middleRows(row, N * n_u) = -Matrix::Identity(N * n_u, nv);
    row += N * n_u;

    ConicProgram prog;
    prog.P = P + P.transpose();  // symmetrize: P accumulated 1/2-free
    prog.P *= 0.5;
    prog.q = q;
    prog.A = Ac;
    prog.b = bc;
    prog.cones = cones;
    Vector row_scale = equilibrate_cone_rows(prog);
    ConicSolution sol = solve(prog, 0.0);
    out.status = sol.status;
    if (sol.status != SolveStatus::Solved) return out;
    sol.z = row_scale.cwiseProduct(sol.z);

    Vector V = sol.x;
    out.dv.assign(N, Vector::Zero(n_u));
    for (int k = 0; k < N; ++k) out.dv[k] = V.segment(k * n_u, n_u);
    out.dz.assign(N + 1, Vector::Zero(n_x));
    for (int k = 1; k <= N; ++k) out.dz[k] = Z[k] * V;
    out.mu.assign(N, Vector());
    int zr = 0;
    for (int k = 0; k < N; ++k) {
        out.mu[k] = sol.z.segment(zr, constraints.stage[k].G.rows());
        zr += static_cast<int>(constraints.stage[k].G.rows());
    }
    out.mu_f = sol.z.segment(zr, constraints.G_f.rows());
    zr += static_cast<int>(constraints.G_f.rows());
    out.gamma_z = sol.z(zr);
    out.gamma_v = sol.z(zr + 1 + N * n_x);
    return out;
}

namespace {

// Residual of the joint first-order conditions of the inner problem at the
// current alternation iterate.
double joint_kkt_residual(const LtvData& ltv, const std::vector<Vector>& z,
                          const std::vector<Vector>& v, const RobustConstraints& constraints,
                          const CostSpec& cost, const DisturbanceSet& dset, double trust_region,
                          const std::vector<Vector>& dz, const std::vector<Vector>& dv,
                          const TubeResponse& tube, const InnerDuals& duals,
                          double epsilon_smooth) {
    const int N = ltv.N, n_x = ltv.n_x, n_u = ltv.n_u, n_c = ltv.n_c;
    double res = 0.0;
    auto bump = [&](double r) { res = std::max(res, std::abs(r)); };

    // (a)+(b): stationarity in the nominal increment and the response blocks,
    // via one adjoint sweep per injection step.
    std::vector<Vector> grad_z(N + 1, Vector::Zero(n_x));
    std::vector<Vector> grad_v(N, Vector::Zero(n_u));
    for (int k = 0; k <= N; ++k) grad_z[k] = cost.Q * (z[k] + dz[k] - cost.x_goal);
    for (int k = 0; k + 1 < N; ++k) {
        Vector d = cost.R * ((v[k] + dv[k]) - (v[k + 1] + dv[k + 1]));
        grad_v[k] += d;
        grad_v[k + 1] -= d;
    }
    for (int k = 0; k < N; ++k) {
        const auto& sc = constraints.stage[k];
        if (sc.G.rows() == 0) continue;
        Matrix Gx, Gu;
        split_stage(sc, n_x, Gx, Gu);
        grad_z[k] += Gx.transpose() * duals.mu[k];
        grad_v[k] += Gu.transpose() * duals.mu[k];
    }
    if (constraints.G_f.rows() > 0) grad_z[N] += constraints.G_f.transpose() * duals.mu_f;
    // trust-region subgradients
    double nz = 0.0, nv2 = 0.0;
    for (int k = 1; k <= N; ++k) nz += dz[k].squaredNorm();
    for (int k = 0; k < N; ++k) nv2 += dv[k].squaredNorm();
    nz = std::sqrt(nz);
    nv2 = std::sqrt(nv2);
    if (duals.gamma_z > 1e-12 && nz > 1e-12)
        for (int k = 1; k <= N; ++k) grad_z[k] += duals.gamma_z * dz[k] / nz;
    if (duals.gamma_v > 1e-12 && nv2 > 1e-12)
        for (int k = 0; k < N; ++k) grad_v[k] += duals.gamma_v * dv[k] / nv2;

    for (int j = 0; j < N; ++j) {
        // adjoint sweep along the j-th response column
        Matrix lam = 2.0 * cost.Qbar_f * tube.phi_x(N, j);
        if (constraints.G_f.rows() > 0) {
            lam += constraints.G_f.transpose() * duals.mu_f * dset.w_c.transpose();
            lam += 2.0 * constraints.G_f.transpose() * duals.eta_f[j].asDiagonal() *
                   (constraints.G_f * tube.phi_x(N, j));
        }
        for (int k = N - 1; k >= j + 1; --k) {
            Matrix gx = 2.0 * cost.Qbar * tube.phi_x(k, j);
            Matrix gu = 2.0 * cost.Rbar * tube.phi_u(k, j);
            const auto& sc = constraints.stage[k];
            if (sc.G.rows() > 0) {
                Matrix Gx, Gu;
                split_stage(sc, n_x, Gx, Gu);
                Matrix C = Gx * tube.phi_x(k, j) + Gu * tube.phi_u(k, j);
                gx += Gx.transpose() * duals.mu[k] * dset.w_c.transpose();
                gu += Gu.transpose() * duals.mu[k] * dset.w_c.transpose();
                gx += 2.0 * Gx.transpose() * duals.eta[k][j].asDiagonal() * C;
                gu += 2.0 * Gu.transpose() * duals.eta[k][j].asDiagonal() * C;
            }
            Matrix ru = gu + ltv.B[k].transpose() * lam;
            bump(ru.cwiseAbs().maxCoeff());
            lam = gx + ltv.A[k].transpose() * lam;
        }
        // chain into the nominal increment through the initial block
        for (int d = 0; d < n_x; ++d) grad_z[j](d) += trace_of(ltv.dE_dz[j][d], lam);
        for (int d = 0; d < n_u; ++d) grad_v[j](d) += trace_of(ltv.dE_dv[j][d], lam);
    }
    // reduce the nominal gradient through the dynamics
    Vector p = grad_z[N];
    for (int k = N - 1; k >= 0; --k) {
        bump((grad_v[k] + ltv.B[k].transpose() * p).cwiseAbs().maxCoeff());
        p = grad_z[k] + ltv.A[k].transpose() * p;
    }

    // (c): eta consistency
    for (int k = 1; k < N; ++k)
        for (int j = 0; j < k; ++j) {
            if (duals.beta[k][j].size() == 0) continue;
            Vector root = (duals.beta[k][j].array() + epsilon_smooth).sqrt().inverse();
            bump((duals.eta[k][j] - 0.5 * dset.w_r * root.cwiseProduct(duals.mu[k]))
                     .cwiseAbs()
                     .maxCoeff());
        }
    for (int j = 0; j < N; ++j) {
        if (duals.beta_f[j].size() == 0) continue;
        Vector root = (duals.beta_f[j].array() + epsilon_smooth).sqrt().inverse();
        bump((duals.eta_f[j] - 0.5 * dset.w_r * root.cwiseProduct(duals.mu_f))
                 .cwiseAbs()
                 .maxCoeff());
    }

    // (e): primal feasibility and complementarity of the robust rows, with
    // the same epsilon-smoothed row norms the solver optimizes
    for (int k = 0; k < N; ++k) {
        const auto& sc = constraints.stage[k];
        if (sc.G.rows() == 0) continue;
        Vector zu(n_x + n_u);
        zu << z[k] + dz[k], v[k] + dv[k];
        Vector val = sc.G * zu + sc.g;
        Matrix Gx, Gu;
        split_stage(sc, n_x, Gx, Gu);
        for (int j = 0; j < k; ++j) {
            Matrix C = Gx * tube.phi_x(k, j) + Gu * tube.phi_u(k, j);
            val += C * dset.w_c;
            val += dset.w_r * (duals.beta[k][j].array() + epsilon_smooth).sqrt().matrix();
        }
        for (int r = 0; r < val.size(); ++r) {
            bump(std::max(val(r), 0.0));
            bump(duals.mu[k](r) * val(r));
            bump(std::min(duals.mu[k](r), 0.0));
        }
    }
    if (constraints.G_f.rows() > 0) {
        Vector val = constraints.G_f * (z[N] + dz[N]) + constraints.g_f;
        for (int j = 0; j < N; ++j) {
            Matrix C = constraints.G_f * tube.phi_x(N, j);
            val += C * dset.w_c;
            val += dset.w_r * (duals.beta_f[j].array() + epsilon_smooth).sqrt().matrix();
        }
        for (int r = 0; r < val.size(); ++r) {
            bump(std::max(val(r), 0.0));
            bump(duals.mu_f(r) * val(r));
            bump(std::min(duals.mu_f(r), 0.0));
        }
    }

    // (g): trust-region feasibility and complementarity
    bump(std::max(nz - trust_region, 0.0));
    bump(duals.gamma_z * (nz - trust_region));
    bump(std::max(nv2 - trust_region, 0.0));
    bump(duals.gamma_v * (nv2 - trust_region));
    return res;
}

}  // namespace

namespace {

// Stacks the alternation state (duals and increments) for the secant-based
// relaxation estimate.
Vector stack_state(const std::vector<Vector>& mu, const Vector& mu_f, double gz, double gv,
                   const std::vector<Vector>& dz, const std::vector<Vector>& dv) {
    int len = 2;
    for (const auto& m : mu) len += static_cast<int>(m.size());
    len += static_cast<int>(mu_f.size());
    for (const auto& d : dz) len += static_cast<int>(d.size());
    for (const auto& d : dv) len += static_cast<int>(d.size());
    Vector s(len);
    int off = 0;
    for (const auto& m : mu) {
        s.segment(off, m.size()) = m;
        off += static_cast<int>(m.size());
    }
    s.segment(off, mu_f.size()) = mu_f;
    off += static_cast<int>(mu_f.size());
    s(off++) = gz;
    s(off++) = gv;
    for (const auto& d : dz) {
        s.segment(off, d.size()) = d;
        off += static_cast<int>(d.size());
    }
    for (const auto& d : dv) {
        s.segment(off, d.size()) = d;
        off += static_cast<int>(d.size());
    }
    return s;
}

}  // namespace

InnerSolveResult solve_inner(const LtvData& ltv, const std::vector<Vector>& z,
                             const std::vector<Vector>& v, const RobustConstraints& constraints,
                             const CostSpec& cost, const DisturbanceSet& dset,
                             double trust_region, const InnerSettings& settings) {
    ltv.validate();
    if (dual_norm_exponent(dset) != 2)
        throw std::invalid_argument("solve_inner: the alternating solver requires the l2 ball");
    const int N = ltv.N;
    InnerSolveResult out;
    out.dz.assign(N + 1, Vector::Zero(ltv.n_x));
    out.dv.assign(N, Vector::Zero(ltv.n_u));
    out.duals.mu.assign(N, Vector());
    for (int k = 0; k < N; ++k) out.duals.mu[k] = Vector::Zero(constraints.stage[k].G.rows());
    out.duals.mu_f = Vector::Zero(constraints.G_f.rows());
    update_eta({}, {}, out.duals.mu, out.duals.mu_f, dset, settings.epsilon_smooth,
               out.duals.eta, out.duals.eta_f);
    RiccatiOut ric = riccati_tube_solve(ltv, out.duals.mu, out.duals.mu_f, out.duals.eta,
                                        out.duals.eta_f, cost, constraints, dset, out.dz, out.dv);
    compute_beta(ric.tube, constraints, out.duals.beta, out.duals.beta_f);

    // Damped block-coordinate alternation. The relaxation factor follows a
    // secant estimate of the fixed-point map's dominant eigenvalue, so
    // contractive instances keep full steps while oscillating or expansive
    // ones are averaged at the optimal rate.
    double theta = 1.0;
    double theta_used = 1.0;
    Vector step_prev;
    double res_prev = std::numeric_limits<double>::infinity();
    double best_res = std::numeric_limits<double>::infinity();
    InnerSolveResult best = out;
    double prev_obj = std::numeric_limits<double>::infinity();
    bool ever_solved = false;
    for (int alt = 1; alt <= settings.max_alternations; ++alt) {
        out.kkt.alternations = alt;
        std::vector<Vector> frozen(N);
        for (int k = 0; k < N; ++k) {
            const auto& sc = constraints.stage[k];
            frozen[k] = Vector::Zero(sc.G.rows());
            if (sc.G.rows() == 0) continue;
            Matrix Gx, Gu;
            split_stage(sc, ltv.n_x, Gx, Gu);
            for (int j = 0; j < k; ++j) {
                Matrix C = Gx * ric.tube.phi_x(k, j) + Gu * ric.tube.phi_u(k, j);
                frozen[k] += C * dset.w_c;
                frozen[k] += dset.w_r *
                             (out.duals.beta[k][j].array() + settings.epsilon_smooth)
                                 .sqrt()
                                 .matrix();
            }
        }
        Vector frozen_f = Vector::Zero(constraints.G_f.rows());
        for (int j = 0; j < N && constraints.G_f.rows() > 0; ++j) {
            Matrix C = constraints.G_f * ric.tube.phi_x(N, j);
            frozen_f += C * dset.w_c;
            frozen_f += dset.w_r *
                        (out.duals.beta_f[j].array() + settings.epsilon_smooth).sqrt().matrix();
        }

        NominalQpOut qp = nominal_qp_solve(ltv, z, v, cost, constraints, frozen, frozen_f,
                                           ric.S_first, ric.s_first, trust_region);
        if (qp.status != SolveStatus::Solved) {
            if (qp.status == SolveStatus::Infeasible && !ever_solved) {
                out.status = SolveStatus::Infeasible;
                return out;
            }
            // retreat: shrink the duals that inflated the subproblem
            theta = std::max(0.05, 0.5 * theta);
            for (auto& m : out.duals.mu) m *= 0.5;
            out.duals.mu_f *= 0.5;
            update_eta(out.duals.beta, out.duals.beta_f, out.duals.mu, out.duals.mu_f, dset,
                       settings.epsilon_smooth, out.duals.eta, out.duals.eta_f);
            ric = riccati_tube_solve(ltv, out.duals.mu, out.duals.mu_f, out.duals.eta,
                                     out.duals.eta_f, cost, constraints, dset, out.dz, out.dv);
            compute_beta(ric.tube, constraints, out.duals.beta, out.duals.beta_f);
            continue;
        }
        ever_solved = true;
        {
            Vector proposal = stack_state(qp.mu, qp.mu_f, qp.gamma_z, qp.gamma_v, qp.dz, qp.dv);
            Vector current = stack_state(out.duals.mu, out.duals.mu_f, out.duals.gamma_z,
                                         out.duals.gamma_v, out.dz, out.dv);
            Vector step = proposal - current;
            if (step_prev.size() == step.size() && step_prev.squaredNorm() > 1e-24) {
                // successive steps obey s+ = (1 + theta (rho - 1)) s for the
                // dominant eigenvalue rho of the undamped map
                double c = step.dot(step_prev) / step_prev.squaredNorm();
                double rho = 1.0 + (c - 1.0) / theta_used;
                theta = std::clamp(1.0 / (1.0 - std::min(rho, 0.9)), 0.02, 1.0);
            }
            step_prev = step;
            theta_used = theta;
        }
        for (int k = 0; k <= N; ++k) out.dz[k] = theta * qp.dz[k] + (1.0 - theta) * out.dz[k];
        for (int k = 0; k < N; ++k) out.dv[k] = theta * qp.dv[k] + (1.0 - theta) * out.dv[k];
        for (int k = 0; k < N; ++k)
            out.duals.mu[k] = theta * qp.mu[k] + (1.0 - theta) * out.duals.mu[k];
        out.duals.mu_f = theta * qp.mu_f + (1.0 - theta) * out.duals.mu_f;
        out.duals.gamma_z = theta * qp.gamma_z + (1.0 - theta) * out.duals.gamma_z;
        out.duals.gamma_v = theta * qp.gamma_v + (1.0 - theta) * out.duals.gamma_v;
        update_eta(out.duals.beta, out.duals.beta_f, out.duals.mu, out.duals.mu_f, dset,
                   settings.epsilon_smooth, out.duals.eta, out.duals.eta_f);
        ric = riccati_tube_solve(ltv, out.duals.mu, out.duals.mu_f, out.duals.eta,
                                 out.duals.eta_f, cost, constraints, dset, out.dz, out.dv);
        compute_beta(ric.tube, constraints, out.duals.beta, out.duals.beta_f);
        out.tube = ric.tube;

        double obj = inner_objective(ltv, z, v, cost, out.dz, out.dv, out.tube);
        out.kkt.objective_history.push_back(obj);
        if (obj > prev_obj + 1e-9) out.kkt.monotonicity_violated = true;
        prev_obj = obj;
        out.objective = obj;
        out.kkt.residual = joint_kkt_residual(ltv, z, v, constraints, cost, dset, trust_region,
                                              out.dz, out.dv, out.tube, out.duals,
                                              settings.epsilon_smooth);
        out.status = SolveStatus::Solved;
        if (out.kkt.residual < best_res) {
            best_res = out.kkt.residual;
            best = out;
        }
        if (out.kkt.residual <= settings.kkt_tol) {
            out.kkt.converged = true;
            return out;
        }
        res_prev = out.kkt.residual;
        (void)res_prev;
    }
    best.kkt.converged = false;
    best.kkt.alternations = out.kkt.alternations;
    best.kkt.objective_history = out.kkt.objective_history;
    best.kkt.monotonicity_violated = out.kkt.monotonicity_violated;
    best.status = ever_solved ? SolveStatus::Solved : SolveStatus::NumericalFailure;
    return best;
}

// ---------------------------------------------------------------------------
// Reference solver: the subproblem flattened into one conic program.

namespace {

struct AffMat {
    Matrix lin;  // (rows*cols) x nv, column-major vec
    Vector cst;
    int rows = 0, cols = 0;

    static AffMat constant(const Matrix& M, int nv) {
        AffMat a;
        a.rows = static_cast<int>(M.rows());
        a.cols = static_cast<int>(M.cols());
        a.lin = Matrix::Zero(M.size(), nv);
        a.cst = Eigen::Map<const Vector>(M.data(), M.size());
        return a;
    }
    Matrix value(const Vector& V) const {
        Vector flat = lin * V + cst;
        return Eigen::Map<const Matrix>(flat.data(), rows, cols);
    }
};

AffMat left_multiply(const Matrix& L, const AffMat& X) {
    AffMat out;
    out.rows = static_cast<int>(L.rows());
    out.cols = X.cols;
    out.lin = Matrix::Zero(out.rows * out.cols, X.lin.cols());
    out.cst = Vector::Zero(out.rows * out.cols);
    for (int c = 0; c < X.cols; ++c) {
        out.lin.middleRows(c * out.rows, out.rows) = L * X.lin.middleRows(c * X.rows, X.rows);
        out.cst.segment(c * out.rows, out.rows) = L * X.cst.segment(c * X.rows, X.rows);
    }
    return out;
}

AffMat add(const AffMat& A, const AffMat& B) {
    AffMat out = A;
    out.lin += B.lin;
    out.cst += B.cst;
    return out;
}

}  // namespace

InnerSolveResult solve_inner_reference(const LtvData& ltv, const std::vector<Vector>& z,
                                       const std::vector<Vector>& v,
                                       const RobustConstraints& constraints,
                                       const CostSpec& cost, const DisturbanceSet& dset,
                                       double trust_region) {
    ltv.validate();
    if (dual_norm_exponent(dset) != 2)
        throw std::invalid_argument("solve_inner_reference: requires the l2 ball");
    const int N = ltv.N, n_x = ltv.n_x, n_u = ltv.n_u, n_c = ltv.n_c;

    // variable layout: [dv | Phi_u blocks | slack t per (k,j,row) | terminal t]
    const int off_dv = 0;
    int off_phi = N * n_u;
    std::vector<std::vector<int>> phi_off(N);
    int cursor = off_phi;
    for (int j = 0; j < N; ++j)
        for (int k = j + 1; k < N; ++k) {
            phi_off[j].push_back(cursor);
            cursor += n_u * n_c;
        }
    std::vector<std::vector<int>> t_off(N);  // stage k: offsets per j
    for (int k = 1; k < N; ++k) {
        for (int j = 0; j < k; ++j) {
            t_off[k].push_back(cursor);
            cursor += static_cast<int>(constraints.stage[k].G.rows());
        }
    }
    std::vector<int> tf_off(N);
    for (int j = 0; j < N; ++j) {
        tf_off[j] = cursor;
        cursor += static_cast<int>(constraints.G_f.rows());
    }
    const int nv = cursor;
    if (nv > 2000)
        throw std::invalid_argument("solve_inner_reference: instance too large");

    std::vector<Matrix> Z = state_maps(ltv);
    auto dz_map = [&](int k) {  // dz_k as affine rows over V
        Matrix lin = Matrix::Zero(n_x, nv);
        lin.middleCols(off_dv, N * n_u) = Z[k];
        return lin;
    };

    // response blocks as affine maps
    std::vector<std::vector<AffMat>> Phi_x(N), Phi_u(N);
    for (int j = 0; j < N; ++j) {
        AffMat X = AffMat::constant(ltv.E[j], nv);
        for (int d = 0; d < n_x; ++d) {
            Vector flat = Eigen::Map<const Vector>(ltv.dE_dz[j][d].data(), n_x * n_c);
            X.lin += flat * dz_map(j).row(d);
        }
        for (int d = 0; d < n_u; ++d) {
            Vector flat = Eigen::Map<const Vector>(ltv.dE_dv[j][d].data(), n_x * n_c);
            Eigen::RowVectorXd sel = Eigen::RowVectorXd::Zero(nv);
            sel(off_dv + j * n_u + d) = 1.0;
            X.lin += flat * sel;
        }
        Phi_x[j].push_back(X);
        for (int k = j + 1; k < N; ++k) {
            AffMat U;
            U.rows = n_u;
            U.cols = n_c;
            U.lin = Matrix::Zero(n_u * n_c, nv);
            U.cst = Vector::Zero(n_u * n_c);
            for (int e = 0; e < n_u * n_c; ++e)
                U.lin(e, phi_off[j][k - j - 1] + e) = 1.0;
            Phi_u[j].push_back(U);
            X = add(left_multiply(ltv.A[k], X), left_multiply(ltv.B[k], U));
            Phi_x[j].push_back(X);
        }
    }

    // quadratic cost
    Matrix P = Matrix::Zero(nv, nv);
    Vector q = Vector::Zero(nv);
    for (int k = 0; k <= N; ++k) {
        Matrix lin = dz_map(k);
        P += lin.transpose() * cost.Q * lin;
        q += lin.transpose() * cost.Q * (z[k] - cost.x_goal);
    }
    for (int k = 0; k + 1 < N; ++k) {
        Matrix Dsel = Matrix::Zero(n_u, nv);
        Dsel.middleCols(off_dv + k * n_u, n_u) = Matrix::Identity(n_u, n_u);
        Dsel.middleCols(off_dv + (k + 1) * n_u, n_u) -= Matrix::Identity(n_u, n_u);
        P += Dsel.transpose() * cost.R * Dsel;
        q += Dsel.transpose() * cost.R * (v[k] - v[k + 1]);
    }
    auto add_quad = [&](const AffMat& X, const Matrix& Wt) {
        // adds || Wt^(1/2) X ||_F^2 (no 1/2): P gets 2 * lin' (I ⊗ Wt) lin
        for (int c = 0; c < X.cols; ++c) {
            auto Lc = X.lin.middleRows(c * X.rows, X.rows);
            auto cc = X.cst.segment(c * X.rows, X.rows);
            P += 2.0 * Lc.transpose() * Wt * Lc;
            q += 2.0 * Lc.transpose() * Wt * cc;
        }
    };
    for (int j = 0; j < N; ++j) {
        for (int k = j + 1; k < N; ++k) {
            add_quad(Phi_x[j][k - j - 1], cost.Qbar);
            add_quad(Phi_u[j][k - j - 1], cost.Rbar);
        }
        add_quad(Phi_x[j][N - j - 1], cost.Qbar_f);
    }

    // cone rows
    int n_ineq = 0;
    for (int k = 0; k < N; ++k) n_ineq += static_cast<int>(constraints.stage[k].G.rows());
    n_ineq += static_cast<int>(constraints.G_f.rows());
    int n_soc_rows = 0;
    for (int k = 1; k < N; ++k)
        n_soc_rows += k * static_cast<int>(constraints.stage[k].G.rows()) * (1 + n_c);
    n_soc_rows += N * static_cast<int>(constraints.G_f.rows()) * (1 + n_c);
    const int m = n_ineq + n_soc_rows + (1 + N * n_x) + (1 + N * n_u);
    Matrix Ac = Matrix::Zero(m, nv);
    Vector bc = Vector::Zero(m);
    ConeSpec cones;
    if (n_ineq > 0) cones.append(ConeKind::Nonneg, n_ineq);
    int row = 0;

    auto constraint_block = [&](int k, int j) {  // G_k [Phi_x; Phi_u]_{k,j}
        const auto& sc = constraints.stage[k];
        Matrix Gx, Gu;
        split_stage(sc, n_x, Gx, Gu);
        return add(left_multiply(Gx, Phi_x[j][k - j - 1]),
                   left_multiply(Gu, Phi_u[j][k - j - 1]));
    };

    for (int k = 0; k < N; ++k) {
        const auto& sc = constraints.stage[k];
        const int rows_k = static_cast<int>(sc.G.rows());
        if (rows_k == 0) continue;
        Matrix lin = Matrix::Zero(rows_k, nv);
        Matrix Gx, Gu;
        split_stage(sc, n_x, Gx, Gu);
        lin += Gx * dz_map(k);
        lin.middleCols(off_dv + k * n_u, n_u) += Gu;
        Vector zu(n_x + n_u);
        zu << z[k], v[k];
        Vector cst = sc.G * zu + sc.g;
        for (int j = 0; j < k; ++j) {
            AffMat C = constraint_block(k, j);
            for (int r = 0; r < rows_k; ++r) {
                for (int c = 0; c < n_c; ++c) {
                    lin.row(r) += dset.w_c(c) * C.lin.row(c * rows_k + r);
                    cst(r) += dset.w_c(c) * C.cst(c * rows_k + r);
                }
                lin(r, t_off[k][j] + r) += dset.w_r;
            }
        }
        Ac.middleRows(row, rows_k) = lin;
        bc.segment(row, rows_k) = -cst;
        row += rows_k;
    }
    const int rows_f = static_cast<int>(constraints.G_f.rows());
    if (rows_f > 0) {
        Matrix lin = constraints.G_f * dz_map(N);
        Vector cst = constraints.G_f * z[N] + constraints.g_f;
        for (int j = 0; j < N; ++j) {
            AffMat C = left_multiply(constraints.G_f, Phi_x[j][N - j - 1]);
            for (int r = 0; r < rows_f; ++r) {
                for (int c = 0; c < n_c; ++c) {
                    lin.row(r) += dset.w_c(c) * C.lin.row(c * rows_f + r);
                    cst(r) += dset.w_c(c) * C.cst(c * rows_f + r);
                }
                lin(r, tf_off[j] + r) += dset.w_r;
            }
        }
        Ac.middleRows(row, rows_f) = lin;
        bc.segment(row, rows_f) = -cst;
        row += rows_f;
    }
    // per-(k,j,row) epigraph cones t >= || row of G Phi ||
    for (int k = 1; k < N; ++k) {
        const int rows_k = static_cast<int>(constraints.stage[k].G.rows());
        for (int j = 0; j < k; ++j) {
            if (rows_k == 0) continue;
            AffMat C = constraint_block(k, j);
            for (int r = 0; r < rows_k; ++r) {
                cones.append(ConeKind::SecondOrder, 1 + n_c);
                Ac(row, t_off[k][j] + r) = -1.0;
                ++row;
                for (int c = 0; c < n_c; ++c) {
                    Ac.row(row) = -C.lin.row(c * rows_k + r);
                    bc(row) = C.cst(c * rows_k + r);
                    ++row;
                }
            }
        }
    }
    for (int j = 0; j < N && rows_f > 0; ++j) {
        AffMat C = left_multiply(constraints.G_f, Phi_x[j][N - j - 1]);
        for (int r = 0; r < rows_f; ++r) {
            cones.append(ConeKind::SecondOrder, 1 + n_c);
            Ac(row, tf_off[j] + r) = -1.0;
            ++row;
            for (int c = 0; c < n_c; ++c) {
                Ac.row(row) = -C.lin.row(c * rows_f + r);
                bc(row) = C.cst(c * rows_f + r);
                ++row;
            }
        }
    }
    // trust regions
    cones.append(ConeKind::SecondOrder, 1 + N * n_x);
    bc(row) = trust_region;
    ++row;
    for (int k = 1; k <= N; ++k) {
        Ac.middleRows(row, n_x) = -dz_map(k);
        row += n_x;
    }
    cones.append(ConeKind::SecondOrder, 1 + N * n_u);
    bc(row) = trust_region;
    ++row;
    Ac.block(row, off_dv, N * n_u, N * n_u) = -Matrix::Identity(N * n_u, N * n_u);
    row += N * n_u;

    ConicProgram prog;
    prog.P = 0.5 * (P + P.transpose());
    prog.q = q;
    prog.A = Ac;
    prog.b = bc;
    prog.cones = cones;
    Vector row_scale = equilibrate_cone_rows(prog);
    ConicSolution sol = solve(prog, 0.0);

    InnerSolveResult out;
    out.status = sol.status;
    if (sol.status != SolveStatus::Solved) return out;
    sol.z = row_scale.cwiseProduct(sol.z);
    const Vector& V = sol.x;
    out.dv.assign(N, Vector::Zero(n_u));
    for (int k = 0; k < N; ++k) out.dv[k] = V.segment(off_dv + k * n_u, n_u);
    out.dz.assign(N + 1, Vector::Zero(n_x));
    for (int k = 1; k <= N; ++k) out.dz[k] = Z[k] * V.segment(off_dv, N * n_u);
    std::vector<std::vector<Matrix>> Pu(N);
    for (int j = 0; j < N; ++j)
        for (int k = j + 1; k < N; ++k) Pu[j].push_back(Phi_u[j][k - j - 1].value(V));
    out.tube = propagate_with_correction(ltv, Pu, out.dz, out.dv);
    out.objective = inner_objective(ltv, z, v, cost, out.dz, out.dv, out.tube);
    out.duals.mu.assign(N, Vector());
    int zr = 0;
    for (int k = 0; k < N; ++k) {
        out.duals.mu[k] = sol.z.segment(zr, constraints.stage[k].G.rows());
        zr += static_cast<int>(constraints.stage[k].G.rows());
    }
    out.duals.mu_f = sol.z.segment(zr, rows_f);
    out.kkt.converged = true;
    out.kkt.residual = 0.0;
    return out;
}

}  // namespace tubeplan
