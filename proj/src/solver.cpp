#include "tubeplan/solver.hpp"

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <deque>

namespace tubeplan {

namespace {

struct Iterate {
    Vector x, s, z;
};

struct ResidualSet {
    Vector rd, rp, rc;
    double norm2;
    double inf;
};

// rd = Px + q + A'z, rp = Ax + s - b, rc = s∘z - kappa e.
ResidualSet residuals(const ConicProgram& prog, const Iterate& it, double kappa,
                      const Vector& e) {
    ResidualSet r;
    r.rd = prog.P * it.x + prog.q + prog.A.transpose() * it.z;
    r.rp = prog.A * it.x + it.s - prog.b;
    r.rc = cone_product(prog.cones, it.s, it.z) - kappa * e;
    r.norm2 = std::sqrt(r.rd.squaredNorm() + r.rp.squaredNorm() + r.rc.squaredNorm());
    r.inf = std::max({r.rd.cwiseAbs().maxCoeff(), r.rp.cwiseAbs().maxCoeff(),
                      r.rc.cwiseAbs().maxCoeff()});
    return r;
}

// Smallest Jordan eigenvalue of the blockwise product w = s∘z:
// min element for Nonneg blocks, w0 - ||w1|| for SecondOrder blocks.
double min_product_eig(const ConeSpec& spec, const Vector& w) {
    double lo = std::numeric_limits<double>::infinity();
    int off = 0;
    for (const auto& blk : spec.blocks()) {
        auto wb = w.segment(off, blk.dim);
        if (blk.kind == ConeKind::Nonneg)
            lo = std::min(lo, wb.minCoeff());
        else
            lo = std::min(lo, wb(0) - wb.tail(blk.dim - 1).norm());
        off += blk.dim;
    }
    return lo;
}

ConicSolution solve_unconstrained(const ConicProgram& prog, const SolverSettings& settings) {
    ConicSolution sol;
    const int n = prog.num_vars();
    Matrix M = prog.P + settings.regularization * Matrix::Identity(n, n);
    Eigen::LDLT<Matrix> ldlt(M);
    if (ldlt.info() != Eigen::Success) {
        sol.status = SolveStatus::NumericalFailure;
        return sol;
    }
    sol.x = ldlt.solve(-prog.q);
    // One refinement pass against the unregularized system.
    sol.x += ldlt.solve(-prog.q - prog.P * sol.x);
    sol.s = Vector(0);
    sol.z = Vector(0);
    sol.kappa_achieved = 0.0;
    sol.iterations = 1;
    if (!sol.x.allFinite() ||
        (prog.P * sol.x + prog.q).cwiseAbs().maxCoeff() > 1e3 * settings.tol_residual) {
        sol.status = SolveStatus::NumericalFailure;
        return sol;
    }
    sol.status = SolveStatus::Solved;
    return sol;
}

// Blockwise solve L(v) x = u with the arrow operator of the cone.
Vector arrow_solve(const ConeSpec& spec, const Vector& v, const Vector& u) {
    Vector x(u.size());
    int off = 0;
    for (const auto& blk : spec.blocks()) {
        auto vb = v.segment(off, blk.dim);
        auto ub = u.segment(off, blk.dim);
        if (blk.kind == ConeKind::Nonneg) {
            x.segment(off, blk.dim) = ub.cwiseQuotient(vb);
        } else {
            double det = vb(0) * vb(0) - vb.tail(blk.dim - 1).squaredNorm();
            double x0 = (vb(0) * ub(0) - vb.tail(blk.dim - 1).dot(ub.tail(blk.dim - 1))) / det;
            x(off) = x0;
            x.segment(off + 1, blk.dim - 1) =
                (ub.tail(blk.dim - 1) - x0 * vb.tail(blk.dim - 1)) / vb(0);
        }
        off += blk.dim;
    }
    return x;
}

Matrix arrow_solve(const ConeSpec& spec, const Vector& v, const Matrix& U) {
    Matrix X(U.rows(), U.cols());
    for (int c = 0; c < U.cols(); ++c) X.col(c) = arrow_solve(spec, v, Vector(U.col(c)));
    return X;
}

// Newton step on the product-form system
//   [P A' 0; A 0 I; 0 L(s) L(z)] (dx, dz, ds) = -(rd, rp, rc).
// Small systems factor the full matrix; larger ones eliminate down to an
// n-by-n core with full-system refinement, falling back to the dense
// factorization when the refined direction is not accurate enough.
bool newton_direction(const ConicProgram& prog, const Iterate& it, const ResidualSet& r,
                      double reg, Vector& dx, Vector& ds, Vector& dz) {
    const int n = prog.num_vars();
    const int m = prog.num_cone_rows();
    const ConeSpec& cones = prog.cones;

    auto full_residual = [&](const Vector& vx, const Vector& vz, const Vector& vs, Vector& e1,
                             Vector& e2, Vector& e3) {
        e1 = prog.P * vx + prog.A.transpose() * vz + r.rd;
        e2 = prog.A * vx + vs + r.rp;
        e3 = cone_product(cones, it.s, vz) + cone_product(cones, it.z, vs) + r.rc;
    };

    if (n + 2 * m > 150) {
        // reduced path: ds = L(z)^-1 (-rc - L(s) dz), dz = W^-1 (A dx + rp - L(z)^-1 rc)
        // with W = L(z)^-1 L(s), leaving (P + A' W^-1 A) dx = rhs.
        // W^-1 A = L(s)^-1 (L(z) A)
        Matrix LzA(m, n);
        for (int c = 0; c < n; ++c) LzA.col(c) = cone_product(cones, it.z, prog.A.col(c));
        Matrix WinvA = arrow_solve(cones, it.s, LzA);
        Matrix M = prog.P + prog.A.transpose() * WinvA;
        M.diagonal().array() += reg;
        Vector Lzinv_rc = arrow_solve(cones, it.z, r.rc);
        Vector t = r.rp - Lzinv_rc;  // A dx - W dz = -rp + L(z)^-1 rc
        // rhs = -rd - A' W^-1 (rp - L(z)^-1 rc)
        Vector Winv_t = arrow_solve(cones, it.s, cone_product(cones, it.z, t));
        Vector rhs = -r.rd - prog.A.transpose() * Winv_t;
        Eigen::PartialPivLU<Matrix> lu(M);
        dx = lu.solve(rhs);
        if (dx.allFinite()) {
            dz = WinvA * dx + Winv_t;
            ds = -r.rp - prog.A * dx;
            Vector e1, e2, e3;
            for (int pass = 0; pass < 2; ++pass) {
                full_residual(dx, dz, ds, e1, e2, e3);
                Vector Lzinv_e3 = arrow_solve(cones, it.z, e3);
                Vector te = e2 - Lzinv_e3;
                Vector Winv_te = arrow_solve(cones, it.s, cone_product(cones, it.z, te));
                Vector cx = lu.solve(-e1 - prog.A.transpose() * Winv_te);
                if (!cx.allFinite()) break;
                dx += cx;
                dz += WinvA * cx + Winv_te;
                ds += -e2 - prog.A * cx;
            }
            full_residual(dx, dz, ds, e1, e2, e3);
            double err = std::max({e1.cwiseAbs().maxCoeff(), e2.cwiseAbs().maxCoeff(),
                                   e3.cwiseAbs().maxCoeff()});
            if (dx.allFinite() && dz.allFinite() && ds.allFinite() &&
                err <= 1e-8 * std::max(1.0, r.inf))
                return true;
        }
        // fall through to the dense factorization
    }

    Matrix K = kkt_matrix(prog, it.s, it.z);
    K.topLeftCorner(n, n).diagonal().array() += reg;
    Eigen::PartialPivLU<Matrix> lu(K);
    Vector rhs(n + 2 * m);
    rhs.head(n) = -r.rd;
    rhs.segment(n, m) = -r.rp;
    rhs.tail(m) = -r.rc;
    Vector sol = lu.solve(rhs);
    if (!sol.allFinite()) return false;
    // One pass of iterative refinement against the unregularized matrix.
    Vector err(n + 2 * m);
    err.head(n) = -r.rd - (prog.P * sol.head(n) + prog.A.transpose() * sol.segment(n, m));
    err.segment(n, m) = -r.rp - (prog.A * sol.head(n) + sol.tail(m));
    err.tail(m) = -r.rc - (cone_product(prog.cones, it.s, sol.segment(n, m)) +
                           cone_product(prog.cones, it.z, sol.tail(m)));
    Vector corr = lu.solve(err);
    if (corr.allFinite()) sol += corr;
    dx = sol.head(n);
    dz = sol.segment(n, m);
    ds = sol.tail(m);
    return dx.allFinite() && ds.allFinite() && dz.allFinite();
}

ConicSolution finalize(const ConicProgram& prog, const Iterate& it, double kappa_floor,
                       double kappa_target, int iterations, bool failed, SolveStatus fail_status,
                       const SolverSettings& settings) {
    ConicSolution sol;
    sol.x = it.x;
    sol.s = it.s;
    sol.z = it.z;
    sol.kappa_achieved = kappa_floor;
    sol.iterations = iterations;
    if (failed) {
        sol.status = fail_status;
        return sol;
    }
    KktResiduals kr = kkt_residuals(prog, sol, kappa_floor);
    double ctol = kappa_target > 0.0 ? settings.tol_centrality
                                     : settings.tol_residual;
    sol.status = (std::max(kr.stationarity, kr.primal) <= settings.tol_residual &&
                  kr.complementarity <= (kappa_target > 0.0 ? ctol : 2.0 * kappa_floor))
                     ? SolveStatus::Solved
                     : SolveStatus::MaxIter;
#ifndef NDEBUG
    if (sol.status == SolveStatus::Solved) {
        assert(kr.stationarity <= settings.tol_residual);
        assert(kr.primal <= settings.tol_residual);
    }
#endif
    return sol;
}

ConicSolution solve_impl(const ConicProgram& prog, double kappa_target,
                         const SolverSettings& settings, const Iterate* start) {
    prog.validate();
    if (kappa_target < 0.0) throw std::invalid_argument("solve: kappa_target must be >= 0");
    const int n = prog.num_vars();
    const int m = prog.num_cone_rows();
    if (m == 0) return solve_unconstrained(prog, settings);

    Iterate it;
    if (start) {
        it = *start;
    } else {
        // Least-squares primal start, then a uniformly interior (s, z).
        Matrix AtA = prog.A.transpose() * prog.A + 1e-8 * Matrix::Identity(n, n);
        it.x = AtA.ldlt().solve(prog.A.transpose() * prog.b);
        it.s = settings.initial_interior_margin * cone_identity(prog.cones);
        it.z = it.s;
    }

    const double kappa_floor =
        kappa_target > 0.0 ? kappa_target : std::max(0.25 * settings.tol_residual, 1e-13);
    const Vector e = cone_identity(prog.cones);
    const double degree = prog.cones.barrier_degree();
    const double final_rc_tol =
        kappa_target > 0.0 ? settings.tol_centrality : 0.9 * kappa_floor;

    double kappa = std::max(kappa_floor,
                            cone_product(prog.cones, it.s, it.z).dot(e) / degree);
    std::deque<double> rp_history;
    int iter = 0;
    int stall_count = 0;
    double sigma = settings.kappa_reduction;
    double reg = settings.regularization;
    while (iter < settings.max_iter) {
        // Path parameter chases a fraction of the measured centrality; sigma
        // is relaxed to 1 (pure centering) after a line-search stall.
        double mu_hat = cone_product(prog.cones, it.s, it.z).dot(e) / degree;
        if (mu_hat > 0.0) kappa = std::max(kappa_floor, sigma * mu_hat);

        ResidualSet r = residuals(prog, it, kappa, e);
        if (kappa <= kappa_floor * (1.0 + 1e-12) &&
            std::max(r.rd.cwiseAbs().maxCoeff(), r.rp.cwiseAbs().maxCoeff()) <=
                settings.tol_residual &&
            r.rc.cwiseAbs().maxCoeff() <= final_rc_tol)
            return finalize(prog, it, kappa_floor, kappa_target, iter, false, SolveStatus::Solved,
                            settings);

        Vector dx, ds, dz;
        bool ok = newton_direction(prog, it, r, reg, dx, ds, dz);
        for (int bump = 0; !ok && bump < 3; ++bump) {
            reg *= 100.0;
            ok = newton_direction(prog, it, r, reg, dx, ds, dz);
        }
        if (!ok)
            return finalize(prog, it, kappa_floor, kappa_target, iter, true,
                            SolveStatus::NumericalFailure, settings);
        ++iter;

        double alpha = std::min({1.0, 0.995 * step_to_boundary(prog.cones, it.s, ds, 1.0 / 0.995),
                                 0.995 * step_to_boundary(prog.cones, it.z, dz, 1.0 / 0.995)});
        bool accepted = false;
        for (; alpha > 1e-13; alpha *= 0.5) {
            Iterate trial{it.x + alpha * dx, it.s + alpha * ds, it.z + alpha * dz};
            if (!strictly_interior(prog.cones, trial.s) ||
                !strictly_interior(prog.cones, trial.z))
                continue;
            // Wide central-path neighborhood keeps products away from the
            // cone boundary and prevents line-search jamming.
            Vector wt = cone_product(prog.cones, trial.s, trial.z);
            double mu_t = wt.dot(e) / degree;
            if (mu_t > 10.0 * kappa_floor && min_product_eig(prog.cones, wt) < 1e-3 * mu_t)
                continue;
            ResidualSet rt = residuals(prog, trial, kappa, e);
            if (rt.norm2 <= (1.0 - 1e-4 * alpha) * r.norm2) {
                it = trial;
                rp_history.push_back(rt.rp.cwiseAbs().maxCoeff());
                if (rp_history.size() > 11) rp_history.pop_front();
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            // Recenter before giving up: a stalled step usually means the
            // path parameter dropped faster than the iterate could follow.
            if (++stall_count < 4) {
                sigma = 1.0;
                continue;
            }
            ResidualSet rr = residuals(prog, it, kappa, e);
            SolveStatus st = rr.rp.cwiseAbs().maxCoeff() > 1e-6 ? SolveStatus::Infeasible
                                                                : SolveStatus::NumericalFailure;
            return finalize(prog, it, kappa_floor, kappa_target, iter, true, st, settings);
        }
        stall_count = 0;
        sigma = settings.kappa_reduction;
        if (it.x.cwiseAbs().maxCoeff() > 1e14)
            return finalize(prog, it, kappa_floor, kappa_target, iter, true,
                            SolveStatus::NumericalFailure, settings);
        // Primal residual stagnating above 1e-6 for 10 iterations: infeasible.
        if (rp_history.size() >= 11 && rp_history.back() > 1e-6 &&
            rp_history.back() > 0.999 * rp_history.front())
            return finalize(prog, it, kappa_floor, kappa_target, iter, true,
                            SolveStatus::Infeasible, settings);
    }
    return finalize(prog, it, kappa_floor, kappa_target, iter, true, SolveStatus::MaxIter,
                    settings);
}

}  // namespace

ConicSolution solve(const ConicProgram& prog, double kappa_target,
                    const SolverSettings& settings) {
    return solve_impl(prog, kappa_target, settings, nullptr);
}

ConicSolution solve_warmstarted(const ConicProgram& prog, double kappa_target,
                                const ConicSolution& prev, const SolverSettings& settings) {
    if (prev.x.size() != prog.num_vars() || prev.s.size() != prog.num_cone_rows() ||
        prev.z.size() != prog.num_cone_rows())
        throw std::invalid_argument("solve_warmstarted: previous solution dimensions mismatch");
    if (prog.num_cone_rows() == 0) return solve(prog, kappa_target, settings);
    if (!strictly_interior(prog.cones, prev.s, 1e-14) ||
        !strictly_interior(prog.cones, prev.z, 1e-14))
        return solve(prog, kappa_target, settings);
    Iterate start{prev.x, prev.s, prev.z};
    ConicSolution warm = solve_impl(prog, kappa_target, settings, &start);
    if (warm.status == SolveStatus::Solved) return warm;
    ConicSolution cold = solve(prog, kappa_target, settings);
    if (cold.status == SolveStatus::Solved) return cold;
    // Neither converged: return the lower-residual iterate.
    double kappa_ref = kappa_target > 0.0 ? kappa_target : 0.0;
    return kkt_residuals(prog, warm, kappa_ref).max() <=
                   kkt_residuals(prog, cold, kappa_ref).max()
               ? warm
               : cold;
}

}  // namespace tubeplan
