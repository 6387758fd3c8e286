#include "tubeplan/planner.hpp"

#include <Eigen/Cholesky>

#include "tubeplan/solver.hpp"

namespace tubeplan {

namespace {

std::vector<Vector> default_controls(const PlanningProblem& problem, int n_a) {
    if (!problem.v_init.empty()) return problem.v_init;
    return std::vector<Vector>(problem.horizon, Vector(problem.x0.x_a));
    (void)n_a;
}

std::vector<Vector> roll_nominal(const MechanicalModel& model, const State& x0,
                                 const std::vector<Vector>& v, double kappa) {
    std::vector<Vector> z;
    z.reserve(v.size() + 1);
    State cur = x0;
    z.push_back(cur.full());
    for (const auto& vk : v) {
        cur = step_smoothed(model, cur, vk, kappa).x_next;
        z.push_back(cur.full());
    }
    return z;
}

struct LinearizedTrajectory {
    LtvData ltv;
    std::vector<std::vector<Vector>> lambdas;     // per step, per contact
    std::vector<std::vector<Matrix>> dlambda_dx;  // per step, per contact
    std::vector<std::vector<Matrix>> dlambda_du;
};

LinearizedTrajectory linearize_trajectory(const MechanicalModel& model,
                                          const std::vector<Vector>& z,
                                          const std::vector<Vector>& v, double kappa,
                                          bool with_deviation) {
    const int N = static_cast<int>(v.size());
    LinearizedTrajectory out;
    out.ltv.N = N;
    out.ltv.n_x = model.n_x();
    out.ltv.n_u = model.n_a;
    out.ltv.n_c = model.num_contacts();
    for (int k = 0; k < N; ++k) {
        State xk = State::from_full(z[k], model.n_a);
        Linearization lin = linearize(model, xk, v[k], kappa);
        out.ltv.A.push_back(lin.A);
        out.ltv.B.push_back(lin.B);
        out.dlambda_dx.push_back(lin.dlambda_dx);
        out.dlambda_du.push_back(lin.dlambda_du);
        if (with_deviation) {
            DeviationModel dev = deviation_model(model, xk, v[k], kappa, true);
            out.ltv.E.push_back(dev.E);
            out.ltv.dE_dz.push_back(dev.dE_dx);
            out.ltv.dE_dv.push_back(dev.dE_du);
        } else {
            out.ltv.E.push_back(Matrix::Zero(model.n_x(), model.num_contacts()));
            out.ltv.dE_dz.push_back(
                std::vector<Matrix>(model.n_x(), Matrix::Zero(model.n_x(), out.ltv.n_c)));
            out.ltv.dE_dv.push_back(
                std::vector<Matrix>(model.n_a, Matrix::Zero(model.n_x(), out.ltv.n_c)));
        }
        StepResult st = step_smoothed(model, xk, v[k], kappa);
        out.lambdas.push_back(st.lambdas);
    }
    return out;
}

// Baseline subproblem: the nominal QP plus linearized friction-cone rows on
// the smoothed contact forces, without any tube tightening.
struct CtrQpOut {
    SolveStatus status = SolveStatus::NumericalFailure;
    std::vector<Vector> dz, dv;
};

CtrQpOut ctr_qp_solve(const MechanicalModel& model, const LinearizedTrajectory& traj,
                      const std::vector<Vector>& z, const std::vector<Vector>& v,
                      const CostSpec& cost, const RobustConstraints& constraints,
                      double trust_region) {
    const LtvData& ltv = traj.ltv;
    const int N = ltv.N, n_x = ltv.n_x, n_u = ltv.n_u;
    const int nv = N * n_u;
    CtrQpOut out;

    std::vector<Matrix> Z(N + 1, Matrix::Zero(n_x, nv));
    for (int k = 0; k < N; ++k) {
        Z[k + 1] = ltv.A[k] * Z[k];
        Z[k + 1].middleCols(k * n_u, n_u) += ltv.B[k];
    }
    Matrix P = Matrix::Zero(nv, nv);
    Vector q = Vector::Zero(nv);
    for (int k = 0; k <= N; ++k) {
        P += Z[k].transpose() * cost.Q * Z[k];
        q += Z[k].transpose() * cost.Q * (z[k] - cost.x_goal);
    }
    for (int k = 0; k + 1 < N; ++k) {
        Matrix Dsel = Matrix::Zero(n_u, nv);
        Dsel.middleCols(k * n_u, n_u) = Matrix::Identity(n_u, n_u);
        Dsel.middleCols((k + 1) * n_u, n_u) -= Matrix::Identity(n_u, n_u);
        P += Dsel.transpose() * cost.R * Dsel;
        q += Dsel.transpose() * cost.R * (v[k] - v[k + 1]);
    }

    int n_ineq = 0;
    for (int k = 0; k < N; ++k) n_ineq += static_cast<int>(constraints.stage[k].G.rows());
    n_ineq += static_cast<int>(constraints.G_f.rows());
    int ctr_rows = 0;
    for (int k = 0; k < N; ++k)
        for (const auto& pair : model.contacts) ctr_rows += pair.d;
    const int m = n_ineq + ctr_rows + (1 + N * n_x) + (1 + N * n_u);
    Matrix Ac = Matrix::Zero(m, nv);
    Vector bc = Vector::Zero(m);
    ConeSpec cones;
    if (n_ineq > 0) cones.append(ConeKind::Nonneg, n_ineq);
    int row = 0;
    for (int k = 0; k < N; ++k) {
        const auto& sc = constraints.stage[k];
        if (sc.G.rows() == 0) continue;
        Matrix lin = sc.G.leftCols(n_x) * Z[k];
        lin.middleCols(k * n_u, n_u) += sc.G.rightCols(n_u);
        Vector zu(n_x + n_u);
        zu << z[k], v[k];
        Ac.middleRows(row, sc.G.rows()) = lin;
        bc.segment(row, sc.G.rows()) = -(sc.G * zu + sc.g);
        row += static_cast<int>(sc.G.rows());
    }
    if (constraints.G_f.rows() > 0) {
        Ac.middleRows(row, constraints.G_f.rows()) = constraints.G_f * Z[N];
        bc.segment(row, constraints.G_f.rows()) = -(constraints.G_f * z[N] + constraints.g_f);
        row += static_cast<int>(constraints.G_f.rows());
    }
    // contact trust region: linearized forces stay in the friction cone
    for (int k = 0; k < N; ++k) {
        for (size_t i = 0; i < model.contacts.size(); ++i) {
            const auto& pair = model.contacts[i];
            Matrix M_lin = traj.dlambda_dx[k][i] * Z[k];
            M_lin.middleCols(k * n_u, n_u) += traj.dlambda_du[k][i];
            Vector lam = traj.lambdas[k][i];
            if (pair.d == 1) {
                cones.append(ConeKind::Nonneg, 1);
                Ac.row(row) = -M_lin.row(0);
                bc(row) = lam(0);
                ++row;
            } else {
                // (mu lambda_n, lambda_t) in the standard cone
                Matrix Dt = Matrix::Identity(2, 2);
                Dt(0, 0) = pair.mu;
                cones.append(ConeKind::SecondOrder, 2);
                Ac.middleRows(row, 2) = -Dt * M_lin;
                bc.segment(row, 2) = Dt * lam;
                row += 2;
            }
        }
    }
    cones.append(ConeKind::SecondOrder, 1 + N * n_x);
    bc(row) = trust_region;
    ++row;
    for (int k = 1; k <= N; ++k) {
        Ac.middleRows(row, n_x) = -Z[k];
        row += n_x;
    }
    cones.append(ConeKind::SecondOrder, 1 + N * n_u);
    bc(row) = trust_region;
    ++row;
    Ac.middleRows(row, N * n_u) = -Matrix::Identity(N * n_u, nv);

    ConicProgram prog;
    prog.P = 0.5 * (P + P.transpose());
    prog.q = q;
    prog.A = Ac;
    prog.b = bc;
    prog.cones = cones;
    equilibrate_cone_rows(prog);
    ConicSolution sol = solve(prog, 0.0);
    out.status = sol.status;
    if (sol.status != SolveStatus::Solved) return out;
    out.dv.assign(N, Vector());
    for (int k = 0; k < N; ++k) out.dv[k] = sol.x.segment(k * n_u, n_u);
    out.dz.assign(N + 1, Vector::Zero(n_x));
    for (int k = 1; k <= N; ++k) out.dz[k] = Z[k] * sol.x;
    return out;
}

double stacked_norm(const std::vector<Vector>& vs) {
    double s = 0.0;
    for (const auto& v : vs) s += v.squaredNorm();
    return std::sqrt(s);
}

Policy run_scp(const MechanicalModel& model, const PlanningProblem& problem,
               const ScpSettings& settings, PlanMethod method) {
    model.validate();
    if (problem.horizon < 1) throw std::invalid_argument("planner: horizon must be >= 1");
    const int N = problem.horizon;
    Policy pol;
    pol.kappa = settings.kappa;
    pol.has_tube = (method == PlanMethod::Ours);

    std::vector<Vector> v = default_controls(problem, model.n_a);
    std::vector<Vector> z = roll_nominal(model, problem.x0, v, settings.kappa);
    double J_curr = nominal_cost(z, v, problem.cost);
    double eps = settings.trust_region;
    bool converged = false;
    InnerSolveResult last_inner;
    bool have_inner = false;
    int consecutive_rejects = 0;

    for (int iter = 1; iter <= settings.max_iters; ++iter) {
        pol.iterations = iter;
        LinearizedTrajectory traj =
            linearize_trajectory(model, z, v, settings.kappa, method == PlanMethod::Ours);
        std::vector<Vector> dv;
        if (method == PlanMethod::Ours) {
            InnerSolveResult inner = solve_inner(traj.ltv, z, v, problem.constraints,
                                                 problem.cost, problem.dset, eps,
                                                 settings.inner);
            if (inner.status != SolveStatus::Solved) {
                eps *= settings.shrink;
                if (eps < settings.trust_region_min) {
                    pol.status = inner.status;
                    return pol;
                }
                continue;
            }
            dv = inner.dv;
            last_inner = inner;
            have_inner = true;
        } else {
            CtrQpOut qp = ctr_qp_solve(model, traj, z, v, problem.cost, problem.constraints, eps);
            if (qp.status != SolveStatus::Solved) {
                eps *= settings.shrink;
                if (eps < settings.trust_region_min) {
                    pol.status = qp.status;
                    return pol;
                }
                continue;
            }
            dv = qp.dv;
        }

        if (stacked_norm(dv) <= settings.tol_dv) {
            converged = true;
            break;
        }
        std::vector<Vector> v_trial(N);
        for (int k = 0; k < N; ++k) v_trial[k] = v[k] + dv[k];
        std::vector<Vector> z_trial = roll_nominal(model, problem.x0, v_trial, settings.kappa);
        double J_trial = nominal_cost(z_trial, v_trial, problem.cost);
        bool accept = !settings.accept_on_cost_decrease ||
                      J_trial <= J_curr + 1e-10 * std::max(1.0, std::abs(J_curr));
        if (accept) {
            consecutive_rejects = 0;
            double decrease = J_curr - J_trial;
            v = v_trial;
            z = z_trial;
            J_curr = J_trial;
            eps = std::min(eps * settings.grow, settings.trust_region_max);
            if (settings.accept_on_cost_decrease &&
                decrease <= settings.tol_cost_decrease * std::max(1.0, std::abs(J_curr))) {
                converged = true;
                break;
            }
        } else {
            eps *= settings.shrink;
            if (++consecutive_rejects >= settings.max_consecutive_rejects) break;
            if (eps < settings.trust_region_min) break;
        }
    }

    pol.z = z;
    pol.v = v;
    pol.nominal_cost = J_curr;
    pol.status = SolveStatus::Solved;
    (void)converged;

    if (method == PlanMethod::Ours) {
        // Final evaluation pass at the settled nominal: a near-zero trust
        // region gives a tube and multipliers consistent with (z, v).
        LinearizedTrajectory traj = linearize_trajectory(model, z, v, settings.kappa, true);
        InnerSolveResult eval =
            solve_inner(traj.ltv, z, v, problem.constraints, problem.cost, problem.dset,
                        std::max(1e-6, 0.01 * settings.tol_dv), settings.inner);
        if (eval.status == SolveStatus::Solved) {
            last_inner = eval;
            have_inner = true;
        }
        if (!have_inner) {
            pol.status = SolveStatus::NumericalFailure;
            return pol;
        }
        pol.tube = last_inner.tube;
        pol.gains = extract_gains(pol.tube);
        tube_intervals(pol, problem.dset);
        RobustViolation viol =
            robust_stage_violation(pol.tube, z, v, problem.constraints, problem.dset);
        pol.certificate.constraints_certified = viol.max_violation() <= 1e-7;
        double coupling = 0.0;
        for (int k = 0; k <= N; ++k)
            coupling = std::max(
                coupling, coupling_diagnostic(model, State::from_full(z[k], model.n_a)));
        pol.certificate.coupling_diagnostic_max = coupling;
    }
    return pol;
}

}  // namespace

Policy scp_solve(const MechanicalModel& model, const PlanningProblem& problem,
                 const ScpSettings& settings) {
    return run_scp(model, problem, settings, PlanMethod::Ours);
}

Policy toctr_solve(const MechanicalModel& model, const PlanningProblem& problem,
                   const ScpSettings& settings) {
    return run_scp(model, problem, settings, PlanMethod::Toctr);
}

RolloutResult rollout_closed_loop(const MechanicalModel& model, const Policy& policy,
                                  bool true_dynamics) {
    const int N = static_cast<int>(policy.v.size());
    RolloutResult out;
    out.x.push_back(State::from_full(policy.z[0], model.n_a));
    out.z.push_back(State::from_full(policy.z[0], model.n_a));
    std::vector<Vector> v = policy.v;
    std::vector<Vector> z_full = {policy.z[0]};
    for (int k = 0; k < N; ++k) {
        if (policy.has_tube) {
            for (int j = 0; j <= k; ++j)
                v[k] += policy.gains.K[k][j] * (out.x[j].full() - z_full[j]);
        }
        State z_next = step_smoothed(model, out.z[k], v[k], policy.kappa).x_next;
        out.z.push_back(z_next);
        z_full.push_back(z_next.full());
        State x_next = true_dynamics ? step_true(model, out.x[k], v[k]).x_next
                                     : step_smoothed(model, out.x[k], v[k], policy.kappa).x_next;
        out.x.push_back(x_next);
        out.u.push_back(v[k]);
    }
    if (policy.has_tube && !policy.tube_lb.empty()) {
        const int n_x = model.n_x();
        Matrix flags = Matrix::Ones(N + 1, n_x);
        int inside = 0, total = 0;
        for (int k = 0; k <= N; ++k) {
            Vector xf = out.x[k].full();
            for (int c = 0; c < n_x; ++c) {
                bool ok = xf(c) >= policy.tube_lb[k](c) - 1e-9 &&
                          xf(c) <= policy.tube_ub[k](c) + 1e-9;
                flags(k, c) = ok ? 1.0 : 0.0;
                inside += ok;
                ++total;
            }
        }
        out.in_tube = flags;
        out.containment_fraction = static_cast<double>(inside) / total;
    }
    return out;
}

void tube_intervals(Policy& policy, const DisturbanceSet& dset) {
    const int N = static_cast<int>(policy.v.size());
    const int n_x = static_cast<int>(policy.z[0].size());
    policy.tube_lb.assign(N + 1, Vector());
    policy.tube_ub.assign(N + 1, Vector());
    const int q = dset.norm_p == 2 ? 2 : 1;
    for (int k = 0; k <= N; ++k) {
        Vector lo = policy.z[k], hi = policy.z[k];
        for (int j = 0; j < k; ++j) {
            const Matrix& blk = policy.tube.phi_x(k, j);
            for (int c = 0; c < n_x; ++c) {
                Vector a = blk.row(c).transpose();
                double center = a.dot(dset.w_c);
                double rad = dset.w_r * (q == 2 ? a.norm() : a.cwiseAbs().sum());
                lo(c) += center - rad;
                hi(c) += center + rad;
            }
        }
        policy.tube_lb[k] = lo;
        policy.tube_ub[k] = hi;
    }
}

MpcResult mpc_run(const MechanicalModel& model, const PlanningProblem& problem,
                  PlanMethod method, int horizon, int total_steps,
                  const ScpSettings& settings) {
    if (horizon < 1) throw std::invalid_argument("mpc_run: horizon must be >= 1");
    if (total_steps < 1) total_steps = problem.horizon;
    MpcResult out;
    State x = problem.x0;
    out.x.push_back(x);
    std::vector<Vector> warm(horizon, Vector(problem.x0.x_a));
    Vector last_u = problem.x0.x_a;
    for (int step = 0; step < total_steps; ++step) {
        PlanningProblem sub;
        sub.x0 = x;
        sub.horizon = horizon;
        sub.cost = problem.cost;
        sub.dset = problem.dset;
        sub.constraints.stage.assign(horizon, problem.constraints.stage.empty()
                                                  ? StageConstraint{}
                                                  : problem.constraints.stage[0]);
        sub.constraints.G_f = Matrix::Zero(0, model.n_x());
        sub.constraints.g_f = Vector::Zero(0);
        sub.v_init = warm;
        Policy plan = (method == PlanMethod::Ours) ? scp_solve(model, sub, settings)
                                                   : toctr_solve(model, sub, settings);
        Vector u;
        if (plan.status == SolveStatus::Solved) {
            u = plan.v[0];
            warm.assign(plan.v.begin() + 1, plan.v.end());
            warm.push_back(plan.v.back());
        } else {
            u = last_u;
            ++out.infeasible_steps;
        }
        x = step_true(model, x, u).x_next;
        out.x.push_back(x);
        out.u.push_back(u);
        last_u = u;
    }
    return out;
}

}  // namespace tubeplan
