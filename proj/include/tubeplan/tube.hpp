#pragma once

#include "tubeplan/conic.hpp"

namespace tubeplan {

/// Linear time-varying data along a nominal trajectory: step Jacobians,
/// deviation matrices, and the deviation's directional Jacobians.
struct LtvData {
    int N = 0, n_x = 0, n_u = 0, n_c = 0;
    std::vector<Matrix> A, B, E;                  // size N each
    std::vector<std::vector<Matrix>> dE_dz;       // [k][state dir] n_x x n_c
    std::vector<std::vector<Matrix>> dE_dv;       // [k][control dir] n_x x n_c

    void validate() const;
};

/// Strictly block lower-triangular system-response operators.
/// Phi_x[j][k-(j+1)] holds the state block for k = j+1..N;
/// Phi_u[j][k-(j+1)] holds the control block for k = j+1..N-1.
struct TubeResponse {
    int N = 0, n_x = 0, n_u = 0, n_c = 0;
    std::vector<std::vector<Matrix>> Phi_x;
    std::vector<std::vector<Matrix>> Phi_u;

    const Matrix& phi_x(int k, int j) const { return Phi_x[j][k - j - 1]; }
    const Matrix& phi_u(int k, int j) const { return Phi_u[j][k - j - 1]; }
};

/// Causal feedback gains u_k = v_k + sum_j K[k][j] (x_j - z_j), j = 0..k.
struct GainSchedule {
    std::vector<std::vector<Matrix>> K;
    bool rank_warning = false;
};

struct DisturbanceSet {
    Vector w_c;          // default 1.5 * ones
    double w_r = 0.5;
    int norm_p = 2;      // 2 or 0 (0 encodes the sup norm)

    static DisturbanceSet box_cover(int n_c) {
        // l2 ball circumscribing the unit box around its center
        return {Vector::Constant(n_c, 1.5), 0.5 * std::sqrt(static_cast<double>(n_c)), 2};
    }
};

struct StageConstraint {
    Matrix G;  // rows x (n_x + n_u)
    Vector g;
};

struct RobustConstraints {
    std::vector<StageConstraint> stage;  // size N (constraint at steps 0..N-1)
    Matrix G_f;                          // rows_f x n_x
    Vector g_f;
};

struct CostSpec {
    Matrix Q;       // state weight (goal tracking)
    Matrix R;       // control smoothness weight
    Matrix Qbar;    // tube state weight
    Matrix Rbar;    // tube control weight
    Matrix Qbar_f;  // terminal tube weight
    Vector x_goal;
};

struct InnerDuals {
    std::vector<Vector> mu;                  // stage multipliers, size N
    Vector mu_f;                             // terminal multipliers
    std::vector<std::vector<Vector>> eta;    // [k][j] tightening multipliers
    std::vector<Vector> eta_f;               // [j] terminal tightening multipliers
    std::vector<std::vector<Vector>> beta;   // [k][j] squared row norms
    std::vector<Vector> beta_f;              // [j]
    double gamma_z = 0.0, gamma_v = 0.0;     // trust-region multipliers
};

struct InnerSettings {
    double kkt_tol = 1e-6;
    int max_alternations = 50;
    double epsilon_smooth = 1e-8;  // beta smoothing inside sqrt
};

struct KktReport {
    double residual = std::numeric_limits<double>::infinity();
    int alternations = 0;
    bool converged = false;
    bool monotonicity_violated = false;
    std::vector<double> objective_history;
};

struct InnerSolveResult {
    SolveStatus status = SolveStatus::NumericalFailure;
    std::vector<Vector> dz;  // N+1 entries, dz[0] = 0
    std::vector<Vector> dv;  // N entries
    TubeResponse tube;
    InnerDuals duals;
    KktReport kkt;
    double objective = std::numeric_limits<double>::infinity();
};

/// Rolls dx_{k+1} = A_k dx_k + B_k du_k + E_k w_k under the gain schedule.
/// Returns the state deviations (N+1) and control deviations (N).
std::pair<std::vector<Vector>, std::vector<Vector>> simulate_closed_loop(
    const LtvData& ltv, const GainSchedule& gains, const std::vector<Vector>& w_seq);

/// Unique Phi_x blocks satisfying the response recursion with
/// Phi_x[j][0] = E_j for the given strictly lower-triangular Phi_u.
TubeResponse propagate_response(const LtvData& ltv, const std::vector<std::vector<Matrix>>& Phi_u);

/// Causal gains realizing the tube response: disturbances are reconstructed
/// from observed deviations by least squares along the first subdiagonal,
/// then mapped through Phi_u.
GainSchedule extract_gains(const TubeResponse& tube);

/// Worst case of a'w over the disturbance set: a'w_c + w_r ||a||_q.
double tighten(const Vector& a, const DisturbanceSet& dset);

struct RobustViolation {
    std::vector<Vector> stage;  // worst-case constraint values per step
    Vector terminal;
    double max_violation() const;
};

/// Left-hand sides of the robustified stage/terminal constraints; all values
/// <= 0 certifies the tube against the constraint set.
RobustViolation robust_stage_violation(const TubeResponse& tube, const std::vector<Vector>& z,
                                       const std::vector<Vector>& v,
                                       const RobustConstraints& constraints,
                                       const DisturbanceSet& dset);

/// Elementwise squared row norms of the constraint-mapped response blocks.
void compute_beta(const TubeResponse& tube, const RobustConstraints& constraints,
                  std::vector<std::vector<Vector>>& beta, std::vector<Vector>& beta_f);

/// eta_{k,j} = (w_r / 2) (beta_{k,j} + eps)^{-1/2} .* mu_k, stage and terminal.
void update_eta(const std::vector<std::vector<Vector>>& beta, const std::vector<Vector>& beta_f,
                const std::vector<Vector>& mu, const Vector& mu_f,
                const DisturbanceSet& dset, double epsilon_smooth,
                std::vector<std::vector<Vector>>& eta, std::vector<Vector>& eta_f);

struct RiccatiOut {
    TubeResponse tube;
    double objective = 0.0;
    std::vector<Matrix> S_first;  // S_{j+1,j} per j
    std::vector<Matrix> s_first;  // s_{j+1,j} per j (n-by-n_c linear terms)
    bool regularized = false;
};

/// Tube subproblem at fixed multipliers and nominal increment: N independent
/// Riccati recursions, one per disturbance injection step.
RiccatiOut riccati_tube_solve(const LtvData& ltv, const std::vector<Vector>& mu,
                              const Vector& mu_f,
                              const std::vector<std::vector<Vector>>& eta,
                              const std::vector<Vector>& eta_f, const CostSpec& cost,
                              const RobustConstraints& constraints,
                              const DisturbanceSet& dset, const std::vector<Vector>& dz,
                              const std::vector<Vector>& dv);

struct NominalQpOut {
    SolveStatus status = SolveStatus::NumericalFailure;
    std::vector<Vector> dz;
    std::vector<Vector> dv;
    std::vector<Vector> mu;
    Vector mu_f;
    double gamma_z = 0.0, gamma_v = 0.0;
};

/// Nominal subproblem: a QP over the control increments with frozen
/// tightenings and the tube value-function expansion from the last Riccati
/// pass; trust regions enter as second-order-cone rows.
NominalQpOut nominal_qp_solve(const LtvData& ltv, const std::vector<Vector>& z,
                              const std::vector<Vector>& v, const CostSpec& cost,
                              const RobustConstraints& constraints,
                              const std::vector<Vector>& frozen_stage,
                              const Vector& frozen_terminal,
                              const std::vector<Matrix>& S_first,
                              const std::vector<Matrix>& s_first, double trust_region);

/// Full convex subproblem via alternation between the Riccati tube pass and
/// the nominal QP until the joint KKT residual meets tolerance.
InnerSolveResult solve_inner(const LtvData& ltv, const std::vector<Vector>& z,
                             const std::vector<Vector>& v, const RobustConstraints& constraints,
                             const CostSpec& cost, const DisturbanceSet& dset,
                             double trust_region, const InnerSettings& settings = {});

/// Oracle: the same subproblem flattened into one conic program. Guarded to
/// small instances; requires the l2 disturbance norm.
InnerSolveResult solve_inner_reference(const LtvData& ltv, const std::vector<Vector>& z,
                                       const std::vector<Vector>& v,
                                       const RobustConstraints& constraints,
                                       const CostSpec& cost, const DisturbanceSet& dset,
                                       double trust_region);

/// Nominal-plus-tube objective value of a candidate inner solution.
double inner_objective(const LtvData& ltv, const std::vector<Vector>& z,
                       const std::vector<Vector>& v, const CostSpec& cost,
                       const std::vector<Vector>& dz, const std::vector<Vector>& dv,
                       const TubeResponse& tube);

double nominal_cost(const std::vector<Vector>& z, const std::vector<Vector>& v,
                    const CostSpec& cost);
double tube_cost(const TubeResponse& tube, const CostSpec& cost);

}  // namespace tubeplan
