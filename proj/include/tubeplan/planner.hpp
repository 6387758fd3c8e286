#pragma once

#include <optional>

#include "tubeplan/dynamics.hpp"
#include "tubeplan/tube.hpp"

namespace tubeplan {

struct ScpSettings {
    int max_iters = 30;
    double trust_region = 0.5;
    double shrink = 0.5;
    double grow = 1.5;
    double tol_dv = 1e-5;            // convergence tolerance on the stacked control step
    double tol_cost_decrease = 1e-8;  // relative plateau tolerance on accepted steps
    int max_consecutive_rejects = 4;
    double kappa = 1e-3;             // dynamics smoothing used for planning
    bool accept_on_cost_decrease = true;  // false: fixed-iteration loop, every step applied
    double trust_region_min = 1e-6;
    double trust_region_max = 10.0;
    InnerSettings inner;
};

struct PlanningProblem {
    State x0;
    int horizon = 0;
    CostSpec cost;
    RobustConstraints constraints;
    DisturbanceSet dset;
    std::vector<Vector> v_init;  // empty: hold the initial actuated configuration
};

struct Certificate {
    bool constraints_certified = false;
    double coupling_diagnostic_max = 0.0;
};

/// Nominal trajectory, affine feedback gains, and the certified tube.
struct Policy {
    SolveStatus status = SolveStatus::NumericalFailure;
    bool has_tube = false;  // false for baseline policies (nominal only)
    std::vector<Vector> z;  // N+1 nominal states
    std::vector<Vector> v;  // N nominal controls
    GainSchedule gains;
    TubeResponse tube;
    std::vector<Vector> tube_lb, tube_ub;  // per-step elementwise bounds
    Certificate certificate;
    int iterations = 0;
    double nominal_cost = std::numeric_limits<double>::infinity();
    double kappa = 1e-3;
};

/// Joint nominal-and-tube synthesis: linearize the smoothed dynamics, solve
/// the robust convex subproblem, update, and post-process gains.
Policy scp_solve(const MechanicalModel& model, const PlanningProblem& problem,
                 const ScpSettings& settings);

/// Baseline: same SCP loop without tube variables, keeping the linearized
/// contact forces inside the friction cone instead.
Policy toctr_solve(const MechanicalModel& model, const PlanningProblem& problem,
                   const ScpSettings& settings);

struct RolloutResult {
    std::vector<State> x;       // executed trajectory (true or smoothed dynamics)
    std::vector<Vector> u;      // applied controls
    std::vector<State> z;       // nominal re-rolled with the updated controls
    std::optional<Matrix> in_tube;  // (N+1) x n_x flags, when the policy has a tube
    double containment_fraction = 1.0;
};

/// Executes the affine policy: per step the control picks up the feedback
/// correction, the nominal is re-rolled under the smoothed dynamics, and the
/// executed state advances under the true dynamics (or the smoothed dynamics
/// when true_dynamics = false).
RolloutResult rollout_closed_loop(const MechanicalModel& model, const Policy& policy,
                                  bool true_dynamics = true);

/// Per-step elementwise state bounds of the policy's reachable tube.
void tube_intervals(Policy& policy, const DisturbanceSet& dset);

enum class PlanMethod { Ours, Toctr };

struct MpcResult {
    std::vector<State> x;
    std::vector<Vector> u;
    int infeasible_steps = 0;
};

/// Receding-horizon execution: replan over `horizon` from the current true
/// state, apply the first control through the true dynamics, shift, repeat.
MpcResult mpc_run(const MechanicalModel& model, const PlanningProblem& problem,
                  PlanMethod method, int horizon, int total_steps,
                  const ScpSettings& settings);

}  // namespace tubeplan
