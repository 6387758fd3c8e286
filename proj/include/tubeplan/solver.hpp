#pragma once

#include "tubeplan/conic.hpp"

namespace tubeplan {

struct SolverSettings {
    double tol_residual = 1e-9;
    double tol_centrality = 1e-10;
    int max_iter = 100;
    double regularization = 1e-10;
    double initial_interior_margin = 1.0;
    /// Geometric reduction factor of the path parameter per stage.
    double kappa_reduction = 0.1;
};

/// Solves the program to optimality (kappa_target = 0, complementarity driven
/// below tol_residual) or to an exactly centered point with s∘z = kappa e
/// (kappa_target > 0). Path-following with a centering phase at the target.
ConicSolution solve(const ConicProgram& prog, double kappa_target,
                    const SolverSettings& settings = {});

/// Same contract as solve; reuses prev as the starting point when it is
/// strictly interior, and falls back to a cold start when that fails.
ConicSolution solve_warmstarted(const ConicProgram& prog, double kappa_target,
                                const ConicSolution& prev,
                                const SolverSettings& settings = {});

}  // namespace tubeplan
