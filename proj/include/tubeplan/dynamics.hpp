#pragma once

#include <functional>

#include "tubeplan/geometry.hpp"

namespace tubeplan {

/// Configuration split into actuated and unactuated object parts.
struct State {
    Vector x_a;
    Vector x_o;

    Vector full() const {
        Vector v(x_a.size() + x_o.size());
        v << x_a, x_o;
        return v;
    }
    static State from_full(const Vector& v, int n_a) {
        return {v.head(n_a), v.tail(v.size() - n_a)};
    }
};

struct Body {
    enum class Kind { Actuated, Object, World };
    Kind kind = Kind::World;
    int index = 0;  // actuated body index; bodies use dofs [dim*index, dim*index + dim)

    static Body actuated(int i) { return {Kind::Actuated, i}; }
    static Body object() { return {Kind::Object, 0}; }
    static Body world() { return {Kind::World, 0}; }
};

struct AttachedShape {
    Shape shape;
    Body body;
};

struct ContactPairSpec {
    int shape_a = 0;  // must be a sphere (the query side)
    int shape_b = 0;
    double mu = 0.0;
    int d = 1;  // 1: normal only, 2: planar friction
};

/// Quasidynamic system description. Shapes attach at their body origin.
struct MechanicalModel {
    int dim = 1;  // task dimension, 1 or 2
    int n_a = 0;
    int n_o = 0;
    Matrix K_a;  // actuated stiffness, SPD
    Matrix M_o;  // object mass/inertia, SPD
    double dt = 0.1;
    double kappa_dyn = 1e-3;
    double kappa_geom = 0.0;
    std::vector<AttachedShape> shapes;
    std::vector<ContactPairSpec> contacts;
    // Generalized forces (e.g. gravity); null means the constant vectors below.
    std::function<Vector(const State&)> tau_a_fn, tau_o_fn;
    Vector tau_a_const, tau_o_const;  // default zero

    int n_x() const { return n_a + n_o; }
    int num_contacts() const { return static_cast<int>(contacts.size()); }
    bool object_rotates() const { return n_o == dim + 1; }

    Vector tau_a(const State& x) const;
    Vector tau_o(const State& x) const;
    Pose body_pose(const Body& body, const State& x) const;
    Matrix p_matrix() const;  // blkdiag(K_a, M_o / dt^2)
    void validate() const;
};

/// One dynamics step: next state, per-contact forces and dual motions, and
/// the underlying conic solve.
struct StepResult {
    State x_next;
    std::vector<Vector> lambdas;  // contact forces, one length-d vector each
    std::vector<Vector> nus;      // dual-cone motions
    ConicSolution solution;
};

/// State/control Jacobians of the smoothed step, plus contact-force
/// sensitivities for baseline planners.
struct Linearization {
    Matrix A;  // n_x x n_x
    Matrix B;  // n_x x n_a
    std::vector<Matrix> dlambda_dx;  // per contact, d x n_x
    std::vector<Matrix> dlambda_du;  // per contact, d x n_a
};

/// Smoothing-error deviation matrix and its directional Jacobians.
struct DeviationModel {
    Matrix E;                    // n_x x n_c
    std::vector<Matrix> dE_dx;   // n_x slices, each n_x x n_c
    std::vector<Matrix> dE_du;   // n_a slices, each n_x x n_c
};

/// Program whose primal optimum is the next state and whose per-contact
/// duals are the contact forces.
ConicProgram assemble_program(const MechanicalModel& model, const State& x, const Vector& u,
                              double kappa);

StepResult step_true(const MechanicalModel& model, const State& x, const Vector& u);
StepResult step_smoothed(const MechanicalModel& model, const State& x, const Vector& u,
                         double kappa);

Linearization linearize(const MechanicalModel& model, const State& x, const Vector& u,
                        double kappa);

DeviationModel deviation_model(const MechanicalModel& model, const State& x, const Vector& u,
                               double kappa, bool with_jacobians);

/// max over i != j of ||J_i P^-1 J_j'||_F / ||J_i P^-1 J_i'||_F; zero when
/// the cross-coupling assumption behind the deviation bound holds exactly.
double coupling_diagnostic(const MechanicalModel& model, const State& x);

/// Friction-cone membership in contact coordinates (lambda_n, lambda_t).
bool in_friction_cone(double mu, const Vector& lambda, double tol = 1e-9);
bool in_dual_friction_cone(double mu, const Vector& nu, double tol = 1e-9);

}  // namespace tubeplan
