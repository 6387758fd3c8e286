#include "tubeplan/dynamics.hpp"

#include <Eigen/Cholesky>

namespace tubeplan {

namespace {

Vector rot90(const Vector& v) {
    Vector out(2);
    out << -v(1), v(0);
    return out;
}

// Per-contact kinematics at a state: gap, frame, Jacobian, and (optionally)
// their derivatives along every state unit direction.
struct ContactGeometry {
    double phi;
    Vector normal;
    Matrix J;                  // d x n_x
    Vector dphi;               // n_x
    std::vector<Matrix> dJ;    // n_x entries, each d x n_x
};

// Columns of the state vector owned by a body; empty for the world.
struct DofMap {
    int trans_start = -1;  // index into the full state, dim columns
    int rot_col = -1;      // -1 when the body has no rotation dof
};

DofMap dof_map(const MechanicalModel& model, const Body& body) {
    DofMap map;
    switch (body.kind) {
        case Body::Kind::Actuated:
            map.trans_start = model.dim * body.index;
            break;
        case Body::Kind::Object:
            map.trans_start = model.n_a;
            if (model.object_rotates()) map.rot_col = model.n_a + model.dim;
            break;
        case Body::Kind::World:
            break;
    }
    return map;
}

// v' * (velocity of a point attached to `body` at world position p), as a row
// over the full state.
void add_point_velocity_row(const MechanicalModel& model, const Body& body, const Pose& pose,
                            const Vector& p, const Vector& v, double sign, Matrix& J,
                            int row) {
    DofMap map = dof_map(model, body);
    if (map.trans_start < 0) return;
    for (int i = 0; i < model.dim; ++i) J(row, map.trans_start + i) += sign * v(i);
    if (map.rot_col >= 0) {
        Vector lever = p - pose.translation;
        J(row, map.rot_col) += sign * v.dot(rot90(lever));
    }
}

ContactGeometry contact_geometry(const MechanicalModel& model, const ContactPairSpec& pair,
                                 const State& x, bool with_derivs) {
    const auto& sa = model.shapes.at(pair.shape_a);
    const auto& sb = model.shapes.at(pair.shape_b);
    if (!std::holds_alternative<Sphere>(sa.shape))
        throw std::invalid_argument("contact pair: query side must be a sphere");
    const Sphere& sphere_a = std::get<Sphere>(sa.shape);
    Pose pose_a = model.body_pose(sa.body, x);
    Pose pose_b = model.body_pose(sb.body, x);

    const int n_x = model.n_x();
    const int dim = model.dim;
    ContactGeometry g;

    ContactQueryDiff qd = contact_query_diff(sphere_a, pose_a, sb.shape, pose_b,
                                             model.kappa_geom);
    g.phi = qd.query.phi;
    g.normal = qd.query.normal;

    DofMap map_a = dof_map(model, sa.body);
    DofMap map_b = dof_map(model, sb.body);

    // Map a state unit direction onto the query parameters.
    auto query_partial = [&](int j) {
        ContactPartial p{0.0, Vector::Zero(dim), Vector::Zero(dim)};
        if (map_a.trans_start >= 0 && j >= map_a.trans_start && j < map_a.trans_start + dim) {
            const auto& src = qd.d_center_a[j - map_a.trans_start];
            p.dphi += src.dphi;
            p.dnormal += src.dnormal;
            p.dpoint_b += src.dpoint_b;
        }
        if (map_b.trans_start >= 0 && j >= map_b.trans_start && j < map_b.trans_start + dim) {
            const auto& src = qd.d_trans_b[j - map_b.trans_start];
            p.dphi += src.dphi;
            p.dnormal += src.dnormal;
            p.dpoint_b += src.dpoint_b;
        }
        if (map_b.rot_col == j && qd.d_rot_b) {
            p.dphi += qd.d_rot_b->dphi;
            p.dnormal += qd.d_rot_b->dnormal;
            p.dpoint_b += qd.d_rot_b->dpoint_b;
        }
        return p;
    };

    const Vector p_a = qd.query.point_a;
    const Vector p_b = qd.query.point_b;

    g.J = Matrix::Zero(pair.d, n_x);
    Vector tan = (pair.d == 2) ? rot90(g.normal) : Vector();
    add_point_velocity_row(model, sa.body, pose_a, p_a, g.normal, 1.0, g.J, 0);
    add_point_velocity_row(model, sb.body, pose_b, p_b, g.normal, -1.0, g.J, 0);
    if (pair.d == 2) {
        add_point_velocity_row(model, sa.body, pose_a, p_a, tan, 1.0, g.J, 1);
        add_point_velocity_row(model, sb.body, pose_b, p_b, tan, -1.0, g.J, 1);
    }

    if (!with_derivs) return g;

    g.dphi = Vector::Zero(n_x);
    g.dJ.assign(n_x, Matrix::Zero(pair.d, n_x));
    for (int j = 0; j < n_x; ++j) {
        ContactPartial qp = query_partial(j);
        g.dphi(j) = qp.dphi;
        Vector dn = qp.dnormal;
        Vector dpa = Vector::Zero(dim);
        if (map_a.trans_start >= 0 && j >= map_a.trans_start && j < map_a.trans_start + dim)
            dpa(j - map_a.trans_start) += 1.0;
        dpa -= sphere_a.radius * dn;
        Vector dpb = qp.dpoint_b;
        Vector dt = (pair.d == 2) ? rot90(dn) : Vector();

        Matrix& dJ = g.dJ[j];
        auto add_dv_rows = [&](const Body& body, double sign) {
            DofMap map = dof_map(model, body);
            if (map.trans_start < 0) return;
            for (int i = 0; i < dim; ++i) {
                dJ(0, map.trans_start + i) += sign * dn(i);
                if (pair.d == 2) dJ(1, map.trans_start + i) += sign * dt(i);
            }
        };
        add_dv_rows(sa.body, 1.0);
        add_dv_rows(sb.body, -1.0);
        auto add_rot_col = [&](const Body& body, const Pose& pose, const Vector& p,
                               const Vector& dp, double sign) {
            DofMap map = dof_map(model, body);
            if (map.rot_col < 0) return;
            Vector lever = p - pose.translation;
            Vector dlever = dp;
            if (map.trans_start >= 0 && j >= map.trans_start && j < map.trans_start + dim)
                dlever(j - map.trans_start) -= 1.0;
            dJ(0, map.rot_col) += sign * (dn.dot(rot90(lever)) + g.normal.dot(rot90(dlever)));
            if (pair.d == 2)
                dJ(1, map.rot_col) += sign * (dt.dot(rot90(lever)) + tan.dot(rot90(dlever)));
        };
        add_rot_col(sa.body, pose_a, p_a, dpa, 1.0);
        add_rot_col(sb.body, pose_b, p_b, dpb, -1.0);
    }
    return g;
}

// Friction-cone scaling D with s = D nu, lambda = D z standardizing the
// dual-cone rows; identity for d = 1.
Matrix cone_scaling(const ContactPairSpec& pair) {
    if (pair.d == 1) return Matrix::Ones(1, 1);
    Matrix D = Matrix::Identity(2, 2);
    D(0, 0) = 1.0 / pair.mu;
    return D;
}

struct AssembledProgram {
    ConicProgram prog;
    std::vector<ContactGeometry> geoms;
    std::vector<int> block_offsets;
};

AssembledProgram assemble_impl(const MechanicalModel& model, const State& x, const Vector& u,
                               bool with_derivs) {
    model.validate();
    if (u.size() != model.n_a)
        throw std::invalid_argument("assemble_program: control dimension mismatch");
    if (x.x_a.size() != model.n_a || x.x_o.size() != model.n_o)
        throw std::invalid_argument("assemble_program: state dimension mismatch");

    const int n_x = model.n_x();
    AssembledProgram out;
    out.prog.P = model.p_matrix();
    out.prog.q = Vector(n_x);
    out.prog.q.head(model.n_a) = -model.K_a * u - model.tau_a(x);
    out.prog.q.tail(model.n_o) =
        -(model.M_o / (model.dt * model.dt)) * x.x_o - model.tau_o(x);

    int m = 0;
    for (const auto& pair : model.contacts) m += pair.d;
    out.prog.A = Matrix::Zero(m, n_x);
    out.prog.b = Vector::Zero(m);
    ConeSpec cones;
    const Vector xfull = x.full();
    int off = 0;
    for (const auto& pair : model.contacts) {
        out.block_offsets.push_back(off);
        out.geoms.push_back(contact_geometry(model, pair, x, with_derivs));
        const ContactGeometry& g = out.geoms.back();
        Matrix D = cone_scaling(pair);
        Vector phi_vec = Vector::Zero(pair.d);
        phi_vec(0) = g.phi;
        out.prog.A.middleRows(off, pair.d) = -D * g.J;
        out.prog.b.segment(off, pair.d) = D * (phi_vec - g.J * xfull);
        cones.append(pair.d == 1 ? ConeKind::Nonneg : ConeKind::SecondOrder, pair.d);
        off += pair.d;
    }
    out.prog.cones = cones;
    return out;
}

StepResult run_step(const MechanicalModel& model, const State& x, const Vector& u,
                    double kappa) {
    AssembledProgram ap = assemble_impl(model, x, u, false);
    StepResult res;
    res.solution = solve(ap.prog, kappa);
    if (res.solution.status != SolveStatus::Solved)
        throw NumericalError(std::string("dynamics step failed: ") +
                             to_string(res.solution.status));
    res.x_next = State::from_full(res.solution.x, model.n_a);
    for (size_t i = 0; i < model.contacts.size(); ++i) {
        const auto& pair = model.contacts[i];
        int off = ap.block_offsets[i];
        Matrix D = cone_scaling(pair);
        res.lambdas.push_back(D * res.solution.z.segment(off, pair.d));
        res.nus.push_back(D.inverse() * res.solution.s.segment(off, pair.d));
    }
    return res;
}

// Data derivative of the program along one state unit direction.
DataDerivative state_direction_derivative(const MechanicalModel& model,
                                          const AssembledProgram& ap, const State& x, int j,
                                          const Matrix& dtau_a, const Matrix& dtau_o) {
    const int n_x = model.n_x();
    const int m = ap.prog.num_cone_rows();
    DataDerivative d = DataDerivative::zero(n_x, m);
    d.dq.head(model.n_a) = -dtau_a.col(j);
    d.dq.tail(model.n_o) = -dtau_o.col(j);
    if (j >= model.n_a) {
        int jo = j - model.n_a;
        d.dq.tail(model.n_o) -= model.M_o.col(jo) / (model.dt * model.dt);
    }
    const Vector xfull = x.full();
    for (size_t i = 0; i < model.contacts.size(); ++i) {
        const auto& pair = model.contacts[i];
        const ContactGeometry& g = ap.geoms[i];
        int off = ap.block_offsets[i];
        Matrix D = cone_scaling(pair);
        const Matrix& dJ = g.dJ[j];
        Vector dphi_vec = Vector::Zero(pair.d);
        dphi_vec(0) = g.dphi(j);
        d.dA.middleRows(off, pair.d) = -D * dJ;
        d.db.segment(off, pair.d) = D * (dphi_vec - dJ * xfull - g.J.col(j));
    }
    return d;
}

DataDerivative control_direction_derivative(const MechanicalModel& model,
                                            const AssembledProgram& ap, int j) {
    DataDerivative d = DataDerivative::zero(model.n_x(), ap.prog.num_cone_rows());
    d.dq.head(model.n_a) = -model.K_a.col(j);
    return d;
}

// d tau / d x for the optional force callbacks (central differences; exact
// zero for the constant default).
Matrix tau_jacobian(const std::function<Vector(const State&)>& fn, const State& x, int rows,
                    int n_a) {
    const int n_x = static_cast<int>(x.x_a.size() + x.x_o.size());
    Matrix J = Matrix::Zero(rows, n_x);
    if (!fn) return J;
    const double h = 1e-7;
    Vector xf = x.full();
    for (int j = 0; j < n_x; ++j) {
        Vector xp = xf, xm = xf;
        xp(j) += h;
        xm(j) -= h;
        J.col(j) =
            (fn(State::from_full(xp, n_a)) - fn(State::from_full(xm, n_a))) / (2.0 * h);
    }
    return J;
}

}  // namespace

Vector MechanicalModel::tau_a(const State& x) const {
    if (tau_a_fn) return tau_a_fn(x);
    return tau_a_const.size() == n_a ? tau_a_const : Vector::Zero(n_a);
}

Vector MechanicalModel::tau_o(const State& x) const {
    if (tau_o_fn) return tau_o_fn(x);
    return tau_o_const.size() == n_o ? tau_o_const : Vector::Zero(n_o);
}

Pose MechanicalModel::body_pose(const Body& body, const State& x) const {
    switch (body.kind) {
        case Body::Kind::Actuated:
            return {x.x_a.segment(dim * body.index, dim), 0.0};
        case Body::Kind::Object: {
            Pose p{x.x_o.head(dim), 0.0};
            if (object_rotates()) p.rotation = x.x_o(dim);
            return p;
        }
        case Body::Kind::World:
            return Pose::identity(dim);
    }
    return Pose::identity(dim);
}

Matrix MechanicalModel::p_matrix() const {
    Matrix P = Matrix::Zero(n_x(), n_x());
    P.topLeftCorner(n_a, n_a) = K_a;
    P.bottomRightCorner(n_o, n_o) = M_o / (dt * dt);
    return P;
}

void MechanicalModel::validate() const {
    if (dim != 1 && dim != 2) throw std::invalid_argument("model: dim must be 1 or 2");
    if (n_a <= 0 || n_a % dim != 0)
        throw std::invalid_argument("model: n_a must be a positive multiple of dim");
    if (n_o != dim && n_o != dim + 1)
        throw std::invalid_argument("model: n_o must be dim (translation) or dim+1 (planar)");
    if (K_a.rows() != n_a || K_a.cols() != n_a)
        throw std::invalid_argument("model: K_a must be n_a x n_a");
    if (M_o.rows() != n_o || M_o.cols() != n_o)
        throw std::invalid_argument("model: M_o must be n_o x n_o");
    if (dt <= 0.0) throw std::invalid_argument("model: dt must be positive");
    Eigen::LLT<Matrix> ka(K_a), mo(M_o);
    if (ka.info() != Eigen::Success) throw std::invalid_argument("model: K_a must be SPD");
    if (mo.info() != Eigen::Success) throw std::invalid_argument("model: M_o must be SPD");
    for (const auto& pair : contacts) {
        if (pair.shape_a < 0 || pair.shape_a >= static_cast<int>(shapes.size()) ||
            pair.shape_b < 0 || pair.shape_b >= static_cast<int>(shapes.size()))
            throw std::invalid_argument("model: contact pair shape index out of range");
        if (pair.d != 1 && pair.d != 2)
            throw std::invalid_argument("model: contact d must be 1 or 2");
        if (pair.d == 2 && pair.mu <= 0.0)
            throw std::invalid_argument("model: frictional contact needs mu > 0");
        if (pair.mu < 0.0) throw std::invalid_argument("model: mu must be >= 0");
        if (pair.d == 2 && dim != 2)
            throw std::invalid_argument("model: planar friction requires dim 2");
        const auto& body_a = shapes[pair.shape_a].body;
        if (body_a.kind == Body::Kind::Actuated &&
            (body_a.index < 0 || dim * (body_a.index + 1) > n_a))
            throw std::invalid_argument("model: actuated body index out of range");
    }
}

ConicProgram assemble_program(const MechanicalModel& model, const State& x, const Vector& u,
                              double /*kappa*/) {
    return assemble_impl(model, x, u, false).prog;
}

StepResult step_true(const MechanicalModel& model, const State& x, const Vector& u) {
    return run_step(model, x, u, 0.0);
}

StepResult step_smoothed(const MechanicalModel& model, const State& x, const Vector& u,
                         double kappa) {
    if (kappa <= 0.0) throw std::invalid_argument("step_smoothed: kappa must be > 0");
    return run_step(model, x, u, kappa);
}

Linearization linearize(const MechanicalModel& model, const State& x, const Vector& u,
                        double kappa) {
    if (kappa <= 0.0) throw std::invalid_argument("linearize: kappa must be > 0");
    AssembledProgram ap = assemble_impl(model, x, u, true);
    ConicSolution sol = solve(ap.prog, kappa);
    if (sol.status != SolveStatus::Solved)
        throw NumericalError(std::string("linearize: smoothed solve failed: ") +
                             to_string(sol.status));
    auto fact = KktFactorization::factor(ap.prog, sol);

    const int n_x = model.n_x();
    const int n_c = model.num_contacts();
    Matrix dtau_a = tau_jacobian(model.tau_a_fn, x, model.n_a, model.n_a);
    Matrix dtau_o = tau_jacobian(model.tau_o_fn, x, model.n_o, model.n_a);

    Linearization lin;
    lin.A = Matrix(n_x, n_x);
    lin.B = Matrix(n_x, model.n_a);
    lin.dlambda_dx.assign(n_c, Matrix());
    lin.dlambda_du.assign(n_c, Matrix());
    for (int i = 0; i < n_c; ++i) {
        lin.dlambda_dx[i] = Matrix(model.contacts[i].d, n_x);
        lin.dlambda_du[i] = Matrix(model.contacts[i].d, model.n_a);
    }

    for (int j = 0; j < n_x; ++j) {
        DataDerivative d = state_direction_derivative(model, ap, x, j, dtau_a, dtau_o);
        SolutionDerivative sd = fact.d_solution_d_data(d);
        lin.A.col(j) = sd.dx;
        for (int i = 0; i < n_c; ++i) {
            Matrix D = cone_scaling(model.contacts[i]);
            lin.dlambda_dx[i].col(j) =
                D * sd.dz.segment(ap.block_offsets[i], model.contacts[i].d);
        }
    }
    for (int j = 0; j < model.n_a; ++j) {
        DataDerivative d = control_direction_derivative(model, ap, j);
        SolutionDerivative sd = fact.d_solution_d_data(d);
        lin.B.col(j) = sd.dx;
        for (int i = 0; i < n_c; ++i) {
            Matrix D = cone_scaling(model.contacts[i]);
            lin.dlambda_du[i].col(j) =
                D * sd.dz.segment(ap.block_offsets[i], model.contacts[i].d);
        }
    }
    return lin;
}

DeviationModel deviation_model(const MechanicalModel& model, const State& x, const Vector& u,
                               double kappa, bool with_jacobians) {
    if (kappa <= 0.0) throw std::invalid_argument("deviation_model: kappa must be > 0");
    AssembledProgram ap = assemble_impl(model, x, u, with_jacobians);
    ConicSolution sol = solve(ap.prog, kappa);
    if (sol.status != SolveStatus::Solved)
        throw NumericalError(std::string("deviation_model: smoothed solve failed: ") +
                             to_string(sol.status));
    const int n_x = model.n_x();
    const int n_c = model.num_contacts();
    DeviationModel dev;
    dev.E = Matrix::Zero(n_x, n_c);
    if (n_c == 0) {
        if (with_jacobians) {
            dev.dE_dx.assign(n_x, Matrix::Zero(n_x, 0));
            dev.dE_du.assign(model.n_a, Matrix::Zero(n_x, 0));
        }
        return dev;
    }
    auto fact = KktFactorization::factor(ap.prog, sol);
    SolutionDerivative dk = fact.d_solution_d_kappa();

    Eigen::LLT<Matrix> pfac(model.p_matrix());
    for (int i = 0; i < n_c; ++i) {
        const auto& pair = model.contacts[i];
        Matrix D = cone_scaling(pair);
        Vector dlam_dk = D * dk.dz.segment(ap.block_offsets[i], pair.d);
        dev.E.col(i) = -pfac.solve(ap.geoms[i].J.transpose() * dlam_dk) * kappa;
    }
    if (!with_jacobians) return dev;

    Matrix dtau_a = tau_jacobian(model.tau_a_fn, x, model.n_a, model.n_a);
    Matrix dtau_o = tau_jacobian(model.tau_o_fn, x, model.n_o, model.n_a);
    auto column_jacobian = [&](const DataDerivative& d, bool state_dir, int j) {
        SolutionDerivative sd = fact.d_solution_d_data(d);
        SolutionDerivative d2 = fact.d2_solution_d_data_d_kappa(d, sd, dk);
        Matrix dE = Matrix::Zero(n_x, n_c);
        for (int i = 0; i < n_c; ++i) {
            const auto& pair = model.contacts[i];
            Matrix D = cone_scaling(pair);
            Vector dlam_dk = D * dk.dz.segment(ap.block_offsets[i], pair.d);
            Vector d2lam = D * d2.dz.segment(ap.block_offsets[i], pair.d);
            Vector col = ap.geoms[i].J.transpose() * d2lam;
            if (state_dir) col += ap.geoms[i].dJ[j].transpose() * dlam_dk;
            dE.col(i) = -pfac.solve(col) * kappa;
        }
        return dE;
    };
    dev.dE_dx.reserve(n_x);
    for (int j = 0; j < n_x; ++j)
        dev.dE_dx.push_back(column_jacobian(
            state_direction_derivative(model, ap, x, j, dtau_a, dtau_o), true, j));
    dev.dE_du.reserve(model.n_a);
    for (int j = 0; j < model.n_a; ++j)
        dev.dE_du.push_back(
            column_jacobian(control_direction_derivative(model, ap, j), false, j));
    return dev;
}

double coupling_diagnostic(const MechanicalModel& model, const State& x) {
    const int n_c = model.num_contacts();
    if (n_c < 2) return 0.0;
    AssembledProgram ap = assemble_impl(model, x, Vector::Zero(model.n_a), false);
    Eigen::LLT<Matrix> pfac(model.p_matrix());
    double worst = 0.0;
    for (int i = 0; i < n_c; ++i) {
        Matrix Gi = ap.geoms[i].J * pfac.solve(ap.geoms[i].J.transpose());
        double denom = Gi.norm();
        for (int j = 0; j < n_c; ++j) {
            if (i == j) continue;
            Matrix Gij = ap.geoms[i].J * pfac.solve(ap.geoms[j].J.transpose());
            worst = std::max(worst, Gij.norm() / denom);
        }
    }
    return worst;
}

bool in_friction_cone(double mu, const Vector& lambda, double tol) {
    if (lambda.size() == 1) return lambda(0) >= -tol;
    return lambda.tail(lambda.size() - 1).norm() <= mu * lambda(0) + tol;
}

bool in_dual_friction_cone(double mu, const Vector& nu, double tol) {
    if (nu.size() == 1) return nu(0) >= -tol;
    return nu.tail(nu.size() - 1).norm() <= nu(0) / mu + tol;
}

}  // namespace tubeplan
