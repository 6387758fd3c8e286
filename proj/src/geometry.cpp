#include "tubeplan/geometry.hpp"

#include <cmath>

namespace tubeplan {

namespace {

Vector rot90(const Vector& v) {
    Vector out(2);
    out << -v(1), v(0);
    return out;
}

// World-frame halfspace data for a posed body halfspace.
struct WorldHalfspace {
    Vector normal;
    double offset;
};

WorldHalfspace world_halfspace(const HalfSpace& hs, const Pose& pose) {
    Matrix R = rotation_matrix(pose.rotation, pose.dim());
    Vector n = R * hs.normal;
    return {n, hs.offset + n.dot(pose.translation)};
}

// World-frame inequality data A p <= b of a posed polytope.
void world_polytope(const ConvexPolytope& poly, const Pose& pose, Matrix& A, Vector& b) {
    Matrix R = rotation_matrix(pose.rotation, pose.dim());
    A = poly.A * R.transpose();
    b = poly.b + A * pose.translation;
}

ContactQuery sphere_sphere(const Sphere& a, const Pose& pa, const Sphere& b, const Pose& pb) {
    Vector d = pa.translation - pb.translation;
    double dist = d.norm();
    if (dist < 1e-12)
        throw std::invalid_argument("contact_query: coincident sphere centers");
    ContactQuery q;
    q.normal = d / dist;
    q.phi = dist - a.radius - b.radius;
    q.point_a = pa.translation - a.radius * q.normal;
    q.point_b = pb.translation + b.radius * q.normal;
    if (pa.dim() == 2) q.tangent = rot90(q.normal);
    return q;
}

ContactQuery sphere_halfspace(const Sphere& a, const Pose& pa, const HalfSpace& b,
                              const Pose& pb) {
    WorldHalfspace hs = world_halfspace(b, pb);
    ContactQuery q;
    q.normal = hs.normal;
    double gap_center = hs.normal.dot(pa.translation) - hs.offset;
    q.phi = gap_center - a.radius;
    q.point_a = pa.translation - a.radius * hs.normal;
    q.point_b = pa.translation - gap_center * hs.normal;
    if (pa.dim() == 2) q.tangent = rot90(q.normal);
    return q;
}

ContactQuery sphere_polytope(const Sphere& a, const Pose& pa, const ConvexPolytope& b,
                             const Pose& pb, double kappa_geom) {
    RelaxedPoint rp = closest_point_relaxed(pa.translation, b, pb, kappa_geom);
    Vector d = pa.translation - rp.point;
    double dist = d.norm();
    ContactQuery q;
    if (dist > 1e-9) {
        q.normal = d / dist;
        q.phi = dist - a.radius;
    } else {
        // Center on or inside the polytope: deepest-face signed distance.
        Matrix Aw;
        Vector bw;
        world_polytope(b, pb, Aw, bw);
        Vector slack = bw - Aw * pa.translation;
        int imax = 0;
        double best = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < slack.size(); ++i) {
            double v = -slack(i) / Aw.row(i).norm();
            if (v > best) {
                best = v;
                imax = i;
            }
        }
        q.normal = Aw.row(imax).transpose() / Aw.row(imax).norm();
        q.phi = best - a.radius;
    }
    q.point_a = pa.translation - a.radius * q.normal;
    q.point_b = rp.point;
    if (pa.dim() == 2) q.tangent = rot90(q.normal);
    return q;
}

}  // namespace

Matrix rotation_matrix(double angle, int dim) {
    if (dim == 1) return Matrix::Ones(1, 1);
    Matrix R(2, 2);
    R << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    return R;
}

Matrix rotation_matrix_derivative(double angle, int dim) {
    if (dim == 1) return Matrix::Zero(1, 1);
    Matrix R(2, 2);
    R << -std::sin(angle), -std::cos(angle), std::cos(angle), -std::sin(angle);
    return R;
}

RelaxedPoint closest_point_relaxed(const Vector& center, const ConvexPolytope& poly,
                                   const Pose& pose, double kappa_geom,
                                   const SolverSettings& settings) {
    if (kappa_geom < 0.0)
        throw std::invalid_argument("closest_point_relaxed: kappa_geom must be >= 0");
    const int dim = static_cast<int>(center.size());
    RelaxedPoint out;
    out.program.P = Matrix::Identity(dim, dim);
    out.program.q = -center;
    world_polytope(poly, pose, out.program.A, out.program.b);
    out.program.cones = ConeSpec::nonneg(static_cast<int>(out.program.b.size()));
    out.solution = solve(out.program, kappa_geom, settings);
    if (out.solution.status != SolveStatus::Solved)
        throw NumericalError(std::string("closest_point_relaxed: projection solve failed: ") +
                             to_string(out.solution.status));
    out.point = out.solution.x;
    return out;
}

ContactQuery contact_query(const Shape& shape_a, const Pose& pose_a, const Shape& shape_b,
                           const Pose& pose_b, double kappa_geom) {
    if (pose_a.dim() != pose_b.dim())
        throw std::invalid_argument("contact_query: mixed pose dimensions");
    // Canonicalize so that side a is the sphere.
    if (!std::holds_alternative<Sphere>(shape_a)) {
        if (!std::holds_alternative<Sphere>(shape_b))
            throw std::invalid_argument("contact_query: unsupported contact pair");
        ContactQuery q = contact_query(shape_b, pose_b, shape_a, pose_a, kappa_geom);
        q.normal = -q.normal;
        if (q.tangent) *q.tangent = -*q.tangent;
        std::swap(q.point_a, q.point_b);
        return q;
    }
    const Sphere& a = std::get<Sphere>(shape_a);
    if (std::holds_alternative<Sphere>(shape_b))
        return sphere_sphere(a, pose_a, std::get<Sphere>(shape_b), pose_b);
    if (std::holds_alternative<HalfSpace>(shape_b))
        return sphere_halfspace(a, pose_a, std::get<HalfSpace>(shape_b), pose_b);
    return sphere_polytope(a, pose_a, std::get<ConvexPolytope>(shape_b), pose_b, kappa_geom);
}

ContactQueryDiff contact_query_diff(const Sphere& sphere_a, const Pose& pose_a,
                                    const Shape& shape_b, const Pose& pose_b,
                                    double kappa_geom) {
    const int dim = pose_a.dim();
    ContactQueryDiff out;
    out.query = contact_query(sphere_a, pose_a, shape_b, pose_b, kappa_geom);
    const Vector n = out.query.normal;

    auto zero_partial = [&]() {
        return ContactPartial{0.0, Vector::Zero(dim), Vector::Zero(dim)};
    };
    out.d_center_a.assign(dim, zero_partial());
    out.d_trans_b.assign(dim, zero_partial());
    const bool planar_rot = (dim == 2);
    if (planar_rot) out.d_rot_b = zero_partial();

    if (std::holds_alternative<Sphere>(shape_b)) {
        const Sphere& b = std::get<Sphere>(shape_b);
        Vector d = pose_a.translation - pose_b.translation;
        double dist = d.norm();
        Matrix Pn = (Matrix::Identity(dim, dim) - n * n.transpose()) / dist;
        for (int i = 0; i < dim; ++i) {
            Vector ei = Vector::Unit(dim, i);
            out.d_center_a[i].dphi = n(i);
            out.d_center_a[i].dnormal = Pn * ei;
            out.d_center_a[i].dpoint_b = b.radius * out.d_center_a[i].dnormal;
            out.d_trans_b[i].dphi = -n(i);
            out.d_trans_b[i].dnormal = -Pn * ei;
            out.d_trans_b[i].dpoint_b = ei + b.radius * out.d_trans_b[i].dnormal;
        }
        // A sphere is rotationally symmetric about its center.
        return out;
    }

    if (std::holds_alternative<HalfSpace>(shape_b)) {
        const HalfSpace& b = std::get<HalfSpace>(shape_b);
        WorldHalfspace hs = world_halfspace(b, pose_b);
        for (int i = 0; i < dim; ++i) {
            Vector ei = Vector::Unit(dim, i);
            out.d_center_a[i].dphi = hs.normal(i);
            out.d_center_a[i].dpoint_b = ei - hs.normal(i) * hs.normal;
            out.d_trans_b[i].dphi = -hs.normal(i);
            out.d_trans_b[i].dpoint_b = hs.normal(i) * hs.normal;
        }
        if (planar_rot) {
            Vector dn = rotation_matrix_derivative(pose_b.rotation, dim) * b.normal;
            double dgap = dn.dot(pose_a.translation - pose_b.translation);
            double gap_center = hs.normal.dot(pose_a.translation) - hs.offset;
            out.d_rot_b->dphi = dgap;
            out.d_rot_b->dnormal = dn;
            out.d_rot_b->dpoint_b = -dgap * hs.normal - gap_center * dn;
        }
        return out;
    }

    // Sphere vs polytope: chain through the relaxed projection.
    const ConvexPolytope& b = std::get<ConvexPolytope>(shape_b);
    RelaxedPoint rp = closest_point_relaxed(pose_a.translation, b, pose_b, kappa_geom);
    Vector d = pose_a.translation - rp.point;
    double dist = d.norm();
    if (dist <= 1e-9)
        throw NumericalError("contact_query_diff: sphere center inside polytope");
    Matrix Pn = (Matrix::Identity(dim, dim) - n * n.transpose()) / dist;
    auto fact = KktFactorization::factor(rp.program, rp.solution);
    const int m = rp.program.num_cone_rows();

    auto fill = [&](ContactPartial& p, const Vector& dc, const DataDerivative& dd) {
        Vector dpstar = fact.d_solution_d_data(dd).dx;
        Vector ddvec = dc - dpstar;
        p.dphi = n.dot(ddvec);
        p.dnormal = Pn * ddvec;
        p.dpoint_b = dpstar;
    };

    for (int i = 0; i < dim; ++i) {
        Vector ei = Vector::Unit(dim, i);
        DataDerivative dd = DataDerivative::zero(dim, m);
        dd.dq = -ei;  // q = -center
        fill(out.d_center_a[i], ei, dd);
    }
    for (int i = 0; i < dim; ++i) {
        Vector ei = Vector::Unit(dim, i);
        DataDerivative dd = DataDerivative::zero(dim, m);
        dd.db = rp.program.A * ei;  // b_w = b_loc + A_w t
        fill(out.d_trans_b[i], Vector::Zero(dim), dd);
    }
    if (planar_rot) {
        Matrix dAw = b.A * rotation_matrix_derivative(pose_b.rotation, dim).transpose();
        DataDerivative dd = DataDerivative::zero(dim, m);
        dd.dA = dAw;
        dd.db = dAw * pose_b.translation;
        fill(*out.d_rot_b, Vector::Zero(dim), dd);
    }
    return out;
}

}  // namespace tubeplan
