#pragma once

#include <optional>
#include <variant>

#include "tubeplan/sensitivity.hpp"
#include "tubeplan/solver.hpp"

namespace tubeplan {

struct Sphere {
    double radius;
};

/// Body-frame polytope { p : A p <= b }, bounded and nonempty.
struct ConvexPolytope {
    Matrix A;
    Vector b;
};

/// Body-frame halfspace { p : normal' p <= offset }, unit normal.
struct HalfSpace {
    Vector normal;
    double offset;
};

using Shape = std::variant<Sphere, ConvexPolytope, HalfSpace>;

/// Planar (dim 2) or 1-D rigid pose. rotation is ignored for dim 1.
struct Pose {
    Vector translation;
    double rotation = 0.0;

    int dim() const { return static_cast<int>(translation.size()); }
    static Pose identity(int dim) { return {Vector::Zero(dim), 0.0}; }
};

Matrix rotation_matrix(double angle, int dim);
Matrix rotation_matrix_derivative(double angle, int dim);

/// Result of a proximity query. normal points from shape b into shape a and
/// phi is positive when the shapes are separated.
struct ContactQuery {
    double phi;
    Vector point_a;
    Vector point_b;
    Vector normal;
    std::optional<Vector> tangent;  // planar only
};

/// Barrier-relaxed projection of a point onto a posed polytope. The program
/// and solution form the sensitivity handle for downstream differentiation.
struct RelaxedPoint {
    Vector point;
    ConicProgram program;
    ConicSolution solution;
};

/// kappa_geom = 0 gives the Euclidean projection; kappa_geom > 0 gives the
/// interior point of the barrier-relaxed projection program, smooth in the
/// center, the pose, and kappa_geom.
RelaxedPoint closest_point_relaxed(const Vector& center, const ConvexPolytope& poly,
                                   const Pose& pose, double kappa_geom,
                                   const SolverSettings& settings = {});

/// Supported pairs: Sphere-Sphere, Sphere-HalfSpace, Sphere-ConvexPolytope
/// (in either order; the query frame is canonical with a = sphere side).
ContactQuery contact_query(const Shape& shape_a, const Pose& pose_a, const Shape& shape_b,
                           const Pose& pose_b, double kappa_geom);

/// Contact query plus derivatives with respect to the sphere center, the
/// other body's translation, and (planar) its rotation. Shape a must be a
/// sphere; shape b may be a sphere, polytope, or halfspace.
struct ContactPartial {
    double dphi;
    Vector dnormal;
    Vector dpoint_b;
};

struct ContactQueryDiff {
    ContactQuery query;
    std::vector<ContactPartial> d_center_a;  // one per center coordinate
    std::vector<ContactPartial> d_trans_b;   // one per translation coordinate
    std::optional<ContactPartial> d_rot_b;   // planar only
};

ContactQueryDiff contact_query_diff(const Sphere& sphere_a, const Pose& pose_a,
                                    const Shape& shape_b, const Pose& pose_b,
                                    double kappa_geom);

}  // namespace tubeplan
