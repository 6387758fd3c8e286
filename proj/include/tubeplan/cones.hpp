#pragma once

#include <Eigen/Dense>
#include <vector>

namespace tubeplan {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ConeKind { Nonneg, SecondOrder };

struct ConeBlock {
    ConeKind kind;
    int dim;
};

/// Cartesian product of nonnegative and second-order cone blocks.
/// SecondOrder blocks store the scalar component first.
class ConeSpec {
  public:
    ConeSpec() = default;
    explicit ConeSpec(std::vector<ConeBlock> blocks);

    static ConeSpec nonneg(int dim);
    static ConeSpec second_order(int dim);

    ConeSpec& append(ConeKind kind, int dim);
    ConeSpec& append(const ConeSpec& other);

    const std::vector<ConeBlock>& blocks() const { return blocks_; }
    int total_dim() const { return total_dim_; }
    bool empty() const { return total_dim_ == 0; }

    /// Sum of barrier degrees: block dim for Nonneg, 1 per SecondOrder block.
    int barrier_degree() const;

  private:
    std::vector<ConeBlock> blocks_;
    int total_dim_ = 0;
};

/// Blockwise symmetric-cone product s ∘ z.
Vector cone_product(const ConeSpec& spec, const Vector& s, const Vector& z);

/// Identity element e of the cone product.
Vector cone_identity(const ConeSpec& spec);

/// Arrow operator L(v) with L(v) u = v ∘ u.
Matrix cone_arrow(const ConeSpec& spec, const Vector& v);

/// Logarithmic barrier value; throws std::domain_error outside the interior.
double barrier_value(const ConeSpec& spec, const Vector& s);

/// Gradient of the barrier at a strictly interior point.
Vector barrier_gradient(const ConeSpec& spec, const Vector& s);

/// Dense barrier Hessian (small problems / tests).
Matrix barrier_hessian(const ConeSpec& spec, const Vector& s);

/// H(s) * M without forming the Hessian; M has spec.total_dim() rows.
Matrix barrier_hessian_apply(const ConeSpec& spec, const Vector& s, const Matrix& M);

bool in_cone(const ConeSpec& spec, const Vector& v, double tol = 1e-9);

/// Dual-cone membership. The blocks used here are self-dual; scaled friction
/// cones are handled by the dynamics module in contact coordinates.
bool in_dual_cone(const ConeSpec& spec, const Vector& v, double tol = 1e-9);

/// Largest t with s + a*ds strictly interior for all a in [0, t), capped at `cap`.
double step_to_boundary(const ConeSpec& spec, const Vector& s, const Vector& ds,
                        double cap = 1.0);

/// Strict interiority with a margin on the defining inequalities.
bool strictly_interior(const ConeSpec& spec, const Vector& s, double margin = 0.0);

}  // namespace tubeplan
