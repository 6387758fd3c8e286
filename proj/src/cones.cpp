#include "tubeplan/cones.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace tubeplan {

namespace {

void check_block(const ConeBlock& b) {
    if (b.dim < 1) throw std::invalid_argument("cone block dim must be >= 1");
    if (b.kind == ConeKind::SecondOrder && b.dim < 2)
        throw std::invalid_argument("second-order cone block dim must be >= 2");
}

void check_dim(const ConeSpec& spec, const Vector& v, const char* what) {
    if (v.size() != spec.total_dim())
        throw std::invalid_argument(std::string(what) + ": length does not match cone spec");
}

// s0^2 - ||s1||^2 for a second-order block.
double soc_residual(const Eigen::Ref<const Vector>& s) {
    return s(0) * s(0) - s.tail(s.size() - 1).squaredNorm();
}

}  // namespace

ConeSpec::ConeSpec(std::vector<ConeBlock> blocks) : blocks_(std::move(blocks)) {
    for (const auto& b : blocks_) {
        check_block(b);
        total_dim_ += b.dim;
    }
}

ConeSpec ConeSpec::nonneg(int dim) { return ConeSpec({{ConeKind::Nonneg, dim}}); }

ConeSpec ConeSpec::second_order(int dim) { return ConeSpec({{ConeKind::SecondOrder, dim}}); }

ConeSpec& ConeSpec::append(ConeKind kind, int dim) {
    ConeBlock b{kind, dim};
    check_block(b);
    blocks_.push_back(b);
    total_dim_ += dim;
    return *this;
}

ConeSpec& ConeSpec::append(const ConeSpec& other) {
    for (const auto& b : other.blocks_) append(b.kind, b.dim);
    return *this;
}

int ConeSpec::barrier_degree() const {
    int deg = 0;
    for (const auto& b : blocks_) deg += (b.kind == ConeKind::Nonneg) ? b.dim : 1;
    return deg;
}

Vector cone_product(const ConeSpec& spec, const Vector& s, const Vector& z) {
    check_dim(spec, s, "cone_product s");
    check_dim(spec, z, "cone_product z");
    Vector out(spec.total_dim());
    int off = 0;
    for (const auto& b : spec.blocks()) {
        auto u = s.segment(off, b.dim);
        auto v = z.segment(off, b.dim);
        if (b.kind == ConeKind::Nonneg) {
            out.segment(off, b.dim) = u.cwiseProduct(v);
        } else {
            out(off) = u.dot(v);
            out.segment(off + 1, b.dim - 1) =
                u(0) * v.tail(b.dim - 1) + v(0) * u.tail(b.dim - 1);
        }
        off += b.dim;
    }
    return out;
}

Vector cone_identity(const ConeSpec& spec) {
    Vector e = Vector::Zero(spec.total_dim());
    int off = 0;
    for (const auto& b : spec.blocks()) {
        if (b.kind == ConeKind::Nonneg)
            e.segment(off, b.dim).setOnes();
        else
            e(off) = 1.0;
        off += b.dim;
    }
    return e;
}

Matrix cone_arrow(const ConeSpec& spec, const Vector& v) {
    check_dim(spec, v, "cone_arrow v");
    Matrix L = Matrix::Zero(spec.total_dim(), spec.total_dim());
    int off = 0;
    for (const auto& b : spec.blocks()) {
        auto u = v.segment(off, b.dim);
        if (b.kind == ConeKind::Nonneg) {
            L.block(off, off, b.dim, b.dim) = u.asDiagonal();
        } else {
            L(off, off) = u(0);
            L.block(off, off + 1, 1, b.dim - 1) = u.tail(b.dim - 1).transpose();
            L.block(off + 1, off, b.dim - 1, 1) = u.tail(b.dim - 1);
            L.block(off + 1, off + 1, b.dim - 1, b.dim - 1) =
                u(0) * Matrix::Identity(b.dim - 1, b.dim - 1);
        }
        off += b.dim;
    }
    return L;
}

double barrier_value(const ConeSpec& spec, const Vector& s) {
    check_dim(spec, s, "barrier_value s");
    double val = 0.0;
    int off = 0;
    for (const auto& b : spec.blocks()) {
        auto u = s.segment(off, b.dim);
        if (b.kind == ConeKind::Nonneg) {
            for (int i = 0; i < b.dim; ++i) {
                if (u(i) <= 0.0) throw std::domain_error("barrier_value: point not interior");
                val -= std::log(u(i));
            }
        } else {
            double r = soc_residual(u);
            if (u(0) <= 0.0 || r <= 0.0)
                throw std::domain_error("barrier_value: point not interior");
            val -= 0.5 * std::log(r);
        }
        off += b.dim;
    }
    return val;
}

Vector barrier_gradient(const ConeSpec& spec, const Vector& s) {
    check_dim(spec, s, "barrier_gradient s");
    Vector g(spec.total_dim());
    int off = 0;
    for (const auto& b : spec.blocks()) {
        auto u = s.segment(off, b.dim);
        if (b.kind == ConeKind::Nonneg) {
            for (int i = 0; i < b.dim; ++i) {
                if (u(i) <= 0.0) throw std::domain_error("barrier_gradient: point not interior");
                g(off + i) = -1.0 / u(i);
            }
        } else {
            double r = soc_residual(u);
            if (u(0) <= 0.0 || r <= 0.0)
                throw std::domain_error("barrier_gradient: point not interior");
            g(off) = -u(0) / r;
            g.segment(off + 1, b.dim - 1) = u.tail(b.dim - 1) / r;
        }
        off += b.dim;
    }
    return g;
}

Matrix barrier_hessian(const ConeSpec& spec, const Vector& s) {
    Matrix I = Matrix::Identity(spec.total_dim(), spec.total_dim());
    return barrier_hessian_apply(spec, s, I);
}

Matrix barrier_hessian_apply(const ConeSpec& spec, const Vector& s, const Matrix& M) {
    check_dim(spec, s, "barrier_hessian_apply s");
    if (M.rows() != spec.total_dim())
        throw std::invalid_argument("barrier_hessian_apply: row count mismatch");
    Matrix out(M.rows(), M.cols());
    int off = 0;
    for (const auto& b : spec.blocks()) {
        auto u = s.segment(off, b.dim);
        auto Mb = M.middleRows(off, b.dim);
        if (b.kind == ConeKind::Nonneg) {
            for (int i = 0; i < b.dim; ++i) {
                if (u(i) <= 0.0)
                    throw std::domain_error("barrier_hessian_apply: point not interior");
                out.row(off + i) = Mb.row(i) / (u(i) * u(i));
            }
        } else {
            double r = soc_residual(u);
            if (u(0) <= 0.0 || r <= 0.0)
                throw std::domain_error("barrier_hessian_apply: point not interior");
            // H = (2/r^2) (Js)(Js)^T - (1/r) J with J = diag(1, -I).
            Vector Js(b.dim);
            Js(0) = u(0);
            Js.tail(b.dim - 1) = -u.tail(b.dim - 1);
            Matrix JM(b.dim, M.cols());
            JM.row(0) = Mb.row(0);
            JM.bottomRows(b.dim - 1) = -Mb.bottomRows(b.dim - 1);
            out.middleRows(off, b.dim) =
                (2.0 / (r * r)) * Js * (Js.transpose() * Mb) - JM / r;
        }
        off += b.dim;
    }
    return out;
}

bool in_cone(const ConeSpec& spec, const Vector& v, double tol) {
    check_dim(spec, v, "in_cone v");
    int off = 0;
    for (const auto& b : spec.blocks()) {
        auto u = v.segment(off, b.dim);
        if (b.kind == ConeKind::Nonneg) {
            if ((u.array() < -tol).any()) return false;
        } else {
            if (u(0) < -tol) return false;
            if (u.tail(b.dim - 1).norm() > u(0) + tol) return false;
        }
        off += b.dim;
    }
    return true;
}

bool in_dual_cone(const ConeSpec& spec, const Vector& v, double tol) {
    return in_cone(spec, v, tol);
}

double step_to_boundary(const ConeSpec& spec, const Vector& s, const Vector& ds, double cap) {
    check_dim(spec, s, "step_to_boundary s");
    check_dim(spec, ds, "step_to_boundary ds");
    double t = cap;
    int off = 0;
    for (const auto& b : spec.blocks()) {
        auto u = s.segment(off, b.dim);
        auto du = ds.segment(off, b.dim);
        if (b.kind == ConeKind::Nonneg) {
            for (int i = 0; i < b.dim; ++i)
                if (du(i) < 0.0) t = std::min(t, -u(i) / du(i));
        } else {
            // Roots of (s0 + t d0)^2 - ||s1 + t d1||^2 = 0.
            Vector u1 = u.tail(b.dim - 1), du1 = du.tail(b.dim - 1);
            double a = du(0) * du(0) - du1.squaredNorm();
            double bb = 2.0 * (u(0) * du(0) - u1.dot(du1));
            double c = soc_residual(u);
            if (du(0) < 0.0) t = std::min(t, -u(0) / du(0));
            double disc = bb * bb - 4.0 * a * c;
            if (std::abs(a) < 1e-300) {
                if (bb < 0.0) t = std::min(t, -c / bb);
            } else if (disc >= 0.0) {
                double sq = std::sqrt(disc);
                double r1 = (-bb - sq) / (2.0 * a);
                double r2 = (-bb + sq) / (2.0 * a);
                if (r1 > r2) std::swap(r1, r2);
                if (r1 > 0.0)
                    t = std::min(t, r1);
                else if (r2 > 0.0 && (a < 0.0 || c < 0.0))
                    t = std::min(t, r2);
            }
        }
        off += b.dim;
    }
    return t;
}

bool strictly_interior(const ConeSpec& spec, const Vector& s, double margin) {
    if (s.size() != spec.total_dim()) return false;
    int off = 0;
    for (const auto& b : spec.blocks()) {
        auto u = s.segment(off, b.dim);
        if (b.kind == ConeKind::Nonneg) {
            if ((u.array() <= margin).any()) return false;
        } else {
            if (u(0) <= margin || soc_residual(u) <= margin) return false;
        }
        off += b.dim;
    }
    return true;
}

}  // namespace tubeplan
