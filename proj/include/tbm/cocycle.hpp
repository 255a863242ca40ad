#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "tbm/core.hpp"

namespace tbm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Gauss-Legendre nodes and weights on [0, 1].
struct GaussRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

inline GaussRule gauss_legendre_unit(int order) {
    if (order < 1) throw InputError("gauss_legendre_unit: order must be positive");
    GaussRule rule;
    rule.nodes.resize(order);
    rule.weights.resize(order);
    for (int i = 0; i < order; ++i) {
        double z = std::cos(pi * (i + 0.75) / (order + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 1; j <= order; ++j) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
            }
            dp = order * (z * p0 - p1) / (z * z - 1.0);
            double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        // recompute derivative at the converged root
        double p0 = 1.0, p1 = 0.0;
        for (int j = 1; j <= order; ++j) {
            double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
        }
        dp = order * (z * p0 - p1) / (z * z - 1.0);
        rule.nodes[i] = 0.5 * (1.0 - z);
        rule.weights[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    return rule;
}

// Magnetic field as an antisymmetric matrix of components B_jk, either constant
// or sampled from a callable position -> matrix.
class MagneticField {
public:
    using Sampler = std::function<Mat(const Vec&)>;

    static MagneticField zero(int dim) { return constant(Mat::Zero(dim, dim)); }

    static MagneticField constant(const Mat& components) {
        if (components.rows() != components.cols() || components.rows() < 1)
            throw InputError("MagneticField: components must be a nonempty square matrix");
        if ((components + components.transpose()).cwiseAbs().maxCoeff() > 1e-14 * (1.0 + components.cwiseAbs().maxCoeff()))
            throw InputError("MagneticField: components must be antisymmetric");
        MagneticField b;
        b.dim_ = static_cast<int>(components.rows());
        b.components_ = components;
        return b;
    }

    // 2D constant field with B_12 = b.
    static MagneticField planar(double b) {
        Mat m(2, 2);
        m << 0.0, b, -b, 0.0;
        return constant(m);
    }

    static MagneticField sampled(int dim, Sampler sampler, int quadrature_order = 8) {
        if (dim < 1) throw InputError("MagneticField: dimension must be positive");
        if (!sampler) throw InputError("MagneticField: empty sampler");
        MagneticField b;
        b.dim_ = dim;
        b.components_ = Mat::Zero(dim, dim);
        b.sampler_ = std::move(sampler);
        b.rule_ = std::make_shared<GaussRule>(gauss_legendre_unit(quadrature_order));
        b.order_ = quadrature_order;
        return b;
    }

    int dimension() const { return dim_; }
    bool is_constant() const { return !sampler_; }
    int quadrature_order() const { return order_; }
    const Mat& components() const { return components_; }

    Mat at(const Vec& q) const {
        if (is_constant()) return components_;
        Mat m = sampler_(q);
        if (m.rows() != dim_ || m.cols() != dim_)
            throw InputError("MagneticField: sampler returned a matrix of the wrong shape");
        return m;
    }

    // Integral of the field 2-form over the parametrized triangle
    // p(u, v) = q + u x + v y, 0 <= v <= u <= 1.
    double triangle_integral(const Vec& q, const Vec& x, const Vec& y) const {
        if (is_constant()) return 0.5 * x.dot(components_ * y);
        // collapsed tensor rule: v = u w with Jacobian u
        const GaussRule& g = *rule_;
        double total = 0.0;
        Vec p(dim_);
        for (std::size_t i = 0; i < g.nodes.size(); ++i) {
            double u = g.nodes[i];
            double inner = 0.0;
            for (std::size_t j = 0; j < g.nodes.size(); ++j) {
                double v = u * g.nodes[j];
                p = q + u * x + v * y;
                inner += g.weights[j] * x.dot(at(p) * y);
            }
            total += g.weights[i] * u * inner;
        }
        return total;
    }

private:
    int dim_ = 0;
    Mat components_;
    Sampler sampler_;
    std::shared_ptr<const GaussRule> rule_;
    int order_ = 0;
};

namespace detail {
inline void check_dim(const MagneticField& b, const Vec& v, const char* what) {
    if (v.size() != b.dimension())
        throw InputError(std::string("dimension mismatch for ") + what + ": expected " +
                         std::to_string(b.dimension()) + ", got " + std::to_string(v.size()));
}

inline bool zero_wedge(const Vec& x, const Vec& y) {
    for (Eigen::Index j = 0; j < x.size(); ++j)
        for (Eigen::Index k = j + 1; k < x.size(); ++k)
            if (x[j] * y[k] - x[k] * y[j] != 0.0) return false;
    return true;
}
}  // namespace detail

// Flux through the triangle with vertices q, q+x, q+x+y.
inline double triangle_flux(const MagneticField& b, const Vec& q, const Vec& x, const Vec& y) {
    detail::check_dim(b, q, "q");
    detail::check_dim(b, x, "x");
    detail::check_dim(b, y, "y");
    if (detail::zero_wedge(x, y)) return 0.0;
    return b.triangle_integral(q, x, y);
}

inline cplx omega(const MagneticField& b, const Vec& q, const Vec& x, const Vec& y) {
    double phi = triangle_flux(b, q, x, y);
    if (phi == 0.0) return cplx(1.0, 0.0);
    return std::polar(1.0, -phi);
}

// Box(x_perp, x_par) at q; the perpendicular direction is the last coordinate.
inline cplx box_flux(const MagneticField& b, const Vec& q, double x_perp, const Vec& x_par) {
    int n = b.dimension();
    if (n < 2) throw InputError("box_flux: needs dimension >= 2");
    if (x_par.size() != n - 1)
        throw InputError("box_flux: parallel vector must have dimension " + std::to_string(n - 1));
    detail::check_dim(b, q, "q");
    Vec perp = Vec::Zero(n);
    perp[n - 1] = x_perp;
    Vec par = Vec::Zero(n);
    par.head(n - 1) = x_par;
    return omega(b, q, perp, par) * std::conj(omega(b, q, par, perp));
}

struct CocycleSample {
    Vec q, x, y, z;
};

// max |w(x,y)(q) w(x+y,z)(q) - w(y,z)(q+x) w(x,y+z)(q)| over the samples.
inline double check_cocycle_relation(const MagneticField& b, const std::vector<CocycleSample>& samples) {
    double worst = 0.0;
    for (const auto& s : samples) {
        cplx lhs = omega(b, s.q, s.x, s.y) * omega(b, s.q, s.x + s.y, s.z);
        cplx rhs = omega(b, s.q + s.x, s.y, s.z) * omega(b, s.q, s.x, s.y + s.z);
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    return worst;
}

// Holds a field and evaluates the cocycle; the object handed to algebra code.
class CocycleEvaluator {
public:
    explicit CocycleEvaluator(MagneticField field) : field_(std::move(field)) {}

    const MagneticField& field() const { return field_; }
    int dimension() const { return field_.dimension(); }
    bool is_constant() const { return field_.is_constant(); }

    cplx operator()(const Vec& q, const Vec& x, const Vec& y) const { return omega(field_, q, x, y); }
    cplx box(const Vec& q, double x_perp, const Vec& x_par) const { return box_flux(field_, q, x_perp, x_par); }

private:
    MagneticField field_;
};

}  // namespace tbm
