#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tbm/cocycle.hpp"
#include "tbm/core.hpp"

namespace tbm {

// Periodic position grid: N points per axis on a torus with circumferences L.
// The group acting on it is the unwrapped lattice (stride * h) Z^d.
struct PositionGrid {
    int dim = 2;
    std::vector<double> period{1.0, 1.0};
    int points = 8;
    int stride = 2;

    static PositionGrid cube(int dim, double length, int points, int stride = 2) {
        PositionGrid g;
        g.dim = dim;
        g.period.assign(dim, length);
        g.points = points;
        g.stride = stride;
        g.validate();
        return g;
    }

    void validate() const {
        if (dim < 1 || dim > 3) throw InputError("PositionGrid: dimension must be 1, 2 or 3");
        if (static_cast<int>(period.size()) != dim) throw InputError("PositionGrid: period vector has wrong length");
        for (double l : period)
            if (!(l > 0.0) || !std::isfinite(l)) throw InputError("PositionGrid: periods must be positive");
        if (points < 1) throw InputError("PositionGrid: points per axis must be positive");
        if (stride < 1) throw InputError("PositionGrid: stride must be positive");
    }

    double step(int axis) const { return period[axis] / points; }
    double group_step(int axis) const { return stride * step(axis); }

    std::size_t size() const {
        std::size_t s = 1;
        for (int a = 0; a < dim; ++a) s *= static_cast<std::size_t>(points);
        return s;
    }

    // Quadrature weight of one group cell in the first group_dim directions.
    double cell_weight(int group_dim) const {
        double w = 1.0;
        for (int a = 0; a < group_dim; ++a) w *= group_step(a);
        return w;
    }

    // Row-major multi-index, axis 0 slowest.
    std::vector<int> unravel(std::size_t idx) const {
        std::vector<int> m(dim);
        for (int a = dim - 1; a >= 0; --a) {
            m[a] = static_cast<int>(idx % points);
            idx /= points;
        }
        return m;
    }

    std::size_t ravel(const std::vector<long>& m) const {
        std::size_t idx = 0;
        for (int a = 0; a < dim; ++a) {
            long v = m[a] % points;
            if (v < 0) v += points;
            idx = idx * points + static_cast<std::size_t>(v);
        }
        return idx;
    }

    Vec position(std::size_t idx) const {
        auto m = unravel(idx);
        Vec q(dim);
        for (int a = 0; a < dim; ++a) q[a] = m[a] * step(a);
        return q;
    }

    bool operator==(const PositionGrid& o) const {
        return dim == o.dim && period == o.period && points == o.points && stride == o.stride;
    }
};

using GroupPoint = std::vector<int>;
using GridFunction = std::vector<cplx>;

// Integer position-grid shift of c * k (k a group point), or an input error if
// the translation does not land on the grid.
inline std::vector<long> grid_shift(const PositionGrid& grid, const GroupPoint& k, double c) {
    std::vector<long> s(grid.dim, 0);
    for (std::size_t a = 0; a < k.size(); ++a) {
        double v = c * k[a] * grid.stride;
        double r = std::round(v);
        if (std::abs(v - r) > 1e-9)
            throw InputError("translation by " + fmt_double(c) + " * group point leaves the position grid; "
                             "choose a stride compatible with kappa");
        s[a] = static_cast<long>(r);
    }
    return s;
}

// Physical vector in R^dim of a group point (trailing coordinates zero).
inline Vec embed(const PositionGrid& grid, const GroupPoint& k) {
    Vec x = Vec::Zero(grid.dim);
    for (std::size_t a = 0; a < k.size(); ++a) x[a] = k[a] * grid.group_step(static_cast<int>(a));
    return x;
}

// (alpha_s f)(q) = f(q + s h).
inline GridFunction translate(const PositionGrid& grid, const GridFunction& f, const std::vector<long>& shift) {
    bool trivial = std::all_of(shift.begin(), shift.end(), [](long v) { return v == 0; });
    if (trivial) return f;
    GridFunction out(f.size());
    std::vector<long> m(grid.dim);
    for (std::size_t idx = 0; idx < f.size(); ++idx) {
        auto base = grid.unravel(idx);
        for (int a = 0; a < grid.dim; ++a) m[a] = base[a] + shift[a];
        out[idx] = f[grid.ravel(m)];
    }
    return out;
}

// q -> omega(q + offset; x, y) on the grid.
inline GridFunction omega_on_grid(const PositionGrid& grid, const CocycleEvaluator& w, const Vec& x, const Vec& y,
                                  const Vec& offset) {
    if (w.is_constant()) return GridFunction(grid.size(), w(offset, x, y));
    GridFunction out(grid.size());
    for (std::size_t idx = 0; idx < out.size(); ++idx) out[idx] = w(grid.position(idx) + offset, x, y);
    return out;
}

// q -> Box(q + offset; x_perp, x_par) on the grid.
inline GridFunction box_on_grid(const PositionGrid& grid, const CocycleEvaluator& w, double x_perp, const Vec& x_par,
                                const Vec& offset) {
    if (w.is_constant()) return GridFunction(grid.size(), w.box(offset, x_perp, x_par));
    GridFunction out(grid.size());
    for (std::size_t idx = 0; idx < out.size(); ++idx) out[idx] = w.box(grid.position(idx) + offset, x_perp, x_par);
    return out;
}

// Finitely supported element of the discretized twisted crossed product.
// Values are stored as cell masses (cell weight times the density), which
// makes the delta at the identity an exact unit.
class AlgebraElement {
public:
    AlgebraElement() = default;
    AlgebraElement(PositionGrid grid, int group_dim) : grid_(std::move(grid)), group_dim_(group_dim) {
        grid_.validate();
        if (group_dim_ < 1 || group_dim_ > grid_.dim) throw InputError("AlgebraElement: invalid group dimension");
    }

    static AlgebraElement unit(const PositionGrid& grid, int group_dim) {
        AlgebraElement e(grid, group_dim);
        e.set_mass(GroupPoint(group_dim, 0), GridFunction(grid.size(), cplx(1.0, 0.0)));
        return e;
    }

    // Single-point element delta_x (x) f with f given as a density.
    static AlgebraElement point(const PositionGrid& grid, const GroupPoint& x, const GridFunction& density) {
        AlgebraElement e(grid, static_cast<int>(x.size()));
        e.set_density(x, density);
        return e;
    }

    const PositionGrid& grid() const { return grid_; }
    int group_dim() const { return group_dim_; }
    double cell_weight() const { return grid_.cell_weight(group_dim_); }
    const std::map<GroupPoint, GridFunction>& terms() const { return terms_; }
    bool empty() const { return terms_.empty(); }
    std::size_t support_size() const { return terms_.size(); }

    void set_mass(const GroupPoint& x, GridFunction m) {
        check_point(x);
        if (m.size() != grid_.size()) throw InputError("AlgebraElement: value has wrong grid size");
        terms_[x] = std::move(m);
    }
    void set_density(const GroupPoint& x, const GridFunction& f) {
        GridFunction m(f);
        double w = cell_weight();
        for (auto& v : m) v *= w;
        set_mass(x, std::move(m));
    }
    void add_mass(const GroupPoint& x, const GridFunction& m) {
        check_point(x);
        auto it = terms_.find(x);
        if (it == terms_.end()) {
            terms_.emplace(x, m);
            return;
        }
        for (std::size_t i = 0; i < m.size(); ++i) it->second[i] += m[i];
    }

    const GridFunction* mass(const GroupPoint& x) const {
        auto it = terms_.find(x);
        return it == terms_.end() ? nullptr : &it->second;
    }
    GridFunction density(const GroupPoint& x) const {
        GridFunction f(grid_.size(), cplx(0.0, 0.0));
        if (auto* m = mass(x)) {
            double w = cell_weight();
            for (std::size_t i = 0; i < f.size(); ++i) f[i] = (*m)[i] / w;
        }
        return f;
    }

    void check_compatible(const AlgebraElement& o, const char* op) const {
        if (!(grid_ == o.grid_) || group_dim_ != o.group_dim_)
            throw InputError(std::string(op) + ": elements live on different grids or groups");
    }

    AlgebraElement& operator+=(const AlgebraElement& o) {
        check_compatible(o, "add");
        for (const auto& [x, m] : o.terms_) add_mass(x, m);
        return *this;
    }
    friend AlgebraElement operator+(AlgebraElement a, const AlgebraElement& b) { return a += b; }
    friend AlgebraElement operator*(cplx c, AlgebraElement a) {
        for (auto& [x, m] : a.terms_)
            for (auto& v : m) v *= c;
        return a;
    }
    friend AlgebraElement operator-(AlgebraElement a, const AlgebraElement& b) { return a += cplx(-1.0, 0.0) * b; }

private:
    void check_point(const GroupPoint& x) const {
        if (static_cast<int>(x.size()) != group_dim_) throw InputError("AlgebraElement: group point has wrong dimension");
    }

    PositionGrid grid_;
    int group_dim_ = 0;
    std::map<GroupPoint, GridFunction> terms_;
};

// ||F||_1 = sum_x cellWeight * max_q |F(x)(q)|.
inline double l1_norm(const AlgebraElement& f) {
    std::vector<double> parts;
    for (const auto& [x, m] : f.terms()) {
        double mx = 0.0;
        for (const auto& v : m) mx = std::max(mx, std::abs(v));
        parts.push_back(mx);
    }
    return pairwise_sum(parts);
}

inline double l1_distance(const AlgebraElement& a, const AlgebraElement& b) { return l1_norm(a - b); }

// (F <> G)(x)(q) = sum_y F(y)(q + k(y-x)) G(x-y)(q + (1-k)y) w(y, x-y)(q - kx)
inline AlgebraElement twisted_product(const AlgebraElement& f, const AlgebraElement& g, double kappa,
                                      const CocycleEvaluator& w) {
    f.check_compatible(g, "twisted_product");
    if (kappa < 0.0 || kappa > 1.0) throw InputError("kappa must lie in [0, 1]");
    const PositionGrid& grid = f.grid();
    if (w.dimension() != grid.dim) throw InputError("twisted_product: cocycle dimension differs from grid dimension");
    AlgebraElement out(grid, f.group_dim());
    GridFunction term(grid.size());
    for (const auto& [y, fy] : f.terms()) {
        Vec yv = embed(grid, y);
        for (const auto& [z, gz] : g.terms()) {
            GroupPoint x(y.size());
            for (std::size_t i = 0; i < y.size(); ++i) x[i] = y[i] + z[i];
            GridFunction a = translate(grid, fy, grid_shift(grid, z, -kappa));
            GridFunction b = translate(grid, gz, grid_shift(grid, y, 1.0 - kappa));
            Vec zv = embed(grid, z);
            GridFunction om = omega_on_grid(grid, w, yv, zv, -kappa * embed(grid, x));
            for (std::size_t i = 0; i < term.size(); ++i) term[i] = a[i] * b[i] * om[i];
            out.add_mass(x, term);
        }
    }
    return out;
}

// F^(x)(q) = conj(F(-x)(q + (1 - 2k) x))
inline AlgebraElement involution(const AlgebraElement& f, double kappa) {
    if (kappa < 0.0 || kappa > 1.0) throw InputError("kappa must lie in [0, 1]");
    const PositionGrid& grid = f.grid();
    AlgebraElement out(grid, f.group_dim());
    for (const auto& [x, m] : f.terms()) {
        GroupPoint nx(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) nx[i] = -x[i];
        // value at -x uses F(x) translated by (1 - 2k)(-x)
        GridFunction v = translate(grid, m, grid_shift(grid, nx, 1.0 - 2.0 * kappa));
        for (auto& c : v) c = std::conj(c);
        out.set_mass(nx, std::move(v));
    }
    return out;
}

// Isomorphism between kappa conventions: F_to(x) = alpha_{-(to - from) x}[F_from(x)].
inline AlgebraElement change_kappa(const AlgebraElement& f, double from, double to) {
    const PositionGrid& grid = f.grid();
    AlgebraElement out(grid, f.group_dim());
    for (const auto& [x, m] : f.terms()) out.set_mass(x, translate(grid, m, grid_shift(grid, x, -(to - from))));
    return out;
}

// beta_s[F](x_par)(q) = Box(q - k(x_par, 0); s, x_par) F(x_par)(q + (0, s)),
// with s = perp_steps group steps along the last axis.
inline AlgebraElement beta_action(const AlgebraElement& f_par, double perp_steps, double kappa,
                                  const CocycleEvaluator& w) {
    const PositionGrid& grid = f_par.grid();
    int n = grid.dim;
    if (f_par.group_dim() != n - 1) throw InputError("beta_action: element must live on the parallel group");
    double v = perp_steps * grid.stride;
    if (std::abs(v - std::round(v)) > 1e-9) throw InputError("beta_action: perpendicular shift leaves the position grid");
    std::vector<long> shift(n, 0);
    shift[n - 1] = static_cast<long>(std::round(v));
    double s = perp_steps * grid.group_step(n - 1);
    AlgebraElement out(grid, n - 1);
    for (const auto& [x, m] : f_par.terms()) {
        Vec xv = embed(grid, x);
        Vec x_par = xv.head(n - 1);
        GridFunction moved = translate(grid, m, shift);
        if (s != 0.0) {
            GridFunction box = box_on_grid(grid, w, s, x_par, -kappa * xv);
            for (std::size_t i = 0; i < moved.size(); ++i) moved[i] *= box[i];
        }
        out.set_mass(x, std::move(moved));
    }
    return out;
}

// Element of the iterated crossed product: perpendicular index -> element of
// the parallel group algebra.
struct IteratedElement {
    PositionGrid grid;
    std::map<int, AlgebraElement> slices;

    void add(int perp, const AlgebraElement& e) {
        auto it = slices.find(perp);
        if (it == slices.end())
            slices.emplace(perp, e);
        else
            it->second += e;
    }
};

inline double l1_norm(const IteratedElement& f) {
    std::vector<double> parts;
    for (const auto& [k, e] : f.slices) parts.push_back(l1_norm(e));
    return pairwise_sum(parts);
}

inline double l1_distance(const IteratedElement& a, const IteratedElement& b) {
    IteratedElement d{a.grid, a.slices};
    for (const auto& [k, e] : b.slices) d.add(k, cplx(-1.0, 0.0) * e);
    return l1_norm(d);
}

namespace detail {
// conj(Box(q - kx; k x_perp, x_par)) conj(w(q - kx; (x_par, 0), (0, x_perp)))
inline GridFunction iterated_prefactor(const PositionGrid& grid, const GroupPoint& k, double kappa,
                                       const CocycleEvaluator& w) {
    int n = grid.dim;
    Vec x = embed(grid, k);
    Vec par = x;
    par[n - 1] = 0.0;
    Vec perp = Vec::Zero(n);
    perp[n - 1] = x[n - 1];
    Vec offset = -kappa * x;
    GridFunction box = box_on_grid(grid, w, kappa * x[n - 1], x.head(n - 1), offset);
    GridFunction om = omega_on_grid(grid, w, par, perp, offset);
    for (std::size_t i = 0; i < box.size(); ++i) box[i] = std::conj(box[i] * om[i]);
    return box;
}
}  // namespace detail

inline IteratedElement to_iterated(const AlgebraElement& f, double kappa, const CocycleEvaluator& w) {
    const PositionGrid& grid = f.grid();
    int n = grid.dim;
    if (n < 2 || f.group_dim() != n) throw InputError("to_iterated: element must live on the full group, dimension >= 2");
    IteratedElement out{grid, {}};
    for (const auto& [k, m] : f.terms()) {
        GridFunction pre = detail::iterated_prefactor(grid, k, kappa, w);
        GridFunction v(m.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = pre[i] * m[i];
        GroupPoint par(k.begin(), k.end() - 1);
        auto it = out.slices.find(k.back());
        if (it == out.slices.end()) it = out.slices.emplace(k.back(), AlgebraElement(grid, n - 1)).first;
        it->second.set_mass(par, std::move(v));
    }
    return out;
}

inline AlgebraElement from_iterated(const IteratedElement& f, double kappa, const CocycleEvaluator& w) {
    const PositionGrid& grid = f.grid;
    int n = grid.dim;
    AlgebraElement out(grid, n);
    for (const auto& [perp, slice] : f.slices) {
        for (const auto& [par, m] : slice.terms()) {
            GroupPoint k(par);
            k.push_back(perp);
            GridFunction pre = detail::iterated_prefactor(grid, k, kappa, w);
            GridFunction v(m.size());
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::conj(pre[i]) * m[i];
            out.set_mass(k, std::move(v));
        }
    }
    return out;
}

// (F' <>_b G')(x_perp) = sum_y beta_{k(y-x)}[F'(y)] <> beta_{(1-k)y}[G'(x-y)]
inline IteratedElement iterated_product(const IteratedElement& f, const IteratedElement& g, double kappa,
                                        const CocycleEvaluator& w) {
    if (!(f.grid == g.grid)) throw InputError("iterated_product: grid mismatch");
    IteratedElement out{f.grid, {}};
    for (const auto& [y, fy] : f.slices) {
        for (const auto& [z, gz] : g.slices) {
            AlgebraElement a = beta_action(fy, -kappa * z, kappa, w);
            AlgebraElement b = beta_action(gz, (1.0 - kappa) * y, kappa, w);
            out.add(y + z, twisted_product(a, b, kappa, w));
        }
    }
    return out;
}

// (F')^(x_perp) = beta_{(1-2k) x_perp}[(F'(-x_perp))^]
inline IteratedElement iterated_involution(const IteratedElement& f, double kappa, const CocycleEvaluator& w) {
    IteratedElement out{f.grid, {}};
    for (const auto& [k, e] : f.slices)
        out.slices.emplace(-k, beta_action(involution(e, kappa), (1.0 - 2.0 * kappa) * (-k), kappa, w));
    return out;
}

// Constant planar field whose flux through one position plaquette is 2 pi p / q.
inline MagneticField field_for_flux(const PositionGrid& grid, long p, long q) {
    if (grid.dim != 2) throw InputError("field_for_flux: planar grids only");
    if (q <= 0) throw InputError("field_for_flux: denominator must be positive");
    return MagneticField::planar(2.0 * pi * static_cast<double>(p) / (static_cast<double>(q) * grid.step(0) * grid.step(1)));
}

// Faithful representation on l2 of the N x N torus by magnetic translations in
// Landau gauge A = (-b q2, 0):
//   pi_k(F) = sum_x U(k x) M(F(x)) U((1 - k) x),  (U(y) psi)(q) = phi_y(q) psi(q + y).
inline Eigen::MatrixXcd represent(const AlgebraElement& f, double kappa, long p, long q) {
    const PositionGrid& grid = f.grid();
    if (grid.dim != 2 || f.group_dim() != 2) throw InputError("represent: planar elements only");
    if (q <= 0 || std::gcd(p, q) != 1) throw InputError("represent: flux must be a reduced fraction p/q");
    const long n = grid.points;
    if (n % q != 0) throw InputError("represent: flux denominator must divide the torus side");
    const std::size_t dimh = grid.size();
    Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(dimh, dimh);
    const long two_q = 2 * q;
    // phi_y(q) for a shift (s1, s2) at row index j of axis 1: exp(i pi p s1 (2 j + s2) / q)
    auto phase = [&](long s1, long s2, long j) {
        long e = ((p % two_q) * (s1 % two_q)) % two_q;
        e = (e * ((2 * j + s2) % two_q)) % two_q;
        if (e < 0) e += two_q;
        return std::polar(1.0, pi * static_cast<double>(e) / static_cast<double>(q));
    };
    auto wrap = [n](long v) { return ((v % n) + n) % n; };
    for (const auto& [x, m] : f.terms()) {
        auto a = grid_shift(grid, x, kappa);
        auto c = grid_shift(grid, x, 1.0 - kappa);
        for (long i0 = 0; i0 < n; ++i0) {
            for (long i1 = 0; i1 < n; ++i1) {
                long r0 = wrap(i0 + a[0]), r1 = wrap(i1 + a[1]);
                long c0 = wrap(r0 + c[0]), c1 = wrap(r1 + c[1]);
                cplx v = phase(a[0], a[1], i1) * m[r0 * n + r1] * phase(c[0], c[1], r1);
                out(i0 * n + i1, c0 * n + c1) += v;
            }
        }
    }
    return out;
}

// Random element with `support` distinct points in the box |x_a| <= radius.
template <class Rng>
AlgebraElement random_element(const PositionGrid& grid, int group_dim, int support, int radius, Rng& rng) {
    AlgebraElement e(grid, group_dim);
    std::uniform_int_distribution<int> coord(-radius, radius);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    int guard = 0;
    while (static_cast<int>(e.support_size()) < support && guard++ < 1000) {
        GroupPoint x(group_dim);
        for (auto& c : x) c = coord(rng);
        if (e.mass(x)) continue;
        GridFunction m(grid.size());
        for (auto& v : m) {
            double re = unif(rng);
            double im = unif(rng);
            v = cplx(re, im);
        }
        e.set_mass(x, std::move(m));
    }
    return e;
}

}  // namespace tbm
