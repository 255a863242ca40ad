#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tbm/core.hpp"
#include "tbm/pairings.hpp"

// Units: 2m = hbar = 1, so H0 = -Laplacian and the energy is lambda = k^2.

namespace tbm {

// Rotation-invariant short-range potential, possibly acting differently in
// each partial wave. V(l, r) is zero for r > r_max.
class RadialPotential {
public:
    using Channel = std::function<double(int, double)>;

    RadialPotential() = default;
    RadialPotential(std::string kind, Channel v, double r_max, bool local, double decay_c = 1.0, double decay_beta = 2.0)
        : kind_(std::move(kind)), v_(std::move(v)), r_max_(r_max), local_(local), c_(decay_c), beta_(decay_beta) {
        if (!(r_max_ > 0.0) || !std::isfinite(r_max_)) throw InputError("potential cutoff radius must be positive");
        if (!(beta_ > 1.0)) throw InputError("potential must decay faster than r^-1 (beta > 1)");
    }

    static RadialPotential zero() {
        RadialPotential p("zero", [](int, double) { return 0.0; }, 1.0, true, 0.0, 2.0);
        p.volume_integral_ = 0.0;
        return p;
    }

    // -v0 for r < a
    static RadialPotential square_well(double v0, double a) {
        if (!(a > 0.0)) throw InputError("square well radius must be positive");
        RadialPotential p("square-well", [v0, a](int, double r) { return r < a ? -v0 : 0.0; }, a, true, std::abs(v0), 2.0);
        p.breakpoints_ = {a};
        p.volume_integral_ = -v0 * a * a * a / 3.0;
        return p;
    }

    // -v0 for r < a, +vb for a < r < b
    static RadialPotential well_barrier(double v0, double a, double vb, double b) {
        if (!(a > 0.0) || !(b > a)) throw InputError("well-barrier radii must satisfy 0 < a < b");
        RadialPotential p("well-barrier", [=](int, double r) { return r < a ? -v0 : (r < b ? vb : 0.0); }, b, true,
                          std::max(std::abs(v0), std::abs(vb)), 2.0);
        p.breakpoints_ = {a, b};
        p.volume_integral_ = -v0 * a * a * a / 3.0 + vb * (b * b * b - a * a * a) / 3.0;
        return p;
    }

    // -g exp(-r / range), cut where it drops below cutoff * g
    static RadialPotential exponential(double g, double range = 1.0, double cutoff = 1e-12) {
        if (!(range > 0.0)) throw InputError("exponential range must be positive");
        double r_max = range * std::log(1.0 / cutoff);
        RadialPotential p("exponential", [g, range](int, double r) { return -g * std::exp(-r / range); }, r_max, true,
                          std::abs(g), 3.0);
        p.volume_integral_ = -2.0 * g * range * range * range;
        return p;
    }

    // -g exp(-mu r) / (r + rc)
    static RadialPotential yukawa_regularized(double g, double mu, double rc, double cutoff = 1e-12) {
        if (!(mu > 0.0) || !(rc > 0.0)) throw InputError("yukawa parameters mu and rc must be positive");
        double r_max = std::log(1.0 / cutoff) / mu;
        return RadialPotential("yukawa-regularized", [=](int, double r) { return -g * std::exp(-mu * r) / (r + rc); }, r_max,
                               true, std::abs(g) / rc, 3.0);
    }

    // Piecewise-linear table, zero beyond the last radius.
    static RadialPotential table(std::vector<double> rs, std::vector<double> vs) {
        if (rs.size() != vs.size() || rs.size() < 2) throw InputError("potential table needs at least two (r, V) rows");
        for (std::size_t i = 1; i < rs.size(); ++i)
            if (!(rs[i] > rs[i - 1])) throw InputError("potential table radii must increase");
        if (rs.front() < 0.0) throw InputError("potential table radii must be nonnegative");
        for (double v : vs)
            if (!std::isfinite(v)) throw InputError("potential table values must be finite");
        double r_end = rs.back();
        auto f = [rs = std::move(rs), vs = std::move(vs)](int, double r) {
            if (r >= rs.back()) return 0.0;
            if (r <= rs.front()) return vs.front();
            auto it = std::upper_bound(rs.begin(), rs.end(), r);
            std::size_t i = static_cast<std::size_t>(it - rs.begin());
            double t = (r - rs[i - 1]) / (rs[i] - rs[i - 1]);
            return (1.0 - t) * vs[i - 1] + t * vs[i];
        };
        return RadialPotential("table", f, r_end, true, 1.0, 2.0);
    }

    // Partial-wave dependent square wells: channel l sees -v0_l for r < a_l.
    static RadialPotential channel_square_wells(std::map<int, std::pair<double, double>> wells) {
        double r_max = 1e-3;
        std::vector<double> bps;
        for (const auto& [l, w] : wells) {
            if (l < 0 || !(w.second > 0.0)) throw InputError("channel wells need l >= 0 and positive radii");
            r_max = std::max(r_max, w.second);
            bps.push_back(w.second);
        }
        std::sort(bps.begin(), bps.end());
        bps.erase(std::unique(bps.begin(), bps.end()), bps.end());
        RadialPotential p("channel-square-wells",
                          [wells](int l, double r) {
                              auto it = wells.find(l);
                              if (it == wells.end()) return 0.0;
                              return r < it->second.second ? -it->second.first : 0.0;
                          },
                          r_max, false, 1.0, 2.0);
        p.breakpoints_ = bps;
        int top = wells.empty() ? 0 : wells.rbegin()->first;
        p.max_channel_ = top;
        return p;
    }

    // (1 - s) a + s b
    static RadialPotential interpolate(const RadialPotential& a, const RadialPotential& b, double s) {
        RadialPotential p("interpolated",
                          [va = a.v_, vb = b.v_, s](int l, double r) { return (1.0 - s) * va(l, r) + s * vb(l, r); },
                          std::max(a.r_max_, b.r_max_), a.local_ && b.local_, std::max(a.c_, b.c_), std::min(a.beta_, b.beta_));
        for (double x : a.breakpoints_) p.breakpoints_.push_back(x);
        for (double x : b.breakpoints_) p.breakpoints_.push_back(x);
        std::sort(p.breakpoints_.begin(), p.breakpoints_.end());
        p.breakpoints_.erase(std::unique(p.breakpoints_.begin(), p.breakpoints_.end()), p.breakpoints_.end());
        if (a.volume_integral_ && b.volume_integral_) p.volume_integral_ = (1.0 - s) * *a.volume_integral_ + s * *b.volume_integral_;
        p.max_channel_ = std::max(a.max_channel_, b.max_channel_);
        return p;
    }

    RadialPotential scaled(double s) const {
        RadialPotential p = *this;
        p.kind_ = kind_ + "-scaled";
        p.v_ = [v = v_, s](int l, double r) { return s * v(l, r); };
        if (volume_integral_) p.volume_integral_ = s * *volume_integral_;
        p.c_ = std::abs(s) * c_;
        return p;
    }

    double operator()(int l, double r) const { return r > r_max_ ? 0.0 : v_(l, r); }
    const std::string& kind() const { return kind_; }
    double r_max() const { return r_max_; }
    bool is_local() const { return local_; }
    const std::vector<double>& breakpoints() const { return breakpoints_; }
    double decay_c() const { return c_; }
    double decay_beta() const { return beta_; }
    // Highest partial wave with a nonzero channel potential (-1: all channels).
    int max_channel() const { return max_channel_; }

    // nu = int_0^inf V(r) r^2 dr = (4 pi)^-1 int V d^3x
    double nu() const {
        if (!local_) throw InputError("the volume integral of V needs a local potential");
        if (volume_integral_) return *volume_integral_;
        std::vector<double> knots{0.0};
        for (double b : breakpoints_) knots.push_back(b);
        knots.push_back(r_max_);
        std::vector<double> parts;
        for (std::size_t s = 0; s + 1 < knots.size(); ++s) {
            double a = knots[s], b = knots[s + 1];
            if (!(b > a)) continue;
            int n = 4000;
            std::vector<double> x(n + 1), f(n + 1);
            for (int i = 0; i <= n; ++i) {
                x[i] = a + (b - a) * i / n;
                double r = std::clamp(x[i], a + 1e-12 * (b - a), b - 1e-12 * (b - a));
                f[i] = v_(0, r) * x[i] * x[i];
            }
            parts.push_back(integrate(x, f));
        }
        return pairwise_sum(parts);
    }

private:
    std::string kind_ = "zero";
    Channel v_ = [](int, double) { return 0.0; };
    double r_max_ = 1.0;
    bool local_ = true;
    double c_ = 0.0;
    double beta_ = 2.0;
    std::vector<double> breakpoints_;
    std::optional<double> volume_integral_;
    int max_channel_ = -1;
};

struct ScatteringOptions {
    double lambda_min = 1e-6;
    double lambda_max = 400.0;
    int energies = 600;
    double radial_step = 1e-3;
    int lmax = -1;            // < 0: automatic from the Born estimate
    int lmax_cap = 80;
    double born_tolerance = 1e-6;
    double max_phase_step = 0.2;
    double max_curvature = 1e-3;  // (2l+1)-weighted deviation from linear interpolation in ln lambda
    int refine_rounds = 14;
};

// Potential sampled on the uniform radial grid r_n = n h; nodes on a
// breakpoint take the average of the one-sided limits.
class RadialGrid {
public:
    RadialGrid(const RadialPotential& v, double step, double extra) : pot_(v) {
        if (!(step > 0.0)) throw InputError("radial step must be positive");
        h_ = step;
        if (!v.breakpoints().empty()) {
            double b0 = v.breakpoints().front();
            h_ = b0 / std::ceil(b0 / step);
        }
        n_match_ = static_cast<int>(std::ceil(v.r_max() / h_ - 1e-9));
        n_end_ = n_match_ + static_cast<int>(std::ceil(extra / h_)) + 2;
    }

    double step() const { return h_; }
    int match_index() const { return n_match_; }
    int end_index() const { return n_end_; }

    const std::vector<double>& values(int l) const {
        int key = pot_.is_local() ? 0 : l;
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        std::vector<double> v(n_end_ + 1, 0.0);
        for (int n = 1; n <= n_end_; ++n) {
            double r = n * h_;
            bool on_break = false;
            for (double b : pot_.breakpoints())
                if (std::abs(r - b) < 1e-9 * h_) on_break = true;
            if (on_break)
                v[n] = 0.5 * (pot_(l, r * (1.0 - 1e-12)) + pot_(l, r * (1.0 + 1e-12)));
            else
                v[n] = pot_(l, r);
        }
        v[0] = v[1];
        zero_[key] = std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
        return cache_.emplace(key, std::move(v)).first->second;
    }

    bool vanishes(int l) const {
        values(l);
        return zero_.at(pot_.is_local() ? 0 : l);
    }

    // Fills the cache up front so concurrent readers never insert.
    void prepare(int lmax) const {
        for (int l = 0; l <= (pot_.is_local() ? 0 : lmax); ++l) values(l);
    }

private:
    RadialPotential pot_;
    double h_ = 1e-3;
    int n_match_ = 0;
    int n_end_ = 0;
    mutable std::map<int, std::vector<double>> cache_;
    mutable std::map<int, bool> zero_;
};

namespace detail {

struct NumerovEnd {
    double u1 = 0.0;
    double u2 = 0.0;
    int nodes = 0;  // sign changes up to n1
};

// Numerov for u'' = (l(l+1)/r^2 + V - e) u. For l = 0 the scheme starts at
// u(0) = 0; otherwise at a point clear of the centrifugal singularity, seeded
// with the small-r series r^{l+1} (1 + c r^2). Rescales against overflow.
inline NumerovEnd numerov(const std::vector<double>& v, double h, int l, double e, int n1, int n2) {
    const double ll = static_cast<double>(l) * (l + 1);
    int n0 = l == 0 ? 0 : std::max(1, static_cast<int>(std::ceil(std::sqrt(ll / 1.2))));
    n0 = std::max(0, std::min(n0, n1 - 2));
    const double h12 = h * h / 12.0;
    auto g = [&](int n) {
        if (n == 0) return v[0] - e;
        double r = n * h;
        return ll / (r * r) + v[n] - e;
    };
    auto series = [&](int n) {
        double r = n * h;
        double c = (v[n] - e) / (2.0 * (2.0 * l + 3.0));
        double x = r / ((n0 + 1) * h);
        return std::pow(x, l + 1) * (1.0 + c * r * r);
    };
    double u_prev = n0 == 0 ? 0.0 : series(n0);
    double u_cur = n0 == 0 ? 1.0 : series(n0 + 1);
    double g_prev = g(n0), g_cur = g(n0 + 1);
    NumerovEnd out;
    double last_sign = 1.0;
    for (int n = n0 + 1; n < n2; ++n) {
        double g_next = g(n + 1);
        double u_next = (2.0 * (1.0 + 5.0 * h12 * g_cur) * u_cur - (1.0 - h12 * g_prev) * u_prev) / (1.0 - h12 * g_next);
        u_prev = u_cur;
        u_cur = u_next;
        g_prev = g_cur;
        g_cur = g_next;
        if (std::abs(u_cur) > 1e100) {
            u_cur *= 1e-100;
            u_prev *= 1e-100;
            if (n + 1 > n1) out.u1 *= 1e-100;
        }
        int idx = n + 1;
        if (idx <= n1 && u_cur != 0.0) {
            double sgn = u_cur > 0.0 ? 1.0 : -1.0;
            if (sgn != last_sign) ++out.nodes;
            last_sign = sgn;
        }
        if (idx == n1) out.u1 = u_cur;
    }
    out.u2 = u_cur;
    if (n1 == n2) out.u1 = u_cur;
    return out;
}

inline double riccati_j(int l, double x) { return x * std::sph_bessel(static_cast<unsigned>(l), x); }
inline double riccati_n(int l, double x) { return x * std::sph_neumann(static_cast<unsigned>(l), x); }

// Reduces an angle to (-pi/2, pi/2].
inline double mod_pi(double d) {
    d = std::fmod(d, pi);
    if (d > 0.5 * pi) d -= pi;
    if (d <= -0.5 * pi) d += pi;
    return d;
}

inline int match_offset(double k, double h) {
    double sep = std::min(0.5 * pi / k, 2.0);
    return std::max(10, static_cast<int>(std::lround(sep / h)));
}

}  // namespace detail

// Phase shift mod pi in (-pi/2, pi/2] on a prepared radial grid.
inline double phase_shift_on(const RadialGrid& grid, int l, double k) {
    if (!(k > 0.0)) throw InputError("phase_shift: k must be positive");
    if (l < 0) throw InputError("phase_shift: l must be nonnegative");
    if (grid.vanishes(l)) return 0.0;  // free wave, no discretization to correct
    const double h = grid.step();
    const int n1 = grid.match_index();
    const int n2 = std::min(n1 + detail::match_offset(k, h), grid.end_index());
    auto end = detail::numerov(grid.values(l), h, l, k * k, n1, n2);
    double x1 = k * n1 * h, x2 = k * n2 * h;
    double j1 = detail::riccati_j(l, x1), j2 = detail::riccati_j(l, x2);
    double y1 = detail::riccati_n(l, x1), y2 = detail::riccati_n(l, x2);
    // deep below the centrifugal barrier j underflows or y overflows; delta ~ 0
    double sj = std::max(std::abs(j1), std::abs(j2)), sy = std::max(std::abs(y1), std::abs(y2));
    if (sj == 0.0 || !std::isfinite(sy)) return 0.0;
    double su = std::max(std::abs(end.u1), std::abs(end.u2));
    if (!(su > 0.0) || !std::isfinite(su)) throw NumericalError("phase_shift: degenerate interior solution");
    double u1 = end.u1 / su, u2 = end.u2 / su;
    double num = u2 * j1 / sj - u1 * j2 / sj;
    double den = u2 * y1 / sy - u1 * y2 / sy;
    if (std::abs(num) + std::abs(den) < 1e-14 || !std::isfinite(num) || !std::isfinite(den))
        throw NumericalError("phase_shift: singular matching determinant");
    num *= sj / sy;
    return detail::mod_pi(std::atan2(num, den));
}

inline double phase_shift(const RadialPotential& v, int l, double k, double step = 1e-3) {
    for (double h : {step, 0.5 * step}) {
        RadialGrid grid(v, h, 2.1);
        try {
            return phase_shift_on(grid, l, k);
        } catch (const NumericalError&) {
        }
    }
    throw NumericalError("phase_shift: matching stayed singular after step refinement");
}

// First Born approximation -k int V_l(r) r^2 j_l(kr)^2 dr.
inline double born_phase(const RadialGrid& grid, int l, double k) {
    const auto& v = grid.values(l);
    const double h = grid.step();
    const int n = grid.match_index();
    int stride = std::max(1, n / 2000);
    std::vector<double> x, f;
    for (int i = 0; i <= n; i += stride) {
        double r = i * h;
        double j = r == 0.0 ? (l == 0 ? 1.0 : 0.0) : std::sph_bessel(static_cast<unsigned>(l), k * r);
        x.push_back(r);
        f.push_back(v[i] * r * r * j * j);
    }
    if (x.back() < n * h) {
        double r = n * h;
        double j = std::sph_bessel(static_cast<unsigned>(l), k * r);
        x.push_back(r);
        f.push_back(v[n] * r * r * j * j);
    }
    return -k * integrate(x, f);
}

struct PhaseShiftTable {
    std::vector<double> lambda;
    std::vector<std::vector<double>> delta;  // [l][i], continuous branch with delta(inf) = 0
    std::vector<double> born_at_max;         // Born estimate at lambda_max per channel
    int lmax = 0;
    bool truncated = false;                  // Born criterion not met at lmax_cap
    bool local = true;
    std::optional<double> nu;
    double radial_step = 0.0;
    int refinements = 0;

    int channels() const { return lmax + 1; }
    double weight(int l) const { return 2.0 * l + 1.0; }
};

namespace detail {
inline std::vector<double> geometric_grid(double lo, double hi, int n) {
    if (!(lo > 0.0) || !(hi > lo) || n < 5) throw InputError("energy grid needs 0 < lambda_min < lambda_max and >= 5 points");
    std::vector<double> g(n);
    double ratio = std::log(hi / lo) / (n - 1);
    for (int i = 0; i < n; ++i) g[i] = lo * std::exp(ratio * i);
    g.back() = hi;
    return g;
}

// Lifts mod-pi samples to a continuous branch anchored at the top energy.
inline std::vector<double> lift(const std::vector<double>& modded, double anchor) {
    std::vector<double> out(modded.size());
    std::size_t n = modded.size();
    out[n - 1] = modded[n - 1] + pi * std::round((anchor - modded[n - 1]) / pi);
    for (std::size_t i = n - 1; i-- > 0;) out[i] = modded[i] + pi * std::round((out[i + 1] - modded[i]) / pi);
    return out;
}
}  // namespace detail

inline int automatic_lmax(const RadialGrid& grid, const ScatteringOptions& o, bool& truncated) {
    std::vector<double> probes = detail::geometric_grid(std::max(o.lambda_min, 1e-2 * o.lambda_max), o.lambda_max, 8);
    truncated = false;
    for (int l = 0; l <= o.lmax_cap; ++l) {
        double worst = 0.0;
        for (double lam : probes) worst = std::max(worst, std::abs(born_phase(grid, l, std::sqrt(lam))));
        if (worst < o.born_tolerance) return std::max(l, 0);
    }
    truncated = true;
    return o.lmax_cap;
}

inline PhaseShiftTable build_phase_table(const RadialPotential& v, const ScatteringOptions& o = {}) {
    RadialGrid grid(v, o.radial_step, 2.1);
    PhaseShiftTable t;
    t.local = v.is_local();
    if (t.local) t.nu = v.nu();
    t.radial_step = grid.step();
    grid.prepare(std::max(o.lmax_cap, o.lmax));
    if (o.lmax >= 0) {
        t.lmax = o.lmax;
    } else {
        t.lmax = automatic_lmax(grid, o, t.truncated);
        if (v.max_channel() >= 0) t.lmax = std::max(t.lmax, std::min(v.max_channel() + 1, o.lmax_cap));
    }
    const int nl = t.lmax + 1;
    t.lambda = detail::geometric_grid(o.lambda_min, o.lambda_max, o.energies);
    std::vector<std::vector<double>> modded(nl);
    auto compute = [&](const std::vector<double>& lams, std::vector<std::vector<double>>& out) {
        out.assign(nl, std::vector<double>(lams.size()));
        parallel_for(static_cast<std::size_t>(nl) * lams.size(), [&](std::size_t idx) {
            int l = static_cast<int>(idx / lams.size());
            std::size_t i = idx % lams.size();
            out[l][i] = phase_shift_on(grid, l, std::sqrt(lams[i]));
        });
    };
    compute(t.lambda, modded);
    t.born_at_max.resize(nl);
    for (int l = 0; l < nl; ++l) t.born_at_max[l] = born_phase(grid, l, std::sqrt(o.lambda_max));

    // refine where a channel moves by more than max_phase_step between samples,
    // or where the weighted phase bends too sharply (small fast oscillations
    // that the step test misses)
    for (int round = 0; round <= o.refine_rounds; ++round) {
        t.delta.assign(nl, {});
        for (int l = 0; l < nl; ++l) t.delta[l] = detail::lift(modded[l], t.born_at_max[l]);
        const std::size_t m = t.lambda.size();
        std::vector<char> mark(m, 0);
        bool steep = false;
        double worst = 0.0;
        for (std::size_t i = 0; i + 1 < m; ++i)
            for (int l = 0; l < nl; ++l) {
                double step = std::abs(t.delta[l][i + 1] - t.delta[l][i]);
                worst = std::max(worst, step);
                if (step > o.max_phase_step) {
                    mark[i] = 1;
                    steep = true;
                }
            }
        for (std::size_t i = 1; i + 1 < m; ++i) {
            double a = std::log(t.lambda[i - 1]), b = std::log(t.lambda[i]), c = std::log(t.lambda[i + 1]);
            double wa = (c - b) / (c - a);
            for (int l = 0; l < nl; ++l) {
                double lin = wa * t.delta[l][i - 1] + (1.0 - wa) * t.delta[l][i + 1];
                if (t.weight(l) * std::abs(t.delta[l][i] - lin) > o.max_curvature) {
                    mark[i - 1] = mark[i] = 1;
                    break;
                }
            }
        }
        std::vector<std::size_t> coarse;
        for (std::size_t i = 0; i + 1 < m; ++i)
            if (mark[i]) coarse.push_back(i);
        if (coarse.empty()) break;
        if (round == o.refine_rounds) {
            if (steep && worst > 0.45 * pi)
                throw ResolutionError("phase-shift table: branch continuity not resolved; refine the energy grid");
            break;
        }
        std::vector<double> fresh;
        for (std::size_t i : coarse) fresh.push_back(std::sqrt(t.lambda[i] * t.lambda[i + 1]));
        std::vector<std::vector<double>> add;
        compute(fresh, add);
        std::vector<double> lam;
        std::vector<std::vector<double>> merged(nl);
        std::size_t c = 0;
        for (std::size_t i = 0; i < t.lambda.size(); ++i) {
            lam.push_back(t.lambda[i]);
            for (int l = 0; l < nl; ++l) merged[l].push_back(modded[l][i]);
            if (c < coarse.size() && coarse[c] == i) {
                lam.push_back(fresh[c]);
                for (int l = 0; l < nl; ++l) merged[l].push_back(add[l][c]);
                ++c;
            }
        }
        t.lambda = std::move(lam);
        modded = std::move(merged);
        ++t.refinements;
    }
    return t;
}

// Diagonal S(lambda) = diag(e^{2 i delta_l}); multiplicities 2l+1 enter
// through the trace weight.
inline MatrixFamily s_matrix(const PhaseShiftTable& t) {
    const int nl = t.channels();
    std::vector<CMat> blocks(t.lambda.size(), CMat::Zero(nl, nl));
    for (std::size_t i = 0; i < t.lambda.size(); ++i)
        for (int l = 0; l < nl; ++l) blocks[i](l, l) = std::polar(1.0, 2.0 * t.delta[l][i]);
    return MatrixFamily::path(t.lambda, std::move(blocks));
}

inline CMat multiplicity_weight(const PhaseShiftTable& t) {
    CMat w = CMat::Zero(t.channels(), t.channels());
    for (int l = 0; l < t.channels(); ++l) w(l, l) = t.weight(l);
    return w;
}

struct LevinsonIntegral {
    double value = 0.0;          // quadrature part plus analytic high-energy tail
    double quadrature = 0.0;
    double imag_residual = 0.0;
    double high_tail = 0.0;
    double low_tail_bound = 0.0;
    std::vector<double> per_channel;  // (2l+1) (2 delta(lmin) - sin 2 delta(lmin))
    Provenance provenance;
};

// int_0^inf tr[i (S - 1)^* S'] d lambda. The integrand of one channel is the
// derivative of -2 delta + sin 2 delta, so the part above lambda_max is added
// in closed form from delta(lambda_max) and delta(inf) = 0; likewise for the
// imaginary part, which is reported as a residual.
inline LevinsonIntegral levinson_lhs(const PhaseShiftTable& t) {
    MatrixFamily s = s_matrix(t);
    auto trace = TraceDescriptor::energy_integral({}, multiplicity_weight(t));
    std::vector<DerivationDescriptor> deltas{DerivationDescriptor::energy_derivative()};
    cplx pair = pair_odd(trace, deltas, s);
    cplx lhs = cplx(0.0, 1.0) * pair;
    LevinsonIntegral r;
    r.quadrature = lhs.real();
    std::vector<double> high, high_imag, low, per;
    for (int l = 0; l < t.channels(); ++l) {
        double top = t.delta[l].back();
        double bottom = t.delta[l].front();
        high.push_back(t.weight(l) * (2.0 * top - std::sin(2.0 * top)));
        high_imag.push_back(t.weight(l) * (std::cos(2.0 * top) - 1.0));
        double eps = bottom - pi * std::round(bottom / pi);
        low.push_back(t.weight(l) * (4.0 / 3.0) * std::abs(eps * eps * eps));
        per.push_back(t.weight(l) * (2.0 * bottom - std::sin(2.0 * bottom)));
    }
    r.high_tail = pairwise_sum(high);
    r.low_tail_bound = pairwise_sum(low);
    r.per_channel = per;
    r.value = r.quadrature + r.high_tail;
    // the imaginary part integrates to -cos 2 delta, which vanishes between S = 1 ends
    r.imag_residual = std::abs(lhs.imag() + pairwise_sum(high_imag)) / std::max(1.0, std::abs(r.value));
    if (r.low_tail_bound > 0.01 * std::max(std::abs(r.value), 2.0 * pi))
        throw ResolutionError("levinson_lhs: low-energy tail bound exceeds 1% of the integral; lower lambda_min");
    r.provenance = provenance(trace, deltas, "i * pair_odd + closed-form tail above lambda_max");
    return r;
}

struct BoundStateCensus {
    std::vector<int> counts;        // finite-difference inertia count per l
    std::vector<int> node_counts;   // zero-energy node count per l
    std::vector<std::vector<double>> energies;
    double box_radius = 0.0;
    double fd_step = 0.0;

    int trace() const {
        int s = 0;
        for (std::size_t l = 0; l < counts.size(); ++l) s += static_cast<int>(2 * l + 1) * counts[l];
        return s;
    }
};

struct CensusOptions {
    double box_radius = 0.0;  // 0: max(40, 8 r_max)
    double fd_step = 2e-3;
    double threshold = 1e-8;
    double radial_step = 1e-3;
};

namespace detail {
// Number of eigenvalues below e of the tridiagonal matrix (diag d, offdiag o).
inline int sturm_count(const std::vector<double>& d, double o, double e) {
    int count = 0;
    double q = d[0] - e;
    if (q < 0) ++count;
    for (std::size_t i = 1; i < d.size(); ++i) {
        if (q == 0.0) q = 1e-300;
        q = d[i] - e - o * o / q;
        if (q < 0) ++count;
    }
    return count;
}

// Zero-energy node count including the exterior continuation
// u = A r^{l+1} + B r^{-l}; flags a near-threshold exterior solution.
inline int zero_energy_nodes(const RadialGrid& grid, int l, bool& ambiguous) {
    const double h = grid.step();
    const int n1 = grid.match_index();
    const int n2 = std::min(n1 + std::max(10, static_cast<int>(std::lround(0.5 / h))), grid.end_index());
    auto end = detail::numerov(grid.values(l), h, l, 0.0, n1, n2);
    double r1 = n1 * h, r2 = n2 * h;
    // scaled basis x = r / r1: a x^{l+1} + b x^{-l}
    double x2 = r2 / r1;
    double p1 = 1.0, m1 = 1.0;
    double p2 = std::pow(x2, l + 1), m2 = std::pow(x2, -l);
    double det = p1 * m2 - p2 * m1;
    double a = (end.u1 * m2 - end.u2 * m1) / det;
    double b = (p1 * end.u2 - p2 * end.u1) / det;
    int nodes = end.nodes;
    double mag = std::abs(end.u1) + std::abs(end.u2);
    ambiguous = std::abs(a) < 1e-6 * mag;
    if (a != 0.0) {
        double ratio = -b / a;  // x*^{2l+1}
        if (ratio > 1.0) ++nodes;
    }
    return nodes;
}
}  // namespace detail

// Bound states per partial wave by two routes: inertia of the finite-difference
// radial Hamiltonian on [0, R_box], and zero-energy node counting.
inline BoundStateCensus bound_states(const RadialPotential& v, int lmax, const CensusOptions& o = {}) {
    if (lmax < 0) throw InputError("bound_states: lmax must be nonnegative");
    BoundStateCensus c;
    c.box_radius = o.box_radius > 0.0 ? o.box_radius : std::max(40.0, 8.0 * v.r_max());
    c.fd_step = o.fd_step;
    const int n = static_cast<int>(std::lround(c.box_radius / o.fd_step));
    const double h = c.box_radius / n;
    RadialGrid grid(v, o.radial_step, 2.1);
    grid.prepare(lmax);
    c.counts.resize(lmax + 1);
    c.node_counts.resize(lmax + 1);
    c.energies.resize(lmax + 1);
    std::vector<std::string> ambiguous(lmax + 1);
    parallel_for(static_cast<std::size_t>(lmax + 1), [&](std::size_t li) {
        int l = static_cast<int>(li);
        std::vector<double> d(n - 1);
        double vmin = 0.0;
        for (int i = 1; i < n; ++i) {
            double r = i * h;
            double vr = v(l, r);
            vmin = std::min(vmin, vr);
            d[i - 1] = 2.0 / (h * h) + l * (l + 1.0) / (r * r) + vr;
        }
        double off = -1.0 / (h * h);
        int below = detail::sturm_count(d, off, -o.threshold);
        int above = detail::sturm_count(d, off, o.threshold);
        if (below != above) ambiguous[li] = "l=" + std::to_string(l) + " has an eigenvalue within threshold of 0";
        c.counts[li] = below;
        for (int j = 0; j < below; ++j) {
            double lo = vmin - 1.0, hi = 0.0;
            for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(lo)); ++it) {
                double mid = 0.5 * (lo + hi);
                if (detail::sturm_count(d, off, mid) > j)
                    hi = mid;
                else
                    lo = mid;
            }
            c.energies[li].push_back(0.5 * (lo + hi));
        }
        bool amb = false;
        c.node_counts[li] = detail::zero_energy_nodes(grid, l, amb);
        if (amb && ambiguous[li].empty()) ambiguous[li] = "l=" + std::to_string(l) + " zero-energy solution is near threshold";
    });
    std::string msg;
    for (const auto& a : ambiguous)
        if (!a.empty()) msg += (msg.empty() ? "" : "; ") + a;
    if (!msg.empty())
        throw AmbiguousCensusError("bound_states: threshold or half-bound suspicion (" + msg +
                                   "); change the potential parameters");
    for (int l = 0; l <= lmax; ++l)
        if (c.counts[l] != c.node_counts[l])
            throw ConsistencyError("bound_states: counting methods disagree in channel l=" + std::to_string(l) + " (" +
                                   std::to_string(c.counts[l]) + " vs " + std::to_string(c.node_counts[l]) + ")");
    return c;
}

struct ChannelCheck {
    int l = 0;
    int bound = 0;
    double winding_over_pi = 0.0;  // (delta(0+) - delta(inf)) / pi
    double residual = 0.0;         // |winding_over_pi - bound|
    double delta_top = 0.0;        // delta(lambda_max)
};

struct LevinsonReport {
    double lhs = 0.0;
    double rhs = 0.0;  // 2 pi Tr P
    int trace_p = 0;
    double residual = 0.0;  // |lhs / 2 pi - Tr P| / max(1, Tr P)
    LevinsonIntegral integral;
    BoundStateCensus census;
    std::vector<ChannelCheck> channels;
    int lmax = 0;
    bool truncated = false;
    std::size_t energy_points = 0;
};

inline LevinsonReport levinson_check(const RadialPotential& v, const PhaseShiftTable& t, const CensusOptions& co = {}) {
    LevinsonReport rep;
    rep.census = bound_states(v, t.lmax + 1, co);
    if (rep.census.counts.back() != 0)
        throw TruncationError("levinson_check: bound states exist beyond the tabulated partial waves; raise lmax");
    rep.integral = levinson_lhs(t);
    rep.lhs = rep.integral.value;
    rep.trace_p = rep.census.trace();
    rep.rhs = 2.0 * pi * rep.trace_p;
    rep.residual = std::abs(rep.lhs / (2.0 * pi) - rep.trace_p) / std::max(1, rep.trace_p);
    rep.lmax = t.lmax;
    rep.truncated = t.truncated;
    rep.energy_points = t.lambda.size();
    for (int l = 0; l < t.channels(); ++l) {
        ChannelCheck c;
        c.l = l;
        c.bound = rep.census.counts[l];
        c.winding_over_pi = t.delta[l].front() / pi;
        c.residual = std::abs(c.winding_over_pi - c.bound);
        c.delta_top = t.delta[l].back();
        rep.channels.push_back(c);
    }
    return rep;
}

inline LevinsonReport levinson_check(const RadialPotential& v, const ScatteringOptions& o = {}, const CensusOptions& co = {}) {
    return levinson_check(v, build_phase_table(v, o), co);
}

struct MartinResult {
    double value = 0.0;
    double nu = 0.0;
    double trace_integral = 0.0;     // int tr[i S^* S'] over the table
    double counterterm = 0.0;        // -2 nu sqrt(lambda_max)
    double truncation_tail = 0.0;    // Born estimate of channels above lmax
    double high_energy_remainder = 0.0;  // 2 sum (2l+1)(delta - delta_Born)(lambda_max), reported only
};

// int_0^inf {tr[i S^* S'] - nu / sqrt(lambda)} d lambda, integrated up to
// lambda_max from the table.
inline MartinResult martin_form(const RadialPotential& v, const PhaseShiftTable& t, double radial_step = 1e-3) {
    if (!v.is_local()) throw InputError("martin_form: needs a local potential");
    MartinResult m;
    m.nu = v.nu();
    MatrixFamily s = s_matrix(t);
    MatrixFamily ds = DerivationDescriptor::energy_derivative().apply(s);
    MatrixFamily integrand = multiply(s.adjoint(), ds);
    auto trace = TraceDescriptor::energy_integral({}, multiplicity_weight(t));
    m.trace_integral = (cplx(0.0, 1.0) * trace(integrand)).real();
    double lmin = t.lambda.front(), lmax = t.lambda.back();
    // [0, lambda_min] contributes -2 nu sqrt(lambda_min) from the counterterm
    m.counterterm = -2.0 * m.nu * std::sqrt(lmax);
    (void)lmin;
    RadialGrid grid(v, radial_step, 2.1);
    double k = std::sqrt(lmax);
    std::vector<double> born;
    std::vector<double> remainder;
    for (int l = 0; l < t.channels(); ++l) {
        double b = born_phase(grid, l, k);
        born.push_back(t.weight(l) * b);
        remainder.push_back(t.weight(l) * (t.delta[l].back() - b));
    }
    // sum over all l of (2l+1) delta_Born = -k nu
    double above = -k * m.nu - pairwise_sum(born);
    m.truncation_tail = -2.0 * above;
    m.high_energy_remainder = 2.0 * pairwise_sum(remainder);
    m.value = m.trace_integral + m.counterterm + m.truncation_tail;
    if (std::abs(m.truncation_tail) > 0.05 * std::max(std::abs(m.value), 2.0 * pi))
        throw TruncationError("martin_form: partial-wave truncation tail exceeds 5%; raise lmax");
    return m;
}

// tr[-i S^* S'] at grid point i = sum (2l+1) 2 delta_l'.
inline std::vector<double> time_delay(const PhaseShiftTable& t) {
    MatrixFamily s = s_matrix(t);
    MatrixFamily ds = DerivationDescriptor::energy_derivative().apply(s);
    CMat w = multiplicity_weight(t);
    std::vector<double> out(t.lambda.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (cplx(0.0, -1.0) * (w * s.blocks[i].adjoint() * ds.blocks[i]).trace()).real();
    return out;
}

inline double time_delay(const PhaseShiftTable& t, double lambda) {
    auto it = std::find(t.lambda.begin(), t.lambda.end(), lambda);
    if (it == t.lambda.end() || it == t.lambda.begin() || it + 1 == t.lambda.end())
        throw InputError("time_delay: lambda must be an interior grid point");
    return time_delay(t)[static_cast<std::size_t>(it - t.lambda.begin())];
}

}  // namespace tbm
