#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tbm/core.hpp"

namespace tbm {

using CMat = Eigen::MatrixXcd;

// A family of equally sized square matrices. Blocks are either independent
// sectors (direct sum, e.g. Bloch momenta) or samples of a path over `grid`,
// optionally with derivative samples.
struct MatrixFamily {
    std::vector<CMat> blocks;
    std::vector<double> grid;
    std::vector<CMat> derivatives;

    static MatrixFamily single(CMat m) {
        MatrixFamily f;
        f.blocks.push_back(std::move(m));
        return f;
    }
    static MatrixFamily sectors(std::vector<CMat> blocks) {
        MatrixFamily f;
        f.blocks = std::move(blocks);
        return f;
    }
    static MatrixFamily path(std::vector<double> grid, std::vector<CMat> values, std::vector<CMat> derivatives = {}) {
        if (grid.size() != values.size()) throw InputError("MatrixFamily: grid and values differ in length");
        if (!derivatives.empty() && derivatives.size() != values.size())
            throw InputError("MatrixFamily: derivative samples differ in length");
        MatrixFamily f;
        f.grid = std::move(grid);
        f.blocks = std::move(values);
        f.derivatives = std::move(derivatives);
        return f;
    }

    std::size_t size() const { return blocks.size(); }
    Eigen::Index dim() const { return blocks.empty() ? 0 : blocks.front().rows(); }
    bool has_derivatives() const { return !derivatives.empty(); }

    MatrixFamily adjoint() const {
        MatrixFamily f;
        f.grid = grid;
        for (const auto& b : blocks) f.blocks.push_back(b.adjoint());
        for (const auto& d : derivatives) f.derivatives.push_back(d.adjoint());
        return f;
    }

    MatrixFamily shifted_identity(cplx c) const {
        MatrixFamily f = *this;
        for (auto& b : f.blocks) b.diagonal().array() += c;
        return f;
    }
};

inline MatrixFamily multiply(const MatrixFamily& a, const MatrixFamily& b) {
    if (a.size() != b.size()) throw InputError("multiply: families differ in length");
    MatrixFamily out;
    out.grid = a.grid.empty() ? b.grid : a.grid;
    out.blocks.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out.blocks[i] = a.blocks[i] * b.blocks[i];
    return out;
}

// Direct sum of two families of the same length.
inline MatrixFamily direct_sum(const MatrixFamily& a, const MatrixFamily& b) {
    if (a.size() != b.size()) throw InputError("direct_sum: families differ in length");
    MatrixFamily out;
    out.grid = a.grid;
    auto sum = [](const CMat& x, const CMat& y) {
        CMat m = CMat::Zero(x.rows() + y.rows(), x.cols() + y.cols());
        m.topLeftCorner(x.rows(), x.cols()) = x;
        m.bottomRightCorner(y.rows(), y.cols()) = y;
        return m;
    };
    for (std::size_t i = 0; i < a.size(); ++i) out.blocks.push_back(sum(a.blocks[i], b.blocks[i]));
    if (a.has_derivatives() && b.has_derivatives())
        for (std::size_t i = 0; i < a.size(); ++i) out.derivatives.push_back(sum(a.derivatives[i], b.derivatives[i]));
    return out;
}

struct TraceDescriptor {
    enum class Kind { MatrixTrace, PerUnitVolume, EnergyIntegral };

    Kind kind = Kind::MatrixTrace;
    double normalization = 1.0;
    CMat weight;  // empty means identity
    std::function<double(double)> measure;
    bool periodic = false;
    double period = 0.0;

    static TraceDescriptor matrix_trace(double normalization = 1.0, CMat weight = {}) {
        TraceDescriptor t;
        t.normalization = normalization;
        t.weight = std::move(weight);
        return t;
    }
    static TraceDescriptor per_unit_volume(double volume, CMat weight = {}) {
        if (!(volume > 0.0)) throw InputError("trace per unit volume needs a positive volume");
        TraceDescriptor t;
        t.kind = Kind::PerUnitVolume;
        t.normalization = 1.0 / volume;
        t.weight = std::move(weight);
        return t;
    }
    // normalization * int w(l) tr(W A(l)) dl over the family grid; periodic
    // families sample [0, period) uniformly.
    static TraceDescriptor energy_integral(std::function<double(double)> measure = {}, CMat weight = {},
                                           double normalization = 1.0) {
        TraceDescriptor t;
        t.kind = Kind::EnergyIntegral;
        t.measure = std::move(measure);
        t.weight = std::move(weight);
        t.normalization = normalization;
        return t;
    }
    static TraceDescriptor loop_integral(double period, CMat weight = {}, double normalization = 1.0) {
        TraceDescriptor t = energy_integral({}, std::move(weight), normalization);
        t.periodic = true;
        t.period = period;
        return t;
    }

    cplx block_trace(const CMat& a) const {
        if (weight.size() == 0) return a.trace();
        return (weight * a).trace();
    }

    cplx operator()(const MatrixFamily& a) const {
        std::vector<cplx> samples(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) samples[i] = block_trace(a.blocks[i]);
        if (kind != Kind::EnergyIntegral) return normalization * pairwise_sum(samples);
        if (periodic) return normalization * integrate_periodic(period, samples);
        if (a.grid.size() != a.size()) throw InputError("energy-integral trace needs a parametrized family");
        if (measure)
            for (std::size_t i = 0; i < samples.size(); ++i) samples[i] *= measure(a.grid[i]);
        return normalization * integrate(a.grid, samples);
    }

    std::string describe() const {
        switch (kind) {
            case Kind::MatrixTrace: return "matrix-trace";
            case Kind::PerUnitVolume: return "trace-per-unit-volume";
            case Kind::EnergyIntegral: return periodic ? "loop-integral" : "energy-integral";
        }
        return "unknown";
    }
};

struct DerivationDescriptor {
    enum class Kind { Commutator, CovariantDifference, EnergyDerivative };

    Kind kind = Kind::Commutator;
    CMat generator;                       // commutator: i[X, a]
    std::vector<std::size_t> neighbour;   // covariant: block index of k - e_j
    CMat phase;                           // covariant: conjugating phase V
    double step = 1.0;                    // covariant: lattice momentum step
    std::function<double(double)> multiplier;  // energy: m(l) a'(l)

    static DerivationDescriptor commutator(CMat x) {
        DerivationDescriptor d;
        d.generator = std::move(x);
        return d;
    }
    // delta(a)[k] = (V a[nbr(k)] V^* - a[k]) / step
    static DerivationDescriptor covariant_difference(std::vector<std::size_t> neighbour, CMat phase, double step) {
        DerivationDescriptor d;
        d.kind = Kind::CovariantDifference;
        d.neighbour = std::move(neighbour);
        d.phase = std::move(phase);
        d.step = step;
        return d;
    }
    static DerivationDescriptor energy_derivative(std::function<double(double)> multiplier = {}) {
        DerivationDescriptor d;
        d.kind = Kind::EnergyDerivative;
        d.multiplier = std::move(multiplier);
        return d;
    }

    MatrixFamily apply(const MatrixFamily& a) const {
        MatrixFamily out;
        out.grid = a.grid;
        out.blocks.resize(a.size());
        switch (kind) {
            case Kind::Commutator: {
                const cplx i1(0.0, 1.0);
                for (std::size_t k = 0; k < a.size(); ++k)
                    out.blocks[k] = i1 * (generator * a.blocks[k] - a.blocks[k] * generator);
                break;
            }
            case Kind::CovariantDifference: {
                if (neighbour.size() != a.size()) throw InputError("covariant difference: neighbour table size mismatch");
                for (std::size_t k = 0; k < a.size(); ++k) {
                    const CMat& nb = a.blocks[neighbour[k]];
                    CMat moved = phase.size() == 0 ? nb : CMat(phase * nb * phase.adjoint());
                    out.blocks[k] = (moved - a.blocks[k]) / step;
                }
                break;
            }
            case Kind::EnergyDerivative: {
                if (a.grid.size() != a.size()) throw InputError("energy derivative needs a parametrized family");
                if (a.has_derivatives())
                    out.blocks = a.derivatives;
                else
                    out.blocks = differentiate(a.grid, a.blocks);
                if (multiplier)
                    for (std::size_t k = 0; k < a.size(); ++k) out.blocks[k] *= multiplier(a.grid[k]);
                break;
            }
        }
        return out;
    }

    std::string describe() const {
        switch (kind) {
            case Kind::Commutator: return "commutator-with-matrix";
            case Kind::CovariantDifference: return "covariant-finite-difference";
            case Kind::EnergyDerivative: return multiplier ? "scaled-energy-derivative" : "energy-derivative";
        }
        return "unknown";
    }
};

// Samples a matrix-valued callable on a grid; derivatives by central
// differences with one Richardson step (steps h and h/2).
inline MatrixFamily sample_path(const std::function<CMat(double)>& f, const std::vector<double>& grid, double rel_step = 1e-4,
                                double abs_step = 1e-6) {
    MatrixFamily out;
    out.grid = grid;
    for (double x : grid) {
        double h = std::max(rel_step * std::abs(x), abs_step);
        CMat d1 = (f(x + h) - f(x - h)) / (2.0 * h);
        CMat d2 = (f(x + 0.5 * h) - f(x - 0.5 * h)) / h;
        out.blocks.push_back(f(x));
        out.derivatives.push_back((4.0 * d2 - d1) / 3.0);
    }
    return out;
}

inline double projection_defect(const MatrixFamily& p) {
    double worst = 0.0;
    for (const auto& b : p.blocks) {
        worst = std::max(worst, (b * b - b).cwiseAbs().maxCoeff());
        worst = std::max(worst, (b - b.adjoint()).cwiseAbs().maxCoeff());
    }
    return worst;
}

inline double unitarity_defect(const MatrixFamily& u) {
    double worst = 0.0;
    for (const auto& b : u.blocks) {
        CMat id = CMat::Identity(b.rows(), b.cols());
        worst = std::max(worst, (b.adjoint() * b - id).cwiseAbs().maxCoeff());
        worst = std::max(worst, (b * b.adjoint() - id).cwiseAbs().maxCoeff());
    }
    return worst;
}

namespace detail {
inline int permutation_sign(const std::vector<int>& perm) {
    int inv = 0;
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t j = i + 1; j < perm.size(); ++j)
            if (perm[i] > perm[j]) ++inv;
    return inv % 2 == 0 ? 1 : -1;
}
}  // namespace detail

// sum over permutations of sgn(pi) T(p delta_pi(1)(p) ... delta_pi(n)(p))
inline cplx pair_even(const TraceDescriptor& t, const std::vector<DerivationDescriptor>& deltas, const MatrixFamily& p,
                      double tolerance = 1e-8) {
    if (deltas.size() % 2 != 0) throw InputError("pair_even needs an even number of derivations");
    double defect = projection_defect(p);
    if (defect > tolerance) throw ValidationError("pair_even: input is not a projection (defect " + fmt_double(defect) + ")");
    std::vector<MatrixFamily> dp;
    for (const auto& d : deltas) dp.push_back(d.apply(p));
    std::vector<int> perm(deltas.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<cplx> terms;
    do {
        MatrixFamily prod = p;
        for (int j : perm) prod = multiply(prod, dp[j]);
        terms.push_back(static_cast<double>(detail::permutation_sign(perm)) * t(prod));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return pairwise_sum(terms);
}

// sum over permutations of sgn(pi) T((u^* - 1) delta_pi(1)(u) delta_pi(2)(u^*) ...)
inline cplx pair_odd(const TraceDescriptor& t, const std::vector<DerivationDescriptor>& deltas, const MatrixFamily& u,
                     double tolerance = 1e-8) {
    if (deltas.size() % 2 != 1) throw InputError("pair_odd needs an odd number of derivations");
    double defect = unitarity_defect(u);
    if (defect > tolerance) throw ValidationError("pair_odd: input is not unitary (defect " + fmt_double(defect) + ")");
    MatrixFamily ustar = u.adjoint();
    MatrixFamily head = ustar.shifted_identity(cplx(-1.0, 0.0));
    std::vector<MatrixFamily> du, dustar;
    for (const auto& d : deltas) {
        du.push_back(d.apply(u));
        dustar.push_back(d.apply(ustar));
    }
    std::vector<int> perm(deltas.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<cplx> terms;
    do {
        MatrixFamily prod = head;
        for (std::size_t slot = 0; slot < perm.size(); ++slot)
            prod = multiply(prod, slot % 2 == 0 ? du[perm[slot]] : dustar[perm[slot]]);
        terms.push_back(static_cast<double>(detail::permutation_sign(perm)) * t(prod));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return pairwise_sum(terms);
}

// Integer normalizations of the raw pairings.
inline double chern_from_pairing(cplx pair) { return (cplx(0.0, -2.0 * pi) * pair).real(); }
inline double winding_from_pairing(cplx pair) { return (pair / cplx(0.0, -2.0 * pi)).real(); }

struct Provenance {
    std::string trace;
    std::vector<std::string> derivations;
    std::string normalization;
};

inline Provenance provenance(const TraceDescriptor& t, const std::vector<DerivationDescriptor>& deltas,
                             std::string normalization) {
    Provenance p{t.describe(), {}, std::move(normalization)};
    for (const auto& d : deltas) p.derivations.push_back(d.describe());
    return p;
}

struct WindingResult {
    double value = 0.0;
    double imag_residual = 0.0;  // |Im| relative to max(1, |Re|)
    bool endpoint_warning = false;
    cplx raw;
    Provenance provenance;
};

// (1/2pi) int tr[i (u - 1)^* u'] over the path; equals pair_odd / (-2 pi i).
inline WindingResult winding_number(const MatrixFamily& u, const TraceDescriptor& t) {
    if (u.size() < 3) throw InputError("winding_number: path needs at least three samples");
    std::vector<DerivationDescriptor> deltas{DerivationDescriptor::energy_derivative()};
    WindingResult r;
    r.raw = pair_odd(t, deltas, u);
    cplx w = r.raw / cplx(0.0, -2.0 * pi);
    r.value = w.real();
    r.imag_residual = std::abs(w.imag()) / std::max(1.0, std::abs(w.real()));
    auto far = [](const CMat& m) { return (m - CMat::Identity(m.rows(), m.cols())).cwiseAbs().maxCoeff() > 1e-3; };
    if (!t.periodic) r.endpoint_warning = far(u.blocks.front()) || far(u.blocks.back());
    r.provenance = provenance(t, deltas, "pair_odd / (-2 pi i)");
    return r;
}

}  // namespace tbm
