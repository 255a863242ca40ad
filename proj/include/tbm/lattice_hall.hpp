#pragma once

#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "tbm/core.hpp"
#include "tbm/pairings.hpp"

namespace tbm {

// Hofstadter model at flux p/q per plaquette, Landau gauge with the phase on
// x-directed hops: H = -t sum (e^{2 pi i phi y} |x+1,y><x,y| + |x,y+1><x,y|) + h.c.
struct HofstadterSpec {
    long p = 0;
    long q = 1;
    double t = 1.0;
    int bulk_grid = 24;   // M x M Brillouin grid
    int width = 60;       // cylinder width W
    int momenta = 200;    // cylinder momentum grid K
    double gap_tolerance = 1e-3;

    double flux() const { return static_cast<double>(p) / static_cast<double>(q); }
    double gap_threshold() const { return 10.0 * gap_tolerance; }

    void validate() const {
        if (q < 1 || p < 0 || p >= q) throw InputError("flux p/q must satisfy 0 <= p < q");
        if (std::gcd(p, q) != 1) throw InputError("flux p/q must be reduced");
        if (!(t > 0.0)) throw InputError("hopping amplitude must be positive");
        if (bulk_grid < q || width < q || momenta < q)
            throw InputError("bulk grid, cylinder width and momentum grid must be at least q");
        if (!(gap_tolerance > 0.0)) throw InputError("gap tolerance must be positive");
    }
};

// Magnetic Bloch Hamiltonian on the q-site magnetic cell: kx along the hops
// carrying the Landau phase, K the momentum conjugate to magnetic-cell shifts.
inline CMat bloch_hamiltonian(const HofstadterSpec& s, double kx, double big_k) {
    const long q = s.q;
    CMat h = CMat::Zero(q, q);
    for (long y = 0; y < q; ++y) {
        h(y, y) = -2.0 * s.t * std::cos(kx + 2.0 * pi * s.flux() * static_cast<double>(y));
        if (y + 1 < q) {
            h(y, y + 1) += -s.t;
            h(y + 1, y) += -s.t;
        }
    }
    h(q - 1, 0) += -s.t * std::polar(1.0, big_k);
    h(0, q - 1) += -s.t * std::polar(1.0, -big_k);
    return h;
}

struct Gap {
    int index = 0;         // number of bands below
    double lower = 0.0;    // top of band index-1
    double upper = 0.0;    // bottom of band index
    bool open = false;
    double center() const { return 0.5 * (lower + upper); }
    double width() const { return upper - lower; }
};

struct BandData {
    HofstadterSpec spec;
    std::vector<Eigen::VectorXd> energies;  // k index i * M + j
    std::vector<CMat> states;
    std::vector<double> band_min, band_max;
    std::vector<Gap> gaps;                  // gaps 1 .. q-1

    int grid() const { return spec.bulk_grid; }
    double kx(int i) const { return 2.0 * pi * i / spec.bulk_grid; }
    double big_k(int j) const { return 2.0 * pi * j / spec.bulk_grid; }
    std::size_t at(int i, int j) const {
        int m = spec.bulk_grid;
        return static_cast<std::size_t>(((i % m) + m) % m) * m + static_cast<std::size_t>(((j % m) + m) % m);
    }
    const Gap& gap(int r) const {
        if (r < 1 || r >= spec.q) throw InputError("gap index must lie in 1 .. q-1");
        return gaps[r - 1];
    }
};

// Diagonalizes the Bloch Hamiltonian on the M x M grid. Band extrema are also
// taken over the half-step offset grid so a gap is only called open when it is
// open on both.
inline BandData build_bulk(const HofstadterSpec& s) {
    s.validate();
    BandData b;
    b.spec = s;
    const int m = s.bulk_grid;
    const long q = s.q;
    b.energies.resize(static_cast<std::size_t>(m) * m);
    b.states.resize(b.energies.size());
    std::vector<Eigen::VectorXd> offset(b.energies.size());
    parallel_for(b.energies.size(), [&](std::size_t idx) {
        int i = static_cast<int>(idx / m), j = static_cast<int>(idx % m);
        Eigen::SelfAdjointEigenSolver<CMat> es(bloch_hamiltonian(s, b.kx(i), b.big_k(j)));
        b.energies[idx] = es.eigenvalues();
        b.states[idx] = es.eigenvectors();
        Eigen::SelfAdjointEigenSolver<CMat> eo(
            bloch_hamiltonian(s, 2.0 * pi * (i + 0.5) / m, 2.0 * pi * (j + 0.5) / m), Eigen::EigenvaluesOnly);
        offset[idx] = eo.eigenvalues();
    });
    b.band_min.assign(q, 1e300);
    b.band_max.assign(q, -1e300);
    std::vector<double> main_min(q, 1e300), main_max(q, -1e300);
    for (std::size_t idx = 0; idx < b.energies.size(); ++idx)
        for (long n = 0; n < q; ++n) {
            main_min[n] = std::min(main_min[n], b.energies[idx][n]);
            main_max[n] = std::max(main_max[n], b.energies[idx][n]);
            b.band_min[n] = std::min({b.band_min[n], b.energies[idx][n], offset[idx][n]});
            b.band_max[n] = std::max({b.band_max[n], b.energies[idx][n], offset[idx][n]});
        }
    for (long r = 1; r < q; ++r) {
        Gap g;
        g.index = static_cast<int>(r);
        g.lower = b.band_max[r - 1];
        g.upper = b.band_min[r];
        bool open_main = main_min[r] - main_max[r - 1] > s.gap_threshold();
        g.open = open_main && g.width() > s.gap_threshold();
        b.gaps.push_back(g);
    }
    return b;
}

inline std::vector<int> open_gaps(const BandData& b) {
    std::vector<int> out;
    for (const auto& g : b.gaps)
        if (g.open) out.push_back(g.index);
    return out;
}

// Plaquette (lattice field strength) Chern number of bands first..last.
inline double chern_berry_raw(const BandData& b, int first, int last) {
    const long q = b.spec.q;
    if (first < 0 || last >= q || first > last) throw InputError("chern_berry: invalid band range");
    const int m = b.grid();
    const double thr = b.spec.gap_threshold();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const auto& e = b.energies[b.at(i, j)];
            bool below = first > 0 && e[first] - e[first - 1] < thr;
            bool above = last + 1 < q && e[last + 1] - e[last] < thr;
            if (below || above) {
                std::ostringstream msg;
                msg << "chern_berry: bands " << first << ".." << last << " touch the rest of the spectrum at k = ("
                    << b.kx(i) << ", " << b.big_k(j) << ")";
                throw DegeneracyError(msg.str());
            }
        }
    const int nsel = last - first + 1;
    auto link = [&](std::size_t a, std::size_t c) {
        CMat ov = b.states[a].middleCols(first, nsel).adjoint() * b.states[c].middleCols(first, nsel);
        cplx d = ov.determinant();
        if (std::abs(d) < 1e-12) throw DegeneracyError("chern_berry: vanishing link variable; refine the Brillouin grid");
        return d / std::abs(d);
    };
    std::vector<double> field(static_cast<std::size_t>(m) * m);
    parallel_for(field.size(), [&](std::size_t idx) {
        int i = static_cast<int>(idx / m), j = static_cast<int>(idx % m);
        std::size_t k0 = b.at(i, j), k1 = b.at(i + 1, j), k2 = b.at(i + 1, j + 1), k3 = b.at(i, j + 1);
        field[idx] = std::arg(link(k0, k1) * link(k1, k2) * link(k2, k3) * link(k3, k0));
    });
    return pairwise_sum(field) / (2.0 * pi);
}

inline int chern_berry(const BandData& b, int first, int last) {
    return static_cast<int>(std::lround(chern_berry_raw(b, first, last)));
}

// Hall conductance of gap r: Chern number of all bands below it.
inline int cumulative_chern(const BandData& b, int r) { return chern_berry(b, 0, r - 1); }

struct GapLabel {
    long s = 0;
    long t = 0;
};

// Solution of r = q s + p t with |t| <= q/2.
inline GapLabel gap_label(long p, long q, long r) {
    if (q < 1 || r < 0 || r > q) throw InputError("gap_label: need 0 <= r <= q");
    std::optional<GapLabel> found;
    for (long t = -q / 2; t <= q / 2; ++t) {
        long rest = r - p * t;
        if (((rest % q) + q) % q == 0) {
            if (found && q % 2 == 0) throw InputError("gap_label: label ambiguous for even q at the central gap");
            if (!found) found = GapLabel{rest / q, t};
        }
    }
    if (!found) throw InputError("gap_label: no Diophantine solution");
    return *found;
}

// Fraction of eigenvalues below e_fermi per magnetic cell and band.
inline double ids(const BandData& b, double e_fermi) {
    std::size_t count = 0;
    for (const auto& e : b.energies)
        for (Eigen::Index n = 0; n < e.size(); ++n)
            if (e[n] < e_fermi) ++count;
    return static_cast<double>(count) / (static_cast<double>(b.spec.q) * b.energies.size());
}

struct NcChernResult {
    double value = 0.0;
    cplx pairing;
    bool accuracy_warning = false;
    Provenance provenance;
};

// Pairing of the Fermi projection below gap r on the L x L torus with the
// trace per unit volume and covariant finite-difference derivations. The torus
// decomposes into L * L/q Bloch sectors; translation by one site in y acts on
// the magnetic cell as the phase D = diag(e^{i eps y}).
inline NcChernResult chern_nc(const HofstadterSpec& s, int r, int torus) {
    s.validate();
    if (r < 0 || r > s.q) throw InputError("chern_nc: gap index out of range");
    if (torus < s.q || torus % s.q != 0) throw InputError("chern_nc: flux denominator must divide the torus size");
    const int n1 = torus;
    const int n2 = static_cast<int>(torus / s.q);
    const double eps = 2.0 * pi / torus;
    std::vector<CMat> proj(static_cast<std::size_t>(n1) * n2);
    std::vector<double> local_gap(proj.size(), 1e300);
    parallel_for(proj.size(), [&](std::size_t idx) {
        int i = static_cast<int>(idx / n2), j = static_cast<int>(idx % n2);
        Eigen::SelfAdjointEigenSolver<CMat> es(bloch_hamiltonian(s, eps * i, eps * s.q * j));
        const CMat& v = es.eigenvectors();
        proj[idx] = v.leftCols(r) * v.leftCols(r).adjoint();
        if (r > 0 && r < s.q) local_gap[idx] = es.eigenvalues()[r] - es.eigenvalues()[r - 1];
    });
    std::vector<std::size_t> nb1(proj.size()), nb2(proj.size());
    for (int i = 0; i < n1; ++i)
        for (int j = 0; j < n2; ++j) {
            std::size_t idx = static_cast<std::size_t>(i) * n2 + j;
            nb1[idx] = static_cast<std::size_t>((i - 1 + n1) % n1) * n2 + j;
            nb2[idx] = static_cast<std::size_t>(i) * n2 + (j - 1 + n2) % n2;
        }
    CMat d = CMat::Zero(s.q, s.q);
    for (long y = 0; y < s.q; ++y) d(y, y) = std::polar(1.0, eps * static_cast<double>(y));
    std::vector<DerivationDescriptor> deltas{DerivationDescriptor::covariant_difference(nb1, CMat{}, eps),
                                             DerivationDescriptor::covariant_difference(nb2, d, eps)};
    auto trace = TraceDescriptor::per_unit_volume(static_cast<double>(torus) * torus);
    NcChernResult res;
    res.pairing = pair_even(trace, deltas, MatrixFamily::sectors(std::move(proj)));
    res.value = chern_from_pairing(res.pairing);
    double min_gap = *std::min_element(local_gap.begin(), local_gap.end());
    res.accuracy_warning = min_gap < 4.0 * pi * s.t / torus;
    res.provenance = provenance(trace, deltas, "-2 pi i * pair_even");
    return res;
}

// Open cylinder: periodic in x (momentum kx), W sites in y.
inline Eigen::MatrixXd cylinder_hamiltonian(const HofstadterSpec& s, double kx) {
    const int w = s.width;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(w, w);
    for (int y = 0; y < w; ++y) {
        h(y, y) = -2.0 * s.t * std::cos(kx + 2.0 * pi * s.flux() * y);
        if (y + 1 < w) {
            h(y, y + 1) = -s.t;
            h(y + 1, y) = -s.t;
        }
    }
    return h;
}

struct EdgeSpectrum {
    HofstadterSpec spec;
    int boundary_rows = 1;
    std::vector<double> momenta;
    std::vector<Eigen::VectorXd> energies;
    std::vector<Eigen::MatrixXd> states;

    double bottom_weight(std::size_t k, Eigen::Index n) const {
        return states[k].col(n).head(boundary_rows).squaredNorm();
    }
    double top_weight(std::size_t k, Eigen::Index n) const {
        return states[k].col(n).tail(boundary_rows).squaredNorm();
    }
};

// Within (numerically) degenerate clusters the eigensolver may return any
// rotation; rotate each cluster so states diagonalize the bottom-edge weight.
inline void localize_degenerate(Eigen::VectorXd& e, Eigen::MatrixXd& v, int rows, double tol = 1e-9) {
    const Eigen::Index n = e.size();
    Eigen::Index a = 0;
    while (a < n) {
        Eigen::Index b = a + 1;
        while (b < n && e[b] - e[b - 1] < tol) ++b;
        if (b - a > 1) {
            Eigen::MatrixXd block = v.middleCols(a, b - a);
            Eigen::MatrixXd w = block.topRows(rows).transpose() * block.topRows(rows);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w);
            v.middleCols(a, b - a) = block * es.eigenvectors();
        }
        a = b;
    }
}

inline EdgeSpectrum edge_spectrum(const HofstadterSpec& s) {
    s.validate();
    EdgeSpectrum es;
    es.spec = s;
    es.boundary_rows = (s.width + 9) / 10;
    const int k = s.momenta;
    es.momenta.resize(k);
    es.energies.resize(k);
    es.states.resize(k);
    parallel_for(static_cast<std::size_t>(k), [&](std::size_t i) {
        es.momenta[i] = 2.0 * pi * static_cast<double>(i) / k;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> sol(cylinder_hamiltonian(s, es.momenta[i]));
        es.energies[i] = sol.eigenvalues();
        es.states[i] = sol.eigenvectors();
        localize_degenerate(es.energies[i], es.states[i], es.boundary_rows);
    });
    return es;
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    double center() const { return 0.5 * (lo + hi); }
    double width() const { return hi - lo; }
};

// Gap interval shrunk symmetrically by `fraction` of its width on each side.
inline Interval gap_interval(const Gap& g, double fraction = 0.05) {
    double w = g.width();
    return {g.lower + fraction * w, g.upper - fraction * w};
}

// Returns the open bulk gap containing the interval, or throws.
inline const Gap& containing_gap(const BandData& b, const Interval& delta) {
    if (!(delta.hi > delta.lo)) throw InputError("energy interval must have positive width");
    for (const auto& g : b.gaps)
        if (g.open && delta.lo > g.lower && delta.hi < g.upper) return g;
    throw InputError("energy interval [" + fmt_double(delta.lo) + ", " + fmt_double(delta.hi) +
                     "] does not lie inside an open bulk gap");
}

struct EdgeCrossing {
    double momentum = 0.0;
    double energy = 0.0;
    int direction = 0;  // +1 upward through the gap center
    double bottom_weight = 0.0;
    double top_weight = 0.0;
};

struct EdgeFlow {
    int bottom = 0;  // net upward crossings by bottom-edge branches
    int top = 0;
    std::vector<EdgeCrossing> crossings;
};

// Signed count of edge branches crossing the gap center as kx winds once.
inline EdgeFlow edge_flow(const EdgeSpectrum& es, const BandData& bulk, const Interval& delta) {
    containing_gap(bulk, delta);
    const double ec = delta.center();
    const double half = 0.5 * delta.width();
    const std::size_t k = es.momenta.size();
    EdgeFlow flow;
    std::vector<std::string> ambiguous;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t nxt = (i + 1) % k;
        const auto& ea = es.energies[i];
        const auto& eb = es.energies[nxt];
        for (Eigen::Index a = 0; a < ea.size(); ++a) {
            if (std::abs(ea[a] - ec) >= half) continue;
            Eigen::Index best = -1;
            double best_ov = -1.0;
            for (Eigen::Index c = 0; c < eb.size(); ++c) {
                if (std::abs(eb[c] - ec) >= 2.0 * delta.width()) continue;
                double ov = std::abs(es.states[i].col(a).dot(es.states[nxt].col(c)));
                if (ov > best_ov) {
                    best_ov = ov;
                    best = c;
                }
            }
            if (best < 0 || best_ov < 0.5 || std::abs(eb[best] - ea[a]) > half)
                throw ResolutionError("edge_spectral_flow: branch tracking failed near kx = " + fmt_double(es.momenta[i]) +
                                      "; increase the momentum grid");
            bool before = ea[a] >= ec;
            bool after = eb[best] >= ec;
            if (before == after) continue;
            EdgeCrossing c;
            c.momentum = es.momenta[i];
            c.energy = ea[a];
            c.direction = after ? 1 : -1;
            c.bottom_weight = 0.5 * (es.bottom_weight(i, a) + es.bottom_weight(nxt, best));
            c.top_weight = 0.5 * (es.top_weight(i, a) + es.top_weight(nxt, best));
            if (c.bottom_weight >= 0.6)
                flow.bottom += c.direction;
            else if (c.top_weight >= 0.6)
                flow.top += c.direction;
            else
                ambiguous.push_back("kx=" + fmt_double(c.momentum) + " E=" + fmt_double(c.energy) +
                                    " bottom=" + fmt_double(c.bottom_weight) + " top=" + fmt_double(c.top_weight));
            flow.crossings.push_back(c);
        }
    }
    if (!ambiguous.empty()) {
        std::string msg = "edge_spectral_flow: ambiguous edge localization for branches:";
        for (const auto& a : ambiguous) msg += " [" + a + "]";
        throw ClassificationError(msg);
    }
    return flow;
}

inline int edge_spectral_flow(const HofstadterSpec& s, const Interval& delta) {
    BandData bulk = build_bulk(s);
    return edge_flow(edge_spectrum(s), bulk, delta).bottom;
}

// u(H) = 1 + chi_delta(H) (exp(-2 pi i (H - inf delta) / |delta|) - 1)
inline CMat edge_unitary(const Eigen::MatrixXd& h, const Interval& delta) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    const auto& e = es.eigenvalues();
    Eigen::VectorXcd f(e.size());
    for (Eigen::Index n = 0; n < e.size(); ++n) {
        bool inside = e[n] >= delta.lo && e[n] <= delta.hi;
        f[n] = inside ? std::polar(1.0, -2.0 * pi * (e[n] - delta.lo) / delta.width()) - 1.0 : cplx(0.0, 0.0);
    }
    CMat v = es.eigenvectors().cast<cplx>();
    CMat u = v * f.asDiagonal() * v.adjoint();
    u.diagonal().array() += 1.0;
    return u;
}

struct EdgeUnitaryResult {
    double value = 0.0;
    double imag_residual = 0.0;
    double unitarity_defect = 0.0;
    Provenance provenance;
};

// Odd pairing of the edge unitary over the momentum loop, traced over the
// bottom half of the cylinder.
inline EdgeUnitaryResult edge_unitary_pairing(const HofstadterSpec& s, const Interval& delta) {
    s.validate();
    BandData bulk = build_bulk(s);
    containing_gap(bulk, delta);
    const int k = s.momenta;
    std::vector<double> grid(k);
    for (int i = 0; i < k; ++i) grid[i] = 2.0 * pi * i / k;
    auto u = [&](double kx) { return edge_unitary(cylinder_hamiltonian(s, kx), delta); };
    MatrixFamily path;
    path.grid = grid;
    path.blocks.resize(k);
    path.derivatives.resize(k);
    const double h = 1e-4;
    parallel_for(static_cast<std::size_t>(k), [&](std::size_t i) {
        double x = grid[i];
        CMat d1 = (u(x + h) - u(x - h)) / (2.0 * h);
        CMat d2 = (u(x + 0.5 * h) - u(x - 0.5 * h)) / h;
        path.blocks[i] = u(x);
        path.derivatives[i] = (4.0 * d2 - d1) / 3.0;
    });
    CMat half = CMat::Zero(s.width, s.width);
    for (int y = 0; y < s.width / 2; ++y) half(y, y) = 1.0;
    auto trace = TraceDescriptor::loop_integral(2.0 * pi, half);
    std::vector<DerivationDescriptor> deltas{DerivationDescriptor::energy_derivative()};
    EdgeUnitaryResult res;
    res.unitarity_defect = unitarity_defect(path);
    cplx w = pair_odd(trace, deltas, path) / cplx(0.0, -2.0 * pi);
    res.value = w.real();
    res.imag_residual = std::abs(w.imag());
    res.provenance = provenance(trace, deltas, "pair_odd / (-2 pi i)");
    return res;
}

struct StredaResult {
    double slope = 0.0;
    int sigma_h = 0;
    double residual = 0.0;
    double ids_first = 0.0;
    double ids_second = 0.0;
    int gap_first = 0;
    int gap_second = 0;
    GapLabel label;
};

// Finite-difference Streda slope between two fluxes for the gap carrying the
// label of gap r at the first flux.
inline StredaResult streda_check(const HofstadterSpec& a, const HofstadterSpec& b, int r) {
    a.validate();
    b.validate();
    if (a.p * b.q == b.p * a.q) throw InputError("streda_check: the two fluxes coincide");
    BandData ba = build_bulk(a);
    if (r < 1 || r >= a.q || !ba.gap(r).open)
        throw GapTrackingError("streda_check: gap " + std::to_string(r) + " is not open at the first flux");
    StredaResult res;
    res.label = gap_label(a.p, a.q, r);
    long r2 = b.q * res.label.s + b.p * res.label.t;
    if (r2 < 1 || r2 >= b.q) throw GapTrackingError("streda_check: labelled gap does not exist at the second flux");
    BandData bb = build_bulk(b);
    if (!bb.gap(static_cast<int>(r2)).open)
        throw GapTrackingError("streda_check: labelled gap " + std::to_string(r2) + " is closed at the second flux");
    res.gap_first = r;
    res.gap_second = static_cast<int>(r2);
    res.ids_first = ids(ba, ba.gap(r).center());
    res.ids_second = ids(bb, bb.gap(static_cast<int>(r2)).center());
    res.slope = (res.ids_second - res.ids_first) / (b.flux() - a.flux());
    res.sigma_h = cumulative_chern(ba, r);
    res.residual = std::abs(res.slope - res.sigma_h) / std::max(1.0, std::abs(static_cast<double>(res.sigma_h)));
    return res;
}

}  // namespace tbm
