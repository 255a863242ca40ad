// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "tbm/runner.hpp"

using namespace tbm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

RadialPotential well(double x, double a = 2.0) { return RadialPotential::square_well(x * x / (a * a), a); }

RadialPotential p_wave_well(double x, double a = 2.0) {
    return RadialPotential::channel_square_wells({{1, {x * x / (a * a), a}}});
}

// Random point with every coordinate in [-span, span].
Vec random_vec(int dim, double span, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-span, span);
    Vec v(dim);
    for (int a = 0; a < dim; ++a) v[a] = u(rng);
    return v;
}

Outcome crit_cocycle_axioms() {
    std::mt19937_64 rng(1);
    Mat c3(3, 3);
    c3 << 0.0, 0.8, -0.3, -0.8, 0.0, 1.1, 0.3, -1.1, 0.0;
    double rel = 0.0, norm = 0.0;
    for (const MagneticField& b : {MagneticField::planar(1.3), MagneticField::constant(c3)}) {
        int dim = b.dimension();
        std::vector<CocycleSample> s;
        for (int i = 0; i < 1000; ++i) {
            CocycleSample c{random_vec(dim, 5, rng), random_vec(dim, 5, rng), random_vec(dim, 5, rng), random_vec(dim, 5, rng)};
            Vec zero = Vec::Zero(dim);
            double t = std::uniform_real_distribution<double>(-3, 3)(rng);
            for (cplx w : {omega(b, c.q, c.x, zero), omega(b, c.q, zero, c.x), omega(b, c.q, c.x, Vec(-c.x)),
                           omega(b, c.q, c.x, Vec(t * c.x))})
                norm = std::max(norm, std::abs(w - 1.0));
            s.push_back(std::move(c));
        }
        rel = std::max(rel, check_cocycle_relation(b, s));
    }
    return {rel < 1e-12 && norm < 1e-12, "relation " + fmt(rel) + ", normalization " + fmt(norm)};
}

Outcome crit_algebra_laws() {
    std::mt19937_64 rng(2);
    Mat c3(3, 3);
    c3 << 0.0, 0.5, 0.2, -0.5, 0.0, -0.4, -0.2, 0.4, 0.0;
    double assoc = 0.0, inv = 0.0;
    for (int i = 0; i < 200; ++i) {
        bool two = i % 2 == 0;
        PositionGrid grid = two ? PositionGrid::cube(2, 5.0, 8) : PositionGrid::cube(3, 4.0, 6);
        CocycleEvaluator w(two ? MagneticField::planar(0.9) : MagneticField::constant(c3));
        double k = std::array<double, 3>{0.0, 0.5, 1.0}[i % 3];
        auto f = random_element(grid, grid.dim, 4, 2, rng);
        auto g = random_element(grid, grid.dim, 4, 2, rng);
        auto h = random_element(grid, grid.dim, 4, 2, rng);
        auto fg = twisted_product(f, g, k, w);
        assoc = std::max(assoc, l1_distance(twisted_product(fg, h, k, w), twisted_product(f, twisted_product(g, h, k, w), k, w)));
        inv = std::max(inv, l1_distance(involution(fg, k), twisted_product(involution(g, k), involution(f, k), k, w)));
    }
    return {assoc < 1e-10 && inv < 1e-10, "associativity " + fmt(assoc) + ", involution " + fmt(inv)};
}

Outcome crit_iterated_product() {
    std::mt19937_64 rng(3);
    Mat c3(3, 3);
    c3 << 0.0, 0.7, -0.6, -0.7, 0.0, 0.3, 0.6, -0.3, 0.0;
    double prod = 0.0, inv = 0.0;
    for (int i = 0; i < 200; ++i) {
        bool two = i % 2 == 0;
        PositionGrid grid = two ? PositionGrid::cube(2, 5.0, 8) : PositionGrid::cube(3, 4.0, 6);
        CocycleEvaluator w(two ? MagneticField::planar(1.1) : MagneticField::constant(c3));
        double k = std::array<double, 3>{0.0, 0.5, 1.0}[i % 3];
        auto f = random_element(grid, grid.dim, 4, 2, rng);
        auto g = random_element(grid, grid.dim, 4, 2, rng);
        auto fi = to_iterated(f, k, w);
        prod = std::max(prod, l1_distance(to_iterated(twisted_product(f, g, k, w), k, w), iterated_product(fi, to_iterated(g, k, w), k, w)));
        inv = std::max(inv, l1_distance(to_iterated(involution(f, k), k, w), iterated_involution(fi, k, w)));
    }
    return {prod < 1e-10 && inv < 1e-10, "product " + fmt(prod) + ", involution " + fmt(inv)};
}

Outcome crit_kappa_independence() {
    std::mt19937_64 rng(4);
    PositionGrid grid = PositionGrid::cube(2, 6.0, 12);
    double worst = 0.0;
    for (int i = 0; i < 5; ++i) {
        auto g = random_element(grid, 2, 4, 2, rng);
        auto f0 = g + involution(g, 0.0);
        auto f1 = change_kappa(f0, 0.0, 0.5);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> e0(represent(f0, 0.0, 1, 3), Eigen::EigenvaluesOnly);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> e1(represent(f1, 0.5, 1, 3), Eigen::EigenvaluesOnly);
        worst = std::max(worst, (e0.eigenvalues() - e1.eigenvalues()).cwiseAbs().maxCoeff());
    }
    return {worst < 1e-10, "max eigenvalue gap " + fmt(worst)};
}

Outcome crit_levinson_cases() {
    struct Case {
        RadialPotential v;
        int trace;
    };
    std::vector<Case> cases{{well(1.2), 0},
                            {well(2.3), 1},
                            {p_wave_well(3.9), 3},
                            {RadialPotential::channel_square_wells({{0, {5.5 * 5.5 / 4.0, 2.0}}, {1, {3.9 * 3.9 / 4.0, 2.0}}}), 5}};
    bool ok = true;
    std::string d;
    for (const auto& c : cases) {
        auto rep = levinson_check(c.v);
        double chan = 0.0;
        for (const auto& ch : rep.channels) chan = std::max(chan, ch.residual);
        ok = ok && rep.trace_p == c.trace && rep.residual < 0.02 && chan < 0.02;
        d += "Tr " + std::to_string(rep.trace_p) + ": lhs/2pi " + fmt(rep.lhs / (2 * pi)) + " chan " + fmt(chan) + "; ";
    }
    return {ok, d};
}

Outcome crit_stability() {
    // one s-wave state throughout; the end points differ in depth and radius
    auto a = well(2.3, 2.0), b = well(3.0, 1.5);
    std::set<long> seen;
    bool census_equal = true;
    std::string d = "homotopy lhs/2pi:";
    for (int i = 0; i <= 5; ++i) {
        auto rep = levinson_check(RadialPotential::interpolate(a, b, i / 5.0));
        census_equal = census_equal && rep.trace_p == 1;
        seen.insert(std::lround(rep.lhs / (2 * pi)));
        d += " " + fmt(rep.lhs / (2 * pi));
    }
    auto below = levinson_check(p_wave_well(2.9)), above = levinson_check(p_wave_well(3.4));
    long jump = std::lround(above.lhs / (2 * pi)) - std::lround(below.lhs / (2 * pi));
    d += "; p-wave threshold jump " + std::to_string(jump);
    return {census_equal && seen.size() == 1 && jump == 3, d};
}

Outcome crit_martin() {
    auto v = well(2.3);
    auto m = martin_form(v, build_phase_table(v));
    double r = m.value / (2 * pi);
    return {std::abs(r - 1.0) < 0.05, "martin/2pi " + fmt(r)};
}

Outcome crit_bulk_edge() {
    bool ok = true;
    int gaps = 0;
    std::string d;
    for (auto [p, q] : std::vector<std::pair<long, long>>{{1, 3}, {1, 4}, {1, 5}, {2, 5}}) {
        HofstadterSpec s;
        s.p = p;
        s.q = q;
        BandData bulk = build_bulk(s);
        EdgeSpectrum es = edge_spectrum(s);
        d += std::to_string(p) + "/" + std::to_string(q) + ":";
        for (int g = 1; g < q; ++g) {
            if (!bulk.gap(g).open) {
                d += " gap" + std::to_string(g) + " closed";
                continue;
            }
            int sigma = cumulative_chern(bulk, g);
            int flow = edge_flow(es, bulk, gap_interval(bulk.gap(g))).bottom;
            ok = ok && flow == sigma;
            ++gaps;
            d += " " + std::to_string(flow) + "=" + std::to_string(sigma);
        }
        d += "; ";
    }
    return {ok && gaps > 0, d};
}

Outcome crit_nc_pairing() {
    bool ok = true;
    std::string d;
    for (auto [p, q] : std::vector<std::pair<long, long>>{{1, 3}, {1, 5}}) {
        HofstadterSpec s;
        s.p = p;
        s.q = q;
        int sigma = cumulative_chern(build_bulk(s), 1);
        double e30 = std::abs(chern_nc(s, 1, static_cast<int>(30 * q)).value - sigma) / std::abs(sigma);
        double e60 = std::abs(chern_nc(s, 1, static_cast<int>(60 * q)).value - sigma) / std::abs(sigma);
        ok = ok && e30 < 0.03 && e60 < 0.015;
        d += std::to_string(p) + "/" + std::to_string(q) + " err30q " + fmt(e30) + " err60q " + fmt(e60) + " ratio " + fmt(e30 / e60) + "; ";
    }
    return {ok, d};
}

Outcome crit_streda() {
    HofstadterSpec a;
    a.p = 1;
    a.q = 3;
    HofstadterSpec b = a;
    auto [p2, q2] = neighbour_flux(1, 3);
    b.p = p2;
    b.q = q2;
    b.bulk_grid = static_cast<int>(q2);
    auto g1 = streda_check(a, b, 1);
    auto g2 = streda_check(a, b, 2);
    BandData bulk = build_bulk(a);
    double idsv = ids(bulk, bulk.gap(1).center());
    bool ok = g1.residual < 0.02 && g1.sigma_h == 1 && g2.residual < 0.02 && g2.sigma_h == g2.label.t &&
              std::abs(idsv - 1.0 / 3.0) < 1e-3;
    return {ok, "neighbour " + std::to_string(p2) + "/" + std::to_string(q2) + ", slope1 " + fmt(g1.slope) + ", slope2 " +
                    fmt(g2.slope) + " (label " + std::to_string(g2.label.t) + "), IDS " + fmt(idsv)};
}

Outcome crit_determinism() {
    fs::path dir = fs::temp_directory_path() / "tbm_acceptance_determinism";
    fs::remove_all(dir);
    std::vector<std::string> reports;
    for (const char* run : {"a", "b"}) {
        std::string cmd = std::string(TBM_CLI_PATH) + " algebra-check --config " +
                          (fs::path(TBM_SOURCE_DIR) / "configs" / "algebra_constant_field.json").string() + " --seed 42 --out " +
                          (dir / run).string() + " >/dev/null 2>&1";
        int st = std::system(cmd.c_str());
        if (!WIFEXITED(st) || WEXITSTATUS(st) != 0) return {false, "cli exit status " + std::to_string(st)};
        std::ifstream in(dir / run / "report.json");
        json j = json::parse(in);
        j.erase("timing");
        reports.push_back(j.dump());
    }
    return {reports[0] == reports[1], std::to_string(reports[0].size()) + " bytes compared"};
}

}  // namespace

int main() {
    std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"cocycle axioms", crit_cocycle_axioms},
        {"twisted algebra laws", crit_algebra_laws},
        {"iterated twisted product", crit_iterated_product},
        {"kappa independence", crit_kappa_independence},
        {"Levinson identity", crit_levinson_cases},
        {"topological stability", crit_stability},
        {"Martin form", crit_martin},
        {"bulk-edge correspondence", crit_bulk_edge},
        {"noncommutative Chern pairing", crit_nc_pairing},
        {"Streda slope", crit_streda},
        {"determinism", crit_determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::printf("%s %2zu %-30s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), sec, o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
