#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "tbm/pairings.hpp"

using namespace tbm;

namespace {

CMat random_matrix(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    CMat m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double re = g(rng);
            double im = g(rng);
            m(i, j) = cplx(re, im);
        }
    return m;
}

CMat random_hermitian(int n, std::mt19937_64& rng) {
    CMat m = random_matrix(n, rng);
    return 0.5 * (m + m.adjoint());
}

CMat random_projection(int n, int rank, std::mt19937_64& rng) {
    Eigen::SelfAdjointEigenSolver<CMat> es(random_hermitian(n, rng));
    CMat v = es.eigenvectors().leftCols(rank);
    return v * v.adjoint();
}

// Anisotropic Hofstadter Bloch matrix at flux 1/3 with vertical hopping ty.
CMat bloch(double kx, double big_k, double ty) {
    const int q = 3;
    CMat h = CMat::Zero(q, q);
    for (int y = 0; y < q; ++y) {
        h(y, y) = -2.0 * std::cos(kx + 2.0 * pi * y / 3.0);
        if (y + 1 < q) h(y, y + 1) = h(y + 1, y) = -ty;
    }
    h(q - 1, 0) += -ty * std::polar(1.0, big_k);
    h(0, q - 1) += -ty * std::polar(1.0, -big_k);
    return h;
}

double torus_chern(double ty, int torus) {
    const int n2 = torus / 3;
    const double eps = 2.0 * pi / torus;
    std::vector<CMat> blocks;
    std::vector<std::size_t> nb1, nb2;
    for (int i = 0; i < torus; ++i)
        for (int j = 0; j < n2; ++j) {
            Eigen::SelfAdjointEigenSolver<CMat> es(bloch(eps * i, 3 * eps * j, ty));
            CMat v = es.eigenvectors().leftCols(1);
            blocks.push_back(v * v.adjoint());
            nb1.push_back(static_cast<std::size_t>((i - 1 + torus) % torus) * n2 + j);
            nb2.push_back(static_cast<std::size_t>(i) * n2 + (j - 1 + n2) % n2);
        }
    CMat d = CMat::Zero(3, 3);
    for (int y = 0; y < 3; ++y) d(y, y) = std::polar(1.0, eps * y);
    std::vector<DerivationDescriptor> deltas{DerivationDescriptor::covariant_difference(nb1, CMat{}, eps),
                                             DerivationDescriptor::covariant_difference(nb2, d, eps)};
    cplx pair = pair_even(TraceDescriptor::per_unit_volume(double(torus) * torus), deltas, MatrixFamily::sectors(blocks));
    return chern_from_pairing(pair);
}

MatrixFamily scalar_loop(int k, int samples) {
    std::vector<double> grid(samples);
    for (int i = 0; i < samples; ++i) grid[i] = double(i) / (samples - 1);
    return sample_path([k](double t) { return CMat::Constant(1, 1, std::polar(1.0, 2.0 * pi * k * t)); }, grid);
}

}  // namespace

TEST_CASE("even pairing in degree zero is the trace") {
    std::mt19937_64 rng(1);
    CMat p = random_projection(5, 1, rng);
    cplx v = pair_even(TraceDescriptor::matrix_trace(), {}, MatrixFamily::single(p));
    CHECK(std::abs(v - 1.0) < 1e-13);
    CMat p3 = random_projection(6, 3, rng);
    CHECK(pair_even(TraceDescriptor::matrix_trace(), {}, MatrixFamily::single(p3)) == p3.trace());
}

TEST_CASE("even pairing vanishes on projections commuting with the generators") {
    std::mt19937_64 rng(2);
    Eigen::VectorXd x1(4), x2(4);
    x1 << 1, 2, 3, 4;
    x2 << -1, 0.5, 2, 7;
    CMat p = CMat::Zero(4, 4);
    p(0, 0) = p(2, 2) = 1.0;
    std::vector<DerivationDescriptor> d{DerivationDescriptor::commutator(x1.cast<cplx>().asDiagonal()),
                                        DerivationDescriptor::commutator(x2.cast<cplx>().asDiagonal())};
    CHECK(std::abs(pair_even(TraceDescriptor::matrix_trace(), d, MatrixFamily::single(p))) == 0.0);
}

TEST_CASE("validation of K-class inputs") {
    std::mt19937_64 rng(3);
    CMat a = random_hermitian(4, rng);
    CHECK_THROWS_AS(pair_even(TraceDescriptor::matrix_trace(), {}, MatrixFamily::single(a)), ValidationError);
    CHECK_THROWS_AS(pair_odd(TraceDescriptor::matrix_trace(), {DerivationDescriptor::commutator(a)}, MatrixFamily::single(a)),
                    ValidationError);
    CHECK_THROWS_AS(pair_even(TraceDescriptor::matrix_trace(), {DerivationDescriptor::commutator(a)},
                              MatrixFamily::single(CMat::Identity(4, 4))),
                    InputError);
}

TEST_CASE("odd pairing of the identity vanishes") {
    std::mt19937_64 rng(4);
    CMat x = random_hermitian(3, rng);
    cplx v = pair_odd(TraceDescriptor::matrix_trace(), {DerivationDescriptor::commutator(x)}, MatrixFamily::single(CMat::Identity(3, 3)));
    CHECK(v == cplx(0.0, 0.0));
}

TEST_CASE("traces are linear and tracial") {
    std::mt19937_64 rng(5);
    for (const auto& t : {TraceDescriptor::matrix_trace(2.0), TraceDescriptor::per_unit_volume(7.0)}) {
        CMat a = random_matrix(5, rng), b = random_matrix(5, rng);
        cplx ab = t(MatrixFamily::single(a * b)), ba = t(MatrixFamily::single(b * a));
        CHECK(std::abs(ab - ba) < 1e-12 * (1.0 + std::abs(ab)));
        CMat pos = a * a.adjoint();
        CHECK(t(MatrixFamily::single(pos)).real() > 0.0);
    }
    std::vector<double> grid{0.0, 0.1, 0.3, 0.6, 1.0};
    std::vector<CMat> as, bs, abs_, bas;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        as.push_back(random_matrix(3, rng));
        bs.push_back(random_matrix(3, rng));
        abs_.push_back(as.back() * bs.back());
        bas.push_back(bs.back() * as.back());
    }
    auto t = TraceDescriptor::energy_integral([](double l) { return 1.0 + l; });
    cplx ab = t(MatrixFamily::path(grid, abs_)), ba = t(MatrixFamily::path(grid, bas));
    CHECK(std::abs(ab - ba) < 1e-12 * (1.0 + std::abs(ab)));
}

TEST_CASE("Leibniz rule") {
    std::mt19937_64 rng(6);
    CMat x = random_hermitian(4, rng), a = random_matrix(4, rng), b = random_matrix(4, rng);
    auto d = DerivationDescriptor::commutator(x);
    CMat lhs = d.apply(MatrixFamily::single(a * b)).blocks[0];
    CMat rhs = d.apply(MatrixFamily::single(a)).blocks[0] * b + a * d.apply(MatrixFamily::single(b)).blocks[0];
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);

    std::vector<double> grid{0.5, 0.8, 1.1, 1.7};
    CMat m1 = random_matrix(3, rng), m2 = random_matrix(3, rng);
    auto fa = [&](double l) { return CMat(l * m1 + l * l * l * m2); };
    auto fb = [&](double l) { return CMat(std::cos(l) * m2); };
    auto fab = [&](double l) { return CMat(fa(l) * fb(l)); };
    auto e = DerivationDescriptor::energy_derivative();
    auto pa = sample_path(fa, grid), pb = sample_path(fb, grid), pab = sample_path(fab, grid);
    auto dab = e.apply(pab), da = e.apply(pa), db = e.apply(pb);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        CMat r = da.blocks[i] * pb.blocks[i] + pa.blocks[i] * db.blocks[i];
        CHECK((dab.blocks[i] - r).cwiseAbs().maxCoeff() < 1e-7);
    }
}

TEST_CASE("swapping derivations flips the even pairing") {
    std::mt19937_64 rng(7);
    CMat p = random_projection(6, 2, rng);
    auto d1 = DerivationDescriptor::commutator(random_hermitian(6, rng));
    auto d2 = DerivationDescriptor::commutator(random_hermitian(6, rng));
    auto t = TraceDescriptor::matrix_trace();
    cplx a = pair_even(t, {d1, d2}, MatrixFamily::single(p));
    cplx b = pair_even(t, {d2, d1}, MatrixFamily::single(p));
    CHECK(a == -b);
}

TEST_CASE("even pairing is additive on direct sums") {
    std::mt19937_64 rng(8);
    CMat p = random_projection(4, 2, rng), q = random_projection(3, 1, rng);
    CMat x1 = random_hermitian(4, rng), x2 = random_hermitian(4, rng);
    CMat y1 = random_hermitian(3, rng), y2 = random_hermitian(3, rng);
    auto t = TraceDescriptor::matrix_trace();
    auto sum = [](const CMat& a, const CMat& b) {
        return direct_sum(MatrixFamily::single(a), MatrixFamily::single(b)).blocks[0];
    };
    cplx lhs = pair_even(t, {DerivationDescriptor::commutator(sum(x1, y1)), DerivationDescriptor::commutator(sum(x2, y2))},
                         MatrixFamily::single(sum(p, q)));
    cplx rhs = pair_even(t, {DerivationDescriptor::commutator(x1), DerivationDescriptor::commutator(x2)}, MatrixFamily::single(p)) +
               pair_even(t, {DerivationDescriptor::commutator(y1), DerivationDescriptor::commutator(y2)}, MatrixFamily::single(q));
    CHECK(std::abs(lhs - rhs) < 1e-10);
}

TEST_CASE("scalar path winding once") {
    // theta rises smoothly from 0 to 2 pi on [0, 1]
    auto theta = [](double l) { return 2.0 * pi * l - std::sin(2.0 * pi * l); };
    auto dtheta = [](double l) { return 2.0 * pi - 2.0 * pi * std::cos(2.0 * pi * l); };
    // high-resolution midpoint oracle for int (e^{-i th} - 1) i th' e^{i th} dl
    cplx oracle = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double l = (i + 0.5) / n;
        cplx u = std::polar(1.0, theta(l));
        oracle += (std::conj(u) - 1.0) * cplx(0.0, dtheta(l)) * u / double(n);
    }
    CHECK(std::abs(oracle - cplx(0.0, 2.0 * pi)) < 1e-8);

    std::vector<double> grid(2001);
    std::vector<CMat> vals;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid[i] = double(i) / (grid.size() - 1);
        vals.push_back(CMat::Constant(1, 1, std::polar(1.0, theta(grid[i]))));
    }
    cplx pair = pair_odd(TraceDescriptor::energy_integral(), {DerivationDescriptor::energy_derivative()},
                         MatrixFamily::path(grid, vals));
    CHECK(std::abs(pair - oracle) < 1e-5);
    CHECK(winding_from_pairing(pair) == Catch::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("winding numbers of closed scalar loops") {
    auto t = TraceDescriptor::energy_integral();
    auto one = winding_number(scalar_loop(0, 101), t);
    CHECK(one.value == 0.0);
    for (int k : {-2, -1, 1, 3}) {
        auto w = winding_number(scalar_loop(k, 801), t);
        CHECK(w.value == Catch::Approx(-k).epsilon(1e-6));
        CHECK(w.imag_residual < 1e-6);
        CHECK_FALSE(w.endpoint_warning);
    }
    // non-closed path raises the endpoint flag
    std::vector<double> grid{0.0, 0.25, 0.5};
    auto open = sample_path([](double l) { return CMat::Constant(1, 1, std::polar(1.0, 2.0 * pi * l)); }, grid);
    CHECK(winding_number(open, t).endpoint_warning);
}

TEST_CASE("winding is additive under pointwise products") {
    auto t = TraceDescriptor::energy_integral();
    std::vector<double> grid(1201);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = double(i) / (grid.size() - 1);
    auto u = [](double l) {
        CMat m = CMat::Zero(2, 2);
        m(0, 0) = std::polar(1.0, 2.0 * pi * l);
        m(1, 1) = std::polar(1.0, -4.0 * pi * l);
        return m;
    };
    auto v = [](double l) {
        // rotate a phase winding into a nondiagonal but commuting form
        return CMat(std::polar(1.0, 2.0 * pi * (l + 0.3 * std::sin(2.0 * pi * l))) * CMat::Identity(2, 2));
    };
    auto uv = [&](double l) { return CMat(u(l) * v(l)); };
    double wu = winding_number(sample_path(u, grid), t).value;
    double wv = winding_number(sample_path(v, grid), t).value;
    double wuv = winding_number(sample_path(uv, grid), t).value;
    CHECK(wuv == Catch::Approx(wu + wv).margin(1e-6));
    CHECK(wu == Catch::Approx(1.0).margin(1e-6));
    CHECK(wv == Catch::Approx(-2.0).margin(1e-6));
}

TEST_CASE("finite-torus Chern pairing is stable along a gapped deformation") {
    std::vector<double> values;
    for (double ty : {0.7, 0.85, 1.0, 1.15, 1.3}) values.push_back(torus_chern(ty, 90));
    for (double v : values) {
        CHECK(std::lround(v) == 1);
        CHECK(std::abs(v - values[2]) < 0.01);
    }
}
