#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include <Eigen/Eigenvalues>

#include "tbm/twisted_algebra.hpp"

using namespace tbm;

namespace {

Mat antisym3(double b12, double b23, double b31) {
    Mat m = Mat::Zero(3, 3);
    m(0, 1) = b12;
    m(1, 0) = -b12;
    m(1, 2) = b23;
    m(2, 1) = -b23;
    m(2, 0) = b31;
    m(0, 2) = -b31;
    return m;
}

// Smooth periodic planar field on a torus of side len.
MagneticField periodic_planar(double len) {
    return MagneticField::sampled(2, [len](const Vec& p) {
        double b = 1.1 + 0.6 * std::sin(2 * pi * p[0] / len) * std::cos(2 * pi * p[1] / len);
        Mat m(2, 2);
        m << 0.0, b, -b, 0.0;
        return m;
    }, 10);
}

const double kappas[] = {0.0, 0.5, 1.0};

}  // namespace

TEST_CASE("unit element is exact") {
    auto grid = PositionGrid::cube(2, 4.0, 6);
    CocycleEvaluator w(MagneticField::planar(0.9));
    std::mt19937_64 rng(1);
    auto g = random_element(grid, 2, 4, 2, rng);
    auto one = AlgebraElement::unit(grid, 2);
    for (double k : kappas) {
        CHECK(l1_distance(twisted_product(one, g, k, w), g) == 0.0);
        CHECK(l1_distance(twisted_product(g, one, k, w), g) == 0.0);
    }
    // unit density is 1 / cellWeight
    CHECK(one.density({0, 0})[0].real() == Catch::Approx(1.0 / grid.cell_weight(2)));
}

TEST_CASE("trivial cocycle reduces to group convolution") {
    auto grid = PositionGrid::cube(1, 3.0, 5);
    CocycleEvaluator w(MagneticField::zero(1));
    AlgebraElement f(grid, 1), g(grid, 1);
    double cw = grid.cell_weight(1);
    std::vector<double> fv{1.0, -2.0, 0.5}, gv{3.0, 0.25};
    for (int i = 0; i < 3; ++i) f.set_density({i - 1}, GridFunction(grid.size(), fv[i]));
    for (int i = 0; i < 2; ++i) g.set_density({i}, GridFunction(grid.size(), gv[i]));
    auto h = twisted_product(f, g, 0.0, w);
    // discrete convolution with measure cw
    for (int x = -1; x <= 2; ++x) {
        double expect = 0.0;
        for (int y = -1; y <= 1; ++y) {
            int z = x - y;
            if (z >= 0 && z <= 1) expect += cw * fv[y + 1] * gv[z];
        }
        CHECK(h.density({x})[0].real() == Catch::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("product of two deltas picks up the translated cocycle") {
    auto grid = PositionGrid::cube(2, 6.0, 6);
    double b = 0.45;
    CocycleEvaluator w(MagneticField::planar(b));
    GroupPoint x{1, -2}, y{2, 1};
    auto f = AlgebraElement::point(grid, x, GridFunction(grid.size(), 1.0));
    auto g = AlgebraElement::point(grid, y, GridFunction(grid.size(), 1.0));
    for (double k : kappas) {
        auto h = twisted_product(f, g, k, w);
        REQUIRE(h.support_size() == 1);
        Vec xv = embed(grid, x), yv = embed(grid, y);
        cplx expect = std::exp(cplx(0.0, -0.5 * b * (xv[0] * yv[1] - xv[1] * yv[0]))) * grid.cell_weight(2);
        auto d = h.density({3, -1});
        for (auto v : d) CHECK(std::abs(v - expect) < 1e-13);
    }
}

TEST_CASE("involution examples") {
    auto grid = PositionGrid::cube(2, 4.0, 4);
    std::mt19937_64 rng(3);
    GridFunction real_values(grid.size());
    for (auto& v : real_values) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    auto f = AlgebraElement::point(grid, {0, 0}, real_values);
    for (double k : kappas) CHECK(l1_distance(involution(f, k), f) == 0.0);

    auto g = random_element(grid, 2, 4, 2, rng);
    for (double k : kappas) CHECK(l1_distance(involution(involution(g, k), k), g) == 0.0);

    auto gs = involution(g, 0.5);
    for (const auto& [x, m] : g.terms()) {
        const GridFunction* mm = gs.mass({-x[0], -x[1]});
        REQUIRE(mm);
        for (std::size_t i = 0; i < m.size(); ++i) CHECK((*mm)[i] == std::conj(m[i]));
    }
}

TEST_CASE("associativity and anti-multiplicative involution") {
    std::mt19937_64 rng(99);
    auto g2 = PositionGrid::cube(2, 5.0, 8);
    auto g3 = PositionGrid::cube(3, 4.0, 6);
    CocycleEvaluator w2(MagneticField::planar(0.83));
    CocycleEvaluator w3(MagneticField::constant(antisym3(0.7, -0.4, 1.1)));
    for (int trial = 0; trial < 12; ++trial) {
        bool three = trial % 2 == 1;
        const auto& grid = three ? g3 : g2;
        const auto& w = three ? w3 : w2;
        double k = kappas[trial % 3];
        auto f = random_element(grid, grid.dim, 4, 2, rng);
        auto g = random_element(grid, grid.dim, 4, 2, rng);
        auto h = random_element(grid, grid.dim, 3, 2, rng);
        auto lhs = twisted_product(twisted_product(f, g, k, w), h, k, w);
        auto rhs = twisted_product(f, twisted_product(g, h, k, w), k, w);
        CHECK(l1_distance(lhs, rhs) < 1e-10);
        auto inv_lhs = involution(twisted_product(f, g, k, w), k);
        auto inv_rhs = twisted_product(involution(g, k), involution(f, k), k, w);
        CHECK(l1_distance(inv_lhs, inv_rhs) < 1e-10);
    }
}

TEST_CASE("sampled periodic field keeps associativity to quadrature accuracy") {
    std::mt19937_64 rng(5);
    double len = 4.0;
    auto grid = PositionGrid::cube(2, len, 8);
    CocycleEvaluator w(periodic_planar(len));
    for (double k : kappas) {
        auto f = random_element(grid, 2, 3, 1, rng);
        auto g = random_element(grid, 2, 3, 1, rng);
        auto h = random_element(grid, 2, 2, 1, rng);
        auto lhs = twisted_product(twisted_product(f, g, k, w), h, k, w);
        auto rhs = twisted_product(f, twisted_product(g, h, k, w), k, w);
        CHECK(l1_distance(lhs, rhs) < 1e-8);
    }
}

TEST_CASE("kappa change is an isomorphism") {
    std::mt19937_64 rng(17);
    auto grid = PositionGrid::cube(2, 5.0, 8);
    CocycleEvaluator w(MagneticField::planar(-0.6));
    auto f = random_element(grid, 2, 4, 2, rng);
    auto g = random_element(grid, 2, 4, 2, rng);
    for (double k : {0.5, 1.0}) {
        auto prod = change_kappa(twisted_product(f, g, 0.0, w), 0.0, k);
        auto prod_k = twisted_product(change_kappa(f, 0.0, k), change_kappa(g, 0.0, k), k, w);
        CHECK(l1_distance(prod, prod_k) < 1e-12);
        auto inv = change_kappa(involution(f, 0.0), 0.0, k);
        CHECK(l1_distance(inv, involution(change_kappa(f, 0.0, k), k)) < 1e-13);
    }
    auto bad = PositionGrid::cube(2, 5.0, 8, 1);
    auto h = random_element(bad, 2, 2, 1, rng);
    h.set_mass({1, 0}, GridFunction(bad.size(), 1.0));
    CHECK_THROWS_AS(change_kappa(h, 0.0, 0.5), InputError);
}

TEST_CASE("grid mismatch is an input error") {
    CocycleEvaluator w(MagneticField::planar(1.0));
    std::mt19937_64 rng(1);
    auto a = random_element(PositionGrid::cube(2, 4.0, 4), 2, 2, 1, rng);
    auto b = random_element(PositionGrid::cube(2, 4.0, 6), 2, 2, 1, rng);
    CHECK_THROWS_AS(twisted_product(a, b, 0.0, w), InputError);
}

TEST_CASE("beta action is a group morphism respecting the algebra") {
    std::mt19937_64 rng(23);
    auto grid = PositionGrid::cube(2, 5.0, 8);
    CocycleEvaluator w(MagneticField::planar(0.77));
    auto f = random_element(grid, 1, 3, 2, rng);
    auto g = random_element(grid, 1, 3, 2, rng);
    for (double k : kappas) {
        CHECK(l1_distance(beta_action(f, 0.0, k, w), f) == 0.0);
        for (double s : {-1.0, 0.5, 2.0}) {
            for (double t : {1.0, -1.5}) {
                auto twice = beta_action(beta_action(f, t, k, w), s, k, w);
                CHECK(l1_distance(twice, beta_action(f, s + t, k, w)) < 1e-12);
            }
            auto lhs = beta_action(twisted_product(f, g, k, w), s, k, w);
            auto rhs = twisted_product(beta_action(f, s, k, w), beta_action(g, s, k, w), k, w);
            CHECK(l1_distance(lhs, rhs) < 1e-12);
            auto ilhs = beta_action(involution(f, k), s, k, w);
            CHECK(l1_distance(ilhs, involution(beta_action(f, s, k, w), k)) < 1e-12);
        }
    }
    // zero field: pure translation along the last axis
    CocycleEvaluator w0(MagneticField::zero(2));
    auto moved = beta_action(f, 1.0, 0.5, w0);
    for (const auto& [x, m] : f.terms()) {
        auto expect = translate(grid, m, {0, grid.stride});
        CHECK(*moved.mass(x) == expect);
    }
}

TEST_CASE("iterated decomposition round trip and prefactor") {
    std::mt19937_64 rng(31);
    auto grid = PositionGrid::cube(2, 5.0, 8);
    double b = 0.61;
    CocycleEvaluator w(MagneticField::planar(b));
    auto f = random_element(grid, 2, 4, 2, rng);
    for (double k : kappas) {
        auto it = to_iterated(f, k, w);
        CHECK(l1_distance(from_iterated(it, k, w), f) < 1e-14);
    }
    CocycleEvaluator w0(MagneticField::zero(2));
    auto it0 = to_iterated(f, 0.5, w0);
    for (const auto& [x, m] : f.terms()) CHECK(*it0.slices.at(x[1]).mass({x[0]}) == m);

    // single point: prefactor = conj(Box(k x_perp, x_par)) conj(w((x_par,0),(0,x_perp)))
    GroupPoint x{2, -1};
    auto single = AlgebraElement::point(grid, x, GridFunction(grid.size(), 1.0));
    for (double k : kappas) {
        auto it = to_iterated(single, k, w);
        Vec xv = embed(grid, x);
        Vec par(1);
        par << xv[0];
        Vec q0 = Vec::Zero(2);
        Vec e_par(2), e_perp(2);
        e_par << xv[0], 0.0;
        e_perp << 0.0, xv[1];
        cplx expect = std::conj(box_flux(w.field(), q0, k * xv[1], par)) * std::conj(omega(w.field(), q0, e_par, e_perp));
        cplx got = (*it.slices.at(-1).mass({2}))[0] / grid.cell_weight(2);
        CHECK(std::abs(got - expect) < 1e-13);
    }
}

TEST_CASE("iterated product and involution match the full algebra") {
    std::mt19937_64 rng(41);
    auto g2 = PositionGrid::cube(2, 5.0, 8);
    auto g3 = PositionGrid::cube(3, 4.0, 6);
    CocycleEvaluator w2(MagneticField::planar(0.93));
    CocycleEvaluator w3(MagneticField::constant(antisym3(0.5, 0.8, -0.35)));
    for (int trial = 0; trial < 12; ++trial) {
        bool three = trial % 2 == 1;
        const auto& grid = three ? g3 : g2;
        const auto& w = three ? w3 : w2;
        double k = kappas[trial % 3];
        auto f = random_element(grid, grid.dim, 3, 2, rng);
        auto g = random_element(grid, grid.dim, 3, 2, rng);
        auto full = to_iterated(twisted_product(f, g, k, w), k, w);
        auto iter = iterated_product(to_iterated(f, k, w), to_iterated(g, k, w), k, w);
        CHECK(l1_distance(full, iter) < 1e-10);
        auto inv_full = to_iterated(involution(f, k), k, w);
        auto inv_iter = iterated_involution(to_iterated(f, k, w), k, w);
        CHECK(l1_distance(inv_full, inv_iter) < 1e-10);
        auto twice = iterated_involution(inv_iter, k, w);
        CHECK(l1_distance(twice, to_iterated(f, k, w)) < 1e-13);
    }
}

TEST_CASE("iterated product with a sampled periodic field") {
    std::mt19937_64 rng(43);
    double len = 4.0;
    auto grid = PositionGrid::cube(2, len, 8);
    CocycleEvaluator w(periodic_planar(len));
    for (double k : kappas) {
        auto f = random_element(grid, 2, 3, 1, rng);
        auto g = random_element(grid, 2, 3, 1, rng);
        auto full = to_iterated(twisted_product(f, g, k, w), k, w);
        auto iter = iterated_product(to_iterated(f, k, w), to_iterated(g, k, w), k, w);
        CHECK(l1_distance(full, iter) < 1e-8);
    }
}

TEST_CASE("representation is a unital *-homomorphism") {
    std::mt19937_64 rng(53);
    auto grid = PositionGrid::cube(2, 6.0, 12);
    CocycleEvaluator w(field_for_flux(grid, 1, 3));
    auto one = AlgebraElement::unit(grid, 2);
    auto f = random_element(grid, 2, 4, 2, rng);
    auto g = random_element(grid, 2, 4, 2, rng);
    for (double k : kappas) {
        auto id = represent(one, k, 1, 3);
        CHECK((id - Eigen::MatrixXcd::Identity(id.rows(), id.cols())).cwiseAbs().maxCoeff() < 1e-15);
        auto pf = represent(f, k, 1, 3), pg = represent(g, k, 1, 3);
        auto pfg = represent(twisted_product(f, g, k, w), k, 1, 3);
        CHECK((pfg - pf * pg).cwiseAbs().maxCoeff() < 1e-12);
        auto pstar = represent(involution(f, k), k, 1, 3);
        CHECK((pstar - pf.adjoint()).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK_THROWS_AS(represent(f, 0.0, 1, 5), InputError);
}

TEST_CASE("represented spectra do not depend on kappa") {
    std::mt19937_64 rng(61);
    auto grid = PositionGrid::cube(2, 6.0, 12);
    CocycleEvaluator w(field_for_flux(grid, 1, 3));
    auto g = random_element(grid, 2, 4, 2, rng);
    auto f0 = g + involution(g, 0.0);
    auto f_half = change_kappa(f0, 0.0, 0.5);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> e0(represent(f0, 0.0, 1, 3), Eigen::EigenvaluesOnly);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> e1(represent(f_half, 0.5, 1, 3), Eigen::EigenvaluesOnly);
    CHECK((e0.eigenvalues() - e1.eigenvalues()).cwiseAbs().maxCoeff() < 1e-10);
}
