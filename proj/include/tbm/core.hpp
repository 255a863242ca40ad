#pragma once

#include <algorithm>
#include <complex>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace tbm {

using cplx = std::complex<double>;

inline constexpr double pi = 3.14159265358979323846;

// Error taxonomy. Every failure mode surfaced by the library derives from Error
// so callers (the CLI in particular) can map them to exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InputError : Error { using Error::Error; };
struct SchemaError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct NumericalError : Error { using Error::Error; };
struct DegeneracyError : Error { using Error::Error; };
struct ClassificationError : Error { using Error::Error; };
struct GapTrackingError : Error { using Error::Error; };
struct ResolutionError : Error { using Error::Error; };
struct TruncationError : Error { using Error::Error; };
struct AmbiguousCensusError : Error { using Error::Error; };
struct ConsistencyError : Error { using Error::Error; };

// Worker count for data-parallel maps: TBM_WORKERS, else 1.
inline unsigned worker_count() {
    if (const char* env = std::getenv("TBM_WORKERS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<unsigned>(std::min<long>(v, 256));
    }
    return 1;
}

// Runs f(i) for i in [0, n). Each index is handled exactly once and results
// must be written to per-index slots, so output never depends on scheduling.
template <class F>
void parallel_for(std::size_t n, F&& f) {
    unsigned workers = std::min<std::size_t>(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) f(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Pairwise (cascade) summation with a fixed tree shape.
template <class T>
T pairwise_sum(std::span<const T> v) {
    if (v.empty()) return T{};
    if (v.size() <= 8) {
        T s = v[0];
        for (std::size_t i = 1; i < v.size(); ++i) s += v[i];
        return s;
    }
    std::size_t half = v.size() / 2;
    return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

template <class T>
T pairwise_sum(const std::vector<T>& v) {
    return pairwise_sum(std::span<const T>(v.data(), v.size()));
}

// Composite Simpson rule on a (possibly nonuniform) increasing grid.
// Pairs of intervals use the three-point nonuniform Simpson formula; an odd
// trailing interval integrates the parabola through the last three points.
template <class T>
T integrate(const std::vector<double>& x, const std::vector<T>& f) {
    if (x.size() != f.size()) throw InputError("integrate: grid and sample sizes differ");
    if (x.size() < 2) return T{};
    std::vector<T> parts;
    parts.reserve(x.size() / 2 + 1);
    std::size_t i = 0;
    for (; i + 2 < x.size(); i += 2) {
        double h0 = x[i + 1] - x[i];
        double h1 = x[i + 2] - x[i + 1];
        double hs = h0 + h1;
        parts.push_back((hs / 6.0) * ((2.0 - h1 / h0) * f[i] + (hs * hs / (h0 * h1)) * f[i + 1] +
                                      (2.0 - h0 / h1) * f[i + 2]));
    }
    if (i + 1 < x.size()) {
        if (i == 0) {
            parts.push_back(0.5 * (x[1] - x[0]) * (f[0] + f[1]));
        } else {
            double h0 = x[i] - x[i - 1];
            double h1 = x[i + 1] - x[i];
            double w0 = -h1 * h1 * h1 / (6.0 * h0 * (h0 + h1));
            double w1 = h1 * h1 / (6.0 * h0) + 0.5 * h1;
            double w2 = (h1 * h1 / 3.0 + 0.5 * h0 * h1) / (h0 + h1);
            parts.push_back(w0 * f[i - 1] + w1 * f[i] + w2 * f[i + 1]);
        }
    }
    return pairwise_sum(parts);
}

// Periodic trapezoid rule: samples f at x0 + i*period/n, i < n.
template <class T>
T integrate_periodic(double period, const std::vector<T>& f) {
    if (f.empty()) return T{};
    return pairwise_sum(f) * (period / static_cast<double>(f.size()));
}

// Finite-difference weights for the first derivative at z from nodes x
// (Fornberg's recursion).
inline std::vector<double> derivative_weights(double z, const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::vector<double>> c(n, std::vector<double>(2, 0.0));
    double c1 = 1.0, c4 = x[0] - z;
    c[0][0] = 1.0;
    for (std::size_t i = 1; i < n; ++i) {
        std::size_t mn = std::min<std::size_t>(i, 1);
        double c2 = 1.0, c5 = c4;
        c4 = x[i] - z;
        for (std::size_t j = 0; j < i; ++j) {
            double c3 = x[i] - x[j];
            c2 *= c3;
            if (j == i - 1) {
                for (std::size_t k = mn; k >= 1; --k) c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for (std::size_t k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = c[i][1];
    return w;
}

// First derivative of samples on a nonuniform grid from five-point stencils
// (centred in the interior, shifted at the ends); fourth-order accurate.
template <class T>
std::vector<T> differentiate(const std::vector<double>& x, const std::vector<T>& f) {
    std::size_t n = x.size();
    if (n != f.size()) throw InputError("differentiate: grid and sample sizes differ");
    if (n < 3) throw InputError("differentiate: need at least three samples");
    std::size_t width = std::min<std::size_t>(5, n);
    std::vector<T> d(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t lo = i >= width / 2 ? i - width / 2 : 0;
        lo = std::min(lo, n - width);
        std::vector<double> nodes(x.begin() + lo, x.begin() + lo + width);
        auto w = derivative_weights(x[i], nodes);
        // differences against f[i] so constants differentiate to exactly zero
        T acc = f[i] - f[i];
        for (std::size_t j = 0; j < width; ++j)
            if (lo + j != i) acc += w[j] * (f[lo + j] - f[i]);
        d[i] = acc;
    }
    return d;
}

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace tbm
