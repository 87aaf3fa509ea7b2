#pragma once
// Independent reference computations used only by the test suites.

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

namespace oracle {

inline constexpr double pinf = std::numeric_limits<double>::infinity();

/// Adaptive Gauss-Kronrod quadrature on a possibly infinite interval.
template <typename F>
double integrate(F f, double a, double b, double tol = 1e-13) {
    double err = 0;
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 20, tol, &err);
}

/// Integral over a rectangle by nested one-dimensional quadrature.
template <typename F>
double integrate2(F f, double a1, double b1, double a2, double b2, double tol = 1e-12) {
    auto inner = [&](double x) { return integrate([&](double y) { return f(x, y); }, a2, b2, tol); };
    return integrate(inner, a1, b1, tol);
}

inline double phi(double x, double mu = 0, double s2 = 1) {
    return std::exp(-0.5 * (x - mu) * (x - mu) / s2) / std::sqrt(2 * std::numbers::pi * s2);
}

inline double Phi(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double phi2(double x, double y, double s11, double s12, double s22) {
    const double det = s11 * s22 - s12 * s12;
    const double q = (s22 * x * x - 2 * s12 * x * y + s11 * y * y) / det;
    return std::exp(-0.5 * q) / (2 * std::numbers::pi * std::sqrt(det));
}

/// Bisection root finder for monotone increasing g on [lo, hi].
template <typename G>
double bisect(G g, double lo, double hi, double tol = 1e-13) {
    for (int it = 0; it < 300 && hi - lo > tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) < 0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Online mean and standard error of a scalar statistic.
struct Accumulator {
    double n = 0, mean = 0, m2 = 0;
    void add(double x) {
        n += 1;
        const double d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    double se() const { return std::sqrt(m2 / (n - 1) / n); }
};

/// Nelder-Mead minimizer with restarts.
inline std::vector<double> nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x0, double step, double ftol = 1e-15,
                                       int max_iter = 20000, int restarts = 4) {
    const std::size_t n = x0.size();
    for (int r = 0; r < restarts; ++r) {
        std::vector<std::vector<double>> s(n + 1, x0);
        for (std::size_t i = 0; i < n; ++i) s[i + 1][i] += step;
        std::vector<double> fs(n + 1);
        for (std::size_t i = 0; i <= n; ++i) fs[i] = f(s[i]);
        for (int it = 0; it < max_iter; ++it) {
            std::vector<std::size_t> idx(n + 1);
            std::iota(idx.begin(), idx.end(), 0);
            std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return fs[a] < fs[b]; });
            std::vector<std::vector<double>> s2;
            std::vector<double> f2;
            for (auto i : idx) s2.push_back(s[i]), f2.push_back(fs[i]);
            s = s2, fs = f2;
            if (std::abs(fs[n] - fs[0]) <= ftol * (1 + std::abs(fs[0]))) break;
            std::vector<double> c(n, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) c[j] += s[i][j] / n;
            auto along = [&](double t) {
                std::vector<double> p(n);
                for (std::size_t j = 0; j < n; ++j) p[j] = c[j] + t * (s[n][j] - c[j]);
                return p;
            };
            auto xr = along(-1);
            const double fr = f(xr);
            if (fr < fs[0]) {
                auto xe = along(-2);
                const double fe = f(xe);
                if (fe < fr)
                    s[n] = xe, fs[n] = fe;
                else
                    s[n] = xr, fs[n] = fr;
            } else if (fr < fs[n - 1]) {
                s[n] = xr, fs[n] = fr;
            } else {
                auto xc = fr < fs[n] ? along(-0.5) : along(0.5);
                const double fc = f(xc);
                if (fc < std::min(fr, fs[n])) {
                    s[n] = xc, fs[n] = fc;
                } else {
                    for (std::size_t i = 1; i <= n; ++i) {
                        for (std::size_t j = 0; j < n; ++j) s[i][j] = s[0][j] + 0.5 * (s[i][j] - s[0][j]);
                        fs[i] = f(s[i]);
                    }
                }
            }
        }
        x0 = s[0];
        step *= 0.1;
    }
    return x0;
}

/// Golden-section maximizer of a unimodal function on [lo, hi].
template <typename F>
double golden_max(F f, double lo, double hi, double tol = 1e-12) {
    const double g = (std::sqrt(5.0) - 1) / 2;
    double a = lo, b = hi, c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc > fd) {
            b = d, d = c, fd = fc, c = b - g * (b - a), fc = f(c);
        } else {
            a = c, c = d, fc = fd, d = a + g * (b - a), fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

/// Two-sided one-sample Kolmogorov statistic against a continuous cdf.
template <typename Cdf>
double ks_statistic(std::vector<double> x, Cdf cdf) {
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = cdf(x[i]);
        d = std::max({d, (i + 1) / n - f, f - i / n});
    }
    return d;
}

}  // namespace oracle
