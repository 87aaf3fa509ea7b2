#pragma once

#include "heckcn/dist.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <stdexcept>
#include <string>

namespace heckcn {

inline constexpr double min_log_mass = -690.7755278982137;  // log(1e-300)

/// Raised when a truncation region carries (numerically) no probability.
struct ZeroMassError : std::domain_error {
    explicit ZeroMassError(const std::string& what, long unit_index = -1)
        : std::domain_error(what), unit(unit_index) {}
    long unit;
};

/// Mass, first and second moments of a truncated law.
template <typename Scalar, int Dim>
struct TruncMoments {
    Scalar m0;
    Scalar log_m0;
    Vec<Scalar, Dim> m1;
    Mat<Scalar, Dim, Dim> m2;

    Mat<Scalar, Dim, Dim> covariance() const { return m2 - m1 * m1.transpose(); }
};

/// E[g(Y) Y^(k)] for k = 0, 1, 2 and some weight g.
template <typename Scalar, int Dim>
struct WeightedMoments {
    Scalar k0;
    Vec<Scalar, Dim> k1;
    Mat<Scalar, Dim, Dim> k2;
};

namespace detail {

template <typename Scalar>
struct StdTrunc {
    Scalar log_mass;
    Scalar m1;
    Scalar m2;
};

// Moments of a standard normal restricted to [a, b]; no mass guard.
template <typename Scalar>
StdTrunc<Scalar> std_trunc(Scalar a, Scalar b) {
    using std::exp;
    const Scalar lz = log_norm_interval(a, b);
    Scalar ra = 0, rb = 0, ara = 0, brb = 0;
    if (a != -inf<Scalar>()) {
        ra = exp(std_norm_logpdf(a) - lz);
        ara = a * ra;
    }
    if (b != inf<Scalar>()) {
        rb = exp(std_norm_logpdf(b) - lz);
        brb = b * rb;
    }
    return {lz, ra - rb, Scalar(1) + ara - brb};
}

// Rectangle mass as a 1-D integral of the conditional mass; keeps relative
// accuracy where inclusion-exclusion over orthant probabilities cancels.
template <typename Scalar>
Scalar rect_mass_quadrature(const Vec<Scalar, 2>& mu, const Mat<Scalar, 2>& sigma, const TruncRegion<Scalar, 2>& region) {
    using std::exp;
    using std::sqrt;
    const Scalar s1 = sqrt(sigma(0, 0));
    const Scalar slope = sigma(1, 0) / sigma(0, 0);
    const Scalar s = sqrt(sigma(1, 1) - slope * sigma(0, 1));
    auto f = [&](Scalar z) {
        const Scalar m = mu(1) + slope * s1 * z;
        return exp(std_norm_logpdf(z) + log_norm_interval((region.lower(1) - m) / s, (region.upper(1) - m) / s));
    };
    const Scalar a = (region.lower(0) - mu(0)) / s1, b = (region.upper(0) - mu(0)) / s1;
    return boost::math::quadrature::gauss_kronrod<Scalar, 61>::integrate(f, a, b, 25, Scalar(1e-13));
}

}  // namespace detail

/// Truncated univariate normal N(mu, sigma2) restricted to [lo, hi].
template <typename Scalar>
TruncMoments<Scalar, 1> tn_moments_1d(Scalar mu, Scalar sigma2, Scalar lo, Scalar hi) {
    using std::exp;
    using std::sqrt;
    if (!(sigma2 > Scalar(0))) throw std::domain_error("tn_moments_1d: variance must be positive");
    if (!(lo < hi)) throw std::invalid_argument("tn_moments_1d: empty interval");
    const Scalar s = sqrt(sigma2);
    const auto t = detail::std_trunc((lo - mu) / s, (hi - mu) / s);
    if (!(t.log_mass >= Scalar(min_log_mass))) throw ZeroMassError("tn_moments_1d: truncation region has zero mass");
    TruncMoments<Scalar, 1> out;
    out.log_m0 = t.log_mass;
    out.m0 = exp(t.log_mass);
    out.m1(0) = mu + s * t.m1;
    out.m2(0, 0) = mu * mu + Scalar(2) * mu * s * t.m1 + sigma2 * t.m2;
    return out;
}

template <typename Scalar>
TruncMoments<Scalar, 1> tn_moments_1d(Scalar mu, Scalar sigma2, const TruncRegion<Scalar, 1>& region) {
    return tn_moments_1d(mu, sigma2, region.lower(0), region.upper(0));
}

/// Bivariate truncated normal on a region that leaves one coordinate unbounded:
/// univariate truncation of the bounded coordinate composed with the Gaussian
/// regression of the free one.
template <typename Scalar>
TruncMoments<Scalar, 2> tn_moments_2d_halfplane(const Vec<Scalar, 2>& mu, const Mat<Scalar, 2, 2>& sigma,
                                                const TruncRegion<Scalar, 2>& region) {
    int k;
    if (region.lower(0) == -inf<Scalar>() && region.upper(0) == inf<Scalar>())
        k = 1;
    else if (region.lower(1) == -inf<Scalar>() && region.upper(1) == inf<Scalar>())
        k = 0;
    else
        throw std::invalid_argument("tn_moments_2d_halfplane: region bounds both coordinates");
    const int j = 1 - k;
    const auto wk = tn_moments_1d(mu(k), sigma(k, k), region.lower(k), region.upper(k));
    const Scalar slope = sigma(j, k) / sigma(k, k);
    const Scalar resid = sigma(j, j) - slope * sigma(j, k);
    if (!(resid > Scalar(0))) throw std::domain_error("tn_moments_2d: singular scale matrix");
    const Scalar c0 = mu(j) - slope * mu(k);
    const Scalar e1 = wk.m1(0), e2 = wk.m2(0, 0);
    TruncMoments<Scalar, 2> out;
    out.m0 = wk.m0;
    out.log_m0 = wk.log_m0;
    out.m1(k) = e1;
    out.m1(j) = c0 + slope * e1;
    out.m2(k, k) = e2;
    out.m2(j, j) = resid + c0 * c0 + Scalar(2) * c0 * slope * e1 + slope * slope * e2;
    out.m2(j, k) = out.m2(k, j) = c0 * e1 + slope * e2;
    return out;
}

/// Bivariate truncated normal on a general rectangle (Manjunath-Wilhelm boundary formulas).
template <typename Scalar>
TruncMoments<Scalar, 2> tn_moments_2d_rect(const Vec<Scalar, 2>& mu, const Mat<Scalar, 2, 2>& sigma,
                                           const TruncRegion<Scalar, 2>& region) {
    using std::exp;
    using std::isinf;
    using std::log;
    using std::sqrt;
    const Scalar det = sigma.determinant();
    if (!(sigma(0, 0) > Scalar(0) && det > Scalar(0))) throw std::domain_error("tn_moments_2d: singular scale matrix");
    Scalar alpha = binorm_rect(region, mu, sigma);
    if (alpha < Scalar(1e-6)) alpha = detail::rect_mass_quadrature(mu, sigma, region);
    if (!(alpha > Scalar(0)) || log(alpha) < Scalar(min_log_mass))
        throw ZeroMassError("tn_moments_2d: truncation region has zero mass");
    const Vec<Scalar, 2> a = region.lower - mu, b = region.upper - mu;

    // F_k(x): density of X_k at x times the conditional mass of the other coordinate
    auto f1 = [&](int k, Scalar x) -> Scalar {
        if (isinf(x)) return Scalar(0);
        const int j = 1 - k;
        const Scalar m = sigma(j, k) / sigma(k, k) * x;
        const Scalar s = sqrt(sigma(j, j) - sigma(j, k) * sigma(j, k) / sigma(k, k));
        return norm_pdf(x, Scalar(0), sigma(k, k)) * exp(log_norm_interval((a(j) - m) / s, (b(j) - m) / s));
    };
    auto xf1 = [&](int k, Scalar x) -> Scalar { return isinf(x) ? Scalar(0) : x * f1(k, x); };
    auto f2 = [&](Scalar x, Scalar y) -> Scalar {
        if (isinf(x) || isinf(y)) return Scalar(0);
        const Scalar q = (sigma(1, 1) * x * x - Scalar(2) * sigma(0, 1) * x * y + sigma(0, 0) * y * y) / det;
        return exp(-Scalar(0.5) * q) / (Scalar(2) * std::numbers::pi_v<Scalar> * sqrt(det));
    };
    // bivariate density in (x_k, x_q) order is symmetric in argument order for dim 2
    auto f2kq = [&](int k, Scalar xk, Scalar xq) { return k == 0 ? f2(xk, xq) : f2(xq, xk); };

    Vec<Scalar, 2> fa, fb;
    for (int k = 0; k < 2; ++k) {
        fa(k) = f1(k, a(k));
        fb(k) = f1(k, b(k));
    }
    Vec<Scalar, 2> m1 = sigma * (fa - fb) / alpha;

    Mat<Scalar, 2, 2> m2;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            Scalar acc = sigma(i, j);
            for (int k = 0; k < 2; ++k) {
                acc += sigma(i, k) * sigma(j, k) / sigma(k, k) * (xf1(k, a(k)) - xf1(k, b(k))) / alpha;
                const int q = 1 - k;
                const Scalar c = sigma(j, q) - sigma(k, q) * sigma(j, k) / sigma(k, k);
                const Scalar dd = (f2kq(k, a(k), a(q)) - f2kq(k, a(k), b(q))) - (f2kq(k, b(k), a(q)) - f2kq(k, b(k), b(q)));
                acc += sigma(i, k) * c * dd / alpha;
            }
            m2(i, j) = acc;
        }
    }
    m2 = (Scalar(0.5) * (m2 + m2.transpose())).eval();

    TruncMoments<Scalar, 2> out;
    out.m0 = alpha;
    out.log_m0 = log(alpha);
    out.m1 = mu + m1;
    out.m2 = m2 + mu * m1.transpose() + m1 * mu.transpose() + mu * mu.transpose();
    return out;
}

/// Bivariate truncated normal moments; exact half-plane route when one coordinate is free.
template <typename Scalar>
TruncMoments<Scalar, 2> tn_moments_2d(const Vec<Scalar, 2>& mu, const Mat<Scalar, 2, 2>& sigma,
                                      const TruncRegion<Scalar, 2>& region) {
    validate(region);
    const bool free0 = region.lower(0) == -inf<Scalar>() && region.upper(0) == inf<Scalar>();
    const bool free1 = region.lower(1) == -inf<Scalar>() && region.upper(1) == inf<Scalar>();
    if (free0 && free1) {
        TruncMoments<Scalar, 2> out{Scalar(1), Scalar(0), mu, sigma + mu * mu.transpose()};
        return out;
    }
    if (free0 || free1) return tn_moments_2d_halfplane(mu, sigma, region);
    return tn_moments_2d_rect(mu, sigma, region);
}

template <typename Scalar, int Dim>
TruncMoments<Scalar, Dim> tn_moments(const Vec<Scalar, Dim>& mu, const Mat<Scalar, Dim, Dim>& sigma,
                                     const TruncRegion<Scalar, Dim>& region) {
    if constexpr (Dim == 1)
        return tn_moments_1d(mu(0), sigma(0, 0), region);
    else
        return tn_moments_2d(mu, sigma, region);
}

/// Moments of a truncated contaminated normal Y together with the posterior-weighted
/// forms: `inflated` is E[P Y^(k)] with P the inflated-component posterior, and
/// `scaled` is E[U Y^(k)] = E[(nu2 P + (1-P)) Y^(k)].
template <typename Scalar, int Dim>
struct TcnMoments {
    Scalar mass;
    Scalar log_mass;
    Scalar weight;  // P(U = nu2 | Y in region)
    TruncMoments<Scalar, Dim> w_inflated;
    TruncMoments<Scalar, Dim> w_base;
    WeightedMoments<Scalar, Dim> plain;
    WeightedMoments<Scalar, Dim> inflated;
    WeightedMoments<Scalar, Dim> scaled;
};

template <typename Scalar, int Dim>
TcnMoments<Scalar, Dim> tcn_moments(const CnParams<Scalar, Dim>& p, const TruncRegion<Scalar, Dim>& region) {
    using std::exp;
    using std::log;
    TcnMoments<Scalar, Dim> out;
    out.w_base = tn_moments<Scalar, Dim>(p.mu, p.sigma, region);
    out.w_inflated = tn_moments<Scalar, Dim>(p.mu, p.sigma / p.nu2, region);
    const Scalar la = log(p.nu1) + out.w_inflated.log_m0;
    const Scalar lb = std::log1p(-p.nu1) + out.w_base.log_m0;
    out.log_mass = log_add_exp(la, lb);
    out.mass = exp(out.log_mass);
    const Scalar pi = exp(la - out.log_mass);
    out.weight = pi;
    const auto& a = out.w_inflated;
    const auto& b = out.w_base;
    out.plain = {Scalar(1), pi * a.m1 + (Scalar(1) - pi) * b.m1, pi * a.m2 + (Scalar(1) - pi) * b.m2};
    out.inflated = {pi, pi * a.m1, pi * a.m2};
    const Scalar sa = p.nu2 * pi, sb = Scalar(1) - pi;
    out.scaled = {sa + sb, sa * a.m1 + sb * b.m1, sa * a.m2 + sb * b.m2};
    return out;
}

/// Conditional moments of Y2 given Y1 = x1 restricted to region2 for a bivariate CN.
/// a_inflated / a_base are the unnormalized component weights of the conditional law.
template <typename Scalar>
struct TcnConditionalMoments {
    Scalar a_inflated;
    Scalar a_base;
    TcnMoments<Scalar, 1> moments;
};

template <typename Scalar>
TcnConditionalMoments<Scalar> tcn_conditional_moments(const Cn2<Scalar>& p, Scalar x1,
                                                      const TruncRegion<Scalar, 1>& region2) {
    using std::exp;
    const Cn1<Scalar> c = cn_conditional(x1, p);
    TcnConditionalMoments<Scalar> out;
    out.moments = tcn_moments(c, region2);
    out.a_inflated = c.nu1 * out.moments.w_inflated.m0;
    out.a_base = (Scalar(1) - c.nu1) * out.moments.w_base.m0;
    return out;
}

}  // namespace heckcn
