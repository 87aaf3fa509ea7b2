#pragma once

#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace heckcn {

template <typename Scalar>
inline constexpr Scalar log_sqrt_2pi = Scalar(0.91893853320467274178032973640561764L);

template <typename Scalar>
Scalar inf() {
    return std::numeric_limits<Scalar>::infinity();
}

/// Standard normal density phi(z).
template <typename Scalar>
Scalar std_norm_pdf(Scalar z) {
    using std::exp;
    return exp(-Scalar(0.5) * z * z - log_sqrt_2pi<Scalar>);
}

template <typename Scalar>
Scalar std_norm_logpdf(Scalar z) {
    return -Scalar(0.5) * z * z - log_sqrt_2pi<Scalar>;
}

template <typename Scalar>
Scalar norm_logpdf(Scalar x, Scalar mu, Scalar sigma2) {
    using std::log;
    if (!(sigma2 > Scalar(0))) throw std::domain_error("norm_logpdf: variance must be positive");
    const Scalar d = x - mu;
    return -Scalar(0.5) * d * d / sigma2 - Scalar(0.5) * log(sigma2) - log_sqrt_2pi<Scalar>;
}

template <typename Scalar>
Scalar norm_pdf(Scalar x, Scalar mu, Scalar sigma2) {
    using std::exp;
    return exp(norm_logpdf(x, mu, sigma2));
}

/// Mills ratio R(z) = Q(z)/phi(z) for z >= 0, where Q is the upper tail.
template <typename Scalar>
Scalar mills_ratio(Scalar z) {
    using std::erfc;
    using std::exp;
    if (z < Scalar(26)) {
        const Scalar q = Scalar(0.5) * erfc(z / std::numbers::sqrt2_v<Scalar>);
        return q * exp(Scalar(0.5) * z * z + log_sqrt_2pi<Scalar>);
    }
    // continued fraction z + 1/(z + 2/(z + ...)), evaluated bottom-up
    Scalar t = z;
    for (int k = 60; k >= 1; --k) t = z + Scalar(k) / t;
    return Scalar(1) / t;
}

template <typename Scalar>
Scalar norm_cdf(Scalar z) {
    using std::erfc;
    if (z == inf<Scalar>()) return Scalar(1);
    if (z == -inf<Scalar>()) return Scalar(0);
    return Scalar(0.5) * erfc(-z / std::numbers::sqrt2_v<Scalar>);
}

template <typename Scalar>
Scalar log_norm_cdf(Scalar z) {
    using std::erfc;
    using std::log;
    using std::log1p;
    if (z == inf<Scalar>()) return Scalar(0);
    if (z == -inf<Scalar>()) return -inf<Scalar>();
    if (z > Scalar(5)) return log1p(-Scalar(0.5) * erfc(z / std::numbers::sqrt2_v<Scalar>));
    if (z > Scalar(-26)) return log(Scalar(0.5) * erfc(-z / std::numbers::sqrt2_v<Scalar>));
    return std_norm_logpdf(z) + log(mills_ratio(-z));
}

template <typename Scalar>
Scalar norm_cdf(Scalar x, Scalar mu, Scalar sigma2) {
    using std::sqrt;
    return norm_cdf((x - mu) / sqrt(sigma2));
}

/// Inverse standard normal cdf.
template <typename Scalar>
Scalar norm_quantile(Scalar p) {
    if (!(p >= Scalar(0) && p <= Scalar(1))) throw std::domain_error("norm_quantile: p outside [0,1]");
    if (p == Scalar(0)) return -inf<Scalar>();
    if (p == Scalar(1)) return inf<Scalar>();
    return -std::numbers::sqrt2_v<Scalar> * boost::math::erfc_inv(Scalar(2) * p);
}

/// log(exp(a) + exp(b)) without overflow.
template <typename Scalar>
Scalar log_add_exp(Scalar a, Scalar b) {
    using std::exp;
    using std::log1p;
    if (a < b) std::swap(a, b);
    if (b == -inf<Scalar>()) return a;
    return a + log1p(exp(b - a));
}

/// log(exp(a) - exp(b)) for a >= b.
template <typename Scalar>
Scalar log_sub_exp(Scalar a, Scalar b) {
    using std::exp;
    using std::log;
    using std::log1p;
    if (b == -inf<Scalar>()) return a;
    const Scalar d = b - a;
    if (d > Scalar(-0.693)) return a + log(-std::expm1(d));
    return a + log1p(-exp(d));
}

/// log of P(lo <= Z <= hi) for standard normal Z, stable in both tails.
template <typename Scalar>
Scalar log_norm_interval(Scalar lo, Scalar hi) {
    using std::erf;
    using std::log;
    if (!(lo < hi)) return -inf<Scalar>();
    if (lo >= Scalar(0)) return log_sub_exp(log_norm_cdf(-lo), log_norm_cdf(-hi));
    if (hi <= Scalar(0)) return log_sub_exp(log_norm_cdf(hi), log_norm_cdf(lo));
    // interval straddles zero: erf differences keep full precision
    const Scalar a = lo == -inf<Scalar>() ? Scalar(-1) : erf(lo / std::numbers::sqrt2_v<Scalar>);
    const Scalar b = hi == inf<Scalar>() ? Scalar(1) : erf(hi / std::numbers::sqrt2_v<Scalar>);
    return log(Scalar(0.5) * (b - a));
}

namespace detail {

// Gauss-Legendre nodes/weights (half sets) used by the Genz bivariate routine.
inline constexpr double gl6_w[3] = {0.1713244923791705, 0.3607615730481384, 0.4679139345726904};
inline constexpr double gl6_x[3] = {0.9324695142031522, 0.6612093864662647, 0.2386191860831970};
inline constexpr double gl12_w[6] = {0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                                     0.2031674267230659,  0.2334925365383547, 0.2491470458134029};
inline constexpr double gl12_x[6] = {0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                                     0.5873179542866171, 0.3678314989981802, 0.1252334085114692};
inline constexpr double gl20_w[10] = {0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                                      0.08327674157670475, 0.1019301198172404,  0.1181945319615184,
                                      0.1316886384491766,  0.1420961093183821,  0.1491729864726037,
                                      0.1527533871307259};
inline constexpr double gl20_x[10] = {0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                                      0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                                      0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                                      0.07652652113349733};

}  // namespace detail

/// Upper orthant probability P(Z1 > h, Z2 > k) for standard bivariate normal with
/// correlation r (Genz 2004, Drezner-Wesolowsky with Gauss-Legendre quadrature).
template <typename Scalar>
Scalar bvn_upper(Scalar h, Scalar k, Scalar r) {
    using std::abs;
    using std::asin;
    using std::exp;
    using std::max;
    using std::sin;
    using std::sqrt;
    constexpr Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
    const Scalar pinf = inf<Scalar>();
    if (h == pinf || k == pinf) return Scalar(0);
    if (h == -pinf) return k == -pinf ? Scalar(1) : norm_cdf(-k);
    if (k == -pinf) return norm_cdf(-h);
    if (r == Scalar(0)) return norm_cdf(-h) * norm_cdf(-k);

    const double* w;
    const double* x;
    int m;
    if (abs(r) < Scalar(0.3)) {
        w = detail::gl6_w, x = detail::gl6_x, m = 3;
    } else if (abs(r) < Scalar(0.75)) {
        w = detail::gl12_w, x = detail::gl12_x, m = 6;
    } else {
        w = detail::gl20_w, x = detail::gl20_x, m = 10;
    }

    Scalar hk = h * k;
    Scalar bvn = 0;
    if (abs(r) < Scalar(0.925)) {
        const Scalar hs = (h * h + k * k) / Scalar(2);
        const Scalar asr = asin(r) / Scalar(2);
        for (int i = 0; i < m; ++i) {
            for (int sgn : {-1, 1}) {
                const Scalar sn = sin(asr * (Scalar(1) + Scalar(sgn) * Scalar(x[i])));
                bvn += Scalar(w[i]) * exp((sn * hk - hs) / (Scalar(1) - sn * sn));
            }
        }
        bvn = bvn * asr / two_pi + norm_cdf(-h) * norm_cdf(-k);
    } else {
        if (r < Scalar(0)) {
            k = -k;
            hk = -hk;
        }
        if (abs(r) < Scalar(1)) {
            const Scalar as = (Scalar(1) - r) * (Scalar(1) + r);
            Scalar a = sqrt(as);
            const Scalar bs = (h - k) * (h - k);
            const Scalar c = (Scalar(4) - hk) / Scalar(8);
            const Scalar d = (Scalar(12) - hk) / Scalar(80);
            Scalar asr = -(bs / as + hk) / Scalar(2);
            if (asr > Scalar(-100))
                bvn = a * exp(asr) *
                      (Scalar(1) - c * (bs - as) * (Scalar(1) - d * bs) / Scalar(3) + c * d * as * as);
            if (hk > Scalar(-100)) {
                const Scalar b = sqrt(bs);
                const Scalar sp = sqrt(two_pi) * norm_cdf(-b / a);
                bvn -= exp(-hk / Scalar(2)) * sp * b * (Scalar(1) - c * bs * (Scalar(1) - d * bs) / Scalar(3));
            }
            a /= Scalar(2);
            Scalar acc = 0;
            for (int i = 0; i < m; ++i) {
                for (int sgn : {-1, 1}) {
                    const Scalar xi = a * (Scalar(1) + Scalar(sgn) * Scalar(x[i]));
                    const Scalar xs = xi * xi;
                    const Scalar asr_i = -(bs / xs + hk) / Scalar(2);
                    if (asr_i > Scalar(-100)) {
                        const Scalar sp = Scalar(1) + c * xs * (Scalar(1) + Scalar(5) * d * xs);
                        const Scalar rs = sqrt(Scalar(1) - xs);
                        const Scalar ep = exp(-(hk / Scalar(2)) * xs / ((Scalar(1) + rs) * (Scalar(1) + rs))) / rs;
                        acc += Scalar(w[i]) * exp(asr_i) * (sp - ep);
                    }
                }
            }
            bvn = (a * acc - bvn) / two_pi;
        }
        if (r > Scalar(0)) {
            bvn += norm_cdf(-max(h, k));
        } else if (h >= k) {
            bvn = -bvn;
        } else {
            const Scalar l = h < Scalar(0) ? norm_cdf(k) - norm_cdf(h) : norm_cdf(-h) - norm_cdf(-k);
            bvn = l - bvn;
        }
    }
    return std::clamp(bvn, Scalar(0), Scalar(1));
}

}  // namespace heckcn
