#pragma once

#include "heckcn/normal.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>

namespace heckcn {

template <typename Scalar, int Dim>
using Vec = Eigen::Matrix<Scalar, Dim, 1>;
template <typename Scalar, int Rows, int Cols = Rows>
using Mat = Eigen::Matrix<Scalar, Rows, Cols>;

/// Contaminated normal: nu1 * N(mu, sigma/nu2) + (1 - nu1) * N(mu, sigma).
template <typename Scalar, int Dim>
struct CnParams {
    static_assert(Dim == 1 || Dim == 2, "only univariate and bivariate CN laws are supported");
    Vec<Scalar, Dim> mu;
    Mat<Scalar, Dim, Dim> sigma;
    Scalar nu1;
    Scalar nu2;
};

template <typename Scalar>
using Cn1 = CnParams<Scalar, 1>;
template <typename Scalar>
using Cn2 = CnParams<Scalar, 2>;

template <typename Scalar>
Cn1<Scalar> cn_univariate(Scalar mu, Scalar sigma2, Scalar nu1, Scalar nu2) {
    Cn1<Scalar> p;
    p.mu(0) = mu;
    p.sigma(0, 0) = sigma2;
    p.nu1 = nu1;
    p.nu2 = nu2;
    return p;
}

/// Throws std::invalid_argument unless the parameters satisfy the identifiability constraints.
template <typename Scalar, int Dim>
void validate(const CnParams<Scalar, Dim>& p) {
    if (!(p.nu1 > Scalar(0) && p.nu1 < Scalar(1))) throw std::invalid_argument("CN: nu1 must lie in (0,1)");
    if (!(p.nu2 > Scalar(0) && p.nu2 < Scalar(1))) throw std::invalid_argument("CN: nu2 must lie in (0,1)");
    if (!p.mu.allFinite()) throw std::invalid_argument("CN: non-finite location");
    if ((p.sigma - p.sigma.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-12) * p.sigma.cwiseAbs().maxCoeff())
        throw std::invalid_argument("CN: scale matrix not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat<Scalar, Dim, Dim>> es(p.sigma, Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() > Scalar(0))) throw std::invalid_argument("CN: scale matrix not positive definite");
}

/// Axis-aligned box; infinite bounds allowed.
template <typename Scalar, int Dim>
struct TruncRegion {
    Vec<Scalar, Dim> lower;
    Vec<Scalar, Dim> upper;

    static TruncRegion whole() {
        return {Vec<Scalar, Dim>::Constant(-inf<Scalar>()), Vec<Scalar, Dim>::Constant(inf<Scalar>())};
    }
};

template <typename Scalar>
TruncRegion<Scalar, 1> interval(Scalar lo, Scalar hi) {
    TruncRegion<Scalar, 1> r;
    r.lower(0) = lo;
    r.upper(0) = hi;
    return r;
}

template <typename Scalar, int Dim>
void validate(const TruncRegion<Scalar, Dim>& r) {
    for (int j = 0; j < Dim; ++j)
        if (!(r.lower(j) < r.upper(j))) throw std::invalid_argument("TruncRegion: lower bound must be below upper bound");
}

/// Extended skew contaminated normal (univariate).
template <typename Scalar>
struct EscnParams {
    Scalar mu;
    Scalar sigma2;
    Scalar lambda;
    Scalar nu1;
    Scalar nu2;
    Scalar tau;
};

// ---------------------------------------------------------------- normal

template <typename Scalar, int Dim>
Scalar mvn_logpdf(const Vec<Scalar, Dim>& x, const Vec<Scalar, Dim>& mu, const Mat<Scalar, Dim, Dim>& sigma) {
    using std::log;
    Eigen::LLT<Mat<Scalar, Dim, Dim>> llt(sigma);
    if (llt.info() != Eigen::Success) throw std::domain_error("mvn_logpdf: scale matrix not positive definite");
    const Vec<Scalar, Dim> z = llt.matrixL().solve(x - mu);
    Scalar logdet = 0;
    for (int j = 0; j < Dim; ++j) logdet += log(llt.matrixL()(j, j));
    return -Scalar(0.5) * z.squaredNorm() - logdet - Scalar(Dim) * log_sqrt_2pi<Scalar>;
}

/// Bivariate normal rectangle probability P(lower <= X <= upper).
template <typename Scalar>
Scalar binorm_rect(const TruncRegion<Scalar, 2>& region, const Vec<Scalar, 2>& mu, const Mat<Scalar, 2, 2>& sigma) {
    using std::abs;
    using std::exp;
    using std::sqrt;
    validate(region);
    if (!(sigma(0, 0) > Scalar(0) && sigma(1, 1) > Scalar(0))) throw std::domain_error("binorm_rect: nonpositive variance");
    const Scalar s1 = sqrt(sigma(0, 0));
    const Scalar s2 = sqrt(sigma(1, 1));
    const Scalar r = sigma(0, 1) / (s1 * s2);
    if (!(abs(r) < Scalar(1))) throw std::domain_error("binorm_rect: degenerate correlation");
    const Scalar a1 = (region.lower(0) - mu(0)) / s1, b1 = (region.upper(0) - mu(0)) / s1;
    const Scalar a2 = (region.lower(1) - mu(1)) / s2, b2 = (region.upper(1) - mu(1)) / s2;
    const bool free1 = a1 == -inf<Scalar>() && b1 == inf<Scalar>();
    const bool free2 = a2 == -inf<Scalar>() && b2 == inf<Scalar>();
    if (free1) return exp(log_norm_interval(a2, b2));
    if (free2) return exp(log_norm_interval(a1, b1));
    const Scalar p = bvn_upper(a1, a2, r) - bvn_upper(b1, a2, r) - bvn_upper(a1, b2, r) + bvn_upper(b1, b2, r);
    return std::clamp(p, Scalar(0), Scalar(1));
}

/// Normal rectangle probability in one or two dimensions.
template <typename Scalar, int Dim>
Scalar norm_rect(const TruncRegion<Scalar, Dim>& region, const Vec<Scalar, Dim>& mu, const Mat<Scalar, Dim, Dim>& sigma) {
    using std::exp;
    using std::sqrt;
    if constexpr (Dim == 1) {
        validate(region);
        const Scalar s = sqrt(sigma(0, 0));
        return exp(log_norm_interval((region.lower(0) - mu(0)) / s, (region.upper(0) - mu(0)) / s));
    } else {
        return binorm_rect(region, mu, sigma);
    }
}

// ---------------------------------------------------------------- contaminated normal

template <typename Scalar, int Dim>
Scalar cn_logpdf(const Vec<Scalar, Dim>& x, const CnParams<Scalar, Dim>& p) {
    using std::log;
    const Scalar base = mvn_logpdf<Scalar, Dim>(x, p.mu, p.sigma);
    if (p.nu1 <= Scalar(0)) return base;
    const Scalar infl = mvn_logpdf<Scalar, Dim>(x, p.mu, p.sigma / p.nu2);
    if (p.nu1 >= Scalar(1)) return infl;
    return log_add_exp(log(p.nu1) + infl, std::log1p(-p.nu1) + base);
}

template <typename Scalar, int Dim>
Scalar cn_pdf(const Vec<Scalar, Dim>& x, const CnParams<Scalar, Dim>& p) {
    using std::exp;
    return exp(cn_logpdf(x, p));
}

template <typename Scalar>
Scalar cn_pdf(Scalar x, const Cn1<Scalar>& p) {
    return cn_pdf(Vec<Scalar, 1>(x), p);
}

/// Posterior probability that x came from the inflated component.
template <typename Scalar, int Dim>
Scalar cn_posterior_weight(const Vec<Scalar, Dim>& x, const CnParams<Scalar, Dim>& p) {
    using std::exp;
    using std::log;
    if (p.nu1 <= Scalar(0)) return Scalar(0);
    if (p.nu1 >= Scalar(1)) return Scalar(1);
    const Scalar la = log(p.nu1) + mvn_logpdf<Scalar, Dim>(x, p.mu, p.sigma / p.nu2);
    const Scalar lb = std::log1p(-p.nu1) + mvn_logpdf<Scalar, Dim>(x, p.mu, p.sigma);
    return exp(la - log_add_exp(la, lb));
}

template <typename Scalar, int Dim>
Scalar cn_rect(const TruncRegion<Scalar, Dim>& region, const CnParams<Scalar, Dim>& p) {
    const Scalar base = norm_rect<Scalar, Dim>(region, p.mu, p.sigma);
    if (p.nu1 <= Scalar(0)) return base;
    return p.nu1 * norm_rect<Scalar, Dim>(region, p.mu, p.sigma / p.nu2) + (Scalar(1) - p.nu1) * base;
}

/// log P(lo <= X <= hi) for a univariate CN law.
template <typename Scalar>
Scalar log_cn_interval(Scalar lo, Scalar hi, const Cn1<Scalar>& p) {
    using std::log;
    using std::sqrt;
    const Scalar s = sqrt(p.sigma(0, 0));
    const Scalar m = p.mu(0);
    const Scalar base = log_norm_interval((lo - m) / s, (hi - m) / s);
    if (p.nu1 <= Scalar(0)) return base;
    const Scalar r = sqrt(p.nu2);
    const Scalar infl = log_norm_interval(r * (lo - m) / s, r * (hi - m) / s);
    return log_add_exp(log(p.nu1) + infl, std::log1p(-p.nu1) + base);
}

template <typename Scalar>
Scalar cn_cdf(Scalar x, const Cn1<Scalar>& p) {
    using std::exp;
    return exp(log_cn_interval(-inf<Scalar>(), x, p));
}

/// Quantile of a univariate CN law: bisection on a bracket of +-12 inflated
/// scale units, then safeguarded secant steps.
template <typename Scalar>
Scalar cn_quantile(Scalar prob, const Cn1<Scalar>& p) {
    using std::abs;
    using std::sqrt;
    if (!(prob > Scalar(0) && prob < Scalar(1))) throw std::domain_error("cn_quantile: probability outside (0,1)");
    const Scalar scale = sqrt(p.sigma(0, 0) / (p.nu1 > Scalar(0) ? p.nu2 : Scalar(1)));
    const Scalar m = p.mu(0);
    Scalar lo = m - Scalar(12) * scale, hi = m + Scalar(12) * scale;
    auto g = [&](Scalar x) { return cn_cdf(x, p) - prob; };
    while (g(lo) > Scalar(0)) lo -= Scalar(12) * scale;
    while (g(hi) < Scalar(0)) hi += Scalar(12) * scale;
    const Scalar tol = Scalar(1e-12);
    for (int it = 0; it < 200 && hi - lo > Scalar(1e-4) * scale; ++it) {
        const Scalar mid = Scalar(0.5) * (lo + hi);
        (g(mid) < Scalar(0) ? lo : hi) = mid;
    }
    Scalar x0 = lo, x1 = hi, g0 = g(lo), g1 = g(hi);
    for (int it = 0; it < 100; ++it) {
        if (g1 == g0) break;
        Scalar x2 = x1 - g1 * (x1 - x0) / (g1 - g0);
        if (!(x2 > lo && x2 < hi)) x2 = Scalar(0.5) * (lo + hi);
        const Scalar g2 = g(x2);
        (g2 < Scalar(0) ? lo : hi) = x2;
        x0 = x1, g0 = g1, x1 = x2, g1 = g2;
        if (abs(g2) < Scalar(1e-15) || abs(x1 - x0) < tol * (Scalar(1) + abs(x1))) break;
    }
    return x1;
}

/// Marginal law of coordinate j of a bivariate CN.
template <typename Scalar>
Cn1<Scalar> cn_marginal(const Cn2<Scalar>& p, int j) {
    return cn_univariate(p.mu(j), p.sigma(j, j), p.nu1, p.nu2);
}

/// Conditional law of X2 given X1 = x1: a univariate CN whose mixing weight is
/// the posterior probability of the inflated component given x1.
template <typename Scalar>
Cn1<Scalar> cn_conditional(Scalar x1, const Cn2<Scalar>& p) {
    if (!(p.sigma(0, 0) > Scalar(0))) throw std::domain_error("cn_conditional: singular marginal scale");
    const Scalar slope = p.sigma(1, 0) / p.sigma(0, 0);
    const Scalar mu = p.mu(1) + slope * (x1 - p.mu(0));
    const Scalar s22 = p.sigma(1, 1) - slope * p.sigma(0, 1);
    const Scalar omega = cn_posterior_weight(Vec<Scalar, 1>(x1), cn_marginal(p, 0));
    return cn_univariate(mu, s22, omega, p.nu2);
}

// ---------------------------------------------------------------- skew families

template <typename Scalar>
Scalar escn_log_normalizer(const EscnParams<Scalar>& p) {
    using std::log;
    using std::sqrt;
    const Scalar t = p.tau / sqrt(Scalar(1) + p.lambda * p.lambda);
    const Scalar base = log_norm_cdf(t);
    if (p.nu1 <= Scalar(0)) return base;
    return log_add_exp(log(p.nu1) + log_norm_cdf(sqrt(p.nu2) * t), std::log1p(-p.nu1) + base);
}

template <typename Scalar>
Scalar escn_logpdf(Scalar y, const EscnParams<Scalar>& p) {
    using std::log;
    using std::sqrt;
    const Scalar delta = p.lambda * (y - p.mu) / sqrt(p.sigma2);
    Scalar num = std::log1p(-p.nu1) + norm_logpdf(y, p.mu, p.sigma2) + log_norm_cdf(p.tau + delta);
    if (p.nu1 > Scalar(0))
        num = log_add_exp(num, log(p.nu1) + norm_logpdf(y, p.mu, p.sigma2 / p.nu2) +
                                   log_norm_cdf(sqrt(p.nu2) * (p.tau + delta)));
    return num - escn_log_normalizer(p);
}

template <typename Scalar>
Scalar escn_pdf(Scalar y, const EscnParams<Scalar>& p) {
    using std::exp;
    return exp(escn_logpdf(y, p));
}

template <typename Scalar>
Scalar escn_mean(const EscnParams<Scalar>& p) {
    using std::exp;
    using std::log;
    using std::sqrt;
    const Scalar v = Scalar(1) + p.lambda * p.lambda;
    Scalar eta = std::log1p(-p.nu1) + norm_logpdf(p.tau, Scalar(0), v);
    if (p.nu1 > Scalar(0))
        eta = log_add_exp(eta, log(p.nu1 / p.nu2) + norm_logpdf(p.tau, Scalar(0), v / p.nu2));
    return p.mu + exp(eta - escn_log_normalizer(p)) * sqrt(p.sigma2) * p.lambda;
}

/// Extended skew normal: the nu1 -> 0 member of the ESCN family.
template <typename Scalar>
Scalar esn_pdf(Scalar y, Scalar mu, Scalar sigma2, Scalar lambda, Scalar tau) {
    return escn_pdf(y, EscnParams<Scalar>{mu, sigma2, lambda, Scalar(0), Scalar(1), tau});
}

template <typename Scalar>
Scalar esn_mean(Scalar mu, Scalar sigma2, Scalar lambda, Scalar tau) {
    return escn_mean(EscnParams<Scalar>{mu, sigma2, lambda, Scalar(0), Scalar(1), tau});
}

// ---------------------------------------------------------------- sampling

template <typename Scalar, int Dim, typename Rng>
Vec<Scalar, Dim> mvn_sample(Rng& rng, const Vec<Scalar, Dim>& mu, const Mat<Scalar, Dim, Dim>& sigma) {
    std::normal_distribution<Scalar> nd;
    Vec<Scalar, Dim> z;
    for (int j = 0; j < Dim; ++j) z(j) = nd(rng);
    Eigen::LLT<Mat<Scalar, Dim, Dim>> llt(sigma);
    if (llt.info() != Eigen::Success) throw std::domain_error("mvn_sample: scale matrix not positive definite");
    return mu + llt.matrixL() * z;
}

/// Draws from a CN law through its latent scale U in {nu2, 1}; `inflated` reports U = nu2.
template <typename Scalar, int Dim, typename Rng>
Vec<Scalar, Dim> cn_sample(Rng& rng, const CnParams<Scalar, Dim>& p, bool* inflated = nullptr) {
    using std::sqrt;
    std::uniform_real_distribution<Scalar> unif;
    const bool u_small = unif(rng) < p.nu1;
    if (inflated) *inflated = u_small;
    const Vec<Scalar, Dim> z = mvn_sample<Scalar, Dim>(rng, Vec<Scalar, Dim>::Zero(), p.sigma);
    return p.mu + (u_small ? z / sqrt(p.nu2) : z);
}

/// Bivariate slash draw mu + u^(-1/q) z with u ~ Uniform(0,1) shared across coordinates.
template <typename Scalar, typename Rng>
Vec<Scalar, 2> slash_sample(Rng& rng, Scalar q, const Vec<Scalar, 2>& mu, const Mat<Scalar, 2, 2>& sigma) {
    using std::pow;
    if (!(q > Scalar(0))) throw std::domain_error("slash_sample: q must be positive");
    std::uniform_real_distribution<Scalar> unif;
    Scalar u;
    do u = unif(rng);
    while (u == Scalar(0));
    const Vec<Scalar, 2> z = mvn_sample<Scalar, 2>(rng, Vec<Scalar, 2>::Zero(), sigma);
    return mu + pow(u, -Scalar(1) / q) * z;
}

}  // namespace heckcn
