#include "heckcn/inference.hpp"

#include "heckcn/dist.hpp"
#include "heckcn/normal.hpp"
#include "heckcn/rng.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace heckcn {

std::string to_string(UnitClass c) {
    switch (c) {
        case UnitClass::Outlier: return "outlier";
        case UnitClass::Inlier: return "inlier";
        default: return "good";
    }
}

Eigen::Matrix2d dsigma_dsigma(const Theta& t) {
    Eigen::Matrix2d b;
    b << 2 * t.sigma(), t.rho, t.rho, 0;
    return b;
}

Eigen::Matrix2d dsigma_drho(const Theta& t) {
    Eigen::Matrix2d d;
    d << 0, t.sigma(), t.sigma(), 0;
    return d;
}

std::vector<std::string> parameter_names(const SelectionData& data, ModelKind kind, bool nu_free) {
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < data.p(); ++j)
        names.push_back("beta_" + (data.x_names.empty() ? "x" + std::to_string(j) : data.x_names[j]));
    for (Eigen::Index j = 0; j < data.q(); ++j)
        names.push_back("gamma_" + (data.w_names.empty() ? "w" + std::to_string(j) : data.w_names[j]));
    names.push_back("sigma");
    names.push_back("rho");
    if (kind == ModelKind::SLcn && nu_free) {
        names.push_back("nu1");
        names.push_back("nu2");
    }
    return names;
}

int parameter_count(const SelectionData& data, ModelKind kind, bool nu_free) {
    return static_cast<int>(data.p() + data.q() + 2 + (kind == ModelKind::SLcn && nu_free ? 2 : 0));
}

Eigen::VectorXd score_vector(const Theta& theta, const SelectionData& data, const EStepQuantities& q, Eigen::Index i,
                             ModelKind kind, bool nu_free) {
    const bool cn = kind == ModelKind::SLcn;
    const bool with_nu = cn && nu_free;
    const double nu2 = cn ? theta.nu2 : 1.0;
    const Eigen::Index p = data.p(), r = data.q();
    const auto& u = q.units[i];
    const Eigen::Vector2d mu = unit_mean(data, theta, i);
    const Eigen::Matrix2d Si = theta.Sigma().inverse();
    const double w = 1 + (nu2 - 1) * u.eps;
    const Eigen::Vector2d z = u.y + (nu2 - 1) * u.eps_y;
    const Eigen::Vector2d d = Si * (z - w * mu);
    const Eigen::Matrix2d G = q.Gamma(i, mu, nu2);
    const Eigen::Matrix2d B = dsigma_dsigma(theta), D = dsigma_drho(theta);

    Eigen::VectorXd s(p + r + 2 + (with_nu ? 2 : 0));
    s.head(p) = data.x.row(i).transpose() * d(0);
    s.segment(p, r) = data.w.row(i).transpose() * d(1);
    s(p + r) = -0.5 * (Si * B).trace() + 0.5 * (G * Si * B * Si).trace();
    s(p + r + 1) = -0.5 * (Si * D).trace() + 0.5 * (G * Si * D * Si).trace();
    if (with_nu) {
        s(p + r + 2) = u.eps / theta.nu1 - (1 - u.eps) / (1 - theta.nu1);
        s(p + r + 3) = u.eps / theta.nu2 - 0.5 * (q.E2(i, mu) * Si).trace();
    }
    return s;
}

Eigen::MatrixXd score_matrix(const Theta& theta, const SelectionData& data, const EStepQuantities& q, ModelKind kind,
                             bool nu_free) {
    const int k = parameter_count(data, kind, nu_free);
    Eigen::MatrixXd s(data.n(), k);
    for (Eigen::Index i = 0; i < data.n(); ++i) s.row(i) = score_vector(theta, data, q, i, kind, nu_free).transpose();
    return s;
}

Eigen::MatrixXd empirical_information(const Eigen::MatrixXd& scores) {
    const Eigen::VectorXd S = scores.colwise().sum().transpose();
    Eigen::MatrixXd info = scores.transpose() * scores - S * S.transpose() / double(scores.rows());
    return 0.5 * (info + info.transpose());
}

Eigen::MatrixXd empirical_information(const Theta& theta, const SelectionData& data, ModelKind kind, bool nu_free) {
    const auto q = e_step(theta, data, kind);
    return empirical_information(score_matrix(theta, data, q, kind, nu_free));
}

StandardErrors standard_errors(const Eigen::MatrixXd& info) {
    if (!info.allFinite()) throw EstimationError("standard_errors: information matrix is not finite");
    StandardErrors out;
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() == Eigen::Success) {
        out.cov = llt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
    } else {
        out.positive_definite = false;
        out.pseudo_inverse = true;
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(info);
        if (cod.rank() == 0) throw EstimationError("standard_errors: information matrix is singular");
        out.cov = cod.pseudoInverse();
    }
    out.se = out.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    return out;
}

InformationCriteria information_criteria(double loglik, int k, long n) {
    return {-2 * loglik + 2 * k, -2 * loglik + k * std::log(double(n))};
}

std::vector<Estimate> FitResult::estimates() const {
    std::vector<double> values;
    for (double b : theta.beta) values.push_back(b);
    for (double g : theta.gamma) values.push_back(g);
    values.push_back(theta.sigma());
    values.push_back(theta.rho);
    if (kind == ModelKind::SLcn && nu_free) {
        values.push_back(theta.nu1);
        values.push_back(theta.nu2);
    }
    std::vector<Estimate> out;
    auto add = [&](const std::string& name, double v, double s) { out.push_back({name, v, s, v - 1.96 * s, v + 1.96 * s}); };
    for (std::size_t j = 0; j < values.size(); ++j) {
        const double s = j < static_cast<std::size_t>(se.size()) ? se(j) : std::nan("");
        add(param_names[j], values[j], s);
        if (param_names[j] == "sigma") add("sigma2", theta.sigma2, 2 * theta.sigma() * s);
    }
    return out;
}

std::optional<Estimate> FitResult::estimate(const std::string& name) const {
    for (const auto& e : estimates())
        if (e.name == name) return e;
    return std::nullopt;
}

std::vector<UnitClass> classify_units(double nu1_hat, const Eigen::VectorXd& eps_hat) {
    std::vector<UnitClass> out(eps_hat.size(), UnitClass::Good);
    for (Eigen::Index i = 0; i < eps_hat.size(); ++i) {
        if (nu1_hat <= 0.5 && eps_hat(i) > 0.5) out[i] = UnitClass::Outlier;
        if (nu1_hat > 0.5 && eps_hat(i) < 0.5) out[i] = UnitClass::Inlier;
    }
    return out;
}

FitResult make_fit_result(const EcmFit& fit, const SelectionData& data, const EcmOptions& opts,
                          std::optional<int> k_override) {
    FitResult r;
    r.kind = fit.kind;
    r.theta = fit.theta;
    r.loglik = fit.loglik;
    r.n = data.n();
    r.nu_free = fit.kind == ModelKind::SLcn && !opts.fix_nu;
    r.k = k_override ? *k_override : parameter_count(data, fit.kind, r.nu_free);
    const auto ic = information_criteria(r.loglik, r.k, r.n);
    r.aic = ic.aic;
    r.bic = ic.bic;
    r.param_names = parameter_names(data, fit.kind, r.nu_free);
    r.trace = fit.trace;
    r.warnings = fit.warnings;
    r.info = empirical_information(score_matrix(fit.theta, data, fit.estep, fit.kind, r.nu_free));
    try {
        const auto se = standard_errors(r.info);
        r.se = se.se;
        r.info_pd = se.positive_definite;
        r.pseudo_inverse = se.pseudo_inverse;
        if (se.pseudo_inverse) r.warnings.push_back("information matrix not positive definite; pseudo-inverse used");
    } catch (const EstimationError& e) {
        r.se = Eigen::VectorXd::Constant(r.info.rows(), std::nan(""));
        r.info_pd = false;
        r.warnings.push_back(e.what());
    }
    r.eps_hat = fit.estep.eps();
    if (fit.kind == ModelKind::SLcn)
        r.classes = classify_units(fit.theta.nu1, r.eps_hat);
    else
        r.classes.assign(data.n(), UnitClass::Good);
    return r;
}

FitResult fit_model(const SelectionData& data, ModelKind kind, const EcmOptions& opts, std::optional<int> k_override) {
    return make_fit_result(fit(data, kind, opts), data, opts, k_override);
}

LrTest lr_test(double loglik_null, int k_null, double loglik_alt, int k_alt) {
    if (loglik_alt < loglik_null - 1e-6)
        throw NestingError("lr_test: alternative log-likelihood below the null; models are not nested or a fit failed");
    const int df = k_alt - k_null;
    const double stat = std::max(0.0, 2 * (loglik_alt - loglik_null));
    if (df <= 0) return {stat, df, 1.0};
    return {stat, df, stat == 0 ? 1.0 : boost::math::gamma_q(0.5 * df, 0.5 * stat)};
}

LrTest lr_test(const FitResult& null, const FitResult& alt) { return lr_test(null.loglik, null.k, alt.loglik, alt.k); }

// ---------------------------------------------------------------- residuals

namespace {

Cn2<double> error_law(const Eigen::Vector2d& mu, const Theta& t, ModelKind kind) {
    Cn2<double> p;
    p.mu = mu;
    p.sigma = t.Sigma();
    p.nu1 = kind == ModelKind::SLcn ? t.nu1 : 0.0;
    p.nu2 = kind == ModelKind::SLcn ? t.nu2 : 1.0;
    return p;
}

double upper_joint(double v, const Eigen::Vector2d& mu, const Theta& t, ModelKind kind) {
    TruncRegion<double, 2> r;
    r.lower << v, 0;
    r.upper << inf<double>(), inf<double>();
    return cn_rect(r, error_law(mu, t, kind));
}

}  // namespace

double joint_outcome_cdf(double v, const Eigen::Vector2d& mu, const Theta& t, ModelKind kind) {
    TruncRegion<double, 2> r;
    r.lower << -inf<double>(), 0;
    r.upper << v, inf<double>();
    return cn_rect(r, error_law(mu, t, kind));
}

double censoring_probability(const Eigen::Vector2d& mu, const Theta& t, ModelKind kind) {
    if (kind == ModelKind::SLn) return norm_cdf(-mu(1));
    return t.nu1 * norm_cdf(-std::sqrt(t.nu2) * mu(1)) + (1 - t.nu1) * norm_cdf(-mu(1));
}

Eigen::VectorXd QuantileResiduals::selected(const SelectionData& data) const {
    Eigen::VectorXd out(data.n_selected());
    for (Eigen::Index i = 0, r = 0; i < data.n(); ++i)
        if (data.selected(i)) out(r++) = residual(i);
    return out;
}

QuantileResiduals quantile_residuals(const Theta& theta, const SelectionData& data, ModelKind kind,
                                     const ResidualOptions& opts) {
    constexpr double lo_clamp = 1e-15, hi_clamp = 1 - 1e-15;
    QuantileResiduals out;
    out.residual.resize(data.n());
    out.cdf.resize(data.n());
    auto rng = substream(opts.seed, 0);
    std::uniform_real_distribution<double> unif(0, 1);
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        const Eigen::Vector2d mu = unit_mean(data, theta, i);
        const double p0 = censoring_probability(mu, theta, kind);
        double lower, upper;  // F and 1 - F, each computed directly
        if (data.selected(i)) {
            const double a = joint_outcome_cdf(data.v1(i), mu, theta, kind);
            const double b = upper_joint(data.v1(i), mu, theta, kind);
            if (opts.scale == ResidualScale::Conditional) {
                const double tot = a + b;
                lower = a / tot;
                upper = b / tot;
            } else {
                lower = a;
                upper = 1 - a;
            }
        } else {
            lower = opts.randomized ? unif(rng) * p0 : p0;
            upper = 1 - lower;
        }
        double f = lower;
        double r;
        if (lower <= 0.5) {
            if (lower < lo_clamp) {
                f = lo_clamp;
                out.clamped.push_back(i);
            }
            r = norm_quantile(f);
        } else {
            double g = upper;
            if (g < 1 - hi_clamp) {
                g = 1 - hi_clamp;
                out.clamped.push_back(i);
            }
            f = 1 - g;
            r = -norm_quantile(g);
        }
        out.cdf(i) = f;
        out.residual(i) = r;
    }
    return out;
}

SelectionData simulate_at(const Theta& theta, const SelectionData& data, ModelKind kind, std::uint64_t seed,
                          std::uint64_t stream) {
    auto rng = substream(seed, stream);
    SelectionData d = data;
    for (Eigen::Index i = 0; i < d.n(); ++i) {
        const Eigen::Vector2d y = cn_sample(rng, error_law(unit_mean(data, theta, i), theta, kind));
        d.c(i) = y(1) > 0;
        d.v1(i) = d.c(i) ? y(0) : std::numeric_limits<double>::quiet_NaN();
    }
    return d;
}

namespace {

// Sample quantile at plotting position p, matching positions (j - 0.375) / (m + 0.25).
double quantile_at(const std::vector<double>& sorted, double p) {
    const double m = double(sorted.size());
    const double h = std::clamp(p * (m + 0.25) + 0.375, 1.0, m) - 1;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - double(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::vector<EnvelopeRow> residual_envelope(const Theta& theta, const SelectionData& data, ModelKind kind, int n_sim,
                                           double level, std::uint64_t seed, const ResidualOptions& opts) {
    if (n_sim < 19) throw std::invalid_argument("residual_envelope: n_sim must be at least 19");
    if (!(level > 0 && level <= 1)) throw std::invalid_argument("residual_envelope: level must lie in (0,1]");
    const auto obs = quantile_residuals(theta, data, kind, opts);
    std::vector<std::pair<double, Eigen::Index>> sel;
    for (Eigen::Index i = 0; i < data.n(); ++i)
        if (data.selected(i)) sel.emplace_back(obs.residual(i), i);
    std::sort(sel.begin(), sel.end());
    const auto m = sel.size();
    std::vector<double> probs(m);
    for (std::size_t j = 0; j < m; ++j) probs[j] = (double(j + 1) - 0.375) / (double(m) + 0.25);

    std::vector<std::vector<double>> sims(m, std::vector<double>(n_sim));
    for (int s = 0; s < n_sim; ++s) {
        const auto d = simulate_at(theta, data, kind, seed, static_cast<std::uint64_t>(s) + 1);
        const Eigen::VectorXd r = quantile_residuals(theta, d, kind, opts).selected(d);
        std::vector<double> v(r.data(), r.data() + r.size());
        if (v.empty()) continue;
        std::sort(v.begin(), v.end());
        for (std::size_t j = 0; j < m; ++j) sims[j][s] = quantile_at(v, probs[j]);
    }
    const double alpha = 1 - level;
    const int k = std::max(1, static_cast<int>(std::floor(alpha / 2 * (n_sim + 1))));
    std::vector<EnvelopeRow> rows(m);
    for (std::size_t j = 0; j < m; ++j) {
        auto& v = sims[j];
        std::sort(v.begin(), v.end());
        rows[j] = {sel[j].second, sel[j].first, norm_quantile(probs[j]), v[k - 1], v[n_sim - k]};
    }
    return rows;
}

double kolmogorov_pvalue(double d, long n) {
    const double sn = std::sqrt(double(n));
    const double lam = (sn + 0.12 + 0.11 / sn) * d;
    if (lam <= 0) return 1.0;
    double q;
    if (lam < 1.18) {
        // theta-function form converges fast for small arguments
        const double pi2 = std::numbers::pi * std::numbers::pi;
        double s = 0;
        for (int k = 1; k <= 20; ++k) s += std::exp(-(2 * k - 1) * (2 * k - 1) * pi2 / (8 * lam * lam));
        q = 1 - std::sqrt(2 * std::numbers::pi) / lam * s;
    } else {
        double s = 0;
        for (int k = 1; k <= 100; ++k) s += (k % 2 ? 1 : -1) * std::exp(-2.0 * k * k * lam * lam);
        q = 2 * s;
    }
    return std::clamp(q, 0.0, 1.0);
}

KsTest ks_test_normal(const Eigen::VectorXd& x) {
    if (x.size() == 0) throw std::invalid_argument("ks_test_normal: empty sample");
    std::vector<double> v(x.data(), x.data() + x.size());
    std::sort(v.begin(), v.end());
    const double n = double(v.size());
    double d = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double f = norm_cdf(v[i]);
        d = std::max({d, double(i + 1) / n - f, f - double(i) / n});
    }
    return {d, kolmogorov_pvalue(d, static_cast<long>(v.size()))};
}

}  // namespace heckcn
