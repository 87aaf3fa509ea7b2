#include "heckcn/model.hpp"

#include <cmath>
#include <sstream>

namespace heckcn {

namespace {

// Log contribution of one unit given its linear predictors.
double unit_term(bool selected, double v, double mu1, double mu2, const Theta& t, ModelKind kind) {
    const bool cn = kind == ModelKind::SLcn;
    if (!selected) {
        const double base = log_norm_cdf(-mu2);
        if (!cn) return base;
        return log_add_exp(std::log(t.nu1) + log_norm_cdf(-std::sqrt(t.nu2) * mu2), std::log1p(-t.nu1) + base);
    }
    const double s = t.sigma();
    const double st = std::sqrt(1 - t.rho * t.rho);
    const double mt = (mu2 + t.rho / s * (v - mu1)) / st;
    const double base = norm_logpdf(v, mu1, t.sigma2) + log_norm_cdf(mt);
    if (!cn) return base;
    const double infl = std::log(t.nu1) + norm_logpdf(v, mu1, t.sigma2 / t.nu2) + log_norm_cdf(std::sqrt(t.nu2) * mt);
    return log_add_exp(infl, std::log1p(-t.nu1) + base);
}

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::SLn ? "SLn" : "SLcn"; }

ModelKind parse_model_kind(const std::string& name) {
    std::string s;
    for (char ch : name) s += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (s == "sln") return ModelKind::SLn;
    if (s == "slcn") return ModelKind::SLcn;
    throw std::invalid_argument("unknown model '" + name + "' (expected sln or slcn)");
}

void SelectionData::validate() const {
    const Eigen::Index n = c.size();
    if (n == 0) throw DataError("empty dataset");
    if (x.rows() != n || w.rows() != n || v1.size() != n) throw DataError("x, w, v1 and c must have the same number of rows");
    if (!x.allFinite() || !w.allFinite()) throw DataError("covariates must be finite");
    if (!x_names.empty() && static_cast<Eigen::Index>(x_names.size()) != x.cols()) throw DataError("x_names size mismatch");
    if (!w_names.empty() && static_cast<Eigen::Index>(w_names.size()) != w.cols()) throw DataError("w_names size mismatch");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (c(i) != 0 && c(i) != 1) throw DataError("selection indicator must be 0 or 1 (row " + std::to_string(i) + ")");
        const bool present = !std::isnan(v1(i));
        if (c(i) == 1 && !present) throw DataError("missing outcome for a selected unit (row " + std::to_string(i) + ")");
        if (c(i) == 0 && present) throw DataError("outcome present for a non-selected unit (row " + std::to_string(i) + ")");
        if (present && !std::isfinite(v1(i))) throw DataError("non-finite outcome (row " + std::to_string(i) + ")");
    }
}

SelectionData SelectionData::rows(const std::vector<Eigen::Index>& idx) const {
    SelectionData out;
    const auto m = static_cast<Eigen::Index>(idx.size());
    out.x.resize(m, x.cols());
    out.w.resize(m, w.cols());
    out.v1.resize(m);
    out.c.resize(m);
    for (Eigen::Index r = 0; r < m; ++r) {
        out.x.row(r) = x.row(idx[r]);
        out.w.row(r) = w.row(idx[r]);
        out.v1(r) = v1(idx[r]);
        out.c(r) = c(idx[r]);
    }
    out.x_names = x_names;
    out.w_names = w_names;
    return out;
}

double Theta::sigma() const { return std::sqrt(sigma2); }

Eigen::Matrix2d Theta::Sigma() const {
    Eigen::Matrix2d s;
    const double rs = rho_star();
    s << sigma2, rs, rs, 1.0;
    return s;
}

Theta Theta::from_psi(Eigen::VectorXd beta, Eigen::VectorXd gamma, double psi, double rho_star, double nu1, double nu2) {
    Theta t;
    t.beta = std::move(beta);
    t.gamma = std::move(gamma);
    t.sigma2 = psi + rho_star * rho_star;
    t.rho = rho_star / std::sqrt(t.sigma2);
    t.nu1 = nu1;
    t.nu2 = nu2;
    return t;
}

void Theta::validate(ModelKind kind) const {
    if (!beta.allFinite() || !gamma.allFinite()) throw std::invalid_argument("Theta: non-finite coefficients");
    if (!(sigma2 > 0) || !std::isfinite(sigma2)) throw std::invalid_argument("Theta: sigma2 must be positive");
    if (!(std::abs(rho) < rho_limit)) throw std::domain_error("Theta: |rho| must be below 1 - 1e-8");
    if (kind == ModelKind::SLcn) {
        if (!(nu1 > 0 && nu1 < 1)) throw std::invalid_argument("Theta: nu1 must lie in (0,1)");
        if (!(nu2 > 0 && nu2 < 1)) throw std::invalid_argument("Theta: nu2 must lie in (0,1)");
    }
}

double pairwise_sum(const double* v, Eigen::Index n) {
    if (n <= 16) {
        double s = 0;
        for (Eigen::Index i = 0; i < n; ++i) s += v[i];
        return s;
    }
    const Eigen::Index h = n / 2;
    return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

double unit_loglik(const Theta& theta, const SelectionData& data, Eigen::Index i, ModelKind kind) {
    const double mu1 = data.x.row(i).dot(theta.beta);
    const double mu2 = data.w.row(i).dot(theta.gamma);
    const double l = unit_term(data.selected(i), data.v1(i), mu1, mu2, theta, kind);
    if (!std::isfinite(l)) {
        std::ostringstream os;
        os << "non-finite log-likelihood contribution at unit " << i;
        throw LikelihoodError(os.str(), i);
    }
    return l;
}

Eigen::VectorXd unit_logliks(const Theta& theta, const SelectionData& data, ModelKind kind) {
    theta.validate(kind);
    if (theta.beta.size() != data.p() || theta.gamma.size() != data.q())
        throw std::invalid_argument("Theta dimensions do not match the design matrices");
    Eigen::VectorXd out(data.n());
    for (Eigen::Index i = 0; i < data.n(); ++i) out(i) = unit_loglik(theta, data, i, kind);
    return out;
}

double loglik(const Theta& theta, const SelectionData& data, ModelKind kind) {
    const Eigen::VectorXd l = unit_logliks(theta, data, kind);
    return pairwise_sum(l.data(), l.size());
}

EscnParams<double> observed_outcome_law(const Eigen::VectorXd& xi, const Eigen::VectorXd& wi, const Theta& theta,
                                        ModelKind kind) {
    if (!(std::abs(theta.rho) < rho_limit)) throw std::domain_error("observed_outcome_law: |rho| too close to 1");
    const double st = std::sqrt(1 - theta.rho * theta.rho);
    EscnParams<double> p;
    p.mu = xi.dot(theta.beta);
    p.sigma2 = theta.sigma2;
    p.lambda = theta.rho / st;
    p.tau = wi.dot(theta.gamma) / st;
    p.nu1 = kind == ModelKind::SLcn ? theta.nu1 : 0.0;
    p.nu2 = kind == ModelKind::SLcn ? theta.nu2 : 1.0;
    return p;
}

double observed_outcome_density(double v1, const Eigen::VectorXd& xi, const Eigen::VectorXd& wi, const Theta& theta,
                                ModelKind kind) {
    return escn_pdf(v1, observed_outcome_law(xi, wi, theta, kind));
}

double selection_probability(const Eigen::VectorXd& wi, const Theta& theta, ModelKind kind) {
    const double m = wi.dot(theta.gamma);
    if (kind == ModelKind::SLn) return norm_cdf(m);
    return theta.nu1 * norm_cdf(std::sqrt(theta.nu2) * m) + (1 - theta.nu1) * norm_cdf(m);
}

namespace {

// log of the numerator and denominator of lambda_cn
void lambda_parts(double x, double nu1, double nu2, double& log_num, double& log_den, double& log_dens) {
    const double r = std::sqrt(nu2);
    const double lb = std::log1p(-nu1);
    log_num = lb + std_norm_logpdf(x);
    log_den = lb + log_norm_cdf(x);
    log_dens = log_num;
    if (nu1 > 0) {
        const double la = std::log(nu1);
        log_num = log_add_exp(log_num, la - std::log(r) + std_norm_logpdf(r * x));
        log_den = log_add_exp(log_den, la + log_norm_cdf(r * x));
        log_dens = log_add_exp(log_dens, la + std::log(r) + std_norm_logpdf(r * x));
    }
}

}  // namespace

double lambda_cn(double x, double nu1, double nu2) {
    double ln, ld, lf;
    lambda_parts(x, nu1, nu2, ln, ld, lf);
    return std::exp(ln - ld);
}

double lambda_cn_prime(double x, double nu1, double nu2) {
    double ln, ld, lf;
    lambda_parts(x, nu1, nu2, ln, ld, lf);
    return -std::exp(lf - ld) * (x + std::exp(ln - ld));
}

double conditional_mean_observed(const Eigen::VectorXd& xi, const Eigen::VectorXd& wi, const Theta& theta, ModelKind kind) {
    const double nu1 = kind == ModelKind::SLcn ? theta.nu1 : 0.0;
    const double nu2 = kind == ModelKind::SLcn ? theta.nu2 : 1.0;
    return xi.dot(theta.beta) + theta.rho_star() * lambda_cn(wi.dot(theta.gamma), nu1, nu2);
}

double marginal_effect(Eigen::Index k, [[maybe_unused]] const Eigen::VectorXd& xi, const Eigen::VectorXd& wi, const Theta& theta,
                       ModelKind kind, MarginalEffect variant, std::optional<Eigen::Index> selection_index) {
    if (k < 0 || k >= theta.beta.size()) throw std::out_of_range("marginal_effect: covariate index out of range");
    if (selection_index && (*selection_index < 0 || *selection_index >= theta.gamma.size()))
        throw std::out_of_range("marginal_effect: selection index out of range");
    const double nu1 = kind == ModelKind::SLcn ? theta.nu1 : 0.0;
    const double nu2 = kind == ModelKind::SLcn ? theta.nu2 : 1.0;
    const double slope = theta.rho_star() * lambda_cn_prime(wi.dot(theta.gamma), nu1, nu2);
    if (variant == MarginalEffect::Literal) return theta.beta(k) + slope;
    return theta.beta(k) + (selection_index ? slope * theta.gamma(*selection_index) : 0.0);
}

std::vector<LambdaRow> lambda_curve_export(const std::vector<double>& nu1_list, const std::vector<double>& nu2_list,
                                           const std::vector<double>& x_grid) {
    if (nu1_list.empty() || nu2_list.empty() || x_grid.empty()) throw std::invalid_argument("lambda_curve_export: empty grid");
    std::vector<LambdaRow> rows;
    rows.reserve(nu1_list.size() * nu2_list.size() * x_grid.size());
    for (double a : nu1_list) {
        for (double b : nu2_list) {
            if (!(a >= 0 && a < 1) || !(b > 0 && b <= 1)) throw std::invalid_argument("lambda_curve_export: nu outside range");
            std::ostringstream label;
            if (a == 0 || b == 1)
                label << "normal";
            else
                label << "nu1=" << a << " nu2=" << b;
            for (double x : x_grid) rows.push_back({x, a, b, label.str(), lambda_cn(x, a, b), lambda_cn_prime(x, a, b)});
        }
    }
    return rows;
}

}  // namespace heckcn
