#pragma once

#include "heckcn/dist.hpp"

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace heckcn {

enum class ModelKind { SLn, SLcn };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Raised for malformed or inconsistent input data.
struct DataError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Raised when a log-likelihood contribution is not finite.
struct LikelihoodError : std::runtime_error {
    LikelihoodError(const std::string& what, Eigen::Index unit_index)
        : std::runtime_error(what), unit(unit_index) {}
    Eigen::Index unit;
};

/// Outcome equation covariates x, selection covariates w, outcome v1 (NaN when
/// not observed) and selection indicator c.
struct SelectionData {
    Eigen::MatrixXd x;
    Eigen::MatrixXd w;
    Eigen::VectorXd v1;
    Eigen::VectorXi c;
    std::vector<std::string> x_names;
    std::vector<std::string> w_names;

    Eigen::Index n() const { return c.size(); }
    Eigen::Index p() const { return x.cols(); }
    Eigen::Index q() const { return w.cols(); }
    Eigen::Index n_selected() const { return c.sum(); }
    bool selected(Eigen::Index i) const { return c(i) == 1; }

    /// Checks shapes and the missing-iff-not-selected pattern.
    void validate() const;
    /// Row subset, keeping column names.
    SelectionData rows(const std::vector<Eigen::Index>& idx) const;
};

/// SLcn parameters. For SLn, nu1 = 0 and nu2 = 1 mark the normal boundary.
struct Theta {
    Eigen::VectorXd beta;
    Eigen::VectorXd gamma;
    double sigma2 = 1.0;
    double rho = 0.0;
    double nu1 = 0.5;
    double nu2 = 0.5;

    double sigma() const;
    double psi() const { return sigma2 * (1 - rho * rho); }
    double rho_star() const { return rho * sigma(); }
    /// Error scale matrix [[sigma2, rho*sigma], [rho*sigma, 1]].
    Eigen::Matrix2d Sigma() const;

    static Theta from_psi(Eigen::VectorXd beta, Eigen::VectorXd gamma, double psi, double rho_star, double nu1, double nu2);

    void validate(ModelKind kind) const;
};

inline constexpr double rho_limit = 1 - 1e-8;

/// Log contribution of unit i to the observed-data likelihood.
double unit_loglik(const Theta& theta, const SelectionData& data, Eigen::Index i, ModelKind kind);
/// Per-unit log contributions.
Eigen::VectorXd unit_logliks(const Theta& theta, const SelectionData& data, ModelKind kind);
/// Observed-data log-likelihood, summed pairwise in fixed order.
double loglik(const Theta& theta, const SelectionData& data, ModelKind kind);

double pairwise_sum(const double* v, Eigen::Index n);

/// Law of the observed outcome given selection, as an extended skew CN.
EscnParams<double> observed_outcome_law(const Eigen::VectorXd& xi, const Eigen::VectorXd& wi, const Theta& theta,
                                        ModelKind kind = ModelKind::SLcn);
double observed_outcome_density(double v1, const Eigen::VectorXd& xi, const Eigen::VectorXd& wi, const Theta& theta,
                                ModelKind kind = ModelKind::SLcn);
/// P(Y2 > 0 | w) = P(C = 1 | w).
double selection_probability(const Eigen::VectorXd& wi, const Theta& theta, ModelKind kind = ModelKind::SLcn);

/// CN analogue of the inverse Mills ratio and its derivative.
double lambda_cn(double x, double nu1, double nu2);
double lambda_cn_prime(double x, double nu1, double nu2);

double conditional_mean_observed(const Eigen::VectorXd& xi, const Eigen::VectorXd& wi, const Theta& theta,
                                 ModelKind kind = ModelKind::SLcn);

enum class MarginalEffect {
    Literal,    // beta_k + rho*sigma*lambda'(w'gamma)
    ChainRule,  // beta_k + rho*sigma*lambda'(w'gamma) * gamma_j for the same covariate in w
};

/// Effect of outcome covariate k on the conditional mean of observed outcomes.
/// `selection_index` names the column of w holding the same covariate, if any.
double marginal_effect(Eigen::Index k, const Eigen::VectorXd& xi, const Eigen::VectorXd& wi, const Theta& theta,
                       ModelKind kind = ModelKind::SLcn, MarginalEffect variant = MarginalEffect::Literal,
                       std::optional<Eigen::Index> selection_index = std::nullopt);

struct LambdaRow {
    double x;
    double nu1;
    double nu2;
    std::string label;
    double lambda;
    double lambda_prime;
};

/// lambda / lambda' on x_grid for every (nu1, nu2) combination of the two lists.
std::vector<LambdaRow> lambda_curve_export(const std::vector<double>& nu1_list, const std::vector<double>& nu2_list,
                                           const std::vector<double>& x_grid);

}  // namespace heckcn
