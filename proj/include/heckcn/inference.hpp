#pragma once

#include "heckcn/ecm.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace heckcn {

enum class UnitClass { Good, Outlier, Inlier };
std::string to_string(UnitClass c);

struct NestingError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Scale-matrix derivatives dSigma/dsigma and dSigma/drho.
Eigen::Matrix2d dsigma_dsigma(const Theta& theta);
Eigen::Matrix2d dsigma_drho(const Theta& theta);

/// Names of the free parameters, in score order: beta, gamma, sigma, rho[, nu1, nu2].
std::vector<std::string> parameter_names(const SelectionData& data, ModelKind kind, bool nu_free = true);

/// Individual score of unit i at theta (q must come from e_step at the same theta).
Eigen::VectorXd score_vector(const Theta& theta, const SelectionData& data, const EStepQuantities& q, Eigen::Index i,
                             ModelKind kind, bool nu_free = true);
/// n x k matrix of individual scores.
Eigen::MatrixXd score_matrix(const Theta& theta, const SelectionData& data, const EStepQuantities& q, ModelKind kind,
                             bool nu_free = true);

/// sum s s' - S S' / n from a matrix of individual scores (one row per unit).
Eigen::MatrixXd empirical_information(const Eigen::MatrixXd& scores);
Eigen::MatrixXd empirical_information(const Theta& theta, const SelectionData& data, ModelKind kind, bool nu_free = true);

struct StandardErrors {
    Eigen::VectorXd se;
    Eigen::MatrixXd cov;
    bool positive_definite = true;
    bool pseudo_inverse = false;
};

/// Inverse of the information; falls back to a pseudo-inverse (flagged) when not PD.
StandardErrors standard_errors(const Eigen::MatrixXd& info);

struct InformationCriteria {
    double aic;
    double bic;
};
InformationCriteria information_criteria(double loglik, int k, long n);
int parameter_count(const SelectionData& data, ModelKind kind, bool nu_free = true);

struct Estimate {
    std::string name;
    double value;
    double se;
    double lo;  // 95% Wald interval, untransformed
    double hi;
};

struct FitResult {
    ModelKind kind = ModelKind::SLcn;
    Theta theta;
    double loglik = 0;
    int k = 0;
    long n = 0;
    double aic = 0;
    double bic = 0;
    std::vector<std::string> param_names;
    Eigen::VectorXd se;
    Eigen::MatrixXd info;
    bool info_pd = true;
    bool pseudo_inverse = false;
    Eigen::VectorXd eps_hat;
    std::vector<UnitClass> classes;
    EcmTrace trace;
    std::vector<std::string> warnings;
    bool nu_free = true;

    /// Free parameters plus derived sigma2 (delta method).
    std::vector<Estimate> estimates() const;
    std::optional<Estimate> estimate(const std::string& name) const;
};

/// Post-fit inference on an ECM fit.
FitResult make_fit_result(const EcmFit& fit, const SelectionData& data, const EcmOptions& opts = {},
                          std::optional<int> k_override = std::nullopt);
/// ECM fit followed by inference.
FitResult fit_model(const SelectionData& data, ModelKind kind, const EcmOptions& opts = {},
                    std::optional<int> k_override = std::nullopt);

struct LrTest {
    double statistic;
    int df;
    double p_value;
};
/// Likelihood-ratio test of `null` nested in `alt`, naive chi-square reference.
LrTest lr_test(const FitResult& null, const FitResult& alt);
LrTest lr_test(double loglik_null, int k_null, double loglik_alt, int k_alt);

std::vector<UnitClass> classify_units(double nu1_hat, const Eigen::VectorXd& eps_hat);

enum class ResidualScale {
    Conditional,  // selected units: P(Y1 <= v | Y2 > 0)
    Joint,        // selected units: P(Y1 <= v, Y2 > 0)
};

struct ResidualOptions {
    ResidualScale scale = ResidualScale::Conditional;
    bool randomized = false;  // censored units: U(0, P(Y2 <= 0)) instead of the point value
    std::uint64_t seed = 1;
};

struct QuantileResiduals {
    Eigen::VectorXd residual;  // all units
    Eigen::VectorXd cdf;       // fitted cdf value before the normal quantile
    std::vector<Eigen::Index> clamped;

    /// Residuals of the selected units, in row order.
    Eigen::VectorXd selected(const SelectionData& data) const;
};

/// P(Y1 <= v, Y2 > 0) for unit i at theta.
double joint_outcome_cdf(double v, const Eigen::Vector2d& mu, const Theta& theta, ModelKind kind);
/// P(Y2 <= 0) for unit i.
double censoring_probability(const Eigen::Vector2d& mu, const Theta& theta, ModelKind kind);

QuantileResiduals quantile_residuals(const Theta& theta, const SelectionData& data, ModelKind kind,
                                     const ResidualOptions& opts = {});

struct EnvelopeRow {
    Eigen::Index unit;  // row index of the observed unit with this order statistic
    double residual;
    double theoretical_quantile;
    double band_lo;
    double band_hi;
};

/// Parametric-bootstrap envelope for selected-unit residuals: n_sim datasets drawn at theta with the
/// observed covariates, residuals recomputed at theta, pointwise order-statistic bands.
std::vector<EnvelopeRow> residual_envelope(const Theta& theta, const SelectionData& data, ModelKind kind, int n_sim,
                                           double level, std::uint64_t seed, const ResidualOptions& opts = {});

/// Draws a new response vector at theta keeping the covariates of `data`.
SelectionData simulate_at(const Theta& theta, const SelectionData& data, ModelKind kind, std::uint64_t seed,
                          std::uint64_t stream);

struct KsTest {
    double statistic;
    double p_value;
};
/// Two-sided one-sample Kolmogorov-Smirnov test against N(0,1).
KsTest ks_test_normal(const Eigen::VectorXd& x);
/// Asymptotic Kolmogorov survival function with Stephens' small-sample correction.
double kolmogorov_pvalue(double d, long n);

}  // namespace heckcn
