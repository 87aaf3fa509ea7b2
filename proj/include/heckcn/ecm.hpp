#pragma once

#include "heckcn/model.hpp"

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace heckcn {

/// Raised when a model cannot be estimated from the given data.
struct EstimationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Probit iterates diverge: the selection outcome is (quasi-)separated by w.
struct SeparationError : EstimationError {
    using EstimationError::EstimationError;
};

/// The ECM log-likelihood decreased; points at a moment or update bug.
struct ConsistencyError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ProbitResult {
    Eigen::VectorXd gamma;
    Eigen::MatrixXd cov;  // inverse observed information
    double loglik = 0;
    int iterations = 0;
};

/// Probit MLE by damped Newton-Raphson; stops when the gradient sup-norm is below grad_tol.
ProbitResult probit_fit(const Eigen::MatrixXd& w, const Eigen::VectorXi& c, double grad_tol = 1e-8, int max_iter = 100);

struct TwoStepResult {
    Theta theta;
    double mills_coef = 0;     // coefficient of the inverse Mills ratio (estimates rho*sigma)
    double mills_coef_se = 0;  // conventional OLS standard error
    bool rho_clamped = false;
};

/// Heckman's two-step estimator; nu1, nu2 are filled with the supplied starting values.
TwoStepResult heckman_two_step(const SelectionData& data, double nu1 = 0.5, double nu2 = 0.5);

/// Throws EstimationError when the design cannot identify the model.
void check_estimable(const SelectionData& data);

/// Conditional expectations for one unit given (V_i, C_i).
struct UnitMoments {
    Eigen::Vector2d y = Eigen::Vector2d::Zero();        // E[Y]
    Eigen::Matrix2d yy = Eigen::Matrix2d::Zero();       // E[Y Y']
    double eps = 0;                                     // P(eps = 1)
    Eigen::Vector2d eps_y = Eigen::Vector2d::Zero();    // E[eps Y]
    Eigen::Matrix2d eps_yy = Eigen::Matrix2d::Zero();   // E[eps Y Y']
};

struct EStepQuantities {
    std::vector<UnitMoments> units;
    Eigen::VectorXd unit_loglik;
    double loglik = 0;

    Eigen::Index size() const { return static_cast<Eigen::Index>(units.size()); }
    Eigen::VectorXd eps() const;
    Eigen::Matrix2d E1(Eigen::Index i, const Eigen::Vector2d& mu) const;
    Eigen::Matrix2d E2(Eigen::Index i, const Eigen::Vector2d& mu) const;
    /// E1 + (nu2 - 1) E2
    Eigen::Matrix2d Gamma(Eigen::Index i, const Eigen::Vector2d& mu, double nu2) const;
};

/// Linear predictors (x_i'beta, w_i'gamma) of unit i.
Eigen::Vector2d unit_mean(const SelectionData& data, const Theta& theta, Eigen::Index i);

/// E-step at theta. The log-likelihood is returned as a by-product.
/// Throws ZeroMassError (with the unit index) when a unit's truncation mass underflows.
EStepQuantities e_step(const Theta& theta, const SelectionData& data, ModelKind kind);

struct CmFlags {
    bool nu1_clipped = false;
    bool nu2_clipped = false;
};

inline constexpr double nu_floor = 1e-6;

/// One pass of conditional maximizations: beta_c, (psi, rho*), nu1, nu2.
Theta cm_step(const EStepQuantities& q, const SelectionData& data, const Theta& theta_old, ModelKind kind,
              bool update_nu = true, CmFlags* flags = nullptr);

enum class InitMethod { TwoStep, Grid, UserSupplied };

struct EcmOptions {
    double tol = 1e-6;
    int max_iter = 500;
    InitMethod init = InitMethod::TwoStep;
    std::vector<std::pair<double, double>> nu_grid;  // empty: default 5x5 grid
    int pilot_iter = 20;
    std::optional<std::pair<double, double>> fix_nu;
    std::optional<Theta> start;  // for UserSupplied
    bool keep_path = false;

    void validate() const;
};

std::vector<std::pair<double, double>> default_nu_grid();

struct EcmTrace {
    std::vector<double> loglik_path;
    std::vector<Theta> theta_path;
    int iterations = 0;
    bool converged = false;
    int nu_clip_count = 0;
};

struct EcmFit {
    ModelKind kind = ModelKind::SLcn;
    Theta theta;
    double loglik = 0;
    EcmTrace trace;
    EStepQuantities estep;  // at theta
    std::vector<std::string> warnings;
    std::pair<double, double> start_nu{0.5, 0.5};
};

EcmFit fit(const SelectionData& data, ModelKind kind, const EcmOptions& opts = {});

/// Runs ECM from a given starting value without initialization logic.
EcmFit fit_from(const SelectionData& data, ModelKind kind, Theta start, const EcmOptions& opts);

}  // namespace heckcn
