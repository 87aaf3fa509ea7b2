#pragma once

#include "heckcn/inference.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace heckcn {

struct ErrorLaw {
    enum class Kind { Normal, ContaminatedNormal, Slash };
    Kind kind = Kind::Normal;
    double nu1 = 0.1, nu2 = 0.1;  // ContaminatedNormal
    double q = 1.43;              // Slash
    // Power: mu + u^(-1/q) z. ScaleMixture: precision w ~ Beta(q, 1), i.e. mu + u^(-1/(2q)) z.
    enum class SlashForm { Power, ScaleMixture };
    SlashForm slash_form = SlashForm::Power;

    static ErrorLaw normal() { return {}; }
    static ErrorLaw contaminated(double nu1, double nu2) { return {Kind::ContaminatedNormal, nu1, nu2, 1.43}; }
    static ErrorLaw slash(double q, SlashForm form = SlashForm::Power) { return {Kind::Slash, 0.1, 0.1, q, form}; }

    /// Exponent a of the slash scale u^(-a).
    double slash_exponent() const { return slash_form == SlashForm::Power ? 1 / q : 1 / (2 * q); }

    void validate() const;
};

std::string to_string(const ErrorLaw& law);

struct SimDesign {
    long n = 1000;
    ErrorLaw law;
    Eigen::VectorXd beta = (Eigen::VectorXd(2) << 1.0, 0.5).finished();
    Eigen::VectorXd gamma_slope = (Eigen::VectorXd(2) << 0.3, -0.5).finished();
    double target_missing_rate = 0.25;
    double sigma2 = 1.0;
    double rho = 0.6;
    std::uint64_t seed = 20240601;
    std::optional<double> gamma0;  // overrides the calibrated intercept

    void validate() const;
    /// gamma0 if set, otherwise calibrate_gamma0(law, target_missing_rate).
    double selection_intercept() const;
};

/// Selection intercept g with P(g + e2 <= 0) = target_missing_rate under the marginal law of e2.
double calibrate_gamma0(const ErrorLaw& law, double target_missing_rate);

/// Latent draws behind a generated dataset.
struct Latent {
    Eigen::MatrixXd errors;  // n x 2, (e1, e2)
    Eigen::VectorXd scale;   // multiplier applied to the N(0, Sigma) draw
    std::vector<bool> inflated;  // CN: U = nu2 drawn
    Eigen::VectorXd y2;
};

/// w = (1, U(-1,1), N(0,1)), x = (1, w1); errors from the design law.
SelectionData generate_dataset(const SimDesign& design, std::mt19937_64& rng, Latent* latent = nullptr);

/// True parameter values of a design by parameter name (sigma2 included); nu only for CN.
std::vector<std::pair<std::string, double>> design_truth(const SimDesign& design);

struct McOptions {
    EcmOptions ecm;
    unsigned threads = 0;      // 0: hardware concurrency
    bool same_stream = false;  // every replicate uses stream 0 (duplicate data)
    bool keep_replicates = true;
    std::optional<int> k_override;  // parameter count used for AIC/BIC of every model
    std::function<void(long done, long total)> progress;
};

struct McModelFit {
    bool ok = false;
    bool converged = false;
    std::string error;
    double loglik = 0, aic = 0, bic = 0;
    std::vector<Estimate> estimates;
};

struct McReplicate {
    long rep = 0;
    double missing_rate = 0;
    std::vector<McModelFit> fits;  // one per model
};

struct McParamSummary {
    std::string name;
    std::optional<double> truth;
    double em_mean = 0;
    double mean_info_se = 0;
    double sd_across_reps = 0;  // NaN with fewer than two usable replicates
};

struct McModelSummary {
    ModelKind kind = ModelKind::SLcn;
    long n_used = 0;
    long n_failed = 0;
    std::vector<McParamSummary> params;
    double aic_mean = 0, aic_sd = 0, bic_mean = 0, bic_sd = 0;
    double aic_selected_pct = 0, bic_selected_pct = 0;
};

struct McSummary {
    SimDesign design;
    double gamma0 = 0;
    long n_reps = 0;
    long n_selection_reps = 0;  // replicates where every model succeeded
    double mean_missing_rate = 0;
    std::vector<McModelSummary> models;
    std::vector<McReplicate> replicates;
    std::vector<std::string> failures;
};

McSummary run_monte_carlo(const SimDesign& design, long n_reps, const std::vector<ModelKind>& models,
                          const McOptions& opts = {});

}  // namespace heckcn
