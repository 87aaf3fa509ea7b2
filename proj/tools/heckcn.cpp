// heckcn: fit, diagnose and simulate Heckman selection models with normal or
// contaminated-normal errors.

#include "heckcn/io.hpp"
#include "heckcn/rng.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

using namespace heckcn;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_usage = 1;
constexpr int exit_no_convergence = 2;

std::mutex io_mutex;

void log(const std::string& msg) {
    std::lock_guard<std::mutex> lock(io_mutex);
    std::cerr << msg << std::endl;
}

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw UsageError("cannot write '" + path + "'");
    return os;
}

struct EcmFlags {
    double tol = 1e-6;
    int max_iter = 500;
    std::string init = "two-step";
    std::optional<double> fix_nu1, fix_nu2;

    void add(CLI::App* app) {
        app->add_option("--tol", tol, "relative log-likelihood convergence tolerance")->capture_default_str();
        app->add_option("--max-iter", max_iter, "maximum ECM iterations")->capture_default_str();
        app->add_option("--init", init, "starting values: two-step or grid")
            ->check(CLI::IsMember({"two-step", "grid"}))
            ->capture_default_str();
        app->add_option("--fix-nu1", fix_nu1, "hold nu1 fixed (SLcn; needs --fix-nu2)");
        app->add_option("--fix-nu2", fix_nu2, "hold nu2 fixed (SLcn; needs --fix-nu1)");
    }

    EcmOptions options() const {
        EcmOptions o;
        o.tol = tol;
        o.max_iter = max_iter;
        o.init = init == "grid" ? InitMethod::Grid : InitMethod::TwoStep;
        if (fix_nu1.has_value() != fix_nu2.has_value()) throw UsageError("--fix-nu1 and --fix-nu2 go together");
        if (fix_nu1) o.fix_nu = std::make_pair(*fix_nu1, *fix_nu2);
        o.validate();
        return o;
    }
};

struct DataFlags {
    std::string path;
    DataSpec spec;
    bool no_intercept = false;

    void add(CLI::App* app, bool required) {
        auto* d = app->add_option("--data", path, "input CSV (header row, NA for missing outcomes)");
        if (required) d->required();
        app->add_option("--outcome", spec.outcome, "outcome column");
        app->add_option("--selection", spec.selection, "0/1 selection column");
        app->add_option("--x", spec.x, "outcome covariates (comma separated)")->delimiter(',');
        app->add_option("--w", spec.w, "selection covariates (comma separated)")->delimiter(',');
        app->add_flag("--no-intercept", no_intercept, "do not add a constant to x and w");
    }

    SelectionData load() {
        spec.intercept = !no_intercept;
        if (spec.outcome.empty() || spec.selection.empty()) throw UsageError("--outcome and --selection are required");
        return build_selection_data(read_csv_file(path), spec);
    }
};

// ---------------------------------------------------------------- fit

struct FitCmd {
    DataFlags data;
    EcmFlags ecm;
    std::string model = "slcn";
    std::optional<int> k_override;
    std::uint64_t seed = 1;
    std::string out;
    bool quiet = false;

    void add(CLI::App* app) {
        data.add(app, true);
        ecm.add(app);
        app->add_option("--model", model, "sln or slcn")->check(CLI::IsMember({"sln", "slcn"}))->capture_default_str();
        app->add_option("--k-override", k_override, "parameter count used in AIC/BIC");
        app->add_option("--seed", seed, "recorded in the output; the fit itself is deterministic");
        app->add_option("--out", out, "write the fit as JSON to this path");
        app->add_flag("--quiet", quiet, "no table on stdout");
    }

    int run() {
        const auto opts = ecm.options();
        const SelectionData d = data.load();
        const FitResult r = fit_model(d, parse_model_kind(model), opts, k_override);
        if (!quiet) write_fit_table(std::cout, r, d);
        if (!out.empty()) {
            FitMeta meta{data.path, data.spec, opts, seed};
            open_out(out) << fit_to_json(r, d, meta).dump(2) << "\n";
        }
        if (!r.trace.converged) {
            log("heckcn: ECM did not converge in " + std::to_string(r.trace.iterations) + " iterations");
            return exit_no_convergence;
        }
        return exit_ok;
    }
};

// ---------------------------------------------------------------- simulate

struct SimulateCmd {
    std::string law = "normal";
    double nu1 = 0.1, nu2 = 0.1, q = 1.43;
    std::string slash_form = "power";
    long n = 1000, reps = 100;
    double missing = 0.25;
    std::optional<double> gamma0;
    double sigma2 = 1, rho = 0.6;
    std::vector<double> beta{1, 0.5}, gamma_slope{0.3, -0.5};
    std::vector<std::string> models{"sln", "slcn"};
    unsigned threads = 0;
    std::uint64_t seed = 20240601;
    std::optional<int> k_override;
    EcmFlags ecm;
    std::string out = "heckcn_mc";
    std::string write_data;

    void add(CLI::App* app) {
        app->add_option("--law", law, "error law: normal, cn or slash")
            ->check(CLI::IsMember({"normal", "cn", "slash"}))
            ->capture_default_str();
        app->add_option("--nu1", nu1, "CN mixing proportion")->capture_default_str();
        app->add_option("--nu2", nu2, "CN scale factor")->capture_default_str();
        app->add_option("--q", q, "slash tail parameter")->capture_default_str();
        app->add_option("--slash-form", slash_form, "power: u^(-1/q) z; mixture: u^(-1/(2q)) z")
            ->check(CLI::IsMember({"power", "mixture"}))
            ->capture_default_str();
        app->add_option("--n", n, "sample size")->capture_default_str();
        app->add_option("--reps", reps, "Monte Carlo replicates")->capture_default_str();
        app->add_option("--missing", missing, "target missing rate")->capture_default_str();
        app->add_option("--gamma0", gamma0, "selection intercept (default: calibrated to --missing)");
        app->add_option("--sigma2", sigma2)->capture_default_str();
        app->add_option("--rho", rho)->capture_default_str();
        app->add_option("--beta", beta, "outcome coefficients (intercept, w1)")->delimiter(',')->expected(2);
        app->add_option("--gamma-slope", gamma_slope, "selection slopes (w1, w2)")->delimiter(',')->expected(2);
        app->add_option("--models", models, "models to fit")->delimiter(',')->check(CLI::IsMember({"sln", "slcn"}));
        app->add_option("--threads", threads, "worker threads (0: all cores)");
        app->add_option("--seed", seed)->capture_default_str();
        app->add_option("--k-override", k_override, "parameter count used in AIC/BIC");
        ecm.add(app);
        app->add_option("--out", out, "output prefix")->capture_default_str();
        app->add_option("--write-data", write_data, "also write the replicate-0 dataset as CSV (w1, w2, y, s)");
    }

    static void write_dataset(const std::string& path, const SelectionData& data) {
        auto os = open_out(path);
        os << "w1,w2,y,s\n";
        for (Eigen::Index i = 0; i < data.n(); ++i)
            os << format_number(data.w(i, 1)) << "," << format_number(data.w(i, 2)) << ","
               << format_number(data.v1(i)) << "," << data.c(i) << "\n";
    }

    int run() {
        SimDesign d;
        if (law == "cn")
            d.law = ErrorLaw::contaminated(nu1, nu2);
        else if (law == "slash")
            d.law = ErrorLaw::slash(q, slash_form == "mixture" ? ErrorLaw::SlashForm::ScaleMixture
                                                               : ErrorLaw::SlashForm::Power);
        d.n = n;
        d.target_missing_rate = missing;
        d.gamma0 = gamma0;
        d.sigma2 = sigma2;
        d.rho = rho;
        d.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
        d.gamma_slope =
            Eigen::Map<const Eigen::VectorXd>(gamma_slope.data(), static_cast<Eigen::Index>(gamma_slope.size()));
        d.seed = seed;
        try {
            d.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        if (reps < 1) throw UsageError("--reps must be at least 1");
        if (!write_data.empty()) {
            auto rng = substream(seed, 0);
            write_dataset(write_data, generate_dataset(d, rng));
        }

        std::vector<ModelKind> kinds;
        for (const auto& m : models) kinds.push_back(parse_model_kind(m));
        McOptions o;
        o.ecm = ecm.options();
        o.threads = threads;
        o.k_override = k_override;
        const long step = std::max(1L, reps / 10);
        o.progress = [step](long done, long total) {
            if (done % step == 0 || done == total)
                std::cerr << "replicate " << done << "/" << total << std::endl;
        };
        log("heckcn simulate: " + to_string(d.law) + ", n = " + std::to_string(n) + ", " + std::to_string(reps) +
            " replicates");
        const McSummary s = run_monte_carlo(d, reps, kinds, o);

        auto par = open_out(out + "_parameters.csv");
        write_mc_parameters_csv(par, s);
        auto crit = open_out(out + "_criteria.csv");
        write_mc_criteria_csv(crit, s);
        auto rep = open_out(out + "_replicates.csv");
        write_mc_replicates_csv(rep, s);
        open_out(out + ".json") << mc_to_json(s).dump(2) << "\n";

        std::cout << "gamma0 = " << format_number(s.gamma0) << ", mean missing rate "
                  << format_number(s.mean_missing_rate) << "\n";
        write_mc_criteria_csv(std::cout, s);
        for (const auto& f : s.failures) log("excluded: " + f);
        return exit_ok;
    }
};

// ---------------------------------------------------------------- diagnose

struct DiagnoseCmd {
    std::string fit_path;
    DataFlags data;
    int n_sim = 19;
    double level = 0.95;
    bool randomized = false;
    std::string scale = "conditional";
    std::uint64_t seed = 1;
    std::string out = "heckcn_diag";

    void add(CLI::App* app) {
        app->add_option("--fit", fit_path, "fit JSON written by `heckcn fit --out`")->required();
        data.add(app, false);
        app->add_option("--n-sim", n_sim, "envelope simulations (at least 19)")->capture_default_str();
        app->add_option("--level", level, "envelope level")->capture_default_str();
        app->add_flag("--randomized", randomized, "randomize censored-unit residuals");
        app->add_option("--scale", scale, "selected-unit residual scale: conditional or joint")
            ->check(CLI::IsMember({"conditional", "joint"}))
            ->capture_default_str();
        app->add_option("--seed", seed)->capture_default_str();
        app->add_option("--out", out, "output prefix")->capture_default_str();
    }

    int run() {
        std::ifstream in(fit_path);
        if (!in) throw UsageError("cannot open '" + fit_path + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw UsageError(std::string("fit file is not JSON: ") + e.what());
        }
        const StoredFit f = stored_fit_from_json(j);

        // data and column lists default to those recorded in the fit
        if (data.path.empty()) data.path = f.data_path;
        if (data.spec.outcome.empty()) data.spec = f.spec, data.no_intercept = !f.spec.intercept;
        if (data.path.empty()) throw UsageError("no --data given and none recorded in the fit");
        const SelectionData d = data.load();
        if (d.n() != f.n || data_fingerprint(d) != f.fingerprint)
            throw UsageError("data do not match the fit (rows " + std::to_string(d.n()) + " vs " +
                             std::to_string(f.n) + ", fingerprint " + data_fingerprint(d) + " vs " + f.fingerprint +
                             ")");

        const double ll = loglik(f.theta, d, f.kind);
        std::cout.precision(12);
        std::cout << "loglik at stored estimate " << ll << " (stored " << f.loglik << ")\n";
        if (std::abs(ll - f.loglik) > 1e-8 * (1 + std::abs(ll))) log("warning: log-likelihood differs from the fit file");

        ResidualOptions ro;
        ro.scale = scale == "joint" ? ResidualScale::Joint : ResidualScale::Conditional;
        ro.randomized = randomized;
        ro.seed = seed;
        const auto res = quantile_residuals(f.theta, d, f.kind, ro);
        const auto q = e_step(f.theta, d, f.kind);
        const Eigen::VectorXd eps = q.eps();
        std::vector<UnitClass> classes = f.kind == ModelKind::SLcn ? classify_units(f.theta.nu1, eps)
                                                                   : std::vector<UnitClass>(d.n(), UnitClass::Good);

        auto rs = open_out(out + "_residuals.csv");
        rs << "unit,selected,residual,cdf,eps_hat,class\n";
        for (Eigen::Index i = 0; i < d.n(); ++i)
            rs << i + 1 << "," << d.c(i) << "," << format_number(res.residual(i)) << "," << format_number(res.cdf(i))
               << "," << format_number(eps(i)) << "," << to_string(classes[i]) << "\n";

        const auto env = residual_envelope(f.theta, d, f.kind, n_sim, level, seed, ro);
        auto es = open_out(out + "_envelope.csv");
        es << "unit,residual,theoretical_quantile,band_lo,band_hi\n";
        long inside = 0;
        for (const auto& e : env) {
            es << e.unit + 1 << "," << format_number(e.residual) << "," << format_number(e.theoretical_quantile) << ","
               << format_number(e.band_lo) << "," << format_number(e.band_hi) << "\n";
            inside += e.residual >= e.band_lo && e.residual <= e.band_hi;
        }

        long good = 0, outl = 0, inl = 0, outl_obs = 0;
        for (Eigen::Index i = 0; i < d.n(); ++i) {
            good += classes[i] == UnitClass::Good;
            outl += classes[i] == UnitClass::Outlier;
            inl += classes[i] == UnitClass::Inlier;
            outl_obs += classes[i] == UnitClass::Outlier && d.selected(i);
        }
        const auto ks = ks_test_normal(res.selected(d));
        auto report = open_out(out + "_report.txt");
        for (std::ostream* os : {static_cast<std::ostream*>(&std::cout), static_cast<std::ostream*>(&report)}) {
            *os << "model " << to_string(f.kind) << ", " << d.n() << " units (" << d.n_selected() << " observed)\n";
            *os << good << " good observations, " << outl << " outliers (" << outl_obs << " observed), " << inl
                << " inliers\n";
            *os << "inlier proportion " << format_number(double(inl) / d.n()) << ", outlier proportion "
                << format_number(double(outl) / d.n()) << ", mean eps_hat " << format_number(eps.mean()) << "\n";
            *os << "envelope: " << inside << " of " << env.size() << " observed order statistics inside the "
                << format_number(level) << " band\n";
            *os << "KS vs N(0,1), observed units: D = " << format_number(ks.statistic)
                << ", p = " << format_number(ks.p_value) << "\n";
            if (!res.clamped.empty()) *os << res.clamped.size() << " cdf values clamped\n";
        }
        return exit_ok;
    }
};

// ---------------------------------------------------------------- curves

struct CurvesCmd {
    std::vector<double> nu1, nu2;
    double x_min = -4, x_max = 4;
    int points = 161;
    bool no_normal = false;
    std::string out = "heckcn_lambda.csv";

    void add(CLI::App* app) {
        app->add_option("--nu1", nu1, "nu1 values (default 0.1,0.3,0.5)")->delimiter(',');
        app->add_option("--nu2", nu2, "nu2 values (default 0.1,0.3,0.5)")->delimiter(',');
        app->add_option("--x-min", x_min)->capture_default_str();
        app->add_option("--x-max", x_max)->capture_default_str();
        app->add_option("--points", points)->check(CLI::Range(2, 1000000))->capture_default_str();
        app->add_flag("--no-normal", no_normal, "omit the normal (nu1 = 0, nu2 = 1) curve");
        app->add_option("--out", out)->capture_default_str();
    }

    int run() {
        if (!(x_max > x_min)) throw UsageError("--x-max must exceed --x-min");
        if (nu1.empty()) nu1 = {0.1, 0.3, 0.5};
        if (nu2.empty()) nu2 = {0.1, 0.3, 0.5};
        std::vector<double> grid(points);
        for (int i = 0; i < points; ++i) grid[i] = x_min + (x_max - x_min) * i / (points - 1);
        std::vector<LambdaRow> rows;
        try {
            rows = lambda_curve_export(nu1, nu2, grid);
            if (!no_normal) {
                const auto normal = lambda_curve_export({0.0}, {1.0}, grid);
                rows.insert(rows.end(), normal.begin(), normal.end());
            }
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        auto os = open_out(out);
        os << "x,nu1,nu2,label,lambda,lambda_prime\n";
        for (const auto& r : rows)
            os << format_number(r.x) << "," << format_number(r.nu1) << "," << format_number(r.nu2) << "," << r.label
               << "," << format_number(r.lambda) << "," << format_number(r.lambda_prime) << "\n";
        std::cout << rows.size() << " rows written to " << out << "\n";
        return exit_ok;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Heckman selection models with contaminated-normal errors"};
    app.set_config("--config", "", "read options from a TOML/INI file");
    app.require_subcommand(1);

    FitCmd fit;
    SimulateCmd simulate;
    DiagnoseCmd diagnose;
    CurvesCmd curves;
    auto* c_fit = app.add_subcommand("fit", "fit SLn or SLcn to a CSV file");
    fit.add(c_fit);
    auto* c_sim = app.add_subcommand("simulate", "Monte Carlo study of the estimators");
    simulate.add(c_sim);
    auto* c_diag = app.add_subcommand("diagnose", "quantile residuals, envelope and unit classification");
    diagnose.add(c_diag);
    auto* c_curves = app.add_subcommand("curves", "tabulate the selection correction and its derivative");
    curves.add(c_curves);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        if (*c_fit) return fit.run();
        if (*c_sim) return simulate.run();
        if (*c_diag) return diagnose.run();
        if (*c_curves) return curves.run();
    } catch (const UsageError& e) {
        log(std::string("heckcn: ") + e.what());
        return exit_usage;
    } catch (const DataError& e) {
        log(std::string("heckcn: invalid data: ") + e.what());
        return exit_usage;
    } catch (const std::invalid_argument& e) {
        log(std::string("heckcn: ") + e.what());
        return exit_usage;
    } catch (const std::exception& e) {
        log(std::string("heckcn: estimation failed: ") + e.what());
        return exit_no_convergence;
    }
    return exit_usage;
}
