#include "heckcn/simulation.hpp"

#include "heckcn/dist.hpp"
#include "heckcn/parallel.hpp"
#include "heckcn/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>

namespace heckcn {

void ErrorLaw::validate() const {
    switch (kind) {
    case Kind::Normal:
        return;
    case Kind::ContaminatedNormal:
        if (!(nu1 > 0 && nu1 < 1) || !(nu2 > 0 && nu2 < 1))
            throw std::invalid_argument("contaminated normal law needs nu1, nu2 in (0,1)");
        return;
    case Kind::Slash:
        if (!(q > 0) || !std::isfinite(q)) throw std::invalid_argument("slash law needs q > 0");
        return;
    }
}

std::string to_string(const ErrorLaw& law) {
    std::ostringstream os;
    switch (law.kind) {
    case ErrorLaw::Kind::Normal:
        os << "normal";
        break;
    case ErrorLaw::Kind::ContaminatedNormal:
        os << "cn(" << law.nu1 << "," << law.nu2 << ")";
        break;
    case ErrorLaw::Kind::Slash:
        os << "slash(" << law.q << (law.slash_form == ErrorLaw::SlashForm::ScaleMixture ? ",mixture" : "") << ")";
        break;
    }
    return os.str();
}

void SimDesign::validate() const {
    law.validate();
    if (n < 10) throw std::invalid_argument("design: n must be at least 10");
    if (beta.size() != 2) throw std::invalid_argument("design: beta must have 2 entries (intercept, w1)");
    if (gamma_slope.size() != 2) throw std::invalid_argument("design: gamma_slope must have 2 entries (w1, w2)");
    if (!(target_missing_rate > 0 && target_missing_rate < 1))
        throw std::invalid_argument("design: target missing rate must lie in (0,1)");
    if (!(sigma2 > 0)) throw std::invalid_argument("design: sigma2 must be positive");
    if (!(std::abs(rho) < 1)) throw std::invalid_argument("design: rho must lie in (-1,1)");
    if (gamma0 && !std::isfinite(*gamma0)) throw std::invalid_argument("design: gamma0 must be finite");
}

double SimDesign::selection_intercept() const {
    return gamma0 ? *gamma0 : calibrate_gamma0(law, target_missing_rate);
}

namespace {

double slash_quantile(double a, double prob) {
    static std::mutex m;
    static std::map<std::pair<double, double>, double> cache;
    std::lock_guard<std::mutex> lock(m);
    const auto key = std::make_pair(a, prob);
    if (auto it = cache.find(key); it != cache.end()) return it->second;

    constexpr long draws = 10'000'000;
    auto rng = substream(0x51a5f, static_cast<std::uint64_t>(std::llround(a * 1e6)));
    std::uniform_real_distribution<double> unif;
    std::normal_distribution<double> norm;
    std::vector<double> e(draws);
    for (auto& v : e) {
        double u;
        do u = unif(rng);
        while (u == 0);
        v = std::pow(u, -a) * norm(rng);
    }
    const auto k = static_cast<long>(std::floor(prob * (draws - 1)));
    std::nth_element(e.begin(), e.begin() + k, e.end());
    const double lo = e[k];
    const double hi = *std::min_element(e.begin() + k + 1, e.end());
    const double frac = prob * (draws - 1) - k;
    const double value = lo + frac * (hi - lo);
    cache.emplace(key, value);
    return value;
}

}  // namespace

double calibrate_gamma0(const ErrorLaw& law, double rate) {
    law.validate();
    if (!(rate > 0 && rate < 1)) throw std::invalid_argument("calibrate_gamma0: rate must lie in (0,1)");
    switch (law.kind) {
    case ErrorLaw::Kind::Normal:
        return -norm_quantile(rate);
    case ErrorLaw::Kind::ContaminatedNormal:
        return -cn_quantile(rate, cn_univariate(0.0, 1.0, law.nu1, law.nu2));
    case ErrorLaw::Kind::Slash:
        return -slash_quantile(law.slash_exponent(), rate);
    }
    return 0;
}

SelectionData generate_dataset(const SimDesign& design, std::mt19937_64& rng, Latent* latent) {
    design.validate();
    const long n = design.n;
    const double g0 = design.selection_intercept();
    const double s = std::sqrt(design.sigma2);
    const double r = design.rho;
    const auto& law = design.law;

    std::uniform_real_distribution<double> sym(-1, 1), unif;
    std::normal_distribution<double> norm;

    SelectionData d;
    d.x.resize(n, 2);
    d.w.resize(n, 3);
    d.v1.resize(n);
    d.c.resize(n);
    d.x_names = {"0", "1"};
    d.w_names = {"0", "1", "2"};
    if (latent) {
        latent->errors.resize(n, 2);
        latent->scale.resize(n);
        latent->inflated.assign(n, false);
        latent->y2.resize(n);
    }

    for (long i = 0; i < n; ++i) {
        const double w1 = sym(rng), w2 = norm(rng);
        d.x.row(i) << 1, w1;
        d.w.row(i) << 1, w1, w2;

        const double z2 = norm(rng), z1 = norm(rng);
        double scale = 1;
        bool inflated = false;
        if (law.kind == ErrorLaw::Kind::ContaminatedNormal) {
            inflated = unif(rng) < law.nu1;
            if (inflated) scale = 1 / std::sqrt(law.nu2);
        } else if (law.kind == ErrorLaw::Kind::Slash) {
            double u;
            do u = unif(rng);
            while (u == 0);
            scale = std::pow(u, -law.slash_exponent());
        }
        const double e2 = scale * z2;
        const double e1 = scale * s * (r * z2 + std::sqrt(1 - r * r) * z1);
        const double y1 = design.beta(0) + design.beta(1) * w1 + e1;
        const double y2 = g0 + design.gamma_slope(0) * w1 + design.gamma_slope(1) * w2 + e2;
        d.c(i) = y2 > 0;
        d.v1(i) = d.c(i) ? y1 : std::numeric_limits<double>::quiet_NaN();
        if (latent) {
            latent->errors.row(i) << e1, e2;
            latent->scale(i) = scale;
            latent->inflated[i] = inflated;
            latent->y2(i) = y2;
        }
    }
    return d;
}

std::vector<std::pair<std::string, double>> design_truth(const SimDesign& design) {
    std::vector<std::pair<std::string, double>> t{
        {"beta_0", design.beta(0)},
        {"beta_1", design.beta(1)},
        {"gamma_0", design.selection_intercept()},
        {"gamma_1", design.gamma_slope(0)},
        {"gamma_2", design.gamma_slope(1)},
        {"sigma", std::sqrt(design.sigma2)},
        {"sigma2", design.sigma2},
        {"rho", design.rho},
    };
    if (design.law.kind == ErrorLaw::Kind::ContaminatedNormal) {
        t.emplace_back("nu1", design.law.nu1);
        t.emplace_back("nu2", design.law.nu2);
    }
    return t;
}

namespace {

double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

double sd(const std::vector<double>& v) {
    if (v.size() < 2) return std::nan("");
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

McModelFit fit_one(const SelectionData& data, ModelKind kind, const McOptions& opts) {
    McModelFit f;
    try {
        const FitResult r = fit_model(data, kind, opts.ecm, opts.k_override);
        f.converged = r.trace.converged;
        f.loglik = r.loglik;
        f.aic = r.aic;
        f.bic = r.bic;
        f.estimates = r.estimates();
        f.ok = f.converged;
        if (!f.converged) f.error = "no convergence in " + std::to_string(r.trace.iterations) + " iterations";
    } catch (const std::exception& e) {
        f.error = e.what();
    }
    return f;
}

}  // namespace

McSummary run_monte_carlo(const SimDesign& design, long n_reps, const std::vector<ModelKind>& models,
                          const McOptions& opts) {
    design.validate();
    opts.ecm.validate();
    if (n_reps < 1) throw std::invalid_argument("run_monte_carlo: n_reps must be at least 1");
    if (models.empty()) throw std::invalid_argument("run_monte_carlo: no models requested");

    McSummary out;
    out.design = design;
    out.gamma0 = design.selection_intercept();
    out.design.gamma0 = out.gamma0;
    out.n_reps = n_reps;

    std::vector<McReplicate> reps(n_reps);
    std::atomic<long> done{0};
    std::mutex progress_mutex;
    parallel_for(n_reps, opts.threads, [&](long rep) {
        auto rng = substream(design.seed, opts.same_stream ? 0 : static_cast<std::uint64_t>(rep));
        const SelectionData data = generate_dataset(out.design, rng);
        McReplicate& r = reps[rep];
        r.rep = rep;
        r.missing_rate = 1 - static_cast<double>(data.n_selected()) / static_cast<double>(data.n());
        for (ModelKind kind : models) r.fits.push_back(fit_one(data, kind, opts));
        const long k = ++done;
        if (opts.progress) {
            std::lock_guard<std::mutex> lock(progress_mutex);
            opts.progress(k, n_reps);
        }
    });

    std::vector<double> miss;
    for (const auto& r : reps) miss.push_back(r.missing_rate);
    out.mean_missing_rate = mean(miss);

    const auto truth = design_truth(out.design);
    auto truth_of = [&](const std::string& name) -> std::optional<double> {
        for (const auto& [k, v] : truth)
            if (k == name) return v;
        return std::nullopt;
    };

    for (std::size_t m = 0; m < models.size(); ++m) {
        McModelSummary s;
        s.kind = models[m];
        std::vector<double> aic, bic;
        std::vector<std::string> names;
        std::vector<std::vector<double>> values, ses;
        for (const auto& r : reps) {
            const auto& f = r.fits[m];
            if (!f.ok) {
                ++s.n_failed;
                out.failures.push_back("replicate " + std::to_string(r.rep) + " " + to_string(models[m]) + ": " +
                                       f.error);
                continue;
            }
            ++s.n_used;
            aic.push_back(f.aic);
            bic.push_back(f.bic);
            if (names.empty()) {
                for (const auto& e : f.estimates) names.push_back(e.name);
                values.resize(names.size());
                ses.resize(names.size());
            }
            for (std::size_t j = 0; j < names.size(); ++j) {
                values[j].push_back(f.estimates[j].value);
                ses[j].push_back(f.estimates[j].se);
            }
        }
        for (std::size_t j = 0; j < names.size(); ++j)
            s.params.push_back({names[j], truth_of(names[j]), mean(values[j]), mean(ses[j]), sd(values[j])});
        s.aic_mean = mean(aic);
        s.aic_sd = sd(aic);
        s.bic_mean = mean(bic);
        s.bic_sd = sd(bic);
        out.models.push_back(std::move(s));
    }

    std::vector<long> aic_wins(models.size(), 0), bic_wins(models.size(), 0);
    for (const auto& r : reps) {
        if (!std::all_of(r.fits.begin(), r.fits.end(), [](const McModelFit& f) { return f.ok; })) continue;
        ++out.n_selection_reps;
        std::size_t ba = 0, bb = 0;
        for (std::size_t m = 1; m < models.size(); ++m) {
            if (r.fits[m].aic < r.fits[ba].aic) ba = m;
            if (r.fits[m].bic < r.fits[bb].bic) bb = m;
        }
        ++aic_wins[ba];
        ++bic_wins[bb];
    }
    for (std::size_t m = 0; m < models.size(); ++m) {
        const double denom = static_cast<double>(out.n_selection_reps);
        out.models[m].aic_selected_pct = denom > 0 ? 100.0 * aic_wins[m] / denom : std::nan("");
        out.models[m].bic_selected_pct = denom > 0 ? 100.0 * bic_wins[m] / denom : std::nan("");
    }
    if (opts.keep_replicates) out.replicates = std::move(reps);
    return out;
}

}  // namespace heckcn
