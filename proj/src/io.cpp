#include "heckcn/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace heckcn {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    std::string t = s.substr(b, e - b + 1);
    if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = t.substr(1, t.size() - 2);
    return t;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& s, std::size_t line, const std::string& col) {
    if (s.empty() || s == "NA") return std::numeric_limits<double>::quiet_NaN();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || !std::isfinite(v))
        throw DataError("line " + std::to_string(line) + ", column '" + col + "': not a number: '" + s + "'");
    return v;
}

}  // namespace

std::size_t Table::index(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == name) return j;
    throw DataError("column '" + name + "' not found");
}

Table read_csv(std::istream& in) {
    Table t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!trim(line).empty()) break;
    }
    if (trim(line).empty()) throw DataError("empty CSV input");
    t.header = split(line);
    t.columns.resize(t.header.size());
    for (std::size_t j = 0; j < t.header.size(); ++j)
        for (std::size_t k = 0; k < j; ++k)
            if (t.header[j] == t.header[k]) throw DataError("duplicate column '" + t.header[j] + "'");
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto f = split(line);
        if (f.size() != t.header.size())
            throw DataError("line " + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                            " fields, found " + std::to_string(f.size()));
        for (std::size_t j = 0; j < f.size(); ++j) t.columns[j].push_back(parse_number(f[j], lineno, t.header[j]));
    }
    return t;
}

Table read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return read_csv(in);
}

SelectionData build_selection_data(const Table& table, const DataSpec& spec) {
    if (spec.x.empty() && !spec.intercept) throw DataError("no outcome covariates");
    if (spec.w.empty() && !spec.intercept) throw DataError("no selection covariates");
    const auto n = static_cast<Eigen::Index>(table.rows());
    if (n == 0) throw DataError("no data rows");
    const auto& yc = table.column(spec.outcome);
    const auto& sc = table.column(spec.selection);

    auto design = [&](const std::vector<std::string>& cols, std::vector<std::string>& names) {
        const Eigen::Index k = static_cast<Eigen::Index>(cols.size()) + (spec.intercept ? 1 : 0);
        Eigen::MatrixXd m(n, k);
        Eigen::Index j = 0;
        if (spec.intercept) {
            m.col(j++).setOnes();
            names.push_back("(Intercept)");
        }
        for (const auto& name : cols) {
            const auto& col = table.column(name);
            for (Eigen::Index i = 0; i < n; ++i) {
                if (std::isnan(col[i]) && sc[i] == 1)
                    throw DataError("covariate '" + name + "' is NA in row " + std::to_string(i + 1));
                m(i, j) = col[i];
            }
            names.push_back(name);
            ++j;
        }
        return m;
    };

    SelectionData d;
    d.x = design(spec.x, d.x_names);
    d.w = design(spec.w, d.w_names);
    d.c.resize(n);
    d.v1.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (sc[i] != 0 && sc[i] != 1)
            throw DataError("selection column '" + spec.selection + "' must be 0/1 (row " + std::to_string(i + 1) + ")");
        if (d.w.row(i).hasNaN()) throw DataError("selection covariate NA in row " + std::to_string(i + 1));
        d.c(i) = static_cast<int>(sc[i]);
        if (d.c(i) == 1 && std::isnan(yc[i]))
            throw DataError("outcome '" + spec.outcome + "' is NA in selected row " + std::to_string(i + 1));
        d.v1(i) = d.c(i) == 1 ? yc[i] : std::numeric_limits<double>::quiet_NaN();
        if (d.c(i) == 0 && d.x.row(i).hasNaN()) d.x.row(i).setZero();  // unused for censored rows
    }
    d.validate();
    return d;
}

std::string data_fingerprint(const SelectionData& d) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* p, std::size_t len) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    auto mix_value = [&](double v) {
        if (std::isnan(v)) v = std::numeric_limits<double>::quiet_NaN();
        mix(&v, sizeof v);
    };
    const std::int64_t shape[3] = {d.n(), d.p(), d.q()};
    mix(shape, sizeof shape);
    for (Eigen::Index i = 0; i < d.n(); ++i) {
        for (Eigen::Index j = 0; j < d.p(); ++j) mix_value(d.x(i, j));
        for (Eigen::Index j = 0; j < d.q(); ++j) mix_value(d.w(i, j));
        mix_value(d.v1(i));
        const int c = d.c(i);
        mix(&c, sizeof c);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string format_number(double v) {
    if (std::isnan(v)) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string init_name(InitMethod m) {
    switch (m) {
        case InitMethod::Grid: return "grid";
        case InitMethod::UserSupplied: return "user";
        default: return "two-step";
    }
}

}  // namespace

json fit_to_json(const FitResult& fit, const SelectionData& data, const FitMeta& meta) {
    json j;
    j["model"] = to_string(fit.kind);
    j["converged"] = fit.trace.converged;
    j["iterations"] = fit.trace.iterations;
    j["loglik"] = fit.loglik;
    j["aic"] = fit.aic;
    j["bic"] = fit.bic;
    j["k"] = fit.k;
    j["n"] = fit.n;
    j["nu_free"] = fit.nu_free;
    json est = json::object();
    for (const auto& e : fit.estimates())
        est[e.name] = {{"value", e.value}, {"se", number_or_null(e.se)}, {"lo", number_or_null(e.lo)},
                       {"hi", number_or_null(e.hi)}};
    j["estimates"] = est;
    j["theta"] = {{"beta", std::vector<double>(fit.theta.beta.data(), fit.theta.beta.data() + fit.theta.beta.size())},
                  {"gamma",
                   std::vector<double>(fit.theta.gamma.data(), fit.theta.gamma.data() + fit.theta.gamma.size())},
                  {"sigma2", fit.theta.sigma2},
                  {"rho", fit.theta.rho},
                  {"nu1", fit.theta.nu1},
                  {"nu2", fit.theta.nu2}};
    j["eps_hat"] = std::vector<double>(fit.eps_hat.data(), fit.eps_hat.data() + fit.eps_hat.size());
    std::vector<std::string> classes;
    long outliers = 0, inliers = 0;
    for (auto c : fit.classes) {
        classes.push_back(to_string(c));
        outliers += c == UnitClass::Outlier;
        inliers += c == UnitClass::Inlier;
    }
    j["classifications"] = classes;
    j["class_counts"] = {{"good", static_cast<long>(fit.classes.size()) - outliers - inliers},
                         {"outlier", outliers},
                         {"inlier", inliers}};
    j["information_pd"] = fit.info_pd;
    j["pseudo_inverse"] = fit.pseudo_inverse;
    j["warnings"] = fit.warnings;
    j["data"] = {{"path", meta.data_path},
                 {"n", data.n()},
                 {"n_selected", data.n_selected()},
                 {"fingerprint", data_fingerprint(data)},
                 {"outcome", meta.spec.outcome},
                 {"selection", meta.spec.selection},
                 {"x", meta.spec.x},
                 {"w", meta.spec.w},
                 {"intercept", meta.spec.intercept},
                 {"x_names", data.x_names},
                 {"w_names", data.w_names}};
    j["options"] = {{"tol", meta.options.tol},
                    {"max_iter", meta.options.max_iter},
                    {"init", init_name(meta.options.init)},
                    {"seed", meta.seed}};
    if (meta.options.fix_nu) j["options"]["fix_nu"] = {meta.options.fix_nu->first, meta.options.fix_nu->second};
    j["loglik_path"] = fit.trace.loglik_path;
    return j;
}

StoredFit stored_fit_from_json(const json& j) {
    try {
        StoredFit s;
        s.kind = parse_model_kind(j.at("model").get<std::string>());
        s.loglik = j.at("loglik").get<double>();
        s.converged = j.at("converged").get<bool>();
        s.iterations = j.at("iterations").get<int>();
        s.k = j.at("k").get<int>();
        s.nu_free = j.value("nu_free", true);
        const auto& t = j.at("theta");
        const auto beta = t.at("beta").get<std::vector<double>>();
        const auto gamma = t.at("gamma").get<std::vector<double>>();
        s.theta.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
        s.theta.gamma = Eigen::Map<const Eigen::VectorXd>(gamma.data(), static_cast<Eigen::Index>(gamma.size()));
        s.theta.sigma2 = t.at("sigma2").get<double>();
        s.theta.rho = t.at("rho").get<double>();
        s.theta.nu1 = t.at("nu1").get<double>();
        s.theta.nu2 = t.at("nu2").get<double>();
        const auto& d = j.at("data");
        s.n = d.at("n").get<long>();
        s.fingerprint = d.at("fingerprint").get<std::string>();
        s.x_names = d.at("x_names").get<std::vector<std::string>>();
        s.w_names = d.at("w_names").get<std::vector<std::string>>();
        s.data_path = d.value("path", "");
        s.spec.outcome = d.at("outcome").get<std::string>();
        s.spec.selection = d.at("selection").get<std::string>();
        s.spec.x = d.at("x").get<std::vector<std::string>>();
        s.spec.w = d.at("w").get<std::vector<std::string>>();
        s.spec.intercept = d.at("intercept").get<bool>();
        return s;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed fit file: ") + e.what());
    }
}

void write_fit_table(std::ostream& os, const FitResult& fit, const SelectionData& data) {
    os << "Model " << to_string(fit.kind) << "  n = " << data.n() << " (" << data.n_selected() << " observed)\n";
    os << "converged: " << (fit.trace.converged ? "yes" : "NO") << " after " << fit.trace.iterations
       << " iterations\n\n";
    os << std::left << std::setw(24) << "parameter" << std::right << std::setw(12) << "estimate" << std::setw(12)
       << "se" << std::setw(12) << "lo95" << std::setw(12) << "hi95" << "\n";
    for (const auto& e : fit.estimates())
        os << std::left << std::setw(24) << e.name << std::right << std::fixed << std::setprecision(4)
           << std::setw(12) << e.value << std::setw(12) << e.se << std::setw(12) << e.lo << std::setw(12) << e.hi
           << "\n";
    os << std::defaultfloat << std::setprecision(10);
    os << "\nloglik " << fit.loglik << "  AIC " << fit.aic << "  BIC " << fit.bic << "  (k = " << fit.k << ")\n";
    if (fit.kind == ModelKind::SLcn) {
        long out = 0, in = 0;
        for (auto c : fit.classes) {
            out += c == UnitClass::Outlier;
            in += c == UnitClass::Inlier;
        }
        os << "units: " << static_cast<long>(fit.classes.size()) - out - in << " good, " << out << " outliers, " << in
           << " inliers\n";
    }
    for (const auto& w : fit.warnings) os << "warning: " << w << "\n";
}

void write_mc_parameters_csv(std::ostream& os, const McSummary& s) {
    os << "parameter,truth";
    for (const auto& m : s.models) {
        const auto k = to_string(m.kind);
        os << "," << k << "_em_mean," << k << "_mean_info_se," << k << "_sd_across_reps";
    }
    os << "\n";
    std::vector<std::string> names;
    for (const auto& m : s.models)
        for (const auto& p : m.params)
            if (std::find(names.begin(), names.end(), p.name) == names.end()) names.push_back(p.name);
    const auto truth = design_truth(s.design);
    for (const auto& name : names) {
        double t = std::nan("");
        for (const auto& [k, v] : truth)
            if (k == name) t = v;
        os << name << "," << format_number(t);
        for (const auto& m : s.models) {
            const McParamSummary* p = nullptr;
            for (const auto& q : m.params)
                if (q.name == name) p = &q;
            if (p)
                os << "," << format_number(p->em_mean) << "," << format_number(p->mean_info_se) << ","
                   << format_number(p->sd_across_reps);
            else
                os << ",NA,NA,NA";
        }
        os << "\n";
    }
}

void write_mc_criteria_csv(std::ostream& os, const McSummary& s) {
    os << "model,n_used,n_failed,aic_mean,aic_sd,bic_mean,bic_sd,aic_selected_pct,bic_selected_pct\n";
    for (const auto& m : s.models)
        os << to_string(m.kind) << "," << m.n_used << "," << m.n_failed << "," << format_number(m.aic_mean) << ","
           << format_number(m.aic_sd) << "," << format_number(m.bic_mean) << "," << format_number(m.bic_sd) << ","
           << format_number(m.aic_selected_pct) << "," << format_number(m.bic_selected_pct) << "\n";
}

void write_mc_replicates_csv(std::ostream& os, const McSummary& s) {
    os << "replicate,missing_rate,model,ok,loglik,aic,bic,error\n";
    for (const auto& r : s.replicates)
        for (std::size_t m = 0; m < r.fits.size(); ++m) {
            const auto& f = r.fits[m];
            std::string err = f.error;
            for (auto& ch : err)
                if (ch == ',' || ch == '\n') ch = ';';
            os << r.rep << "," << format_number(r.missing_rate) << "," << to_string(s.models[m].kind) << ","
               << (f.ok ? 1 : 0) << "," << (f.ok ? format_number(f.loglik) : "NA") << ","
               << (f.ok ? format_number(f.aic) : "NA") << "," << (f.ok ? format_number(f.bic) : "NA") << "," << err
               << "\n";
        }
}

json mc_to_json(const McSummary& s) {
    json j;
    const auto& d = s.design;
    j["design"] = {{"n", d.n},
                   {"law", to_string(d.law)},
                   {"beta", std::vector<double>(d.beta.data(), d.beta.data() + d.beta.size())},
                   {"gamma_slope", std::vector<double>(d.gamma_slope.data(), d.gamma_slope.data() + 2)},
                   {"gamma0", s.gamma0},
                   {"target_missing_rate", d.target_missing_rate},
                   {"sigma2", d.sigma2},
                   {"rho", d.rho},
                   {"seed", d.seed}};
    j["n_reps"] = s.n_reps;
    j["n_selection_reps"] = s.n_selection_reps;
    j["mean_missing_rate"] = s.mean_missing_rate;
    json models = json::array();
    for (const auto& m : s.models) {
        json pm = json::object();
        for (const auto& p : m.params)
            pm[p.name] = {{"truth", p.truth ? json(*p.truth) : json(nullptr)},
                          {"em_mean", number_or_null(p.em_mean)},
                          {"mean_info_se", number_or_null(p.mean_info_se)},
                          {"sd_across_reps", number_or_null(p.sd_across_reps)}};
        models.push_back({{"model", to_string(m.kind)},
                          {"n_used", m.n_used},
                          {"n_failed", m.n_failed},
                          {"parameters", pm},
                          {"aic_mean", number_or_null(m.aic_mean)},
                          {"aic_sd", number_or_null(m.aic_sd)},
                          {"bic_mean", number_or_null(m.bic_mean)},
                          {"bic_sd", number_or_null(m.bic_sd)},
                          {"aic_selected_pct", number_or_null(m.aic_selected_pct)},
                          {"bic_selected_pct", number_or_null(m.bic_selected_pct)}});
    }
    j["models"] = models;
    j["failures"] = s.failures;
    return j;
}

}  // namespace heckcn
