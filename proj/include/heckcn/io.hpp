#pragma once

#include "heckcn/inference.hpp"
#include "heckcn/simulation.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace heckcn {

/// Numeric CSV with a header row. `NA` (exactly) and empty fields read as NaN.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> columns;

    std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
    /// Column index by name; throws DataError when absent.
    std::size_t index(const std::string& name) const;
    const std::vector<double>& column(const std::string& name) const { return columns[index(name)]; }
};

Table read_csv(std::istream& in);
Table read_csv_file(const std::string& path);

struct DataSpec {
    std::string outcome;
    std::string selection;
    std::vector<std::string> x;
    std::vector<std::string> w;
    bool intercept = true;  // prepend a constant column named "(Intercept)" to x and w
};

/// Builds model data by column name. The outcome may be NA only where selection = 0;
/// outcome values of unselected rows are ignored.
SelectionData build_selection_data(const Table& table, const DataSpec& spec);

/// Content fingerprint of a dataset (FNV-1a over shapes and values), hex encoded.
std::string data_fingerprint(const SelectionData& data);

/// Text formatting used for all numeric CSV output; NaN prints as NA.
std::string format_number(double v);

struct FitMeta {
    std::string data_path;
    DataSpec spec;
    EcmOptions options;
    std::uint64_t seed = 1;
};

nlohmann::json fit_to_json(const FitResult& fit, const SelectionData& data, const FitMeta& meta);

struct StoredFit {
    ModelKind kind = ModelKind::SLcn;
    Theta theta;
    double loglik = 0;
    bool converged = false;
    int iterations = 0;
    int k = 0;
    bool nu_free = true;
    long n = 0;
    std::string fingerprint;
    std::vector<std::string> x_names, w_names;
    DataSpec spec;
    std::string data_path;
};

StoredFit stored_fit_from_json(const nlohmann::json& j);

void write_fit_table(std::ostream& os, const FitResult& fit, const SelectionData& data);

/// Wide parameter table: parameter, truth, then em_mean / mean_info_se / sd_across_reps per model.
void write_mc_parameters_csv(std::ostream& os, const McSummary& s);
/// One row per model: criteria means and sds, selection percentages, usable and failed counts.
void write_mc_criteria_csv(std::ostream& os, const McSummary& s);
/// One row per replicate and model.
void write_mc_replicates_csv(std::ostream& os, const McSummary& s);
nlohmann::json mc_to_json(const McSummary& s);

}  // namespace heckcn
