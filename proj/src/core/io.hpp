#pragma once

#include <iosfwd>
#include <json.hpp>
#include <string>
#include <vector>

#include "core/causal.hpp"
#include "core/estimation.hpp"
#include "core/model.hpp"
#include "core/simulate.hpp"

namespace fanhmm {

using json = nlohmann::json;

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kBasisConvention = "qr-contrast/first-nonzero-positive";

/// Column layout of a long-format panel CSV.
struct DataSchema {
  std::string id = "id";
  std::string time = "time";
  std::string response = "y";
  std::vector<std::string> covariates;
  std::vector<std::string> categories;  // explicit code order; empty = lexicographic
  std::string missing_token = "NA";
};

/*!
 * Reads one row per (id, time). Rows are grouped by id (numeric order when
 * every id is an integer, lexicographic otherwise) and sorted by time.
 * Throws ErrorCode::Validation on duplicate keys, unknown categories and
 * missing or non-numeric covariates, ErrorCode::Io when the file cannot be
 * read.
 */
PanelDataset load_dataset(const std::string& path, const DataSchema& schema);
PanelDataset parse_dataset(std::istream& in, const DataSchema& schema,
                           const std::string& source = "<stream>");

/// Writes the columns of schema (covariates default to the dataset's), with
/// floats at 17 significant digits. include_states appends a "state" column
/// (1-based) when latent states are present.
void write_dataset(const std::string& path, const PanelDataset& dataset, const DataSchema& schema,
                   bool include_states = false);
void write_dataset(std::ostream& out, const PanelDataset& dataset, const DataSchema& schema,
                   bool include_states = false);

std::string format_double(double value);

// ---------------------------------------------------------------------------
// JSON documents
// ---------------------------------------------------------------------------

struct ModelDocument {
  ModelSpec spec;
  CoefficientSet coefficients;
  std::vector<std::string> category_labels;
  json fit;  // optional metadata
};

json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const json& j);

json model_to_json(const ModelDocument& model);
ModelDocument model_from_json(const json& j);

/// Spec from a config "model" section: {"states", "initial", "transition",
/// "emission"} term lists; covariates and categories come from the data.
ModelSpec spec_from_config(const json& model, int categories,
                           const std::vector<std::string>& covariates);

DataSchema schema_from_json(const json& j);
json schema_to_json(const DataSchema& schema);
FitOptions fit_options_from_json(const json& j, const std::string& path = "fit");
json fit_options_to_json(const FitOptions& options);
BootstrapOptions bootstrap_options_from_json(const json& j);

/// Plans in files use 1-based start times.
InterventionPlan plan_from_json(const json& j);
json plan_to_json(const InterventionPlan& plan);

DgpConfig dgp_from_json(const json& j);
MultistartExperimentConfig multistart_config_from_json(const json& j);
CoverageExperimentConfig coverage_config_from_json(const json& j);

json fit_result_to_json(const FitResult& fit);
json multistart_to_json(const MultistartReport& report);
json estimate_to_json(const CausalEstimate& estimate, const std::vector<std::string>& labels);
json ace_to_json(const std::vector<AceEstimate>& ace, const std::vector<std::string>& labels);
json bootstrap_to_json(const BootstrapResult& boot, const std::vector<AceEstimate>& point,
                       const std::vector<std::string>& labels);
json multistart_experiment_to_json(const MultistartExperimentReport& report);
json coverage_experiment_to_json(const CoverageExperimentReport& report);

json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j, const std::string& field);

}  // namespace fanhmm
