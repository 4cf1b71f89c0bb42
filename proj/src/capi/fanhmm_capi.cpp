#include "fanhmm/fanhmm.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <optional>
#include <string>
#include <thread>

#include "core/causal.hpp"
#include "core/error.hpp"
#include "core/estimation.hpp"
#include "core/inference.hpp"
#include "core/io.hpp"
#include "core/parallel.hpp"
#include "core/simulate.hpp"

struct fanhmm_dataset {
  fanhmm::PanelDataset data;
};

struct fanhmm_model {
  fanhmm::ModelDocument doc;
};

namespace {

using fanhmm::ErrorCode;
using fanhmm::json;

thread_local std::string t_last_error;

fanhmm_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::Validation: return FANHMM_ERR_VALIDATION;
    case ErrorCode::Shape: return FANHMM_ERR_SHAPE;
    case ErrorCode::InvalidDimension: return FANHMM_ERR_INVALID_DIMENSION;
    case ErrorCode::InvalidGamma: return FANHMM_ERR_INVALID_GAMMA;
    case ErrorCode::DegenerateProbability: return FANHMM_ERR_DEGENERATE_PROBABILITY;
    case ErrorCode::Unsupported: return FANHMM_ERR_UNSUPPORTED;
    case ErrorCode::Io: return FANHMM_ERR_IO;
    case ErrorCode::Numeric: return FANHMM_ERR_NUMERIC;
    case ErrorCode::Compute: return FANHMM_ERR_COMPUTE;
  }
  return FANHMM_ERR_INTERNAL;
}

template <class F>
fanhmm_status guarded(F&& body) {
  try {
    body();
    t_last_error.clear();
    return FANHMM_OK;
  } catch (const fanhmm::Error& e) {
    t_last_error = e.what();
    return status_of(e.code());
  } catch (const json::exception& e) {
    t_last_error = std::string("json: ") + e.what();
    return FANHMM_ERR_VALIDATION;
  } catch (const std::bad_alloc&) {
    t_last_error = "out of memory";
    return FANHMM_ERR_COMPUTE;
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return FANHMM_ERR_INTERNAL;
  } catch (...) {
    t_last_error = "unknown failure";
    return FANHMM_ERR_INTERNAL;
  }
}

fanhmm_status null_argument(const char* function) {
  t_last_error = std::string(function) + ": null argument";
  return FANHMM_ERR_NULL_ARGUMENT;
}

json parse(const char* text, const char* field) {
  if (!text || !*text) return json();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fanhmm::fail(ErrorCode::Validation, std::string(field) + ": invalid JSON (" + e.what() + ")");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(const json& j, char** out) {
  if (out) *out = dup_string(j.dump(2));
}

fanhmm::DataSchema schema_of(const char* schema_json) {
  const json j = parse(schema_json, "schema");
  return j.is_null() ? fanhmm::DataSchema{} : fanhmm::schema_from_json(j);
}

std::vector<std::string> labels_of(const fanhmm_model* m, const fanhmm_dataset* d) {
  return d->data.category_labels.empty() ? m->doc.category_labels : d->data.category_labels;
}

void check_compatible(const fanhmm_model* m, const fanhmm_dataset* d) {
  fanhmm::require(m->doc.spec.categories == d->data.categories, ErrorCode::Validation,
                  "model.spec.categories: model has " + std::to_string(m->doc.spec.categories) +
                      " categories but the data have " + std::to_string(d->data.categories));
  fanhmm::resolve_covariates(m->doc.spec, d->data.covariate_names);
}

std::filesystem::path resolve(const std::string& path, const char* base_dir) {
  std::filesystem::path p(path);
  if (p.is_relative() && base_dir && *base_dir) p = std::filesystem::path(base_dir) / p;
  return p;
}

}  // namespace

extern "C" {

const char* fanhmm_version(void) { return "1.0.0"; }

const char* fanhmm_status_name(fanhmm_status status) {
  switch (status) {
    case FANHMM_OK: return "ok";
    case FANHMM_ERR_VALIDATION: return "validation";
    case FANHMM_ERR_SHAPE: return "shape";
    case FANHMM_ERR_INVALID_DIMENSION: return "invalid-dimension";
    case FANHMM_ERR_INVALID_GAMMA: return "invalid-gamma";
    case FANHMM_ERR_DEGENERATE_PROBABILITY: return "degenerate-probability";
    case FANHMM_ERR_UNSUPPORTED: return "unsupported";
    case FANHMM_ERR_IO: return "io";
    case FANHMM_ERR_NUMERIC: return "numeric";
    case FANHMM_ERR_COMPUTE: return "compute";
    case FANHMM_ERR_NULL_ARGUMENT: return "null-argument";
    case FANHMM_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* fanhmm_last_error(void) { return t_last_error.c_str(); }

void fanhmm_string_free(char* s) { std::free(s); }

fanhmm_status fanhmm_set_threads(int threads) {
  return guarded([&] {
    fanhmm::require(threads >= 0, ErrorCode::Validation, "threads: expected a value >= 0");
    int n = threads;
    if (n == 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    fanhmm::set_thread_count(n);
  });
}

fanhmm_status fanhmm_dataset_load(const char* path, const char* schema_json,
                                  fanhmm_dataset** out) {
  if (!path || !out) return null_argument(__func__);
  return guarded([&] {
    *out = nullptr;
    auto* d = new fanhmm_dataset{fanhmm::load_dataset(path, schema_of(schema_json))};
    *out = d;
  });
}

fanhmm_status fanhmm_dataset_write(const fanhmm_dataset* data, const char* path,
                                   const char* schema_json, int include_states) {
  if (!data || !path) return null_argument(__func__);
  return guarded(
      [&] { fanhmm::write_dataset(path, data->data, schema_of(schema_json), include_states != 0); });
}

fanhmm_status fanhmm_dataset_info(const fanhmm_dataset* data, char** json_out) {
  if (!data || !json_out) return null_argument(__func__);
  return guarded([&] {
    std::size_t obs = 0, missing = 0;
    int max_len = 0;
    for (const auto& s : data->data.sequences) {
      for (int y : s.y) (y == fanhmm::kMissing ? missing : obs) += 1;
      max_len = std::max(max_len, s.length());
    }
    json j;
    j["sequences"] = data->data.sequences.size();
    j["observations"] = obs;
    j["missing"] = missing;
    j["categories"] = data->data.category_labels;
    j["covariates"] = data->data.covariate_names;
    j["max_length"] = max_len;
    emit(j, json_out);
  });
}

void fanhmm_dataset_free(fanhmm_dataset* data) { delete data; }

fanhmm_status fanhmm_model_from_json(const char* text, fanhmm_model** out) {
  if (!text || !out) return null_argument(__func__);
  return guarded([&] {
    *out = nullptr;
    *out = new fanhmm_model{fanhmm::model_from_json(parse(text, "model"))};
  });
}

fanhmm_status fanhmm_model_to_json(const fanhmm_model* model, char** json_out) {
  if (!model || !json_out) return null_argument(__func__);
  return guarded([&] { emit(fanhmm::model_to_json(model->doc), json_out); });
}

void fanhmm_model_free(fanhmm_model* model) { delete model; }

fanhmm_status fanhmm_model_loglik(const fanhmm_model* model, const fanhmm_dataset* data,
                                  double lambda, double* penalized, double* loglik) {
  if (!model || !data) return null_argument(__func__);
  return guarded([&] {
    fanhmm::require(lambda >= 0.0, ErrorCode::Validation, "lambda: expected a value >= 0");
    check_compatible(model, data);
    const auto panel = fanhmm::build_design(data->data, model->doc.spec);
    const auto ll = fanhmm::loglik_dataset(model->doc.spec, model->doc.coefficients, panel, lambda);
    if (penalized) *penalized = ll.penalized;
    if (loglik) *loglik = ll.unpenalized;
  });
}

fanhmm_status fanhmm_simulate(const char* dgp_json, fanhmm_dataset** data_out,
                              fanhmm_model** truth_out) {
  if (!data_out) return null_argument(__func__);
  return guarded([&] {
    *data_out = nullptr;
    if (truth_out) *truth_out = nullptr;
    json j = parse(dgp_json, "simulate");
    if (j.is_null()) j = json::object();
    const fanhmm::DgpConfig cfg = fanhmm::dgp_from_json(j);
    auto* d = new fanhmm_dataset{fanhmm::simulate_dataset(cfg)};
    if (truth_out) {
      try {
        fanhmm::ModelDocument doc{cfg.spec, cfg.coefficients, d->data.category_labels, json()};
        *truth_out = new fanhmm_model{std::move(doc)};
      } catch (...) {
        delete d;
        throw;
      }
    }
    *data_out = d;
  });
}

fanhmm_status fanhmm_fit(const fanhmm_dataset* data, const char* model_json, const char* fit_json,
                         fanhmm_model** model_out, char** report_out) {
  if (!data || !model_json || !model_out) return null_argument(__func__);
  return guarded([&] {
    *model_out = nullptr;
    const json mj = parse(model_json, "model");
    json fj = parse(fit_json, "fit");
    if (fj.is_null()) fj = json::object();
    const auto spec =
        fanhmm::spec_from_config(mj, data->data.categories, data->data.covariate_names);
    const auto opts = fanhmm::fit_options_from_json(fj);
    int starts = 5;
    if (fj.contains("starts")) {
      fanhmm::require(fj["starts"].is_number_integer() && fj["starts"].get<int>() >= 1,
                      ErrorCode::Validation, "fit.starts: expected an integer >= 1");
      starts = fj["starts"].get<int>();
    }
    const auto panel = fanhmm::build_design(data->data, spec);
    const auto report = fanhmm::multistart(panel, spec, starts, opts);
    const auto& best = report.best_fit();
    json meta = fanhmm::fit_result_to_json(best);
    meta["options"] = fanhmm::fit_options_to_json(opts);
    meta["starts"] = starts;
    meta["best_start"] = report.best;
    meta["success_rate"] = report.success_rate;
    fanhmm::ModelDocument doc{spec, best.coefficients, data->data.category_labels, meta};
    auto* m = new fanhmm_model{std::move(doc)};
    try {
      if (report_out) emit(fanhmm::multistart_to_json(report), report_out);
    } catch (...) {
      delete m;
      throw;
    }
    *model_out = m;
  });
}

fanhmm_status fanhmm_estimate_do(const fanhmm_model* model, const fanhmm_dataset* data,
                                 const char* plan_json, char** json_out) {
  if (!model || !data || !plan_json || !json_out) return null_argument(__func__);
  return guarded([&] {
    check_compatible(model, data);
    const auto plan = fanhmm::plan_from_json(parse(plan_json, "plan"));
    const auto path =
        fanhmm::estimate_do_path(model->doc.spec, model->doc.coefficients, data->data, plan);
    json out = json::array();
    for (const auto& e : path) out.push_back(fanhmm::estimate_to_json(e, labels_of(model, data)));
    emit(out, json_out);
  });
}

fanhmm_status fanhmm_ace(const fanhmm_model* model, const fanhmm_dataset* data,
                         const char* treat_json, const char* control_json, char** json_out) {
  if (!model || !data || !treat_json || !control_json || !json_out) return null_argument(__func__);
  return guarded([&] {
    check_compatible(model, data);
    const auto treat = fanhmm::plan_from_json(parse(treat_json, "plans.treat"));
    const auto control = fanhmm::plan_from_json(parse(control_json, "plans.control"));
    const auto a =
        fanhmm::ace(model->doc.spec, model->doc.coefficients, data->data, treat, control);
    emit(fanhmm::ace_to_json(a, labels_of(model, data)), json_out);
  });
}

fanhmm_status fanhmm_bootstrap(const fanhmm_model* model, const fanhmm_dataset* data,
                               const char* treat_json, const char* control_json,
                               const char* options_json, char** json_out) {
  if (!model || !data || !treat_json || !control_json || !json_out)
    return null_argument(__func__);
  return guarded([&] {
    check_compatible(model, data);
    const auto treat = fanhmm::plan_from_json(parse(treat_json, "plans.treat"));
    const auto control = fanhmm::plan_from_json(parse(control_json, "plans.control"));
    const auto opts = fanhmm::bootstrap_options_from_json(parse(options_json, "bootstrap"));
    const auto& spec = model->doc.spec;
    const auto point = fanhmm::ace(spec, model->doc.coefficients, data->data, treat, control);
    const auto boot =
        fanhmm::bootstrap_ci(data->data, spec, model->doc.coefficients, treat, control, opts);
    emit(fanhmm::bootstrap_to_json(boot, point, labels_of(model, data)), json_out);
  });
}

fanhmm_status fanhmm_experiment_multistart(const char* config_json, char** json_out) {
  if (!config_json || !json_out) return null_argument(__func__);
  return guarded([&] {
    const auto cfg = fanhmm::multistart_config_from_json(parse(config_json, "config"));
    emit(fanhmm::multistart_experiment_to_json(fanhmm::run_multistart_experiment(cfg)), json_out);
  });
}

fanhmm_status fanhmm_experiment_coverage(const char* config_json, char** json_out) {
  if (!config_json || !json_out) return null_argument(__func__);
  return guarded([&] {
    const auto cfg = fanhmm::coverage_config_from_json(parse(config_json, "config"));
    emit(fanhmm::coverage_experiment_to_json(fanhmm::run_rmse_coverage_experiment(cfg)),
         json_out);
  });
}

fanhmm_status fanhmm_validate_config(const char* config_json, const char* base_dir,
                                     char** json_out) {
  if (!config_json) return null_argument(__func__);
  return guarded([&] {
    const json cfg = parse(config_json, "config");
    fanhmm::require(cfg.is_object(), ErrorCode::Validation, "config: expected an object");
    if (cfg.contains("format_version"))
      fanhmm::require(cfg["format_version"] == 1, ErrorCode::Validation,
                      "config.format_version: unsupported value");
    json report;
    std::vector<std::string> checked;

    std::optional<fanhmm::PanelDataset> data;
    if (cfg.contains("data")) {
      const json& d = cfg["data"];
      fanhmm::require(d.is_object() && d.contains("path") && d["path"].is_string(),
                      ErrorCode::Validation, "data.path: required string");
      const auto schema = fanhmm::schema_from_json(d);
      data = fanhmm::load_dataset(resolve(d["path"].get<std::string>(), base_dir).string(), schema);
      report["sequences"] = data->sequences.size();
      report["categories"] = data->category_labels;
      checked.push_back("data");
    }
    if (cfg.contains("model")) {
      fanhmm::require(data.has_value(), ErrorCode::Validation,
                      "model: a data section is required to check model terms");
      const auto spec =
          fanhmm::spec_from_config(cfg["model"], data->categories, data->covariate_names);
      fanhmm::build_design(*data, spec);
      report["parameters"] = spec.parameter_count();
      checked.push_back("model");
    }
    if (cfg.contains("fit")) {
      fanhmm::fit_options_from_json(cfg["fit"]);
      const json& f = cfg["fit"];
      if (f.contains("starts"))
        fanhmm::require(f["starts"].is_number_integer() && f["starts"].get<int>() >= 1,
                        ErrorCode::Validation, "fit.starts: expected an integer >= 1");
      checked.push_back("fit");
    }
    if (cfg.contains("plans")) {
      const json& p = cfg["plans"];
      for (const char* name : {"treat", "control"}) {
        fanhmm::require(p.contains(name), ErrorCode::Validation,
                        std::string("plans.") + name + ": required field is missing");
        const auto plan = fanhmm::plan_from_json(p[name]);
        if (data) plan.validate(data->covariate_names);
      }
      checked.push_back("plans");
    }
    if (cfg.contains("bootstrap")) {
      fanhmm::bootstrap_options_from_json(cfg["bootstrap"]);
      checked.push_back("bootstrap");
    }
    if (cfg.contains("simulate")) {
      fanhmm::dgp_from_json(cfg["simulate"]);
      checked.push_back("simulate");
    }
    if (cfg.contains("experiment")) {
      fanhmm::multistart_config_from_json(cfg);
      fanhmm::coverage_config_from_json(cfg);
      checked.push_back("experiment");
    }
    report["checked"] = checked;
    report["valid"] = true;
    emit(report, json_out);
  });
}

}  // extern "C"
