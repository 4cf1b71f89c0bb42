#include "core/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "core/error.hpp"

namespace fanhmm {

namespace {

// ---------------------------------------------------------------------------
// JSON field access with path-qualified errors
// ---------------------------------------------------------------------------

const json* find_field(const json& obj, const std::string& key) {
  if (!obj.is_object()) return nullptr;
  const auto it = obj.find(key);
  return it == obj.end() || it->is_null() ? nullptr : &*it;
}

double get_number(const json& obj, const std::string& key, const std::string& path,
                  double fallback) {
  const json* v = find_field(obj, key);
  if (!v) return fallback;
  require(v->is_number(), ErrorCode::Validation, path + "." + key + ": expected a number");
  return v->get<double>();
}

double require_number(const json& obj, const std::string& key, const std::string& path) {
  const json* v = find_field(obj, key);
  require(v != nullptr, ErrorCode::Validation, path + "." + key + ": required field is missing");
  require(v->is_number(), ErrorCode::Validation, path + "." + key + ": expected a number");
  return v->get<double>();
}

int get_int(const json& obj, const std::string& key, const std::string& path, int fallback) {
  const json* v = find_field(obj, key);
  if (!v) return fallback;
  require(v->is_number_integer(), ErrorCode::Validation,
          path + "." + key + ": expected an integer");
  return v->get<int>();
}

std::uint64_t get_seed(const json& obj, const std::string& key, const std::string& path,
                       std::uint64_t fallback) {
  const json* v = find_field(obj, key);
  if (!v) return fallback;
  require(v->is_number_unsigned() || (v->is_number_integer() && v->get<long long>() >= 0),
          ErrorCode::Validation, path + "." + key + ": expected a non-negative integer");
  return v->get<std::uint64_t>();
}

bool get_bool(const json& obj, const std::string& key, const std::string& path, bool fallback) {
  const json* v = find_field(obj, key);
  if (!v) return fallback;
  require(v->is_boolean(), ErrorCode::Validation, path + "." + key + ": expected true or false");
  return v->get<bool>();
}

std::string get_string(const json& obj, const std::string& key, const std::string& path,
                       const std::string& fallback) {
  const json* v = find_field(obj, key);
  if (!v) return fallback;
  require(v->is_string(), ErrorCode::Validation, path + "." + key + ": expected a string");
  return v->get<std::string>();
}

std::vector<std::string> get_strings(const json& obj, const std::string& key,
                                     const std::string& path) {
  std::vector<std::string> out;
  const json* v = find_field(obj, key);
  if (!v) return out;
  require(v->is_array(), ErrorCode::Validation, path + "." + key + ": expected an array");
  for (const auto& e : *v) {
    require(e.is_string(), ErrorCode::Validation,
            path + "." + key + ": expected an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::vector<int> get_ints(const json& obj, const std::string& key, const std::string& path,
                          std::vector<int> fallback) {
  const json* v = find_field(obj, key);
  if (!v) return fallback;
  require(v->is_array(), ErrorCode::Validation, path + "." + key + ": expected an array");
  std::vector<int> out;
  for (const auto& e : *v) {
    require(e.is_number_integer(), ErrorCode::Validation,
            path + "." + key + ": expected an array of integers");
    out.push_back(e.get<int>());
  }
  return out;
}

std::vector<double> get_doubles(const json& obj, const std::string& key, const std::string& path,
                                std::vector<double> fallback) {
  const json* v = find_field(obj, key);
  if (!v) return fallback;
  require(v->is_array(), ErrorCode::Validation, path + "." + key + ": expected an array");
  std::vector<double> out;
  for (const auto& e : *v) {
    require(e.is_number(), ErrorCode::Validation,
            path + "." + key + ": expected an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

json merged(json base, const json& patch, const std::string& path) {
  require(patch.is_object(), ErrorCode::Validation, path + ": expected an object");
  base.merge_patch(patch);
  return base;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(finite_or_null(v[i]));
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::vector<std::string> split_csv_line(const std::string& line, const std::string& source,
                                        std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  require(!quoted, ErrorCode::Validation,
          source + ":" + std::to_string(line_no) + ": unterminated quoted field");
  fields.push_back(cur);
  return fields;
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  const char* first = text.data();
  const char* last = first + text.size();
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last;
}

bool parse_integer(const std::string& text, long long& out) {
  if (text.empty()) return false;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string plan_mode_name(InterventionMode mode) {
  return mode == InterventionMode::Recurring ? "recurring" : "atomic";
}

json term_to_json(const DesignTerm& term, const std::vector<std::string>& covariates) {
  json j;
  j["label"] = term_label(term, covariates);
  json covs = json::array();
  for (int c : term.covariates) covs.push_back(covariates.at(c));
  j["covariates"] = covs;
  if (term.lag != kNoLag) j["lag"] = term.lag + 1;
  return j;
}

DesignTerm term_from_json(const json& j, const std::vector<std::string>& covariates,
                          const std::string& path) {
  require(j.is_object(), ErrorCode::Validation, path + ": expected an object");
  DesignTerm term;
  for (const auto& name : get_strings(j, "covariates", path)) {
    const auto it = std::find(covariates.begin(), covariates.end(), name);
    require(it != covariates.end(), ErrorCode::Validation,
            path + ".covariates: unknown covariate '" + name + "'");
    term.covariates.push_back(static_cast<int>(it - covariates.begin()));
  }
  const int lag = get_int(j, "lag", path, 0);
  term.lag = lag == 0 ? kNoLag : lag - 1;
  return term;
}

std::vector<DesignTerm> terms_from_json(const json& obj, const std::string& key,
                                        const std::vector<std::string>& covariates,
                                        const std::string& path) {
  const json* v = find_field(obj, key);
  require(v && v->is_array(), ErrorCode::Validation, path + "." + key + ": expected an array");
  std::vector<DesignTerm> out;
  for (std::size_t i = 0; i < v->size(); ++i)
    out.push_back(term_from_json((*v)[i], covariates, path + "." + key + "[" + std::to_string(i) + "]"));
  return out;
}

}  // namespace

std::string format_double(double value) {
  if (std::isnan(value)) return "NaN";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

PanelDataset parse_dataset(std::istream& in, const DataSchema& schema, const std::string& source) {
  std::string line;
  std::size_t line_no = 1;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::Validation,
          source + ": missing header row");
  const auto header = split_csv_line(line, source, line_no);
  const auto column = [&](const std::string& name, const std::string& role) {
    const auto it = std::find(header.begin(), header.end(), name);
    require(it != header.end(), ErrorCode::Validation,
            source + ": " + role + " column '" + name + "' is not in the header");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = column(schema.id, "data.id");
  const std::size_t time_col = column(schema.time, "data.time");
  const std::size_t y_col = column(schema.response, "data.response");
  std::vector<std::size_t> cov_cols;
  for (const auto& c : schema.covariates) cov_cols.push_back(column(c, "data.covariates"));

  struct Row {
    std::string id;
    double time;
    std::string y;
    std::vector<double> cov;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line, source, line_no);
    const std::string where = source + ":" + std::to_string(line_no);
    require(f.size() == header.size(), ErrorCode::Validation,
            where + ": expected " + std::to_string(header.size()) + " fields, found " +
                std::to_string(f.size()));
    Row r;
    r.id = f[id_col];
    require(!r.id.empty(), ErrorCode::Validation, where + ": empty " + schema.id);
    require(parse_double(f[time_col], r.time) && std::isfinite(r.time), ErrorCode::Validation,
            where + ": " + schema.time + " value '" + f[time_col] + "' is not a number");
    r.y = f[y_col];
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      const std::string& raw = f[cov_cols[k]];
      double v = 0.0;
      require(raw != schema.missing_token, ErrorCode::Validation,
              where + ": covariate " + schema.covariates[k] + " is missing");
      require(parse_double(raw, v) && std::isfinite(v), ErrorCode::Validation,
              where + ": covariate " + schema.covariates[k] + " value '" + raw +
                  "' is not a finite number");
      r.cov.push_back(v);
    }
    rows.push_back(std::move(r));
  }
  require(!rows.empty(), ErrorCode::Validation, source + ": no data rows");

  // Categories.
  std::vector<std::string> labels = schema.categories;
  if (labels.empty()) {
    std::set<std::string> seen;
    for (const auto& r : rows)
      if (r.y != schema.missing_token) seen.insert(r.y);
    labels.assign(seen.begin(), seen.end());
  }
  require(labels.size() >= 2, ErrorCode::Validation,
          source + ": the response needs at least two categories");
  std::map<std::string, int> code;
  for (std::size_t m = 0; m < labels.size(); ++m) {
    require(code.emplace(labels[m], static_cast<int>(m)).second, ErrorCode::Validation,
            "data.categories: duplicate label '" + labels[m] + "'");
  }

  // Id order.
  bool numeric = true;
  for (const auto& r : rows) {
    long long v;
    if (!parse_integer(r.id, v)) {
      numeric = false;
      break;
    }
  }
  const auto id_less = [&](const std::string& a, const std::string& b) {
    if (numeric) {
      long long x = 0, y = 0;
      parse_integer(a, x);
      parse_integer(b, y);
      return x < y;
    }
    return a < b;
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const Row& a, const Row& b) {
    if (a.id != b.id) return id_less(a.id, b.id);
    return a.time < b.time;
  });

  PanelDataset data;
  data.categories = static_cast<int>(labels.size());
  data.category_labels = labels;
  data.covariate_names = schema.covariates;
  const Eigen::Index P = static_cast<Eigen::Index>(schema.covariates.size());
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i;
    while (j < rows.size() && rows[j].id == rows[i].id) ++j;
    Sequence seq;
    seq.id = rows[i].id;
    seq.covariates.resize(static_cast<Eigen::Index>(j - i), P);
    for (std::size_t k = i; k < j; ++k) {
      if (k > i)
        require(rows[k].time != rows[k - 1].time, ErrorCode::Validation,
                source + ": duplicate (" + schema.id + ", " + schema.time + ") key (" +
                    rows[k].id + ", " + format_double(rows[k].time) + ")");
      seq.times.push_back(rows[k].time);
      if (rows[k].y == schema.missing_token) {
        seq.y.push_back(kMissing);
      } else {
        const auto it = code.find(rows[k].y);
        require(it != code.end(), ErrorCode::Validation,
                source + ": unknown category '" + rows[k].y + "' for id " + rows[k].id);
        seq.y.push_back(it->second);
      }
      for (Eigen::Index c = 0; c < P; ++c)
        seq.covariates(static_cast<Eigen::Index>(k - i), c) = rows[k].cov[c];
    }
    data.sequences.push_back(std::move(seq));
    i = j;
  }
  data.validate();
  return data;
}

PanelDataset load_dataset(const std::string& path, const DataSchema& schema) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open data file '" + path + "'");
  return parse_dataset(in, schema, path);
}

void write_dataset(std::ostream& out, const PanelDataset& dataset, const DataSchema& schema,
                   bool include_states) {
  const std::vector<std::string> covs =
      schema.covariates.empty() ? dataset.covariate_names : schema.covariates;
  std::vector<int> cols;
  for (const auto& c : covs) {
    const auto it = std::find(dataset.covariate_names.begin(), dataset.covariate_names.end(), c);
    require(it != dataset.covariate_names.end(), ErrorCode::Validation,
            "covariate '" + c + "' is not in the dataset");
    cols.push_back(static_cast<int>(it - dataset.covariate_names.begin()));
  }
  out << csv_escape(schema.id) << ',' << csv_escape(schema.time) << ','
      << csv_escape(schema.response);
  for (const auto& c : covs) out << ',' << csv_escape(c);
  if (include_states) out << ",state";
  out << '\n';
  for (const auto& seq : dataset.sequences) {
    for (int t = 0; t < seq.length(); ++t) {
      out << csv_escape(seq.id) << ','
          << format_double(seq.times.empty() ? t + 1.0 : seq.times[t]) << ',';
      out << (seq.y[t] == kMissing ? schema.missing_token
                                   : csv_escape(dataset.category_labels.at(seq.y[t])));
      for (int c : cols) out << ',' << format_double(seq.covariates(t, c));
      if (include_states)
        out << ',' << (seq.states.empty() ? std::string("NA") : std::to_string(seq.states[t] + 1));
      out << '\n';
    }
  }
}

void write_dataset(const std::string& path, const PanelDataset& dataset, const DataSchema& schema,
                   bool include_states) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::Io, "cannot write data file '" + path + "'");
  write_dataset(out, dataset, schema, include_states);
  require(out.good(), ErrorCode::Io, "failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Model documents
// ---------------------------------------------------------------------------

json spec_to_json(const ModelSpec& spec) {
  json j;
  j["states"] = spec.states;
  j["categories"] = spec.categories;
  j["covariates"] = spec.covariates;
  const auto terms = [&](const std::vector<DesignTerm>& ts) {
    json a = json::array();
    for (const auto& t : ts) a.push_back(term_to_json(t, spec.covariates));
    return a;
  };
  j["initial"] = terms(spec.initial_terms);
  j["transition"] = terms(spec.transition_terms);
  j["emission"] = terms(spec.emission_terms);
  j["edge_y_to_y"] = spec.edge_y_to_y;
  j["edge_y_to_z"] = spec.edge_y_to_z;
  return j;
}

ModelSpec spec_from_json(const json& j) {
  const std::string path = "model.spec";
  require(j.is_object(), ErrorCode::Validation, path + ": expected an object");
  ModelSpec spec;
  spec.states = static_cast<int>(require_number(j, "states", path));
  spec.categories = static_cast<int>(require_number(j, "categories", path));
  spec.covariates = get_strings(j, "covariates", path);
  spec.initial_terms = terms_from_json(j, "initial", spec.covariates, path);
  spec.transition_terms = terms_from_json(j, "transition", spec.covariates, path);
  spec.emission_terms = terms_from_json(j, "emission", spec.covariates, path);
  spec.edge_y_to_y = get_bool(j, "edge_y_to_y", path, false);
  spec.edge_y_to_z = get_bool(j, "edge_y_to_z", path, false);
  spec.validate();
  return spec;
}

json model_to_json(const ModelDocument& model) {
  json j;
  j["format_version"] = kModelFormatVersion;
  j["basis"] = kBasisConvention;
  j["spec"] = spec_to_json(model.spec);
  j["category_labels"] = model.category_labels;
  const Eigen::VectorXd flat = pack_parameters(model.coefficients);
  j["parameters"] = std::vector<double>(flat.data(), flat.data() + flat.size());
  if (!model.fit.is_null()) j["fit"] = model.fit;
  return j;
}

ModelDocument model_from_json(const json& j) {
  require(j.is_object(), ErrorCode::Validation, "model: expected an object");
  const int version = get_int(j, "format_version", "model", -1);
  require(version == kModelFormatVersion, ErrorCode::Validation,
          "model.format_version: unsupported value " + std::to_string(version));
  const std::string basis = get_string(j, "basis", "model", kBasisConvention);
  require(basis == kBasisConvention, ErrorCode::Validation,
          "model.basis: unknown convention '" + basis + "'");
  const json* spec = find_field(j, "spec");
  require(spec != nullptr, ErrorCode::Validation, "model.spec: required field is missing");
  ModelDocument doc;
  doc.spec = spec_from_json(*spec);
  const auto params = get_doubles(j, "parameters", "model", {});
  require(params.size() == doc.spec.parameter_count(), ErrorCode::Validation,
          "model.parameters: expected " + std::to_string(doc.spec.parameter_count()) +
              " values, found " + std::to_string(params.size()));
  doc.coefficients = unpack_parameters(
      doc.spec, Eigen::Map<const Eigen::VectorXd>(params.data(), static_cast<Eigen::Index>(params.size())));
  doc.category_labels = get_strings(j, "category_labels", "model");
  if (doc.category_labels.empty())
    for (int m = 0; m < doc.spec.categories; ++m) doc.category_labels.push_back(std::to_string(m + 1));
  require(static_cast<int>(doc.category_labels.size()) == doc.spec.categories,
          ErrorCode::Validation, "model.category_labels: expected one label per category");
  if (const json* f = find_field(j, "fit")) doc.fit = *f;
  return doc;
}

ModelSpec spec_from_config(const json& model, int categories,
                           const std::vector<std::string>& covariates) {
  const std::string path = "model";
  require(model.is_object(), ErrorCode::Validation, path + ": expected an object");
  const int states = get_int(model, "states", path, -1);
  require(states >= 1, ErrorCode::Validation, path + ".states: expected a positive integer");
  return ModelSpec::from_formulas(states, categories, covariates,
                                  get_strings(model, "initial", path),
                                  get_strings(model, "transition", path),
                                  get_strings(model, "emission", path));
}

DataSchema schema_from_json(const json& j) {
  const std::string path = "data";
  DataSchema s;
  s.id = get_string(j, "id", path, s.id);
  s.time = get_string(j, "time", path, s.time);
  s.response = get_string(j, "response", path, s.response);
  s.covariates = get_strings(j, "covariates", path);
  s.categories = get_strings(j, "categories", path);
  s.missing_token = get_string(j, "missing_token", path, s.missing_token);
  return s;
}

json schema_to_json(const DataSchema& s) {
  json j;
  j["id"] = s.id;
  j["time"] = s.time;
  j["response"] = s.response;
  j["covariates"] = s.covariates;
  if (!s.categories.empty()) j["categories"] = s.categories;
  j["missing_token"] = s.missing_token;
  return j;
}

FitOptions fit_options_from_json(const json& j, const std::string& path) {
  FitOptions o;
  if (j.is_null()) return o;
  require(j.is_object(), ErrorCode::Validation, path + ": expected an object");
  o.method = parse_fit_method(get_string(j, "method", path, fit_method_name(o.method)));
  o.max_em_iterations = get_int(j, "max_em_iterations", path, o.max_em_iterations);
  o.em_rel_tol = get_number(j, "em_rel_tol", path, o.em_rel_tol);
  o.rel_tol = get_number(j, "rel_tol", path, o.rel_tol);
  o.max_iterations = get_int(j, "max_iterations", path, o.max_iterations);
  o.lambda = get_number(j, "lambda", path, o.lambda);
  o.seed = get_seed(j, "seed", path, o.seed);
  o.validate();
  return o;
}

json fit_options_to_json(const FitOptions& o) {
  json j;
  j["method"] = fit_method_name(o.method);
  j["max_em_iterations"] = o.max_em_iterations;
  j["em_rel_tol"] = o.em_rel_tol;
  j["rel_tol"] = o.rel_tol;
  j["max_iterations"] = o.max_iterations;
  j["lambda"] = o.lambda;
  j["seed"] = o.seed;
  return j;
}

BootstrapOptions bootstrap_options_from_json(const json& j) {
  const std::string path = "bootstrap";
  BootstrapOptions o;
  if (j.is_null()) return o;
  require(j.is_object(), ErrorCode::Validation, path + ": expected an object");
  o.replicates = get_int(j, "replicates", path, o.replicates);
  o.level = get_number(j, "level", path, o.level);
  o.random_starts = get_int(j, "random_starts", path, o.random_starts);
  o.warm_start = get_bool(j, "warm_start", path, o.warm_start);
  o.original_data = get_bool(j, "original_data", path, o.original_data);
  o.seed = get_seed(j, "seed", path, o.seed);
  if (const json* f = find_field(j, "fit")) o.fit = fit_options_from_json(*f, "bootstrap.fit");
  o.validate();
  return o;
}

InterventionPlan plan_from_json(const json& j) {
  const std::string path = "plan";
  require(j.is_object(), ErrorCode::Validation, path + ": expected an object");
  InterventionPlan p;
  p.covariates = get_strings(j, "covariates", path);
  require(!p.covariates.empty(), ErrorCode::Validation, path + ".covariates: required field");
  const int start = get_int(j, "start", path, 0);
  require(start >= 1, ErrorCode::Validation, path + ".start: expected a 1-based time >= 1");
  p.start = start - 1;
  p.horizon = get_int(j, "horizon", path, 0);
  const std::string mode = get_string(j, "mode", path, "recurring");
  if (mode == "recurring") {
    p.mode = InterventionMode::Recurring;
  } else if (mode == "atomic") {
    p.mode = InterventionMode::Atomic;
  } else {
    fail(ErrorCode::Validation, path + ".mode: expected recurring or atomic (got '" + mode + "')");
  }
  p.covariate_autocorrelation = get_bool(j, "covariate_autocorrelation", path, false);
  const json* v = find_field(j, "values");
  require(v && v->is_array() && !v->empty(), ErrorCode::Validation,
          path + ".values: expected a nonempty array");
  if ((*v)[0].is_array()) {
    for (const auto& row : *v) {
      require(row.is_array(), ErrorCode::Validation, path + ".values: mixed rows");
      std::vector<double> r;
      for (const auto& e : row) {
        require(e.is_number(), ErrorCode::Validation, path + ".values: expected numbers");
        r.push_back(e.get<double>());
      }
      p.values.push_back(r);
    }
  } else {
    std::vector<double> r;
    for (const auto& e : *v) {
      require(e.is_number(), ErrorCode::Validation, path + ".values: expected numbers");
      r.push_back(e.get<double>());
    }
    p.values.push_back(r);
  }
  return p;
}

json plan_to_json(const InterventionPlan& p) {
  json j;
  j["covariates"] = p.covariates;
  j["values"] = p.values;
  j["start"] = p.start + 1;
  j["horizon"] = p.horizon;
  j["mode"] = plan_mode_name(p.mode);
  j["covariate_autocorrelation"] = p.covariate_autocorrelation;
  return j;
}

DgpConfig dgp_from_json(const json& j) {
  const std::string path = "simulate";
  require(j.is_object(), ErrorCode::Validation, path + ": expected an object");
  const int N = get_int(j, "N", path, 200);
  const int T = get_int(j, "T", path, 20);
  const std::uint64_t seed = get_seed(j, "seed", path, 1);
  DgpConfig cfg;
  const std::string preset = get_string(j, "preset", path, "default");
  if (const json* model = find_field(j, "model")) {
    const ModelDocument doc = model_from_json(*model);
    cfg.spec = doc.spec;
    cfg.coefficients = doc.coefficients;
    cfg.category_labels = doc.category_labels;
    cfg.N = N;
    cfg.T = T;
    cfg.seed = seed;
  } else if (preset == "default") {
    cfg = default_dgp(N, T, seed, false);
  } else if (preset == "null") {
    cfg = default_dgp(N, T, seed, true);
  } else if (preset == "intercept") {
    cfg = intercept_only_dgp(N, T, seed);
  } else {
    fail(ErrorCode::Validation,
         path + ".preset: expected default, null or intercept (got '" + preset + "')");
  }
  cfg.T_min = get_int(j, "T_min", path, cfg.T_min);
  cfg.missing_rate = get_number(j, "missing_rate", path, cfg.missing_rate);
  if (const json* covs = find_field(j, "covariates")) {
    require(covs->is_array(), ErrorCode::Validation, path + ".covariates: expected an array");
    cfg.covariates.clear();
    for (std::size_t i = 0; i < covs->size(); ++i) {
      const json& c = (*covs)[i];
      const std::string cp = path + ".covariates[" + std::to_string(i) + "]";
      CovariateProcess p;
      p.name = get_string(c, "name", cp, "");
      require(!p.name.empty(), ErrorCode::Validation, cp + ".name: required field");
      p.kind = parse_covariate_kind(get_string(c, "kind", cp, "trend"));
      p.mean = get_number(c, "mean", cp, p.mean);
      p.sd = get_number(c, "sd", cp, p.sd);
      p.sd_u = get_number(c, "sd_u", cp, p.sd_u);
      p.v_max = get_number(c, "v_max", cp, p.v_max);
      p.noise = get_number(c, "noise", cp, p.noise);
      p.prob = get_number(c, "prob", cp, p.prob);
      p.step_from = get_int(c, "step_from", cp, p.step_from);
      p.step_to = get_int(c, "step_to", cp, p.step_to);
      cfg.covariates.push_back(p);
    }
  }
  cfg.validate();
  return cfg;
}

MultistartExperimentConfig multistart_config_from_json(const json& j) {
  const std::string path = "experiment";
  MultistartExperimentConfig c;
  const json* sim = find_field(j, "simulate");
  c.dgp = dgp_from_json(sim ? *sim : json::object());
  const json* e = find_field(j, "experiment");
  const json ex = e ? *e : json::object();
  c.states = get_ints(ex, "states", path, c.states);
  c.lambdas = get_doubles(ex, "lambdas", path, c.lambdas);
  const auto methods = get_strings(ex, "methods", path);
  if (!methods.empty()) {
    c.methods.clear();
    for (const auto& m : methods) c.methods.push_back(parse_fit_method(m));
  }
  c.replications = get_int(ex, "replications", path, c.replications);
  c.seed = get_seed(ex, "seed", path, c.dgp.seed);
  if (const json* f = find_field(j, "fit")) c.fit = fit_options_from_json(*f);
  return c;
}

CoverageExperimentConfig coverage_config_from_json(const json& j) {
  const std::string path = "experiment";
  CoverageExperimentConfig c;
  const json* sim = find_field(j, "simulate");
  c.dgp = dgp_from_json(sim ? *sim : json::object());
  const json* e = find_field(j, "experiment");
  const json ex = e ? *e : json::object();
  c.states = get_ints(ex, "states", path, c.states);
  const int start = get_int(ex, "start", path, 0);
  c.start = start >= 1 ? start - 1 : -1;
  c.horizons = get_int(ex, "horizons", path, c.horizons);
  const auto target = get_strings(ex, "target", path);
  if (!target.empty()) c.target = target;
  c.treat_value = get_number(ex, "treat_value", path, c.treat_value);
  c.control_value = get_number(ex, "control_value", path, c.control_value);
  c.replications = get_int(ex, "replications", path, c.replications);
  c.bootstrap = get_int(ex, "bootstrap", path, c.bootstrap);
  c.level = get_number(ex, "level", path, c.level);
  c.starts = get_int(ex, "starts", path, c.starts);
  c.bootstrap_random_starts = get_int(ex, "bootstrap_random_starts", path, c.bootstrap_random_starts);
  c.truth_N = get_int(ex, "truth_N", path, c.truth_N);
  c.seed = get_seed(ex, "seed", path, c.dgp.seed);
  if (const json* f = find_field(j, "fit")) c.fit = fit_options_from_json(merged(fit_options_to_json(c.fit), *f, "fit"));
  c.bootstrap_fit.lambda = c.fit.lambda;
  if (const json* f = find_field(ex, "bootstrap_fit"))
    c.bootstrap_fit = fit_options_from_json(
        merged(fit_options_to_json(c.bootstrap_fit), *f, "experiment.bootstrap_fit"),
        "experiment.bootstrap_fit");
  return c;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

json matrix_to_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(finite_or_null(m(r, c)));
    out.push_back(row);
  }
  return out;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& field) {
  require(j.is_array() && !j.empty() && j[0].is_array(), ErrorCode::Validation,
          field + ": expected a nonempty array of rows");
  const std::size_t rows = j.size(), cols = j[0].size();
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    require(j[r].is_array() && j[r].size() == cols, ErrorCode::Validation,
            field + ": rows have different lengths");
    for (std::size_t c = 0; c < cols; ++c) {
      require(j[r][c].is_number(), ErrorCode::Validation, field + ": expected numbers");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

json fit_result_to_json(const FitResult& f) {
  json j;
  j["penalized_loglik"] = finite_or_null(f.penalized_loglik);
  j["loglik"] = finite_or_null(f.unpenalized_loglik);
  j["em_iterations"] = f.em_iterations;
  j["qn_iterations"] = f.qn_iterations;
  j["evaluations"] = f.evaluations;
  j["converged"] = f.converged;
  j["status"] = f.status;
  json trace = json::array();
  for (double v : f.em_trace) trace.push_back(finite_or_null(v));
  j["em_trace"] = trace;
  return j;
}

json multistart_to_json(const MultistartReport& r) {
  json j;
  j["best"] = r.best;
  j["success_rate"] = r.success_rate;
  json starts = json::array();
  for (std::size_t i = 0; i < r.fits.size(); ++i) {
    json s = fit_result_to_json(r.fits[i]);
    s["start"] = i;
    s["success"] = static_cast<bool>(r.success[i]);
    s["failed"] = static_cast<bool>(r.failed[i]);
    starts.push_back(s);
  }
  j["starts"] = starts;
  return j;
}

json estimate_to_json(const CausalEstimate& e, const std::vector<std::string>& labels) {
  json j;
  j["time"] = e.time + 1;
  j["horizon"] = e.horizon;
  j["categories"] = labels;
  j["joint"] = matrix_to_json(e.joint);
  j["y_marginal"] = vector_to_json(e.y_marginal);
  j["z_marginal"] = vector_to_json(e.z_marginal);
  j["y_given_z"] = matrix_to_json(e.y_given_z);
  j["n_sequences"] = e.n_sequences;
  j["n_excluded"] = e.n_excluded;
  return j;
}

json ace_to_json(const std::vector<AceEstimate>& ace, const std::vector<std::string>& labels) {
  json out = json::array();
  for (const auto& a : ace) {
    json j;
    j["time"] = a.time + 1;
    j["horizon"] = a.horizon;
    j["categories"] = labels;
    j["ace"] = vector_to_json(a.y);
    j["ace_given_z"] = matrix_to_json(a.y_given_z);
    j["treat"] = estimate_to_json(a.treat, labels);
    j["control"] = estimate_to_json(a.control, labels);
    out.push_back(j);
  }
  return out;
}

json bootstrap_to_json(const BootstrapResult& boot, const std::vector<AceEstimate>& point,
                       const std::vector<std::string>& labels) {
  json j;
  j["level"] = boot.level;
  j["kept"] = boot.replicates.size();
  j["dropped"] = boot.dropped;
  j["unreliable"] = boot.unreliable;
  json horizons = json::array();
  for (std::size_t h = 0; h < boot.lower.size(); ++h) {
    json e;
    e["time"] = point.at(h).time + 1;
    e["horizon"] = point.at(h).horizon;
    e["categories"] = labels;
    e["estimate"] = vector_to_json(point[h].y);
    e["lower"] = vector_to_json(boot.lower[h].row(0).transpose());
    e["upper"] = vector_to_json(boot.upper[h].row(0).transpose());
    e["estimate_given_z"] = matrix_to_json(point[h].y_given_z);
    e["lower_given_z"] = matrix_to_json(boot.lower_given_z[h]);
    e["upper_given_z"] = matrix_to_json(boot.upper_given_z[h]);
    horizons.push_back(e);
  }
  j["horizons"] = horizons;
  json reps = json::array();
  for (std::size_t r = 0; r < boot.replicates.size(); ++r) {
    json rep;
    rep["replicate"] = boot.replicate_ids[r];
    json ace = json::array();
    for (const auto& a : boot.replicates[r]) ace.push_back(vector_to_json(a.y));
    rep["ace"] = ace;
    reps.push_back(rep);
  }
  j["replicates"] = reps;
  return j;
}

json multistart_experiment_to_json(const MultistartExperimentReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    json j;
    j["states"] = r.states;
    j["lambda"] = r.lambda;
    j["method"] = fit_method_name(r.method);
    j["runs"] = r.runs;
    j["successes"] = r.successes;
    j["failures"] = r.failures;
    j["success_rate"] = r.success_rate;
    j["best_loglik"] = finite_or_null(r.best_loglik);
    json ll = json::array();
    for (double v : r.logliks) ll.push_back(finite_or_null(v));
    j["logliks"] = ll;
    rows.push_back(j);
  }
  json out;
  out["rows"] = rows;
  return out;
}

json coverage_experiment_to_json(const CoverageExperimentReport& report) {
  json out;
  json truth = json::array();
  for (const auto& t : report.truth) {
    json j;
    j["time"] = t.time + 1;
    j["horizon"] = t.horizon;
    j["ace"] = vector_to_json(t.y);
    truth.push_back(j);
  }
  out["truth"] = truth;
  json cells = json::array();
  for (const auto& c : report.cells) {
    json j;
    j["states"] = c.states;
    j["horizon"] = c.horizon;
    j["category"] = c.category + 1;
    j["truth"] = c.truth;
    j["rmse"] = finite_or_null(c.rmse);
    j["bias"] = finite_or_null(c.bias);
    j["coverage"] = finite_or_null(c.coverage);
    j["replications"] = c.replications;
    cells.push_back(j);
  }
  out["cells"] = cells;
  json summary = json::array();
  for (const auto& s : report.summary) {
    json j;
    j["states"] = s.states;
    j["rmse"] = finite_or_null(s.rmse);
    j["coverage"] = finite_or_null(s.coverage);
    j["replications"] = s.replications;
    j["unreliable"] = s.unreliable;
    summary.push_back(j);
  }
  out["summary"] = summary;
  return out;
}

}  // namespace fanhmm
