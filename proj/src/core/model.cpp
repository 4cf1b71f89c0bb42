#include "core/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "core/error.hpp"

namespace fanhmm {

namespace {

std::vector<std::string> split(const std::string& text, char delim) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream stream(text);
  while (std::getline(stream, item, delim)) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    out.push_back(first == std::string::npos ? std::string() : item.substr(first, last - first + 1));
  }
  return out;
}

bool has_lag(const std::vector<DesignTerm>& terms) {
  return std::any_of(terms.begin(), terms.end(), [](const DesignTerm& t) { return t.lag != kNoLag; });
}

void check_block(const Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols,
                 const std::string& name) {
  require(m.rows() == rows && m.cols() == cols, ErrorCode::Shape,
          name + " has shape " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
              ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  require(m.allFinite(), ErrorCode::Numeric, name + " has non-finite entries");
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelSpec
// ---------------------------------------------------------------------------

std::size_t ModelSpec::parameter_count() const {
  const std::size_t s = static_cast<std::size_t>(states);
  const std::size_t m = static_cast<std::size_t>(categories);
  return (s - 1) * k_pi() + s * (s - 1) * k_A() + s * (m - 1) * k_B();
}

void ModelSpec::validate() const {
  require(states >= 1, ErrorCode::Validation, "states must be at least 1");
  require(categories >= 2, ErrorCode::Validation, "categories must be at least 2");
  const auto check_terms = [&](const std::vector<DesignTerm>& terms, const std::string& name) {
    require(!terms.empty(), ErrorCode::Validation, name + " design has no columns");
    for (std::size_t j = 0; j < terms.size(); ++j) {
      for (int c : terms[j].covariates)
        require(c >= 0 && c < static_cast<int>(covariates.size()), ErrorCode::Validation,
                name + " column " + std::to_string(j) + " references unknown covariate");
      require(terms[j].lag == kNoLag || (terms[j].lag >= 1 && terms[j].lag < categories),
              ErrorCode::Validation,
              name + " column " + std::to_string(j) + " has lag category out of range");
      for (std::size_t k = 0; k < j; ++k)
        require(!(terms[k] == terms[j]), ErrorCode::Validation,
                name + " design repeats column " + term_label(terms[j], covariates));
    }
  };
  check_terms(initial_terms, "initial");
  check_terms(transition_terms, "transition");
  check_terms(emission_terms, "emission");
  require(!has_lag(initial_terms), ErrorCode::Validation,
          "initial design cannot depend on the lagged response");
  require(edge_y_to_z == has_lag(transition_terms), ErrorCode::Validation,
          edge_y_to_z ? "edge_y_to_z is set but the transition design has no lag columns"
                      : "transition design has lag columns but edge_y_to_z is not set");
  require(edge_y_to_y == has_lag(emission_terms), ErrorCode::Validation,
          edge_y_to_y ? "edge_y_to_y is set but the emission design has no lag columns"
                      : "emission design has lag columns but edge_y_to_y is not set");
}

std::vector<DesignTerm> expand_terms(const std::vector<std::string>& formula,
                                     const std::vector<std::string>& covariates,
                                     int categories, bool allow_lag,
                                     const std::string& component) {
  std::vector<DesignTerm> mains, lags, interactions;
  for (const auto& raw : formula) {
    const auto factors = split(raw, ':');
    std::vector<int> covs;
    bool lagged = false;
    for (const auto& f : factors) {
      if (f == "lag") {
        require(!lagged, ErrorCode::Validation, component + " term '" + raw + "' repeats lag");
        lagged = true;
        continue;
      }
      const auto it = std::find(covariates.begin(), covariates.end(), f);
      require(it != covariates.end(), ErrorCode::Validation,
              component + " term '" + raw + "' references unknown column '" + f + "'");
      covs.push_back(static_cast<int>(it - covariates.begin()));
    }
    require(!factors.empty() && (lagged || !covs.empty()), ErrorCode::Validation,
            component + " term '" + raw + "' is empty");
    require(allow_lag || !lagged, ErrorCode::Validation,
            component + " term '" + raw + "' cannot use the lagged response");
    if (!lagged) {
      (covs.size() == 1 ? mains : interactions).push_back(DesignTerm{covs, kNoLag});
    } else {
      auto& target = covs.empty() ? lags : interactions;
      for (int c = 1; c < categories; ++c) target.push_back(DesignTerm{covs, c});
    }
  }
  std::vector<DesignTerm> terms{DesignTerm{}};
  terms.insert(terms.end(), mains.begin(), mains.end());
  terms.insert(terms.end(), lags.begin(), lags.end());
  terms.insert(terms.end(), interactions.begin(), interactions.end());
  return terms;
}

ModelSpec ModelSpec::from_formulas(int states, int categories, std::vector<std::string> covariates,
                                   const std::vector<std::string>& initial,
                                   const std::vector<std::string>& transition,
                                   const std::vector<std::string>& emission) {
  ModelSpec spec;
  spec.states = states;
  spec.categories = categories;
  spec.covariates = std::move(covariates);
  spec.initial_terms = expand_terms(initial, spec.covariates, categories, false, "initial");
  spec.transition_terms = expand_terms(transition, spec.covariates, categories, true, "transition");
  spec.emission_terms = expand_terms(emission, spec.covariates, categories, true, "emission");
  spec.edge_y_to_z = has_lag(spec.transition_terms);
  spec.edge_y_to_y = has_lag(spec.emission_terms);
  spec.validate();
  return spec;
}

std::string term_label(const DesignTerm& term, const std::vector<std::string>& covariates) {
  if (term.is_intercept()) return "(intercept)";
  std::string out;
  for (int c : term.covariates) {
    if (!out.empty()) out += ':';
    out += c >= 0 && c < static_cast<int>(covariates.size()) ? covariates[c] : "?";
  }
  if (term.lag != kNoLag) {
    if (!out.empty()) out += ':';
    out += "lag[" + std::to_string(term.lag + 1) + "]";
  }
  return out;
}

int intercept_column(const std::vector<DesignTerm>& terms) {
  for (std::size_t j = 0; j < terms.size(); ++j)
    if (terms[j].is_intercept()) return static_cast<int>(j);
  return -1;
}

// ---------------------------------------------------------------------------
// CoefficientSet
// ---------------------------------------------------------------------------

CoefficientSet::CoefficientSet(const ModelSpec& spec, Eigen::MatrixXd eta_pi,
                               std::vector<Eigen::MatrixXd> eta_A,
                               std::vector<Eigen::MatrixXd> eta_B)
    : states_(spec.states),
      categories_(spec.categories),
      eta_pi_(std::move(eta_pi)),
      eta_A_(std::move(eta_A)),
      eta_B_(std::move(eta_B)),
      state_basis_(shared_basis(spec.states)),
      category_basis_(shared_basis(spec.categories)) {
  const int S = states_;
  const int M = categories_;
  check_block(eta_pi_, S - 1, spec.k_pi(), "eta_pi");
  require(static_cast<int>(eta_A_.size()) == S, ErrorCode::Shape,
          "expected one transition block per state");
  require(static_cast<int>(eta_B_.size()) == S, ErrorCode::Shape,
          "expected one emission block per state");
  gamma_pi_ = state_basis_->q * eta_pi_;
  gamma_A_.resize(S);
  gamma_B_.resize(S);
  for (int s = 0; s < S; ++s) {
    check_block(eta_A_[s], S - 1, spec.k_A(), "eta_A[" + std::to_string(s) + "]");
    check_block(eta_B_[s], M - 1, spec.k_B(), "eta_B[" + std::to_string(s) + "]");
    gamma_A_[s] = state_basis_->q * eta_A_[s];
    gamma_B_[s] = category_basis_->q * eta_B_[s];
  }
}

CoefficientSet CoefficientSet::zeros(const ModelSpec& spec) {
  const int S = spec.states;
  return CoefficientSet(spec, Eigen::MatrixXd::Zero(S - 1, spec.k_pi()),
                        std::vector<Eigen::MatrixXd>(S, Eigen::MatrixXd::Zero(S - 1, spec.k_A())),
                        std::vector<Eigen::MatrixXd>(
                            S, Eigen::MatrixXd::Zero(spec.categories - 1, spec.k_B())));
}

double CoefficientSet::squared_norm() const {
  double total = eta_pi_.squaredNorm();
  for (const auto& m : eta_A_) total += m.squaredNorm();
  for (const auto& m : eta_B_) total += m.squaredNorm();
  return total;
}

Eigen::VectorXd pack_parameters(const CoefficientSet& coeffs) {
  std::size_t n = coeffs.eta_pi().size();
  for (const auto& m : coeffs.eta_A()) n += m.size();
  for (const auto& m : coeffs.eta_B()) n += m.size();
  Eigen::VectorXd flat(n);
  Eigen::Index pos = 0;
  const auto put = [&](const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) flat[pos++] = m(i, j);
  };
  put(coeffs.eta_pi());
  for (const auto& m : coeffs.eta_A()) put(m);
  for (const auto& m : coeffs.eta_B()) put(m);
  return flat;
}

CoefficientSet unpack_parameters(const ModelSpec& spec, const Eigen::VectorXd& flat) {
  require(static_cast<std::size_t>(flat.size()) == spec.parameter_count(), ErrorCode::Shape,
          "parameter vector has length " + std::to_string(flat.size()) + ", expected " +
              std::to_string(spec.parameter_count()));
  Eigen::Index pos = 0;
  const auto take = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = flat[pos++];
    return m;
  };
  const int S = spec.states;
  Eigen::MatrixXd pi = take(S - 1, spec.k_pi());
  std::vector<Eigen::MatrixXd> A, B;
  for (int s = 0; s < S; ++s) A.push_back(take(S - 1, spec.k_A()));
  for (int s = 0; s < S; ++s) B.push_back(take(spec.categories - 1, spec.k_B()));
  return CoefficientSet(spec, std::move(pi), std::move(A), std::move(B));
}

CoefficientSet permute_states(const ModelSpec& spec, const CoefficientSet& coeffs,
                              const std::vector<int>& perm) {
  const int S = spec.states;
  require(static_cast<int>(perm.size()) == S, ErrorCode::Shape, "permutation has wrong length");
  std::vector<int> seen(S, 0);
  for (int p : perm) {
    require(p >= 0 && p < S && !seen[p], ErrorCode::Validation, "not a permutation of the states");
    seen[p] = 1;
  }
  const auto& qs = coeffs.state_basis().q;
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(S, S);
  for (int s = 0; s < S; ++s) P(s, perm[s]) = 1.0;

  Eigen::MatrixXd pi = qs.transpose() * (P * coeffs.gamma_pi());
  std::vector<Eigen::MatrixXd> A(S), B(S);
  for (int s = 0; s < S; ++s) {
    A[s] = qs.transpose() * (P * coeffs.gamma_A(perm[s]));
    B[s] = coeffs.eta_B(perm[s]);
  }
  return CoefficientSet(spec, std::move(pi), std::move(A), std::move(B));
}

// ---------------------------------------------------------------------------
// Probabilities
// ---------------------------------------------------------------------------

Eigen::VectorXd complete_row(const std::vector<DesignTerm>& terms, const Eigen::VectorXd& row,
                             int y_prev) {
  require(row.size() == static_cast<Eigen::Index>(terms.size()), ErrorCode::Shape,
          "design row has length " + std::to_string(row.size()) + ", expected " +
              std::to_string(terms.size()));
  Eigen::VectorXd out = row;
  for (std::size_t j = 0; j < terms.size(); ++j) {
    if (terms[j].lag == kNoLag) continue;
    require(y_prev != kMissing, ErrorCode::Validation,
            "lagged response is missing; marginalize it before evaluating the design");
    out[j] = y_prev == terms[j].lag ? row[j] : 0.0;
  }
  return out;
}

Eigen::VectorXd initial_probs(const CoefficientSet& coeffs, const Eigen::VectorXd& x_pi) {
  require(x_pi.size() == coeffs.gamma_pi().cols(), ErrorCode::Shape,
          "initial design row has wrong length");
  return softmax(coeffs.gamma_pi() * x_pi);
}

namespace {

Eigen::MatrixXd stochastic_matrix(const std::vector<RowMatrix>& gammas, int cols,
                                  const Eigen::VectorXd& x) {
  const int S = static_cast<int>(gammas.size());
  Eigen::MatrixXd out(S, cols);
  for (int s = 0; s < S; ++s) out.row(s) = softmax(gammas[s] * x).transpose();
  return out;
}

void check_y_prev(int y_prev, int categories) {
  require(y_prev == kMissing || (y_prev >= 0 && y_prev < categories), ErrorCode::Validation,
          "previous response " + std::to_string(y_prev) + " is out of range");
}

}  // namespace

Eigen::MatrixXd transition_matrix(const ModelSpec& spec, const CoefficientSet& coeffs,
                                  const Eigen::VectorXd& x_A, int y_prev) {
  check_y_prev(y_prev, spec.categories);
  std::vector<RowMatrix> gammas;
  for (int s = 0; s < spec.states; ++s) gammas.push_back(coeffs.gamma_A(s));
  return stochastic_matrix(gammas, spec.states, complete_row(spec.transition_terms, x_A, y_prev));
}

Eigen::MatrixXd emission_matrix(const ModelSpec& spec, const CoefficientSet& coeffs,
                                const Eigen::VectorXd& x_B, int y_prev) {
  check_y_prev(y_prev, spec.categories);
  std::vector<RowMatrix> gammas;
  for (int s = 0; s < spec.states; ++s) gammas.push_back(coeffs.gamma_B(s));
  return stochastic_matrix(gammas, spec.categories,
                           complete_row(spec.emission_terms, x_B, y_prev));
}

// ---------------------------------------------------------------------------
// Data and design
// ---------------------------------------------------------------------------

void PanelDataset::validate() const {
  require(categories >= 2, ErrorCode::Validation, "dataset needs at least two categories");
  require(category_labels.empty() || static_cast<int>(category_labels.size()) == categories,
          ErrorCode::Validation, "category label count does not match category count");
  const auto P = static_cast<Eigen::Index>(covariate_names.size());
  for (const auto& seq : sequences) {
    const int T = seq.length();
    require(T >= 1, ErrorCode::Validation, "sequence '" + seq.id + "' is empty");
    require(seq.covariates.rows() == T && seq.covariates.cols() == P, ErrorCode::Validation,
            "sequence '" + seq.id + "' has covariate matrix of wrong shape");
    require(seq.covariates.allFinite(), ErrorCode::Validation,
            "sequence '" + seq.id + "' has missing covariate values");
    for (int y : seq.y)
      require(y == kMissing || (y >= 0 && y < categories), ErrorCode::Validation,
              "sequence '" + seq.id + "' has a response code out of range");
    require(seq.times.empty() || static_cast<int>(seq.times.size()) == T, ErrorCode::Validation,
            "sequence '" + seq.id + "' has a time vector of wrong length");
  }
}

std::vector<int> resolve_covariates(const ModelSpec& spec,
                                    const std::vector<std::string>& dataset_covariates) {
  std::vector<int> columns;
  for (const auto& name : spec.covariates) {
    const auto it = std::find(dataset_covariates.begin(), dataset_covariates.end(), name);
    require(it != dataset_covariates.end(), ErrorCode::Validation,
            "model covariate '" + name + "' is not a dataset column");
    columns.push_back(static_cast<int>(it - dataset_covariates.begin()));
  }
  return columns;
}

namespace {

double term_value(const DesignTerm& term, const Eigen::MatrixXd& cov, int t,
                  const std::vector<int>& columns) {
  double v = 1.0;
  for (int c : term.covariates) v *= cov(t, columns[c]);
  return v;
}

}  // namespace

SequenceDesign design_sequence(const ModelSpec& spec, const Sequence& sequence,
                               const std::vector<int>& covariate_columns) {
  const int T = sequence.length();
  SequenceDesign d;
  d.y = sequence.y;
  d.x_pi.resize(spec.k_pi());
  for (int j = 0; j < spec.k_pi(); ++j)
    d.x_pi[j] = term_value(spec.initial_terms[j], sequence.covariates, 0, covariate_columns);
  d.x_A.resize(T, spec.k_A());
  d.x_B.resize(T, spec.k_B());
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < spec.k_A(); ++j)
      d.x_A(t, j) = term_value(spec.transition_terms[j], sequence.covariates, t, covariate_columns);
    for (int j = 0; j < spec.k_B(); ++j)
      d.x_B(t, j) = term_value(spec.emission_terms[j], sequence.covariates, t, covariate_columns);
  }
  return d;
}

DesignedPanel build_design(const PanelDataset& dataset, const ModelSpec& spec) {
  spec.validate();
  dataset.validate();
  require(dataset.categories == spec.categories, ErrorCode::Validation,
          "dataset has " + std::to_string(dataset.categories) + " categories, model expects " +
              std::to_string(spec.categories));
  DesignedPanel panel;
  panel.covariate_columns = resolve_covariates(spec, dataset.covariate_names);
  panel.sequences.reserve(dataset.sequences.size());
  for (const auto& seq : dataset.sequences) {
    if (spec.edge_y_to_y)
      require(seq.y.front() != kMissing, ErrorCode::Validation,
              "sequence '" + seq.id +
                  "' has a missing first response, which the y->y edge conditions on");
    panel.sequences.push_back(design_sequence(spec, seq, panel.covariate_columns));
  }
  return panel;
}

}  // namespace fanhmm
