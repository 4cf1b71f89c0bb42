#include "core/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace fanhmm {

namespace {

/*
 * The filter runs over the pair (z_t, y_t). When y_t is observed only the
 * column y_t is live, so the cost matches an ordinary HMM; when it is missing
 * the full S x M joint is carried to the next step, where each possible
 * lagged response m selects its own A_t(m) and B_t(m).
 */
struct Entry {
  int lag;     // y_{t-1} value this entry conditions on, or kNoLag
  int a_off;   // offset of A (S x S) in Workspace::a
  int b_off;   // offset of B (S x M) in Workspace::b
  int xa_off;  // offset of the completed transition row
  int xb_off;  // offset of the completed emission row
};

struct Workspace {
  int T = 0, S = 0, M = 0, KA = 0, KB = 0;
  std::vector<int> entry_begin;  // T + 1
  std::vector<Entry> entries;
  std::vector<int> lag_a, lag_b;  // per design column: lag code or kNoLag
  std::vector<double> pi, a, b, xa, xb;
  std::vector<double> f, u, h;   // per entry, S each
  std::vector<double> F, D, G;   // per time, S x M each (row-major)
  std::vector<double> logc;
  std::vector<double> w_pi, wa, wb;  // posterior weights of one step

  double* Ft(int t) { return F.data() + static_cast<std::size_t>(t) * S * M; }
  double* Dt(int t) { return D.data() + static_cast<std::size_t>(t) * S * M; }
  double* Gt(int t) { return G.data() + static_cast<std::size_t>(t) * S * M; }
};

Workspace& thread_workspace() {
  thread_local Workspace ws;
  return ws;
}

inline bool compatible(int y, int m) { return y == kMissing || y == m; }

inline void linear_softmax(const RowMatrix& gamma, const double* x, int k, double* out) {
  const int dim = static_cast<int>(gamma.rows());
  const double* g = gamma.data();
  for (int r = 0; r < dim; ++r, g += k) {
    double eta = 0.0;
    for (int j = 0; j < k; ++j) eta += g[j] * x[j];
    out[r] = eta;
  }
  softmax_inplace(out, dim);
}

inline void complete_into(const int* lags, int k, const double* row, int lag, double* out) {
  for (int j = 0; j < k; ++j) out[j] = (lags[j] == kNoLag || lags[j] == lag) ? row[j] : 0.0;
}

/// Evaluates pi, and A_t / B_t for every lag value each step can condition on.
void prepare(const ModelSpec& spec, const CoefficientSet& coeffs, const SequenceDesign& seq,
             int T, Workspace& ws) {
  const int S = spec.states, M = spec.categories, KA = spec.k_A(), KB = spec.k_B();
  ws.T = T;
  ws.S = S;
  ws.M = M;
  ws.KA = KA;
  ws.KB = KB;
  ws.lag_a.resize(KA);
  ws.lag_b.resize(KB);
  for (int j = 0; j < KA; ++j) ws.lag_a[j] = spec.transition_terms[j].lag;
  for (int j = 0; j < KB; ++j) ws.lag_b[j] = spec.emission_terms[j].lag;

  const bool lag_matters = spec.edge_y_to_y || spec.edge_y_to_z;
  const auto lag_range = [&](int t, int& first, int& last) {
    first = last = kNoLag;
    if (t > 0 && lag_matters) {
      if (seq.y[t - 1] != kMissing) {
        first = last = seq.y[t - 1];
      } else {
        first = 0;
        last = M - 1;
      }
    }
  };

  std::size_t n_entries = 0, n_a = 0, n_b = 0;
  for (int t = 0; t < T; ++t) {
    int first, last;
    lag_range(t, first, last);
    const std::size_t count = static_cast<std::size_t>(last - first + 1);
    n_entries += count;
    if (t > 0) n_a += spec.edge_y_to_z ? count : 1;
    if (!(t == 0 && spec.edge_y_to_y)) n_b += spec.edge_y_to_y ? count : 1;
  }
  ws.entries.resize(n_entries);
  ws.entry_begin.resize(T + 1);
  ws.a.resize(n_a * S * S);
  ws.xa.resize(n_a * KA);
  ws.b.resize(n_b * S * M);
  ws.xb.resize(n_b * KB);

  ws.pi.resize(S);
  linear_softmax(coeffs.gamma_pi(), seq.x_pi.data(), spec.k_pi(), ws.pi.data());

  int ei = 0, ia = 0, ib = 0;
  for (int t = 0; t < T; ++t) {
    ws.entry_begin[t] = ei;
    int first, last;
    lag_range(t, first, last);
    const double* row_a = seq.x_A.data() + static_cast<std::size_t>(t) * KA;
    const double* row_b = seq.x_B.data() + static_cast<std::size_t>(t) * KB;
    int shared_a = -1, shared_b = -1;
    for (int lag = first; lag <= last; ++lag, ++ei) {
      Entry& e = ws.entries[ei];
      e = Entry{lag, -1, -1, -1, -1};
      if (t > 0) {
        if (spec.edge_y_to_z || shared_a < 0) {
          e.xa_off = ia * KA;
          e.a_off = ia * S * S;
          ++ia;
          double* xa = ws.xa.data() + e.xa_off;
          complete_into(ws.lag_a.data(), KA, row_a, lag, xa);
          for (int s = 0; s < S; ++s)
            linear_softmax(coeffs.gamma_A(s), xa, KA,
                           ws.a.data() + e.a_off + static_cast<std::size_t>(s) * S);
          shared_a = ei;
        } else {
          e.a_off = ws.entries[shared_a].a_off;
          e.xa_off = ws.entries[shared_a].xa_off;
        }
      }
      if (!(t == 0 && spec.edge_y_to_y)) {
        if (spec.edge_y_to_y || shared_b < 0) {
          e.xb_off = ib * KB;
          e.b_off = ib * S * M;
          ++ib;
          double* xb = ws.xb.data() + e.xb_off;
          complete_into(ws.lag_b.data(), KB, row_b, lag, xb);
          for (int s = 0; s < S; ++s)
            linear_softmax(coeffs.gamma_B(s), xb, KB,
                           ws.b.data() + e.b_off + static_cast<std::size_t>(s) * M);
          shared_b = ei;
        } else {
          e.b_off = ws.entries[shared_b].b_off;
          e.xb_off = ws.entries[shared_b].xb_off;
        }
      }
    }
  }
  ws.entry_begin[T] = ei;
}

/// Normalizes D_t against the observation at t, writing F_t and log c_t.
void condition_on(Workspace& ws, int t, int y) {
  const int S = ws.S, M = ws.M;
  double* D = ws.Dt(t);
  double* F = ws.Ft(t);
  double c = 0.0;
  if (y == kMissing) {
    for (int i = 0; i < S * M; ++i) c += D[i];
    const double inv = 1.0 / c;
    for (int i = 0; i < S * M; ++i) F[i] = D[i] * inv;
  } else {
    for (int s = 0; s < S; ++s) c += D[s * M + y];
    const double inv = 1.0 / c;
    for (int i = 0; i < S * M; ++i) F[i] = 0.0;
    for (int s = 0; s < S; ++s) F[s * M + y] = D[s * M + y] * inv;
  }
  ws.logc[t] = std::log(c);
}

double run_forward(const ModelSpec& spec, const SequenceDesign& seq, Workspace& ws) {
  const int T = ws.T, S = ws.S, M = ws.M;
  const std::size_t SM = static_cast<std::size_t>(S) * M;
  ws.F.assign(T * SM, 0.0);
  ws.D.assign(T * SM, 0.0);
  ws.logc.assign(T, 0.0);
  ws.f.assign(ws.entries.size() * S, 0.0);
  ws.u.assign(ws.entries.size() * S, 0.0);

  // t = 0
  {
    double* D = ws.Dt(0);
    if (spec.edge_y_to_y) {
      require(seq.y[0] != kMissing, ErrorCode::Validation,
              "first response is missing but the y->y edge conditions on it");
      for (int s = 0; s < S; ++s) D[s * M + seq.y[0]] = ws.pi[s];
    } else {
      const double* B = ws.b.data() + ws.entries[0].b_off;
      for (int s = 0; s < S; ++s)
        for (int m = 0; m < M; ++m) D[s * M + m] = ws.pi[s] * B[s * M + m];
    }
    condition_on(ws, 0, seq.y[0]);
  }

  for (int t = 1; t < T; ++t) {
    const double* Fp = ws.Ft(t - 1);
    double* D = ws.Dt(t);
    for (int ei = ws.entry_begin[t]; ei < ws.entry_begin[t + 1]; ++ei) {
      const Entry& e = ws.entries[ei];
      double* f = ws.f.data() + static_cast<std::size_t>(ei) * S;
      double* u = ws.u.data() + static_cast<std::size_t>(ei) * S;
      for (int s = 0; s < S; ++s) {
        if (e.lag == kNoLag) {
          double acc = 0.0;
          for (int m = 0; m < M; ++m) acc += Fp[s * M + m];
          f[s] = acc;
        } else {
          f[s] = Fp[s * M + e.lag];
        }
      }
      const double* A = ws.a.data() + e.a_off;
      for (int r = 0; r < S; ++r) {
        double acc = 0.0;
        for (int s = 0; s < S; ++s) acc += f[s] * A[s * S + r];
        u[r] = acc;
      }
      const double* B = ws.b.data() + e.b_off;
      for (int r = 0; r < S; ++r)
        for (int m = 0; m < M; ++m) D[r * M + m] += u[r] * B[r * M + m];
    }
    condition_on(ws, t, seq.y[t]);
  }

  double loglik = 0.0;
  for (int t = 0; t < T; ++t) loglik += ws.logc[t];
  return loglik;
}

void run_backward(const SequenceDesign& seq, Workspace& ws) {
  const int T = ws.T, S = ws.S, M = ws.M;
  const std::size_t SM = static_cast<std::size_t>(S) * M;
  ws.G.assign(T * SM, 0.0);
  ws.h.assign(ws.entries.size() * S, 0.0);
  {
    double* G = ws.Gt(T - 1);
    for (int s = 0; s < S; ++s)
      for (int m = 0; m < M; ++m) G[s * M + m] = compatible(seq.y[T - 1], m) ? 1.0 : 0.0;
  }
  for (int t = T - 1; t >= 1; --t) {
    const double* G = ws.Gt(t);
    double* Gp = ws.Gt(t - 1);
    const double inv_c = std::exp(-ws.logc[t]);
    const int y = seq.y[t];
    const int yp = seq.y[t - 1];
    for (int ei = ws.entry_begin[t]; ei < ws.entry_begin[t + 1]; ++ei) {
      const Entry& e = ws.entries[ei];
      const double* A = ws.a.data() + e.a_off;
      const double* B = ws.b.data() + e.b_off;
      double* h = ws.h.data() + static_cast<std::size_t>(ei) * S;
      if (y == kMissing) {
        for (int r = 0; r < S; ++r) {
          double acc = 0.0;
          for (int m = 0; m < M; ++m) acc += B[r * M + m] * G[r * M + m];
          h[r] = acc;
        }
      } else {
        for (int r = 0; r < S; ++r) h[r] = B[r * M + y] * G[r * M + y];
      }
      for (int s = 0; s < S; ++s) {
        double v = 0.0;
        for (int r = 0; r < S; ++r) v += A[s * S + r] * h[r];
        v *= inv_c;
        if (e.lag == kNoLag) {
          for (int m = 0; m < M; ++m)
            if (compatible(yp, m)) Gp[s * M + m] += v;
        } else {
          Gp[s * M + e.lag] += v;
        }
      }
    }
  }
}

/*
 * Walks the posterior weights of every softmax row: visit_initial(w_pi),
 * visit_transition(t, entry, W_A) with W_A S x S row-major, and
 * visit_emission(t, entry, W_B) with W_B S x M row-major (entry == nullptr at
 * t = 0).
 */
template <class InitialFn, class TransitionFn, class EmissionFn>
void visit_counts(const ModelSpec& spec, const SequenceDesign& seq, Workspace& ws,
                  InitialFn&& visit_initial, TransitionFn&& visit_transition,
                  EmissionFn&& visit_emission) {
  const int T = ws.T, S = ws.S, M = ws.M;
  ws.w_pi.assign(S, 0.0);
  ws.wa.resize(static_cast<std::size_t>(S) * S);
  ws.wb.resize(static_cast<std::size_t>(S) * M);
  double* w_pi = ws.w_pi.data();
  double* wa = ws.wa.data();
  double* wb = ws.wb.data();
  {
    const double* F = ws.Ft(0);
    const double* G = ws.Gt(0);
    for (int s = 0; s < S; ++s)
      for (int m = 0; m < M; ++m) {
        wb[s * M + m] = F[s * M + m] * G[s * M + m];
        w_pi[s] += wb[s * M + m];
      }
    visit_initial(w_pi);
    if (!spec.edge_y_to_y) visit_emission(0, &ws.entries[0], wb);
  }
  for (int t = 1; t < T; ++t) {
    const double inv_c = std::exp(-ws.logc[t]);
    const double* G = ws.Gt(t);
    const int y = seq.y[t];
    for (int ei = ws.entry_begin[t]; ei < ws.entry_begin[t + 1]; ++ei) {
      const Entry& e = ws.entries[ei];
      const double* A = ws.a.data() + e.a_off;
      const double* B = ws.b.data() + e.b_off;
      const double* f = ws.f.data() + static_cast<std::size_t>(ei) * S;
      const double* u = ws.u.data() + static_cast<std::size_t>(ei) * S;
      const double* h = ws.h.data() + static_cast<std::size_t>(ei) * S;
      for (int s = 0; s < S; ++s)
        for (int r = 0; r < S; ++r) wa[s * S + r] = f[s] * A[s * S + r] * h[r] * inv_c;
      for (int r = 0; r < S; ++r)
        for (int m = 0; m < M; ++m)
          wb[r * M + m] = compatible(y, m) ? u[r] * B[r * M + m] * G[r * M + m] * inv_c : 0.0;
      visit_transition(t, e, wa);
      visit_emission(t, &e, wb);
    }
  }
}

int resolve_last(const SequenceDesign& seq, int last_time) {
  const int T = seq.length();
  require(T >= 1, ErrorCode::Validation, "sequence is empty");
  if (last_time < 0) return T;
  require(last_time < T, ErrorCode::Validation,
          "last time " + std::to_string(last_time) + " exceeds sequence length " +
              std::to_string(T));
  return last_time + 1;
}

void check_sequence(const ModelSpec& spec, const SequenceDesign& seq) {
  require(seq.x_pi.size() == spec.k_pi() && seq.x_A.cols() == spec.k_A() &&
              seq.x_B.cols() == spec.k_B() && seq.x_A.rows() == seq.length() &&
              seq.x_B.rows() == seq.length(),
          ErrorCode::Shape, "sequence design does not match the model spec");
  for (int y : seq.y)
    if (y != kMissing && (y < 0 || y >= spec.categories))
      fail(ErrorCode::Validation, "response code " + std::to_string(y) + " is out of range");
}

/// Per-sequence gradient in gamma space, laid out like the packed vector but
/// with full S (or M) rows per block.
struct GammaGradient {
  RowMatrix pi;
  std::vector<RowMatrix> A, B;

  GammaGradient(const ModelSpec& spec)
      : pi(RowMatrix::Zero(spec.states, spec.k_pi())),
        A(spec.states, RowMatrix::Zero(spec.states, spec.k_A())),
        B(spec.states, RowMatrix::Zero(spec.categories, spec.k_B())) {}
};

void accumulate_row(RowMatrix& g, const double* w, const double* p, const double* x, int dim,
                    int k) {
  double total = 0.0;
  for (int j = 0; j < dim; ++j) total += w[j];
  if (total == 0.0) return;
  for (int j = 0; j < dim; ++j) {
    const double coef = w[j] - total * p[j];
    double* row = g.data() + static_cast<std::size_t>(j) * k;
    for (int c = 0; c < k; ++c) row[c] += coef * x[c];
  }
}

double sequence_gradient(const ModelSpec& spec, const CoefficientSet& coeffs,
                         const SequenceDesign& seq, GammaGradient& grad) {
  Workspace& ws = thread_workspace();
  const int T = seq.length();
  prepare(spec, coeffs, seq, T, ws);
  const double ll = run_forward(spec, seq, ws);
  run_backward(seq, ws);
  const int S = ws.S, M = ws.M, KA = ws.KA, KB = ws.KB;
  visit_counts(
      spec, seq, ws,
      [&](const double* w) {
        accumulate_row(grad.pi, w, ws.pi.data(), seq.x_pi.data(), S, spec.k_pi());
      },
      [&](int, const Entry& e, const double* wa) {
        const double* A = ws.a.data() + e.a_off;
        const double* x = ws.xa.data() + e.xa_off;
        for (int s = 0; s < S; ++s) accumulate_row(grad.A[s], wa + s * S, A + s * S, x, S, KA);
      },
      [&](int, const Entry* e, const double* wb) {
        const double* B = ws.b.data() + e->b_off;
        const double* x = ws.xb.data() + e->xb_off;
        for (int s = 0; s < S; ++s) accumulate_row(grad.B[s], wb + s * M, B + s * M, x, M, KB);
      });
  return ll;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public single-sequence operations
// ---------------------------------------------------------------------------

ForwardResult forward(const ModelSpec& spec, const CoefficientSet& coeffs,
                      const SequenceDesign& sequence, int last_time) {
  check_sequence(spec, sequence);
  const int T = resolve_last(sequence, last_time);
  Workspace& ws = thread_workspace();
  prepare(spec, coeffs, sequence, T, ws);
  ForwardResult out;
  out.loglik = run_forward(spec, sequence, ws);
  const int S = ws.S, M = ws.M;
  out.alpha_norm.resize(T, S);
  out.D.resize(T);
  out.scaling_logs.assign(ws.logc.begin(), ws.logc.end());
  for (int t = 0; t < T; ++t) {
    Eigen::MatrixXd D(S, M);
    const double* Dt = ws.Dt(t);
    const double* Ft = ws.Ft(t);
    for (int s = 0; s < S; ++s) {
      double row = 0.0;
      for (int m = 0; m < M; ++m) {
        D(s, m) = Dt[s * M + m];
        row += Ft[s * M + m];
      }
      out.alpha_norm(t, s) = row;
    }
    out.D[t] = std::move(D);
  }
  return out;
}

BackwardResult backward(const ModelSpec& spec, const CoefficientSet& coeffs,
                        const SequenceDesign& sequence) {
  check_sequence(spec, sequence);
  const int T = sequence.length();
  Workspace& ws = thread_workspace();
  prepare(spec, coeffs, sequence, T, ws);
  run_forward(spec, sequence, ws);
  run_backward(sequence, ws);
  BackwardResult out;
  out.beta.resize(T);
  for (int t = 0; t < T; ++t) {
    out.beta[t].resize(ws.S, ws.M);
    const double* G = ws.Gt(t);
    for (int s = 0; s < ws.S; ++s)
      for (int m = 0; m < ws.M; ++m) out.beta[t](s, m) = G[s * ws.M + m];
  }
  return out;
}

ExpectedCounts estep(const ModelSpec& spec, const CoefficientSet& coeffs,
                     const SequenceDesign& sequence) {
  check_sequence(spec, sequence);
  const int T = sequence.length();
  Workspace& ws = thread_workspace();
  prepare(spec, coeffs, sequence, T, ws);
  run_forward(spec, sequence, ws);
  run_backward(sequence, ws);
  const int S = ws.S, M = ws.M;
  ExpectedCounts out;
  visit_counts(
      spec, sequence, ws,
      [&](const double* w) { out.initial = Eigen::Map<const Eigen::VectorXd>(w, S); },
      [&](int t, const Entry& e, const double* wa) {
        out.transitions.push_back(
            {t, e.lag, Eigen::Map<const RowMatrix>(wa, S, S)});
      },
      [&](int t, const Entry* e, const double* wb) {
        out.emissions.push_back(
            {t, e == nullptr ? kNoLag : e->lag, Eigen::Map<const RowMatrix>(wb, S, M)});
      });
  return out;
}

// ---------------------------------------------------------------------------
// Dataset-level operations
// ---------------------------------------------------------------------------

DatasetLoglik loglik_dataset(const ModelSpec& spec, const CoefficientSet& coeffs,
                             const DesignedPanel& panel, double lambda) {
  require(lambda >= 0.0, ErrorCode::Validation, "lambda must be non-negative");
  const std::size_t N = panel.sequences.size();
  DatasetLoglik out;
  out.per_sequence.assign(N, 0.0);
  for (const auto& seq : panel.sequences) check_sequence(spec, seq);
  parallel_for(N, [&](std::size_t i) {
    const auto& seq = panel.sequences[i];
    Workspace& ws = thread_workspace();
    prepare(spec, coeffs, seq, seq.length(), ws);
    out.per_sequence[i] = run_forward(spec, seq, ws);
  });
  for (double v : out.per_sequence) out.unpenalized += v;
  out.penalized = out.unpenalized - 0.5 * lambda * coeffs.squared_norm();
  return out;
}

LoglikGradient loglik_gradient(const ModelSpec& spec, const CoefficientSet& coeffs,
                               const DesignedPanel& panel, double lambda) {
  require(lambda >= 0.0, ErrorCode::Validation, "lambda must be non-negative");
  for (const auto& seq : panel.sequences) check_sequence(spec, seq);
  const std::size_t N = panel.sequences.size();
  // Fixed-size blocks of sequences keep the reduction order independent of
  // the thread count.
  constexpr std::size_t kBlock = 32;
  const std::size_t blocks = (N + kBlock - 1) / kBlock;
  std::vector<GammaGradient> partial(blocks, GammaGradient(spec));
  std::vector<double> ll(N, 0.0);
  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t end = std::min(N, (b + 1) * kBlock);
    for (std::size_t i = b * kBlock; i < end; ++i)
      ll[i] = sequence_gradient(spec, coeffs, panel.sequences[i], partial[b]);
  });
  GammaGradient total(spec);
  for (const auto& p : partial) {
    total.pi += p.pi;
    for (int s = 0; s < spec.states; ++s) {
      total.A[s] += p.A[s];
      total.B[s] += p.B[s];
    }
  }

  const auto& qs = coeffs.state_basis().q;
  const auto& qm = coeffs.category_basis().q;
  Eigen::MatrixXd g_pi = qs.transpose() * total.pi - lambda * coeffs.eta_pi();
  std::vector<Eigen::MatrixXd> g_A(spec.states), g_B(spec.states);
  for (int s = 0; s < spec.states; ++s) {
    g_A[s] = qs.transpose() * total.A[s] - lambda * coeffs.eta_A(s);
    g_B[s] = qm.transpose() * total.B[s] - lambda * coeffs.eta_B(s);
  }
  LoglikGradient out;
  out.gradient = pack_parameters(CoefficientSet(spec, g_pi, g_A, g_B));
  for (double v : ll) out.unpenalized += v;
  out.penalized = out.unpenalized - 0.5 * lambda * coeffs.squared_norm();
  return out;
}

void SoftmaxRegressionData::add(const double* x_row, const double* w_row) {
  double total = 0.0;
  for (int j = 0; j < dim; ++j) total += w_row[j];
  if (!(total > 0.0)) return;
  x.insert(x.end(), x_row, x_row + k);
  w.insert(w.end(), w_row, w_row + dim);
}

MstepData estep_dataset(const ModelSpec& spec, const CoefficientSet& coeffs,
                        const DesignedPanel& panel) {
  for (const auto& seq : panel.sequences) check_sequence(spec, seq);
  const int S = spec.states, M = spec.categories;
  const auto empty_block = [](int dim, int k) {
    SoftmaxRegressionData d;
    d.dim = dim;
    d.k = k;
    return d;
  };
  const std::size_t N = panel.sequences.size();
  struct Partial {
    SoftmaxRegressionData initial;
    std::vector<SoftmaxRegressionData> transition, emission;
    double loglik = 0.0;
  };
  std::vector<Partial> parts(N);
  parallel_for(N, [&](std::size_t i) {
    const auto& seq = panel.sequences[i];
    Partial& part = parts[i];
    part.initial = empty_block(S, spec.k_pi());
    part.transition.assign(S, empty_block(S, spec.k_A()));
    part.emission.assign(S, empty_block(M, spec.k_B()));
    Workspace& ws = thread_workspace();
    prepare(spec, coeffs, seq, seq.length(), ws);
    part.loglik = run_forward(spec, seq, ws);
    run_backward(seq, ws);
    visit_counts(
        spec, seq, ws, [&](const double* w) { part.initial.add(seq.x_pi.data(), w); },
        [&](int, const Entry& e, const double* wa) {
          for (int s = 0; s < S; ++s)
            part.transition[s].add(ws.xa.data() + e.xa_off, wa + s * S);
        },
        [&](int, const Entry* e, const double* wb) {
          for (int s = 0; s < S; ++s) part.emission[s].add(ws.xb.data() + e->xb_off, wb + s * M);
        });
  });

  MstepData out;
  out.initial = empty_block(S, spec.k_pi());
  out.transition.assign(S, empty_block(S, spec.k_A()));
  out.emission.assign(S, empty_block(M, spec.k_B()));
  const auto append = [](SoftmaxRegressionData& dst, const SoftmaxRegressionData& src) {
    dst.x.insert(dst.x.end(), src.x.begin(), src.x.end());
    dst.w.insert(dst.w.end(), src.w.begin(), src.w.end());
  };
  for (const auto& part : parts) {
    append(out.initial, part.initial);
    for (int s = 0; s < S; ++s) {
      append(out.transition[s], part.transition[s]);
      append(out.emission[s], part.emission[s]);
    }
    out.loglik += part.loglik;
  }
  return out;
}

BlockObjective mstep_objective_and_gradient(const SoftmaxRegressionData& data,
                                            const SumToZeroBasis& basis,
                                            const Eigen::MatrixXd& eta_block, double lambda) {
  require(basis.dim == data.dim, ErrorCode::Shape, "basis does not match block dimension");
  require(eta_block.rows() == data.dim - 1 && eta_block.cols() == data.k, ErrorCode::Shape,
          "working block has wrong shape");
  const int dim = data.dim, k = data.k;
  const RowMatrix gamma = basis.q * eta_block;
  RowMatrix g = RowMatrix::Zero(dim, k);
  std::vector<double> p(dim);
  double value = 0.0;
  const std::size_t n = data.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = data.x.data() + i * k;
    const double* w = data.w.data() + i * dim;
    linear_softmax(gamma, x, k, p.data());
    for (int j = 0; j < dim; ++j)
      if (w[j] != 0.0) value += w[j] * std::log(p[j]);
    accumulate_row(g, w, p.data(), x, dim, k);
  }
  BlockObjective out;
  out.value = value - 0.5 * lambda * eta_block.squaredNorm();
  out.gradient = basis.q.transpose() * g - lambda * eta_block;
  return out;
}

}  // namespace fanhmm
