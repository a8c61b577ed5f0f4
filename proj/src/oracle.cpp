#include "vsim/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <thread>

namespace vsim {

namespace {

constexpr double kMaxStates = 1e7;
constexpr double kRouteTol = 1e-12;

size_t checked_state_count(size_t cells, size_t digits, const char* what) {
  if (cells == 0) throw std::invalid_argument("enumeration needs cells");
  if (std::pow(static_cast<double>(cells), static_cast<double>(digits)) >
      kMaxStates) {
    throw std::invalid_argument(
        std::string("instance too large for exact enumeration: ") + what);
  }
  size_t total = 1;
  for (size_t i = 0; i < digits; ++i) total *= cells;
  return total;
}

void decode_digits(size_t idx, size_t cells, std::vector<int>& digits) {
  for (size_t k = digits.size(); k-- > 0;) {
    digits[k] = static_cast<int>(idx % cells);
    idx /= cells;
  }
}

// Advance token-major digits to the next index (rightmost digit fastest).
void next_digits(std::vector<int>& digits, size_t cells) {
  for (size_t k = digits.size(); k-- > 0;) {
    if (++digits[k] < static_cast<int>(cells)) return;
    digits[k] = 0;
  }
}

// Fills logw[idx] for every assignment, evaluating both routes and recording
// the first disagreement. eval(worker, digits) -> route log weight.
template <typename EvalA, typename EvalB>
void enumerate_log_weights(size_t total, size_t n, size_t cells,
                           size_t workers, EvalA&& eval_a, EvalB&& eval_b,
                           std::vector<double>& logw) {
  logw.resize(total);
  workers = std::clamp<size_t>(workers, 1, std::max<size_t>(total, 1));
  std::vector<std::string> errors(workers);
  auto run = [&](size_t w, size_t begin, size_t end) {
    std::vector<int> digits(n);
    decode_digits(begin, cells, digits);
    for (size_t idx = begin; idx < end; ++idx) {
      const double a = eval_a(w, digits);
      const double b = eval_b(w, digits);
      const double tol =
          kRouteTol * std::max({1.0, std::fabs(a), std::fabs(b)});
      if (!std::isfinite(a) || !std::isfinite(b) || std::fabs(a - b) > tol) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "enumeration routes disagree at state %zu: %.17g vs "
                      "%.17g",
                      idx, a, b);
        errors[w] = buf;
        return;
      }
      logw[idx] = a;
      next_digits(digits, cells);
    }
  };
  if (workers == 1) {
    run(0, 0, total);
  } else {
    const size_t chunk = (total + workers - 1) / workers;
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w) {
      const size_t begin = w * chunk;
      const size_t end = std::min(total, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(run, w, begin, end);
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw NumericalError(e);
  }
}

// Normalizes log weights in place into probabilities, in index order.
void normalize_log_weights(std::vector<double>& w) {
  const double mx = *std::max_element(w.begin(), w.end());
  double z = 0.0;
  for (double& v : w) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : w) v /= z;
}

Grid<double> digit_marginals(const std::vector<double>& joint, size_t n,
                             size_t cells) {
  Grid<double> marginal(n, cells);
  std::vector<int> digits(n, 0);
  for (size_t idx = 0; idx < joint.size(); ++idx) {
    for (size_t k = 0; k < n; ++k) marginal(k, digits[k]) += joint[idx];
    next_digits(digits, cells);
  }
  return marginal;
}

double log_sum_exp(const std::vector<double>& w) {
  const double mx = *std::max_element(w.begin(), w.end());
  double z = 0.0;
  for (double v : w) z += std::exp(v - mx);
  return mx + std::log(z);
}

// Shared context for the semantic-path evaluators. Scratch counts are zeroed
// on entry and re-zeroed before return by walking the touched cells, so one
// scratch per worker stays cheap.
struct PamEnumContext {
  const PamHyperparams* hyper = nullptr;
  const Grid<int32_t>* base_n_lt = nullptr;
  const std::vector<int32_t>* base_n_t = nullptr;
  size_t L = 0;
  std::vector<double> row_sums;  // per supertopic, sum of its alpha_s row
};

struct PamScratch {
  std::vector<int> n_ds, n_dst, doc_t, doc_lt;
  std::vector<int> lt_keys;

  void resize(size_t S, size_t T, size_t L) {
    n_ds.assign(S, 0);
    n_dst.assign(S * T, 0);
    doc_t.assign(T, 0);
    doc_lt.assign(L * T, 0);
  }
};

// Route A: Dirichlet-multinomial closed form over grouped counts. Cells
// the document never touches contribute nothing and are skipped.
double log_pam_closed(const PamEnumContext& cx,
                      const std::vector<int>& tokens,
                      const std::vector<int>& digits, PamScratch& sc) {
  const PamHyperparams& h = *cx.hyper;
  const size_t S = h.S, T = h.T;
  const size_t n = tokens.size();
  sc.lt_keys.clear();
  for (size_t k = 0; k < n; ++k) {
    const int s = digits[k] / static_cast<int>(T);
    const int t = digits[k] % static_cast<int>(T);
    ++sc.n_ds[s];
    ++sc.n_dst[s * T + t];
    ++sc.doc_t[t];
    ++sc.doc_lt[tokens[k] * T + t];
    sc.lt_keys.push_back(tokens[k] * static_cast<int>(T) + t);
  }
  std::sort(sc.lt_keys.begin(), sc.lt_keys.end());
  sc.lt_keys.erase(std::unique(sc.lt_keys.begin(), sc.lt_keys.end()),
                   sc.lt_keys.end());

  double lw = std::lgamma(S * h.alpha0) -
              std::lgamma(static_cast<double>(n) + S * h.alpha0);
  for (size_t s = 0; s < S; ++s) {
    if (sc.n_ds[s] == 0) continue;
    lw += std::lgamma(sc.n_ds[s] + h.alpha0) - std::lgamma(h.alpha0);
    lw += std::lgamma(cx.row_sums[s]) -
          std::lgamma(sc.n_ds[s] + cx.row_sums[s]);
    for (size_t t = 0; t < T; ++t) {
      const int c = sc.n_dst[s * T + t];
      if (c == 0) continue;
      lw += std::lgamma(c + h.alpha_s(s, t)) - std::lgamma(h.alpha_s(s, t));
    }
  }
  const double lbeta = cx.L * h.beta;
  for (size_t t = 0; t < T; ++t) {
    if (sc.doc_t[t] == 0) continue;
    const double base = (*cx.base_n_t)[t];
    lw += std::lgamma(base + lbeta) - std::lgamma(base + sc.doc_t[t] + lbeta);
  }
  for (int key : sc.lt_keys) {
    const int l = key / static_cast<int>(T);
    const int t = key % static_cast<int>(T);
    const double base = (*cx.base_n_lt)(l, t);
    lw += std::lgamma(base + sc.doc_lt[key] + h.beta) -
          std::lgamma(base + h.beta);
  }

  for (size_t k = 0; k < n; ++k) {
    const int s = digits[k] / static_cast<int>(T);
    const int t = digits[k] % static_cast<int>(T);
    sc.n_ds[s] = 0;
    sc.n_dst[s * T + t] = 0;
    sc.doc_t[t] = 0;
    sc.doc_lt[tokens[k] * T + t] = 0;
  }
  return lw;
}

// Route B: product of sequential predictive probabilities, no lgamma.
double log_pam_sequential(const PamEnumContext& cx,
                          const std::vector<int>& tokens,
                          const std::vector<int>& digits, PamScratch& sc) {
  const PamHyperparams& h = *cx.hyper;
  const size_t T = h.T;
  const double lbeta = cx.L * h.beta;
  double lw = 0.0;
  for (size_t k = 0; k < tokens.size(); ++k) {
    const int s = digits[k] / static_cast<int>(T);
    const int t = digits[k] % static_cast<int>(T);
    const int l = tokens[k];
    lw += std::log((sc.n_ds[s] + h.alpha0) /
                   (static_cast<double>(k) + h.S * h.alpha0));
    lw += std::log((sc.n_dst[s * T + t] + h.alpha_s(s, t)) /
                   (sc.n_ds[s] + cx.row_sums[s]));
    lw += std::log(((*cx.base_n_lt)(l, t) + sc.doc_lt[l * T + t] + h.beta) /
                   ((*cx.base_n_t)[t] + sc.doc_t[t] + lbeta));
    ++sc.n_ds[s];
    ++sc.n_dst[s * T + t];
    ++sc.doc_t[t];
    ++sc.doc_lt[l * T + t];
  }
  for (size_t k = 0; k < tokens.size(); ++k) {
    const int s = digits[k] / static_cast<int>(T);
    const int t = digits[k] % static_cast<int>(T);
    sc.n_ds[s] = 0;
    sc.n_dst[s * T + t] = 0;
    sc.doc_t[t] = 0;
    sc.doc_lt[tokens[k] * T + t] = 0;
  }
  return lw;
}

struct NnEnumContext {
  const NnldaHyperparams* hyper = nullptr;
  const NnldaCounts* base = nullptr;
  size_t L = 0;
};

struct NnScratch {
  std::vector<int> m_lz_a, m_lw_a, m_l, m_a;
  std::vector<int> keys_lz, keys_lw, keys_l;

  void resize(size_t L, size_t A) {
    m_lz_a.assign(L * A, 0);
    m_lw_a.assign(L * A, 0);
    m_l.assign(L, 0);
    m_a.assign(A, 0);
  }
};

double log_nn_closed(const NnEnumContext& cx,
                     const std::vector<std::pair<int, int>>& pairs,
                     const std::vector<int>& digits, NnScratch& sc) {
  const NnldaHyperparams& h = *cx.hyper;
  const size_t A = h.A;
  const NnldaCounts& base = *cx.base;
  sc.keys_lz.clear();
  sc.keys_lw.clear();
  sc.keys_l.clear();
  for (size_t i = 0; i < pairs.size(); ++i) {
    const int a = digits[i];
    ++sc.m_lz_a[pairs[i].first * A + a];
    ++sc.m_lw_a[pairs[i].second * A + a];
    ++sc.m_l[pairs[i].first];
    ++sc.m_a[a];
    sc.keys_lz.push_back(pairs[i].first * static_cast<int>(A) + a);
    sc.keys_lw.push_back(pairs[i].second * static_cast<int>(A) + a);
    sc.keys_l.push_back(pairs[i].first);
  }
  for (auto* keys : {&sc.keys_lz, &sc.keys_lw, &sc.keys_l}) {
    std::sort(keys->begin(), keys->end());
    keys->erase(std::unique(keys->begin(), keys->end()), keys->end());
  }

  double lw = 0.0;
  const double aalpha = A * h.alpha;
  const double lpsi = cx.L * h.psi;
  for (int l : sc.keys_l) {
    lw += std::lgamma(base.n_l[l] + aalpha) -
          std::lgamma(base.n_l[l] + sc.m_l[l] + aalpha);
  }
  for (int key : sc.keys_lz) {
    const int l = key / static_cast<int>(A);
    const int a = key % static_cast<int>(A);
    lw += std::lgamma(base.n_lz_a(l, a) + sc.m_lz_a[key] + h.alpha) -
          std::lgamma(base.n_lz_a(l, a) + h.alpha);
  }
  for (size_t a = 0; a < A; ++a) {
    if (sc.m_a[a] == 0) continue;
    lw += std::lgamma(base.n_a[a] + lpsi) -
          std::lgamma(base.n_a[a] + sc.m_a[a] + lpsi);
  }
  for (int key : sc.keys_lw) {
    const int w = key / static_cast<int>(A);
    const int a = key % static_cast<int>(A);
    lw += std::lgamma(base.n_lw_a(w, a) + sc.m_lw_a[key] + h.psi) -
          std::lgamma(base.n_lw_a(w, a) + h.psi);
  }

  for (size_t i = 0; i < pairs.size(); ++i) {
    const int a = digits[i];
    sc.m_lz_a[pairs[i].first * A + a] = 0;
    sc.m_lw_a[pairs[i].second * A + a] = 0;
    sc.m_l[pairs[i].first] = 0;
    sc.m_a[a] = 0;
  }
  return lw;
}

double log_nn_sequential(const NnEnumContext& cx,
                         const std::vector<std::pair<int, int>>& pairs,
                         const std::vector<int>& digits, NnScratch& sc) {
  const NnldaHyperparams& h = *cx.hyper;
  const size_t A = h.A;
  const NnldaCounts& base = *cx.base;
  const double aalpha = A * h.alpha;
  const double lpsi = cx.L * h.psi;
  double lw = 0.0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const int lz = pairs[i].first;
    const int ow = pairs[i].second;
    const int a = digits[i];
    lw += std::log((base.n_lz_a(lz, a) + sc.m_lz_a[lz * A + a] + h.alpha) /
                   (base.n_l[lz] + sc.m_l[lz] + aalpha));
    lw += std::log((base.n_lw_a(ow, a) + sc.m_lw_a[ow * A + a] + h.psi) /
                   (base.n_a[a] + sc.m_a[a] + lpsi));
    ++sc.m_lz_a[lz * A + a];
    ++sc.m_lw_a[ow * A + a];
    ++sc.m_l[lz];
    ++sc.m_a[a];
  }
  for (size_t i = 0; i < pairs.size(); ++i) {
    const int a = digits[i];
    sc.m_lz_a[pairs[i].first * A + a] = 0;
    sc.m_lw_a[pairs[i].second * A + a] = 0;
    sc.m_l[pairs[i].first] = 0;
    sc.m_a[a] = 0;
  }
  return lw;
}

void validate_pam_base(const Grid<int32_t>& base_n_lt,
                       const std::vector<int32_t>& base_n_t, size_t T) {
  if (base_n_lt.cols() != T || base_n_t.size() != T) {
    throw std::invalid_argument("base count tables must have T columns");
  }
  for (size_t t = 0; t < T; ++t) {
    int64_t sum = 0;
    for (size_t l = 0; l < base_n_lt.rows(); ++l) sum += base_n_lt(l, t);
    if (sum != base_n_t[t]) {
      throw std::invalid_argument("base subtopic totals disagree with the "
                                  "label table");
    }
  }
}

void validate_nn_base(const NnldaCounts& base, size_t L, size_t A) {
  if (base.n_lz_a.rows() != L || base.n_lz_a.cols() != A ||
      base.n_lw_a.rows() != L || base.n_lw_a.cols() != A ||
      base.n_l.size() != L || base.n_a.size() != A) {
    throw std::invalid_argument("base count tables must be L x A");
  }
  for (size_t l = 0; l < L; ++l) {
    int64_t sum = 0;
    for (size_t a = 0; a < A; ++a) sum += base.n_lz_a(l, a);
    if (sum != base.n_l[l]) {
      throw std::invalid_argument("base per-label totals disagree with the "
                                  "topic table");
    }
  }
  for (size_t a = 0; a < A; ++a) {
    int64_t sum = 0;
    for (size_t l = 0; l < L; ++l) sum += base.n_lw_a(l, a);
    if (sum != base.n_a[a]) {
      throw std::invalid_argument("base per-topic totals disagree with the "
                                  "observed-label table");
    }
  }
}

// Bag likelihood log P(bag | label) under frozen visual counts: log-sum-exp
// over every topic assignment of the bag, both routes checked.
double log_bag_likelihood(const std::vector<std::pair<int, int>>& pairs,
                          const NnEnumContext& cx, size_t workers) {
  const size_t A = cx.hyper->A;
  const size_t total = checked_state_count(A, pairs.size(), "topic power");
  std::vector<NnScratch> scratch(std::max<size_t>(workers, 1));
  for (auto& sc : scratch) sc.resize(cx.L, A);
  std::vector<double> logw;
  enumerate_log_weights(
      total, pairs.size(), A, workers,
      [&](size_t w, const std::vector<int>& digits) {
        return log_nn_closed(cx, pairs, digits, scratch[w]);
      },
      [&](size_t w, const std::vector<int>& digits) {
        return log_nn_sequential(cx, pairs, digits, scratch[w]);
      },
      logw);
  return log_sum_exp(logw);
}

}  // namespace

ExactPosterior pam_exact_posterior(const std::vector<int>& tokens,
                                   const PamHyperparams& hyper,
                                   const Grid<int32_t>& base_n_lt,
                                   const std::vector<int32_t>& base_n_t,
                                   size_t workers) {
  hyper.validate();
  validate_pam_base(base_n_lt, base_n_t, hyper.T);
  const size_t L = base_n_lt.rows();
  for (int l : tokens) {
    if (l < 0 || static_cast<size_t>(l) >= L) {
      throw std::invalid_argument("token label outside the base table");
    }
  }
  const size_t cells = hyper.S * hyper.T;
  const size_t total = checked_state_count(cells, tokens.size(), "path power");

  PamEnumContext cx;
  cx.hyper = &hyper;
  cx.base_n_lt = &base_n_lt;
  cx.base_n_t = &base_n_t;
  cx.L = L;
  cx.row_sums.resize(hyper.S);
  for (size_t s = 0; s < hyper.S; ++s) cx.row_sums[s] = hyper.alpha_row_sum(s);

  std::vector<PamScratch> scratch(std::max<size_t>(workers, 1));
  for (auto& sc : scratch) sc.resize(hyper.S, hyper.T, L);

  ExactPosterior out;
  enumerate_log_weights(
      total, tokens.size(), cells, workers,
      [&](size_t w, const std::vector<int>& digits) {
        return log_pam_closed(cx, tokens, digits, scratch[w]);
      },
      [&](size_t w, const std::vector<int>& digits) {
        return log_pam_sequential(cx, tokens, digits, scratch[w]);
      },
      out.joint);
  normalize_log_weights(out.joint);
  out.token_marginal = digit_marginals(out.joint, tokens.size(), cells);
  return out;
}

ExactPosterior nnlda_exact_posterior(
    const std::vector<std::pair<int, int>>& pairs,
    const NnldaHyperparams& hyper, const NnldaCounts& base, size_t L,
    size_t workers) {
  hyper.validate();
  validate_nn_base(base, L, hyper.A);
  for (const auto& [lz, lw] : pairs) {
    if (lz < 0 || static_cast<size_t>(lz) >= L || lw < 0 ||
        static_cast<size_t>(lw) >= L) {
      throw std::invalid_argument("pair label outside the base table");
    }
  }
  const size_t total =
      checked_state_count(hyper.A, pairs.size(), "topic power");

  NnEnumContext cx;
  cx.hyper = &hyper;
  cx.base = &base;
  cx.L = L;
  std::vector<NnScratch> scratch(std::max<size_t>(workers, 1));
  for (auto& sc : scratch) sc.resize(L, hyper.A);

  ExactPosterior out;
  enumerate_log_weights(
      total, pairs.size(), hyper.A, workers,
      [&](size_t w, const std::vector<int>& digits) {
        return log_nn_closed(cx, pairs, digits, scratch[w]);
      },
      [&](size_t w, const std::vector<int>& digits) {
        return log_nn_sequential(cx, pairs, digits, scratch[w]);
      },
      out.joint);
  normalize_log_weights(out.joint);
  out.token_marginal = digit_marginals(out.joint, pairs.size(), hyper.A);
  return out;
}

CoupledPosterior coupled_exact_posterior(const std::vector<BagOfLabels>& bags,
                                         const PamModel& pam,
                                         const NnldaModel& nn,
                                         size_t workers) {
  if (bags.empty()) throw std::invalid_argument("image has no regions");
  if (!(pam.vocab == nn.vocab)) {
    throw ModelMismatchError("semantic and visual models disagree on the "
                             "vocabulary");
  }
  const size_t R = bags.size();
  const size_t L = pam.vocab.size();
  const size_t S = pam.hyper.S, T = pam.hyper.T;
  const size_t paths = S * T;
  const size_t cells = L * paths;
  const size_t total = checked_state_count(cells, R, "label-path power");
  validate_pam_base(pam.counts.n_lt, pam.counts.n_t, T);

  NnEnumContext ncx;
  ncx.hyper = &nn.hyper;
  ncx.base = &nn.counts;
  ncx.L = L;
  validate_nn_base(nn.counts, L, nn.hyper.A);

  Grid<double> log_v(R, L);
  for (size_t r = 0; r < R; ++r) {
    std::vector<int> words = bags[r].expand();
    if (words.empty()) throw std::invalid_argument("region has an empty bag");
    for (int w : words) {
      if (w < 0 || static_cast<size_t>(w) >= L) {
        throw std::invalid_argument("bag label outside the vocabulary");
      }
    }
    std::vector<std::pair<int, int>> pairs(words.size());
    for (size_t l = 0; l < L; ++l) {
      for (size_t j = 0; j < words.size(); ++j) {
        pairs[j] = {static_cast<int>(l), words[j]};
      }
      log_v(r, l) = log_bag_likelihood(pairs, ncx, workers);
    }
  }

  PamEnumContext pcx;
  pcx.hyper = &pam.hyper;
  pcx.base_n_lt = &pam.counts.n_lt;
  pcx.base_n_t = &pam.counts.n_t;
  pcx.L = L;
  pcx.row_sums.resize(S);
  for (size_t s = 0; s < S; ++s) pcx.row_sums[s] = pam.hyper.alpha_row_sum(s);

  struct CoupledScratch {
    PamScratch pam;
    std::vector<int> tokens, paths;
  };
  std::vector<CoupledScratch> scratch(std::max<size_t>(workers, 1));
  for (auto& sc : scratch) {
    sc.pam.resize(S, T, L);
    sc.tokens.resize(R);
    sc.paths.resize(R);
  }
  auto split_digits = [&](const std::vector<int>& digits,
                          CoupledScratch& sc) {
    double bag_part = 0.0;
    for (size_t r = 0; r < R; ++r) {
      sc.tokens[r] = digits[r] / static_cast<int>(paths);
      sc.paths[r] = digits[r] % static_cast<int>(paths);
      bag_part += log_v(r, sc.tokens[r]);
    }
    return bag_part;
  };

  CoupledPosterior out;
  enumerate_log_weights(
      total, R, cells, workers,
      [&](size_t w, const std::vector<int>& digits) {
        auto& sc = scratch[w];
        const double bag_part = split_digits(digits, sc);
        return bag_part + log_pam_closed(pcx, sc.tokens, sc.paths, sc.pam);
      },
      [&](size_t w, const std::vector<int>& digits) {
        auto& sc = scratch[w];
        const double bag_part = split_digits(digits, sc);
        return bag_part + log_pam_sequential(pcx, sc.tokens, sc.paths, sc.pam);
      },
      out.joint);
  normalize_log_weights(out.joint);

  out.label_posterior = Grid<double>(R, L);
  out.path_marginal = Grid<double>(R, paths);
  std::vector<int> digits(R, 0);
  for (size_t idx = 0; idx < out.joint.size(); ++idx) {
    for (size_t r = 0; r < R; ++r) {
      out.label_posterior(r, digits[r] / static_cast<int>(paths)) +=
          out.joint[idx];
      out.path_marginal(r, digits[r] % static_cast<int>(paths)) +=
          out.joint[idx];
    }
    next_digits(digits, cells);
  }
  return out;
}

}  // namespace vsim
