#include "vsim/pam.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vsim/kernels.hpp"

namespace vsim {

namespace {

constexpr double kVarianceFloor = 1e-8;
constexpr double kLogArgFloor = 1.0 + 1e-6;
constexpr double kMaxConcentration = 1e4;

struct Workspace {
  std::vector<double> w;            // S*T proposal cells
  std::vector<double> super_scale;  // S
  std::vector<double> label_term;   // T
  std::vector<double> alpha_sums;   // S, row sums of alpha_s

  void resize(size_t S, size_t T) {
    w.resize(S * T);
    super_scale.resize(S);
    label_term.resize(T);
    alpha_sums.resize(S);
  }
  void refresh_alpha_sums(const Grid<double>& alpha_s) {
    for (size_t s = 0; s < alpha_s.rows(); ++s) {
      alpha_sums[s] = kernels::vector_sum(alpha_s.row(s).data(),
                                          alpha_s.cols());
    }
  }
};

// The collapsed path proposal, normalized. The doc-side counts and the
// (possibly transiently augmented) label row and subtopic totals are passed
// as raw spans so training and held-out inference share the arithmetic.
void proposal_core(std::span<const int32_t> n_ds,
                   std::span<const int32_t> n_dst, const int32_t* label_row,
                   const int32_t* topic_total, size_t L,
                   const PamHyperparams& h, Workspace& ws, double* w) {
  const size_t S = h.S, T = h.T;
  kernels::smoothed_ratio(label_row, topic_total, h.beta, L * h.beta,
                          ws.label_term.data(), T);
  int32_t doc_tokens = 0;
  for (size_t s = 0; s < S; ++s) doc_tokens += n_ds[s];
  const double super_denom = doc_tokens + S * h.alpha0;
  for (size_t s = 0; s < S; ++s) {
    ws.super_scale[s] =
        (n_ds[s] + h.alpha0) / (super_denom * (n_ds[s] + ws.alpha_sums[s]));
  }
  kernels::pam_cell_weights(n_dst.data(), h.alpha_s.data(),
                            ws.super_scale.data(), ws.label_term.data(), w, S,
                            T);
  double total = kernels::vector_sum(w, S * T);
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NumericalError("semantic proposal mass is not positive and finite");
  }
  kernels::scale_inplace(w, 1.0 / total, S * T);
}

void bump(PamCounts& c, size_t T, size_t d, int32_t s, int32_t t, int label,
          int32_t delta) {
  c.n_ds(d, s) += delta;
  c.n_dst(d, s * T + t) += delta;
  c.n_lt(label, t) += delta;
  c.n_t[t] += delta;
}

void step_token(PamCounts& c, const PamHyperparams& h, size_t d, size_t k,
                int label, Workspace& ws, Rng& rng) {
  const size_t T = h.T;
  bump(c, T, d, c.zs[d][k], c.zt[d][k], label, -1);
  proposal_core(c.n_ds.row(d), c.n_dst.row(d), c.n_lt.row(label).data(),
                c.n_t.data(), c.n_lt.rows(), h, ws, ws.w.data());
  size_t cell = rng.categorical(ws.w);
  c.zs[d][k] = static_cast<int32_t>(cell / T);
  c.zt[d][k] = static_cast<int32_t>(cell % T);
  bump(c, T, d, c.zs[d][k], c.zt[d][k], label, +1);
}

}  // namespace

double PamHyperparams::alpha_row_sum(size_t s) const {
  return kernels::vector_sum(alpha_s.row(s).data(), alpha_s.cols());
}

void PamHyperparams::validate() const {
  if (S < 1 || T < 1) throw IngestError("topic counts must be at least 1");
  if (!(alpha0 > 0.0) || !(beta > 0.0)) {
    throw IngestError("alpha0 and beta must be positive");
  }
  if (alpha_s.rows() != S || alpha_s.cols() != T) {
    throw IngestError("alpha_s must be S x T");
  }
  for (size_t s = 0; s < S; ++s) {
    double sum = 0.0;
    for (size_t t = 0; t < T; ++t) {
      if (alpha_s(s, t) < 0.0) throw IngestError("alpha_s must be nonnegative");
      sum += alpha_s(s, t);
    }
    if (!(sum > 0.0)) {
      throw IngestError("alpha_s row " + std::to_string(s) +
                        " must have positive sum");
    }
  }
}

void semantic_proposal(const PamCounts& counts, const PamHyperparams& hyper,
                       size_t d, int label, double* w) {
  Workspace ws;
  ws.resize(hyper.S, hyper.T);
  ws.refresh_alpha_sums(hyper.alpha_s);
  proposal_core(counts.n_ds.row(d), counts.n_dst.row(d),
                counts.n_lt.row(label).data(), counts.n_t.data(),
                counts.n_lt.rows(), hyper, ws, w);
}

void gibbs_step_semantic(PamCounts& counts, const PamHyperparams& hyper,
                         size_t d, size_t k, int label, Rng& rng) {
  Workspace ws;
  ws.resize(hyper.S, hyper.T);
  ws.refresh_alpha_sums(hyper.alpha_s);
  step_token(counts, hyper, d, k, label, ws, rng);
}

Grid<double> estimate_alpha_s(const PamCounts& counts,
                              const Grid<double>& prev,
                              std::vector<std::string>* notes) {
  const size_t S = prev.rows(), T = prev.cols();
  Grid<double> out = prev;
  if (T < 2) {
    if (notes) notes->push_back("alpha_s: T=1, nothing to estimate");
    return out;
  }
  const size_t I = counts.n_ds.rows();
  std::vector<double> mean(T), var(T);
  std::vector<size_t> docs;
  for (size_t s = 0; s < S; ++s) {
    docs.clear();
    for (size_t d = 0; d < I; ++d) {
      if (counts.n_ds(d, s) > 0) docs.push_back(d);
    }
    if (docs.size() < 2) {
      if (notes) {
        notes->push_back("alpha_s: supertopic " + std::to_string(s) +
                         " has " + std::to_string(docs.size()) +
                         " contributing docs, row left unchanged");
      }
      continue;
    }
    const double n = static_cast<double>(docs.size());
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(var.begin(), var.end(), 0.0);
    for (size_t d : docs) {
      const double denom = counts.n_ds(d, s);
      for (size_t t = 0; t < T; ++t) {
        mean[t] += counts.n_dst(d, s * T + t) / denom;
      }
    }
    for (size_t t = 0; t < T; ++t) mean[t] /= n;
    for (size_t d : docs) {
      const double denom = counts.n_ds(d, s);
      for (size_t t = 0; t < T; ++t) {
        double diff = counts.n_dst(d, s * T + t) / denom - mean[t];
        var[t] += diff * diff;
      }
    }
    // Sample variance over the contributing docs, then the method-of-moments
    // concentration: the log of the row sum is the average over all but the
    // last subtopic of log(m(1-m)/v - 1).
    double log_scale = 0.0;
    for (size_t t = 0; t + 1 < T; ++t) {
      double v = std::max(var[t] / (n - 1.0), kVarianceFloor);
      double arg = std::max(mean[t] * (1.0 - mean[t]) / v - 1.0, kLogArgFloor);
      log_scale += std::log(arg);
    }
    double concentration =
        std::min(std::exp(log_scale / (T - 1.0)), kMaxConcentration);
    for (size_t t = 0; t < T; ++t) out(s, t) = mean[t] * concentration;
  }
  return out;
}

PamCounts init_semantic_counts(size_t L, const PamHyperparams& hyper,
                               const std::vector<std::vector<int>>& docs,
                               Rng& rng) {
  const size_t I = docs.size();
  const size_t S = hyper.S, T = hyper.T;
  PamCounts c;
  c.n_ds = Grid<int32_t>(I, S);
  c.n_dst = Grid<int32_t>(I, S * T);
  c.n_lt = Grid<int32_t>(L, T);
  c.n_t.assign(T, 0);
  c.zs.resize(I);
  c.zt.resize(I);
  for (size_t d = 0; d < I; ++d) {
    c.zs[d].resize(docs[d].size());
    c.zt[d].resize(docs[d].size());
    for (size_t k = 0; k < docs[d].size(); ++k) {
      c.zs[d][k] = static_cast<int32_t>(rng.uniform_below(S));
      c.zt[d][k] = static_cast<int32_t>(rng.uniform_below(T));
      bump(c, T, d, c.zs[d][k], c.zt[d][k], docs[d][k], +1);
    }
  }
  return c;
}

PamModel train_pam(const Corpus& corpus, PamHyperparams hyper,
                   const PamTrainOptions& opts, Rng& rng) {
  if (corpus.docs.empty()) {
    throw IngestError("cannot train on an empty corpus");
  }
  const size_t L = corpus.vocab.size();
  const size_t I = corpus.docs.size();
  const size_t S = hyper.S, T = hyper.T;
  if (hyper.alpha_s.empty()) {
    hyper.alpha_s = Grid<double>(S, T, 1.0 / static_cast<double>(T));
  }
  hyper.validate();

  std::vector<std::vector<int>> tokens(I);
  size_t total_tokens = 0;
  for (size_t d = 0; d < I; ++d) {
    const auto& doc = corpus.docs[d];
    for (const auto& region : doc.regions) {
      if (region.gt_label == kNoLabel) {
        throw IngestError("region " + doc.image_id + "/" + region.region_id +
                          " has no ground-truth label; training needs one "
                          "per region");
      }
      tokens[d].push_back(region.gt_label);
    }
    total_tokens += tokens[d].size();
  }
  if (total_tokens == 0) {
    throw IngestError("corpus has no regions to train on");
  }

  PamModel model;
  model.vocab = corpus.vocab;
  model.counts = init_semantic_counts(L, hyper, tokens, rng);
  PamCounts& c = model.counts;

  Workspace ws;
  ws.resize(S, T);
  for (size_t iter = 1; iter <= opts.iters; ++iter) {
    ws.refresh_alpha_sums(hyper.alpha_s);
    for (size_t d = 0; d < I; ++d) {
      for (size_t k = 0; k < tokens[d].size(); ++k) {
        step_token(c, hyper, d, k, tokens[d][k], ws, rng);
      }
    }
    if (opts.update_alpha && T >= 2 && iter >= opts.alpha_update_start) {
      hyper.alpha_s = estimate_alpha_s(c, hyper.alpha_s);
    }
  }

  model.hyper = std::move(hyper);
  model.phi = Grid<double>(T, L);
  for (size_t t = 0; t < T; ++t) {
    const double denom = c.n_t[t] + L * model.hyper.beta;
    for (size_t l = 0; l < L; ++l) {
      model.phi(t, l) = (c.n_lt(l, t) + model.hyper.beta) / denom;
    }
  }
  return model;
}

PamDocInference infer_pam_doc(const PamModel& model,
                              const std::vector<int>& tokens, size_t iters,
                              Rng& rng, std::vector<std::string>* notes) {
  const PamHyperparams& h = model.hyper;
  const size_t S = h.S, T = h.T;
  const size_t L = model.counts.n_lt.rows();

  PamDocInference out;
  if (tokens.empty()) {
    if (notes) {
      notes->push_back("inference on an empty document: uniform estimates");
    }
    out.state.theta_s.assign(S, 1.0 / static_cast<double>(S));
    out.state.theta_t = Grid<double>(S, T, 1.0 / static_cast<double>(T));
    out.empty_doc = true;
    return out;
  }
  for (int tok : tokens) {
    if (tok < 0 || static_cast<size_t>(tok) >= L) {
      throw ModelMismatchError("token label " + std::to_string(tok) +
                               " outside the model vocabulary of " +
                               std::to_string(L));
    }
  }
  if (iters == 0) iters = 1;

  // Compact transient label table: one row per distinct label in the doc.
  std::vector<int> slot_of(L, -1);
  std::vector<int> slots(tokens.size());
  size_t distinct = 0;
  for (size_t k = 0; k < tokens.size(); ++k) {
    if (slot_of[tokens[k]] < 0) {
      slot_of[tokens[k]] = static_cast<int>(distinct++);
    }
    slots[k] = slot_of[tokens[k]];
  }

  std::vector<int32_t> n_ds(S, 0);
  std::vector<int32_t> n_dst(S * T, 0);
  Grid<int32_t> tilde_lt(distinct, T);
  std::vector<int32_t> tilde_t(T, 0);
  std::vector<int32_t> aug_label(T), aug_total(T);

  out.zs.resize(tokens.size());
  out.zt.resize(tokens.size());
  for (size_t k = 0; k < tokens.size(); ++k) {
    out.zs[k] = static_cast<int32_t>(rng.uniform_below(S));
    out.zt[k] = static_cast<int32_t>(rng.uniform_below(T));
    ++n_ds[out.zs[k]];
    ++n_dst[out.zs[k] * T + out.zt[k]];
    ++tilde_lt(slots[k], out.zt[k]);
    ++tilde_t[out.zt[k]];
  }

  Workspace ws;
  ws.resize(S, T);
  ws.refresh_alpha_sums(h.alpha_s);

  std::vector<double> theta_s_acc(S, 0.0);
  std::vector<double> theta_t_acc(S * T, 0.0);
  size_t averaged = 0;

  for (size_t iter = 0; iter < iters; ++iter) {
    for (size_t k = 0; k < tokens.size(); ++k) {
      const int label = tokens[k];
      const int slot = slots[k];
      --n_ds[out.zs[k]];
      --n_dst[out.zs[k] * T + out.zt[k]];
      --tilde_lt(slot, out.zt[k]);
      --tilde_t[out.zt[k]];
      for (size_t t = 0; t < T; ++t) {
        aug_label[t] = model.counts.n_lt(label, t) + tilde_lt(slot, t);
        aug_total[t] = model.counts.n_t[t] + tilde_t[t];
      }
      proposal_core(n_ds, n_dst, aug_label.data(), aug_total.data(), L, h, ws,
                    ws.w.data());
      size_t cell = rng.categorical(ws.w);
      out.zs[k] = static_cast<int32_t>(cell / T);
      out.zt[k] = static_cast<int32_t>(cell % T);
      ++n_ds[out.zs[k]];
      ++n_dst[out.zs[k] * T + out.zt[k]];
      ++tilde_lt(slot, out.zt[k]);
      ++tilde_t[out.zt[k]];
    }
    if (iter >= iters / 2) {
      const double doc_tokens = static_cast<double>(tokens.size());
      for (size_t s = 0; s < S; ++s) {
        theta_s_acc[s] += (n_ds[s] + h.alpha0) / (doc_tokens + S * h.alpha0);
        const double denom = n_ds[s] + ws.alpha_sums[s];
        for (size_t t = 0; t < T; ++t) {
          theta_t_acc[s * T + t] +=
              (n_dst[s * T + t] + h.alpha_s(s, t)) / denom;
        }
      }
      ++averaged;
    }
  }

  out.state.theta_s.resize(S);
  out.state.theta_t = Grid<double>(S, T);
  for (size_t s = 0; s < S; ++s) {
    out.state.theta_s[s] = theta_s_acc[s] / averaged;
    for (size_t t = 0; t < T; ++t) {
      out.state.theta_t(s, t) = theta_t_acc[s * T + t] / averaged;
    }
  }
  return out;
}

PamSample sample_generative_pam(const PamHyperparams& hyper,
                                const Grid<double>& phi, size_t doc_length,
                                Rng& rng) {
  hyper.validate();
  if (phi.rows() != hyper.T || phi.cols() == 0) {
    throw ModelMismatchError("phi must have one row per subtopic");
  }
  PamSample sample;
  sample.theta_s.resize(hyper.S);
  std::vector<double> alpha0_vec(hyper.S, hyper.alpha0);
  rng.dirichlet(alpha0_vec, sample.theta_s);
  sample.theta_t = Grid<double>(hyper.S, hyper.T);
  for (size_t s = 0; s < hyper.S; ++s) {
    rng.dirichlet(hyper.alpha_s.row(s), sample.theta_t.row(s));
  }
  sample.labels.resize(doc_length);
  sample.zs.resize(doc_length);
  sample.zt.resize(doc_length);
  for (size_t k = 0; k < doc_length; ++k) {
    size_t s = rng.categorical(sample.theta_s);
    size_t t = rng.categorical(sample.theta_t.row(s));
    size_t l = rng.categorical(phi.row(t));
    sample.zs[k] = static_cast<int>(s);
    sample.zt[k] = static_cast<int>(t);
    sample.labels[k] = static_cast<int>(l);
  }
  return sample;
}

namespace {

std::string real_str(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void bad_model(const std::string& path, const std::string& what) {
  throw IngestError("model file '" + path + "': " + what);
}

std::string next_line(std::ifstream& in, const std::string& path,
                      const char* what) {
  std::string line;
  if (!std::getline(in, line)) bad_model(path, std::string("missing ") + what);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

template <typename T>
T parse_scalar_line(std::ifstream& in, const std::string& path,
                    const char* key) {
  std::istringstream ss(next_line(in, path, key));
  std::string name;
  T value;
  if (!(ss >> name >> value) || name != key) {
    bad_model(path, std::string("expected '") + key + " <value>'");
  }
  return value;
}

}  // namespace

void save_pam_model(const PamModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write model file '" + path + "'");
  const PamHyperparams& h = model.hyper;
  const size_t L = model.vocab.size();
  out << "vsim-pam 1\n";
  out << "labels " << L << '\n';
  for (const auto& label : model.vocab.labels()) out << label << '\n';
  out << "S " << h.S << '\n';
  out << "T " << h.T << '\n';
  out << "alpha0 " << real_str(h.alpha0) << '\n';
  out << "beta " << real_str(h.beta) << '\n';
  out << "seed " << model.seed << '\n';
  out << "alpha_s\n";
  for (size_t s = 0; s < h.S; ++s) {
    for (size_t t = 0; t < h.T; ++t) {
      if (t) out << ' ';
      out << real_str(h.alpha_s(s, t));
    }
    out << '\n';
  }
  out << "n_tl\n";
  for (size_t t = 0; t < h.T; ++t) {
    for (size_t l = 0; l < L; ++l) {
      if (l) out << ' ';
      out << model.counts.n_lt(l, t);
    }
    out << '\n';
  }
  out << "end\n";
  if (!out) throw IngestError("write failed for model file '" + path + "'");
}

PamModel load_pam_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open model file '" + path + "'");
  if (next_line(in, path, "header") != "vsim-pam 1") {
    bad_model(path, "bad header");
  }
  size_t L = parse_scalar_line<size_t>(in, path, "labels");
  std::vector<std::string> labels;
  labels.reserve(L);
  for (size_t i = 0; i < L; ++i) {
    labels.push_back(next_line(in, path, "label"));
  }

  PamModel model;
  model.vocab = LabelVocabulary(std::move(labels));
  PamHyperparams& h = model.hyper;
  h.S = parse_scalar_line<size_t>(in, path, "S");
  h.T = parse_scalar_line<size_t>(in, path, "T");
  h.alpha0 = parse_scalar_line<double>(in, path, "alpha0");
  h.beta = parse_scalar_line<double>(in, path, "beta");
  model.seed = parse_scalar_line<uint64_t>(in, path, "seed");

  if (next_line(in, path, "alpha_s") != "alpha_s") {
    bad_model(path, "expected alpha_s section");
  }
  h.alpha_s = Grid<double>(h.S, h.T);
  for (size_t s = 0; s < h.S; ++s) {
    std::istringstream ss(next_line(in, path, "alpha_s row"));
    for (size_t t = 0; t < h.T; ++t) {
      if (!(ss >> h.alpha_s(s, t))) bad_model(path, "short alpha_s row");
    }
  }
  if (next_line(in, path, "n_tl") != "n_tl") {
    bad_model(path, "expected n_tl section");
  }
  PamCounts& c = model.counts;
  c.n_lt = Grid<int32_t>(L, h.T);
  c.n_t.assign(h.T, 0);
  for (size_t t = 0; t < h.T; ++t) {
    std::istringstream ss(next_line(in, path, "n_tl row"));
    for (size_t l = 0; l < L; ++l) {
      int32_t v;
      if (!(ss >> v)) bad_model(path, "short n_tl row");
      if (v < 0) bad_model(path, "negative count");
      c.n_lt(l, t) = v;
      c.n_t[t] += v;
    }
  }
  if (next_line(in, path, "end") != "end") bad_model(path, "missing end");
  h.validate();

  model.phi = Grid<double>(h.T, L);
  for (size_t t = 0; t < h.T; ++t) {
    const double denom = c.n_t[t] + L * h.beta;
    for (size_t l = 0; l < L; ++l) {
      model.phi(t, l) = (c.n_lt(l, t) + h.beta) / denom;
    }
  }
  return model;
}

}  // namespace vsim
