#include "vsim/nnlda.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vsim/kernels.hpp"

namespace vsim {

namespace {

void bump(NnldaCounts& c, int lz, int lw, int32_t a, int32_t delta) {
  c.n_lz_a(lz, a) += delta;
  c.n_lw_a(lw, a) += delta;
  c.n_l[lz] += delta;
  c.n_a[a] += delta;
}

void proposal_into(const NnldaCounts& c, const NnldaHyperparams& h, int lz,
                   int lw, double* w) {
  const size_t A = h.A;
  const size_t L = c.n_lz_a.rows();
  // The per-label denominator (n_l + A*alpha) is constant across topics and
  // falls out of the normalization.
  kernels::lda_cell_weights(c.n_lz_a.row(lz).data(), c.n_lw_a.row(lw).data(),
                            c.n_a.data(), h.alpha, h.psi, L * h.psi, w, A);
  double total = kernels::vector_sum(w, A);
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NumericalError("visual proposal mass is not positive and finite");
  }
  kernels::scale_inplace(w, 1.0 / total, A);
}

}  // namespace

void NnldaHyperparams::validate() const {
  if (A < 1) throw IngestError("topic count A must be at least 1");
  if (!(alpha > 0.0) || !(psi > 0.0)) {
    throw IngestError("alpha and psi must be positive");
  }
}

void visual_proposal(const NnldaCounts& counts, const NnldaHyperparams& hyper,
                     int lz, int lw, double* w) {
  proposal_into(counts, hyper, lz, lw, w);
}

void gibbs_step_visual(NnldaCounts& counts, const NnldaHyperparams& hyper,
                       size_t pair, int lz, int lw, Rng& rng) {
  std::vector<double> w(hyper.A);
  bump(counts, lz, lw, counts.assignments[pair], -1);
  proposal_into(counts, hyper, lz, lw, w.data());
  counts.assignments[pair] = static_cast<int32_t>(rng.categorical(w));
  bump(counts, lz, lw, counts.assignments[pair], +1);
}

NnldaCounts init_visual_counts(size_t L, const NnldaHyperparams& hyper,
                               const std::vector<std::pair<int, int>>& pairs,
                               Rng& rng) {
  NnldaCounts c;
  c.n_lz_a = Grid<int32_t>(L, hyper.A);
  c.n_lw_a = Grid<int32_t>(L, hyper.A);
  c.n_l.assign(L, 0);
  c.n_a.assign(hyper.A, 0);
  c.assignments.resize(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    c.assignments[i] = static_cast<int32_t>(rng.uniform_below(hyper.A));
    bump(c, pairs[i].first, pairs[i].second, c.assignments[i], +1);
  }
  return c;
}

NnldaModel train_nnlda(const Corpus& corpus, NnldaHyperparams hyper,
                       size_t iters, Rng& rng) {
  hyper.validate();
  if (corpus.docs.empty()) {
    throw IngestError("cannot train on an empty corpus");
  }
  const size_t L = corpus.vocab.size();

  std::vector<std::pair<int, int>> pairs;
  for (const auto& doc : corpus.docs) {
    for (const auto& region : doc.regions) {
      if (region.gt_label == kNoLabel) {
        throw IngestError("region " + doc.image_id + "/" + region.region_id +
                          " has no ground-truth label");
      }
      if (!region.bag || region.bag->entries.empty()) {
        throw IngestError("region " + doc.image_id + "/" + region.region_id +
                          " has an empty bag; build bags first");
      }
      for (int lw : region.bag->expand()) {
        pairs.emplace_back(region.gt_label, lw);
      }
    }
  }
  if (pairs.empty()) throw IngestError("corpus has no regions to train on");

  NnldaModel model;
  model.vocab = corpus.vocab;
  model.counts = init_visual_counts(L, hyper, pairs, rng);
  NnldaCounts& c = model.counts;

  std::vector<double> w(hyper.A);
  for (size_t iter = 0; iter < iters; ++iter) {
    for (size_t i = 0; i < pairs.size(); ++i) {
      bump(c, pairs[i].first, pairs[i].second, c.assignments[i], -1);
      proposal_into(c, hyper, pairs[i].first, pairs[i].second, w.data());
      c.assignments[i] = static_cast<int32_t>(rng.categorical(w));
      bump(c, pairs[i].first, pairs[i].second, c.assignments[i], +1);
    }
  }

  model.hyper = hyper;
  model.theta = Grid<double>(L, hyper.A);
  for (size_t l = 0; l < L; ++l) {
    const double denom = c.n_l[l] + hyper.A * hyper.alpha;
    for (size_t a = 0; a < hyper.A; ++a) {
      model.theta(l, a) = (c.n_lz_a(l, a) + hyper.alpha) / denom;
    }
  }
  model.gamma = Grid<double>(hyper.A, L);
  for (size_t a = 0; a < hyper.A; ++a) {
    const double denom = c.n_a[a] + L * hyper.psi;
    for (size_t l = 0; l < L; ++l) {
      model.gamma(a, l) = (c.n_lw_a(l, a) + hyper.psi) / denom;
    }
  }
  return model;
}

RegionTopicEstimate infer_region_topics(const BagOfLabels& bag,
                                        const NnldaModel& model, size_t iters,
                                        Rng& rng) {
  if (bag.entries.empty()) {
    throw IngestError("cannot infer topics for an empty bag");
  }
  const NnldaHyperparams& h = model.hyper;
  const size_t A = h.A;
  const size_t L = model.counts.n_lw_a.rows();
  std::vector<int> tokens = bag.expand();
  for (int lw : tokens) {
    if (lw < 0 || static_cast<size_t>(lw) >= L) {
      throw ModelMismatchError("bag label " + std::to_string(lw) +
                               " outside the model vocabulary of " +
                               std::to_string(L));
    }
  }
  if (iters == 0) iters = 1;

  // Compact transient table: one row per distinct observed label.
  std::vector<int> slot_of(L, -1);
  std::vector<int> slots(tokens.size());
  size_t distinct = 0;
  for (size_t j = 0; j < tokens.size(); ++j) {
    if (slot_of[tokens[j]] < 0) slot_of[tokens[j]] = static_cast<int>(distinct++);
    slots[j] = slot_of[tokens[j]];
  }

  std::vector<int32_t> tilde_a(A, 0);  // transient per-topic counts
  Grid<int32_t> tilde_lw(distinct, A);
  std::vector<int32_t> aug_word(A), aug_total(A);
  std::vector<int32_t> z(tokens.size());
  for (size_t j = 0; j < tokens.size(); ++j) {
    z[j] = static_cast<int32_t>(rng.uniform_below(A));
    ++tilde_a[z[j]];
    ++tilde_lw(slots[j], z[j]);
  }

  std::vector<double> w(A);
  std::vector<double> tilde_acc(A, 0.0);
  size_t averaged = 0;
  for (size_t iter = 0; iter < iters; ++iter) {
    for (size_t j = 0; j < tokens.size(); ++j) {
      const int lw = tokens[j];
      const int slot = slots[j];
      --tilde_a[z[j]];
      --tilde_lw(slot, z[j]);
      // Frozen corpus tables augmented by this region's transient counts;
      // the transient per-topic total doubles as the topic-side count since
      // every transient token contributes to exactly one topic.
      for (size_t a = 0; a < A; ++a) {
        aug_word[a] = model.counts.n_lw_a(lw, a) + tilde_lw(slot, a);
        aug_total[a] = model.counts.n_a[a] + tilde_a[a];
      }
      kernels::lda_cell_weights(tilde_a.data(), aug_word.data(),
                                aug_total.data(), h.alpha, h.psi, L * h.psi,
                                w.data(), A);
      double total = kernels::vector_sum(w.data(), A);
      if (!(total > 0.0) || !std::isfinite(total)) {
        throw NumericalError("region topic proposal mass is not positive");
      }
      kernels::scale_inplace(w.data(), 1.0 / total, A);
      z[j] = static_cast<int32_t>(rng.categorical(w));
      ++tilde_a[z[j]];
      ++tilde_lw(slot, z[j]);
    }
    if (iter >= iters / 2) {
      for (size_t a = 0; a < A; ++a) tilde_acc[a] += tilde_a[a];
      ++averaged;
    }
  }

  RegionTopicEstimate est;
  est.tilde_n.resize(A);
  est.theta_r.resize(A);
  const double denom = static_cast<double>(tokens.size()) + A * h.alpha;
  for (size_t a = 0; a < A; ++a) {
    est.tilde_n[a] = tilde_acc[a] / averaged;
    est.theta_r[a] = (est.tilde_n[a] + h.alpha) / denom;
  }
  return est;
}

std::vector<double> label_likelihood(const RegionTopicEstimate& est,
                                     const NnldaModel& model,
                                     std::vector<std::string>* notes) {
  const size_t L = model.theta.rows();
  const size_t A = model.hyper.A;
  std::vector<double> score(L, 0.0);
  for (size_t l = 0; l < L; ++l) {
    double acc = 0.0;
    for (size_t a = 0; a < A; ++a) {
      if (model.counts.n_a[a] == 0) continue;
      acc += model.theta(l, a) *
             (static_cast<double>(model.counts.n_l[l]) / model.counts.n_a[a]) *
             est.theta_r[a];
    }
    score[l] = acc;
  }
  double total = kernels::vector_sum(score.data(), L);
  if (!(total > 0.0) || !std::isfinite(total)) {
    if (notes) {
      notes->push_back("label likelihood vanished for a region; uniform "
                       "fallback");
    }
    std::fill(score.begin(), score.end(), 1.0 / static_cast<double>(L));
    return score;
  }
  kernels::scale_inplace(score.data(), 1.0 / total, L);
  return score;
}

BagOfLabels sample_generative_nnlda(const Grid<double>& theta,
                                    const Grid<double>& gamma, int lz,
                                    size_t bag_size, Rng& rng) {
  if (lz < 0 || static_cast<size_t>(lz) >= theta.rows()) {
    throw ModelMismatchError("semantic label out of range");
  }
  if (theta.cols() != gamma.rows()) {
    throw ModelMismatchError("theta and gamma disagree on the topic count");
  }
  BagOfLabels bag;
  for (size_t j = 0; j < bag_size; ++j) {
    size_t a = rng.categorical(theta.row(lz));
    size_t lw = rng.categorical(gamma.row(a));
    bag.add(static_cast<int>(lw), 1);
  }
  return bag;
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

std::vector<int32_t> parse_count_row(std::ifstream& in,
                                     const std::string& path, size_t n,
                                     const char* what) {
  std::istringstream ss(next_line(in, path, what));
  std::vector<int32_t> row(n);
  for (size_t i = 0; i < n; ++i) {
    if (!(ss >> row[i]) || row[i] < 0) {
      bad_model(path, std::string("bad ") + what);
    }
  }
  return row;
}

}  // namespace

void save_nnlda_model(const NnldaModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write model file '" + path + "'");
  const NnldaHyperparams& h = model.hyper;
  const size_t L = model.vocab.size();
  out << "vsim-nnlda 1\n";
  out << "labels " << L << '\n';
  for (const auto& label : model.vocab.labels()) out << label << '\n';
  out << "A " << h.A << '\n';
  out << "alpha " << real_str(h.alpha) << '\n';
  out << "psi " << real_str(h.psi) << '\n';
  out << "seed " << model.seed << '\n';
  out << "n_lz_a\n";
  for (size_t l = 0; l < L; ++l) {
    for (size_t a = 0; a < h.A; ++a) {
      if (a) out << ' ';
      out << model.counts.n_lz_a(l, a);
    }
    out << '\n';
  }
  out << "n_a_lw\n";
  for (size_t a = 0; a < h.A; ++a) {
    for (size_t l = 0; l < L; ++l) {
      if (l) out << ' ';
      out << model.counts.n_lw_a(l, a);
    }
    out << '\n';
  }
  out << "n_l\n";
  for (size_t l = 0; l < L; ++l) {
    if (l) out << ' ';
    out << model.counts.n_l[l];
  }
  out << "\nn_a\n";
  for (size_t a = 0; a < h.A; ++a) {
    if (a) out << ' ';
    out << model.counts.n_a[a];
  }
  out << "\nend\n";
  if (!out) throw IngestError("write failed for model file '" + path + "'");
}

NnldaModel load_nnlda_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open model file '" + path + "'");
  if (next_line(in, path, "header") != "vsim-nnlda 1") {
    bad_model(path, "bad header");
  }
  size_t L = parse_scalar_line<size_t>(in, path, "labels");
  std::vector<std::string> labels;
  labels.reserve(L);
  for (size_t i = 0; i < L; ++i) {
    labels.push_back(next_line(in, path, "label"));
  }

  NnldaModel model;
  model.vocab = LabelVocabulary(std::move(labels));
  NnldaHyperparams& h = model.hyper;
  h.A = parse_scalar_line<size_t>(in, path, "A");
  h.alpha = parse_scalar_line<double>(in, path, "alpha");
  h.psi = parse_scalar_line<double>(in, path, "psi");
  model.seed = parse_scalar_line<uint64_t>(in, path, "seed");
  h.validate();

  NnldaCounts& c = model.counts;
  c.n_lz_a = Grid<int32_t>(L, h.A);
  c.n_lw_a = Grid<int32_t>(L, h.A);
  if (next_line(in, path, "n_lz_a") != "n_lz_a") {
    bad_model(path, "expected n_lz_a section");
  }
  for (size_t l = 0; l < L; ++l) {
    auto row = parse_count_row(in, path, h.A, "n_lz_a row");
    for (size_t a = 0; a < h.A; ++a) c.n_lz_a(l, a) = row[a];
  }
  if (next_line(in, path, "n_a_lw") != "n_a_lw") {
    bad_model(path, "expected n_a_lw section");
  }
  for (size_t a = 0; a < h.A; ++a) {
    auto row = parse_count_row(in, path, L, "n_a_lw row");
    for (size_t l = 0; l < L; ++l) c.n_lw_a(l, a) = row[l];
  }
  if (next_line(in, path, "n_l") != "n_l") bad_model(path, "expected n_l");
  c.n_l = parse_count_row(in, path, L, "n_l row");
  if (next_line(in, path, "n_a") != "n_a") bad_model(path, "expected n_a");
  c.n_a = parse_count_row(in, path, h.A, "n_a row");
  if (next_line(in, path, "end") != "end") bad_model(path, "missing end");

  for (size_t l = 0; l < L; ++l) {
    int32_t sum = 0;
    for (size_t a = 0; a < h.A; ++a) sum += c.n_lz_a(l, a);
    if (sum != c.n_l[l]) bad_model(path, "n_l inconsistent with n_lz_a");
  }
  for (size_t a = 0; a < h.A; ++a) {
    int32_t sum = 0;
    for (size_t l = 0; l < L; ++l) sum += c.n_lw_a(l, a);
    if (sum != c.n_a[a]) bad_model(path, "n_a inconsistent with n_a_lw");
  }

  model.theta = Grid<double>(L, h.A);
  for (size_t l = 0; l < L; ++l) {
    const double denom = c.n_l[l] + h.A * h.alpha;
    for (size_t a = 0; a < h.A; ++a) {
      model.theta(l, a) = (c.n_lz_a(l, a) + h.alpha) / denom;
    }
  }
  model.gamma = Grid<double>(h.A, L);
  for (size_t a = 0; a < h.A; ++a) {
    const double denom = c.n_a[a] + L * h.psi;
    for (size_t l = 0; l < L; ++l) {
      model.gamma(a, l) = (c.n_lw_a(l, a) + h.psi) / denom;
    }
  }
  return model;
}

}  // namespace vsim
