// Three-level topic model over semantic labels: per-image supertopic
// mixtures, per-supertopic subtopic mixtures with asymmetric Dirichlet
// hyperparameters learned by moment matching, and per-subtopic label
// multinomials. Estimation is collapsed Gibbs sampling; new documents are
// inferred against frozen corpus counts.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vsim/common.hpp"
#include "vsim/corpus.hpp"

namespace vsim {

struct PamHyperparams {
  size_t S = 20;
  size_t T = 50;
  double alpha0 = 1.0;
  double beta = 0.01;
  // S x T asymmetric subtopic Dirichlet. Empty means "initialize uniform
  // 1/T per row", which training does before its first sweep.
  Grid<double> alpha_s;

  double alpha_row_sum(size_t s) const;
  // Throws IngestError on invalid shape or nonpositive scalars.
  void validate() const;
};

struct PamCounts {
  Grid<int32_t> n_ds;   // docs x S
  Grid<int32_t> n_dst;  // docs x (S*T), row-major S x T per doc
  // Subtopic-label table stored label-major (L x T) so a token's label row
  // is contiguous; serialization transposes it to subtopic-major.
  Grid<int32_t> n_lt;
  std::vector<int32_t> n_t;  // per-subtopic totals
  // Per-doc per-token assignments.
  std::vector<std::vector<int32_t>> zs;
  std::vector<std::vector<int32_t>> zt;
};

struct PamModel {
  PamHyperparams hyper;
  PamCounts counts;
  Grid<double> phi;  // T x L, rows sum to 1
  LabelVocabulary vocab;
  uint64_t seed = 0;
};

struct SemanticDocState {
  std::vector<double> theta_s;  // length S
  Grid<double> theta_t;         // S x T, rows sum to 1
};

// Normalized joint proposal over all (s,t) cells for one held-out token with
// label `label` in doc `d`: the product of the supertopic, subtopic, and
// label ratios, normalized to sum 1 over S*T entries written to `w`. Assumes
// the token's own counts are already decremented.
void semantic_proposal(const PamCounts& counts, const PamHyperparams& hyper,
                       size_t d, int label, double* w);

// One collapsed update of token k in doc d: decrement its counts, sample a
// new (zs, zt) from semantic_proposal, re-increment.
void gibbs_step_semantic(PamCounts& counts, const PamHyperparams& hyper,
                         size_t d, size_t k, int label, Rng& rng);

// Moment-matching update of the subtopic Dirichlet. For each supertopic the
// mean and sample variance of per-doc subtopic proportions are taken over
// docs that used it; rows with fewer than two such docs (or T=1) keep their
// previous values and get a note. Variances are floored at 1e-8, the
// log-argument at 1+1e-6, and the per-row concentration is capped at 1e4.
Grid<double> estimate_alpha_s(const PamCounts& counts,
                              const Grid<double>& prev,
                              std::vector<std::string>* notes = nullptr);

// Count tables with uniformly random path assignments for the given token
// lists (one per document), the state a Gibbs chain starts from.
PamCounts init_semantic_counts(size_t L, const PamHyperparams& hyper,
                               const std::vector<std::vector<int>>& docs,
                               Rng& rng);

struct PamTrainOptions {
  size_t iters = 1000;
  // First sweep (1-based) after which the subtopic Dirichlet is
  // re-estimated; it is then refreshed after every sweep.
  size_t alpha_update_start = 50;
  bool update_alpha = true;
};

// Trains on the ground-truth labels of every region, one document per image.
PamModel train_pam(const Corpus& corpus, PamHyperparams hyper,
                   const PamTrainOptions& opts, Rng& rng);

struct PamDocInference {
  SemanticDocState state;
  std::vector<int32_t> zs;  // final assignments, one per token
  std::vector<int32_t> zt;
  bool empty_doc = false;
};

// Samples topic paths for a new document against the frozen corpus label
// table (the document's tokens contribute only transient counts). Mixture
// estimates are averaged over the last half of the sweeps. An empty token
// list yields uniform estimates plus a note.
PamDocInference infer_pam_doc(const PamModel& model,
                              const std::vector<int>& tokens, size_t iters,
                              Rng& rng,
                              std::vector<std::string>* notes = nullptr);

struct PamSample {
  std::vector<int> labels;
  std::vector<int> zs;
  std::vector<int> zt;
  std::vector<double> theta_s;
  Grid<double> theta_t;
};

// Forward simulation of the generative process with explicit label
// multinomials phi (T x L): theta_s ~ Dir(alpha0), theta_t rows ~
// Dir(alpha_s row), then per token zs ~ theta_s, zt ~ theta_t[zs],
// label ~ phi[zt]. Latent paths are returned for oracle checks.
PamSample sample_generative_pam(const PamHyperparams& hyper,
                                const Grid<double>& phi, size_t doc_length,
                                Rng& rng);

// Text serialization carrying hyperparameters, the subtopic Dirichlet, the
// subtopic-label table, the vocabulary, and the training seed. Reloading
// reproduces phi bit-identically.
void save_pam_model(const PamModel& model, const std::string& path);
PamModel load_pam_model(const std::string& path);

}  // namespace vsim
