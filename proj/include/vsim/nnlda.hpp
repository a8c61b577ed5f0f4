// Topic model linking each semantic label to the bag of labels observed
// around its regions. Each (semantic label, observed label) pair carries one
// visual topic; collapsed Gibbs learns per-label topic mixtures and
// per-topic observed-label multinomials. At inference a region's bag alone
// yields its topic proportions, and those score candidate semantic labels.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vsim/common.hpp"
#include "vsim/corpus.hpp"

namespace vsim {

struct NnldaHyperparams {
  size_t A = 50;
  double alpha = 1.0;
  double psi = 0.01;

  // Throws IngestError on nonpositive scalars or A < 1.
  void validate() const;
};

struct NnldaCounts {
  Grid<int32_t> n_lz_a;  // L x A: semantic label by topic
  // Topic by observed-label table, stored observed-label-major (L x A) so a
  // token's observed-label row is contiguous; serialization transposes it.
  Grid<int32_t> n_lw_a;
  std::vector<int32_t> n_l;  // per semantic label: its pair-token count
  std::vector<int32_t> n_a;  // per topic: total pairs assigned
  std::vector<int32_t> assignments;  // one topic per training pair
};

struct NnldaModel {
  NnldaHyperparams hyper;
  NnldaCounts counts;
  Grid<double> theta;  // L x A, rows sum to 1
  Grid<double> gamma;  // A x L, rows sum to 1
  LabelVocabulary vocab;
  uint64_t seed = 0;
};

struct RegionTopicEstimate {
  std::vector<double> theta_r;  // length A, sums to 1
  std::vector<double> tilde_n;  // transient topic counts, sweep-averaged
};

// Normalized proposal over topics for a held-out (lz, lw) pair: the product
// of the label-topic and topic-observed-label ratios, written to w[0..A).
// Assumes the pair's own counts are already decremented.
void visual_proposal(const NnldaCounts& counts, const NnldaHyperparams& hyper,
                     int lz, int lw, double* w);

// One collapsed update of training pair `pair` (an index into
// counts.assignments): decrement, sample a topic from visual_proposal,
// re-increment.
void gibbs_step_visual(NnldaCounts& counts, const NnldaHyperparams& hyper,
                       size_t pair, int lz, int lw, Rng& rng);

// Count tables with uniformly random topic assignments for the given pair
// list, the state a Gibbs chain starts from.
NnldaCounts init_visual_counts(size_t L, const NnldaHyperparams& hyper,
                               const std::vector<std::pair<int, int>>& pairs,
                               Rng& rng);

// Trains on every region's (gt_label, bag token) pairs. Every region needs a
// ground-truth label and a nonempty bag.
NnldaModel train_nnlda(const Corpus& corpus, NnldaHyperparams hyper,
                       size_t iters, Rng& rng);

// Samples topics for one region's bag against frozen corpus counts; only the
// bag's own transient counts evolve. Topic proportions come from transient
// counts averaged over the last half of the sweeps.
RegionTopicEstimate infer_region_topics(const BagOfLabels& bag,
                                        const NnldaModel& model, size_t iters,
                                        Rng& rng);

// Likelihood-based score of every semantic label for a region with topic
// proportions est: score(l) = sum_a theta[l,a] * (n_l[l]/n_a[a]) *
// est.theta_r[a], skipping topics with zero training count, normalized over
// labels. An all-zero score vector falls back to uniform with a note.
std::vector<double> label_likelihood(const RegionTopicEstimate& est,
                                     const NnldaModel& model,
                                     std::vector<std::string>* notes = nullptr);

// Forward simulation: bag_size draws of z ~ theta[lz], lw ~ gamma[z].
BagOfLabels sample_generative_nnlda(const Grid<double>& theta,
                                    const Grid<double>& gamma, int lz,
                                    size_t bag_size, Rng& rng);

// Text serialization carrying hyperparameters, both count tables, the
// per-label and per-topic totals, and the vocabulary. Reloading reproduces
// theta and gamma bit-identically.
void save_nnlda_model(const NnldaModel& model, const std::string& path);
NnldaModel load_nnlda_model(const std::string& path);

}  // namespace vsim
