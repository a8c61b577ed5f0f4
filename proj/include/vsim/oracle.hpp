// Exact posteriors for small instances by full enumeration of the latent
// assignments, used to validate the Gibbs samplers. Every weight is computed
// by two independently coded routes (closed-form Dirichlet-multinomial
// ratios via lgamma, and sequential predictive products); disagreement
// beyond rounding throws NumericalError. Enumeration parallelizes over
// contiguous index chunks and reduces in index order, so results do not
// depend on the worker count.

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "vsim/common.hpp"
#include "vsim/corpus.hpp"
#include "vsim/nnlda.hpp"
#include "vsim/pam.hpp"

namespace vsim {

struct ExactPosterior {
  // Normalized probability per latent assignment. Assignments are indexed
  // token-major (token 0 is the most significant digit); a digit is zs*T+zt
  // for the semantic model and the topic for the visual model.
  std::vector<double> joint;
  Grid<double> token_marginal;  // tokens x digit values, rows sum to 1
};

// Posterior over (zs,zt) paths of one new document's tokens given frozen
// label-table counts (pass zero tables for a fresh model). Enumerates
// (S*T)^tokens states, capped at 1e7.
ExactPosterior pam_exact_posterior(const std::vector<int>& tokens,
                                   const PamHyperparams& hyper,
                                   const Grid<int32_t>& base_n_lt,
                                   const std::vector<int32_t>& base_n_t,
                                   size_t workers = 1);

// Posterior over topic assignments of (semantic, observed) label pairs given
// frozen count tables. Enumerates A^pairs states, capped at 1e7.
ExactPosterior nnlda_exact_posterior(
    const std::vector<std::pair<int, int>>& pairs,
    const NnldaHyperparams& hyper, const NnldaCounts& base, size_t L,
    size_t workers = 1);

struct CoupledPosterior {
  std::vector<double> joint;     // per assignment, region-major digits
  Grid<double> label_posterior;  // regions x L
  Grid<double> path_marginal;    // regions x (S*T)
};

// Exact per-region label posterior for one image: region labels and their
// semantic paths are enumerated jointly under the trained path model, and
// each region's bag contributes a label likelihood summed over every topic
// assignment under the trained visual model (regions are conditionally
// independent given their labels, so those sums factor per region). A digit
// is l*(S*T) + zs*T + zt. Enumerates (L*S*T)^regions states plus A^bag per
// region and candidate label, each capped at 1e7.
CoupledPosterior coupled_exact_posterior(const std::vector<BagOfLabels>& bags,
                                         const PamModel& pam,
                                         const NnldaModel& nn,
                                         size_t workers = 1);

}  // namespace vsim
