// The data augmentation loop tying the two models together. Region label
// posteriors start from visual context alone; each iteration then imputes
// semantic paths for labels drawn from the current posteriors and re-weights
// the posteriors by the label distributions those paths generate. Model
// parameters stay frozen throughout; only the per-image state evolves.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vsim/common.hpp"
#include "vsim/corpus.hpp"
#include "vsim/nnlda.hpp"
#include "vsim/pam.hpp"

namespace vsim {

// How the imputed semantic label distribution Q updates the posterior:
// elementwise product with the current posterior, outright replacement, or
// weighted log-opinion pooling (Q^w * current^(1-w)).
enum class Modulation { product, replace, log_pool };

struct DaConfig {
  size_t da_iters = 6;
  size_t n_samples = 500;  // imputation replicates per iteration
  size_t pam_infer_iters = 100;
  size_t nnlda_infer_iters = 100;
  double threshold = 0.2;  // retrieval cutoff on final posteriors
  Modulation modulation = Modulation::product;
  double log_pool_weight = 0.5;  // weight on Q under log_pool
  // Re-run visual topic inference each iteration and modulate against the
  // fresh likelihood instead of the accumulated posterior.
  bool refresh_visual = false;
  // When positive, stop once the largest per-region total-variation change
  // of one iteration falls below this.
  double early_stop_tv = 0.0;

  // Throws IngestError on zero iteration counts, a threshold or pool weight
  // outside [0,1], or a negative early-stop margin.
  void validate() const;
};

// Everything one imputation pass produced: per-replicate path samples for
// each region plus replicate-averaged mixture estimates.
struct ImputedSamples {
  Grid<int32_t> labels;  // replicates x regions, the drawn semantic labels
  Grid<int32_t> zs;      // replicates x regions
  Grid<int32_t> zt;
  std::vector<double> theta_s;  // mean supertopic mixture, length S
  Grid<double> theta_t;         // mean per-supertopic subtopic rows, S x T
  std::vector<double> scene;    // mean subtopic marginal, length T
};

struct DaState {
  std::vector<std::string> region_ids;
  std::vector<BagOfLabels> bags;  // kept for visual refresh passes
  Grid<double> posterior;  // regions x L, rows sum to 1
  Grid<double> visual;     // regions x L visual label likelihood
  Grid<double> theta_r;    // regions x A region topic estimates
  ImputedSamples imputed;  // latest imputation pass
  std::vector<double> init_scene;  // scene from the first imputation
  std::vector<double> scene;       // scene from the latest imputation
  size_t iteration = 0;            // completed DA iterations
  std::vector<std::string> notes;
};

struct LabelDecision {
  std::string region_id;
  int map_label = kNoLabel;
  // Labels whose posterior reaches the threshold, most probable first. The
  // MAP label is always a member when this is nonempty.
  std::vector<int> retained;
  std::vector<double> posterior;
};

// Visual-only starting point: per region, topic inference on its bag and the
// label likelihood those topics imply. Iteration index 0.
DaState initialize_posteriors(const ImageDoc& image, const NnldaModel& nn,
                              const DaConfig& cfg, Rng& rng);

// One imputation pass: per replicate, draw one label per region from the
// current posteriors and sample the drawn document's paths against the
// frozen label table. Replicates use derived substreams, so results do not
// depend on evaluation order. With refresh_visual set this also re-infers
// the region topics and rewrites state.visual.
ImputedSamples imputation_step(DaState& state, const PamModel& pam,
                               const NnldaModel& nn, const DaConfig& cfg,
                               Rng& rng);

// Posterior update from an imputation pass: Q_r is the replicate average of
// the label row that region r's imputed subtopic generates, and each
// region's posterior becomes Q_r modulated by its current posterior (or the
// fresh visual likelihood under refresh_visual). An all-zero modulated row
// falls back to Q_r alone with a note.
void posterior_sampling_step(DaState& state, const ImputedSamples& imputed,
                             const PamModel& pam, const DaConfig& cfg);

// The full loop: initialization plus da_iters imputation/update rounds
// (fewer if the early-stop margin is hit). The first pass's scene estimate
// is kept as init_scene; the last pass is kept in `imputed` and `scene`.
DaState run_da(const ImageDoc& image, const PamModel& pam,
               const NnldaModel& nn, const DaConfig& cfg, Rng& rng);

// Decisions from final posteriors: MAP label plus everything at or above the
// threshold, most probable first (ties by label index).
std::vector<LabelDecision> threshold_labels(const DaState& state,
                                            double threshold);

}  // namespace vsim
