// Forward-samples corpora from known parameters so samplers can be tested
// against the truth that generated the data. Each image draws its semantic
// labels and paths through the supertopic model, then a bag of observed
// labels around each region through the visual model. Images use derived RNG
// substreams, so output depends only on the spec, not on generation order.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vsim/common.hpp"
#include "vsim/corpus.hpp"
#include "vsim/nnlda.hpp"
#include "vsim/pam.hpp"

namespace vsim {

struct SyntheticSpec {
  PamHyperparams pam;        // alpha_s empty means uniform 1/T rows
  NnldaHyperparams nnlda;
  Grid<double> phi;          // T x L true per-subtopic label multinomials
  Grid<double> theta_vis;    // L x A true per-label topic mixtures
  Grid<double> gamma_vis;    // A x L true per-topic observed-label rows
  size_t train_images = 0;
  size_t test_images = 0;
  size_t doc_length_min = 5, doc_length_max = 9;
  size_t bag_size_min = 5, bag_size_max = 9;
  // Empty means auto-named labels sized to phi's columns.
  std::vector<std::string> labels;
  uint64_t seed = 0;
};

struct ImageTruth {
  std::string image_id;
  std::vector<int> labels;  // true semantic label per region
  std::vector<int> zs, zt;  // true path per region
  std::vector<double> scene;  // true subtopic marginal of the image
};

struct SyntheticData {
  Corpus train;
  Corpus test;
  std::vector<ImageTruth> train_truth;
  std::vector<ImageTruth> test_truth;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Latent-truth files use the corpus text conventions: an image= line, one
// truth= line per region, and the scene multinomial.
void save_truth(const std::vector<ImageTruth>& truths,
                const LabelVocabulary& vocab, const std::string& path);
std::vector<ImageTruth> load_truth(const std::string& path,
                                   const LabelVocabulary& vocab);

// Row-stochastic helpers for building spec parameters. dirichlet_rows draws
// each row from a symmetric Dirichlet; peaked_rows puts `peak_mass` on
// column (row % cols) and spreads the rest uniformly.
Grid<double> dirichlet_rows(size_t rows, size_t cols, double concentration,
                            Rng& rng);
Grid<double> peaked_rows(size_t rows, size_t cols, double peak_mass);

}  // namespace vsim
