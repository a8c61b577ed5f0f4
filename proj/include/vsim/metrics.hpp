// Retrieval and distribution metrics. All functions are pure; precondition
// violations throw std::invalid_argument.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace vsim {

// Rank-based average precision: items sorted by score descending (ties kept
// in item-index order), AP = mean over relevant items of precision at their
// rank. Requires at least one relevant item.
double average_precision(const std::vector<double>& scores,
                         const std::vector<bool>& relevance);

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Precision/recall at every distinct score threshold, highest threshold
// first (predicted positive means score >= threshold). Thresholds where
// precision is 0/0 are omitted.
std::vector<PrPoint> pr_points(const std::vector<double>& scores,
                               const std::vector<bool>& relevance);

// KL(p||q) + KL(q||p) in nats after flooring every entry at `floor` and
// renormalizing each distribution. Zero iff p and q agree post-flooring.
double symmetric_kl(const std::vector<double>& p, const std::vector<double>& q,
                    double floor = 1e-10);

// Mean over images of |top-n predictions ∩ gt| / min(n, |gt|). Decisions are
// ranked most-confident first. Images with an empty ground-truth set are
// skipped with a note; at least one image must survive.
double top_n_accuracy(const std::vector<std::vector<int>>& decisions,
                      const std::vector<std::vector<int>>& gt, size_t n,
                      std::vector<std::string>* notes = nullptr);

// Unnormalized variant: mean raw hit count |top-n ∩ gt| per scored image.
double top_n_hit_count(const std::vector<std::vector<int>>& decisions,
                       const std::vector<std::vector<int>>& gt, size_t n,
                       std::vector<std::string>* notes = nullptr);

}  // namespace vsim
