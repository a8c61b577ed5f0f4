#include "vsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace vsim {

namespace {

std::vector<size_t> rank_order(const std::vector<double>& scores) {
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  return order;
}

size_t check_ranked_input(const std::vector<double>& scores,
                          const std::vector<bool>& relevance) {
  if (scores.size() != relevance.size()) {
    throw std::invalid_argument("scores and relevance differ in length");
  }
  size_t relevant =
      std::count(relevance.begin(), relevance.end(), true);
  if (relevant == 0) {
    throw std::invalid_argument("average precision needs a relevant item");
  }
  return relevant;
}

double mean_hits(const std::vector<std::vector<int>>& decisions,
                 const std::vector<std::vector<int>>& gt, size_t n,
                 bool normalize, std::vector<std::string>* notes) {
  if (decisions.size() != gt.size()) {
    throw std::invalid_argument("decisions and gt differ in image count");
  }
  if (n < 1) throw std::invalid_argument("n must be at least 1");
  double total = 0.0;
  size_t scored = 0;
  for (size_t i = 0; i < decisions.size(); ++i) {
    if (gt[i].empty()) {
      if (notes) {
        notes->push_back("image " + std::to_string(i) +
                         " has no ground-truth labels; skipped");
      }
      continue;
    }
    std::unordered_set<int> truth(gt[i].begin(), gt[i].end());
    const size_t truth_size = truth.size();
    size_t hits = 0;
    const size_t top = std::min(n, decisions[i].size());
    for (size_t k = 0; k < top; ++k) {
      if (truth.erase(decisions[i][k]) > 0) ++hits;
    }
    total += normalize ? static_cast<double>(hits) /
                             static_cast<double>(std::min(n, truth_size))
                       : static_cast<double>(hits);
    ++scored;
  }
  if (scored == 0) {
    throw std::invalid_argument("no image has ground-truth labels");
  }
  return total / static_cast<double>(scored);
}

}  // namespace

double average_precision(const std::vector<double>& scores,
                         const std::vector<bool>& relevance) {
  const size_t relevant = check_ranked_input(scores, relevance);
  const auto order = rank_order(scores);
  double sum = 0.0;
  size_t hits = 0;
  for (size_t k = 0; k < order.size(); ++k) {
    if (relevance[order[k]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return sum / static_cast<double>(relevant);
}

std::vector<PrPoint> pr_points(const std::vector<double>& scores,
                               const std::vector<bool>& relevance) {
  const size_t relevant = check_ranked_input(scores, relevance);
  const auto order = rank_order(scores);
  std::vector<PrPoint> points;
  size_t hits = 0;
  size_t k = 0;
  while (k < order.size()) {
    const double threshold = scores[order[k]];
    // Consume the whole tie group: every item at this score is predicted
    // positive together.
    while (k < order.size() && scores[order[k]] == threshold) {
      if (relevance[order[k]]) ++hits;
      ++k;
    }
    PrPoint pt;
    pt.threshold = threshold;
    pt.precision = static_cast<double>(hits) / static_cast<double>(k);
    pt.recall = static_cast<double>(hits) / static_cast<double>(relevant);
    points.push_back(pt);
  }
  return points;
}

double symmetric_kl(const std::vector<double>& p, const std::vector<double>& q,
                    double floor) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("distributions differ in length");
  }
  if (p.empty()) throw std::invalid_argument("distributions are empty");
  if (!(floor > 0.0)) throw std::invalid_argument("floor must be positive");
  std::vector<double> a(p), b(q);
  double sa = 0.0, sb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    a[i] = std::max(a[i], floor);
    b[i] = std::max(b[i], floor);
    sa += a[i];
    sb += b[i];
  }
  double kl = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double pi = a[i] / sa;
    const double qi = b[i] / sb;
    kl += pi * std::log(pi / qi) + qi * std::log(qi / pi);
  }
  return kl;
}

double top_n_accuracy(const std::vector<std::vector<int>>& decisions,
                      const std::vector<std::vector<int>>& gt, size_t n,
                      std::vector<std::string>* notes) {
  return mean_hits(decisions, gt, n, true, notes);
}

double top_n_hit_count(const std::vector<std::vector<int>>& decisions,
                       const std::vector<std::vector<int>>& gt, size_t n,
                       std::vector<std::string>* notes) {
  return mean_hits(decisions, gt, n, false, notes);
}

}  // namespace vsim
