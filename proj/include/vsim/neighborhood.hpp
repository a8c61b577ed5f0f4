// Bag-of-labels construction: radius search over training regions projected
// into supervised feature spaces. A region's bag is the multiset of
// ground-truth labels of all training points within epsilon of it, summed
// across feature spaces.

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "vsim/corpus.hpp"

namespace vsim {

enum class DistanceNorm {
  euclidean,
  // 0.5 * sum (x-y)^2 / (x+y), for nonnegative histogram features.
  chi_square,
};

struct NeighborhoodConfig {
  // Radius per feature-space tag; spaces without an entry use
  // default_epsilon when it is positive, otherwise the lookup errors.
  std::map<std::string, double> epsilon;
  double default_epsilon = 0.0;
  DistanceNorm norm = DistanceNorm::euclidean;
  // Cap on neighbors taken per space, nearest first; 0 means unlimited.
  size_t max_bag = 0;
  // When false, a training region scanning the index built from its own
  // corpus skips its own point.
  bool include_self = true;

  double epsilon_for(const std::string& space) const;
};

class FeatureSpaceIndex {
 public:
  struct Point {
    size_t doc;
    size_t region;
    int label;
  };

  const std::string& space() const { return space_; }
  size_t dim() const { return dim_; }
  size_t size() const { return points_.size(); }
  const Point& point(size_t i) const { return points_[i]; }
  const double* feature(size_t i) const { return features_.data() + i * dim_; }

 private:
  friend FeatureSpaceIndex build_index(const Corpus&, const std::string&);

  std::string space_;
  size_t dim_ = 0;
  std::vector<double> features_;
  std::vector<Point> points_;
};

// Exhaustive index over every training region with features in `space`.
// Requires ground-truth labels on the indexed regions and at least one
// region carrying the space.
FeatureSpaceIndex build_index(const Corpus& corpus, const std::string& space);

// Multiset of labels of all indexed points within the configured radius of
// the query. May be empty. A query coinciding with an indexed point picks up
// that point's label like any other neighbor.
BagOfLabels epsilon_neighbors(const FeatureSpaceIndex& index,
                              const std::vector<double>& query,
                              const NeighborhoodConfig& cfg);

// Attaches a bag to every region: the per-space bags are summed as
// multisets. Regions whose union comes back empty fall back to the single
// nearest neighbor's label (minimizing distance/epsilon across spaces) and
// are flagged via BagOfLabels::nearest_fallback plus a note. Regions with no
// features in any indexed space keep a precomputed bag when present and
// error otherwise. include_self=false assumes the indices were built from
// this same corpus.
Corpus make_bags(const Corpus& corpus,
                 const std::map<std::string, FeatureSpaceIndex>& indices,
                 const NeighborhoodConfig& cfg,
                 std::vector<std::string>* notes = nullptr);

}  // namespace vsim
