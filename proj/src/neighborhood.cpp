#include "vsim/neighborhood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vsim/common.hpp"
#include "vsim/kernels.hpp"

namespace vsim {

namespace {

constexpr size_t kNone = static_cast<size_t>(-1);

double distance(DistanceNorm norm, const double* x, const double* y,
                size_t dim) {
  switch (norm) {
    case DistanceNorm::euclidean:
      return std::sqrt(kernels::squared_euclidean(x, y, dim));
    case DistanceNorm::chi_square:
      return kernels::chi_square(x, y, dim);
  }
  return 0.0;
}

struct Candidate {
  double dist;
  size_t ordinal;
};

// All points within eps of the query, nearest first with ordinal tie-break,
// truncated to max_bag when capped. skip_doc/skip_region exclude the query
// region's own point.
std::vector<Candidate> scan(const FeatureSpaceIndex& index,
                            const double* query, double eps,
                            DistanceNorm norm, size_t max_bag,
                            size_t skip_doc, size_t skip_region) {
  std::vector<Candidate> hits;
  for (size_t i = 0; i < index.size(); ++i) {
    const auto& p = index.point(i);
    if (p.doc == skip_doc && p.region == skip_region) continue;
    double d = distance(norm, query, index.feature(i), index.dim());
    if (d <= eps) hits.push_back({d, i});
  }
  std::sort(hits.begin(), hits.end(), [](const Candidate& a, const Candidate& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.ordinal < b.ordinal;
  });
  if (max_bag > 0 && hits.size() > max_bag) hits.resize(max_bag);
  return hits;
}

}  // namespace

double NeighborhoodConfig::epsilon_for(const std::string& space) const {
  auto it = epsilon.find(space);
  if (it != epsilon.end()) {
    if (!(it->second > 0.0)) {
      throw IngestError("epsilon for space '" + space + "' must be positive");
    }
    return it->second;
  }
  if (default_epsilon > 0.0) return default_epsilon;
  throw IngestError("no epsilon configured for space '" + space + "'");
}

FeatureSpaceIndex build_index(const Corpus& corpus, const std::string& space) {
  FeatureSpaceIndex index;
  index.space_ = space;
  for (size_t d = 0; d < corpus.docs.size(); ++d) {
    const auto& doc = corpus.docs[d];
    for (size_t r = 0; r < doc.regions.size(); ++r) {
      const auto& region = doc.regions[r];
      auto it = region.features.find(space);
      if (it == region.features.end()) continue;
      if (region.gt_label == kNoLabel) {
        throw IngestError("region " + doc.image_id + "/" + region.region_id +
                          " has no ground-truth label; indices require a "
                          "training corpus");
      }
      if (index.dim_ == 0) {
        index.dim_ = it->second.size();
      } else if (index.dim_ != it->second.size()) {
        throw ModelMismatchError(
            "region " + doc.image_id + "/" + region.region_id + " has dim " +
            std::to_string(it->second.size()) + " in space '" + space +
            "', index expects " + std::to_string(index.dim_));
      }
      index.features_.insert(index.features_.end(), it->second.begin(),
                             it->second.end());
      index.points_.push_back({d, r, region.gt_label});
    }
  }
  if (index.points_.empty()) {
    throw IngestError("no regions carry features in space '" + space + "'");
  }
  return index;
}

BagOfLabels epsilon_neighbors(const FeatureSpaceIndex& index,
                              const std::vector<double>& query,
                              const NeighborhoodConfig& cfg) {
  if (query.size() != index.dim()) {
    throw ModelMismatchError("query dim " + std::to_string(query.size()) +
                             " does not match index dim " +
                             std::to_string(index.dim()) + " in space '" +
                             index.space() + "'");
  }
  double eps = cfg.epsilon_for(index.space());
  auto hits = scan(index, query.data(), eps, cfg.norm, cfg.max_bag, kNone,
                   kNone);
  BagOfLabels bag;
  for (const auto& h : hits) bag.add(index.point(h.ordinal).label, 1);
  if (!bag.entries.empty()) bag.source_spaces.push_back(index.space());
  return bag;
}

Corpus make_bags(const Corpus& corpus,
                 const std::map<std::string, FeatureSpaceIndex>& indices,
                 const NeighborhoodConfig& cfg,
                 std::vector<std::string>* notes) {
  Corpus out = corpus;
  for (size_t d = 0; d < out.docs.size(); ++d) {
    auto& doc = out.docs[d];
    for (size_t r = 0; r < doc.regions.size(); ++r) {
      auto& region = doc.regions[r];
      size_t skip_doc = cfg.include_self ? kNone : d;
      size_t skip_region = cfg.include_self ? kNone : r;

      BagOfLabels bag;
      bool any_space = false;
      for (const auto& [tag, index] : indices) {
        auto it = region.features.find(tag);
        if (it == region.features.end()) continue;
        if (it->second.size() != index.dim()) {
          throw ModelMismatchError(
              "region " + doc.image_id + "/" + region.region_id +
              " has dim " + std::to_string(it->second.size()) +
              " in space '" + tag + "', index expects " +
              std::to_string(index.dim()));
        }
        any_space = true;
        double eps = cfg.epsilon_for(tag);
        auto hits = scan(index, it->second.data(), eps, cfg.norm, cfg.max_bag,
                         skip_doc, skip_region);
        if (!hits.empty()) {
          for (const auto& h : hits) bag.add(index.point(h.ordinal).label, 1);
          bag.source_spaces.push_back(tag);
        }
      }

      if (!any_space) {
        if (region.bag) {
          if (notes) {
            notes->push_back("region " + doc.image_id + "/" +
                             region.region_id +
                             " has no indexed features; kept its "
                             "precomputed bag");
          }
          continue;
        }
        throw IngestError("region " + doc.image_id + "/" + region.region_id +
                          " has no features in any indexed space and no "
                          "precomputed bag");
      }

      if (bag.entries.empty()) {
        // Fall back to the single nearest neighbor, ranked by distance
        // relative to each space's radius so spaces with different scales
        // compete fairly.
        double best_rel = std::numeric_limits<double>::infinity();
        int best_label = kNoLabel;
        std::string best_space;
        for (const auto& [tag, index] : indices) {
          auto it = region.features.find(tag);
          if (it == region.features.end()) continue;
          double eps = cfg.epsilon_for(tag);
          auto nearest = scan(index, it->second.data(),
                              std::numeric_limits<double>::infinity(),
                              cfg.norm, 1, skip_doc, skip_region);
          if (!nearest.empty() && nearest[0].dist / eps < best_rel) {
            best_rel = nearest[0].dist / eps;
            best_label = index.point(nearest[0].ordinal).label;
            best_space = tag;
          }
        }
        if (best_label == kNoLabel) {
          throw IngestError("region " + doc.image_id + "/" +
                            region.region_id +
                            " has no neighbor to fall back on");
        }
        bag.add(best_label, 1);
        bag.source_spaces.push_back(best_space);
        bag.nearest_fallback = true;
        if (notes) {
          notes->push_back("region " + doc.image_id + "/" + region.region_id +
                           ": empty neighborhood, used nearest neighbor in "
                           "space '" + best_space + "'");
        }
      }
      region.bag = std::move(bag);
    }
  }
  return out;
}

}  // namespace vsim
