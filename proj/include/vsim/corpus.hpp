// Data model for labeled-region corpora: vocabulary, regions, images, and
// the line-delimited file format they load from and save to.
//
// Corpus files are tab-separated `key=value` fields, one record per line:
//
//   label=<string>                          vocabulary entry, in index order
//   space=<tag>\tdim=<d>                    feature-space declaration
//   image=<id>\tregion=<id>\t...            region record
//
// Region records carry any of: repeated `feature=<tag>:<v1,v2,...>` fields,
// one `bag=<label[:count]> <label[:count]> ...` field, and one `gt=<label>`
// field. Blank lines and lines starting with '#' are skipped. Label strings
// must be nonempty and free of whitespace, ':', and '='.

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace vsim {

inline constexpr int kNoLabel = -1;

class LabelVocabulary {
 public:
  LabelVocabulary() = default;
  explicit LabelVocabulary(std::vector<std::string> labels);

  // Index of the label, or -1 when absent.
  int find(std::string_view label) const;
  // Index of the label, appending it when absent.
  int intern(std::string_view label);

  const std::string& label(size_t i) const { return labels_[i]; }
  const std::vector<std::string>& labels() const { return labels_; }
  size_t size() const { return labels_.size(); }

  bool operator==(const LabelVocabulary& o) const {
    return labels_ == o.labels_;
  }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> index_;
};

// Multiset of observed labels around a region. Entries are (label, count)
// pairs kept sorted by label index.
struct BagOfLabels {
  std::vector<std::pair<int, int>> entries;
  std::vector<std::string> source_spaces;
  // True when the radius search came back empty and the bag was filled with
  // the single nearest neighbor's label instead.
  bool nearest_fallback = false;

  void add(int label, int count);
  int total() const;
  // Token list: each label repeated by its count, ascending label order.
  std::vector<int> expand() const;

  bool operator==(const BagOfLabels&) const = default;
};

struct RegionRecord {
  std::string region_id;
  // Feature-space tag to dense vector; a region may project into several
  // spaces (color, texture, ...) at once.
  std::map<std::string, std::vector<double>> features;
  int gt_label = kNoLabel;
  std::optional<BagOfLabels> bag;

  bool operator==(const RegionRecord&) const = default;
};

struct ImageDoc {
  std::string image_id;
  std::vector<RegionRecord> regions;

  bool operator==(const ImageDoc&) const = default;
};

struct Corpus {
  std::vector<ImageDoc> docs;
  LabelVocabulary vocab;
  // Declared feature spaces: tag to dimension.
  std::map<std::string, size_t> feature_spaces;

  size_t region_count() const;

  bool operator==(const Corpus&) const = default;
};

enum class CorpusMode { training, inference };

// Loads and validates a corpus file. Training mode requires a ground-truth
// label on every region and at least two distinct labels overall; inference
// mode requires each region to carry a feature vector or a precomputed bag.
// With a frozen vocabulary, unknown bag labels are dropped (noted in `notes`)
// while an unknown ground-truth label is an error.
Corpus load_corpus(const std::string& path, CorpusMode mode,
                   const LabelVocabulary* frozen_vocab = nullptr,
                   std::vector<std::string>* notes = nullptr);

void save_corpus(const Corpus& corpus, const std::string& path);

// Plain vocabulary file: one label per line, index = line number.
LabelVocabulary load_vocabulary(const std::string& path);
void save_vocabulary(const LabelVocabulary& vocab, const std::string& path);

// Top-k labels by ground-truth frequency, ties broken lexicographically.
// Returns all distinct labels when fewer than top_k exist.
LabelVocabulary build_vocabulary(const Corpus& corpus, size_t top_k);

// Re-expresses a corpus in a (typically smaller) vocabulary: bag entries with
// unknown labels are dropped, regions whose ground truth falls outside the
// vocabulary are dropped, and docs left empty are removed. Dropped items are
// described in `notes`.
Corpus restrict_to_vocabulary(const Corpus& corpus,
                              const LabelVocabulary& vocab,
                              std::vector<std::string>* notes = nullptr);

struct CorpusReport {
  std::vector<std::string> duplicate_regions;
  std::vector<std::string> unknown_labels;
  std::vector<std::string> dimension_mismatches;
  std::vector<std::string> empty_docs;

  bool clean() const {
    return duplicate_regions.empty() && unknown_labels.empty() &&
           dimension_mismatches.empty() && empty_docs.empty();
  }
  std::vector<std::string> lines() const;
};

// Diagnostic scan of an in-memory corpus; never modifies it.
CorpusReport validate(const Corpus& corpus);

}  // namespace vsim
