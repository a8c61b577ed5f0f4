#include "vsim/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "vsim/common.hpp"

namespace vsim {

namespace {

bool valid_label(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == ':' || c == '=') {
      return false;
    }
  }
  return true;
}

[[noreturn]] void fail(const std::string& path, size_t line,
                       const std::string& msg) {
  throw IngestError(path + ":" + std::to_string(line) + ": " + msg);
}

double parse_real(const std::string& path, size_t line, std::string_view s) {
  std::string buf(s);
  char* end = nullptr;
  double v = std::strtod(buf.c_str(), &end);
  if (end == buf.c_str() || *end != '\0') {
    fail(path, line, "field feature: bad number '" + buf + "'");
  }
  return v;
}

long parse_int(const std::string& path, size_t line, std::string_view s,
               const char* field) {
  std::string buf(s);
  char* end = nullptr;
  long v = std::strtol(buf.c_str(), &end, 10);
  if (end == buf.c_str() || *end != '\0') {
    fail(path, line, std::string("field ") + field + ": bad integer '" + buf +
                         "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

LabelVocabulary::LabelVocabulary(std::vector<std::string> labels)
    : labels_(std::move(labels)) {
  for (size_t i = 0; i < labels_.size(); ++i) {
    if (!valid_label(labels_[i])) {
      throw IngestError("invalid label string '" + labels_[i] + "'");
    }
    auto [it, inserted] = index_.emplace(labels_[i], static_cast<int>(i));
    if (!inserted) {
      throw IngestError("duplicate label '" + labels_[i] + "'");
    }
  }
}

int LabelVocabulary::find(std::string_view label) const {
  auto it = index_.find(std::string(label));
  return it == index_.end() ? -1 : it->second;
}

int LabelVocabulary::intern(std::string_view label) {
  int idx = find(label);
  if (idx >= 0) return idx;
  if (!valid_label(label)) {
    throw IngestError("invalid label string '" + std::string(label) + "'");
  }
  idx = static_cast<int>(labels_.size());
  labels_.emplace_back(label);
  index_.emplace(labels_.back(), idx);
  return idx;
}

void BagOfLabels::add(int label, int count) {
  auto it = std::lower_bound(
      entries.begin(), entries.end(), label,
      [](const std::pair<int, int>& e, int l) { return e.first < l; });
  if (it != entries.end() && it->first == label) {
    it->second += count;
  } else {
    entries.insert(it, {label, count});
  }
}

int BagOfLabels::total() const {
  int n = 0;
  for (const auto& [label, count] : entries) n += count;
  return n;
}

std::vector<int> BagOfLabels::expand() const {
  std::vector<int> tokens;
  tokens.reserve(total());
  for (const auto& [label, count] : entries) {
    tokens.insert(tokens.end(), count, label);
  }
  return tokens;
}

size_t Corpus::region_count() const {
  size_t n = 0;
  for (const auto& doc : docs) n += doc.regions.size();
  return n;
}

Corpus load_corpus(const std::string& path, CorpusMode mode,
                   const LabelVocabulary* frozen_vocab,
                   std::vector<std::string>* notes) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open corpus file '" + path + "'");

  Corpus corpus;
  if (frozen_vocab) corpus.vocab = *frozen_vocab;
  const bool frozen = frozen_vocab != nullptr;

  std::vector<std::string> declared_labels;
  std::unordered_map<std::string, size_t> doc_index;
  // Per doc: region ids seen, for the uniqueness check.
  std::vector<std::unordered_map<std::string, size_t>> region_ids;

  std::string raw;
  size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty() || raw[0] == '#') continue;

    auto fields = split(raw, '\t');
    std::vector<std::pair<std::string_view, std::string_view>> kv;
    for (auto f : fields) {
      size_t eq = f.find('=');
      if (eq == std::string_view::npos) {
        fail(path, lineno, "field '" + std::string(f) + "' has no '='");
      }
      kv.emplace_back(f.substr(0, eq), f.substr(eq + 1));
    }

    if (kv[0].first == "label") {
      if (kv.size() != 1) fail(path, lineno, "label line takes one field");
      declared_labels.emplace_back(kv[0].second);
      continue;
    }

    if (kv[0].first == "space") {
      if (kv.size() != 2 || kv[1].first != "dim") {
        fail(path, lineno, "space line needs fields space=<tag> dim=<d>");
      }
      std::string tag(kv[0].second);
      long dim = parse_int(path, lineno, kv[1].second, "dim");
      if (tag.empty() || dim <= 0) {
        fail(path, lineno, "field space: bad declaration");
      }
      auto [it, inserted] =
          corpus.feature_spaces.emplace(tag, static_cast<size_t>(dim));
      if (!inserted && it->second != static_cast<size_t>(dim)) {
        fail(path, lineno, "field space: '" + tag + "' redeclared with dim " +
                               std::to_string(dim));
      }
      continue;
    }

    if (kv[0].first != "image") {
      fail(path, lineno,
           "unknown record type '" + std::string(kv[0].first) + "'");
    }

    // Vocabulary declarations must precede records so indices are stable.
    if (!declared_labels.empty()) {
      if (frozen) {
        if (declared_labels.size() != corpus.vocab.size()) {
          throw ModelMismatchError(path +
                                   ": declared vocabulary does not match the "
                                   "supplied one (size differs)");
        }
        for (size_t i = 0; i < declared_labels.size(); ++i) {
          if (declared_labels[i] != corpus.vocab.label(i)) {
            throw ModelMismatchError(
                path + ": declared vocabulary does not match the supplied "
                       "one at index " +
                std::to_string(i));
          }
        }
      } else {
        corpus.vocab = LabelVocabulary(declared_labels);
      }
      declared_labels.clear();
      declared_labels.shrink_to_fit();
    }

    if (kv.size() < 2 || kv[1].first != "region") {
      fail(path, lineno, "record needs image=<id> region=<id> first");
    }
    std::string image_id(kv[0].second);
    RegionRecord region;
    region.region_id = std::string(kv[1].second);
    if (image_id.empty() || region.region_id.empty()) {
      fail(path, lineno, "empty image or region id");
    }

    for (size_t i = 2; i < kv.size(); ++i) {
      auto [key, value] = kv[i];
      if (key == "feature") {
        size_t colon = value.find(':');
        if (colon == std::string_view::npos) {
          fail(path, lineno, "field feature: expected <tag>:<v1,v2,...>");
        }
        std::string tag(value.substr(0, colon));
        std::vector<double> vec;
        for (auto piece : split(value.substr(colon + 1), ',')) {
          vec.push_back(parse_real(path, lineno, piece));
        }
        if (tag.empty() || vec.empty()) {
          fail(path, lineno, "field feature: empty tag or vector");
        }
        auto [it, inserted] = corpus.feature_spaces.emplace(tag, vec.size());
        if (!inserted && it->second != vec.size()) {
          fail(path, lineno, "field feature: space '" + tag + "' expects dim " +
                                 std::to_string(it->second) + ", got " +
                                 std::to_string(vec.size()));
        }
        if (!region.features.emplace(tag, std::move(vec)).second) {
          fail(path, lineno, "field feature: duplicate space '" + tag + "'");
        }
      } else if (key == "bag") {
        if (region.bag) fail(path, lineno, "field bag: duplicate");
        BagOfLabels bag;
        for (auto entry : split(value, ' ')) {
          if (entry.empty()) continue;
          size_t colon = entry.find(':');
          std::string_view name = entry.substr(0, colon);
          int count = 1;
          if (colon != std::string_view::npos) {
            long c = parse_int(path, lineno, entry.substr(colon + 1), "bag");
            if (c < 1) fail(path, lineno, "field bag: count must be >= 1");
            count = static_cast<int>(c);
          }
          int idx;
          if (frozen) {
            idx = corpus.vocab.find(name);
            if (idx < 0) {
              if (notes) {
                notes->push_back(path + ":" + std::to_string(lineno) +
                                 ": dropped unknown bag label '" +
                                 std::string(name) + "'");
              }
              continue;
            }
          } else {
            idx = corpus.vocab.intern(name);
          }
          bag.add(idx, count);
        }
        region.bag = std::move(bag);
      } else if (key == "gt") {
        if (region.gt_label != kNoLabel) {
          fail(path, lineno, "field gt: duplicate");
        }
        if (frozen) {
          region.gt_label = corpus.vocab.find(value);
          if (region.gt_label < 0) {
            fail(path, lineno, "field gt: label '" + std::string(value) +
                                   "' is not in the frozen vocabulary");
          }
        } else {
          region.gt_label = corpus.vocab.intern(value);
        }
      } else {
        fail(path, lineno, "unknown field '" + std::string(key) + "'");
      }
    }

    if (mode == CorpusMode::training && region.gt_label == kNoLabel) {
      fail(path, lineno, "field gt: region " + image_id + "/" +
                             region.region_id +
                             " has no ground-truth label (training mode)");
    }
    if (mode == CorpusMode::inference && region.features.empty() &&
        !region.bag) {
      fail(path, lineno, "region " + image_id + "/" + region.region_id +
                             " has neither features nor a bag");
    }

    auto [it, inserted] = doc_index.emplace(image_id, corpus.docs.size());
    if (inserted) {
      corpus.docs.push_back(ImageDoc{image_id, {}});
      region_ids.emplace_back();
    }
    size_t d = it->second;
    if (!region_ids[d].emplace(region.region_id, lineno).second) {
      fail(path, lineno, "duplicate region id " + image_id + "/" +
                             region.region_id);
    }
    corpus.docs[d].regions.push_back(std::move(region));
  }

  // A trailing vocabulary with no records still counts.
  if (!declared_labels.empty() && !frozen) {
    corpus.vocab = LabelVocabulary(declared_labels);
  }

  if (mode == CorpusMode::training && corpus.vocab.size() < 2) {
    throw IngestError(path + ": training corpus needs at least two distinct "
                             "labels, found " +
                      std::to_string(corpus.vocab.size()));
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write corpus file '" + path + "'");

  for (const auto& label : corpus.vocab.labels()) {
    out << "label=" << label << '\n';
  }
  for (const auto& [tag, dim] : corpus.feature_spaces) {
    out << "space=" << tag << "\tdim=" << dim << '\n';
  }
  for (const auto& doc : corpus.docs) {
    for (const auto& region : doc.regions) {
      out << "image=" << doc.image_id << "\tregion=" << region.region_id;
      for (const auto& [tag, vec] : region.features) {
        out << "\tfeature=" << tag << ':';
        for (size_t i = 0; i < vec.size(); ++i) {
          if (i) out << ',';
          out << format_real(vec[i]);
        }
      }
      if (region.bag) {
        out << "\tbag=";
        bool first = true;
        for (const auto& [label, count] : region.bag->entries) {
          if (!first) out << ' ';
          first = false;
          out << corpus.vocab.label(label) << ':' << count;
        }
      }
      if (region.gt_label != kNoLabel) {
        out << "\tgt=" << corpus.vocab.label(region.gt_label);
      }
      out << '\n';
    }
  }
  if (!out) throw IngestError("write failed for corpus file '" + path + "'");
}

LabelVocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open vocabulary file '" + path + "'");
  std::vector<std::string> labels;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      fail(path, lineno, "empty vocabulary line");
    }
    labels.push_back(line);
  }
  return LabelVocabulary(std::move(labels));
}

void save_vocabulary(const LabelVocabulary& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write vocabulary file '" + path + "'");
  for (const auto& label : vocab.labels()) out << label << '\n';
  if (!out) throw IngestError("write failed for vocabulary file '" + path +
                              "'");
}

LabelVocabulary build_vocabulary(const Corpus& corpus, size_t top_k) {
  if (top_k == 0) throw IngestError("top_k must be positive");
  std::map<std::string, size_t> counts;
  for (const auto& doc : corpus.docs) {
    for (const auto& region : doc.regions) {
      if (region.gt_label != kNoLabel) {
        ++counts[corpus.vocab.label(region.gt_label)];
      }
    }
  }
  if (counts.empty()) {
    throw IngestError("cannot build a vocabulary from an empty corpus");
  }
  std::vector<std::pair<std::string, size_t>> ranked(counts.begin(),
                                                     counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  if (ranked.size() > top_k) ranked.resize(top_k);
  std::vector<std::string> labels;
  labels.reserve(ranked.size());
  for (auto& [label, count] : ranked) labels.push_back(std::move(label));
  return LabelVocabulary(std::move(labels));
}

Corpus restrict_to_vocabulary(const Corpus& corpus,
                              const LabelVocabulary& vocab,
                              std::vector<std::string>* notes) {
  Corpus out;
  out.vocab = vocab;
  out.feature_spaces = corpus.feature_spaces;
  for (const auto& doc : corpus.docs) {
    ImageDoc kept{doc.image_id, {}};
    for (const auto& region : doc.regions) {
      RegionRecord r = region;
      if (r.gt_label != kNoLabel) {
        int mapped = vocab.find(corpus.vocab.label(r.gt_label));
        if (mapped < 0) {
          if (notes) {
            notes->push_back("dropped region " + doc.image_id + "/" +
                             r.region_id + ": ground truth '" +
                             corpus.vocab.label(r.gt_label) +
                             "' not in vocabulary");
          }
          continue;
        }
        r.gt_label = mapped;
      }
      if (r.bag) {
        BagOfLabels bag;
        bag.source_spaces = r.bag->source_spaces;
        bag.nearest_fallback = r.bag->nearest_fallback;
        for (const auto& [label, count] : r.bag->entries) {
          int mapped = vocab.find(corpus.vocab.label(label));
          if (mapped < 0) {
            if (notes) {
              notes->push_back("dropped bag label '" +
                               corpus.vocab.label(label) + "' from region " +
                               doc.image_id + "/" + r.region_id);
            }
            continue;
          }
          bag.add(mapped, count);
        }
        r.bag = std::move(bag);
      }
      kept.regions.push_back(std::move(r));
    }
    if (kept.regions.empty()) {
      if (notes && !doc.regions.empty()) {
        notes->push_back("dropped empty image " + doc.image_id);
      }
      continue;
    }
    out.docs.push_back(std::move(kept));
  }
  return out;
}

std::vector<std::string> CorpusReport::lines() const {
  std::vector<std::string> all;
  for (const auto& s : duplicate_regions) all.push_back("duplicate-region: " + s);
  for (const auto& s : unknown_labels) all.push_back("unknown-label: " + s);
  for (const auto& s : dimension_mismatches) all.push_back("dim-mismatch: " + s);
  for (const auto& s : empty_docs) all.push_back("empty-doc: " + s);
  return all;
}

CorpusReport validate(const Corpus& corpus) {
  CorpusReport report;
  const int L = static_cast<int>(corpus.vocab.size());
  for (const auto& doc : corpus.docs) {
    if (doc.regions.empty()) {
      report.empty_docs.push_back(doc.image_id);
    }
    std::unordered_map<std::string, int> seen;
    for (const auto& region : doc.regions) {
      std::string where = doc.image_id + "/" + region.region_id;
      if (++seen[region.region_id] == 2) {
        report.duplicate_regions.push_back(where);
      }
      if (region.gt_label != kNoLabel &&
          (region.gt_label < 0 || region.gt_label >= L)) {
        report.unknown_labels.push_back(
            where + ": ground-truth index " +
            std::to_string(region.gt_label) + " outside vocabulary of " +
            std::to_string(L));
      }
      if (region.bag) {
        for (const auto& [label, count] : region.bag->entries) {
          if (label < 0 || label >= L || count < 1) {
            report.unknown_labels.push_back(
                where + ": bag entry (" + std::to_string(label) + ", " +
                std::to_string(count) + ") invalid for vocabulary of " +
                std::to_string(L));
          }
        }
      }
      for (const auto& [tag, vec] : region.features) {
        auto it = corpus.feature_spaces.find(tag);
        if (it == corpus.feature_spaces.end()) {
          report.dimension_mismatches.push_back(
              where + ": feature space '" + tag + "' is not declared");
        } else if (it->second != vec.size()) {
          report.dimension_mismatches.push_back(
              where + ": space '" + tag + "' expects dim " +
              std::to_string(it->second) + ", got " +
              std::to_string(vec.size()));
        }
      }
    }
  }
  return report;
}

}  // namespace vsim
