#include "vsim/corpus.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "vsim/common.hpp"

namespace {

using namespace vsim;

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "vsim_corpus_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::filesystem::path write_file(const std::string& name,
                                 const std::string& content) {
  auto path = temp_file(name);
  std::ofstream out(path);
  out << content;
  return path;
}

}  // namespace

TEST_CASE("minimal two-doc corpus loads with I=2, L=2") {
  auto path = write_file("minimal.tsv",
      "image=i1\tregion=r1\tgt=sky\n"
      "image=i1\tregion=r2\tgt=road\n"
      "image=i1\tregion=r3\tgt=sky\n"
      "image=i2\tregion=r1\tgt=road\n"
      "image=i2\tregion=r2\tgt=road\n"
      "image=i2\tregion=r3\tgt=sky\n");
  Corpus c = load_corpus(path.string(), CorpusMode::training);
  CHECK(c.docs.size() == 2);
  CHECK(c.vocab.size() == 2);
  CHECK(c.docs[0].regions.size() == 3);
  CHECK(c.docs[1].regions.size() == 3);
  CHECK(c.vocab.find("sky") == 0);
  CHECK(c.vocab.find("road") == 1);
  CHECK(c.docs[0].regions[1].gt_label == 1);
}

TEST_CASE("training mode rejects a region without ground truth") {
  auto path = write_file("missing_gt.tsv",
      "image=i1\tregion=r1\tgt=sky\n"
      "image=i1\tregion=r2\tbag=sky:1\n"
      "image=i2\tregion=r1\tgt=road\n");
  CHECK_THROWS_WITH_AS(load_corpus(path.string(), CorpusMode::training),
                       doctest::Contains("i1/r2"), IngestError);
  CHECK_THROWS_WITH_AS(load_corpus(path.string(), CorpusMode::training),
                       doctest::Contains(":2:"), IngestError);
}

TEST_CASE("a 4367-doc corpus loads and reports I=4367") {
  auto path = temp_file("large.tsv");
  {
    std::ofstream out(path);
    for (int d = 0; d < 4367; ++d) {
      int regions = 3 + d % 8;
      for (int r = 0; r < regions; ++r) {
        out << "image=img" << d << "\tregion=r" << r << "\tgt=lab"
            << (d * 31 + r * 7) % 200 << '\n';
      }
    }
  }
  Corpus c = load_corpus(path.string(), CorpusMode::training);
  CHECK(c.docs.size() == 4367);
  CHECK(c.vocab.size() == 200);
}

TEST_CASE("build_vocabulary ranks by frequency with lexicographic ties") {
  Corpus c;
  auto add_doc = [&](const std::string& id,
                     std::initializer_list<const char*> labels) {
    ImageDoc doc{id, {}};
    int r = 0;
    for (const char* l : labels) {
      RegionRecord region;
      region.region_id = "r" + std::to_string(r++);
      region.gt_label = c.vocab.intern(l);
      doc.regions.push_back(std::move(region));
    }
    c.docs.push_back(std::move(doc));
  };

  SUBCASE("counts {a:5, b:3, c:1}, top 2 keeps [a, b]") {
    add_doc("i1", {"a", "a", "b", "c", "a"});
    add_doc("i2", {"b", "a", "a", "b"});
    LabelVocabulary v = build_vocabulary(c, 2);
    REQUIRE(v.size() == 2);
    CHECK(v.label(0) == "a");
    CHECK(v.label(1) == "b");
  }

  SUBCASE("counts {a:3, b:3}, top 1 keeps [a]") {
    add_doc("i1", {"b", "a", "b"});
    add_doc("i2", {"a", "b", "a"});
    LabelVocabulary v = build_vocabulary(c, 1);
    REQUIRE(v.size() == 1);
    CHECK(v.label(0) == "a");
  }

  SUBCASE("fewer distinct labels than top_k returns all of them") {
    add_doc("i1", {"a", "b"});
    LabelVocabulary v = build_vocabulary(c, 10);
    CHECK(v.size() == 2);
  }

  SUBCASE("empty corpus is an error") {
    CHECK_THROWS_AS(build_vocabulary(c, 5), IngestError);
  }
}

TEST_CASE("top-200 cut of a wide-vocabulary corpus yields L=200") {
  Corpus c;
  ImageDoc doc{"i1", {}};
  for (int l = 0; l < 260; ++l) {
    // Label l appears l+1 times, so the top 200 are labels 60..259.
    for (int k = 0; k <= l; ++k) {
      RegionRecord region;
      region.region_id = "r" + std::to_string(l) + "_" + std::to_string(k);
      region.gt_label = c.vocab.intern("lab" + std::to_string(l));
      doc.regions.push_back(std::move(region));
    }
  }
  c.docs.push_back(std::move(doc));
  LabelVocabulary v = build_vocabulary(c, 200);
  CHECK(v.size() == 200);
  CHECK(v.label(0) == "lab259");
  CHECK(v.find("lab59") == -1);
  CHECK(v.find("lab60") >= 0);
}

TEST_CASE("validate reports mismatches without modifying the corpus") {
  Corpus c;
  c.vocab.intern("sky");
  c.vocab.intern("road");
  c.feature_spaces["texton"] = 100;

  SUBCASE("well-formed corpus gives an empty report") {
    ImageDoc doc{"i1", {}};
    RegionRecord r;
    r.region_id = "r1";
    r.gt_label = 0;
    r.features["texton"] = std::vector<double>(100, 0.5);
    doc.regions.push_back(r);
    c.docs.push_back(doc);
    Corpus before = c;
    CorpusReport report = validate(c);
    CHECK(report.clean());
    CHECK(c == before);
  }

  SUBCASE("36-dim vector in a declared 100-dim space is one mismatch") {
    ImageDoc doc{"i1", {}};
    RegionRecord r;
    r.region_id = "r1";
    r.gt_label = 0;
    r.features["texton"] = std::vector<double>(36, 0.5);
    doc.regions.push_back(r);
    c.docs.push_back(doc);
    CorpusReport report = validate(c);
    REQUIRE(report.dimension_mismatches.size() == 1);
    CHECK(report.dimension_mismatches[0].find("texton") != std::string::npos);
    CHECK(report.duplicate_regions.empty());
    CHECK(report.empty_docs.empty());
  }

  SUBCASE("doc with zero regions is one empty-document entry") {
    c.docs.push_back(ImageDoc{"hollow", {}});
    CorpusReport report = validate(c);
    REQUIRE(report.empty_docs.size() == 1);
    CHECK(report.empty_docs[0] == "hollow");
  }

  SUBCASE("duplicate region ids and bad label indices are reported") {
    ImageDoc doc{"i1", {}};
    RegionRecord a;
    a.region_id = "r1";
    a.gt_label = 0;
    RegionRecord b;
    b.region_id = "r1";
    b.gt_label = 7;
    BagOfLabels bag;
    bag.add(5, 1);
    b.bag = bag;
    doc.regions = {a, b};
    c.docs.push_back(doc);
    CorpusReport report = validate(c);
    CHECK(report.duplicate_regions.size() == 1);
    CHECK(report.unknown_labels.size() == 2);
    CHECK(report.lines().size() == 3);
  }
}

TEST_CASE("loading is deterministic and round-trips exactly") {
  auto path = write_file("roundtrip.tsv",
      "# comment line\n"
      "space=color\tdim=3\n"
      "image=i1\tregion=r1\tfeature=color:0.125,3.0000000001,-2.5\t"
      "bag=sky:2 road:1\tgt=sky\n"
      "image=i1\tregion=r2\tfeature=color:1,2,3\tgt=road\n"
      "\n"
      "image=i2\tregion=r1\tbag=road:1\tgt=road\n");
  Corpus first = load_corpus(path.string(), CorpusMode::training);
  Corpus second = load_corpus(path.string(), CorpusMode::training);
  CHECK(first == second);

  auto saved = temp_file("roundtrip_out.tsv");
  save_corpus(first, saved.string());
  Corpus reloaded = load_corpus(saved.string(), CorpusMode::training);
  CHECK(reloaded == first);

  // Saving the reloaded corpus reproduces the same bytes.
  auto saved2 = temp_file("roundtrip_out2.tsv");
  save_corpus(reloaded, saved2.string());
  std::ifstream f1(saved), f2(saved2);
  std::string b1((std::istreambuf_iterator<char>(f1)),
                 std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)),
                 std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
}

TEST_CASE("build_vocabulary is invariant to document order") {
  auto front = write_file("order_a.tsv",
      "image=i1\tregion=r1\tgt=x\n"
      "image=i1\tregion=r2\tgt=y\n"
      "image=i2\tregion=r1\tgt=y\n"
      "image=i3\tregion=r1\tgt=z\n");
  auto back = write_file("order_b.tsv",
      "image=i3\tregion=r1\tgt=z\n"
      "image=i2\tregion=r1\tgt=y\n"
      "image=i1\tregion=r1\tgt=x\n"
      "image=i1\tregion=r2\tgt=y\n");
  Corpus a = load_corpus(front.string(), CorpusMode::training);
  Corpus b = load_corpus(back.string(), CorpusMode::training);
  CHECK(build_vocabulary(a, 2) == build_vocabulary(b, 2));
  CHECK(build_vocabulary(a, 3) == build_vocabulary(b, 3));
}

TEST_CASE("frozen vocabulary drops unknown bag labels and rejects unknown gt") {
  LabelVocabulary frozen({"sky", "road"});

  auto bags = write_file("frozen_bags.tsv",
      "image=t1\tregion=r1\tbag=sky:1 lake:3 road:2\n");
  std::vector<std::string> notes;
  Corpus c = load_corpus(bags.string(), CorpusMode::inference, &frozen, &notes);
  REQUIRE(c.docs.size() == 1);
  const BagOfLabels& bag = *c.docs[0].regions[0].bag;
  CHECK(bag.entries == std::vector<std::pair<int, int>>{{0, 1}, {1, 2}});
  REQUIRE(notes.size() == 1);
  CHECK(notes[0].find("lake") != std::string::npos);

  auto gt = write_file("frozen_gt.tsv",
      "image=t1\tregion=r1\tbag=sky:1\tgt=lake\n");
  CHECK_THROWS_WITH_AS(
      load_corpus(gt.string(), CorpusMode::inference, &frozen),
      doctest::Contains("lake"), IngestError);
}

TEST_CASE("schema violations report the line and field") {
  auto dup = write_file("dup_region.tsv",
      "image=i1\tregion=r1\tgt=a\n"
      "image=i1\tregion=r1\tgt=b\n");
  CHECK_THROWS_WITH_AS(load_corpus(dup.string(), CorpusMode::training),
                       doctest::Contains(":2:"), IngestError);

  auto baddim = write_file("bad_dim.tsv",
      "space=color\tdim=3\n"
      "image=i1\tregion=r1\tfeature=color:1,2\tgt=a\n"
      "image=i1\tregion=r2\tgt=b\n");
  CHECK_THROWS_WITH_AS(load_corpus(baddim.string(), CorpusMode::training),
                       doctest::Contains("feature"), IngestError);

  auto inference_empty = write_file("no_payload.tsv",
      "image=i1\tregion=r1\tgt=a\n");
  CHECK_THROWS_AS(load_corpus(inference_empty.string(), CorpusMode::inference),
                  IngestError);

  auto single_label = write_file("single_label.tsv",
      "image=i1\tregion=r1\tgt=only\n");
  CHECK_THROWS_WITH_AS(load_corpus(single_label.string(), CorpusMode::training),
                       doctest::Contains("two distinct"), IngestError);
}

TEST_CASE("restrict_to_vocabulary remaps and drops consistently") {
  auto path = write_file("restrict.tsv",
      "image=i1\tregion=r1\tbag=common:2 rare:1\tgt=common\n"
      "image=i1\tregion=r2\tbag=rare:1\tgt=rare\n"
      "image=i2\tregion=r1\tbag=rare:2\tgt=rare\n");
  Corpus c = load_corpus(path.string(), CorpusMode::training);
  LabelVocabulary keep({"common"});
  std::vector<std::string> notes;
  Corpus cut = restrict_to_vocabulary(c, keep, &notes);
  REQUIRE(cut.docs.size() == 1);
  REQUIRE(cut.docs[0].regions.size() == 1);
  CHECK(cut.docs[0].regions[0].gt_label == 0);
  CHECK(cut.docs[0].regions[0].bag->entries ==
        std::vector<std::pair<int, int>>{{0, 2}});
  CHECK(validate(cut).clean());
  CHECK(notes.size() == 4);
}

TEST_CASE("bag expansion and totals follow the multiset") {
  BagOfLabels bag;
  bag.add(3, 2);
  bag.add(1, 1);
  bag.add(3, 1);
  CHECK(bag.total() == 4);
  CHECK(bag.expand() == std::vector<int>{1, 3, 3, 3});
  CHECK(bag.entries == std::vector<std::pair<int, int>>{{1, 1}, {3, 3}});
}
