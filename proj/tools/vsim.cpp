// Command-line front end over the library: trains the semantic and visual
// models from a labeled-region corpus, runs the joint label-inference loop
// over new images, synthesizes corpora from known parameters, scores
// decision files, and cross-checks the Gibbs samplers against exact
// enumeration.
//
// Subcommands: train, infer, synth, eval, oracle-check. Every run writes a
// manifest (effective configuration, root seed, input and output content
// hashes) sufficient to reproduce its outputs bit-exactly. The worker count
// is excluded from manifests because it never changes results: all
// randomness derives from the root seed through per-image and per-chain
// substreams, and results are reduced in image-id order.
//
// Exit codes: 0 success, 1 failed check or unexpected error, 2 input or
// ingestion failure, 3 model mismatch, 4 numerical failure.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "vsim/common.hpp"
#include "vsim/corpus.hpp"
#include "vsim/joint.hpp"
#include "vsim/metrics.hpp"
#include "vsim/neighborhood.hpp"
#include "vsim/nnlda.hpp"
#include "vsim/oracle.hpp"
#include "vsim/pam.hpp"
#include "vsim/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace vsim;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string file_hash(const std::string& path) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx",
                static_cast<unsigned long long>(fnv1a64(read_file(path))));
  return buf;
}

std::string vocab_hash(const LabelVocabulary& vocab) {
  std::string joined;
  for (const auto& l : vocab.labels()) {
    joined += l;
    joined += '\n';
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx",
                static_cast<unsigned long long>(fnv1a64(joined)));
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      parts.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return parts;
}

double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw IngestError("cannot parse " + what + " '" + s + "'");
  return v;
}

void print_notes(const std::vector<std::string>& notes) {
  for (const auto& n : notes) std::fprintf(stderr, "note: %s\n", n.c_str());
}

// Runs body(0..n-1) on a pool, capturing exceptions per index so the first
// failure (by index, not by completion order) is the one reported.
void parallel_for(size_t n, size_t workers,
                  const std::function<void(size_t)>& body) {
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<size_t> next{0};
    auto run = [&]() {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    size_t spawn = std::min(workers, n);
    pool.reserve(spawn);
    for (size_t w = 0; w < spawn; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// Shared option groups

struct BagOptions {
  std::vector<std::string> epsilon;  // "space:radius" entries
  double default_epsilon = 0.0;
  std::string norm = "euclidean";
  size_t max_bag = 0;
  bool include_self = false;
};

void add_bag_options(CLI::App* cmd, BagOptions& opt, bool with_self) {
  cmd->add_option("--epsilon", opt.epsilon,
                  "radius per feature space as space:radius (repeatable)");
  cmd->add_option("--default-epsilon", opt.default_epsilon,
                  "radius for spaces without an --epsilon entry");
  cmd->add_option("--norm", opt.norm,
                  "distance norm: euclidean or chi-square");
  cmd->add_option("--max-bag", opt.max_bag,
                  "cap on neighbors per space, nearest first (0 = unlimited)");
  if (with_self) {
    cmd->add_flag("--include-self", opt.include_self,
                  "let a training region's own label into its bag");
  }
}

NeighborhoodConfig neighborhood_config(const BagOptions& opt) {
  NeighborhoodConfig cfg;
  for (const auto& entry : opt.epsilon) {
    size_t pos = entry.rfind(':');
    if (pos == std::string::npos || pos == 0 || pos + 1 == entry.size())
      throw IngestError("--epsilon entry '" + entry +
                        "' is not of the form space:radius");
    double radius = parse_double(entry.substr(pos + 1), "epsilon radius");
    if (radius <= 0.0)
      throw IngestError("--epsilon radius must be positive in '" + entry +
                        "'");
    cfg.epsilon[entry.substr(0, pos)] = radius;
  }
  cfg.default_epsilon = opt.default_epsilon;
  if (opt.norm == "euclidean") {
    cfg.norm = DistanceNorm::euclidean;
  } else if (opt.norm == "chi-square") {
    cfg.norm = DistanceNorm::chi_square;
  } else {
    throw IngestError("unknown norm '" + opt.norm +
                      "' (expected euclidean or chi-square)");
  }
  cfg.max_bag = opt.max_bag;
  cfg.include_self = opt.include_self;
  return cfg;
}

ordered_json bag_config_json(const BagOptions& opt) {
  ordered_json eps = ordered_json::array();
  for (const auto& e : opt.epsilon) eps.push_back(e);
  return ordered_json{{"epsilon", eps},
                      {"default-epsilon", opt.default_epsilon},
                      {"norm", opt.norm},
                      {"max-bag", opt.max_bag},
                      {"include-self", opt.include_self}};
}

bool has_bag(const RegionRecord& region) {
  return region.bag.has_value() && !region.bag->entries.empty();
}

bool needs_bags(const Corpus& corpus) {
  for (const auto& doc : corpus.docs) {
    for (const auto& region : doc.regions) {
      if (!has_bag(region)) return true;
    }
  }
  return false;
}

// Radius search against every feature space the index corpus declares.
Corpus attach_bags(const Corpus& corpus, const Corpus& index_corpus,
                   const NeighborhoodConfig& cfg,
                   std::vector<std::string>* notes) {
  std::map<std::string, FeatureSpaceIndex> indices;
  for (const auto& [space, dim] : index_corpus.feature_spaces) {
    (void)dim;
    indices.emplace(space, build_index(index_corpus, space));
  }
  return make_bags(corpus, indices, cfg, notes);
}

void write_manifest(const std::string& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write manifest '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IngestError("write failed for manifest '" + path + "'");
}

// Output files sit next to the manifest, so they are recorded by basename;
// manifests from runs into different directories stay comparable.
ordered_json output_entry(const std::string& path) {
  return ordered_json{{"file", fs::path(path).filename().string()},
                      {"hash", file_hash(path)}};
}

// Config files hold key=value lines using the same field names as the long
// flags ('#' starts a comment). Each entry becomes a --key=value token ahead
// of the real command line, and entries whose flag was given explicitly are
// dropped, so the precedence is flag > config file > default.
std::vector<std::string> expand_config(const CLI::App* sub,
                                       std::vector<std::string> args) {
  std::string config_path;
  for (size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    }
  }
  if (config_path.empty()) return args;
  std::set<std::string> given;
  for (size_t i = 1; i < args.size(); ++i) {
    if (args[i].rfind("--", 0) != 0) continue;
    given.insert(args[i].substr(0, args[i].find('=')));
  }
  std::ifstream in(config_path);
  if (!in) throw IngestError("cannot open config file '" + config_path + "'");
  auto trim = [](const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  std::vector<std::string> derived;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string text = trim(line);
    if (text.empty()) continue;
    auto fail = [&](const std::string& msg) {
      throw IngestError("config file '" + config_path + "' line " +
                        std::to_string(line_no) + ": " + msg);
    };
    size_t eq = text.find('=');
    if (eq == std::string::npos) fail("expected key=value");
    std::string key = trim(text.substr(0, eq));
    std::string flag = "--" + key;
    if (key.empty() || sub->get_option_no_throw(flag) == nullptr)
      fail("unknown field '" + key + "'");
    if (given.count(flag)) continue;
    derived.push_back(flag + "=" + trim(text.substr(eq + 1)));
  }
  std::vector<std::string> out;
  out.push_back(args[0]);
  out.insert(out.end(), derived.begin(), derived.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

std::string out_path(const std::string& dir, const char* name) {
  return (fs::path(dir) / name).string();
}

// ---------------------------------------------------------------------------
// Decision and scene files
//
// Decisions are tab-separated key=value rows under a `# labels=` header that
// pins the vocabulary order the posterior columns use:
//
//   image=<id>  region=<id>  map=<label>  retained=<l1,l2,...>  posterior=<p1,p2,...>
//
// Scene files carry one `image=<id>  scene=<v1,v2,...>` row per image under
// a `# subtopics=<T>` header. Values are printed with enough digits to
// round-trip exactly.

struct DecisionRow {
  std::string image_id;
  std::string region_id;
  int map_label = kNoLabel;
  std::vector<int> retained;
  std::vector<double> posterior;
};

struct DecisionFile {
  LabelVocabulary vocab;
  std::vector<DecisionRow> rows;
};

void write_decisions(
    const std::string& path, const LabelVocabulary& vocab,
    const std::vector<std::pair<std::string, const std::vector<LabelDecision>*>>&
        per_image) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write decisions file '" + path + "'");
  out << "# labels=";
  for (size_t l = 0; l < vocab.size(); ++l) {
    if (l) out << ',';
    out << vocab.label(l);
  }
  out << '\n';
  for (const auto& [image_id, decisions] : per_image) {
    for (const auto& d : *decisions) {
      out << "image=" << image_id << "\tregion=" << d.region_id << "\tmap="
          << vocab.label(d.map_label) << "\tretained=";
      for (size_t j = 0; j < d.retained.size(); ++j) {
        if (j) out << ',';
        out << vocab.label(d.retained[j]);
      }
      out << "\tposterior=";
      for (size_t l = 0; l < d.posterior.size(); ++l) {
        if (l) out << ',';
        out << fmt17(d.posterior[l]);
      }
      out << '\n';
    }
  }
  if (!out)
    throw IngestError("write failed for decisions file '" + path + "'");
}

DecisionFile load_decisions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open decisions file '" + path + "'");
  DecisionFile file;
  bool have_labels = false;
  std::string line;
  size_t line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw IngestError("decisions file '" + path + "' line " +
                      std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("# labels=", 0) == 0) {
      std::vector<std::string> names = split(line.substr(9), ',');
      if (names.empty() || names.front().empty()) fail("empty label header");
      file.vocab = LabelVocabulary(names);
      have_labels = true;
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    if (!have_labels) fail("data row before the # labels= header");
    DecisionRow row;
    for (const auto& field : split(line, '\t')) {
      size_t pos = field.find('=');
      if (pos == std::string::npos) fail("field '" + field + "' lacks '='");
      std::string key = field.substr(0, pos);
      std::string value = field.substr(pos + 1);
      if (key == "image") {
        row.image_id = value;
      } else if (key == "region") {
        row.region_id = value;
      } else if (key == "map") {
        row.map_label = file.vocab.find(value);
        if (row.map_label < 0) fail("unknown map label '" + value + "'");
      } else if (key == "retained") {
        if (value.empty()) continue;
        for (const auto& name : split(value, ',')) {
          int l = file.vocab.find(name);
          if (l < 0) fail("unknown retained label '" + name + "'");
          row.retained.push_back(l);
        }
      } else if (key == "posterior") {
        for (const auto& num : split(value, ','))
          row.posterior.push_back(parse_double(num, "posterior entry"));
      } else {
        fail("unknown field '" + key + "'");
      }
    }
    if (row.image_id.empty() || row.region_id.empty())
      fail("row lacks image= or region=");
    if (row.map_label < 0) fail("row lacks map=");
    if (row.posterior.size() != file.vocab.size())
      fail("posterior has " + std::to_string(row.posterior.size()) +
           " entries for " + std::to_string(file.vocab.size()) + " labels");
    file.rows.push_back(std::move(row));
  }
  if (!have_labels)
    throw IngestError("decisions file '" + path + "' has no # labels= header");
  if (file.rows.empty())
    throw IngestError("decisions file '" + path + "' has no decision rows");
  return file;
}

void write_scenes(
    const std::string& path, size_t subtopics,
    const std::vector<std::pair<std::string, const std::vector<double>*>>&
        per_image) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write scenes file '" + path + "'");
  out << "# subtopics=" << subtopics << '\n';
  for (const auto& [image_id, scene] : per_image) {
    out << "image=" << image_id << "\tscene=";
    for (size_t t = 0; t < scene->size(); ++t) {
      if (t) out << ',';
      out << fmt17((*scene)[t]);
    }
    out << '\n';
  }
  if (!out) throw IngestError("write failed for scenes file '" + path + "'");
}

std::map<std::string, std::vector<double>> load_scenes(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open scenes file '" + path + "'");
  std::map<std::string, std::vector<double>> scenes;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto fields = split(line, '\t');
    std::string image_id;
    std::vector<double> scene;
    for (const auto& field : fields) {
      size_t pos = field.find('=');
      if (pos == std::string::npos)
        throw IngestError("scenes file '" + path + "' line " +
                          std::to_string(line_no) + ": field '" + field +
                          "' lacks '='");
      std::string key = field.substr(0, pos);
      std::string value = field.substr(pos + 1);
      if (key == "image") {
        image_id = value;
      } else if (key == "scene") {
        for (const auto& num : split(value, ','))
          scene.push_back(parse_double(num, "scene entry"));
      }
    }
    if (image_id.empty() || scene.empty())
      throw IngestError("scenes file '" + path + "' line " +
                        std::to_string(line_no) +
                        ": row lacks image= or scene=");
    scenes[image_id] = std::move(scene);
  }
  if (scenes.empty())
    throw IngestError("scenes file '" + path + "' has no scene rows");
  return scenes;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string corpus;
  std::string out_dir = ".";
  size_t supertopics = 20;
  size_t subtopics = 50;
  size_t vis_topics = 50;
  double alpha0 = 1.0;
  double beta = 0.01;
  double alpha = 1.0;
  double psi = 0.01;
  size_t train_iters = 1000;
  size_t alpha_update_start = 50;
  bool fixed_alpha = false;
  size_t vocab_top = 0;
  BagOptions bags;
  uint64_t seed = 1;
  size_t workers = 1;
};

int cmd_train(const TrainOptions& opt) {
  std::vector<std::string> notes;
  Corpus corpus = load_corpus(opt.corpus, CorpusMode::training, nullptr,
                              &notes);
  std::fprintf(stderr, "loaded '%s': %zu images, %zu regions, %zu labels\n",
               opt.corpus.c_str(), corpus.docs.size(), corpus.region_count(),
               corpus.vocab.size());
  if (opt.vocab_top > 0 && opt.vocab_top < corpus.vocab.size()) {
    LabelVocabulary top = build_vocabulary(corpus, opt.vocab_top);
    corpus = restrict_to_vocabulary(corpus, top, &notes);
    std::fprintf(stderr,
                 "restricted to the %zu most frequent labels: "
                 "%zu images, %zu regions remain\n",
                 top.size(), corpus.docs.size(), corpus.region_count());
  }
  bool built_bags = false;
  if (needs_bags(corpus)) {
    corpus = attach_bags(corpus, corpus, neighborhood_config(opt.bags),
                         &notes);
    built_bags = true;
    std::fprintf(stderr, "built bags for %zu regions\n",
                 corpus.region_count());
  }
  print_notes(notes);

  PamHyperparams ph;
  ph.S = opt.supertopics;
  ph.T = opt.subtopics;
  ph.alpha0 = opt.alpha0;
  ph.beta = opt.beta;
  NnldaHyperparams nh;
  nh.A = opt.vis_topics;
  nh.alpha = opt.alpha;
  nh.psi = opt.psi;
  PamTrainOptions topts;
  topts.iters = opt.train_iters;
  topts.alpha_update_start = opt.alpha_update_start;
  topts.update_alpha = !opt.fixed_alpha;

  // Two independent chains; with enough workers they run concurrently.
  // Either way each draws from its own substream of the root seed.
  PamModel pam;
  NnldaModel nn;
  std::exception_ptr pam_error, nn_error;
  auto run_pam = [&]() {
    try {
      Rng rng = Rng::substream(opt.seed, {kStreamPamTrain});
      pam = train_pam(corpus, ph, topts, rng);
    } catch (...) {
      pam_error = std::current_exception();
    }
  };
  auto run_nn = [&]() {
    try {
      Rng rng = Rng::substream(opt.seed, {kStreamNnldaTrain});
      nn = train_nnlda(corpus, nh, opt.train_iters, rng);
    } catch (...) {
      nn_error = std::current_exception();
    }
  };
  if (opt.workers > 1) {
    std::thread a(run_pam), b(run_nn);
    a.join();
    b.join();
  } else {
    run_pam();
    run_nn();
  }
  if (pam_error) std::rethrow_exception(pam_error);
  if (nn_error) std::rethrow_exception(nn_error);
  pam.seed = opt.seed;
  nn.seed = opt.seed;

  fs::create_directories(opt.out_dir);
  std::string pam_path = out_path(opt.out_dir, "pam.model");
  std::string nn_path = out_path(opt.out_dir, "nnlda.model");
  save_pam_model(pam, pam_path);
  save_nnlda_model(nn, nn_path);
  std::fprintf(stderr,
               "trained semantic model (%zu supertopics, %zu subtopics) and "
               "visual model (%zu topics) for %zu sweeps\n",
               ph.S, ph.T, nh.A, opt.train_iters);

  ordered_json config{{"supertopics", opt.supertopics},
                      {"subtopics", opt.subtopics},
                      {"alpha0", opt.alpha0},
                      {"beta", opt.beta},
                      {"vis-topics", opt.vis_topics},
                      {"alpha", opt.alpha},
                      {"psi", opt.psi},
                      {"train-iters", opt.train_iters},
                      {"alpha-update-start", opt.alpha_update_start},
                      {"fixed-alpha", opt.fixed_alpha},
                      {"vocab-top", opt.vocab_top}};
  if (built_bags) config["bags"] = bag_config_json(opt.bags);
  ordered_json manifest{
      {"command", "train"},
      {"seed", opt.seed},
      {"config", config},
      {"inputs",
       ordered_json{{"corpus", ordered_json{{"path", opt.corpus},
                                            {"hash", file_hash(opt.corpus)}}}}},
      {"outputs", ordered_json{{"pam-model", output_entry(pam_path)},
                               {"nnlda-model", output_entry(nn_path)}}}};
  write_manifest(out_path(opt.out_dir, "train.manifest.json"), manifest);
  std::fprintf(stderr, "wrote %s, %s\n", pam_path.c_str(), nn_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// infer

struct InferOptions {
  std::string corpus;
  std::string pam_model;
  std::string nnlda_model;
  std::string train_corpus;
  std::string out_dir = ".";
  size_t da_iters = 6;
  size_t samples = 500;
  size_t pam_infer_iters = 100;
  size_t nnlda_infer_iters = 100;
  double threshold = 0.2;
  std::string modulation = "product";
  double log_pool_weight = 0.5;
  bool refresh_visual = false;
  double early_stop_tv = 0.0;
  BagOptions bags;
  uint64_t seed = 1;
  size_t workers = 1;
};

Modulation modulation_from(const std::string& name) {
  if (name == "product") return Modulation::product;
  if (name == "replace") return Modulation::replace;
  if (name == "log-pool") return Modulation::log_pool;
  throw IngestError("unknown modulation '" + name +
                    "' (expected product, replace, or log-pool)");
}

int cmd_infer(const InferOptions& opt) {
  PamModel pam = load_pam_model(opt.pam_model);
  NnldaModel nn = load_nnlda_model(opt.nnlda_model);
  if (!(pam.vocab == nn.vocab)) {
    throw ModelMismatchError(
        "semantic and visual models use different vocabularies: '" +
        opt.pam_model + "' " + vocab_hash(pam.vocab) + " vs '" +
        opt.nnlda_model + "' " + vocab_hash(nn.vocab));
  }
  std::fprintf(stderr,
               "loaded models: %zu supertopics, %zu subtopics, %zu visual "
               "topics, %zu labels (%s)\n",
               pam.hyper.S, pam.hyper.T, nn.hyper.A, pam.vocab.size(),
               vocab_hash(pam.vocab).c_str());

  std::vector<std::string> notes;
  Corpus corpus =
      load_corpus(opt.corpus, CorpusMode::inference, &pam.vocab, &notes);
  std::fprintf(stderr, "loaded '%s': %zu images, %zu regions\n",
               opt.corpus.c_str(), corpus.docs.size(), corpus.region_count());
  bool built_bags = false;
  if (needs_bags(corpus)) {
    if (opt.train_corpus.empty())
      throw IngestError(
          "regions lack bags; pass --train-corpus to build them by radius "
          "search");
    Corpus train = load_corpus(opt.train_corpus, CorpusMode::training,
                               &pam.vocab, &notes);
    corpus = attach_bags(corpus, train, neighborhood_config(opt.bags), &notes);
    built_bags = true;
    std::fprintf(stderr, "built bags against '%s' (%zu training regions)\n",
                 opt.train_corpus.c_str(), train.region_count());
  }
  print_notes(notes);

  const bool init_only = opt.da_iters == 0;
  DaConfig cfg;
  cfg.da_iters = init_only ? 1 : opt.da_iters;
  cfg.n_samples = opt.samples;
  cfg.pam_infer_iters = opt.pam_infer_iters;
  cfg.nnlda_infer_iters = opt.nnlda_infer_iters;
  cfg.threshold = opt.threshold;
  cfg.modulation = modulation_from(opt.modulation);
  cfg.log_pool_weight = opt.log_pool_weight;
  cfg.refresh_visual = opt.refresh_visual;
  cfg.early_stop_tv = opt.early_stop_tv;
  cfg.validate();

  struct ImageOutput {
    std::vector<LabelDecision> decisions;
    std::vector<double> scene;
    std::vector<std::string> notes;
  };
  const size_t n = corpus.docs.size();
  std::vector<ImageOutput> outputs(n);
  parallel_for(n, opt.workers, [&](size_t i) {
    Rng rng = Rng::substream(opt.seed, {kStreamImage, i});
    const ImageDoc& image = corpus.docs[i];
    ImageOutput& out = outputs[i];
    if (init_only) {
      // Visual-only posteriors; one imputation pass supplies the scene
      // estimate without touching them.
      DaState state = initialize_posteriors(image, nn, cfg, rng);
      ImputedSamples imputed = imputation_step(state, pam, nn, cfg, rng);
      out.scene = std::move(imputed.scene);
      out.decisions = threshold_labels(state, cfg.threshold);
      out.notes = std::move(state.notes);
    } else {
      DaState state = run_da(image, pam, nn, cfg, rng);
      out.scene = std::move(state.scene);
      out.decisions = threshold_labels(state, cfg.threshold);
      out.notes = std::move(state.notes);
    }
  });

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return corpus.docs[a].image_id < corpus.docs[b].image_id;
  });

  std::vector<std::pair<std::string, const std::vector<LabelDecision>*>>
      decision_rows;
  std::vector<std::pair<std::string, const std::vector<double>*>> scene_rows;
  size_t region_total = 0;
  for (size_t idx : order) {
    print_notes(outputs[idx].notes);
    decision_rows.emplace_back(corpus.docs[idx].image_id,
                               &outputs[idx].decisions);
    scene_rows.emplace_back(corpus.docs[idx].image_id, &outputs[idx].scene);
    region_total += outputs[idx].decisions.size();
  }

  fs::create_directories(opt.out_dir);
  std::string decisions_path = out_path(opt.out_dir, "decisions.txt");
  std::string scenes_path = out_path(opt.out_dir, "scenes.txt");
  write_decisions(decisions_path, pam.vocab, decision_rows);
  write_scenes(scenes_path, pam.hyper.T, scene_rows);

  ordered_json config{{"da-iters", opt.da_iters},
                      {"samples", opt.samples},
                      {"pam-infer-iters", opt.pam_infer_iters},
                      {"nnlda-infer-iters", opt.nnlda_infer_iters},
                      {"threshold", opt.threshold},
                      {"modulation", opt.modulation},
                      {"log-pool-weight", opt.log_pool_weight},
                      {"refresh-visual", opt.refresh_visual},
                      {"early-stop-tv", opt.early_stop_tv}};
  if (built_bags) config["bags"] = bag_config_json(opt.bags);
  ordered_json inputs{
      {"corpus",
       ordered_json{{"path", opt.corpus}, {"hash", file_hash(opt.corpus)}}},
      {"pam-model", ordered_json{{"path", opt.pam_model},
                                 {"hash", file_hash(opt.pam_model)}}},
      {"nnlda-model", ordered_json{{"path", opt.nnlda_model},
                                   {"hash", file_hash(opt.nnlda_model)}}}};
  if (built_bags)
    inputs["train-corpus"] =
        ordered_json{{"path", opt.train_corpus},
                     {"hash", file_hash(opt.train_corpus)}};
  ordered_json manifest{
      {"command", "infer"},
      {"seed", opt.seed},
      {"config", config},
      {"inputs", inputs},
      {"outputs", ordered_json{{"decisions", output_entry(decisions_path)},
                               {"scenes", output_entry(scenes_path)}}}};
  write_manifest(out_path(opt.out_dir, "infer.manifest.json"), manifest);
  std::fprintf(stderr, "wrote %s (%zu regions), %s (%zu images)\n",
               decisions_path.c_str(), region_total, scenes_path.c_str(), n);
  return 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::string out_dir = ".";
  size_t labels = 100;
  size_t supertopics = 20;
  size_t subtopics = 50;
  size_t vis_topics = 50;
  size_t train_images = 200;
  size_t test_images = 50;
  size_t doc_min = 5, doc_max = 9;
  size_t bag_min = 5, bag_max = 9;
  double alpha0 = 1.0;
  double beta = 0.01;
  double alpha = 1.0;
  double psi = 0.01;
  double phi_peak = 0.9;
  double theta_peak = 0.9;
  double gamma_peak = 0.9;
  double row_concentration = 0.0;
  double alpha_s_diag = 0.0;
  double alpha_s_off = 0.0;
  uint64_t seed = 1;
};

int cmd_synth(const SynthOptions& opt) {
  if (opt.labels < 2) throw IngestError("synthesis needs at least two labels");
  SyntheticSpec spec;
  spec.pam.S = opt.supertopics;
  spec.pam.T = opt.subtopics;
  spec.pam.alpha0 = opt.alpha0;
  spec.pam.beta = opt.beta;
  if (opt.alpha_s_diag > 0.0) {
    if (opt.alpha_s_off <= 0.0)
      throw IngestError(
          "--alpha-s-off must be positive when --alpha-s-diag is set");
    spec.pam.alpha_s =
        Grid<double>(opt.supertopics, opt.subtopics, opt.alpha_s_off);
    for (size_t s = 0; s < opt.supertopics; ++s)
      spec.pam.alpha_s(s, s % opt.subtopics) = opt.alpha_s_diag;
  }
  spec.nnlda.A = opt.vis_topics;
  spec.nnlda.alpha = opt.alpha;
  spec.nnlda.psi = opt.psi;
  if (opt.row_concentration > 0.0) {
    Rng phi_rng = Rng::substream(opt.seed, {kStreamSynth, 101});
    Rng theta_rng = Rng::substream(opt.seed, {kStreamSynth, 102});
    Rng gamma_rng = Rng::substream(opt.seed, {kStreamSynth, 103});
    spec.phi = dirichlet_rows(opt.subtopics, opt.labels,
                              opt.row_concentration, phi_rng);
    spec.theta_vis = dirichlet_rows(opt.labels, opt.vis_topics,
                                    opt.row_concentration, theta_rng);
    spec.gamma_vis = dirichlet_rows(opt.vis_topics, opt.labels,
                                    opt.row_concentration, gamma_rng);
  } else {
    spec.phi = peaked_rows(opt.subtopics, opt.labels, opt.phi_peak);
    spec.theta_vis = peaked_rows(opt.labels, opt.vis_topics, opt.theta_peak);
    spec.gamma_vis = peaked_rows(opt.vis_topics, opt.labels, opt.gamma_peak);
  }
  spec.train_images = opt.train_images;
  spec.test_images = opt.test_images;
  spec.doc_length_min = opt.doc_min;
  spec.doc_length_max = opt.doc_max;
  spec.bag_size_min = opt.bag_min;
  spec.bag_size_max = opt.bag_max;
  spec.seed = opt.seed;

  SyntheticData data = generate_synthetic(spec);
  fs::create_directories(opt.out_dir);
  std::string train_path = out_path(opt.out_dir, "train.corpus");
  std::string test_path = out_path(opt.out_dir, "test.corpus");
  std::string train_truth_path = out_path(opt.out_dir, "train.truth");
  std::string test_truth_path = out_path(opt.out_dir, "test.truth");
  save_corpus(data.train, train_path);
  save_corpus(data.test, test_path);
  save_truth(data.train_truth, data.train.vocab, train_truth_path);
  save_truth(data.test_truth, data.test.vocab, test_truth_path);

  ordered_json config{{"labels", opt.labels},
                      {"supertopics", opt.supertopics},
                      {"subtopics", opt.subtopics},
                      {"vis-topics", opt.vis_topics},
                      {"train-images", opt.train_images},
                      {"test-images", opt.test_images},
                      {"doc-min", opt.doc_min},
                      {"doc-max", opt.doc_max},
                      {"bag-min", opt.bag_min},
                      {"bag-max", opt.bag_max},
                      {"alpha0", opt.alpha0},
                      {"beta", opt.beta},
                      {"alpha", opt.alpha},
                      {"psi", opt.psi},
                      {"phi-peak", opt.phi_peak},
                      {"theta-peak", opt.theta_peak},
                      {"gamma-peak", opt.gamma_peak},
                      {"row-concentration", opt.row_concentration},
                      {"alpha-s-diag", opt.alpha_s_diag},
                      {"alpha-s-off", opt.alpha_s_off}};
  ordered_json outputs;
  outputs["train-corpus"] = output_entry(train_path);
  outputs["test-corpus"] = output_entry(test_path);
  outputs["train-truth"] = output_entry(train_truth_path);
  outputs["test-truth"] = output_entry(test_truth_path);
  ordered_json manifest{{"command", "synth"},
                        {"seed", opt.seed},
                        {"config", config},
                        {"inputs", ordered_json::object()},
                        {"outputs", outputs}};
  write_manifest(out_path(opt.out_dir, "synth.manifest.json"), manifest);
  std::fprintf(stderr,
               "wrote %zu training and %zu test images (%zu labels) under "
               "%s\n",
               opt.train_images, opt.test_images, opt.labels,
               opt.out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string decisions;
  std::string truth;
  std::string corpus;
  std::string scenes;
  std::string out_dir = ".";
  size_t top_n = 5;
};

int cmd_eval(const EvalOptions& opt) {
  DecisionFile file = load_decisions(opt.decisions);
  const size_t L = file.vocab.size();

  // Group rows per image in file order; region order within an image is the
  // decision file's order, which matches the truth file's region order.
  std::vector<std::string> image_order;
  std::map<std::string, std::vector<size_t>> rows_by_image;
  for (size_t i = 0; i < file.rows.size(); ++i) {
    auto [it, inserted] =
        rows_by_image.try_emplace(file.rows[i].image_id);
    if (inserted) image_order.push_back(file.rows[i].image_id);
    it->second.push_back(i);
  }

  std::vector<int> gt(file.rows.size(), kNoLabel);
  std::map<std::string, const ImageTruth*> truth_by_image;
  std::vector<ImageTruth> truths;
  if (!opt.truth.empty()) {
    truths = load_truth(opt.truth, file.vocab);
    for (const auto& t : truths) truth_by_image[t.image_id] = &t;
    for (const auto& image_id : image_order) {
      auto it = truth_by_image.find(image_id);
      if (it == truth_by_image.end())
        throw IngestError("truth file has no image '" + image_id + "'");
      const auto& rows = rows_by_image[image_id];
      if (it->second->labels.size() != rows.size())
        throw IngestError("truth file has " +
                          std::to_string(it->second->labels.size()) +
                          " regions for image '" + image_id +
                          "' but the decisions file has " +
                          std::to_string(rows.size()));
      for (size_t pos = 0; pos < rows.size(); ++pos)
        gt[rows[pos]] = it->second->labels[pos];
    }
  } else if (!opt.corpus.empty()) {
    std::vector<std::string> notes;
    Corpus corpus =
        load_corpus(opt.corpus, CorpusMode::training, &file.vocab, &notes);
    print_notes(notes);
    std::map<std::pair<std::string, std::string>, int> gt_by_region;
    for (const auto& doc : corpus.docs)
      for (const auto& region : doc.regions)
        gt_by_region[{doc.image_id, region.region_id}] = region.gt_label;
    for (size_t i = 0; i < file.rows.size(); ++i) {
      auto it = gt_by_region.find(
          {file.rows[i].image_id, file.rows[i].region_id});
      if (it == gt_by_region.end())
        throw IngestError("corpus has no region '" + file.rows[i].image_id +
                          "/" + file.rows[i].region_id + "'");
      gt[i] = it->second;
    }
  } else {
    throw IngestError("pass --truth or --corpus as the ground-truth source");
  }

  // Per-label retrieval: regions ranked by that label's posterior.
  std::string report;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "images=%zu regions=%zu labels=%zu\n",
                image_order.size(), file.rows.size(), L);
  report += buf;
  double ap_sum = 0.0;
  size_t ap_count = 0, ap_skipped = 0;
  for (size_t l = 0; l < L; ++l) {
    std::vector<double> scores(file.rows.size());
    std::vector<bool> relevance(file.rows.size());
    size_t positives = 0;
    for (size_t i = 0; i < file.rows.size(); ++i) {
      scores[i] = file.rows[i].posterior[l];
      relevance[i] = gt[i] == static_cast<int>(l);
      positives += relevance[i];
    }
    if (positives == 0) {
      report += "ap label=" + file.vocab.label(l) + " positives=0 skipped\n";
      ++ap_skipped;
      continue;
    }
    double ap = average_precision(scores, relevance);
    std::snprintf(buf, sizeof(buf), "ap label=%s positives=%zu value=%s\n",
                  file.vocab.label(l).c_str(), positives, fmt6(ap).c_str());
    report += buf;
    ap_sum += ap;
    ++ap_count;
  }
  if (ap_count == 0)
    throw IngestError("no label has a positive region; nothing to score");
  std::snprintf(buf, sizeof(buf), "ap mean=%s evaluated=%zu skipped=%zu\n",
                fmt6(ap_sum / static_cast<double>(ap_count)).c_str(), ap_count,
                ap_skipped);
  report += buf;

  // Region-level top-1: each region's labels ranked by posterior.
  auto ranked_labels = [L](const std::vector<double>& weights) {
    std::vector<int> order(L);
    for (size_t l = 0; l < L; ++l) order[l] = static_cast<int>(l);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return weights[a] > weights[b]; });
    return order;
  };
  std::vector<std::vector<int>> region_ranked, region_gt;
  region_ranked.reserve(file.rows.size());
  region_gt.reserve(file.rows.size());
  for (size_t i = 0; i < file.rows.size(); ++i) {
    region_ranked.push_back(ranked_labels(file.rows[i].posterior));
    region_gt.push_back({gt[i]});
  }
  double top1 = top_n_accuracy(region_ranked, region_gt, 1);
  std::snprintf(buf, sizeof(buf), "top n=1 region_accuracy=%s\n",
                fmt6(top1).c_str());
  report += buf;

  // Image-level top-n: labels ranked by their best posterior over the
  // image's regions, scored against the image's ground-truth label set.
  std::vector<std::vector<int>> image_ranked, image_gt;
  for (const auto& image_id : image_order) {
    std::vector<double> pooled(L, 0.0);
    std::set<int> gt_set;
    for (size_t i : rows_by_image[image_id]) {
      for (size_t l = 0; l < L; ++l)
        pooled[l] = std::max(pooled[l], file.rows[i].posterior[l]);
      gt_set.insert(gt[i]);
    }
    image_ranked.push_back(ranked_labels(pooled));
    image_gt.emplace_back(gt_set.begin(), gt_set.end());
  }
  double topn = top_n_accuracy(image_ranked, image_gt, opt.top_n);
  std::snprintf(buf, sizeof(buf), "top n=%zu image_accuracy=%s\n", opt.top_n,
                fmt6(topn).c_str());
  report += buf;

  if (!opt.scenes.empty()) {
    if (opt.truth.empty())
      throw IngestError("scene comparison needs --truth for the generating "
                        "subtopic mixtures");
    auto scenes = load_scenes(opt.scenes);
    double kl_sum = 0.0;
    for (const auto& image_id : image_order) {
      auto it = scenes.find(image_id);
      if (it == scenes.end())
        throw IngestError("scenes file has no image '" + image_id + "'");
      kl_sum += symmetric_kl(it->second, truth_by_image[image_id]->scene);
    }
    std::snprintf(buf, sizeof(buf), "scene_kl mean=%s images=%zu\n",
                  fmt6(kl_sum / static_cast<double>(image_order.size())).c_str(),
                  image_order.size());
    report += buf;
  }

  std::fputs(report.c_str(), stdout);
  fs::create_directories(opt.out_dir);
  std::string report_path = out_path(opt.out_dir, "report.txt");
  {
    std::ofstream out(report_path);
    if (!out) throw IngestError("cannot write report '" + report_path + "'");
    out << report;
  }

  ordered_json inputs{{"decisions",
                       ordered_json{{"path", opt.decisions},
                                    {"hash", file_hash(opt.decisions)}}}};
  if (!opt.truth.empty())
    inputs["truth"] =
        ordered_json{{"path", opt.truth}, {"hash", file_hash(opt.truth)}};
  if (!opt.corpus.empty())
    inputs["corpus"] =
        ordered_json{{"path", opt.corpus}, {"hash", file_hash(opt.corpus)}};
  if (!opt.scenes.empty())
    inputs["scenes"] =
        ordered_json{{"path", opt.scenes}, {"hash", file_hash(opt.scenes)}};
  ordered_json manifest{
      {"command", "eval"},
      {"config", ordered_json{{"top-n", opt.top_n}}},
      {"inputs", inputs},
      {"outputs", ordered_json{{"report", output_entry(report_path)}}}};
  write_manifest(out_path(opt.out_dir, "eval.manifest.json"), manifest);
  return 0;
}

// ---------------------------------------------------------------------------
// oracle-check

struct OracleOptions {
  std::string out_dir = ".";
  size_t supertopics = 2;
  size_t subtopics = 2;
  size_t labels = 4;
  size_t tokens = 3;
  size_t vis_topics = 2;
  size_t pairs = 3;
  size_t burn = 1000;
  size_t samples = 50000;
  double tv_bound = 0.05;
  uint64_t seed = 1;
  size_t workers = 1;
};

int cmd_oracle_check(const OracleOptions& opt) {
  const size_t S = opt.supertopics, T = opt.subtopics, L = opt.labels;
  const size_t A = opt.vis_topics;
  Rng setup = Rng::substream(opt.seed, {kStreamInit});

  // Semantic side: a scattered base label table, a random document, the
  // exact enumerator, and a Gibbs chain whose assignment-vector histogram
  // must land within the bound.
  PamHyperparams ph;
  ph.S = S;
  ph.T = T;
  ph.alpha0 = 0.8;
  ph.beta = 0.1;
  ph.alpha_s = Grid<double>(S, T, 0.0);
  for (size_t s = 0; s < S; ++s)
    for (size_t t = 0; t < T; ++t)
      ph.alpha_s(s, t) = 0.3 + 0.1 * static_cast<double>((s * T + t) % 4);
  Grid<int32_t> base_n_lt(L, T, 0);
  std::vector<int32_t> base_n_t(T, 0);
  for (size_t i = 0; i < 3 * L * T; ++i) {
    size_t l = setup.uniform_below(L);
    size_t t = setup.uniform_below(T);
    ++base_n_lt(l, t);
    ++base_n_t[t];
  }
  std::vector<int> tokens(opt.tokens);
  for (auto& tok : tokens) tok = static_cast<int>(setup.uniform_below(L));

  ExactPosterior sem_oracle =
      pam_exact_posterior(tokens, ph, base_n_lt, base_n_t, opt.workers);

  Rng sem_rng = Rng::substream(opt.seed, {kStreamChain, 0});
  PamCounts counts = init_semantic_counts(L, ph, {tokens}, sem_rng);
  for (size_t l = 0; l < L; ++l)
    for (size_t t = 0; t < T; ++t) counts.n_lt(l, t) += base_n_lt(l, t);
  for (size_t t = 0; t < T; ++t) counts.n_t[t] += base_n_t[t];
  std::vector<double> sem_hist(sem_oracle.joint.size(), 0.0);
  for (size_t sweep = 0; sweep < opt.burn + opt.samples; ++sweep) {
    for (size_t k = 0; k < tokens.size(); ++k)
      gibbs_step_semantic(counts, ph, 0, k, tokens[k], sem_rng);
    if (sweep < opt.burn) continue;
    size_t idx = 0;
    for (size_t k = 0; k < tokens.size(); ++k)
      idx = idx * (S * T) +
            static_cast<size_t>(counts.zs[0][k]) * T +
            static_cast<size_t>(counts.zt[0][k]);
    sem_hist[idx] += 1.0;
  }
  double sem_tv = 0.0;
  for (size_t i = 0; i < sem_hist.size(); ++i)
    sem_tv += std::fabs(sem_hist[i] / static_cast<double>(opt.samples) -
                        sem_oracle.joint[i]);
  sem_tv *= 0.5;
  bool sem_pass = sem_tv <= opt.tv_bound;
  std::printf("oracle-check semantic: states=%zu tv=%s bound=%s %s\n",
              sem_hist.size(), fmt6(sem_tv).c_str(),
              fmt6(opt.tv_bound).c_str(), sem_pass ? "PASS" : "FAIL");

  // Visual side, same pattern over (semantic, observed) pair topics.
  NnldaHyperparams nh;
  nh.A = A;
  nh.alpha = 0.7;
  nh.psi = 0.15;
  NnldaCounts base;
  base.n_lz_a = Grid<int32_t>(L, A, 0);
  base.n_lw_a = Grid<int32_t>(L, A, 0);
  base.n_l.assign(L, 0);
  base.n_a.assign(A, 0);
  for (size_t i = 0; i < 3 * L * A; ++i) {
    size_t lz = setup.uniform_below(L);
    size_t lw = setup.uniform_below(L);
    size_t a = setup.uniform_below(A);
    ++base.n_lz_a(lz, a);
    ++base.n_lw_a(lw, a);
    ++base.n_l[lz];
    ++base.n_a[a];
  }
  std::vector<std::pair<int, int>> pairs(opt.pairs);
  for (auto& p : pairs)
    p = {static_cast<int>(setup.uniform_below(L)),
         static_cast<int>(setup.uniform_below(L))};

  ExactPosterior vis_oracle =
      nnlda_exact_posterior(pairs, nh, base, L, opt.workers);

  Rng vis_rng = Rng::substream(opt.seed, {kStreamChain, 1});
  NnldaCounts vcounts = init_visual_counts(L, nh, pairs, vis_rng);
  for (size_t l = 0; l < L; ++l)
    for (size_t a = 0; a < A; ++a) {
      vcounts.n_lz_a(l, a) += base.n_lz_a(l, a);
      vcounts.n_lw_a(l, a) += base.n_lw_a(l, a);
    }
  for (size_t l = 0; l < L; ++l) vcounts.n_l[l] += base.n_l[l];
  for (size_t a = 0; a < A; ++a) vcounts.n_a[a] += base.n_a[a];
  std::vector<double> vis_hist(vis_oracle.joint.size(), 0.0);
  for (size_t sweep = 0; sweep < opt.burn + opt.samples; ++sweep) {
    for (size_t k = 0; k < pairs.size(); ++k)
      gibbs_step_visual(vcounts, nh, k, pairs[k].first, pairs[k].second,
                        vis_rng);
    if (sweep < opt.burn) continue;
    size_t idx = 0;
    for (size_t k = 0; k < pairs.size(); ++k)
      idx = idx * A + static_cast<size_t>(vcounts.assignments[k]);
    vis_hist[idx] += 1.0;
  }
  double vis_tv = 0.0;
  for (size_t i = 0; i < vis_hist.size(); ++i)
    vis_tv += std::fabs(vis_hist[i] / static_cast<double>(opt.samples) -
                        vis_oracle.joint[i]);
  vis_tv *= 0.5;
  bool vis_pass = vis_tv <= opt.tv_bound;
  std::printf("oracle-check visual: states=%zu tv=%s bound=%s %s\n",
              vis_hist.size(), fmt6(vis_tv).c_str(), fmt6(opt.tv_bound).c_str(),
              vis_pass ? "PASS" : "FAIL");

  fs::create_directories(opt.out_dir);
  ordered_json manifest{
      {"command", "oracle-check"},
      {"seed", opt.seed},
      {"config", ordered_json{{"supertopics", opt.supertopics},
                              {"subtopics", opt.subtopics},
                              {"labels", opt.labels},
                              {"tokens", opt.tokens},
                              {"vis-topics", opt.vis_topics},
                              {"pairs", opt.pairs},
                              {"burn", opt.burn},
                              {"samples", opt.samples},
                              {"tv", opt.tv_bound}}},
      {"results", ordered_json{{"semantic-tv", sem_tv},
                               {"visual-tv", vis_tv}}}};
  write_manifest(out_path(opt.out_dir, "oracle-check.manifest.json"),
                 manifest);
  return sem_pass && vis_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Region-label inference over paired semantic and visual topic models.\n"
      "Exit codes: 0 success, 1 failed check, 2 bad input, 3 model mismatch,\n"
      "4 numerical failure."};
  app.require_subcommand(1);

  std::string train_config, infer_config, synth_config, eval_config,
      oracle_config;

  TrainOptions train_opt;
  auto* train = app.add_subcommand(
      "train", "train the semantic and visual models from a labeled corpus");
  train->add_option("--config", train_config,
                    "key=value config file; explicit flags win");
  train->add_option("--corpus", train_opt.corpus, "training corpus file")
      ->required();
  train->add_option("--out-dir", train_opt.out_dir,
                    "directory for models and the manifest");
  train->add_option("--supertopics", train_opt.supertopics,
                    "semantic supertopic count");
  train->add_option("--subtopics", train_opt.subtopics,
                    "semantic subtopic count");
  train->add_option("--alpha0", train_opt.alpha0,
                    "supertopic Dirichlet concentration");
  train->add_option("--beta", train_opt.beta,
                    "subtopic-label Dirichlet smoothing");
  train->add_option("--vis-topics", train_opt.vis_topics,
                    "visual topic count");
  train->add_option("--alpha", train_opt.alpha,
                    "label-topic Dirichlet concentration");
  train->add_option("--psi", train_opt.psi,
                    "topic-label Dirichlet smoothing");
  train->add_option("--train-iters", train_opt.train_iters,
                    "Gibbs sweeps for each model");
  train->add_option("--alpha-update-start", train_opt.alpha_update_start,
                    "first sweep that re-estimates the subtopic Dirichlet");
  train->add_flag("--fixed-alpha", train_opt.fixed_alpha,
                  "keep the subtopic Dirichlet at its uniform start");
  train->add_option("--vocab-top", train_opt.vocab_top,
                    "keep only the N most frequent labels (0 = all)");
  add_bag_options(train, train_opt.bags, true);
  train->add_option("--seed", train_opt.seed, "root seed for this run");
  train->add_option("--workers", train_opt.workers,
                    "threads (the two training chains run concurrently)");

  InferOptions infer_opt;
  auto* infer = app.add_subcommand(
      "infer", "run the joint label-inference loop over new images");
  infer->add_option("--config", infer_config,
                    "key=value config file; explicit flags win");
  infer->add_option("--corpus", infer_opt.corpus, "inference corpus file")
      ->required();
  infer->add_option("--pam-model", infer_opt.pam_model,
                    "trained semantic model")
      ->required();
  infer->add_option("--nnlda-model", infer_opt.nnlda_model,
                    "trained visual model")
      ->required();
  infer->add_option("--train-corpus", infer_opt.train_corpus,
                    "training corpus for radius search when regions lack bags");
  infer->add_option("--out-dir", infer_opt.out_dir,
                    "directory for decisions, scenes, and the manifest");
  infer->add_option("--da-iters", infer_opt.da_iters,
                    "posterior update rounds (0 = visual-only posteriors)");
  infer->add_option("--samples", infer_opt.samples,
                    "imputation replicates per round");
  infer->add_option("--pam-infer-iters", infer_opt.pam_infer_iters,
                    "Gibbs sweeps per imputed document");
  infer->add_option("--nnlda-infer-iters", infer_opt.nnlda_infer_iters,
                    "Gibbs sweeps per region bag");
  infer->add_option("--threshold", infer_opt.threshold,
                    "retention cutoff on final posteriors");
  infer->add_option("--modulation", infer_opt.modulation,
                    "posterior update rule: product, replace, or log-pool");
  infer->add_option("--log-pool-weight", infer_opt.log_pool_weight,
                    "weight on the imputed distribution under log-pool");
  infer->add_flag("--refresh-visual", infer_opt.refresh_visual,
                  "re-infer region topics each round and modulate the fresh "
                  "likelihood");
  infer->add_option("--early-stop-tv", infer_opt.early_stop_tv,
                    "stop when the largest per-region change falls below "
                    "this (0 = never)");
  add_bag_options(infer, infer_opt.bags, false);
  infer->add_option("--seed", infer_opt.seed, "root seed for this run");
  infer->add_option("--workers", infer_opt.workers,
                    "threads over images (never changes results)");

  SynthOptions synth_opt;
  auto* synth = app.add_subcommand(
      "synth", "sample a corpus from known parameters, with latent truth");
  synth->add_option("--config", synth_config,
                    "key=value config file; explicit flags win");
  synth->add_option("--out-dir", synth_opt.out_dir,
                    "directory for corpora, truth files, and the manifest");
  synth->add_option("--labels", synth_opt.labels, "vocabulary size");
  synth->add_option("--supertopics", synth_opt.supertopics,
                    "semantic supertopic count");
  synth->add_option("--subtopics", synth_opt.subtopics,
                    "semantic subtopic count");
  synth->add_option("--vis-topics", synth_opt.vis_topics,
                    "visual topic count");
  synth->add_option("--train-images", synth_opt.train_images,
                    "training image count");
  synth->add_option("--test-images", synth_opt.test_images,
                    "test image count");
  synth->add_option("--doc-min", synth_opt.doc_min,
                    "minimum regions per image");
  synth->add_option("--doc-max", synth_opt.doc_max,
                    "maximum regions per image");
  synth->add_option("--bag-min", synth_opt.bag_min,
                    "minimum bag size per region");
  synth->add_option("--bag-max", synth_opt.bag_max,
                    "maximum bag size per region");
  synth->add_option("--alpha0", synth_opt.alpha0,
                    "supertopic Dirichlet concentration");
  synth->add_option("--beta", synth_opt.beta,
                    "subtopic-label Dirichlet smoothing");
  synth->add_option("--alpha", synth_opt.alpha,
                    "label-topic Dirichlet concentration");
  synth->add_option("--psi", synth_opt.psi, "topic-label Dirichlet smoothing");
  synth->add_option("--phi-peak", synth_opt.phi_peak,
                    "peak mass per subtopic-label row");
  synth->add_option("--theta-peak", synth_opt.theta_peak,
                    "peak mass per label-topic row");
  synth->add_option("--gamma-peak", synth_opt.gamma_peak,
                    "peak mass per topic-label row");
  synth->add_option("--row-concentration", synth_opt.row_concentration,
                    "draw all parameter rows from a symmetric Dirichlet "
                    "instead of peaked rows (0 = peaked)");
  synth->add_option("--alpha-s-diag", synth_opt.alpha_s_diag,
                    "diagonal of a structured subtopic Dirichlet (0 = "
                    "uniform rows)");
  synth->add_option("--alpha-s-off", synth_opt.alpha_s_off,
                    "off-diagonal of the structured subtopic Dirichlet");
  synth->add_option("--seed", synth_opt.seed, "root seed for this run");

  EvalOptions eval_opt;
  auto* eval = app.add_subcommand(
      "eval", "score a decisions file against ground truth");
  eval->add_option("--config", eval_config,
                    "key=value config file; explicit flags win");
  eval->add_option("--decisions", eval_opt.decisions,
                   "decisions file from infer")
      ->required();
  eval->add_option("--truth", eval_opt.truth,
                   "latent-truth file (labels and scene mixtures)");
  eval->add_option("--corpus", eval_opt.corpus,
                   "corpus with ground-truth labels (alternative to --truth)");
  eval->add_option("--scenes", eval_opt.scenes,
                   "scenes file from infer, compared against --truth");
  eval->add_option("--out-dir", eval_opt.out_dir,
                   "directory for the report and the manifest");
  eval->add_option("--top-n", eval_opt.top_n,
                   "n for the image-level top-n accuracy");

  OracleOptions oracle_opt;
  auto* oracle = app.add_subcommand(
      "oracle-check",
      "compare both Gibbs samplers against exact enumeration");
  oracle->add_option("--config", oracle_config,
                    "key=value config file; explicit flags win");
  oracle->add_option("--out-dir", oracle_opt.out_dir,
                     "directory for the manifest");
  oracle->add_option("--supertopics", oracle_opt.supertopics,
                     "semantic supertopic count");
  oracle->add_option("--subtopics", oracle_opt.subtopics,
                     "semantic subtopic count");
  oracle->add_option("--labels", oracle_opt.labels, "vocabulary size");
  oracle->add_option("--tokens", oracle_opt.tokens,
                     "document length for the semantic check");
  oracle->add_option("--vis-topics", oracle_opt.vis_topics,
                     "visual topic count");
  oracle->add_option("--pairs", oracle_opt.pairs,
                     "bag size for the visual check");
  oracle->add_option("--burn", oracle_opt.burn, "burn-in sweeps");
  oracle->add_option("--samples", oracle_opt.samples,
                     "recorded sweeps after burn-in");
  oracle->add_option("--tv", oracle_opt.tv_bound,
                     "total-variation bound both checks must meet");
  oracle->add_option("--seed", oracle_opt.seed, "root seed for this run");
  oracle->add_option("--workers", oracle_opt.workers,
                     "threads for the enumeration (never changes results)");

  int rc = 0;
  train->callback([&]() { rc = cmd_train(train_opt); });
  infer->callback([&]() { rc = cmd_infer(infer_opt); });
  synth->callback([&]() { rc = cmd_synth(synth_opt); });
  eval->callback([&]() { rc = cmd_eval(eval_opt); });
  oracle->callback([&]() { rc = cmd_oracle_check(oracle_opt); });

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (!args.empty()) {
      const std::map<std::string, const CLI::App*> subs{
          {"train", train},   {"infer", infer},
          {"synth", synth},   {"eval", eval},
          {"oracle-check", oracle}};
      auto it = subs.find(args[0]);
      if (it != subs.end()) args = expand_config(it->second, std::move(args));
    }
    std::vector<const char*> cargv;
    cargv.push_back(argv[0]);
    for (const auto& a : args) cargv.push_back(a.c_str());
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const IngestError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ModelMismatchError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return rc;
}
