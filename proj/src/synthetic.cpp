#include "vsim/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vsim {

namespace {

void check_rows_stochastic(const Grid<double>& g, const char* name) {
  for (size_t r = 0; r < g.rows(); ++r) {
    double sum = 0.0;
    for (size_t c = 0; c < g.cols(); ++c) {
      if (g(r, c) < 0.0) {
        throw std::invalid_argument(std::string(name) +
                                    " has a negative entry");
      }
      sum += g(r, c);
    }
    if (std::fabs(sum - 1.0) > 1e-9) {
      throw std::invalid_argument(std::string(name) +
                                  " rows must sum to 1");
    }
  }
}

size_t draw_length(size_t lo, size_t hi, Rng& rng) {
  return lo + rng.uniform_below(hi - lo + 1);
}

ImageTruth sample_image(const SyntheticSpec& spec,
                        const PamHyperparams& pam_hyper,
                        const std::string& image_id, ImageDoc& doc, Rng& rng) {
  const size_t T = pam_hyper.T;
  const size_t length = draw_length(spec.doc_length_min, spec.doc_length_max,
                                    rng);
  PamSample ps = sample_generative_pam(pam_hyper, spec.phi, length, rng);

  doc.image_id = image_id;
  doc.regions.resize(length);
  for (size_t r = 0; r < length; ++r) {
    RegionRecord& region = doc.regions[r];
    region.region_id = "r" + std::to_string(r);
    region.gt_label = ps.labels[r];
    const size_t bag_size = draw_length(spec.bag_size_min, spec.bag_size_max,
                                        rng);
    region.bag = sample_generative_nnlda(spec.theta_vis, spec.gamma_vis,
                                         ps.labels[r], bag_size, rng);
  }

  ImageTruth truth;
  truth.image_id = image_id;
  truth.labels = ps.labels;
  truth.zs = ps.zs;
  truth.zt = ps.zt;
  truth.scene.assign(T, 0.0);
  for (size_t s = 0; s < pam_hyper.S; ++s) {
    for (size_t t = 0; t < T; ++t) {
      truth.scene[t] += ps.theta_s[s] * ps.theta_t(s, t);
    }
  }
  return truth;
}

std::string image_name(const char* prefix, size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%04zu", prefix, i);
  return buf;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  PamHyperparams pam_hyper = spec.pam;
  if (pam_hyper.alpha_s.empty()) {
    pam_hyper.alpha_s = Grid<double>(pam_hyper.S, pam_hyper.T,
                                     1.0 / static_cast<double>(pam_hyper.T));
  }
  pam_hyper.validate();
  spec.nnlda.validate();
  const size_t L = spec.phi.cols();
  if (L < 2) throw std::invalid_argument("need at least two labels");
  if (spec.phi.rows() != pam_hyper.T) {
    throw std::invalid_argument("phi must have T rows");
  }
  if (spec.theta_vis.rows() != L || spec.theta_vis.cols() != spec.nnlda.A) {
    throw std::invalid_argument("theta_vis must be L x A");
  }
  if (spec.gamma_vis.rows() != spec.nnlda.A || spec.gamma_vis.cols() != L) {
    throw std::invalid_argument("gamma_vis must be A x L");
  }
  check_rows_stochastic(spec.phi, "phi");
  check_rows_stochastic(spec.theta_vis, "theta_vis");
  check_rows_stochastic(spec.gamma_vis, "gamma_vis");
  if (spec.doc_length_min < 1 || spec.doc_length_min > spec.doc_length_max ||
      spec.bag_size_min < 1 || spec.bag_size_min > spec.bag_size_max) {
    throw std::invalid_argument("length ranges must be nonempty and start "
                                "at 1 or more");
  }
  if (spec.train_images + spec.test_images == 0) {
    throw std::invalid_argument("need at least one image");
  }
  if (!spec.labels.empty() && spec.labels.size() != L) {
    throw std::invalid_argument("label names must match phi's columns");
  }

  std::vector<std::string> names = spec.labels;
  if (names.empty()) {
    for (size_t l = 0; l < L; ++l) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "obj%03zu", l);
      names.push_back(buf);
    }
  }

  SyntheticData data;
  data.train.vocab = LabelVocabulary(names);
  data.test.vocab = data.train.vocab;
  data.train.docs.resize(spec.train_images);
  data.test.docs.resize(spec.test_images);
  data.train_truth.resize(spec.train_images);
  data.test_truth.resize(spec.test_images);

  for (size_t i = 0; i < spec.train_images; ++i) {
    Rng rng = Rng::substream(spec.seed, {kStreamSynth, 0, i});
    data.train_truth[i] = sample_image(spec, pam_hyper, image_name("train", i),
                                       data.train.docs[i], rng);
  }
  for (size_t i = 0; i < spec.test_images; ++i) {
    Rng rng = Rng::substream(spec.seed, {kStreamSynth, 1, i});
    data.test_truth[i] = sample_image(spec, pam_hyper, image_name("test", i),
                                      data.test.docs[i], rng);
  }
  return data;
}

void save_truth(const std::vector<ImageTruth>& truths,
                const LabelVocabulary& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write truth file '" + path + "'");
  out << "# latent truth: per image, one truth= line per region plus the\n"
         "# subtopic marginal the image was drawn with\n";
  char buf[32];
  for (const auto& truth : truths) {
    out << "image=" << truth.image_id << '\n';
    for (size_t r = 0; r < truth.labels.size(); ++r) {
      out << "truth=" << r << "\tlabel=" << vocab.label(truth.labels[r])
          << "\tzs=" << truth.zs[r] << "\tzt=" << truth.zt[r] << '\n';
    }
    out << "scene=";
    for (size_t t = 0; t < truth.scene.size(); ++t) {
      if (t) out << ',';
      std::snprintf(buf, sizeof(buf), "%.17g", truth.scene[t]);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IngestError("write failed for truth file '" + path + "'");
}

std::vector<ImageTruth> load_truth(const std::string& path,
                                   const LabelVocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open truth file '" + path + "'");
  std::vector<ImageTruth> truths;
  std::string line;
  size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw IngestError(path + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("image=", 0) == 0) {
      truths.emplace_back();
      truths.back().image_id = line.substr(6);
    } else if (line.rfind("truth=", 0) == 0) {
      if (truths.empty()) fail("truth= before any image=");
      std::istringstream ss(line);
      std::string field;
      ImageTruth& truth = truths.back();
      int label = kNoLabel, zs = -1, zt = -1;
      while (std::getline(ss, field, '\t')) {
        if (field.rfind("label=", 0) == 0) {
          label = vocab.find(field.substr(6));
          if (label < 0) fail("unknown label '" + field.substr(6) + "'");
        } else if (field.rfind("zs=", 0) == 0) {
          zs = std::stoi(field.substr(3));
        } else if (field.rfind("zt=", 0) == 0) {
          zt = std::stoi(field.substr(3));
        }
      }
      if (label == kNoLabel || zs < 0 || zt < 0) {
        fail("truth line needs label=, zs=, zt=");
      }
      truth.labels.push_back(label);
      truth.zs.push_back(zs);
      truth.zt.push_back(zt);
    } else if (line.rfind("scene=", 0) == 0) {
      if (truths.empty()) fail("scene= before any image=");
      std::istringstream ss(line.substr(6));
      std::string item;
      ImageTruth& truth = truths.back();
      truth.scene.clear();
      while (std::getline(ss, item, ',')) {
        truth.scene.push_back(std::stod(item));
      }
    } else {
      fail("unrecognized line");
    }
  }
  return truths;
}

Grid<double> dirichlet_rows(size_t rows, size_t cols, double concentration,
                            Rng& rng) {
  if (!(concentration > 0.0)) {
    throw std::invalid_argument("concentration must be positive");
  }
  Grid<double> out(rows, cols);
  std::vector<double> alpha(cols, concentration);
  for (size_t r = 0; r < rows; ++r) rng.dirichlet(alpha, out.row(r));
  return out;
}

Grid<double> peaked_rows(size_t rows, size_t cols, double peak_mass) {
  if (cols == 0) throw std::invalid_argument("need at least one column");
  if (!(peak_mass >= 1.0 / static_cast<double>(cols)) || peak_mass > 1.0) {
    throw std::invalid_argument("peak mass must lie in [1/cols, 1]");
  }
  Grid<double> out(rows, cols);
  const double rest =
      cols > 1 ? (1.0 - peak_mass) / static_cast<double>(cols - 1) : 0.0;
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) out(r, c) = rest;
    out(r, r % cols) = cols > 1 ? peak_mass : 1.0;
  }
  return out;
}

}  // namespace vsim
