#include "vsim/joint.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

namespace vsim {

namespace {

// Subtopic marginal of one inferred document: sum_s theta_s[s] * theta_t[s,t].
std::vector<double> scene_of(const SemanticDocState& st) {
  const size_t S = st.theta_t.rows(), T = st.theta_t.cols();
  std::vector<double> scene(T, 0.0);
  for (size_t s = 0; s < S; ++s) {
    for (size_t t = 0; t < T; ++t) scene[t] += st.theta_s[s] * st.theta_t(s, t);
  }
  return scene;
}

// Topic estimate and label likelihood for one region, written into the
// state's rows.
void visual_pass(DaState& state, size_t r, const NnldaModel& nn,
                 const DaConfig& cfg, Rng& rng) {
  RegionTopicEstimate est =
      infer_region_topics(state.bags[r], nn, cfg.nnlda_infer_iters, rng);
  std::vector<double> scores = label_likelihood(est, nn, &state.notes);
  std::copy(est.theta_r.begin(), est.theta_r.end(), state.theta_r.row(r).begin());
  std::copy(scores.begin(), scores.end(), state.visual.row(r).begin());
}

}  // namespace

void DaConfig::validate() const {
  if (da_iters < 1 || n_samples < 1 || pam_infer_iters < 1 ||
      nnlda_infer_iters < 1) {
    throw IngestError("iteration and sample counts must be at least 1");
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw IngestError("retrieval threshold must lie in [0, 1]");
  }
  if (!(log_pool_weight >= 0.0 && log_pool_weight <= 1.0)) {
    throw IngestError("log pool weight must lie in [0, 1]");
  }
  if (!(early_stop_tv >= 0.0)) {
    throw IngestError("early-stop margin must be nonnegative");
  }
}

DaState initialize_posteriors(const ImageDoc& image, const NnldaModel& nn,
                              const DaConfig& cfg, Rng& rng) {
  cfg.validate();
  const size_t R = image.regions.size();
  if (R == 0) {
    throw IngestError("image " + image.image_id + " has no regions");
  }
  const size_t L = nn.vocab.size();

  DaState state;
  state.posterior = Grid<double>(R, L);
  state.visual = Grid<double>(R, L);
  state.theta_r = Grid<double>(R, nn.hyper.A);
  for (const RegionRecord& region : image.regions) {
    if (!region.bag || region.bag->entries.empty()) {
      throw IngestError("region " + image.image_id + "/" + region.region_id +
                        " has an empty bag; build bags first");
    }
    state.region_ids.push_back(region.region_id);
    state.bags.push_back(*region.bag);
  }
  for (size_t r = 0; r < R; ++r) {
    visual_pass(state, r, nn, cfg, rng);
    std::copy(state.visual.row(r).begin(), state.visual.row(r).end(),
              state.posterior.row(r).begin());
  }
  return state;
}

ImputedSamples imputation_step(DaState& state, const PamModel& pam,
                               const NnldaModel& nn, const DaConfig& cfg,
                               Rng& rng) {
  cfg.validate();
  const size_t R = state.posterior.rows();
  const size_t L = state.posterior.cols();
  if (L != pam.vocab.size()) {
    throw ModelMismatchError(
        "posterior width and semantic vocabulary disagree");
  }
  const size_t S = pam.hyper.S, T = pam.hyper.T;

  if (cfg.refresh_visual) {
    for (size_t r = 0; r < R; ++r) visual_pass(state, r, nn, cfg, rng);
  }

  ImputedSamples imp;
  imp.labels = Grid<int32_t>(cfg.n_samples, R);
  imp.zs = Grid<int32_t>(cfg.n_samples, R);
  imp.zt = Grid<int32_t>(cfg.n_samples, R);
  imp.theta_s.assign(S, 0.0);
  imp.theta_t = Grid<double>(S, T);
  imp.scene.assign(T, 0.0);

  const uint64_t root = rng.next_u64();
  std::vector<int> tokens(R);
  for (size_t rep = 0; rep < cfg.n_samples; ++rep) {
    Rng rep_rng = Rng::substream(root, {kStreamReplicate, rep});
    for (size_t r = 0; r < R; ++r) {
      tokens[r] = static_cast<int>(rep_rng.categorical(state.posterior.row(r)));
      imp.labels(rep, r) = tokens[r];
    }
    PamDocInference doc =
        infer_pam_doc(pam, tokens, cfg.pam_infer_iters, rep_rng);
    for (size_t r = 0; r < R; ++r) {
      imp.zs(rep, r) = doc.zs[r];
      imp.zt(rep, r) = doc.zt[r];
    }
    const std::vector<double> scene = scene_of(doc.state);
    const double w = 1.0 / static_cast<double>(cfg.n_samples);
    for (size_t s = 0; s < S; ++s) {
      imp.theta_s[s] += w * doc.state.theta_s[s];
      for (size_t t = 0; t < T; ++t) {
        imp.theta_t(s, t) += w * doc.state.theta_t(s, t);
      }
    }
    for (size_t t = 0; t < T; ++t) imp.scene[t] += w * scene[t];
  }
  return imp;
}

void posterior_sampling_step(DaState& state, const ImputedSamples& imputed,
                             const PamModel& pam, const DaConfig& cfg) {
  cfg.validate();
  const size_t R = state.posterior.rows();
  const size_t L = state.posterior.cols();
  if (pam.phi.cols() != L) {
    throw ModelMismatchError("label table width and posterior disagree");
  }
  if (imputed.zt.cols() != R || imputed.zt.rows() == 0) {
    throw ModelMismatchError("imputed samples do not cover the regions");
  }
  const size_t reps = imputed.zt.rows();

  std::vector<double> q(L);
  for (size_t r = 0; r < R; ++r) {
    std::fill(q.begin(), q.end(), 0.0);
    for (size_t rep = 0; rep < reps; ++rep) {
      const auto t = static_cast<size_t>(imputed.zt(rep, r));
      for (size_t l = 0; l < L; ++l) q[l] += pam.phi(t, l);
    }
    for (size_t l = 0; l < L; ++l) q[l] /= static_cast<double>(reps);

    double* post = state.posterior.row(r).data();
    const double* base =
        cfg.refresh_visual ? state.visual.row(r).data() : post;
    switch (cfg.modulation) {
      case Modulation::replace:
        std::copy(q.begin(), q.end(), post);
        break;
      case Modulation::product:
        for (size_t l = 0; l < L; ++l) post[l] = q[l] * base[l];
        break;
      case Modulation::log_pool: {
        const double w = cfg.log_pool_weight;
        for (size_t l = 0; l < L; ++l) {
          post[l] = std::pow(q[l], w) * std::pow(base[l], 1.0 - w);
        }
        break;
      }
    }
    double sum = std::accumulate(post, post + L, 0.0);
    if (!(sum > 0.0) || !std::isfinite(sum)) {
      // The update annihilated the row; keep the imputed distribution.
      sum = std::accumulate(q.begin(), q.end(), 0.0);
      if (!(sum > 0.0) || !std::isfinite(sum)) {
        throw NumericalError("imputed label distribution vanished for region " +
                             state.region_ids[r]);
      }
      std::copy(q.begin(), q.end(), post);
      state.notes.push_back("posterior update vanished for region " +
                            state.region_ids[r] +
                            "; fell back to the imputed distribution");
    }
    for (size_t l = 0; l < L; ++l) post[l] /= sum;
  }
  state.iteration += 1;
}

DaState run_da(const ImageDoc& image, const PamModel& pam,
               const NnldaModel& nn, const DaConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!(pam.vocab == nn.vocab)) {
    throw ModelMismatchError(
        "semantic and visual models use different vocabularies");
  }
  DaState state = initialize_posteriors(image, nn, cfg, rng);
  Grid<double> prev;
  for (size_t iter = 1; iter <= cfg.da_iters; ++iter) {
    ImputedSamples imp = imputation_step(state, pam, nn, cfg, rng);
    if (iter == 1) state.init_scene = imp.scene;
    prev = state.posterior;
    posterior_sampling_step(state, imp, pam, cfg);
    state.scene = imp.scene;
    state.imputed = std::move(imp);
    if (cfg.early_stop_tv > 0.0) {
      double max_tv = 0.0;
      for (size_t r = 0; r < prev.rows(); ++r) {
        double tv = 0.0;
        for (size_t l = 0; l < prev.cols(); ++l) {
          tv += std::abs(state.posterior(r, l) - prev(r, l));
        }
        max_tv = std::max(max_tv, tv / 2.0);
      }
      if (max_tv < cfg.early_stop_tv) break;
    }
  }
  return state;
}

std::vector<LabelDecision> threshold_labels(const DaState& state,
                                            double threshold) {
  const size_t R = state.posterior.rows();
  const size_t L = state.posterior.cols();
  std::vector<LabelDecision> out;
  out.reserve(R);
  for (size_t r = 0; r < R; ++r) {
    LabelDecision d;
    d.region_id = state.region_ids[r];
    d.posterior.assign(state.posterior.row(r).begin(),
                       state.posterior.row(r).end());
    std::vector<int> order(L);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return d.posterior[static_cast<size_t>(a)] >
             d.posterior[static_cast<size_t>(b)];
    });
    d.map_label = order.front();
    for (int l : order) {
      if (d.posterior[static_cast<size_t>(l)] >= threshold) {
        d.retained.push_back(l);
      }
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace vsim
