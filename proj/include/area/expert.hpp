#pragma once

// Task experts: linear score maps S (d -> K) and residual maps R (d -> d) per
// modality, the stabilized aggregation objective with hand-derived
// gradients, SGD training, and a Gaussian information-bottleneck diagnostic.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "area/digest.hpp"
#include "area/encoder.hpp"
#include "area/errors.hpp"
#include "area/hypersphere.hpp"
#include "area/linalg.hpp"
#include "area/pga.hpp"

namespace area {

struct TaskExpert {
  std::uint32_t task_id = 0;
  Mat s_vis;  // K x d
  Mat r_vis;  // d x d
  Mat s_txt;  // K x d
  Mat r_txt;  // d x d

  // S = 0, R = I: the expert leaves the frozen embedding geometry untouched.
  static TaskExpert identity(std::uint32_t task_id, std::size_t d, std::size_t k) {
    return {task_id, Mat(k, d), Mat::identity(d), Mat(k, d), Mat::identity(d)};
  }

  std::size_t dim() const noexcept { return r_vis.rows(); }
  std::size_t rank() const noexcept { return s_vis.rows(); }

  std::uint64_t digest() const {
    Fnv1a64 h;
    h.u32(task_id);
    h.mat(s_vis);
    h.mat(r_vis);
    h.mat(s_txt);
    h.mat(r_txt);
    return h.value();
  }

  bool operator==(const TaskExpert&) const = default;
};

// Gradient with the same block layout as TaskExpert.
struct ExpertGrad {
  Mat s_vis, r_vis, s_txt, r_txt;

  static ExpertGrad zeros(std::size_t d, std::size_t k) { return {Mat(k, d), Mat(d, d), Mat(k, d), Mat(d, d)}; }

  ExpertGrad& add_scaled(double s, const ExpertGrad& o) {
    auto acc = [s](Mat& a, const Mat& b) {
      for (std::size_t i = 0; i < a.values().size(); ++i) a.values()[i] += s * b.values()[i];
    };
    acc(s_vis, o.s_vis);
    acc(r_vis, o.r_vis);
    acc(s_txt, o.s_txt);
    acc(r_txt, o.r_txt);
    return *this;
  }
};

struct LossWeights {
  double lambda_int = 0.8;
  double lambda_comp = 1.0;
  double tau_cont = 0.07;

  // The lighter weighting quoted with the training recipe (mask 0.1,
  // consistency 0.3), kept as an alternative preset.
  static LossWeights light() { return {0.1, 0.3, 0.07}; }

  void validate() const {
    if (!(lambda_int >= 0.0 && lambda_comp >= 0.0)) throw ConfigError("loss weights must be >= 0");
    if (!(tau_cont > 0.0)) throw ConfigError("tau_cont must be > 0");
  }
};

enum class LrSchedule : std::uint8_t { Cosine = 0, Step = 1 };

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr_init = 0.05;
  LrSchedule schedule = LrSchedule::Cosine;

  void validate() const {
    if (epochs == 0 || batch_size == 0) throw ConfigError("epochs and batch_size must be positive");
    if (!(lr_init >= 0.0) || !std::isfinite(lr_init)) throw ConfigError("lr_init must be finite and >= 0");
  }

  // Learning rate of step `t` out of `total` steps.
  double lr_at(std::size_t t, std::size_t total, std::size_t epoch) const {
    if (schedule == LrSchedule::Cosine) {
      if (total <= 1) return lr_init;
      return lr_init * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(total)));
    }
    double lr = lr_init;
    if (2 * epoch >= epochs) lr *= 0.1;
    if (4 * epoch >= 3 * epochs) lr *= 0.1;
    return lr;
  }
};

namespace detail {

inline void check_expert_dims(const TaskExpert& e, const ClassAnchor& a) {
  if (a.dim() != e.dim() || a.rank() != e.rank()) {
    throw DimensionError("expert (d=" + std::to_string(e.dim()) + ", K=" + std::to_string(e.rank()) +
                         ") does not match anchor (d=" + std::to_string(a.dim()) + ", K=" +
                         std::to_string(a.rank()) + ")");
  }
}

// Mean computed as x0 + avg(x_m - x0) so that identical inputs give a mean
// bit-equal to each of them.
inline Vec stable_mean(std::span<const Vec> xs) {
  Vec m(xs.front().size());
  for (const auto& x : xs) m += x - xs.front();
  m *= 1.0 / static_cast<double>(xs.size());
  return xs.front() + m;
}

}  // namespace detail

// V_vis (S_vis z) + R_vis z. Not renormalized.
inline Vec visual_embedding(const TaskExpert& e, const ClassAnchor& a, const UnitVector& z) {
  detail::check_expert_dims(e, a);
  Vec out = e.r_vis * z.vec();
  out += a.basis_vis * (e.s_vis * z.vec());
  return out;
}

inline Vec textual_embedding(const TaskExpert& e, const ClassAnchor& a, const UnitVector& z) {
  detail::check_expert_dims(e, a);
  Vec out = e.r_txt * z.vec();
  out += a.basis_txt * (e.s_txt * z.vec());
  return out;
}

// s(x) = S_vis z_vis + S_txt z_txt
inline Vec evidence_score(const TaskExpert& e, const UnitVector& z_vis, const UnitVector& z_txt) {
  return e.s_vis * z_vis.vec() + e.s_txt * z_txt.vec();
}

// || max(0, s_occluded - s_clean) ||_1
inline double loss_intervention(const Vec& s_clean, const Vec& s_occluded) {
  if (s_clean.size() != s_occluded.size()) throw DimensionError("loss_intervention: length mismatch");
  double l = 0.0;
  for (std::size_t k = 0; k < s_clean.size(); ++k) l += std::max(0.0, s_occluded[k] - s_clean[k]);
  return l;
}

// sum_m ||s_m^vis - mean^vis||_1 + ||s_m^txt - mean^txt||_1
inline double loss_compression(std::span<const Vec> views_vis, std::span<const Vec> views_txt) {
  if (views_vis.empty() || views_vis.size() != views_txt.size()) {
    throw DimensionError("loss_compression: need the same positive number of views per modality");
  }
  double l = 0.0;
  for (auto views : {views_vis, views_txt}) {
    const Vec centroid = detail::stable_mean(views);
    for (const auto& s : views)
      for (std::size_t k = 0; k < s.size(); ++k) l += std::abs(s[k] - centroid[k]);
  }
  return l;
}

inline double cosine(const Vec& a, const Vec& b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DegeneracyError("cosine: zero vector");
  return dot(a, b) / (na * nb);
}

namespace detail {

// Cross-entropy of softmax(logits) against `target`; fills p with the softmax.
inline double softmax_xent(const std::vector<double>& logits, std::size_t target, std::vector<double>& p) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : logits) mx = std::max(mx, x);
  double z = 0.0;
  p.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(logits[c] - mx);
    z += p[c];
  }
  for (double& x : p) x /= z;
  return -(logits[target] - mx - std::log(z));
}

}  // namespace detail

// Mean over samples of the cross-entropy of softmax_c(cos(E_v[i][c], E_t[c]) / tau)
// against labels[i]. E_v is indexed per candidate because the visual
// embedding of a candidate uses that candidate's anchored basis.
inline double loss_contrastive(const std::vector<std::vector<Vec>>& ev, std::span<const Vec> et,
                               std::span<const std::size_t> labels, double tau) {
  if (et.size() < 2) throw DegeneracyError("loss_contrastive: need at least 2 candidate classes");
  if (ev.size() != labels.size() || ev.empty()) throw DimensionError("loss_contrastive: batch size mismatch");
  if (!(tau > 0.0)) throw DomainError("loss_contrastive: tau must be positive");
  double total = 0.0;
  std::vector<double> logits(et.size()), p;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    if (ev[i].size() != et.size()) throw DimensionError("loss_contrastive: candidate count mismatch");
    if (labels[i] >= et.size()) throw DomainError("loss_contrastive: label outside candidate set");
    for (std::size_t c = 0; c < et.size(); ++c) logits[c] = cosine(ev[i][c], et[c]) / tau;
    total += detail::softmax_xent(logits, labels[i], p);
  }
  return total / static_cast<double>(ev.size());
}

// Single embedding per sample, shared by every candidate.
inline double loss_contrastive(std::span<const Vec> ev, std::span<const Vec> et, std::span<const std::size_t> labels,
                               double tau) {
  std::vector<std::vector<Vec>> rep;
  rep.reserve(ev.size());
  for (const auto& v : ev) rep.emplace_back(et.size(), v);
  return loss_contrastive(rep, et, labels, tau);
}

inline double loss_total(const LossWeights& w, double l_int, double l_comp, double l_cont) {
  return w.lambda_int * l_int + w.lambda_comp * l_comp + l_cont;
}

// One training example with its perturbations, already encoded.
struct EncodedSample {
  std::size_t target = 0;  // index into the candidate list
  UnitVector z_vis, z_txt;
  UnitVector occ_vis, occ_txt;
  std::vector<UnitVector> view_vis, view_txt;
};

// A candidate class of the current task: its frozen anchor and the fused
// textual target direction used by the contrastive head.
struct Candidate {
  const ClassAnchor* anchor = nullptr;
  UnitVector text;
};

struct ObjectiveTerms {
  double l_int = 0.0;
  double l_comp = 0.0;
  double l_cont = 0.0;
  double total = 0.0;
};

struct ObjectiveGradients {
  ObjectiveTerms value;
  ExpertGrad g_int, g_comp, g_cont, g_total;
};

// Batch-mean values of the three terms and their gradients. Subgradients of
// |.| and max(0, .) are taken as 0 at the kink.
inline ObjectiveGradients loss_gradients(const TaskExpert& e, std::span<const EncodedSample> batch,
                                         std::span<const Candidate> cands, const LossWeights& w) {
  if (batch.empty()) throw DomainError("loss_gradients: empty batch");
  if (cands.size() < 2) throw DegeneracyError("loss_gradients: need at least 2 candidate classes");
  const std::size_t d = e.dim();
  const std::size_t k = e.rank();
  for (const auto& c : cands) detail::check_expert_dims(e, *c.anchor);
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  ObjectiveGradients out{{}, ExpertGrad::zeros(d, k), ExpertGrad::zeros(d, k), ExpertGrad::zeros(d, k),
                         ExpertGrad::zeros(d, k)};

  // Candidate text embeddings are shared across the batch.
  const std::size_t nc = cands.size();
  std::vector<Vec> st(nc), bt(nc), dbt(nc, Vec(d));
  for (std::size_t c = 0; c < nc; ++c) {
    st[c] = e.s_txt * cands[c].text.vec();
    bt[c] = e.r_txt * cands[c].text.vec() + cands[c].anchor->basis_txt * st[c];
  }

  std::vector<double> logits(nc), p;
  std::vector<Vec> a(nc);
  for (const auto& smp : batch) {
    const Vec& z = smp.z_vis.vec();
    const Vec sz = e.s_vis * z;
    const Vec rz = e.r_vis * z;
    for (std::size_t c = 0; c < nc; ++c) {
      a[c] = rz + cands[c].anchor->basis_vis * sz;
      logits[c] = cosine(a[c], bt[c]) / w.tau_cont;
    }
    out.value.l_cont += inv_n * detail::softmax_xent(logits, smp.target, p);
    for (std::size_t c = 0; c < nc; ++c) {
      const double dl = inv_n * (p[c] - (c == smp.target ? 1.0 : 0.0)) / w.tau_cont;
      if (dl == 0.0) continue;
      const double na = norm(a[c]);
      const double nb = norm(bt[c]);
      const double cs = dot(a[c], bt[c]) / (na * nb);
      // d cos / d a and d cos / d b
      Vec ga = (1.0 / (na * nb)) * bt[c];
      axpy(-cs / (na * na), a[c], ga);
      Vec gb = (1.0 / (na * nb)) * a[c];
      axpy(-cs / (nb * nb), bt[c], gb);
      ga *= dl;
      axpy(dl, gb, dbt[c]);
      out.g_cont.r_vis.add_outer(1.0, ga, z);
      out.g_cont.s_vis.add_outer(1.0, transpose_times(cands[c].anchor->basis_vis, ga), z);
    }

    // Interventional monotonicity.
    const Vec s_clean = e.s_vis * z + e.s_txt * smp.z_txt.vec();
    const Vec s_occ = e.s_vis * smp.occ_vis.vec() + e.s_txt * smp.occ_txt.vec();
    const Vec dz_vis = smp.occ_vis.vec() - z;
    const Vec dz_txt = smp.occ_txt.vec() - smp.z_txt.vec();
    for (std::size_t r = 0; r < k; ++r) {
      const double delta = s_occ[r] - s_clean[r];
      if (delta <= 0.0) continue;
      out.value.l_int += inv_n * delta;
      auto gv = out.g_int.s_vis.row(r);
      auto gt = out.g_int.s_txt.row(r);
      for (std::size_t j = 0; j < d; ++j) {
        gv[j] += inv_n * dz_vis[j];
        gt[j] += inv_n * dz_txt[j];
      }
    }

    // View compression.
    if (smp.view_vis.size() != smp.view_txt.size() || smp.view_vis.empty()) {
      throw DimensionError("loss_gradients: inconsistent view counts");
    }
    auto compress = [&](const std::vector<UnitVector>& views, const Mat& s, Mat& g) {
      std::vector<Vec> zs;
      zs.reserve(views.size());
      for (const auto& v : views) zs.push_back(v.vec());
      const Vec zbar = detail::stable_mean(zs);
      std::vector<Vec> scores;
      scores.reserve(views.size());
      for (const auto& v : zs) scores.push_back(s * v);
      const Vec sbar = detail::stable_mean(scores);
      for (std::size_t m = 0; m < zs.size(); ++m) {
        const Vec dz = zs[m] - zbar;
        for (std::size_t r = 0; r < k; ++r) {
          const double dev = scores[m][r] - sbar[r];
          out.value.l_comp += inv_n * std::abs(dev);
          if (dev == 0.0) continue;
          const double sg = dev > 0.0 ? inv_n : -inv_n;
          auto gr = g.row(r);
          for (std::size_t j = 0; j < d; ++j) gr[j] += sg * dz[j];
        }
      }
    };
    compress(smp.view_vis, e.s_vis, out.g_comp.s_vis);
    compress(smp.view_txt, e.s_txt, out.g_comp.s_txt);
  }

  for (std::size_t c = 0; c < nc; ++c) {
    const Vec& t = cands[c].text.vec();
    out.g_cont.r_txt.add_outer(1.0, dbt[c], t);
    out.g_cont.s_txt.add_outer(1.0, transpose_times(cands[c].anchor->basis_txt, dbt[c]), t);
  }

  out.value.total = loss_total(w, out.value.l_int, out.value.l_comp, out.value.l_cont);
  out.g_total = ExpertGrad::zeros(d, k);
  out.g_total.add_scaled(w.lambda_int, out.g_int).add_scaled(w.lambda_comp, out.g_comp).add_scaled(1.0, out.g_cont);
  return out;
}

// Objective value only; same definitions as loss_gradients, used by
// finite-difference checks.
inline ObjectiveTerms batch_objective(const TaskExpert& e, std::span<const EncodedSample> batch,
                                      std::span<const Candidate> cands, const LossWeights& w) {
  ObjectiveTerms v;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<Vec> et;
  for (const auto& c : cands) et.push_back(textual_embedding(e, *c.anchor, c.text));
  std::vector<std::vector<Vec>> ev;
  std::vector<std::size_t> labels;
  for (const auto& smp : batch) {
    std::vector<Vec> row;
    for (const auto& c : cands) row.push_back(visual_embedding(e, *c.anchor, smp.z_vis));
    ev.push_back(std::move(row));
    labels.push_back(smp.target);
    v.l_int += inv_n * loss_intervention(evidence_score(e, smp.z_vis, smp.z_txt),
                                         evidence_score(e, smp.occ_vis, smp.occ_txt));
    std::vector<Vec> sv, stx;
    for (const auto& x : smp.view_vis) sv.push_back(e.s_vis * x.vec());
    for (const auto& x : smp.view_txt) stx.push_back(e.s_txt * x.vec());
    v.l_comp += inv_n * loss_compression(sv, stx);
  }
  v.l_cont = loss_contrastive(ev, et, labels, w.tau_cont);
  v.total = loss_total(w, v.l_int, v.l_comp, v.l_cont);
  return v;
}

inline void sgd_step(TaskExpert& e, const ExpertGrad& g, double lr) {
  auto step = [lr](Mat& p, const Mat& gp) {
    for (std::size_t i = 0; i < p.values().size(); ++i) p.values()[i] -= lr * gp.values()[i];
  };
  step(e.s_vis, g.s_vis);
  step(e.r_vis, g.r_vis);
  step(e.s_txt, g.s_txt);
  step(e.r_txt, g.r_txt);
}

// Everything the trainer needs to turn a raw sample into an EncodedSample.
struct TrainingContext {
  const FrozenEncoder* visual = nullptr;
  const FrozenEncoder* textual = nullptr;
  PerturbationSpec perturb;
};

// Encode one raw sample together with a fresh occlusion and fresh views.
inline EncodedSample encode_training_sample(const TrainingContext& ctx, const RawSample& x, const Vec& prompt,
                                            std::size_t target, SeededRng& rng) {
  EncodedSample s;
  s.target = target;
  s.z_vis = encode_visual(*ctx.visual, x);
  s.z_txt = encode_textual_fused(*ctx.textual, prompt, x.caption);
  const RawSample occ = occlude(x, ctx.perturb, rng);
  s.occ_vis = encode_visual(*ctx.visual, occ);
  s.occ_txt = encode_textual_fused(*ctx.textual, prompt, occ.caption);
  for (const auto& v : augment_views(x, ctx.perturb, rng)) {
    s.view_vis.push_back(encode_visual(*ctx.visual, v));
    s.view_txt.push_back(encode_textual_fused(*ctx.textual, prompt, v.caption));
  }
  return s;
}

struct EpochTrace {
  ObjectiveTerms mean;  // sample-weighted mean of batch losses, evaluated before each step
};

struct TrainedExpert {
  TaskExpert expert;
  std::vector<EpochTrace> trace;
};

// One labelled training example: raw sample, its class prompt, and the index
// of its class in the candidate list.
struct TrainingItem {
  const RawSample* sample = nullptr;
  const Vec* prompt = nullptr;
  std::size_t target = 0;
};

inline TrainedExpert train_task_expert(std::uint32_t task_id, std::span<const TrainingItem> items,
                                       std::span<const Candidate> cands, const TrainingContext& ctx,
                                       const LossWeights& w, const TrainConfig& cfg, SeededRng& rng) {
  w.validate();
  cfg.validate();
  ctx.perturb.validate();
  if (items.empty()) throw InsufficientDataError("train_task_expert: no training data");
  if (cands.empty()) throw DegeneracyError("train_task_expert: no candidate classes");
  const std::size_t d = cands.front().anchor->dim();
  const std::size_t k = cands.front().anchor->rank();

  TrainedExpert out{TaskExpert::identity(task_id, d, k), {}};
  const std::size_t batches = (items.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches * cfg.epochs;
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::size_t step = 0;
  std::vector<EncodedSample> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    EpochTrace tr;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(items.size(), lo + cfg.batch_size);
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& it = items[order[i]];
        batch.push_back(encode_training_sample(ctx, *it.sample, *it.prompt, it.target, rng));
      }
      const auto g = loss_gradients(out.expert, batch, cands, w);
      if (!std::isfinite(g.value.total)) {
        throw TrainingError("training diverged at step " + std::to_string(step), step);
      }
      const double frac = static_cast<double>(hi - lo) / static_cast<double>(items.size());
      tr.mean.l_int += frac * g.value.l_int;
      tr.mean.l_comp += frac * g.value.l_comp;
      tr.mean.l_cont += frac * g.value.l_cont;
      tr.mean.total += frac * g.value.total;
      sgd_step(out.expert, g.g_total, cfg.lr_at(step, total_steps, epoch));
      ++step;
    }
    out.trace.push_back(tr);
  }
  if (!all_finite(out.expert.s_vis) || !all_finite(out.expert.r_vis) || !all_finite(out.expert.s_txt) ||
      !all_finite(out.expert.r_txt)) {
    throw TrainingError("training produced non-finite parameters", step);
  }
  return out;
}

struct VibEstimate {
  double i_zy = 0.0;  // 0.5 (logdet Sigma_total - logdet Sigma_within)
  double i_zx = 0.0;  // Gaussian differential entropy of the scores
  bool ridged = false;
};

inline constexpr double kVibRidge = 1e-6;

// Gaussian proxies for the two information terms of the bottleneck. A
// diagnostic only; nothing is trained on it.
inline VibEstimate vib_estimate(std::span<const Vec> scores, std::span<const std::uint32_t> labels) {
  if (scores.size() != labels.size()) throw DimensionError("vib_estimate: scores/labels mismatch");
  std::map<std::uint32_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  if (groups.size() < 2) throw InsufficientDataError("vib_estimate: need at least 2 labels");
  for (const auto& [_, idx] : groups)
    if (idx.size() < 2) throw InsufficientDataError("vib_estimate: need at least 2 samples per label");

  const std::size_t k = scores.front().size();
  const double inv_n = 1.0 / static_cast<double>(scores.size());
  Vec mean(k);
  for (const auto& s : scores) axpy(inv_n, s, mean);
  Mat total(k, k), within(k, k);
  for (const auto& s : scores) {
    const Vec r = s - mean;
    total.add_outer(inv_n, r, r);
  }
  for (const auto& [_, idx] : groups) {
    Vec m(k);
    for (auto i : idx) axpy(1.0 / static_cast<double>(idx.size()), scores[i], m);
    for (auto i : idx) {
      const Vec r = scores[i] - m;
      within.add_outer(inv_n, r, r);
    }
  }
  const SymEig et = sym_eig(total);
  const SymEig ew = sym_eig(within);
  VibEstimate out;
  out.ridged = et.values[k - 1] <= 1e-12 || ew.values[k - 1] <= 1e-12;
  const double ridge = out.ridged ? kVibRidge : 0.0;
  double logdet_t = 0.0, logdet_w = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    logdet_t += std::log(std::max(0.0, et.values[i]) + ridge);
    logdet_w += std::log(std::max(0.0, ew.values[i]) + ridge);
  }
  out.i_zy = 0.5 * (logdet_t - logdet_w);
  out.i_zx = 0.5 * (static_cast<double>(k) * std::log(2.0 * M_PI * M_E) + logdet_t);
  return out;
}

}  // namespace area
