#pragma once

// The class-incremental driver: per stage, encode the task's training data,
// build and freeze anchors, train the task expert, release the data and
// evaluate over every class seen so far. Also inference, zero-shot
// prediction, metrics and the ablation variants.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "area/config.hpp"
#include "area/digest.hpp"
#include "area/encoder.hpp"
#include "area/errors.hpp"
#include "area/expert.hpp"
#include "area/pga.hpp"
#include "area/routing.hpp"
#include "area/stream.hpp"

namespace area {

using PromptTable = std::map<std::uint32_t, Vec>;

struct ContinualState {
  Config config;
  FrozenEncoder visual;
  FrozenEncoder textual;
  AnchorStore anchors;
  std::map<std::uint32_t, TaskExpert> experts;
  PromptTable prompts;                   // class id -> raw prompt
  std::vector<std::uint32_t> task_order;  // tasks in the order they were learned

  bool operator==(const ContinualState&) const = default;

  std::size_t num_stages() const noexcept { return task_order.size(); }

  std::uint64_t digest() const {
    Fnv1a64 h;
    h.text(config.canonical());
    h.u64(visual.digest());
    h.u64(textual.digest());
    h.u64(prompts.size());
    for (const auto& [c, p] : prompts) {
      h.u32(c);
      h.vec(p);
    }
    h.u64(task_order.size());
    for (auto t : task_order) {
      h.u32(t);
      h.u64(anchors.digest(t));
      h.u64(experts.at(t).digest());
    }
    for (const auto& [t, d] : anchors.recorded_digests()) {
      h.u32(t);
      h.u64(d);
    }
    return h.value();
  }
};

inline std::uint64_t encoder_seed(std::uint64_t run_seed) { return derive_seed(run_seed, 0xE2C0); }

inline ContinualState empty_state(const Config& cfg, PromptTable prompts) {
  cfg.validate();
  ContinualState s;
  s.config = cfg;
  const std::uint64_t es = encoder_seed(cfg.seed);
  s.visual = FrozenEncoder::create(Modality::Visual, cfg.d, cfg.d_in, es);
  s.textual = FrozenEncoder::create(Modality::Textual, cfg.d, cfg.d_in, es);
  s.prompts = std::move(prompts);
  for (const auto& [c, p] : s.prompts) {
    if (p.size() != cfg.d_in) throw DataError("prompt of class " + std::to_string(c) + " has " + std::to_string(p.size()) +
                                         " features, config d_in is " + std::to_string(cfg.d_in));
  }
  return s;
}

inline const Vec& prompt_of(const ContinualState& s, std::uint32_t c) {
  auto it = s.prompts.find(c);
  if (it == s.prompts.end()) throw DataError("no class prompt for class " + std::to_string(c));
  return it->second;
}

// Prompt-only textual direction of a class (no caption exists at test time).
inline UnitVector class_text(const ContinualState& s, std::uint32_t c) {
  return encode_textual_fused(s.textual, prompt_of(s, c), std::nullopt);
}

enum class RoutingMode : std::uint8_t { Transport = 0, Cosine = 1, Uniform = 2, Hard = 3 };

inline RoutingMode routing_mode(Variant v) {
  switch (v) {
    case Variant::Cosine: return RoutingMode::Cosine;
    case Variant::SimOnly: return RoutingMode::Uniform;
    case Variant::SingleTask: return RoutingMode::Hard;
    default: return RoutingMode::Transport;
  }
}

struct Inference {
  std::uint32_t label = 0;
  RoutingDistribution routing;
  ClassScores scores;
};

// Inference over the first `stages` learned tasks.
class Predictor {
 public:
  Predictor(const ContinualState& s, std::size_t stages, RoutingMode mode)
      : state_(s), mode_(mode), params_(s.config.ot_params()), model_(build(s, stages)) {}

  Predictor(const ContinualState& s, RoutingMode mode) : Predictor(s, s.num_stages(), mode) {}

  explicit Predictor(const ContinualState& s) : Predictor(s, routing_mode(s.config.variant_kind())) {}

  std::size_t stages() const noexcept { return measures_.size(); }

  RoutingDistribution route(const UnitVector& z) const {
    switch (mode_) {
      case RoutingMode::Cosine: return cosine_route(z, measures_, params_);
      case RoutingMode::Uniform: return uniform_route(measures_.size());
      case RoutingMode::Hard: return hard_route(routing_probs(z, measures_, params_));
      case RoutingMode::Transport: break;
    }
    return routing_probs(z, measures_, params_);
  }

  Inference infer(const RawSample& x) const {
    const UnitVector z = state_.visual.encode(x.features);
    Inference out;
    out.routing = route(z);
    out.scores = model_.predict(z, out.routing);
    out.label = out.scores.label;
    return out;
  }

 private:
  MixtureModel build(const ContinualState& s, std::size_t stages) {
    if (stages == 0 || stages > s.num_stages()) {
      throw InsufficientDataError("inference needs between 1 and " + std::to_string(s.num_stages()) +
                                  " learned tasks, asked for " + std::to_string(stages));
    }
    std::vector<const TaskExpert*> experts;
    std::vector<ScoringClass> classes;
    for (std::size_t b = 0; b < stages; ++b) {
      const std::uint32_t t = s.task_order[b];
      experts.push_back(&s.experts.at(t));
      std::vector<const ClassAnchor*> anchors;
      for (auto c : s.anchors.classes(t)) {
        anchors.push_back(&s.anchors.anchor(c));
        classes.push_back({c, &s.anchors.anchor(c), class_text(s, c)});
      }
      measures_.push_back(task_measure(anchors));
    }
    return MixtureModel(std::move(experts), std::move(classes));
  }

  const ContinualState& state_;
  RoutingMode mode_;
  OtParams params_;
  std::vector<DiscreteMeasure> measures_;
  MixtureModel model_;
};

inline Inference infer(const ContinualState& s, const RawSample& x) { return Predictor(s).infer(x); }

// Cosine between the visual embedding and each seen class's prompt
// direction; lowest class id wins ties.
inline std::uint32_t zero_shot_predict(const ContinualState& s, const RawSample& x,
                                       std::optional<std::size_t> stages = std::nullopt) {
  const std::size_t n = stages.value_or(s.num_stages());
  std::vector<std::uint32_t> classes;
  for (std::size_t b = 0; b < n; ++b)
    for (auto c : s.anchors.classes(s.task_order.at(b))) classes.push_back(c);
  if (classes.empty()) {
    // No task learned yet: fall back to every class with a prompt.
    for (const auto& [c, _] : s.prompts) classes.push_back(c);
  }
  if (classes.empty()) throw InsufficientDataError("zero_shot_predict: no candidate classes");
  std::sort(classes.begin(), classes.end());
  const UnitVector z = s.visual.encode(x.features);
  std::uint32_t best = classes.front();
  double best_sim = -2.0;
  for (auto c : classes) {
    const double sim = dot(z, class_text(s, c));
    if (sim > best_sim) {
      best_sim = sim;
      best = c;
    }
  }
  return best;
}

struct StageEval {
  double accuracy = 0.0;          // over every test sample of the seen classes
  double routing_accuracy = 0.0;  // argmax routing equals the sample's task
  std::vector<double> task_accuracy;  // per seen task, in learning order
  std::size_t samples = 0;

  bool operator==(const StageEval&) const = default;
};

inline StageEval evaluate_stage(const ContinualState& s, std::size_t stages, const TaskStream& test,
                                RoutingMode mode) {
  const Predictor pred(s, stages, mode);
  StageEval out;
  std::size_t correct = 0, routed = 0;
  for (std::size_t b = 0; b < stages; ++b) {
    const std::uint32_t t = s.task_order[b];
    auto it = std::find_if(test.tasks.begin(), test.tasks.end(), [&](const TaskData& d) { return d.task_id == t; });
    std::size_t task_correct = 0, task_n = 0;
    if (it != test.tasks.end()) {
      for (const auto& x : it->samples) {
        const Inference r = pred.infer(x);
        task_correct += r.label == x.label;
        routed += r.routing.argmax() == b;
        ++task_n;
      }
    }
    correct += task_correct;
    out.samples += task_n;
    out.task_accuracy.push_back(task_n ? static_cast<double>(task_correct) / static_cast<double>(task_n) : 0.0);
  }
  if (out.samples > 0) {
    out.accuracy = static_cast<double>(correct) / static_cast<double>(out.samples);
    out.routing_accuracy = static_cast<double>(routed) / static_cast<double>(out.samples);
  }
  return out;
}

struct StageRecord {
  std::uint32_t task_id = 0;
  StageEval eval;
  std::vector<EpochTrace> trace;
  std::optional<VibEstimate> vib;
  // Digests of every task learned so far, taken at the end of this stage.
  std::map<std::uint32_t, std::uint64_t> anchor_digests;
  std::map<std::uint32_t, std::uint64_t> expert_digests;
};

struct TrainingRun {
  ContinualState state;
  std::vector<StageRecord> stages;
};

namespace detail {

inline Vec mean_caption(const std::vector<const RawSample*>& xs) {
  Vec m;
  std::size_t n = 0;
  for (const RawSample* x : xs) {
    if (!x->caption) continue;
    if (m.empty()) m = Vec(x->caption->size());
    m += *x->caption;
    ++n;
  }
  if (n > 0) m *= 1.0 / static_cast<double>(n);
  return m;
}

}  // namespace detail

// Learn one stage from `data` and append it to the state. The caller owns
// the data handle; nothing here keeps a reference past the call.
inline StageRecord learn_stage(ContinualState& s, const TaskData& data) {
  const Config& cfg = s.config;
  const std::uint32_t t = data.task_id;
  if (s.experts.contains(t)) throw DomainError("task " + std::to_string(t) + " was already learned");
  if (data.classes.size() < 2) {
    throw DegeneracyError("task " + std::to_string(t) + " has " + std::to_string(data.classes.size()) +
                          " class(es); training needs at least 2");
  }

  std::map<std::uint32_t, std::vector<const RawSample*>> by_class;
  for (const auto& x : data.samples) by_class[x.label].push_back(&x);

  // Anchors.
  std::map<std::uint32_t, std::vector<UnitVector>> vis_points;
  std::map<std::uint32_t, std::vector<UnitVector>> txt_points;
  for (auto c : data.classes) {
    const Vec& prompt = prompt_of(s, c);
    for (const RawSample* x : by_class[c]) {
      vis_points[c].push_back(encode_visual(s.visual, *x));
      txt_points[c].push_back(encode_textual_fused(s.textual, prompt, x->caption));
    }
    ClassAnchor a = cfg.variant_kind() == Variant::Pca
                        ? build_class_anchor_pca(vis_points[c], txt_points[c], c, cfg.K)
                        : build_class_anchor(vis_points[c], txt_points[c], c, cfg.K, cfg.mean_kind());
    s.anchors.add(t, std::move(a));
  }
  const std::uint64_t frozen = s.anchors.freeze_task(t);

  // Expert.
  std::vector<Candidate> cands;
  std::map<std::uint32_t, std::size_t> index;
  for (auto c : data.classes) {
    index[c] = cands.size();
    const Vec cap = detail::mean_caption(by_class[c]);
    const UnitVector text = encode_textual_fused(s.textual, prompt_of(s, c),
                                                 cap.empty() ? std::nullopt : std::optional<Vec>(cap));
    cands.push_back({&s.anchors.anchor(c), text});
  }
  std::vector<TrainingItem> items;
  for (const auto& x : data.samples) items.push_back({&x, &prompt_of(s, x.label), index.at(x.label)});

  TrainingContext ctx{&s.visual, &s.textual, cfg.perturbation()};
  SeededRng rng(derive_seed(cfg.seed, 0x7000 + static_cast<std::uint64_t>(t)));
  TrainedExpert trained = train_task_expert(t, items, cands, ctx, cfg.loss_weights(), cfg.train_config(), rng);

  if (s.anchors.digest(t) != frozen) {
    throw ImmutabilityError("anchors of task " + std::to_string(t) + " changed during expert training");
  }

  StageRecord rec;
  rec.task_id = t;
  rec.trace = std::move(trained.trace);

  // Information-bottleneck diagnostic on the training scores.
  std::vector<Vec> scores;
  std::vector<std::uint32_t> labels;
  for (auto c : data.classes) {
    for (std::size_t i = 0; i < vis_points[c].size(); ++i) {
      scores.push_back(evidence_score(trained.expert, vis_points[c][i], txt_points[c][i]));
      labels.push_back(c);
    }
  }
  try {
    rec.vib = vib_estimate(scores, labels);
  } catch (const InsufficientDataError&) {
    rec.vib.reset();
  }

  s.experts.emplace(t, std::move(trained.expert));
  s.task_order.push_back(t);
  return rec;
}

inline TrainingRun run_training(StreamSource& train, PromptTable prompts, const TaskStream& test, const Config& cfg) {
  TrainingRun run{empty_state(cfg, std::move(prompts)), {}};
  const RoutingMode mode = routing_mode(cfg.variant_kind());
  for (std::size_t b = 0; b < train.num_tasks(); ++b) {
    StageRecord rec = learn_stage(run.state, train.task(b));
    train.release(b);
    rec.eval = evaluate_stage(run.state, b + 1, test, mode);
    for (auto t : run.state.task_order) {
      rec.anchor_digests[t] = run.state.anchors.digest(t);
      rec.expert_digests[t] = run.state.experts.at(t).digest();
    }
    run.stages.push_back(std::move(rec));
  }
  return run;
}

inline TrainingRun run_training(const TaskStream& train, PromptTable prompts, const TaskStream& test,
                                const Config& cfg) {
  train.validate();
  LockedStream source(train);
  return run_training(source, std::move(prompts), test, cfg);
}

struct MetricsReport {
  std::vector<double> stage_accuracy;  // A_b
  double average = 0.0;                // mean of A_b
  double last = 0.0;                   // A_B
  std::vector<double> forgetting;      // per task, in learning order
  std::vector<double> routing_accuracy;
  std::vector<std::vector<double>> task_accuracy;  // [stage][task]

  bool operator==(const MetricsReport&) const = default;
};

inline MetricsReport metrics_from_stages(std::span<const StageEval> stages) {
  MetricsReport r;
  if (stages.empty()) return r;
  double sum = 0.0;
  for (const auto& s : stages) {
    r.stage_accuracy.push_back(s.accuracy);
    r.routing_accuracy.push_back(s.routing_accuracy);
    r.task_accuracy.push_back(s.task_accuracy);
    sum += s.accuracy;
  }
  r.average = sum / static_cast<double>(stages.size());
  r.last = stages.back().accuracy;
  const auto& final_acc = stages.back().task_accuracy;
  for (std::size_t j = 0; j < final_acc.size(); ++j) {
    double f = 0.0;
    for (std::size_t b = j; b + 1 < stages.size(); ++b) f = std::max(f, stages[b].task_accuracy[j] - final_acc[j]);
    r.forgetting.push_back(f);
  }
  return r;
}

inline MetricsReport metrics_from_run(const TrainingRun& run) {
  std::vector<StageEval> evals;
  for (const auto& s : run.stages) evals.push_back(s.eval);
  return metrics_from_stages(evals);
}

// Re-evaluates every stage from the final state. Frozen anchors and experts
// make the stage-b prefix of the final state identical to the state after
// stage b.
inline MetricsReport evaluate_metrics(const ContinualState& s, const TaskStream& test, RoutingMode mode) {
  std::vector<StageEval> evals;
  for (std::size_t b = 1; b <= s.num_stages(); ++b) evals.push_back(evaluate_stage(s, b, test, mode));
  return metrics_from_stages(evals);
}

inline MetricsReport evaluate_metrics(const ContinualState& s, const TaskStream& test) {
  return evaluate_metrics(s, test, routing_mode(s.config.variant_kind()));
}

// Each variant runs the same pipeline and seed. Variants that only differ in
// routing share one training run.
inline std::map<Variant, MetricsReport> run_ablation(const TaskStream& train, const PromptTable& prompts,
                                                     const TaskStream& test, const Config& cfg,
                                                     const std::set<Variant>& variants) {
  std::map<Variant, MetricsReport> out;
  std::optional<TrainingRun> pga;
  for (Variant v : variants) {
    Config c = cfg;
    c.variant = to_string(v);
    if (v == Variant::Pca) {
      out[v] = metrics_from_run(run_training(train, prompts, test, c));
      continue;
    }
    if (!pga) {
      Config base = cfg;
      base.variant = to_string(Variant::Full);
      pga = run_training(train, prompts, test, base);
    }
    out[v] = evaluate_metrics(pga->state, test, routing_mode(v));
  }
  return out;
}

}  // namespace area
