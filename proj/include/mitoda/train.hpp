#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "mitoda/checkpoint.hpp"
#include "mitoda/dataio.hpp"
#include "mitoda/error.hpp"
#include "mitoda/morpho.hpp"
#include "mitoda/nets.hpp"
#include "mitoda/objectives.hpp"
#include "mitoda/optim.hpp"
#include "mitoda/preprocess.hpp"
#include "mitoda/random.hpp"
#include "mitoda/schedule.hpp"

namespace mitoda {

namespace fs = std::filesystem;

enum class LrPolicyKind : std::uint8_t { one_cycle, reduce_on_plateau };

struct LrPolicy {
  LrPolicyKind kind = LrPolicyKind::one_cycle;
  /// One-cycle peak.
  double max_lr = 5e-4;
  /// Reduce-on-plateau starting rate, patience (epochs) and factor.
  double initial_lr = 1e-3;
  std::size_t patience = 7;
  double factor = 0.5;

  static LrPolicy one_cycle(double max_lr) { return {.kind = LrPolicyKind::one_cycle, .max_lr = max_lr}; }
  static LrPolicy plateau(double lr, std::size_t patience, double factor = 0.5) {
    return {.kind = LrPolicyKind::reduce_on_plateau, .initial_lr = lr, .patience = patience, .factor = factor};
  }
};

/// What a phase optimises.
enum class PhaseObjective : std::uint8_t {
  segmentation,      // BCE on the segmentation head
  super_resolution,  // MSE between the head's output on a degraded patch and the clean patch
  combined,          // alpha * MSE(reconstruction) + (1 - alpha) * BCE(segmentation)
};

/// Which patches feed a phase.
enum class PhaseData : std::uint8_t { source, all };

inline std::string to_string(PhaseObjective o) {
  switch (o) {
    case PhaseObjective::segmentation: return "segmentation";
    case PhaseObjective::super_resolution: return "super_resolution";
    case PhaseObjective::combined: return "combined";
  }
  return "segmentation";
}

inline PhaseObjective parse_objective(const std::string& s) {
  for (auto o : {PhaseObjective::segmentation, PhaseObjective::super_resolution, PhaseObjective::combined})
    if (to_string(o) == s) return o;
  throw ConfigError("unknown phase objective '" + s + "'");
}

inline std::string to_string(PhaseData d) { return d == PhaseData::source ? "source" : "all"; }

inline PhaseData parse_phase_data(const std::string& s) {
  if (s == "source") return PhaseData::source;
  if (s == "all") return PhaseData::all;
  throw ConfigError("unknown phase data '" + s + "'");
}

struct PhaseConfig {
  std::string name;
  std::size_t epochs = 1;
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.0;
  LrPolicy lr_policy;
  PhaseObjective objective = PhaseObjective::segmentation;
  double alpha = 0.0;
  std::set<Group> freeze;
  PhaseData data = PhaseData::source;
  std::size_t batch_size = 1;
  /// Stop after this many epochs without a new best validation loss.
  std::optional<std::size_t> early_stop_patience;
  /// Match source intensities to the target mean histogram for this phase.
  bool histogram_match = false;
  /// Record target solidity/IoU and source-val IoU after every epoch.
  bool track_metrics = true;

  void validate() const {
    if (name.empty()) throw ConfigError("phase needs a name");
    if (name.find_first_of("/\\ ") != std::string::npos) throw ConfigError("phase name '" + name + "' is not a file token");
    if (epochs < 1) throw ConfigError("phase '" + name + "' needs at least one epoch");
    if (batch_size < 1) throw ConfigError("phase '" + name + "' needs batch_size >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("phase '" + name + "' alpha outside [0, 1]");
    if (lr_policy.kind == LrPolicyKind::reduce_on_plateau &&
        !(lr_policy.factor > 0.0 && lr_policy.factor < 1.0))
      throw ConfigError("phase '" + name + "' plateau factor outside (0, 1)");
  }
};

struct HistogramMatchSettings {
  bool correct_zeros = true;
  std::size_t window = 10;
};

struct TrainPlan {
  std::vector<PhaseConfig> phases;
  /// Patches drawn from each domain; rng_seed is overridden per run.
  PatchSampler patches;
  /// Write a checkpoint every N epochs (0 = only at phase ends). Needs an
  /// output directory.
  std::size_t checkpoint_every = 0;
  std::uint64_t rng_seed = 0;
  HistogramMatchSettings histogram_matching;
  DegradationConfig degradation;
  std::size_t min_object_px = kMinObjectPixels;

  void validate() const {
    std::set<std::string> names;
    for (const auto& p : phases) {
      p.validate();
      if (!names.insert(p.name).second) throw ConfigError("duplicate phase name '" + p.name + "'");
    }
    if (patches.count == 0) throw ConfigError("patch count must be positive");
  }
};

/// Baseline: supervised segmentation on source patches.
inline TrainPlan default_baseline_plan() {
  TrainPlan plan;
  PhaseConfig p;
  p.name = "supervised";
  p.epochs = 100;
  p.lr_policy = LrPolicy::one_cycle(2e-4);
  plan.phases.push_back(p);
  return plan;
}

/// Super-resolution pretraining on both domains, then segmentation fine-tuning
/// with the encoder frozen.
inline TrainPlan default_ssl_plan() {
  TrainPlan plan;
  PhaseConfig pre;
  pre.name = "pretrain";
  pre.epochs = 200;
  pre.lr_policy = LrPolicy::one_cycle(5e-4);
  pre.objective = PhaseObjective::super_resolution;
  pre.data = PhaseData::all;
  pre.histogram_match = true;
  pre.track_metrics = false;
  PhaseConfig fine;
  fine.name = "finetune";
  fine.epochs = 60;
  fine.lr_policy = LrPolicy::one_cycle(1e-4);
  fine.freeze = {Group::encoder};
  fine.histogram_match = true;
  plan.phases = {pre, fine};
  return plan;
}

/// Joint, reconstruction-only and segmentation-only phases.
inline TrainPlan default_ynet_plan() {
  TrainPlan plan;
  PhaseConfig p1;
  p1.name = "joint";
  p1.epochs = 50;
  p1.optimizer = OptimizerKind::sgd;
  p1.lr_policy = LrPolicy::plateau(1e-3, 7);
  p1.early_stop_patience = 14;
  p1.objective = PhaseObjective::combined;
  p1.alpha = 0.98;
  p1.data = PhaseData::all;
  p1.track_metrics = false;
  PhaseConfig p2;
  p2.name = "reconstruction";
  p2.epochs = 40;
  p2.lr_policy = LrPolicy::plateau(2e-4, 6);
  p2.early_stop_patience = 12;
  p2.objective = PhaseObjective::combined;
  p2.alpha = 1.0;
  p2.data = PhaseData::all;
  p2.histogram_match = true;
  p2.track_metrics = false;
  PhaseConfig p3;
  p3.name = "segmentation";
  p3.epochs = 100;
  p3.lr_policy = LrPolicy::one_cycle(2e-4);
  p3.objective = PhaseObjective::combined;
  p3.alpha = 0.0;
  p3.freeze = {Group::encoder};
  p3.histogram_match = true;
  plan.phases = {p1, p2, p3};
  return plan;
}

/// Unlabeled target imagery: `train` feeds the self-supervised phases and
/// `test` is predicted after every tracked epoch. Test labels are optional
/// and only used to report IoU alongside solidity.
struct TargetDomain {
  ImageStack train;
  ImageStack test;
  std::optional<LabelStack> test_labels;
};

struct TrainOptions {
  std::optional<fs::path> out_dir;
  std::function<void(const TraceEntry&)> on_epoch;
};

struct PhaseSummary {
  std::string name;
  std::size_t first_epoch = 0;
  std::size_t last_epoch = 0;
  bool early_stopped = false;
};

struct TrainResult {
  Network<float> net;
  SolidityTrace trace;
  std::vector<PhaseSummary> phases;
  std::vector<fs::path> checkpoints;
};

namespace detail {

struct Sample {
  Tensor<float> input;
  Tensor<float> image;
  std::optional<Tensor<float>> label;
  bool from_source = true;
};

struct SampleSet {
  std::vector<Sample> train, val;
};

inline Sample make_sample(const Patch& p, bool from_source) {
  Sample s{from_plane<float>(p.image), from_plane<float>(p.image), std::nullopt, from_source};
  if (p.label) s.label = from_mask<float>(*p.label);
  return s;
}

struct LossEval {
  double value = 0;
  std::optional<Tensor<float>> dseg, drec;
};

/// Loss of one sample and, with `grad`, its gradients w.r.t. the heads.
inline LossEval sample_loss(const PhaseConfig& phase, const Network<float>::Output& out, const Sample& s, bool grad) {
  LossEval e;
  switch (phase.objective) {
    case PhaseObjective::segmentation: {
      auto t = combined_loss<float>(out.seg, nullptr, &*s.label, s.image, CombinedLossConfig{0.0}, grad);
      e.value = t.total;
      e.dseg = std::move(t.dseg);
      break;
    }
    case PhaseObjective::super_resolution: {
      // The segmentation head doubles as the super-resolution output.
      e.value = mse_loss<float>(out.seg.data, s.image.data);
      if (grad) {
        Tensor<float> g(out.seg.c, out.seg.h, out.seg.w);
        const double scale = 2.0 / static_cast<double>(g.size());
        for (std::size_t i = 0; i < g.size(); ++i)
          g.data[i] = static_cast<float>(scale * (static_cast<double>(out.seg.data[i]) - s.image.data[i]));
        e.dseg = std::move(g);
      }
      break;
    }
    case PhaseObjective::combined: {
      const Tensor<float>* label = s.label ? &*s.label : nullptr;
      auto t = combined_loss<float>(out.seg, out.rec ? &*out.rec : nullptr, label, s.image,
                                    CombinedLossConfig{phase.alpha}, grad);
      e.value = t.total;
      e.dseg = std::move(t.dseg);
      e.drec = std::move(t.drec);
      break;
    }
  }
  return e;
}

inline void scale(std::optional<Tensor<float>>& t, float k) {
  if (t)
    for (auto& v : t->data) v *= k;
}

inline AnnotatedDataset unlabeled(const ImageStack& s) {
  AnnotatedDataset d;
  d.images = s;
  return d;
}

}  // namespace detail

/// Runs the phases of a plan on one network. Method-specific entry points
/// below validate the plan shape and prepare the data.
class Trainer {
 public:
  Trainer(const AnnotatedDataset& source, const TargetDomain* target, const NetworkSpec& spec, TrainPlan plan,
          TrainOptions options)
      : source_(source), target_(target), plan_(std::move(plan)), options_(std::move(options)) {
    plan_.validate();
    result_.net = Network<float>::build(spec, plan_.rng_seed);
    result_.trace.min_object_px = plan_.min_object_px;
    if (source_.labels) result_.trace.objective_solidity = objective_solidity(*source_.labels, plan_.min_object_px);
    if (options_.out_dir) {
      fs::create_directories(*options_.out_dir);
      manifest_.emplace(*options_.out_dir);
      std::ofstream(*options_.out_dir / "trace.jsonl", std::ios::trunc);
    }
  }

  TrainResult run() && {
    prepare_samples();
    std::size_t global_epoch = 0;
    for (std::size_t i = 0; i < plan_.phases.size(); ++i) run_phase(i, global_epoch);
    return std::move(result_);
  }

 private:
  bool needs(auto pred) const { return std::any_of(plan_.phases.begin(), plan_.phases.end(), pred); }

  void prepare_samples() {
    PatchSampler sampler = plan_.patches;
    sampler.rng_seed = derive_seed(plan_.rng_seed, {0x737263ULL});
    const bool wants_raw = needs([](const PhaseConfig& p) { return !p.histogram_match; });
    const bool wants_hm = needs([](const PhaseConfig& p) { return p.histogram_match; });
    const bool wants_target = needs([](const PhaseConfig& p) { return p.data == PhaseData::all; });

    if (wants_raw) source_raw_ = to_samples(sample_patches(source_, sampler), true);
    if (wants_hm) {
      if (!target_ || target_->train.depth() == 0)
        throw TrainingError("histogram matching needs target training images");
      const auto& hm = plan_.histogram_matching;
      const auto hist = mean_target_histogram(target_->train, hm.correct_zeros, hm.window);
      AnnotatedDataset matched = source_;
      matched.images = histogram_match(source_.images, hist, hm.correct_zeros);
      // Same sampler seed, so crops coincide with the unmatched set.
      source_hm_ = to_samples(sample_patches(matched, sampler), true);
    }
    if (wants_target) {
      if (!target_ || target_->train.depth() == 0) throw TrainingError("phase needs target training images");
      PatchSampler ts = plan_.patches;
      ts.rng_seed = derive_seed(plan_.rng_seed, {0x746774ULL});
      target_set_ = to_samples(sample_patches(detail::unlabeled(target_->train), ts), false);
    }
  }

  static detail::SampleSet to_samples(const PatchSet& ps, bool from_source) {
    detail::SampleSet s;
    for (const auto& p : ps.train) s.train.push_back(detail::make_sample(p, from_source));
    for (const auto& p : ps.val) s.val.push_back(detail::make_sample(p, from_source));
    return s;
  }

  /// Collects the phase's samples, degrading inputs for super-resolution.
  detail::SampleSet phase_samples(std::size_t index) const {
    const auto& phase = plan_.phases[index];
    detail::SampleSet s = phase.histogram_match ? source_hm_ : source_raw_;
    if (phase.data == PhaseData::all) {
      s.train.insert(s.train.end(), target_set_.train.begin(), target_set_.train.end());
      s.val.insert(s.val.end(), target_set_.val.begin(), target_set_.val.end());
    }
    if (phase.objective == PhaseObjective::super_resolution) {
      auto degrade = [&](std::vector<detail::Sample>& v, std::uint64_t tag) {
        for (std::size_t i = 0; i < v.size(); ++i) {
          const auto seed = derive_seed(plan_.rng_seed, {0x646567ULL, index, tag, i});
          v[i].input = from_plane<float>(degrade_for_ssl(to_plane(v[i].image), plan_.degradation, seed));
        }
      };
      degrade(s.train, 0);
      degrade(s.val, 1);
    } else if (phase.objective == PhaseObjective::segmentation) {
      for (const auto& v : s.train)
        if (!v.label) throw TrainingError("phase '" + phase.name + "' needs labeled samples");
    }
    return s;
  }

  double evaluate_loss(const PhaseConfig& phase, const std::vector<detail::Sample>& samples) {
    double sum = 0;
    for (const auto& s : samples) sum += detail::sample_loss(phase, result_.net.forward(s.input), s, false).value;
    return samples.empty() ? 0.0 : sum / static_cast<double>(samples.size());
  }

  void record_metrics(TraceEntry& e, const std::vector<detail::Sample>& val) {
    auto& net = result_.net;
    MetricReport src;
    bool any = false;
    for (const auto& s : val) {
      if (!s.from_source || !s.label) continue;
      const auto out = net.forward(s.image);
      std::vector<std::uint8_t> gt(s.label->data.size());
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = s.label->data[i] > 0.5f;
      src += iou_f<float>(out.seg.data, gt);
      any = true;
    }
    if (any) e.source_val_iou = src.iou_f;

    if (!target_ || target_->test.depth() == 0) return;
    std::vector<Plane> preds;
    preds.reserve(target_->test.depth());
    SolidityAccumulator acc(plan_.min_object_px);
    for (const auto& slice : target_->test.slices) {
      preds.push_back(predict_plane(net, slice));
      acc.add(binarize(preds.back()));
    }
    e.target_solidity = acc.mean();
    if (target_->test_labels) e.target_iou = iou_f(preds, *target_->test_labels).iou_f;
  }

  void run_phase(std::size_t index, std::size_t& global_epoch) {
    const auto& phase = plan_.phases[index];
    auto& net = result_.net;
    for (auto g : kAllGroups) net.set_trainable({g}, phase.freeze.count(g) == 0);

    auto samples = phase_samples(index);
    if (samples.train.empty()) throw TrainingError("phase '" + phase.name + "' has no training samples");
    Optimizer<float> opt({.kind = phase.optimizer, .momentum = phase.momentum});
    Rng rng(derive_seed(plan_.rng_seed, {0x73687566ULL, index}));

    const std::size_t steps_per_epoch = (samples.train.size() + phase.batch_size - 1) / phase.batch_size;
    const std::size_t total_steps = steps_per_epoch * phase.epochs;
    std::optional<ReduceOnPlateau> plateau;
    if (phase.lr_policy.kind == LrPolicyKind::reduce_on_plateau)
      plateau.emplace(phase.lr_policy.initial_lr, phase.lr_policy.patience, phase.lr_policy.factor);

    PhaseSummary summary{phase.name, global_epoch + 1, global_epoch, false};
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    std::vector<std::size_t> order(samples.train.size());
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < phase.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      double train_sum = 0, lr = 0;
      for (std::size_t b = 0; b < order.size(); b += phase.batch_size, ++step) {
        const std::size_t end = std::min(order.size(), b + phase.batch_size);
        const float k = 1.0f / static_cast<float>(end - b);
        net.zero_grad();
        for (std::size_t i = b; i < end; ++i) {
          const auto& s = samples.train[order[i]];
          Network<float>::Cache cache;
          const auto out = net.forward(s.input, &cache);
          auto loss = detail::sample_loss(phase, out, s, true);
          train_sum += loss.value;
          detail::scale(loss.dseg, k);
          detail::scale(loss.drec, k);
          net.backward(cache, loss.dseg ? &*loss.dseg : nullptr, loss.drec ? &*loss.drec : nullptr);
        }
        lr = plateau ? plateau->lr() : lr_one_cycle(step, total_steps, phase.lr_policy.max_lr);
        opt.step(net, lr);
      }

      ++global_epoch;
      TraceEntry e;
      e.epoch = global_epoch;
      e.phase = phase.name;
      e.lr = lr;
      e.train_loss = train_sum / static_cast<double>(order.size());
      const double val = samples.val.empty() ? *e.train_loss : evaluate_loss(phase, samples.val);
      e.val_loss = val;
      if (phase.track_metrics) record_metrics(e, samples.val);
      append(e);
      summary.last_epoch = global_epoch;

      if (plateau) plateau->step(val);
      if (val < best_val) {
        best_val = val;
        since_best = 0;
      } else {
        ++since_best;
      }
      const bool last = epoch + 1 == phase.epochs;
      const bool stop = phase.early_stop_patience && since_best >= *phase.early_stop_patience;
      if (manifest_ && (last || stop || (plan_.checkpoint_every && global_epoch % plan_.checkpoint_every == 0)))
        result_.checkpoints.push_back(manifest_->write(net, {phase.name, global_epoch, rng_state(rng)}));
      if (stop && !last) {
        summary.early_stopped = true;
        break;
      }
    }
    result_.phases.push_back(summary);
  }

  void append(const TraceEntry& e) {
    result_.trace.entries.push_back(e);
    if (options_.out_dir) {
      std::ofstream os(*options_.out_dir / "trace.jsonl", std::ios::app);
      os << to_json(e).dump() << "\n";
    }
    if (options_.on_epoch) options_.on_epoch(e);
  }

  const AnnotatedDataset& source_;
  const TargetDomain* target_;
  TrainPlan plan_;
  TrainOptions options_;
  TrainResult result_;
  std::optional<CheckpointManifest> manifest_;
  detail::SampleSet source_raw_, source_hm_, target_set_;
};

namespace detail {

inline void require_labels(const AnnotatedDataset& source) {
  if (!source.labels || source.labels->depth() == 0) throw TrainingError("source dataset has no labels");
}

inline void require_target(const TargetDomain& target) {
  if (target.train.depth() == 0) throw TrainingError("target domain has no training images");
}

inline void write_run_metadata(const TrainOptions& options, const NetworkSpec& spec, const TrainResult& r) {
  if (!options.out_dir) return;
  std::ofstream os(*options.out_dir / "trace.json", std::ios::trunc);
  nlohmann::json phases = nlohmann::json::array();
  for (const auto& p : r.phases)
    phases.push_back({{"name", p.name}, {"first_epoch", p.first_epoch}, {"last_epoch", p.last_epoch},
                      {"early_stopped", p.early_stopped}});
  auto j = to_json(r.trace);
  j["network"] = to_json(spec);
  j["phases"] = phases;
  os << j.dump(2) << "\n";
}

}  // namespace detail

/// Supervised segmentation on the labeled source. The optional target is only
/// predicted for the trace. A plan without phases returns the initialisation.
inline TrainResult train_baseline(const AnnotatedDataset& source, const TargetDomain* target,
                                  const NetworkSpec& spec, const TrainPlan& plan, const TrainOptions& options = {}) {
  detail::require_labels(source);
  if (spec.variant != Variant::attention_unet) throw ConfigError("baseline trains an Attention U-Net");
  for (const auto& p : plan.phases)
    if (p.objective != PhaseObjective::segmentation || p.data != PhaseData::source)
      throw ConfigError("baseline phases must be supervised segmentation on source data");
  auto r = Trainer(source, target, spec, plan, options).run();
  detail::write_run_metadata(options, spec, r);
  return r;
}

/// Super-resolution pretext training followed by segmentation fine-tuning.
inline TrainResult train_ssl(const AnnotatedDataset& source, const TargetDomain& target, const NetworkSpec& spec,
                             const TrainPlan& plan, const TrainOptions& options = {}) {
  detail::require_labels(source);
  detail::require_target(target);
  if (spec.variant != Variant::attention_unet) throw ConfigError("SSL trains an Attention U-Net");
  if (plan.phases.size() != 2 || plan.phases[0].objective != PhaseObjective::super_resolution ||
      plan.phases[1].objective != PhaseObjective::segmentation || plan.phases[1].data != PhaseData::source)
    throw ConfigError("SSL plan must be [super_resolution, segmentation on source]");
  auto r = Trainer(source, &target, spec, plan, options).run();
  detail::write_run_metadata(options, spec, r);
  return r;
}

/// Three-phase Y-Net schedule: joint (0 < alpha < 1), reconstruction
/// (alpha = 1), then segmentation (alpha = 0) on labeled source patches.
inline TrainResult train_ynet(const AnnotatedDataset& source, const TargetDomain& target, const NetworkSpec& spec,
                              const TrainPlan& plan, const TrainOptions& options = {}) {
  detail::require_labels(source);
  detail::require_target(target);
  if (spec.variant != Variant::attention_ynet) throw ConfigError("Y-Net training needs the attention_ynet variant");
  const auto& ph = plan.phases;
  const bool ordered = ph.size() == 3 &&
                       std::all_of(ph.begin(), ph.end(),
                                   [](const PhaseConfig& p) { return p.objective == PhaseObjective::combined; }) &&
                       ph[0].alpha > 0.0 && ph[0].alpha < 1.0 && ph[1].alpha == 1.0 && ph[2].alpha == 0.0 &&
                       ph[2].data == PhaseData::source;
  if (!ordered)
    throw ConfigError("Y-Net plan must run joint (0<alpha<1), reconstruction (alpha=1), "
                      "then segmentation (alpha=0, source data) phases in that order");
  auto r = Trainer(source, &target, spec, plan, options).run();
  detail::write_run_metadata(options, spec, r);
  return r;
}

// ---------------------------------------------------------------------------
// Plan files (TOML). Phase tables mirror PhaseConfig field names.

namespace detail {

inline nlohmann::json toml_to_json(const toml::table& t) {
  std::ostringstream os;
  os << toml::json_formatter{t};
  return nlohmann::json::parse(os.str());
}

template <class V>
V toml_get(const toml::table& t, std::string_view key, V fallback) {
  if (auto v = t[key].value<V>()) return *v;
  if (t.contains(key)) throw ConfigError("plan field '" + std::string(key) + "' has the wrong type");
  return fallback;
}

inline LrPolicy parse_lr_policy(const toml::table& t) {
  LrPolicy p;
  const auto kind = toml_get<std::string>(t, "kind", "one_cycle");
  if (kind == "one_cycle") {
    p.kind = LrPolicyKind::one_cycle;
    p.max_lr = toml_get<double>(t, "max_lr", p.max_lr);
  } else if (kind == "reduce_on_plateau") {
    p.kind = LrPolicyKind::reduce_on_plateau;
    p.initial_lr = toml_get<double>(t, "initial_lr", p.initial_lr);
    p.patience = static_cast<std::size_t>(toml_get<std::int64_t>(t, "patience", 7));
    p.factor = toml_get<double>(t, "factor", p.factor);
  } else {
    throw ConfigError("unknown lr_policy kind '" + kind + "'");
  }
  return p;
}

inline PhaseConfig parse_phase(const toml::table& t) {
  PhaseConfig p;
  p.name = toml_get<std::string>(t, "name", "");
  const auto epochs = toml_get<std::int64_t>(t, "epochs", 1);
  if (epochs < 1) throw ConfigError("phase '" + p.name + "' needs at least one epoch");
  p.epochs = static_cast<std::size_t>(epochs);
  p.optimizer = parse_optimizer(toml_get<std::string>(t, "optimizer", "adam"));
  p.momentum = toml_get<double>(t, "momentum", 0.0);
  if (const auto* lr = t["lr_policy"].as_table()) p.lr_policy = parse_lr_policy(*lr);
  p.objective = parse_objective(toml_get<std::string>(t, "objective", "segmentation"));
  p.alpha = toml_get<double>(t, "alpha", 0.0);
  if (const auto* fr = t["freeze"].as_array())
    for (const auto& g : *fr) {
      const auto name = g.value<std::string>();
      if (!name) throw ConfigError("freeze entries must be group names");
      try {
        p.freeze.insert(parse_group(*name));
      } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
      }
    }
  p.data = parse_phase_data(toml_get<std::string>(t, "data", "source"));
  const auto batch = toml_get<std::int64_t>(t, "batch_size", 1);
  if (batch < 1) throw ConfigError("phase '" + p.name + "' needs batch_size >= 1");
  p.batch_size = static_cast<std::size_t>(batch);
  if (t.contains("early_stop_patience"))
    p.early_stop_patience = static_cast<std::size_t>(toml_get<std::int64_t>(t, "early_stop_patience", 0));
  p.histogram_match = toml_get<bool>(t, "histogram_match", false);
  p.track_metrics = toml_get<bool>(t, "track_metrics", true);
  p.validate();
  return p;
}

}  // namespace detail

struct PlanFile {
  TrainPlan plan;
  std::optional<NetworkSpec> network;
};

inline PlanFile parse_plan(const toml::table& root) {
  PlanFile f;
  auto& plan = f.plan;
  plan.rng_seed = static_cast<std::uint64_t>(detail::toml_get<std::int64_t>(root, "rng_seed", 0));
  plan.checkpoint_every = static_cast<std::size_t>(detail::toml_get<std::int64_t>(root, "checkpoint_every", 0));
  plan.min_object_px = static_cast<std::size_t>(
      detail::toml_get<std::int64_t>(root, "min_object_px", static_cast<std::int64_t>(kMinObjectPixels)));
  if (const auto* t = root["patches"].as_table()) {
    plan.patches.patch_size = static_cast<std::size_t>(detail::toml_get<std::int64_t>(*t, "size", 256));
    plan.patches.count = static_cast<std::size_t>(detail::toml_get<std::int64_t>(*t, "count", 1000));
    plan.patches.val_fraction = detail::toml_get<double>(*t, "val_fraction", 0.1);
  }
  if (const auto* t = root["histogram_matching"].as_table()) {
    plan.histogram_matching.correct_zeros = detail::toml_get<bool>(*t, "correct_zeros", true);
    plan.histogram_matching.window = static_cast<std::size_t>(detail::toml_get<std::int64_t>(*t, "window", 10));
  }
  if (const auto* t = root["degradation"].as_table()) {
    plan.degradation.noise_mean = detail::toml_get<double>(*t, "noise_mean", 0.0);
    plan.degradation.noise_sigma = detail::toml_get<double>(*t, "noise_sigma", 0.1);
    plan.degradation.scale_factor = static_cast<std::size_t>(detail::toml_get<std::int64_t>(*t, "scale_factor", 2));
  }
  if (const auto* t = root["network"].as_table()) {
    try {
      f.network = network_spec_from_json(detail::toml_to_json(*t));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("invalid network table: ") + e.what());
    }
  }
  if (const auto* phases = root["phase"].as_array())
    for (const auto& node : *phases) {
      const auto* t = node.as_table();
      if (!t) throw ConfigError("[[phase]] entries must be tables");
      plan.phases.push_back(detail::parse_phase(*t));
    }
  plan.validate();
  return f;
}

inline PlanFile load_plan(const fs::path& path) {
  try {
    return parse_plan(toml::parse_file(path.string()));
  } catch (const toml::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + std::string(e.description()));
  }
}

}  // namespace mitoda
