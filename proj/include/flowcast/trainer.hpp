#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "flowcast/detect.hpp"
#include "flowcast/ewc.hpp"
#include "flowcast/metrics.hpp"
#include "flowcast/optim.hpp"

namespace flowcast {

enum class Strategy { kStatic, kExpansible, kRetrained, kTrafficStream };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kStatic: return "static";
    case Strategy::kExpansible: return "expansible";
    case Strategy::kRetrained: return "retrained";
    case Strategy::kTrafficStream: return "trafficstream";
  }
  return "unknown";
}

inline Strategy parse_strategy(const std::string& name) {
  if (name == "static") return Strategy::kStatic;
  if (name == "expansible") return Strategy::kExpansible;
  if (name == "retrained") return Strategy::kRetrained;
  if (name == "trafficstream") return Strategy::kTrafficStream;
  throw ConfigError("unknown strategy '" + name +
                    "' (expected static|expansible|retrained|trafficstream)");
}

/// Everything one year-over-year run needs: strategy, ablation switches, and
/// the training hyper-parameters. trafficstream with every switch on is the
/// full method; turning one off reproduces the corresponding ablation
/// (use_expand off = Non-Expand, use_detect off = Non-Detect, use_replay off
/// = Non-Replay, use_smooth off = Non-Smooth, replay+smooth off = Non-Conso).
struct TrainPlan {
  Strategy strategy = Strategy::kTrafficStream;
  bool use_expand = true;
  bool use_detect = true;
  bool use_replay = true;
  bool use_smooth = true;

  int epochs = 100;
  int patience = 10;
  double min_improvement = 1e-4;  // on validation MAE, flow units
  std::size_t batch_size = 128;
  AdamWConfig optimizer;          // lr 0.005, decoupled weight decay 1e-4

  double evolved_fraction = 0.05;
  double replay_fraction = 0.10;
  double lambda = 1.0;            // EWC smoothing weight
  std::size_t fisher_max_samples = 256;

  DetectConfig detect;
  std::uint64_t seed = 0;
};

struct YearTrainOutcome {
  ModelParams params;
  FisherDiagonal fisher;
  double total_seconds = 0.0;
  double seconds_per_epoch = 0.0;
  int epochs_run = 0;
  std::size_t trained_node_count = 0;
  bool carried_forward = false;
  std::string note;
};

/// Evaluates batched forecasts over a time range of the full graph and
/// returns de-normalized metrics.
inline YearMetrics evaluate_metrics(const ModelParams& params, const Tensor& adjacency,
                                    const Tensor& flows_norm, SplitIndices::Range range,
                                    const Normalization& norm, std::size_t batch_size = 128) {
  const ModelConfig& cfg = params.config;
  const std::vector<WindowBatch> batches =
      make_windows(flows_norm, range, cfg.input_steps, cfg.horizon, batch_size, {});
  YearMetricsAccumulator acc;
  for (const WindowBatch& batch : batches) {
    const Tensor pred = forward_batch(params, adjacency, batch.inputs);
    acc.add_batch(denormalize(pred, norm), denormalize(batch.targets, norm));
  }
  return acc.finalize();
}

struct TrainData {
  Tensor train_adjacency;  // nodes actually trained on
  Tensor train_flows;      // normalized [Nsub, S, F]
  Tensor full_adjacency;   // validation runs network-wide
  Tensor full_flows;       // normalized [N, S, F]
  SplitIndices split;
  Normalization norm;
};

/// Minibatch AdamW over the designated node set with early stopping on
/// full-graph validation MAE. When `anchor` is given the EWC penalty
/// anchored at it (weighted by `anchor_fisher`) joins the loss. Returns the
/// best-validation parameters.
inline YearTrainOutcome train_one_year(const TrainPlan& plan, ModelParams model,
                                       const TrainData& data, const ModelParams* anchor,
                                       const FisherDiagonal* anchor_fisher,
                                       std::uint64_t year_seed) {
  const auto start = std::chrono::steady_clock::now();
  const ModelConfig& cfg = model.config;

  std::vector<double> flat = model.to_flat();
  std::vector<double> anchor_flat;
  if (anchor) {
    if (!anchor_fisher || anchor_fisher->values.size() != flat.size()) {
      throw ShapeError("train_one_year: anchor fisher does not align with parameters");
    }
    anchor_flat = anchor->to_flat();
  }
  OptimizerState opt(plan.optimizer);

  auto val_mae = [&](const ModelParams& p) {
    return evaluate_metrics(p, data.full_adjacency, data.full_flows, data.split.val, data.norm,
                            plan.batch_size)
        .overall.mae;
  };

  ModelParams best_params = model;
  double best_val = val_mae(model);  // epoch-0 baseline: the initialization
  int bad_epochs = 0;
  int epochs_run = 0;

  for (int epoch = 1; epoch <= plan.epochs; ++epoch) {
    const std::vector<WindowBatch> batches =
        make_windows(data.train_flows, data.split.train, cfg.input_steps, cfg.horizon,
                     plan.batch_size, mix_seed(year_seed, 0x9A5Cull, static_cast<std::uint64_t>(epoch)));
    for (const WindowBatch& batch : batches) {
      Tape tape;
      ModelLeaves leaves = mount(tape, model, true);
      ValueId adj = tape.constant(data.train_adjacency);
      ValueId loss_id = build_loss(tape, leaves, cfg, adj, batch);
      tape.backward(loss_id);
      std::vector<double> grads = collect_gradients(tape, leaves);
      if (anchor) {
        const EwcPenalty pen = ewc_penalty(flat, anchor_flat, *anchor_fisher, plan.lambda);
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += pen.gradient[i];
      }
      adamw_step(opt, flat, grads);
      model.from_flat(flat);
    }
    epochs_run = epoch;

    const double val = val_mae(model);
    if (val < best_val) {
      best_params = model;
      if (best_val - val > plan.min_improvement) {
        bad_epochs = 0;
      } else {
        ++bad_epochs;
      }
      best_val = val;
    } else {
      ++bad_epochs;
    }
    if (bad_epochs >= plan.patience) break;
  }

  YearTrainOutcome outcome;
  outcome.params = std::move(best_params);
  outcome.epochs_run = epochs_run;
  outcome.trained_node_count = data.train_adjacency.dim(0);
  const auto end = std::chrono::steady_clock::now();
  outcome.total_seconds = std::chrono::duration<double>(end - start).count();
  outcome.seconds_per_epoch =
      epochs_run > 0 ? outcome.total_seconds / static_cast<double>(epochs_run) : 0.0;
  return outcome;
}

struct PreparedYear {
  Tensor flows_norm;
  Normalization norm;
  SplitIndices split;
};

inline PreparedYear prepare_year(const FlowTensor& flows) {
  const SplitIndices split = split_6_2_2(flows.steps());
  auto [normalized, norm] = normalize_flows(flows, split.train);
  return {std::move(normalized.values), norm, split};
}

struct StrategyYearResult {
  int year_index = 0;
  YearTrainOutcome outcome;
  YearMetrics test_metrics;
  std::optional<JsdReport> jsd;
  std::vector<NodeId> trained_node_ids;
  double fisher_seconds = 0.0;
  double detect_seconds = 0.0;

  /// The year's full cost for its strategy: training plus the method's own
  /// detection and Fisher overhead.
  double strategy_seconds() const {
    return outcome.total_seconds + fisher_seconds + detect_seconds;
  }
};

namespace detail_train {

inline FisherDiagonal timed_fisher(const ModelParams& params, const Tensor& adjacency,
                                   const Tensor& flows_norm, const SplitIndices& split,
                                   const TrainPlan& plan, double& seconds) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<WindowBatch> batches =
      make_windows(flows_norm, split.train, params.config.input_steps, params.config.horizon,
                   plan.batch_size, {});
  FisherDiagonal fisher = estimate_fisher(params, adjacency, batches, plan.fisher_max_samples);
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return fisher;
}

}  // namespace detail_train

/// Trains the first year on the full graph. Shared across strategies in a
/// benchmark: with the same plan seed every strategy's year 1 is identical.
inline StrategyYearResult train_first_year(const TrainPlan& plan, const ModelConfig& cfg,
                                           const Corpus& corpus, bool with_fisher) {
  const GraphSnapshot& snap = corpus.stream.snapshots.front();
  PreparedYear prep = prepare_year(corpus.flows.front());

  TrainData data;
  data.train_adjacency = snap.adjacency;
  data.train_flows = prep.flows_norm;
  data.full_adjacency = snap.adjacency;
  data.full_flows = prep.flows_norm;
  data.split = prep.split;
  data.norm = prep.norm;

  StrategyYearResult result;
  result.year_index = snap.year_index;
  result.outcome = train_one_year(plan, ModelParams::init(cfg, plan.seed), data, nullptr, nullptr,
                                  mix_seed(plan.seed, static_cast<std::uint64_t>(snap.year_index)));
  result.outcome.trained_node_count = snap.node_count();
  result.trained_node_ids = snap.node_ids;
  if (with_fisher) {
    result.outcome.fisher = detail_train::timed_fisher(result.outcome.params, snap.adjacency,
                                                       prep.flows_norm, prep.split, plan,
                                                       result.fisher_seconds);
  }
  result.test_metrics = evaluate_metrics(result.outcome.params, snap.adjacency, prep.flows_norm,
                                         prep.split.test, prep.norm, plan.batch_size);
  return result;
}

/// Runs one strategy over the whole stream. `shared_year1` (optional) must
/// come from train_first_year with the same plan seed and hypers; it lets a
/// benchmark reuse the year-1 training that all strategies share.
inline std::vector<StrategyYearResult> run_strategy(const TrainPlan& plan, const ModelConfig& cfg,
                                                    const Corpus& corpus,
                                                    const StrategyYearResult* shared_year1 = nullptr) {
  cfg.validate();
  corpus.stream.validate();
  if (corpus.stream.snapshots.size() != corpus.flows.size() || corpus.flows.empty()) {
    throw ValidationError("run_strategy: corpus years and flows misaligned");
  }
  const std::size_t years = corpus.flows.size();
  const bool is_ts = plan.strategy == Strategy::kTrafficStream;
  const bool needs_fisher = is_ts;

  std::vector<PreparedYear> prep;
  prep.reserve(years);
  for (const FlowTensor& f : corpus.flows) prep.push_back(prepare_year(f));

  std::vector<StrategyYearResult> results;
  results.reserve(years);

  if (shared_year1) {
    results.push_back(*shared_year1);
    if (!needs_fisher) results.back().fisher_seconds = 0.0;
  } else {
    results.push_back(train_first_year(plan, cfg, corpus, needs_fisher));
  }

  for (std::size_t y = 1; y < years; ++y) {
    const GraphSnapshot& snap = corpus.stream.snapshots[y];
    const GraphSnapshot& prev_snap = corpus.stream.snapshots[y - 1];
    const StrategyYearResult& prev = results.back();

    StrategyYearResult result;
    result.year_index = snap.year_index;

    auto carry = [&](const std::string& note) {
      result.outcome.params = prev.outcome.params;
      result.outcome.fisher = prev.outcome.fisher;
      result.outcome.carried_forward = true;
      result.outcome.note = note;
    };

    auto train_on = [&](const SubgraphView& sub, bool smooth) {
      TrainData data;
      data.train_adjacency = sub.adjacency;
      data.train_flows = restrict_rows(prep[y].flows_norm, sub.kept);
      data.full_adjacency = snap.adjacency;
      data.full_flows = prep[y].flows_norm;
      data.split = prep[y].split;
      data.norm = prep[y].norm;
      const bool use_anchor = smooth && !prev.outcome.fisher.empty();
      result.outcome = train_one_year(
          plan, prev.outcome.params, data, use_anchor ? &prev.outcome.params : nullptr,
          use_anchor ? &prev.outcome.fisher : nullptr,
          mix_seed(plan.seed, static_cast<std::uint64_t>(snap.year_index)));
      result.trained_node_ids = sub.node_ids;
    };

    switch (plan.strategy) {
      case Strategy::kStatic:
        carry("static strategy trains only the first year");
        break;
      case Strategy::kRetrained: {
        SubgraphView full;
        full.kept.resize(snap.node_count());
        std::iota(full.kept.begin(), full.kept.end(), 0);
        full.node_ids = snap.node_ids;
        full.adjacency = snap.adjacency;
        train_on(full, false);
        break;
      }
      case Strategy::kExpansible: {
        const std::vector<NodeId> added = new_nodes(prev_snap, snap);
        if (added.empty()) {
          carry("no new nodes; parameters carried forward");
        } else {
          train_on(k_hop_subgraph(snap, added, 2), false);
        }
        break;
      }
      case Strategy::kTrafficStream: {
        std::vector<NodeId> seeds;
        if (plan.use_expand) {
          const std::vector<NodeId> added = new_nodes(prev_snap, snap);
          seeds.insert(seeds.end(), added.begin(), added.end());
        }
        if (plan.use_detect || plan.use_replay) {
          const auto detect_start = std::chrono::steady_clock::now();
          FlowTensor prev_flows{prep[y - 1].flows_norm, kTimestepMinutes};
          FlowTensor curr_flows{prep[y].flows_norm, kTimestepMinutes};
          result.jsd = score_nodes(prev.outcome.params, prev_snap, snap, prev_flows, curr_flows,
                                   plan.detect);
          result.detect_seconds =
              std::chrono::duration<double>(std::chrono::steady_clock::now() - detect_start)
                  .count();
          if (plan.use_detect) {
            const auto evolved = select_evolved(*result.jsd, plan.evolved_fraction);
            seeds.insert(seeds.end(), evolved.begin(), evolved.end());
          }
          if (plan.use_replay) {
            const auto replay = select_replay(*result.jsd, plan.replay_fraction);
            seeds.insert(seeds.end(), replay.begin(), replay.end());
          }
        }
        std::sort(seeds.begin(), seeds.end());
        seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
        if (seeds.empty()) {
          carry("no training nodes selected; parameters carried forward");
        } else {
          train_on(k_hop_subgraph(snap, seeds, 2), plan.use_smooth);
          result.outcome.fisher = detail_train::timed_fisher(
              result.outcome.params, snap.adjacency, prep[y].flows_norm, prep[y].split, plan,
              result.fisher_seconds);
        }
        break;
      }
    }

    result.test_metrics = evaluate_metrics(result.outcome.params, snap.adjacency,
                                           prep[y].flows_norm, prep[y].split.test, prep[y].norm,
                                           plan.batch_size);
    results.push_back(std::move(result));
  }

  return results;
}

}  // namespace flowcast
