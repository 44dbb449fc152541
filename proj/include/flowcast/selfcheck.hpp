#pragma once

#include <sstream>

#include "flowcast/gradcheck.hpp"
#include "flowcast/runner.hpp"

namespace flowcast {

/// Deterministic random tensor with entries in [-1, 1].
inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  double* v = t.mutable_data();
  for (std::size_t i = 0; i < t.size(); ++i) v[i] = rng.uniform(lo, hi);
  return t;
}

/// Random already-floored histogram (positive, sums to one).
inline NodeHistogram random_histogram(Rng& rng, const HistogramConfig& cfg = {}) {
  std::vector<double> mass(cfg.bins);
  for (double& m : mass) m = rng.uniform();
  // Sparsify some bins so pairs differ strongly.
  for (double& m : mass) {
    if (rng.bernoulli(0.5)) m *= 0.01;
  }
  double sum = 0.0;
  for (double& m : mass) sum += m;
  NodeHistogram h;
  h.config = cfg;
  h.probs.resize(cfg.bins);
  double total = 0.0;
  for (std::size_t i = 0; i < cfg.bins; ++i) {
    h.probs[i] = mass[i] / sum + cfg.floor;
    total += h.probs[i];
  }
  for (double& p : h.probs) p /= total;
  return h;
}

/// A small random forecasting instance for gradient checks.
struct GradCheckInstance {
  ModelConfig config;
  Tensor adjacency;
  WindowBatch batch;
};

inline GradCheckInstance make_gradcheck_instance(std::uint64_t seed, std::size_t nodes = 5,
                                                 std::size_t windows = 2,
                                                 ModelConfig cfg = ModelConfig{8, 8, 8, 3}) {
  Rng rng(splitmix64(seed));
  GradCheckInstance inst;
  inst.config = cfg;
  inst.adjacency = Tensor({nodes, nodes});
  double* a = inst.adjacency.mutable_data();
  for (std::size_t i = 0; i < nodes; ++i) {
    for (std::size_t j = i + 1; j < nodes; ++j) {
      if (rng.bernoulli(0.6)) {
        const double w = rng.uniform(0.2, 1.0);
        a[i * nodes + j] = w;
        a[j * nodes + i] = w;
      }
    }
  }
  inst.batch.inputs = random_tensor({windows, nodes, cfg.input_steps, cfg.features}, rng);
  inst.batch.targets = random_tensor({windows, nodes, cfg.horizon}, rng);
  return inst;
}

/// Combined training objective value: L2 loss plus the EWC penalty. Used as
/// the scalar function for finite differences.
inline double combined_loss_value(const ModelParams& params, const GradCheckInstance& inst,
                                  const std::vector<double>& anchor, const FisherDiagonal& fisher,
                                  double lambda) {
  double value = loss(params, inst.adjacency, inst.batch);
  if (lambda != 0.0) {
    value += ewc_penalty(params.to_flat(), anchor, fisher, lambda).value;
  }
  return value;
}

/// Full-model gradient check of the combined loss (tape gradients + analytic
/// EWC gradient) against central finite differences over every parameter.
inline GradCheckResult check_model_gradients(const GradCheckInstance& inst, std::uint64_t seed,
                                             double lambda, double eps = 1e-5) {
  ModelParams params = ModelParams::init(inst.config, seed);
  Rng rng(splitmix64(seed ^ 0xE3Cull));

  std::vector<double> flat = params.to_flat();
  std::vector<double> anchor(flat.size());
  FisherDiagonal fisher;
  fisher.values.resize(flat.size());
  fisher.sample_count = 1;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    anchor[i] = flat[i] + 0.1 * rng.uniform(-1.0, 1.0);
    fisher.values[i] = rng.uniform(0.0, 2.0);
  }

  std::vector<double> analytic;
  {
    Tape tape;
    ModelLeaves leaves = mount(tape, params, true);
    ValueId adj = tape.constant(inst.adjacency);
    ValueId loss_id = build_loss(tape, leaves, inst.config, adj, inst.batch);
    tape.backward(loss_id);
    analytic = collect_gradients(tape, leaves);
    if (lambda != 0.0) {
      const EwcPenalty pen = ewc_penalty(flat, anchor, fisher, lambda);
      for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] += pen.gradient[i];
    }
  }

  GradCheckResult result;
  ModelParams probe = params;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double saved = flat[i];
    flat[i] = saved + eps;
    probe.from_flat(flat);
    const double fp = combined_loss_value(probe, inst, anchor, fisher, lambda);
    flat[i] = saved - eps;
    probe.from_flat(flat);
    const double fm = combined_loss_value(probe, inst, anchor, fisher, lambda);
    flat[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("check_model_gradients: non-finite loss evaluation");
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = relative_error(analytic[i], numeric);
    if (err > result.max_rel_error) {
      result = {err, 0, i, analytic[i], numeric};
    }
  }
  probe.from_flat(flat);
  return result;
}

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// The release gate behind `flowcast selfcheck`: gradient checks for every
/// primitive, the full model with the EWC term, the divergence property
/// suite, and the subgraph oracle. Runs in well under a minute.
inline std::vector<CheckResult> run_selfcheck() {
  std::vector<CheckResult> checks;
  auto add = [&](const std::string& name, bool pass, const std::string& detail) {
    checks.push_back({name, pass, detail});
  };
  auto add_grad = [&](const std::string& name, const GradCheckResult& r, double tol) {
    std::ostringstream os;
    os << "max relative error " << r.max_rel_error << " (tolerance " << tol << ")";
    add(name, r.max_rel_error < tol, os.str());
  };
  Rng rng(20240711);

  {
    Tensor a = random_tensor({4, 3}, rng);
    Tensor b = random_tensor({3, 5}, rng);
    auto r = check_gradients(
        [](Tape& t, const std::vector<ValueId>& p) { return t.sum(t.matmul(p[0], p[1])); },
        {a, b});
    add_grad("gradient/matmul", r, 1e-6);
  }
  {
    Tensor x = random_tensor({3, 7, 2}, rng);
    Tensor k = random_tensor({3, 2, 4}, rng);
    Tensor b = random_tensor({4}, rng);
    auto r = check_gradients(
        [](Tape& t, const std::vector<ValueId>& p) {
          return t.sum(t.conv1d_time(p[0], p[1], p[2]));
        },
        {x, k, b});
    add_grad("gradient/conv1d_time", r, 1e-6);
  }
  {
    // Keep inputs away from the relu kink so central differences are clean.
    Tensor x = random_tensor({4, 6}, rng);
    double* v = x.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::abs(v[i]) < 1e-3) v[i] = 0.5;
    }
    auto r = check_gradients(
        [](Tape& t, const std::vector<ValueId>& p) { return t.sum(t.relu(p[0])); }, {x});
    add_grad("gradient/relu", r, 1e-6);
  }
  {
    Tensor x = random_tensor({5, 3}, rng);
    Tensor w = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4}, rng);
    auto r = check_gradients(
        [](Tape& t, const std::vector<ValueId>& p) { return t.sum(t.linear(p[0], p[1], p[2])); },
        {x, w, b});
    add_grad("gradient/linear", r, 1e-6);
  }
  {
    Tensor pred = random_tensor({4, 5}, rng);
    Tensor target = random_tensor({4, 5}, rng);
    auto r = check_gradients(
        [target](Tape& t, const std::vector<ValueId>& p) { return t.l2_loss(p[0], target); },
        {pred});
    add_grad("gradient/l2_loss", r, 1e-6);
  }
  {
    Tensor h = random_tensor({4, 3}, rng);
    Tensor w1 = random_tensor({3, 5}, rng);
    Tensor w2 = random_tensor({3, 5}, rng);
    Tensor adj = random_tensor({4, 4}, rng, 0.0, 1.0);
    double* a = adj.mutable_data();
    for (std::size_t i = 0; i < 4; ++i) a[i * 4 + i] = 0.0;
    auto r = check_gradients(
        [adj](Tape& t, const std::vector<ValueId>& p) {
          ValueId ac = t.constant(adj);
          return t.sum(gcn_layer(t, p[0], ac, p[1], p[2]));
        },
        {h, w1, w2});
    add_grad("gradient/gcn_layer", r, 1e-4);
  }
  {
    auto inst = make_gradcheck_instance(91, 5, 2);
    auto r = check_model_gradients(inst, 91, 0.5);
    add_grad("gradient/full_model_with_ewc", r, 1e-4);
  }
  {
    // Fisher of a 1-parameter model y = w x on sample (x=1, y=0) at w=2:
    // loss (y-0)^2 has gradient 2w = 4, so F = 16.
    FisherAccumulator acc;
    const double g[] = {4.0};
    acc.add(g);
    const FisherDiagonal f = acc.finalize();
    add("fisher/hand_example", std::abs(f.values[0] - 16.0) < 1e-12,
        "F = " + std::to_string(f.values[0]) + " (expected 16)");
  }
  {
    bool ok = true;
    std::string detail = "500 random pairs within bounds";
    for (int i = 0; i < 500 && ok; ++i) {
      NodeHistogram p = random_histogram(rng);
      NodeHistogram q = random_histogram(rng);
      const double js = js_divergence(p, q);
      const double js_rev = js_divergence(q, p);
      if (js < 0.0 || js > std::log(2.0) + 1e-12 || std::abs(js - js_rev) > 1e-12 ||
          kl_divergence(p, q) < 0.0 || js_divergence(p, p) > 1e-12) {
        ok = false;
        detail = "violation at pair " + std::to_string(i);
      }
    }
    add("divergence/properties", ok, detail);
  }
  {
    NodeHistogram p{{2, 1.0, 1e-6}, {0.75, 0.25}};
    NodeHistogram q{{2, 1.0, 1e-6}, {0.5, 0.5}};
    const double kl = kl_divergence(p, q);
    add("divergence/kl_hand_value", std::abs(kl - 0.13081) < 1e-5,
        "KL = " + std::to_string(kl) + " (expected 0.13081)");
  }
  {
    bool ok = true;
    std::string detail = "20 random graphs match the reachability oracle";
    for (int g = 0; g < 20 && ok; ++g) {
      const std::size_t n = 30;
      GraphSnapshot snap;
      snap.year_index = 1;
      snap.node_ids.resize(n);
      for (std::size_t i = 0; i < n; ++i) snap.node_ids[i] = static_cast<NodeId>(i);
      snap.adjacency = Tensor({n, n});
      double* a = snap.adjacency.mutable_data();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          if (rng.bernoulli(0.08)) {
            a[i * n + j] = a[j * n + i] = 1.0;
          }
        }
      }
      std::vector<NodeId> seeds = {static_cast<NodeId>(rng.below(n))};
      const int k = static_cast<int>(rng.below(4));
      const SubgraphView view = k_hop_subgraph(snap, seeds, k);
      // Oracle: boolean matrix-power reachability.
      std::vector<char> reach(n, 0);
      reach[static_cast<std::size_t>(seeds[0])] = 1;
      for (int hop = 0; hop < k; ++hop) {
        std::vector<char> next = reach;
        for (std::size_t i = 0; i < n; ++i) {
          if (!reach[i]) continue;
          for (std::size_t j = 0; j < n; ++j) {
            if (snap.adjacency(i, j) != 0.0) next[j] = 1;
          }
        }
        reach = std::move(next);
      }
      std::vector<std::size_t> expected;
      for (std::size_t i = 0; i < n; ++i) {
        if (reach[i]) expected.push_back(i);
      }
      if (expected != view.kept) {
        ok = false;
        detail = "mismatch on graph " + std::to_string(g);
      }
    }
    add("graph/k_hop_vs_oracle", ok, detail);
  }
  return checks;
}

}  // namespace flowcast
