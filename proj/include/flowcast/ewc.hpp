#pragma once

#include <span>
#include <vector>

#include "flowcast/model.hpp"

namespace flowcast {

/// Diagonal Fisher information: per-parameter importance aligned with
/// ModelParams flat_index order.
struct FisherDiagonal {
  std::vector<double> values;
  std::uint64_t sample_count = 0;

  bool empty() const { return values.empty(); }
};

/// Accumulates mean squared per-sample gradients. Kept separate from the
/// model so the estimator semantics are testable on their own.
struct FisherAccumulator {
  std::vector<double> sum_sq;
  std::uint64_t samples = 0;

  void add(std::span<const double> gradient) {
    if (sum_sq.empty()) sum_sq.assign(gradient.size(), 0.0);
    if (sum_sq.size() != gradient.size()) {
      throw ShapeError("FisherAccumulator: gradient length changed mid-estimate");
    }
    for (std::size_t i = 0; i < gradient.size(); ++i) sum_sq[i] += gradient[i] * gradient[i];
    ++samples;
  }

  FisherDiagonal finalize() const {
    if (samples == 0) throw ValidationError("FisherAccumulator: no samples");
    FisherDiagonal f;
    f.sample_count = samples;
    f.values.resize(sum_sq.size());
    for (std::size_t i = 0; i < sum_sq.size(); ++i) {
      f.values[i] = sum_sq[i] / static_cast<double>(samples);
    }
    return f;
  }
};

/// F_i = mean over window-samples of (dL/dtheta_i)^2, with L the training L2
/// loss of a single window. `max_samples` > 0 subsamples the windows at an
/// even stride (deterministic); 0 uses all of them.
inline FisherDiagonal estimate_fisher(const ModelParams& params, const Tensor& adjacency,
                                      std::span<const WindowBatch> batches,
                                      std::size_t max_samples = 0) {
  std::size_t total = 0;
  for (const WindowBatch& b : batches) total += b.batch();
  if (total == 0) throw ValidationError("estimate_fisher: no samples");

  std::size_t stride = 1;
  if (max_samples > 0 && total > max_samples) {
    stride = (total + max_samples - 1) / max_samples;
  }

  FisherAccumulator acc;
  const std::size_t n = batches.empty() ? 0 : batches.front().inputs.dim(1);
  const std::size_t t_in = params.config.input_steps;
  const std::size_t f = params.config.features;
  const std::size_t k_out = params.config.horizon;

  std::size_t global = 0;
  for (const WindowBatch& batch : batches) {
    const std::size_t bsz = batch.batch();
    for (std::size_t s = 0; s < bsz; ++s, ++global) {
      if (global % stride != 0) continue;
      // Slice window s out of the batch (contiguous in both tensors).
      WindowBatch one;
      one.inputs = Tensor({1, n, t_in, f});
      one.targets = Tensor({1, n, k_out});
      const std::size_t in_len = n * t_in * f;
      const std::size_t tg_len = n * k_out;
      std::copy(batch.inputs.data() + s * in_len, batch.inputs.data() + (s + 1) * in_len,
                one.inputs.mutable_data());
      std::copy(batch.targets.data() + s * tg_len, batch.targets.data() + (s + 1) * tg_len,
                one.targets.mutable_data());

      Tape tape;
      ModelLeaves leaves = mount(tape, params, true);
      ValueId a = tape.constant(adjacency);
      ValueId loss_id = build_loss(tape, leaves, params.config, a, one);
      tape.backward(loss_id);
      acc.add(collect_gradients(tape, leaves));
    }
  }
  return acc.finalize();
}

struct EwcPenalty {
  double value = 0.0;
  std::vector<double> gradient;  // aligned with flat_index
};

/// lambda * sum_i F_i (theta_i - anchor_i)^2 with gradient
/// 2 lambda F_i (theta_i - anchor_i).
inline EwcPenalty ewc_penalty(std::span<const double> current, std::span<const double> anchor,
                              const FisherDiagonal& fisher, double lambda) {
  if (current.size() != anchor.size() || current.size() != fisher.values.size()) {
    throw ShapeError("ewc_penalty: parameter/anchor/fisher lengths differ (" +
                     std::to_string(current.size()) + ", " + std::to_string(anchor.size()) + ", " +
                     std::to_string(fisher.values.size()) + ")");
  }
  EwcPenalty p;
  p.gradient.assign(current.size(), 0.0);
  for (std::size_t i = 0; i < current.size(); ++i) {
    const double d = current[i] - anchor[i];
    p.value += fisher.values[i] * d * d;
    p.gradient[i] = 2.0 * lambda * fisher.values[i] * d;
  }
  p.value *= lambda;
  return p;
}

inline EwcPenalty ewc_penalty(const ModelParams& current, const ModelParams& anchor,
                              const FisherDiagonal& fisher, double lambda) {
  const std::vector<double> cur = current.to_flat();
  const std::vector<double> anc = anchor.to_flat();
  return ewc_penalty(cur, anc, fisher, lambda);
}

inline void save_checkpoint(const ModelParams& params, const FisherDiagonal& fisher,
                            const std::filesystem::path& path) {
  detail_ckpt::write_checkpoint(path, params, fisher.values.data(), fisher.values.size(),
                                fisher.sample_count);
}

inline ModelParams load_checkpoint(const std::filesystem::path& path, FisherDiagonal* fisher) {
  std::vector<double> values;
  std::uint64_t samples = 0;
  ModelParams p = detail_ckpt::read_checkpoint(path, &values, &samples);
  if (fisher) {
    fisher->values = std::move(values);
    fisher->sample_count = samples;
  }
  return p;
}

}  // namespace flowcast
