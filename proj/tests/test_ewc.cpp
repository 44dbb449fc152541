#include <catch2/catch_amalgamated.hpp>

#include "flowcast/ewc.hpp"
#include "flowcast/selfcheck.hpp"

using namespace flowcast;

TEST_CASE("fisher accumulator reproduces the hand derivation", "[ewc]") {
  // y = w x, loss (y - 0)^2, sample (x=1, y=0) at w=2: g = 2*2*1 = 4, F = 16.
  FisherAccumulator acc;
  const double g[] = {4.0};
  acc.add(g);
  FisherDiagonal f = acc.finalize();
  CHECK(f.values[0] == 16.0);
  CHECK(f.sample_count == 1);

  // A parameter the loss never touches has zero importance.
  FisherAccumulator acc2;
  const double g2[] = {4.0, 0.0};
  acc2.add(g2);
  acc2.add(g2);
  FisherDiagonal f2 = acc2.finalize();
  CHECK(f2.values[1] == 0.0);
  CHECK(f2.sample_count == 2);
}

TEST_CASE("estimate_fisher matches squared finite-difference gradients", "[ewc]") {
  auto inst = make_gradcheck_instance(5, 5, 4, ModelConfig{4, 4, 4, 3});
  ModelParams params = ModelParams::init(inst.config, 5);

  // Split the 4-window batch into per-sample batches for the oracle.
  const std::size_t n = inst.batch.inputs.dim(1);
  std::vector<WindowBatch> samples;
  for (std::size_t s = 0; s < inst.batch.batch(); ++s) {
    WindowBatch one;
    one.inputs = Tensor({1, n, inst.config.input_steps, inst.config.features});
    one.targets = Tensor({1, n, inst.config.horizon});
    const std::size_t in_len = one.inputs.size();
    const std::size_t tg_len = one.targets.size();
    std::copy(inst.batch.inputs.data() + s * in_len, inst.batch.inputs.data() + (s + 1) * in_len,
              one.inputs.mutable_data());
    std::copy(inst.batch.targets.data() + s * tg_len,
              inst.batch.targets.data() + (s + 1) * tg_len, one.targets.mutable_data());
    samples.push_back(std::move(one));
  }

  const WindowBatch full[] = {inst.batch};
  FisherDiagonal fisher = estimate_fisher(params, inst.adjacency, full);
  CHECK(fisher.sample_count == inst.batch.batch());
  for (double v : fisher.values) CHECK(v >= 0.0);

  // Independent oracle: central finite differences of each per-sample loss.
  std::vector<double> flat = params.to_flat();
  std::vector<double> expected(flat.size(), 0.0);
  const double eps = 1e-5;
  ModelParams probe = params;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    for (const WindowBatch& sample : samples) {
      const double saved = flat[i];
      flat[i] = saved + eps;
      probe.from_flat(flat);
      const double fp = loss(probe, inst.adjacency, sample);
      flat[i] = saved - eps;
      probe.from_flat(flat);
      const double fm = loss(probe, inst.adjacency, sample);
      flat[i] = saved;
      const double g = (fp - fm) / (2.0 * eps);
      expected[i] += g * g;
    }
    expected[i] /= static_cast<double>(samples.size());
  }
  probe.from_flat(flat);

  for (std::size_t i = 0; i < expected.size(); ++i) {
    const double denom = std::max({std::abs(expected[i]), std::abs(fisher.values[i]), 1e-8});
    CHECK(std::abs(expected[i] - fisher.values[i]) / denom < 1e-3);
  }
}

TEST_CASE("estimate_fisher subsampling and empty input", "[ewc]") {
  auto inst = make_gradcheck_instance(6, 4, 10, ModelConfig{4, 4, 4, 3});
  ModelParams params = ModelParams::init(inst.config, 6);
  const WindowBatch full[] = {inst.batch};
  FisherDiagonal capped = estimate_fisher(params, inst.adjacency, full, 3);
  CHECK(capped.sample_count == 3);  // stride ceil(10/3)=4 -> samples 0,4,8

  CHECK_THROWS_AS(estimate_fisher(params, inst.adjacency, {}), ValidationError);
}

TEST_CASE("ewc penalty values and gradient", "[ewc]") {
  FisherDiagonal fisher;
  fisher.values = {16.0};
  fisher.sample_count = 1;
  const std::vector<double> anchor = {1.0};
  const std::vector<double> current = {1.1};

  EwcPenalty p = ewc_penalty(current, anchor, fisher, 0.5);
  CHECK(p.value == Catch::Approx(0.08).margin(1e-12));
  CHECK(p.gradient[0] == Catch::Approx(1.6).margin(1e-12));

  EwcPenalty zero = ewc_penalty(anchor, anchor, fisher, 0.5);
  CHECK(zero.value == 0.0);
  CHECK(zero.gradient[0] == 0.0);

  EwcPenalty off = ewc_penalty(current, anchor, fisher, 0.0);
  CHECK(off.value == 0.0);
  CHECK(off.gradient[0] == 0.0);

  FisherDiagonal wrong;
  wrong.values = {1.0, 2.0};
  CHECK_THROWS_AS(ewc_penalty(current, anchor, wrong, 1.0), ShapeError);
}

TEST_CASE("ewc penalty is nonnegative, zero only on the fisher support", "[ewc]") {
  FisherDiagonal fisher;
  fisher.values = {2.0, 0.0};
  const std::vector<double> anchor = {1.0, 1.0};
  // Drift on the unsupported coordinate is free.
  const std::vector<double> drift_free = {1.0, 5.0};
  CHECK(ewc_penalty(drift_free, anchor, fisher, 3.0).value == 0.0);
  const std::vector<double> drift_paid = {1.5, 1.0};
  CHECK(ewc_penalty(drift_paid, anchor, fisher, 3.0).value > 0.0);
}

TEST_CASE("ewc penalty gradient matches finite differences", "[ewc]") {
  Rng rng(77);
  const std::size_t n = 12;
  FisherDiagonal fisher;
  fisher.values.resize(n);
  std::vector<double> anchor(n), current(n);
  for (std::size_t i = 0; i < n; ++i) {
    fisher.values[i] = rng.uniform(0.0, 3.0);
    anchor[i] = rng.uniform(-1.0, 1.0);
    current[i] = anchor[i] + rng.uniform(-0.5, 0.5);
  }
  const double lambda = 1.3;
  EwcPenalty p = ewc_penalty(current, anchor, fisher, lambda);
  const double eps = 1e-6;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> up = current, down = current;
    up[i] += eps;
    down[i] -= eps;
    const double numeric = (ewc_penalty(up, anchor, fisher, lambda).value -
                            ewc_penalty(down, anchor, fisher, lambda).value) /
                           (2.0 * eps);
    CHECK(relative_error(p.gradient[i], numeric) < 1e-6);
  }
}
