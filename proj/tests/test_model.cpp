#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "flowcast/ewc.hpp"
#include "flowcast/model.hpp"
#include "flowcast/selfcheck.hpp"

using namespace flowcast;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.c1 = cfg.c2 = cfg.c3 = 6;
  cfg.kernel = 3;
  return cfg;
}

Tensor random_adjacency(std::size_t n, Rng& rng, double p = 0.5) {
  Tensor a({n, n});
  double* v = a.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng.bernoulli(p)) v[i * n + j] = v[j * n + i] = rng.uniform(0.2, 1.0);
    }
  }
  return a;
}

}  // namespace

TEST_CASE("gcn_layer identity branch and zero weights", "[model]") {
  Rng rng(3);
  const std::size_t n = 4, c = 3;
  Tensor h = random_tensor({n, c}, rng, 0.1, 1.0);  // nonnegative
  Tensor zero_adj({n, n});
  Tensor eye({c, c});
  for (std::size_t i = 0; i < c; ++i) eye.at(i, i) = 1.0;

  Tape tape;
  ValueId out = gcn_layer(tape, tape.constant(h), tape.constant(zero_adj),
                          tape.constant(Tensor({c, c})), tape.constant(eye));
  CHECK(approx_equal(tape.value(out), h, 1e-15));

  Tape tape2;
  ValueId out2 = gcn_layer(tape2, tape2.constant(h), tape2.constant(random_adjacency(n, rng)),
                           tape2.constant(Tensor({c, c})), tape2.constant(Tensor({c, c})));
  for (std::size_t i = 0; i < tape2.value(out2).size(); ++i) CHECK(tape2.value(out2)[i] == 0.0);
}

TEST_CASE("gcn_layer matches a direct formula evaluation", "[model]") {
  Rng rng(11);
  const std::size_t n = 3, cin = 2, cout = 4;
  Tensor h = random_tensor({n, cin}, rng);
  Tensor a = random_adjacency(n, rng, 0.9);
  Tensor w1 = random_tensor({cin, cout}, rng);
  Tensor w2 = random_tensor({cin, cout}, rng);

  Tape tape;
  ValueId out =
      gcn_layer(tape, tape.constant(h), tape.constant(a), tape.constant(w1), tape.constant(w2));

  // Independent evaluation with plain loops: relu(A h W1 + h W2).
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < cout; ++o) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cin; ++c) {
        double agg = 0.0;
        for (std::size_t j = 0; j < n; ++j) agg += a(i, j) * h(j, c);
        acc += agg * w1(c, o) + h(i, c) * w2(c, o);
      }
      const double expected = acc > 0.0 ? acc : 0.0;
      CHECK(tape.value(out)(i, o) == Catch::Approx(expected).margin(1e-12));
    }
  }
}

TEST_CASE("forward output shape across node counts", "[model]") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 1);
  Rng rng(5);
  for (std::size_t n : {3ul, 17ul, 64ul}) {
    Tensor x = random_tensor({n, cfg.input_steps, cfg.features}, rng);
    Tensor out = forward(params, random_adjacency(n, rng), x);
    CHECK(out.shape() == std::vector<std::size_t>{n, cfg.horizon});
  }
}

TEST_CASE("zero parameters forecast the readout bias", "[model]") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::zeros(cfg);
  Rng rng(6);
  Tensor bias = random_tensor({cfg.horizon}, rng);
  params.fc_b = bias;
  const std::size_t n = 5;
  Tensor out = forward(params, random_adjacency(n, rng), random_tensor({n, 12, 1}, rng));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < cfg.horizon; ++k) CHECK(out(i, k) == bias[k]);
  }
}

TEST_CASE("permutation equivariance", "[model]") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 9);
  Rng rng(10);
  const std::size_t n = 7;
  Tensor a = random_adjacency(n, rng);
  Tensor x = random_tensor({n, cfg.input_steps, cfg.features}, rng);
  Tensor out = forward(params, a, x);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);

  Tensor xp({n, cfg.input_steps, cfg.features});
  Tensor ap({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < cfg.input_steps; ++t) {
      xp.at(i, t, 0) = x(perm[i], t, 0);
    }
    for (std::size_t j = 0; j < n; ++j) ap.at(i, j) = a(perm[i], perm[j]);
  }
  Tensor out_p = forward(params, ap, xp);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < cfg.horizon; ++k) {
      CHECK(out_p(i, k) == Catch::Approx(out(perm[i], k)).margin(1e-9));
    }
  }
}

TEST_CASE("forward decomposes exactly through extract_features", "[model]") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 21);
  Rng rng(22);
  const std::size_t n = 6;
  Tensor a = random_adjacency(n, rng);
  Tensor x = random_tensor({n, cfg.input_steps, cfg.features}, rng);

  Tensor feats = extract_features(params, a, x);
  CHECK(feats.shape() == std::vector<std::size_t>{n, cfg.feature_width()});

  Tape tape;
  ValueId readout = tape.linear(tape.constant(feats), tape.constant(params.fc_w),
                                tape.constant(params.fc_b));
  CHECK(exactly_equal(tape.value(readout), forward(params, a, x)));
}

TEST_CASE("identical nodes with identical neighborhoods share features", "[model]") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 31);
  // Nodes 0 and 1 both connect only to node 2 with the same weight and carry
  // the same window.
  const std::size_t n = 3;
  Tensor a({n, n});
  a.at(0, 2) = a.at(2, 0) = 0.7;
  a.at(1, 2) = a.at(2, 1) = 0.7;
  Rng rng(32);
  Tensor window = random_tensor({1, cfg.input_steps, cfg.features}, rng);
  Tensor x({n, cfg.input_steps, cfg.features});
  for (std::size_t t = 0; t < cfg.input_steps; ++t) {
    x.at(0, t, 0) = window(0, t, 0);
    x.at(1, t, 0) = window(0, t, 0);
    x.at(2, t, 0) = rng.uniform(-1.0, 1.0);
  }
  Tensor feats = extract_features(params, a, x);
  for (std::size_t f = 0; f < cfg.feature_width(); ++f) {
    CHECK(feats(0, f) == Catch::Approx(feats(1, f)).margin(1e-12));
  }
}

TEST_CASE("batched forward equals per-window forward", "[model]") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 41);
  Rng rng(42);
  const std::size_t n = 5, b = 3;
  Tensor a = random_adjacency(n, rng);
  Tensor xb = random_tensor({b, n, cfg.input_steps, cfg.features}, rng);
  Tensor out = forward_batch(params, a, xb);
  for (std::size_t w = 0; w < b; ++w) {
    Tensor x({n, cfg.input_steps, cfg.features});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < cfg.input_steps; ++t) x.at(i, t, 0) = xb(w, i, t, 0);
    }
    Tensor single = forward(params, a, x);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < cfg.horizon; ++k) {
        CHECK(out(w, i, k) == Catch::Approx(single(i, k)).margin(1e-12));
      }
    }
  }
}

TEST_CASE("loss on perfect predictions is zero and never negative", "[model]") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 51);
  Rng rng(52);
  const std::size_t n = 4, b = 2;
  Tensor a = random_adjacency(n, rng);
  WindowBatch batch;
  batch.inputs = random_tensor({b, n, cfg.input_steps, cfg.features}, rng);
  batch.targets = forward_batch(params, a, batch.inputs);
  CHECK(loss(params, a, batch) == 0.0);

  batch.targets = random_tensor({b, n, cfg.horizon}, rng);
  CHECK(loss(params, a, batch) >= 0.0);
}

TEST_CASE("full-model gradients match finite differences", "[model]") {
  auto inst = make_gradcheck_instance(71, 5, 2, ModelConfig{6, 6, 6, 3});
  auto plain = check_model_gradients(inst, 71, 0.0);
  CHECK(plain.max_rel_error < 1e-4);
  auto with_ewc = check_model_gradients(inst, 71, 0.7);
  CHECK(with_ewc.max_rel_error < 1e-4);
}

TEST_CASE("parameter checkpoints round-trip bit-exactly", "[model]") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 61);
  const fs::path path =
      fs::temp_directory_path() / ("flowcast_ckpt_" + std::to_string(::getpid()) + ".bin");
  save_params(params, path);
  ModelParams loaded = load_params(path);
  CHECK(loaded.config == cfg);
  const auto a = params.to_flat();
  const auto b = loaded.to_flat();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  // flat_index enumeration is stable across the round trip.
  ModelParams rebuilt = ModelParams::zeros(cfg);
  rebuilt.from_flat(a);
  CHECK(rebuilt.to_flat() == a);

  ModelConfig other = cfg;
  other.c1 = cfg.c1 + 1;
  CHECK_THROWS_AS(load_params(path, other), ConfigError);
  CHECK_NOTHROW(load_params(path, cfg));

  // Fisher rides in the same container.
  FisherDiagonal fisher;
  fisher.values.assign(params.parameter_count(), 0.25);
  fisher.sample_count = 17;
  save_checkpoint(params, fisher, path);
  FisherDiagonal fisher_back;
  ModelParams loaded2 = load_checkpoint(path, &fisher_back);
  CHECK(loaded2.to_flat() == a);
  CHECK(fisher_back.sample_count == 17);
  CHECK(fisher_back.values == fisher.values);

  fs::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected", "[model]") {
  const fs::path path =
      fs::temp_directory_path() / ("flowcast_corrupt_" + std::to_string(::getpid()) + ".bin");
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_params(path), IoError);
  fs::remove(path);
}

TEST_CASE("forward rejects mismatched stages by name", "[model]") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 81);
  Rng rng(82);
  Tensor a = random_adjacency(4, rng);
  // Wrong T.
  CHECK_THROWS_AS(forward(params, a, random_tensor({4, 7, 1}, rng)), ShapeError);
  // Adjacency size disagrees with the window's node count.
  CHECK_THROWS_AS(forward(params, a, random_tensor({5, 12, 1}, rng)), ShapeError);
}
