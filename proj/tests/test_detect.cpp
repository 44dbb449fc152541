#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "flowcast/detect.hpp"
#include "flowcast/selfcheck.hpp"
#include "flowcast/synth.hpp"
#include "flowcast/trainer.hpp"

using namespace flowcast;

TEST_CASE("histograms sum to one and respect the smoothing floor", "[detect]") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> samples(200);
    for (double& s : samples) s = rng.normal() * rng.uniform(0.5, 2.0);
    NodeHistogram h = make_histogram(samples, {});
    double sum = 0.0;
    for (double p : h.probs) {
      CHECK(p >= 0.999 * h.config.floor);
      sum += p;
    }
    CHECK(sum == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("constant features collapse to the center bin", "[detect]") {
  Tensor u({4, 1, 3}, 2.5);  // constant over windows: z-scores are all zero
  std::vector<NodeHistogram> hists = feature_distribution(u);
  REQUIRE(hists.size() == 1);
  const NodeHistogram& h = hists[0];
  // z = 0 falls in bin floor((0+5)/0.2) = 25; everything else is floor mass.
  const std::size_t center = 25;
  CHECK(h.probs[center] > 0.99);
  for (std::size_t i = 0; i < h.probs.size(); ++i) {
    if (i != center) CHECK(h.probs[i] < 1e-5);
  }
}

TEST_CASE("standard-normal features match the CDF bin masses", "[detect]") {
  Rng rng(7);
  const std::size_t w = 100, d = 200;  // 20000 samples per node
  Tensor u({w, 1, d});
  double* v = u.mutable_data();
  for (std::size_t i = 0; i < u.size(); ++i) v[i] = rng.normal();
  HistogramConfig cfg;
  NodeHistogram h = feature_distribution(u, cfg)[0];

  auto phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
  const double width = 2.0 * cfg.range / static_cast<double>(cfg.bins);
  const double tol = 3.0 / std::sqrt(static_cast<double>(w * d));
  for (std::size_t b = 0; b < cfg.bins; ++b) {
    const double lo = -cfg.range + width * static_cast<double>(b);
    const double expected = phi(lo + width) - phi(lo);
    CHECK(std::abs(h.probs[b] - expected) < tol);
  }
}

TEST_CASE("KL divergence hand value and Gibbs inequality", "[detect]") {
  HistogramConfig cfg{2, 1.0, 1e-6};
  NodeHistogram p{cfg, {0.75, 0.25}};
  NodeHistogram q{cfg, {0.5, 0.5}};
  CHECK(kl_divergence(p, q) == Catch::Approx(0.13081).margin(1e-5));
  CHECK(kl_divergence(p, p) == 0.0);

  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    NodeHistogram a = random_histogram(rng);
    NodeHistogram b = random_histogram(rng);
    CHECK(kl_divergence(a, b) >= 0.0);
  }
}

TEST_CASE("JSD bounds, symmetry, and the disjoint-support limit", "[detect]") {
  Rng rng(13);
  const double ln2 = std::log(2.0);
  for (int trial = 0; trial < 200; ++trial) {
    NodeHistogram a = random_histogram(rng);
    NodeHistogram b = random_histogram(rng);
    const double js = js_divergence(a, b);
    CHECK(js >= 0.0);
    CHECK(js <= ln2 + 1e-12);
    CHECK(js == js_divergence(b, a));  // exact symmetry
    CHECK(js_divergence(a, a) == 0.0);
  }

  // Disjoint supports with a vanishing floor approach ln 2.
  HistogramConfig tiny{2, 1.0, 1e-12};
  const double eps = 1e-12;
  NodeHistogram p{tiny, {1.0 - eps, eps}};
  NodeHistogram q{tiny, {eps, 1.0 - eps}};
  CHECK(js_divergence(p, q) == Catch::Approx(ln2).margin(1e-9));

  NodeHistogram other{{4, 1.0, 1e-12}, {0.25, 0.25, 0.25, 0.25}};
  CHECK_THROWS_AS(js_divergence(p, other), ValidationError);
}

TEST_CASE("select_evolved and select_replay orderings and ties", "[detect]") {
  JsdReport report;
  for (int i = 0; i < 100; ++i) {
    report.node_ids.push_back(i);
    report.scores.push_back(static_cast<double>(i) / 200.0);
  }
  CHECK(select_evolved(report, 0.05) == std::vector<NodeId>{95, 96, 97, 98, 99});
  CHECK(select_replay(report, 0.05) == std::vector<NodeId>{0, 1, 2, 3, 4});

  JsdReport ten;
  for (int i = 0; i < 10; ++i) {
    ten.node_ids.push_back(i);
    ten.scores.push_back(0.001 * i);
  }
  CHECK(select_evolved(ten, 0.05).size() == 1);  // ceil(0.5) = 1

  JsdReport equal;
  for (int i = 0; i < 10; ++i) {
    equal.node_ids.push_back(i);
    equal.scores.push_back(0.25);
  }
  CHECK(select_evolved(equal, 0.3) == std::vector<NodeId>{0, 1, 2});  // ties: ascending ids
  CHECK(select_replay(equal, 0.3) == std::vector<NodeId>{0, 1, 2});

  // Disjoint when fractions permit and scores are distinct.
  const auto top = select_evolved(report, 0.05);
  const auto bottom = select_replay(report, 0.10);
  for (NodeId id : top) CHECK(std::find(bottom.begin(), bottom.end(), id) == bottom.end());

  CHECK_THROWS_AS(select_evolved(report, 0.0), ValidationError);
  CHECK_THROWS_AS(select_evolved(report, 1.5), ValidationError);
}

namespace {

struct ScoreFixture {
  SynthResult synth;
  ModelParams params;
  DetectConfig detect;
  JsdReport report;
};

ScoreFixture scored_fixture(std::uint64_t seed, double drift_fraction) {
  SynthSpec spec;
  spec.years = 2;
  spec.initial_nodes = 32;
  spec.growth_per_year = 4;
  spec.drift_fraction = drift_fraction;
  spec.steps_per_year = 480;
  spec.noise_level = 4.0;
  ScoreFixture fx;
  fx.synth = synthesize_stream(spec, seed);

  ModelConfig cfg;
  cfg.c1 = cfg.c2 = cfg.c3 = 8;
  TrainPlan plan;
  plan.epochs = 4;
  plan.patience = 4;
  plan.seed = seed;
  const StrategyYearResult year1 = train_first_year(plan, cfg, fx.synth.corpus, false);
  fx.params = year1.outcome.params;

  fx.detect.week_steps = 288;
  const PreparedYear prev = prepare_year(fx.synth.corpus.flows[0]);
  const PreparedYear curr = prepare_year(fx.synth.corpus.flows[1]);
  fx.report = score_nodes(fx.params, fx.synth.corpus.stream.snapshots[0],
                          fx.synth.corpus.stream.snapshots[1],
                          FlowTensor{prev.flows_norm, kTimestepMinutes},
                          FlowTensor{curr.flows_norm, kTimestepMinutes}, fx.detect);
  return fx;
}

}  // namespace

TEST_CASE("identical years score zero drift", "[detect]") {
  SynthSpec spec;
  spec.years = 1;
  spec.initial_nodes = 16;
  spec.growth_per_year = 0;
  spec.steps_per_year = 480;
  SynthResult r = synthesize_stream(spec, 3);
  ModelConfig cfg;
  cfg.c1 = cfg.c2 = cfg.c3 = 4;
  ModelParams params = ModelParams::init(cfg, 3);
  DetectConfig detect;
  detect.week_steps = 288;
  const PreparedYear prep = prepare_year(r.corpus.flows[0]);
  // Same snapshot and same flows on both sides: histograms coincide bitwise.
  JsdReport report = score_nodes(params, r.corpus.stream.snapshots[0],
                                 r.corpus.stream.snapshots[0],
                                 FlowTensor{prep.flows_norm, kTimestepMinutes},
                                 FlowTensor{prep.flows_norm, kTimestepMinutes}, detect);
  // The prev pass reads the last week, the curr pass the first week, so the
  // windows differ; scores are small but not exactly zero. Feed a year whose
  // first and last weeks coincide by construction instead.
  // Here steps == 480 and week == 288 overlap, so just bound loosely:
  for (double s : report.scores) {
    CHECK(s >= 0.0);
    CHECK(s <= std::log(2.0));
  }

  // Strict zero: flows whose first and last week slices are identical.
  Tensor flows({4, 576, 1});
  double* v = flows.mutable_data();
  for (std::size_t node = 0; node < 4; ++node) {
    for (std::size_t t = 0; t < 576; ++t) {
      v[node * 576 + t] = std::sin(0.1 * static_cast<double>(t % 288) + static_cast<double>(node));
    }
  }
  GraphSnapshot snap;
  snap.year_index = 1;
  snap.node_ids = {0, 1, 2, 3};
  snap.adjacency = Tensor({4, 4});
  JsdReport strict = score_nodes(params, snap, snap, FlowTensor{flows, kTimestepMinutes},
                                 FlowTensor{flows, kTimestepMinutes}, detect);
  for (double s : strict.scores) CHECK(s == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("drifted nodes outrank the stable median", "[detect]") {
  ScoreFixture fx = scored_fixture(17, 0.25);
  const std::vector<NodeId>& drifted = fx.synth.corpus.drift_labels[1];
  REQUIRE_FALSE(drifted.empty());

  std::vector<double> stable_scores;
  double drifted_mean = 0.0;
  for (std::size_t i = 0; i < fx.report.node_ids.size(); ++i) {
    const bool is_drifted = std::find(drifted.begin(), drifted.end(), fx.report.node_ids[i]) !=
                            drifted.end();
    if (is_drifted) {
      drifted_mean += fx.report.scores[i];
    } else {
      stable_scores.push_back(fx.report.scores[i]);
    }
  }
  drifted_mean /= static_cast<double>(drifted.size());
  std::sort(stable_scores.begin(), stable_scores.end());
  const double stable_median = stable_scores[stable_scores.size() / 2];
  CHECK(drifted_mean > stable_median);

  for (double s : fx.report.scores) {
    CHECK(s >= 0.0);
    CHECK(s <= std::log(2.0));
  }
  // Scoring covers exactly the common nodes.
  CHECK(fx.report.node_ids.size() == fx.synth.corpus.stream.snapshots[0].node_count());
}

TEST_CASE("score_nodes is deterministic and validates input length", "[detect]") {
  ScoreFixture a = scored_fixture(23, 0.2);
  ScoreFixture b = scored_fixture(23, 0.2);
  CHECK(a.report.scores == b.report.scores);

  DetectConfig too_long;
  too_long.week_steps = 10000;
  const PreparedYear prep = prepare_year(a.synth.corpus.flows[0]);
  CHECK_THROWS_AS(score_nodes(a.params, a.synth.corpus.stream.snapshots[0],
                              a.synth.corpus.stream.snapshots[1],
                              FlowTensor{prep.flows_norm, kTimestepMinutes},
                              FlowTensor{prep.flows_norm, kTimestepMinutes}, too_long),
                  ValidationError);
}

TEST_CASE("jsd report serialization", "[detect]") {
  JsdReport report;
  report.node_ids = {3, 5};
  report.scores = {0.125, 0.5};
  const auto path = std::filesystem::temp_directory_path() /
                    ("flowcast_jsd_" + std::to_string(::getpid()) + ".csv");
  write_jsd_report(report, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "node_id,score");
  std::getline(f, line);
  CHECK(line == "3,0.125");
  std::filesystem::remove(path);
}
