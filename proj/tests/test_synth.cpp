#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "flowcast/synth.hpp"

using namespace flowcast;
namespace fs = std::filesystem;

namespace {

SynthSpec small_spec() {
  SynthSpec spec;
  spec.years = 3;
  spec.initial_nodes = 20;
  spec.growth_per_year = 4;
  spec.drift_fraction = 0.2;
  spec.steps_per_year = 160;
  return spec;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("same seed produces bit-identical corpora", "[synth]") {
  SynthSpec spec = small_spec();
  SynthResult a = synthesize_stream(spec, 42);
  SynthResult b = synthesize_stream(spec, 42);
  REQUIRE(a.corpus.flows.size() == b.corpus.flows.size());
  for (std::size_t y = 0; y < a.corpus.flows.size(); ++y) {
    CHECK(exactly_equal(a.corpus.flows[y].values, b.corpus.flows[y].values));
    CHECK(exactly_equal(a.corpus.stream.snapshots[y].adjacency,
                        b.corpus.stream.snapshots[y].adjacency));
    CHECK(a.corpus.drift_labels[y] == b.corpus.drift_labels[y]);
  }
  SynthResult c = synthesize_stream(spec, 43);
  CHECK_FALSE(exactly_equal(a.corpus.flows[0].values, c.corpus.flows[0].values));
}

TEST_CASE("growth zero keeps node sets identical", "[synth]") {
  SynthSpec spec = small_spec();
  spec.growth_per_year = 0;
  SynthResult r = synthesize_stream(spec, 7);
  for (const GraphSnapshot& snap : r.corpus.stream.snapshots) {
    CHECK(snap.node_ids == r.corpus.stream.snapshots.front().node_ids);
  }
}

TEST_CASE("drift zero keeps per-node statistics stationary", "[synth]") {
  SynthSpec spec = small_spec();
  spec.drift_fraction = 0.0;
  spec.growth_per_year = 0;
  spec.steps_per_year = 600;
  SynthResult r = synthesize_stream(spec, 11);
  const Tensor& y1 = r.corpus.flows[0].values;
  const Tensor& y2 = r.corpus.flows[1].values;
  for (std::size_t node = 0; node < spec.initial_nodes; ++node) {
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t t = 0; t < spec.steps_per_year; ++t) {
      m1 += y1(node, t, 0);
      m2 += y2(node, t, 0);
    }
    m1 /= static_cast<double>(spec.steps_per_year);
    m2 /= static_cast<double>(spec.steps_per_year);
    CHECK(std::abs(m1 - m2) < 2.0);  // same deterministic signal, fresh noise
  }
  for (const auto& labels : r.corpus.drift_labels) CHECK(labels.empty());
}

TEST_CASE("drift labels cover the configured fraction of existing nodes", "[synth]") {
  SynthSpec spec = small_spec();
  SynthResult r = synthesize_stream(spec, 5);
  CHECK(r.corpus.drift_labels[0].empty());
  for (std::size_t y = 1; y < r.corpus.drift_labels.size(); ++y) {
    const std::size_t n_prev = r.corpus.stream.snapshots[y - 1].node_count();
    const auto expected =
        static_cast<std::size_t>(std::llround(spec.drift_fraction * static_cast<double>(n_prev)));
    CHECK(r.corpus.drift_labels[y].size() == expected);
    for (NodeId id : r.corpus.drift_labels[y]) {
      CHECK(static_cast<std::size_t>(id) < n_prev);  // only existing nodes drift
    }
  }
}

TEST_CASE("drifted nodes change their signal, stable nodes keep it", "[synth]") {
  SynthSpec spec = small_spec();
  spec.growth_per_year = 0;
  spec.steps_per_year = 600;
  spec.noise_level = 1.0;
  SynthResult r = synthesize_stream(spec, 21);
  const auto& drifted = r.corpus.drift_labels[1];
  REQUIRE_FALSE(drifted.empty());
  auto year_mean_abs_diff = [&](std::size_t node) {
    double acc = 0.0;
    for (std::size_t t = 0; t < spec.steps_per_year; ++t) {
      acc += std::abs(r.corpus.flows[1].values(node, t, 0) - r.corpus.flows[0].values(node, t, 0));
    }
    return acc / static_cast<double>(spec.steps_per_year);
  };
  std::vector<char> is_drifted(spec.initial_nodes, 0);
  for (NodeId id : drifted) is_drifted[static_cast<std::size_t>(id)] = 1;
  double drifted_mean = 0.0;
  std::vector<double> stable_diffs;
  for (std::size_t node = 0; node < spec.initial_nodes; ++node) {
    if (is_drifted[node]) {
      drifted_mean += year_mean_abs_diff(node);
    } else {
      stable_diffs.push_back(year_mean_abs_diff(node));
    }
  }
  drifted_mean /= static_cast<double>(drifted.size());
  std::sort(stable_diffs.begin(), stable_diffs.end());
  // Smoothing leaks a share of a drifted signal into its neighbors, so
  // compare against the stable median rather than the mean.
  const double stable_median = stable_diffs[stable_diffs.size() / 2];
  CHECK(drifted_mean > 2.0 * stable_median);
}

TEST_CASE("stream growth matches the spec arithmetic", "[synth]") {
  SynthSpec spec;
  spec.years = 5;
  spec.initial_nodes = 80;
  spec.growth_per_year = 8;
  spec.steps_per_year = 96;
  CHECK(spec.final_nodes() == 112);
  SynthResult r = synthesize_stream(spec, 7);
  CHECK(r.corpus.stream.snapshots.back().node_count() == 112);
  // new_nodes sizes sum to N_final - N_initial.
  std::size_t total_added = 0;
  for (std::size_t y = 1; y < r.corpus.stream.snapshots.size(); ++y) {
    total_added +=
        new_nodes(r.corpus.stream.snapshots[y - 1], r.corpus.stream.snapshots[y]).size();
  }
  CHECK(total_added == 112 - 80);
}

TEST_CASE("write_corpus is byte-stable and loads back", "[synth]") {
  SynthSpec spec = small_spec();
  SynthResult r = synthesize_stream(spec, 99);

  const fs::path dir =
      fs::temp_directory_path() / ("flowcast_synthio_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  write_corpus(r, dir / "a");
  write_corpus(r, dir / "b");
  for (const auto& entry : fs::recursive_directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir / "a");
    CHECK(slurp(entry.path()) == slurp(dir / "b" / rel));
  }

  Corpus loaded = load_corpus(dir / "a");
  REQUIRE(loaded.stream.snapshots.size() == r.corpus.stream.snapshots.size());
  for (std::size_t y = 0; y < loaded.flows.size(); ++y) {
    CHECK(loaded.stream.snapshots[y].node_ids == r.corpus.stream.snapshots[y].node_ids);
    CHECK(approx_equal(loaded.stream.snapshots[y].adjacency,
                       r.corpus.stream.snapshots[y].adjacency, 1e-4));
    CHECK(approx_equal(loaded.flows[y].values, r.corpus.flows[y].values, 1e-5));
    CHECK(loaded.drift_labels[y] == r.corpus.drift_labels[y]);
  }
  fs::remove_all(dir);
}

TEST_CASE("generator validation", "[synth]") {
  SynthSpec spec = small_spec();
  spec.steps_per_year = 50;  // too short for a 6:2:2 split
  CHECK_THROWS_AS(synthesize_stream(spec, 1), ValidationError);
  SynthSpec bad = small_spec();
  bad.drift_fraction = 1.5;
  CHECK_THROWS_AS(synthesize_stream(bad, 1), ValidationError);
}
