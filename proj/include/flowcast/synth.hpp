#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "flowcast/dataset.hpp"
#include "flowcast/tape.hpp"

namespace flowcast {

/// Configuration for the synthetic streaming-corpus generator. The generator
/// substitutes for a real sensor feed: a random geometric graph grown yearly,
/// per-node daily sinusoid with weekly modulation, neighbor correlation via
/// one adjacency-weighted smoothing pass, and a labeled fraction of nodes
/// whose phase/amplitude drifts each year.
struct SynthSpec {
  int years = 5;
  std::size_t initial_nodes = 80;
  std::size_t growth_per_year = 8;
  double drift_fraction = 0.05;
  double noise_level = 5.0;          // Gaussian noise std, flow units
  double drift_magnitude = 1.0;      // scales all drift deltas
  std::size_t steps_per_year = 2304; // >= one week of 5-minute ticks
  std::size_t features = 1;
  double target_degree = 3.5;        // expected geometric-graph degree
  double sigma_d = 10.0;
  double epsilon = 1.0;

  std::size_t final_nodes() const {
    return initial_nodes + growth_per_year * static_cast<std::size_t>(std::max(0, years - 1));
  }

  void validate() const {
    if (years < 1) throw ValidationError("synth: years must be >= 1");
    if (initial_nodes < 2) throw ValidationError("synth: need at least 2 initial nodes");
    if (steps_per_year < 3 * (kInputSteps + kHorizonSteps)) {
      throw ValidationError("synth: steps_per_year too short for a 6:2:2 split");
    }
    if (drift_fraction < 0.0 || drift_fraction > 1.0) {
      throw ValidationError("synth: drift_fraction must be in [0,1]");
    }
    if (noise_level < 0.0) throw ValidationError("synth: noise_level must be >= 0");
    if (features < 1) throw ValidationError("synth: features must be >= 1");
    if (target_degree <= 0.0 || epsilon <= 0.0 || sigma_d <= 0.0) {
      throw ValidationError("synth: degree, epsilon and sigma_d must be positive");
    }
  }
};

struct SynthResult {
  Corpus corpus;
  SynthSpec spec;
};

namespace detail_synth {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
constexpr double kDailyPeriod = 288.0;  // 24 h at 5-minute ticks

struct NodePattern {
  double base = 0.0;
  double amp = 0.0;
  double phase = 0.0;         // steps
  double weekly_phase = 0.0;  // steps
};

inline double signal_at(const NodePattern& p, double t) {
  const double daily = std::sin(kTwoPi * (t + p.phase) / kDailyPeriod);
  const double weekly = 1.0 + 0.3 * std::sin(kTwoPi * (t + p.weekly_phase) / static_cast<double>(kWeekSteps));
  return p.base + p.amp * daily * weekly;
}

}  // namespace detail_synth

inline SynthResult synthesize_stream(const SynthSpec& spec, std::uint64_t seed) {
  using namespace detail_synth;
  spec.validate();
  Rng rng(splitmix64(seed));

  const std::size_t n_final = spec.final_nodes();
  // Domain side chosen so a radius of `epsilon` yields roughly target_degree
  // neighbors in the final year.
  const double side =
      std::sqrt(3.14159265358979323846 * spec.epsilon * spec.epsilon *
                static_cast<double>(n_final) / spec.target_degree);

  std::vector<std::array<double, 2>> positions(n_final);
  for (auto& p : positions) {
    p[0] = rng.uniform(0.0, side);
    p[1] = rng.uniform(0.0, side);
  }
  std::vector<NodePattern> patterns(n_final);
  for (auto& p : patterns) {
    p.base = rng.uniform(80.0, 160.0);
    p.amp = rng.uniform(30.0, 70.0);
    p.phase = rng.uniform(0.0, kDailyPeriod);
    p.weekly_phase = rng.uniform(0.0, static_cast<double>(kWeekSteps));
  }

  SynthResult result;
  result.spec = spec;
  const std::size_t s_total = spec.steps_per_year;
  const std::size_t f_count = spec.features;

  for (int year = 1; year <= spec.years; ++year) {
    const std::size_t n =
        spec.initial_nodes + spec.growth_per_year * static_cast<std::size_t>(year - 1);

    std::vector<NodeId> evolved;
    if (year > 1 && spec.drift_fraction > 0.0) {
      const std::size_t n_prev = n - spec.growth_per_year;
      const std::size_t count = static_cast<std::size_t>(
          std::llround(spec.drift_fraction * static_cast<double>(n_prev)));
      std::vector<NodeId> existing(n_prev);
      for (std::size_t i = 0; i < n_prev; ++i) existing[i] = static_cast<NodeId>(i);
      rng.shuffle(existing);
      evolved.assign(existing.begin(), existing.begin() + std::min(count, n_prev));
      std::sort(evolved.begin(), evolved.end());
      for (NodeId id : evolved) {
        NodePattern& p = patterns[static_cast<std::size_t>(id)];
        const double dphase = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(36.0, 108.0);
        const double factor = 1.0 + rng.uniform(0.5, 1.2) * spec.drift_magnitude;
        const bool grow = rng.bernoulli(0.5);
        const double dbase = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(20.0, 50.0);
        p.phase += dphase * spec.drift_magnitude;
        p.amp = grow ? p.amp * factor : p.amp / factor;
        p.base = std::max(40.0, p.base + dbase * spec.drift_magnitude);
      }
    }

    GraphSnapshot snap;
    snap.year_index = year;
    snap.node_ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) snap.node_ids[i] = static_cast<NodeId>(i);
    snap.positions.assign(positions.begin(), positions.begin() + n);
    Tensor distances({n, n}, std::numeric_limits<double>::infinity());
    {
      double* d = distances.mutable_data();
      for (std::size_t i = 0; i < n; ++i) {
        d[i * n + i] = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
          const double dx = positions[i][0] - positions[j][0];
          const double dy = positions[i][1] - positions[j][1];
          const double dist = std::sqrt(dx * dx + dy * dy);
          if (dist <= 1.25 * spec.epsilon) {
            d[i * n + j] = dist;
            d[j * n + i] = dist;
          }
        }
      }
    }
    snap.adjacency = build_adjacency(distances, spec.sigma_d, spec.epsilon);

    FlowTensor flows;
    flows.values = Tensor({n, s_total, f_count});
    {
      double* v = flows.values.mutable_data();
      for (std::size_t node = 0; node < n; ++node) {
        const NodePattern& p = patterns[node];
        for (std::size_t t = 0; t < s_total; ++t) {
          const double s = signal_at(p, static_cast<double>(t));
          for (std::size_t f = 0; f < f_count; ++f) {
            const double scale = std::pow(0.4, static_cast<double>(f));
            v[(node * s_total + t) * f_count + f] = s * scale + spec.noise_level * rng.normal();
          }
        }
      }
    }

    // One adjacency-weighted smoothing pass correlates neighboring signals.
    // Each node keeps the dominant share of its own pattern.
    {
      constexpr double kMix = 0.25;
      const std::size_t row_len = s_total * f_count;
      detail::ConstMatMap a(snap.adjacency.data(), static_cast<Eigen::Index>(n),
                            static_cast<Eigen::Index>(n));
      detail::RowMat raw = detail::ConstMatMap(flows.values.data(), static_cast<Eigen::Index>(n),
                                               static_cast<Eigen::Index>(row_len));
      Eigen::VectorXd degree = a.rowwise().sum();
      detail::RowMat mixed = raw + kMix * (a * raw);
      double* v = flows.values.mutable_data();
      for (std::size_t i = 0; i < n; ++i) {
        const double inv = 1.0 / (1.0 + kMix * degree(static_cast<Eigen::Index>(i)));
        for (std::size_t q = 0; q < row_len; ++q) {
          v[i * row_len + q] = std::max(0.0, mixed(static_cast<Eigen::Index>(i),
                                                   static_cast<Eigen::Index>(q)) * inv);
        }
      }
    }

    result.corpus.stream.snapshots.push_back(std::move(snap));
    result.corpus.flows.push_back(std::move(flows));
    result.corpus.drift_labels.push_back(std::move(evolved));
  }

  result.corpus.stream.validate();
  return result;
}

/// Writes the generated corpus in the documented on-disk layout. Rewriting
/// with the same spec and seed is byte-identical.
inline void write_corpus(const SynthResult& result, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);

  auto fmt = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };

  std::ofstream manifest(root / "manifest.txt");
  if (!manifest) throw IoError("write_corpus: cannot write manifest at " + root.string());

  const Corpus& corpus = result.corpus;
  for (std::size_t y = 0; y < corpus.stream.snapshots.size(); ++y) {
    const GraphSnapshot& snap = corpus.stream.snapshots[y];
    const FlowTensor& flows = corpus.flows[y];
    const std::size_t n = snap.node_count();
    manifest << snap.year_index << ',' << n << ',' << flows.steps() << ',' << flows.features()
             << '\n';

    const fs::path ydir = root / ("year_" + std::to_string(snap.year_index));
    fs::create_directories(ydir);

    {
      std::ofstream f(ydir / "nodes.csv");
      f << "global_id,pos_x,pos_y\n";
      for (std::size_t i = 0; i < n; ++i) {
        f << snap.node_ids[i] << ',' << fmt(snap.positions[i][0]) << ','
          << fmt(snap.positions[i][1]) << '\n';
      }
    }
    {
      std::ofstream f(ydir / "distances.csv");
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          const double dx = snap.positions[i][0] - snap.positions[j][0];
          const double dy = snap.positions[i][1] - snap.positions[j][1];
          const double dist = std::sqrt(dx * dx + dy * dy);
          if (dist <= 1.25 * result.spec.epsilon) {
            f << snap.node_ids[i] << ',' << snap.node_ids[j] << ',' << fmt(dist) << '\n';
          }
        }
      }
    }
    {
      std::ofstream f(ydir / "flow.csv");
      const std::size_t row_len = flows.steps() * flows.features();
      const double* v = flows.values.data();
      std::string line;
      for (std::size_t i = 0; i < n; ++i) {
        line.clear();
        for (std::size_t q = 0; q < row_len; ++q) {
          if (q) line += ',';
          line += fmt(v[i * row_len + q]);
        }
        f << line << '\n';
      }
    }
    {
      std::ofstream f(ydir / "evolved.csv");
      for (NodeId id : corpus.drift_labels[y]) f << id << '\n';
    }
  }
}

}  // namespace flowcast
