#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowcast/common.hpp"
#include "flowcast/graph.hpp"

namespace flowcast {

constexpr std::size_t kInputSteps = 12;   // T: one hour of 5-minute ticks
constexpr std::size_t kHorizonSteps = 12; // K
constexpr int kTimestepMinutes = 5;
constexpr std::size_t kWeekSteps = 2016;  // 7 days of 5-minute ticks

/// One year of measurements: values[N x T_total x F]. No NaN ever leaves this
/// module; gaps are imputed at load time.
struct FlowTensor {
  Tensor values;
  int timestep_minutes = kTimestepMinutes;

  std::size_t nodes() const { return values.dim(0); }
  std::size_t steps() const { return values.dim(1); }
  std::size_t features() const { return values.dim(2); }
};

struct SplitIndices {
  struct Range {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t length() const { return end - begin; }
  };
  Range train, val, test;
};

/// Train gets floor(0.6 T), val floor(0.2 T), test the remainder.
inline SplitIndices split_6_2_2(std::size_t t_total) {
  const std::size_t min_total = 3 * (kInputSteps + kHorizonSteps);
  if (t_total < min_total) {
    throw ValidationError("split_6_2_2: need at least " + std::to_string(min_total) +
                          " timesteps, got " + std::to_string(t_total));
  }
  const std::size_t train_len = (t_total * 6) / 10;
  const std::size_t val_len = (t_total * 2) / 10;
  SplitIndices s;
  s.train = {0, train_len};
  s.val = {train_len, train_len + val_len};
  s.test = {train_len + val_len, t_total};
  return s;
}

/// A batch of forecasting windows over one graph: inputs[B x N x T x F],
/// targets[B x N x K] (flow feature only). Each window's target immediately
/// follows its input in time.
struct WindowBatch {
  Tensor inputs;
  Tensor targets;

  std::size_t batch() const { return inputs.dim(0); }
};

/// Sliding stride-1 windows over [range.begin, range.end), optionally
/// shuffled by a seeded permutation, grouped into batches (final partial
/// batch kept).
inline std::vector<WindowBatch> make_windows(const Tensor& values, SplitIndices::Range range,
                                             std::size_t t_in = kInputSteps,
                                             std::size_t k_out = kHorizonSteps,
                                             std::size_t batch_size = 128,
                                             std::optional<std::uint64_t> shuffle_seed = {}) {
  if (values.rank() != 3) throw ShapeError("make_windows: values must be [NxTxF]");
  const std::size_t n = values.dim(0), total = values.dim(1), f = values.dim(2);
  if (range.end > total || range.begin > range.end) {
    throw ValidationError("make_windows: range out of bounds");
  }
  const std::size_t span = t_in + k_out;
  if (range.length() < span) {
    throw ValidationError("make_windows: range length " + std::to_string(range.length()) +
                          " shorter than window span " + std::to_string(span));
  }
  if (batch_size == 0) throw ValidationError("make_windows: batch size must be positive");

  std::vector<std::size_t> starts;
  for (std::size_t s = range.begin; s + span <= range.end; ++s) starts.push_back(s);
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    rng.shuffle(starts);
  }

  std::vector<WindowBatch> batches;
  const double* src = values.data();
  for (std::size_t off = 0; off < starts.size(); off += batch_size) {
    const std::size_t b = std::min(batch_size, starts.size() - off);
    WindowBatch wb;
    wb.inputs = Tensor::uninitialized({b, n, t_in, f});
    wb.targets = Tensor::uninitialized({b, n, k_out});
    double* in = wb.inputs.mutable_data();
    double* tg = wb.targets.mutable_data();
    for (std::size_t w = 0; w < b; ++w) {
      const std::size_t s = starts[off + w];
      for (std::size_t node = 0; node < n; ++node) {
        const double* row = src + (node * total + s) * f;
        std::copy(row, row + t_in * f, in + ((w * n + node) * t_in) * f);
        // Targets are the flow feature (feature 0) of the next K steps.
        const double* tgt = src + (node * total + s + t_in) * f;
        for (std::size_t k = 0; k < k_out; ++k) {
          tg[(w * n + node) * k_out + k] = tgt[k * f];
        }
      }
    }
    batches.push_back(std::move(wb));
  }
  return batches;
}

struct Normalization {
  double mean = 0.0;
  double std = 1.0;
};

/// Z-score with statistics pooled over all nodes and features of the
/// training range only. Std floored at 1e-6.
inline std::pair<FlowTensor, Normalization> normalize_flows(const FlowTensor& flows,
                                                            SplitIndices::Range train) {
  if (train.length() == 0) throw ValidationError("normalize_flows: empty training range");
  if (train.end > flows.steps()) throw ValidationError("normalize_flows: range out of bounds");
  const std::size_t n = flows.nodes(), total = flows.steps(), f = flows.features();
  const double* src = flows.values.data();
  double sum = 0.0;
  const std::size_t count = n * train.length() * f;
  for (std::size_t node = 0; node < n; ++node) {
    const double* row = src + (node * total + train.begin) * f;
    for (std::size_t i = 0; i < train.length() * f; ++i) sum += row[i];
  }
  const double mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (std::size_t node = 0; node < n; ++node) {
    const double* row = src + (node * total + train.begin) * f;
    for (std::size_t i = 0; i < train.length() * f; ++i) {
      const double d = row[i] - mean;
      sq += d * d;
    }
  }
  const double std_dev = std::max(std::sqrt(sq / static_cast<double>(count)), 1e-6);

  FlowTensor out;
  out.timestep_minutes = flows.timestep_minutes;
  out.values = Tensor::uninitialized(flows.values.shape());
  double* dst = out.values.mutable_data();
  for (std::size_t i = 0; i < flows.values.size(); ++i) dst[i] = (src[i] - mean) / std_dev;
  return {std::move(out), Normalization{mean, std_dev}};
}

inline double denormalize(double v, const Normalization& norm) { return v * norm.std + norm.mean; }

inline Tensor denormalize(const Tensor& t, const Normalization& norm) {
  Tensor out = Tensor::uninitialized(t.shape());
  double* o = out.mutable_data();
  const double* in = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) o[i] = in[i] * norm.std + norm.mean;
  return out;
}

// ---------------------------------------------------------------------------
// Sensor quality filtering

struct SensorStats {
  NodeId id = 0;
  double missing_ratio = 0.0;
  double location_shift_m = 0.0;
  bool present_in_all_later_years = true;
};

/// Pass/fail per rule: shift < 100 m, missing ratio < 0.15 (both strict),
/// and presence in every later year.
struct SensorQualityReport {
  struct Row {
    SensorStats stats;
    bool pass_shift = false;
    bool pass_missing = false;
    bool pass_presence = false;
    bool kept() const { return pass_shift && pass_missing && pass_presence; }
  };
  std::vector<Row> rows;

  std::vector<NodeId> kept_ids() const {
    std::vector<NodeId> ids;
    for (const Row& r : rows) {
      if (r.kept()) ids.push_back(r.stats.id);
    }
    return ids;
  }
};

constexpr double kMaxLocationShiftMeters = 100.0;
constexpr double kMaxMissingRatio = 0.15;

inline SensorQualityReport filter_sensors(std::span<const SensorStats> stats) {
  SensorQualityReport report;
  report.rows.reserve(stats.size());
  for (const SensorStats& s : stats) {
    SensorQualityReport::Row row;
    row.stats = s;
    row.pass_shift = s.location_shift_m < kMaxLocationShiftMeters;
    row.pass_missing = s.missing_ratio < kMaxMissingRatio;
    row.pass_presence = s.present_in_all_later_years;
    report.rows.push_back(row);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Gap imputation

struct GapEntry {
  std::size_t node = 0;
  std::size_t t = 0;
  std::size_t feature = 0;
};

/// Linear interpolation along time per (node, feature); leading/trailing gaps
/// take the nearest observed value. A fully-missing node is an error (the
/// quality filter should have removed it).
inline FlowTensor impute_missing(FlowTensor flows, std::span<const GapEntry> gaps) {
  if (gaps.empty()) return flows;
  const std::size_t n = flows.nodes(), total = flows.steps(), f = flows.features();
  std::vector<char> gap(n * total * f, 0);
  for (const GapEntry& g : gaps) {
    if (g.node >= n || g.t >= total || g.feature >= f) {
      throw ValidationError("impute_missing: gap entry out of range");
    }
    gap[(g.node * total + g.t) * f + g.feature] = 1;
  }
  double* v = flows.values.mutable_data();
  for (std::size_t node = 0; node < n; ++node) {
    for (std::size_t feat = 0; feat < f; ++feat) {
      auto idx = [&](std::size_t t) { return (node * total + t) * f + feat; };
      std::size_t t = 0;
      bool any_observed = false;
      while (t < total) {
        if (!gap[idx(t)]) {
          any_observed = true;
          ++t;
          continue;
        }
        std::size_t run_end = t;
        while (run_end < total && gap[idx(run_end)]) ++run_end;
        const bool has_left = t > 0;
        const bool has_right = run_end < total;
        if (!has_left && !has_right) break;  // checked below
        if (!has_left) {
          for (std::size_t q = t; q < run_end; ++q) v[idx(q)] = v[idx(run_end)];
        } else if (!has_right) {
          for (std::size_t q = t; q < run_end; ++q) v[idx(q)] = v[idx(t - 1)];
        } else {
          const double left = v[idx(t - 1)];
          const double right = v[idx(run_end)];
          const double denom = static_cast<double>(run_end - (t - 1));
          for (std::size_t q = t; q < run_end; ++q) {
            const double frac = static_cast<double>(q - (t - 1)) / denom;
            v[idx(q)] = left + (right - left) * frac;
          }
        }
        any_observed = true;
        t = run_end;
      }
      bool all_gap = true;
      for (std::size_t q = 0; q < total && all_gap; ++q) all_gap = gap[idx(q)] != 0;
      if (all_gap || !any_observed) {
        throw ValidationError("impute_missing: node " + std::to_string(node) + " feature " +
                              std::to_string(feat) + " has no observed values");
      }
    }
  }
  return flows;
}

// ---------------------------------------------------------------------------
// Corpus I/O
//
// corpus_root/
//   manifest.txt            one line per year: <year_index>,<node_count>,<timesteps>,<features>
//   year_<tau>/
//     nodes.csv             global_id,pos_x,pos_y (header row required)
//     distances.csv         id_a,id_b,distance (symmetric pairs listed once)
//     flow.csv              row r = node r; T*F values per row, feature-fastest
//     missing.csv           optional node_id,t,feature gap triples
//     evolved.csv           optional generator ground-truth drift labels

struct LoadOptions {
  double sigma_d = 10.0;
  double epsilon = 1.0;
};

struct Corpus {
  StreamingGraph stream;
  std::vector<FlowTensor> flows;                  // aligned with stream.snapshots
  std::vector<std::vector<NodeId>> drift_labels;  // empty per year unless recorded
};

namespace detail_io {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& context) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw IoError("corpus: cannot parse number '" + s + "' in " + context);
  }
  return v;
}

inline long long parse_int(const std::string& s, const std::string& context) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw IoError("corpus: cannot parse integer '" + s + "' in " + context);
  }
  return v;
}

inline std::ifstream open_or_throw(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("corpus: cannot open " + p.string());
  return f;
}

}  // namespace detail_io

inline Corpus load_corpus(const std::filesystem::path& root, const LoadOptions& options = {}) {
  namespace fs = std::filesystem;
  using namespace detail_io;

  struct ManifestRow {
    int year;
    std::size_t nodes, steps, features;
  };
  std::vector<ManifestRow> manifest;
  {
    std::ifstream f = open_or_throw(root / "manifest.txt");
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      auto cols = split_csv(line);
      if (cols.size() != 4) throw IoError("corpus: malformed manifest line '" + line + "'");
      manifest.push_back({static_cast<int>(parse_int(cols[0], "manifest")),
                          static_cast<std::size_t>(parse_int(cols[1], "manifest")),
                          static_cast<std::size_t>(parse_int(cols[2], "manifest")),
                          static_cast<std::size_t>(parse_int(cols[3], "manifest"))});
    }
  }
  if (manifest.empty()) throw IoError("corpus: empty manifest at " + root.string());
  std::sort(manifest.begin(), manifest.end(),
            [](const ManifestRow& a, const ManifestRow& b) { return a.year < b.year; });

  Corpus corpus;
  for (const ManifestRow& row : manifest) {
    const fs::path ydir = root / ("year_" + std::to_string(row.year));
    if (!fs::exists(ydir)) {
      throw IoError("corpus: missing directory for year " + std::to_string(row.year));
    }

    GraphSnapshot snap;
    snap.year_index = row.year;
    {
      std::ifstream f = open_or_throw(ydir / "nodes.csv");
      std::string line;
      if (!std::getline(f, line) || split_csv(line).at(0) != "global_id") {
        throw IoError("corpus: nodes.csv for year " + std::to_string(row.year) +
                      " must start with a 'global_id,pos_x,pos_y' header");
      }
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto cols = split_csv(line);
        if (cols.size() != 3) throw IoError("corpus: malformed nodes.csv line '" + line + "'");
        snap.node_ids.push_back(parse_int(cols[0], "nodes.csv"));
        snap.positions.push_back({parse_double(cols[1], "nodes.csv"), parse_double(cols[2], "nodes.csv")});
      }
    }
    if (snap.node_ids.size() != row.nodes) {
      throw IoError("corpus: year " + std::to_string(row.year) + " manifest declares " +
                    std::to_string(row.nodes) + " nodes but nodes.csv has " +
                    std::to_string(snap.node_ids.size()));
    }

    std::unordered_map<NodeId, std::size_t> position;
    for (std::size_t i = 0; i < snap.node_ids.size(); ++i) position.emplace(snap.node_ids[i], i);
    const std::size_t n = snap.node_ids.size();
    const double inf = std::numeric_limits<double>::infinity();
    Tensor distances({n, n}, inf);
    {
      double* d = distances.mutable_data();
      for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 0.0;
      std::ifstream f = open_or_throw(ydir / "distances.csv");
      std::string line;
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto cols = split_csv(line);
        if (cols.size() != 3) throw IoError("corpus: malformed distances.csv line '" + line + "'");
        const NodeId a = parse_int(cols[0], "distances.csv");
        const NodeId b = parse_int(cols[1], "distances.csv");
        const double dist = parse_double(cols[2], "distances.csv");
        auto ia = position.find(a);
        auto ib = position.find(b);
        if (ia == position.end() || ib == position.end()) {
          throw IoError("corpus: distances.csv for year " + std::to_string(row.year) +
                        " references unknown node pair " + cols[0] + "," + cols[1]);
        }
        d[ia->second * n + ib->second] = dist;
        d[ib->second * n + ia->second] = dist;
      }
    }
    snap.adjacency = build_adjacency(distances, options.sigma_d, options.epsilon);

    FlowTensor flows;
    flows.values = Tensor({n, row.steps, row.features});
    {
      std::ifstream f = open_or_throw(ydir / "flow.csv");
      std::string line;
      std::size_t r = 0;
      double* v = flows.values.mutable_data();
      const std::size_t row_len = row.steps * row.features;
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (r >= n) {
          throw IoError("corpus: flow.csv for year " + std::to_string(row.year) +
                        " has more rows than nodes (" + std::to_string(n) + ")");
        }
        auto cols = split_csv(line);
        if (cols.size() != row_len) {
          throw IoError("corpus: flow.csv row " + std::to_string(r) + " for year " +
                        std::to_string(row.year) + " has " + std::to_string(cols.size()) +
                        " values, expected " + std::to_string(row_len));
        }
        for (std::size_t c = 0; c < row_len; ++c) {
          v[r * row_len + c] = parse_double(cols[c], "flow.csv");
        }
        ++r;
      }
      if (r != n) {
        throw IoError("corpus: flow.csv for year " + std::to_string(row.year) + " has " +
                      std::to_string(r) + " rows but the year has " + std::to_string(n) + " nodes");
      }
    }

    std::vector<GapEntry> gaps;
    if (fs::exists(ydir / "missing.csv")) {
      std::ifstream f = open_or_throw(ydir / "missing.csv");
      std::string line;
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto cols = split_csv(line);
        if (cols.size() != 3) throw IoError("corpus: malformed missing.csv line '" + line + "'");
        const NodeId id = parse_int(cols[0], "missing.csv");
        auto it = position.find(id);
        if (it == position.end()) {
          throw IoError("corpus: missing.csv references unknown node " + cols[0]);
        }
        gaps.push_back({it->second, static_cast<std::size_t>(parse_int(cols[1], "missing.csv")),
                        static_cast<std::size_t>(parse_int(cols[2], "missing.csv"))});
      }
    }
    flows = impute_missing(std::move(flows), gaps);

    std::vector<NodeId> labels;
    if (fs::exists(ydir / "evolved.csv")) {
      std::ifstream f = open_or_throw(ydir / "evolved.csv");
      std::string line;
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        labels.push_back(parse_int(split_csv(line).at(0), "evolved.csv"));
      }
    }

    corpus.stream.snapshots.push_back(std::move(snap));
    corpus.flows.push_back(std::move(flows));
    corpus.drift_labels.push_back(std::move(labels));
  }

  corpus.stream.validate();
  return corpus;
}

}  // namespace flowcast
