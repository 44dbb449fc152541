#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <vector>

#include "flowcast/model.hpp"

namespace flowcast {

struct HistogramConfig {
  std::size_t bins = 50;
  double range = 5.0;    // bins cover [-range, range] of z-scored values
  double floor = 1e-6;   // smoothing added to every bin before renormalizing

  bool operator==(const HistogramConfig&) const = default;
};

/// A per-node distribution of z-scored feature values. Probabilities sum to 1
/// and are strictly positive after smoothing.
struct NodeHistogram {
  HistogramConfig config;
  std::vector<double> probs;
};

/// Histograms pooled z-scores into `config.bins` equal bins over
/// [-range, range]; out-of-range values land in the edge bins.
inline NodeHistogram make_histogram(std::span<const double> zscores, const HistogramConfig& config) {
  if (config.bins == 0 || config.range <= 0.0 || config.floor <= 0.0) {
    throw ValidationError("make_histogram: bins, range and floor must be positive");
  }
  if (zscores.empty()) throw ValidationError("make_histogram: no samples");
  NodeHistogram h;
  h.config = config;
  h.probs.assign(config.bins, 0.0);
  const double width = 2.0 * config.range / static_cast<double>(config.bins);
  for (double z : zscores) {
    auto bin = static_cast<long long>(std::floor((z + config.range) / width));
    bin = std::clamp<long long>(bin, 0, static_cast<long long>(config.bins) - 1);
    h.probs[static_cast<std::size_t>(bin)] += 1.0;
  }
  const double total = static_cast<double>(zscores.size());
  double sum = 0.0;
  for (double& p : h.probs) {
    p = p / total + config.floor;
    sum += p;
  }
  for (double& p : h.probs) p /= sum;
  return h;
}

/// Per-node histograms of features z-scored across the window axis:
/// u[W, N, D] -> one histogram per node. Z-scoring is per (node, feature)
/// over the W windows, std floored at 1e-6; all W*D values pool into the
/// node's histogram.
inline std::vector<NodeHistogram> feature_distribution(const Tensor& u,
                                                       const HistogramConfig& config = {}) {
  if (u.rank() != 3) throw ShapeError("feature_distribution: expected [WxNxD], got " + shape_string(u));
  const std::size_t w = u.dim(0), n = u.dim(1), d = u.dim(2);
  if (w < 2) throw ValidationError("feature_distribution: need at least 2 windows per node");

  std::vector<NodeHistogram> result;
  result.reserve(n);
  std::vector<double> zs(w * d);
  for (std::size_t node = 0; node < n; ++node) {
    for (std::size_t feat = 0; feat < d; ++feat) {
      double mean = 0.0;
      for (std::size_t win = 0; win < w; ++win) mean += u(win, node, feat);
      mean /= static_cast<double>(w);
      double var = 0.0;
      for (std::size_t win = 0; win < w; ++win) {
        const double dv = u(win, node, feat) - mean;
        var += dv * dv;
      }
      const double std_dev = std::max(std::sqrt(var / static_cast<double>(w)), 1e-6);
      for (std::size_t win = 0; win < w; ++win) {
        zs[win * d + feat] = (u(win, node, feat) - mean) / std_dev;
      }
    }
    result.push_back(make_histogram(zs, config));
  }
  return result;
}

inline void check_same_binning(const NodeHistogram& p, const NodeHistogram& q) {
  if (!(p.config == q.config) || p.probs.size() != q.probs.size()) {
    throw ValidationError("divergence: histograms use different binning");
  }
}

/// KL(p || q) in nats; requires floored (strictly positive) histograms.
inline double kl_divergence(const NodeHistogram& p, const NodeHistogram& q) {
  check_same_binning(p, q);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    acc += p.probs[i] * std::log(p.probs[i] / q.probs[i]);
  }
  return acc;
}

/// JSD(p, q) = KL(p||m)/2 + KL(q||m)/2 with m = (p+q)/2; symmetric, in
/// [0, ln 2].
inline double js_divergence(const NodeHistogram& p, const NodeHistogram& q) {
  check_same_binning(p, q);
  NodeHistogram m;
  m.config = p.config;
  m.probs.resize(p.probs.size());
  for (std::size_t i = 0; i < p.probs.size(); ++i) m.probs[i] = 0.5 * (p.probs[i] + q.probs[i]);
  return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m);
}

/// Per-node drift scores between two years, plus the windows they came from.
struct JsdReport {
  std::vector<NodeId> node_ids;  // common nodes, ascending
  std::vector<double> scores;    // aligned with node_ids, each in [0, ln 2]
  int prev_year = 0;
  int curr_year = 0;
  std::size_t week_steps = 0;
};

struct DetectConfig {
  HistogramConfig histogram;
  std::size_t week_steps = kWeekSteps;  // length of each comparison slice
  std::size_t window_stride = kInputSteps;  // non-overlapping model windows
};

namespace detail_detect {

/// Stacks extract_features over strided windows of flows[N, S, F] starting at
/// `begin`: returns [W, N, D]. Runs in chunks to bound tape memory.
inline Tensor window_features(const ModelParams& params, const Tensor& adjacency,
                              const Tensor& flows, std::size_t begin, std::size_t steps,
                              std::size_t stride) {
  const std::size_t n = flows.dim(0), total = flows.dim(1), f = flows.dim(2);
  const std::size_t t_in = params.config.input_steps;
  if (begin + steps > total || steps < t_in) {
    throw ValidationError("score_nodes: window range out of bounds");
  }
  std::vector<std::size_t> starts;
  for (std::size_t s = begin; s + t_in <= begin + steps; s += stride) starts.push_back(s);
  const std::size_t w = starts.size();
  const std::size_t d = params.config.feature_width();

  Tensor out({w, n, d});
  double* o = out.mutable_data();
  const double* src = flows.data();
  constexpr std::size_t kChunk = 32;
  for (std::size_t off = 0; off < w; off += kChunk) {
    const std::size_t b = std::min(kChunk, w - off);
    Tensor x({b, n, t_in, f});
    double* xd = x.mutable_data();
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t s = starts[off + i];
      for (std::size_t node = 0; node < n; ++node) {
        const double* row = src + (node * total + s) * f;
        std::copy(row, row + t_in * f, xd + ((i * n + node) * t_in) * f);
      }
    }
    Tensor feats = extract_features_batch(params, adjacency, x);  // [b, N, D]
    std::copy(feats.data(), feats.data() + feats.size(), o + off * n * d);
  }
  return out;
}

}  // namespace detail_detect

/// Scores pattern drift per node between the last week of the earlier year
/// and the first week of the later year, through the frozen feature extractor
/// of the earlier year's model. Both passes run on the common node set, each
/// against its own year's adjacency restricted to those nodes.
inline JsdReport score_nodes(const ModelParams& params, const GraphSnapshot& prev,
                             const GraphSnapshot& curr, const FlowTensor& flows_prev,
                             const FlowTensor& flows_curr, const DetectConfig& config = {}) {
  if (flows_prev.steps() < config.week_steps || flows_curr.steps() < config.week_steps) {
    throw ValidationError("score_nodes: need at least " + std::to_string(config.week_steps) +
                          " timesteps per year");
  }
  // Common nodes, ascending by id.
  std::vector<NodeId> common;
  {
    std::unordered_map<NodeId, std::size_t> in_curr;
    for (std::size_t i = 0; i < curr.node_ids.size(); ++i) in_curr.emplace(curr.node_ids[i], i);
    for (NodeId id : prev.node_ids) {
      if (in_curr.count(id)) common.push_back(id);
    }
    std::sort(common.begin(), common.end());
  }
  if (common.empty()) throw ValidationError("score_nodes: no common nodes between years");

  auto positions_of = [&](const GraphSnapshot& snap) {
    std::unordered_map<NodeId, std::size_t> map;
    for (std::size_t i = 0; i < snap.node_ids.size(); ++i) map.emplace(snap.node_ids[i], i);
    std::vector<std::size_t> pos;
    pos.reserve(common.size());
    for (NodeId id : common) pos.push_back(map.at(id));
    return pos;
  };
  const std::vector<std::size_t> prev_pos = positions_of(prev);
  const std::vector<std::size_t> curr_pos = positions_of(curr);

  const Tensor a_prev = restrict_adjacency(prev.adjacency, prev_pos);
  const Tensor a_curr = restrict_adjacency(curr.adjacency, curr_pos);
  const Tensor x_prev = restrict_rows(flows_prev.values, prev_pos);
  const Tensor x_curr = restrict_rows(flows_curr.values, curr_pos);

  const std::size_t last_week_begin = flows_prev.steps() - config.week_steps;
  Tensor u_prev = detail_detect::window_features(params, a_prev, x_prev, last_week_begin,
                                                 config.week_steps, config.window_stride);
  Tensor u_curr = detail_detect::window_features(params, a_curr, x_curr, 0, config.week_steps,
                                                 config.window_stride);

  const std::vector<NodeHistogram> h_prev = feature_distribution(u_prev, config.histogram);
  const std::vector<NodeHistogram> h_curr = feature_distribution(u_curr, config.histogram);

  JsdReport report;
  report.node_ids = common;
  report.prev_year = prev.year_index;
  report.curr_year = curr.year_index;
  report.week_steps = config.week_steps;
  report.scores.reserve(common.size());
  for (std::size_t i = 0; i < common.size(); ++i) {
    report.scores.push_back(js_divergence(h_curr[i], h_prev[i]));
  }
  return report;
}

namespace detail_detect {

inline std::vector<NodeId> select_by_score(const JsdReport& report, double fraction, bool highest) {
  if (fraction <= 0.0 || fraction > 1.0) {
    throw ValidationError("select: fraction must be in (0, 1]");
  }
  const std::size_t n = report.node_ids.size();
  const std::size_t count = std::min(
      n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (report.scores[a] != report.scores[b]) {
      return highest ? report.scores[a] > report.scores[b] : report.scores[a] < report.scores[b];
    }
    return report.node_ids[a] < report.node_ids[b];  // tie-break: ascending id
  });
  std::vector<NodeId> ids;
  ids.reserve(count);
  for (std::size_t i = 0; i < count; ++i) ids.push_back(report.node_ids[order[i]]);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace detail_detect

/// ceil(fraction * N) nodes with the highest JSD scores, ties broken by
/// ascending node id.
inline std::vector<NodeId> select_evolved(const JsdReport& report, double fraction = 0.05) {
  return detail_detect::select_by_score(report, fraction, true);
}

/// ceil(fraction * N) nodes with the lowest JSD scores (the most stable),
/// ties broken by ascending node id.
inline std::vector<NodeId> select_replay(const JsdReport& report, double fraction = 0.10) {
  return detail_detect::select_by_score(report, fraction, false);
}

inline void write_jsd_report(const JsdReport& report, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("write_jsd_report: cannot write " + path.string());
  f << "node_id,score\n";
  char buf[64];
  for (std::size_t i = 0; i < report.node_ids.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.12g", report.scores[i]);
    f << report.node_ids[i] << ',' << buf << '\n';
  }
}

}  // namespace flowcast
