#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "flowcast/tensor.hpp"

namespace flowcast {

using NodeId = std::int64_t;

/// One year of the expanding network: node identities, Gaussian-kernel
/// adjacency, and (optionally) sensor coordinates.
struct GraphSnapshot {
  int year_index = 0;
  std::vector<NodeId> node_ids;
  Tensor adjacency;  // [N x N], zero diagonal, weights in [0, 1]
  std::vector<std::array<double, 2>> positions;  // may be empty

  std::size_t node_count() const { return node_ids.size(); }

  std::size_t index_of(NodeId id) const {
    for (std::size_t i = 0; i < node_ids.size(); ++i) {
      if (node_ids[i] == id) return i;
    }
    throw LookupError("GraphSnapshot: unknown node id " + std::to_string(id));
  }

  void validate() const {
    const std::size_t n = node_ids.size();
    if (adjacency.rank() != 2 || adjacency.dim(0) != n || adjacency.dim(1) != n) {
      throw ValidationError("GraphSnapshot: adjacency " + shape_string(adjacency) +
                            " does not match " + std::to_string(n) + " nodes");
    }
    std::unordered_set<NodeId> seen;
    for (NodeId id : node_ids) {
      if (!seen.insert(id).second) {
        throw ValidationError("GraphSnapshot: duplicate node id " + std::to_string(id));
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (adjacency(i, i) != 0.0) {
        throw ValidationError("GraphSnapshot: nonzero diagonal at node index " + std::to_string(i));
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double w = adjacency(i, j);
        if (w < 0.0 || w > 1.0) {
          throw ValidationError("GraphSnapshot: weight out of [0,1] at (" + std::to_string(i) +
                                "," + std::to_string(j) + ")");
        }
      }
    }
    if (!positions.empty() && positions.size() != n) {
      throw ValidationError("GraphSnapshot: position count does not match node count");
    }
  }
};

/// The year-over-year stream; node sets only grow.
struct StreamingGraph {
  std::vector<GraphSnapshot> snapshots;

  void validate() const {
    for (std::size_t i = 0; i < snapshots.size(); ++i) {
      snapshots[i].validate();
      if (i == 0) continue;
      if (snapshots[i].year_index <= snapshots[i - 1].year_index) {
        throw StreamError("StreamingGraph: year indices must strictly increase");
      }
      std::unordered_set<NodeId> curr(snapshots[i].node_ids.begin(), snapshots[i].node_ids.end());
      for (NodeId id : snapshots[i - 1].node_ids) {
        if (!curr.count(id)) {
          throw StreamError("StreamingGraph: node " + std::to_string(id) + " disappears at year " +
                            std::to_string(snapshots[i].year_index));
        }
      }
    }
  }
};

/// Restriction of a snapshot to a node subset. `kept` holds positions into
/// the parent snapshot, ascending; the restricted adjacency is the parent's
/// principal submatrix at those positions.
struct SubgraphView {
  std::vector<std::size_t> kept;
  std::vector<NodeId> node_ids;
  Tensor adjacency;

  std::size_t node_count() const { return kept.size(); }
};

inline Tensor restrict_adjacency(const Tensor& a, std::span<const std::size_t> kept) {
  const std::size_t n = kept.size();
  Tensor out = Tensor::uninitialized({n, n});
  double* o = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      o[i * n + j] = a(kept[i], kept[j]);
    }
  }
  return out;
}

/// Restricts a [N, ...] tensor to the given rows.
inline Tensor restrict_rows(const Tensor& values, std::span<const std::size_t> kept) {
  if (values.rank() < 1) throw ShapeError("restrict_rows: rank >= 1 required");
  const std::size_t n = values.dim(0);
  const std::size_t row = values.size() / std::max<std::size_t>(n, 1);
  std::vector<std::size_t> shape(values.shape());
  shape[0] = kept.size();
  Tensor out = Tensor::uninitialized(shape);
  double* o = out.mutable_data();
  const double* in = values.data();
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i] >= n) throw LookupError("restrict_rows: row index out of range");
    std::copy(in + kept[i] * row, in + (kept[i] + 1) * row, o + i * row);
  }
  return out;
}

/// A[m,n] = exp(-d^2 / sigma_d^2) when m != n and d <= epsilon, else 0.
/// Distances must be symmetric and nonnegative with a zero diagonal; pairs
/// with no recorded distance can be passed as +infinity.
inline Tensor build_adjacency(const Tensor& distances, double sigma_d, double epsilon) {
  if (distances.rank() != 2 || distances.dim(0) != distances.dim(1)) {
    throw ValidationError("build_adjacency: distances must be square, got " +
                          shape_string(distances));
  }
  if (sigma_d <= 0.0) throw ValidationError("build_adjacency: sigma_d must be positive");
  const std::size_t n = distances.dim(0);
  Tensor out({n, n});
  double* o = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = distances(i, j);
      if (d < 0.0) {
        throw ValidationError("build_adjacency: negative distance at (" + std::to_string(i) + "," +
                              std::to_string(j) + ")");
      }
      if (d != distances(j, i)) {
        throw ValidationError("build_adjacency: asymmetric distances at (" + std::to_string(i) +
                              "," + std::to_string(j) + ")");
      }
      if (i == j) {
        o[i * n + j] = 0.0;
      } else {
        o[i * n + j] = (d <= epsilon) ? std::exp(-(d * d) / (sigma_d * sigma_d)) : 0.0;
      }
    }
  }
  return out;
}

/// Node ids present in `curr` but not in `prev`. Throws if `prev` holds a
/// node missing from `curr` (the stream would not be monotone).
inline std::vector<NodeId> new_nodes(const GraphSnapshot& prev, const GraphSnapshot& curr) {
  std::unordered_set<NodeId> in_curr(curr.node_ids.begin(), curr.node_ids.end());
  for (NodeId id : prev.node_ids) {
    if (!in_curr.count(id)) {
      throw StreamError("new_nodes: node " + std::to_string(id) +
                        " of the earlier snapshot is missing from the later one");
    }
  }
  std::unordered_set<NodeId> in_prev(prev.node_ids.begin(), prev.node_ids.end());
  std::vector<NodeId> added;
  for (NodeId id : curr.node_ids) {
    if (!in_prev.count(id)) added.push_back(id);
  }
  std::sort(added.begin(), added.end());
  return added;
}

/// Seeds plus every node reachable from a seed through <= k edges with
/// nonzero adjacency weight. Seeds are always included, even when isolated.
inline SubgraphView k_hop_subgraph(const GraphSnapshot& snapshot, std::span<const NodeId> seeds,
                                   int k) {
  if (k < 0) throw ValidationError("k_hop_subgraph: k must be >= 0");
  const std::size_t n = snapshot.node_count();
  std::unordered_map<NodeId, std::size_t> position;
  position.reserve(n);
  for (std::size_t i = 0; i < n; ++i) position.emplace(snapshot.node_ids[i], i);

  std::vector<char> visited(n, 0);
  std::deque<std::pair<std::size_t, int>> frontier;
  for (NodeId seed : seeds) {
    auto it = position.find(seed);
    if (it == position.end()) {
      throw LookupError("k_hop_subgraph: seed " + std::to_string(seed) +
                        " is not in the snapshot");
    }
    if (!visited[it->second]) {
      visited[it->second] = 1;
      frontier.emplace_back(it->second, 0);
    }
  }
  while (!frontier.empty()) {
    auto [pos, depth] = frontier.front();
    frontier.pop_front();
    if (depth == k) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (!visited[j] && snapshot.adjacency(pos, j) != 0.0) {
        visited[j] = 1;
        frontier.emplace_back(j, depth + 1);
      }
    }
  }

  SubgraphView view;
  for (std::size_t i = 0; i < n; ++i) {
    if (visited[i]) view.kept.push_back(i);
  }
  view.node_ids.reserve(view.kept.size());
  for (std::size_t pos : view.kept) view.node_ids.push_back(snapshot.node_ids[pos]);
  view.adjacency = restrict_adjacency(snapshot.adjacency, view.kept);
  return view;
}

}  // namespace flowcast
