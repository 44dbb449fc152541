#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "flowcast/tensor.hpp"

namespace flowcast {

/// |truth| below this flow level is excluded from MAPE (percentage error
/// diverges at zero flow).
constexpr double kMapeFloor = 1.0;

/// Streaming accumulator so metrics can be computed over batched
/// de-normalized predictions without materializing them all.
struct MetricAccumulator {
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  std::size_t count = 0;
  double ape_sum = 0.0;
  std::size_t ape_count = 0;

  void add(double pred, double truth, double mape_floor = kMapeFloor) {
    const double d = pred - truth;
    abs_sum += std::abs(d);
    sq_sum += d * d;
    ++count;
    if (std::abs(truth) >= mape_floor) {
      ape_sum += std::abs(d) / std::abs(truth);
      ++ape_count;
    }
  }

  double mae() const { return count ? abs_sum / static_cast<double>(count) : 0.0; }
  double rmse() const { return count ? std::sqrt(sq_sum / static_cast<double>(count)) : 0.0; }
  std::optional<double> mape() const {
    if (ape_count == 0) return std::nullopt;
    return 100.0 * ape_sum / static_cast<double>(ape_count);
  }
};

inline void check_same_shape(const Tensor& pred, const Tensor& truth, const char* what) {
  if (!pred.same_shape(truth)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(pred) + " vs " +
                     shape_string(truth));
  }
}

inline double mae(const Tensor& pred, const Tensor& truth) {
  check_same_shape(pred, truth, "mae");
  MetricAccumulator acc;
  for (std::size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], truth[i]);
  return acc.mae();
}

inline double rmse(const Tensor& pred, const Tensor& truth) {
  check_same_shape(pred, truth, "rmse");
  MetricAccumulator acc;
  for (std::size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], truth[i]);
  return acc.rmse();
}

/// 100 * mean(|pred - truth| / |truth|) over entries with |truth| >= floor.
/// Empty selection (all truths below the floor) signals an undefined metric.
inline std::optional<double> mape(const Tensor& pred, const Tensor& truth,
                                  double floor_abs = kMapeFloor) {
  check_same_shape(pred, truth, "mape");
  MetricAccumulator acc;
  for (std::size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], truth[i], floor_abs);
  return acc.mape();
}

/// Selects forecast column `step - 1` (0-based) of a [..., K] tensor,
/// dropping the last axis: the point-in-time prediction at that horizon.
inline Tensor horizon_slice(const Tensor& y, std::size_t step) {
  if (y.rank() < 1) throw ShapeError("horizon_slice: rank >= 1 required");
  const std::size_t k = y.shape().back();
  if (step < 1 || step > k) {
    throw ShapeError("horizon_slice: step " + std::to_string(step) + " out of horizon " +
                     std::to_string(k));
  }
  std::vector<std::size_t> shape(y.shape().begin(), y.shape().end() - 1);
  if (shape.empty()) shape.push_back(1);
  Tensor out(shape);
  double* o = out.mutable_data();
  const double* in = y.data();
  const std::size_t rows = y.size() / k;
  for (std::size_t r = 0; r < rows; ++r) o[r] = in[r * k + step - 1];
  return out;
}

struct HorizonMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> mape;
};

inline HorizonMetrics to_metrics(const MetricAccumulator& acc) {
  return {acc.mae(), acc.rmse(), acc.mape()};
}

/// Metrics at the paper's horizons (steps 3, 6, 12 = 15/30/60 min at
/// 5-minute ticks) plus all horizons pooled.
struct YearMetrics {
  HorizonMetrics h15, h30, h60, overall;
};

/// Accumulates batched [B, N, K] de-normalized predictions into per-horizon
/// and overall metrics.
struct YearMetricsAccumulator {
  MetricAccumulator a15, a30, a60, all;

  void add_batch(const Tensor& pred, const Tensor& truth, double mape_floor = kMapeFloor) {
    check_same_shape(pred, truth, "metrics");
    const std::size_t k = pred.shape().back();
    if (k < 12) throw ShapeError("metrics: horizon shorter than 12 steps");
    const std::size_t rows = pred.size() / k;
    const double* p = pred.data();
    const double* t = truth.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < k; ++c) {
        const double pv = p[r * k + c];
        const double tv = t[r * k + c];
        all.add(pv, tv, mape_floor);
        if (c == 2) a15.add(pv, tv, mape_floor);
        if (c == 5) a30.add(pv, tv, mape_floor);
        if (c == 11) a60.add(pv, tv, mape_floor);
      }
    }
  }

  YearMetrics finalize() const {
    return {to_metrics(a15), to_metrics(a30), to_metrics(a60), to_metrics(all)};
  }
};

}  // namespace flowcast
