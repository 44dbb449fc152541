#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "flowcast/trainer.hpp"

namespace flowcast {

struct YearReportRow {
  std::string strategy;
  int year = 0;
  YearMetrics metrics;
  double total_seconds = 0.0;
  double seconds_per_epoch = 0.0;
  int epochs = 0;
  std::size_t trained_nodes = 0;
  bool carried = false;
};

inline std::vector<YearReportRow> report_rows(const std::string& label,
                                              std::span<const StrategyYearResult> results) {
  std::vector<YearReportRow> rows;
  rows.reserve(results.size());
  for (const StrategyYearResult& r : results) {
    YearReportRow row;
    row.strategy = label;
    row.year = r.year_index;
    row.metrics = r.test_metrics;
    row.total_seconds = r.strategy_seconds();
    row.seconds_per_epoch = r.outcome.seconds_per_epoch;
    row.epochs = r.outcome.epochs_run;
    row.trained_nodes = r.outcome.trained_node_count;
    row.carried = r.outcome.carried_forward;
    rows.push_back(row);
  }
  return rows;
}

/// Multi-year averages: arithmetic mean of per-year metric rows; total time
/// is the sum, per-epoch time averages over years that actually trained.
struct AveragedReport {
  YearMetrics metrics;
  double total_seconds = 0.0;
  double avg_epoch_seconds = 0.0;
};

namespace detail_report {

inline HorizonMetrics average_horizon(std::span<const YearReportRow> rows,
                                      HorizonMetrics YearMetrics::*member) {
  HorizonMetrics out;
  double mape_sum = 0.0;
  std::size_t mape_n = 0;
  for (const YearReportRow& r : rows) {
    const HorizonMetrics& h = r.metrics.*member;
    out.mae += h.mae;
    out.rmse += h.rmse;
    if (h.mape) {
      mape_sum += *h.mape;
      ++mape_n;
    }
  }
  const double n = static_cast<double>(rows.size());
  out.mae /= n;
  out.rmse /= n;
  if (mape_n == rows.size() && mape_n > 0) out.mape = mape_sum / static_cast<double>(mape_n);
  return out;
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "nan"; }

}  // namespace detail_report

inline AveragedReport average_rows(std::span<const YearReportRow> rows) {
  if (rows.empty()) throw ValidationError("average_rows: no rows");
  AveragedReport avg;
  avg.metrics.h15 = detail_report::average_horizon(rows, &YearMetrics::h15);
  avg.metrics.h30 = detail_report::average_horizon(rows, &YearMetrics::h30);
  avg.metrics.h60 = detail_report::average_horizon(rows, &YearMetrics::h60);
  avg.metrics.overall = detail_report::average_horizon(rows, &YearMetrics::overall);
  std::size_t trained_years = 0;
  for (const YearReportRow& r : rows) {
    avg.total_seconds += r.total_seconds;
    if (r.epochs > 0) {
      avg.avg_epoch_seconds += r.seconds_per_epoch;
      ++trained_years;
    }
  }
  if (trained_years > 0) avg.avg_epoch_seconds /= static_cast<double>(trained_years);
  return avg;
}

inline const char* kYearlyHeader =
    "strategy,year,mae_15,rmse_15,mape_15,mae_30,rmse_30,mape_30,mae_60,rmse_60,mape_60,"
    "mae_all,rmse_all,mape_all,total_seconds,seconds_per_epoch,epochs,trained_nodes,carried";

inline void write_yearly_csv(const std::filesystem::path& path,
                             std::span<const YearReportRow> rows) {
  using detail_report::fmt;
  std::ofstream f(path);
  if (!f) throw IoError("report: cannot write " + path.string());
  f << kYearlyHeader << '\n';
  for (const YearReportRow& r : rows) {
    f << r.strategy << ',' << r.year << ',' << fmt(r.metrics.h15.mae) << ','
      << fmt(r.metrics.h15.rmse) << ',' << fmt(r.metrics.h15.mape) << ','
      << fmt(r.metrics.h30.mae) << ',' << fmt(r.metrics.h30.rmse) << ','
      << fmt(r.metrics.h30.mape) << ',' << fmt(r.metrics.h60.mae) << ','
      << fmt(r.metrics.h60.rmse) << ',' << fmt(r.metrics.h60.mape) << ','
      << fmt(r.metrics.overall.mae) << ',' << fmt(r.metrics.overall.rmse) << ','
      << fmt(r.metrics.overall.mape) << ',' << fmt(r.total_seconds) << ','
      << fmt(r.seconds_per_epoch) << ',' << r.epochs << ',' << r.trained_nodes << ','
      << (r.carried ? 1 : 0) << '\n';
  }
}

/// Summary table: one row per strategy in the benchmark table layout
/// (3 metrics x 3 horizons + total and per-epoch time).
inline void write_summary_csv(const std::filesystem::path& path,
                              std::span<const std::pair<std::string, AveragedReport>> rows) {
  using detail_report::fmt;
  std::ofstream f(path);
  if (!f) throw IoError("report: cannot write " + path.string());
  f << "strategy,mae_15,rmse_15,mape_15,mae_30,rmse_30,mape_30,mae_60,rmse_60,mape_60,"
       "total_seconds,avg_epoch_seconds\n";
  for (const auto& [label, avg] : rows) {
    f << label << ',' << fmt(avg.metrics.h15.mae) << ',' << fmt(avg.metrics.h15.rmse) << ','
      << fmt(avg.metrics.h15.mape) << ',' << fmt(avg.metrics.h30.mae) << ','
      << fmt(avg.metrics.h30.rmse) << ',' << fmt(avg.metrics.h30.mape) << ','
      << fmt(avg.metrics.h60.mae) << ',' << fmt(avg.metrics.h60.rmse) << ','
      << fmt(avg.metrics.h60.mape) << ',' << fmt(avg.total_seconds) << ','
      << fmt(avg.avg_epoch_seconds) << '\n';
  }
}

/// Per-year series files for external plotting, one file per panel:
/// 15/30-minute MAE and RMSE, total time, time per epoch.
inline void write_series_files(const std::filesystem::path& dir,
                               std::span<const YearReportRow> rows) {
  using detail_report::fmt;
  auto write = [&](const std::string& name, auto getter) {
    std::ofstream f(dir / name);
    if (!f) throw IoError("report: cannot write " + (dir / name).string());
    f << "year,value\n";
    for (const YearReportRow& r : rows) f << r.year << ',' << fmt(getter(r)) << '\n';
  };
  write("series_mae_15.csv", [](const YearReportRow& r) { return r.metrics.h15.mae; });
  write("series_rmse_15.csv", [](const YearReportRow& r) { return r.metrics.h15.rmse; });
  write("series_mae_30.csv", [](const YearReportRow& r) { return r.metrics.h30.mae; });
  write("series_rmse_30.csv", [](const YearReportRow& r) { return r.metrics.h30.rmse; });
  write("series_total_time.csv", [](const YearReportRow& r) { return r.total_seconds; });
  write("series_epoch_time.csv", [](const YearReportRow& r) { return r.seconds_per_epoch; });
}

inline void write_report_txt(const std::filesystem::path& path,
                             std::span<const YearReportRow> rows, const AveragedReport& avg) {
  using detail_report::fmt;
  std::ofstream f(path);
  if (!f) throw IoError("report: cannot write " + path.string());
  f << "per-year test metrics (de-normalized)\n";
  f << "year    mae15    rmse15   mae30    rmse30   mae60    rmse60   mae_all  time_s   nodes\n";
  char buf[256];
  for (const YearReportRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-7d %-8.3f %-8.3f %-8.3f %-8.3f %-8.3f %-8.3f %-8.3f %-8.2f %zu%s\n",
                  r.year, r.metrics.h15.mae, r.metrics.h15.rmse, r.metrics.h30.mae,
                  r.metrics.h30.rmse, r.metrics.h60.mae, r.metrics.h60.rmse,
                  r.metrics.overall.mae, r.total_seconds, r.trained_nodes,
                  r.carried ? " (carried)" : "");
    f << buf;
  }
  f << "\naverages over " << rows.size() << " year(s)\n";
  f << "mae15=" << fmt(avg.metrics.h15.mae) << " rmse15=" << fmt(avg.metrics.h15.rmse)
    << " mape15=" << fmt(avg.metrics.h15.mape) << "\n";
  f << "mae30=" << fmt(avg.metrics.h30.mae) << " rmse30=" << fmt(avg.metrics.h30.rmse)
    << " mape30=" << fmt(avg.metrics.h30.mape) << "\n";
  f << "mae60=" << fmt(avg.metrics.h60.mae) << " rmse60=" << fmt(avg.metrics.h60.rmse)
    << " mape60=" << fmt(avg.metrics.h60.mape) << "\n";
  f << "mae_all=" << fmt(avg.metrics.overall.mae) << " total_seconds=" << fmt(avg.total_seconds)
    << " avg_epoch_seconds=" << fmt(avg.avg_epoch_seconds) << "\n";
}

}  // namespace flowcast
