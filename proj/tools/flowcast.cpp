// Command-line front end: corpus synthesis, single-strategy runs, the
// four-strategy benchmark, and the numeric self-check gate.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "flowcast/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace flowcast;

namespace {

std::string resolve_out(std::string out, const std::string& fallback_name) {
  if (!out.empty()) return out;
  if (const char* root = std::getenv("FLOWCAST_OUT")) {
    return (fs::path(root) / fallback_name).string();
  }
  throw ConfigError("no --out given and FLOWCAST_OUT is not set");
}

void add_synth_flags(CLI::App* cmd, SynthSpec& spec) {
  cmd->add_option("--years", spec.years, "Years in the stream");
  cmd->add_option("--nodes", spec.initial_nodes, "Nodes in year 1");
  cmd->add_option("--growth", spec.growth_per_year, "New nodes per year");
  cmd->add_option("--drift", spec.drift_fraction, "Fraction of existing nodes drifting per year");
  cmd->add_option("--noise", spec.noise_level, "Gaussian noise std (flow units)");
  cmd->add_option("--drift-magnitude", spec.drift_magnitude, "Scale on drift deltas");
  cmd->add_option("--steps", spec.steps_per_year, "Timesteps per year (5-minute ticks)");
  cmd->add_option("--features", spec.features, "Measured features per node");
  cmd->add_option("--degree", spec.target_degree, "Target average degree of the geometric graph");
}

void add_hyper_flags(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--lr", cfg.plan.optimizer.lr, "AdamW learning rate");
  cmd->add_option("--weight-decay", cfg.plan.optimizer.weight_decay, "Decoupled weight decay");
  cmd->add_option("--batch", cfg.plan.batch_size, "Minibatch size");
  cmd->add_option("--epochs", cfg.plan.epochs, "Max epochs per year");
  cmd->add_option("--patience", cfg.plan.patience, "Early-stopping patience (epochs)");
  cmd->add_option("--lambda", cfg.plan.lambda, "EWC smoothing weight");
  cmd->add_option("--evolved-fraction", cfg.plan.evolved_fraction,
                  "Top fraction of nodes by JSD retrained as evolved");
  cmd->add_option("--replay-fraction", cfg.plan.replay_fraction,
                  "Bottom fraction of nodes by JSD replayed");
  cmd->add_option("--fisher-samples", cfg.plan.fisher_max_samples,
                  "Max window samples for the Fisher estimate (0 = all)");
  cmd->add_option("--week-steps", cfg.plan.detect.week_steps,
                  "Timesteps per detection slice (default one week)");
  cmd->add_option("--hidden1", cfg.model.c1, "First GCN width");
  cmd->add_option("--hidden2", cfg.model.c2, "Temporal conv channels");
  cmd->add_option("--hidden3", cfg.model.c3, "Second GCN width");
  cmd->add_option("--kernel", cfg.model.kernel, "Temporal conv kernel length");
  cmd->add_option("--sigma-d", cfg.load.sigma_d, "Adjacency kernel bandwidth");
  cmd->add_option("--epsilon", cfg.load.epsilon, "Adjacency distance threshold");
  cmd->add_option("--seed", cfg.plan.seed, "Training seed");
  cmd->add_flag("--no-expand,!--expand", cfg.plan.use_expand,
                "Skip new-node pattern fusion (Non-Expand)")
      ->default_val(true);
  cmd->add_flag("--no-detect,!--detect", cfg.plan.use_detect,
                "Skip evolved-node detection (Non-Detect)")
      ->default_val(true);
  cmd->add_flag("--no-replay,!--replay", cfg.plan.use_replay,
                "Skip stable-node replay (Non-Replay)")
      ->default_val(true);
  cmd->add_flag("--no-smooth,!--smooth", cfg.plan.use_smooth,
                "Skip EWC parameter smoothing (Non-Smooth)")
      ->default_val(true);
}

void print_table(const std::vector<std::pair<std::string, AveragedReport>>& table) {
  std::printf("%-14s %8s %8s %8s %8s %8s %8s %10s %10s\n", "strategy", "mae15", "rmse15", "mae30",
              "rmse30", "mae60", "rmse60", "total_s", "epoch_s");
  for (const auto& [label, avg] : table) {
    std::printf("%-14s %8.3f %8.3f %8.3f %8.3f %8.3f %8.3f %10.2f %10.3f\n", label.c_str(),
                avg.metrics.h15.mae, avg.metrics.h15.rmse, avg.metrics.h30.mae,
                avg.metrics.h30.rmse, avg.metrics.h60.mae, avg.metrics.h60.rmse,
                avg.total_seconds, avg.avg_epoch_seconds);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual-learning forecasting engine for streaming traffic networks"};
  app.require_subcommand(1);

  // Desk-scale model defaults for CLI runs; the library's ModelConfig
  // defaults to 64-wide layers, which is slower than needed here.
  RunConfig base;
  base.model.c1 = base.model.c2 = base.model.c3 = 16;

  // synth ---------------------------------------------------------------
  SynthSpec synth_spec;
  std::uint64_t synth_seed = 7;
  std::string synth_out;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic streaming corpus");
  add_synth_flags(synth, synth_spec);
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", synth_out, "Corpus output directory");

  // run -----------------------------------------------------------------
  RunConfig run_cfg = base;
  std::string run_strategy_name = "trafficstream";
  std::string run_from_config;
  CLI::App* run = app.add_subcommand("run", "Run one training strategy year over year");
  run->add_option("--corpus", run_cfg.corpus_dir, "Corpus directory (omit to synthesize)");
  run->add_option("--strategy", run_strategy_name, "static|expansible|retrained|trafficstream");
  run->add_option("--corpus-seed", run_cfg.corpus_seed, "Seed for the synthesized corpus");
  add_synth_flags(run, run_cfg.synth);
  add_hyper_flags(run, run_cfg);
  run->add_option("--out", run_cfg.out_dir, "Run output directory");
  run->add_option("--from-config", run_from_config,
                  "Execute a previously written config.json (other flags ignored)");

  // bench ---------------------------------------------------------------
  RunConfig bench_cfg = base;
  CLI::App* bench = app.add_subcommand("bench", "Run all four strategies and emit one table");
  bench->add_option("--corpus", bench_cfg.corpus_dir, "Corpus directory (omit to synthesize)");
  bench->add_option("--corpus-seed", bench_cfg.corpus_seed, "Seed for the synthesized corpus");
  add_synth_flags(bench, bench_cfg.synth);
  add_hyper_flags(bench, bench_cfg);
  bench->add_option("--out", bench_cfg.out_dir, "Benchmark output directory");

  // selfcheck -----------------------------------------------------------
  CLI::App* selfcheck = app.add_subcommand("selfcheck", "Gradient and divergence release gate");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      synth_out = resolve_out(synth_out, "corpus");
      const SynthResult result = synthesize_stream(synth_spec, synth_seed);
      write_corpus(result, synth_out);
      std::printf("wrote %d-year corpus (%zu -> %zu nodes) to %s\n", synth_spec.years,
                  synth_spec.initial_nodes, synth_spec.final_nodes(), synth_out.c_str());
      return 0;
    }
    if (run->parsed()) {
      if (!run_from_config.empty()) {
        std::ifstream f(run_from_config);
        if (!f) throw IoError("cannot open config " + run_from_config);
        nlohmann::json j;
        f >> j;
        run_cfg = j.get<RunConfig>();
      } else {
        run_cfg.plan.strategy = parse_strategy(run_strategy_name);
        run_cfg.out_dir = resolve_out(run_cfg.out_dir, "run");
      }
      const RunOutput out = execute_run(run_cfg);
      const auto rows = report_rows(to_string(run_cfg.plan.strategy), out.years);
      const AveragedReport avg = average_rows(rows);
      std::printf("%s: %zu year(s), averaged test MAE %.3f (15min %.3f / 30min %.3f / 60min %.3f),"
                  " total %.2f s\n",
                  to_string(run_cfg.plan.strategy).c_str(), out.years.size(),
                  avg.metrics.overall.mae, avg.metrics.h15.mae, avg.metrics.h30.mae,
                  avg.metrics.h60.mae, avg.total_seconds);
      std::printf("artifacts under %s\n", run_cfg.out_dir.c_str());
      return 0;
    }
    if (bench->parsed()) {
      bench_cfg.out_dir = resolve_out(bench_cfg.out_dir, "bench");
      const BenchOutput out = execute_bench(bench_cfg);
      print_table(out.table);
      std::printf("table written to %s\n",
                  (fs::path(bench_cfg.out_dir) / "bench_table.csv").string().c_str());
      return 0;
    }
    if (selfcheck->parsed()) {
      const std::vector<CheckResult> checks = run_selfcheck();
      int failures = 0;
      for (const CheckResult& c : checks) {
        std::printf("[%s] %-32s %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
        if (!c.pass) ++failures;
      }
      std::printf("%zu checks, %d failure(s)\n", checks.size(), failures);
      return failures == 0 ? 0 : 1;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
