#pragma once

#include <json.hpp>

#include "flowcast/report.hpp"
#include "flowcast/synth.hpp"

namespace flowcast {

/// Full description of one reproducible run. Serialized as config.json into
/// every run directory; executing that file again reproduces the run
/// (parameters bitwise, metrics to 1e-9).
struct RunConfig {
  std::string corpus_dir;         // when empty the synthetic spec below is used
  SynthSpec synth;
  std::uint64_t corpus_seed = 7;

  TrainPlan plan;
  ModelConfig model;
  LoadOptions load;
  std::string out_dir;
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{
      {"corpus_dir", c.corpus_dir},
      {"corpus_seed", c.corpus_seed},
      {"synth",
       {{"years", c.synth.years},
        {"initial_nodes", c.synth.initial_nodes},
        {"growth_per_year", c.synth.growth_per_year},
        {"drift_fraction", c.synth.drift_fraction},
        {"noise_level", c.synth.noise_level},
        {"drift_magnitude", c.synth.drift_magnitude},
        {"steps_per_year", c.synth.steps_per_year},
        {"features", c.synth.features},
        {"target_degree", c.synth.target_degree}}},
      {"strategy", to_string(c.plan.strategy)},
      {"switches",
       {{"use_expand", c.plan.use_expand},
        {"use_detect", c.plan.use_detect},
        {"use_replay", c.plan.use_replay},
        {"use_smooth", c.plan.use_smooth}}},
      {"hyper",
       {{"epochs", c.plan.epochs},
        {"patience", c.plan.patience},
        {"min_improvement", c.plan.min_improvement},
        {"batch_size", c.plan.batch_size},
        {"lr", c.plan.optimizer.lr},
        {"weight_decay", c.plan.optimizer.weight_decay},
        {"evolved_fraction", c.plan.evolved_fraction},
        {"replay_fraction", c.plan.replay_fraction},
        {"lambda", c.plan.lambda},
        {"fisher_max_samples", c.plan.fisher_max_samples},
        {"week_steps", c.plan.detect.week_steps},
        {"seed", c.plan.seed}}},
      {"model",
       {{"c1", c.model.c1},
        {"c2", c.model.c2},
        {"c3", c.model.c3},
        {"kernel", c.model.kernel},
        {"input_steps", c.model.input_steps},
        {"horizon", c.model.horizon},
        {"features", c.model.features}}},
      {"adjacency", {{"sigma_d", c.load.sigma_d}, {"epsilon", c.load.epsilon}}},
      {"out_dir", c.out_dir}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  c.corpus_dir = j.value("corpus_dir", std::string());
  c.corpus_seed = j.value("corpus_seed", std::uint64_t{7});
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    c.synth.years = s.value("years", c.synth.years);
    c.synth.initial_nodes = s.value("initial_nodes", c.synth.initial_nodes);
    c.synth.growth_per_year = s.value("growth_per_year", c.synth.growth_per_year);
    c.synth.drift_fraction = s.value("drift_fraction", c.synth.drift_fraction);
    c.synth.noise_level = s.value("noise_level", c.synth.noise_level);
    c.synth.drift_magnitude = s.value("drift_magnitude", c.synth.drift_magnitude);
    c.synth.steps_per_year = s.value("steps_per_year", c.synth.steps_per_year);
    c.synth.features = s.value("features", c.synth.features);
    c.synth.target_degree = s.value("target_degree", c.synth.target_degree);
  }
  c.plan.strategy = parse_strategy(j.value("strategy", std::string("trafficstream")));
  if (j.contains("switches")) {
    const auto& s = j.at("switches");
    c.plan.use_expand = s.value("use_expand", true);
    c.plan.use_detect = s.value("use_detect", true);
    c.plan.use_replay = s.value("use_replay", true);
    c.plan.use_smooth = s.value("use_smooth", true);
  }
  if (j.contains("hyper")) {
    const auto& h = j.at("hyper");
    c.plan.epochs = h.value("epochs", c.plan.epochs);
    c.plan.patience = h.value("patience", c.plan.patience);
    c.plan.min_improvement = h.value("min_improvement", c.plan.min_improvement);
    c.plan.batch_size = h.value("batch_size", c.plan.batch_size);
    c.plan.optimizer.lr = h.value("lr", c.plan.optimizer.lr);
    c.plan.optimizer.weight_decay = h.value("weight_decay", c.plan.optimizer.weight_decay);
    c.plan.evolved_fraction = h.value("evolved_fraction", c.plan.evolved_fraction);
    c.plan.replay_fraction = h.value("replay_fraction", c.plan.replay_fraction);
    c.plan.lambda = h.value("lambda", c.plan.lambda);
    c.plan.fisher_max_samples = h.value("fisher_max_samples", c.plan.fisher_max_samples);
    c.plan.detect.week_steps = h.value("week_steps", c.plan.detect.week_steps);
    c.plan.seed = h.value("seed", c.plan.seed);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.c1 = m.value("c1", c.model.c1);
    c.model.c2 = m.value("c2", c.model.c2);
    c.model.c3 = m.value("c3", c.model.c3);
    c.model.kernel = m.value("kernel", c.model.kernel);
    c.model.input_steps = m.value("input_steps", c.model.input_steps);
    c.model.horizon = m.value("horizon", c.model.horizon);
    c.model.features = m.value("features", c.model.features);
  }
  if (j.contains("adjacency")) {
    c.load.sigma_d = j.at("adjacency").value("sigma_d", c.load.sigma_d);
    c.load.epsilon = j.at("adjacency").value("epsilon", c.load.epsilon);
  }
  c.out_dir = j.value("out_dir", std::string());
}

inline Corpus acquire_corpus(const RunConfig& config) {
  if (!config.corpus_dir.empty()) {
    return load_corpus(config.corpus_dir, config.load);
  }
  return synthesize_stream(config.synth, config.corpus_seed).corpus;
}

/// Writes per-year artifacts plus assembled reports under `dir`.
inline void write_run_outputs(const std::filesystem::path& dir, const RunConfig& config,
                              std::span<const StrategyYearResult> results) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    nlohmann::json j = config;
    std::ofstream f(dir / "config.json");
    if (!f) throw IoError("run: cannot write config.json under " + dir.string());
    f << j.dump(2) << '\n';
  }
  const std::string label = to_string(config.plan.strategy);
  for (const StrategyYearResult& r : results) {
    const fs::path ydir = dir / ("year_" + std::to_string(r.year_index));
    fs::create_directories(ydir);
    if (r.outcome.fisher.empty()) {
      save_params(r.outcome.params, ydir / "params.bin");
    } else {
      save_checkpoint(r.outcome.params, r.outcome.fisher, ydir / "params.bin");
    }
    if (r.jsd) write_jsd_report(*r.jsd, ydir / "jsd.csv");
    std::ofstream t(ydir / "timing.txt");
    t << "year=" << r.year_index << '\n'
      << "total_seconds=" << r.outcome.total_seconds << '\n'
      << "fisher_seconds=" << r.fisher_seconds << '\n'
      << "seconds_per_epoch=" << r.outcome.seconds_per_epoch << '\n'
      << "epochs=" << r.outcome.epochs_run << '\n'
      << "trained_nodes=" << r.outcome.trained_node_count << '\n'
      << "carried_forward=" << (r.outcome.carried_forward ? 1 : 0) << '\n';
    if (!r.outcome.note.empty()) t << "note=" << r.outcome.note << '\n';
  }
  const std::vector<YearReportRow> rows = report_rows(label, results);
  write_yearly_csv(dir / "yearly.csv", rows);
  write_series_files(dir, rows);
  const AveragedReport avg = average_rows(rows);
  const std::pair<std::string, AveragedReport> summary[] = {{label, avg}};
  write_summary_csv(dir / "summary.csv", summary);
  write_report_txt(dir / "report.txt", rows, avg);
}

struct RunOutput {
  std::vector<StrategyYearResult> years;
};

/// One strategy, end to end: acquire the corpus, run year over year, write
/// artifacts. Partial results are preserved if evaluation of a later year
/// throws (artifacts are written after the full run; errors propagate).
inline RunOutput execute_run(const RunConfig& config) {
  if (config.out_dir.empty()) throw ConfigError("run: out_dir must be set");
  const Corpus corpus = acquire_corpus(config);
  RunOutput out;
  out.years = run_strategy(config.plan, config.model, corpus);
  write_run_outputs(config.out_dir, config, out.years);
  return out;
}

struct BenchOutput {
  std::vector<std::pair<std::string, AveragedReport>> table;
  std::vector<std::pair<Strategy, std::vector<StrategyYearResult>>> runs;
};

/// Runs all four strategies with identical seeds and hypers; year-1 training
/// (shared by construction) is computed once. Emits one comparison table.
inline BenchOutput execute_bench(RunConfig base) {
  if (base.out_dir.empty()) throw ConfigError("bench: out_dir must be set");
  namespace fs = std::filesystem;
  const Corpus corpus = acquire_corpus(base);

  TrainPlan plan = base.plan;
  plan.strategy = Strategy::kTrafficStream;
  const StrategyYearResult year1 = train_first_year(plan, base.model, corpus, true);

  BenchOutput out;
  for (Strategy s : {Strategy::kStatic, Strategy::kExpansible, Strategy::kRetrained,
                     Strategy::kTrafficStream}) {
    RunConfig cfg = base;
    cfg.plan.strategy = s;
    cfg.out_dir = (fs::path(base.out_dir) / to_string(s)).string();
    std::vector<StrategyYearResult> years = run_strategy(cfg.plan, cfg.model, corpus, &year1);
    write_run_outputs(cfg.out_dir, cfg, years);
    const std::vector<YearReportRow> rows = report_rows(to_string(s), years);
    out.table.emplace_back(to_string(s), average_rows(rows));
    out.runs.emplace_back(s, std::move(years));
  }
  write_summary_csv(fs::path(base.out_dir) / "bench_table.csv", out.table);
  return out;
}

}  // namespace flowcast
