// Experiment protocols: restart/fold orchestration over the GP, ICM, and
// EMGPR models, original-space metric aggregation, and serialization of the
// results as versioned JSON, an aligned text table, and a batch-size sweep
// CSV for plotting.
#pragma once

#include "emgpr/dataset.hpp"
#include "emgpr/ensemble.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

namespace emgpr {

enum class ModelKind { Gp, Icm, Emgpr };

/// All: score every task on the plain test split.  Primary: score only the
/// first task, conditioning the multi-task models on the remaining tasks'
/// observed values at the test sites as side information.
enum class ScoreMode { All, Primary };

inline std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Gp: return "gp";
    case ModelKind::Icm: return "icm";
    case ModelKind::Emgpr: return "emgpr";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& name) {
  if (name == "gp") return ModelKind::Gp;
  if (name == "icm") return ModelKind::Icm;
  if (name == "emgpr") return ModelKind::Emgpr;
  throw std::invalid_argument("model: expected gp, icm, or emgpr, got '" + name + "'");
}

inline std::string to_string(ScoreMode mode) {
  return mode == ScoreMode::All ? "all" : "primary";
}

inline ScoreMode parse_score_mode(const std::string& name) {
  if (name == "all") return ScoreMode::All;
  if (name == "primary") return ScoreMode::Primary;
  throw std::invalid_argument("score: expected all or primary, got '" + name + "'");
}

inline std::string to_string(LeftoverPolicy policy) {
  return policy == LeftoverPolicy::Distribute ? "distribute" : "drop";
}

struct ExperimentConfig {
  ModelKind model = ModelKind::Emgpr;
  bool ensemble = false;           // mini-batch ensemble (EMGPR only)
  Index batch_size = 0;            // ensemble N0; 0 selects tasks^2
  LeftoverPolicy leftover_policy = LeftoverPolicy::Distribute;
  Index rank = 1;                  // EMGPR weight rank / ICM R1
  bool log_transform = false;
  int restarts = 1;
  int folds = 1;                   // 1 uses the given split; k >= 2 pools and cross-validates
  std::uint64_t seed = 0;
  double init_perturbation = 0.25; // lognormal sigma applied to alpha0/sigma0 on restarts > 0
  ScoreMode score = ScoreMode::All;
  bool include_timing = true;      // timing blocks vary run to run; drop them for byte comparisons
  int max_iterations = 120;
  unsigned threads = 0;
  double baseline_seconds = 0.0;   // no-transfer fit time for normalized-time reporting

  void validate() const {
    if (restarts < 1) throw std::invalid_argument("restarts: must be at least 1");
    if (folds < 1) throw std::invalid_argument("folds: must be at least 1");
    if (rank < 1) throw std::invalid_argument("rank: must be at least 1");
    if (batch_size < 0) throw std::invalid_argument("batch_size: must be non-negative");
    if (!(init_perturbation >= 0.0))
      throw std::invalid_argument("init_perturbation: must be non-negative");
    if (max_iterations < 1) throw std::invalid_argument("max_iterations: must be at least 1");
    if (ensemble && model != ModelKind::Emgpr)
      throw std::invalid_argument("ensemble: only supported with model=emgpr");
    if (!(baseline_seconds >= 0.0))
      throw std::invalid_argument("baseline_seconds: must be non-negative");
  }
};

struct RestartRecord {
  std::vector<double> mae;  // per scored task, fold-averaged
  std::vector<double> mse;
  double overall_mae = 0.0;
  double overall_mse = 0.0;
  double step1_seconds = 0.0;
  double step2_seconds = 0.0;
  double predict_seconds = 0.0;

  double fit_seconds() const { return step1_seconds + step2_seconds; }
};

struct ExperimentReport {
  ExperimentConfig config;
  Index resolved_batch_size = 0;  // actual N0 (0 when not an ensemble run)
  std::vector<std::string> task_names;  // scored tasks
  std::vector<RestartRecord> restarts;

  // Aggregates over restarts (population standard deviation).
  std::vector<double> mae_mean, mae_sd, mse_mean, mse_sd;
  double overall_mae_mean = 0.0, overall_mae_sd = 0.0;
  double overall_mse_mean = 0.0, overall_mse_sd = 0.0;
  double fit_seconds_mean = 0.0, step2_seconds_mean = 0.0, predict_seconds_mean = 0.0;

  std::string to_json() const;
  std::string to_table() const;
};

namespace detail {

inline double mean_of(const std::vector<double>& values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

inline double sd_of(const std::vector<double>& values) {
  const double mean = mean_of(values);
  double sum = 0.0;
  for (double v : values) sum += (v - mean) * (v - mean);
  return std::sqrt(sum / static_cast<double>(values.size()));
}

inline Matrix vstack(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

/// One train/test pair of a cross-validation (or the given split verbatim).
struct FoldSplit {
  Dataset train;
  Dataset test;
};

inline std::vector<FoldSplit> make_folds(const Dataset& train, const Dataset& test,
                                         const ExperimentConfig& config) {
  if (config.folds == 1) return {FoldSplit{train, test}};

  // Pool both splits and deal the shuffled rows round-robin into k folds.
  Dataset pool = train;
  pool.X = vstack(train.X, test.X);
  pool.Y = vstack(train.Y, test.Y);
  const Index n = pool.samples();
  if (n < static_cast<Index>(config.folds))
    throw std::invalid_argument("folds: more folds than pooled samples");

  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(derive_seed(config.seed, 0xF01D5u));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<FoldSplit> splits;
  for (int f = 0; f < config.folds; ++f) {
    std::vector<Index> test_rows, train_rows;
    for (std::size_t i = 0; i < order.size(); ++i) {
      (static_cast<int>(i) % config.folds == f ? test_rows : train_rows).push_back(order[i]);
    }
    FoldSplit split;
    split.train = pool;
    split.test = pool;
    split.train.X = select_rows(pool.X, train_rows);
    split.train.Y = select_rows(pool.Y, train_rows);
    split.test.X = select_rows(pool.X, test_rows);
    split.test.Y = select_rows(pool.Y, test_rows);
    splits.push_back(std::move(split));
  }
  return splits;
}

/// Per-task initializations for one restart: the base initialization for
/// restart 0, lognormal-perturbed alpha0/sigma0 afterwards.  Draws come in a
/// fixed order so the schedule cannot depend on threading.
inline std::vector<LatentProcessParams> restart_inits(Index tasks, int restart,
                                                      const ExperimentConfig& config) {
  std::vector<LatentProcessParams> inits(static_cast<std::size_t>(tasks),
                                         LatentProcessParams::default_init());
  if (restart == 0) return inits;
  std::mt19937_64 rng(derive_seed(config.seed, 0xA110u + static_cast<std::uint64_t>(restart)));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (LatentProcessParams& init : inits) {
    init.kernel.lengthscales *= std::exp(config.init_perturbation * normal(rng));
    init.noise_std *= std::exp(config.init_perturbation * normal(rng));
  }
  return inits;
}

struct FittedModels {
  std::optional<EmgprModel> single;
  std::optional<EnsembleModel> ensemble;
};

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

/// Runs the configured protocol: for each restart, fit on the (fold) training
/// split, predict, and score in the original data space; then aggregate
/// means and population standard deviations over restarts.
inline ExperimentReport run_experiment(const Dataset& train, const Dataset& test,
                                       const ExperimentConfig& config) {
  config.validate();
  const Index tasks = train.task_count();
  if (tasks == 0 || train.samples() == 0)
    throw std::invalid_argument("run_experiment: empty training data");
  if (test.task_count() != tasks)
    throw std::invalid_argument("run_experiment: train and test task counts differ");

  ExperimentReport report;
  report.config = config;
  if (config.ensemble)
    report.resolved_batch_size = config.batch_size > 0 ? config.batch_size : tasks * tasks;
  if (config.score == ScoreMode::Primary) {
    report.task_names = {train.task_names.empty() ? std::string("task1") : train.task_names[0]};
  } else {
    report.task_names = train.task_names;
    if (report.task_names.empty())
      for (Index d = 0; d < tasks; ++d) report.task_names.push_back("task" + std::to_string(d + 1));
  }

  const std::vector<detail::FoldSplit> splits = detail::make_folds(train, test, config);
  const Index scored = static_cast<Index>(report.task_names.size());

  for (int r = 0; r < config.restarts; ++r) {
    const std::vector<LatentProcessParams> inits = detail::restart_inits(tasks, r, config);

    EmgprConfig base;
    base.task_fit.max_iterations = config.max_iterations;
    base.step2_max_iterations = config.max_iterations;
    base.threads = config.threads;
    base.rank = config.rank;
    base.seed = derive_seed(config.seed, 0x1C00u + static_cast<std::uint64_t>(r));

    RestartRecord record;
    record.mae.assign(static_cast<std::size_t>(scored), 0.0);
    record.mse.assign(static_cast<std::size_t>(scored), 0.0);

    for (const detail::FoldSplit& split : splits) {
      const PreprocessedData prep = preprocess(split.train, split.test, config.log_transform);
      const Matrix& x = prep.train.X;
      const Matrix& y = prep.train.Y;

      detail::FittedModels fitted;
      auto tick = std::chrono::steady_clock::now();
      if (config.model == ModelKind::Icm) {
        // ICM learns kernel, weights, and noise jointly; attribute the whole
        // fit to step 2 since there is no separate per-task stage.
        fitted.single = fit_icm(x, y, config.rank, base, inits[0]);
        record.step2_seconds += detail::seconds_since(tick);
      } else {
        const std::vector<LatentProcessParams> params =
            fit_step1(x, y, inits, base.task_fit, base.threads);
        record.step1_seconds += detail::seconds_since(tick);
        tick = std::chrono::steady_clock::now();
        if (config.model == ModelKind::Gp) {
          EmgprConfig gp_config = base;
          gp_config.skip_step2 = true;
          fitted.single = fit_from_step1(x, y, params, gp_config);
        } else if (config.ensemble) {
          EnsembleConfig ensemble_config;
          ensemble_config.batch_size = config.batch_size;
          ensemble_config.leftover_policy = config.leftover_policy;
          ensemble_config.base = base;
          fitted.ensemble = fit_ensemble_from_step1(x, y, params, ensemble_config);
        } else {
          fitted.single = fit_from_step1(x, y, params, base);
        }
        record.step2_seconds += detail::seconds_since(tick);
      }

      tick = std::chrono::steady_clock::now();
      Matrix mean;
      if (config.score == ScoreMode::Primary) {
        // Side information: every secondary task is also observed at the test
        // sites; the primary task is observed on the training split only.
        if (fitted.ensemble.has_value()) {
          std::vector<TaskObservations> extra(static_cast<std::size_t>(tasks));
          for (Index d = 0; d < tasks; ++d) {
            extra[static_cast<std::size_t>(d)].X = Matrix(0, x.cols());
            extra[static_cast<std::size_t>(d)].y = Vector(0);
          }
          for (Index d = 1; d < tasks; ++d) {
            extra[static_cast<std::size_t>(d)].X = prep.test.X;
            extra[static_cast<std::size_t>(d)].y = prep.test.Y.col(d);
          }
          mean = predict_ensemble_conditioned(*fitted.ensemble, extra, prep.test.X, false,
                                              config.threads)
                     .mean;
        } else {
          std::vector<TaskObservations> observations(static_cast<std::size_t>(tasks));
          observations[0].X = x;
          observations[0].y = y.col(0);
          for (Index d = 1; d < tasks; ++d) {
            observations[static_cast<std::size_t>(d)].X = detail::vstack(x, prep.test.X);
            observations[static_cast<std::size_t>(d)].y =
                detail::vstack(y.col(d), prep.test.Y.col(d));
          }
          mean = predict_conditioned(*fitted.single, observations, prep.test.X).mean;
        }
        mean = mean.col(0).eval();
      } else if (fitted.ensemble.has_value()) {
        mean = predict_ensemble(*fitted.ensemble, prep.test.X, false, config.threads).mean;
      } else {
        mean = predict(*fitted.single, prep.test.X).mean;
      }
      record.predict_seconds += detail::seconds_since(tick);

      const Matrix truth = config.score == ScoreMode::Primary
                               ? Matrix(split.test.Y.col(0))
                               : split.test.Y;
      const std::vector<NormalizationRecord> records =
          config.score == ScoreMode::Primary
              ? std::vector<NormalizationRecord>{prep.records[0]}
              : prep.records;
      const Metrics metrics = evaluate(mean, truth, records);
      for (Index t = 0; t < scored; ++t) {
        record.mae[static_cast<std::size_t>(t)] +=
            metrics.per_task[static_cast<std::size_t>(t)].mae / static_cast<double>(splits.size());
        record.mse[static_cast<std::size_t>(t)] +=
            metrics.per_task[static_cast<std::size_t>(t)].mse / static_cast<double>(splits.size());
      }
      record.overall_mae += metrics.overall_mae / static_cast<double>(splits.size());
      record.overall_mse += metrics.overall_mse / static_cast<double>(splits.size());
    }
    report.restarts.push_back(std::move(record));
  }

  // Aggregate over restarts.
  auto collect = [&](auto&& get) {
    std::vector<double> values;
    for (const RestartRecord& r : report.restarts) values.push_back(get(r));
    return values;
  };
  for (Index t = 0; t < scored; ++t) {
    const auto maes = collect([&](const RestartRecord& r) {
      return r.mae[static_cast<std::size_t>(t)];
    });
    const auto mses = collect([&](const RestartRecord& r) {
      return r.mse[static_cast<std::size_t>(t)];
    });
    report.mae_mean.push_back(detail::mean_of(maes));
    report.mae_sd.push_back(detail::sd_of(maes));
    report.mse_mean.push_back(detail::mean_of(mses));
    report.mse_sd.push_back(detail::sd_of(mses));
  }
  const auto overall_mae = collect([](const RestartRecord& r) { return r.overall_mae; });
  const auto overall_mse = collect([](const RestartRecord& r) { return r.overall_mse; });
  report.overall_mae_mean = detail::mean_of(overall_mae);
  report.overall_mae_sd = detail::sd_of(overall_mae);
  report.overall_mse_mean = detail::mean_of(overall_mse);
  report.overall_mse_sd = detail::sd_of(overall_mse);
  report.fit_seconds_mean =
      detail::mean_of(collect([](const RestartRecord& r) { return r.fit_seconds(); }));
  report.step2_seconds_mean =
      detail::mean_of(collect([](const RestartRecord& r) { return r.step2_seconds; }));
  report.predict_seconds_mean =
      detail::mean_of(collect([](const RestartRecord& r) { return r.predict_seconds; }));
  return report;
}

inline std::string ExperimentReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  nlohmann::ordered_json cfg;
  cfg["model"] = to_string(config.model);
  cfg["ensemble"] = config.ensemble;
  cfg["batch_size"] = resolved_batch_size;
  cfg["leftover_policy"] = to_string(config.leftover_policy);
  cfg["rank"] = config.rank;
  cfg["log_transform"] = config.log_transform;
  cfg["restarts"] = config.restarts;
  cfg["folds"] = config.folds;
  cfg["seed"] = config.seed;
  cfg["init_perturbation"] = config.init_perturbation;
  cfg["score"] = to_string(config.score);
  cfg["max_iterations"] = config.max_iterations;
  cfg["normalization"] = "train-statistics";
  cfg["sd_convention"] = "population";
  j["config"] = std::move(cfg);
  j["tasks"] = task_names;

  nlohmann::ordered_json restart_array = nlohmann::ordered_json::array();
  for (const RestartRecord& r : restarts) {
    nlohmann::ordered_json entry;
    entry["mae"] = r.mae;
    entry["mse"] = r.mse;
    entry["overall_mae"] = r.overall_mae;
    entry["overall_mse"] = r.overall_mse;
    restart_array.push_back(std::move(entry));
  }
  j["restarts"] = std::move(restart_array);

  nlohmann::ordered_json agg;
  agg["mae_mean"] = mae_mean;
  agg["mae_sd"] = mae_sd;
  agg["mse_mean"] = mse_mean;
  agg["mse_sd"] = mse_sd;
  agg["overall_mae_mean"] = overall_mae_mean;
  agg["overall_mae_sd"] = overall_mae_sd;
  agg["overall_mse_mean"] = overall_mse_mean;
  agg["overall_mse_sd"] = overall_mse_sd;
  j["aggregate"] = std::move(agg);

  if (config.include_timing) {
    nlohmann::ordered_json timing;
    nlohmann::ordered_json per_restart = nlohmann::ordered_json::array();
    for (const RestartRecord& r : restarts) {
      nlohmann::ordered_json entry;
      entry["step1_seconds"] = r.step1_seconds;
      entry["step2_seconds"] = r.step2_seconds;
      entry["predict_seconds"] = r.predict_seconds;
      per_restart.push_back(std::move(entry));
    }
    timing["per_restart"] = std::move(per_restart);
    timing["fit_seconds_mean"] = fit_seconds_mean;
    timing["step2_seconds_mean"] = step2_seconds_mean;
    timing["predict_seconds_mean"] = predict_seconds_mean;
    if (config.baseline_seconds > 0.0) {
      timing["baseline_seconds"] = config.baseline_seconds;
      timing["normalized_fit_time"] = fit_seconds_mean / config.baseline_seconds;
    }
    j["timing"] = std::move(timing);
  }
  return j.dump(2) + "\n";
}

inline std::string ExperimentReport::to_table() const {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line,
                "model=%s%s rank=%d restarts=%d folds=%d seed=%llu log=%s score=%s\n",
                to_string(config.model).c_str(),
                config.ensemble
                    ? (" ensemble(N0=" + std::to_string(resolved_batch_size) + ")").c_str()
                    : "",
                static_cast<int>(config.rank), config.restarts, config.folds,
                static_cast<unsigned long long>(config.seed), config.log_transform ? "yes" : "no",
                to_string(config.score).c_str());
  out += line;
  std::snprintf(line, sizeof line, "%-10s %12s %10s %12s %10s\n", "task", "MAE(mean)", "MAE(sd)",
                "MSE(mean)", "MSE(sd)");
  out += line;
  for (std::size_t t = 0; t < task_names.size(); ++t) {
    std::snprintf(line, sizeof line, "%-10s %12.4f %10.4f %12.4f %10.4f\n", task_names[t].c_str(),
                  mae_mean[t], mae_sd[t], mse_mean[t], mse_sd[t]);
    out += line;
  }
  std::snprintf(line, sizeof line, "%-10s %12.4f %10.4f %12.4f %10.4f\n", "overall",
                overall_mae_mean, overall_mae_sd, overall_mse_mean, overall_mse_sd);
  out += line;
  if (config.include_timing) {
    std::snprintf(line, sizeof line,
                  "fit %.2fs (step2 %.2fs), predict %.2fs per restart\n", fit_seconds_mean,
                  step2_seconds_mean, predict_seconds_mean);
    out += line;
    if (config.baseline_seconds > 0.0) {
      std::snprintf(line, sizeof line, "normalized fit time %.3f (baseline %.2fs)\n",
                    fit_seconds_mean / config.baseline_seconds, config.baseline_seconds);
      out += line;
    }
  }
  return out;
}

struct SweepRow {
  Index batch_size = 0;
  std::string task;
  double mae_mean = 0.0;
  double mae_sd = 0.0;
};

/// Repeats the experiment for each ensemble batch size and collects per-task
/// and overall MAE rows (the Figure-style batch-size sweep).
inline std::vector<SweepRow> sweep(const Dataset& train, const Dataset& test,
                                   ExperimentConfig config, const std::vector<Index>& batch_sizes) {
  if (batch_sizes.empty()) throw std::invalid_argument("sweep: no batch sizes given");
  config.model = ModelKind::Emgpr;
  config.ensemble = true;
  std::vector<SweepRow> rows;
  for (Index n0 : batch_sizes) {
    config.batch_size = n0;
    const ExperimentReport report = run_experiment(train, test, config);
    for (std::size_t t = 0; t < report.task_names.size(); ++t)
      rows.push_back({n0, report.task_names[t], report.mae_mean[t], report.mae_sd[t]});
    rows.push_back({n0, "overall", report.overall_mae_mean, report.overall_mae_sd});
  }
  return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream file(path);
  if (!file) throw std::invalid_argument("write_sweep_csv: cannot open '" + path + "'");
  file.precision(17);
  file << "N0,task,MAE_mean,MAE_sd\n";
  for (const SweepRow& row : rows)
    file << row.batch_size << ',' << row.task << ',' << row.mae_mean << ',' << row.mae_sd << '\n';
}

}  // namespace emgpr
