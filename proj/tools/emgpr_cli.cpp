// Command-line entry point: fit/eval/experiment/sweep/synth subcommands over
// the library.  See README.md for usage examples.
#include <emgpr/experiment.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace {

using namespace emgpr;

/// Options shared by the data-driven subcommands.
struct CommonOptions {
  std::string train_path;
  std::string test_path;
  std::string data_dir;
  std::vector<std::string> targets;
  std::string model = "emgpr";
  bool ensemble = false;
  Index batch_size = 0;
  bool strict_partition = false;
  Index rank = 1;
  bool log_transform = false;
  int restarts = 1;
  int folds = 1;
  std::uint64_t seed = 0;
  std::string score = "all";
  bool no_timing = false;
  int max_iterations = 120;
  unsigned threads = 0;
  double baseline_seconds = 0.0;
  std::string out_path;
};

void add_data_options(CLI::App& cmd, CommonOptions& opts, bool needs_test) {
  cmd.add_option("--train", opts.train_path, "Training CSV (header row; inputs are Xloc/Yloc "
                                             "when present, otherwise the first two columns)");
  if (needs_test) cmd.add_option("--test", opts.test_path, "Test CSV (same layout as --train)");
  cmd.add_option("--data-dir", opts.data_dir,
                 "Directory holding jura_prediction.csv and jura_validation.csv");
  cmd.add_option("--targets", opts.targets, "Target columns (default: Cd,Ni,Zn when present, "
                                            "otherwise every non-input column)")
      ->delimiter(',');
}

void add_model_options(CLI::App& cmd, CommonOptions& opts) {
  cmd.add_option("--model", opts.model, "Model: gp, icm, or emgpr")
      ->check(CLI::IsMember({"gp", "icm", "emgpr"}));
  cmd.add_flag("--ensemble", opts.ensemble, "Mini-batch ensemble (emgpr only)");
  cmd.add_option("--batch-size", opts.batch_size, "Ensemble batch size N0 (default: tasks^2)");
  cmd.add_flag("--strict-partition", opts.strict_partition,
               "Drop leftover samples instead of distributing them across batches");
  cmd.add_option("--rank", opts.rank, "Weight rank (EMGPR) or R1 (ICM)");
  cmd.add_flag("--log-transform", opts.log_transform, "Log-transform targets before standardizing");
  cmd.add_option("--seed", opts.seed, "Random seed");
  cmd.add_option("--max-iterations", opts.max_iterations, "Optimizer iteration cap per stage");
  cmd.add_option("--threads", opts.threads, "Worker threads (0 = hardware default)");
  cmd.add_flag("--no-timing", opts.no_timing, "Omit timing from reports (byte-stable output)");
}

void add_experiment_options(CLI::App& cmd, CommonOptions& opts) {
  cmd.add_option("--restarts", opts.restarts, "Number of re-initialized repetitions");
  cmd.add_option("--folds", opts.folds, "Cross-validation folds (1 = use the given split)");
  cmd.add_option("--score", opts.score, "Scoring: all tasks, or primary (first task only, "
                                        "others observed at test sites as side information)")
      ->check(CLI::IsMember({"all", "primary"}));
  cmd.add_option("--baseline-seconds", opts.baseline_seconds,
                 "No-transfer fit time used for normalized-time reporting");
}

std::vector<std::string> header_of(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw std::invalid_argument("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(file, line)) throw std::invalid_argument("'" + path + "' is empty");
  return detail::split_csv_line(line);
}

/// Loads a train/test pair: either --data-dir (Jura layout) or explicit CSV
/// paths with input/target columns resolved from the header.
JuraData load_pair(const CommonOptions& opts, bool needs_test) {
  auto has = [](const std::vector<std::string>& names, const std::string& name) {
    return std::find(names.begin(), names.end(), name) != names.end();
  };
  if (!opts.data_dir.empty()) {
    if (!opts.targets.empty()) return load_jura_directory(opts.data_dir, opts.targets);
    return load_jura_directory(opts.data_dir);
  }
  if (opts.train_path.empty())
    throw std::invalid_argument("need --train (and --test) or --data-dir");
  if (needs_test && opts.test_path.empty()) throw std::invalid_argument("need --test");

  const std::vector<std::string> header = header_of(opts.train_path);
  std::vector<std::string> inputs;
  if (has(header, "Xloc") && has(header, "Yloc")) {
    inputs = {"Xloc", "Yloc"};
  } else {
    if (header.size() < 3)
      throw std::invalid_argument("'" + opts.train_path + "' needs at least three columns");
    inputs = {header[0], header[1]};
  }
  std::vector<std::string> targets = opts.targets;
  if (targets.empty()) {
    if (has(header, "Cd") && has(header, "Ni") && has(header, "Zn")) {
      targets = {"Cd", "Ni", "Zn"};
    } else {
      for (const std::string& name : header)
        if (!has(inputs, name)) targets.push_back(name);
    }
  }
  JuraData data;
  data.train = load_csv(opts.train_path, inputs, targets);
  if (needs_test) data.test = load_csv(opts.test_path, inputs, targets);
  return data;
}

ExperimentConfig to_experiment_config(const CommonOptions& opts) {
  ExperimentConfig config;
  config.model = parse_model_kind(opts.model);
  config.ensemble = opts.ensemble;
  config.batch_size = opts.batch_size;
  config.leftover_policy =
      opts.strict_partition ? LeftoverPolicy::Drop : LeftoverPolicy::Distribute;
  config.rank = opts.rank;
  config.log_transform = opts.log_transform;
  config.restarts = opts.restarts;
  config.folds = opts.folds;
  config.seed = opts.seed;
  config.score = parse_score_mode(opts.score);
  config.include_timing = !opts.no_timing;
  config.max_iterations = opts.max_iterations;
  config.threads = opts.threads;
  config.baseline_seconds = opts.baseline_seconds;
  return config;
}

void emit(const std::string& json, const std::string& out_path, const std::string& table) {
  if (out_path.empty()) {
    std::cout << json;
  } else {
    std::ofstream file(out_path);
    if (!file) throw std::invalid_argument("cannot open '" + out_path + "' for writing");
    file << json;
    if (!table.empty()) std::cout << table;
    std::cerr << "wrote " << out_path << "\n";
  }
}

int run_fit(const CommonOptions& opts) {
  const JuraData data = load_pair(opts, false);
  const PreprocessedData prep =
      preprocess(data.train, data.train, opts.log_transform);  // stats echo only
  const ExperimentConfig config = to_experiment_config(opts);
  config.validate();

  EmgprConfig base;
  base.task_fit.max_iterations = config.max_iterations;
  base.step2_max_iterations = config.max_iterations;
  base.threads = config.threads;
  base.rank = config.rank;
  base.seed = config.seed;

  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["model"] = opts.model;
  j["log_transform"] = opts.log_transform;
  j["seed"] = config.seed;

  auto dump_model = [&](const EmgprModel& model) {
    nlohmann::ordered_json tasks = nlohmann::ordered_json::array();
    for (Index d = 0; d < model.task_count(); ++d) {
      nlohmann::ordered_json entry;
      entry["name"] = d < static_cast<Index>(data.train.task_names.size())
                          ? data.train.task_names[static_cast<std::size_t>(d)]
                          : "task" + std::to_string(d + 1);
      const KernelSpec& kernel = d < static_cast<Index>(model.latent_kernels.size())
                                     ? model.latent_kernels[static_cast<std::size_t>(d)]
                                     : model.latent_kernels.front();
      entry["lengthscales"] = std::vector<double>(
          kernel.lengthscales.data(), kernel.lengthscales.data() + kernel.lengthscales.size());
      entry["noise_std"] = model.noise_std[d];
      tasks.push_back(std::move(entry));
    }
    j["tasks"] = std::move(tasks);
    Matrix b = Matrix::Zero(model.task_count(), model.task_count());
    for (Index q = 0; q < model.weights.term_count(); ++q)
      b += model.weights.coregionalization(q);
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (Index r = 0; r < b.rows(); ++r)
      rows.push_back(std::vector<double>(b.row(r).begin(), b.row(r).end()));
    j["task_covariance"] = std::move(rows);
    j["joint_log_marginal"] = model.joint_log_marginal;
    j["iterations"] = model.fit_iterations;
    j["stop_reason"] = to_string(model.fit_stop);
  };

  const Matrix& x = prep.train.X;
  const Matrix& y = prep.train.Y;
  if (config.model == ModelKind::Icm) {
    dump_model(fit_icm(x, y, config.rank, base));
  } else if (config.model == ModelKind::Gp) {
    base.skip_step2 = true;
    dump_model(fit(x, y, base));
  } else if (config.ensemble) {
    EnsembleConfig ensemble_config;
    ensemble_config.batch_size = config.batch_size;
    ensemble_config.leftover_policy = config.leftover_policy;
    ensemble_config.base = base;
    const EnsembleModel model = fit_ensemble(x, y, ensemble_config);
    nlohmann::ordered_json tasks = nlohmann::ordered_json::array();
    for (Index d = 0; d < model.task_count(); ++d) {
      nlohmann::ordered_json entry;
      entry["name"] = d < static_cast<Index>(data.train.task_names.size())
                          ? data.train.task_names[static_cast<std::size_t>(d)]
                          : "task" + std::to_string(d + 1);
      const KernelSpec& kernel = model.task_params[static_cast<std::size_t>(d)].kernel;
      entry["lengthscales"] = std::vector<double>(
          kernel.lengthscales.data(), kernel.lengthscales.data() + kernel.lengthscales.size());
      entry["noise_std"] = model.task_params[static_cast<std::size_t>(d)].noise_std;
      tasks.push_back(std::move(entry));
    }
    j["tasks"] = std::move(tasks);
    j["members"] = model.plan.batch_count;
    j["batch_size"] = model.plan.batch_size;
  } else {
    dump_model(fit(x, y, base));
  }
  emit(j.dump(2) + "\n", opts.out_path, "");
  return 0;
}

int run_experiment_command(CommonOptions opts, bool single_shot) {
  if (single_shot) {
    opts.restarts = 1;
    opts.folds = 1;
  }
  const JuraData data = load_pair(opts, true);
  const ExperimentReport report = run_experiment(data.train, data.test, to_experiment_config(opts));
  emit(report.to_json(), opts.out_path, report.to_table());
  return 0;
}

int run_sweep(const CommonOptions& opts, std::vector<Index> batch_sizes) {
  if (batch_sizes.empty()) batch_sizes = {9, 18, 27, 36, 45, 54};
  const JuraData data = load_pair(opts, true);
  const std::vector<SweepRow> rows =
      sweep(data.train, data.test, to_experiment_config(opts), batch_sizes);
  if (opts.out_path.empty()) {
    std::cout << "N0,task,MAE_mean,MAE_sd\n";
    for (const SweepRow& row : rows)
      std::cout << row.batch_size << ',' << row.task << ',' << row.mae_mean << ',' << row.mae_sd
                << '\n';
  } else {
    write_sweep_csv(rows, opts.out_path);
    std::cerr << "wrote " << opts.out_path << "\n";
  }
  return 0;
}

struct SynthOptions {
  Index samples = 1000;
  Index tasks = 10;
  Index input_dim = 2;
  std::vector<double> lengthscales;
  double noise = 0.1;
  double rho = -1.0;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  std::string out_train = "synth_train.csv";
  std::string out_test = "synth_test.csv";
  std::string out_latent;
};

int run_synth(const SynthOptions& opts) {
  SyntheticConfig config;
  config.samples = opts.samples;
  config.tasks = opts.tasks;
  config.input_dim = opts.input_dim;
  config.seed = opts.seed;
  config.noise_std = Vector::Constant(opts.tasks, opts.noise);
  if (!opts.lengthscales.empty()) {
    config.lengthscales =
        Eigen::Map<const Vector>(opts.lengthscales.data(),
                                 static_cast<Index>(opts.lengthscales.size()));
    if (config.lengthscales.size() == 1)
      config.lengthscales = Vector::Constant(opts.tasks, opts.lengthscales[0]);
  }
  if (opts.rho >= 0.0) {
    // Equicorrelated mixing: rows of I + g*J, row-normalized, give every task
    // pair latent correlation rho.
    if (opts.rho >= 1.0) throw std::invalid_argument("--rho must lie in [0, 1)");
    const double d = static_cast<double>(opts.tasks);
    const double t = opts.rho / (1.0 - opts.rho);
    const double g = (-1.0 + std::sqrt(1.0 + d * t)) / d;
    Matrix mixing = Matrix::Identity(opts.tasks, opts.tasks) + Matrix::Constant(opts.tasks, opts.tasks, g);
    for (Index r = 0; r < mixing.rows(); ++r) mixing.row(r) /= mixing.row(r).norm();
    config.mixing = mixing;
  }
  const SyntheticData data = generate_synthetic(config);

  const Index test = static_cast<Index>(std::llround(opts.test_fraction *
                                                     static_cast<double>(opts.samples)));
  if (test < 0 || test >= opts.samples)
    throw std::invalid_argument("--test-fraction leaves no training data");
  const Index train = opts.samples - test;

  Dataset split = data.data;
  split.X = data.data.X.topRows(train);
  split.Y = data.data.Y.topRows(train);
  write_csv(split, opts.out_train);
  split.X = data.data.X.bottomRows(test);
  split.Y = data.data.Y.bottomRows(test);
  write_csv(split, opts.out_test);
  if (!opts.out_latent.empty()) {
    Dataset latent = data.data;
    latent.Y = data.latent;
    write_csv(latent, opts.out_latent);
  }
  std::cerr << "wrote " << opts.out_train << " (" << train << " rows), " << opts.out_test << " ("
            << test << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"emgpr: multi-task Gaussian process regression with ensemble weight learning"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::vector<Index> batch_sizes;
  SynthOptions synth;

  CLI::App* fit = app.add_subcommand("fit", "Fit a model and report its parameters");
  add_data_options(*fit, opts, false);
  add_model_options(*fit, opts);
  fit->add_option("--out", opts.out_path, "Write JSON here instead of stdout");

  CLI::App* eval = app.add_subcommand("eval", "Fit once and score on a test split");
  add_data_options(*eval, opts, true);
  add_model_options(*eval, opts);
  eval->add_option("--score", opts.score, "Scoring mode: all or primary")
      ->check(CLI::IsMember({"all", "primary"}));
  eval->add_option("--out", opts.out_path, "Write JSON here instead of stdout");

  CLI::App* experiment =
      app.add_subcommand("experiment", "Restart/fold protocol with aggregate statistics");
  add_data_options(*experiment, opts, true);
  add_model_options(*experiment, opts);
  add_experiment_options(*experiment, opts);
  experiment->add_option("--out", opts.out_path, "Write JSON here instead of stdout");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Ensemble batch-size sweep (CSV output)");
  add_data_options(*sweep_cmd, opts, true);
  add_model_options(*sweep_cmd, opts);
  add_experiment_options(*sweep_cmd, opts);
  sweep_cmd->add_option("--batch-sizes", batch_sizes, "Batch sizes to sweep")->delimiter(',');
  sweep_cmd->add_option("--out", opts.out_path, "Write CSV here instead of stdout");

  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic multi-task dataset");
  synth_cmd->add_option("--samples", synth.samples, "Total samples to draw");
  synth_cmd->add_option("--tasks", synth.tasks, "Number of tasks");
  synth_cmd->add_option("--input-dim", synth.input_dim, "Input dimension");
  synth_cmd->add_option("--lengthscales", synth.lengthscales,
                        "Latent lengthscales (one value applies to all)")
      ->delimiter(',');
  synth_cmd->add_option("--noise", synth.noise, "Observation noise standard deviation");
  synth_cmd->add_option("--rho", synth.rho, "Equicorrelated task correlation in [0, 1)");
  synth_cmd->add_option("--test-fraction", synth.test_fraction, "Fraction held out as test rows");
  synth_cmd->add_option("--seed", synth.seed, "Random seed");
  synth_cmd->add_option("--out-train", synth.out_train, "Training CSV path");
  synth_cmd->add_option("--out-test", synth.out_test, "Test CSV path");
  synth_cmd->add_option("--out-latent", synth.out_latent, "Optional noiseless latent CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit->parsed()) return run_fit(opts);
    if (eval->parsed()) return run_experiment_command(opts, true);
    if (experiment->parsed()) return run_experiment_command(opts, false);
    if (sweep_cmd->parsed()) return run_sweep(opts, batch_sizes);
    if (synth_cmd->parsed()) return run_synth(synth);
  } catch (const std::exception& error) {
    std::cerr << "error: " << error.what() << "\n";
    return 1;
  }
  return 0;
}
