// Data handling: CSV loading (incl. the Jura geochemical survey layout),
// per-task log/standardize preprocessing with invertible records, original-
// space evaluation metrics, and a seeded synthetic multi-task generator.
#pragma once

#include "emgpr/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace emgpr {

struct Dataset {
  Matrix X;
  Matrix Y;
  std::vector<std::string> input_names;
  std::vector<std::string> task_names;

  Index samples() const { return X.rows(); }
  Index input_dim() const { return X.cols(); }
  Index task_count() const { return Y.cols(); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream stream(line);
  while (std::getline(stream, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

inline double parse_number(const std::string& text, Index row, const std::string& column) {
  const std::string trimmed = trim(text);
  if (trimmed.empty())
    throw std::invalid_argument("CSV row " + std::to_string(row + 2) + ", column '" + column +
                                "': empty cell");
  char* end = nullptr;
  const double value = std::strtod(trimmed.c_str(), &end);
  if (end == trimmed.c_str() || *end != '\0')
    throw std::invalid_argument("CSV row " + std::to_string(row + 2) + ", column '" + column +
                                "': cannot parse '" + trimmed + "' as a number");
  if (!std::isfinite(value))
    throw std::invalid_argument("CSV row " + std::to_string(row + 2) + ", column '" + column +
                                "': non-finite value");
  return value;
}

}  // namespace detail

/// Loads selected numeric columns from a headered CSV file.
inline Dataset load_csv(const std::string& path, const std::vector<std::string>& input_columns,
                        const std::vector<std::string>& target_columns) {
  if (input_columns.empty() || target_columns.empty())
    throw std::invalid_argument("load_csv: need at least one input and one target column");
  std::ifstream file(path);
  if (!file) throw std::invalid_argument("load_csv: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(file, line))
    throw std::invalid_argument("load_csv: '" + path + "' is empty");
  const std::vector<std::string> header = detail::split_csv_line(line);

  auto column_index = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      std::string available;
      for (const std::string& h : header) available += (available.empty() ? "" : ", ") + h;
      throw std::invalid_argument("load_csv: '" + path + "' has no column '" + name +
                                  "' (available: " + available + ")");
    }
    return static_cast<std::size_t>(it - header.begin());
  };

  std::vector<std::size_t> x_cols, y_cols;
  for (const std::string& name : input_columns) x_cols.push_back(column_index(name));
  for (const std::string& name : target_columns) y_cols.push_back(column_index(name));

  std::vector<std::vector<double>> x_rows, y_rows;
  Index row = 0;
  while (std::getline(file, line)) {
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw std::invalid_argument("load_csv: row " + std::to_string(row + 2) + " has " +
                                  std::to_string(fields.size()) + " fields, header has " +
                                  std::to_string(header.size()));
    std::vector<double> x(x_cols.size()), y(y_cols.size());
    for (std::size_t i = 0; i < x_cols.size(); ++i)
      x[i] = detail::parse_number(fields[x_cols[i]], row, header[x_cols[i]]);
    for (std::size_t i = 0; i < y_cols.size(); ++i)
      y[i] = detail::parse_number(fields[y_cols[i]], row, header[y_cols[i]]);
    x_rows.push_back(std::move(x));
    y_rows.push_back(std::move(y));
    ++row;
  }
  if (x_rows.empty()) throw std::invalid_argument("load_csv: '" + path + "' has no data rows");

  Dataset data;
  data.input_names = input_columns;
  data.task_names = target_columns;
  data.X.resize(static_cast<Index>(x_rows.size()), static_cast<Index>(input_columns.size()));
  data.Y.resize(static_cast<Index>(y_rows.size()), static_cast<Index>(target_columns.size()));
  for (std::size_t i = 0; i < x_rows.size(); ++i) {
    for (std::size_t j = 0; j < x_rows[i].size(); ++j)
      data.X(static_cast<Index>(i), static_cast<Index>(j)) = x_rows[i][j];
    for (std::size_t j = 0; j < y_rows[i].size(); ++j)
      data.Y(static_cast<Index>(i), static_cast<Index>(j)) = y_rows[i][j];
  }
  return data;
}

/// Writes a dataset back out as a headered CSV (inputs first, then targets).
inline void write_csv(const Dataset& data, const std::string& path) {
  std::ofstream file(path);
  if (!file) throw std::invalid_argument("write_csv: cannot open '" + path + "' for writing");
  file.precision(17);
  for (std::size_t i = 0; i < data.input_names.size(); ++i)
    file << (i ? "," : "") << data.input_names[i];
  for (const std::string& name : data.task_names) file << ',' << name;
  file << '\n';
  for (Index r = 0; r < data.samples(); ++r) {
    for (Index c = 0; c < data.X.cols(); ++c) file << (c ? "," : "") << data.X(r, c);
    for (Index c = 0; c < data.Y.cols(); ++c) file << ',' << data.Y(r, c);
    file << '\n';
  }
}

struct JuraData {
  Dataset train;
  Dataset test;
};

/// Loads the Jura survey: 2-D sampling locations plus the requested metal
/// concentrations from the prediction (training) and validation (test) files.
inline JuraData load_jura(const std::string& train_path, const std::string& test_path,
                          const std::vector<std::string>& targets = {"Cd", "Ni", "Zn"}) {
  const std::vector<std::string> inputs = {"Xloc", "Yloc"};
  JuraData data;
  data.train = load_csv(train_path, inputs, targets);
  data.test = load_csv(test_path, inputs, targets);
  return data;
}

/// Convenience form taking the directory that holds the two standard files
/// jura_prediction.csv and jura_validation.csv.
inline JuraData load_jura_directory(const std::string& directory,
                                    const std::vector<std::string>& targets = {"Cd", "Ni",
                                                                               "Zn"}) {
  return load_jura(directory + "/jura_prediction.csv", directory + "/jura_validation.csv",
                   targets);
}

/// Invertible per-task transform: optional log, then standardization with
/// training-set statistics (population standard deviation).
struct NormalizationRecord {
  bool log_transformed = false;
  double mean = 0.0;
  double stddev = 1.0;

  double forward(double value) const {
    if (log_transformed) {
      if (!(value > 0.0))
        throw std::invalid_argument("NormalizationRecord: log transform of a non-positive value");
      value = std::log(value);
    }
    return (value - mean) / stddev;
  }

  double inverse(double value) const {
    value = value * stddev + mean;
    return log_transformed ? std::exp(value) : value;
  }
};

struct PreprocessedData {
  Dataset train;
  Dataset test;
  std::vector<NormalizationRecord> records;  // one per task
};

/// Applies the per-task transform fitted on the training targets to both
/// splits.  Inputs are passed through unchanged.
inline PreprocessedData preprocess(const Dataset& train, const Dataset& test,
                                   bool log_transform) {
  if (train.task_count() != test.task_count())
    throw std::invalid_argument("preprocess: train and test task counts differ");
  PreprocessedData out;
  out.train = train;
  out.test = test;
  const Index tasks = train.task_count();
  out.records.resize(static_cast<std::size_t>(tasks));
  for (Index d = 0; d < tasks; ++d) {
    NormalizationRecord& record = out.records[static_cast<std::size_t>(d)];
    record.log_transformed = log_transform;
    Vector column = train.Y.col(d);
    if (log_transform) {
      for (Index i = 0; i < column.size(); ++i) {
        if (!(column[i] > 0.0))
          throw std::invalid_argument(
              "preprocess: task '" +
              (d < static_cast<Index>(train.task_names.size())
                   ? train.task_names[static_cast<std::size_t>(d)]
                   : std::to_string(d)) +
              "' row " + std::to_string(i + 1) + " is not positive; log transform impossible");
        column[i] = std::log(column[i]);
      }
    }
    record.mean = column.mean();
    record.stddev = population_stddev(column);
    if (!(record.stddev > 0.0))
      throw std::invalid_argument("preprocess: task " + std::to_string(d) +
                                  " has zero variance on the training split");
    for (Index i = 0; i < train.samples(); ++i)
      out.train.Y(i, d) = record.forward(train.Y(i, d));
    for (Index i = 0; i < test.samples(); ++i)
      out.test.Y(i, d) = record.forward(test.Y(i, d));
  }

  // A standardized training column should be centered; anything else points
  // at a bookkeeping error upstream.
  for (Index d = 0; d < tasks; ++d) {
    const double mean = out.train.Y.col(d).mean();
    if (std::abs(mean) > 0.1)
      warn("preprocess: standardized training mean of task " + std::to_string(d) + " is " +
           std::to_string(mean));
  }
  return out;
}

struct TaskMetrics {
  double mae = 0.0;
  double mse = 0.0;
};

struct Metrics {
  std::vector<TaskMetrics> per_task;
  double overall_mae = 0.0;
  double overall_mse = 0.0;
};

/// Scores predictions made in the processed space against raw-space truth:
/// predictions are mapped back through the records first, so errors are in
/// the original units.
inline Metrics evaluate(const Matrix& predictions, const Matrix& truth_raw,
                        const std::vector<NormalizationRecord>& records) {
  if (predictions.rows() != truth_raw.rows() || predictions.cols() != truth_raw.cols())
    throw std::invalid_argument("evaluate: prediction and truth shapes differ");
  if (static_cast<Index>(records.size()) != predictions.cols())
    throw std::invalid_argument("evaluate: expected " + std::to_string(predictions.cols()) +
                                " normalization records, got " + std::to_string(records.size()));
  if (predictions.rows() == 0) throw std::invalid_argument("evaluate: no prediction rows");

  Metrics metrics;
  const Index tasks = predictions.cols();
  const Index m = predictions.rows();
  metrics.per_task.resize(static_cast<std::size_t>(tasks));
  double abs_total = 0.0, sq_total = 0.0;
  for (Index d = 0; d < tasks; ++d) {
    double abs_sum = 0.0, sq_sum = 0.0;
    for (Index i = 0; i < m; ++i) {
      const double predicted = records[static_cast<std::size_t>(d)].inverse(predictions(i, d));
      const double error = predicted - truth_raw(i, d);
      abs_sum += std::abs(error);
      sq_sum += error * error;
    }
    metrics.per_task[static_cast<std::size_t>(d)].mae = abs_sum / static_cast<double>(m);
    metrics.per_task[static_cast<std::size_t>(d)].mse = sq_sum / static_cast<double>(m);
    abs_total += abs_sum;
    sq_total += sq_sum;
  }
  metrics.overall_mae = abs_total / static_cast<double>(m * tasks);
  metrics.overall_mse = sq_total / static_cast<double>(m * tasks);
  return metrics;
}

/// Generator settings for synthetic multi-task data: D tasks as linear
/// mixtures of Q latent GP draws with squared exponential kernels.
struct SyntheticConfig {
  Index samples = 200;
  Index tasks = 2;
  Index input_dim = 2;
  Vector lengthscales;       // one per latent process; empty -> 0.3 each
  Matrix mixing;             // tasks x Q; empty -> derived from coregionalization or identity
  Matrix coregionalization;  // tasks x tasks PSD alternative to an explicit mixing
  Vector noise_std;          // one per task; empty -> 0.1 each
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Dataset data;         // inputs and noisy targets
  Matrix latent;        // noiseless task values (samples x tasks)
  Matrix mixing;        // mixing actually used (tasks x Q)
  Vector lengthscales;  // latent lengthscales actually used
  Vector noise_std;
};

/// Draws X uniformly on [0,1]^P, one latent GP sample per column of the
/// mixing matrix, and adds per-task Gaussian noise.  Fully deterministic
/// given the seed.
inline SyntheticData generate_synthetic(const SyntheticConfig& config) {
  if (config.samples < 1 || config.tasks < 1 || config.input_dim < 1)
    throw std::invalid_argument("generate_synthetic: samples, tasks, input_dim must be positive");

  Matrix mixing = config.mixing;
  if (mixing.size() == 0) {
    if (config.coregionalization.size() != 0) {
      const Matrix& b = config.coregionalization;
      if (b.rows() != config.tasks || b.cols() != config.tasks)
        throw std::invalid_argument("generate_synthetic: coregionalization must be tasks x tasks");
      if ((b - b.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("generate_synthetic: coregionalization is not symmetric");
      const Eigen::SelfAdjointEigenSolver<Matrix> eig(b);
      if (eig.eigenvalues().minCoeff() < -1e-10)
        throw std::invalid_argument(
            "generate_synthetic: coregionalization is not positive semi-definite (eigenvalue " +
            std::to_string(eig.eigenvalues().minCoeff()) + ")");
      mixing = eig.eigenvectors() *
               eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    } else {
      mixing = Matrix::Identity(config.tasks, config.tasks);
    }
  }
  if (mixing.rows() != config.tasks)
    throw std::invalid_argument("generate_synthetic: mixing must have one row per task");
  const Index latents = mixing.cols();

  Vector lengthscales = config.lengthscales;
  if (lengthscales.size() == 0) lengthscales = Vector::Constant(latents, 0.3);
  if (lengthscales.size() != latents)
    throw std::invalid_argument("generate_synthetic: expected " + std::to_string(latents) +
                                " lengthscales, got " + std::to_string(lengthscales.size()));
  for (Index q = 0; q < latents; ++q)
    if (!(lengthscales[q] > 0.0))
      throw std::invalid_argument("generate_synthetic: lengthscales must be positive");

  Vector noise = config.noise_std;
  if (noise.size() == 0) noise = Vector::Constant(config.tasks, 0.1);
  if (noise.size() != config.tasks)
    throw std::invalid_argument("generate_synthetic: expected " + std::to_string(config.tasks) +
                                " noise levels, got " + std::to_string(noise.size()));
  for (Index d = 0; d < config.tasks; ++d)
    if (!(noise[d] >= 0.0))
      throw std::invalid_argument("generate_synthetic: noise levels must be non-negative");

  SyntheticData out;
  out.mixing = mixing;
  out.lengthscales = lengthscales;
  out.noise_std = noise;

  const Index n = config.samples;
  std::normal_distribution<double> standard_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  out.data.X.resize(n, config.input_dim);
  std::mt19937_64 x_rng(derive_seed(config.seed, 1));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < config.input_dim; ++j) out.data.X(i, j) = unit(x_rng);

  Matrix draws(n, latents);
  for (Index q = 0; q < latents; ++q) {
    Matrix k = gram(KernelSpec::se(lengthscales[q]), out.data.X).values;
    k.diagonal().array() += 1e-8;  // sampling jitter
    const Eigen::LLT<Matrix> llt = robust_llt(k, 1e-8, "generate_synthetic");
    std::mt19937_64 rng(derive_seed(config.seed, 100 + static_cast<std::uint64_t>(q)));
    Vector z(n);
    for (Index i = 0; i < n; ++i) z[i] = standard_normal(rng);
    draws.col(q) = Matrix(llt.matrixL()) * z;
  }
  out.latent = draws * mixing.transpose();

  out.data.Y = out.latent;
  for (Index d = 0; d < config.tasks; ++d) {
    std::mt19937_64 rng(derive_seed(config.seed, 10000 + static_cast<std::uint64_t>(d)));
    for (Index i = 0; i < n; ++i) out.data.Y(i, d) += noise[d] * standard_normal(rng);
  }

  for (Index j = 0; j < config.input_dim; ++j)
    out.data.input_names.push_back("x" + std::to_string(j + 1));
  for (Index d = 0; d < config.tasks; ++d)
    out.data.task_names.push_back("task" + std::to_string(d + 1));
  return out;
}

}  // namespace emgpr
