// Mini-batch ensemble: the training set is split into L = floor(N / N0)
// strided batches of N0 instances, step 1 is shared across the ensemble,
// step 2 runs once per batch, and predictions are averaged over the
// members.  Weights are never averaged.
#pragma once

#include "emgpr/emgpr.hpp"

#include <numeric>
#include <utility>
#include <vector>

namespace emgpr {

/// What to do with the N - N0 * L instances the strided split leaves over.
enum class LeftoverPolicy {
  Distribute,  // append them round-robin across the batches (default)
  Drop,        // strict split: leftovers are not used in step 2
};

struct PartitionPlan {
  Index total = 0;       // N
  Index batch_size = 0;  // N0 (nominal; Distribute can grow batches by one)
  Index batch_count = 0; // L
  std::vector<std::vector<Index>> batches;  // 0-based instance indices
  std::vector<Index> leftovers;             // indices not covered by the strided split
};

/// Strided split: batch k (0-based) gets instances {k, k + L, k + 2L, ...}
/// for N0 steps, i.e. 1-based batch k is {k, L+k, 2L+k, ...}.  Instances
/// N0 * L .. N-1 are reported as leftovers.
inline PartitionPlan partition(Index total, Index batch_size) {
  if (total < 1) throw std::invalid_argument("partition: need at least one instance");
  if (batch_size < 1 || batch_size > total)
    throw std::invalid_argument("partition: batch size " + std::to_string(batch_size) +
                                " outside [1, " + std::to_string(total) + "]");
  PartitionPlan plan;
  plan.total = total;
  plan.batch_size = batch_size;
  plan.batch_count = total / batch_size;
  plan.batches.resize(static_cast<std::size_t>(plan.batch_count));
  for (Index k = 0; k < plan.batch_count; ++k) {
    std::vector<Index>& batch = plan.batches[static_cast<std::size_t>(k)];
    batch.reserve(static_cast<std::size_t>(batch_size));
    for (Index j = 0; j < batch_size; ++j) batch.push_back(k + j * plan.batch_count);
  }
  for (Index i = plan.batch_count * batch_size; i < total; ++i) plan.leftovers.push_back(i);
  return plan;
}

struct EnsembleConfig {
  Index batch_size = 0;  // N0; 0 means the default D * D
  LeftoverPolicy leftover_policy = LeftoverPolicy::Distribute;
  EmgprConfig base;
};

struct EnsembleModel {
  std::vector<LatentProcessParams> task_params;  // shared step-1 fit (full data)
  std::vector<EmgprModel> members;
  PartitionPlan plan;
  LeftoverPolicy leftover_policy = LeftoverPolicy::Distribute;

  Index task_count() const { return members.empty() ? 0 : members.front().task_count(); }
};

namespace detail {

inline Matrix select_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace detail

/// Builds the ensemble from already-fitted per-task parameters: partitions
/// the data and runs an independent step-2 weight fit per batch.
inline EnsembleModel fit_ensemble_from_step1(const Matrix& X, const Matrix& Y,
                                             const std::vector<LatentProcessParams>& task_params,
                                             const EnsembleConfig& config) {
  const Index tasks = Y.cols();
  const Index n = X.rows();
  if (n != Y.rows() || tasks == 0)
    throw std::invalid_argument("fit_ensemble: inconsistent or empty training data");

  const Index batch_size = config.batch_size > 0 ? config.batch_size : tasks * tasks;
  EnsembleModel model;
  model.plan = partition(n, batch_size);
  model.leftover_policy = config.leftover_policy;
  if (config.leftover_policy == LeftoverPolicy::Distribute) {
    for (std::size_t j = 0; j < model.plan.leftovers.size(); ++j)
      model.plan.batches[j % model.plan.batches.size()].push_back(model.plan.leftovers[j]);
  }
  model.task_params = task_params;

  const Index count = model.plan.batch_count;
  model.members.resize(static_cast<std::size_t>(count));
  parallel_for(static_cast<int>(count), config.base.threads, [&](int k) {
    const std::vector<Index>& rows = model.plan.batches[static_cast<std::size_t>(k)];
    EmgprModel member;
    member.X = detail::select_rows(X, rows);
    member.Y = detail::select_rows(Y, rows);
    member.task_params = model.task_params;
    member.noise_std.resize(tasks);
    for (Index d = 0; d < tasks; ++d)
      member.noise_std[d] = model.task_params[static_cast<std::size_t>(d)].noise_std;
    for (Index d = 0; d < tasks; ++d)
      member.latent_kernels.push_back(model.task_params[static_cast<std::size_t>(d)].kernel);
    if (config.base.skip_step2) {
      member.weights = WeightSet::deltas(tasks);
    } else {
      member.weights = fit_step2(member.X, member.Y, model.task_params, std::nullopt,
                                 config.base, &member.fit_iterations, &member.fit_stop);
    }
    member.finalize(config.base.jitter);
    model.members[static_cast<std::size_t>(k)] = std::move(member);
  });
  return model;
}

/// Fits the mini-batch ensemble: one shared step 1 on the full data, then an
/// independent step-2 weight fit per batch.  `inits` seeds the step-1 search
/// (defaults to the standard initialization for every task).
inline EnsembleModel fit_ensemble(const Matrix& X, const Matrix& Y, const EnsembleConfig& config,
                                  const std::optional<std::vector<LatentProcessParams>>& inits =
                                      std::nullopt) {
  const Index tasks = Y.cols();
  if (Y.rows() != X.rows() || tasks == 0)
    throw std::invalid_argument("fit_ensemble: inconsistent or empty training data");
  std::vector<LatentProcessParams> init_params;
  if (inits.has_value()) {
    init_params = *inits;
  } else {
    init_params.assign(static_cast<std::size_t>(tasks), LatentProcessParams::default_init());
  }
  return fit_ensemble_from_step1(
      X, Y, fit_step1(X, Y, init_params, config.base.task_fit, config.base.threads), config);
}

namespace detail {

template <typename PredictOne>
MultiTaskPrediction average_members(const EnsembleModel& model, Index m, unsigned threads,
                                    PredictOne&& predict_one) {
  if (model.members.empty()) throw std::logic_error("ensemble prediction: no members");
  const Index tasks = model.task_count();
  std::vector<MultiTaskPrediction> parts(model.members.size());
  parallel_for(static_cast<int>(model.members.size()), threads,
               [&](int k) { parts[static_cast<std::size_t>(k)] = predict_one(k); });

  // combine in fixed member order so results never depend on scheduling
  MultiTaskPrediction out;
  out.mean = Matrix::Zero(m, tasks);
  out.variance = Matrix::Zero(m, tasks);
  for (const MultiTaskPrediction& part : parts) {
    out.mean += part.mean;
    out.variance += part.variance;
    out.clamped += part.clamped;
  }
  const double scale = 1.0 / static_cast<double>(parts.size());
  out.mean *= scale;
  out.variance *= scale;
  return out;
}

}  // namespace detail

/// Ensemble prediction: the mean of the member posterior means and the mean
/// of the member posterior variances.
inline MultiTaskPrediction predict_ensemble(const EnsembleModel& model, const Matrix& Xstar,
                                            bool observation_noise = false,
                                            unsigned threads = 0) {
  return detail::average_members(model, Xstar.rows(), threads, [&](int k) {
    return predict(model.members[static_cast<std::size_t>(k)], Xstar, observation_noise);
  });
}

/// Heterotopic ensemble prediction: each member conditions on its own batch
/// plus the supplied extra per-task observations.
inline MultiTaskPrediction predict_ensemble_conditioned(
    const EnsembleModel& model, const std::vector<TaskObservations>& extra, const Matrix& Xstar,
    bool observation_noise = false, unsigned threads = 0) {
  const Index tasks = model.task_count();
  if (static_cast<Index>(extra.size()) != tasks)
    throw std::invalid_argument("predict_ensemble_conditioned: expected " +
                                std::to_string(tasks) + " extra observation sets, got " +
                                std::to_string(extra.size()));
  return detail::average_members(model, Xstar.rows(), threads, [&](int k) {
    const EmgprModel& member = model.members[static_cast<std::size_t>(k)];
    std::vector<TaskObservations> obs(static_cast<std::size_t>(tasks));
    for (Index d = 0; d < tasks; ++d) {
      const TaskObservations& add = extra[static_cast<std::size_t>(d)];
      TaskObservations& slot = obs[static_cast<std::size_t>(d)];
      slot.X.resize(member.X.rows() + add.X.rows(), member.X.cols());
      slot.y.resize(member.X.rows() + add.X.rows());
      slot.X.topRows(member.X.rows()) = member.X;
      slot.y.head(member.X.rows()) = member.Y.col(d);
      if (add.X.rows() > 0) {
        slot.X.bottomRows(add.X.rows()) = add.X;
        slot.y.tail(add.y.size()) = add.y;
      }
    }
    return predict_conditioned(member, obs, Xstar, observation_noise);
  });
}

}  // namespace emgpr
