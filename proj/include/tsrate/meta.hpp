#pragma once

// First-order meta-training of the rater. The inner loop adapts with sign
// gradient steps, whose Jacobian is zero almost everywhere, so the outer
// gradient is just the query-loss gradient at the adapted parameters.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tsrate/core.hpp"
#include "tsrate/features.hpp"
#include "tsrate/judge.hpp"
#include "tsrate/rater.hpp"

namespace tsrate {

struct MetaTask {
  std::string task_id;
  Criterion criterion = Criterion::kTrend;
  std::vector<PairExample> support;
  std::vector<PairExample> query;
  std::vector<PairExample> test;
};

struct MetaConfig {
  double inner_lr = 4e-3;   // alpha
  double outer_lr = 2.5e-4;  // beta
  int inner_steps = 14;
  int meta_batch_tasks = 10;
  int within_task_batch = 16;
  int epochs = 7;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency
};

void validate(const MetaConfig& config);

enum class AdaptRule {
  kGradient,  // theta - lr * grad
  kSign,      // theta - lr * sign(grad), the inner-loop rule
};

struct AdaptConfig {
  int shots = 10;
  int steps = 10;
  double lr = 1e-4;
  AdaptRule rule = AdaptRule::kGradient;
};

std::string_view to_string(AdaptRule rule);
AdaptRule parse_adapt_rule(std::string_view name);

/// One dataset's judgments with the values of every block they reference.
struct JudgedDataset {
  std::string id;
  std::vector<JudgmentRecord> judgments;
  std::map<std::string, std::vector<double>> block_values;
};

/// Converts judgments to feature-space pairs. Throws if a referenced block has
/// no values.
std::vector<PairExample> to_pair_examples(std::span<const JudgmentRecord> judgments,
                                          const std::map<std::string, std::vector<double>>& values,
                                          const BlockEncoder& encoder);

struct BuildTasksResult {
  std::vector<MetaTask> tasks;
  std::vector<std::string> warnings;  // skipped datasets
};

/// Per dataset: keep the criterion's judgments, shuffle (seeded), and split
/// 4:4:2 into support/query/test (support and query get floor(0.4 n) each).
/// Datasets with fewer than 5 judgments are skipped with a warning.
BuildTasksResult build_tasks(std::span<const JudgedDataset> datasets, Criterion criterion,
                             std::uint64_t seed, const BlockEncoder& encoder);

/// Adds an extra term to the support loss gradient (used to probe that the
/// outer update ignores support-loss curvature). Receives the current
/// parameters and adds into grad.
using SupportGradientHook = std::function<void(std::span<const double>, std::span<double>)>;

/// theta' = theta - alpha * sign(grad) repeated `steps` times, sign(0) = 0.
/// Gradients use the full support set when it fits in one within-task batch,
/// else consecutive minibatches of a seeded permutation, cycling.
std::vector<double> inner_adapt(const RaterWeights& theta, std::span<const PairExample> support,
                                double alpha, int steps, int within_task_batch,
                                std::uint64_t seed, const SupportGradientHook& hook = {});

struct MetaStepStats {
  double mean_query_loss = 0.0;    // at the adapted parameters
  double mean_support_loss = 0.0;  // at the adapted parameters
};

/// theta <- theta - beta * sum_i grad L_query_i(theta'_i), summed in task-id
/// order. `task_seeds` seeds each task's inner minibatching (defaults to the
/// task's index in the batch).
MetaStepStats meta_step(RaterWeights& theta, std::span<const MetaTask* const> task_batch,
                        const MetaConfig& config, std::span<const std::uint64_t> task_seeds = {},
                        const SupportGradientHook& hook = {});

struct EpochMetrics {
  int epoch = 0;
  Criterion criterion = Criterion::kTrend;
  double mean_query_loss = 0.0;
  double mean_support_loss = 0.0;
};

struct MetaTrainResult {
  RaterWeights weights;
  std::vector<EpochMetrics> metrics;
};

/// Tasks must share one criterion. Each epoch visits a seeded permutation of
/// the tasks in meta-batches of meta_batch_tasks.
MetaTrainResult meta_train(std::span<const MetaTask> tasks, const MetaConfig& config,
                           const RaterWeights* init = nullptr);

/// `steps` updates at `lr` on the mean loss over the first `config.shots`
/// pairs, plain gradient steps by default. No pairs means no change.
RaterWeights few_shot_adapt(const RaterWeights& theta_star, std::span<const PairExample> pairs,
                            const AdaptConfig& config);

}  // namespace tsrate
