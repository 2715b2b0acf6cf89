#include "tsrate/meta.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <thread>

#include "tsrate/random.hpp"

namespace tsrate {

void validate(const MetaConfig& c) {
  if (!(c.inner_lr >= 0.0) || !(c.outer_lr >= 0.0)) {
    throw InvalidInput("meta learning rates must be non-negative");
  }
  if (c.inner_steps < 0 || c.meta_batch_tasks < 1 || c.within_task_batch < 1 || c.epochs < 0) {
    throw InvalidInput("invalid meta-training configuration");
  }
}

std::string_view to_string(AdaptRule rule) {
  return rule == AdaptRule::kSign ? "sign" : "gradient";
}

AdaptRule parse_adapt_rule(std::string_view name) {
  if (name == "gradient") return AdaptRule::kGradient;
  if (name == "sign") return AdaptRule::kSign;
  throw InvalidInput("unknown adapt rule '" + std::string(name) + "' (expected gradient or sign)");
}

std::vector<PairExample> to_pair_examples(
    std::span<const JudgmentRecord> judgments,
    const std::map<std::string, std::vector<double>>& values, const BlockEncoder& encoder) {
  std::map<std::string, std::vector<double>> features;
  auto features_of = [&](const std::string& id) -> const std::vector<double>& {
    auto it = features.find(id);
    if (it != features.end()) return it->second;
    auto v = values.find(id);
    if (v == values.end()) throw InvalidInput("no values for judged block '" + id + "'");
    return features.emplace(id, encoder.encode(v->second)).first->second;
  };
  std::vector<PairExample> out;
  out.reserve(judgments.size());
  for (const auto& r : judgments) {
    out.push_back({features_of(r.block_i), features_of(r.block_j), r.confidence_p});
  }
  return out;
}

BuildTasksResult build_tasks(std::span<const JudgedDataset> datasets, Criterion criterion,
                             std::uint64_t seed, const BlockEncoder& encoder) {
  BuildTasksResult result;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    const auto& ds = datasets[d];
    std::vector<JudgmentRecord> mine;
    for (const auto& r : ds.judgments) {
      if (r.criterion == criterion) mine.push_back(r);
    }
    if (mine.size() < 5) {
      result.warnings.push_back("dataset '" + ds.id + "' has " + std::to_string(mine.size()) +
                                " " + std::string(to_string(criterion)) +
                                " judgments (< 5); task skipped");
      continue;
    }
    CounterRng rng(seed, 0x5441534BULL + d);
    rng.shuffle(std::span<JudgmentRecord>(mine));
    auto pairs = to_pair_examples(mine, ds.block_values, encoder);

    const std::size_t n = pairs.size();
    const std::size_t n_support = n * 4 / 10;
    const std::size_t n_query = n * 4 / 10;
    MetaTask task;
    task.task_id = ds.id + ":" + std::string(to_string(criterion));
    task.criterion = criterion;
    task.support.assign(pairs.begin(), pairs.begin() + n_support);
    task.query.assign(pairs.begin() + n_support, pairs.begin() + n_support + n_query);
    task.test.assign(pairs.begin() + n_support + n_query, pairs.end());
    result.tasks.push_back(std::move(task));
  }
  return result;
}

std::vector<double> inner_adapt(const RaterWeights& theta, std::span<const PairExample> support,
                                double alpha, int steps, int within_task_batch,
                                std::uint64_t seed, const SupportGradientHook& hook) {
  if (support.empty()) throw InvalidInput("inner_adapt: empty support set");
  std::vector<double> params = theta.params;
  if (steps <= 0) return params;

  const bool full = support.size() <= static_cast<std::size_t>(within_task_batch);
  std::vector<std::size_t> order(support.size());
  std::iota(order.begin(), order.end(), 0);
  if (!full) CounterRng(seed, 0x494E4E4552ULL).shuffle(std::span<std::size_t>(order));

  std::vector<PairExample> batch;
  std::size_t cursor = 0;
  for (int step = 0; step < steps; ++step) {
    std::span<const PairExample> current = support;
    if (!full) {
      batch.clear();
      for (int k = 0; k < within_task_batch; ++k) {
        batch.push_back(support[order[cursor]]);
        cursor = (cursor + 1) % order.size();
      }
      current = batch;
    }
    LossAndGrad lg = pairwise_loss_and_grad(theta, current, params);
    if (hook) hook(params, lg.grad);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double g = lg.grad[k];
      if (!std::isfinite(g)) {
        throw std::runtime_error("inner_adapt: non-finite gradient at step " +
                                 std::to_string(step));
      }
      if (g > 0.0) {
        params[k] -= alpha;
      } else if (g < 0.0) {
        params[k] += alpha;
      }
    }
  }
  return params;
}

namespace {

struct TaskOutcome {
  std::vector<double> query_grad;
  double query_loss = 0.0;
  double support_loss = 0.0;
};

TaskOutcome run_task(const RaterWeights& theta, const MetaTask& task, const MetaConfig& config,
                     std::uint64_t seed, const SupportGradientHook& hook) {
  if (task.query.empty()) throw InvalidInput("task '" + task.task_id + "' has no query pairs");
  try {
    const auto adapted = inner_adapt(theta, task.support, config.inner_lr, config.inner_steps,
                                     config.within_task_batch, seed, hook);
    TaskOutcome out;
    LossAndGrad lg = pairwise_loss_and_grad(theta, task.query, adapted);
    out.query_grad = std::move(lg.grad);
    out.query_loss = lg.loss;
    out.support_loss = pairwise_loss(theta, task.support, adapted);
    return out;
  } catch (const std::exception& e) {
    throw std::runtime_error("task '" + task.task_id + "': " + e.what());
  }
}

}  // namespace

MetaStepStats meta_step(RaterWeights& theta, std::span<const MetaTask* const> task_batch,
                        const MetaConfig& config, std::span<const std::uint64_t> task_seeds,
                        const SupportGradientHook& hook) {
  validate(config);
  if (task_batch.empty()) throw InvalidInput("meta_step: empty task batch");
  const std::size_t n = task_batch.size();
  auto seed_of = [&](std::size_t k) {
    return k < task_seeds.size() ? task_seeds[k] : static_cast<std::uint64_t>(k);
  };

  std::vector<TaskOutcome> outcomes(n);
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t n_threads =
      std::min<std::size_t>(n, config.threads > 0 ? static_cast<std::size_t>(config.threads) : hw);
  if (n_threads <= 1) {
    for (std::size_t k = 0; k < n; ++k) {
      outcomes[k] = run_task(theta, *task_batch[k], config, seed_of(k), hook);
    }
  } else {
    std::vector<std::future<void>> jobs;
    std::atomic<std::size_t> next{0};
    for (std::size_t t = 0; t < n_threads; ++t) {
      jobs.push_back(std::async(std::launch::async, [&] {
        for (std::size_t k = next++; k < n; k = next++) {
          outcomes[k] = run_task(theta, *task_batch[k], config, seed_of(k), hook);
        }
      }));
    }
    for (auto& j : jobs) j.get();
  }

  // Summed in task-id order so the update depends on neither thread timing
  // nor the sampled batch order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return task_batch[a]->task_id < task_batch[b]->task_id;
  });
  std::vector<double> total(theta.params.size(), 0.0);
  MetaStepStats stats;
  for (std::size_t k : order) {
    const auto& o = outcomes[k];
    for (std::size_t k = 0; k < total.size(); ++k) total[k] += o.query_grad[k];
    stats.mean_query_loss += o.query_loss;
    stats.mean_support_loss += o.support_loss;
  }
  for (std::size_t k = 0; k < total.size(); ++k) theta.params[k] -= config.outer_lr * total[k];
  stats.mean_query_loss /= static_cast<double>(n);
  stats.mean_support_loss /= static_cast<double>(n);
  return stats;
}

MetaTrainResult meta_train(std::span<const MetaTask> tasks, const MetaConfig& config,
                           const RaterWeights* init) {
  validate(config);
  if (tasks.empty()) throw InvalidInput("meta_train: no tasks");
  const Criterion criterion = tasks.front().criterion;
  for (const auto& t : tasks) {
    if (t.criterion != criterion) {
      throw InvalidInput("meta_train: tasks mix criteria; train one model per criterion");
    }
  }
  MetaTrainResult result;
  result.weights = init ? *init : init_rater(RaterArch{}, criterion, config.seed);
  validate(result.weights);

  std::vector<std::size_t> order(tasks.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    CounterRng rng(config.seed, 0x4D455441ULL + static_cast<std::uint64_t>(epoch));
    rng.shuffle(std::span<std::size_t>(order));

    double query_sum = 0.0, support_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < order.size(); start += config.meta_batch_tasks) {
      const std::size_t end = std::min(order.size(), start + config.meta_batch_tasks);
      std::vector<const MetaTask*> batch;
      std::vector<std::uint64_t> seeds;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(&tasks[order[k]]);
        seeds.push_back(splitmix64(config.seed ^ (static_cast<std::uint64_t>(epoch) << 32) ^
                                   order[k]));
      }
      const MetaStepStats s = meta_step(result.weights, batch, config, seeds);
      query_sum += s.mean_query_loss * static_cast<double>(batch.size());
      support_sum += s.mean_support_loss * static_cast<double>(batch.size());
      counted += batch.size();
    }
    result.metrics.push_back({epoch + 1, criterion, query_sum / static_cast<double>(counted),
                              support_sum / static_cast<double>(counted)});
  }
  return result;
}

RaterWeights few_shot_adapt(const RaterWeights& theta_star, std::span<const PairExample> pairs,
                            const AdaptConfig& config) {
  RaterWeights out = theta_star;
  const std::size_t shots = std::min(pairs.size(), static_cast<std::size_t>(std::max(config.shots, 0)));
  if (shots == 0) return out;
  const auto shot_set = pairs.first(shots);
  for (int step = 0; step < config.steps; ++step) {
    const LossAndGrad lg = pairwise_loss_and_grad(out, shot_set);
    for (std::size_t k = 0; k < out.params.size(); ++k) {
      if (!std::isfinite(lg.grad[k])) throw std::runtime_error("few_shot_adapt: non-finite gradient");
      const double g = lg.grad[k];
      if (config.rule == AdaptRule::kGradient) {
        out.params[k] -= config.lr * g;
      } else if (g > 0.0) {
        out.params[k] -= config.lr;
      } else if (g < 0.0) {
        out.params[k] += config.lr;
      }
    }
  }
  return out;
}

}  // namespace tsrate
