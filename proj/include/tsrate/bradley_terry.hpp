#pragma once

// Maximum-likelihood Bradley-Terry scores from soft pairwise preferences.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsrate/core.hpp"
#include "tsrate/judge.hpp"

namespace tsrate {

struct BTOptions {
  double initial_step = 0.1;
  double gradient_tol = 1e-8;  // on the infinity norm
  double likelihood_tol = 0.0;  // stop when an accepted step gains less; 0 = off
  int max_iterations = 10000;
  std::map<std::string, double> initial_scores;  // missing blocks start at 0
};

struct BTFit {
  Criterion criterion = Criterion::kTrend;
  std::map<std::string, double> scores;  // mean zero within each component
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> likelihood_trace;  // one entry per accepted step, plus start
  std::vector<std::vector<std::string>> components;
  std::vector<std::string> warnings;
};

/// Log-likelihood sum over records of p*log(sigmoid(s_i - s_j)) +
/// (1 - p)*log(sigmoid(s_j - s_i)). Every block must have a score.
double bt_log_likelihood(std::span<const JudgmentRecord> judgments,
                         const std::map<std::string, double>& scores);

/// Gradient ascent with step halving on likelihood decrease, followed by
/// mean-zero anchoring of each connected component of the comparison graph.
/// All records must share one criterion.
BTFit fit_bt(std::span<const JudgmentRecord> judgments, const BTOptions& options = {});

nlohmann::json to_json(const BTFit& fit);
BTFit bt_fit_from_json(const nlohmann::json& j);

/// log(sigmoid(x)) without overflow.
double log_sigmoid(double x);
double sigmoid(double x);
double logit(double p);

}  // namespace tsrate
