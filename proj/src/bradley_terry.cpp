#include "tsrate/bradley_terry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace tsrate {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  // log sigmoid(x) = -softplus(-x)
  const double y = -x;
  return -(std::max(y, 0.0) + std::log1p(std::exp(-std::abs(y))));
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

namespace {

struct Edge {
  int winner;  // the side whose stored weight is >= 0.5
  int loser;
  double w;
};

struct Graph {
  std::vector<std::string> ids;
  std::vector<Edge> edges;
};

Graph build_graph(std::span<const JudgmentRecord> judgments) {
  Graph g;
  std::map<std::string, int> index;
  auto id_of = [&](const std::string& name) {
    auto [it, inserted] = index.emplace(name, static_cast<int>(g.ids.size()));
    if (inserted) g.ids.push_back(name);
    return it->second;
  };
  const Criterion criterion = judgments.front().criterion;
  for (std::size_t k = 0; k < judgments.size(); ++k) {
    const auto& r = judgments[k];
    if (r.criterion != criterion) {
      throw InvalidInput("fit_bt: judgments mix criteria (record " + std::to_string(k) + ")");
    }
    if (!(r.confidence_p >= 0.0 && r.confidence_p <= 1.0)) {
      throw InvalidInput("fit_bt: confidence outside [0, 1] in record " + std::to_string(k));
    }
    if (r.block_i == r.block_j) {
      throw InvalidInput("fit_bt: self-comparison in record " + std::to_string(k));
    }
  }
  // Register ids in sorted order so indices do not depend on record order.
  std::vector<std::string> names;
  for (const auto& r : judgments) {
    names.push_back(r.block_i);
    names.push_back(r.block_j);
  }
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  for (const auto& n : names) id_of(n);

  for (const auto& r : judgments) {
    const double p = r.confidence_p;
    const int i = index.at(r.block_i);
    const int j = index.at(r.block_j);
    // Orient so the stored weight is >= 0.5; then (i, j, p) and (j, i, 1 - p)
    // produce the same edge bit-for-bit.
    if (p > 0.5) {
      g.edges.push_back({i, j, p});
    } else if (p < 0.5) {
      g.edges.push_back({j, i, 1.0 - p});
    } else {
      g.edges.push_back({std::min(i, j), std::max(i, j), 0.5});
    }
  }
  return g;
}

double log_likelihood(const Graph& g, const std::vector<double>& s) {
  double total = 0.0;
  for (const Edge& e : g.edges) {
    const double d = s[e.winner] - s[e.loser];
    total += e.w * log_sigmoid(d) + (1.0 - e.w) * log_sigmoid(-d);
  }
  return total;
}

void gradient(const Graph& g, const std::vector<double>& s, std::vector<double>& out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (const Edge& e : g.edges) {
    const double r = e.w - sigmoid(s[e.winner] - s[e.loser]);
    out[e.winner] += r;
    out[e.loser] -= r;
  }
}

std::vector<std::vector<int>> connected_components(const Graph& g) {
  std::vector<int> parent(g.ids.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const Edge& e : g.edges) {
    const int a = find(e.winner), b = find(e.loser);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::map<int, std::vector<int>> groups;
  for (int v = 0; v < static_cast<int>(g.ids.size()); ++v) groups[find(v)].push_back(v);
  std::vector<std::vector<int>> out;
  for (auto& [root, members] : groups) out.push_back(std::move(members));
  return out;
}

}  // namespace

double bt_log_likelihood(std::span<const JudgmentRecord> judgments,
                         const std::map<std::string, double>& scores) {
  if (judgments.empty()) return 0.0;
  const Graph g = build_graph(judgments);
  std::vector<double> s(g.ids.size());
  for (std::size_t v = 0; v < g.ids.size(); ++v) {
    auto it = scores.find(g.ids[v]);
    if (it == scores.end()) throw InvalidInput("bt_log_likelihood: no score for " + g.ids[v]);
    s[v] = it->second;
  }
  return log_likelihood(g, s);
}

BTFit fit_bt(std::span<const JudgmentRecord> judgments, const BTOptions& options) {
  if (judgments.empty()) throw InvalidInput("fit_bt: empty judgment list");
  const Graph g = build_graph(judgments);
  const std::size_t n = g.ids.size();

  BTFit fit;
  fit.criterion = judgments.front().criterion;
  std::vector<double> s(n, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    if (auto it = options.initial_scores.find(g.ids[v]); it != options.initial_scores.end()) {
      s[v] = it->second;
    }
  }

  std::vector<double> grad(n), trial(n), trial_grad(n);
  double ll = log_likelihood(g, s);
  if (!std::isfinite(ll)) throw std::runtime_error("fit_bt: non-finite likelihood at start");
  gradient(g, s, grad);
  fit.likelihood_trace.push_back(ll);
  double step = options.initial_step;

  int it = 0;
  for (; it < options.max_iterations; ++it) {
    double gmax = 0.0;
    for (double v : grad) gmax = std::max(gmax, std::abs(v));
    if (gmax < options.gradient_tol) {
      fit.converged = true;
      break;
    }
    for (std::size_t v = 0; v < n; ++v) trial[v] = s[v] + step * grad[v];
    const double trial_ll = log_likelihood(g, trial);
    if (!std::isfinite(trial_ll)) {
      throw std::runtime_error("fit_bt: non-finite likelihood at iteration " +
                               std::to_string(it + 1));
    }
    // Near the optimum the gain drops below the rounding error of the summed
    // likelihood. The likelihood is concave, so a step whose end point still
    // has a non-negative slope along the search direction cannot have
    // decreased it; such steps are accepted even when the computed value dips.
    gradient(g, trial, trial_grad);
    double slope = 0.0;
    for (std::size_t v = 0; v < n; ++v) slope += trial_grad[v] * grad[v];
    if (trial_ll < ll && slope < 0.0) {
      step *= 0.5;
      if (step == 0.0) break;  // no representable progress left
      continue;
    }
    const double gain = std::max(0.0, trial_ll - ll);
    s.swap(trial);
    ll = std::max(ll, trial_ll);
    grad.swap(trial_grad);
    fit.likelihood_trace.push_back(ll);
    if (options.likelihood_tol > 0.0 && gain < options.likelihood_tol) {
      fit.converged = true;
      ++it;
      break;
    }
  }
  fit.iterations = it;
  fit.log_likelihood = ll;

  const auto comps = connected_components(g);
  for (const auto& members : comps) {
    double mean = 0.0;
    for (int v : members) mean += s[v];
    mean /= static_cast<double>(members.size());
    std::vector<std::string> names;
    for (int v : members) {
      fit.scores[g.ids[v]] = s[v] - mean;
      names.push_back(g.ids[v]);
    }
    fit.components.push_back(std::move(names));
  }
  if (comps.size() > 1) {
    std::ostringstream os;
    os << "comparison graph has " << comps.size() << " components (sizes:";
    for (const auto& c : comps) os << ' ' << c.size();
    os << "); scores are comparable only within a component";
    fit.warnings.push_back(os.str());
  }
  if (!fit.converged) {
    fit.warnings.push_back("fit_bt: stopped after " + std::to_string(fit.iterations) +
                           " iterations without meeting the gradient tolerance");
  }
  return fit;
}

nlohmann::json to_json(const BTFit& fit) {
  nlohmann::json scores = nlohmann::json::object();
  for (const auto& [id, s] : fit.scores) scores[id] = s;
  return {{"criterion", to_string(fit.criterion)},
          {"scores", scores},
          {"log_likelihood", fit.log_likelihood},
          {"iterations", fit.iterations},
          {"converged", fit.converged}};
}

BTFit bt_fit_from_json(const nlohmann::json& j) {
  BTFit fit;
  fit.criterion = parse_criterion(j.at("criterion").get<std::string>());
  for (const auto& [id, s] : j.at("scores").items()) fit.scores[id] = s.get<double>();
  fit.log_likelihood = j.at("log_likelihood").get<double>();
  fit.iterations = j.at("iterations").get<int>();
  fit.converged = j.at("converged").get<bool>();
  return fit;
}

}  // namespace tsrate
