// Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "tsrate/bradley_terry.hpp"
#include "tsrate/core.hpp"
#include "tsrate/judge.hpp"
#include "tsrate/meta.hpp"
#include "tsrate/pipeline.hpp"
#include "tsrate/random.hpp"
#include "tsrate/rater.hpp"
#include "tsrate/synthgen.hpp"

using namespace tsrate;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int n, bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s  #%d %s: %s\n", ok ? "PASS" : "FAIL", n, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

void info(const std::string& line) {
  std::printf("      %s\n", line.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

JudgmentRecord rec(std::string i, std::string j, double p) {
  JudgmentRecord r;
  r.block_i = std::move(i);
  r.block_j = std::move(j);
  r.confidence_p = p;
  return r;
}

std::string bytes_of(const std::vector<double>& v) {
  return std::string(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// --- 1-3: Bradley-Terry -------------------------------------------------------

void bt_closed_form() {
  const std::vector<JudgmentRecord> js{rec("a", "b", 0.731)};
  const auto t0 = Clock::now();
  const auto fit = fit_bt(js);
  const double ms = 1e3 * seconds_since(t0);
  const double delta = fit.scores.at("a") - fit.scores.at("b");
  const double target = std::log(0.731 / (1.0 - 0.731));
  const double err = std::abs(delta - target);
  report(1, err <= 1e-6 && ms < 10.0, "BT closed form",
         fmt("delta=%.9f logit=%.9f err=%.2e time=%.2fms", delta, target, err, ms));
}

std::string bt_recovery() {
  std::mt19937_64 rng(20240601);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> truth(8);
  for (auto& t : truth) t = n(rng);
  double mean = 0.0;
  for (double t : truth) mean += t / 8.0;
  for (auto& t : truth) t -= mean;
  std::vector<JudgmentRecord> js;
  for (int i = 0; i < 8; ++i) {
    for (int j = i + 1; j < 8; ++j) {
      js.push_back(rec("b" + std::to_string(i), "b" + std::to_string(j), sigmoid(truth[i] - truth[j])));
    }
  }
  const auto t0 = Clock::now();
  const auto fit = fit_bt(js);
  const double s = seconds_since(t0);
  double worst = 0.0;
  for (int i = 0; i < 8; ++i) worst = std::max(worst, std::abs(fit.scores.at("b" + std::to_string(i)) - truth[i]));
  return fmt("%.3e|%.4f|", worst, s) + to_json(fit).dump();
}

void bt_grid() {
  const std::vector<JudgmentRecord> js{rec("1", "2", 0.8), rec("2", "3", 0.8), rec("1", "3", 0.9)};
  const auto t0 = Clock::now();
  const auto fit = fit_bt(js);
  // Dense grid over (s1 - s2, s2 - s3) at step 1e-3.
  auto ll = [](double d1, double d2) {
    return 0.8 * log_sigmoid(d1) + 0.2 * log_sigmoid(-d1) + 0.8 * log_sigmoid(d2) +
           0.2 * log_sigmoid(-d2) + 0.9 * log_sigmoid(d1 + d2) + 0.1 * log_sigmoid(-d1 - d2);
  };
  double best = -1e300, b1 = 0.0, b2 = 0.0;
  for (int i = -1000; i <= 3000; ++i) {
    const double d1 = i * 1e-3;
    for (int j = -1000; j <= 3000; ++j) {
      const double d2 = j * 1e-3;
      const double v = ll(d1, d2);
      if (v > best) best = v, b1 = d1, b2 = d2;
    }
  }
  const double s = seconds_since(t0);
  const double f1 = fit.scores.at("1") - fit.scores.at("2");
  const double f2 = fit.scores.at("2") - fit.scores.at("3");
  const double err = std::max(std::abs(f1 - b1), std::abs(f2 - b2));
  report(3, err <= 1e-3 && s < 5.0, "BT brute force",
         fmt("fit=(%.6f, %.6f) grid=(%.3f, %.3f) err=%.2e time=%.2fs", f1, f2, b1, b2, err, s));
}

// --- 4-6: rater and meta mechanics --------------------------------------------

std::vector<double> random_features(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> f(StatsEncoder::kDim);
  for (auto& v : f) v = n(rng);
  return f;
}

std::vector<PairExample> random_pairs(std::mt19937_64& rng, int count) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<PairExample> out;
  for (int k = 0; k < count; ++k) out.push_back({random_features(rng), random_features(rng), u(rng)});
  return out;
}

void gradient_check() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  const double h = 1e-5;
  double worst = 0.0;
  std::size_t checked = 0;
  for (int draw = 0; draw < 20; ++draw) {
    const auto w = init_rater(RaterArch{}, Criterion::kTrend, 1000 + draw);
    const auto batch = random_pairs(rng, 8);
    const auto lg = pairwise_loss_and_grad(w, batch);
    std::vector<double> p = w.params;
    std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
    for (int k = 0; k < 150; ++k) {
      const std::size_t i = pick(rng);
      const double keep = p[i];
      p[i] = keep + h;
      const double up = pairwise_loss(w, batch, p);
      p[i] = keep - h;
      const double down = pairwise_loss(w, batch, p);
      p[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      // Floor on the denominator: below ~1e-7 the central difference itself
      // carries rounding error of that order.
      const double denom = std::max({std::abs(numeric), std::abs(lg.grad[i]), 1e-7});
      worst = std::max(worst, std::abs(numeric - lg.grad[i]) / denom);
      ++checked;
    }
  }
  const double s = seconds_since(t0);
  report(4, worst < 1e-4 && s < 30.0, "gradient check",
         fmt("20 draws, %zu coordinates, max relative error=%.2e time=%.2fs", checked, worst, s));
}

MetaTask random_task(std::mt19937_64& rng, const std::string& id) {
  MetaTask t;
  t.task_id = id;
  t.support = random_pairs(rng, 12);
  t.query = random_pairs(rng, 12);
  return t;
}

void maml_degeneracy() {
  std::mt19937_64 rng(5);
  RaterArch arch;
  arch.hidden = 32;
  std::vector<MetaTask> tasks;
  for (int k = 0; k < 3; ++k) tasks.push_back(random_task(rng, "task" + std::to_string(k)));
  MetaConfig cfg;
  cfg.inner_steps = 0;
  cfg.outer_lr = 1e-2;
  cfg.meta_batch_tasks = 3;
  cfg.epochs = 100;
  cfg.seed = 5;
  const auto init = init_rater(arch, Criterion::kTrend, 6);

  RaterWeights theta = init;
  std::vector<double> ref = init.params;
  std::vector<const MetaTask*> batch;
  for (const auto& t : tasks) batch.push_back(&t);
  double worst = 0.0;
  for (int step = 0; step < 100; ++step) {
    meta_step(theta, batch, cfg);
    std::vector<double> g(ref.size(), 0.0);
    for (const auto& t : tasks) {
      const auto lg = pairwise_loss_and_grad(init, t.query, ref);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += lg.grad[k];
    }
    for (std::size_t k = 0; k < ref.size(); ++k) ref[k] -= cfg.outer_lr * g[k];
    for (std::size_t k = 0; k < ref.size(); ++k) worst = std::max(worst, std::abs(ref[k] - theta.params[k]));
  }
  // The full training loop (one meta-batch per epoch) must follow the same path.
  const auto trained = meta_train(tasks, cfg, &init);
  double loop_worst = 0.0;
  for (std::size_t k = 0; k < ref.size(); ++k) loop_worst = std::max(loop_worst, std::abs(ref[k] - trained.weights.params[k]));
  report(5, worst <= 1e-12 && loop_worst <= 1e-12, "MAML degeneracy",
         fmt("100 steps, max |theta - reference| per step=%.2e, meta_train final=%.2e", worst, loop_worst));
}

void sign_step_shape() {
  std::mt19937_64 rng(9);
  const auto theta = init_rater(RaterArch{}, Criterion::kPattern, 9);
  const auto support = random_pairs(rng, 16);
  const double alpha = MetaConfig{}.inner_lr;
  const auto adapted = inner_adapt(theta, support, alpha, 1, 16, 0);
  std::size_t plus = 0, minus = 0, zero = 0, other = 0;
  for (std::size_t k = 0; k < adapted.size(); ++k) {
    const double d = adapted[k] - theta.params[k];
    if (adapted[k] == theta.params[k]) {
      ++zero;
    } else if (adapted[k] == theta.params[k] + alpha && d > 0) {
      ++plus;
    } else if (adapted[k] == theta.params[k] - alpha && d < 0) {
      ++minus;
    } else {
      ++other;
    }
  }
  report(6, other == 0, "signSGD step shape",
         fmt("alpha=%g: +alpha %zu, -alpha %zu, 0 %zu, other %zu", alpha, plus, minus, zero, other));
}

// --- 7-9: judges, pipeline, meta advantage -------------------------------------

void judge_harness() {
  const auto t0 = Clock::now();
  const SynthConfig sc;
  const auto corpus = gen_corpus(sc);
  OracleJudge oracle;
  register_tags(oracle, corpus);
  HeuristicJudge heuristic;
  const JudgeConfig jc;
  const auto o = validate_judge(oracle, corpus, jc);
  const auto h = validate_judge(heuristic, corpus, jc);
  const double s = seconds_since(t0);
  bool ok = corpus.size() == 800 && s < 30.0;
  std::string detail = fmt("%zu pairs;", corpus.size());
  for (Criterion c : kAllCriteria) {
    ok = ok && o.at(c).accuracy == 1.0 && h.at(c).accuracy >= 0.99;
    detail += fmt(" %s oracle=%.4f heuristic=%.4f;", std::string(to_string(c)).c_str(),
                  o.at(c).accuracy, h.at(c).accuracy);
  }
  report(7, ok, "synthetic judge harness", detail + fmt(" time=%.2fs", s));
}

struct PipelineRun {
  std::map<std::string, std::string> outputs;  // file name -> bytes
  std::map<std::string, double> heldout;
  double seconds = 0.0;
};

PipelineRun run_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  PipelineConfig c = config_from_json({{"seed", 2024},
                                       {"judge", {{"kind", "oracle"}, {"pairs_per_criterion", 500},
                                                  {"confidence_threshold", 0.5}}},
                                       {"rho", 0.5}});
  c.out_dir = dir;
  c.corpus = dir / "corpus.jsonl";
  const auto t0 = Clock::now();
  run_synth_gen(c);
  run_judge(c);
  run_fit_bt(c);
  run_train_rater(c);
  run_score(c, ScoreSource::kRater);
  run_select(c);
  PipelineRun out;
  out.seconds = seconds_since(t0);
  const json eval = json::parse(slurp(dir / "rater_eval.json"));
  for (const auto& [name, entry] : eval.at("criteria").items()) {
    out.heldout[name] = entry.at("heldout_accuracy").is_null() ? -1.0 : entry.at("heldout_accuracy").get<double>();
  }
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.ends_with(".manifest.json")) continue;  // carries wall-clock fields
    out.outputs[name] = slurp(e.path());
  }
  return out;
}

void report_pipeline(const PipelineRun& r) {
  bool ok = r.seconds < 300.0 && r.heldout.size() == 4;
  std::string detail;
  for (const auto& [name, acc] : r.heldout) {
    ok = ok && acc >= 0.90;
    detail += fmt("%s heldout=%.4f; ", name.c_str(), acc);
  }
  report(8, ok, "end-to-end pipeline", detail + fmt("time=%.1fs", r.seconds));
}

// Nine synthetic families that differ in scale, level and low-quality noise;
// family 4 is held out.
JudgedDataset make_family(int k, std::uint64_t seed, Criterion c) {
  SynthConfig sc;
  sc.seed = seed * 1000 + static_cast<std::uint64_t>(k);
  sc.pairs_per_criterion = 100;
  sc.family = "fam" + std::to_string(k);
  sc.scale = std::pow(10.0, (k - 4) / 2.0);
  sc.level = {-5.0 * sc.scale, 5.0 * sc.scale};
  sc.low_noise_sigma = 0.6 + 0.2 * k;
  const auto pairs = gen_criterion_pairs(c, sc);
  OracleJudge oracle;
  register_tags(oracle, pairs);
  std::vector<Block> blocks;
  for (const auto& p : pairs) {
    blocks.push_back(p.high.block);
    blocks.push_back(p.low.block);
  }
  JudgeConfig jc;
  jc.repeats = 1;
  JudgedDataset d;
  d.id = sc.family;
  for (auto [a, b] : sample_pairs(blocks.size(), 200, splitmix64(sc.seed))) {
    d.judgments.push_back(judge_pair(oracle, blocks[a], blocks[b], c, jc));
  }
  d.judgments = filter_judgments(d.judgments, jc.confidence_threshold);
  for (const auto& b : blocks) d.block_values[b.block_id] = b.values;
  return d;
}

std::vector<PairExample> all_pairs(const MetaTask& t) {
  std::vector<PairExample> v = t.support;
  v.insert(v.end(), t.query.begin(), t.query.end());
  v.insert(v.end(), t.test.begin(), t.test.end());
  return v;
}

struct MetaRun {
  std::string bytes;  // adapted weights and accuracies, for the rerun check
  double seconds = 0.0;
  bool ok = true;
  std::vector<std::string> lines;
};

MetaRun meta_advantage() {
  const auto t0 = Clock::now();
  const StatsEncoder encoder;
  const MetaConfig defaults;
  AdaptConfig adapt;
  adapt.shots = 10;
  adapt.steps = 10;
  adapt.lr = defaults.inner_lr;
  adapt.rule = AdaptRule::kSign;
  const AdaptConfig plain_gd;  // gradient rule, lr 1e-4
  const int seeds = 5;
  MetaRun run;
  for (Criterion c : kAllCriteria) {
    double zero = 0.0, adapted = 0.0, gd = 0.0, scratch = 0.0;
    std::vector<double> single(8, 0.0);
    for (int seed = 1; seed <= seeds; ++seed) {
      std::vector<JudgedDataset> ds;
      for (int k = 0; k < 9; ++k) ds.push_back(make_family(k, seed, c));
      const auto built = build_tasks(ds, c, seed, encoder);
      std::vector<MetaTask> train;
      MetaTask held;
      for (const auto& t : built.tasks) (t.task_id.starts_with("fam4") ? held : train.emplace_back()) = t;
      const auto held_pairs = all_pairs(held);
      const std::span<const PairExample> all(held_pairs);
      const auto eval = all.subspan(10);

      MetaConfig mc = defaults;
      mc.seed = seed;
      const auto meta = meta_train(train, mc);
      const auto theta = few_shot_adapt(meta.weights, all, adapt);
      zero += pairwise_accuracy(meta.weights, eval);
      adapted += pairwise_accuracy(theta, eval);
      gd += pairwise_accuracy(few_shot_adapt(meta.weights, all, plain_gd), eval);
      const auto fresh = init_rater(RaterArch{}, c, seed);
      scratch += pairwise_accuracy(few_shot_adapt(fresh, all, adapt), eval);
      run.bytes += bytes_of(theta.params);

      for (std::size_t t = 0; t < train.size(); ++t) {
        TrainConfig tc;
        tc.seed = seed;
        const auto pairs = all_pairs(train[t]);
        single[t] += pairwise_accuracy(train_single(pairs, tc, c).weights, eval);
      }
    }
    zero /= seeds, adapted /= seeds, gd /= seeds, scratch /= seeds;
    for (auto& s : single) s /= seeds;
    const double best_single = *std::max_element(single.begin(), single.end());
    const bool ok = adapted >= zero && adapted >= best_single;
    run.ok = run.ok && ok;
    run.bytes += bytes_of({zero, adapted, gd, scratch});
    run.bytes += bytes_of(single);
    run.lines.push_back(fmt("%s: adapted=%.4f zero-shot=%.4f best single-task=%.4f %s",
                            std::string(to_string(c)).c_str(), adapted, zero, best_single,
                            ok ? "" : "(short)"));
    run.lines.push_back(fmt("  informational: plain-gradient adapt (lr %g)=%.4f, random init + same sign adapt=%.4f",
                            plain_gd.lr, gd, scratch));
  }
  run.seconds = seconds_since(t0);
  return run;
}

// --- 11-12: properties ----------------------------------------------------------

void fusion_invariance() {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> size(2, 60), crit(0, 3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> log_a(-2.0, 2.0), b(-10.0, 10.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ScoreTable t;
    const int m = size(rng);
    for (Criterion c : kAllCriteria) {
      for (int k = 0; k < m; ++k) t.per_criterion[c]["b" + std::to_string(k)] = n(rng);
    }
    ScoreTable moved = t;
    const Criterion target = kAllCriteria[crit(rng)];
    const double a = std::pow(10.0, log_a(rng)), shift = b(rng);
    for (auto& [id, s] : moved.per_criterion[target]) s = a * s + shift;
    const auto f1 = fuse_criteria(t).fused.value();
    const auto f2 = fuse_criteria(moved).fused.value();
    for (const auto& [id, v] : f1) worst = std::max(worst, std::abs(v - f2.at(id)));
  }
  report(11, worst <= 1e-12, "fusion invariance",
         fmt("100 cases, a in [0.01, 100], b in [-10, 10]: max |delta fused|=%.2e", worst));
}

void partition() {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> size(1, 200), ties(1, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::vector<double> grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng);
    const int levels = ties(rng) == 1 ? 3 : 1000000;  // some maps are tie-heavy
    std::map<std::string, double> scores;
    for (int k = 0; k < n; ++k) scores["s" + std::to_string(k)] = std::floor(u(rng) * levels);
    const double rho = trial % 2 ? grid[trial / 2 % grid.size()] : std::max(1e-3, u(rng));
    const auto sel = select(scores, rho);
    const std::vector<double> f{1.0 - rho};
    const auto removed = prune_schedule(scores, f, PruneOrder::kWorstFirst).front().removed;
    std::set<std::string> a(sel.selected.begin(), sel.selected.end());
    std::set<std::string> r(removed.begin(), removed.end());
    std::set<std::string> all;
    for (const auto& [id, _] : scores) all.insert(id);
    std::set<std::string> uni = a;
    uni.insert(r.begin(), r.end());
    const bool disjoint = a.size() + r.size() == uni.size();
    if (!(disjoint && uni == all)) ++bad;
  }
  report(12, bad == 0, "selection/pruning partition",
         fmt("100 cases, %d violations (select(rho) vs lowest-first removals at f = 1 - rho)", bad));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto want = [&](int n) { return only.empty() || only.contains(n); };
  const fs::path scratch = fs::temp_directory_path() / "tsrate_acceptance";

  if (want(1)) bt_closed_form();
  std::string bt_first;
  if (want(2) || want(10)) {
    bt_first = bt_recovery();
    const double worst = std::stod(bt_first.substr(0, bt_first.find('|')));
    const double secs = std::stod(bt_first.substr(bt_first.find('|') + 1));
    if (want(2)) {
      report(2, worst <= 1e-3 && secs < 1.0, "BT recovery",
             fmt("8 blocks, max |s - s*|=%.2e time=%.4fs", worst, secs));
    }
  }
  if (want(3)) bt_grid();
  if (want(4)) gradient_check();
  if (want(5)) maml_degeneracy();
  if (want(6)) sign_step_shape();
  if (want(7)) judge_harness();

  PipelineRun pipe_first;
  if (want(8) || want(10)) {
    pipe_first = run_pipeline(scratch / "run");
    if (want(8)) report_pipeline(pipe_first);
  }
  MetaRun meta_first;
  if (want(9) || want(10)) {
    meta_first = meta_advantage();
    if (want(9)) {
      for (const auto& l : meta_first.lines) info(l);
      report(9, meta_first.ok && meta_first.seconds < 600.0, "meta advantage",
             fmt("4 criteria x 5 seeds, held-out family fam4, time=%.1fs", meta_first.seconds));
    }
  }
  if (want(10)) {
    // Timing fields are not outputs; compare everything after them.
    auto strip = [](const std::string& s) { return s.substr(s.find('|', s.find('|') + 1)); };
    const bool bt_same = strip(bt_recovery()) == strip(bt_first);
    const auto pipe_second = run_pipeline(scratch / "run");
    const bool pipe_same = pipe_second.outputs == pipe_first.outputs && !pipe_first.outputs.empty();
    std::string differing;
    for (const auto& [name, bytes] : pipe_first.outputs) {
      auto it = pipe_second.outputs.find(name);
      if (it == pipe_second.outputs.end() || it->second != bytes) differing += " " + name;
    }
    const bool meta_same = meta_advantage().bytes == meta_first.bytes;
    report(10, bt_same && pipe_same && meta_same, "determinism",
           fmt("BT recovery %s; pipeline %zu files %s; meta advantage %s",
               bt_same ? "identical" : "differs", pipe_first.outputs.size(),
               pipe_same ? "identical" : ("differ:" + differing).c_str(), meta_same ? "identical" : "differs"));
  }
  if (want(11)) fusion_invariance();
  if (want(12)) partition();
  fs::remove_all(scratch);
  std::printf("%s\n", failures == 0 ? "ALL PASS" : fmt("%d FAILED", failures).c_str());
  return failures == 0 ? 0 : 1;
}
