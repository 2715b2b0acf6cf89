// tsrate: command-line front end over the pipeline stages.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "tsrate/pipeline.hpp"

using nlohmann::json;
namespace ts = tsrate;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

// Every failure ends with one machine-readable line on stderr.
int fail(const std::string& stage, const std::string& kind, const std::string& message,
         const json& extra = json::object()) {
  json j = {{"status", "error"}, {"stage", stage}, {"kind", kind}, {"message", message}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::cerr << j.dump() << std::endl;
  return kind == "invalid_input" || kind == "missing_artifact" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tsrate: pairwise quality rating for time series blocks"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON pipeline config");
  app.add_option("--seed", g.seed, "Seed for every stochastic step (overrides the config)");
  app.add_option("--out", g.out, "Output directory (overrides the config)");

  // Per-subcommand overrides.
  std::optional<std::string> corpus, judge_kind, source, rater_prefix, weights_dir, meta_dir;
  std::optional<int> pairs, repeats, epochs, shots, block_length, stride;
  std::optional<double> tau, rho, lr;
  std::vector<double> fractions;
  std::vector<std::string> datasets, task_dirs;

  auto* synth = app.add_subcommand("synth-gen", "Generate the tagged synthetic corpus");
  synth->add_option("--pairs", pairs, "Pairs per criterion");

  auto add_judge_flags = [&](CLI::App* sub) {
    sub->add_option("--judge", judge_kind, "oracle | heuristic | llm");
    sub->add_option("--corpus", corpus, "Tagged corpus (JSONL from synth-gen)");
    sub->add_option("--repeats", repeats, "Queries per presentation order");
    sub->add_option("--tau", tau, "Confidence filter threshold");
  };
  auto* judge = app.add_subcommand("judge", "Judge sampled block pairs per criterion");
  add_judge_flags(judge);
  judge->add_option("--pairs", pairs, "Pairs per criterion");
  judge->add_option("--data", datasets, "Dataset files (csv or jsonl)");
  judge->add_option("--block-length", block_length, "Block length");
  judge->add_option("--stride", stride, "Block stride");

  auto* validate_judge = app.add_subcommand("validate-judge", "Judge accuracy on a tagged corpus");
  add_judge_flags(validate_judge);

  auto* fit_bt = app.add_subcommand("fit-bt", "Fit Bradley-Terry scores to filtered judgments");

  auto* train = app.add_subcommand("train-rater", "Train one rater per criterion");
  train->add_option("--epochs", epochs, "Epochs");
  train->add_option("--lr", lr, "Learning rate");

  auto* meta = app.add_subcommand("meta-train", "Meta-train raters across judged datasets");
  meta->add_option("--tasks", task_dirs, "Judged output directories, one per task");
  meta->add_option("--epochs", epochs, "Meta epochs");

  auto* adapt = app.add_subcommand("adapt", "Few-shot adapt meta raters to this directory's judgments");
  adapt->add_option("--from", meta_dir, "Directory holding meta_<criterion>.bin")->required();
  adapt->add_option("--shots", shots, "Adaptation pairs");

  auto* score = app.add_subcommand("score", "Score blocks, points and samples");
  score->add_option("--source", source, "bt | rater")->required();
  score->add_option("--rater", rater_prefix, "Weight file prefix: rater | meta | adapted");
  score->add_option("--weights-dir", weights_dir, "Directory holding the rater weights");

  auto* sel = app.add_subcommand("select", "Select the top fraction of samples");
  sel->add_option("--rho", rho, "Fraction kept, in (0, 1]");

  auto* prune = app.add_subcommand("prune-curve", "Export nested best-first removal sets");
  prune->add_option("--fractions", fractions, "Strictly increasing fractions in [0, 1)")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("cli", "usage", e.what());
  }

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    ts::PipelineConfig config;
    if (!g.config_path.empty()) config = ts::load_config(g.config_path);
    if (g.seed) {
      config.seed = config.train.seed = config.meta.seed = config.synth.seed = *g.seed;
    }
    if (!g.out.empty()) config.out_dir = g.out;
    if (corpus) config.corpus = *corpus;
    if (judge_kind) config.judge.kind = ts::parse_judge_kind(*judge_kind);
    if (repeats) config.judge.repeats = *repeats;
    if (tau) config.judge.confidence_threshold = *tau;
    if (pairs) {
      config.pairs_per_criterion = *pairs;
      config.synth.pairs_per_criterion = *pairs;
    }
    if (!datasets.empty()) {
      config.datasets.clear();
      for (const auto& d : datasets) config.datasets.push_back({d, "auto"});
    }
    if (block_length) {
      config.segmentation = ts::SegmentationConfig::with_default_stride(*block_length);
    }
    if (stride) config.segmentation.stride = *stride;
    if (epochs) (stage == "meta-train" ? config.meta.epochs : config.train.epochs) = *epochs;
    if (lr) config.train.learning_rate = *lr;
    if (!task_dirs.empty()) config.meta_task_dirs.assign(task_dirs.begin(), task_dirs.end());
    if (shots) config.adapt.shots = *shots;
    if (rho) config.rho = *rho;
    if (!fractions.empty()) config.prune_fractions = fractions;
    ts::validate(config);

    ts::StageReport report;
    if (stage == "synth-gen") {
      report = ts::run_synth_gen(config);
    } else if (stage == "judge") {
      report = ts::run_judge(config);
    } else if (stage == "validate-judge") {
      report = ts::run_validate_judge(config);
    } else if (stage == "fit-bt") {
      report = ts::run_fit_bt(config);
    } else if (stage == "train-rater") {
      report = ts::run_train_rater(config);
    } else if (stage == "meta-train") {
      report = ts::run_meta_train(config);
    } else if (stage == "adapt") {
      report = ts::run_adapt(config, *meta_dir);
    } else if (stage == "score") {
      report = ts::run_score(config, ts::parse_score_source(*source),
                             rater_prefix.value_or("rater"),
                             weights_dir ? std::optional<ts::fs::path>(*weights_dir) : std::nullopt);
    } else if (stage == "select") {
      report = ts::run_select(config);
    } else if (stage == "prune-curve") {
      report = ts::run_prune_curve(config);
    }
    for (const auto& w : report.warnings) {
      std::cerr << json({{"status", "warning"}, {"stage", stage}, {"message", w}}).dump() << "\n";
    }
    json outputs = json::array();
    for (const auto& p : report.outputs) outputs.push_back(p.string());
    std::cout << json({{"status", "ok"},
                       {"stage", stage},
                       {"seconds", report.seconds},
                       {"outputs", outputs},
                       {"summary", report.summary}})
                     .dump()
              << std::endl;
    return 0;
  } catch (const ts::MissingArtifact& e) {
    return fail(stage, "missing_artifact", e.what(),
                {{"expected_file", e.file().string()}, {"producer", e.producer()}});
  } catch (const ts::InvalidInput& e) {
    return fail(stage, "invalid_input", e.what());
  } catch (const std::exception& e) {
    return fail(stage, "runtime_error", e.what());
  }
}
