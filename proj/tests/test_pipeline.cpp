#include <fstream>
#include <set>

#include "doctest.h"
#include "tsrate/pipeline.hpp"

using namespace tsrate;
using nlohmann::json;

namespace {

// Fresh scratch directory per test case.
struct TempDir {
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("tsrate_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path path;
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string error_of(const auto& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("ingest jsonl") {
  TempDir dir("ingest_jsonl");
  write_text(dir.path / "d.jsonl",
             R"({"id":"a","channels":[[1,2,3,4]]})"
             "\n"
             R"({"id":"b","channels":[[1,2],[3,4]],"label":"x"})"
             "\n");
  const auto samples = ingest(dir.path / "d.jsonl");
  REQUIRE(samples.size() == 2);
  CHECK(samples[1].num_channels() == 2);
  CHECK(samples[0].channels[0] == std::vector<double>{1, 2, 3, 4});

  write_text(dir.path / "dup.jsonl", R"({"id":"a","channels":[[1,2]]})"
                                     "\n"
                                     R"({"id":"a","channels":[[1,2]]})"
                                     "\n");
  CHECK(error_of([&] { ingest(dir.path / "dup.jsonl"); }).find("duplicate") != std::string::npos);

  write_text(dir.path / "ragged.jsonl", R"({"id":"a","channels":[[1,2],[3]]})"
                                        "\n");
  CHECK_THROWS_AS(ingest(dir.path / "ragged.jsonl"), InvalidInput);
}

TEST_CASE("ingest wide and long csv") {
  TempDir dir("ingest_csv");
  std::string wide = "x,y\n";
  for (int t = 0; t < 10; ++t) wide += std::to_string(t) + "," + std::to_string(2 * t) + "\n";
  write_text(dir.path / "w.csv", wide);
  const auto w = ingest(dir.path / "w.csv");
  REQUIRE(w.size() == 1);
  CHECK(w[0].num_channels() == 2);
  CHECK(w[0].length() == 10);
  CHECK(w[0].channels[1][9] == 18.0);

  write_text(dir.path / "l.csv",
             "sample_id,channel,t,value\ns1,0,0,1\ns1,0,1,2\ns1,1,0,3\ns1,1,1,4\ns2,0,0,5\ns2,0,1,6\n");
  const auto l = ingest(dir.path / "l.csv");
  REQUIRE(l.size() == 2);
  CHECK(l[0].channels[1] == std::vector<double>{3, 4});

  write_text(dir.path / "bad.csv", "x,y\n1,2\n3,oops\n");
  const auto msg = error_of([&] { ingest(dir.path / "bad.csv"); });
  CHECK(msg.find("row 3") != std::string::npos);
  write_text(dir.path / "short.csv", "x,y\n1,2\n3\n");
  CHECK(error_of([&] { ingest(dir.path / "short.csv"); }).find("row 3") != std::string::npos);
  write_text(dir.path / "dup.csv", "sample_id,channel,t,value\ns,0,0,1\ns,0,0,2\n");
  CHECK(error_of([&] { ingest(dir.path / "dup.csv"); }).find("duplicate") != std::string::npos);
  CHECK_THROWS_AS(ingest(dir.path / "missing.csv"), InvalidInput);
}

TEST_CASE("selection counts and ordering") {
  const std::map<std::string, double> s{{"a", 3}, {"b", 1}, {"c", 3}, {"d", 2}};
  const auto r = select(s, 0.5);
  CHECK(r.selected == std::vector<std::string>{"a", "c"});
  CHECK(selection_count(0.5, 5) == 3);
  CHECK(selection_count(0.3, 10) == 3);  // 0.3 * 10 is 3.0000000000000004
  CHECK(selection_count(1.0, 7) == 7);
  CHECK(select(s, 1.0).selected.size() == 4);
  CHECK_THROWS_AS(select(s, 0.0), InvalidInput);
  CHECK(removal_count(0.4, 10) == 4);
  CHECK(removal_count(0.7, 10) == 7);  // 0.7 * 10 is 6.999999999999999
}

TEST_CASE("prune schedule") {
  std::map<std::string, double> s;
  for (int k = 0; k < 10; ++k) s["s" + std::to_string(k)] = k;
  const std::vector<double> f{0.2, 0.4};
  const auto best = prune_schedule(s, f);
  REQUIRE(best.size() == 2);
  CHECK(best[1].retained.size() == 6);
  CHECK(best[0].removed == std::vector<std::string>{"s9", "s8"});
  // Nested: each removal set contains the previous one.
  for (const auto& id : best[0].removed) {
    CHECK(std::find(best[1].removed.begin(), best[1].removed.end(), id) != best[1].removed.end());
  }
  const auto worst = prune_schedule(s, f, PruneOrder::kWorstFirst);
  CHECK(worst[0].removed == std::vector<std::string>{"s0", "s1"});
  CHECK(worst[0].retained.front() == "s9");
  const std::vector<double> bad{0.3, 0.2};
  CHECK_THROWS_AS(prune_schedule(s, bad), InvalidInput);
  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(prune_schedule(s, one), InvalidInput);
}

TEST_CASE("config parsing and hashing") {
  const json j = {{"seed", 5},
                  {"rho", 0.25},
                  {"out_dir", "a"},
                  {"judge", {{"kind", "heuristic"}, {"repeats", 3}}},
                  {"adapt", {{"rule", "sign"}}}};
  auto c = config_from_json(j);
  CHECK(c.seed == 5);
  CHECK(c.train.seed == 5);
  CHECK(c.synth.seed == 5);
  CHECK(c.rho == 0.25);
  CHECK(c.judge.repeats == 3);
  CHECK(c.adapt.rule == AdaptRule::kSign);
  const auto h = config_hash(c);
  CHECK(h.size() == 64);
  CHECK(config_hash(config_from_json(to_json(c))) == h);
  auto moved = c;
  moved.out_dir = "elsewhere";
  CHECK(config_hash(moved) == h);
  moved.rho = 0.3;
  CHECK(config_hash(moved) != h);
  CHECK(output_manifest(c).at("tool_version") == std::string(kToolVersion));
  c.rho = 1.5;
  CHECK_THROWS_AS(validate(c), InvalidInput);
}

TEST_CASE("stages report missing inputs") {
  TempDir dir("missing");
  PipelineConfig c;
  c.out_dir = dir.path;
  try {
    run_fit_bt(c);
    FAIL("expected MissingArtifact");
  } catch (const MissingArtifact& e) {
    CHECK(e.file().filename() == "judgments.jsonl");
    CHECK(e.producer() == "judge");
  }
  CHECK_THROWS_AS(run_select(c), MissingArtifact);
  CHECK_THROWS_AS(run_score(c, ScoreSource::kRater), MissingArtifact);
}

TEST_CASE("a second run on a locked directory is refused") {
  TempDir dir("lock");
  PipelineConfig c;
  c.out_dir = dir.path;
  c.synth.pairs_per_criterion = 2;
  {
    OutputLock held(dir.path);
    CHECK_THROWS(run_synth_gen(c));
  }
  CHECK_NOTHROW(run_synth_gen(c));
  CHECK_FALSE(fs::exists(dir.path / ".tsrate.lock"));
}

TEST_CASE("corpus stage chain") {
  TempDir dir("chain");
  PipelineConfig c = config_from_json({{"seed", 3},
                                       {"synth", {{"pairs_per_criterion", 15}, {"length", 64}}},
                                       {"judge", {{"kind", "oracle"}, {"pairs_per_criterion", 30}}},
                                       {"train", {{"epochs", 5}}},
                                       {"rho", 0.5}});
  c.out_dir = dir.path;
  c.corpus = dir.path / "corpus.jsonl";
  run_synth_gen(c);
  CHECK(fs::exists(dir.path / "corpus.jsonl"));
  CHECK(fs::exists(dir.path / "synth-gen.manifest.json"));

  const auto v = run_validate_judge(c);
  const json val = json::parse(slurp(dir.path / "judge_validation.json"));
  CHECK(val.at("manifest").at("config_hash") == config_hash(c));

  run_judge(c);
  const auto records = read_judgments(dir.path / "judgments.jsonl");
  CHECK_FALSE(records.empty());
  const auto values = read_block_values(dir.path / "blocks.jsonl");
  for (const auto& r : records) {
    CHECK(values.contains(r.block_i));
    CHECK(values.contains(r.block_j));
  }
  {
    std::ifstream in(dir.path / "judgments.jsonl");
    std::string line;
    std::getline(in, line);
    CHECK(json::parse(line).at("config_hash") == config_hash(c));
  }

  run_fit_bt(c);
  const json bt = json::parse(slurp(dir.path / "bt_scores.json"));
  CHECK(bt.at("fits").size() == 4);

  run_train_rater(c);
  for (Criterion k : kAllCriteria) {
    CHECK(fs::exists(dir.path / ("rater_" + std::string(to_string(k)) + ".bin")));
  }
  run_score(c, ScoreSource::kRater);
  const auto sel = run_select(c);
  const json selection = json::parse(slurp(dir.path / "selection.json"));
  const auto n_samples = read_samples(dir.path / "samples.jsonl").size();
  CHECK(selection.at("selected").size() == selection_count(0.5, n_samples));
  run_prune_curve(c);
  const json prune = json::parse(slurp(dir.path / "prune_schedule.json"));
  CHECK(prune.at("steps").size() == c.prune_fractions.size());
}
