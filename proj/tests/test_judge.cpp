#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "doctest.h"
#include "tsrate/judge.hpp"
#include "tsrate/judgment_cache.hpp"
#include "tsrate/random.hpp"

using namespace tsrate;
namespace fs = std::filesystem;

namespace {

Block make_block(const std::string& id, std::vector<double> v) {
  Block b;
  b.block_id = id;
  b.sample_id = id;
  b.length = static_cast<int>(v.size());
  b.values = std::move(v);
  return b;
}

std::vector<double> noise(int n, std::uint64_t seed, double sd = 1.0) {
  CounterRng rng(seed, 0);
  std::vector<double> v(n);
  for (double& x : v) x = sd * rng.normal();
  return v;
}

std::vector<double> sine(int n, double cycles, double amp = 1.0) {
  std::vector<double> v(n);
  for (int t = 0; t < n; ++t) v[t] = amp * std::sin(2 * std::numbers::pi * cycles * t / n);
  return v;
}

// Always votes for the first slot with a fixed share; counts calls.
class ScriptedJudge : public Judge {
 public:
  ScriptedJudge(int fwd, int rev_first) : fwd_(fwd), rev_first_(rev_first) {}
  std::string id() const override { return "scripted"; }
  OrderingTally compare(const Block& first, const Block&, Criterion, int repeats) override {
    ++calls;
    const bool forward = first.block_id == "i";
    return {forward ? fwd_ : rev_first_, repeats, 0};
  }
  std::atomic<int> calls{0};

 private:
  int fwd_, rev_first_;
};

class FailingJudge : public Judge {
 public:
  std::string id() const override { return "failing"; }
  OrderingTally compare(const Block&, const Block&, Criterion, int repeats) override {
    return {0, 0, repeats};
  }
};

fs::path temp_file(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tsrate_test_" + name);
  fs::remove(p);
  return p;
}

}  // namespace

TEST_CASE("confidence from votes") {
  // 18/20 forward, j gets 6/20 in the reverse ordering, so i gets 14/20.
  CHECK(confidence_from_votes(18, 20, 14, 20, true) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(confidence_from_votes(18, 20, 14, 20, false) == doctest::Approx(0.9).epsilon(1e-15));
  // Abstentions shrink the denominator: 9 of 10 counted, 7 of 10 counted.
  CHECK(confidence_from_votes(9, 10, 7, 10, true) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("judge_pair applies the swap arithmetic") {
  ScriptedJudge judge(18, 6);
  const auto i = make_block("i", {1, 2, 3});
  const auto j = make_block("j", {3, 2, 1});
  JudgeConfig cfg;
  const auto r = judge_pair(judge, i, j, Criterion::kTrend, cfg);
  CHECK(r.votes_forward == 18);
  CHECK(r.votes_reverse == 14);
  CHECK(r.repeats_per_order == 20);
  CHECK(r.confidence_p == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(judge.calls == 2);

  cfg.swap_debias = false;
  const auto r2 = judge_pair(judge, i, j, Criterion::kTrend, cfg);
  CHECK(r2.confidence_p == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(judge.calls == 3);
}

TEST_CASE("judge_pair surfaces total failure with partial counts") {
  FailingJudge judge;
  try {
    judge_pair(judge, make_block("i", {1, 2}), make_block("j", {2, 1}), Criterion::kPattern, {});
    FAIL("expected JudgeError");
  } catch (const JudgeError& e) {
    CHECK(e.partial().abstained_forward == 20);
    CHECK(e.partial().block_i == "i");
  }
  CHECK_THROWS_AS(judge_pair(judge, make_block("i", {1, 2}), make_block("i", {2, 1}),
                             Criterion::kPattern, {}),
                  InvalidInput);
}

TEST_CASE("judge config validation") {
  JudgeConfig c;
  c.repeats = 0;
  CHECK_THROWS_AS(validate(c), InvalidInput);
  c = {};
  c.confidence_threshold = 1.5;
  CHECK_THROWS_AS(validate(c), InvalidInput);
}

TEST_CASE("prompt templates") {
  const auto a = sine(200, 3);
  const auto b = noise(200, 1);
  const std::string trend = render_prompt(Criterion::kTrend, a, b, "A", "B");
  CHECK(trend.find("exhibits a more significant and well-defined trend") != std::string::npos);
  CHECK(trend.find("[Option A]") != std::string::npos);
  CHECK(trend.find("[Option B]") != std::string::npos);
  CHECK(trend.find("Respond only with a single word") != std::string::npos);
  const std::string pattern = render_prompt(Criterion::kPattern, a, b, "A", "B");
  CHECK(pattern.find("clearer and more consistent pattern") != std::string::npos);
  for (Criterion c : kAllCriteria) {
    const std::string p = render_prompt(c, a, b, "A", "B");
    CHECK(p.find("{series_a}") == std::string::npos);
    CHECK(p.find("{label_b}") == std::string::npos);
  }
}

TEST_CASE("series formatting truncates and uses 4 significant digits") {
  std::vector<double> v(200);
  for (int k = 0; k < 200; ++k) v[k] = k + 0.123456;
  const std::string s = format_series(v, 128);
  CHECK(std::count(s.begin(), s.end(), ',') == 127);
  CHECK(s.rfind("[0.1235, 1.123, 2.123", 0) == 0);
  CHECK(s.back() == ']');
}

TEST_CASE("parse_choice") {
  CHECK(parse_choice("A", "A", "B") == "A");
  CHECK(parse_choice(" b.\n", "A", "B") == "B");
  CHECK(parse_choice("Option B", "A", "B") == "B");
  CHECK_THROWS_WITH_AS(parse_choice("both are similar", "A", "B"),
                       doctest::Contains("unparseable verdict"), InvalidInput);
  CHECK_THROWS_AS(parse_choice("A or B", "A", "B"), InvalidInput);
}

TEST_CASE("oracle judge") {
  OracleJudge o;
  const auto h = make_block("h", {1, 2, 3});
  const auto h2 = make_block("h2", {1, 2, 4});
  const auto l = make_block("l", {3, 1, 2});
  o.add_tag("h", Criterion::kTrend, QualityTag::kHigh);
  o.add_tag("h2", Criterion::kTrend, QualityTag::kHigh);
  o.add_tag("l", Criterion::kTrend, QualityTag::kLow);
  CHECK(o.preference(h, l, Criterion::kTrend) == 1.0);
  CHECK(o.preference(l, h, Criterion::kTrend) == 0.0);
  CHECK(o.preference(h, h2, Criterion::kTrend) == 0.5);
  CHECK_THROWS_AS(o.preference(h, l, Criterion::kPattern), InvalidInput);
  const auto r = judge_pair(o, h, l, Criterion::kTrend, {});
  CHECK(r.confidence_p == 1.0);
}

TEST_CASE("oracle preferences are transitive") {
  OracleJudge o;
  std::vector<Block> blocks;
  for (int k = 0; k < 12; ++k) {
    blocks.push_back(make_block("b" + std::to_string(k), {double(k), 1.0}));
    o.add_tag(blocks.back().block_id, Criterion::kAmplitude,
              k % 3 == 0 ? QualityTag::kLow : QualityTag::kHigh);
  }
  for (const auto& a : blocks) {
    for (const auto& b : blocks) {
      for (const auto& c : blocks) {
        const double ab = o.preference(a, b, Criterion::kAmplitude);
        const double bc = o.preference(b, c, Criterion::kAmplitude);
        if (ab >= 0.5 && bc >= 0.5) CHECK(o.preference(a, c, Criterion::kAmplitude) >= 0.5);
      }
    }
  }
}

TEST_CASE("heuristic judge fixtures") {
  HeuristicJudge h;
  const int n = 128;
  std::vector<double> line(n);
  for (int t = 0; t < n; ++t) line[t] = 0.02 * t;
  const auto white = noise(n, 3);
  CHECK(h.preference(make_block("x", line), make_block("y", white), Criterion::kTrend) > 0.95);
  const auto sin8 = sine(n, 8);
  CHECK(h.preference(make_block("x", sin8), make_block("y", white), Criterion::kFrequency) > 0.95);
  const auto same = make_block("c", white);
  CHECK(h.preference(make_block("d", white), same, Criterion::kPattern) == 0.5);
  const auto r = judge_pair(h, make_block("d", white), same, Criterion::kAmplitude, {});
  CHECK(r.confidence_p == 0.5);
  const std::vector<double> flat(n, 2.0);
  for (Criterion c : kAllCriteria) CHECK(heuristic_statistic(flat, c) == 0.0);
}

TEST_CASE("swap antisymmetry for deterministic judges") {
  HeuristicJudge h;
  JudgeConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    CounterRng rng(77, trial);
    const auto a = make_block("a", noise(64, 1000 + trial, rng.uniform(0.1, 2)));
    auto bv = sine(64, 1 + rng.below(6), rng.uniform(0.1, 3));
    for (double& v : bv) v += rng.uniform(0, 1) * rng.normal();
    const auto b = make_block("b", bv);
    cfg.repeats = 1 + static_cast<int>(rng.below(25));
    for (Criterion c : kAllCriteria) {
      const double pij = judge_pair(h, a, b, c, cfg).confidence_p;
      const double pji = judge_pair(h, b, a, c, cfg).confidence_p;
      CHECK(pij + pji == 1.0);
    }
  }
}

TEST_CASE("heuristic judge is deterministic") {
  HeuristicJudge h;
  const auto a = make_block("a", noise(100, 9));
  const auto b = make_block("b", sine(100, 5));
  for (Criterion c : kAllCriteria) {
    CHECK(h.preference(a, b, c) == h.preference(a, b, c));
  }
}

TEST_CASE("sample_pairs") {
  const auto three = sample_pairs(3, 3, 42);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (auto [i, j] : three) {
    CHECK(i != j);
    seen.insert({std::min(i, j), std::max(i, j)});
  }
  CHECK(seen.size() == 3);
  CHECK(sample_pairs(50, 100, 7) == sample_pairs(50, 100, 7));
  CHECK(sample_pairs(50, 100, 7) != sample_pairs(50, 100, 8));
  CHECK(sample_pairs(3, 5, 1).size() == 5);
  CHECK_THROWS_AS(sample_pairs(1, 1, 0), InvalidInput);
  CHECK_THROWS_AS(sample_pairs(4, 0, 0), InvalidInput);

  // Sparse regime: distinct without replacement.
  const auto many = sample_pairs(1000, 500, 3);
  std::set<std::pair<std::size_t, std::size_t>> distinct;
  for (auto [i, j] : many) distinct.insert({std::min(i, j), std::max(i, j)});
  CHECK(distinct.size() == 500);
}

TEST_CASE("filter_judgments") {
  std::vector<JudgmentRecord> r(3);
  r[0].confidence_p = 0.8;
  r[1].confidence_p = 0.6;
  r[2].confidence_p = 0.1;
  r[0].block_i = "x";
  const auto kept = filter_judgments(r, 0.5);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].block_i == "x");
  CHECK(kept[1].confidence_p == 0.1);
  CHECK(filter_judgments(r, 0.0).size() == 3);
}

TEST_CASE("content hash depends on values only") {
  const std::vector<double> v{1.0, 2.0};
  CHECK(content_hash(v) == content_hash(std::vector<double>{1.0, 2.0}));
  CHECK(content_hash(v) != content_hash(std::vector<double>{2.0, 1.0}));
  CHECK(content_hash(v).size() == 16);
}

TEST_CASE("cache idempotence") {
  const fs::path path = temp_file("cache.jsonl");
  ScriptedJudge judge(13, 4);
  const auto i = make_block("i", {1, 2, 3, 5});
  const auto j = make_block("j", {5, 3, 2, 1});
  JudgmentRecord first;
  {
    JudgmentCache cache(path);
    first = judge_pair(judge, i, j, Criterion::kFrequency, {}, &cache);
    CHECK(judge.calls == 2);
    CHECK(cache.size() == 1);
  }
  JudgmentCache warm(path);
  const auto again = judge_pair(judge, i, j, Criterion::kFrequency, {}, &warm);
  CHECK(judge.calls == 2);
  CHECK(again.confidence_p == first.confidence_p);
  CHECK(again.votes_forward == first.votes_forward);
  CHECK(again.votes_reverse == first.votes_reverse);

  // Renumbered ids with the same content still hit.
  judge_pair(judge, make_block("i2", i.values), make_block("j2", j.values), Criterion::kFrequency,
             {}, &warm);
  CHECK(judge.calls == 2);
  // A different repeat count is a miss.
  JudgeConfig cfg;
  cfg.repeats = 5;
  judge_pair(judge, i, j, Criterion::kFrequency, cfg, &warm);
  CHECK(judge.calls == 4);
  fs::remove(path);
}

TEST_CASE("cache recovers from a torn final line") {
  const fs::path path = temp_file("torn.jsonl");
  {
    JudgmentCache cache(path);
    ScriptedJudge judge(10, 10);
    judge_pair(judge, make_block("i", {1, 2}), make_block("j", {2, 1}), Criterion::kTrend, {},
               &cache);
  }
  const auto intact = fs::file_size(path);
  {
    std::ofstream out(path, std::ios::app);
    out << "{\"judge_id\":\"scripted\",\"crit";
  }
  JudgmentCache cache(path);
  CHECK(cache.size() == 1);
  CHECK(fs::file_size(path) == intact);

  {
    std::ofstream out(path, std::ios::app);
    out << "not json\n";
  }
  CHECK_THROWS_AS(JudgmentCache{path}, InvalidInput);
  fs::remove(path);
}
