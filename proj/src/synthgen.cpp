#include "tsrate/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "tsrate/random.hpp"
#include "tsrate/series_stats.hpp"

namespace tsrate {

using nlohmann::json;

void validate(const SynthConfig& c) {
  if (c.length < 8) throw InvalidInput("synth length must be >= 8");
  if (c.pairs_per_criterion < 1) throw InvalidInput("pairs_per_criterion must be >= 1");
  if (c.high_noise_sigma < 0.0 || c.low_noise_sigma < 0.0) {
    throw InvalidInput("noise sigmas must be >= 0");
  }
  if (!(c.scale > 0.0) || !std::isfinite(c.scale)) throw InvalidInput("synth scale must be > 0");
  for (const Range& r : {c.slope, c.cycles, c.amplitude, c.phase, c.level}) {
    if (!(r.lo <= r.hi)) throw InvalidInput("synth parameter range has lo > hi");
  }
}

namespace {

std::vector<double> clean_construct(const GeneratorParams& p) {
  const int n = p.length;
  std::vector<double> x(n, 0.0);
  const double two_pi = 2.0 * std::numbers::pi;
  for (int t = 0; t < n; ++t) {
    const double u = static_cast<double>(t) / n;
    double v = 0.0;
    switch (p.criterion) {
      case Criterion::kTrend:
        v = p.slopes[0] * u;
        if (p.breakpoint >= 0.0) v += p.slopes[1] * std::max(0.0, u - p.breakpoint);
        break;
      case Criterion::kFrequency:
      case Criterion::kAmplitude:
        v = p.amplitudes[0] * std::sin(two_pi * p.cycles[0] * u + p.phases[0]);
        break;
      case Criterion::kPattern:
        v = p.slopes[0] * u;
        for (std::size_t k = 0; k < p.cycles.size(); ++k) {
          v += p.amplitudes[k] * std::sin(two_pi * p.cycles[k] * u + p.phases[k]);
        }
        break;
    }
    x[t] = p.level + p.scale * v;
  }
  return x;
}

GeneratorParams draw_construct(Criterion criterion, const SynthConfig& c, CounterRng& rng) {
  GeneratorParams p;
  p.criterion = criterion;
  p.length = c.length;
  const double sign = rng.below(2) ? 1.0 : -1.0;
  switch (criterion) {
    case Criterion::kTrend:
      p.slopes.push_back(sign * rng.uniform(c.slope.lo, c.slope.hi));
      if (rng.below(2)) {
        p.slopes.push_back(sign * rng.uniform(c.slope.lo, c.slope.hi));
        p.breakpoint = rng.uniform(0.25, 0.75);
      }
      break;
    case Criterion::kFrequency:
      p.cycles.push_back(rng.uniform(c.cycles.lo, c.cycles.hi));
      p.amplitudes.push_back(1.0);
      p.phases.push_back(rng.uniform(c.phase.lo, c.phase.hi));
      break;
    case Criterion::kAmplitude:
      p.cycles.push_back(rng.uniform(c.cycles.lo, c.cycles.hi));
      p.amplitudes.push_back(rng.uniform(c.amplitude.lo, c.amplitude.hi));
      p.phases.push_back(rng.uniform(c.phase.lo, c.phase.hi));
      break;
    case Criterion::kPattern: {
      p.slopes.push_back(sign * rng.uniform(0.0, c.slope.hi));
      const double c1 = rng.uniform(c.cycles.lo, c.cycles.hi);
      double c2 = rng.uniform(c.cycles.lo, c.cycles.hi);
      // Keep the two components apart when the range allows it.
      for (int tries = 0; tries < 16 && std::abs(c2 - c1) < 1.0; ++tries) {
        c2 = rng.uniform(c.cycles.lo, c.cycles.hi);
      }
      for (double cyc : {c1, c2}) {
        p.cycles.push_back(cyc);
        p.amplitudes.push_back(rng.uniform(c.amplitude.lo, c.amplitude.hi));
        p.phases.push_back(rng.uniform(c.phase.lo, c.phase.hi));
      }
      break;
    }
  }
  p.scale = c.scale;
  p.level = rng.uniform(c.level.lo, c.level.hi);
  return p;
}

TaggedBlock make_block(const GeneratorParams& params, QualityTag tag, const std::string& id) {
  TaggedBlock b;
  b.tag = tag;
  b.criterion = params.criterion;
  b.params = params;
  b.block.block_id = id;
  b.block.sample_id = id;
  b.block.channel = 0;
  b.block.start = 0;
  b.block.length = params.length;
  b.block.values = render_block(params);
  return b;
}

}  // namespace

std::vector<double> render_block(const GeneratorParams& params) {
  std::vector<double> x = clean_construct(params);
  if (params.noise_sd > 0.0) {
    CounterRng noise(params.noise_seed, params.noise_stream);
    for (double& v : x) v += params.noise_sd * noise.normal();
  }
  return x;
}

std::vector<TaggedPair> gen_criterion_pairs(Criterion criterion, const SynthConfig& config) {
  validate(config);
  std::vector<TaggedPair> pairs;
  pairs.reserve(config.pairs_per_criterion);
  const auto crit_index = static_cast<std::uint64_t>(criterion);
  for (int k = 0; k < config.pairs_per_criterion; ++k) {
    // Each pair owns a substream so pairs can be generated independently.
    const std::uint64_t stream = (crit_index << 40) | static_cast<std::uint64_t>(k);
    CounterRng rng(config.seed, stream);
    GeneratorParams base = draw_construct(criterion, config, rng);
    const std::vector<double> clean = clean_construct(base);
    const auto [mn, mx] = std::minmax_element(clean.begin(), clean.end());
    const double half_range = (*mx - *mn) / 2.0;
    const double sd = stats::population_std(clean);

    GeneratorParams high = base;
    high.noise_sd = config.high_noise_sigma * half_range;
    high.noise_seed = config.seed;
    high.noise_stream = splitmix64(stream * 2 + 1);
    GeneratorParams low = base;
    low.noise_sd = config.low_noise_sigma * sd;
    low.noise_seed = config.seed;
    low.noise_stream = splitmix64(stream * 2 + 2);

    const std::string prefix =
        config.family + "/" + std::string(to_string(criterion)) + "/" + std::to_string(k);
    pairs.push_back({make_block(high, QualityTag::kHigh, prefix + "/high"),
                     make_block(low, QualityTag::kLow, prefix + "/low")});
  }
  return pairs;
}

std::vector<TaggedPair> gen_corpus(const SynthConfig& config) {
  std::vector<TaggedPair> all;
  for (Criterion c : kAllCriteria) {
    auto pairs = gen_criterion_pairs(c, config);
    all.insert(all.end(), std::make_move_iterator(pairs.begin()),
               std::make_move_iterator(pairs.end()));
  }
  return all;
}

void register_tags(OracleJudge& oracle, std::span<const TaggedPair> pairs) {
  for (const auto& p : pairs) {
    oracle.add_tag(p.high.block.block_id, p.high.criterion, p.high.tag);
    oracle.add_tag(p.low.block.block_id, p.low.criterion, p.low.tag);
  }
}

std::map<Criterion, CriterionAccuracy> validate_judge(Judge& judge,
                                                      std::span<const TaggedPair> pairs,
                                                      const JudgeConfig& config,
                                                      JudgmentCache* cache) {
  std::map<Criterion, double> credit;
  std::map<Criterion, CriterionAccuracy> table;
  int index = 0;
  for (const auto& pair : pairs) {
    if (pair.high.tag != QualityTag::kHigh || pair.low.tag != QualityTag::kLow ||
        pair.high.criterion != pair.low.criterion) {
      throw InvalidInput("validate_judge: pair " + std::to_string(index) +
                         " is not a (high, low) pair of one criterion");
    }
    const Criterion c = pair.high.criterion;
    const bool high_first = index % 2 == 0;
    const Block& bi = high_first ? pair.high.block : pair.low.block;
    const Block& bj = high_first ? pair.low.block : pair.high.block;
    const JudgmentRecord r = judge_pair(judge, bi, bj, c, config, cache);
    const double toward_high = high_first ? r.confidence_p : 1.0 - r.confidence_p;
    if (r.confidence_p == 0.5) {
      credit[c] += 0.5;
    } else if (toward_high > 0.5) {
      credit[c] += 1.0;
    }
    table[c].pairs += 1;
    ++index;
  }
  for (auto& [c, acc] : table) acc.accuracy = credit[c] / acc.pairs;
  return table;
}

json to_json(const TaggedBlock& b) {
  const auto& p = b.params;
  json params = {{"slopes", p.slopes},
                 {"breakpoint", p.breakpoint},
                 {"cycles", p.cycles},
                 {"amplitudes", p.amplitudes},
                 {"phases", p.phases},
                 {"scale", p.scale},
                 {"level", p.level},
                 {"noise_sd", p.noise_sd},
                 {"noise_seed", p.noise_seed},
                 {"noise_stream", p.noise_stream},
                 {"length", p.length}};
  return {{"block_id", b.block.block_id},
          {"criterion", to_string(b.criterion)},
          {"quality_tag", to_string(b.tag)},
          {"values", b.block.values},
          {"generator_params", params},
          {"corpus_version", kCorpusVersion}};
}

TaggedBlock tagged_block_from_json(const json& j) {
  TaggedBlock b;
  b.criterion = parse_criterion(j.at("criterion").get<std::string>());
  b.tag = parse_quality_tag(j.at("quality_tag").get<std::string>());
  const auto& gp = j.at("generator_params");
  auto& p = b.params;
  p.criterion = b.criterion;
  p.slopes = gp.at("slopes").get<std::vector<double>>();
  p.breakpoint = gp.at("breakpoint").get<double>();
  p.cycles = gp.at("cycles").get<std::vector<double>>();
  p.amplitudes = gp.at("amplitudes").get<std::vector<double>>();
  p.phases = gp.at("phases").get<std::vector<double>>();
  p.scale = gp.value("scale", 1.0);
  p.level = gp.value("level", 0.0);
  p.noise_sd = gp.at("noise_sd").get<double>();
  p.noise_seed = gp.at("noise_seed").get<std::uint64_t>();
  p.noise_stream = gp.at("noise_stream").get<std::uint64_t>();
  p.length = gp.at("length").get<int>();
  b.block.block_id = j.at("block_id").get<std::string>();
  b.block.sample_id = b.block.block_id;
  b.block.values = j.at("values").get<std::vector<double>>();
  b.block.length = static_cast<int>(b.block.values.size());
  return b;
}

json to_json(const SynthConfig& c) {
  auto range = [](const Range& r) { return json::array({r.lo, r.hi}); };
  return {{"length", c.length},
          {"pairs_per_criterion", c.pairs_per_criterion},
          {"seed", c.seed},
          {"high_noise_sigma", c.high_noise_sigma},
          {"low_noise_sigma", c.low_noise_sigma},
          {"slope", range(c.slope)},
          {"cycles", range(c.cycles)},
          {"amplitude", range(c.amplitude)},
          {"phase", range(c.phase)},
          {"scale", c.scale},
          {"level", range(c.level)},
          {"family", c.family}};
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  auto range = [&](const char* key, Range& r) {
    if (j.contains(key)) {
      r.lo = j.at(key).at(0).get<double>();
      r.hi = j.at(key).at(1).get<double>();
    }
  };
  c.length = j.value("length", c.length);
  c.pairs_per_criterion = j.value("pairs_per_criterion", c.pairs_per_criterion);
  c.seed = j.value("seed", c.seed);
  c.high_noise_sigma = j.value("high_noise_sigma", c.high_noise_sigma);
  c.low_noise_sigma = j.value("low_noise_sigma", c.low_noise_sigma);
  range("slope", c.slope);
  range("cycles", c.cycles);
  range("amplitude", c.amplitude);
  range("phase", c.phase);
  range("level", c.level);
  c.scale = j.value("scale", c.scale);
  c.family = j.value("family", c.family);
  return c;
}

void write_corpus(const std::filesystem::path& path, std::span<const TaggedPair> pairs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : pairs) {
    out << to_json(p.high).dump() << '\n';
    out << to_json(p.low).dump() << '\n';
  }
}

std::vector<TaggedPair> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open corpus " + path.string());
  std::vector<TaggedPair> pairs;
  std::string line;
  int line_no = 0;
  std::optional<TaggedBlock> pending;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    TaggedBlock b;
    try {
      b = tagged_block_from_json(json::parse(line));
    } catch (const std::exception& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!pending) {
      if (b.tag != QualityTag::kHigh) {
        throw InvalidInput(path.string() + ":" + std::to_string(line_no) +
                           ": expected a high block to open a pair");
      }
      pending = std::move(b);
    } else {
      if (b.tag != QualityTag::kLow || b.criterion != pending->criterion) {
        throw InvalidInput(path.string() + ":" + std::to_string(line_no) +
                           ": expected the matching low block");
      }
      pairs.push_back({std::move(*pending), std::move(b)});
      pending.reset();
    }
  }
  if (pending) throw InvalidInput(path.string() + ": corpus ends with an unpaired block");
  return pairs;
}

json corpus_manifest(const SynthConfig& config) {
  return {{"corpus_version", kCorpusVersion},
          {"config", to_json(config)},
          {"seed", config.seed},
          {"blocks_per_criterion", 2 * config.pairs_per_criterion},
          {"mapping", "level + scale * construct, level ~ U(level range) per pair"},
          {"constructs",
           {{"trend", "s1*u + s2*max(0, u - b) (hinge with probability 1/2, same sign), u = t/L"},
            {"frequency", "sin(2*pi*c*u + phi)"},
            {"amplitude", "A*sin(2*pi*c*u + phi)"},
            {"pattern", "A1*sin(2*pi*c1*u + phi1) + A2*sin(2*pi*c2*u + phi2) + s*u"}}},
          {"noise",
           {{"high", "N(0, (high_noise_sigma * half_range)^2)"},
            {"low", "N(0, (low_noise_sigma * population_std)^2)"},
            {"generator", "Box-Muller over a splitmix64 counter stream"}}}};
}

}  // namespace tsrate
