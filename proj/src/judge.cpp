#include "tsrate/judge.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <set>
#include <sstream>

#include "tsrate/judgment_cache.hpp"
#include "tsrate/random.hpp"
#include "tsrate/series_stats.hpp"

namespace tsrate {

std::string_view to_string(JudgeKind kind) {
  switch (kind) {
    case JudgeKind::kLlm:
      return "llm";
    case JudgeKind::kOracle:
      return "oracle";
    case JudgeKind::kHeuristic:
      return "heuristic";
  }
  throw InvalidInput("unknown judge kind");
}

JudgeKind parse_judge_kind(std::string_view name) {
  for (JudgeKind k : {JudgeKind::kLlm, JudgeKind::kOracle, JudgeKind::kHeuristic}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidInput("unknown judge kind: " + std::string(name));
}

void validate(const JudgeConfig& config) {
  if (config.repeats < 1) throw InvalidInput("repeats must be >= 1");
  if (!(config.confidence_threshold >= 0.0 && config.confidence_threshold <= 1.0)) {
    throw InvalidInput("confidence threshold must lie in [0, 1]");
  }
  if (config.max_series_points < 2) throw InvalidInput("max_series_points must be >= 2");
  if (config.request_concurrency < 1) throw InvalidInput("request_concurrency must be >= 1");
}

double confidence_from_votes(int votes_forward, int counted_forward, int votes_reverse,
                             int counted_reverse, bool swap_debias) {
  if (!swap_debias) {
    return static_cast<double>(votes_forward) / static_cast<double>(counted_forward);
  }
  const std::int64_t num = std::int64_t{votes_forward} * counted_reverse +
                           std::int64_t{votes_reverse} * counted_forward;
  const std::int64_t den = 2 * std::int64_t{counted_forward} * counted_reverse;
  return static_cast<double>(num) / static_cast<double>(den);
}

OrderingTally DeterministicJudge::compare(const Block& first, const Block& second,
                                          Criterion criterion, int repeats) {
  const double p = preference(first, second, criterion);
  OrderingTally t;
  t.counted = repeats;
  t.votes_first = static_cast<int>(std::floor(p * repeats + 0.5));
  t.votes_first = std::clamp(t.votes_first, 0, repeats);
  return t;
}

std::string_view to_string(QualityTag tag) { return tag == QualityTag::kHigh ? "high" : "low"; }

QualityTag parse_quality_tag(std::string_view name) {
  if (name == "high") return QualityTag::kHigh;
  if (name == "low") return QualityTag::kLow;
  throw InvalidInput("unknown quality tag: " + std::string(name));
}

void OracleJudge::add_tag(const std::string& block_id, Criterion criterion, QualityTag tag) {
  tags_[{block_id, criterion}] = tag;
}

QualityTag OracleJudge::tag_of(const Block& b, Criterion criterion) const {
  auto it = tags_.find({b.block_id, criterion});
  if (it == tags_.end()) {
    throw InvalidInput("oracle: block '" + b.block_id + "' has no " +
                       std::string(to_string(criterion)) + " tag");
  }
  return it->second;
}

double OracleJudge::preference(const Block& first, const Block& second,
                               Criterion criterion) const {
  const QualityTag a = tag_of(first, criterion);
  const QualityTag b = tag_of(second, criterion);
  if (a == b) return 0.5;
  return a == QualityTag::kHigh ? 1.0 : 0.0;
}

double heuristic_statistic(std::span<const double> values, Criterion criterion) {
  if (values.size() < 4) throw InvalidInput("heuristic judge needs blocks of >= 4 points");
  const double first = values.front();
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == first; })) {
    return 0.0;
  }
  const auto n = static_cast<double>(values.size());
  const stats::LineFit line = stats::fit_line(values);
  switch (criterion) {
    case Criterion::kTrend: {
      const double resid = stats::population_std(line.residuals);
      const double rise = std::abs(line.slope) * n;
      // Floor keeps a noiseless ramp finite; it saturates the sigmoid anyway.
      return rise / std::max(resid, 1e-9 * (1.0 + rise));
    }
    case Criterion::kFrequency: {
      const auto power = stats::power_spectrum(values);
      double total = 0.0, peak = 0.0;
      for (double p : power) {
        total += p;
        peak = std::max(peak, p);
      }
      return total > 0.0 ? peak / total : 0.0;
    }
    case Criterion::kAmplitude: {
      const stats::SinusoidFit fit = stats::fit_sinusoid(line.residuals);
      return 2.0 * fit.amplitude / (1.0 + stats::population_std(fit.residuals));
    }
    case Criterion::kPattern: {
      const int max_lag = std::max(1, static_cast<int>(values.size()) / 4);
      double best = 0.0;
      for (int lag = 1; lag <= max_lag; ++lag) {
        best = std::max(best, std::abs(stats::autocorrelation(line.residuals, lag)));
      }
      return best;
    }
  }
  throw InvalidInput("unknown criterion");
}

std::string HeuristicJudge::id() const {
  std::ostringstream os;
  os << "heuristic-k" << sharpness_;
  return os.str();
}

double HeuristicJudge::preference(const Block& first, const Block& second,
                                  Criterion criterion) const {
  const double d = heuristic_statistic(first.values, criterion) -
                   heuristic_statistic(second.values, criterion);
  if (d == 0.0) return 0.5;
  return 1.0 / (1.0 + std::exp(-sharpness_ * d));
}

std::string content_hash(std::span<const double> values) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&](std::uint64_t word) {
    for (int i = 0; i < 8; ++i) {
      h ^= (word >> (8 * i)) & 0xFF;
      h *= 0x100000001B3ULL;
    }
  };
  mix(values.size());
  for (double v : values) mix(std::bit_cast<std::uint64_t>(v == 0.0 ? 0.0 : v));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

JudgmentRecord judge_pair(Judge& judge, const Block& block_i, const Block& block_j,
                          Criterion criterion, const JudgeConfig& config,
                          JudgmentCache* cache) {
  validate(config);
  if (block_i.block_id == block_j.block_id) {
    throw InvalidInput("judge_pair: a block cannot be compared with itself");
  }
  if (block_i.values.size() < 2 || block_j.values.size() < 2) {
    throw InvalidInput("judge_pair: blocks need at least 2 points");
  }
  JudgmentRecord rec;
  rec.block_i = block_i.block_id;
  rec.block_j = block_j.block_id;
  rec.criterion = criterion;
  rec.repeats_per_order = config.repeats;
  rec.judge_id = judge.id();

  const std::string hash_i = content_hash(block_i.values);
  const std::string hash_j = content_hash(block_j.values);
  // The swap setting changes what the counts mean, so it is part of the key.
  const std::string version =
      std::string(kPromptTemplateVersion) + (config.swap_debias ? "" : "+noswap");
  if (cache) {
    if (auto hit = cache->find(rec.judge_id, criterion, hash_i, hash_j, version);
        hit && hit->repeats_per_order == config.repeats) {
      rec.votes_forward = hit->votes_forward;
      rec.votes_reverse = hit->votes_reverse;
      rec.abstained_forward = hit->abstained_forward;
      rec.abstained_reverse = hit->abstained_reverse;
      rec.confidence_p = hit->confidence_p;
      return rec;
    }
  }

  const OrderingTally fwd = judge.compare(block_i, block_j, criterion, config.repeats);
  rec.votes_forward = fwd.votes_first;
  rec.abstained_forward = fwd.abstained;
  if (fwd.counted == 0) {
    throw JudgeError("judge_pair: every forward-order query for (" + rec.block_i + ", " +
                         rec.block_j + ") failed",
                     rec);
  }
  OrderingTally rev{0, 0, 0};
  if (config.swap_debias) {
    rev = judge.compare(block_j, block_i, criterion, config.repeats);
    rec.votes_reverse = rev.counted - rev.votes_first;
    rec.abstained_reverse = rev.abstained;
    if (rev.counted == 0) {
      throw JudgeError("judge_pair: every reverse-order query for (" + rec.block_i + ", " +
                           rec.block_j + ") failed",
                       rec);
    }
  }
  rec.confidence_p = confidence_from_votes(rec.votes_forward, fwd.counted, rec.votes_reverse,
                                           rev.counted, config.swap_debias);

  if (cache) {
    CachedJudgment c;
    c.judge_id = rec.judge_id;
    c.criterion = criterion;
    c.hash_i = hash_i;
    c.hash_j = hash_j;
    c.votes_forward = rec.votes_forward;
    c.votes_reverse = rec.votes_reverse;
    c.repeats_per_order = rec.repeats_per_order;
    c.abstained_forward = rec.abstained_forward;
    c.abstained_reverse = rec.abstained_reverse;
    c.confidence_p = rec.confidence_p;
    c.template_version = version;
    c.timestamp = utc_timestamp();
    cache->append(std::move(c));
  }
  return rec;
}

std::vector<BlockPair> sample_pairs(std::size_t n_blocks, std::size_t n_pairs,
                                    std::uint64_t seed) {
  if (n_blocks < 2) throw InvalidInput("sample_pairs: need at least 2 blocks");
  if (n_pairs < 1) throw InvalidInput("sample_pairs: n_pairs must be >= 1");
  CounterRng rng(seed, 0x5041495253ULL);
  const std::size_t pool = n_blocks * (n_blocks - 1) / 2;
  auto orient = [&](std::size_t a, std::size_t b) -> BlockPair {
    return rng.below(2) ? BlockPair{b, a} : BlockPair{a, b};
  };

  std::vector<BlockPair> out;
  out.reserve(n_pairs);
  if (n_pairs * 4 >= pool) {
    std::vector<BlockPair> all;
    all.reserve(pool);
    for (std::size_t a = 0; a < n_blocks; ++a) {
      for (std::size_t b = a + 1; b < n_blocks; ++b) all.emplace_back(a, b);
    }
    rng.shuffle(std::span<BlockPair>(all));
    for (std::size_t k = 0; k < std::min(pool, n_pairs); ++k) {
      out.push_back(orient(all[k].first, all[k].second));
    }
  } else {
    std::set<BlockPair> seen;
    while (out.size() < n_pairs) {
      std::size_t a = rng.below(n_blocks);
      std::size_t b = rng.below(n_blocks - 1);
      if (b >= a) ++b;
      if (!seen.insert({std::min(a, b), std::max(a, b)}).second) continue;
      out.emplace_back(a, b);
    }
  }
  while (out.size() < n_pairs) {
    std::size_t a = rng.below(n_blocks);
    std::size_t b = rng.below(n_blocks - 1);
    if (b >= a) ++b;
    out.emplace_back(a, b);
  }
  return out;
}

std::vector<JudgmentRecord> filter_judgments(std::span<const JudgmentRecord> records,
                                             double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw InvalidInput("filter threshold must lie in [0, 1]");
  }
  std::vector<JudgmentRecord> kept;
  for (const auto& r : records) {
    if (std::abs(2.0 * r.confidence_p - 1.0) >= threshold) kept.push_back(r);
  }
  return kept;
}

}  // namespace tsrate
