#include "tsrate/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tsrate {

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::kTrend:
      return "trend";
    case Criterion::kFrequency:
      return "frequency";
    case Criterion::kAmplitude:
      return "amplitude";
    case Criterion::kPattern:
      return "pattern";
  }
  throw InvalidInput("unknown criterion");
}

Criterion parse_criterion(std::string_view name) {
  for (Criterion c : kAllCriteria) {
    if (to_string(c) == name) return c;
  }
  throw InvalidInput("unknown criterion: " + std::string(name));
}

void validate(const TimeSeriesSample& sample) {
  if (sample.channels.empty()) {
    throw InvalidInput("sample '" + sample.id + "' has no channels");
  }
  const std::size_t t = sample.channels.front().size();
  if (t == 0) throw InvalidInput("sample '" + sample.id + "' is empty");
  for (std::size_t d = 0; d < sample.channels.size(); ++d) {
    const auto& ch = sample.channels[d];
    if (ch.size() != t) {
      throw InvalidInput("sample '" + sample.id + "' has ragged channels (channel " +
                         std::to_string(d) + " has " + std::to_string(ch.size()) +
                         " values, expected " + std::to_string(t) + ")");
    }
    for (std::size_t i = 0; i < ch.size(); ++i) {
      if (!std::isfinite(ch[i])) {
        throw InvalidInput("sample '" + sample.id + "' has a non-finite value at channel " +
                           std::to_string(d) + ", t=" + std::to_string(i));
      }
    }
  }
}

std::string make_block_id(std::string_view sample_id, int channel, int start,
                          int length) {
  std::ostringstream os;
  os << sample_id << "/c" << channel << "/s" << start << "/l" << length;
  return os.str();
}

SegmentationConfig SegmentationConfig::with_default_stride(int block_length) {
  return SegmentationConfig{block_length, std::max(1, block_length / 2)};
}

void validate(const SegmentationConfig& config) {
  if (config.block_length < 2) throw InvalidInput("block_length must be >= 2");
  if (config.stride < 1) throw InvalidInput("stride must be >= 1");
  if (config.stride > config.block_length) {
    throw InvalidInput("stride must not exceed block_length");
  }
}

std::vector<int> block_starts(int series_length, const SegmentationConfig& config) {
  validate(config);
  const int len = config.block_length;
  if (series_length < len) throw InvalidInput("sample shorter than block length");
  std::vector<int> starts;
  int start = 0;
  for (; start + len <= series_length; start += config.stride) starts.push_back(start);
  if (starts.back() + len != series_length) starts.push_back(series_length - len);
  return starts;
}

std::vector<std::vector<Block>> segment(const TimeSeriesSample& sample,
                                        const SegmentationConfig& config) {
  validate(sample);
  const auto starts = block_starts(static_cast<int>(sample.length()), config);
  std::vector<std::vector<Block>> out(sample.num_channels());
  for (std::size_t d = 0; d < sample.num_channels(); ++d) {
    const auto& ch = sample.channels[d];
    out[d].reserve(starts.size());
    for (int s : starts) {
      Block b;
      b.sample_id = sample.id;
      b.channel = static_cast<int>(d);
      b.start = s;
      b.length = config.block_length;
      b.block_id = make_block_id(sample.id, b.channel, s, b.length);
      b.values.assign(ch.begin() + s, ch.begin() + s + b.length);
      out[d].push_back(std::move(b));
    }
  }
  return out;
}

// Means are accumulated as first value plus the mean deviation from it, which
// is exact when every input is equal.
std::vector<std::vector<double>> distribute_point_scores(
    const std::map<std::string, double>& block_scores,
    const TimeSeriesSample& sample, std::span<const Block> blocks) {
  const std::size_t t = sample.length();
  std::vector<std::vector<double>> first(sample.num_channels(), std::vector<double>(t, 0.0));
  std::vector<std::vector<double>> dev(sample.num_channels(), std::vector<double>(t, 0.0));
  std::vector<std::vector<int>> counts(sample.num_channels(), std::vector<int>(t, 0));
  for (const Block& b : blocks) {
    if (b.sample_id != sample.id) continue;
    auto it = block_scores.find(b.block_id);
    if (it == block_scores.end()) continue;
    if (b.channel < 0 || static_cast<std::size_t>(b.channel) >= sample.num_channels() ||
        b.start < 0 || static_cast<std::size_t>(b.start + b.length) > t) {
      throw InvalidInput("block '" + b.block_id + "' lies outside its sample");
    }
    for (int i = b.start; i < b.start + b.length; ++i) {
      if (counts[b.channel][i]++ == 0) {
        first[b.channel][i] = it->second;
      } else {
        dev[b.channel][i] += it->second - first[b.channel][i];
      }
    }
  }
  for (std::size_t d = 0; d < first.size(); ++d) {
    for (std::size_t i = 0; i < t; ++i) {
      if (counts[d][i] == 0) {
        throw InvalidInput("coverage violated: sample '" + sample.id + "' channel " +
                           std::to_string(d) + " point " + std::to_string(i));
      }
      first[d][i] += dev[d][i] / counts[d][i];
    }
  }
  return first;
}

namespace {

double mean_of(std::span<const double> xs, const char* what) {
  if (xs.empty()) throw InvalidInput(std::string(what) + ": empty input");
  double dev = 0.0;
  for (double x : xs) dev += x - xs.front();
  return xs.front() + dev / static_cast<double>(xs.size());
}

}  // namespace

double aggregate_sample_score(std::span<const double> point_scores) {
  return mean_of(point_scores, "aggregate_sample_score");
}

double aggregate_channels(std::span<const double> channel_scores) {
  return mean_of(channel_scores, "aggregate_channels");
}

SampleScores score_sample(const std::map<std::string, double>& block_scores,
                          const TimeSeriesSample& sample,
                          const SegmentationConfig& config) {
  const auto per_channel = segment(sample, config);
  SampleScores out;

  // Channels with uncovered points (unscored blocks) are left empty.
  out.channel_points.resize(sample.num_channels());
  for (std::size_t d = 0; d < per_channel.size(); ++d) {
    const bool complete = std::all_of(per_channel[d].begin(), per_channel[d].end(),
                                      [&](const Block& b) { return block_scores.contains(b.block_id); });
    if (!complete) continue;
    TimeSeriesSample one;
    one.id = sample.id;
    one.channels = {sample.channels[d]};
    auto blocks = per_channel[d];
    for (auto& b : blocks) b.channel = 0;
    out.channel_points[d] = distribute_point_scores(block_scores, one, blocks).front();
  }

  // Channel-averaged window scores, keyed by the channel-0 block id.
  std::map<std::string, double> window_scores;
  std::vector<Block> windows;
  const std::size_t n_windows = per_channel.front().size();
  for (std::size_t w = 0; w < n_windows; ++w) {
    std::vector<double> scores;
    for (const auto& ch : per_channel) {
      auto it = block_scores.find(ch[w].block_id);
      if (it != block_scores.end()) scores.push_back(it->second);
    }
    if (scores.empty()) continue;
    const Block& b = per_channel.front()[w];
    window_scores[b.block_id] = aggregate_channels(scores);
    windows.push_back(b);
  }
  TimeSeriesSample shape;
  shape.id = sample.id;
  shape.channels = {sample.channels.front()};
  out.points = distribute_point_scores(window_scores, shape, windows).front();
  out.sample_score = aggregate_sample_score(out.points);
  return out;
}

ScoreTable fuse_criteria(const ScoreTable& table) {
  if (table.per_criterion.empty()) throw InvalidInput("fuse_criteria: no criteria");
  const auto& reference = table.per_criterion.begin()->second;
  for (const auto& [crit, scores] : table.per_criterion) {
    std::vector<std::string> missing;
    for (const auto& [id, _] : reference) {
      if (!scores.contains(id)) missing.push_back(id);
    }
    for (const auto& [id, _] : scores) {
      if (!reference.contains(id)) missing.push_back(id);
    }
    if (!missing.empty()) {
      std::string msg = "fuse_criteria: block sets differ for criterion '" +
                        std::string(to_string(crit)) + "'; mismatched blocks:";
      for (const auto& id : missing) msg += " " + id;
      throw InvalidInput(msg);
    }
  }

  ScoreTable out = table;
  std::map<std::string, double> fused;
  for (const auto& [id, _] : reference) fused[id] = 0.0;
  const double n = static_cast<double>(reference.size());
  for (const auto& [crit, scores] : table.per_criterion) {
    double mean = 0.0;
    for (const auto& [id, s] : scores) mean += s;
    mean /= n;
    double var = 0.0;
    for (const auto& [id, s] : scores) var += (s - mean) * (s - mean);
    const double sd = std::sqrt(var / n);
    const double first = scores.begin()->second;
    const bool constant = std::all_of(scores.begin(), scores.end(),
                                      [&](const auto& kv) { return kv.second == first; });
    for (const auto& [id, s] : scores) {
      // A constant criterion contributes zero everywhere.
      const double z = constant ? 0.0 : (s - mean) / sd;
      fused[id] += z;
    }
  }
  const double k = static_cast<double>(table.per_criterion.size());
  for (auto& [id, v] : fused) v /= k;
  out.fused = std::move(fused);
  return out;
}

}  // namespace tsrate
