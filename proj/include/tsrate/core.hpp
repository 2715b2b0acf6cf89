#pragma once

// Domain types for block-level quality rating of time series, plus the
// score plumbing that moves values between blocks, points and samples.

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tsrate {

/// Raised when an input violates a documented precondition.
class InvalidInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Criterion { kTrend = 0, kFrequency = 1, kAmplitude = 2, kPattern = 3 };

inline constexpr std::array<Criterion, 4> kAllCriteria = {
    Criterion::kTrend, Criterion::kFrequency, Criterion::kAmplitude,
    Criterion::kPattern};

std::string_view to_string(Criterion c);
Criterion parse_criterion(std::string_view name);

struct TimeSeriesSample {
  std::string id;
  std::vector<std::vector<double>> channels;  // D channels, each of length T
  std::optional<std::string> label;
  std::optional<std::string> domain_tag;

  std::size_t num_channels() const { return channels.size(); }
  std::size_t length() const {
    return channels.empty() ? 0 : channels.front().size();
  }
};

// Throws InvalidInput if D == 0, channels are ragged, T == 0, or any value is
// non-finite.
void validate(const TimeSeriesSample& sample);

struct Block {
  std::string block_id;
  std::string sample_id;
  int channel = 0;
  int start = 0;
  int length = 0;
  std::vector<double> values;
};

// "<sample_id>/c<channel>/s<start>/l<length>"
std::string make_block_id(std::string_view sample_id, int channel, int start,
                          int length);

struct SegmentationConfig {
  int block_length = 128;
  int stride = 64;

  // Stride defaults to half the block length, at least 1.
  static SegmentationConfig with_default_stride(int block_length);
};

void validate(const SegmentationConfig& config);

/// Sliding-window segmentation. Returns one vector of blocks per channel,
/// sorted by start. Starts are 0, S, 2S, ... while start + L <= T; if the last
/// of those does not end at T, a tail block starting at T - L is appended.
std::vector<std::vector<Block>> segment(const TimeSeriesSample& sample,
                                        const SegmentationConfig& config);

/// Block starts produced by segment() for a single channel of length T.
std::vector<int> block_starts(int series_length, const SegmentationConfig& config);

/// Per-point score = mean of the scores of every block covering that point.
/// Result is indexed [channel][t]. Blocks whose id has no score are ignored;
/// a point covered by no scored block raises InvalidInput("coverage violated").
std::vector<std::vector<double>> distribute_point_scores(
    const std::map<std::string, double>& block_scores,
    const TimeSeriesSample& sample, std::span<const Block> blocks);

double aggregate_sample_score(std::span<const double> point_scores);
double aggregate_channels(std::span<const double> channel_scores);

struct SampleScores {
  std::vector<std::vector<double>> channel_points;  // [channel][t]
  std::vector<double> points;  // from channel-averaged block scores
  double sample_score = 0.0;
};

/// Full block -> point -> sample path for one sample. Blocks at the same
/// window are first averaged across the channels that have a score, then
/// distributed to points and averaged over time.
SampleScores score_sample(const std::map<std::string, double>& block_scores,
                          const TimeSeriesSample& sample,
                          const SegmentationConfig& config);

struct ScoreTable {
  std::map<Criterion, std::map<std::string, double>> per_criterion;
  std::optional<std::map<std::string, double>> fused;
  std::string provenance;
};

/// Z-normalizes each criterion over its block set (population std; a constant
/// criterion maps to all zeros) and averages the z-scores per block.
/// Criteria must cover identical block sets.
ScoreTable fuse_criteria(const ScoreTable& table);

}  // namespace tsrate
