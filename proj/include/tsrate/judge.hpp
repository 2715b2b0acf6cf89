#pragma once

// Pairwise quality judgments. A Judge answers "which of these two blocks shows
// the criterion more clearly"; judge_pair() runs it in both presentation
// orders and turns the vote counts into a debiased preference confidence.

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tsrate/core.hpp"

namespace tsrate {

class JudgmentCache;

enum class JudgeKind { kLlm, kOracle, kHeuristic };

std::string_view to_string(JudgeKind kind);
JudgeKind parse_judge_kind(std::string_view name);

struct JudgeConfig {
  int repeats = 20;  // queries per presentation order
  bool swap_debias = true;
  double confidence_threshold = 0.5;  // keep if |2p - 1| >= threshold
  int max_series_points = 128;
  int request_concurrency = 4;
  JudgeKind kind = JudgeKind::kHeuristic;
};

void validate(const JudgeConfig& config);

struct JudgmentRecord {
  std::string block_i;
  std::string block_j;
  Criterion criterion = Criterion::kTrend;
  int votes_forward = 0;  // votes for i with i shown first
  int votes_reverse = 0;  // votes for i with j shown first
  int repeats_per_order = 0;
  int abstained_forward = 0;
  int abstained_reverse = 0;
  double confidence_p = 0.5;
  std::string judge_id;
};

/// Debiased confidence from vote counts. Abstentions are removed from the
/// denominators. Computed as a single integer ratio so that swapping i and j
/// yields exactly 1 - p.
double confidence_from_votes(int votes_forward, int counted_forward,
                             int votes_reverse, int counted_reverse,
                             bool swap_debias);

/// Raised when every query of one presentation order failed.
class JudgeError : public std::runtime_error {
 public:
  JudgeError(const std::string& what, JudgmentRecord partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const JudgmentRecord& partial() const { return partial_; }

 private:
  JudgmentRecord partial_;
};

// --- prompts ----------------------------------------------------------------

inline constexpr std::string_view kPromptTemplateVersion = "tsrate-prompts-v1";

/// Raw template text with {series_a}, {series_b}, {label_a}, {label_b}
/// placeholders.
std::string_view prompt_template(Criterion criterion);

/// "[v0, v1, ...]" with 4 significant digits, truncated to the first
/// `max_points` values.
std::string format_series(std::span<const double> values, int max_points);

std::string render_prompt(Criterion criterion, std::span<const double> series_a,
                          std::span<const double> series_b, std::string_view label_a,
                          std::string_view label_b, int max_series_points = 128);

/// Returns the label the response names. Throws InvalidInput("unparseable
/// verdict") if neither or both labels appear.
std::string parse_choice(std::string_view response, std::string_view label_a,
                         std::string_view label_b);

// --- judges -----------------------------------------------------------------

struct OrderingTally {
  int votes_first = 0;  // votes for the block shown first
  int counted = 0;
  int abstained = 0;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string id() const = 0;
  /// Runs `repeats` comparisons with `first` in the first slot.
  virtual OrderingTally compare(const Block& first, const Block& second,
                                Criterion criterion, int repeats) = 0;
};

/// A judge with a fixed preference in [0, 1]. Votes are the preference scaled
/// to `repeats` and rounded half up.
class DeterministicJudge : public Judge {
 public:
  virtual double preference(const Block& first, const Block& second,
                            Criterion criterion) const = 0;
  OrderingTally compare(const Block& first, const Block& second, Criterion criterion,
                        int repeats) override;
};

enum class QualityTag { kLow = 0, kHigh = 1 };

std::string_view to_string(QualityTag tag);
QualityTag parse_quality_tag(std::string_view name);

/// Ground-truth judge for synthetic blocks: prefers the high-tagged block.
class OracleJudge : public DeterministicJudge {
 public:
  void add_tag(const std::string& block_id, Criterion criterion, QualityTag tag);
  std::string id() const override { return "oracle"; }
  /// 1.0 if first is high and second low, 0.0 if reversed, 0.5 if equal.
  double preference(const Block& first, const Block& second,
                    Criterion criterion) const override;

 private:
  QualityTag tag_of(const Block& b, Criterion criterion) const;
  std::map<std::pair<std::string, Criterion>, QualityTag> tags_;
};

/// Per-criterion statistic used by the heuristic judge. Larger means the
/// criterion is expressed more clearly. A constant series scores 0.
///   trend:     |OLS slope| * L / residual std
///   frequency: largest non-DC spectral power share
///   amplitude: peak-to-peak of the best-fit sinusoid on the detrended series,
///              divided by (1 + std of what that sinusoid leaves behind)
///   pattern:   max |autocorrelation| over lags 1..L/4 of the detrended series
double heuristic_statistic(std::span<const double> values, Criterion criterion);

/// Offline stand-in for an LLM judge: sigmoid(k * (stat_first - stat_second)).
class HeuristicJudge : public DeterministicJudge {
 public:
  explicit HeuristicJudge(double sharpness = 10.0) : sharpness_(sharpness) {}
  std::string id() const override;
  double preference(const Block& first, const Block& second,
                    Criterion criterion) const override;

 private:
  double sharpness_;
};

// --- pair judging -----------------------------------------------------------

/// Content hash of a block's values (FNV-1a over IEEE-754 bytes), 16 hex chars.
std::string content_hash(std::span<const double> values);

/// Queries `config.repeats` times with i first and, when swap_debias is set,
/// `config.repeats` times with j first. If `cache` is given, a cached record
/// for the same judge, criterion and block contents is returned without
/// calling the judge; fresh records are appended to it.
JudgmentRecord judge_pair(Judge& judge, const Block& block_i, const Block& block_j,
                          Criterion criterion, const JudgeConfig& config,
                          JudgmentCache* cache = nullptr);

using BlockPair = std::pair<std::size_t, std::size_t>;  // indices into a block list

/// n_pairs distinct unordered pairs, uniform without replacement; once all
/// distinct pairs are used, further pairs are drawn with replacement.
std::vector<BlockPair> sample_pairs(std::size_t n_blocks, std::size_t n_pairs,
                                    std::uint64_t seed);

/// Keeps records with |2p - 1| >= threshold, preserving order.
std::vector<JudgmentRecord> filter_judgments(std::span<const JudgmentRecord> records,
                                             double threshold);

}  // namespace tsrate
