#pragma once

// Synthetic validation corpus: for each criterion, pairs of blocks built from
// the same clean construct, one with light noise (tagged high) and one with
// heavy noise that masks the structure (tagged low).
//
// Constructs (t = 0..L-1, u = t / L), each then mapped to level + scale * x:
//   trend      s1*u (+ s2*max(0, u - b) with probability 1/2, same sign)
//   frequency  sin(2*pi*c*u + phi), unit amplitude
//   amplitude  A*sin(2*pi*c*u + phi)
//   pattern    A1*sin(2*pi*c1*u + phi1) + A2*sin(2*pi*c2*u + phi2) + s*u
// High noise sd = high_noise_sigma * (max - min) / 2 of the construct.
// Low noise sd  = low_noise_sigma * population std of the construct.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsrate/core.hpp"
#include "tsrate/judge.hpp"

namespace tsrate {

inline constexpr std::string_view kCorpusVersion = "tsrate-synth-v1";

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SynthConfig {
  int length = 128;
  int pairs_per_criterion = 200;
  std::uint64_t seed = 0;
  double high_noise_sigma = 0.05;
  double low_noise_sigma = 1.5;
  Range slope{0.5, 2.0};      // total rise over the block
  Range cycles{2.0, 8.0};     // per block
  Range amplitude{0.5, 3.0};
  Range phase{0.0, 6.283185307179586};
  double scale = 1.0;  // multiplies every construct
  Range level{0.0, 0.0};  // additive offset drawn per pair
  std::string family = "default";  // names the corpus in block ids
};

void validate(const SynthConfig& config);

struct GeneratorParams {
  Criterion criterion = Criterion::kTrend;
  std::vector<double> slopes;      // trend: s1[, s2]; pattern: s
  double breakpoint = -1.0;        // trend hinge position in u, < 0 if none
  std::vector<double> cycles;
  std::vector<double> amplitudes;
  std::vector<double> phases;
  double scale = 1.0;
  double level = 0.0;
  double noise_sd = 0.0;
  std::uint64_t noise_seed = 0;
  std::uint64_t noise_stream = 0;
  int length = 0;
};

struct TaggedBlock {
  Block block;
  QualityTag tag = QualityTag::kHigh;
  Criterion criterion = Criterion::kTrend;
  GeneratorParams params;
};

struct TaggedPair {
  TaggedBlock high;
  TaggedBlock low;
};

/// Rebuilds a block's values from its parameters.
std::vector<double> render_block(const GeneratorParams& params);

std::vector<TaggedPair> gen_criterion_pairs(Criterion criterion, const SynthConfig& config);

/// All four criteria, in criterion order.
std::vector<TaggedPair> gen_corpus(const SynthConfig& config);

/// Registers the tags of every block of `pairs` with an oracle.
void register_tags(OracleJudge& oracle, std::span<const TaggedPair> pairs);

struct CriterionAccuracy {
  double accuracy = 0.0;
  int pairs = 0;
};

/// Judges every pair (orientation alternates with the pair index) and scores
/// it correct when the debiased confidence favors the high block; exactly 0.5
/// earns half credit.
std::map<Criterion, CriterionAccuracy> validate_judge(Judge& judge,
                                                      std::span<const TaggedPair> pairs,
                                                      const JudgeConfig& config,
                                                      JudgmentCache* cache = nullptr);

nlohmann::json to_json(const TaggedBlock& block);
TaggedBlock tagged_block_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const nlohmann::json& j);

/// One TaggedBlock per line, high then low for each pair.
void write_corpus(const std::filesystem::path& path, std::span<const TaggedPair> pairs);
std::vector<TaggedPair> read_corpus(const std::filesystem::path& path);

/// Manifest describing the generator, its configuration, and the construct
/// formulas.
nlohmann::json corpus_manifest(const SynthConfig& config);

}  // namespace tsrate
