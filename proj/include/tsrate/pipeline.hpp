#pragma once

// End-to-end orchestration. Every stage reads and writes files in one output
// directory; the CLI is a thin wrapper over the run_* functions below.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsrate/bradley_terry.hpp"
#include "tsrate/core.hpp"
#include "tsrate/judge.hpp"
#include "tsrate/llm_judge.hpp"
#include "tsrate/meta.hpp"
#include "tsrate/rater.hpp"
#include "tsrate/synthgen.hpp"

namespace tsrate {

inline constexpr std::string_view kToolVersion = "0.1.0";

namespace fs = std::filesystem;

/// Raised when a stage's input artifact is missing. The message names the file
/// and the stage that produces it.
class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const fs::path& file, std::string_view producer);
  const fs::path& file() const { return file_; }
  const std::string& producer() const { return producer_; }

 private:
  fs::path file_;
  std::string producer_;
};

struct DatasetSpec {
  fs::path path;
  std::string format = "auto";  // csv | jsonl | auto (by extension)
};

struct PipelineConfig {
  std::vector<DatasetSpec> datasets;
  std::optional<fs::path> corpus;  // judge a synthetic corpus instead of datasets
  SegmentationConfig segmentation;
  JudgeConfig judge;
  int pairs_per_criterion = 500;
  ChatEndpoint endpoint;
  std::optional<fs::path> cache_path;  // defaults to <out>/judgment_cache.jsonl for llm
  double heuristic_sharpness = 10.0;
  BTOptions bt;
  TrainConfig train;
  double holdout_fraction = 0.2;
  MetaConfig meta;
  std::vector<fs::path> meta_task_dirs;  // judged output directories
  AdaptConfig adapt;
  SynthConfig synth;
  double rho = 0.5;
  std::vector<double> prune_fractions{0.1, 0.2, 0.3, 0.4, 0.5};
  fs::path out_dir = "tsrate_out";
  std::uint64_t seed = 0;
};

/// Reads a JSON config; missing keys keep their defaults. The seed given here
/// also seeds the sub-configs that do not set their own.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const fs::path& path);
nlohmann::json to_json(const PipelineConfig& config);
void validate(const PipelineConfig& config);

/// SHA-256 (hex) of the canonical JSON of the config without out_dir.
std::string config_hash(const PipelineConfig& config);

/// {config_hash, seed, tool_version}; attached to every output.
nlohmann::json output_manifest(const PipelineConfig& config);

// --- ingestion ----------------------------------------------------------------

/// CSV: wide (optional leading non-numeric id column, one column per channel,
/// one row per time step, one sample per file) or long (header
/// sample_id,channel,t,value). JSONL: {"id", "channels", "label"?} per line.
std::vector<TimeSeriesSample> ingest(const fs::path& path, std::string format = "auto");

nlohmann::json to_json(const TimeSeriesSample& sample);
TimeSeriesSample sample_from_json(const nlohmann::json& j);

nlohmann::json to_json(const JudgmentRecord& record);
JudgmentRecord judgment_from_json(const nlohmann::json& j);

// --- selection ----------------------------------------------------------------

struct RankedSample {
  std::string sample_id;
  double score = 0.0;
};

struct SelectionResult {
  std::vector<RankedSample> ranked;  // score desc, then sample_id asc
  std::vector<std::string> selected;
  nlohmann::json manifest;
};

/// Descending score, ties by ascending id.
std::vector<RankedSample> rank_samples(const std::map<std::string, double>& scores);

/// ceil(rho * N) without floating-point spill, and floor(f * N) likewise.
std::size_t selection_count(double rho, std::size_t n);
std::size_t removal_count(double fraction, std::size_t n);

SelectionResult select(const std::map<std::string, double>& scores, double rho);

enum class PruneOrder { kBestFirst, kWorstFirst };

struct PruneStep {
  double fraction = 0.0;
  std::vector<std::string> removed;   // in removal order
  std::vector<std::string> retained;  // in rank order
};

/// For each fraction f (strictly increasing, in [0, 1)) removes floor(f N)
/// samples: the highest-scored by default, the lowest with kWorstFirst.
std::vector<PruneStep> prune_schedule(const std::map<std::string, double>& scores,
                                      std::span<const double> fractions,
                                      PruneOrder order = PruneOrder::kBestFirst);

// --- stages -------------------------------------------------------------------

/// Holds <out>/.tsrate.lock for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& out_dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

struct StageReport {
  std::string stage;
  std::vector<fs::path> outputs;
  std::vector<std::string> warnings;
  nlohmann::json summary = nlohmann::json::object();
  double seconds = 0.0;
};

enum class ScoreSource { kBt, kRater };
ScoreSource parse_score_source(std::string_view name);

StageReport run_synth_gen(const PipelineConfig& config);
StageReport run_judge(const PipelineConfig& config);
StageReport run_validate_judge(const PipelineConfig& config);
StageReport run_fit_bt(const PipelineConfig& config);
StageReport run_train_rater(const PipelineConfig& config);
StageReport run_meta_train(const PipelineConfig& config);
/// Adapts <from>/meta_<criterion>.bin to the judgments in the output dir.
StageReport run_adapt(const PipelineConfig& config, const fs::path& meta_dir);
/// `rater_prefix` picks <weights_dir>/<prefix>_<criterion>.bin.
StageReport run_score(const PipelineConfig& config, ScoreSource source,
                      const std::string& rater_prefix = "rater",
                      const std::optional<fs::path>& weights_dir = std::nullopt);
StageReport run_select(const PipelineConfig& config);
StageReport run_prune_curve(const PipelineConfig& config);

/// Writes <out>/<stage>.manifest.json: the output manifest plus wall-clock
/// time, a UTC timestamp, outputs and warnings.
void write_run_manifest(const PipelineConfig& config, const StageReport& report);

// --- artifact helpers shared by stages and tests -------------------------------

std::vector<JudgmentRecord> read_judgments(const fs::path& path);
std::map<std::string, std::vector<double>> read_block_values(const fs::path& path);
std::vector<TimeSeriesSample> read_samples(const fs::path& path);

}  // namespace tsrate
