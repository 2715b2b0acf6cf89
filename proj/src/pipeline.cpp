#include "tsrate/pipeline.hpp"

#include <fcntl.h>
#include <openssl/evp.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "tsrate/features.hpp"
#include "tsrate/judgment_cache.hpp"
#include "tsrate/random.hpp"

namespace tsrate {

using nlohmann::json;

MissingArtifact::MissingArtifact(const fs::path& file, std::string_view producer)
    : std::runtime_error("missing artifact " + file.string() + " (produced by `" +
                         std::string(producer) + "`)"),
      file_(file),
      producer_(producer) {}

namespace {

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out += hex[digest[k] >> 4];
    out += hex[digest[k] & 15];
  }
  return out;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Writes through a temporary file so an interrupted stage never leaves a
// half-written artifact behind.
void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

void require(const fs::path& path, std::string_view producer) {
  if (!fs::exists(path)) throw MissingArtifact(path, producer);
}

json read_json(const fs::path& path, std::string_view producer) {
  require(path, producer);
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

template <typename F>
void for_each_jsonl(const fs::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(json::parse(line), line_no);
    } catch (const InvalidInput& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::string crit_name(Criterion c) { return std::string(to_string(c)); }

std::uint64_t criterion_seed(std::uint64_t seed, Criterion c, std::uint64_t salt) {
  return splitmix64(seed ^ (salt * 0x100 + static_cast<std::uint64_t>(c) + 1));
}

}  // namespace

// --- config ---------------------------------------------------------------------

PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  c.seed = j.value("seed", c.seed);
  c.train.seed = c.seed;
  c.meta.seed = c.seed;
  c.synth.seed = c.seed;

  if (j.contains("datasets")) {
    for (const auto& d : j.at("datasets")) {
      DatasetSpec spec;
      if (d.is_string()) {
        spec.path = d.get<std::string>();
      } else {
        spec.path = d.at("path").get<std::string>();
        spec.format = d.value("format", spec.format);
      }
      c.datasets.push_back(spec);
    }
  }
  if (j.contains("corpus")) c.corpus = j.at("corpus").get<std::string>();
  if (j.contains("segmentation")) {
    const auto& s = j.at("segmentation");
    c.segmentation.block_length = s.value("block_length", c.segmentation.block_length);
    c.segmentation.stride =
        s.value("stride", std::max(1, c.segmentation.block_length / 2));
  }
  if (j.contains("judge")) {
    const auto& s = j.at("judge");
    c.judge.repeats = s.value("repeats", c.judge.repeats);
    c.judge.swap_debias = s.value("swap_debias", c.judge.swap_debias);
    c.judge.confidence_threshold = s.value("confidence_threshold", c.judge.confidence_threshold);
    c.judge.max_series_points = s.value("max_series_points", c.judge.max_series_points);
    c.judge.request_concurrency = s.value("request_concurrency", c.judge.request_concurrency);
    if (s.contains("kind")) c.judge.kind = parse_judge_kind(s.at("kind").get<std::string>());
    c.pairs_per_criterion = s.value("pairs_per_criterion", c.pairs_per_criterion);
    c.heuristic_sharpness = s.value("heuristic_sharpness", c.heuristic_sharpness);
    if (s.contains("cache_path")) c.cache_path = s.at("cache_path").get<std::string>();
    if (s.contains("endpoint")) {
      const auto& e = s.at("endpoint");
      c.endpoint.base_url = e.value("base_url", c.endpoint.base_url);
      c.endpoint.path = e.value("path", c.endpoint.path);
      c.endpoint.model = e.value("model", c.endpoint.model);
      c.endpoint.timeout = std::chrono::milliseconds(
          e.value("timeout_ms", static_cast<long long>(c.endpoint.timeout.count())));
      c.endpoint.max_attempts = e.value("max_attempts", c.endpoint.max_attempts);
      c.endpoint.initial_backoff = std::chrono::milliseconds(e.value(
          "initial_backoff_ms", static_cast<long long>(c.endpoint.initial_backoff.count())));
    }
  }
  if (j.contains("bt")) {
    const auto& s = j.at("bt");
    c.bt.initial_step = s.value("initial_step", c.bt.initial_step);
    c.bt.gradient_tol = s.value("gradient_tol", c.bt.gradient_tol);
    c.bt.likelihood_tol = s.value("likelihood_tol", c.bt.likelihood_tol);
    c.bt.max_iterations = s.value("max_iterations", c.bt.max_iterations);
  }
  if (j.contains("train")) {
    const auto& s = j.at("train");
    c.train.learning_rate = s.value("learning_rate", c.train.learning_rate);
    c.train.epochs = s.value("epochs", c.train.epochs);
    c.train.batch_size = s.value("batch_size", c.train.batch_size);
    c.train.seed = s.value("seed", c.train.seed);
    c.holdout_fraction = s.value("holdout_fraction", c.holdout_fraction);
  }
  if (j.contains("meta")) {
    const auto& s = j.at("meta");
    c.meta.inner_lr = s.value("inner_lr", c.meta.inner_lr);
    c.meta.outer_lr = s.value("outer_lr", c.meta.outer_lr);
    c.meta.inner_steps = s.value("inner_steps", c.meta.inner_steps);
    c.meta.meta_batch_tasks = s.value("meta_batch_tasks", c.meta.meta_batch_tasks);
    c.meta.within_task_batch = s.value("within_task_batch", c.meta.within_task_batch);
    c.meta.epochs = s.value("epochs", c.meta.epochs);
    c.meta.seed = s.value("seed", c.meta.seed);
    c.meta.threads = s.value("threads", c.meta.threads);
    if (s.contains("task_dirs")) {
      for (const auto& d : s.at("task_dirs")) c.meta_task_dirs.emplace_back(d.get<std::string>());
    }
  }
  if (j.contains("adapt")) {
    const auto& s = j.at("adapt");
    c.adapt.shots = s.value("shots", c.adapt.shots);
    c.adapt.steps = s.value("steps", c.adapt.steps);
    c.adapt.lr = s.value("lr", c.adapt.lr);
    if (s.contains("rule")) c.adapt.rule = parse_adapt_rule(s.at("rule").get<std::string>());
  }
  if (j.contains("synth")) {
    json s = j.at("synth");
    if (!s.contains("seed")) s["seed"] = c.seed;
    c.synth = synth_config_from_json(s);
  }
  c.rho = j.value("rho", c.rho);
  if (j.contains("prune_fractions")) {
    c.prune_fractions = j.at("prune_fractions").get<std::vector<double>>();
  }
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read config " + path.string());
  try {
    return config_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw InvalidInput("config " + path.string() + ": " + e.what());
  }
}

json to_json(const PipelineConfig& c) {
  json datasets = json::array();
  for (const auto& d : c.datasets) {
    datasets.push_back({{"path", d.path.string()}, {"format", d.format}});
  }
  json task_dirs = json::array();
  for (const auto& d : c.meta_task_dirs) task_dirs.push_back(d.string());
  json j = {
      {"datasets", datasets},
      {"segmentation",
       {{"block_length", c.segmentation.block_length}, {"stride", c.segmentation.stride}}},
      {"judge",
       {{"repeats", c.judge.repeats},
        {"swap_debias", c.judge.swap_debias},
        {"confidence_threshold", c.judge.confidence_threshold},
        {"max_series_points", c.judge.max_series_points},
        {"request_concurrency", c.judge.request_concurrency},
        {"kind", to_string(c.judge.kind)},
        {"pairs_per_criterion", c.pairs_per_criterion},
        {"heuristic_sharpness", c.heuristic_sharpness},
        {"endpoint",
         {{"base_url", c.endpoint.base_url},
          {"path", c.endpoint.path},
          {"model", c.endpoint.model},
          {"timeout_ms", c.endpoint.timeout.count()},
          {"max_attempts", c.endpoint.max_attempts},
          {"initial_backoff_ms", c.endpoint.initial_backoff.count()}}}}},
      {"bt",
       {{"initial_step", c.bt.initial_step},
        {"gradient_tol", c.bt.gradient_tol},
        {"likelihood_tol", c.bt.likelihood_tol},
        {"max_iterations", c.bt.max_iterations}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"seed", c.train.seed},
        {"holdout_fraction", c.holdout_fraction}}},
      {"meta",
       {{"inner_lr", c.meta.inner_lr},
        {"outer_lr", c.meta.outer_lr},
        {"inner_steps", c.meta.inner_steps},
        {"meta_batch_tasks", c.meta.meta_batch_tasks},
        {"within_task_batch", c.meta.within_task_batch},
        {"epochs", c.meta.epochs},
        {"seed", c.meta.seed},
        {"task_dirs", task_dirs}}},
      {"adapt",
       {{"shots", c.adapt.shots},
        {"steps", c.adapt.steps},
        {"lr", c.adapt.lr},
        {"rule", to_string(c.adapt.rule)}}},
      {"synth", to_json(c.synth)},
      {"rho", c.rho},
      {"prune_fractions", c.prune_fractions},
      {"out_dir", c.out_dir.string()},
      {"seed", c.seed}};
  if (c.corpus) j["corpus"] = c.corpus->string();
  if (c.cache_path) j["judge"]["cache_path"] = c.cache_path->string();
  return j;
}

void validate(const PipelineConfig& c) {
  validate(c.segmentation);
  validate(c.judge);
  validate(c.meta);
  validate(c.synth);
  if (!(c.rho > 0.0 && c.rho <= 1.0)) throw InvalidInput("rho must be in (0, 1]");
  if (c.pairs_per_criterion < 1) throw InvalidInput("pairs_per_criterion must be >= 1");
  if (!(c.holdout_fraction >= 0.0 && c.holdout_fraction < 1.0)) {
    throw InvalidInput("holdout_fraction must be in [0, 1)");
  }
  if (!(c.train.learning_rate >= 0.0) || c.train.epochs < 0 || c.train.batch_size < 1) {
    throw InvalidInput("invalid train config");
  }
  if (c.adapt.shots < 0 || c.adapt.steps < 0 || !(c.adapt.lr >= 0.0)) {
    throw InvalidInput("invalid adapt config");
  }
  for (const auto& d : c.datasets) {
    if (!fs::exists(d.path)) throw InvalidInput("dataset not readable: " + d.path.string());
  }
}

std::string config_hash(const PipelineConfig& config) {
  json j = to_json(config);
  j.erase("out_dir");
  return sha256_hex(j.dump());
}

json output_manifest(const PipelineConfig& config) {
  return {{"config_hash", config_hash(config)},
          {"seed", config.seed},
          {"tool_version", kToolVersion}};
}

// --- ingestion -------------------------------------------------------------------

json to_json(const TimeSeriesSample& s) {
  json j = {{"id", s.id}, {"channels", s.channels}};
  if (s.label) j["label"] = *s.label;
  if (s.domain_tag) j["domain_tag"] = *s.domain_tag;
  return j;
}

TimeSeriesSample sample_from_json(const json& j) {
  TimeSeriesSample s;
  if (!j.contains("id") || !j.at("id").is_string()) throw InvalidInput("missing string 'id'");
  s.id = j.at("id").get<std::string>();
  if (!j.contains("channels") || !j.at("channels").is_array()) {
    throw InvalidInput("missing 'channels' array");
  }
  for (const auto& ch : j.at("channels")) {
    if (!ch.is_array()) throw InvalidInput("channel is not an array");
    std::vector<double> values;
    for (const auto& v : ch) {
      if (!v.is_number()) throw InvalidInput("non-numeric value in channels");
      values.push_back(v.get<double>());
    }
    s.channels.push_back(std::move(values));
  }
  if (j.contains("label") && !j.at("label").is_null()) {
    s.label = j.at("label").is_string() ? j.at("label").get<std::string>() : j.at("label").dump();
  }
  if (j.contains("domain_tag")) s.domain_tag = j.at("domain_tag").get<std::string>();
  validate(s);
  return s;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  cells.push_back(cell);
  for (auto& c : cells) {
    const auto b = c.find_first_not_of(" \t");
    const auto e = c.find_last_not_of(" \t");
    c = b == std::string::npos ? "" : c.substr(b, e - b + 1);
  }
  return cells;
}

std::optional<double> parse_number(const std::string& cell) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end || cell.empty()) return std::nullopt;
  return v;
}

std::vector<TimeSeriesSample> ingest_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      rows.emplace_back();
      continue;
    }
    rows.push_back(split_csv_line(line));
  }
  auto where = [&](std::size_t row) {
    return path.string() + ": row " + std::to_string(row + 1);
  };

  std::size_t first = 0;
  while (first < rows.size() && rows[first].empty()) ++first;
  if (first == rows.size()) throw InvalidInput(path.string() + ": empty CSV");
  const auto& head = rows[first];
  const bool has_header = std::any_of(head.begin(), head.end(),
                                      [](const std::string& c) { return !parse_number(c); });

  std::vector<std::string> lower;
  for (auto c : head) {
    std::transform(c.begin(), c.end(), c.begin(), [](unsigned char x) { return std::tolower(x); });
    lower.push_back(c);
  }
  const bool long_format =
      has_header && lower == std::vector<std::string>{"sample_id", "channel", "t", "value"};

  if (long_format) {
    // sample -> channel -> t -> value
    std::map<std::string, std::map<int, std::map<int, double>>> data;
    std::vector<std::string> order;
    for (std::size_t r = first + 1; r < rows.size(); ++r) {
      if (rows[r].empty()) continue;
      if (rows[r].size() != 4) throw InvalidInput(where(r) + ": expected 4 cells");
      const auto ch = parse_number(rows[r][1]);
      const auto t = parse_number(rows[r][2]);
      const auto v = parse_number(rows[r][3]);
      if (!ch || !t || !v) throw InvalidInput(where(r) + ": non-numeric cell");
      if (*ch < 0 || *t < 0 || *ch != std::floor(*ch) || *t != std::floor(*t)) {
        throw InvalidInput(where(r) + ": channel and t must be non-negative integers");
      }
      const std::string& id = rows[r][0];
      if (!data.contains(id)) order.push_back(id);
      auto& cell = data[id][static_cast<int>(*ch)];
      if (!cell.emplace(static_cast<int>(*t), *v).second) {
        throw InvalidInput(where(r) + ": duplicate (sample_id, channel, t)");
      }
    }
    std::vector<TimeSeriesSample> samples;
    for (const auto& id : order) {
      TimeSeriesSample s;
      s.id = id;
      int expect_ch = 0;
      for (const auto& [ch, series] : data[id]) {
        if (ch != expect_ch++) throw InvalidInput(path.string() + ": sample '" + id + "' skips a channel");
        std::vector<double> values;
        int expect_t = 0;
        for (const auto& [t, v] : series) {
          if (t != expect_t++) {
            throw InvalidInput(path.string() + ": sample '" + id + "' channel " +
                               std::to_string(ch) + " has a gap at t=" + std::to_string(t - 1));
          }
          values.push_back(v);
        }
        s.channels.push_back(std::move(values));
      }
      try {
        validate(s);
      } catch (const InvalidInput& e) {
        throw InvalidInput(path.string() + ": sample '" + id + "': " + e.what());
      }
      samples.push_back(std::move(s));
    }
    return samples;
  }

  // Wide: one sample per file, rows are time steps.
  std::size_t start = has_header ? first + 1 : first;
  std::optional<std::size_t> width;
  bool id_column = has_header && !lower.empty() &&
                   (lower[0] == "id" || lower[0] == "sample_id");
  std::string sample_id = path.stem().string();
  std::vector<std::vector<double>> channels;
  for (std::size_t r = start; r < rows.size(); ++r) {
    if (rows[r].empty()) continue;
    const auto& row = rows[r];
    if (!width) {
      width = row.size();
      if (!id_column && !parse_number(row[0]) && row.size() > 1) id_column = true;
      const std::size_t d = *width - (id_column ? 1 : 0);
      if (d == 0) throw InvalidInput(where(r) + ": no value columns");
      channels.resize(d);
      if (id_column) sample_id = row[0];
    }
    if (row.size() != *width) {
      throw InvalidInput(where(r) + ": expected " + std::to_string(*width) + " cells, got " +
                         std::to_string(row.size()));
    }
    if (id_column && row[0] != sample_id) {
      throw InvalidInput(where(r) + ": wide CSV holds one sample; id '" + row[0] +
                         "' differs from '" + sample_id + "'");
    }
    for (std::size_t c = id_column ? 1 : 0; c < row.size(); ++c) {
      const auto v = parse_number(row[c]);
      if (!v) throw InvalidInput(where(r) + ": non-numeric cell '" + row[c] + "'");
      channels[c - (id_column ? 1 : 0)].push_back(*v);
    }
  }
  TimeSeriesSample s;
  s.id = sample_id;
  s.channels = std::move(channels);
  try {
    validate(s);
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
  return {std::move(s)};
}

std::vector<TimeSeriesSample> ingest_jsonl(const fs::path& path) {
  std::vector<TimeSeriesSample> samples;
  std::set<std::string> seen;
  for_each_jsonl(path, [&](const json& j, int) {
    TimeSeriesSample s = sample_from_json(j);
    if (!seen.insert(s.id).second) throw InvalidInput("duplicate sample id '" + s.id + "'");
    samples.push_back(std::move(s));
  });
  return samples;
}

}  // namespace

std::vector<TimeSeriesSample> ingest(const fs::path& path, std::string format) {
  if (!fs::exists(path)) throw InvalidInput("dataset not found: " + path.string());
  if (format == "auto") {
    const std::string ext = path.extension().string();
    format = (ext == ".csv") ? "csv" : (ext == ".jsonl" || ext == ".json") ? "jsonl" : "";
    if (format.empty()) throw InvalidInput("cannot infer format of " + path.string());
  }
  if (format == "csv") return ingest_csv(path);
  if (format == "jsonl") return ingest_jsonl(path);
  throw InvalidInput("unknown dataset format '" + format + "'");
}

json to_json(const JudgmentRecord& r) {
  return {{"block_i", r.block_i},
          {"block_j", r.block_j},
          {"criterion", to_string(r.criterion)},
          {"votes_forward", r.votes_forward},
          {"votes_reverse", r.votes_reverse},
          {"repeats_per_order", r.repeats_per_order},
          {"abstained_forward", r.abstained_forward},
          {"abstained_reverse", r.abstained_reverse},
          {"confidence_p", r.confidence_p},
          {"judge_id", r.judge_id}};
}

JudgmentRecord judgment_from_json(const json& j) {
  JudgmentRecord r;
  r.block_i = j.at("block_i").get<std::string>();
  r.block_j = j.at("block_j").get<std::string>();
  r.criterion = parse_criterion(j.at("criterion").get<std::string>());
  r.votes_forward = j.at("votes_forward").get<int>();
  r.votes_reverse = j.at("votes_reverse").get<int>();
  r.repeats_per_order = j.at("repeats_per_order").get<int>();
  r.abstained_forward = j.value("abstained_forward", 0);
  r.abstained_reverse = j.value("abstained_reverse", 0);
  r.confidence_p = j.at("confidence_p").get<double>();
  r.judge_id = j.at("judge_id").get<std::string>();
  if (r.block_i == r.block_j) throw InvalidInput("judgment compares a block with itself");
  if (!(r.confidence_p >= 0.0 && r.confidence_p <= 1.0)) {
    throw InvalidInput("confidence_p outside [0, 1]");
  }
  return r;
}

// --- selection ------------------------------------------------------------------

std::vector<RankedSample> rank_samples(const std::map<std::string, double>& scores) {
  std::vector<RankedSample> ranked;
  ranked.reserve(scores.size());
  for (const auto& [id, s] : scores) {
    if (!std::isfinite(s)) throw InvalidInput("non-finite score for sample '" + id + "'");
    ranked.push_back({id, s});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedSample& a, const RankedSample& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.sample_id < b.sample_id;
  });
  return ranked;
}

// Products like 0.7 * 10 can land a hair above or below an integer; treat
// anything within 1e-9 of one as that integer before rounding.
std::size_t selection_count(double rho, std::size_t n) {
  const double x = rho * static_cast<double>(n);
  const double r = std::round(x);
  const double k = std::abs(x - r) < 1e-9 ? r : std::ceil(x);
  return std::min(n, static_cast<std::size_t>(k));
}

std::size_t removal_count(double fraction, std::size_t n) {
  const double x = fraction * static_cast<double>(n);
  const double r = std::round(x);
  const double k = std::abs(x - r) < 1e-9 ? r : std::floor(x);
  return std::min(n, static_cast<std::size_t>(std::max(0.0, k)));
}

SelectionResult select(const std::map<std::string, double>& scores, double rho) {
  if (scores.empty()) throw InvalidInput("select: no scores");
  if (!(rho > 0.0 && rho <= 1.0)) throw InvalidInput("select: rho must be in (0, 1]");
  SelectionResult out;
  out.ranked = rank_samples(scores);
  const std::size_t k = selection_count(rho, out.ranked.size());
  for (std::size_t i = 0; i < k; ++i) out.selected.push_back(out.ranked[i].sample_id);
  return out;
}

std::vector<PruneStep> prune_schedule(const std::map<std::string, double>& scores,
                                      std::span<const double> fractions, PruneOrder order) {
  if (scores.empty()) throw InvalidInput("prune_schedule: no scores");
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const double f = fractions[k];
    if (!(f >= 0.0 && f < 1.0)) throw InvalidInput("prune fractions must lie in [0, 1)");
    if (k > 0 && !(f > fractions[k - 1])) {
      throw InvalidInput("prune fractions must be strictly increasing");
    }
  }
  auto ranked = rank_samples(scores);
  if (order == PruneOrder::kWorstFirst) std::reverse(ranked.begin(), ranked.end());
  std::vector<PruneStep> steps;
  for (double f : fractions) {
    PruneStep step;
    step.fraction = f;
    const std::size_t m = removal_count(f, ranked.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      (i < m ? step.removed : step.retained).push_back(ranked[i].sample_id);
    }
    if (order == PruneOrder::kWorstFirst) std::reverse(step.retained.begin(), step.retained.end());
    steps.push_back(std::move(step));
  }
  return steps;
}

// --- stage plumbing ----------------------------------------------------------------

OutputLock::OutputLock(const fs::path& out_dir) : path_(out_dir / ".tsrate.lock") {
  fs::create_directories(out_dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw std::runtime_error("output directory " + out_dir.string() +
                             " is locked by another run (remove " + path_.string() +
                             " if that run is gone)");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

ScoreSource parse_score_source(std::string_view name) {
  if (name == "bt") return ScoreSource::kBt;
  if (name == "rater") return ScoreSource::kRater;
  throw InvalidInput("unknown score source '" + std::string(name) + "' (expected bt or rater)");
}

void write_run_manifest(const PipelineConfig& config, const StageReport& report) {
  json j = output_manifest(config);
  j["stage"] = report.stage;
  j["created_at"] = utc_now();
  j["wall_clock_seconds"] = report.seconds;
  json outputs = json::array();
  for (const auto& p : report.outputs) outputs.push_back(p.filename().string());
  j["outputs"] = outputs;
  j["warnings"] = report.warnings;
  j["summary"] = report.summary;
  j["config"] = to_json(config);
  write_json(config.out_dir / (report.stage + ".manifest.json"), j);
}

std::vector<JudgmentRecord> read_judgments(const fs::path& path) {
  require(path, "judge");
  std::vector<JudgmentRecord> out;
  for_each_jsonl(path, [&](const json& j, int) { out.push_back(judgment_from_json(j)); });
  return out;
}

std::map<std::string, std::vector<double>> read_block_values(const fs::path& path) {
  require(path, "judge");
  std::map<std::string, std::vector<double>> out;
  for_each_jsonl(path, [&](const json& j, int) {
    out[j.at("block_id").get<std::string>()] = j.at("values").get<std::vector<double>>();
  });
  return out;
}

std::vector<TimeSeriesSample> read_samples(const fs::path& path) {
  require(path, "judge");
  return ingest(path, "jsonl");
}

namespace {

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// JSON-lines text where every record carries the output manifest fields.
class JsonlWriter {
 public:
  explicit JsonlWriter(json manifest) : manifest_(std::move(manifest)) {}
  void add(json j) {
    for (const auto& [k, v] : manifest_.items()) j[k] = v;
    text_ += j.dump();
    text_ += '\n';
  }
  void save(const fs::path& path) const { write_file(path, text_); }

 private:
  json manifest_;
  std::string text_;
};

SegmentationConfig read_segmentation(const PipelineConfig& config) {
  const fs::path path = config.out_dir / "segmentation.json";
  const json j = read_json(path, "judge");
  SegmentationConfig s;
  s.block_length = j.at("block_length").get<int>();
  s.stride = j.at("stride").get<int>();
  validate(s);
  (void)config;
  return s;
}

std::map<std::string, double> read_sample_scores(const fs::path& path, json* manifest) {
  const json j = read_json(path, "score");
  if (manifest) *manifest = j.value("manifest", json::object());
  return j.at("scores").get<std::map<std::string, double>>();
}

fs::path rater_path(const fs::path& dir, const std::string& prefix, Criterion c) {
  return dir / (prefix + "_" + crit_name(c) + ".bin");
}

std::vector<std::vector<JudgmentRecord>> by_criterion(std::span<const JudgmentRecord> records) {
  std::vector<std::vector<JudgmentRecord>> out(kAllCriteria.size());
  for (const auto& r : records) out[static_cast<int>(r.criterion)].push_back(r);
  return out;
}

}  // namespace

StageReport run_synth_gen(const PipelineConfig& config) {
  Timer timer;
  StageReport report;
  report.stage = "synth-gen";
  OutputLock lock(config.out_dir);
  const auto pairs = gen_corpus(config.synth);
  const fs::path corpus = config.out_dir / "corpus.jsonl";
  const fs::path manifest = config.out_dir / "corpus_manifest.json";
  fs::path tmp = corpus;
  tmp += ".tmp";
  write_corpus(tmp, pairs);
  fs::rename(tmp, corpus);
  json m = corpus_manifest(config.synth);
  m["manifest"] = output_manifest(config);
  write_json(manifest, m);
  report.outputs = {corpus, manifest};
  report.summary = {{"pairs", pairs.size()}, {"blocks", 2 * pairs.size()}};
  report.seconds = timer.seconds();
  write_run_manifest(config, report);
  return report;
}

namespace {

std::unique_ptr<Judge> make_judge(const PipelineConfig& config, OracleJudge** oracle_out) {
  switch (config.judge.kind) {
    case JudgeKind::kOracle: {
      auto j = std::make_unique<OracleJudge>();
      *oracle_out = j.get();
      return j;
    }
    case JudgeKind::kHeuristic:
      return std::make_unique<HeuristicJudge>(config.heuristic_sharpness);
    case JudgeKind::kLlm: {
      ChatEndpoint endpoint = config.endpoint;
      endpoint.api_key = api_key_from_env();
      return std::make_unique<LlmJudge>(endpoint.model, make_http_transport(endpoint),
                                        config.judge.max_series_points,
                                        config.judge.request_concurrency);
    }
  }
  throw InvalidInput("unknown judge kind");
}

std::unique_ptr<JudgmentCache> open_cache(const PipelineConfig& config) {
  if (config.cache_path) return std::make_unique<JudgmentCache>(*config.cache_path);
  if (config.judge.kind == JudgeKind::kLlm) {
    return std::make_unique<JudgmentCache>(config.out_dir / "judgment_cache.jsonl");
  }
  return nullptr;
}

}  // namespace

StageReport run_judge(const PipelineConfig& config) {
  Timer timer;
  StageReport report;
  report.stage = "judge";
  OutputLock lock(config.out_dir);

  std::vector<TimeSeriesSample> samples;
  std::vector<Criterion> sample_criterion;  // corpus mode only
  SegmentationConfig seg = config.segmentation;
  std::vector<TaggedPair> corpus;
  if (config.corpus) {
    require(*config.corpus, "synth-gen");
    corpus = read_corpus(*config.corpus);
    if (corpus.empty()) throw InvalidInput("corpus " + config.corpus->string() + " is empty");
    const int length = static_cast<int>(corpus.front().high.block.values.size());
    seg = {length, length};
    for (const auto& p : corpus) {
      for (const TaggedBlock* b : {&p.high, &p.low}) {
        if (static_cast<int>(b->block.values.size()) != length) {
          throw InvalidInput("corpus blocks differ in length");
        }
        TimeSeriesSample s;
        s.id = b->block.block_id;
        s.channels = {b->block.values};
        s.domain_tag = crit_name(b->criterion);
        samples.push_back(std::move(s));
        sample_criterion.push_back(b->criterion);
      }
    }
  } else {
    if (config.datasets.empty()) throw InvalidInput("judge: no datasets and no corpus configured");
    std::set<std::string> seen;
    for (const auto& d : config.datasets) {
      for (auto& s : ingest(d.path, d.format)) {
        if (!seen.insert(s.id).second) {
          throw InvalidInput("duplicate sample id '" + s.id + "' in " + d.path.string());
        }
        samples.push_back(std::move(s));
      }
    }
  }

  OracleJudge* oracle = nullptr;
  auto judge = make_judge(config, &oracle);
  if (oracle && corpus.empty()) {
    throw InvalidInput("the oracle judge needs a tagged synthetic corpus (set \"corpus\")");
  }

  std::vector<Block> blocks;
  std::vector<int> block_sample;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    for (auto& channel : segment(samples[s], seg)) {
      for (auto& b : channel) {
        blocks.push_back(std::move(b));
        block_sample.push_back(static_cast<int>(s));
      }
    }
  }
  if (oracle) {
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      const std::size_t s = block_sample[k];
      const auto& pair = corpus[s / 2];
      const TaggedBlock& tb = s % 2 == 0 ? pair.high : pair.low;
      oracle->add_tag(blocks[k].block_id, tb.criterion, tb.tag);
    }
  }

  auto cache = open_cache(config);
  const json manifest = output_manifest(config);
  JsonlWriter all(manifest), kept(manifest), block_out(manifest), sample_out(manifest);
  std::vector<JudgmentRecord> records;
  json per_criterion = json::object();
  for (Criterion c : kAllCriteria) {
    std::vector<std::size_t> pool;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      if (sample_criterion.empty() || sample_criterion[block_sample[k]] == c) pool.push_back(k);
    }
    if (pool.size() < 2) {
      report.warnings.push_back("fewer than 2 blocks for " + crit_name(c) + "; not judged");
      continue;
    }
    const auto pairs = sample_pairs(pool.size(), static_cast<std::size_t>(config.pairs_per_criterion),
                                    criterion_seed(config.seed, c, 1));
    int failed = 0;
    for (const auto& [a, b] : pairs) {
      try {
        records.push_back(
            judge_pair(*judge, blocks[pool[a]], blocks[pool[b]], c, config.judge, cache.get()));
      } catch (const JudgeError& e) {
        ++failed;
      }
    }
    if (failed > 0) {
      report.warnings.push_back(std::to_string(failed) + " " + crit_name(c) +
                                " pairs failed in every query of an ordering; dropped");
    }
    per_criterion[crit_name(c)] = {{"pairs", pairs.size()}, {"failed", failed}};
  }

  const auto filtered = filter_judgments(records, config.judge.confidence_threshold);
  for (const auto& r : records) all.add(to_json(r));
  for (const auto& r : filtered) kept.add(to_json(r));
  for (const auto& r : filtered) per_criterion[crit_name(r.criterion)]["kept"] =
      per_criterion[crit_name(r.criterion)].value("kept", 0) + 1;
  for (const auto& b : blocks) {
    block_out.add({{"block_id", b.block_id},
                   {"sample_id", b.sample_id},
                   {"channel", b.channel},
                   {"start", b.start},
                   {"length", b.length},
                   {"values", b.values}});
  }
  for (const auto& s : samples) sample_out.add(to_json(s));

  const fs::path out = config.out_dir;
  all.save(out / "judgments_all.jsonl");
  kept.save(out / "judgments.jsonl");
  block_out.save(out / "blocks.jsonl");
  sample_out.save(out / "samples.jsonl");
  json seg_json = output_manifest(config);
  seg_json["block_length"] = seg.block_length;
  seg_json["stride"] = seg.stride;
  write_json(out / "segmentation.json", seg_json);

  report.outputs = {out / "judgments_all.jsonl", out / "judgments.jsonl", out / "blocks.jsonl",
                    out / "samples.jsonl", out / "segmentation.json"};
  report.summary = {{"judge_id", judge->id()},
                    {"samples", samples.size()},
                    {"blocks", blocks.size()},
                    {"judgments", records.size()},
                    {"kept", filtered.size()},
                    {"per_criterion", per_criterion}};
  if (auto* llm = dynamic_cast<LlmJudge*>(judge.get())) {
    report.summary["requests_sent"] = llm->requests_sent();
  }
  report.seconds = timer.seconds();
  write_run_manifest(config, report);
  return report;
}

StageReport run_validate_judge(const PipelineConfig& config) {
  Timer timer;
  StageReport report;
  report.stage = "validate-judge";
  OutputLock lock(config.out_dir);
  std::vector<TaggedPair> pairs;
  if (config.corpus) {
    require(*config.corpus, "synth-gen");
    pairs = read_corpus(*config.corpus);
  } else {
    pairs = gen_corpus(config.synth);
  }
  OracleJudge* oracle = nullptr;
  auto judge = make_judge(config, &oracle);
  if (oracle) register_tags(*oracle, pairs);
  auto cache = open_cache(config);
  const auto table = validate_judge(*judge, pairs, config.judge, cache.get());
  json acc = json::object();
  for (const auto& [c, a] : table) acc[crit_name(c)] = {{"accuracy", a.accuracy}, {"pairs", a.pairs}};
  json doc = {{"manifest", output_manifest(config)}, {"judge_id", judge->id()}, {"accuracy", acc}};
  const fs::path path = config.out_dir / "judge_validation.json";
  write_json(path, doc);
  report.outputs = {path};
  report.summary = doc;
  report.seconds = timer.seconds();
  write_run_manifest(config, report);
  return report;
}

StageReport run_fit_bt(const PipelineConfig& config) {
  Timer timer;
  StageReport report;
  report.stage = "fit-bt";
  OutputLock lock(config.out_dir);
  const auto records = read_judgments(config.out_dir / "judgments.jsonl");
  const auto values = read_block_values(config.out_dir / "blocks.jsonl");
  json fits = json::object(), omitted = json::object();
  const auto groups = by_criterion(records);
  for (Criterion c : kAllCriteria) {
    const auto& mine = groups[static_cast<int>(c)];
    if (mine.empty()) {
      report.warnings.push_back("no surviving " + crit_name(c) + " judgments; criterion not fit");
      continue;
    }
    const BTFit fit = fit_bt(mine, config.bt);
    json j = to_json(fit);
    json sizes = json::array();
    for (const auto& comp : fit.components) sizes.push_back(comp.size());
    j["component_sizes"] = sizes;
    j["warnings"] = fit.warnings;
    fits[crit_name(c)] = j;
    const std::size_t missing = values.size() - fit.scores.size();
    omitted[crit_name(c)] = missing;
    if (missing > 0) {
      report.warnings.push_back(std::to_string(missing) + " blocks have no surviving " +
                                crit_name(c) + " judgment and get no BT score");
    }
    for (const auto& w : fit.warnings) report.warnings.push_back(crit_name(c) + ": " + w);
  }
  const fs::path path = config.out_dir / "bt_scores.json";
  write_json(path, {{"manifest", output_manifest(config)}, {"fits", fits}, {"omitted_blocks", omitted}});
  report.outputs = {path};
  report.summary = {{"omitted_blocks", omitted}};
  report.seconds = timer.seconds();
  write_run_manifest(config, report);
  return report;
}

StageReport run_train_rater(const PipelineConfig& config) {
  Timer timer;
  StageReport report;
  report.stage = "train-rater";
  OutputLock lock(config.out_dir);
  const auto records = read_judgments(config.out_dir / "judgments.jsonl");
  const auto values = read_block_values(config.out_dir / "blocks.jsonl");
  const StatsEncoder encoder;
  const json manifest = output_manifest(config);
  JsonlWriter metrics(manifest);
  json eval = json::object();
  const auto groups = by_criterion(records);
  for (Criterion c : kAllCriteria) {
    auto mine = groups[static_cast<int>(c)];
    if (mine.empty()) {
      report.warnings.push_back("no surviving " + crit_name(c) + " judgments; no rater trained");
      continue;
    }
    CounterRng rng(config.seed, criterion_seed(config.seed, c, 2));
    rng.shuffle(std::span<JudgmentRecord>(mine));
    const std::size_t n_hold = static_cast<std::size_t>(
        std::floor(config.holdout_fraction * static_cast<double>(mine.size())));
    const auto pairs = to_pair_examples(mine, values, encoder);
    const std::span<const PairExample> all(pairs);
    const auto train = all.subspan(n_hold);
    const auto held = all.first(n_hold);
    if (train.empty()) {
      report.warnings.push_back("no " + crit_name(c) + " training pairs after holdout");
      continue;
    }
    const TrainResult result = train_single(train, config.train, c);
    const fs::path path = rater_path(config.out_dir, "rater", c);
    save_rater(result.weights, path);
    report.outputs.push_back(path);
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
      metrics.add({{"stage", "train-rater"},
                   {"criterion", crit_name(c)},
                   {"epoch", e + 1},
                   {"loss", result.epoch_loss[e]}});
    }
    json entry = {{"train_pairs", train.size()}, {"heldout_pairs", held.size()}};
    auto accuracy = [&](std::span<const PairExample> set) -> json {
      try {
        return pairwise_accuracy(result.weights, set);
      } catch (const InvalidInput&) {
        return nullptr;
      }
    };
    entry["train_accuracy"] = accuracy(train);
    entry["heldout_accuracy"] = held.empty() ? json(nullptr) : accuracy(held);
    eval[crit_name(c)] = entry;
  }
  const fs::path eval_path = config.out_dir / "rater_eval.json";
  write_json(eval_path, {{"manifest", manifest}, {"criteria", eval}});
  metrics.save(config.out_dir / "train_metrics.jsonl");
  report.outputs.push_back(eval_path);
  report.outputs.push_back(config.out_dir / "train_metrics.jsonl");
  report.summary = eval;
  report.seconds = timer.seconds();
  write_run_manifest(config, report);
  return report;
}

StageReport run_meta_train(const PipelineConfig& config) {
  Timer timer;
  StageReport report;
  report.stage = "meta-train";
  OutputLock lock(config.out_dir);
  if (config.meta_task_dirs.empty()) {
    throw InvalidInput("meta-train: no task directories configured (meta.task_dirs)");
  }
  std::vector<JudgedDataset> datasets;
  for (const auto& dir : config.meta_task_dirs) {
    JudgedDataset d;
    d.id = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
    d.judgments = read_judgments(dir / "judgments.jsonl");
    d.block_values = read_block_values(dir / "blocks.jsonl");
    datasets.push_back(std::move(d));
  }
  const StatsEncoder encoder;
  const json manifest = output_manifest(config);
  JsonlWriter metrics(manifest);
  json summary = json::object();
  for (Criterion c : kAllCriteria) {
    auto built = build_tasks(datasets, c, config.seed, encoder);
    for (const auto& w : built.warnings) report.warnings.push_back(w);
    if (built.tasks.empty()) {
      report.warnings.push_back("no " + crit_name(c) + " tasks; no meta rater trained");
      continue;
    }
    const MetaTrainResult result = meta_train(built.tasks, config.meta);
    const fs::path path = rater_path(config.out_dir, "meta", c);
    save_rater(result.weights, path);
    report.outputs.push_back(path);
    for (const auto& m : result.metrics) {
      metrics.add({{"stage", "meta-train"},
                   {"criterion", crit_name(c)},
                   {"epoch", m.epoch},
                   {"mean_query_loss", m.mean_query_loss},
                   {"mean_support_loss", m.mean_support_loss}});
    }
    summary[crit_name(c)] = {{"tasks", built.tasks.size()}};
  }
  metrics.save(config.out_dir / "meta_metrics.jsonl");
  report.outputs.push_back(config.out_dir / "meta_metrics.jsonl");
  report.summary = summary;
  report.seconds = timer.seconds();
  write_run_manifest(config, report);
  return report;
}

StageReport run_adapt(const PipelineConfig& config, const fs::path& meta_dir) {
  Timer timer;
  StageReport report;
  report.stage = "adapt";
  OutputLock lock(config.out_dir);
  const auto records = read_judgments(config.out_dir / "judgments.jsonl");
  const auto values = read_block_values(config.out_dir / "blocks.jsonl");
  const StatsEncoder encoder;
  json eval = json::object();
  const auto groups = by_criterion(records);
  for (Criterion c : kAllCriteria) {
    auto mine = groups[static_cast<int>(c)];
    if (mine.empty()) continue;
    const fs::path from = rater_path(meta_dir, "meta", c);
    require(from, "meta-train");
    const RaterWeights theta = load_rater(from);
    CounterRng rng(config.seed, criterion_seed(config.seed, c, 3));
    rng.shuffle(std::span<JudgmentRecord>(mine));
    const auto pairs = to_pair_examples(mine, values, encoder);
    const std::span<const PairExample> all(pairs);
    const std::size_t shots = std::min(all.size(), static_cast<std::size_t>(config.adapt.shots));
    const RaterWeights adapted = few_shot_adapt(theta, all.first(shots), config.adapt);
    const fs::path path = rater_path(config.out_dir, "adapted", c);
    save_rater(adapted, path);
    report.outputs.push_back(path);
    json entry = {{"shots", shots}, {"eval_pairs", all.size() - shots}};
    const auto rest = all.subspan(shots);
    try {
      entry["zero_shot_accuracy"] = pairwise_accuracy(theta, rest);
      entry["adapted_accuracy"] = pairwise_accuracy(adapted, rest);
    } catch (const InvalidInput&) {
      entry["zero_shot_accuracy"] = nullptr;
      entry["adapted_accuracy"] = nullptr;
    }
    eval[crit_name(c)] = entry;
  }
  const fs::path eval_path = config.out_dir / "adapt_eval.json";
  write_json(eval_path, {{"manifest", output_manifest(config)}, {"criteria", eval}});
  report.outputs.push_back(eval_path);
  report.summary = eval;
  report.seconds = timer.seconds();
  write_run_manifest(config, report);
  return report;
}

StageReport run_score(const PipelineConfig& config, ScoreSource source,
                      const std::string& rater_prefix, const std::optional<fs::path>& weights_dir) {
  Timer timer;
  StageReport report;
  report.stage = "score";
  OutputLock lock(config.out_dir);
  const auto samples = read_samples(config.out_dir / "samples.jsonl");
  const SegmentationConfig seg = read_segmentation(config);
  const json manifest = output_manifest(config);
  const std::string source_name = source == ScoreSource::kBt ? "bt" : "rater:" + rater_prefix;

  ScoreTable table;
  if (source == ScoreSource::kBt) {
    const json doc = read_json(config.out_dir / "bt_scores.json", "fit-bt");
    for (const auto& [name, fit] : doc.at("fits").items()) {
      table.per_criterion[parse_criterion(name)] =
          fit.at("scores").get<std::map<std::string, double>>();
    }
    if (table.per_criterion.empty()) throw InvalidInput("bt_scores.json holds no fits");
    // Fusion needs one block set; keep blocks every criterion scored.
    std::map<std::string, double> common = table.per_criterion.begin()->second;
    for (const auto& [c, scores] : table.per_criterion) {
      std::erase_if(common, [&](const auto& kv) { return !scores.contains(kv.first); });
    }
    for (auto& [c, scores] : table.per_criterion) {
      const std::size_t before = scores.size();
      std::erase_if(scores, [&](const auto& kv) { return !common.contains(kv.first); });
      if (scores.size() < before) {
        report.warnings.push_back(std::to_string(before - scores.size()) + " " + crit_name(c) +
                                  " blocks lack a score for another criterion; left out of fusion");
      }
    }
    if (common.empty()) {
      throw InvalidInput("no block has a BT score for every fitted criterion; use --source rater");
    }
  } else {
    const fs::path dir = weights_dir.value_or(config.out_dir);
    const StatsEncoder encoder;
    std::vector<std::string> ids;
    std::vector<std::vector<double>> features;
    for (const auto& s : samples) {
      for (const auto& channel : segment(s, seg)) {
        for (const auto& b : channel) {
          ids.push_back(b.block_id);
          features.push_back(encoder.encode(b.values));
        }
      }
    }
    for (Criterion c : kAllCriteria) {
      const fs::path path = rater_path(dir, rater_prefix, c);
      const std::string producer = rater_prefix == "meta"      ? "meta-train"
                                   : rater_prefix == "adapted" ? "adapt"
                                                               : "train-rater";
      require(path, producer);
      const RaterWeights w = load_rater(path);
      const auto scores = rater_forward_batch(w, features);
      auto& out = table.per_criterion[c];
      for (std::size_t k = 0; k < ids.size(); ++k) out[ids[k]] = scores[k];
    }
  }
  table.provenance = source_name;
  for (Criterion c : kAllCriteria) {
    if (!table.per_criterion.contains(c)) {
      report.warnings.push_back("no " + crit_name(c) + " scores; fused over the other criteria");
    }
  }
  const ScoreTable fused = fuse_criteria(table);

  for (const auto& [c, scores] : fused.per_criterion) {
    const fs::path path = config.out_dir / ("scores_" + crit_name(c) + ".json");
    write_json(path, {{"manifest", manifest},
                      {"source", source_name},
                      {"criterion", crit_name(c)},
                      {"scores", scores}});
    report.outputs.push_back(path);
  }
  json criteria = json::array();
  for (const auto& [c, _] : fused.per_criterion) criteria.push_back(crit_name(c));
  const fs::path fused_path = config.out_dir / "scores_fused.json";
  write_json(fused_path, {{"manifest", manifest},
                          {"source", source_name},
                          {"criteria", criteria},
                          {"scores", *fused.fused}});
  report.outputs.push_back(fused_path);

  JsonlWriter points(manifest);
  std::map<std::string, double> sample_scores;
  std::size_t omitted = 0;
  for (const auto& s : samples) {
    SampleScores ss;
    try {
      ss = score_sample(*fused.fused, s, seg);
    } catch (const InvalidInput&) {
      ++omitted;
      continue;
    }
    for (std::size_t d = 0; d < ss.channel_points.size(); ++d) {
      if (ss.channel_points[d].empty()) continue;
      points.add({{"sample_id", s.id}, {"channel", d}, {"scores", ss.channel_points[d]}});
    }
    sample_scores[s.id] = ss.sample_score;
  }
  if (omitted > 0) {
    report.warnings.push_back(std::to_string(omitted) +
                              " samples have unscored points and get no sample score");
  }
  points.save(config.out_dir / "point_scores.jsonl");
  const fs::path sample_path = config.out_dir / "sample_scores.json";
  write_json(sample_path, {{"manifest", manifest},
                           {"source", source_name},
                           {"omitted_samples", omitted},
                           {"scores", sample_scores}});
  report.outputs.push_back(config.out_dir / "point_scores.jsonl");
  report.outputs.push_back(sample_path);
  report.summary = {{"source", source_name},
                    {"blocks", fused.fused->size()},
                    {"samples_scored", sample_scores.size()},
                    {"samples_omitted", omitted}};
  report.seconds = timer.seconds();
  write_run_manifest(config, report);
  return report;
}

StageReport run_select(const PipelineConfig& config) {
  Timer timer;
  StageReport report;
  report.stage = "select";
  OutputLock lock(config.out_dir);
  json upstream;
  const auto scores = read_sample_scores(config.out_dir / "sample_scores.json", &upstream);
  SelectionResult result = select(scores, config.rho);
  result.manifest = output_manifest(config);
  result.manifest["provenance"] = json::array({{{"file", "sample_scores.json"}, {"manifest", upstream}}});
  json ranked = json::array();
  for (const auto& r : result.ranked) ranked.push_back({{"sample_id", r.sample_id}, {"score", r.score}});
  const fs::path path = config.out_dir / "selection.json";
  write_json(path, {{"manifest", result.manifest},
                    {"rho", config.rho},
                    {"ranked", ranked},
                    {"selected", result.selected}});
  report.outputs = {path};
  report.summary = {{"samples", result.ranked.size()}, {"selected", result.selected.size()}};
  report.seconds = timer.seconds();
  write_run_manifest(config, report);
  return report;
}

StageReport run_prune_curve(const PipelineConfig& config) {
  Timer timer;
  StageReport report;
  report.stage = "prune-curve";
  OutputLock lock(config.out_dir);
  json upstream;
  const auto scores = read_sample_scores(config.out_dir / "sample_scores.json", &upstream);
  const auto steps = prune_schedule(scores, config.prune_fractions);
  json out_steps = json::array();
  for (const auto& s : steps) {
    out_steps.push_back({{"fraction", s.fraction},
                         {"removed_count", s.removed.size()},
                         {"removed", s.removed},
                         {"retained", s.retained}});
  }
  json manifest = output_manifest(config);
  manifest["provenance"] = json::array({{{"file", "sample_scores.json"}, {"manifest", upstream}}});
  const fs::path path = config.out_dir / "prune_schedule.json";
  write_json(path, {{"manifest", manifest}, {"order", "best_first"}, {"steps", out_steps}});
  report.outputs = {path};
  report.summary = {{"samples", scores.size()}, {"steps", steps.size()}};
  report.seconds = timer.seconds();
  write_run_manifest(config, report);
  return report;
}

}  // namespace tsrate
