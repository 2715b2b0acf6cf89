#pragma once

// Append-only JSON-lines store of pairwise judgments, keyed by judge, criterion,
// block content hashes and prompt template version.

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>

#include "tsrate/core.hpp"

namespace tsrate {

struct CachedJudgment {
  std::string judge_id;
  Criterion criterion = Criterion::kTrend;
  std::string hash_i;
  std::string hash_j;
  int votes_forward = 0;
  int votes_reverse = 0;
  int repeats_per_order = 0;
  int abstained_forward = 0;
  int abstained_reverse = 0;
  double confidence_p = 0.5;
  std::string template_version;
  std::string timestamp;
};

class JudgmentCache {
 public:
  /// Loads existing records. A trailing partial line (interrupted write) is
  /// dropped and truncated from the file; a malformed complete line throws.
  explicit JudgmentCache(std::filesystem::path path);

  std::optional<CachedJudgment> find(const std::string& judge_id, Criterion criterion,
                                     const std::string& hash_i,
                                     const std::string& hash_j,
                                     const std::string& template_version) const;

  /// Appends and flushes one record. Thread-safe.
  void append(CachedJudgment record);

  std::size_t size() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  using Key = std::tuple<std::string, int, std::string, std::string, std::string>;
  static Key key_of(const CachedJudgment& r);

  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<Key, CachedJudgment> records_;
};

}  // namespace tsrate
