#include "tsrate/judgment_cache.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace tsrate {

using nlohmann::json;

namespace {

CachedJudgment from_json(const json& j) {
  CachedJudgment r;
  r.judge_id = j.at("judge_id").get<std::string>();
  r.criterion = parse_criterion(j.at("criterion").get<std::string>());
  r.hash_i = j.at("hash_i").get<std::string>();
  r.hash_j = j.at("hash_j").get<std::string>();
  r.votes_forward = j.at("votes_forward").get<int>();
  r.votes_reverse = j.at("votes_reverse").get<int>();
  r.repeats_per_order = j.at("repeats_per_order").get<int>();
  r.abstained_forward = j.value("abstained_forward", 0);
  r.abstained_reverse = j.value("abstained_reverse", 0);
  r.confidence_p = j.at("confidence_p").get<double>();
  r.template_version = j.at("template_version").get<std::string>();
  r.timestamp = j.value("timestamp", "");
  return r;
}

json to_json(const CachedJudgment& r) {
  return json{{"judge_id", r.judge_id},
              {"criterion", to_string(r.criterion)},
              {"hash_i", r.hash_i},
              {"hash_j", r.hash_j},
              {"votes_forward", r.votes_forward},
              {"votes_reverse", r.votes_reverse},
              {"repeats_per_order", r.repeats_per_order},
              {"abstained_forward", r.abstained_forward},
              {"abstained_reverse", r.abstained_reverse},
              {"confidence_p", r.confidence_p},
              {"template_version", r.template_version},
              {"timestamp", r.timestamp}};
}

}  // namespace

JudgmentCache::Key JudgmentCache::key_of(const CachedJudgment& r) {
  return {r.judge_id, static_cast<int>(r.criterion), r.hash_i, r.hash_j, r.template_version};
}

JudgmentCache::JudgmentCache(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  std::ifstream in(path_, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string content = buf.str();
  in.close();

  std::size_t pos = 0;
  std::size_t line_no = 0;
  std::size_t complete_end = 0;
  while (pos < content.size()) {
    const std::size_t nl = content.find('\n', pos);
    ++line_no;
    if (nl == std::string::npos) break;  // trailing partial line
    const std::string line = content.substr(pos, nl - pos);
    pos = nl + 1;
    complete_end = pos;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      CachedJudgment r = from_json(json::parse(line));
      records_[key_of(r)] = std::move(r);
    } catch (const std::exception& e) {
      throw InvalidInput(path_.string() + ":" + std::to_string(line_no) +
                         ": malformed judgment cache line: " + e.what());
    }
  }
  if (complete_end < content.size()) std::filesystem::resize_file(path_, complete_end);
}

std::optional<CachedJudgment> JudgmentCache::find(const std::string& judge_id,
                                                  Criterion criterion,
                                                  const std::string& hash_i,
                                                  const std::string& hash_j,
                                                  const std::string& template_version) const {
  std::lock_guard lock(mu_);
  auto it = records_.find({judge_id, static_cast<int>(criterion), hash_i, hash_j, template_version});
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void JudgmentCache::append(CachedJudgment record) {
  std::lock_guard lock(mu_);
  {
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw std::runtime_error("cannot open judgment cache " + path_.string());
    out << to_json(record).dump() << '\n';
    out.flush();
  }
  records_[key_of(record)] = std::move(record);
}

std::size_t JudgmentCache::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

}  // namespace tsrate
