#include "tsrate/llm_judge.hpp"

#include <cstdlib>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

namespace tsrate {

std::string api_key_from_env() {
  const char* key = std::getenv("TSRATE_API_KEY");
  return key ? std::string(key) : std::string();
}

ChatTransport make_http_transport(ChatEndpoint endpoint) {
  return [endpoint = std::move(endpoint)](const std::string& prompt) -> std::string {
    httplib::Client client(endpoint.base_url);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
    const auto usecs =
        std::chrono::duration_cast<std::chrono::microseconds>(endpoint.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    if (!endpoint.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + endpoint.api_key);
    }
    const nlohmann::json body = {
        {"model", endpoint.model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
    const std::string payload = body.dump();

    std::string last_error = "no attempts made";
    auto backoff = endpoint.initial_backoff;
    for (int attempt = 0; attempt < std::max(1, endpoint.max_attempts); ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      auto res = client.Post(endpoint.path, headers, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw std::runtime_error("chat completion failed with HTTP " +
                                 std::to_string(res->status) + ": " + res->body);
      }
      const auto reply = nlohmann::json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    }
    throw std::runtime_error("chat completion failed after retries: " + last_error);
  };
}

LlmJudge::LlmJudge(std::string model_id, ChatTransport transport, int max_series_points,
                   int concurrency, int parse_retries)
    : model_id_(std::move(model_id)),
      transport_(std::move(transport)),
      max_series_points_(max_series_points),
      concurrency_(std::max(1, concurrency)),
      parse_retries_(std::max(0, parse_retries)) {}

OrderingTally LlmJudge::compare(const Block& first, const Block& second,
                                Criterion criterion, int repeats) {
  static constexpr std::string_view kFirst = "A";
  static constexpr std::string_view kSecond = "B";
  const std::string prompt =
      render_prompt(criterion, first.values, second.values, kFirst, kSecond, max_series_points_);

  // 1 = first chosen, 0 = second chosen, -1 = abstention.
  std::vector<int> outcomes(static_cast<std::size_t>(repeats), -1);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int q = next++; q < repeats; q = next++) {
      for (int attempt = 0; attempt <= parse_retries_; ++attempt) {
        std::string reply;
        try {
          ++requests_;
          reply = transport_(prompt);
        } catch (const std::exception&) {
          break;  // the transport already spent its own retry budget
        }
        try {
          outcomes[q] = parse_choice(reply, kFirst, kSecond) == kFirst ? 1 : 0;
          break;
        } catch (const InvalidInput&) {
        }
      }
    }
  };
  const int n_threads = std::min(concurrency_, repeats);
  std::vector<std::thread> threads;
  for (int t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  OrderingTally tally;
  for (int o : outcomes) {
    if (o < 0) {
      ++tally.abstained;
    } else {
      ++tally.counted;
      tally.votes_first += o;
    }
  }
  return tally;
}

}  // namespace tsrate
