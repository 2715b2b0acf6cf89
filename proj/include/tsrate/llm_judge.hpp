#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <string>

#include "tsrate/judge.hpp"

namespace tsrate {

struct ChatEndpoint {
  std::string base_url = "https://api.openai.com";  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-4o-mini";
  std::string api_key;  // sent as a Bearer token when non-empty
  std::chrono::milliseconds timeout{30000};
  int max_attempts = 4;  // per request, transport errors and 429/5xx only
  std::chrono::milliseconds initial_backoff{500};
};

/// Reads the API key from TSRATE_API_KEY; empty if unset.
std::string api_key_from_env();

/// Sends one prompt, returns the assistant message text. Throws
/// std::runtime_error when every attempt fails.
using ChatTransport = std::function<std::string(const std::string& prompt)>;

/// Blocking OpenAI-compatible chat-completions client (no temperature is set,
/// so the provider default applies).
ChatTransport make_http_transport(ChatEndpoint endpoint);

class LlmJudge : public Judge {
 public:
  LlmJudge(std::string model_id, ChatTransport transport, int max_series_points = 128,
           int concurrency = 4, int parse_retries = 2);

  std::string id() const override { return "llm:" + model_id_; }

  /// Labels are "A" (first) and "B" (second). An answer that cannot be parsed
  /// after the retry budget, or a failed request, is an abstention.
  OrderingTally compare(const Block& first, const Block& second, Criterion criterion,
                        int repeats) override;

  std::size_t requests_sent() const { return requests_; }

 private:
  std::string model_id_;
  ChatTransport transport_;
  int max_series_points_;
  int concurrency_;
  int parse_retries_;
  std::atomic<std::size_t> requests_{0};
};

}  // namespace tsrate
