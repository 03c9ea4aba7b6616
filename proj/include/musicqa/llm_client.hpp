#pragma once

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "musicqa/llmgen.hpp"
#include "musicqa/service.hpp"

namespace musicqa {

struct LlmEndpoint {
  HttpEndpoint http{"http://127.0.0.1:8000", "/v1/chat/completions", "MUSICQA_LLM_API_KEY",
                    std::chrono::milliseconds(60000), RetryPolicy{}};
  std::string model = "gpt-3.5-turbo";
  double temperature = 1.0;
  // Empty: responses are only cached in memory for the client's lifetime.
  std::filesystem::path cache_dir;
  std::size_t max_in_flight = 8;
};

// Canonical request body: {"messages","model","temperature"} with sorted keys
// and no whitespace. Its SHA-256 is the cache key.
std::string chat_request_body(const std::vector<ChatMessage>& messages, const std::string& model,
                              double temperature);
std::string chat_cache_key(const std::vector<ChatMessage>& messages, const std::string& model,
                           double temperature);
// <cache_dir>/<first two hex digits>/<key>.json
std::filesystem::path chat_cache_path(const std::filesystem::path& cache_dir, const std::string& key);

// OpenAI-compatible chat completion client with a content-addressed response
// cache. Thread-safe: concurrent identical requests share one network call and
// at most max_in_flight requests are outstanding at a time.
class LlmClient {
 public:
  explicit LlmClient(LlmEndpoint endpoint);

  // Assistant message content for the prompt.
  std::string complete(const std::vector<ChatMessage>& messages);
  std::string complete(const PromptSpec& spec) { return complete(spec.messages()); }

  const LlmEndpoint& endpoint() const { return endpoint_; }
  // HTTP attempts made so far, retries included.
  std::uint64_t network_requests() const { return attempts_.load(); }
  std::uint64_t cache_hits() const { return cache_hits_.load(); }

 private:
  std::string fetch(const std::string& key, const std::string& body);

  LlmEndpoint endpoint_;
  std::atomic<std::uint64_t> attempts_{0};
  std::atomic<std::uint64_t> cache_hits_{0};

  std::mutex mu_;
  std::map<std::string, std::shared_future<std::string>> memo_;

  std::mutex slot_mu_;
  std::condition_variable slot_cv_;
  std::size_t in_flight_ = 0;
};

std::string call_llm(const PromptSpec& spec, LlmClient& client);

}  // namespace musicqa
