#include "musicqa/llm_client.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <sstream>

#include "musicqa/errors.hpp"
#include "musicqa/fileio.hpp"
#include "musicqa/hashing.hpp"

using nlohmann::json;

namespace musicqa {

std::string chat_request_body(const std::vector<ChatMessage>& messages, const std::string& model,
                              double temperature) {
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"content", m.content}, {"role", m.role}});
  const json body{{"messages", std::move(msgs)}, {"model", model}, {"temperature", temperature}};
  return body.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::string chat_cache_key(const std::vector<ChatMessage>& messages, const std::string& model,
                           double temperature) {
  return sha256_hex(chat_request_body(messages, model, temperature));
}

std::filesystem::path chat_cache_path(const std::filesystem::path& cache_dir, const std::string& key) {
  return cache_dir / key.substr(0, 2) / (key + ".json");
}

LlmClient::LlmClient(LlmEndpoint endpoint) : endpoint_(std::move(endpoint)) {
  if (endpoint_.max_in_flight == 0) endpoint_.max_in_flight = 1;
}

namespace {

std::optional<std::string> read_cached(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) return std::nullopt;
  try {
    const auto doc = json::parse(read_file(path));
    return doc.at("content").get<std::string>();
  } catch (const std::exception& e) {
    spdlog::warn("ignoring unreadable cache entry {}: {}", path.string(), e.what());
    return std::nullopt;
  }
}

std::string extract_content(const std::string& response) {
  const json doc = json::parse(response, nullptr, false);
  if (doc.is_discarded()) throw TransportError("chat completion response is not JSON");
  try {
    const auto& msg = doc.at("choices").at(0).at("message");
    const auto& content = msg.at("content");
    if (content.is_null()) return "";
    return content.get<std::string>();
  } catch (const json::exception&) {
    throw TransportError("chat completion response has no choices[0].message.content");
  }
}

}  // namespace

std::string LlmClient::fetch(const std::string& key, const std::string& body) {
  {
    std::unique_lock lock(slot_mu_);
    slot_cv_.wait(lock, [&] { return in_flight_ < endpoint_.max_in_flight; });
    ++in_flight_;
  }
  struct Release {
    LlmClient* self;
    ~Release() {
      {
        std::lock_guard lock(self->slot_mu_);
        --self->in_flight_;
      }
      self->slot_cv_.notify_one();
    }
  } release{this};

  std::string content = extract_content(post_json(endpoint_.http, body, &attempts_));
  if (!endpoint_.cache_dir.empty()) {
    json entry{{"key", key}, {"model", endpoint_.model}, {"content", content}};
    write_file_atomic(chat_cache_path(endpoint_.cache_dir, key),
                      entry.dump(-1, ' ', false, json::error_handler_t::replace));
  }
  return content;
}

std::string LlmClient::complete(const std::vector<ChatMessage>& messages) {
  const std::string body = chat_request_body(messages, endpoint_.model, endpoint_.temperature);
  const std::string key = sha256_hex(body);

  std::promise<std::string> promise;
  std::shared_future<std::string> future;
  bool owner = false;
  {
    std::lock_guard lock(mu_);
    if (auto it = memo_.find(key); it != memo_.end()) {
      future = it->second;
    } else {
      future = promise.get_future().share();
      memo_.emplace(key, future);
      owner = true;
    }
  }
  if (!owner) {
    cache_hits_.fetch_add(1);
    return future.get();
  }

  try {
    std::optional<std::string> cached;
    if (!endpoint_.cache_dir.empty()) cached = read_cached(chat_cache_path(endpoint_.cache_dir, key));
    if (cached) {
      cache_hits_.fetch_add(1);
      promise.set_value(std::move(*cached));
    } else {
      promise.set_value(fetch(key, body));
    }
  } catch (...) {
    // Failures are not memoised; a later call may succeed.
    {
      std::lock_guard lock(mu_);
      memo_.erase(key);
    }
    promise.set_exception(std::current_exception());
  }
  return future.get();
}

std::string call_llm(const PromptSpec& spec, LlmClient& client) { return client.complete(spec); }

}  // namespace musicqa
