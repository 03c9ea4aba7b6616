#include "musicqa/service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <random>
#include <thread>

#include "musicqa/errors.hpp"

namespace musicqa {

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, std::uint32_t attempt,
                                        std::uint64_t draw) {
  const auto cap = policy.max_backoff.count();
  long long ceiling = policy.initial_backoff.count();
  for (std::uint32_t i = 0; i < attempt && ceiling < cap; ++i) ceiling *= 2;
  ceiling = std::min<long long>(ceiling, cap);
  if (ceiling <= 0) return std::chrono::milliseconds(0);
  return std::chrono::milliseconds(static_cast<long long>(draw % static_cast<std::uint64_t>(ceiling + 1)));
}

namespace {

std::uint64_t jitter_draw() {
  thread_local std::mt19937_64 gen(std::random_device{}());
  return gen();
}

std::chrono::milliseconds retry_after(const httplib::Response& res, const RetryPolicy& policy) {
  if (!res.has_header("Retry-After")) return std::chrono::milliseconds(-1);
  const std::string v = res.get_header_value("Retry-After");
  char* end = nullptr;
  const double secs = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || secs < 0) return std::chrono::milliseconds(-1);
  const auto ms = std::chrono::milliseconds(static_cast<long long>(secs * 1000.0));
  return std::min(ms, policy.max_backoff);
}

}  // namespace

std::string post_json(const HttpEndpoint& endpoint, const std::string& body,
                      std::atomic<std::uint64_t>* attempts) {
  httplib::Client client(endpoint.base_url);
  if (!client.is_valid()) throw TransportError("invalid endpoint URL: " + endpoint.base_url);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(endpoint.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  if (!endpoint.api_key_env.empty()) {
    const char* key = std::getenv(endpoint.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw AuthError("environment variable " + endpoint.api_key_env + " is not set");
    }
    client.set_bearer_token_auth(key);
  }

  const std::string where = endpoint.base_url + endpoint.path;
  for (std::uint32_t attempt = 0;; ++attempt) {
    if (attempts) attempts->fetch_add(1);
    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(endpoint.path, body, "application/json");
    std::chrono::milliseconds hint(-1);
    std::string failure;
    int kind = 0;  // 1 rate limit, 2 transport, 3 timeout
    if (!res) {
      const auto err = res.error();
      const bool timed_out =
          err == httplib::Error::ConnectionTimeout ||
          (err == httplib::Error::Read && std::chrono::steady_clock::now() - started >= endpoint.timeout);
      kind = timed_out ? 3 : 2;
      failure = where + ": " + httplib::to_string(err);
    } else if (res->status >= 200 && res->status < 300) {
      return res->body;
    } else if (res->status == 401 || res->status == 403) {
      throw AuthError(where + ": HTTP " + std::to_string(res->status));
    } else if (res->status == 429) {
      kind = 1;
      hint = retry_after(*res, endpoint.retry);
      failure = where + ": HTTP 429";
    } else if (res->status >= 500 || res->status == 408) {
      kind = res->status == 408 || res->status == 504 ? 3 : 2;
      hint = retry_after(*res, endpoint.retry);
      failure = where + ": HTTP " + std::to_string(res->status);
    } else {
      throw TransportError(where + ": HTTP " + std::to_string(res->status) + ": " +
                           res->body.substr(0, 200));
    }

    if (attempt >= endpoint.retry.max_retries) {
      if (kind == 1) throw RateLimitError(failure + " (retries exhausted)");
      if (kind == 3) throw TimeoutError(failure + " (retries exhausted)");
      throw TransportError(failure + " (retries exhausted)");
    }
    const auto delay = hint.count() >= 0 ? hint : backoff_delay(endpoint.retry, attempt, jitter_draw());
    spdlog::debug("{}; retry {} in {} ms", failure, attempt + 1, delay.count());
    std::this_thread::sleep_for(delay);
  }
}

}  // namespace musicqa
