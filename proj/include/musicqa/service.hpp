#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>

namespace musicqa {

struct RetryPolicy {
  std::uint32_t max_retries = 5;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::milliseconds max_backoff{30000};
};

// An HTTP(S) JSON endpoint. The credential is never stored here, only the
// name of the environment variable that holds it.
struct HttpEndpoint {
  std::string base_url;  // scheme://host[:port]
  std::string path;
  std::string api_key_env;  // empty: no Authorization header
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
};

// Backoff before retry `attempt` (0-based): uniform in [0, min(max, initial * 2^attempt)].
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, std::uint32_t attempt,
                                        std::uint64_t draw);

// POSTs a JSON body and returns the response body of the first 2xx reply.
// 401/403 throw AuthError immediately. 429, 5xx, connection failures and
// timeouts are retried up to max_retries times (honouring Retry-After), then
// surface as RateLimitError, TransportError or TimeoutError. Other statuses
// throw TransportError without retrying. Every attempt increments `attempts`
// when given.
std::string post_json(const HttpEndpoint& endpoint, const std::string& body,
                      std::atomic<std::uint64_t>* attempts = nullptr);

}  // namespace musicqa
