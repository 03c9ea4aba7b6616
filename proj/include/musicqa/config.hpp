#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "musicqa/assembly.hpp"
#include "musicqa/errors.hpp"
#include "musicqa/llm_client.hpp"
#include "musicqa/llmgen.hpp"
#include "musicqa/rulegen.hpp"

namespace musicqa {

// Malformed or incomplete configuration; maps to exit status 1.
class ConfigError : public Error {
  using Error::Error;
};

struct EmbedderConfig {
  // "trigram" (built-in deterministic encoder) or "http".
  std::string kind = "trigram";
  HttpEndpoint http{"http://127.0.0.1:8001", "/v1/embeddings", "MUSICQA_EMBED_API_KEY",
                    std::chrono::milliseconds(60000), RetryPolicy{}};
  std::size_t batch_size = 64;
  std::size_t trigram_dim = 4096;
};

// One JSON file; relative paths are resolved against the file's directory.
// Credentials are never read from it: only environment variable names.
struct PipelineConfig {
  std::filesystem::path ontology;
  std::string music_root = "/m/04rlf";
  std::vector<std::filesystem::path> manifests;
  std::optional<std::filesystem::path> aliases;
  std::filesystem::path templates;
  std::filesystem::path dimension_examples;
  std::filesystem::path out_dir = "out";
  std::filesystem::path cache_dir = "cache";

  std::optional<std::uint64_t> global_seed;
  std::size_t workers = 1;

  GenerationPlan plan;
  std::size_t mcq_options = 4;
  LlmPlan llm_plan;
  SplitRatios split;
  std::size_t shard_size = 100000;

  LlmEndpoint llm;
  EmbedderConfig embedder;
};

// Throws ConfigError. Unknown keys are rejected, as are keys that look like
// inline secrets ("api_key", "token", ...).
PipelineConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);

}  // namespace musicqa
