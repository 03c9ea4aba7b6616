#include "musicqa/config.hpp"

#include <set>

#include <json.hpp>

#include "musicqa/fileio.hpp"
#include "musicqa/text.hpp"

namespace musicqa {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

bool looks_like_secret(const std::string& key) {
  const std::string k = text::fold_case(key);
  if (k.size() >= 4 && k.compare(k.size() - 4, 4, "_env") == 0) return false;
  for (const char* bad : {"api_key", "apikey", "token", "secret", "password", "bearer"}) {
    if (k.find(bad) != std::string::npos) return true;
  }
  return false;
}

void reject_secrets(const json& j, const std::string& where) {
  if (!j.is_object()) return;
  for (const auto& [k, v] : j.items()) {
    if (looks_like_secret(k)) {
      throw ConfigError("config key '" + where + k +
                        "' looks like a credential; put the secret in an environment variable "
                        "and name it with '*_env'");
    }
    reject_secrets(v, where + k + ".");
  }
}

// Reads fields from one object, rejecting keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("'" + label() + "' must be an object");
  }

  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (const json* v = find(key)) {
      try {
        out = v->get<T>();
      } catch (const json::exception&) {
        throw ConfigError("config key '" + label(key) + "' has the wrong type");
      }
    }
  }

  void get_count(const char* key, std::uint32_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError("config key '" + label(key) + "' must be a non-negative integer");
      out = v->get<std::uint32_t>();
    }
  }

  void get_size(const char* key, std::size_t& out, bool positive = true) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned() || (positive && v->get<std::uint64_t>() == 0)) {
        throw ConfigError("config key '" + label(key) + "' must be a positive integer");
      }
      out = v->get<std::size_t>();
    }
  }

  void get_ms(const char* key, std::chrono::milliseconds& out) {
    std::size_t ms = static_cast<std::size_t>(out.count());
    get_size(key, ms, false);
    out = std::chrono::milliseconds(ms);
  }

  void done() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + label(k) + "'");
    }
  }

  std::string label(const std::string& key = {}) const {
    if (key.empty()) return name_.empty() ? "<root>" : name_;
    return name_.empty() ? key : name_ + "." + key;
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) throw ConfigError("empty path in config");
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void read_endpoint(Section& s, HttpEndpoint& e) {
  s.get("base_url", e.base_url);
  s.get("path", e.path);
  s.get("api_key_env", e.api_key_env);
  s.get_ms("timeout_ms", e.timeout);
  std::size_t retries = e.retry.max_retries;
  s.get_size("max_retries", retries, false);
  e.retry.max_retries = static_cast<std::uint32_t>(retries);
  s.get_ms("initial_backoff_ms", e.retry.initial_backoff);
  s.get_ms("max_backoff_ms", e.retry.max_backoff);
}

PipelineConfig parse_config_json(const json& j, const fs::path& base_dir);

}  // namespace

PipelineConfig parse_config(std::string_view json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_secrets(j, "");
  try {
    return parse_config_json(j, base_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
}

namespace {

PipelineConfig parse_config_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  Section root(j, "");

  if (const json* v = root.find("ontology")) c.ontology = resolve(base_dir, v->get<std::string>());
  root.get("music_root", c.music_root);
  if (const json* v = root.find("manifests")) {
    if (!v->is_array()) throw ConfigError("'manifests' must be an array of paths");
    for (const auto& m : *v) {
      if (!m.is_string()) throw ConfigError("'manifests' must be an array of paths");
      c.manifests.push_back(resolve(base_dir, m.get<std::string>()));
    }
  }
  if (const json* v = root.find("aliases"); v && !v->is_null()) c.aliases = resolve(base_dir, v->get<std::string>());
  if (const json* v = root.find("templates")) c.templates = resolve(base_dir, v->get<std::string>());
  if (const json* v = root.find("dimension_examples")) {
    c.dimension_examples = resolve(base_dir, v->get<std::string>());
  }
  if (const json* v = root.find("out_dir")) c.out_dir = resolve(base_dir, v->get<std::string>());
  else c.out_dir = resolve(base_dir, "out");
  if (const json* v = root.find("cache_dir")) c.cache_dir = resolve(base_dir, v->get<std::string>());
  else c.cache_dir = resolve(base_dir, "cache");

  if (const json* v = root.find("global_seed")) {
    if (!v->is_number_unsigned()) throw ConfigError("'global_seed' must be a non-negative integer");
    c.global_seed = v->get<std::uint64_t>();
  }
  root.get_size("workers", c.workers);
  root.get_size("mcq_options", c.mcq_options);
  if (c.mcq_options < 2) throw ConfigError("'mcq_options' must be at least 2");
  root.get_size("shard_size", c.shard_size);

  if (const json* v = root.find("plan")) {
    Section p(*v, "plan");
    p.get_count("open", c.plan.open);
    p.get_count("binary", c.plan.binary);
    p.get_count("mcq", c.plan.mcq);
    p.done();
  }
  if (const json* v = root.find("llm_plan")) {
    Section p(*v, "llm_plan");
    p.get_count("open", c.llm_plan.open);
    p.get_count("binary", c.llm_plan.binary);
    p.get_count("mcq", c.llm_plan.mcq);
    if (const json* d = p.find("dimensions")) {
      if (!d->is_array() || d->empty()) throw ConfigError("'llm_plan.dimensions' must be a non-empty array");
      c.llm_plan.dimensions.clear();
      for (const auto& name : *d) {
        if (!name.is_string()) throw ConfigError("'llm_plan.dimensions' must hold strings");
        try {
          c.llm_plan.dimensions.push_back(MusicDimension::parse(name.get<std::string>()));
        } catch (const Error& e) {
          throw ConfigError(std::string("llm_plan.dimensions: ") + e.what());
        }
      }
    }
    p.done();
  }
  if (const json* v = root.find("split")) {
    Section p(*v, "split");
    p.get("train", c.split.train);
    p.get("val", c.split.val);
    p.get("test", c.split.test);
    p.done();
    try {
      check_ratios(c.split);
    } catch (const BadRatioError& e) {
      throw ConfigError(std::string("split: ") + e.what());
    }
  }
  if (const json* v = root.find("llm")) {
    Section p(*v, "llm");
    read_endpoint(p, c.llm.http);
    p.get("model", c.llm.model);
    p.get("temperature", c.llm.temperature);
    p.get_size("max_in_flight", c.llm.max_in_flight);
    p.done();
  }
  if (const json* v = root.find("embedder")) {
    Section p(*v, "embedder");
    p.get("kind", c.embedder.kind);
    if (c.embedder.kind != "trigram" && c.embedder.kind != "http") {
      throw ConfigError("'embedder.kind' must be \"trigram\" or \"http\"");
    }
    read_endpoint(p, c.embedder.http);
    p.get_size("batch_size", c.embedder.batch_size);
    p.get_size("dim", c.embedder.trigram_dim);
    p.done();
  }
  root.done();
  c.llm.cache_dir = c.cache_dir / "llm";
  return c;
}

}  // namespace

PipelineConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  return parse_config(text, path.parent_path());
}

}  // namespace musicqa
