#include "musicqa/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <unordered_map>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "musicqa/assembly.hpp"
#include "musicqa/config.hpp"
#include "musicqa/corpus.hpp"
#include "musicqa/eval.hpp"
#include "musicqa/fileio.hpp"
#include "musicqa/hashing.hpp"
#include "musicqa/llm_client.hpp"
#include "musicqa/llmgen.hpp"
#include "musicqa/ontology.hpp"
#include "musicqa/parallel.hpp"
#include "musicqa/rulegen.hpp"
#include "musicqa/templates.hpp"
#include "musicqa/text.hpp"

namespace musicqa {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

// Input data that fails an invariant; exit status 2.
class DataError : public Error {
  using Error::Error;
};

// Flags shared by every subcommand.
struct Options {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t workers = 0;
  std::vector<std::string> format_filter;
  std::vector<std::string> drop_format;
  std::vector<std::string> source_filter;
  std::string out;

  // Subcommand specific.
  std::vector<std::string> inputs;
  std::vector<std::string> imports;
  std::string dataset;
  std::string split;
  std::vector<std::string> tasks;
  std::string outputs;
  std::string categories;
  std::string baseline;
  std::string labels;
  std::size_t mcq_options = 0;
};

struct Ctx {
  Options opt;
  PipelineConfig cfg;
  bool have_config = false;
  std::ostream* out = nullptr;
  ordered_json summary;

  std::uint64_t seed() const {
    if (opt.seed_given) return opt.seed;
    if (cfg.global_seed) return *cfg.global_seed;
    throw ConfigError("a seed is required: pass --seed or set global_seed in the config");
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double per_second(std::uint64_t n, double secs) { return secs > 0 ? n / secs : 0.0; }

void require_file(const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("no ") + what + " configured");
  if (!fs::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

void require_config(const Ctx& c, const char* command) {
  if (!c.have_config) throw ConfigError(std::string(command) + " needs --config");
}

std::optional<std::set<QAFormat>> format_keep(const Options& o) {
  if (o.format_filter.empty() && o.drop_format.empty()) return std::nullopt;
  auto parse = [](const std::string& s) {
    auto f = parse_format(s);
    if (!f) throw ConfigError("unknown format '" + s + "' (open|binary|mcq|caption)");
    return *f;
  };
  std::set<QAFormat> keep;
  if (o.format_filter.empty()) {
    keep.insert(std::begin(kAllFormats), std::end(kAllFormats));
  } else {
    for (const auto& s : o.format_filter) keep.insert(parse(s));
  }
  for (const auto& s : o.drop_format) keep.erase(parse(s));
  return keep;
}

std::optional<std::set<Source>> source_keep(const Options& o) {
  if (o.source_filter.empty()) return std::nullopt;
  std::set<Source> keep;
  for (const auto& s : o.source_filter) {
    auto src = parse_source_strict(s);
    if (!src) throw ConfigError("unknown source '" + s + "'");
    keep.insert(*src);
  }
  return keep;
}

ordered_json formats_json(const std::optional<std::set<QAFormat>>& keep) {
  if (!keep) return nullptr;
  ordered_json a = ordered_json::array();
  for (QAFormat f : *keep) a.push_back(std::string(to_string(f)));
  return a;
}

ordered_json sources_json(const std::optional<std::set<Source>>& keep) {
  if (!keep) return nullptr;
  ordered_json a = ordered_json::array();
  for (Source s : *keep) a.push_back(std::string(to_string(s)));
  return a;
}

std::vector<QAItem> apply_filters(std::vector<QAItem> items, const Options& o) {
  if (auto f = format_keep(o)) items = filter_formats(std::move(items), *f);
  if (auto s = source_keep(o)) items = filter_sources(std::move(items), *s);
  return items;
}

std::vector<ClipRecord> load_clips(const PipelineConfig& cfg, const Ontology* o) {
  if (cfg.manifests.empty()) throw ConfigError("no manifests configured");
  for (const auto& m : cfg.manifests) require_file(m, "manifest");
  std::optional<AliasTable> aliases;
  if (cfg.aliases) {
    require_file(*cfg.aliases, "alias table");
    if (o) aliases = parse_alias_table(read_file(*cfg.aliases), *o);
  }
  std::vector<ClipRecord> clips;
  std::set<std::pair<Source, std::string>> seen;
  for (const auto& m : cfg.manifests) {
    auto part = load_manifest(read_file(m));
    for (auto& clip : part) {
      if (!seen.emplace(clip.source, clip.audio_id).second) {
        throw DuplicateClipError("audio_id " + clip.audio_id + " appears in more than one manifest (" +
                                 m.string() + ")");
      }
      if (aliases) apply_aliases(clip, *o, *aliases);
      clips.push_back(std::move(clip));
    }
  }
  return clips;
}

std::vector<ClipRecord> keep_sources(std::vector<ClipRecord> clips, const Options& o) {
  auto keep = source_keep(o);
  if (!keep) return clips;
  std::erase_if(clips, [&](const ClipRecord& c) { return !keep->count(c.source); });
  return clips;
}

std::vector<QAItem> read_item_files(const std::vector<std::string>& files) {
  std::vector<QAItem> items;
  for (const auto& f : files) {
    require_file(f, "input");
    try {
      auto part = read_qa_jsonl(read_file(f));
      items.insert(items.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    } catch (const ParseError& e) {
      throw ParseError(f + ": " + e.what());
    }
  }
  return items;
}

constexpr Split kSplits[] = {Split::Train, Split::Val, Split::Test};

std::optional<Split> parse_split(std::string_view s) {
  for (Split sp : kSplits) {
    if (to_string(sp) == s) return sp;
  }
  return std::nullopt;
}

// Items from an assembled dataset directory: every split, or just `split`.
std::vector<QAItem> read_dataset(const fs::path& dir, const std::string& split) {
  if (!fs::is_directory(dir)) throw ConfigError("dataset directory not found: " + dir.string());
  if (fs::exists(dir / "manifest.json")) return read_shards(dir);
  std::vector<QAItem> items;
  for (Split sp : kSplits) {
    if (!split.empty() && split != to_string(sp)) continue;
    const fs::path d = dir / std::string(to_string(sp));
    if (!fs::exists(d / "manifest.json")) {
      if (!split.empty()) throw ConfigError("split '" + split + "' not found in " + dir.string());
      continue;
    }
    auto part = read_shards(d);
    items.insert(items.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return items;
}

std::vector<QAItem> read_items(const Options& o) {
  if (!o.dataset.empty() && !o.inputs.empty()) throw ConfigError("use either --input or --dataset, not both");
  if (o.dataset.empty() && o.inputs.empty()) throw ConfigError("no items: pass --input or --dataset");
  if (!o.split.empty() && !parse_split(o.split)) throw ConfigError("unknown split '" + o.split + "'");
  auto items = o.dataset.empty() ? read_item_files(o.inputs) : read_dataset(o.dataset, o.split);
  sort_items(items);
  return items;
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  fs::path r = p;
  r += suffix;
  return r;
}

// ---------------------------------------------------------------- generate-rule

int cmd_generate_rule(Ctx& c) {
  require_config(c, "generate-rule");
  const auto& cfg = c.cfg;
  const std::uint64_t seed = c.seed();
  require_file(cfg.ontology, "ontology");
  require_file(cfg.templates, "templates");
  const auto keep = format_keep(c.opt);

  const auto t0 = Clock::now();
  const Ontology ontology = parse_ontology(read_file(cfg.ontology));
  const auto templates = parse_templates(read_file(cfg.templates));
  const auto clips = load_clips(cfg, &ontology);
  const auto music = filter_music_clips(clips, ontology, cfg.music_root);
  // Frequencies come from the whole music corpus so a source filter does not
  // change the distractor weights of the clips it keeps.
  const auto freqs = compute_label_frequencies(music, ontology, cfg.music_root);
  const auto selected = keep_sources(music, c.opt);
  spdlog::info("{} clips, {} music-related, {} selected", clips.size(), music.size(), selected.size());

  const RuleGenerator gen(ontology, cfg.music_root, freqs, templates, cfg.plan, cfg.mcq_options);
  const std::size_t workers = cfg.workers;
  GenerationReport report;
  std::vector<QAItem> items;
  constexpr std::size_t kBatch = 20000;
  const auto g0 = Clock::now();
  for (std::size_t begin = 0; begin < selected.size(); begin += kBatch) {
    const std::size_t end = std::min(selected.size(), begin + kBatch);
    std::vector<ClipRecord> batch(selected.begin() + begin, selected.begin() + end);
    GenerationReport part;
    auto out = gen.generate(batch, seed, workers, part);
    report.merge(part);
    items.insert(items.end(), std::make_move_iterator(out.begin()), std::make_move_iterator(out.end()));
    const double secs = seconds_since(g0);
    spdlog::info("{}/{} clips, {} items, {:.0f} items/s", end, selected.size(), items.size(),
                 per_second(items.size(), secs));
  }
  const double gen_secs = seconds_since(g0);
  if (keep) items = filter_formats(std::move(items), *keep);
  sort_items(items);
  for (const auto& e : report.errors) {
    spdlog::warn("{} {} {}: {}", e.audio_id, e.leaf, to_string(e.format), e.message);
  }

  const fs::path out = c.opt.out.empty() ? cfg.out_dir / "rule_qa.jsonl" : fs::path(c.opt.out);
  const fs::path report_path = sibling(out, ".report.json");
  ordered_json r;
  r["command"] = "generate-rule";
  r["global_seed"] = seed;
  r["clips_total"] = clips.size();
  r["clips_music"] = music.size();
  r["clips_selected"] = selected.size();
  r["format_filter"] = formats_json(keep);
  r["source_filter"] = sources_json(source_keep(c.opt));
  r["items_written"] = items.size();
  r["generation"] = ordered_json::parse(report.to_json());
  write_file_atomic(out, write_qa_jsonl(items));
  write_file_atomic(report_path, r.dump(2) + "\n");

  const double total = seconds_since(t0);
  spdlog::info("wrote {} items to {} in {:.2f}s ({:.0f} items/s generation)", items.size(), out.string(),
               total, per_second(items.size(), gen_secs));
  c.summary["items"] = items.size();
  c.summary["clips"] = selected.size();
  c.summary["generation_errors"] = report.errors.size();
  c.summary["seconds"] = total;
  c.summary["items_per_sec"] = per_second(items.size(), gen_secs);
  c.summary["output"] = out.string();
  c.summary["report"] = report_path.string();
  return kExitOk;
}

// ----------------------------------------------------------------- generate-llm

struct ClipOutcome {
  bool no_context = false;
  bool no_request = false;
  std::optional<std::string> service_error;
  LlmResponseBatch batch;
};

int cmd_generate_llm(Ctx& c) {
  require_config(c, "generate-llm");
  const auto& cfg = c.cfg;
  const std::uint64_t seed = c.seed();
  require_file(cfg.dimension_examples, "dimension_examples");
  const auto keep = format_keep(c.opt);

  const auto t0 = Clock::now();
  const auto examples = parse_dimension_examples(read_file(cfg.dimension_examples));
  const auto clips = keep_sources(load_clips(cfg, nullptr), c.opt);
  spdlog::info("{} clips selected for LLM generation", clips.size());

  LlmClient client(cfg.llm);
  std::vector<ClipOutcome> outcomes(clips.size());
  std::atomic<bool> abort{false};
  std::atomic<std::size_t> done{0};
  std::exception_ptr fatal;
  std::mutex fatal_mu;
  const std::size_t every = std::max<std::size_t>(1, clips.size() / 20);

  parallel_for(
      clips.size(), cfg.workers,
      [&](std::size_t i) {
        if (abort.load()) return;
        const ClipRecord& clip = clips[i];
        ClipOutcome& o = outcomes[i];
        const auto requested = plan_requests(cfg.llm_plan, clip.audio_id, seed);
        if (requested.empty()) {
          o.no_request = true;
        } else {
          try {
            const PromptSpec spec = build_prompt(clip, examples, requested, cfg.mcq_options);
            o.batch = parse_llm_output(call_llm(spec, client), clip, seed);
          } catch (const NoContextError&) {
            o.no_context = true;
          } catch (const AuthError&) {
            std::lock_guard lock(fatal_mu);
            if (!fatal) fatal = std::current_exception();
            abort.store(true);
            return;
          } catch (const ServiceError& e) {
            o.service_error = e.what();
            spdlog::warn("{}: {}", clip.audio_id, e.what());
          }
        }
        const std::size_t n = done.fetch_add(1) + 1;
        if (n % every == 0 || n == clips.size()) {
          spdlog::info("{}/{} clips, {} network requests, {} cache hits", n, clips.size(),
                       client.network_requests(), client.cache_hits());
        }
      },
      1);
  if (fatal) std::rethrow_exception(fatal);

  std::vector<QAItem> items;
  std::map<std::string, std::uint64_t> reasons;
  std::string rejected_jsonl;
  std::uint64_t no_context = 0, no_request = 0, rejected = 0, parsed = 0;
  ordered_json failures = ordered_json::array();
  for (std::size_t i = 0; i < clips.size(); ++i) {
    auto& o = outcomes[i];
    no_context += o.no_context;
    no_request += o.no_request;
    if (o.service_error) {
      failures.push_back({{"audio_id", clips[i].audio_id}, {"error", *o.service_error}});
      continue;
    }
    parsed += o.batch.parsed.size();
    rejected += o.batch.rejected.size();
    for (const auto& r : o.batch.rejected) {
      ++reasons[r.reason];
      ordered_json line;
      line["audio_id"] = clips[i].audio_id;
      line["reason"] = r.reason;
      line["fragment"] = r.fragment;
      rejected_jsonl += line.dump(-1, ' ', false, json::error_handler_t::replace);
      rejected_jsonl += '\n';
    }
    for (auto& item : o.batch.parsed) items.push_back(std::move(item));
  }
  if (keep) items = filter_formats(std::move(items), *keep);
  sort_items(items);

  std::array<std::uint64_t, 4> emitted{};
  for (const auto& it : items) ++emitted[static_cast<std::size_t>(it.format)];
  ordered_json em;
  for (QAFormat f : kAllFormats) em[std::string(to_string(f))] = emitted[static_cast<std::size_t>(f)];

  const fs::path out = c.opt.out.empty() ? cfg.out_dir / "llm_qa.jsonl" : fs::path(c.opt.out);
  const fs::path report_path = sibling(out, ".report.json");
  ordered_json r;
  r["command"] = "generate-llm";
  r["global_seed"] = seed;
  r["model"] = cfg.llm.model;
  r["temperature"] = cfg.llm.temperature;
  r["clips"] = clips.size();
  r["skipped_no_context"] = no_context;
  r["skipped_no_request"] = no_request;
  r["format_filter"] = formats_json(keep);
  r["source_filter"] = sources_json(source_keep(c.opt));
  r["parsed"] = parsed;
  r["rejected"] = rejected;
  r["rejection_reasons"] = reasons;
  r["emitted"] = em;
  r["items_written"] = failures.empty() ? items.size() : 0;
  r["service_failures"] = failures;
  write_file_atomic(report_path, r.dump(2) + "\n");

  const double secs = seconds_since(t0);
  c.summary["clips"] = clips.size();
  c.summary["network_requests"] = client.network_requests();
  c.summary["cache_hits"] = client.cache_hits();
  c.summary["parsed"] = parsed;
  c.summary["rejected"] = rejected;
  c.summary["seconds"] = secs;
  c.summary["report"] = report_path.string();
  if (!failures.empty()) {
    // Outputs stay untouched; a rerun is served from the cache for every
    // clip that did succeed.
    c.summary["service_failures"] = failures.size();
    throw ServiceError(std::to_string(failures.size()) + " clip(s) failed after retries; see " +
                       report_path.string());
  }
  write_file_atomic(out, write_qa_jsonl(items));
  write_file_atomic(sibling(out, ".rejected.jsonl"), rejected_jsonl);
  spdlog::info("wrote {} items ({} rejected) to {} in {:.2f}s ({:.1f} items/s)", items.size(), rejected,
               out.string(), secs, per_second(items.size(), secs));
  c.summary["items"] = items.size();
  c.summary["items_per_sec"] = per_second(items.size(), secs);
  c.summary["output"] = out.string();
  return kExitOk;
}

// --------------------------------------------------------------------- assemble

ordered_json stats_json(const DatasetStats& s) { return ordered_json::parse(s.to_json()); }

int cmd_assemble(Ctx& c) {
  const auto& cfg = c.cfg;
  const std::uint64_t seed = c.seed();
  if (c.opt.inputs.empty() && c.opt.imports.empty()) {
    throw ConfigError("assemble needs at least one --input or --import");
  }
  check_ratios(cfg.split);
  const auto t0 = Clock::now();

  std::vector<QAItem> items = c.opt.inputs.empty() ? std::vector<QAItem>{} : read_item_files(c.opt.inputs);
  for (const auto& spec : c.opt.imports) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("--import expects SOURCE=PATH, got '" + spec + "'");
    const auto source = parse_source_strict(spec.substr(0, eq));
    if (!source) throw ConfigError("unknown source in --import '" + spec + "'");
    const std::string path = spec.substr(eq + 1);
    require_file(path, "import");
    try {
      auto part = import_external(read_file(path), *source, seed);
      spdlog::info("imported {} items from {}", part.size(), path);
      items.insert(items.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    } catch (const ParseError& e) {
      throw ParseError(path + ": " + e.what());
    }
  }
  const std::size_t loaded = items.size();
  for (const auto& item : items) {
    auto problems = check_qa_item(item);
    if (!problems.empty()) throw DataError("item " + item.qa_id + ": " + problems.front());
  }
  items = apply_filters(std::move(items), c.opt);
  const std::size_t filtered = items.size();
  items = deduplicate(std::move(items));
  spdlog::info("{} items loaded, {} after filters, {} after deduplication", loaded, filtered, items.size());

  const auto assignment = split_by_audio(items, cfg.split, seed);
  std::map<Split, std::vector<QAItem>> parts;
  for (Split s : kSplits) parts[s];
  for (auto& item : items) parts[assignment.split_of.at(item.audio_id)].push_back(item);

  const fs::path out = c.opt.out.empty() ? cfg.out_dir : fs::path(c.opt.out);
  ordered_json stats;
  stats["all"] = stats_json(compute_stats(items));
  ordered_json splits;
  for (auto& [s, part] : parts) {
    const std::string name(to_string(s));
    const auto st = compute_stats(part);
    stats[name] = stats_json(st);
    const auto manifest = write_shards(std::move(part), cfg.shard_size, out / name);
    splits[name] = {{"items", manifest.total_items()}, {"audios", st.audios_total()},
                    {"shards", manifest.shards.size()}};
  }
  ordered_json d;
  d["global_seed"] = seed;
  d["split_ratios"] = {{"train", cfg.split.train}, {"val", cfg.split.val}, {"test", cfg.split.test}};
  d["shard_size"] = cfg.shard_size;
  d["format_filter"] = formats_json(format_keep(c.opt));
  d["source_filter"] = sources_json(source_keep(c.opt));
  d["items"] = items.size();
  d["splits"] = splits;
  write_file_atomic(out / "stats.json", stats.dump(2) + "\n");
  write_file_atomic(out / "dataset.json", d.dump(2) + "\n");

  spdlog::info("dataset statistics:\n{}", compute_stats(items).to_table());
  c.summary["items"] = items.size();
  c.summary["duplicates_removed"] = filtered - items.size();
  c.summary["splits"] = splits;
  c.summary["seconds"] = seconds_since(t0);
  c.summary["output"] = out.string();
  return kExitOk;
}

// ------------------------------------------------------------------------ stats

int cmd_stats(Ctx& c) {
  auto items = apply_filters(read_items(c.opt), c.opt);
  const DatasetStats st = compute_stats(items);
  spdlog::info("dataset statistics:\n{}", st.to_table());
  if (!c.opt.out.empty()) write_file_atomic(c.opt.out, st.to_json());
  c.summary["items"] = items.size();
  c.summary["stats"] = stats_json(st);
  if (!c.opt.out.empty()) c.summary["output"] = c.opt.out;
  return kExitOk;
}

// ------------------------------------------------------------------------- eval

CategoryMap read_category_map(const std::string& path) {
  require_file(path, "category map");
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError(path + ": category map must be an object {qa_id: category}");
  CategoryMap m;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw ParseError(path + ": category of " + k + " is not a string");
    m.emplace(k, v.get<std::string>());
  }
  return m;
}

std::vector<std::string> read_labels(const std::string& path) {
  require_file(path, "label list");
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (!j.is_array()) throw ParseError(path + ": label list must be an array of strings");
  std::vector<std::string> labels;
  for (const auto& v : j) {
    if (!v.is_string()) throw ParseError(path + ": label list must be an array of strings");
    labels.push_back(v.get<std::string>());
  }
  return labels;
}

std::unique_ptr<Embedder> make_embedder(const EmbedderConfig& e) {
  if (e.kind == "http") return std::make_unique<HttpEmbedder>(e.http, e.batch_size);
  return std::make_unique<TrigramEmbedder>(e.trigram_dim);
}

int cmd_eval(Ctx& c) {
  if (c.opt.tasks.empty()) throw ConfigError("eval needs at least one --task");
  if (c.opt.outputs.empty()) throw ConfigError("eval needs --outputs");
  for (const auto& t : c.opt.tasks) {
    if (t != "mcq" && t != "binary" && t != "caption" && t != "classification") {
      throw ConfigError("unknown task '" + t + "' (mcq|binary|caption|classification)");
    }
  }
  require_file(c.opt.outputs, "outputs");
  std::optional<CategoryMap> cmap;
  if (!c.opt.categories.empty()) cmap = read_category_map(c.opt.categories);
  std::optional<EvalReport> baseline;
  if (!c.opt.baseline.empty()) {
    require_file(c.opt.baseline, "baseline report");
    baseline = parse_eval_report(read_file(c.opt.baseline));
  }
  std::vector<std::string> labels;
  if (!c.opt.labels.empty()) labels = read_labels(c.opt.labels);

  auto items = read_items(c.opt);
  std::vector<ModelOutput> outputs;
  try {
    outputs = read_model_outputs(read_file(c.opt.outputs));
  } catch (const ParseError& e) {
    throw ParseError(c.opt.outputs + ": " + e.what());
  }
  {
    std::set<std::string> known;
    for (const auto& i : items) known.insert(i.qa_id);
    for (const auto& o : outputs) {
      if (!known.count(o.qa_id)) throw UnknownQaIdError("output references unknown qa_id " + o.qa_id);
    }
    // Outputs for items removed by a filter are dropped with them.
    items = apply_filters(std::move(items), c.opt);
    known.clear();
    for (const auto& i : items) known.insert(i.qa_id);
    std::erase_if(outputs, [&](const ModelOutput& o) { return !known.count(o.qa_id); });
  }
  const CategoryMap* cm = cmap ? &*cmap : nullptr;

  std::vector<EvalReport> fragments;
  std::set<std::string> tasks(c.opt.tasks.begin(), c.opt.tasks.end());
  for (const auto& t : tasks) {
    if (t == "mcq") fragments.push_back(score_mcq(items, outputs, cm));
    if (t == "binary") fragments.push_back(score_binary(items, outputs, cm));
    if (t == "caption") fragments.push_back(score_captions(items, outputs, cm));
    if (t == "classification") {
      // Free-form label answers only; other formats have their own scorers.
      std::vector<QAItem> open;
      for (const auto& i : items) {
        if (i.format == QAFormat::OpenEnded) open.push_back(i);
      }
      std::set<std::string_view> ids;
      for (const auto& i : open) ids.insert(i.qa_id);
      std::vector<ModelOutput> outs;
      for (const auto& o : outputs) {
        if (ids.count(o.qa_id)) outs.push_back(o);
      }
      auto embedder = make_embedder(c.cfg.embedder);
      LabelMatcher matcher(*embedder);
      fragments.push_back(score_classification(open, outs, matcher, labels, cm));
    }
  }
  const EvalReport report = aggregate_report(fragments);
  const std::string text = report.to_json(baseline ? &*baseline : nullptr);
  if (!c.opt.out.empty()) write_file_atomic(c.opt.out, text + "\n");
  for (const auto& [name, t] : report.tasks) {
    spdlog::info("{}: {} = {:.4f} over {} items ({} missing, {} unparseable)", name, t.metric, t.value(),
                 t.overall.total, t.overall.missing, t.overall.unparseable);
  }
  c.summary["report"] = ordered_json::parse(text);
  if (!c.opt.out.empty()) c.summary["output"] = c.opt.out;
  return kExitOk;
}

// --------------------------------------------------------------------- validate

struct Violation {
  std::string file;
  std::size_t line = 0;
  std::optional<std::string> qa_id;
  std::string problem;
};

class Validator {
 public:
  explicit Validator(ValidationOptions opts) : opts_(opts) {}

  // `split` is set for assembled datasets.
  void check_jsonl(const fs::path& file, std::string_view text, std::optional<Split> split,
                   const std::optional<std::pair<SplitRatios, std::uint64_t>>& recipe) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t nl = text.find('\n', pos);
      if (nl == std::string_view::npos) nl = text.size();
      ++line_no;
      const auto line = text.substr(pos, nl - pos);
      pos = nl + 1;
      if (text::trim(line).empty()) continue;
      ++items_;
      QAItem item;
      try {
        item = parse_qa_item(line, line_no);
      } catch (const ParseError& e) {
        add(file, line_no, id_of(line), e.what());
        continue;
      }
      for (const auto& p : check_qa_item(item, opts_)) add(file, line_no, item.qa_id, p);
      if (!ids_.insert(item.qa_id).second) add(file, line_no, item.qa_id, "duplicate qa_id");
      if (!split) continue;
      auto [it, fresh] = split_of_.emplace(item.audio_id, *split);
      if (!fresh && it->second != *split) {
        add(file, line_no, item.qa_id,
            "audio_id " + item.audio_id + " appears in both " + std::string(to_string(it->second)) + " and " +
                std::string(to_string(*split)));
      }
      if (recipe && split_of_audio(item.audio_id, recipe->first, recipe->second) != *split) {
        add(file, line_no, item.qa_id, "audio_id " + item.audio_id + " hashes to a different split");
      }
      if (!questions_.insert(item.audio_id + '\0' + text::normalize_question(item.question)).second) {
        add(file, line_no, item.qa_id, "duplicate question for audio_id " + item.audio_id);
      }
    }
  }

  void check_shard_dir(const fs::path& dir, std::optional<Split> split,
                       const std::optional<std::pair<SplitRatios, std::uint64_t>>& recipe) {
    ShardManifest manifest;
    try {
      manifest = parse_shard_manifest(read_file(dir / "manifest.json"));
    } catch (const Error& e) {
      add((dir / "manifest.json").string(), 0, std::nullopt, e.what());
      return;
    }
    for (const auto& shard : manifest.shards) {
      const fs::path p = dir / shard.path;
      std::string text;
      try {
        text = read_file(p);
      } catch (const IoError& e) {
        add(p.string(), 0, std::nullopt, e.what());
        continue;
      }
      if (sha256_hex(text) != shard.sha256) add(p.string(), 0, std::nullopt, "sha256 does not match manifest");
      const std::size_t before = items_;
      check_jsonl(p, text, split, recipe);
      if (items_ - before != shard.items) {
        add(p.string(), 0, std::nullopt,
            "manifest lists " + std::to_string(shard.items) + " items, shard has " +
                std::to_string(items_ - before));
      }
    }
  }

  std::size_t items() const { return items_; }
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  static std::optional<std::string> id_of(std::string_view line) {
    try {
      const json j = json::parse(line);
      if (j.is_object() && j.contains("qa_id") && j["qa_id"].is_string()) return j["qa_id"].get<std::string>();
    } catch (const json::exception&) {
    }
    return std::nullopt;
  }

  void add(const fs::path& file, std::size_t line, std::optional<std::string> id, std::string problem) {
    violations_.push_back({file.string(), line, std::move(id), std::move(problem)});
  }

  ValidationOptions opts_;
  std::size_t items_ = 0;
  std::set<std::string> ids_;
  std::set<std::string> questions_;
  std::map<std::string, Split> split_of_;
  std::vector<Violation> violations_;
};

int cmd_validate(Ctx& c) {
  if (!c.opt.dataset.empty() && !c.opt.inputs.empty()) throw ConfigError("use either --input or --dataset, not both");
  if (c.opt.dataset.empty() && c.opt.inputs.empty()) throw ConfigError("no items: pass --input or --dataset");
  ValidationOptions vo;
  if (c.opt.mcq_options) vo.mcq_options = c.opt.mcq_options;
  Validator v(vo);

  if (!c.opt.dataset.empty()) {
    const fs::path dir = c.opt.dataset;
    if (!fs::is_directory(dir)) throw ConfigError("dataset directory not found: " + dir.string());
    if (fs::exists(dir / "manifest.json")) {
      v.check_shard_dir(dir, std::nullopt, std::nullopt);
    } else {
      std::optional<std::pair<SplitRatios, std::uint64_t>> recipe;
      if (fs::exists(dir / "dataset.json")) {
        try {
          const json d = json::parse(read_file(dir / "dataset.json"));
          const json& r = d.at("split_ratios");
          recipe.emplace(SplitRatios{r.at("train").get<double>(), r.at("val").get<double>(),
                                     r.at("test").get<double>()},
                         d.at("global_seed").get<std::uint64_t>());
        } catch (const json::exception& e) {
          throw ParseError((dir / "dataset.json").string() + ": " + e.what());
        }
      }
      bool any = false;
      for (Split s : kSplits) {
        const fs::path sd = dir / std::string(to_string(s));
        if (!fs::exists(sd / "manifest.json")) continue;
        any = true;
        v.check_shard_dir(sd, s, recipe);
      }
      if (!any) throw ConfigError("no shard manifests under " + dir.string());
    }
  } else {
    for (const auto& f : c.opt.inputs) {
      require_file(f, "input");
      v.check_jsonl(f, read_file(f), std::nullopt, std::nullopt);
    }
  }

  ordered_json report;
  report["items"] = v.items();
  report["ok"] = v.violations().empty();
  ordered_json list = ordered_json::array();
  std::set<std::string> bad_ids;
  for (const auto& x : v.violations()) {
    ordered_json e;
    e["file"] = x.file;
    e["line"] = x.line;
    e["qa_id"] = x.qa_id ? ordered_json(*x.qa_id) : ordered_json(nullptr);
    e["problem"] = x.problem;
    list.push_back(e);
    if (x.qa_id) bad_ids.insert(*x.qa_id);
    spdlog::error("{}:{} {}: {}", x.file, x.line, x.qa_id.value_or("-"), x.problem);
  }
  report["violations"] = list;
  if (!c.opt.out.empty()) write_file_atomic(c.opt.out, report.dump(2, ' ', false, json::error_handler_t::replace) + "\n");

  c.summary["items"] = v.items();
  c.summary["violations"] = v.violations().size();
  c.summary["offending_qa_ids"] = bad_ids;
  if (!c.opt.out.empty()) c.summary["output"] = c.opt.out;
  if (!v.violations().empty()) {
    spdlog::error("{} violation(s) in {} items", v.violations().size(), v.items());
    return kExitData;
  }
  spdlog::info("{} items, no violations", v.items());
  return kExitOk;
}

// ------------------------------------------------------------------------ driver

class LoggerScope {
 public:
  explicit LoggerScope(std::ostream& err) : previous_(spdlog::default_logger()) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
    auto logger = std::make_shared<spdlog::logger>("musicqa", sink);
    logger->set_pattern("[%l] %v");
    logger->set_level(spdlog::level::info);
    spdlog::set_default_logger(logger);
  }
  ~LoggerScope() {
    if (previous_) spdlog::set_default_logger(previous_);
  }
  LoggerScope(const LoggerScope&) = delete;
  LoggerScope& operator=(const LoggerScope&) = delete;

 private:
  std::shared_ptr<spdlog::logger> previous_;
};

void add_common(CLI::App* sub, Options& o, bool config_required) {
  auto* cfg = sub->add_option("--config", o.config, "Pipeline config (JSON)");
  if (config_required) cfg->required();
  sub->add_option("--seed", o.seed, "Global seed (overrides global_seed)");
  sub->add_option("--workers", o.workers, "Worker threads (overrides workers)")->check(CLI::PositiveNumber);
  sub->add_option("--format-filter", o.format_filter, "Keep only these formats: open|binary|mcq|caption");
  sub->add_option("--drop-format", o.drop_format, "Drop these formats (applied after --format-filter)");
  sub->add_option("--source-filter", o.source_filter, "Keep only these sources");
  sub->add_option("--out", o.out, "Output path");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  LoggerScope logging(err);
  Ctx c;
  c.out = &out;
  Options& o = c.opt;

  CLI::App app{"Music QA dataset pipeline", args.empty() ? "musicqa" : args[0]};
  app.require_subcommand(1);
  app.set_version_flag("--version", "musicqa 1.0");

  auto* gr = app.add_subcommand("generate-rule", "Template-based QA generation from labeled clips");
  add_common(gr, o, true);
  auto* gl = app.add_subcommand("generate-llm", "LLM-based QA generation from captions and metadata");
  add_common(gl, o, true);
  auto* as = app.add_subcommand("assemble", "Merge, deduplicate, split and shard QA items");
  add_common(as, o, false);
  as->add_option("--input", o.inputs, "QA item JSONL (repeatable)");
  as->add_option("--import", o.imports, "External captions/QA as SOURCE=PATH (repeatable)");
  auto* st = app.add_subcommand("stats", "Per-source, per-task counts");
  add_common(st, o, false);
  auto* ev = app.add_subcommand("eval", "Score model outputs");
  add_common(ev, o, false);
  auto* va = app.add_subcommand("validate", "Check every item invariant of a dataset");
  add_common(va, o, false);
  for (auto* sub : {st, ev, va}) {
    sub->add_option("--input", o.inputs, "QA item JSONL (repeatable)");
    sub->add_option("--dataset", o.dataset, "Assembled dataset directory");
  }
  for (auto* sub : {st, ev}) sub->add_option("--split", o.split, "Restrict --dataset to one split");
  ev->add_option("--task", o.tasks, "mcq|binary|caption|classification (repeatable)")->required();
  ev->add_option("--outputs", o.outputs, "Model outputs JSONL {qa_id, text}")->required();
  ev->add_option("--categories", o.categories, "JSON object qa_id -> category");
  ev->add_option("--baseline", o.baseline, "Earlier eval report for relative scores");
  ev->add_option("--labels", o.labels, "JSON array of candidate labels for classification");
  va->add_option("--mcq-options", o.mcq_options, "Require exactly K options per MCQ");

  std::string command = "?";
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  int rc = kExitUsage;
  c.summary["command"] = nullptr;
  try {
    CLI::App* sub = app.get_subcommands().front();
    command = sub->get_name();
    c.summary["command"] = command;
    o.seed_given = sub->count("--seed") > 0;
    if (!o.config.empty()) {
      c.cfg = load_config(o.config);
      c.have_config = true;
    }
    if (o.workers) c.cfg.workers = o.workers;
    if (o.seed_given) c.cfg.global_seed = o.seed;

    if (command == "generate-rule") rc = cmd_generate_rule(c);
    else if (command == "generate-llm") rc = cmd_generate_llm(c);
    else if (command == "assemble") rc = cmd_assemble(c);
    else if (command == "stats") rc = cmd_stats(c);
    else if (command == "eval") rc = cmd_eval(c);
    else if (command == "validate") rc = cmd_validate(c);
    c.summary["status"] = rc == kExitOk ? "ok" : "error";
  } catch (const ConfigError& e) {
    rc = kExitUsage;
    c.summary["error"] = e.what();
  } catch (const BadRatioError& e) {
    rc = kExitUsage;
    c.summary["error"] = e.what();
  } catch (const ServiceError& e) {
    rc = kExitService;
    c.summary["error"] = e.what();
  } catch (const Error& e) {
    rc = kExitData;
    c.summary["error"] = e.what();
  } catch (const std::exception& e) {
    rc = kExitUsage;
    c.summary["error"] = std::string("unexpected: ") + e.what();
  }
  if (c.summary.contains("error")) {
    c.summary["status"] = "error";
    spdlog::error("{}", c.summary["error"].get<std::string>());
  }
  c.summary["exit_code"] = rc;
  out << c.summary.dump(-1, ' ', false, json::error_handler_t::replace) << std::endl;
  return rc;
}

int run_cli(int argc, char** argv) { return run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr); }

}  // namespace musicqa
