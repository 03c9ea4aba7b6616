#include "musicqa/llmgen.hpp"

#include <json.hpp>

#include <algorithm>
#include <set>
#include <sstream>

#include "musicqa/errors.hpp"
#include "musicqa/hashing.hpp"
#include "musicqa/rng.hpp"
#include "musicqa/rulegen.hpp"
#include "musicqa/text.hpp"

using nlohmann::json;

namespace musicqa {

MusicDimension MusicDimension::other(std::string tag) {
  if (text::trim(tag).empty()) throw Error("MusicDimension::Other needs a non-empty tag");
  MusicDimension d(Kind::Other);
  d.tag_ = text::fold_case(text::trim(tag));
  return d;
}

MusicDimension MusicDimension::parse(std::string_view name) {
  const std::string k = text::fold_case(text::trim(name));
  if (k == "instrumentation" || k == "instrument" || k == "instruments") {
    return MusicDimension(Kind::Instrumentation);
  }
  if (k == "melody") return MusicDimension(Kind::Melody);
  if (k == "tempo") return MusicDimension(Kind::Tempo);
  if (k == "genre") return MusicDimension(Kind::Genre);
  if (k == "mood") return MusicDimension(Kind::Mood);
  if (k == "function") return MusicDimension(Kind::Function);
  return other(k);
}

std::string MusicDimension::name() const {
  switch (kind_) {
    case Kind::Instrumentation: return "instrumentation";
    case Kind::Melody: return "melody";
    case Kind::Tempo: return "tempo";
    case Kind::Genre: return "genre";
    case Kind::Mood: return "mood";
    case Kind::Function: return "function";
    case Kind::Other: return tag_;
  }
  return tag_;
}

std::vector<MusicDimension> default_dimensions() {
  using K = MusicDimension::Kind;
  return {MusicDimension(K::Instrumentation), MusicDimension(K::Melody), MusicDimension(K::Tempo),
          MusicDimension(K::Genre),           MusicDimension(K::Mood),   MusicDimension(K::Function)};
}

namespace {

QAItem example_as_item(const DimensionExample& ex) {
  QAItem item;
  item.qa_id = "example";
  item.audio_id = "example";
  item.format = ex.format;
  item.question = ex.format == QAFormat::MultipleChoice
                      ? render_mcq_question(ex.question, ex.options)
                      : ex.question;
  item.options = ex.options;
  item.answer = ex.answer;
  if (ex.format == QAFormat::MultipleChoice) {
    for (std::size_t i = 0; i < ex.options.size(); ++i) {
      if (ex.options[i] == ex.answer) item.answer_index = i;
    }
  }
  return item;
}

// Key order matches the schema line in the prompt.
std::string example_json(const DimensionExample& ex) {
  nlohmann::ordered_json o;
  o["question"] = ex.question;
  o["format"] = to_string(ex.format);
  if (ex.format == QAFormat::MultipleChoice) o["options"] = ex.options;
  o["answer"] = ex.answer;
  o["dimension"] = ex.dimension.name();
  return o.dump();
}

}  // namespace

std::vector<DimensionExample> parse_dimension_examples(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed example file: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("example file must be a JSON array");
  std::vector<DimensionExample> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& obj = doc[i];
    const std::string where = "example " + std::to_string(i);
    if (!obj.is_object()) throw ParseError(where + " is not an object");
    for (const char* key : {"dimension", "format", "question", "answer"}) {
      if (!obj.contains(key) || !obj[key].is_string()) {
        throw ParseError(where + " is missing string field \"" + key + "\"");
      }
    }
    DimensionExample ex;
    try {
      ex.dimension = MusicDimension::parse(obj["dimension"].get<std::string>());
    } catch (const Error& e) {
      throw ParseError(where + ": " + e.what());
    }
    auto f = parse_format(obj["format"].get<std::string>());
    if (!f || *f == QAFormat::Caption) throw ParseError(where + " has an unsupported format");
    ex.format = *f;
    ex.question = obj["question"].get<std::string>();
    ex.answer = obj["answer"].get<std::string>();
    if (obj.contains("options")) {
      if (!obj["options"].is_array()) throw ParseError(where + ": options must be an array");
      for (const auto& o : obj["options"]) {
        if (!o.is_string()) throw ParseError(where + ": non-string option");
        ex.options.push_back(o.get<std::string>());
      }
    }
    const auto violations = check_qa_item(example_as_item(ex));
    if (!violations.empty()) throw ParseError(where + " is invalid: " + violations.front());
    out.push_back(std::move(ex));
  }
  return out;
}

const char* const kDefaultSystemPrompt =
    "You are a music expert who writes question-answer pairs for training music understanding "
    "models. You are given a text description of a music clip (a caption and/or metadata). "
    "Write questions that a listener could answer from the audio, covering the requested "
    "musical dimensions, and favour questions that need reasoning about the music over "
    "questions that only repeat a tag. Only use facts supported by the description.";

std::size_t PromptSpec::slot_count() const {
  std::size_t n = 0;
  for (const auto& r : requested) n += r.count;
  return n;
}

std::string PromptSpec::user_text() const {
  std::ostringstream out;
  out << "Output format: reply with a JSON array and nothing else. Each element is an object\n"
         "{\"question\": string, \"format\": \"open\" | \"binary\" | \"mcq\", "
         "\"options\": [string, ...] (mcq only), \"answer\": string, \"dimension\": string}\n"
         "Rules:\n"
         "- open: a free-form question ending with \"?\"; the answer is a short phrase or "
         "sentence.\n"
         "- binary: a yes/no question ending with \"?\"; the answer is \"Yes\" or \"No\".\n"
         "- mcq: a question ending with \"?\" with exactly "
      << mcq_options
      << " distinct options; the answer is copied verbatim from the options.\n\n";
  if (!fewshot.empty()) {
    out << "Examples:\n";
    for (const auto& ex : fewshot) out << example_json(ex) << "\n";
    out << "\n";
  }
  out << "Clip description:\n" << clip_context << "\n\n";
  out << "Produce exactly " << slot_count() << " items, in this order:\n";
  std::size_t slot = 0;
  for (const auto& r : requested) {
    for (std::uint32_t i = 0; i < r.count; ++i) {
      out << ++slot << ". dimension=" << r.dimension.name() << ", format=" << to_string(r.format)
          << "\n";
    }
  }
  return out.str();
}

std::vector<ChatMessage> PromptSpec::messages() const {
  return {{"system", system_text}, {"user", user_text()}};
}

PromptSpec build_prompt(const ClipRecord& clip, const std::vector<DimensionExample>& examples,
                        const std::vector<DimensionRequest>& requested, std::size_t mcq_options) {
  const bool has_caption = clip.caption && !text::trim(*clip.caption).empty();
  if (!has_caption && clip.metadata.empty()) {
    throw NoContextError("clip " + clip.audio_id + " has neither caption nor metadata");
  }
  PromptSpec spec;
  spec.system_text = kDefaultSystemPrompt;
  spec.mcq_options = mcq_options;
  for (const auto& r : requested) {
    if (r.count == 0) throw Error("requested counts must be positive");
    spec.requested.push_back(r);
  }

  std::ostringstream ctx;
  if (has_caption) ctx << "Caption: " << text::trim(*clip.caption) << "\n";
  if (!clip.metadata.empty()) {
    ctx << "Metadata:\n";
    for (const auto& [k, v] : clip.metadata) ctx << "- " << k << ": " << v << "\n";
  }
  spec.clip_context = std::string(text::trim(ctx.str()));

  // Examples for each requested (dimension, format) in request order; a
  // format-only match stands in when the dimension has no example.
  std::set<std::size_t> chosen;
  std::vector<std::size_t> order;
  auto take = [&](std::size_t i) {
    if (chosen.insert(i).second) order.push_back(i);
  };
  for (const auto& r : requested) {
    bool found = false;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (examples[i].dimension == r.dimension && examples[i].format == r.format) {
        take(i);
        found = true;
      }
    }
    if (!found) {
      for (std::size_t i = 0; i < examples.size(); ++i) {
        if (examples[i].format == r.format) {
          take(i);
          break;
        }
      }
    }
  }
  for (std::size_t i : order) spec.fewshot.push_back(examples[i]);
  return spec;
}

namespace {

constexpr std::size_t kMaxNesting = 64;

// End (exclusive) of the bracketed value starting at s[open], honouring JSON
// string escapes; npos when unbalanced or nested too deeply.
std::size_t matching_bracket(std::string_view s, std::size_t open) {
  std::size_t depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '[' || c == '{') {
      if (++depth > kMaxNesting) return std::string_view::npos;
    } else if (c == ']' || c == '}') {
      if (depth == 0) return std::string_view::npos;
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

std::string clip_fragment(std::string_view s) {
  constexpr std::size_t kMax = 200;
  std::string out(s.substr(0, kMax));
  if (s.size() > kMax) out += "...";
  return out;
}

std::optional<std::size_t> resolve_mcq_answer(const std::vector<std::string>& options,
                                              std::string_view answer) {
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (options[i] == answer) return i;
  }
  const std::string a = text::fold_case(text::trim(answer));
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (text::fold_case(text::trim(options[i])) == a) return i;
  }
  // Letter answers: "B", "B.", "B)", "(B)", "B. Violin".
  std::string_view t = text::trim(answer);
  if (!t.empty() && t.front() == '(') t.remove_prefix(1);
  if (!t.empty() && t.front() >= 'A' && t.front() <= 'Z') {
    const auto idx = static_cast<std::size_t>(t.front() - 'A');
    const bool bare = t.size() == 1 || t[1] == '.' || t[1] == ')' || t[1] == ':';
    if (bare && idx < options.size()) {
      std::string_view rest = text::trim(t.substr(1));
      while (!rest.empty() && (rest.front() == '.' || rest.front() == ')' || rest.front() == ':')) {
        rest.remove_prefix(1);
      }
      rest = text::trim(rest);
      if (rest.empty() || text::fold_case(rest) == text::fold_case(text::trim(options[idx]))) {
        return idx;
      }
    }
  }
  return std::nullopt;
}

void parse_element(const json& el, const ClipRecord& clip, std::uint64_t global_seed,
                   std::uint64_t counter, LlmResponseBatch& batch) {
  const std::string fragment = clip_fragment(el.dump(-1, ' ', false, json::error_handler_t::replace));
  auto reject = [&](std::string reason) { batch.rejected.push_back({fragment, std::move(reason)}); };

  if (!el.is_object()) return reject("element is not an object");
  auto q = el.find("question");
  if (q == el.end() || !q->is_string()) return reject("missing question");
  auto f = el.find("format");
  if (f == el.end() || !f->is_string()) return reject("missing format");
  const auto format = parse_format(f->get_ref<const std::string&>());
  if (!format || *format == QAFormat::Caption) return reject("unsupported format");
  auto a = el.find("answer");
  if (a == el.end()) return reject("missing answer");
  std::string answer;
  if (a->is_string()) {
    answer = a->get<std::string>();
  } else if (a->is_boolean() && *format == QAFormat::Binary) {
    answer = a->get<bool>() ? "Yes" : "No";
  } else {
    return reject("answer is not a string");
  }

  MusicDimension dimension = MusicDimension::other("unspecified");
  if (auto d = el.find("dimension"); d != el.end() && d->is_string() &&
                                     !text::trim(d->get_ref<const std::string&>()).empty()) {
    dimension = MusicDimension::parse(d->get_ref<const std::string&>());
  }

  QAItem item;
  item.audio_id = clip.audio_id;
  item.source = clip.source;
  item.format = *format;
  item.method = Method::Llm;
  item.category = dimension.name();
  item.seed = clip_rng_seed(global_seed, clip.audio_id, counter);
  item.qa_id = make_qa_id(clip.audio_id, *format, "llm:" + dimension.name(), counter, global_seed);
  item.answer = std::string(text::trim(answer));
  std::string question(text::trim(q->get_ref<const std::string&>()));

  if (*format == QAFormat::MultipleChoice) {
    auto o = el.find("options");
    if (o == el.end() || !o->is_array()) return reject("mcq without options");
    for (const auto& opt : *o) {
      if (!opt.is_string()) return reject("non-string option");
      item.options.emplace_back(text::trim(opt.get_ref<const std::string&>()));
    }
    const auto idx = resolve_mcq_answer(item.options, item.answer);
    if (!idx) return reject("answer not in options");
    item.answer_index = *idx;
    item.answer = item.options[*idx];
    question = render_mcq_question(text::trim(mcq_stem(question, item.options)), item.options);
  } else if (auto o = el.find("options");
             o != el.end() && o->is_array() && !o->empty()) {
    return reject("options present on non-MCQ item");
  }
  item.question = std::move(question);

  auto violations = validate_qa_item(item);
  if (!violations.empty()) {
    std::string reason;
    for (const auto& v : violations) reason += (reason.empty() ? "" : "; ") + v;
    return reject(std::move(reason));
  }
  batch.parsed.push_back(std::move(item));
}

}  // namespace

LlmResponseBatch parse_llm_output(std::string_view raw, const ClipRecord& clip,
                                  std::uint64_t global_seed, std::uint64_t counter_offset) noexcept {
  LlmResponseBatch batch;
  try {
    batch.raw_text = std::string(raw);
    std::optional<json> array;
    // First balanced '[...]' that parses and is empty or holds an
    // object. Brackets inside a balanced span that fails are not retried, so
    // an option list nested in broken JSON is never mistaken for the answer.
    std::size_t pos = raw.find('[');
    while (pos != std::string_view::npos) {
      const std::size_t end = matching_bracket(raw, pos);
      if (end == std::string_view::npos) {
        pos = raw.find('[', pos + 1);
        continue;
      }
      json candidate = json::parse(raw.substr(pos, end - pos), nullptr, false);
      if (!candidate.is_discarded() && candidate.is_array() &&
          (candidate.empty() || std::any_of(candidate.begin(), candidate.end(),
                                            [](const json& e) { return e.is_object(); }))) {
        array = std::move(candidate);
        break;
      }
      pos = raw.find('[', candidate.is_discarded() ? end : pos + 1);
    }
    if (!array) {
      batch.rejected.push_back({clip_fragment(raw), "no JSON array found"});
      return batch;
    }
    for (std::size_t i = 0; i < array->size(); ++i) {
      try {
        parse_element((*array)[i], clip, global_seed, counter_offset + i, batch);
      } catch (const std::exception& e) {
        batch.rejected.push_back({"element " + std::to_string(i), std::string("error: ") + e.what()});
      }
    }
  } catch (...) {
    batch.parsed.clear();
    batch.rejected.push_back({clip_fragment(raw), "internal error while parsing"});
  }
  return batch;
}

std::vector<DimensionRequest> plan_requests(const LlmPlan& plan, std::string_view audio_id,
                                            std::uint64_t global_seed) {
  if (plan.dimensions.empty()) throw Error("LLM plan has no dimensions");
  Rng rng(hash_combine(hash_combine(mix64(global_seed), audio_id), 0x6c6c6d706c616eULL));
  std::map<std::pair<MusicDimension, QAFormat>, std::uint32_t> counts;
  std::vector<std::pair<MusicDimension, QAFormat>> order;
  const std::pair<QAFormat, std::uint32_t> slots[] = {
      {QAFormat::OpenEnded, plan.open}, {QAFormat::Binary, plan.binary}, {QAFormat::MultipleChoice, plan.mcq}};
  for (const auto& [format, n] : slots) {
    for (std::uint32_t i = 0; i < n; ++i) {
      const auto& dim = plan.dimensions[rng.index(plan.dimensions.size())];
      const auto key = std::pair(dim, format);
      if (counts[key]++ == 0) order.push_back(key);
    }
  }
  std::vector<DimensionRequest> out;
  for (const auto& key : order) out.push_back({key.first, key.second, counts[key]});
  return out;
}

}  // namespace musicqa
