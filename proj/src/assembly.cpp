#include "musicqa/assembly.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cmath>
#include <regex>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "musicqa/errors.hpp"
#include "musicqa/fileio.hpp"
#include "musicqa/hashing.hpp"
#include "musicqa/rulegen.hpp"
#include "musicqa/text.hpp"

using nlohmann::json;
using nlohmann::ordered_json;

namespace musicqa {

std::vector<QAItem> deduplicate(std::vector<QAItem> items) {
  sort_items(items);
  std::unordered_set<std::string> seen;
  seen.reserve(items.size());
  std::vector<QAItem> out;
  out.reserve(items.size());
  for (auto& item : items) {
    std::string key = item.audio_id;
    key.push_back('\0');
    key += text::normalize_question(item.question);
    if (seen.insert(std::move(key)).second) out.push_back(std::move(item));
  }
  return out;
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

void check_ratios(const SplitRatios& r) {
  if (!(r.train > 0) || !(r.val > 0) || !(r.test > 0)) {
    throw BadRatioError("split ratios must all be positive");
  }
  const double sum = r.train + r.val + r.test;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw BadRatioError("split ratios sum to " + std::to_string(sum) + ", expected 1");
  }
}

Split split_of_audio(std::string_view audio_id, const SplitRatios& ratios, std::uint64_t global_seed) {
  const double u = unit_interval(hash_combine(hash_combine(mix64(global_seed), 0x73706c6974ULL), audio_id));
  if (u < ratios.train) return Split::Train;
  if (u < ratios.train + ratios.val) return Split::Val;
  return Split::Test;
}

SplitAssignment split_by_audio(const std::vector<QAItem>& items, const SplitRatios& ratios,
                               std::uint64_t global_seed) {
  check_ratios(ratios);
  SplitAssignment out;
  for (const auto& item : items) {
    if (out.split_of.count(item.audio_id)) continue;
    out.split_of.emplace(item.audio_id, split_of_audio(item.audio_id, ratios, global_seed));
  }
  return out;
}

std::uint64_t ShardManifest::total_items() const {
  std::uint64_t n = 0;
  for (const auto& s : shards) n += s.items;
  return n;
}

std::string ShardManifest::to_json() const {
  ordered_json doc;
  doc["total_items"] = total_items();
  doc["shards"] = ordered_json::array();
  for (const auto& s : shards) {
    doc["shards"].push_back(ordered_json{{"path", s.path}, {"items", s.items}, {"sha256", s.sha256}});
  }
  return doc.dump(2) + "\n";
}

ShardManifest parse_shard_manifest(std::string_view json_text) {
  const json doc = json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("shards") || !doc["shards"].is_array()) {
    throw ParseError("malformed shard manifest");
  }
  ShardManifest m;
  try {
    for (const auto& s : doc["shards"]) {
      m.shards.push_back({s.at("path").get<std::string>(), s.at("items").get<std::uint64_t>(),
                          s.at("sha256").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed shard manifest: ") + e.what());
  }
  return m;
}

namespace {

std::string shard_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "shard-%05zu.jsonl", i);
  return buf;
}

}  // namespace

ShardManifest write_shards(std::vector<QAItem> items, std::size_t shard_size,
                           const std::filesystem::path& out_dir) {
  if (shard_size == 0) throw Error("shard_size must be at least 1");
  sort_items(items);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  ShardManifest manifest;
  std::string buf;
  for (std::size_t begin = 0, i = 0; begin < items.size(); begin += shard_size, ++i) {
    const std::size_t end = std::min(items.size(), begin + shard_size);
    buf.clear();
    for (std::size_t k = begin; k < end; ++k) {
      append_json_line(buf, items[k]);
      buf.push_back('\n');
    }
    const std::string name = shard_name(i);
    write_file_atomic(out_dir / name, buf);
    manifest.shards.push_back({name, end - begin, sha256_hex(buf)});
  }
  write_file_atomic(out_dir / "manifest.json", manifest.to_json());

  std::set<std::string> keep;
  for (const auto& s : manifest.shards) keep.insert(s.path);
  static const std::regex kShard(R"(shard-\d{5,}\.jsonl)");
  for (const auto& entry : std::filesystem::directory_iterator(out_dir, ec)) {
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, kShard) && !keep.count(name)) std::filesystem::remove(entry.path(), ec);
  }
  return manifest;
}

std::vector<QAItem> read_shards(const std::filesystem::path& out_dir) {
  const auto manifest = parse_shard_manifest(read_file(out_dir / "manifest.json"));
  std::vector<QAItem> items;
  for (const auto& s : manifest.shards) {
    const std::string content = read_file(out_dir / s.path);
    if (sha256_hex(content) != s.sha256) throw IoError("digest mismatch for " + s.path);
    auto part = read_qa_jsonl(content);
    if (part.size() != s.items) throw IoError("item count mismatch for " + s.path);
    for (auto& it : part) items.push_back(std::move(it));
  }
  return items;
}

std::string_view to_string(Task t) {
  switch (t) {
    case Task::Captioning: return "Captioning";
    case Task::QA: return "QA";
    case Task::MCQ: return "MCQ";
    case Task::Binary: return "Binary";
  }
  return "QA";
}

Task task_of(QAFormat f) {
  switch (f) {
    case QAFormat::Caption: return Task::Captioning;
    case QAFormat::OpenEnded: return Task::QA;
    case QAFormat::MultipleChoice: return Task::MCQ;
    case QAFormat::Binary: return Task::Binary;
  }
  return Task::QA;
}

std::uint64_t DatasetStats::count(Source s, Task t) const {
  auto it = per_source_task.find(s);
  return it == per_source_task.end() ? 0 : it->second[static_cast<std::size_t>(t)];
}

std::uint64_t DatasetStats::audios(Source s) const {
  auto it = per_source_audios.find(s);
  return it == per_source_audios.end() ? 0 : it->second;
}

std::uint64_t DatasetStats::row_total(Source s) const {
  std::uint64_t n = 0;
  for (Task t : kAllTasks) n += count(s, t);
  return n;
}

std::uint64_t DatasetStats::task_total(Task t) const {
  std::uint64_t n = 0;
  for (const auto& [s, row] : per_source_task) n += row[static_cast<std::size_t>(t)];
  return n;
}

std::uint64_t DatasetStats::audios_total() const {
  std::uint64_t n = 0;
  for (const auto& [s, a] : per_source_audios) n += a;
  return n;
}

std::uint64_t DatasetStats::grand_total() const {
  std::uint64_t n = 0;
  for (Task t : kAllTasks) n += task_total(t);
  return n;
}

DatasetStats& DatasetStats::operator+=(const DatasetStats& o) {
  for (const auto& [s, row] : o.per_source_task) {
    auto& mine = per_source_task[s];
    for (std::size_t i = 0; i < row.size(); ++i) mine[i] += row[i];
  }
  for (const auto& [s, a] : o.per_source_audios) per_source_audios[s] += a;
  return *this;
}

namespace {

std::vector<Source> table_rows(const DatasetStats& st) {
  std::vector<Source> rows = {Source::MusicCaps, Source::MagnaTagATune, Source::FMA, Source::AudioSet};
  if (st.row_total(Source::Other) > 0 || st.audios(Source::Other) > 0) rows.push_back(Source::Other);
  return rows;
}

}  // namespace

std::string DatasetStats::to_json() const {
  ordered_json doc;
  doc["columns"] = {"Audios", "Captioning", "QA", "MCQ", "Binary", "Total"};
  ordered_json rows = ordered_json::array();
  for (Source s : table_rows(*this)) {
    ordered_json r;
    r["source"] = to_string(s);
    r["Audios"] = audios(s);
    for (Task t : kAllTasks) r[std::string(to_string(t))] = count(s, t);
    r["Total"] = row_total(s);
    rows.push_back(std::move(r));
  }
  ordered_json total;
  total["source"] = "Total";
  total["Audios"] = audios_total();
  for (Task t : kAllTasks) total[std::string(to_string(t))] = task_total(t);
  total["Total"] = grand_total();
  rows.push_back(std::move(total));
  doc["rows"] = std::move(rows);
  return doc.dump(2) + "\n";
}

std::string DatasetStats::to_table() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %10s %10s %10s %10s %10s %10s\n", "Audio Sources", "Audios",
                "Captioning", "QA", "MCQ", "Binary", "Total");
  out << line;
  auto row = [&](const std::string& name, std::uint64_t a, std::uint64_t c, std::uint64_t q, std::uint64_t m,
                 std::uint64_t b, std::uint64_t t) {
    std::snprintf(line, sizeof line, "%-14s %10llu %10llu %10llu %10llu %10llu %10llu\n", name.c_str(),
                  static_cast<unsigned long long>(a), static_cast<unsigned long long>(c),
                  static_cast<unsigned long long>(q), static_cast<unsigned long long>(m),
                  static_cast<unsigned long long>(b), static_cast<unsigned long long>(t));
    out << line;
  };
  for (Source s : table_rows(*this)) {
    row(std::string(to_string(s)), audios(s), count(s, Task::Captioning), count(s, Task::QA),
        count(s, Task::MCQ), count(s, Task::Binary), row_total(s));
  }
  row("Total", audios_total(), task_total(Task::Captioning), task_total(Task::QA), task_total(Task::MCQ),
      task_total(Task::Binary), grand_total());
  return out.str();
}

DatasetStats compute_stats(const std::vector<QAItem>& items) {
  DatasetStats st;
  std::map<Source, std::unordered_set<std::string_view>> audio_sets;
  for (const auto& item : items) {
    st.per_source_task[item.source][static_cast<std::size_t>(task_of(item.format))] += 1;
    audio_sets[item.source].insert(item.audio_id);
  }
  for (const auto& [s, set] : audio_sets) st.per_source_audios[s] = set.size();
  return st;
}

std::vector<QAItem> import_external(std::string_view jsonl, Source source, std::uint64_t global_seed) {
  std::vector<QAItem> out;
  const std::string template_id = "import:" + std::string(to_string(source));
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    const std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (text::trim(line).empty()) continue;

    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ParseError("malformed JSON", line_no);
    auto str = [&](const char* key) -> std::optional<std::string> {
      auto it = j.find(key);
      if (it == j.end() || it->is_null()) return std::nullopt;
      if (!it->is_string()) throw ParseError(std::string("field ") + key + " must be a string", line_no);
      return it->get<std::string>();
    };
    const auto audio_id = str("audio_id");
    if (!audio_id || audio_id->empty()) throw ParseError("missing audio_id", line_no);

    QAItem item;
    item.audio_id = *audio_id;
    item.source = source;
    item.method = Method::Imported;
    item.category = str("category").value_or("");
    // Content-derived counter: identical lines get identical ids.
    const std::uint64_t counter = fnv1a64(text::trim(line));
    item.seed = clip_rng_seed(global_seed, item.audio_id, counter);

    if (auto caption = str("caption")) {
      if (text::trim(*caption).empty()) throw ParseError("empty caption", line_no);
      item.format = QAFormat::Caption;
      item.question = std::string(kCaptionInstruction);
      item.answer = std::string(text::trim(*caption));
      if (item.category.empty()) item.category = "caption";
    } else {
      const auto question = str("question");
      if (!question) throw ParseError("line has neither caption nor question", line_no);
      const auto answer = str("answer");
      if (!answer) throw ParseError("QA line without answer", line_no);
      item.answer = std::string(text::trim(*answer));
      if (auto opts = j.find("options"); opts != j.end() && !opts->is_null()) {
        if (!opts->is_array()) throw ParseError("options must be an array", line_no);
        for (const auto& o : *opts) {
          if (!o.is_string()) throw ParseError("options must be strings", line_no);
          item.options.push_back(o.get<std::string>());
        }
      }
      if (auto f = str("format")) {
        auto parsed = parse_format(*f);
        if (!parsed || *parsed == QAFormat::Caption) throw ParseError("unsupported format " + *f, line_no);
        item.format = *parsed;
      } else if (!item.options.empty()) {
        item.format = QAFormat::MultipleChoice;
      } else if (normalize_yes_no(item.answer)) {
        item.format = QAFormat::Binary;
      } else {
        item.format = QAFormat::OpenEnded;
      }
      std::string q(text::trim(*question));
      if (item.format == QAFormat::MultipleChoice) {
        for (std::size_t i = 0; i < item.options.size(); ++i) {
          if (item.options[i] == item.answer) item.answer_index = i;
        }
        if (!item.answer_index) throw ParseError("answer not in options", line_no);
        q = render_mcq_question(text::trim(mcq_stem(q, item.options)), item.options);
      }
      item.question = std::move(q);
    }
    item.qa_id = make_qa_id(item.audio_id, item.format, template_id, counter, global_seed);
    const auto violations = validate_qa_item(item);
    if (!violations.empty()) throw ParseError("invalid item: " + violations.front(), line_no);
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<QAItem> filter_formats(std::vector<QAItem> items, const std::set<QAFormat>& keep) {
  std::erase_if(items, [&](const QAItem& i) { return !keep.count(i.format); });
  return items;
}

std::vector<QAItem> filter_sources(std::vector<QAItem> items, const std::set<Source>& keep) {
  std::erase_if(items, [&](const QAItem& i) { return !keep.count(i.source); });
  return items;
}

}  // namespace musicqa
