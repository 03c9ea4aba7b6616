#include "musicqa/corpus.hpp"

#include <spdlog/spdlog.h>

#include <json.hpp>
#include <sstream>
#include <utility>

#include "musicqa/errors.hpp"
#include "musicqa/text.hpp"

using nlohmann::json;

namespace musicqa {

std::string_view to_string(Source s) {
  switch (s) {
    case Source::MusicCaps: return "MusicCaps";
    case Source::MagnaTagATune: return "MagnaTagATune";
    case Source::FMA: return "FMA";
    case Source::AudioSet: return "AudioSet";
    case Source::Other: return "Other";
  }
  return "Other";
}

std::optional<Source> parse_source_strict(std::string_view s) {
  const std::string k = text::fold_case(s);
  if (k == "musiccaps") return Source::MusicCaps;
  if (k == "magnatagatune" || k == "mtt") return Source::MagnaTagATune;
  if (k == "fma") return Source::FMA;
  if (k == "audioset") return Source::AudioSet;
  if (k == "other") return Source::Other;
  return std::nullopt;
}

Source parse_source(std::string_view s) { return parse_source_strict(s).value_or(Source::Other); }

namespace {

ClipRecord parse_clip(const json& obj, std::size_t line_no) {
  if (!obj.is_object()) throw ParseError("manifest line is not a JSON object", line_no);
  ClipRecord clip;

  auto id = obj.find("audio_id");
  if (id == obj.end() || !id->is_string() || id->get_ref<const std::string&>().empty()) {
    throw ParseError("missing or empty \"audio_id\"", line_no);
  }
  clip.audio_id = id->get<std::string>();

  auto src = obj.find("source");
  if (src == obj.end() || !src->is_string()) throw ParseError("missing \"source\"", line_no);
  clip.source = parse_source(src->get_ref<const std::string&>());

  auto labels = obj.find("labels");
  if (labels == obj.end() || !labels->is_array()) throw ParseError("missing \"labels\" array", line_no);
  for (const auto& l : *labels) {
    if (!l.is_string()) throw ParseError("non-string label", line_no);
    clip.labels.insert(l.get<std::string>());
  }

  if (auto it = obj.find("caption"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) throw ParseError("\"caption\" must be a string", line_no);
    clip.caption = it->get<std::string>();
  }
  if (auto it = obj.find("metadata"); it != obj.end() && !it->is_null()) {
    if (!it->is_object()) throw ParseError("\"metadata\" must be an object", line_no);
    for (const auto& [k, v] : it->items()) {
      // Numbers and booleans in metadata are kept in their JSON spelling.
      clip.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
  }
  if (auto it = obj.find("duration_s"); it != obj.end() && !it->is_null()) {
    if (!it->is_number()) throw ParseError("\"duration_s\" must be a number", line_no);
    clip.duration_s = it->get<double>();
  }
  return clip;
}

}  // namespace

std::vector<ClipRecord> load_manifest(std::istream& in) {
  std::vector<ClipRecord> clips;
  std::set<std::pair<Source, std::string>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    ClipRecord clip = parse_clip(obj, line_no);
    if (!seen.emplace(clip.source, clip.audio_id).second) {
      throw DuplicateClipError("line " + std::to_string(line_no) + ": duplicate clip (" +
                               std::string(to_string(clip.source)) + ", " + clip.audio_id + ")");
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

std::vector<ClipRecord> load_manifest(std::string_view jsonl) {
  std::istringstream in{std::string(jsonl)};
  return load_manifest(in);
}

std::string manifest_line(const ClipRecord& clip) {
  nlohmann::ordered_json obj;
  obj["audio_id"] = clip.audio_id;
  obj["source"] = to_string(clip.source);
  obj["labels"] = clip.labels;
  if (clip.caption) obj["caption"] = *clip.caption;
  if (!clip.metadata.empty()) obj["metadata"] = clip.metadata;
  if (clip.duration_s) obj["duration_s"] = *clip.duration_s;
  return obj.dump();
}

AliasTable parse_alias_table(std::string_view json_text, const Ontology& o) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed alias table: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("alias table must be a JSON object");
  AliasTable table;
  for (const auto& [tag, target] : doc.items()) {
    if (!target.is_string()) throw ParseError("alias for \"" + tag + "\" must be a string");
    table[text::fold_case(text::trim(tag))] = resolve_label(o, target.get<std::string>());
  }
  return table;
}

void apply_aliases(ClipRecord& clip, const Ontology& o, const AliasTable& aliases) {
  std::set<LabelId> mapped;
  std::set<std::string> unmapped;
  for (const auto& l : clip.labels) {
    if (o.contains(l)) {
      mapped.insert(l);
    } else if (auto it = aliases.find(text::fold_case(text::trim(l))); it != aliases.end()) {
      mapped.insert(it->second);
    } else {
      unmapped.insert(l);
    }
  }
  clip.labels = std::move(mapped);
  if (!unmapped.empty()) {
    std::string joined;
    for (const auto& t : unmapped) {
      if (!joined.empty()) joined.push_back('|');
      joined += t;
    }
    auto& slot = clip.metadata["unmapped_tags"];
    slot = slot.empty() ? joined : slot + "|" + joined;
  }
}

std::vector<ClipRecord> filter_music_clips(const std::vector<ClipRecord>& clips, const Ontology& o,
                                           std::string_view music_root) {
  const auto leaves = o.leaf_labels(music_root);
  std::vector<ClipRecord> kept;
  std::size_t unknown = 0;
  for (const auto& clip : clips) {
    bool has_leaf = false;
    for (const auto& l : clip.labels) {
      if (leaves.count(l) != 0) {
        has_leaf = true;
      } else if (!o.contains(l)) {
        ++unknown;
        spdlog::debug("clip {} carries unknown label {}", clip.audio_id, l);
      }
    }
    if (has_leaf) kept.push_back(clip);
  }
  if (unknown > 0) spdlog::info("ignored {} unknown label occurrences while filtering", unknown);
  return kept;
}

LabelFrequencyTable compute_label_frequencies(const std::vector<ClipRecord>& clips,
                                              const Ontology& o, std::string_view music_root) {
  const auto leaves = o.leaf_labels(music_root);
  LabelFrequencyTable table;
  for (const auto& clip : clips) {
    for (const auto& l : clip.labels) {
      if (leaves.count(l) != 0) {
        ++table.counts[l];
        ++table.total;
      }
    }
  }
  return table;
}

}  // namespace musicqa
