#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "musicqa/ontology.hpp"

namespace musicqa {

enum class Source { MusicCaps, MagnaTagATune, FMA, AudioSet, Other };

inline constexpr Source kAllSources[] = {Source::MusicCaps, Source::MagnaTagATune, Source::FMA,
                                         Source::AudioSet, Source::Other};

std::string_view to_string(Source s);
// Accepts the canonical names plus "MTT"; anything unrecognized is Other.
Source parse_source(std::string_view s);
// Strict variant; nullopt for unrecognized names.
std::optional<Source> parse_source_strict(std::string_view s);

struct ClipRecord {
  std::string audio_id;
  Source source = Source::Other;
  std::set<LabelId> labels;
  std::optional<std::string> caption;
  std::map<std::string, std::string> metadata;
  std::optional<double> duration_s;
};

// One ClipRecord per JSONL line, order preserved. Blank lines are skipped.
// Throws ParseError (with line number) and DuplicateClipError.
std::vector<ClipRecord> load_manifest(std::istream& in);
std::vector<ClipRecord> load_manifest(std::string_view jsonl);

std::string manifest_line(const ClipRecord& clip);

// Free-form source tags (MTT, FMA, MusicCaps aspects) keyed by case-folded
// tag, mapped onto ontology ids.
using AliasTable = std::map<std::string, LabelId>;

// Parses {"tag": "id or display name", ...}; display names are resolved
// against the ontology.
AliasTable parse_alias_table(std::string_view json_text, const Ontology& o);

// Rewrites clip labels in place: ontology ids are kept, aliased tags are
// replaced by their id, anything else moves to metadata["unmapped_tags"]
// ('|'-joined, sorted).
void apply_aliases(ClipRecord& clip, const Ontology& o, const AliasTable& aliases);

// Keeps clips carrying at least one leaf of the music subtree.
std::vector<ClipRecord> filter_music_clips(const std::vector<ClipRecord>& clips, const Ontology& o,
                                           std::string_view music_root);

struct LabelFrequencyTable {
  std::map<LabelId, std::uint64_t> counts;
  std::uint64_t total = 0;

  std::uint64_t count(std::string_view id) const {
    auto it = counts.find(LabelId(id));
    return it == counts.end() ? 0 : it->second;
  }
};

LabelFrequencyTable compute_label_frequencies(const std::vector<ClipRecord>& clips,
                                              const Ontology& o, std::string_view music_root);

}  // namespace musicqa
