#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "musicqa/corpus.hpp"

namespace musicqa {

// RFC 4180 CSV: quoted fields may hold separators, doubled quotes and
// newlines. Throws ParseError on an unterminated quote.
std::vector<std::vector<std::string>> parse_delimited(std::string_view text, char sep = ',');

// Converters from the public source distributions to manifest records. Each
// throws ParseError (with the row number) when a required column is missing.

// MusicCaps musiccaps-public.csv: ytid, start_s, end_s,
// audioset_positive_labels, aspect_list, caption, ... The audio_id is
// "<ytid>_<start_s>"; labels are the AudioSet ids; aspects go to
// metadata["aspects"] ('|'-joined).
std::vector<ClipRecord> convert_musiccaps(std::string_view csv);

// MagnaTagATune annotations_final.csv (tab-separated): clip_id, one 0/1 column
// per tag, mp3_path. Tags set to 1 become free-form labels, to be mapped with
// an alias table.
std::vector<ClipRecord> convert_mtt(std::string_view tsv);

// FMA tracks.csv with its three header rows (group, field, "track_id").
// Labels are track.genre_top plus artist/title metadata; tracks without a
// top genre are kept with no labels.
std::vector<ClipRecord> convert_fma(std::string_view csv);

}  // namespace musicqa
