#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "musicqa/corpus.hpp"
#include "musicqa/qa_item.hpp"

namespace musicqa {

// Keeps, for each (audio_id, normalized question), the item with the smallest
// qa_id. Output is sorted by qa_id.
std::vector<QAItem> deduplicate(std::vector<QAItem> items);

enum class Split { Train, Val, Test };
std::string_view to_string(Split s);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Throws BadRatioError unless all ratios are positive and sum to 1 (1e-9).
void check_ratios(const SplitRatios& r);

// Split of one clip, decided by hashing (audio_id, seed) into [0, 1).
Split split_of_audio(std::string_view audio_id, const SplitRatios& ratios, std::uint64_t global_seed);

struct SplitAssignment {
  std::map<std::string, Split> split_of;
};

SplitAssignment split_by_audio(const std::vector<QAItem>& items, const SplitRatios& ratios,
                               std::uint64_t global_seed);

struct ShardEntry {
  std::string path;  // relative to the output directory
  std::uint64_t items = 0;
  std::string sha256;

  friend bool operator==(const ShardEntry&, const ShardEntry&) = default;
};

struct ShardManifest {
  std::vector<ShardEntry> shards;
  std::uint64_t total_items() const;
  std::string to_json() const;

  friend bool operator==(const ShardManifest&, const ShardManifest&) = default;
};

ShardManifest parse_shard_manifest(std::string_view json_text);

// Writes shard-00000.jsonl, ... (items in qa_id order) and manifest.json into
// out_dir, each file atomically. Shard files from an earlier run that are not
// part of the new manifest are removed. Throws IoError.
ShardManifest write_shards(std::vector<QAItem> items, std::size_t shard_size,
                           const std::filesystem::path& out_dir);

// Reads the shards listed in out_dir/manifest.json, verifying item counts and
// digests. Throws IoError on a mismatch.
std::vector<QAItem> read_shards(const std::filesystem::path& out_dir);

enum class Task { Captioning, QA, MCQ, Binary };
inline constexpr Task kAllTasks[] = {Task::Captioning, Task::QA, Task::MCQ, Task::Binary};
std::string_view to_string(Task t);
Task task_of(QAFormat f);

// Table-style counts: one row per source, one column per task, plus the
// number of distinct clips per source.
struct DatasetStats {
  std::map<Source, std::array<std::uint64_t, 4>> per_source_task;
  std::map<Source, std::uint64_t> per_source_audios;

  std::uint64_t count(Source s, Task t) const;
  std::uint64_t audios(Source s) const;
  std::uint64_t row_total(Source s) const;
  std::uint64_t task_total(Task t) const;
  std::uint64_t audios_total() const;
  std::uint64_t grand_total() const;

  DatasetStats& operator+=(const DatasetStats& o);
  friend DatasetStats operator+(DatasetStats a, const DatasetStats& b) { return a += b; }
  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;

  // Rows MusicCaps, MagnaTagATune, FMA, AudioSet (then Other, only when it
  // has items) and Total; columns Audios, Captioning, QA, MCQ, Binary, Total.
  std::string to_json() const;
  std::string to_table() const;
};

// Audio counts are distinct audio_ids per source.
DatasetStats compute_stats(const std::vector<QAItem>& items);

inline constexpr std::string_view kCaptionInstruction = "Describe the music in detail.";

// Lines carry "audio_id" plus either "caption" or "question"/"answer"
// ("options", "format", "category" optional). Caption lines become Caption
// items; QA lines become open, binary or mcq items. Every item is validated.
// Throws ParseError with the line number.
std::vector<QAItem> import_external(std::string_view jsonl, Source source, std::uint64_t global_seed = 0);

std::vector<QAItem> filter_formats(std::vector<QAItem> items, const std::set<QAFormat>& keep);
std::vector<QAItem> filter_sources(std::vector<QAItem> items, const std::set<Source>& keep);

}  // namespace musicqa
