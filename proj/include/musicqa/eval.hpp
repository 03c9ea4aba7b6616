#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "musicqa/qa_item.hpp"
#include "musicqa/service.hpp"

namespace musicqa {

struct ModelOutput {
  std::string qa_id;
  std::string text;
};

// JSONL {"qa_id": str, "text": str}. Throws ParseError.
std::vector<ModelOutput> read_model_outputs(std::string_view jsonl);

// (1) first standalone option letter within range, (2) longest option text
// contained in the output, (3) nullopt. Matching is case-insensitive.
std::optional<std::size_t> extract_mcq_answer(std::string_view output,
                                              const std::vector<std::string>& options);

// First standalone "yes"/"no" token, case-insensitive.
std::optional<bool> extract_yes_no(std::string_view output);

struct GroupScore {
  std::uint64_t total = 0;
  std::uint64_t correct = 0;
  std::uint64_t missing = 0;      // no output for the item
  std::uint64_t unparseable = 0;  // output present but no answer extracted
  double score_sum = 0.0;         // graded tasks (captioning)

  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
  double mean_score() const { return total == 0 ? 0.0 : score_sum / total; }
  GroupScore& operator+=(const GroupScore& o);
};

// Result for one task ("mcq", "binary", "classification", "caption", ...).
struct TaskReport {
  // "accuracy" or "meteor_exact".
  std::string metric = "accuracy";
  GroupScore overall;
  std::map<std::string, GroupScore> per_category;

  double value() const { return metric == "accuracy" ? overall.accuracy() : overall.mean_score(); }
};

struct EvalReport {
  std::map<std::string, TaskReport> tasks;

  std::uint64_t total_items() const;
  // Micro-averaged accuracy over accuracy-type tasks.
  double overall_accuracy() const;
  // Task value as a percentage of the same task in `baseline`.
  std::map<std::string, double> relative_to(const EvalReport& baseline) const;
  std::string to_json(const EvalReport* baseline = nullptr) const;
};

// 100 * value / reference.
double relative_percent(double value, double reference);

using CategoryMap = std::map<std::string, std::string, std::less<>>;

// Items without a category_map entry are grouped under "uncategorized" when a
// map is given. Throws UnknownQaIdError for outputs naming absent items.
EvalReport score_mcq(const std::vector<QAItem>& items, const std::vector<ModelOutput>& outputs,
                     const CategoryMap* category_map = nullptr);
EvalReport score_binary(const std::vector<QAItem>& items, const std::vector<ModelOutput>& outputs,
                        const CategoryMap* category_map = nullptr);

struct EmbeddingVector {
  std::vector<double> values;
  std::size_t dim() const { return values.size(); }
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  // One vector per input text, in order.
  virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
};

// Deterministic stand-in for a text encoder: L2-normalised counts of
// case-folded character trigrams, hashed into `dim` buckets.
class TrigramEmbedder : public Embedder {
 public:
  explicit TrigramEmbedder(std::size_t dim = 4096) : dim_(dim) {}
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;
  static EmbeddingVector embed_one(std::string_view text, std::size_t dim = 4096);

 private:
  std::size_t dim_;
};

// POST {"texts": [...]} -> {"embeddings": [[...], ...]}, bearer-token auth.
// Service failures surface as EmbedderError.
class HttpEmbedder : public Embedder {
 public:
  explicit HttpEmbedder(HttpEndpoint endpoint, std::size_t batch_size = 64)
      : endpoint_(std::move(endpoint)), batch_size_(batch_size == 0 ? 1 : batch_size) {}
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;

 private:
  HttpEndpoint endpoint_;
  std::size_t batch_size_;
};

// Throws DimMismatchError on differing dims or an empty vector.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

// Caches label embeddings for the lifetime of the matcher. Safe to share
// across threads.
class LabelMatcher {
 public:
  explicit LabelMatcher(Embedder& embedder) : embedder_(embedder) {}

  // Argmax of cosine similarity; ties go to the earlier candidate. Needs at
  // least two candidates.
  std::string match(std::string_view output_text, const std::vector<std::string>& candidates);
  std::size_t match_index(std::string_view output_text, const std::vector<std::string>& candidates);

 private:
  std::vector<EmbeddingVector> labels(const std::vector<std::string>& candidates);

  Embedder& embedder_;
  std::mutex mu_;
  std::map<std::string, EmbeddingVector> cache_;
};

std::string match_label_by_similarity(std::string_view output_text,
                                      const std::vector<std::string>& candidates, Embedder& embedder);

// Classification by similarity: each item's output is matched against
// `candidates` (the distinct item answers when empty) and scored against the
// item answer, case-insensitively.
EvalReport score_classification(const std::vector<QAItem>& items, const std::vector<ModelOutput>& outputs,
                                LabelMatcher& matcher, std::vector<std::string> candidates = {},
                                const CategoryMap* category_map = nullptr);

struct MeteorBreakdown {
  std::size_t matches = 0;
  double precision = 0.0;
  double recall = 0.0;
  double fmean = 0.0;
  std::size_t chunks = 0;
  double penalty = 0.0;
  double score = 0.0;
  // False when the alignment search hit its node budget and the best
  // alignment found so far was used.
  bool exact = true;
};

// Case-folded, punctuation-stripped, whitespace-split tokens.
std::vector<std::string> meteor_tokens(std::string_view s);

// Exact-match METEOR: fmean = 10PR/(R+9P), penalty = 0.5 (chunks/m)^3.
MeteorBreakdown meteor_exact(std::string_view candidate, std::string_view reference,
                             std::uint64_t node_budget = 2'000'000);

// Mean meteor_exact of outputs against item answers (caption items).
EvalReport score_captions(const std::vector<QAItem>& items, const std::vector<ModelOutput>& outputs,
                          const CategoryMap* category_map = nullptr);

// Throws OverlapError when two fragments share a task name.
EvalReport aggregate_report(const std::vector<EvalReport>& fragments);

EvalReport parse_eval_report(std::string_view json_text);

}  // namespace musicqa
