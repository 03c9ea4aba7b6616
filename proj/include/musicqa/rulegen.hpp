#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "musicqa/corpus.hpp"
#include "musicqa/ontology.hpp"
#include "musicqa/qa_item.hpp"
#include "musicqa/rng.hpp"
#include "musicqa/templates.hpp"

namespace musicqa {

// Per-item seed: a stable hash of (global_seed, audio_id, item_counter).
// Independent of worker count and clip order.
std::uint64_t clip_rng_seed(std::uint64_t global_seed, std::string_view audio_id,
                            std::uint64_t item_counter);

// Stable hash of (audio_id, format, template_id, item_counter, global_seed)
// as 16 hex digits.
std::string make_qa_id(std::string_view audio_id, QAFormat format, std::string_view template_id,
                       std::uint64_t item_counter, std::uint64_t global_seed);

// Identifies one item slot: the seed is derived from it and so is the qa_id.
struct ItemKey {
  std::uint64_t global_seed = 0;
  std::uint64_t item_counter = 0;
};

struct DistractorCandidate {
  LabelId id;
  std::string name;
  double weight = 0.0;
};

struct DistractorPool {
  std::vector<DistractorCandidate> candidates;

  std::size_t positive_count() const;
};

// k distinct names drawn sequentially without replacement, each draw
// proportional to the remaining weights. Throws InsufficientPoolError when
// fewer than k candidates have positive weight.
std::vector<std::string> sample_distractors(const DistractorPool& pool, std::size_t k, Rng& rng);
std::vector<std::string> sample_distractors(const DistractorPool& pool, std::size_t k,
                                            std::uint64_t seed);

QAItem generate_open_qa(const ClipRecord& clip, const OntologyNode& leaf,
                        const OntologyNode& category, const QuestionTemplate& t, ItemKey key);

// Positive ("Yes", asks about `leaf`) or negative ("No", asks about a
// weighted draw from `pool`) with probability 1/2 each. A negative draw from
// an empty pool falls back to the positive form; `fell_back` reports it.
QAItem generate_binary_qa(const ClipRecord& clip, const OntologyNode& leaf,
                          const OntologyNode& category, const DistractorPool& pool,
                          const QuestionTemplate& t, ItemKey key, bool* fell_back = nullptr);

// `pool` must already exclude every label on the clip.
QAItem generate_mcq(const ClipRecord& clip, const OntologyNode& leaf, const OntologyNode& category,
                    const DistractorPool& pool, const QuestionTemplate& t, std::size_t k_options,
                    ItemKey key);

// Items per music leaf on a clip, by format.
struct GenerationPlan {
  std::uint32_t open = 1;
  std::uint32_t binary = 1;
  std::uint32_t mcq = 1;

  std::uint32_t count(QAFormat f) const;
};

struct GenerationError {
  std::string audio_id;
  LabelId leaf;
  QAFormat format;
  std::string message;
};

struct GenerationReport {
  std::uint64_t clips = 0;
  // Indexed by QAFormat.
  std::array<std::uint64_t, 4> emitted{};
  // Leaves for which no category on their ancestor path has a template.
  std::array<std::uint64_t, 4> skipped_no_template{};
  std::uint64_t widened_pools = 0;
  std::uint64_t binary_fallbacks = 0;
  std::vector<GenerationError> errors;

  void merge(const GenerationReport& other);
  std::string to_json() const;
};

// Read-only state shared by every clip: resolved categories, template
// indices and frequency-weighted pools. Build once, use from many threads.
class RuleGenerator {
 public:
  RuleGenerator(const Ontology& ontology, std::string_view music_root,
                const LabelFrequencyTable& freqs, std::vector<QuestionTemplate> templates,
                GenerationPlan plan = {}, std::size_t mcq_options = 4);

  std::vector<QAItem> generate_for_clip(const ClipRecord& clip, std::uint64_t global_seed,
                                        GenerationReport& report) const;

  // Runs every clip on `workers` threads and returns items sorted by qa_id.
  std::vector<QAItem> generate(const std::vector<ClipRecord>& clips, std::uint64_t global_seed,
                               std::size_t workers, GenerationReport& report) const;

  const GenerationPlan& plan() const { return plan_; }
  std::size_t mcq_options() const { return mcq_options_; }

 private:
  struct LeafInfo {
    const OntologyNode* node = nullptr;
    // Per rule format (open, binary, mcq): the category whose templates
    // apply, and the matching template indices. Null when none applies.
    const OntologyNode* category[3] = {nullptr, nullptr, nullptr};
    const std::vector<std::size_t>* templates[3] = {nullptr, nullptr, nullptr};
  };

  DistractorPool pool_for(const ClipRecord& clip, const OntologyNode& answer,
                          const OntologyNode& category, std::size_t needed, bool& widened) const;

  const Ontology& ontology_;
  std::vector<QuestionTemplate> templates_;
  GenerationPlan plan_;
  std::size_t mcq_options_;
  std::map<LabelId, LeafInfo, std::less<>> leaves_;
  // Template indices keyed by (format, case-folded category).
  std::map<std::pair<int, std::string>, std::vector<std::size_t>> by_category_;
  // Weighted pools: per category node, and over the whole music subtree.
  std::map<const OntologyNode*, std::vector<DistractorCandidate>> category_pools_;
  std::vector<DistractorCandidate> global_pool_;
};

// Free-function form matching the single-clip contract.
std::vector<QAItem> generate_for_clip(const ClipRecord& clip, const RuleGenerator& generator,
                                      std::uint64_t global_seed, GenerationReport& report);

// Sorts by qa_id with a full-content tie-break, for byte-stable output.
void sort_items(std::vector<QAItem>& items);

}  // namespace musicqa
