#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "musicqa/corpus.hpp"
#include "musicqa/qa_item.hpp"

namespace musicqa {

// Aspect of music a generated question probes.
class MusicDimension {
 public:
  enum class Kind { Instrumentation, Melody, Tempo, Genre, Mood, Function, Other };

  MusicDimension() = default;
  explicit MusicDimension(Kind k) : kind_(k) {}
  // Throws Error for an empty tag.
  static MusicDimension other(std::string tag);
  // Known names map to their kind; anything else becomes Other(name).
  // Throws Error for an empty string.
  static MusicDimension parse(std::string_view name);

  Kind kind() const { return kind_; }
  // Lower-case name; the tag for Other.
  std::string name() const;

  friend bool operator==(const MusicDimension&, const MusicDimension&) = default;
  friend auto operator<=>(const MusicDimension& a, const MusicDimension& b) {
    return std::pair(a.kind_, a.tag_) <=> std::pair(b.kind_, b.tag_);
  }

 private:
  Kind kind_ = Kind::Instrumentation;
  std::string tag_;
};

// The six dimensions requested by default.
std::vector<MusicDimension> default_dimensions();

struct DimensionExample {
  MusicDimension dimension;
  QAFormat format = QAFormat::OpenEnded;
  std::string question;
  std::vector<std::string> options;
  std::string answer;
};

// Parses [{"dimension","format","question","options"?,"answer"}]. Every
// example must satisfy the QA item invariants. Throws ParseError.
std::vector<DimensionExample> parse_dimension_examples(std::string_view json_text);

struct DimensionRequest {
  MusicDimension dimension;
  QAFormat format = QAFormat::OpenEnded;
  std::uint32_t count = 1;
};

struct ChatMessage {
  std::string role;
  std::string content;
};

struct PromptSpec {
  std::string system_text;
  std::vector<DimensionExample> fewshot;
  std::string clip_context;
  std::vector<DimensionRequest> requested;
  std::size_t mcq_options = 4;

  std::size_t slot_count() const;
  // Fully rendered user turn: schema instruction, examples, clip context and
  // the numbered list of requested slots.
  std::string user_text() const;
  std::vector<ChatMessage> messages() const;
};

extern const char* const kDefaultSystemPrompt;

// Throws NoContextError when the clip has neither a caption nor metadata,
// and Error for non-positive request counts.
PromptSpec build_prompt(const ClipRecord& clip, const std::vector<DimensionExample>& examples,
                        const std::vector<DimensionRequest>& requested,
                        std::size_t mcq_options = 4);

struct Rejection {
  std::string fragment;
  std::string reason;
};

struct LlmResponseBatch {
  std::string raw_text;
  std::vector<QAItem> parsed;
  std::vector<Rejection> rejected;
};

// Pulls the first JSON array out of `raw` (code fences and surrounding prose
// are tolerated), validates each element and turns it into a QAItem with
// method=Llm. Never throws: anything unusable ends up in `rejected`.
// Item i gets item counter `counter_offset + i` for its seed and qa_id.
LlmResponseBatch parse_llm_output(std::string_view raw, const ClipRecord& clip,
                                  std::uint64_t global_seed = 0,
                                  std::uint64_t counter_offset = 0) noexcept;

// Per-clip request mix. Each of the open/binary/mcq slots gets a dimension
// drawn uniformly (seeded per clip) from `dimensions`.
struct LlmPlan {
  std::uint32_t open = 2;
  std::uint32_t binary = 1;
  std::uint32_t mcq = 2;
  std::vector<MusicDimension> dimensions = default_dimensions();
};

std::vector<DimensionRequest> plan_requests(const LlmPlan& plan, std::string_view audio_id,
                                            std::uint64_t global_seed);

}  // namespace musicqa
