#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "musicqa/corpus.hpp"

namespace musicqa {

enum class QAFormat { OpenEnded, Binary, MultipleChoice, Caption };
enum class Method { Rule, Llm, Imported };

inline constexpr QAFormat kAllFormats[] = {QAFormat::OpenEnded, QAFormat::Binary,
                                           QAFormat::MultipleChoice, QAFormat::Caption};

// Wire spellings: "open", "binary", "mcq", "caption".
std::string_view to_string(QAFormat f);
// Accepts the wire spellings and common long forms ("open-ended",
// "multiple-choice", "yes/no", ...).
std::optional<QAFormat> parse_format(std::string_view s);

// "rule", "llm", "imported".
std::string_view to_string(Method m);
std::optional<Method> parse_method(std::string_view s);

// One (audio, question, answer) training sample.
struct QAItem {
  std::string qa_id;
  std::string audio_id;
  Source source = Source::Other;
  QAFormat format = QAFormat::OpenEnded;
  std::string question;
  std::vector<std::string> options;  // MultipleChoice only
  std::string answer;
  std::optional<std::size_t> answer_index;  // MultipleChoice only
  std::string category;
  Method method = Method::Rule;
  std::optional<std::string> template_id;
  std::uint64_t seed = 0;

  friend bool operator==(const QAItem&, const QAItem&) = default;
};

// Single-line JSON with the fixed field order
// qa_id, audio_id, source, format, question, options, answer, answer_index,
// category, method, template_id, seed. No trailing newline.
std::string to_json_line(const QAItem& item);
void append_json_line(std::string& out, const QAItem& item);

// Throws ParseError; `line_no` is only used for messages.
QAItem parse_qa_item(std::string_view json_line, std::size_t line_no = 0);
std::vector<QAItem> read_qa_jsonl(std::string_view jsonl);
std::string write_qa_jsonl(const std::vector<QAItem>& items);

char option_letter(std::size_t index);

// "stem A. x B. y C. z".
std::string render_mcq_question(std::string_view stem, const std::vector<std::string>& options);
// Inverse of render_mcq_question; returns the question unchanged when it does
// not end with the rendered option listing.
std::string_view mcq_stem(std::string_view question, const std::vector<std::string>& options);

struct ValidationOptions {
  // Required option count for MultipleChoice; nullopt accepts any K >= 2.
  std::optional<std::size_t> mcq_options;
};

// Report-style invariant check. Empty result means the item is valid.
std::vector<std::string> check_qa_item(const QAItem& item, const ValidationOptions& opts = {});

// Normalizes binary answers ("yes." -> "Yes") in place, then checks.
std::vector<std::string> validate_qa_item(QAItem& item, const ValidationOptions& opts = {});

// "Yes"/"No" for answers such as "yes", "No.", " YES! "; nullopt otherwise.
std::optional<std::string> normalize_yes_no(std::string_view answer);

}  // namespace musicqa
