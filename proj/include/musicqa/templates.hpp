#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "musicqa/qa_item.hpp"

namespace musicqa {

// A question pattern bound to one (format, parent category) pair. `text`
// may use {category} (the lower-cased category name) and {label} (the
// lower-cased label being asked about).
struct QuestionTemplate {
  std::string template_id;
  QAFormat format = QAFormat::OpenEnded;
  std::string category;
  std::string text;
};

// Parses the template file: a JSON array of
// {"template_id", "format": "open"|"binary"|"mcq", "category", "text"}.
// Throws ParseError for malformed entries and PlaceholderError when a
// template lacks the placeholder its format needs.
std::vector<QuestionTemplate> parse_templates(std::string_view json_text);

// Throws PlaceholderError if `t` lacks {label} (binary) or {category}
// (open, mcq).
void check_template_placeholders(const QuestionTemplate& t);

// Uniform choice among templates with the given format and category
// (category compared case-insensitively). Throws NoTemplateError.
const QuestionTemplate& select_template(const std::vector<QuestionTemplate>& templates,
                                        QAFormat format, std::string_view category,
                                        std::uint64_t rng_seed);

// Substitutes the given placeholders. Throws PlaceholderError when a
// {name} placeholder is left unresolved.
std::string render_template(std::string_view text,
                            const std::map<std::string, std::string, std::less<>>& values);

}  // namespace musicqa
