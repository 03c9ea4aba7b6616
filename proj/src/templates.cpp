#include "musicqa/templates.hpp"

#include <json.hpp>
#include <set>

#include "musicqa/errors.hpp"
#include "musicqa/rng.hpp"
#include "musicqa/text.hpp"

using nlohmann::json;

namespace musicqa {

namespace {

bool is_placeholder_char(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }

// Finds "{name}" starting at or after pos; returns npos if none.
std::size_t find_placeholder(std::string_view s, std::size_t pos, std::string_view& name) {
  while ((pos = s.find('{', pos)) != std::string_view::npos) {
    std::size_t end = pos + 1;
    while (end < s.size() && is_placeholder_char(s[end])) ++end;
    if (end < s.size() && s[end] == '}' && end > pos + 1) {
      name = s.substr(pos + 1, end - pos - 1);
      return pos;
    }
    ++pos;
  }
  return std::string_view::npos;
}

bool has_placeholder(std::string_view s, std::string_view wanted) {
  std::string_view name;
  std::size_t pos = 0;
  while ((pos = find_placeholder(s, pos, name)) != std::string_view::npos) {
    if (name == wanted) return true;
    ++pos;
  }
  return false;
}

}  // namespace

void check_template_placeholders(const QuestionTemplate& t) {
  if (t.text.empty()) throw PlaceholderError("template " + t.template_id + " has empty text");
  const char* needed = t.format == QAFormat::Binary ? "label" : "category";
  if (t.format == QAFormat::Caption) return;
  if (!has_placeholder(t.text, needed)) {
    throw PlaceholderError("template " + t.template_id + " (" + std::string(to_string(t.format)) +
                           ") lacks {" + needed + "}");
  }
}

std::string render_template(std::string_view text,
                            const std::map<std::string, std::string, std::less<>>& values) {
  std::string out;
  out.reserve(text.size() + 32);
  std::size_t pos = 0;
  std::string_view name;
  std::size_t at;
  while ((at = find_placeholder(text, pos, name)) != std::string_view::npos) {
    auto it = values.find(name);
    if (it == values.end()) {
      throw PlaceholderError("unresolved placeholder {" + std::string(name) + "} in \"" +
                             std::string(text) + "\"");
    }
    out.append(text.substr(pos, at - pos));
    out += it->second;
    pos = at + name.size() + 2;
  }
  out.append(text.substr(pos));
  return out;
}

std::vector<QuestionTemplate> parse_templates(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed template file: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("template file must be a JSON array");
  std::vector<QuestionTemplate> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& obj = doc[i];
    const std::string where = "template entry " + std::to_string(i);
    if (!obj.is_object()) throw ParseError(where + " is not an object");
    for (const char* key : {"template_id", "format", "category", "text"}) {
      if (!obj.contains(key) || !obj[key].is_string()) {
        throw ParseError(where + " is missing string field \"" + key + "\"");
      }
    }
    QuestionTemplate t;
    t.template_id = obj["template_id"].get<std::string>();
    const auto fmt = obj["format"].get<std::string>();
    auto f = parse_format(fmt);
    if (!f || *f == QAFormat::Caption) {
      throw ParseError(where + " has unsupported format \"" + fmt + "\"");
    }
    t.format = *f;
    t.category = obj["category"].get<std::string>();
    t.text = obj["text"].get<std::string>();
    if (t.template_id.empty() || !ids.insert(t.template_id).second) {
      throw ParseError(where + " has an empty or duplicate template_id");
    }
    check_template_placeholders(t);
    out.push_back(std::move(t));
  }
  return out;
}

const QuestionTemplate& select_template(const std::vector<QuestionTemplate>& templates,
                                        QAFormat format, std::string_view category,
                                        std::uint64_t rng_seed) {
  const std::string key = text::fold_case(category);
  std::vector<const QuestionTemplate*> matching;
  for (const auto& t : templates) {
    if (t.format == format && text::fold_case(t.category) == key) matching.push_back(&t);
  }
  if (matching.empty()) {
    throw NoTemplateError("no " + std::string(to_string(format)) + " template for category \"" +
                          std::string(category) + "\"");
  }
  Rng rng(rng_seed);
  return *matching[rng.index(matching.size())];
}

}  // namespace musicqa
