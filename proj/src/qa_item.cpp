#include "musicqa/qa_item.hpp"

#include <charconv>
#include <json.hpp>
#include <set>

#include "musicqa/errors.hpp"
#include "musicqa/text.hpp"

using nlohmann::json;

namespace musicqa {

std::string_view to_string(QAFormat f) {
  switch (f) {
    case QAFormat::OpenEnded: return "open";
    case QAFormat::Binary: return "binary";
    case QAFormat::MultipleChoice: return "mcq";
    case QAFormat::Caption: return "caption";
  }
  return "open";
}

std::optional<QAFormat> parse_format(std::string_view s) {
  const std::string k = text::fold_case(text::trim(s));
  if (k == "open" || k == "open-ended" || k == "open_ended" || k == "openended" || k == "qa") {
    return QAFormat::OpenEnded;
  }
  if (k == "binary" || k == "yes/no" || k == "yesno" || k == "yes-no" || k == "boolean") {
    return QAFormat::Binary;
  }
  if (k == "mcq" || k == "multiple-choice" || k == "multiple_choice" || k == "multiplechoice" ||
      k == "multiple choice") {
    return QAFormat::MultipleChoice;
  }
  if (k == "caption" || k == "captioning") return QAFormat::Caption;
  return std::nullopt;
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Rule: return "rule";
    case Method::Llm: return "llm";
    case Method::Imported: return "imported";
  }
  return "rule";
}

std::optional<Method> parse_method(std::string_view s) {
  if (s == "rule") return Method::Rule;
  if (s == "llm") return Method::Llm;
  if (s == "imported") return Method::Imported;
  return std::nullopt;
}

namespace {

void append_escaped(std::string& out, std::string_view s) {
  static constexpr char kHex[] = "0123456789abcdef";
  out.push_back('"');
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20) {
          out += "\\u00";
          out.push_back(kHex[c >> 4]);
          out.push_back(kHex[c & 0xf]);
        } else {
          out.push_back(ch);
        }
    }
  }
  out.push_back('"');
}

template <typename Int>
void append_int(std::string& out, Int v) {
  char buf[24];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, end);
}

}  // namespace

void append_json_line(std::string& out, const QAItem& item) {
  out += "{\"qa_id\":";
  append_escaped(out, item.qa_id);
  out += ",\"audio_id\":";
  append_escaped(out, item.audio_id);
  out += ",\"source\":";
  append_escaped(out, to_string(item.source));
  out += ",\"format\":";
  append_escaped(out, to_string(item.format));
  out += ",\"question\":";
  append_escaped(out, item.question);
  out += ",\"options\":[";
  for (std::size_t i = 0; i < item.options.size(); ++i) {
    if (i) out.push_back(',');
    append_escaped(out, item.options[i]);
  }
  out += "],\"answer\":";
  append_escaped(out, item.answer);
  out += ",\"answer_index\":";
  if (item.answer_index) {
    append_int(out, *item.answer_index);
  } else {
    out += "null";
  }
  out += ",\"category\":";
  append_escaped(out, item.category);
  out += ",\"method\":";
  append_escaped(out, to_string(item.method));
  out += ",\"template_id\":";
  if (item.template_id) {
    append_escaped(out, *item.template_id);
  } else {
    out += "null";
  }
  out += ",\"seed\":";
  append_int(out, item.seed);
  out.push_back('}');
}

std::string to_json_line(const QAItem& item) {
  std::string out;
  out.reserve(256);
  append_json_line(out, item);
  return out;
}

QAItem parse_qa_item(std::string_view json_line, std::size_t line_no) {
  json obj;
  try {
    obj = json::parse(json_line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
  }
  if (!obj.is_object()) throw ParseError("QA item is not a JSON object", line_no);

  auto str = [&](const char* key) -> std::string {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
      throw ParseError(std::string("missing or non-string \"") + key + "\"", line_no);
    }
    return it->get<std::string>();
  };

  QAItem item;
  item.qa_id = str("qa_id");
  item.audio_id = str("audio_id");
  item.source = parse_source(str("source"));
  const std::string fmt = str("format");
  auto f = parse_format(fmt);
  if (!f) throw ParseError("unknown format \"" + fmt + "\"", line_no);
  item.format = *f;
  item.question = str("question");
  item.answer = str("answer");
  item.category = obj.contains("category") && obj["category"].is_string() ? str("category") : "";
  const std::string method = str("method");
  auto m = parse_method(method);
  if (!m) throw ParseError("unknown method \"" + method + "\"", line_no);
  item.method = *m;

  if (auto it = obj.find("options"); it != obj.end() && !it->is_null()) {
    if (!it->is_array()) throw ParseError("\"options\" must be an array", line_no);
    for (const auto& o : *it) {
      if (!o.is_string()) throw ParseError("non-string option", line_no);
      item.options.push_back(o.get<std::string>());
    }
  }
  if (auto it = obj.find("answer_index"); it != obj.end() && !it->is_null()) {
    if (!it->is_number_unsigned()) {
      throw ParseError("\"answer_index\" must be a non-negative integer", line_no);
    }
    item.answer_index = it->get<std::size_t>();
  }
  if (auto it = obj.find("template_id"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) throw ParseError("\"template_id\" must be a string", line_no);
    item.template_id = it->get<std::string>();
  }
  if (auto it = obj.find("seed"); it != obj.end() && !it->is_null()) {
    if (!it->is_number_unsigned()) throw ParseError("\"seed\" must be an unsigned integer", line_no);
    item.seed = it->get<std::uint64_t>();
  }
  return item;
}

std::vector<QAItem> read_qa_jsonl(std::string_view jsonl) {
  std::vector<QAItem> items;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    std::size_t nl = jsonl.find('\n', pos);
    if (nl == std::string_view::npos) nl = jsonl.size();
    ++line_no;
    const auto line = jsonl.substr(pos, nl - pos);
    if (!text::trim(line).empty()) items.push_back(parse_qa_item(line, line_no));
    pos = nl + 1;
  }
  return items;
}

std::string write_qa_jsonl(const std::vector<QAItem>& items) {
  std::string out;
  out.reserve(items.size() * 256);
  for (const auto& item : items) {
    append_json_line(out, item);
    out.push_back('\n');
  }
  return out;
}

char option_letter(std::size_t index) { return static_cast<char>('A' + index); }

std::string render_mcq_question(std::string_view stem, const std::vector<std::string>& options) {
  std::string out(stem);
  for (std::size_t i = 0; i < options.size(); ++i) {
    out.push_back(' ');
    out.push_back(option_letter(i));
    out += ". ";
    out += options[i];
  }
  return out;
}

std::string_view mcq_stem(std::string_view question, const std::vector<std::string>& options) {
  if (options.empty()) return question;
  const std::string listing = render_mcq_question("", options);
  if (question.size() >= listing.size() &&
      question.substr(question.size() - listing.size()) == listing) {
    return question.substr(0, question.size() - listing.size());
  }
  return question;
}

std::optional<std::string> normalize_yes_no(std::string_view answer) {
  std::string_view a = text::trim(answer);
  while (!a.empty() && std::string_view(".,!?;:\"'").find(a.back()) != std::string_view::npos) {
    a.remove_suffix(1);
  }
  a = text::trim(a);
  const std::string k = text::fold_case(a);
  if (k == "yes") return "Yes";
  if (k == "no") return "No";
  return std::nullopt;
}

namespace {

bool ends_with_question_mark(std::string_view s) {
  s = text::trim(s);
  return !s.empty() && s.back() == '?';
}

}  // namespace

std::vector<std::string> check_qa_item(const QAItem& item, const ValidationOptions& opts) {
  std::vector<std::string> v;
  if (item.qa_id.empty()) v.emplace_back("empty qa_id");
  if (item.audio_id.empty()) v.emplace_back("empty audio_id");
  if (text::trim(item.question).empty()) v.emplace_back("empty question");
  if (text::trim(item.answer).empty()) v.emplace_back("empty answer");

  if (item.format == QAFormat::MultipleChoice) {
    const std::size_t k = item.options.size();
    if (opts.mcq_options && k != *opts.mcq_options) {
      v.push_back("expected " + std::to_string(*opts.mcq_options) + " options, got " +
                  std::to_string(k));
    } else if (k < 2) {
      v.emplace_back("fewer than 2 options");
    }
    if (k > 26) v.emplace_back("more than 26 options");
    std::set<std::string> distinct;
    bool empty_option = false;
    for (const auto& o : item.options) {
      distinct.insert(text::fold_case(text::trim(o)));
      if (text::trim(o).empty()) empty_option = true;
    }
    if (distinct.size() != k) v.emplace_back("duplicate options");
    if (empty_option) v.emplace_back("empty option");
    if (!item.answer_index) {
      v.emplace_back("missing answer_index");
    } else if (*item.answer_index >= k) {
      v.emplace_back("answer_index out of range");
    } else if (item.options[*item.answer_index] != item.answer) {
      v.emplace_back("answer does not match options[answer_index]");
    }
    if (!ends_with_question_mark(mcq_stem(item.question, item.options))) {
      v.emplace_back("question does not end with '?'");
    }
  } else {
    if (!item.options.empty()) v.emplace_back("options present on non-MCQ item");
    if (item.answer_index) v.emplace_back("answer_index present on non-MCQ item");
    if (item.format != QAFormat::Caption && !ends_with_question_mark(item.question)) {
      v.emplace_back("question does not end with '?'");
    }
    if (item.format == QAFormat::Binary && item.answer != "Yes" && item.answer != "No") {
      v.emplace_back("binary answer must be \"Yes\" or \"No\"");
    }
  }
  return v;
}

std::vector<std::string> validate_qa_item(QAItem& item, const ValidationOptions& opts) {
  if (item.format == QAFormat::Binary) {
    if (auto yn = normalize_yes_no(item.answer)) item.answer = *yn;
  }
  return check_qa_item(item, opts);
}

}  // namespace musicqa
