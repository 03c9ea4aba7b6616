#include "musicqa/adapters.hpp"

#include <map>
#include <optional>

#include "musicqa/errors.hpp"
#include "musicqa/text.hpp"

namespace musicqa {
namespace {

using Rows = std::vector<std::vector<std::string>>;

class Header {
 public:
  explicit Header(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) index_.emplace(std::string(text::trim(names[i])), i);
  }

  std::size_t require(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParseError("missing column \"" + name + "\"", 1);
    return it->second;
  }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::map<std::string, std::size_t> index_;
};

const std::string& cell(const std::vector<std::string>& row, std::size_t i, std::size_t row_no) {
  if (i >= row.size()) throw ParseError("row has " + std::to_string(row.size()) + " fields", row_no);
  return row[i];
}

bool blank(const std::vector<std::string>& row) {
  for (const auto& f : row) {
    if (!text::trim(f).empty()) return false;
  }
  return true;
}

// "['a', \"b's\"]" -> {a, b's}
std::vector<std::string> python_list(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char q = s[i];
    if (q != '\'' && q != '"') continue;
    std::string item;
    for (++i; i < s.size() && s[i] != q; ++i) {
      if (s[i] == '\\' && i + 1 < s.size()) ++i;
      item.push_back(s[i]);
    }
    if (!text::trim(item).empty()) out.emplace_back(text::trim(item));
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out.push_back(sep);
    out += p;
  }
  return out;
}

}  // namespace

Rows parse_delimited(std::string_view text, char sep) {
  Rows rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  std::size_t line = 1, quote_line = 0;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && field.empty()) {
      quoted = true;
      quote_line = line;
      any = true;
    } else if (c == sep) {
      end_field();
      any = true;
    } else if (c == '\n') {
      end_row();
      ++line;
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      continue;
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", quote_line);
  if (any || !field.empty()) end_row();
  return rows;
}

std::vector<ClipRecord> convert_musiccaps(std::string_view csv) {
  const Rows rows = parse_delimited(csv);
  std::vector<ClipRecord> out;
  if (rows.empty()) return out;
  const Header h(rows[0]);
  const auto ytid = h.require("ytid"), start = h.require("start_s"), labels = h.require("audioset_positive_labels"),
             caption = h.require("caption");
  const auto aspects = h.find("aspect_list");
  const auto end = h.find("end_s");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (blank(row)) continue;
    ClipRecord c;
    c.source = Source::MusicCaps;
    const std::string id(text::trim(cell(row, ytid, r + 1)));
    if (id.empty()) throw ParseError("empty ytid", r + 1);
    const std::string s(text::trim(cell(row, start, r + 1)));
    c.audio_id = id + "_" + s;
    for (const auto& l : text::split_whitespace(cell(row, labels, r + 1))) {
      std::size_t pos = 0;
      while (pos <= l.size()) {
        const std::size_t comma = std::min(l.find(',', pos), l.size());
        const auto part = text::trim(std::string_view(l).substr(pos, comma - pos));
        if (!part.empty()) c.labels.emplace(part);
        pos = comma + 1;
      }
    }
    const std::string cap(text::trim(cell(row, caption, r + 1)));
    if (!cap.empty()) c.caption = cap;
    if (aspects) {
      const auto list = python_list(cell(row, *aspects, r + 1));
      if (!list.empty()) c.metadata["aspects"] = join(list, '|');
    }
    if (end) {
      try {
        c.duration_s = std::stod(cell(row, *end, r + 1)) - std::stod(s);
      } catch (const std::exception&) {
        throw ParseError("non-numeric start_s/end_s", r + 1);
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<ClipRecord> convert_mtt(std::string_view tsv) {
  const Rows rows = parse_delimited(tsv, '\t');
  std::vector<ClipRecord> out;
  if (rows.empty()) return out;
  const Header h(rows[0]);
  const auto clip_id = h.require("clip_id");
  const auto path = h.find("mp3_path");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (blank(row)) continue;
    if (row.size() != rows[0].size()) {
      throw ParseError("expected " + std::to_string(rows[0].size()) + " fields, got " + std::to_string(row.size()),
                       r + 1);
    }
    ClipRecord c;
    c.source = Source::MagnaTagATune;
    c.audio_id = "mtt_" + std::string(text::trim(row[clip_id]));
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i == clip_id || (path && i == *path)) continue;
      const auto v = text::trim(row[i]);
      if (v == "1") c.labels.emplace(text::trim(rows[0][i]));
      else if (v != "0" && !v.empty()) throw ParseError("tag column \"" + rows[0][i] + "\" is not 0/1", r + 1);
    }
    if (path && !text::trim(row[*path]).empty()) c.metadata["mp3_path"] = std::string(text::trim(row[*path]));
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<ClipRecord> convert_fma(std::string_view csv) {
  const Rows rows = parse_delimited(csv);
  std::vector<ClipRecord> out;
  if (rows.size() < 3) return out;
  // Three header rows: group ("track", "artist", ...), field, and "track_id".
  std::vector<std::string> names(rows[1].size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string group = i < rows[0].size() ? std::string(text::trim(rows[0][i])) : "";
    const std::string field(text::trim(rows[1][i]));
    names[i] = group.empty() ? field : group + "." + field;
  }
  if (rows[2].empty() || text::trim(rows[2][0]) != "track_id") {
    throw ParseError("third header row must start with track_id", 3);
  }
  const Header h(names);
  const auto genre = h.require("track.genre_top");
  const auto title = h.find("track.title");
  const auto artist = h.find("artist.name");
  const auto duration = h.find("track.duration");
  for (std::size_t r = 3; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (blank(row)) continue;
    ClipRecord c;
    c.source = Source::FMA;
    const std::string id(text::trim(cell(row, 0, r + 1)));
    if (id.empty()) throw ParseError("empty track_id", r + 1);
    c.audio_id = "fma_" + id;
    const std::string g(text::trim(cell(row, genre, r + 1)));
    if (!g.empty()) c.labels.insert(g);
    if (title && !text::trim(cell(row, *title, r + 1)).empty()) c.metadata["title"] = std::string(text::trim(row[*title]));
    if (artist && !text::trim(cell(row, *artist, r + 1)).empty()) {
      c.metadata["artist"] = std::string(text::trim(row[*artist]));
    }
    if (!g.empty()) c.metadata["genre"] = g;
    if (duration && !text::trim(cell(row, *duration, r + 1)).empty()) {
      try {
        c.duration_s = std::stod(row[*duration]);
      } catch (const std::exception&) {
        throw ParseError("non-numeric track.duration", r + 1);
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace musicqa
