#include "musicqa/eval.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_map>

#include "musicqa/errors.hpp"
#include "musicqa/hashing.hpp"
#include "musicqa/text.hpp"

using nlohmann::json;
using nlohmann::ordered_json;

namespace musicqa {

std::vector<ModelOutput> read_model_outputs(std::string_view jsonl) {
  std::vector<ModelOutput> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    const std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (text::trim(line).empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ParseError("malformed output record", line_no);
    auto id = j.find("qa_id");
    auto t = j.find("text");
    if (id == j.end() || !id->is_string() || t == j.end() || !t->is_string()) {
      throw ParseError("output record needs string fields qa_id and text", line_no);
    }
    out.push_back({id->get<std::string>(), t->get<std::string>()});
  }
  return out;
}

namespace {

bool is_alnum(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

// Calls fn(begin, length) for every maximal alphanumeric run; stops early
// when fn returns true.
template <typename Fn>
void for_each_word(std::string_view s, Fn&& fn) {
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && !is_alnum(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t begin = i;
    while (i < s.size() && is_alnum(static_cast<unsigned char>(s[i]))) ++i;
    if (i > begin && fn(begin, i - begin)) return;
  }
}

}  // namespace

std::optional<std::size_t> extract_mcq_answer(std::string_view output,
                                              const std::vector<std::string>& options) {
  if (options.empty()) return std::nullopt;
  const std::string folded = text::fold_case(output);
  std::optional<std::size_t> letter;
  for_each_word(folded, [&](std::size_t b, std::size_t n) {
    if (n != 1 || folded[b] < 'a' || folded[b] > 'z') return false;
    const auto idx = static_cast<std::size_t>(folded[b] - 'a');
    if (idx >= options.size()) return false;
    letter = idx;
    return true;
  });
  if (letter) return letter;

  std::optional<std::size_t> best;
  std::size_t best_len = 0;
  for (std::size_t i = 0; i < options.size(); ++i) {
    const std::string opt = text::fold_case(text::trim(options[i]));
    if (opt.empty() || opt.size() <= best_len) continue;
    if (folded.find(opt) != std::string::npos) {
      best = i;
      best_len = opt.size();
    }
  }
  return best;
}

std::optional<bool> extract_yes_no(std::string_view output) {
  const std::string folded = text::fold_case(output);
  std::optional<bool> out;
  for_each_word(folded, [&](std::size_t b, std::size_t n) {
    const std::string_view w(folded.data() + b, n);
    if (w == "yes") out = true;
    if (w == "no") out = false;
    return out.has_value();
  });
  return out;
}

GroupScore& GroupScore::operator+=(const GroupScore& o) {
  total += o.total;
  correct += o.correct;
  missing += o.missing;
  unparseable += o.unparseable;
  score_sum += o.score_sum;
  return *this;
}

std::uint64_t EvalReport::total_items() const {
  std::uint64_t n = 0;
  for (const auto& [name, t] : tasks) n += t.overall.total;
  return n;
}

double EvalReport::overall_accuracy() const {
  GroupScore sum;
  for (const auto& [name, t] : tasks) {
    if (t.metric == "accuracy") sum += t.overall;
  }
  return sum.accuracy();
}

double relative_percent(double value, double reference) {
  if (reference == 0.0) throw Error("relative percentage against a zero reference");
  return 100.0 * value / reference;
}

std::map<std::string, double> EvalReport::relative_to(const EvalReport& baseline) const {
  std::map<std::string, double> out;
  for (const auto& [name, t] : tasks) {
    auto it = baseline.tasks.find(name);
    if (it == baseline.tasks.end() || it->second.metric != t.metric || it->second.value() == 0.0) continue;
    out[name] = relative_percent(t.value(), it->second.value());
  }
  return out;
}

namespace {

ordered_json group_json(const GroupScore& g, const std::string& metric) {
  ordered_json j;
  j["value"] = metric == "accuracy" ? g.accuracy() : g.mean_score();
  j["total"] = g.total;
  j["correct"] = g.correct;
  j["missing"] = g.missing;
  j["unparseable"] = g.unparseable;
  if (metric != "accuracy") j["score_sum"] = g.score_sum;
  return j;
}

GroupScore group_from_json(const json& j, const std::string& metric) {
  GroupScore g;
  g.total = j.at("total").get<std::uint64_t>();
  g.correct = j.value("correct", std::uint64_t{0});
  g.missing = j.value("missing", std::uint64_t{0});
  g.unparseable = j.value("unparseable", std::uint64_t{0});
  if (metric != "accuracy") {
    g.score_sum = j.contains("score_sum") ? j["score_sum"].get<double>()
                                          : j.at("value").get<double>() * static_cast<double>(g.total);
  }
  return g;
}

}  // namespace

std::string EvalReport::to_json(const EvalReport* baseline) const {
  ordered_json doc;
  ordered_json tj = ordered_json::object();
  for (const auto& [name, t] : tasks) {
    ordered_json one;
    one["metric"] = t.metric;
    const ordered_json overall = group_json(t.overall, t.metric);
    for (const auto& [k, v] : overall.items()) one[k] = v;
    ordered_json cats = ordered_json::object();
    for (const auto& [c, g] : t.per_category) cats[c] = group_json(g, t.metric);
    one["per_category"] = std::move(cats);
    tj[name] = std::move(one);
  }
  doc["tasks"] = std::move(tj);
  doc["overall"] = {{"items", total_items()}, {"accuracy", overall_accuracy()}};
  // Reserved: BERTScore needs a pretrained encoder and is not computed.
  doc["bertscore"] = nullptr;
  if (baseline) {
    ordered_json rel = ordered_json::object();
    for (const auto& [name, pct] : relative_to(*baseline)) rel[name] = pct;
    doc["relative_percent"] = std::move(rel);
  }
  return doc.dump(2);
}

EvalReport parse_eval_report(std::string_view json_text) {
  const json doc = json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("tasks")) {
    throw ParseError("not an evaluation report");
  }
  EvalReport report;
  try {
    for (const auto& [name, tj] : doc["tasks"].items()) {
      TaskReport t;
      t.metric = tj.value("metric", std::string("accuracy"));
      t.overall = group_from_json(tj, t.metric);
      if (tj.contains("per_category")) {
        for (const auto& [c, g] : tj["per_category"].items()) t.per_category[c] = group_from_json(g, t.metric);
      }
      report.tasks[name] = std::move(t);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed evaluation report: ") + e.what());
  }
  return report;
}

namespace {

enum class Verdict { Correct, Wrong, Unparseable };

// Shared bookkeeping for every task. `judge` fills in one item's GroupScore
// given its output text; items for which `eligible` is false are ignored.
template <typename Eligible, typename Judge>
EvalReport score_task(const std::string& task, const std::string& metric,
                      const std::vector<QAItem>& items, const std::vector<ModelOutput>& outputs,
                      const CategoryMap* category_map, Eligible eligible, Judge judge) {
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < items.size(); ++i) index.emplace(items[i].qa_id, i);
  std::unordered_map<std::string_view, const ModelOutput*> by_id;
  for (const auto& o : outputs) {
    if (!index.count(o.qa_id)) throw UnknownQaIdError("output references unknown qa_id " + o.qa_id);
    if (!by_id.emplace(o.qa_id, &o).second) {
      spdlog::warn("duplicate output for {}; keeping the first", o.qa_id);
    }
  }

  EvalReport report;
  TaskReport& t = report.tasks[task];
  t.metric = metric;
  for (const auto& item : items) {
    if (!eligible(item)) continue;
    GroupScore g;
    g.total = 1;
    auto it = by_id.find(item.qa_id);
    if (it == by_id.end()) {
      g.missing = 1;
    } else {
      judge(item, it->second->text, g);
    }
    t.overall += g;
    if (category_map) {
      auto c = category_map->find(item.qa_id);
      t.per_category[c == category_map->end() ? "uncategorized" : c->second] += g;
    }
  }
  return report;
}

void apply(Verdict v, GroupScore& g) {
  if (v == Verdict::Correct) g.correct = 1;
  if (v == Verdict::Unparseable) g.unparseable = 1;
}

}  // namespace

EvalReport score_mcq(const std::vector<QAItem>& items, const std::vector<ModelOutput>& outputs,
                     const CategoryMap* category_map) {
  return score_task(
      "mcq", "accuracy", items, outputs, category_map,
      [](const QAItem& i) { return i.format == QAFormat::MultipleChoice; },
      [](const QAItem& item, const std::string& out, GroupScore& g) {
        const auto idx = extract_mcq_answer(out, item.options);
        apply(!idx ? Verdict::Unparseable : idx == item.answer_index ? Verdict::Correct : Verdict::Wrong, g);
      });
}

EvalReport score_binary(const std::vector<QAItem>& items, const std::vector<ModelOutput>& outputs,
                        const CategoryMap* category_map) {
  return score_task(
      "binary", "accuracy", items, outputs, category_map,
      [](const QAItem& i) { return i.format == QAFormat::Binary; },
      [](const QAItem& item, const std::string& out, GroupScore& g) {
        const auto yn = extract_yes_no(out);
        const auto truth = normalize_yes_no(item.answer);
        if (!yn) return apply(Verdict::Unparseable, g);
        apply(truth && (*yn ? "Yes" : "No") == *truth ? Verdict::Correct : Verdict::Wrong, g);
      });
}

EmbeddingVector TrigramEmbedder::embed_one(std::string_view text, std::size_t dim) {
  if (dim == 0) throw DimMismatchError("embedding dim must be positive");
  EmbeddingVector v;
  v.values.assign(dim, 0.0);
  const std::string s = " " + text::fold_case(text::trim(text)) + " ";
  for (std::size_t i = 0; i + 3 <= s.size(); ++i) {
    v.values[fnv1a64(std::string_view(s).substr(i, 3)) % dim] += 1.0;
  }
  double norm = 0.0;
  for (double x : v.values) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0) {
    for (double& x : v.values) x /= norm;
  }
  return v;
}

std::vector<EmbeddingVector> TrigramEmbedder::embed(const std::vector<std::string>& texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_one(t, dim_));
  return out;
}

std::vector<EmbeddingVector> HttpEmbedder::embed(const std::vector<std::string>& texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (std::size_t begin = 0; begin < texts.size(); begin += batch_size_) {
    const std::size_t end = std::min(texts.size(), begin + batch_size_);
    json req{{"texts", json::array()}};
    for (std::size_t i = begin; i < end; ++i) req["texts"].push_back(texts[i]);
    std::string body;
    try {
      body = post_json(endpoint_, req.dump(-1, ' ', false, json::error_handler_t::replace));
    } catch (const ServiceError& e) {
      throw EmbedderError(std::string("embedding request failed: ") + e.what());
    }
    const json doc = json::parse(body, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("embeddings") || !doc["embeddings"].is_array()) {
      throw EmbedderError("embedding response lacks an \"embeddings\" array");
    }
    const auto& arr = doc["embeddings"];
    if (arr.size() != end - begin) {
      throw EmbedderError("embedding service returned " + std::to_string(arr.size()) + " vectors for " +
                          std::to_string(end - begin) + " texts");
    }
    for (const auto& row : arr) {
      EmbeddingVector v;
      try {
        v.values = row.get<std::vector<double>>();
      } catch (const json::exception&) {
        throw EmbedderError("embedding vector is not a list of numbers");
      }
      out.push_back(std::move(v));
    }
  }
  return out;
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() == 0 || b.dim() == 0) throw DimMismatchError("empty embedding vector");
  if (a.dim() != b.dim()) {
    throw DimMismatchError("embedding dims differ: " + std::to_string(a.dim()) + " vs " +
                           std::to_string(b.dim()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<EmbeddingVector> LabelMatcher::labels(const std::vector<std::string>& candidates) {
  std::vector<std::string> missing;
  {
    std::lock_guard lock(mu_);
    for (const auto& c : candidates) {
      if (!cache_.count(c) && std::find(missing.begin(), missing.end(), c) == missing.end()) {
        missing.push_back(c);
      }
    }
  }
  if (!missing.empty()) {
    auto vecs = embedder_.embed(missing);
    if (vecs.size() != missing.size()) throw EmbedderError("embedder returned the wrong number of vectors");
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < missing.size(); ++i) cache_.emplace(missing[i], std::move(vecs[i]));
  }
  std::vector<EmbeddingVector> out;
  std::lock_guard lock(mu_);
  for (const auto& c : candidates) out.push_back(cache_.at(c));
  return out;
}

namespace {

std::size_t argmax_cosine(const EmbeddingVector& query, const std::vector<EmbeddingVector>& labels) {
  std::size_t best = 0;
  double best_sim = -2.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double s = cosine_similarity(query, labels[i]);
    if (s > best_sim) {
      best_sim = s;
      best = i;
    }
  }
  return best;
}

}  // namespace

std::size_t LabelMatcher::match_index(std::string_view output_text,
                                      const std::vector<std::string>& candidates) {
  if (candidates.size() < 2) throw Error("label matching needs at least two candidates");
  const auto label_vecs = labels(candidates);
  auto q = embedder_.embed({std::string(output_text)});
  if (q.size() != 1) throw EmbedderError("embedder returned the wrong number of vectors");
  return argmax_cosine(q[0], label_vecs);
}

std::string LabelMatcher::match(std::string_view output_text, const std::vector<std::string>& candidates) {
  return candidates[match_index(output_text, candidates)];
}

std::string match_label_by_similarity(std::string_view output_text,
                                      const std::vector<std::string>& candidates, Embedder& embedder) {
  LabelMatcher matcher(embedder);
  return matcher.match(output_text, candidates);
}

EvalReport score_classification(const std::vector<QAItem>& items, const std::vector<ModelOutput>& outputs,
                                LabelMatcher& matcher, std::vector<std::string> candidates,
                                const CategoryMap* category_map) {
  if (candidates.empty()) {
    for (const auto& item : items) {
      if (std::find(candidates.begin(), candidates.end(), item.answer) == candidates.end()) {
        candidates.push_back(item.answer);
      }
    }
  }
  return score_task(
      "classification", "accuracy", items, outputs, category_map, [](const QAItem&) { return true; },
      [&](const QAItem& item, const std::string& out, GroupScore& g) {
        const std::string chosen = matcher.match(out, candidates);
        apply(text::fold_case(chosen) == text::fold_case(item.answer) ? Verdict::Correct : Verdict::Wrong, g);
      });
}

std::vector<std::string> meteor_tokens(std::string_view s) {
  std::string cleaned;
  cleaned.reserve(s.size());
  for (char c : text::fold_case(s)) {
    if (std::ispunct(static_cast<unsigned char>(c))) continue;
    cleaned.push_back(c);
  }
  return text::split_whitespace(cleaned);
}

namespace {

// Branch-and-bound over one-to-one alignments that reach the maximum match
// count, minimising chunks.
class ChunkSearch {
 public:
  ChunkSearch(const std::vector<int>& cand, const std::vector<std::vector<std::size_t>>& positions,
              std::vector<int> skips, std::uint64_t budget)
      : cand_(cand), positions_(positions), skips_(std::move(skips)), budget_(budget) {
    std::size_t ref_len = 0;
    for (const auto& p : positions_) {
      for (std::size_t j : p) ref_len = std::max(ref_len, j + 1);
    }
    used_.assign(ref_len, false);
  }

  std::size_t run() {
    dfs(0, -1, 0);
    return best_;
  }
  bool exhausted() const { return nodes_ > budget_; }

 private:
  void dfs(std::size_t i, long prev, std::size_t chunks) {
    if (chunks >= best_) return;
    if (++nodes_ > budget_ && best_ != kNone) return;
    if (i == cand_.size()) {
      best_ = chunks;
      return;
    }
    const int t = cand_[i];
    if (t < 0) return dfs(i + 1, -1, chunks);
    const auto& pos = positions_[static_cast<std::size_t>(t)];
    // Extending the current chunk first finds a good bound quickly.
    if (prev >= 0) {
      const auto next = static_cast<std::size_t>(prev + 1);
      if (next < used_.size() && !used_[next] && std::binary_search(pos.begin(), pos.end(), next)) {
        used_[next] = true;
        dfs(i + 1, static_cast<long>(next), chunks);
        used_[next] = false;
      }
    }
    for (std::size_t j : pos) {
      if (used_[j] || (prev >= 0 && j == static_cast<std::size_t>(prev + 1))) continue;
      used_[j] = true;
      dfs(i + 1, static_cast<long>(j), chunks + 1);
      used_[j] = false;
    }
    if (skips_[static_cast<std::size_t>(t)] > 0) {
      --skips_[static_cast<std::size_t>(t)];
      dfs(i + 1, -1, chunks);
      ++skips_[static_cast<std::size_t>(t)];
    }
  }

  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  const std::vector<int>& cand_;
  const std::vector<std::vector<std::size_t>>& positions_;
  std::vector<int> skips_;
  std::vector<bool> used_;
  std::uint64_t budget_;
  std::uint64_t nodes_ = 0;
  std::size_t best_ = kNone;
};

}  // namespace

MeteorBreakdown meteor_exact(std::string_view candidate, std::string_view reference,
                             std::uint64_t node_budget) {
  MeteorBreakdown out;
  const auto c = meteor_tokens(candidate);
  const auto r = meteor_tokens(reference);
  if (c.empty() || r.empty()) return out;

  std::map<std::string, int> type_of;
  std::vector<std::vector<std::size_t>> positions;
  for (std::size_t j = 0; j < r.size(); ++j) {
    auto [it, fresh] = type_of.emplace(r[j], static_cast<int>(positions.size()));
    if (fresh) positions.emplace_back();
    positions[static_cast<std::size_t>(it->second)].push_back(j);
  }
  std::vector<int> cand(c.size(), -1);
  std::vector<int> cand_count(positions.size(), 0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (auto it = type_of.find(c[i]); it != type_of.end()) {
      cand[i] = it->second;
      ++cand_count[static_cast<std::size_t>(it->second)];
    }
  }
  std::vector<int> skips(positions.size(), 0);
  for (std::size_t t = 0; t < positions.size(); ++t) {
    const int ref_count = static_cast<int>(positions[t].size());
    out.matches += static_cast<std::size_t>(std::min(cand_count[t], ref_count));
    skips[t] = std::max(0, cand_count[t] - ref_count);
  }
  if (out.matches == 0) return out;

  ChunkSearch search(cand, positions, std::move(skips), node_budget);
  out.chunks = search.run();
  out.exact = !search.exhausted();

  const double m = static_cast<double>(out.matches);
  out.precision = m / static_cast<double>(c.size());
  out.recall = m / static_cast<double>(r.size());
  out.fmean = 10.0 * out.precision * out.recall / (out.recall + 9.0 * out.precision);
  out.penalty = 0.5 * std::pow(static_cast<double>(out.chunks) / m, 3.0);
  out.score = out.fmean * (1.0 - out.penalty);
  return out;
}

EvalReport score_captions(const std::vector<QAItem>& items, const std::vector<ModelOutput>& outputs,
                          const CategoryMap* category_map) {
  return score_task(
      "caption", "meteor_exact", items, outputs, category_map,
      [](const QAItem& i) { return i.format == QAFormat::Caption; },
      [](const QAItem& item, const std::string& out, GroupScore& g) {
        g.score_sum = meteor_exact(out, item.answer).score;
      });
}

EvalReport aggregate_report(const std::vector<EvalReport>& fragments) {
  EvalReport out;
  for (const auto& f : fragments) {
    for (const auto& [name, t] : f.tasks) {
      if (!out.tasks.emplace(name, t).second) throw OverlapError("task " + name + " appears in two fragments");
    }
  }
  return out;
}

}  // namespace musicqa
