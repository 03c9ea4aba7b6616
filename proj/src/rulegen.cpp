#include "musicqa/rulegen.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <json.hpp>
#include <set>

#include "musicqa/errors.hpp"
#include "musicqa/hashing.hpp"
#include "musicqa/parallel.hpp"
#include "musicqa/text.hpp"

namespace musicqa {

namespace {

constexpr QAFormat kRuleFormats[] = {QAFormat::OpenEnded, QAFormat::Binary,
                                     QAFormat::MultipleChoice};
// Separates the template draw from the content draw of one item.
constexpr std::uint64_t kTemplateStream = 0x74656d706c617465ULL;

int rule_slot(QAFormat f) {
  switch (f) {
    case QAFormat::OpenEnded: return 0;
    case QAFormat::Binary: return 1;
    case QAFormat::MultipleChoice: return 2;
    default: return -1;
  }
}

std::uint64_t item_seed(const ClipRecord& clip, ItemKey key) {
  return clip_rng_seed(key.global_seed, clip.audio_id, key.item_counter);
}

QAItem base_item(const ClipRecord& clip, QAFormat format, const OntologyNode& category,
                 const QuestionTemplate& t, ItemKey key) {
  QAItem item;
  item.qa_id = make_qa_id(clip.audio_id, format, t.template_id, key.item_counter, key.global_seed);
  item.audio_id = clip.audio_id;
  item.source = clip.source;
  item.format = format;
  item.category = text::fold_case(category.name);
  item.method = Method::Rule;
  item.template_id = t.template_id;
  item.seed = item_seed(clip, key);
  return item;
}

void require_format(const QuestionTemplate& t, QAFormat f) {
  if (t.format != f) {
    throw NoTemplateError("template " + t.template_id + " is " + std::string(to_string(t.format)) +
                          ", expected " + std::string(to_string(f)));
  }
}

}  // namespace

std::uint64_t clip_rng_seed(std::uint64_t global_seed, std::string_view audio_id,
                            std::uint64_t item_counter) {
  return hash_combine(hash_combine(mix64(global_seed), audio_id), item_counter);
}

std::string make_qa_id(std::string_view audio_id, QAFormat format, std::string_view template_id,
                       std::uint64_t item_counter, std::uint64_t global_seed) {
  std::uint64_t h = hash_combine(0x6d75736963716121ULL, audio_id);
  h = hash_combine(h, to_string(format));
  h = hash_combine(h, template_id);
  h = hash_combine(h, item_counter);
  h = hash_combine(h, global_seed);
  return hex64(h);
}

std::size_t DistractorPool::positive_count() const {
  return static_cast<std::size_t>(std::count_if(
      candidates.begin(), candidates.end(), [](const auto& c) { return c.weight > 0.0; }));
}

std::vector<std::string> sample_distractors(const DistractorPool& pool, std::size_t k, Rng& rng) {
  const auto& cs = pool.candidates;
  if (pool.positive_count() < k) {
    throw InsufficientPoolError("distractor pool has " + std::to_string(pool.positive_count()) +
                                " weighted candidates, need " + std::to_string(k));
  }
  std::vector<bool> taken(cs.size(), false);
  std::vector<std::string> out;
  out.reserve(k);
  for (std::size_t draw = 0; draw < k; ++draw) {
    double remaining = 0.0;
    for (std::size_t i = 0; i < cs.size(); ++i) {
      if (!taken[i] && cs[i].weight > 0.0) remaining += cs[i].weight;
    }
    const double u = rng.unit() * remaining;
    double acc = 0.0;
    std::size_t pick = cs.size();
    for (std::size_t i = 0; i < cs.size(); ++i) {
      if (taken[i] || cs[i].weight <= 0.0) continue;
      acc += cs[i].weight;
      pick = i;  // last eligible, in case rounding leaves u >= acc
      if (u < acc) break;
    }
    taken[pick] = true;
    out.push_back(cs[pick].name);
  }
  return out;
}

std::vector<std::string> sample_distractors(const DistractorPool& pool, std::size_t k,
                                            std::uint64_t seed) {
  Rng rng(seed);
  return sample_distractors(pool, k, rng);
}

QAItem generate_open_qa(const ClipRecord& clip, const OntologyNode& leaf,
                        const OntologyNode& category, const QuestionTemplate& t, ItemKey key) {
  require_format(t, QAFormat::OpenEnded);
  check_template_placeholders(t);
  QAItem item = base_item(clip, QAFormat::OpenEnded, category, t, key);
  item.question = render_template(t.text, {{"category", text::fold_case(category.name)}});
  item.answer = leaf.name;
  return item;
}

QAItem generate_binary_qa(const ClipRecord& clip, const OntologyNode& leaf,
                          const OntologyNode& category, const DistractorPool& pool,
                          const QuestionTemplate& t, ItemKey key, bool* fell_back) {
  require_format(t, QAFormat::Binary);
  check_template_placeholders(t);
  QAItem item = base_item(clip, QAFormat::Binary, category, t, key);
  Rng rng(item.seed);
  std::string asked = leaf.name;
  item.answer = "Yes";
  if (fell_back) *fell_back = false;
  if (!rng.coin()) {
    if (pool.positive_count() == 0) {
      spdlog::debug("empty negative pool for {} on {}; emitting positive item", leaf.id,
                    clip.audio_id);
      if (fell_back) *fell_back = true;
    } else {
      asked = sample_distractors(pool, 1, rng).front();
      item.answer = "No";
    }
  }
  item.question = render_template(
      t.text, {{"label", text::fold_case(asked)}, {"category", text::fold_case(category.name)}});
  return item;
}

QAItem generate_mcq(const ClipRecord& clip, const OntologyNode& leaf, const OntologyNode& category,
                    const DistractorPool& pool, const QuestionTemplate& t, std::size_t k_options,
                    ItemKey key) {
  require_format(t, QAFormat::MultipleChoice);
  check_template_placeholders(t);
  if (k_options < 2 || k_options > 26) {
    throw InsufficientPoolError("k_options must be in [2, 26]");
  }
  QAItem item = base_item(clip, QAFormat::MultipleChoice, category, t, key);
  const std::string stem = render_template(t.text, {{"category", text::fold_case(category.name)}});
  Rng rng(item.seed);
  item.options = sample_distractors(pool, k_options - 1, rng);
  item.options.push_back(leaf.name);
  rng.shuffle(item.options);
  const auto pos = std::find(item.options.begin(), item.options.end(), leaf.name);
  item.answer_index = static_cast<std::size_t>(pos - item.options.begin());
  item.answer = leaf.name;
  item.question = render_mcq_question(stem, item.options);
  return item;
}

std::uint32_t GenerationPlan::count(QAFormat f) const {
  switch (f) {
    case QAFormat::OpenEnded: return open;
    case QAFormat::Binary: return binary;
    case QAFormat::MultipleChoice: return mcq;
    default: return 0;
  }
}

void GenerationReport::merge(const GenerationReport& other) {
  clips += other.clips;
  for (std::size_t i = 0; i < emitted.size(); ++i) {
    emitted[i] += other.emitted[i];
    skipped_no_template[i] += other.skipped_no_template[i];
  }
  widened_pools += other.widened_pools;
  binary_fallbacks += other.binary_fallbacks;
  errors.insert(errors.end(), other.errors.begin(), other.errors.end());
}

std::string GenerationReport::to_json() const {
  nlohmann::ordered_json j;
  j["clips"] = clips;
  nlohmann::ordered_json em, sk;
  std::uint64_t total = 0;
  for (QAFormat f : kAllFormats) {
    em[std::string(to_string(f))] = emitted[static_cast<std::size_t>(f)];
    sk[std::string(to_string(f))] = skipped_no_template[static_cast<std::size_t>(f)];
    total += emitted[static_cast<std::size_t>(f)];
  }
  j["emitted"] = em;
  j["emitted_total"] = total;
  j["skipped_no_template"] = sk;
  j["widened_pools"] = widened_pools;
  j["binary_fallbacks"] = binary_fallbacks;
  j["error_count"] = errors.size();
  auto errs = nlohmann::ordered_json::array();
  for (const auto& e : errors) {
    errs.push_back({{"audio_id", e.audio_id},
                    {"leaf", e.leaf},
                    {"format", to_string(e.format)},
                    {"message", e.message}});
  }
  j["errors"] = std::move(errs);
  return j.dump(2);
}

RuleGenerator::RuleGenerator(const Ontology& ontology, std::string_view music_root,
                             const LabelFrequencyTable& freqs,
                             std::vector<QuestionTemplate> templates, GenerationPlan plan,
                             std::size_t mcq_options)
    : ontology_(ontology), templates_(std::move(templates)), plan_(plan), mcq_options_(mcq_options) {
  if (mcq_options_ < 2 || mcq_options_ > 26) {
    throw Error("mcq_options must be in [2, 26], got " + std::to_string(mcq_options_));
  }
  for (std::size_t i = 0; i < templates_.size(); ++i) {
    const auto& t = templates_[i];
    const int slot = rule_slot(t.format);
    if (slot < 0) continue;
    check_template_placeholders(t);
    by_category_[{slot, text::fold_case(t.category)}].push_back(i);
  }

  // Pools are name-deduplicated so MCQ options stay distinct even when two
  // ontology ids share a display name.
  auto make_pool = [&](const std::set<LabelId>& ids) {
    std::vector<DistractorCandidate> pool;
    std::set<std::string> names;
    for (const auto& id : ids) {
      const auto& n = ontology_.node(id);
      const double w = static_cast<double>(freqs.count(id));
      if (w <= 0.0 || !names.insert(text::fold_case(n.name)).second) continue;
      pool.push_back({id, n.name, w});
    }
    return pool;
  };

  const auto music_leaves = ontology_.leaf_labels(music_root);
  global_pool_ = make_pool(music_leaves);

  for (const auto& id : music_leaves) {
    LeafInfo info;
    info.node = &ontology_.node(id);
    const auto ancestors = ontology_.parent_categories(id);
    for (int slot = 0; slot < 3; ++slot) {
      for (const auto& a : ancestors) {
        const auto& anode = ontology_.node(a);
        auto it = by_category_.find({slot, text::fold_case(anode.name)});
        if (it != by_category_.end()) {
          info.category[slot] = &anode;
          info.templates[slot] = &it->second;
          break;
        }
      }
      // "*" templates apply to any leaf, using its nearest parent as category.
      if (!info.category[slot] && !ancestors.empty()) {
        auto it = by_category_.find({slot, "*"});
        if (it != by_category_.end()) {
          info.category[slot] = &ontology_.node(ancestors.front());
          info.templates[slot] = &it->second;
        }
      }
      if (const auto* cat = info.category[slot]; cat && !category_pools_.count(cat)) {
        std::set<LabelId> under;
        for (const auto& l : ontology_.leaf_labels(cat->id)) {
          if (music_leaves.count(l)) under.insert(l);
        }
        category_pools_.emplace(cat, make_pool(under));
      }
    }
    leaves_.emplace(id, info);
  }
}

DistractorPool RuleGenerator::pool_for(const ClipRecord& clip, const OntologyNode& answer,
                                       const OntologyNode& category, std::size_t needed,
                                       bool& widened) const {
  const std::string answer_key = text::fold_case(answer.name);
  auto filtered = [&](const std::vector<DistractorCandidate>& src) {
    DistractorPool pool;
    pool.candidates.reserve(src.size());
    for (const auto& c : src) {
      if (clip.labels.count(c.id) || text::fold_case(c.name) == answer_key) continue;
      pool.candidates.push_back(c);
    }
    return pool;
  };
  widened = false;
  auto it = category_pools_.find(&category);
  if (it != category_pools_.end()) {
    DistractorPool pool = filtered(it->second);
    if (pool.positive_count() >= needed) return pool;
  }
  widened = true;
  return filtered(global_pool_);
}

std::vector<QAItem> RuleGenerator::generate_for_clip(const ClipRecord& clip,
                                                     std::uint64_t global_seed,
                                                     GenerationReport& report) const {
  std::vector<QAItem> out;
  ++report.clips;
  std::uint64_t counter = 0;
  for (const auto& label : clip.labels) {
    auto leaf_it = leaves_.find(label);
    if (leaf_it == leaves_.end()) continue;
    const LeafInfo& info = leaf_it->second;
    for (QAFormat format : kRuleFormats) {
      const int slot = rule_slot(format);
      const auto fi = static_cast<std::size_t>(format);
      for (std::uint32_t r = 0; r < plan_.count(format); ++r) {
        const ItemKey key{global_seed, counter++};
        if (!info.category[slot]) {
          ++report.skipped_no_template[fi];
          continue;
        }
        const OntologyNode& category = *info.category[slot];
        const auto& candidates = *info.templates[slot];
        Rng template_rng(hash_combine(item_seed(clip, key), kTemplateStream));
        const QuestionTemplate& t = templates_[candidates[template_rng.index(candidates.size())]];
        try {
          bool widened = false;
          switch (format) {
            case QAFormat::OpenEnded:
              out.push_back(generate_open_qa(clip, *info.node, category, t, key));
              break;
            case QAFormat::Binary: {
              const auto pool = pool_for(clip, *info.node, category, 1, widened);
              bool fell_back = false;
              out.push_back(generate_binary_qa(clip, *info.node, category, pool, t, key, &fell_back));
              if (fell_back) ++report.binary_fallbacks;
              break;
            }
            case QAFormat::MultipleChoice: {
              const auto pool = pool_for(clip, *info.node, category, mcq_options_ - 1, widened);
              out.push_back(generate_mcq(clip, *info.node, category, pool, t, mcq_options_, key));
              break;
            }
            default:
              break;
          }
          if (widened) ++report.widened_pools;
          ++report.emitted[fi];
        } catch (const Error& e) {
          report.errors.push_back({clip.audio_id, label, format, e.what()});
        }
      }
    }
  }
  return out;
}

std::vector<QAItem> RuleGenerator::generate(const std::vector<ClipRecord>& clips,
                                            std::uint64_t global_seed, std::size_t workers,
                                            GenerationReport& report) const {
  // One slot per block of clips, merged in clip order afterwards, so both the
  // items and the report are independent of scheduling.
  constexpr std::size_t kBlock = 64;
  const std::size_t blocks = (clips.size() + kBlock - 1) / kBlock;
  std::vector<std::vector<QAItem>> block_items(blocks);
  std::vector<GenerationReport> block_reports(blocks);
  parallel_for(
      blocks, workers,
      [&](std::size_t b) {
        const std::size_t end = std::min(clips.size(), (b + 1) * kBlock);
        for (std::size_t i = b * kBlock; i < end; ++i) {
          auto items = generate_for_clip(clips[i], global_seed, block_reports[b]);
          std::move(items.begin(), items.end(), std::back_inserter(block_items[b]));
        }
      },
      1);

  std::size_t total = 0;
  for (const auto& v : block_items) total += v.size();
  std::vector<QAItem> all;
  all.reserve(total);
  for (std::size_t b = 0; b < blocks; ++b) {
    std::move(block_items[b].begin(), block_items[b].end(), std::back_inserter(all));
    report.merge(block_reports[b]);
  }
  sort_items(all);
  return all;
}

std::vector<QAItem> generate_for_clip(const ClipRecord& clip, const RuleGenerator& generator,
                                      std::uint64_t global_seed, GenerationReport& report) {
  return generator.generate_for_clip(clip, global_seed, report);
}

void sort_items(std::vector<QAItem>& items) {
  std::sort(items.begin(), items.end(), [](const QAItem& a, const QAItem& b) {
    if (a.qa_id != b.qa_id) return a.qa_id < b.qa_id;
    return to_json_line(a) < to_json_line(b);
  });
}

}  // namespace musicqa
