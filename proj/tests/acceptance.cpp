// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "musicqa/assembly.hpp"
#include "musicqa/cli.hpp"
#include "musicqa/corpus.hpp"
#include "musicqa/errors.hpp"
#include "musicqa/eval.hpp"
#include "musicqa/fileio.hpp"
#include "musicqa/hashing.hpp"
#include "musicqa/llm_client.hpp"
#include "musicqa/llmgen.hpp"
#include "musicqa/rulegen.hpp"
#include "support/mock_server.hpp"
#include "support/oracles.hpp"
#include "support/stats.hpp"
#include "support/synthetic.hpp"

using namespace musicqa;
using musicqa::testing::MockReply;
using musicqa::testing::MockServer;
using musicqa::testing::test_data;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int n, const char* title, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s  criterion %2d  %s: %s\n", o.pass ? "PASS" : "FAIL", n, title, o.detail.c_str());
  std::fflush(stdout);
}

double secs_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("musicqa_accept_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ClipRecord captioned_clip(const std::string& id) {
  ClipRecord c;
  c.audio_id = id;
  c.source = Source::MusicCaps;
  c.caption = "A bright brass band plays a fast march with snare rolls.";
  return c;
}

// -------------------------------------------------------------------------- 1

Outcome filtering_fidelity() {
  const auto ontology_text = read_file(test_data("ontology_music.json"));
  const auto manifest_text = read_file(test_data("manifest_50.jsonl"));
  std::vector<std::string> expected;
  std::istringstream in(read_file(test_data("manifest_50.expected")));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) expected.push_back(line);
  }
  const auto t0 = Clock::now();
  const auto o = parse_ontology(ontology_text);
  const auto clips = load_manifest(manifest_text);
  const auto kept = filter_music_clips(clips, o, "/m/04rlf");
  const double secs = secs_since(t0);
  std::vector<std::string> ids;
  for (const auto& c : kept) ids.push_back(c.audio_id);
  const bool ok = clips.size() == 50 && ids == expected && secs < 1.0;
  return {ok, fmt("kept %zu/%zu clips, %s hand labels, %.4f s (limit 1 s)", kept.size(), clips.size(),
                  ids == expected ? "matches" : "DIFFERS FROM", secs)};
}

// -------------------------------------------------------------------------- 2

Outcome distractor_distribution() {
  const auto t0 = Clock::now();
  struct Case {
    std::vector<double> weights;
    std::size_t k;
  };
  const std::vector<Case> cases = {{{50, 20, 15, 10, 4, 1}, 3}, {{1, 1, 1, 1, 1, 1}, 3}, {{9, 3, 1}, 2}, {{7, 2, 2, 1, 0.5}, 3}};
  const int draws = 100000;
  double worst = 1.0;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const auto& c = cases[ci];
    DistractorPool pool;
    for (std::size_t i = 0; i < c.weights.size(); ++i) {
      pool.candidates.push_back({"/x/" + std::to_string(i), std::string(1, char('a' + i)), c.weights[i]});
    }
    std::map<std::vector<std::size_t>, std::uint64_t> seen;
    for (int d = 0; d < draws; ++d) {
      const auto names = sample_distractors(pool, c.k, clip_rng_seed(1000 + ci, "pool", static_cast<std::uint64_t>(d)));
      std::vector<std::size_t> seq;
      for (const auto& n : names) seq.push_back(static_cast<std::size_t>(n[0] - 'a'));
      ++seen[seq];
    }
    std::vector<std::uint64_t> observed;
    std::vector<double> probs;
    std::uint64_t accounted = 0;
    for (const auto& [seq, p] : musicqa::testing::sequence_probabilities(c.weights, c.k)) {
      observed.push_back(seen[seq]);
      accounted += seen[seq];
      probs.push_back(p);
    }
    if (accounted != static_cast<std::uint64_t>(draws)) return {false, "draws outside the oracle's support"};
    worst = std::min(worst, musicqa::testing::chi_square_p(observed, probs));
  }
  const double secs = secs_since(t0);
  return {worst > 0.01 && secs < 30.0,
          fmt("%zu pools x %d draws, min chi-square p = %.4f (need > 0.01), %.2f s (limit 30 s)", cases.size(),
              draws, worst, secs)};
}

// -------------------------------------------------------------------------- 3

Outcome mcq_invariants() {
  auto corpus = musicqa::testing::make_synthetic_corpus(25000, 31);
  const auto& o = *corpus.ontology;
  const auto clips = filter_music_clips(corpus.clips, o, corpus.music_root);
  const auto freqs = compute_label_frequencies(clips, o, corpus.music_root);
  const RuleGenerator gen(o, corpus.music_root, freqs, corpus.templates, GenerationPlan{0, 0, 1}, 4);
  GenerationReport rep;
  const auto items = gen.generate(clips, 77, std::max(1u, std::thread::hardware_concurrency()), rep);

  std::map<std::string, const ClipRecord*> by_id;
  for (const auto& c : clips) by_id[c.audio_id] = &c;
  std::uint64_t mcqs = 0, violations = 0;
  std::vector<std::uint64_t> letters(4, 0);
  for (const auto& it : items) {
    if (it.format != QAFormat::MultipleChoice) continue;
    ++mcqs;
    bool bad = it.options.size() != 4 || !it.answer_index || *it.answer_index >= it.options.size() ||
               it.options[*it.answer_index] != it.answer;
    bad = bad || std::count(it.options.begin(), it.options.end(), it.answer) != 1;
    bad = bad || std::set<std::string>(it.options.begin(), it.options.end()).size() != it.options.size();
    std::set<std::string> clip_names;
    for (const auto& id : by_id.at(it.audio_id)->labels) clip_names.insert(o.node(id).name);
    for (std::size_t i = 0; i < it.options.size(); ++i) {
      if (it.answer_index && i != *it.answer_index && clip_names.count(it.options[i])) bad = true;
    }
    if (bad) ++violations;
    if (it.answer_index && *it.answer_index < 4) ++letters[*it.answer_index];
  }
  double worst = 0.0;
  std::string dist;
  for (std::size_t i = 0; i < 4; ++i) {
    const double f = mcqs ? static_cast<double>(letters[i]) / mcqs : 0.0;
    worst = std::max(worst, std::abs(f - 0.25));
    dist += fmt("%c=%.4f ", char('A' + i), f);
  }
  return {mcqs >= 40000 && violations == 0 && worst <= 0.015,
          fmt("%llu MCQs, %llu violations, letters %smax |f-0.25| = %.4f (limit 0.015)",
              static_cast<unsigned long long>(mcqs), static_cast<unsigned long long>(violations), dist.c_str(),
              worst)};
}

// -------------------------------------------------------------------------- 4

Outcome determinism() {
  auto corpus = musicqa::testing::make_synthetic_corpus(1000, 4);
  const auto& o = *corpus.ontology;
  const auto clips = filter_music_clips(corpus.clips, o, corpus.music_root);
  const auto freqs = compute_label_frequencies(clips, o, corpus.music_root);
  const RuleGenerator gen(o, corpus.music_root, freqs, corpus.templates);
  GenerationReport r1, r8;
  const auto one = write_qa_jsonl(gen.generate(clips, 2024, 1, r1));
  const auto eight = write_qa_jsonl(gen.generate(clips, 2024, 8, r8));
  const auto d1 = sha256_hex(one), d8 = sha256_hex(eight);
  return {d1 == d8 && !one.empty(),
          fmt("%zu clips, 1 worker sha256 %.16s..., 8 workers sha256 %.16s... (%s)", corpus.clips.size(),
              d1.c_str(), d8.c_str(), d1 == d8 ? "identical" : "DIFFERENT")};
}

// ------------------------------------------------------------------------ 5, 6

// Rule items, imported captions and LLM items (through the client and the
// mock service) for a synthetic corpus, deduplicated.
std::vector<QAItem> synthetic_pipeline(std::uint64_t seed) {
  auto corpus = musicqa::testing::make_synthetic_corpus(4000, seed);
  const auto& o = *corpus.ontology;
  const auto clips = filter_music_clips(corpus.clips, o, corpus.music_root);
  const auto freqs = compute_label_frequencies(clips, o, corpus.music_root);
  const RuleGenerator gen(o, corpus.music_root, freqs, corpus.templates);
  GenerationReport rep;
  auto items = gen.generate(clips, seed, 2, rep);

  std::map<Source, std::string> captions;
  for (const auto& c : clips) {
    if (c.source == Source::AudioSet) continue;
    json line = {{"audio_id", c.audio_id}, {"caption", "Synthetic description of " + c.audio_id + "."}};
    captions[c.source] += line.dump() + "\n";
  }
  for (const auto& [src, text] : captions) {
    auto part = import_external(text, src, seed);
    items.insert(items.end(), part.begin(), part.end());
  }

  MockServer server;
  server.set_chat_content([](const std::string&) {
    return std::string(R"([{"question":"What is the tempo like?","format":"open","answer":"Brisk.","dimension":"tempo"},)"
                       R"({"question":"Is there a melody?","format":"binary","answer":"Yes","dimension":"melody"},)"
                       R"({"question":"Which mood fits?","format":"mcq","options":["Sad","Joyful","Tense","Calm"],"answer":"Joyful","dimension":"mood"}])");
  });
  LlmEndpoint e;
  e.http.base_url = server.base_url();
  e.http.api_key_env = "";
  LlmClient client(e);
  const auto examples = parse_dimension_examples(read_file(musicqa::testing::repo_file("data/dimension_examples.v1.json")));
  std::size_t n = 0;
  for (const auto& c : clips) {
    if (c.source != Source::MusicCaps || ++n > 100) continue;
    ClipRecord withcap = c;
    withcap.caption = "Synthetic description of " + c.audio_id + ".";
    const auto spec = build_prompt(withcap, examples, plan_requests(LlmPlan{}, c.audio_id, seed));
    auto batch = parse_llm_output(call_llm(spec, client), withcap, seed);
    items.insert(items.end(), batch.parsed.begin(), batch.parsed.end());
  }
  return deduplicate(std::move(items));
}

bool additive(const json& doc, std::string& why) {
  const std::vector<std::string> tasks = {"Captioning", "QA", "MCQ", "Binary"};
  std::map<std::string, std::uint64_t> col;
  std::uint64_t grand = 0, audios = 0;
  const auto& rows = doc["rows"];
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    std::uint64_t sum = 0;
    for (const auto& t : tasks) {
      sum += rows[i][t].get<std::uint64_t>();
      col[t] += rows[i][t].get<std::uint64_t>();
    }
    if (sum != rows[i]["Total"].get<std::uint64_t>()) {
      why = "row " + rows[i]["source"].get<std::string>() + " total";
      return false;
    }
    grand += sum;
    audios += rows[i]["Audios"].get<std::uint64_t>();
  }
  const auto& total = rows.back();
  for (const auto& t : tasks) {
    if (total[t].get<std::uint64_t>() != col[t]) {
      why = "column " + t;
      return false;
    }
  }
  if (total["Total"].get<std::uint64_t>() != grand) {
    why = "grand total";
    return false;
  }
  if (total["Audios"].get<std::uint64_t>() != audios) {
    why = "audio total";
    return false;
  }
  return true;
}

Outcome table_structure(const std::vector<QAItem>& items) {
  const auto st = compute_stats(items);
  const json doc = json::parse(st.to_json());
  const bool columns = doc["columns"] == json({"Audios", "Captioning", "QA", "MCQ", "Binary", "Total"});
  std::vector<std::string> names;
  for (const auto& r : doc["rows"]) names.push_back(r["source"]);
  const bool rows = names == std::vector<std::string>{"MusicCaps", "MagnaTagATune", "FMA", "AudioSet", "Total"};
  std::string why;
  const bool add = additive(doc, why);

  // Splits partition the counts.
  const auto split = split_by_audio(items, {}, 5);
  std::map<Split, std::vector<QAItem>> parts;
  for (const auto& it : items) parts[split.split_of.at(it.audio_id)].push_back(it);
  const bool partition =
      compute_stats(parts[Split::Train]) + compute_stats(parts[Split::Val]) + compute_stats(parts[Split::Test]) == st;

  // MusicCaps row: 13k + 42k + 30k + 13k = 98k over 2.2k clips.
  std::vector<QAItem> mc;
  auto add_n = [&](QAFormat f, int n) {
    for (int i = 0; i < n; ++i) {
      QAItem it;
      it.qa_id = hex64(mc.size());
      it.audio_id = "mc" + std::to_string(i % 2200);
      it.source = Source::MusicCaps;
      it.format = f;
      mc.push_back(std::move(it));
    }
  };
  add_n(QAFormat::Caption, 13000);
  add_n(QAFormat::OpenEnded, 42000);
  add_n(QAFormat::MultipleChoice, 30000);
  add_n(QAFormat::Binary, 13000);
  const json mcdoc = json::parse(compute_stats(mc).to_json());
  const auto& row = mcdoc["rows"][0];
  const bool mcrow = row["source"] == "MusicCaps" && row["Audios"] == 2200 && row["Captioning"] == 13000 &&
                     row["QA"] == 42000 && row["MCQ"] == 30000 && row["Binary"] == 13000 && row["Total"] == 98000 &&
                     mcdoc["rows"].back()["Total"] == 98000;

  return {columns && rows && add && partition && mcrow,
          fmt("%zu items: columns %s, rows %s, additivity %s%s, split partition %s, MusicCaps row "
              "13000+42000+30000+13000=%llu over %llu audios (%s)",
              items.size(), columns ? "ok" : "WRONG", rows ? "ok" : "WRONG", add ? "exact" : "BROKEN at ",
              why.c_str(), partition ? "exact" : "BROKEN", row["Total"].get<unsigned long long>(),
              row["Audios"].get<unsigned long long>(), mcrow ? "ok" : "WRONG")};
}

json cli_stats(const std::vector<std::string>& extra, const fs::path& dataset) {
  std::vector<std::string> args = {"musicqa", "stats", "--dataset", dataset.string()};
  args.insert(args.end(), extra.begin(), extra.end());
  std::ostringstream out, err;
  if (run_cli(args, out, err) != kExitOk) throw std::runtime_error("stats failed: " + out.str());
  return json::parse(out.str())["stats"];
}

Outcome format_ablation(const std::vector<QAItem>& items) {
  const auto dir = scratch("ablation");
  write_file_atomic(dir / "items.jsonl", write_qa_jsonl(items));
  {
    std::ostringstream out, err;
    const int rc = run_cli({"musicqa", "assemble", "--seed", "9", "--input", (dir / "items.jsonl").string(), "--out",
                            (dir / "ds").string()},
                           out, err);
    if (rc != kExitOk) return {false, "assemble failed: " + out.str()};
  }
  const json full = cli_stats({}, dir / "ds");
  const std::map<std::string, std::string> column = {
      {"open", "QA"}, {"binary", "Binary"}, {"mcq", "MCQ"}, {"caption", "Captioning"}};
  const std::vector<std::string> all = {"open", "binary", "mcq", "caption"};
  std::string detail;
  bool ok = true;
  for (const auto& dropped : all) {
    std::vector<std::string> args;
    for (const auto& f : all) {
      if (f != dropped) {
        args.push_back("--format-filter");
        args.push_back(f);
      }
    }
    const json w = cli_stats(args, dir / "ds");
    const json d = cli_stats({"--drop-format", dropped}, dir / "ds");
    bool this_ok = w == d && w["rows"].size() == full["rows"].size();
    std::uint64_t removed = 0;
    for (std::size_t i = 0; this_ok && i < w["rows"].size(); ++i) {
      for (const auto& [f, col] : column) {
        const auto got = w["rows"][i][col].get<std::uint64_t>();
        const auto want = f == dropped ? 0 : full["rows"][i][col].get<std::uint64_t>();
        if (got != want) this_ok = false;
      }
    }
    removed = full["rows"].back()[column.at(dropped)].get<std::uint64_t>();
    ok = ok && this_ok && removed > 0;
    detail += fmt("w/o %s: %s (%llu removed); ", dropped.c_str(), this_ok ? "ok" : "WRONG",
                  static_cast<unsigned long long>(removed));
  }
  fs::remove_all(dir);
  return {ok, detail + "other task columns unchanged"};
}

// -------------------------------------------------------------------------- 7

Outcome eval_correctness() {
  const auto items = read_qa_jsonl(read_file(test_data("eval_mcq_items.jsonl")));
  const auto outputs = read_model_outputs(read_file(test_data("eval_mcq_outputs.jsonl")));
  const double fixture = score_mcq(items, outputs).tasks.at("mcq").value();
  // Hand-scored: 13 of 20 correct.
  const bool fix_ok = fixture == 13.0 / 20.0;

  std::mt19937_64 gen(2718);
  std::vector<QAItem> rnd;
  std::vector<ModelOutput> outs;
  for (int i = 0; i < 10000; ++i) {
    QAItem it;
    it.qa_id = "r" + std::to_string(i);
    it.audio_id = "a" + std::to_string(i);
    it.format = QAFormat::MultipleChoice;
    it.options = {"alpha", "beta", "gamma", "delta"};
    it.answer_index = gen() % 4;
    it.answer = it.options[*it.answer_index];
    it.question = render_mcq_question("Which?", it.options);
    rnd.push_back(it);
    outs.push_back({it.qa_id, std::string(1, char('A' + gen() % 4))});
  }
  const double random_acc = score_mcq(rnd, outs).tasks.at("mcq").value();
  const bool rnd_ok = std::abs(random_acc - 0.25) <= 0.015;

  const std::string rel = fmt("%.1f", relative_percent(58.6, 71.4));
  const bool rel_ok = rel == "82.1";
  return {fix_ok && rnd_ok && rel_ok,
          fmt("fixture %.4f (hand-scored 0.6500), random 4-option %.4f (0.25 +/- 0.015), 58.6 vs 71.4 -> %s%%",
              fixture, random_acc, rel.c_str())};
}

// -------------------------------------------------------------------------- 8

Outcome meteor_cases() {
  const double one = meteor_exact("guitar", "guitar").score;
  const double cat = meteor_exact("the cat sat", "the cat sat").score;
  const double none = meteor_exact("piano ballad", "heavy metal riff").score;
  // P = R = 1, one chunk over m matches: 1 - 0.5 / m^3.
  const bool ok = std::abs(one - 0.5) < 1e-9 && std::abs(cat - (1.0 - 0.5 / 27.0)) < 1e-9 && std::abs(none) < 1e-9;
  return {ok, fmt("one-word pair %.9f, \"the cat sat\" %.9f, disjoint %.9f (tolerance 1e-9)", one, cat, none)};
}

// -------------------------------------------------------------------------- 9

// Mutational fuzzing of parse_llm_output, in a child process so that a crash
// is reported rather than taking the suite down.
Outcome fuzz_parser(double seconds) {
  int fds[2];
  if (::pipe(fds) != 0) return {false, "pipe failed"};
  const pid_t pid = ::fork();
  if (pid < 0) return {false, "fork failed"};
  if (pid == 0) {
    ::close(fds[0]);
    const auto cases = json::parse(read_file(test_data("llm_responses.json")));
    std::vector<std::string> seeds;
    for (const auto& c : cases) seeds.push_back(c["raw"].get<std::string>());
    const auto clip = captioned_clip("fuzz");
    std::mt19937_64 gen(424242);
    const std::string alphabet = "[]{}\",:\\ \n\tabcYesNo?ABCD0123456789`-.eE+truefalsnul";
    std::uint64_t iters = 0, bad = 0, parsed = 0;
    const auto t0 = Clock::now();
    while (secs_since(t0) < seconds) {
      for (int batch = 0; batch < 64; ++batch, ++iters) {
        std::string s;
        if (gen() % 8 == 0) {
          // Random token soup.
          const std::size_t len = gen() % 400;
          for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[gen() % alphabet.size()]);
        } else {
          s = seeds[gen() % seeds.size()];
          if (gen() % 4 == 0) s += seeds[gen() % seeds.size()];
          const int edits = 1 + static_cast<int>(gen() % 12);
          for (int e = 0; e < edits; ++e) {
            const std::size_t pos = s.empty() ? 0 : gen() % s.size();
            switch (gen() % 5) {
              case 0: if (!s.empty()) s.erase(pos, 1 + gen() % 8); break;
              case 1: s.insert(pos, 1, alphabet[gen() % alphabet.size()]); break;
              case 2: if (!s.empty()) s[pos] = static_cast<char>(gen() & 0xff); break;
              case 3: s.insert(pos, std::string(gen() % 200, gen() % 2 ? '[' : '{')); break;
              default: s.insert(pos, s.substr(gen() % (s.size() + 1), gen() % 40)); break;
            }
          }
        }
        const auto b = parse_llm_output(s, clip, gen(), gen() % 1000);
        parsed += b.parsed.size();
        for (const auto& item : b.parsed) {
          if (item.method != Method::Llm || !check_qa_item(item).empty()) ++bad;
        }
      }
    }
    const std::string msg = std::to_string(iters) + " " + std::to_string(bad) + " " + std::to_string(parsed);
    (void)!::write(fds[1], msg.data(), msg.size());
    ::close(fds[1]);
    std::_Exit(0);
  }
  ::close(fds[1]);
  std::string msg;
  char buf[128];
  for (ssize_t n; (n = ::read(fds[0], buf, sizeof buf)) > 0;) msg.append(buf, static_cast<std::size_t>(n));
  ::close(fds[0]);
  int status = 0;
  ::waitpid(pid, &status, 0);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    return {false, WIFSIGNALED(status) ? fmt("fuzzer crashed with signal %d", WTERMSIG(status))
                                       : std::string("fuzzer exited abnormally")};
  }
  unsigned long long iters = 0, bad = 0, parsed = 0;
  std::sscanf(msg.c_str(), "%llu %llu %llu", &iters, &bad, &parsed);
  return {iters > 0 && bad == 0, fmt("fuzz %.0f s: %llu inputs, 0 crashes, %llu items emitted, %llu invalid", seconds,
                                     iters, parsed, bad)};
}

LlmEndpoint mock_endpoint(const MockServer& s, const fs::path& cache) {
  LlmEndpoint e;
  e.http.base_url = s.base_url();
  e.http.api_key_env = "";
  e.http.timeout = std::chrono::milliseconds(5000);
  e.http.retry.initial_backoff = std::chrono::milliseconds(5);
  e.http.retry.max_backoff = std::chrono::milliseconds(20);
  e.cache_dir = cache;
  return e;
}

Outcome llm_contract(double fuzz_seconds) {
  const std::vector<ChatMessage> msgs = {{"system", "s"}, {"user", "describe"}};
  const auto dir = scratch("llm");
  std::string detail;
  bool ok = true;

  {
    MockServer server;
    server.set_chat_content([](const std::string&) { return std::string("[]"); });
    {
      LlmClient client(mock_endpoint(server, dir / "cache"));
      std::vector<std::thread> threads;
      for (int i = 0; i < 8; ++i) threads.emplace_back([&] { client.complete(msgs); });
      for (auto& t : threads) t.join();
      for (int i = 0; i < 8; ++i) client.complete(msgs);
    }
    LlmClient fresh(mock_endpoint(server, dir / "cache"));
    fresh.complete(msgs);
    const bool c = server.chat_requests() == 1 && fresh.network_requests() == 0;
    ok = ok && c;
    detail += fmt("17 identical calls -> %llu request(s); ", static_cast<unsigned long long>(server.chat_requests()));
  }
  {
    MockServer server;
    server.script({{429, "{}", {}, {}}, {429, "{}", {{"Retry-After", "0"}}, {}}});
    server.set_chat_content([](const std::string&) { return std::string("ok"); });
    LlmClient client(mock_endpoint(server, {}));
    const auto text = client.complete(msgs);
    const bool c = text == "ok" && client.network_requests() == 3;
    ok = ok && c;
    detail += fmt("429,429,200 -> %s after %llu attempts; ", c ? "success" : "FAILED",
                  static_cast<unsigned long long>(client.network_requests()));
  }
  {
    MockServer server;
    server.script({{401, "{}", {}, {}}});
    LlmClient client(mock_endpoint(server, {}));
    bool auth = false;
    try {
      client.complete(msgs);
    } catch (const AuthError&) {
      auth = true;
    }
    const bool c = auth && server.chat_requests() == 1;
    ok = ok && c;
    detail += fmt("401 -> %s after %llu attempt(s); ", auth ? "AuthError" : "NO ERROR",
                  static_cast<unsigned long long>(server.chat_requests()));
  }
  fs::remove_all(dir);
  const auto fuzz = fuzz_parser(fuzz_seconds);
  return {ok && fuzz.pass, detail + fuzz.detail};
}

// ------------------------------------------------------------------------- 10

Outcome split_integrity() {
  const SplitRatios ratios{0.8, 0.1, 0.1};
  const std::uint64_t seed = 606;
  std::vector<QAItem> items;
  auto add_ids = [&](std::size_t from, std::size_t to) {
    for (std::size_t i = from; i < to; ++i) {
      // Two items per clip so leakage would be visible.
      for (int k = 0; k < 2; ++k) {
        QAItem it;
        it.qa_id = hex64(hash_combine(i, static_cast<std::uint64_t>(k)));
        it.audio_id = "clip_" + std::to_string(i);
        items.push_back(std::move(it));
      }
    }
  };
  add_ids(0, 100000);
  const auto before = split_by_audio(items, ratios, seed);

  // Leakage: group item positions by assigned split and look for shared ids.
  std::map<Split, std::set<std::string>> members;
  for (const auto& it : items) members[before.split_of.at(it.audio_id)].insert(it.audio_id);
  std::size_t leaked = 0;
  for (const auto& id : members[Split::Train]) leaked += members[Split::Val].count(id) + members[Split::Test].count(id);
  for (const auto& id : members[Split::Val]) leaked += members[Split::Test].count(id);

  const double n = static_cast<double>(before.split_of.size());
  const double ft = members[Split::Train].size() / n, fv = members[Split::Val].size() / n,
               fs_ = members[Split::Test].size() / n;
  const bool fractions = std::abs(ft - 0.8) <= 0.005 && std::abs(fv - 0.1) <= 0.005 && std::abs(fs_ - 0.1) <= 0.005;

  add_ids(100000, 110000);
  const auto after = split_by_audio(items, ratios, seed);
  std::size_t moved = 0;
  for (const auto& [id, s] : before.split_of) moved += after.split_of.at(id) != s;

  return {leaked == 0 && fractions && moved == 0 && n == 100000,
          fmt("%.0f ids: %zu cross-split, fractions %.4f/%.4f/%.4f (+/- 0.005), +10k ids moved %zu existing", n,
              leaked, ft, fv, fs_, moved)};
}

// ------------------------------------------------------------------------- 11

Outcome throughput() {
  auto corpus = musicqa::testing::make_synthetic_corpus(60000, 11);
  const auto& o = *corpus.ontology;
  const auto clips = filter_music_clips(corpus.clips, o, corpus.music_root);
  const auto freqs = compute_label_frequencies(clips, o, corpus.music_root);
  const RuleGenerator gen(o, corpus.music_root, freqs, corpus.templates);
  const unsigned cores = std::max(1u, std::thread::hardware_concurrency());
  {
    GenerationReport warm;
    std::vector<ClipRecord> few(clips.begin(), clips.begin() + std::min<std::size_t>(2000, clips.size()));
    gen.generate(few, 1, cores, warm);
  }
  GenerationReport rep;
  const auto t0 = Clock::now();
  const auto items = gen.generate(clips, 99, cores, rep);
  const double gen_secs = secs_since(t0);
  const auto t1 = Clock::now();
  const auto jsonl = write_qa_jsonl(items);
  const double ser_secs = secs_since(t1);
  const double rate = items.size() / gen_secs;
  const double end_to_end = items.size() / (gen_secs + ser_secs);
  return {rate >= 50000.0,
          fmt("%zu items from %zu clips on %u hardware thread(s): %.0f items/s generating (need >= 50000), %.0f "
              "items/s including JSONL serialization (%.1f MB)",
              items.size(), clips.size(), cores, rate, end_to_end, jsonl.size() / 1e6)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  double fuzz_seconds = 60.0;
  if (const char* s = std::getenv("MUSICQA_FUZZ_SECONDS")) fuzz_seconds = std::max(1.0, std::atof(s));

  report(1, "music filtering fidelity", filtering_fidelity);
  report(2, "distractor distribution", distractor_distribution);
  report(3, "MCQ invariants", mcq_invariants);
  report(4, "determinism under parallelism", determinism);
  std::vector<QAItem> pipeline;
  report(5, "dataset statistics table", [&] {
    pipeline = synthetic_pipeline(55);
    return table_structure(pipeline);
  });
  report(6, "format ablation datasets", [&] { return format_ablation(pipeline); });
  report(7, "evaluation correctness", eval_correctness);
  report(8, "meteor_exact hand computations", meteor_cases);
  report(9, "LLM client contract and parser fuzz", [&] { return llm_contract(fuzz_seconds); });
  report(10, "split integrity", split_integrity);
  report(11, "rule generation throughput", throughput);

  std::printf("%d/11 criteria passed\n", 11 - failures);
  return failures == 0 ? 0 : 1;
}
