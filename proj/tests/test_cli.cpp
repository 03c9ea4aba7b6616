#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "musicqa/assembly.hpp"
#include "musicqa/cli.hpp"
#include "musicqa/config.hpp"
#include "musicqa/fileio.hpp"
#include "musicqa/qa_item.hpp"
#include "support/mock_server.hpp"
#include "support/synthetic.hpp"

using namespace musicqa;
using musicqa::testing::MockReply;
using musicqa::testing::MockServer;
using musicqa::testing::repo_file;
using musicqa::testing::test_data;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int rc = -1;
  std::string out;
  std::string err;
  json summary;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "musicqa");
  std::ostringstream out, err;
  Run r;
  r.rc = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  // The summary is the last stdout line.
  const auto trimmed = r.out.substr(0, r.out.find_last_not_of('\n') + 1);
  const auto nl = trimmed.rfind('\n');
  try {
    r.summary = json::parse(nl == std::string::npos ? trimmed : trimmed.substr(nl + 1));
  } catch (const json::exception&) {
  }
  return r;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("musicqa_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string fixture_config() { return test_data("cli/config.json"); }

// Absolute-path config in `dir`, built from key/value overrides on top of the
// fixture paths.
std::string write_config(const fs::path& dir, json extra) {
  json j = {
      {"ontology", test_data("ontology_music.json")},
      {"manifests", {test_data("cli/manifest_10.jsonl")}},
      {"templates", repo_file("data/templates.v1.json")},
      {"dimension_examples", repo_file("data/dimension_examples.v1.json")},
      {"out_dir", (dir / "out").string()},
      {"cache_dir", (dir / "cache").string()},
  };
  for (auto it = extra.begin(); it != extra.end(); ++it) {
    if (it->is_null()) j.erase(it.key());
    else j[it.key()] = *it;
  }
  const fs::path p = dir / "config.json";
  write_file_atomic(p, j.dump(2));
  return p.string();
}

}  // namespace

TEST_CASE("cli generate-rule matches the golden file") {
  const auto dir = scratch("golden");
  const auto golden = read_file(test_data("cli/golden_rule_qa.jsonl"));

  auto r1 = cli({"generate-rule", "--config", fixture_config(), "--out", (dir / "w1.jsonl").string(),
                 "--workers", "1"});
  REQUIRE(r1.rc == kExitOk);
  CHECK(read_file(dir / "w1.jsonl") == golden);
  CHECK(r1.summary["status"] == "ok");
  CHECK(r1.summary["items"] == 33);
  // Progress and throughput go to stderr, not stdout.
  CHECK(r1.err.find("items/s") != std::string::npos);
  CHECK(r1.out.find("[info]") == std::string::npos);

  auto r8 = cli({"generate-rule", "--config", fixture_config(), "--out", (dir / "w8.jsonl").string(),
                 "--workers", "8"});
  REQUIRE(r8.rc == kExitOk);
  CHECK(read_file(dir / "w8.jsonl") == golden);
  CHECK(read_file(dir / "w1.jsonl.report.json") == read_file(dir / "w8.jsonl.report.json"));

  const auto report = json::parse(read_file(dir / "w1.jsonl.report.json"));
  CHECK(report["clips_total"] == 10);
  CHECK(report["clips_music"] == 8);
  CHECK(report["generation"]["emitted_total"] == 33);

  // A different seed changes the data.
  auto rs = cli({"generate-rule", "--config", fixture_config(), "--out", (dir / "s.jsonl").string(),
                 "--seed", "7"});
  REQUIRE(rs.rc == kExitOk);
  CHECK(read_file(dir / "s.jsonl") != golden);
}

TEST_CASE("cli generate-rule filters") {
  const auto dir = scratch("rulefilter");
  auto r = cli({"generate-rule", "--config", fixture_config(), "--out", (dir / "a.jsonl").string(),
                "--format-filter", "mcq", "--format-filter", "binary"});
  REQUIRE(r.rc == kExitOk);
  const auto items = read_qa_jsonl(read_file(dir / "a.jsonl"));
  CHECK(items.size() == 22);
  for (const auto& i : items) CHECK(i.format != QAFormat::OpenEnded);

  // A source filter keeps the other clips' items exactly as they were.
  auto s = cli({"generate-rule", "--config", fixture_config(), "--out", (dir / "fma.jsonl").string(),
                "--source-filter", "FMA"});
  REQUIRE(s.rc == kExitOk);
  const auto fma = read_qa_jsonl(read_file(dir / "fma.jsonl"));
  const auto all = read_qa_jsonl(read_file(test_data("cli/golden_rule_qa.jsonl")));
  std::vector<QAItem> expected;
  for (const auto& i : all) {
    if (i.source == Source::FMA) expected.push_back(i);
  }
  CHECK(!fma.empty());
  CHECK(fma == expected);
}

TEST_CASE("cli usage and config errors exit 1") {
  const auto dir = scratch("usage");
  CHECK(cli({}).rc == kExitUsage);
  CHECK(cli({"frobnicate"}).rc == kExitUsage);
  CHECK(cli({"generate-rule"}).rc == kExitUsage);
  CHECK(cli({"--help"}).rc == kExitOk);

  // No seed anywhere.
  auto noseed = cli({"generate-rule", "--config", write_config(dir, {})});
  CHECK(noseed.rc == kExitUsage);
  CHECK(noseed.summary["error"].get<std::string>().find("seed") != std::string::npos);

  auto missing = cli({"generate-rule", "--config",
                      write_config(dir, {{"global_seed", 1}, {"manifests", {(dir / "nope.jsonl").string()}}})});
  CHECK(missing.rc == kExitUsage);
  CHECK(missing.summary["error"].get<std::string>().find("nope.jsonl") != std::string::npos);

  CHECK(cli({"generate-rule", "--config", write_config(dir, {{"global_seed", 1}, {"colour", "red"}})}).rc ==
        kExitUsage);
  CHECK(cli({"generate-rule", "--config", write_config(dir, {{"global_seed", -3}})}).rc == kExitUsage);
  CHECK(cli({"generate-rule", "--config",
             write_config(dir, {{"global_seed", 1}, {"split", {{"train", 0.5}, {"val", 0.1}, {"test", 0.1}}}})})
            .rc == kExitUsage);
  CHECK(cli({"generate-rule", "--config", fixture_config(), "--format-filter", "essay"}).rc == kExitUsage);
  CHECK(cli({"generate-rule", "--config", fixture_config(), "--source-filter", "Napster"}).rc == kExitUsage);
  CHECK(cli({"generate-rule", "--config", (dir / "absent.json").string()}).rc == kExitUsage);
  write_file_atomic(dir / "broken.json", "{\"global_seed\": ");
  CHECK(cli({"generate-rule", "--config", (dir / "broken.json").string()}).rc == kExitUsage);
}

TEST_CASE("config never carries credentials") {
  CHECK_THROWS_AS(parse_config(R"({"llm": {"api_key": "sk-123"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"embedder": {"token": "abc"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"password": "hunter2"})"), ConfigError);
  const auto c = parse_config(R"({"llm": {"api_key_env": "MY_KEY"}, "global_seed": 5})", "/base");
  CHECK(c.llm.http.api_key_env == "MY_KEY");
  CHECK(c.global_seed == 5u);
  CHECK(c.out_dir == fs::path("/base/out"));
  CHECK(c.llm.cache_dir == fs::path("/base/cache/llm"));

  const auto d = parse_config("{}");
  CHECK(!d.global_seed);
  CHECK(d.mcq_options == 4);
  CHECK(d.llm.temperature == 1.0);
}

TEST_CASE("cli data errors exit 2") {
  const auto dir = scratch("dataerr");
  write_file_atomic(dir / "dup.jsonl", read_file(test_data("cli/manifest_10.jsonl")));
  auto dup = cli({"generate-rule", "--config",
                  write_config(dir, {{"global_seed", 1},
                                     {"manifests", {test_data("cli/manifest_10.jsonl"), (dir / "dup.jsonl").string()}}})});
  CHECK(dup.rc == kExitData);

  write_file_atomic(dir / "bad.jsonl", "{\"audio_id\": \"x\"\n");
  auto bad = cli({"generate-rule", "--config",
                  write_config(dir, {{"global_seed", 1}, {"manifests", {(dir / "bad.jsonl").string()}}})});
  CHECK(bad.rc == kExitData);
  CHECK(bad.summary["status"] == "error");
}

TEST_CASE("cli assemble, stats and validate") {
  const auto dir = scratch("assemble");
  const auto rule = dir / "rule.jsonl";
  REQUIRE(cli({"generate-rule", "--config", fixture_config(), "--out", rule.string()}).rc == kExitOk);

  auto a = cli({"assemble", "--seed", "11", "--input", rule.string(), "--import",
                "MusicCaps=" + test_data("import_mixed_100.jsonl"), "--out", (dir / "ds").string()});
  REQUIRE(a.rc == kExitOk);
  CHECK(fs::exists(dir / "ds" / "train" / "manifest.json"));
  CHECK(fs::exists(dir / "ds" / "dataset.json"));
  CHECK(fs::exists(dir / "ds" / "stats.json"));
  const std::uint64_t total = a.summary["items"];
  CHECK(total > 33);

  // Rerunning reproduces every artifact byte for byte.
  auto a2 = cli({"assemble", "--seed", "11", "--input", rule.string(), "--import",
                 "MusicCaps=" + test_data("import_mixed_100.jsonl"), "--out", (dir / "ds2").string()});
  REQUIRE(a2.rc == kExitOk);
  for (const char* f : {"dataset.json", "stats.json", "train/manifest.json", "test/shard-00000.jsonl"}) {
    CHECK(read_file(dir / "ds" / f) == read_file(dir / "ds2" / f));
  }

  auto s = cli({"stats", "--dataset", (dir / "ds").string(), "--out", (dir / "stats.json").string()});
  REQUIRE(s.rc == kExitOk);
  CHECK(s.summary["items"] == total);
  CHECK(s.summary["stats"] == json::parse(read_file(dir / "stats.json")));

  auto v = cli({"validate", "--dataset", (dir / "ds").string(), "--mcq-options", "4"});
  CHECK(v.rc == kExitOk);
  CHECK(v.summary["violations"] == 0);
  CHECK(v.summary["items"] == total);

  SUBCASE("format ablation via stats") {
    const auto full = s.summary["stats"];
    auto w = cli({"stats", "--dataset", (dir / "ds").string(), "--drop-format", "mcq"});
    REQUIRE(w.rc == kExitOk);
    const auto& rows = w.summary["stats"]["rows"];
    const auto& full_rows = full["rows"];
    REQUIRE(rows.size() == full_rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(rows[i]["MCQ"] == 0);
      for (const char* col : {"Captioning", "QA", "Binary"}) CHECK(rows[i][col] == full_rows[i][col]);
    }
  }

  SUBCASE("a corrupted MCQ is reported by qa_id") {
    const fs::path shard = dir / "ds" / "train" / "shard-00000.jsonl";
    auto items = read_qa_jsonl(read_file(shard));
    std::string victim;
    for (auto& i : items) {
      if (i.format == QAFormat::MultipleChoice) {
        i.answer = "Kazoo";
        victim = i.qa_id;
        break;
      }
    }
    REQUIRE(!victim.empty());
    write_file_atomic(shard, write_qa_jsonl(items));
    auto bad = cli({"validate", "--dataset", (dir / "ds").string(), "--out", (dir / "report.json").string()});
    CHECK(bad.rc == kExitData);
    const auto ids = bad.summary["offending_qa_ids"];
    CHECK(ids.size() == 1);
    CHECK(ids[0] == victim);
    const auto report = json::parse(read_file(dir / "report.json"));
    CHECK(report["ok"] == false);
    bool named = false;
    for (const auto& x : report["violations"]) named = named || x["qa_id"] == victim;
    CHECK(named);
  }

  SUBCASE("cross-split leakage is reported") {
    // Copy one train line into the test split, keeping its manifest consistent.
    const auto train = read_qa_jsonl(read_file(dir / "ds" / "train" / "shard-00000.jsonl"));
    auto test_items = read_qa_jsonl(read_file(dir / "ds" / "test" / "shard-00000.jsonl"));
    QAItem leaked = train.front();
    leaked.qa_id = "ffffffffffffffff";
    leaked.question += " Really?";
    if (leaked.format == QAFormat::MultipleChoice) leaked.question = train.front().question;
    test_items.push_back(leaked);
    write_shards(test_items, 100000, dir / "ds" / "test");
    auto bad = cli({"validate", "--dataset", (dir / "ds").string()});
    CHECK(bad.rc == kExitData);
    CHECK(bad.summary["offending_qa_ids"].dump().find("ffffffffffffffff") != std::string::npos);
  }
}

TEST_CASE("cli validate on loose files") {
  const auto dir = scratch("validate");
  auto items = read_qa_jsonl(read_file(test_data("cli/golden_rule_qa.jsonl")));
  CHECK(cli({"validate", "--input", test_data("cli/golden_rule_qa.jsonl")}).rc == kExitOk);
  for (auto& i : items) {
    if (i.format == QAFormat::MultipleChoice) {
      i.options.pop_back();
      break;
    }
  }
  items[4].qa_id = items[5].qa_id;
  write_file_atomic(dir / "bad.jsonl", write_qa_jsonl(items) + "{not json}\n");
  auto r = cli({"validate", "--input", (dir / "bad.jsonl").string()});
  CHECK(r.rc == kExitData);
  CHECK(r.summary["violations"].get<int>() >= 3);
  CHECK(cli({"validate"}).rc == kExitUsage);
}

TEST_CASE("cli eval --task mcq on the hand-scored fixture") {
  const auto dir = scratch("eval");
  auto r = cli({"eval", "--task", "mcq", "--input", test_data("eval_mcq_items.jsonl"), "--outputs",
                test_data("eval_mcq_outputs.jsonl"), "--categories", test_data("eval_mcq_categories.json"),
                "--out", (dir / "report.json").string()});
  REQUIRE(r.rc == kExitOk);
  const auto report = json::parse(read_file(dir / "report.json"));
  CHECK(report["tasks"]["mcq"]["value"].get<double>() == doctest::Approx(0.65).epsilon(1e-12));
  CHECK(report["tasks"]["mcq"]["correct"] == 13);
  CHECK(report["tasks"]["mcq"]["missing"] == 1);
  CHECK(report["tasks"]["mcq"]["unparseable"] == 2);
  CHECK(report["tasks"]["mcq"]["per_category"]["Knowledge"]["value"].get<double>() == doctest::Approx(0.6));
  CHECK(report["tasks"]["mcq"]["per_category"]["Reasoning"]["value"].get<double>() == doctest::Approx(0.7));
  CHECK(r.summary["report"] == report);

  // Against itself as the baseline every task is at 100%.
  auto b = cli({"eval", "--task", "mcq", "--input", test_data("eval_mcq_items.jsonl"), "--outputs",
                test_data("eval_mcq_outputs.jsonl"), "--baseline", (dir / "report.json").string()});
  REQUIRE(b.rc == kExitOk);
  CHECK(b.summary["report"]["relative_percent"]["mcq"].get<double>() == doctest::Approx(100.0));

  write_file_atomic(dir / "stray.jsonl", "{\"qa_id\": \"nope\", \"text\": \"A\"}\n");
  CHECK(cli({"eval", "--task", "mcq", "--input", test_data("eval_mcq_items.jsonl"), "--outputs",
             (dir / "stray.jsonl").string()})
            .rc == kExitData);
  CHECK(cli({"eval", "--task", "poetry", "--input", test_data("eval_mcq_items.jsonl"), "--outputs",
             test_data("eval_mcq_outputs.jsonl")})
            .rc == kExitUsage);
}

TEST_CASE("cli generate-llm against the mock service") {
  const auto dir = scratch("llm");
  MockServer server;
  server.set_chat_content([](const std::string&) {
    return R"(Here you go:
[{"question": "Which instrument carries the melody?", "format": "open", "answer": "Piano", "dimension": "melody"},
 {"question": "Is the tempo fast?", "format": "binary", "answer": "no", "dimension": "tempo"},
 {"question": "What is the genre?", "format": "mcq", "options": ["Jazz", "Metal", "Polka", "Techno"], "answer": "B", "dimension": "genre"},
 {"question": "Broken", "format": "mcq", "options": ["x"], "answer": "x"}])";
  });
  const json llm = {{"base_url", server.base_url()}, {"api_key_env", ""}, {"timeout_ms", 5000},
                    {"max_retries", 2},           {"initial_backoff_ms", 5}, {"max_backoff_ms", 20},
                    {"model", "mock-model"}};
  const auto config = write_config(
      dir, {{"global_seed", 3}, {"manifests", {test_data("cli/captions_5.jsonl")}}, {"llm", llm}, {"workers", 3}});

  auto r = cli({"generate-llm", "--config", config, "--out", (dir / "llm.jsonl").string()});
  REQUIRE(r.rc == kExitOk);
  // Four clips have context, one has neither caption nor metadata.
  CHECK(server.chat_requests() == 4);
  CHECK(r.summary["items"] == 12);
  CHECK(r.summary["rejected"] == 4);
  const auto items = read_qa_jsonl(read_file(dir / "llm.jsonl"));
  CHECK(items.size() == 12);
  for (const auto& i : items) {
    CHECK(i.method == Method::Llm);
    CHECK(check_qa_item(i).empty());
  }
  const auto report = json::parse(read_file(dir / "llm.jsonl.report.json"));
  CHECK(report["skipped_no_context"] == 1);
  CHECK(report["rejected"] == 4);

  // Second run: served from the cache, identical artifacts.
  auto again = cli({"generate-llm", "--config", config, "--out", (dir / "llm2.jsonl").string()});
  REQUIRE(again.rc == kExitOk);
  CHECK(server.chat_requests() == 4);
  CHECK(again.summary["network_requests"] == 0);
  CHECK(read_file(dir / "llm.jsonl") == read_file(dir / "llm2.jsonl"));
  CHECK(read_file(dir / "llm.jsonl.report.json") == read_file(dir / "llm2.jsonl.report.json"));

  auto only_mcq = cli({"generate-llm", "--config", config, "--out", (dir / "mcq.jsonl").string(), "--format-filter",
                       "mcq"});
  REQUIRE(only_mcq.rc == kExitOk);
  CHECK(read_qa_jsonl(read_file(dir / "mcq.jsonl")).size() == 4);
}

TEST_CASE("cli generate-llm service failures exit 3") {
  const auto dir = scratch("llmfail");
  MockServer server;
  server.require_token("right");
  ::setenv("MUSICQA_CLI_TEST_KEY", "wrong", 1);
  json llm = {{"base_url", server.base_url()}, {"api_key_env", "MUSICQA_CLI_TEST_KEY"}, {"timeout_ms", 5000},
              {"max_retries", 2},           {"initial_backoff_ms", 5},               {"max_backoff_ms", 20}};
  auto config = write_config(dir, {{"global_seed", 3}, {"manifests", {test_data("cli/captions_5.jsonl")}}, {"llm", llm}});
  auto r = cli({"generate-llm", "--config", config, "--out", (dir / "llm.jsonl").string()});
  CHECK(r.rc == kExitService);
  CHECK(!fs::exists(dir / "llm.jsonl"));

  // Persistent rate limiting: retried, then reported; outputs untouched.
  MockServer busy;
  std::deque<MockReply> replies;
  for (int i = 0; i < 40; ++i) replies.push_back({429, "{}", {}, {}});
  busy.script(replies);
  llm["base_url"] = busy.base_url();
  llm["api_key_env"] = "";
  config = write_config(dir, {{"global_seed", 3}, {"manifests", {test_data("cli/captions_5.jsonl")}}, {"llm", llm}});
  auto rl = cli({"generate-llm", "--config", config, "--out", (dir / "llm.jsonl").string()});
  CHECK(rl.rc == kExitService);
  CHECK(!fs::exists(dir / "llm.jsonl"));
  const auto report = json::parse(read_file(dir / "llm.jsonl.report.json"));
  CHECK(report["service_failures"].size() == 4);
  ::unsetenv("MUSICQA_CLI_TEST_KEY");
}
