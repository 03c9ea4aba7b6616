#include "synthetic.hpp"

#include <cmath>
#include <json.hpp>
#include <random>

#include "musicqa/fileio.hpp"

namespace musicqa::testing {

std::string test_data(const std::string& name) { return std::string(MUSICQA_TEST_DATA) + "/" + name; }

std::string repo_file(const std::string& relative) {
  return std::string(MUSICQA_SOURCE_DIR) + "/" + relative;
}

SyntheticCorpus make_synthetic_corpus(std::size_t n_clips, std::uint64_t seed) {
  struct Category {
    const char* id;
    const char* name;
    int groups;
    int leaves_per_group;
  };
  const Category categories[] = {{"/s/instrument", "Musical instrument", 6, 8},
                                 {"/s/genre", "Music genre", 5, 8},
                                 {"/s/mood", "Music mood", 1, 7},
                                 {"/s/role", "Music role", 1, 10}};

  nlohmann::json nodes = nlohmann::json::array();
  std::vector<std::string> music_children;
  std::vector<std::string> leaves;
  std::vector<nlohmann::json> rest;
  for (const auto& c : categories) {
    music_children.push_back(c.id);
    std::vector<std::string> cat_children;
    for (int g = 0; g < c.groups; ++g) {
      std::vector<std::string> group_leaves;
      for (int l = 0; l < c.leaves_per_group; ++l) {
        const std::string id = std::string(c.id) + "/" + std::to_string(g) + "/" + std::to_string(l);
        group_leaves.push_back(id);
        leaves.push_back(id);
        rest.push_back({{"id", id},
                        {"name", std::string(c.name) + " label " + std::to_string(g) + "." +
                                     std::to_string(l)},
                        {"child_ids", nlohmann::json::array()}});
      }
      if (c.groups == 1) {
        cat_children = group_leaves;
      } else {
        const std::string gid = std::string(c.id) + "/g" + std::to_string(g);
        cat_children.push_back(gid);
        rest.push_back({{"id", gid},
                        {"name", std::string(c.name) + " group " + std::to_string(g)},
                        {"child_ids", group_leaves}});
      }
    }
    rest.push_back({{"id", c.id}, {"name", c.name}, {"child_ids", cat_children}});
  }
  nodes.push_back({{"id", "/s/music"}, {"name", "Music"}, {"child_ids", music_children}});
  for (auto& r : rest) nodes.push_back(std::move(r));
  nodes.push_back({{"id", "/s/animal"}, {"name", "Animal"}, {"child_ids", {"/s/dog"}}});
  nodes.push_back({{"id", "/s/dog"}, {"name", "Dog"}, {"child_ids", nlohmann::json::array()}});

  SyntheticCorpus corpus;
  corpus.ontology = std::make_unique<Ontology>(parse_ontology(nodes.dump()));
  corpus.music_root = "/s/music";
  corpus.templates = parse_templates(read_file(repo_file("data/templates.v1.json")));

  std::mt19937_64 gen(seed);
  std::vector<double> popularity;
  for (std::size_t i = 0; i < leaves.size(); ++i) popularity.push_back(1.0 / std::pow(i + 1.0, 0.8));
  std::shuffle(popularity.begin(), popularity.end(), gen);
  std::discrete_distribution<std::size_t> pick(popularity.begin(), popularity.end());
  std::uniform_int_distribution<int> how_many(1, 3);
  for (std::size_t i = 0; i < n_clips; ++i) {
    ClipRecord clip;
    clip.audio_id = "syn_" + std::to_string(seed) + "_" + std::to_string(i);
    clip.source = kAllSources[i % 4];
    const int k = how_many(gen);
    for (int j = 0; j < k; ++j) clip.labels.insert(leaves[pick(gen)]);
    if (gen() % 5 == 0) clip.labels.insert("/s/music");
    if (gen() % 9 == 0) clip.labels.insert("/s/dog");
    corpus.clips.push_back(std::move(clip));
  }
  return corpus;
}

}  // namespace musicqa::testing
