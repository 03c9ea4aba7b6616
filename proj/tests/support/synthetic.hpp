#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "musicqa/corpus.hpp"
#include "musicqa/ontology.hpp"
#include "musicqa/templates.hpp"

namespace musicqa::testing {

std::string test_data(const std::string& name);
std::string repo_file(const std::string& relative);

// Synthetic music ontology shaped like the AudioSet music branch: a "Music"
// root with instrument/genre/mood/role categories, grouped leaves below them
// and a small non-music branch.
struct SyntheticCorpus {
  std::unique_ptr<Ontology> ontology;
  LabelId music_root;
  std::vector<QuestionTemplate> templates;
  std::vector<ClipRecord> clips;
};

// `clips` clips with 1-3 music leaves each, drawn from a Zipf-like
// popularity so that frequency-weighted sampling has real skew.
SyntheticCorpus make_synthetic_corpus(std::size_t clips, std::uint64_t seed);

}  // namespace musicqa::testing
