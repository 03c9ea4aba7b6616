#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace musicqa {

// Opaque ontology identifier such as "/m/042v_gx".
using LabelId = std::string;

struct OntologyNode {
  LabelId id;
  std::string name;
  std::vector<LabelId> child_ids;
  bool is_abstract = false;

  bool is_leaf() const { return child_ids.empty(); }
};

// Immutable, validated label DAG in the AudioSet ontology layout. Safe for
// concurrent reads.
class Ontology {
 public:
  // Validates and takes ownership of `nodes`. Throws ParseError on duplicate
  // ids or empty fields, DanglingRefError on unknown child ids and CycleError
  // when the child relation is not acyclic.
  explicit Ontology(std::vector<OntologyNode> nodes);

  std::size_t size() const { return nodes_.size(); }
  bool contains(std::string_view id) const;

  // Throws UnknownLabelError.
  const OntologyNode& node(std::string_view id) const;
  const OntologyNode* find(std::string_view id) const;

  // First node (in input order) whose name matches case-insensitively.
  const OntologyNode* find_by_name(std::string_view name) const;

  // Nodes in input order.
  const std::vector<OntologyNode>& nodes() const { return nodes_; }
  // Ids without a parent, in input order.
  const std::vector<LabelId>& roots() const { return roots_; }
  // Direct parents of `id`, sorted by id.
  const std::vector<LabelId>& parents_of(std::string_view id) const;

  // Non-abstract leaves reachable from `subtree_root` (inclusive), sorted.
  std::set<LabelId> leaf_labels(std::string_view subtree_root) const;

  // Every ancestor of `leaf`, nearest first: breadth-first over the parent
  // relation, each depth level ordered by id, each ancestor listed once at
  // its shortest distance.
  std::vector<LabelId> parent_categories(std::string_view leaf) const;

 private:
  std::size_t index_of(std::string_view id) const;

  std::vector<OntologyNode> nodes_;
  std::vector<LabelId> roots_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<std::vector<LabelId>> parents_;
};

Ontology parse_ontology(std::string_view json_text);
std::string serialize_ontology(const Ontology& o);

// Free-function forms of the member queries.
std::set<LabelId> leaf_labels(const Ontology& o, std::string_view subtree_root);
std::vector<LabelId> parent_categories(const Ontology& o, std::string_view leaf);

// Resolves a root given either a label id or a display name.
LabelId resolve_label(const Ontology& o, std::string_view id_or_name);

}  // namespace musicqa
