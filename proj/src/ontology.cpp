#include "musicqa/ontology.hpp"

#include <algorithm>
#include <json.hpp>

#include "musicqa/errors.hpp"
#include "musicqa/text.hpp"

using nlohmann::json;

namespace musicqa {

Ontology::Ontology(std::vector<OntologyNode> nodes) : nodes_(std::move(nodes)) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (n.id.empty()) throw ParseError("ontology node " + std::to_string(i) + " has an empty id");
    if (n.name.empty()) throw ParseError("ontology node " + n.id + " has an empty name");
    if (!index_.emplace(n.id, i).second) throw ParseError("duplicate ontology id " + n.id);
  }

  parents_.assign(nodes_.size(), {});
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (const auto& child : nodes_[i].child_ids) {
      auto it = index_.find(child);
      if (it == index_.end()) {
        throw DanglingRefError("node " + nodes_[i].id + " references unknown child " + child);
      }
      auto& ps = parents_[it->second];
      if (std::find(ps.begin(), ps.end(), nodes_[i].id) == ps.end()) ps.push_back(nodes_[i].id);
    }
  }
  for (auto& ps : parents_) std::sort(ps.begin(), ps.end());

  // Iterative three-colour DFS. In a finite acyclic graph every node is
  // reachable from a parentless one, so acyclicity is the only check needed.
  enum class Colour : unsigned char { White, Grey, Black };
  std::vector<Colour> colour(nodes_.size(), Colour::White);
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  for (std::size_t start = 0; start < nodes_.size(); ++start) {
    if (colour[start] != Colour::White) continue;
    stack.emplace_back(start, 0);
    colour[start] = Colour::Grey;
    while (!stack.empty()) {
      auto& [v, next_child] = stack.back();
      const auto& children = nodes_[v].child_ids;
      if (next_child == children.size()) {
        colour[v] = Colour::Black;
        stack.pop_back();
        continue;
      }
      const std::size_t c = index_.find(children[next_child++])->second;
      if (colour[c] == Colour::Grey) {
        throw CycleError("ontology cycle through " + nodes_[c].id);
      }
      if (colour[c] == Colour::White) {
        colour[c] = Colour::Grey;
        stack.emplace_back(c, 0);
      }
    }
  }

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (parents_[i].empty()) roots_.push_back(nodes_[i].id);
  }
}

std::size_t Ontology::index_of(std::string_view id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw UnknownLabelError("unknown label " + std::string(id));
  return it->second;
}

bool Ontology::contains(std::string_view id) const { return index_.find(id) != index_.end(); }

const OntologyNode& Ontology::node(std::string_view id) const { return nodes_[index_of(id)]; }

const OntologyNode* Ontology::find(std::string_view id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &nodes_[it->second];
}

const OntologyNode* Ontology::find_by_name(std::string_view name) const {
  const std::string key = text::fold_case(name);
  for (const auto& n : nodes_) {
    if (text::fold_case(n.name) == key) return &n;
  }
  return nullptr;
}

const std::vector<LabelId>& Ontology::parents_of(std::string_view id) const {
  return parents_[index_of(id)];
}

std::set<LabelId> Ontology::leaf_labels(std::string_view subtree_root) const {
  std::set<LabelId> out;
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<std::size_t> stack{index_of(subtree_root)};
  seen[stack.back()] = true;
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    const auto& n = nodes_[v];
    if (n.is_leaf()) {
      if (!n.is_abstract) out.insert(n.id);
      continue;
    }
    for (const auto& c : n.child_ids) {
      const std::size_t ci = index_.find(c)->second;
      if (!seen[ci]) {
        seen[ci] = true;
        stack.push_back(ci);
      }
    }
  }
  return out;
}

std::vector<LabelId> Ontology::parent_categories(std::string_view leaf) const {
  const std::size_t start = index_of(leaf);
  if (!nodes_[start].is_leaf()) throw NotALeafError(std::string(leaf) + " is not a leaf");

  std::vector<LabelId> out;
  std::vector<bool> seen(nodes_.size(), false);
  seen[start] = true;
  std::vector<LabelId> level{parents_[start]};
  while (!level.empty()) {
    std::vector<LabelId> next;
    for (const auto& id : level) {
      const std::size_t i = index_.find(id)->second;
      if (seen[i]) continue;
      seen[i] = true;
      out.push_back(id);
      next.insert(next.end(), parents_[i].begin(), parents_[i].end());
    }
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    level = std::move(next);
  }
  return out;
}

Ontology parse_ontology(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed ontology JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("ontology must be a JSON array");

  std::vector<OntologyNode> nodes;
  nodes.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& obj = doc[i];
    const std::string where = "ontology entry " + std::to_string(i);
    if (!obj.is_object()) throw ParseError(where + " is not an object");
    auto field = [&](const char* key) -> const json& {
      auto it = obj.find(key);
      if (it == obj.end()) throw ParseError(where + " is missing \"" + key + "\"");
      return *it;
    };
    OntologyNode n;
    const auto& id = field("id");
    const auto& name = field("name");
    const auto& children = field("child_ids");
    if (!id.is_string() || !name.is_string() || !children.is_array()) {
      throw ParseError(where + " has a field of the wrong type");
    }
    n.id = id.get<std::string>();
    n.name = name.get<std::string>();
    for (const auto& c : children) {
      if (!c.is_string()) throw ParseError(where + " has a non-string child id");
      n.child_ids.push_back(c.get<std::string>());
    }
    if (auto it = obj.find("abstract"); it != obj.end()) {
      if (!it->is_boolean()) throw ParseError(where + ": \"abstract\" must be a boolean");
      n.is_abstract = it->get<bool>();
    }
    // The public AudioSet release marks abstract classes via "restrictions".
    if (auto it = obj.find("restrictions"); it != obj.end() && it->is_array()) {
      for (const auto& r : *it) {
        if (r.is_string() && r.get<std::string>() == "abstract") n.is_abstract = true;
      }
    }
    nodes.push_back(std::move(n));
  }
  return Ontology(std::move(nodes));
}

std::string serialize_ontology(const Ontology& o) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& n : o.nodes()) {
    nlohmann::ordered_json obj;
    obj["id"] = n.id;
    obj["name"] = n.name;
    obj["child_ids"] = n.child_ids;
    obj["abstract"] = n.is_abstract;
    arr.push_back(std::move(obj));
  }
  return arr.dump(2);
}

std::set<LabelId> leaf_labels(const Ontology& o, std::string_view subtree_root) {
  return o.leaf_labels(subtree_root);
}

std::vector<LabelId> parent_categories(const Ontology& o, std::string_view leaf) {
  return o.parent_categories(leaf);
}

LabelId resolve_label(const Ontology& o, std::string_view id_or_name) {
  if (o.contains(id_or_name)) return LabelId(id_or_name);
  if (const auto* n = o.find_by_name(id_or_name)) return n->id;
  throw UnknownLabelError("no ontology node with id or name \"" + std::string(id_or_name) + "\"");
}

}  // namespace musicqa
