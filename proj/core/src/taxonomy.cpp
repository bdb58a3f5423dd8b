#include "deeprtc/taxonomy.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace deeprtc {

namespace {

using Kind = TaxonomyError::Kind;

[[noreturn]] void fail(Kind kind, const std::string& what) {
  throw TaxonomyError(kind, "taxonomy: " + what);
}

std::size_t saturating_mul(std::size_t a, std::size_t b) {
  if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a) {
    return std::numeric_limits<std::size_t>::max();
  }
  return a * b;
}

std::size_t saturating_add(std::size_t a, std::size_t b) {
  if (b > std::numeric_limits<std::size_t>::max() - a) {
    return std::numeric_limits<std::size_t>::max();
  }
  return a + b;
}

}  // namespace

Taxonomy Taxonomy::from_edges(
    const std::vector<std::pair<std::string, std::string>>& edges) {
  std::map<std::string, std::string> parent_of;
  std::set<std::string> names;
  for (const auto& [child, parent] : edges) {
    if (child.empty() || parent.empty()) {
      fail(Kind::kOrphanReference,
           "edge '" + child + "' -> '" + parent + "' has an empty endpoint");
    }
    if (!parent_of.emplace(child, parent).second) {
      fail(Kind::kDuplicateName, "node '" + child + "' is listed twice");
    }
    names.insert(child);
    names.insert(parent);
  }

  // Follow parent links from every node; revisiting a node on the same walk
  // means a cycle.
  for (const auto& start : names) {
    std::set<std::string> seen{start};
    auto it = parent_of.find(start);
    while (it != parent_of.end()) {
      if (!seen.insert(it->second).second) {
        fail(Kind::kCycle, "cycle through '" + it->second + "'");
      }
      it = parent_of.find(it->second);
    }
  }

  std::vector<std::string> roots;
  for (const auto& n : names) {
    if (!parent_of.contains(n)) roots.push_back(n);
  }
  if (roots.empty()) fail(Kind::kNoRoot, "no root node");
  if (roots.size() > 1) {
    fail(Kind::kMultipleRoots,
         "multiple roots ('" + roots[0] + "', '" + roots[1] + "', ...)");
  }

  std::map<std::string, std::vector<std::string>> children_of;
  for (const auto& [child, parent] : parent_of) {
    children_of[parent].push_back(child);  // std::map keeps children sorted
  }
  for (const auto& [parent, kids] : children_of) {
    if (kids.size() == 1) {
      fail(Kind::kUnaryNode,
           "node '" + parent + "' has a single child '" + kids[0] + "'");
    }
  }

  Taxonomy t;
  std::deque<std::pair<std::string, std::optional<NodeId>>> queue{
      {roots[0], std::nullopt}};
  while (!queue.empty()) {
    auto [name, parent] = queue.front();
    queue.pop_front();
    NodeRecord rec;
    rec.id = t.nodes_.size();
    rec.name = name;
    rec.parent = parent;
    if (parent) t.nodes_[*parent].children.push_back(rec.id);
    t.nodes_.push_back(std::move(rec));
    if (auto it = children_of.find(name); it != children_of.end()) {
      for (const auto& kid : it->second) {
        queue.emplace_back(kid, t.nodes_.size() - 1);
      }
    }
  }
  t.finalize();
  return t;
}

Taxonomy Taxonomy::flat(const std::vector<std::string>& leaf_names,
                        const std::string& root_name) {
  std::vector<std::pair<std::string, std::string>> edges;
  edges.reserve(leaf_names.size());
  for (const auto& leaf : leaf_names) edges.emplace_back(leaf, root_name);
  return from_edges(edges);
}

Taxonomy Taxonomy::flattened() const {
  std::vector<std::string> names;
  for (NodeId leaf : leaf_ids_) names.push_back(nodes_[leaf].name);
  return flat(names, nodes_[kRoot].name);
}

void Taxonomy::finalize() {
  by_name_.clear();
  max_depth_ = 0;
  for (auto& rec : nodes_) {
    by_name_.emplace(rec.name, rec.id);
    rec.ancestors.clear();
    rec.depth = 0;
    if (!rec.parent) continue;
    for (NodeId p = *rec.parent; p != kRoot; p = *nodes_[p].parent) {
      rec.ancestors.push_back(p);
    }
    rec.depth = static_cast<int>(rec.ancestors.size()) + 1;
    max_depth_ = std::max(max_depth_, rec.depth);
  }

  leaf_ids_.clear();
  for (const auto& rec : nodes_) {
    if (rec.children.empty() && rec.id != kRoot) leaf_ids_.push_back(rec.id);
  }
  std::sort(leaf_ids_.begin(), leaf_ids_.end(), [&](NodeId a, NodeId b) {
    return nodes_[a].name < nodes_[b].name;
  });
  leaf_index_.assign(nodes_.size(), std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < leaf_ids_.size(); ++i) {
    leaf_index_[leaf_ids_[i]] = i;
  }

  // Ids are breadth-first, so children always have larger ids than parents.
  leaves_below_.assign(nodes_.size(), 0);
  for (NodeId n = nodes_.size(); n-- > 0;) {
    if (nodes_[n].children.empty()) leaves_below_[n] = 1;
    if (nodes_[n].parent) leaves_below_[*nodes_[n].parent] += leaves_below_[n];
  }
}

const NodeRecord& Taxonomy::node(NodeId n) const {
  if (n >= nodes_.size()) {
    fail(Kind::kUnknownNode, "unknown node id " + std::to_string(n));
  }
  return nodes_[n];
}

std::size_t Taxonomy::leaf_index(NodeId leaf) const {
  if (leaf >= nodes_.size() ||
      leaf_index_[leaf] == std::numeric_limits<std::size_t>::max()) {
    fail(Kind::kUnknownNode, "node " + std::to_string(leaf) + " is not a leaf");
  }
  return leaf_index_[leaf];
}

std::optional<NodeId> Taxonomy::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

NodeId Taxonomy::id_of(std::string_view name) const {
  if (auto id = find(name)) return *id;
  fail(Kind::kUnknownNode, "unknown node '" + std::string(name) + "'");
}

bool Taxonomy::is_on_path(NodeId a, NodeId n) const {
  if (a == n || a == kRoot) return true;
  const auto& anc = node(n).ancestors;
  return std::find(anc.begin(), anc.end(), a) != anc.end();
}

void Taxonomy::write_edges(std::ostream& out) const {
  out << "# child\tparent\n";
  for (const auto& rec : nodes_) {
    if (!rec.parent) continue;
    out << rec.name << '\t' << nodes_[*rec.parent].name << '\n';
  }
}

void Taxonomy::write_tree(std::ostream& out) const {
  std::function<void(NodeId, int)> visit = [&](NodeId n, int indent) {
    out << std::string(static_cast<std::size_t>(indent) * 2, ' ')
        << nodes_[n].name;
    if (nodes_[n].children.empty()) out << " *";
    out << '\n';
    for (NodeId c : nodes_[n].children) visit(c, indent + 1);
  };
  visit(kRoot, 0);
}

Taxonomy parse_taxonomy(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      fail(Kind::kMalformedLine,
           "line " + std::to_string(lineno) + ": expected child<TAB>parent");
    }
    edges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return Taxonomy::from_edges(edges);
}

Taxonomy load_taxonomy(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Kind::kIo, "cannot open '" + path + "'");
  return parse_taxonomy(in);
}

void save_taxonomy(const std::string& path, const Taxonomy& t) {
  std::ofstream out(path);
  if (!out) fail(Kind::kIo, "cannot write '" + path + "'");
  t.write_edges(out);
}

std::optional<std::size_t> LabelSet::position(NodeId n) const {
  auto it = std::find(members.begin(), members.end(), n);
  if (it == members.end()) return std::nullopt;
  return static_cast<std::size_t>(it - members.begin());
}

LabelSet full_leaves(const Taxonomy& t) {
  return LabelSet{t.leaf_ids(), LabelSetKind::kFullLeaves, std::nullopt};
}

LabelSet node_children(const Taxonomy& t, NodeId n) {
  if (t.is_leaf(n)) {
    fail(Kind::kUnknownNode, "leaf '" + t.name(n) + "' has no children");
  }
  return LabelSet{t.children(n), LabelSetKind::kNodeChildren, n};
}

void validate_label_set(const Taxonomy& t, const LabelSet& ls) {
  if (ls.members.empty()) fail(Kind::kUnknownNode, "empty label set");
  for (std::size_t i = 0; i < ls.members.size(); ++i) {
    NodeId a = ls.members[i];
    if (a == kRoot || a >= t.node_count()) {
      fail(Kind::kUnknownNode, "label set member must be a non-root node");
    }
    for (std::size_t j = 0; j < ls.members.size(); ++j) {
      if (i != j && t.is_on_path(a, ls.members[j])) {
        fail(Kind::kOffPath, "label set members '" + t.name(a) + "' and '" +
                                 t.name(ls.members[j]) + "' are nested");
      }
    }
  }
  if (ls.kind == LabelSetKind::kNodeChildren) {
    if (!ls.anchor) fail(Kind::kUnknownNode, "node-children set without anchor");
    auto expected = t.children(*ls.anchor);
    auto got = ls.members;
    std::sort(expected.begin(), expected.end());
    std::sort(got.begin(), got.end());
    if (expected != got) {
      fail(Kind::kOffPath, "members differ from C(" + t.name(*ls.anchor) + ")");
    }
    return;
  }
  for (NodeId leaf : t.leaf_ids()) {
    int hits = 0;
    for (NodeId m : ls.members) hits += t.is_on_path(m, leaf) ? 1 : 0;
    if (hits != 1) {
      fail(Kind::kOffPath, "leaf '" + t.name(leaf) + "' is covered " +
                               std::to_string(hits) + " times");
    }
  }
}

std::vector<std::uint8_t> build_codeword(const Taxonomy& t, NodeId n) {
  if (n == kRoot) fail(Kind::kRootNode, "the root has no codeword");
  const auto& rec = t.node(n);
  std::vector<std::uint8_t> code(t.num_classification_nodes(), 0);
  code[Taxonomy::row(n)] = 1;
  for (NodeId a : rec.ancestors) code[Taxonomy::row(a)] = 1;
  return code;
}

CodewordMatrix build_codeword_matrix(const Taxonomy& t, const LabelSet& ls) {
  CodewordMatrix q;
  q.columns = ls.members;
  q.data = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(t.num_classification_nodes()),
      static_cast<Eigen::Index>(ls.members.size()));
  for (std::size_t j = 0; j < ls.members.size(); ++j) {
    auto code = build_codeword(t, ls.members[j]);
    for (std::size_t r = 0; r < code.size(); ++r) {
      q.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
          code[r];
    }
  }
  return q;
}

LabelSet sample_cut(const Taxonomy& t, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("sample_cut: keep rate must lie in [0, 1]");
  }
  std::bernoulli_distribution keep(p);
  LabelSet cut;
  cut.kind = LabelSetKind::kCutFrontier;
  std::function<void(NodeId)> visit = [&](NodeId n) {
    for (NodeId c : t.children(n)) {
      if (t.is_leaf(c) || !keep(rng)) {
        cut.members.push_back(c);
      } else {
        visit(c);
      }
    }
  };
  visit(kRoot);
  return cut;
}

std::size_t count_cuts(const Taxonomy& t) {
  std::function<std::size_t(NodeId)> count = [&](NodeId n) -> std::size_t {
    std::size_t total = 1;
    for (NodeId c : t.children(n)) {
      std::size_t g = t.is_leaf(c) ? 1 : saturating_add(1, count(c));
      total = saturating_mul(total, g);
    }
    return total;
  };
  return count(kRoot);
}

std::vector<WeightedCut> enumerate_all_cuts(const Taxonomy& t, double p,
                                            std::size_t bound) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("enumerate_all_cuts: p must lie in [0, 1]");
  }
  const std::size_t total = count_cuts(t);
  if (total > bound) {
    fail(Kind::kCutBound, std::to_string(total) + " cuts exceed the bound of " +
                              std::to_string(bound));
  }

  using Partial = std::pair<std::vector<NodeId>, double>;
  // All frontiers strictly below an expanded node n.
  std::function<std::vector<Partial>(NodeId)> expand =
      [&](NodeId n) -> std::vector<Partial> {
    std::vector<Partial> acc{{{}, 1.0}};
    for (NodeId c : t.children(n)) {
      std::vector<Partial> choices{{{c}, t.is_leaf(c) ? 1.0 : 1.0 - p}};
      if (!t.is_leaf(c)) {
        for (auto& [members, prob] : expand(c)) {
          choices.emplace_back(std::move(members), p * prob);
        }
      }
      std::vector<Partial> next;
      next.reserve(acc.size() * choices.size());
      for (const auto& [prefix, pp] : acc) {
        for (const auto& [suffix, sp] : choices) {
          auto members = prefix;
          members.insert(members.end(), suffix.begin(), suffix.end());
          next.emplace_back(std::move(members), pp * sp);
        }
      }
      acc = std::move(next);
    }
    return acc;
  };

  std::vector<WeightedCut> out;
  for (auto& [members, prob] : expand(kRoot)) {
    out.push_back(WeightedCut{
        LabelSet{std::move(members), LabelSetKind::kCutFrontier, std::nullopt},
        prob});
  }
  return out;
}

NodeId project_label(const Taxonomy& t, NodeId leaf, const LabelSet& ls) {
  NodeId v = leaf;
  while (true) {
    if (ls.position(v)) return v;
    auto parent = t.parent(v);
    if (!parent) break;
    v = *parent;
  }
  fail(Kind::kOffPath,
       "no member of the label set lies on the path of '" + t.name(leaf) + "'");
}

NodeId node_conditional_label(const Taxonomy& t, NodeId leaf, NodeId n) {
  NodeId v = leaf;
  while (auto parent = t.parent(v)) {
    if (*parent == n) return v;
    v = *parent;
  }
  fail(Kind::kOffPath,
       "'" + t.name(n) + "' is not a strict ancestor of '" + t.name(leaf) + "'");
}

std::vector<NodeId> decision_path(const Taxonomy& t, NodeId leaf) {
  const auto& anc = t.ancestors(leaf);
  std::vector<NodeId> path{kRoot};
  path.insert(path.end(), anc.rbegin(), anc.rend());
  return path;
}

}  // namespace deeprtc
