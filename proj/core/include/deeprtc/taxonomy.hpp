// Class taxonomy, label sets (cuts of the tree) and the binary codewords
// that encode parameter inheritance.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace deeprtc {

/// Index of a node inside a Taxonomy. The root is always node 0.
using NodeId = std::size_t;

inline constexpr NodeId kRoot = 0;

/// Random stream used everywhere a seeded draw is needed.
using Rng = std::mt19937_64;

class TaxonomyError : public std::runtime_error {
 public:
  enum class Kind {
    kCycle,
    kMultipleRoots,
    kNoRoot,
    kUnaryNode,
    kDuplicateName,
    kOrphanReference,
    kMalformedLine,
    kUnknownNode,
    kRootNode,
    kOffPath,
    kCutBound,
    kIo,
  };

  TaxonomyError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct NodeRecord {
  NodeId id = kRoot;
  std::string name;
  std::optional<NodeId> parent;
  std::vector<NodeId> children;
  // Path from the parent up to, but excluding, the root.
  std::vector<NodeId> ancestors;
  int depth = 0;
};

/// Rooted tree of classification nodes.
///
/// Node ids are assigned breadth-first with siblings ordered by name, so the
/// root's children get ids 1..|C(root)|. Node n (n >= 1) owns codeword row
/// n - 1; the root has no row and no parameters. Immutable after construction.
class Taxonomy {
 public:
  /// Builds from (child, parent) name pairs. Throws TaxonomyError.
  static Taxonomy from_edges(
      const std::vector<std::pair<std::string, std::string>>& edges);

  /// Depth-1 taxonomy with the given leaves hanging off `root_name`.
  static Taxonomy flat(const std::vector<std::string>& leaf_names,
                       const std::string& root_name = "root");

  /// Same leaves, all attached directly to the root.
  Taxonomy flattened() const;

  std::size_t node_count() const noexcept { return nodes_.size(); }
  /// |N|: classification nodes, root excluded.
  std::size_t num_classification_nodes() const noexcept {
    return nodes_.size() - 1;
  }
  std::size_t num_leaves() const noexcept { return leaf_ids_.size(); }

  const NodeRecord& node(NodeId n) const;
  const std::vector<NodeRecord>& nodes() const noexcept { return nodes_; }
  const std::string& name(NodeId n) const { return node(n).name; }
  const std::vector<NodeId>& children(NodeId n) const {
    return node(n).children;
  }
  const std::vector<NodeId>& ancestors(NodeId n) const {
    return node(n).ancestors;
  }
  int depth(NodeId n) const { return node(n).depth; }
  std::optional<NodeId> parent(NodeId n) const { return node(n).parent; }
  bool is_leaf(NodeId n) const { return node(n).children.empty(); }
  int max_depth() const noexcept { return max_depth_; }

  /// Fine-grained classes, sorted by name.
  const std::vector<NodeId>& leaf_ids() const noexcept { return leaf_ids_; }
  /// Position of a leaf inside leaf_ids(); throws for internal nodes.
  std::size_t leaf_index(NodeId leaf) const;
  /// |Leaves(T_n)|.
  std::size_t leaves_below(NodeId n) const { return leaves_below_.at(n); }

  std::optional<NodeId> find(std::string_view name) const;
  NodeId id_of(std::string_view name) const;

  /// True iff `a` is `n` or one of its ancestors. The root is an ancestor of
  /// every node.
  bool is_on_path(NodeId a, NodeId n) const;

  /// Codeword row of node n (root excluded).
  static std::size_t row(NodeId n) { return n - 1; }

  /// Edge list in "child<TAB>parent" form, parents before children.
  void write_edges(std::ostream& out) const;
  /// Indented human readable rendering.
  void write_tree(std::ostream& out) const;

 private:
  Taxonomy() = default;
  void finalize();

  std::vector<NodeRecord> nodes_;
  std::vector<NodeId> leaf_ids_;
  std::vector<std::size_t> leaf_index_;
  std::vector<std::size_t> leaves_below_;
  std::unordered_map<std::string, NodeId> by_name_;
  int max_depth_ = 0;
};

/// Parses the tab separated edge list format. '#' lines and blank lines are
/// skipped.
Taxonomy parse_taxonomy(std::istream& in);
Taxonomy load_taxonomy(const std::string& path);
void save_taxonomy(const std::string& path, const Taxonomy& t);

enum class LabelSetKind { kFullLeaves, kCutFrontier, kNodeChildren };

struct LabelSet {
  std::vector<NodeId> members;
  LabelSetKind kind = LabelSetKind::kCutFrontier;
  // Parent node for kNodeChildren sets.
  std::optional<NodeId> anchor;

  std::size_t size() const noexcept { return members.size(); }
  /// Position of `n` in members, if present.
  std::optional<std::size_t> position(NodeId n) const;

  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

LabelSet full_leaves(const Taxonomy& t);
LabelSet node_children(const Taxonomy& t, NodeId n);

/// Throws unless members are mutually non-ancestral and, for frontier kinds,
/// cover every leaf exactly once.
void validate_label_set(const Taxonomy& t, const LabelSet& ls);

/// |N| x |Y| binary matrix whose column j flags members[j] and its ancestors.
struct CodewordMatrix {
  Eigen::MatrixXd data;
  std::vector<NodeId> columns;
};

std::vector<std::uint8_t> build_codeword(const Taxonomy& t, NodeId n);
CodewordMatrix build_codeword_matrix(const Taxonomy& t, const LabelSet& ls);

/// Random cut by top-down Bernoulli(p) keep/prune draws at each internal
/// non-root node. A pruned node becomes a frontier member and nothing below
/// it is drawn. Members are emitted in depth-first order.
LabelSet sample_cut(const Taxonomy& t, double p, Rng& rng);

struct WeightedCut {
  LabelSet cut;
  // Probability of drawing this cut with sample_cut at the given p.
  double probability = 0.0;
};

inline constexpr std::size_t kDefaultCutBound = 100000;

/// Number of distinct cuts, saturating at SIZE_MAX.
std::size_t count_cuts(const Taxonomy& t);

/// Every distinct cut with its sampling probability under keep rate p.
std::vector<WeightedCut> enumerate_all_cuts(
    const Taxonomy& t, double p = 0.5, std::size_t bound = kDefaultCutBound);

/// The member of ls lying on the root path of `leaf`.
NodeId project_label(const Taxonomy& t, NodeId leaf, const LabelSet& ls);

/// Child of `n` on the path from the root to `leaf`.
NodeId node_conditional_label(const Taxonomy& t, NodeId leaf, NodeId n);

/// Nodes whose children-decision lies on the root path of `leaf`: the root
/// followed by A(leaf) from the top down.
std::vector<NodeId> decision_path(const Taxonomy& t, NodeId leaf);

}  // namespace deeprtc
