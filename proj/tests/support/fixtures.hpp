// Small taxonomies and datasets shared by the test suites.
#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "deeprtc/deeprtc.hpp"

namespace deeprtc::testing {

// Root n0 with children n1, n2, n3; n1 has children n4, n5. Breadth-first ids
// match the names: n1 -> 1, ..., n5 -> 5, so codeword rows follow n1..n5.
// In the figure's notation y_3 = n2, y_4 = n3, y_1 = n4, y_2 = n5.
inline Taxonomy figure2() {
  return Taxonomy::from_edges({{"n1", "n0"},
                               {"n2", "n0"},
                               {"n3", "n0"},
                               {"n4", "n1"},
                               {"n5", "n1"}});
}

// Root with two internal children a, b; each has two leaves.
inline Taxonomy binary_two_level() {
  return Taxonomy::from_edges({{"a", "r"},
                               {"b", "r"},
                               {"a0", "a"},
                               {"a1", "a"},
                               {"b0", "b"},
                               {"b1", "b"}});
}

// Uneven tree with leaves at depths 1, 2 and 3.
inline Taxonomy uneven() {
  return Taxonomy::from_edges({{"x", "r"},
                               {"y", "r"},
                               {"z", "r"},
                               {"x0", "x"},
                               {"x1", "x"},
                               {"x2", "x"},
                               {"u", "y"},
                               {"y1", "y"},
                               {"u0", "u"},
                               {"u1", "u"}});
}

inline Taxonomy flat_tree(int leaves) {
  std::vector<std::string> names;
  for (int i = 0; i < leaves; ++i) names.push_back("l" + std::to_string(i));
  return Taxonomy::flat(names);
}

// Random tree of depth <= max_depth; every internal node gets 2..3 children.
inline Taxonomy random_tree(std::mt19937_64& rng, int max_depth) {
  std::vector<std::pair<std::string, std::string>> edges;
  std::uniform_int_distribution<int> fanout(2, 3);
  std::bernoulli_distribution expand(0.5);
  std::vector<std::pair<std::string, int>> frontier{{"r", 0}};
  while (!frontier.empty()) {
    auto [name, depth] = frontier.back();
    frontier.pop_back();
    const int k = fanout(rng);
    for (int i = 0; i < k; ++i) {
      std::string child = name + std::to_string(i);
      edges.emplace_back(child, name);
      if (depth + 1 < max_depth && expand(rng)) frontier.emplace_back(child, depth + 1);
    }
  }
  return Taxonomy::from_edges(edges);
}

// Gaussian features around random per-leaf means.
inline Dataset random_dataset(const Taxonomy& t, std::size_t m, int d,
                              std::mt19937_64& rng, double sep = 1.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd means(static_cast<Eigen::Index>(t.num_leaves()), d);
  for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = sep * g(rng);
  std::uniform_int_distribution<std::size_t> pick(0, t.num_leaves() - 1);
  Dataset ds;
  ds.features.resize(static_cast<Eigen::Index>(m), d);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t c = pick(rng);
    for (int j = 0; j < d; ++j) {
      ds.features(static_cast<Eigen::Index>(i), j) =
          means(static_cast<Eigen::Index>(c), j) + g(rng);
    }
    ds.labels.push_back(t.leaf_ids()[c]);
    ds.ids.push_back("s" + std::to_string(i));
  }
  return ds;
}

inline Decision exit_at(const Taxonomy& t, NodeId n) {
  Decision d;
  d.exit_node = n;
  d.at_leaf = t.is_leaf(n) && n != kRoot;
  return d;
}

}  // namespace deeprtc::testing
