// Feature-vector datasets, long-tailed subsampling and the synthetic
// hierarchical Gaussian benchmark.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "deeprtc/taxonomy.hpp"

namespace deeprtc {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SplitTag { kTrain, kVal, kTest };

std::string to_string(SplitTag tag);
SplitTag parse_split_tag(const std::string& s);

/// M samples of d features, each labelled with a taxonomy leaf.
struct Dataset {
  Eigen::MatrixXd features;  // M x d, one sample per row
  std::vector<NodeId> labels;
  std::vector<std::string> ids;
  std::optional<std::vector<SplitTag>> split_tags;

  std::size_t size() const noexcept { return labels.size(); }
  Eigen::Index dim() const noexcept { return features.cols(); }

  /// Rows `rows` of this dataset, in the given order.
  Dataset subset(const std::vector<std::size_t>& rows) const;
};

/// Throws DataError if a label is not a leaf, a feature is not finite, or the
/// dataset is empty.
void validate_dataset(const Dataset& data, const Taxonomy& t);

/// Reads "id,label,f_1,...,f_d" rows; lines starting with '#' are skipped.
Dataset read_dataset(std::istream& in, const Taxonomy& t);
Dataset load_dataset(const std::string& path, const Taxonomy& t);
void write_dataset(std::ostream& out, const Dataset& data, const Taxonomy& t);
void save_dataset(const std::string& path, const Dataset& data,
                  const Taxonomy& t);

/// Applies an "id,tag" split file to the dataset.
void load_splits(const std::string& path, Dataset& data);
void save_splits(const std::string& path, const Dataset& data);

/// Training-tagged sample count per leaf, aligned with t.leaf_ids().
std::vector<std::size_t> split_counts(const Dataset& data, const Taxonomy& t);

/// Per-leaf count of all samples, aligned with t.leaf_ids().
std::vector<std::size_t> class_counts(const Dataset& data, const Taxonomy& t);

/// Exponential class-size profile: rank r of C classes gets
/// round(n_max * factor^(r / (C - 1))) samples, at least 1.
std::vector<std::size_t> longtail_profile(std::size_t num_classes,
                                          std::size_t n_max,
                                          double imbalance_factor);

/// Subsamples each class to the exponential profile. Class ranks follow leaf
/// order shuffled by `seed`. Without an explicit n_max the smallest available
/// class count is used. Kept rows stay in their original order.
Dataset make_longtail(const Dataset& data, const Taxonomy& t,
                      double imbalance_factor, std::uint64_t seed,
                      std::optional<std::size_t> n_max = std::nullopt);

struct SyntheticConfig {
  std::vector<int> tree_shape{4, 4, 4};
  int feature_dim = 32;
  double class_sep = 1.0;
  // With class_sep 1 and d = 32, noise 5 leaves fine-grained classes heavily
  // confused while top-level groups stay mostly separable.
  double noise_sd = 5.0;
  double imbalance_factor = 0.01;
  std::size_t n_max = 500;
  std::uint64_t seed = 0;
  std::size_t test_per_class = 20;
  double val_fraction = 0.1;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

struct SyntheticBenchmark {
  Taxonomy taxonomy;
  Dataset train;
  Dataset val;
  Dataset test;
  // Mean vector of every node (root = 0), rows indexed by NodeId.
  Eigen::MatrixXd node_means;
  std::vector<std::string> warnings;
};

/// Tree built from the branching sequence; node means follow a root-to-leaf
/// Gaussian random walk so sibling leaves share their ancestors' offsets.
SyntheticBenchmark synth_generate(const SyntheticConfig& cfg);

/// Node names used by synth_generate: "c" followed by the child indices.
Taxonomy synthetic_taxonomy(const std::vector<int>& tree_shape);

}  // namespace deeprtc
