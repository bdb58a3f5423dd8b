// Losses of the taxonomic classifier, their analytic gradients and the SGD
// loop with stochastic tree sampling.
//
// Objective per batch:  L = L_ncl + lambda * L_sts
//   L_sts  mean cross-entropy against one sampled cut of the taxonomy
//   L_ncl  node-conditional cross-entropies along each sample's root path,
//          averaged per sample over the decisions on that path
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deeprtc/data.hpp"
#include "deeprtc/model.hpp"
#include "deeprtc/taxonomy.hpp"

namespace deeprtc {

/// Non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double p = 0.5;       // Bernoulli keep rate for cut sampling
  double lambda = 1.0;  // weight of the sampled-cut loss
  double lr = 0.1;
  int epochs = 30;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  double init_scale = kDefaultInitScale;
  FeatureMapMode feature_map = FeatureMapMode::kIdentity;
  // Output dimension k of a linear feature map; 0 keeps k = d.
  int map_dim = 0;

  /// Throws std::invalid_argument when a constraint is violated.
  void validate() const;
  /// Sets one field from its key=value spelling.
  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_map() const;
};

struct LossBreakdown {
  double l_sts = 0.0;
  double l_ncl = 0.0;
  double l_total = 0.0;
  LabelSet cut_used;
};

/// Gradient with the same shapes as (NodeParams, FeatureMap). weight and bias
/// are empty for identity maps.
struct Gradients {
  Eigen::MatrixXd theta;
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

/// Rows of a dataset processed together.
struct Batch {
  const Dataset& data;
  std::span<const std::size_t> rows;

  std::size_t size() const noexcept { return rows.size(); }
};

std::vector<std::size_t> all_rows(const Dataset& data);

/// -log posterior of the member of `ls` on the root path of `leaf`.
double xent_loss(const Taxonomy& t, const Eigen::Ref<const Eigen::VectorXd>& x,
                 NodeId leaf, const LabelSet& ls, const NodeParams& params,
                 const FeatureMap& fmap);

double sts_loss(const Taxonomy& t, const Batch& batch, const NodeParams& params,
                const FeatureMap& fmap, const LabelSet& cut);

double ncl_loss(const Taxonomy& t, const Batch& batch, const NodeParams& params,
                const FeatureMap& fmap);

/// Mean of the batch loss over every cut, each weighted 1/|cuts|.
double ensemble_loss(const Taxonomy& t, const Batch& batch,
                     const NodeParams& params, const FeatureMap& fmap,
                     std::size_t bound = kDefaultCutBound);

/// Sum over every cut of Pr[cut; p] times the batch loss against that cut:
/// the expectation of sts_loss under sample_cut.
double weighted_ensemble_loss(const Taxonomy& t, const Batch& batch,
                              const NodeParams& params, const FeatureMap& fmap,
                              double p, std::size_t bound = kDefaultCutBound);

struct Objective {
  LossBreakdown loss;
  Gradients grad;
};

/// Loss breakdown and exact gradient of L_ncl + lambda * L_sts.
Objective evaluate_objective(const Taxonomy& t, const Batch& batch,
                             const NodeParams& params, const FeatureMap& fmap,
                             double lambda, const LabelSet& cut);

/// Gradient of the total loss; throws DivergenceError if it is not finite.
Gradients grad_total(const Taxonomy& t, const Batch& batch,
                     const NodeParams& params, const FeatureMap& fmap,
                     const TrainConfig& cfg, const LabelSet& cut);

struct EpochLog {
  int epoch = 0;
  double l_sts = 0.0;
  double l_ncl = 0.0;
  double l_total = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  NodeParams params;
  FeatureMap fmap;
  std::vector<EpochLog> log;
};

/// Initial (params, fmap) used by train() for a given configuration.
std::pair<NodeParams, FeatureMap> initial_model(const Taxonomy& t,
                                                Eigen::Index input_dim,
                                                const TrainConfig& cfg);

/// Epochs of: shuffle, then per batch sample a cut, compute the gradient and
/// take an SGD step. Deterministic given cfg.seed.
TrainResult train(const Dataset& data, const Taxonomy& t,
                  const TrainConfig& cfg);

/// Flat softmax baseline: trains on t.flattened() with lambda = 0. Column j
/// of the returned theta scores t.leaf_ids()[j].
TrainResult train_flat(const Dataset& data, const Taxonomy& t, TrainConfig cfg);

/// "epoch,l_sts,l_ncl,l_total,seconds" lines.
void write_train_log(std::ostream& out, const std::vector<EpochLog>& log);

}  // namespace deeprtc
