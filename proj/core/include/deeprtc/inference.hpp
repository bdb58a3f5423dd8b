// Top-down prediction with per-node rejection, the bottom-up (RHC) and flat
// rejection baselines, and selection of the competence level.
#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "deeprtc/data.hpp"
#include "deeprtc/model.hpp"
#include "deeprtc/taxonomy.hpp"

namespace deeprtc {

/// Minimum per-node confidence required to descend, gamma in [0, 1].
class CompetenceLevel {
 public:
  constexpr CompetenceLevel() = default;
  explicit CompetenceLevel(double gamma) : gamma_(gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) {
      throw std::invalid_argument("competence level must lie in [0, 1]");
    }
  }
  constexpr double value() const noexcept { return gamma_; }

 private:
  double gamma_ = 0.0;
};

struct Hop {
  NodeId node = kRoot;
  double confidence = 0.0;
  // Child taken at this node; empty where the sample stopped.
  std::optional<NodeId> chosen;
};

struct Decision {
  NodeId exit_node = kRoot;
  std::vector<Hop> path;  // root first
  bool at_leaf = false;
  double gamma_used = 0.0;

  /// Confidence recorded at the last hop (the rejecting node, or the parent
  /// decision that reached the leaf). 1 for an empty path.
  double exit_confidence() const noexcept {
    return path.empty() ? 1.0 : path.back().confidence;
  }
};

/// Maximum posterior probability.
double confidence(const Posterior& post);

/// Index of the largest entry; ties go to the lowest index.
Eigen::Index argmax(const Eigen::Ref<const Eigen::VectorXd>& v);

/// Starting at the root, descend to the most probable child while the node
/// decision has confidence >= gamma.
Decision rtc_predict(const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Taxonomy& t, const NodeParams& params,
                     const FeatureMap& fmap, CompetenceLevel gamma);

/// Greedy root-to-leaf path (gamma = 0). The decision at any gamma is a
/// prefix of this trace, see truncate_trace().
Decision rtc_trace(const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Taxonomy& t, const NodeParams& params,
                   const FeatureMap& fmap);

/// Cuts a gamma = 0 trace at the first hop whose confidence is below gamma.
Decision truncate_trace(const Decision& trace, const Taxonomy& t,
                        CompetenceLevel gamma);

/// Flat leaf posterior, indexed like t.leaf_ids(). `params` belong to the flat
/// classifier: column j holds the weights of leaf_ids()[j].
Eigen::VectorXd flat_posterior(const Eigen::Ref<const Eigen::VectorXd>& x,
                               const NodeParams& params, const FeatureMap& fmap);

/// Node masses (sum of descendant leaf probabilities), indexed by NodeId.
Eigen::VectorXd node_masses(const Taxonomy& t,
                            const Eigen::Ref<const Eigen::VectorXd>& leaf_probs);

/// Bottom-up probabilities, top-down decision: descend to the child of
/// largest mass while that mass is >= gamma.
Decision rhc_predict(const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Taxonomy& t, const NodeParams& flat_params,
                     const FeatureMap& fmap, CompetenceLevel gamma);

Decision rhc_from_posterior(const Taxonomy& t,
                            const Eigen::Ref<const Eigen::VectorXd>& leaf_probs,
                            CompetenceLevel gamma);

/// Accept the flat argmax leaf iff its probability is >= threshold, otherwise
/// exit at the root.
Decision flat_reject_predict(const Eigen::Ref<const Eigen::VectorXd>& x,
                             const Taxonomy& t, const NodeParams& flat_params,
                             const FeatureMap& fmap, double threshold);

/// Threshold rejecting floor(rate * M) scores. Scores strictly below the
/// threshold are rejected; a score equal to it is accepted.
double threshold_for_rate(std::span<const double> scores, double rate);

/// Default grid {0, 0.05, ..., 1}.
std::vector<double> default_gamma_grid();

enum class CpbVariant { kLiteral, kNormalized };

struct Calibration {
  CompetenceLevel gamma;
  std::vector<double> grid;
  std::vector<double> scores;  // validation CPB per grid point
};

/// Gamma with the best validation CPB; ties go to the smaller gamma.
Calibration calibrate_gamma(const Dataset& val, const Taxonomy& t,
                            const NodeParams& params, const FeatureMap& fmap,
                            std::span<const double> grid,
                            CpbVariant variant = CpbVariant::kLiteral);

/// Same selection for RHC decisions of a flat classifier.
Calibration calibrate_rhc_gamma(const Dataset& val, const Taxonomy& t,
                                const NodeParams& flat_params,
                                const FeatureMap& fmap,
                                std::span<const double> grid,
                                CpbVariant variant = CpbVariant::kLiteral);

/// Convenience batch wrappers, one decision per dataset row.
std::vector<Decision> predict_rtc(const Dataset& data, const Taxonomy& t,
                                  const NodeParams& params,
                                  const FeatureMap& fmap, CompetenceLevel gamma);
std::vector<Decision> predict_rhc(const Dataset& data, const Taxonomy& t,
                                  const NodeParams& flat_params,
                                  const FeatureMap& fmap, CompetenceLevel gamma);
std::vector<Decision> predict_flat_reject(const Dataset& data,
                                          const Taxonomy& t,
                                          const NodeParams& flat_params,
                                          const FeatureMap& fmap,
                                          double threshold);

/// "id,exit,depth,at_leaf,confidence,truth" rows.
void write_predictions(std::ostream& out, const Dataset& data,
                       const std::vector<Decision>& decisions,
                       const Taxonomy& t);

}  // namespace deeprtc
