// Node parameters and on-the-fly predictor synthesis W_Y = Theta * Q_Y.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "deeprtc/taxonomy.hpp"

namespace deeprtc {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Residual parameter vectors, one column per classification node
/// (column Taxonomy::row(n) holds theta_n).
struct NodeParams {
  Eigen::MatrixXd theta;  // k x |N|

  Eigen::Index k() const noexcept { return theta.rows(); }
  Eigen::Index num_nodes() const noexcept { return theta.cols(); }
};

enum class FeatureMapMode { kIdentity, kLinear };

/// h(x) = x (identity) or h(x) = weight^T x + bias (linear, weight is d x k).
struct FeatureMap {
  FeatureMapMode mode = FeatureMapMode::kIdentity;
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
  // Input dimensionality; for identity maps this also equals k.
  Eigen::Index input_dim = 0;

  static FeatureMap identity(Eigen::Index d);
  static FeatureMap linear(Eigen::MatrixXd weight, Eigen::VectorXd bias);

  Eigen::Index output_dim() const noexcept {
    return mode == FeatureMapMode::kIdentity ? input_dim : weight.cols();
  }

  void validate() const;
  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

/// Softmax posterior over the members of a label set.
struct Posterior {
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
  std::vector<NodeId> labels;
};

/// Numerically stable softmax.
Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& z);

/// Theta * Q. Throws ModelError on a row-count mismatch.
Eigen::MatrixXd synthesize_weights(const NodeParams& params,
                                   const CodewordMatrix& q);

Posterior forward_labelset(const Taxonomy& t,
                           const Eigen::Ref<const Eigen::VectorXd>& x,
                           const LabelSet& ls, const NodeParams& params,
                           const FeatureMap& fmap);

/// Same as above with a prebuilt codeword matrix.
Posterior forward_codewords(const Eigen::Ref<const Eigen::VectorXd>& x,
                            const CodewordMatrix& q, const NodeParams& params,
                            const FeatureMap& fmap);

/// Node-conditional posterior over C(n). Ancestor rows of Q_n are zero, so the
/// children's weights are just their own theta columns.
Posterior forward_node(const Taxonomy& t,
                       const Eigen::Ref<const Eigen::VectorXd>& x, NodeId n,
                       const NodeParams& params, const FeatureMap& fmap);

/// Variant for callers that already computed h(x).
Posterior forward_node_features(const Taxonomy& t,
                                const Eigen::Ref<const Eigen::VectorXd>& h,
                                NodeId n, const NodeParams& params);

inline constexpr double kDefaultInitScale = 0.01;

/// Entries drawn i.i.d. from uniform(-scale, scale).
NodeParams init_params(std::uint64_t seed, double scale, Eigen::Index k,
                       Eigen::Index num_nodes);

void check_compatible(const Taxonomy& t, const NodeParams& params,
                      const FeatureMap& fmap);

/// Everything needed to run a trained head.
struct Checkpoint {
  std::vector<std::string> node_names;  // codeword row order
  NodeParams params;
  FeatureMap fmap;
  // Free-form tag such as "deep-rtc" or "flat".
  std::string kind = "deep-rtc";
};

Checkpoint make_checkpoint(const Taxonomy& t, NodeParams params,
                           FeatureMap fmap, std::string kind);

/// Text container with hexadecimal floats; read(write(c)) == c bit for bit.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Throws ModelError unless the checkpoint's node order matches `t`.
void check_checkpoint(const Checkpoint& ckpt, const Taxonomy& t);

}  // namespace deeprtc
