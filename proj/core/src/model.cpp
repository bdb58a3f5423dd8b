#include "deeprtc/model.hpp"

#include <random>

namespace deeprtc {

FeatureMap FeatureMap::identity(Eigen::Index d) {
  FeatureMap f;
  f.mode = FeatureMapMode::kIdentity;
  f.input_dim = d;
  return f;
}

FeatureMap FeatureMap::linear(Eigen::MatrixXd weight, Eigen::VectorXd bias) {
  FeatureMap f;
  f.mode = FeatureMapMode::kLinear;
  f.input_dim = weight.rows();
  f.weight = std::move(weight);
  f.bias = std::move(bias);
  f.validate();
  return f;
}

void FeatureMap::validate() const {
  if (input_dim < 1) throw ModelError("feature map: input dimension < 1");
  if (mode == FeatureMapMode::kIdentity) {
    if (weight.size() != 0 || bias.size() != 0) {
      throw ModelError("feature map: identity mode takes no weight or bias");
    }
    return;
  }
  if (weight.rows() != input_dim || bias.size() != weight.cols()) {
    throw ModelError("feature map: weight/bias shapes disagree");
  }
  if (!weight.allFinite() || !bias.allFinite()) {
    throw ModelError("feature map: non-finite parameters");
  }
}

Eigen::VectorXd FeatureMap::apply(
    const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != input_dim) {
    throw ModelError("feature map: expected " + std::to_string(input_dim) +
                     " features, got " + std::to_string(x.size()));
  }
  if (!x.allFinite()) throw ModelError("feature map: non-finite input");
  if (mode == FeatureMapMode::kIdentity) return x;
  return weight.transpose() * x + bias;
}

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& z) {
  Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::MatrixXd synthesize_weights(const NodeParams& params,
                                   const CodewordMatrix& q) {
  if (q.data.rows() != params.num_nodes()) {
    throw ModelError("synthesize_weights: codeword matrix has " +
                     std::to_string(q.data.rows()) + " rows, expected " +
                     std::to_string(params.num_nodes()));
  }
  return params.theta * q.data;
}

Posterior forward_codewords(const Eigen::Ref<const Eigen::VectorXd>& x,
                            const CodewordMatrix& q, const NodeParams& params,
                            const FeatureMap& fmap) {
  Eigen::VectorXd h = fmap.apply(x);
  if (h.size() != params.k()) {
    throw ModelError("forward: feature dimension " + std::to_string(h.size()) +
                     " does not match k = " + std::to_string(params.k()));
  }
  Posterior post;
  post.logits = synthesize_weights(params, q).transpose() * h;
  post.probs = softmax(post.logits);
  post.labels = q.columns;
  return post;
}

Posterior forward_labelset(const Taxonomy& t,
                           const Eigen::Ref<const Eigen::VectorXd>& x,
                           const LabelSet& ls, const NodeParams& params,
                           const FeatureMap& fmap) {
  return forward_codewords(x, build_codeword_matrix(t, ls), params, fmap);
}

Posterior forward_node_features(const Taxonomy& t,
                                const Eigen::Ref<const Eigen::VectorXd>& h,
                                NodeId n, const NodeParams& params) {
  if (t.is_leaf(n)) {
    throw ModelError("forward_node: '" + t.name(n) + "' is a leaf");
  }
  if (h.size() != params.k()) {
    throw ModelError("forward_node: feature dimension mismatch");
  }
  const auto& kids = t.children(n);
  Posterior post;
  post.logits.resize(static_cast<Eigen::Index>(kids.size()));
  for (std::size_t j = 0; j < kids.size(); ++j) {
    post.logits(static_cast<Eigen::Index>(j)) =
        params.theta.col(static_cast<Eigen::Index>(Taxonomy::row(kids[j])))
            .dot(h);
  }
  post.probs = softmax(post.logits);
  post.labels = kids;
  return post;
}

Posterior forward_node(const Taxonomy& t,
                       const Eigen::Ref<const Eigen::VectorXd>& x, NodeId n,
                       const NodeParams& params, const FeatureMap& fmap) {
  return forward_node_features(t, fmap.apply(x), n, params);
}

NodeParams init_params(std::uint64_t seed, double scale, Eigen::Index k,
                       Eigen::Index num_nodes) {
  if (!(scale >= 0.0)) throw ModelError("init_params: scale must be >= 0");
  NodeParams p;
  p.theta = Eigen::MatrixXd::Zero(k, num_nodes);
  if (scale == 0.0) return p;
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  // Column-major fill: theta_1 first, then theta_2, ...
  for (Eigen::Index c = 0; c < num_nodes; ++c) {
    for (Eigen::Index r = 0; r < k; ++r) p.theta(r, c) = u(rng);
  }
  return p;
}

void check_compatible(const Taxonomy& t, const NodeParams& params,
                      const FeatureMap& fmap) {
  if (static_cast<std::size_t>(params.num_nodes()) !=
      t.num_classification_nodes()) {
    throw ModelError("parameters have " + std::to_string(params.num_nodes()) +
                     " node columns, taxonomy has " +
                     std::to_string(t.num_classification_nodes()));
  }
  fmap.validate();
  if (fmap.output_dim() != params.k()) {
    throw ModelError("feature map output dimension does not match k");
  }
  if (!params.theta.allFinite()) throw ModelError("non-finite parameters");
}

}  // namespace deeprtc
