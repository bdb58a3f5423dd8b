#include "deeprtc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

namespace deeprtc {

namespace {

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

double parse_real(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size()) {
    throw std::invalid_argument("config: '" + key + "' expects a number, got '" +
                                value + "'");
  }
  return v;
}

long long parse_int(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size()) {
    throw std::invalid_argument("config: '" + key +
                                "' expects an integer, got '" + value + "'");
  }
  return v;
}

std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// For every node, the column of the cut member covering it (-1 if none).
// Filled lazily per leaf by walking up the tree.
class CutIndex {
 public:
  CutIndex(const Taxonomy& t, const LabelSet& cut)
      : t_(t), column_(t.node_count(), -1) {
    for (std::size_t j = 0; j < cut.members.size(); ++j) {
      column_[cut.members[j]] = static_cast<int>(j);
    }
  }

  Eigen::Index target(NodeId leaf) const {
    for (NodeId v = leaf;; v = *t_.parent(v)) {
      if (column_[v] >= 0) return column_[v];
      if (v == kRoot) break;
    }
    throw TaxonomyError(TaxonomyError::Kind::kOffPath,
                        "cut does not cover leaf '" + t_.name(leaf) + "'");
  }

 private:
  const Taxonomy& t_;
  std::vector<int> column_;
};

void check_batch(const Batch& batch) {
  if (batch.rows.empty()) throw std::invalid_argument("empty batch");
}

Eigen::VectorXd sample_features(const Batch& batch, std::size_t i,
                                const FeatureMap& fmap) {
  return fmap.apply(
      batch.data.features.row(static_cast<Eigen::Index>(batch.rows[i]))
          .transpose());
}

}  // namespace

void TrainConfig::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("p must lie in [0, 1]");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(weight_decay >= 0.0)) {
    throw std::invalid_argument("weight_decay must be >= 0");
  }
  if (!(init_scale >= 0.0)) throw std::invalid_argument("init_scale must be >= 0");
  if (map_dim < 0) throw std::invalid_argument("map_dim must be >= 0");
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "p") {
    p = parse_real(key, value);
  } else if (key == "lambda") {
    lambda = parse_real(key, value);
  } else if (key == "lr") {
    lr = parse_real(key, value);
  } else if (key == "epochs") {
    epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "batch_size") {
    auto v = parse_int(key, value);
    if (v < 1) throw std::invalid_argument("batch_size must be >= 1");
    batch_size = static_cast<std::size_t>(v);
  } else if (key == "seed") {
    auto v = parse_int(key, value);
    if (v < 0) throw std::invalid_argument("seed must be >= 0");
    seed = static_cast<std::uint64_t>(v);
  } else if (key == "weight_decay") {
    weight_decay = parse_real(key, value);
  } else if (key == "init_scale") {
    init_scale = parse_real(key, value);
  } else if (key == "feature_map") {
    if (value == "identity") {
      feature_map = FeatureMapMode::kIdentity;
    } else if (value == "linear") {
      feature_map = FeatureMapMode::kLinear;
    } else {
      throw std::invalid_argument("feature_map must be identity or linear");
    }
  } else if (key == "map_dim") {
    map_dim = static_cast<int>(parse_int(key, value));
  } else {
    throw std::invalid_argument("unknown training key '" + key + "'");
  }
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"p", format_real(p)},
      {"lambda", format_real(lambda)},
      {"lr", format_real(lr)},
      {"epochs", std::to_string(epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"seed", std::to_string(seed)},
      {"weight_decay", format_real(weight_decay)},
      {"init_scale", format_real(init_scale)},
      {"feature_map",
       feature_map == FeatureMapMode::kIdentity ? "identity" : "linear"},
      {"map_dim", std::to_string(map_dim)},
  };
}

std::vector<std::size_t> all_rows(const Dataset& data) {
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

double xent_loss(const Taxonomy& t, const Eigen::Ref<const Eigen::VectorXd>& x,
                 NodeId leaf, const LabelSet& ls, const NodeParams& params,
                 const FeatureMap& fmap) {
  const NodeId target = project_label(t, leaf, ls);
  auto post = forward_labelset(t, x, ls, params, fmap);
  const auto j = static_cast<Eigen::Index>(*ls.position(target));
  return log_sum_exp(post.logits) - post.logits(j);
}

double sts_loss(const Taxonomy& t, const Batch& batch, const NodeParams& params,
                const FeatureMap& fmap, const LabelSet& cut) {
  check_batch(batch);
  const auto q = build_codeword_matrix(t, cut);
  const Eigen::MatrixXd w = synthesize_weights(params, q);
  const CutIndex index(t, cut);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Eigen::VectorXd z = w.transpose() * sample_features(batch, i, fmap);
    total += log_sum_exp(z) - z(index.target(batch.data.labels[batch.rows[i]]));
  }
  return total / static_cast<double>(batch.size());
}

double ncl_loss(const Taxonomy& t, const Batch& batch, const NodeParams& params,
                const FeatureMap& fmap) {
  check_batch(batch);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const NodeId y = batch.data.labels[batch.rows[i]];
    const Eigen::VectorXd h = sample_features(batch, i, fmap);
    const auto path = decision_path(t, y);
    double per_sample = 0.0;
    for (NodeId n : path) {
      auto post = forward_node_features(t, h, n, params);
      const NodeId target = node_conditional_label(t, y, n);
      const auto& kids = t.children(n);
      const auto j = std::find(kids.begin(), kids.end(), target) - kids.begin();
      per_sample += log_sum_exp(post.logits) - post.logits(j);
    }
    total += per_sample / static_cast<double>(path.size());
  }
  return total / static_cast<double>(batch.size());
}

double ensemble_loss(const Taxonomy& t, const Batch& batch,
                     const NodeParams& params, const FeatureMap& fmap,
                     std::size_t bound) {
  const auto cuts = enumerate_all_cuts(t, 0.5, bound);
  double total = 0.0;
  for (const auto& wc : cuts) total += sts_loss(t, batch, params, fmap, wc.cut);
  return total / static_cast<double>(cuts.size());
}

double weighted_ensemble_loss(const Taxonomy& t, const Batch& batch,
                              const NodeParams& params, const FeatureMap& fmap,
                              double p, std::size_t bound) {
  double total = 0.0;
  for (const auto& wc : enumerate_all_cuts(t, p, bound)) {
    if (wc.probability == 0.0) continue;
    total += wc.probability * sts_loss(t, batch, params, fmap, wc.cut);
  }
  return total;
}

Objective evaluate_objective(const Taxonomy& t, const Batch& batch,
                             const NodeParams& params, const FeatureMap& fmap,
                             double lambda, const LabelSet& cut) {
  check_batch(batch);
  const auto m = static_cast<double>(batch.size());
  const Eigen::Index k = params.k();
  const bool linear = fmap.mode == FeatureMapMode::kLinear;

  Objective obj;
  obj.loss.cut_used = cut;
  obj.grad.theta = Eigen::MatrixXd::Zero(k, params.num_nodes());
  if (linear) {
    obj.grad.weight = Eigen::MatrixXd::Zero(fmap.weight.rows(), fmap.weight.cols());
    obj.grad.bias = Eigen::VectorXd::Zero(fmap.bias.size());
  }

  const auto q = build_codeword_matrix(t, cut);
  const Eigen::MatrixXd w_cut = synthesize_weights(params, q);
  const CutIndex index(t, cut);
  Eigen::MatrixXd d_w_cut = Eigen::MatrixXd::Zero(k, w_cut.cols());
  Eigen::VectorXd d_h(k);

  double sts_total = 0.0;
  double ncl_total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(batch.rows[i]);
    const NodeId y = batch.data.labels[batch.rows[i]];
    const Eigen::VectorXd x = batch.data.features.row(row).transpose();
    const Eigen::VectorXd h = fmap.apply(x);
    d_h.setZero();

    // Sampled-cut term: dL/dz = f - onehot, dL/dW_cut = h (f - onehot)^T.
    {
      const Eigen::VectorXd z = w_cut.transpose() * h;
      const Eigen::Index j = index.target(y);
      sts_total += log_sum_exp(z) - z(j);
      Eigen::VectorXd g = softmax(z);
      g(j) -= 1.0;
      g *= lambda / m;
      d_w_cut.noalias() += h * g.transpose();
      d_h.noalias() += w_cut * g;
    }

    // Node-conditional terms along the root path of y.
    const auto path = decision_path(t, y);
    const double weight = 1.0 / static_cast<double>(path.size());
    double per_sample = 0.0;
    for (NodeId n : path) {
      const auto& kids = t.children(n);
      const NodeId target = node_conditional_label(t, y, n);
      Eigen::VectorXd z(static_cast<Eigen::Index>(kids.size()));
      Eigen::Index j = 0;
      for (std::size_t c = 0; c < kids.size(); ++c) {
        z(static_cast<Eigen::Index>(c)) =
            params.theta.col(static_cast<Eigen::Index>(Taxonomy::row(kids[c])))
                .dot(h);
        if (kids[c] == target) j = static_cast<Eigen::Index>(c);
      }
      per_sample += log_sum_exp(z) - z(j);
      Eigen::VectorXd g = softmax(z);
      g(j) -= 1.0;
      g *= weight / m;
      for (std::size_t c = 0; c < kids.size(); ++c) {
        const auto col = static_cast<Eigen::Index>(Taxonomy::row(kids[c]));
        const double gc = g(static_cast<Eigen::Index>(c));
        obj.grad.theta.col(col).noalias() += gc * h;
        d_h.noalias() += gc * params.theta.col(col);
      }
    }
    ncl_total += per_sample * weight;

    if (linear) {
      obj.grad.weight.noalias() += x * d_h.transpose();
      obj.grad.bias += d_h;
    }
  }
  // dTheta from the cut term: dW_cut Q^T scatters each column onto the node
  // and all of its ancestors.
  obj.grad.theta.noalias() += d_w_cut * q.data.transpose();

  obj.loss.l_sts = sts_total / m;
  obj.loss.l_ncl = ncl_total / m;
  obj.loss.l_total = obj.loss.l_ncl + lambda * obj.loss.l_sts;
  return obj;
}

Gradients grad_total(const Taxonomy& t, const Batch& batch,
                     const NodeParams& params, const FeatureMap& fmap,
                     const TrainConfig& cfg, const LabelSet& cut) {
  auto obj = evaluate_objective(t, batch, params, fmap, cfg.lambda, cut);
  if (!obj.grad.theta.allFinite() || !obj.grad.weight.allFinite() ||
      !obj.grad.bias.allFinite()) {
    throw DivergenceError("gradient is not finite");
  }
  return std::move(obj.grad);
}

std::pair<NodeParams, FeatureMap> initial_model(const Taxonomy& t,
                                                Eigen::Index input_dim,
                                                const TrainConfig& cfg) {
  const auto nodes = static_cast<Eigen::Index>(t.num_classification_nodes());
  if (cfg.feature_map == FeatureMapMode::kIdentity) {
    return {init_params(cfg.seed, cfg.init_scale, input_dim, nodes),
            FeatureMap::identity(input_dim)};
  }
  const Eigen::Index k = cfg.map_dim > 0 ? cfg.map_dim : input_dim;
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
  std::uniform_real_distribution<double> u(-bound, bound);
  Eigen::MatrixXd w(input_dim, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    for (Eigen::Index r = 0; r < input_dim; ++r) w(r, c) = u(rng);
  }
  return {init_params(cfg.seed, cfg.init_scale, k, nodes),
          FeatureMap::linear(std::move(w), Eigen::VectorXd::Zero(k))};
}

TrainResult train(const Dataset& data, const Taxonomy& t,
                  const TrainConfig& cfg) {
  cfg.validate();
  validate_dataset(data, t);

  TrainResult result;
  std::tie(result.params, result.fmap) = initial_model(t, data.dim(), cfg);
  auto& theta = result.params.theta;
  auto& fmap = result.fmap;

  Rng rng(cfg.seed);
  auto order = all_rows(data);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - b);
      const Batch batch{data, std::span<const std::size_t>(order).subspan(b, len)};
      const LabelSet cut = sample_cut(t, cfg.p, rng);
      auto obj = evaluate_objective(t, batch, result.params, fmap, cfg.lambda, cut);
      if (!std::isfinite(obj.loss.l_total) || !obj.grad.theta.allFinite()) {
        throw DivergenceError("training diverged at epoch " +
                              std::to_string(epoch) + " (loss " +
                              std::to_string(obj.loss.l_total) + ")");
      }
      const auto frac = static_cast<double>(len) / static_cast<double>(order.size());
      log.l_sts += frac * obj.loss.l_sts;
      log.l_ncl += frac * obj.loss.l_ncl;
      log.l_total += frac * obj.loss.l_total;

      if (cfg.weight_decay > 0.0) obj.grad.theta += cfg.weight_decay * theta;
      theta -= cfg.lr * obj.grad.theta;
      if (fmap.mode == FeatureMapMode::kLinear) {
        if (cfg.weight_decay > 0.0) obj.grad.weight += cfg.weight_decay * fmap.weight;
        fmap.weight -= cfg.lr * obj.grad.weight;
        fmap.bias -= cfg.lr * obj.grad.bias;
      }
    }
    log.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    result.log.push_back(log);
  }
  if (!theta.allFinite()) throw DivergenceError("parameters are not finite");
  return result;
}

TrainResult train_flat(const Dataset& data, const Taxonomy& t, TrainConfig cfg) {
  validate_dataset(data, t);
  const Taxonomy flat = t.flattened();
  Dataset relabelled = data;
  // Flattened ids are 1..L in leaf_ids() order.
  for (auto& y : relabelled.labels) y = t.leaf_index(y) + 1;
  cfg.lambda = 0.0;
  return train(relabelled, flat, cfg);
}

void write_train_log(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "# epoch,l_sts,l_ncl,l_total,seconds\n";
  const auto old = out.precision(17);
  for (const auto& e : log) {
    out << e.epoch << ',' << e.l_sts << ',' << e.l_ncl << ',' << e.l_total << ','
        << e.seconds << '\n';
  }
  out.precision(old);
}

}  // namespace deeprtc
