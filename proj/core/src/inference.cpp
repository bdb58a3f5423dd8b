#include "deeprtc/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "deeprtc/evaluation.hpp"

namespace deeprtc {

double confidence(const Posterior& post) { return post.probs.maxCoeff(); }

Eigen::Index argmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

Decision rtc_predict(const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Taxonomy& t, const NodeParams& params,
                     const FeatureMap& fmap, CompetenceLevel gamma) {
  const Eigen::VectorXd h = fmap.apply(x);
  Decision d;
  d.gamma_used = gamma.value();
  NodeId n = kRoot;
  while (!t.is_leaf(n)) {
    const auto post = forward_node_features(t, h, n, params);
    const Eigen::Index j = argmax(post.probs);
    const double s = post.probs(j);
    if (s < gamma.value()) {
      d.path.push_back({n, s, std::nullopt});
      d.exit_node = n;
      return d;
    }
    const NodeId next = post.labels[static_cast<std::size_t>(j)];
    d.path.push_back({n, s, next});
    n = next;
  }
  d.exit_node = n;
  d.at_leaf = true;
  return d;
}

Decision rtc_trace(const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Taxonomy& t, const NodeParams& params,
                   const FeatureMap& fmap) {
  return rtc_predict(x, t, params, fmap, CompetenceLevel(0.0));
}

Decision truncate_trace(const Decision& trace, const Taxonomy& t,
                        CompetenceLevel gamma) {
  Decision d;
  d.gamma_used = gamma.value();
  for (const auto& hop : trace.path) {
    if (hop.confidence < gamma.value() || !hop.chosen) {
      d.path.push_back({hop.node, hop.confidence, std::nullopt});
      d.exit_node = hop.node;
      return d;
    }
    d.path.push_back(hop);
  }
  d.exit_node = trace.exit_node;
  d.at_leaf = t.is_leaf(d.exit_node);
  return d;
}

Eigen::VectorXd flat_posterior(const Eigen::Ref<const Eigen::VectorXd>& x,
                               const NodeParams& params,
                               const FeatureMap& fmap) {
  const Eigen::VectorXd h = fmap.apply(x);
  return softmax(params.theta.transpose() * h);
}

Eigen::VectorXd node_masses(const Taxonomy& t,
                            const Eigen::Ref<const Eigen::VectorXd>& leaf_probs) {
  if (static_cast<std::size_t>(leaf_probs.size()) != t.num_leaves()) {
    throw ModelError("node_masses: posterior size differs from leaf count");
  }
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(t.node_count()));
  for (std::size_t j = 0; j < t.num_leaves(); ++j) {
    mass(static_cast<Eigen::Index>(t.leaf_ids()[j])) =
        leaf_probs(static_cast<Eigen::Index>(j));
  }
  // Children have larger ids than their parents.
  for (NodeId n = t.node_count(); n-- > 1;) {
    if (t.is_leaf(n)) continue;
    double s = 0.0;
    for (NodeId c : t.children(n)) s += mass(static_cast<Eigen::Index>(c));
    mass(static_cast<Eigen::Index>(n)) = s;
  }
  double root = 0.0;
  for (NodeId c : t.children(kRoot)) root += mass(static_cast<Eigen::Index>(c));
  mass(0) = root;
  return mass;
}

Decision rhc_from_posterior(const Taxonomy& t,
                            const Eigen::Ref<const Eigen::VectorXd>& leaf_probs,
                            CompetenceLevel gamma) {
  const Eigen::VectorXd mass = node_masses(t, leaf_probs);
  Decision d;
  d.gamma_used = gamma.value();
  NodeId n = kRoot;
  while (!t.is_leaf(n)) {
    const auto& kids = t.children(n);
    NodeId best = kids.front();
    for (NodeId c : kids) {
      if (mass(static_cast<Eigen::Index>(c)) >
          mass(static_cast<Eigen::Index>(best))) {
        best = c;
      }
    }
    const double s = mass(static_cast<Eigen::Index>(best));
    if (s < gamma.value()) {
      d.path.push_back({n, s, std::nullopt});
      d.exit_node = n;
      return d;
    }
    d.path.push_back({n, s, best});
    n = best;
  }
  d.exit_node = n;
  d.at_leaf = true;
  return d;
}

Decision rhc_predict(const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Taxonomy& t, const NodeParams& flat_params,
                     const FeatureMap& fmap, CompetenceLevel gamma) {
  return rhc_from_posterior(t, flat_posterior(x, flat_params, fmap), gamma);
}

Decision flat_reject_predict(const Eigen::Ref<const Eigen::VectorXd>& x,
                             const Taxonomy& t, const NodeParams& flat_params,
                             const FeatureMap& fmap, double threshold) {
  const Eigen::VectorXd probs = flat_posterior(x, flat_params, fmap);
  if (static_cast<std::size_t>(probs.size()) != t.num_leaves()) {
    throw ModelError("flat_reject_predict: parameters do not match leaf count");
  }
  const Eigen::Index j = argmax(probs);
  const double s = probs(j);
  Decision d;
  d.gamma_used = threshold;
  if (s >= threshold) {
    const NodeId leaf = t.leaf_ids()[static_cast<std::size_t>(j)];
    d.path.push_back({kRoot, s, leaf});
    d.exit_node = leaf;
    d.at_leaf = t.is_leaf(leaf);
  } else {
    d.path.push_back({kRoot, s, std::nullopt});
    d.exit_node = kRoot;
  }
  return d;
}

double threshold_for_rate(std::span<const double> scores, double rate) {
  if (scores.empty()) throw std::invalid_argument("threshold_for_rate: no scores");
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw std::invalid_argument("threshold_for_rate: rate must lie in [0, 1]");
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const auto m = sorted.size();
  const auto r = std::min(
      m, static_cast<std::size_t>(std::floor(rate * static_cast<double>(m) + 1e-9)));
  if (r == 0) return sorted.front();
  // Smallest value strictly above the r-th lowest score.
  return std::nextafter(sorted[r - 1], std::numeric_limits<double>::infinity());
}

std::vector<double> default_gamma_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(i / 20.0);
  return grid;
}

namespace {

Calibration select_gamma(const std::vector<std::vector<Decision>>& per_gamma,
                         std::span<const double> grid,
                         std::span<const NodeId> truths, const Taxonomy& t,
                         CpbVariant variant) {
  Calibration c;
  c.grid.assign(grid.begin(), grid.end());
  std::size_t best = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    c.scores.push_back(cpb(per_gamma[g], truths, t, variant));
    // Strict improvement only: ties keep the smaller gamma.
    if (c.scores[g] > c.scores[best] ||
        (c.scores[g] == c.scores[best] && grid[g] < grid[best])) {
      best = g;
    }
  }
  c.gamma = CompetenceLevel(grid[best]);
  return c;
}

void check_grid(const Dataset& val, std::span<const double> grid) {
  if (val.size() == 0) throw std::invalid_argument("calibration set is empty");
  if (grid.empty()) throw std::invalid_argument("gamma grid is empty");
  for (double g : grid) (void)CompetenceLevel(g);
}

}  // namespace

Calibration calibrate_gamma(const Dataset& val, const Taxonomy& t,
                            const NodeParams& params, const FeatureMap& fmap,
                            std::span<const double> grid, CpbVariant variant) {
  check_grid(val, grid);
  std::vector<Decision> traces;
  traces.reserve(val.size());
  for (Eigen::Index i = 0; i < val.features.rows(); ++i) {
    traces.push_back(rtc_trace(val.features.row(i).transpose(), t, params, fmap));
  }
  std::vector<std::vector<Decision>> per_gamma;
  for (double g : grid) {
    auto& ds = per_gamma.emplace_back();
    for (const auto& tr : traces) {
      ds.push_back(truncate_trace(tr, t, CompetenceLevel(g)));
    }
  }
  return select_gamma(per_gamma, grid, val.labels, t, variant);
}

Calibration calibrate_rhc_gamma(const Dataset& val, const Taxonomy& t,
                                const NodeParams& flat_params,
                                const FeatureMap& fmap,
                                std::span<const double> grid,
                                CpbVariant variant) {
  check_grid(val, grid);
  std::vector<Eigen::VectorXd> posts;
  for (Eigen::Index i = 0; i < val.features.rows(); ++i) {
    posts.push_back(flat_posterior(val.features.row(i).transpose(), flat_params, fmap));
  }
  std::vector<std::vector<Decision>> per_gamma;
  for (double g : grid) {
    auto& ds = per_gamma.emplace_back();
    for (const auto& p : posts) {
      ds.push_back(rhc_from_posterior(t, p, CompetenceLevel(g)));
    }
  }
  return select_gamma(per_gamma, grid, val.labels, t, variant);
}

std::vector<Decision> predict_rtc(const Dataset& data, const Taxonomy& t,
                                  const NodeParams& params,
                                  const FeatureMap& fmap,
                                  CompetenceLevel gamma) {
  std::vector<Decision> out;
  out.reserve(data.size());
  for (Eigen::Index i = 0; i < data.features.rows(); ++i) {
    out.push_back(rtc_predict(data.features.row(i).transpose(), t, params, fmap, gamma));
  }
  return out;
}

std::vector<Decision> predict_rhc(const Dataset& data, const Taxonomy& t,
                                  const NodeParams& flat_params,
                                  const FeatureMap& fmap,
                                  CompetenceLevel gamma) {
  std::vector<Decision> out;
  out.reserve(data.size());
  for (Eigen::Index i = 0; i < data.features.rows(); ++i) {
    out.push_back(
        rhc_predict(data.features.row(i).transpose(), t, flat_params, fmap, gamma));
  }
  return out;
}

std::vector<Decision> predict_flat_reject(const Dataset& data,
                                          const Taxonomy& t,
                                          const NodeParams& flat_params,
                                          const FeatureMap& fmap,
                                          double threshold) {
  std::vector<Decision> out;
  out.reserve(data.size());
  for (Eigen::Index i = 0; i < data.features.rows(); ++i) {
    out.push_back(flat_reject_predict(data.features.row(i).transpose(), t,
                                      flat_params, fmap, threshold));
  }
  return out;
}

void write_predictions(std::ostream& out, const Dataset& data,
                       const std::vector<Decision>& decisions,
                       const Taxonomy& t) {
  if (decisions.size() != data.size()) {
    throw std::invalid_argument("write_predictions: length mismatch");
  }
  out << "# id,exit,depth,at_leaf,confidence,truth\n";
  const auto old = out.precision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& d = decisions[i];
    out << data.ids[i] << ',' << t.name(d.exit_node) << ','
        << t.depth(d.exit_node) << ',' << (d.at_leaf ? 1 : 0) << ','
        << d.exit_confidence() << ',' << t.name(data.labels[i]) << '\n';
  }
  out.precision(old);
}

}  // namespace deeprtc
