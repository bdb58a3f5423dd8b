#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "deeprtc/training.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace deeprtc {
namespace {

Eigen::MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Loss written directly from the definitions: inherited weights for every
// cut member, cross-entropy against the member on the sample's root path.
double reference_sts(const Taxonomy& t, const Dataset& ds, const NodeParams& params,
                     const FeatureMap& fmap, const LabelSet& cut) {
  std::vector<Eigen::VectorXd> w;
  for (NodeId n : cut.members) w.push_back(oracle::inherited_weight(t, params.theta, n));
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto h = fmap.apply(ds.features.row(static_cast<Eigen::Index>(i)).transpose());
    const auto anc = oracle::ancestors_by_parent_chasing(t, ds.labels[i]);
    std::size_t target = cut.members.size();
    for (std::size_t j = 0; j < cut.members.size(); ++j) {
      if (cut.members[j] == ds.labels[i] || anc.count(cut.members[j])) target = j;
    }
    total += oracle::cross_entropy(w, h, target);
  }
  return total / static_cast<double>(ds.size());
}

double reference_ncl(const Taxonomy& t, const Dataset& ds, const NodeParams& params,
                     const FeatureMap& fmap) {
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto h = fmap.apply(ds.features.row(static_cast<Eigen::Index>(i)).transpose());
    const NodeId y = ds.labels[i];
    std::vector<NodeId> path{kRoot};
    for (NodeId a : oracle::ancestors_by_parent_chasing(t, y)) path.push_back(a);
    double s = 0.0;
    for (NodeId n : path) {
      std::vector<Eigen::VectorXd> w;
      std::size_t target = 0;
      for (std::size_t j = 0; j < t.nodes()[n].children.size(); ++j) {
        const NodeId c = t.nodes()[n].children[j];
        w.push_back(params.theta.col(static_cast<Eigen::Index>(c - 1)));
        if (c == y || oracle::ancestors_by_parent_chasing(t, y).count(c)) target = j;
      }
      s += oracle::cross_entropy(w, h, target);
    }
    total += s / static_cast<double>(path.size());
  }
  return total / static_cast<double>(ds.size());
}

Dataset one_sample(const Eigen::VectorXd& x, NodeId label) {
  Dataset ds;
  ds.features = x.transpose();
  ds.labels = {label};
  ds.ids = {"a"};
  return ds;
}

TEST(Losses, UniformPosteriorGivesLogCardinality) {
  const auto t = testing::uneven();
  const NodeParams zero{Eigen::MatrixXd::Zero(2, static_cast<Eigen::Index>(t.num_classification_nodes()))};
  const auto fmap = FeatureMap::identity(2);
  const Eigen::Vector2d x(1.0, -1.0);
  const auto ls = full_leaves(t);
  EXPECT_NEAR(xent_loss(t, x, t.id_of("u0"), ls, zero, fmap),
              std::log(static_cast<double>(ls.size())), 1e-14);
}

TEST(Losses, TwoClassHandValue) {
  const auto t = testing::flat_tree(2);
  NodeParams params{Eigen::MatrixXd::Zero(1, 2)};
  params.theta(0, 0) = 1.0;
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(1);
  const double v = xent_loss(t, x, t.id_of("l0"), full_leaves(t), params, FeatureMap::identity(1));
  EXPECT_NEAR(v, std::log(1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(v, 0.3133, 1e-4);
}

TEST(Losses, Figure2NodeConditionalAverage) {
  const auto t = testing::figure2();
  const NodeParams zero{Eigen::MatrixXd::Zero(2, 5)};
  const auto fmap = FeatureMap::identity(2);
  const auto ds = one_sample(Eigen::Vector2d(0.4, 0.1), 4);
  const auto rows = all_rows(ds);
  const Batch batch{ds, rows};
  EXPECT_NEAR(ncl_loss(t, batch, zero, fmap), 0.5 * (std::log(3.0) + std::log(2.0)), 1e-14);

  // Cut {n1, n2, n3}: the sample is supervised at n1.
  LabelSet cut;
  cut.members = {1, 2, 3};
  EXPECT_EQ(project_label(t, 4, cut), 1u);
  EXPECT_NEAR(sts_loss(t, batch, zero, fmap, cut), std::log(3.0), 1e-14);
}

TEST(Losses, MatchDirectDefinitions) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const auto t = testing::random_tree(rng, 3);
    const auto ds = testing::random_dataset(t, 12, 3, rng);
    NodeParams params{gaussian(rng, 3, static_cast<Eigen::Index>(t.num_classification_nodes()), 0.5)};
    const auto fmap = FeatureMap::identity(3);
    const auto rows = all_rows(ds);
    const Batch batch{ds, rows};
    const auto cut = sample_cut(t, 0.5, rng);
    EXPECT_NEAR(sts_loss(t, batch, params, fmap, cut), reference_sts(t, ds, params, fmap, cut), 1e-12);
    EXPECT_NEAR(ncl_loss(t, batch, params, fmap), reference_ncl(t, ds, params, fmap), 1e-12);
  }
}

TEST(Objective, BreakdownAddsUp) {
  std::mt19937_64 rng(3);
  const auto t = testing::uneven();
  const auto ds = testing::random_dataset(t, 9, 3, rng);
  NodeParams params{gaussian(rng, 3, static_cast<Eigen::Index>(t.num_classification_nodes()))};
  const auto fmap = FeatureMap::identity(3);
  const auto rows = all_rows(ds);
  const Batch batch{ds, rows};
  const auto cut = sample_cut(t, 0.5, rng);
  const auto obj = evaluate_objective(t, batch, params, fmap, 0.7, cut);
  EXPECT_NEAR(obj.loss.l_sts, sts_loss(t, batch, params, fmap, cut), 1e-12);
  EXPECT_NEAR(obj.loss.l_ncl, ncl_loss(t, batch, params, fmap), 1e-12);
  EXPECT_NEAR(obj.loss.l_total, obj.loss.l_ncl + 0.7 * obj.loss.l_sts, 1e-12);
  EXPECT_EQ(obj.loss.cut_used, cut);
}

// Central-difference check of the analytic gradient on random trees, batches,
// cuts and feature maps.
TEST(Objective, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> lam(0.0, 2.0);
  int instances = 0;
  for (int trial = 0; trial < 24; ++trial, ++instances) {
    const auto t = testing::random_tree(rng, 3);
    const int d = 3;
    const bool linear = trial % 2 == 1;
    const Eigen::Index k = linear ? 2 : d;
    const auto ds = testing::random_dataset(t, 6, d, rng);
    NodeParams params{gaussian(rng, k, static_cast<Eigen::Index>(t.num_classification_nodes()), 0.5)};
    FeatureMap fmap = linear ? FeatureMap::linear(gaussian(rng, d, k, 0.5), gaussian(rng, k, 1, 0.1))
                             : FeatureMap::identity(d);
    const double lambda = lam(rng);
    const auto cut = sample_cut(t, 0.5, rng);
    const auto rows = all_rows(ds);
    const Batch batch{ds, rows};
    auto f = [&] {
      return ncl_loss(t, batch, params, fmap) + lambda * sts_loss(t, batch, params, fmap, cut);
    };
    const auto obj = evaluate_objective(t, batch, params, fmap, lambda, cut);
    EXPECT_LT(oracle::max_relative_error(obj.grad.theta, oracle::central_differences(f, params.theta)),
              1e-4)
        << "trial " << trial;
    if (linear) {
      EXPECT_LT(oracle::max_relative_error(obj.grad.weight,
                                           oracle::central_differences(f, fmap.weight)),
                1e-4);
      Eigen::MatrixXd b = fmap.bias;
      auto fb = [&] {
        fmap.bias = b;
        return f();
      };
      const auto num_b = oracle::central_differences(fb, b);
      fmap.bias = b;
      EXPECT_LT(oracle::max_relative_error(obj.grad.bias, num_b), 1e-4);
    }
  }
  EXPECT_GE(instances, 20);
}

TEST(Objective, LambdaZeroIsNodeConditionalOnly) {
  std::mt19937_64 rng(6);
  const auto t = testing::uneven();
  const auto ds = testing::random_dataset(t, 8, 2, rng);
  NodeParams params{gaussian(rng, 2, static_cast<Eigen::Index>(t.num_classification_nodes()))};
  const auto fmap = FeatureMap::identity(2);
  const auto rows = all_rows(ds);
  const Batch batch{ds, rows};
  LabelSet cut = full_leaves(t);
  const auto obj = evaluate_objective(t, batch, params, fmap, 0.0, cut);
  auto f = [&] { return ncl_loss(t, batch, params, fmap); };
  EXPECT_LT(oracle::max_relative_error(obj.grad.theta, oracle::central_differences(f, params.theta)),
            1e-6);
  // Softmax gradients over one sibling group sum to zero.
  for (NodeId n = 0; n < t.node_count(); ++n) {
    if (t.is_leaf(n)) continue;
    Eigen::VectorXd s = Eigen::VectorXd::Zero(2);
    for (NodeId c : t.children(n)) s += obj.grad.theta.col(static_cast<Eigen::Index>(c - 1));
    EXPECT_LT(s.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Objective, SymmetricParametersCancel) {
  // Two mirrored samples with Theta = 0: their gradients cancel exactly.
  const auto t = testing::flat_tree(2);
  Dataset ds;
  ds.features.resize(2, 1);
  ds.features << 1.0, -1.0;
  ds.labels = {t.id_of("l0"), t.id_of("l0")};
  ds.ids = {"a", "b"};
  const auto rows = all_rows(ds);
  const auto obj = evaluate_objective(t, Batch{ds, rows}, NodeParams{Eigen::MatrixXd::Zero(1, 2)},
                                      FeatureMap::identity(1), 1.0, full_leaves(t));
  EXPECT_LT(obj.grad.theta.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SampledCut, UnbiasedForWeightedEnsemble) {
  std::mt19937_64 rng(77);
  const auto t = testing::uneven();
  const auto ds = testing::random_dataset(t, 10, 3, rng, 2.0);
  NodeParams params{gaussian(rng, 3, static_cast<Eigen::Index>(t.num_classification_nodes()))};
  const auto fmap = FeatureMap::identity(3);
  const auto rows = all_rows(ds);
  const Batch batch{ds, rows};
  for (double p : {0.3, 0.5, 0.8}) {
    const double expected = weighted_ensemble_loss(t, batch, params, fmap, p);
    Rng draw(5);
    double mean = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) mean += sts_loss(t, batch, params, fmap, sample_cut(t, p, draw));
    mean /= n;
    EXPECT_LT(std::abs(mean - expected) / expected, 0.01) << "p=" << p;
  }
  // At p = 0.5 every cut is equally likely only for trees where all cuts
  // have the same number of draws; binary_two_level is one of them.
  const auto t2 = testing::binary_two_level();
  const auto ds2 = testing::random_dataset(t2, 5, 2, rng);
  NodeParams p2{gaussian(rng, 2, 6)};
  const auto rows2 = all_rows(ds2);
  const Batch b2{ds2, rows2};
  EXPECT_NEAR(ensemble_loss(t2, b2, p2, FeatureMap::identity(2)),
              weighted_ensemble_loss(t2, b2, p2, FeatureMap::identity(2), 0.5), 1e-12);
}

TEST(Train, ConvexObjectiveDecreasesMonotonically) {
  std::mt19937_64 rng(4);
  const auto t = testing::uneven();
  const auto ds = testing::random_dataset(t, 60, 4, rng, 1.5);
  TrainConfig cfg;
  cfg.p = 1.0;  // the cut is always the full leaf set
  cfg.batch_size = ds.size();
  cfg.lr = 0.05;
  cfg.epochs = 40;
  const auto result = train(ds, t, cfg);
  ASSERT_EQ(result.log.size(), 40u);
  for (std::size_t e = 1; e < result.log.size(); ++e) {
    EXPECT_LE(result.log[e].l_total, result.log[e - 1].l_total + 1e-12) << "epoch " << e;
    EXPECT_NEAR(result.log[e].l_total, result.log[e].l_ncl + result.log[e].l_sts, 1e-12);
  }
  EXPECT_LT(result.log.back().l_total, 0.8 * result.log.front().l_total);
}

TEST(Train, SeedReproducible) {
  std::mt19937_64 rng(8);
  const auto t = testing::binary_two_level();
  const auto ds = testing::random_dataset(t, 40, 3, rng);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 7;
  cfg.seed = 12;
  cfg.feature_map = FeatureMapMode::kLinear;
  cfg.map_dim = 2;
  const auto a = train(ds, t, cfg);
  const auto b = train(ds, t, cfg);
  EXPECT_EQ(a.params.theta, b.params.theta);
  EXPECT_EQ(a.fmap.weight, b.fmap.weight);
  cfg.seed = 13;
  EXPECT_NE(train(ds, t, cfg).params.theta, a.params.theta);
}

TEST(Train, FlatTreeMatchesPlainSoftmaxRegression) {
  std::mt19937_64 rng(31);
  const auto t = testing::flat_tree(4);
  const auto ds = testing::random_dataset(t, 50, 3, rng);
  TrainConfig cfg;
  cfg.lambda = 0.0;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.lr = 0.2;
  cfg.seed = 5;
  const auto result = train(ds, t, cfg);
  std::vector<std::size_t> y;
  for (NodeId l : ds.labels) y.push_back(t.leaf_index(l));
  const auto init = init_params(cfg.seed, cfg.init_scale, 3, 4).theta;
  const auto ref = oracle::FlatSoftmaxReference::fit(ds.features, y, 4, init, cfg.seed,
                                                     cfg.epochs, cfg.batch_size, cfg.lr);
  double worst = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t j = 0; j < 3; ++j) {
      worst = std::max(worst, std::abs(result.params.theta(static_cast<Eigen::Index>(j),
                                                           static_cast<Eigen::Index>(c)) -
                                       ref.w[c][j]));
    }
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Train, DivergenceIsReported) {
  const auto t = testing::flat_tree(3);
  std::mt19937_64 rng(1);
  auto ds = testing::random_dataset(t, 12, 2, rng);
  ds.features *= 1e150;
  TrainConfig cfg;
  cfg.lr = 1e200;
  cfg.epochs = 5;
  EXPECT_THROW(train(ds, t, cfg), DivergenceError);
}

TEST(TrainConfig, KeyValueParsingAndValidation) {
  TrainConfig cfg;
  cfg.set("lr", "0.25");
  cfg.set("epochs", "7");
  cfg.set("feature_map", "linear");
  EXPECT_DOUBLE_EQ(cfg.lr, 0.25);
  EXPECT_EQ(cfg.epochs, 7);
  EXPECT_EQ(cfg.to_map().at("feature_map"), "linear");
  EXPECT_THROW(cfg.set("bogus", "1"), std::invalid_argument);
  EXPECT_THROW(cfg.set("lr", "abc"), std::invalid_argument);
  cfg.set("p", "1.5");
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  TrainConfig round;
  for (const auto& [k, v] : TrainConfig{}.to_map()) round.set(k, v);
  EXPECT_EQ(round.to_map(), TrainConfig{}.to_map());
}

}  // namespace
}  // namespace deeprtc
