// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "deeprtc/deeprtc.hpp"
#include "support/fixtures.hpp"
#include "support/metric_cases.hpp"
#include "support/oracles.hpp"

using namespace deeprtc;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("violated: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int failures = 0;

void run(int id, const char* name, double budget_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.note(std::string("exception: ") + e.what());
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (secs > budget_s) {
    o.pass = false;
    o.note("runtime " + fmt("%.2f", secs) + "s over budget " + fmt("%.0f", budget_s) + "s");
  }
  if (!o.pass) ++failures;
  std::printf("%s  %d  %-28s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", id, name, secs,
              o.detail.c_str());
  std::fflush(stdout);
}

Eigen::MatrixXd gaussian(Rng& rng, Eigen::Index r, Eigen::Index c, double sd) {
  std::normal_distribution<double> g(0.0, sd);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

Outcome codeword_fidelity() {
  Outcome o;
  const auto t = testing::figure2();
  o.require(build_codeword(t, 1) == std::vector<std::uint8_t>{1, 0, 0, 0, 0}, "q(n1) = 10000");
  o.require(build_codeword(t, 4) == std::vector<std::uint8_t>{1, 0, 0, 1, 0}, "q(n4) = 10010");
  const auto cuts = enumerate_all_cuts(t);
  o.require(cuts.size() == 2, "two cuts");
  std::set<std::vector<NodeId>> got;
  for (const auto& wc : cuts) {
    auto m = wc.cut.members;
    std::sort(m.begin(), m.end());
    got.insert(m);
  }
  o.require(got == std::set<std::vector<NodeId>>{{1, 2, 3}, {2, 3, 4, 5}},
            "cuts {n1,n2,n3} and {n2,n3,n4,n5}");
  o.note("cuts=" + std::to_string(cuts.size()));
  return o;
}

Outcome gradient_check() {
  Outcome o;
  Rng rng(2718);
  std::uniform_real_distribution<double> lam(0.0, 2.0);
  double worst = 0.0;
  const int instances = 24;
  for (int i = 0; i < instances; ++i) {
    const auto t = testing::random_tree(rng, 3);
    const bool linear = i % 2 == 1;
    const int d = 4;
    const Eigen::Index k = linear ? 3 : d;
    const auto ds = testing::random_dataset(t, 8, d, rng);
    NodeParams params{gaussian(rng, k, static_cast<Eigen::Index>(t.num_classification_nodes()), 0.5)};
    FeatureMap fmap = linear ? FeatureMap::linear(gaussian(rng, d, k, 0.5), gaussian(rng, k, 1, 0.1))
                             : FeatureMap::identity(d);
    TrainConfig cfg;
    cfg.lambda = lam(rng);
    const auto cut = sample_cut(t, 0.5, rng);
    const auto rows = all_rows(ds);
    const Batch batch{ds, rows};
    const auto g = grad_total(t, batch, params, fmap, cfg, cut);
    auto f = [&] {
      return ncl_loss(t, batch, params, fmap) + cfg.lambda * sts_loss(t, batch, params, fmap, cut);
    };
    worst = std::max(worst, oracle::max_relative_error(g.theta, oracle::central_differences(f, params.theta)));
    if (linear) {
      worst = std::max(worst, oracle::max_relative_error(g.weight, oracle::central_differences(f, fmap.weight)));
      Eigen::MatrixXd b = fmap.bias;
      auto fb = [&] {
        fmap.bias = b;
        return f();
      };
      const auto num = oracle::central_differences(fb, b);
      fmap.bias = b;
      worst = std::max(worst, oracle::max_relative_error(g.bias, num));
    }
  }
  o.require(worst < 1e-4, "max relative error < 1e-4");
  o.note("instances=" + std::to_string(instances) + " max_rel_err=" + fmt("%.2e", worst));
  return o;
}

Outcome ensemble_oracle() {
  Outcome o;
  Rng rng(31);
  struct Case {
    std::string name;
    Taxonomy t;
    double p;
  };
  std::vector<Case> cases{{"figure2", testing::figure2(), 0.5},
                          {"binary", testing::binary_two_level(), 0.5},
                          {"uneven", testing::uneven(), 0.3},
                          {"synth(2,2,2)", synthetic_taxonomy({2, 2, 2}), 0.5},
                          {"synth(4,4)", synthetic_taxonomy({4, 4}), 0.7}};
  double worst = 0.0;
  for (const auto& c : cases) {
    o.require(count_cuts(c.t) <= 50, c.name + " has <= 50 cuts");
    const auto ds = testing::random_dataset(c.t, 16, 3, rng, 2.0);
    NodeParams params{gaussian(rng, 3, static_cast<Eigen::Index>(c.t.num_classification_nodes()), 1.0)};
    const auto fmap = FeatureMap::identity(3);
    const auto rows = all_rows(ds);
    const Batch batch{ds, rows};
    const double exact = weighted_ensemble_loss(c.t, batch, params, fmap, c.p);
    Rng draw(7);
    double mean = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) mean += sts_loss(c.t, batch, params, fmap, sample_cut(c.t, c.p, draw));
    mean /= n;
    const double rel = std::abs(mean - exact) / exact;
    worst = std::max(worst, rel);
    o.require(rel < 0.01, c.name + " within 1%");
  }
  o.note("trees=" + std::to_string(cases.size()) + " samples=1e5 max_rel_dev=" + fmt("%.2e", worst));
  return o;
}

Outcome flat_reduction() {
  Outcome o;
  Rng rng(404);
  const auto t = testing::flat_tree(6);
  const auto train_set = testing::random_dataset(t, 240, 5, rng, 1.2);
  const auto test_set = testing::random_dataset(t, 300, 5, rng, 1.2);
  TrainConfig cfg;
  cfg.lambda = 0.0;
  cfg.epochs = 15;
  cfg.batch_size = 16;
  cfg.lr = 0.1;
  cfg.seed = 17;
  const auto model = train(train_set, t, cfg);

  std::vector<std::size_t> y;
  for (NodeId l : train_set.labels) y.push_back(t.leaf_index(l));
  const auto init = init_params(cfg.seed, cfg.init_scale, 5, 6).theta;
  const auto ref = oracle::FlatSoftmaxReference::fit(train_set.features, y, 6, init, cfg.seed,
                                                     cfg.epochs, cfg.batch_size, cfg.lr);
  double param_diff = 0.0;
  for (std::size_t c = 0; c < 6; ++c) {
    for (std::size_t j = 0; j < 5; ++j) {
      param_diff = std::max(param_diff, std::abs(model.params.theta(static_cast<Eigen::Index>(j),
                                                                    static_cast<Eigen::Index>(c)) -
                                                 ref.w[c][j]));
    }
  }
  o.require(param_diff < 1e-9, "parameters within 1e-9");

  const auto decisions = predict_rtc(test_set, t, model.params, model.fmap, CompetenceLevel(0.0));
  double prob_diff = 0.0;
  std::size_t mismatched = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const Eigen::VectorXd x = test_set.features.row(static_cast<Eigen::Index>(i)).transpose();
    const auto mine = forward_node(t, x, kRoot, model.params, model.fmap).probs;
    const auto theirs = ref.probabilities(x);
    for (std::size_t c = 0; c < 6; ++c) {
      prob_diff = std::max(prob_diff, std::abs(mine(static_cast<Eigen::Index>(c)) - theirs[c]));
    }
    if (decisions[i].exit_node != t.leaf_ids()[ref.predict(x)]) ++mismatched;
  }
  o.require(prob_diff < 1e-9, "posteriors within 1e-9");
  o.require(mismatched == 0, "identical predictions");
  const double acc = leaf_acc(decisions, test_set.labels);
  const double c_norm = cpb_normalized(decisions, test_set.labels, t);
  o.require(c_norm == acc, "normalized CPB == leaf accuracy");
  o.note("param_diff=" + fmt("%.1e", param_diff) + " prob_diff=" + fmt("%.1e", prob_diff) +
         " acc=" + fmt("%.4f", acc) + " cpb_norm=" + fmt("%.4f", c_norm));
  return o;
}

Outcome rejection_semantics() {
  Outcome o;
  SyntheticConfig sc;
  sc.tree_shape = {5, 5};
  sc.feature_dim = 16;
  sc.n_max = 120;
  sc.imbalance_factor = 0.05;
  sc.test_per_class = 40;  // 25 leaves -> 1000 test samples
  sc.seed = 3;
  const auto b = synth_generate(sc);
  const auto& t = b.taxonomy;
  o.require(b.test.size() == 1000, "1000 test samples");
  TrainConfig cfg;
  cfg.epochs = 10;
  const auto model = train(b.train, t, cfg);
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);

  std::size_t violations = 0;
  for (Eigen::Index i = 0; i < b.test.features.rows(); ++i) {
    const Eigen::VectorXd x = b.test.features.row(i).transpose();
    NodeId prev = kRoot;
    bool first = true;
    for (double g : grid) {
      const auto d = rtc_predict(x, t, model.params, model.fmap, CompetenceLevel(g));
      if (!first && !(t.is_on_path(d.exit_node, prev) && t.depth(d.exit_node) <= t.depth(prev))) {
        ++violations;
      }
      prev = d.exit_node;
      first = false;
    }
  }
  o.require(violations == 0, "nested exits for every sample");
  const auto leaves = predict_rtc(b.test, t, model.params, model.fmap, CompetenceLevel(0.0));
  const double lf = leaf_freq(leaves);
  const double depth = avg_depth(leaves, b.test.labels, t);
  o.require(lf == 1.0, "leaf_freq = 1 at gamma 0");
  o.require(depth == 1.0, "depth = 1 at gamma 0");
  o.note("samples=" + std::to_string(b.test.size()) + " violations=" + std::to_string(violations) +
         " leaf_freq=" + fmt("%.3f", lf) + " depth=" + fmt("%.3f", depth));
  return o;
}

Outcome metric_oracle() {
  Outcome o;
  const auto t = testing::figure2();
  std::vector<Decision> d;
  std::vector<NodeId> y;
  for (const auto& c : testing::kFigure2Cases) {
    const std::vector<Decision> one{testing::exit_at(t, c.exit)};
    const std::vector<NodeId> truth{c.truth};
    o.require(cpb_literal(one, truth, t) == c.cpb_literal, "per-pair cpb");
    o.require(hier_acc(one, truth, t) == (c.on_path ? 1.0 : 0.0), "per-pair hier_acc");
    o.require(leaf_acc(one, truth) == (c.exact ? 1.0 : 0.0), "per-pair leaf_acc");
    o.require(avg_depth(one, truth, t) == c.depth, "per-pair depth");
    d.push_back(one.front());
    y.push_back(c.truth);
  }
  o.require(cpb_literal(d, y, t) == testing::kFigure2CpbMean, "mean cpb");
  o.require(hier_acc(d, y, t) == testing::kFigure2HierMean, "mean hier_acc");
  o.require(leaf_acc(d, y) == testing::kFigure2LeafMean, "mean leaf_acc");
  o.require(avg_depth(d, y, t) == testing::kFigure2DepthMean, "mean depth");
  o.require(sample_cpb(t, 1, 4, CpbVariant::kLiteral) == 0.5, "mid-tree cpb 0.5");
  const std::vector<Decision> roots(4, testing::exit_at(t, kRoot));
  const std::vector<NodeId> all{2, 3, 4, 5};
  o.require(cpb_literal(roots, all, t) == 0.0, "all-root cpb 0");
  o.note("pairs=" + std::to_string(d.size()) + " cpb=" + fmt("%.4f", cpb_literal(d, y, t)) +
         " hier=" + fmt("%.2f", hier_acc(d, y, t)) + " leaf=" + fmt("%.2f", leaf_acc(d, y)) +
         " depth=" + fmt("%.2f", avg_depth(d, y, t)));
  return o;
}

// One seed of the long-tailed synthetic benchmark with every method trained.
struct SeedRun {
  SyntheticBenchmark bench;
  TrainResult deep;
  TrainResult flat;
  PopularitySplit split;
};

SeedRun run_seed(std::uint64_t seed) {
  SyntheticConfig sc;
  sc.tree_shape = {4, 4, 4};
  sc.feature_dim = 32;
  sc.imbalance_factor = 0.01;
  sc.seed = seed;
  SeedRun r{synth_generate(sc), {}, {}, {}};
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.lr = 0.01;
  r.deep = train(r.bench.train, r.bench.taxonomy, cfg);
  r.flat = train_flat(r.bench.train, r.bench.taxonomy, cfg);
  r.split = popularity_split(r.bench.taxonomy, split_counts(r.bench.train, r.bench.taxonomy));
  return r;
}

std::vector<SeedRun>& seed_runs() {
  static std::vector<SeedRun> runs;
  return runs;
}

Outcome table1_direction() {
  Outcome o;
  for (std::uint64_t seed : {0, 1, 2}) seed_runs().push_back(run_seed(seed));
  for (std::size_t i = 0; i < seed_runs().size(); ++i) {
    const auto& r = seed_runs()[i];
    const auto& t = r.bench.taxonomy;
    const auto& test = r.bench.test;
    const auto cal = calibrate_gamma(r.bench.val, t, r.deep.params, r.deep.fmap, default_gamma_grid());
    const auto deep = predict_rtc(test, t, r.deep.params, r.deep.fmap, cal.gamma);
    const auto deep_leaf = predict_rtc(test, t, r.deep.params, r.deep.fmap, CompetenceLevel(0.0));
    const auto flat = predict_flat_reject(test, t, r.flat.params, r.flat.fmap, 0.0);
    const auto m_deep = report(deep, test.labels, r.split, t, deep_leaf).all;
    const auto m_flat = report(flat, test.labels, r.split, t).all;
    const std::string s = "seed " + std::to_string(i);
    o.require(m_deep.cpb > m_flat.cpb, s + " deep cpb > flat cpb");
    o.require(m_deep.hier_acc > m_deep.leaf_acc, s + " hier_acc > leaf_acc");
    o.note(s + ": gamma=" + fmt("%.2f", cal.gamma.value()) + " cpb " + fmt("%.3f", m_deep.cpb) +
           " vs flat " + fmt("%.3f", m_flat.cpb) + ", hier " + fmt("%.3f", m_deep.hier_acc) +
           " leaf " + fmt("%.3f", m_deep.leaf_acc));
  }
  return o;
}

Outcome table5_direction() {
  Outcome o;
  if (seed_runs().empty()) {
    for (std::uint64_t seed : {0, 1, 2}) seed_runs().push_back(run_seed(seed));
  }
  for (std::size_t s = 0; s < seed_runs().size(); ++s) {
    const auto& r = seed_runs()[s];
    const auto& t = r.bench.taxonomy;
    const auto& test = r.bench.test;
    std::vector<double> root_conf, flat_conf;
    std::vector<Decision> traces;
    for (Eigen::Index i = 0; i < test.features.rows(); ++i) {
      const Eigen::VectorXd x = test.features.row(i).transpose();
      traces.push_back(rtc_trace(x, t, r.deep.params, r.deep.fmap));
      root_conf.push_back(traces.back().path.front().confidence);
      flat_conf.push_back(flat_posterior(x, r.flat.params, r.flat.fmap).maxCoeff());
    }
    std::string line = "seed " + std::to_string(s) + ":";
    for (double rate : {0.05, 0.10, 0.20}) {
      const CompetenceLevel gamma(std::min(1.0, threshold_for_rate(root_conf, rate)));
      std::vector<Decision> deep;
      for (const auto& tr : traces) deep.push_back(truncate_trace(tr, t, gamma));
      const auto rp = predict_flat_reject(test, t, r.flat.params, r.flat.fmap,
                                          threshold_for_rate(flat_conf, rate));
      const auto deep_few = report(deep, test.labels, r.split, t).per_split.at("few");
      const auto rp_few = report(rp, test.labels, r.split, t).per_split.at("few");
      if (!deep_few || !rp_few) {
        o.require(false, "few-shot bucket populated");
        continue;
      }
      const auto pct = std::to_string(static_cast<int>(std::lround(rate * 100)));
      o.require(deep_few->cpb >= rp_few->cpb,
                "seed " + std::to_string(s) + " rate " + pct + "% few-shot cpb");
      line += " " + pct + "% " + fmt("%.3f", deep_few->cpb) + "/" + fmt("%.3f", rp_few->cpb);
    }
    o.note(line + " (deep/rp)");
  }
  return o;
}

Outcome split_profile() {
  Outcome o;
  const auto t = testing::flat_tree(100);
  Dataset ds;
  ds.features = Eigen::MatrixXd::Zero(100 * 300, 1);
  for (NodeId leaf : t.leaf_ids()) {
    for (int k = 0; k < 300; ++k) {
      ds.labels.push_back(leaf);
      ds.ids.push_back("s" + std::to_string(ds.ids.size()));
    }
  }
  const auto lt = make_longtail(ds, t, 0.01, 11);
  const auto counts = class_counts(lt, t);
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  const double ratio = static_cast<double>(*hi) / static_cast<double>(*lo);
  o.require(std::abs(ratio - 100.0) <= 100.0 * 0.5 / static_cast<double>(*lo) + 1e-12,
            "max/min ratio 100 within rounding");

  std::vector<std::string> names;
  for (int i = 0; i < 99; ++i) names.push_back("k" + std::to_string(1000 + i));
  const auto t99 = Taxonomy::flat(names);
  Rng rng(5);
  std::uniform_int_distribution<std::size_t> u(1, 1000);
  std::vector<std::size_t> c99(99);
  for (auto& c : c99) c = u(rng);
  const auto split = popularity_split(t99, c99);
  const auto n_many = std::count(split.assignment.begin(), split.assignment.end(), Bucket::kMany);
  const auto n_med = std::count(split.assignment.begin(), split.assignment.end(), Bucket::kMedium);
  const auto n_few = std::count(split.assignment.begin(), split.assignment.end(), Bucket::kFew);
  o.require(n_many == 33 && n_med == 33 && n_few == 33, "33/33/33 thirds");
  o.note("counts " + std::to_string(*hi) + "/" + std::to_string(*lo) + " ratio=" +
         fmt("%.2f", ratio) + " thirds=" + std::to_string(n_many) + "/" + std::to_string(n_med) +
         "/" + std::to_string(n_few));
  return o;
}

}  // namespace

int main() {
  run(1, "codeword fidelity", 1.0, codeword_fidelity);
  run(2, "gradient correctness", 30.0, gradient_check);
  run(3, "ensemble oracle", 60.0, ensemble_oracle);
  run(4, "flat reduction", 60.0, flat_reduction);
  run(5, "rejection semantics", 120.0, rejection_semantics);
  run(6, "metric oracle", 1.0, metric_oracle);
  run(7, "long-tail cpb direction", 600.0, table1_direction);
  run(8, "few-shot rejection direction", 600.0, table5_direction);
  run(9, "split and profile checks", 10.0, split_profile);
  std::printf("%s: %d of 9 criteria failed\n", failures == 0 ? "OK" : "FAILED", failures);
  return failures == 0 ? 0 : 1;
}
