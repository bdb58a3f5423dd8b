#include "deeprtc/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

namespace deeprtc {

namespace {

void check_aligned(std::size_t a, std::size_t b) {
  if (a != b) {
    throw EvaluationError("decisions (" + std::to_string(a) +
                          ") and truths (" + std::to_string(b) +
                          ") differ in length");
  }
}

template <class F>
double mean_of(std::size_t n, F&& term) {
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += term(i);
  return s / static_cast<double>(n);
}

}  // namespace

double sample_cpb(const Taxonomy& t, NodeId exit, NodeId truth,
                  CpbVariant variant) {
  if (!t.is_on_path(exit, truth)) return 0.0;
  const auto below = static_cast<double>(t.leaves_below(exit));
  const auto total = static_cast<double>(t.num_leaves());
  if (variant == CpbVariant::kLiteral) return 1.0 - below / total;
  return 1.0 - (below - 1.0) / (total - 1.0);
}

double cpb(std::span<const Decision> decisions, std::span<const NodeId> truths,
           const Taxonomy& t, CpbVariant variant) {
  check_aligned(decisions.size(), truths.size());
  return mean_of(decisions.size(), [&](std::size_t i) {
    return sample_cpb(t, decisions[i].exit_node, truths[i], variant);
  });
}

double cpb_literal(std::span<const Decision> decisions,
                   std::span<const NodeId> truths, const Taxonomy& t) {
  return cpb(decisions, truths, t, CpbVariant::kLiteral);
}

double cpb_normalized(std::span<const Decision> decisions,
                      std::span<const NodeId> truths, const Taxonomy& t) {
  return cpb(decisions, truths, t, CpbVariant::kNormalized);
}

double hier_acc(std::span<const Decision> decisions,
                std::span<const NodeId> truths, const Taxonomy& t) {
  check_aligned(decisions.size(), truths.size());
  return mean_of(decisions.size(), [&](std::size_t i) {
    return t.is_on_path(decisions[i].exit_node, truths[i]) ? 1.0 : 0.0;
  });
}

double leaf_acc(std::span<const Decision> decisions,
                std::span<const NodeId> truths) {
  check_aligned(decisions.size(), truths.size());
  return mean_of(decisions.size(), [&](std::size_t i) {
    return decisions[i].exit_node == truths[i] ? 1.0 : 0.0;
  });
}

double leaf_freq(std::span<const Decision> decisions) {
  return mean_of(decisions.size(), [&](std::size_t i) {
    return decisions[i].at_leaf ? 1.0 : 0.0;
  });
}

double avg_depth(std::span<const Decision> decisions,
                 std::span<const NodeId> truths, const Taxonomy& t) {
  check_aligned(decisions.size(), truths.size());
  return mean_of(decisions.size(), [&](std::size_t i) {
    const double ratio = static_cast<double>(t.depth(decisions[i].exit_node)) /
                         static_cast<double>(t.depth(truths[i]));
    return std::clamp(ratio, 0.0, 1.0);
  });
}

std::string to_string(Bucket b) {
  switch (b) {
    case Bucket::kMany: return "many";
    case Bucket::kMedium: return "medium";
    case Bucket::kFew: return "few";
  }
  return "?";
}

PopularitySplit popularity_split(
    const Taxonomy& t, std::span<const std::size_t> train_counts,
    SplitRule rule,
    std::optional<std::pair<std::size_t, std::size_t>> thresholds) {
  if (train_counts.empty()) throw EvaluationError("popularity_split: no counts");
  if (train_counts.size() != t.num_leaves()) {
    throw EvaluationError("popularity_split: counts do not cover every leaf");
  }
  PopularitySplit split;
  split.rule = rule;
  split.assignment.assign(train_counts.size(), Bucket::kMedium);

  if (rule == SplitRule::kThresholds) {
    if (!thresholds || thresholds->first > thresholds->second) {
      throw EvaluationError("popularity_split: thresholds need low <= high");
    }
    split.thresholds = thresholds;
    for (std::size_t i = 0; i < train_counts.size(); ++i) {
      if (train_counts[i] < thresholds->first) {
        split.assignment[i] = Bucket::kFew;
      } else if (train_counts[i] > thresholds->second) {
        split.assignment[i] = Bucket::kMany;
      }
    }
    return split;
  }

  std::vector<std::size_t> order(train_counts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // leaf_ids() is already name-sorted, so index order is name order.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return train_counts[a] > train_counts[b];
  });
  const std::size_t third = order.size() / 3;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (r < third) {
      split.assignment[order[r]] = Bucket::kMany;
    } else if (r >= order.size() - third) {
      split.assignment[order[r]] = Bucket::kFew;
    }
  }
  return split;
}

Metrics compute_metrics(std::span<const Decision> decisions,
                        std::span<const Decision> leaf_decisions,
                        std::span<const NodeId> truths, const Taxonomy& t) {
  Metrics m;
  m.n = decisions.size();
  m.cpb = cpb_literal(decisions, truths, t);
  m.cpb_normalized = cpb_normalized(decisions, truths, t);
  m.hier_acc = hier_acc(decisions, truths, t);
  m.leaf_acc = leaf_acc(leaf_decisions.empty() ? decisions : leaf_decisions,
                        truths);
  m.depth = avg_depth(decisions, truths, t);
  m.leaf_freq = leaf_freq(decisions);
  return m;
}

MetricsReport report(std::span<const Decision> decisions,
                     std::span<const NodeId> truths,
                     const PopularitySplit& split, const Taxonomy& t,
                     std::span<const Decision> leaf_decisions) {
  check_aligned(decisions.size(), truths.size());
  if (!leaf_decisions.empty()) {
    check_aligned(leaf_decisions.size(), truths.size());
  }
  MetricsReport r;
  r.n_samples = decisions.size();
  r.all = compute_metrics(decisions, leaf_decisions, truths, t);

  for (Bucket b : {Bucket::kMany, Bucket::kMedium, Bucket::kFew}) {
    std::vector<Decision> d, ld;
    std::vector<NodeId> y;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
      if (split.of(t, truths[i]) != b) continue;
      d.push_back(decisions[i]);
      if (!leaf_decisions.empty()) ld.push_back(leaf_decisions[i]);
      y.push_back(truths[i]);
    }
    auto& slot = r.per_split[to_string(b)];
    if (!d.empty()) slot = compute_metrics(d, ld, y, t);
  }
  return r;
}

std::vector<std::pair<std::string, double>> flatten(const MetricsReport& r) {
  std::vector<std::pair<std::string, double>> out;
  auto add = [&](const std::string& prefix, const Metrics& m) {
    out.emplace_back(prefix + ".cpb", m.cpb);
    out.emplace_back(prefix + ".cpb_normalized", m.cpb_normalized);
    out.emplace_back(prefix + ".leaf_acc", m.leaf_acc);
    out.emplace_back(prefix + ".hier_acc", m.hier_acc);
    out.emplace_back(prefix + ".depth", m.depth);
    out.emplace_back(prefix + ".leaf_freq", m.leaf_freq);
    out.emplace_back(prefix + ".n", static_cast<double>(m.n));
  };
  add("all", r.all);
  for (const char* key : {"many", "medium", "few"}) {
    auto it = r.per_split.find(key);
    if (it != r.per_split.end() && it->second) add(key, *it->second);
  }
  return out;
}

void write_report_kv(std::ostream& out, const MetricsReport& r) {
  const auto old = out.precision(10);
  out << "n_samples=" << r.n_samples << '\n';
  for (const auto& [key, value] : flatten(r)) out << key << '=' << value << '\n';
  out.precision(old);
}

}  // namespace deeprtc
