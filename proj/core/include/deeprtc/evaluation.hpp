// Correctly-predicted-bits and the other taxonomic metrics, with
// many/medium/few-shot breakdowns.
#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deeprtc/inference.hpp"
#include "deeprtc/taxonomy.hpp"

namespace deeprtc {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Information credit of one decision.
///
/// kLiteral:    1 - |Leaves(T_exit)| / |Leaves(T)|. A correct leaf scores
///              1 - 1/|Leaves(T)|.
/// kNormalized: 1 - (|Leaves(T_exit)| - 1) / (|Leaves(T)| - 1). A correct
///              leaf scores exactly 1.
/// Both are 0 for wrong exits and for root exits.
double sample_cpb(const Taxonomy& t, NodeId exit, NodeId truth,
                  CpbVariant variant);

double cpb(std::span<const Decision> decisions, std::span<const NodeId> truths,
           const Taxonomy& t, CpbVariant variant = CpbVariant::kLiteral);
double cpb_literal(std::span<const Decision> decisions,
                   std::span<const NodeId> truths, const Taxonomy& t);
double cpb_normalized(std::span<const Decision> decisions,
                      std::span<const NodeId> truths, const Taxonomy& t);

/// Fraction of exits on the truth's root path (root exits count as correct).
double hier_acc(std::span<const Decision> decisions,
                std::span<const NodeId> truths, const Taxonomy& t);

/// Fraction of exits equal to the truth leaf.
double leaf_acc(std::span<const Decision> decisions,
                std::span<const NodeId> truths);

double leaf_freq(std::span<const Decision> decisions);

/// Mean of depth(exit) / depth(truth), each term clipped to [0, 1].
double avg_depth(std::span<const Decision> decisions,
                 std::span<const NodeId> truths, const Taxonomy& t);

enum class Bucket { kMany, kMedium, kFew };
enum class SplitRule { kThirds, kThresholds };

std::string to_string(Bucket b);

struct PopularitySplit {
  std::vector<Bucket> assignment;  // aligned with t.leaf_ids()
  SplitRule rule = SplitRule::kThirds;
  // (low, high): few if count < low, many if count > high.
  std::optional<std::pair<std::size_t, std::size_t>> thresholds;

  Bucket of(const Taxonomy& t, NodeId leaf) const {
    return assignment.at(t.leaf_index(leaf));
  }
};

/// `train_counts` is aligned with t.leaf_ids(). Thirds: sorted by count
/// (descending, ties by name), the top floor(C/3) are many-shot, the bottom
/// floor(C/3) few-shot, the rest medium.
PopularitySplit popularity_split(
    const Taxonomy& t, std::span<const std::size_t> train_counts,
    SplitRule rule = SplitRule::kThirds,
    std::optional<std::pair<std::size_t, std::size_t>> thresholds = std::nullopt);

struct Metrics {
  double cpb = 0.0;  // literal variant
  double cpb_normalized = 0.0;
  double leaf_acc = 0.0;
  double hier_acc = 0.0;
  double depth = 0.0;
  double leaf_freq = 0.0;
  std::size_t n = 0;
};

struct MetricsReport {
  Metrics all;
  // Keys "many", "medium", "few"; empty buckets hold nullopt.
  std::map<std::string, std::optional<Metrics>> per_split;
  std::size_t n_samples = 0;
};

Metrics compute_metrics(std::span<const Decision> decisions,
                        std::span<const Decision> leaf_decisions,
                        std::span<const NodeId> truths, const Taxonomy& t);

/// leaf_acc is measured on `leaf_decisions` (gamma = 0 predictions) when
/// given, otherwise on `decisions`.
MetricsReport report(std::span<const Decision> decisions,
                     std::span<const NodeId> truths,
                     const PopularitySplit& split, const Taxonomy& t,
                     std::span<const Decision> leaf_decisions = {});

/// Flat "prefix.metric" -> value pairs ("all.cpb", "few.hier_acc", ...).
/// Absent buckets contribute no keys.
std::vector<std::pair<std::string, double>> flatten(const MetricsReport& r);

void write_report_kv(std::ostream& out, const MetricsReport& r);

}  // namespace deeprtc
