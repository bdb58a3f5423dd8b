#include "deeprtc/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_map>

namespace deeprtc {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    auto field = line.substr(start, comma == std::string::npos
                                        ? std::string::npos
                                        : comma - start);
    auto b = field.find_first_not_of(" \t");
    auto e = field.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? std::string()
                                         : field.substr(b, e - b + 1));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(const std::string& s, std::size_t lineno) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty()) {
    throw DataError("line " + std::to_string(lineno) + ": '" + s +
                    "' is not a number");
  }
  return v;
}

void append_double(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

bool skip_line(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line.empty() || line.front() == '#';
}

}  // namespace

std::string to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::kTrain: return "train";
    case SplitTag::kVal: return "val";
    case SplitTag::kTest: return "test";
  }
  return "?";
}

SplitTag parse_split_tag(const std::string& s) {
  if (s == "train") return SplitTag::kTrain;
  if (s == "val") return SplitTag::kVal;
  if (s == "test") return SplitTag::kTest;
  throw DataError("unknown split tag '" + s + "'");
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), dim());
  if (split_tags) out.split_tags.emplace();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) =
        features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels.at(rows[i]));
    out.ids.push_back(ids.at(rows[i]));
    if (split_tags) out.split_tags->push_back(split_tags->at(rows[i]));
  }
  return out;
}

void validate_dataset(const Dataset& data, const Taxonomy& t) {
  if (data.size() == 0) throw DataError("dataset is empty");
  if (static_cast<std::size_t>(data.features.rows()) != data.size() ||
      data.ids.size() != data.size()) {
    throw DataError("dataset columns have inconsistent lengths");
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    NodeId y = data.labels[i];
    if (y >= t.node_count() || !t.is_leaf(y) || y == kRoot) {
      throw DataError("sample '" + data.ids[i] + "' is not labelled by a leaf");
    }
  }
  if (!data.features.allFinite()) {
    throw DataError("dataset contains non-finite features");
  }
}

Dataset read_dataset(std::istream& in, const Taxonomy& t) {
  std::vector<std::vector<double>> rows;
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (skip_line(line)) continue;
    auto fields = split_fields(line);
    if (fields.size() < 3) {
      throw DataError("line " + std::to_string(lineno) +
                      ": expected id,label,features...");
    }
    if (rows.empty()) {
      dim = fields.size() - 2;
    } else if (fields.size() - 2 != dim) {
      throw DataError("line " + std::to_string(lineno) + ": expected " +
                      std::to_string(dim) + " features, got " +
                      std::to_string(fields.size() - 2));
    }
    auto label = t.find(fields[1]);
    if (!label) {
      throw DataError("line " + std::to_string(lineno) + ": unknown label '" +
                      fields[1] + "'");
    }
    if (!t.is_leaf(*label)) {
      throw DataError("line " + std::to_string(lineno) + ": label '" +
                      fields[1] + "' is an internal node");
    }
    std::vector<double> x;
    x.reserve(dim);
    for (std::size_t j = 2; j < fields.size(); ++j) {
      x.push_back(parse_double(fields[j], lineno));
    }
    data.ids.push_back(fields[0]);
    data.labels.push_back(*label);
    rows.push_back(std::move(x));
  }
  data.features.resize(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rows[i][j];
    }
  }
  validate_dataset(data, t);
  return data;
}

Dataset load_dataset(const std::string& path, const Taxonomy& t) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  try {
    return read_dataset(in, t);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_dataset(std::ostream& out, const Dataset& data, const Taxonomy& t) {
  out << "# id,label";
  for (Eigen::Index j = 0; j < data.dim(); ++j) out << ",f" << j;
  out << '\n';
  std::string line;
  for (std::size_t i = 0; i < data.size(); ++i) {
    line.clear();
    line += data.ids[i];
    line += ',';
    line += t.name(data.labels[i]);
    for (Eigen::Index j = 0; j < data.dim(); ++j) {
      line += ',';
      append_double(line, data.features(static_cast<Eigen::Index>(i), j));
    }
    line += '\n';
    out << line;
  }
}

void save_dataset(const std::string& path, const Dataset& data,
                  const Taxonomy& t) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_dataset(out, data, t);
}

void load_splits(const std::string& path, Dataset& data) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::unordered_map<std::string, SplitTag> tags;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (skip_line(line)) continue;
    auto fields = split_fields(line);
    if (fields.size() != 2) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected id,tag");
    }
    tags[fields[0]] = parse_split_tag(fields[1]);
  }
  std::vector<SplitTag> out;
  out.reserve(data.size());
  for (const auto& id : data.ids) {
    auto it = tags.find(id);
    if (it == tags.end()) {
      throw DataError(path + ": no split tag for sample '" + id + "'");
    }
    out.push_back(it->second);
  }
  data.split_tags = std::move(out);
}

void save_splits(const std::string& path, const Dataset& data) {
  if (!data.split_tags) throw DataError("dataset has no split tags");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "# id,tag\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.ids[i] << ',' << to_string((*data.split_tags)[i]) << '\n';
  }
}

std::vector<std::size_t> split_counts(const Dataset& data, const Taxonomy& t) {
  if (!data.split_tags) throw DataError("split_counts: dataset has no tags");
  std::vector<std::size_t> counts(t.num_leaves(), 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if ((*data.split_tags)[i] == SplitTag::kTrain) {
      ++counts[t.leaf_index(data.labels[i])];
    }
  }
  return counts;
}

std::vector<std::size_t> class_counts(const Dataset& data, const Taxonomy& t) {
  std::vector<std::size_t> counts(t.num_leaves(), 0);
  for (NodeId y : data.labels) ++counts[t.leaf_index(y)];
  return counts;
}

std::vector<std::size_t> longtail_profile(std::size_t num_classes,
                                          std::size_t n_max,
                                          double imbalance_factor) {
  if (!(imbalance_factor > 0.0 && imbalance_factor <= 1.0)) {
    throw std::invalid_argument("imbalance factor must lie in (0, 1]");
  }
  std::vector<std::size_t> counts(num_classes, n_max);
  if (num_classes < 2) return counts;
  for (std::size_t r = 0; r < num_classes; ++r) {
    double frac = static_cast<double>(r) / static_cast<double>(num_classes - 1);
    double n = static_cast<double>(n_max) * std::pow(imbalance_factor, frac);
    counts[r] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n)));
  }
  return counts;
}

Dataset make_longtail(const Dataset& data, const Taxonomy& t,
                      double imbalance_factor, std::uint64_t seed,
                      std::optional<std::size_t> n_max) {
  const std::size_t num_classes = t.num_leaves();
  std::vector<std::vector<std::size_t>> rows_of(num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    rows_of[t.leaf_index(data.labels[i])].push_back(i);
  }
  std::size_t top = n_max.value_or(0);
  if (!n_max) {
    top = rows_of.front().size();
    for (const auto& r : rows_of) top = std::min(top, r.size());
  }
  if (top == 0) throw DataError("make_longtail: some class has no samples");

  Rng rng(seed);
  std::vector<std::size_t> rank(num_classes);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  std::shuffle(rank.begin(), rank.end(), rng);
  auto profile = longtail_profile(num_classes, top, imbalance_factor);

  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t want = profile[rank[c]];
    auto rows = rows_of[c];
    if (rows.size() < want) {
      throw DataError("make_longtail: class '" + t.name(t.leaf_ids()[c]) +
                      "' has " + std::to_string(rows.size()) +
                      " samples, profile needs " + std::to_string(want));
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    kept.insert(kept.end(), rows.begin(),
                rows.begin() + static_cast<std::ptrdiff_t>(want));
  }
  std::sort(kept.begin(), kept.end());
  return data.subset(kept);
}

void SyntheticConfig::validate() const {
  if (tree_shape.empty()) throw std::invalid_argument("tree_shape is empty");
  for (int b : tree_shape) {
    if (b < 2) throw std::invalid_argument("branching factors must be >= 2");
  }
  if (feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
  if (!(class_sep >= 0.0)) throw std::invalid_argument("class_sep must be >= 0");
  if (!(noise_sd >= 0.0)) throw std::invalid_argument("noise_sd must be >= 0");
  if (!(imbalance_factor > 0.0 && imbalance_factor <= 1.0)) {
    throw std::invalid_argument("imbalance_factor must lie in (0, 1]");
  }
  if (imbalance_factor * static_cast<double>(n_max) < 1.0) {
    throw std::invalid_argument("imbalance_factor * n_max must be >= 1");
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("val_fraction must lie in [0, 1)");
  }
}

Taxonomy synthetic_taxonomy(const std::vector<int>& tree_shape) {
  std::vector<std::pair<std::string, std::string>> edges;
  std::vector<std::string> level{"root"};
  for (int branching : tree_shape) {
    std::vector<std::string> next;
    for (const auto& parent : level) {
      for (int b = 0; b < branching; ++b) {
        std::string child =
            (parent == "root" ? std::string("c") : parent + "_") +
            std::to_string(b);
        edges.emplace_back(child, parent);
        next.push_back(std::move(child));
      }
    }
    level = std::move(next);
  }
  return Taxonomy::from_edges(edges);
}

SyntheticBenchmark synth_generate(const SyntheticConfig& cfg) {
  cfg.validate();
  SyntheticBenchmark out{synthetic_taxonomy(cfg.tree_shape), {}, {}, {}, {}, {}};
  const Taxonomy& t = out.taxonomy;
  const Eigen::Index d = cfg.feature_dim;
  Rng rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  out.node_means = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(t.node_count()), d);
  for (NodeId n = 1; n < t.node_count(); ++n) {
    const auto p = static_cast<Eigen::Index>(*t.parent(n));
    for (Eigen::Index j = 0; j < d; ++j) {
      out.node_means(static_cast<Eigen::Index>(n), j) =
          out.node_means(p, j) + cfg.class_sep * gauss(rng);
    }
  }

  const std::size_t num_classes = t.num_leaves();
  std::vector<std::size_t> rank(num_classes);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  std::shuffle(rank.begin(), rank.end(), rng);
  auto profile =
      longtail_profile(num_classes, cfg.n_max, cfg.imbalance_factor);

  struct Rows {
    std::vector<Eigen::VectorXd> x;
    std::vector<NodeId> y;
  } train, val, test;

  auto draw = [&](NodeId leaf) {
    Eigen::VectorXd x = out.node_means.row(static_cast<Eigen::Index>(leaf));
    for (Eigen::Index j = 0; j < d; ++j) x(j) += cfg.noise_sd * gauss(rng);
    return x;
  };

  for (std::size_t c = 0; c < num_classes; ++c) {
    NodeId leaf = t.leaf_ids()[c];
    std::size_t n_train = profile[rank[c]];
    auto n_val = static_cast<std::size_t>(
        std::floor(cfg.val_fraction * static_cast<double>(n_train)));
    n_val = std::min(n_val, n_train - 1);
    for (std::size_t i = 0; i < n_train; ++i) {
      auto& dst = i < n_train - n_val ? train : val;
      dst.x.push_back(draw(leaf));
      dst.y.push_back(leaf);
    }
    for (std::size_t i = 0; i < cfg.test_per_class; ++i) {
      test.x.push_back(draw(leaf));
      test.y.push_back(leaf);
    }
    if (n_train - n_val < 2) {
      out.warnings.push_back("class '" + t.name(leaf) + "' has " +
                             std::to_string(n_train - n_val) +
                             " training sample(s)");
    }
  }

  auto pack = [&](Rows& rows, SplitTag tag) {
    Dataset ds;
    ds.features.resize(static_cast<Eigen::Index>(rows.x.size()), d);
    for (std::size_t i = 0; i < rows.x.size(); ++i) {
      ds.features.row(static_cast<Eigen::Index>(i)) = rows.x[i].transpose();
      ds.ids.push_back(to_string(tag) + "_" + std::to_string(i));
    }
    ds.labels = std::move(rows.y);
    ds.split_tags = std::vector<SplitTag>(ds.labels.size(), tag);
    return ds;
  };
  out.train = pack(train, SplitTag::kTrain);
  out.val = pack(val, SplitTag::kVal);
  out.test = pack(test, SplitTag::kTest);
  return out;
}

}  // namespace deeprtc
