#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "deeprtc/model.hpp"

namespace deeprtc {

namespace {

constexpr const char* kMagic = "deeprtc-checkpoint";
constexpr int kVersion = 1;

void write_row(std::ostream& out, const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  char buf[64];
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    std::snprintf(buf, sizeof(buf), "%a", v(j));
    if (j) out << ' ';
    out << buf;
  }
  out << '\n';
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::string line() {
    std::string s;
    if (!std::getline(in_, s)) throw ModelError("checkpoint: unexpected end");
    ++lineno_;
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
  }

  // Reads "<key> <rest>" and returns rest.
  std::string field(const std::string& key) {
    auto s = line();
    if (s.rfind(key + " ", 0) != 0) error("expected '" + key + "'");
    return s.substr(key.size() + 1);
  }

  long integer(const std::string& key) {
    auto v = field(key);
    char* end = nullptr;
    long n = std::strtol(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0') error("bad integer for " + key);
    return n;
  }

  Eigen::RowVectorXd row(Eigen::Index n) {
    auto s = line();
    Eigen::RowVectorXd v(n);
    const char* p = s.c_str();
    for (Eigen::Index j = 0; j < n; ++j) {
      char* end = nullptr;
      v(j) = std::strtod(p, &end);
      if (end == p) error("expected " + std::to_string(n) + " numbers");
      p = end;
    }
    while (*p == ' ') ++p;
    if (*p != '\0') error("trailing data");
    return v;
  }

  [[noreturn]] void error(const std::string& what) const {
    throw ModelError("checkpoint line " + std::to_string(lineno_) + ": " +
                     what);
  }

 private:
  std::istream& in_;
  std::size_t lineno_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(const Taxonomy& t, NodeParams params,
                           FeatureMap fmap, std::string kind) {
  check_compatible(t, params, fmap);
  Checkpoint c;
  for (NodeId n = 1; n < t.node_count(); ++n) c.node_names.push_back(t.name(n));
  c.params = std::move(params);
  c.fmap = std::move(fmap);
  c.kind = std::move(kind);
  return c;
}

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  out << kMagic << ' ' << kVersion << '\n';
  out << "kind " << c.kind << '\n';
  out << "k " << c.params.k() << '\n';
  out << "nodes " << c.node_names.size() << '\n';
  for (const auto& name : c.node_names) out << "node " << name << '\n';
  out << "theta " << c.params.theta.rows() << ' ' << c.params.theta.cols()
      << '\n';
  for (Eigen::Index r = 0; r < c.params.theta.rows(); ++r) {
    write_row(out, c.params.theta.row(r));
  }
  if (c.fmap.mode == FeatureMapMode::kIdentity) {
    out << "feature_map identity " << c.fmap.input_dim << '\n';
  } else {
    out << "feature_map linear " << c.fmap.weight.rows() << ' '
        << c.fmap.weight.cols() << '\n';
    for (Eigen::Index r = 0; r < c.fmap.weight.rows(); ++r) {
      write_row(out, c.fmap.weight.row(r));
    }
    write_row(out, c.fmap.bias.transpose());
  }
  out << "end\n";
}

Checkpoint read_checkpoint(std::istream& in) {
  Reader rd(in);
  Checkpoint c;
  auto version = rd.field(kMagic);
  if (version != std::to_string(kVersion)) {
    rd.error("unsupported version '" + version + "'");
  }
  c.kind = rd.field("kind");
  const long k = rd.integer("k");
  const long n = rd.integer("nodes");
  if (k < 1 || n < 1) rd.error("k and nodes must be positive");
  for (long i = 0; i < n; ++i) c.node_names.push_back(rd.field("node"));

  std::istringstream dims(rd.field("theta"));
  long rows = 0, cols = 0;
  if (!(dims >> rows >> cols) || rows != k || cols != n) {
    rd.error("theta shape disagrees with header");
  }
  c.params.theta.resize(k, n);
  for (long r = 0; r < k; ++r) c.params.theta.row(r) = rd.row(n);

  std::istringstream fm(rd.field("feature_map"));
  std::string mode;
  fm >> mode;
  if (mode == "identity") {
    long d = 0;
    if (!(fm >> d) || d != k) rd.error("identity feature map must have d = k");
    c.fmap = FeatureMap::identity(d);
  } else if (mode == "linear") {
    long d = 0, kk = 0;
    if (!(fm >> d >> kk) || kk != k || d < 1) rd.error("bad linear map shape");
    Eigen::MatrixXd w(d, kk);
    for (long r = 0; r < d; ++r) w.row(r) = rd.row(kk);
    Eigen::VectorXd b = rd.row(kk).transpose();
    c.fmap = FeatureMap::linear(std::move(w), std::move(b));
  } else {
    rd.error("unknown feature map mode '" + mode + "'");
  }
  if (rd.line() != "end") rd.error("expected 'end'");
  if (!c.params.theta.allFinite()) rd.error("non-finite parameters");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot write '" + path + "'");
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open '" + path + "'");
  return read_checkpoint(in);
}

void check_checkpoint(const Checkpoint& ckpt, const Taxonomy& t) {
  if (ckpt.node_names.size() != t.num_classification_nodes()) {
    throw ModelError("checkpoint has " + std::to_string(ckpt.node_names.size()) +
                     " nodes, taxonomy has " +
                     std::to_string(t.num_classification_nodes()));
  }
  for (NodeId n = 1; n < t.node_count(); ++n) {
    if (ckpt.node_names[n - 1] != t.name(n)) {
      throw ModelError("checkpoint node order differs from taxonomy at '" +
                       t.name(n) + "'");
    }
  }
  check_compatible(t, ckpt.params, ckpt.fmap);
}

}  // namespace deeprtc
