#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "deeprtc/deeprtc.hpp"

namespace deeprtc::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr const char* kUsageFooter = R"(Outputs (all under --out-dir):
  synth      taxonomy.tsv train.csv val.csv test.csv splits.csv config.txt
  train      checkpoint.txt train_log.csv config.txt
  calibrate  gamma.txt calibration.csv config.txt
  predict    predictions.csv config.txt
  eval       metrics.txt metrics.json predictions.csv config.txt
  compare    report_deep-rtc.json report_flat.json report_rhc.json
             report_rp.json compare.csv config.txt

Config files hold key=value lines ('#' starts a comment). Flags and --set
override the file; the resolved configuration is echoed to config.txt.

Exit status: 0 ok, 1 runtime failure, 2 usage error, 3 invalid input,
4 training diverged.)";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raw flag values shared by every subcommand.
struct Flags {
  std::string taxonomy, train, val, test, config, checkpoint, flat_checkpoint;
  std::string gamma, gamma_grid, baseline, out_dir, rejection_rates;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

// Resolved settings after merging config file, --set and flags.
struct Settings {
  std::map<std::string, std::string> values;
  TrainConfig train;
  SyntheticConfig synth;
  std::optional<double> gamma;
  std::optional<std::vector<double>> grid;
  std::vector<double> rates{0.05, 0.10, 0.20};
  std::string baseline = "deep-rtc";
};

const std::vector<std::string> kSynthKeys{"tree_shape", "feature_dim",     "class_sep",
                                          "noise_sd",   "imbalance_factor", "n_max",
                                          "test_per_class", "val_fraction"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<double> parse_reals(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
      throw std::invalid_argument(key + ": '" + item + "' is not a number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument(key + ": empty list");
  return out;
}

double parse_real(const std::string& key, const std::string& text) {
  const auto v = parse_reals(key, text);
  if (v.size() != 1) throw std::invalid_argument(key + ": expected one number");
  return v.front();
}

long long parse_integer(const std::string& key, const std::string& text) {
  long long v = 0;
  const auto s = trim(text);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument(key + ": '" + text + "' is not an integer");
  }
  return v;
}

std::map<std::string, std::string> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void apply_synth(SyntheticConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "tree_shape") {
    cfg.tree_shape.clear();
    for (double v : parse_reals(key, value)) {
      if (v != static_cast<int>(v)) throw std::invalid_argument("tree_shape: integers only");
      cfg.tree_shape.push_back(static_cast<int>(v));
    }
  } else if (key == "feature_dim") {
    cfg.feature_dim = static_cast<int>(parse_integer(key, value));
  } else if (key == "class_sep") {
    cfg.class_sep = parse_real(key, value);
  } else if (key == "noise_sd") {
    cfg.noise_sd = parse_real(key, value);
  } else if (key == "imbalance_factor") {
    cfg.imbalance_factor = parse_real(key, value);
  } else if (key == "n_max") {
    const auto v = parse_integer(key, value);
    if (v < 1) throw std::invalid_argument("n_max must be >= 1");
    cfg.n_max = static_cast<std::size_t>(v);
  } else if (key == "test_per_class") {
    const auto v = parse_integer(key, value);
    if (v < 0) throw std::invalid_argument("test_per_class must be >= 0");
    cfg.test_per_class = static_cast<std::size_t>(v);
  } else if (key == "val_fraction") {
    cfg.val_fraction = parse_real(key, value);
  }
}

std::string join_reals(const std::vector<double>& v) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  return out.str();
}

// A --gamma value is either a number or a gamma.txt file from `calibrate`.
double resolve_gamma(const std::string& text) {
  if (fs::is_regular_file(text)) {
    const auto kv = read_config(text);
    auto it = kv.find("gamma");
    if (it == kv.end()) throw std::invalid_argument(text + ": no gamma entry");
    return parse_real("gamma", it->second);
  }
  return parse_real("gamma", text);
}

Settings resolve(const Flags& f) {
  Settings s;
  if (!f.config.empty()) s.values = read_config(f.config);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    s.values[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
  }
  if (f.seed) s.values["seed"] = std::to_string(*f.seed);
  if (!f.gamma.empty()) s.values["gamma"] = f.gamma;
  if (!f.gamma_grid.empty()) s.values["gamma_grid"] = f.gamma_grid;
  if (!f.baseline.empty()) s.values["baseline"] = f.baseline;
  if (!f.rejection_rates.empty()) s.values["rejection_rates"] = f.rejection_rates;

  const auto train_keys = TrainConfig{}.to_map();
  for (const auto& [key, value] : s.values) {
    if (train_keys.count(key)) {
      s.train.set(key, value);
      if (key == "seed") s.synth.seed = s.train.seed;
    } else if (std::find(kSynthKeys.begin(), kSynthKeys.end(), key) != kSynthKeys.end()) {
      apply_synth(s.synth, key, value);
    } else if (key == "gamma") {
      s.gamma = resolve_gamma(value);
    } else if (key == "gamma_grid") {
      s.grid = parse_reals(key, value);
    } else if (key == "rejection_rates") {
      s.rates = parse_reals(key, value);
    } else if (key == "baseline") {
      s.baseline = value;
    } else {
      throw std::invalid_argument("unknown configuration key '" + key + "'");
    }
  }
  if (s.baseline != "deep-rtc" && s.baseline != "flat" && s.baseline != "rhc" &&
      s.baseline != "rp") {
    throw UsageError("--baseline must be one of deep-rtc, flat, rhc, rp");
  }
  s.train.validate();
  if (s.gamma) (void)CompetenceLevel(*s.gamma);
  if (s.grid) {
    for (double g : *s.grid) (void)CompetenceLevel(g);
  }
  for (double r : s.rates) {
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("rejection rates must lie in [0, 1]");
  }
  return s;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

fs::path out_dir(const Flags& f) {
  require(f.out_dir, "--out-dir");
  fs::create_directories(f.out_dir);
  return fs::path(f.out_dir);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  return out;
}

void echo_config(const fs::path& dir, const std::string& command, const Settings& s) {
  auto out = open_out(dir / "config.txt");
  out << "# deeprtc " << command << "\n";
  auto all = s.train.to_map();
  for (const auto& [k, v] : s.values) all[k] = v;
  for (const auto& [k, v] : all) out << k << '=' << v << '\n';
}

json config_json(const Settings& s) {
  json j = json::object();
  auto all = s.train.to_map();
  for (const auto& [k, v] : s.values) all[k] = v;
  for (const auto& [k, v] : all) j[k] = v;
  return j;
}

Dataset load_split(const std::string& path, const Taxonomy& t, SplitTag tag) {
  auto d = load_dataset(path, t);
  d.split_tags = std::vector<SplitTag>(d.size(), tag);
  return d;
}

// A checkpoint and the taxonomy its parameters index.
struct Model {
  Checkpoint ckpt;
  bool flat = false;
};

Model load_model(const std::string& path, const Taxonomy& t) {
  Model m;
  m.ckpt = load_checkpoint(path);
  m.flat = m.ckpt.kind == "flat";
  check_checkpoint(m.ckpt, m.flat ? t.flattened() : t);
  return m;
}

bool is_flat_method(const std::string& baseline) { return baseline != "deep-rtc"; }

void check_kind(const Model& m, const std::string& baseline) {
  if (m.flat != is_flat_method(baseline)) {
    throw std::invalid_argument("checkpoint kind '" + m.ckpt.kind +
                                "' does not fit baseline '" + baseline + "'");
  }
}

std::vector<Decision> decide(const Dataset& data, const Taxonomy& t, const Model& m,
                             const std::string& baseline, double gamma) {
  const auto& p = m.ckpt.params;
  const auto& fmap = m.ckpt.fmap;
  if (baseline == "deep-rtc") return predict_rtc(data, t, p, fmap, CompetenceLevel(gamma));
  if (baseline == "rhc") return predict_rhc(data, t, p, fmap, CompetenceLevel(gamma));
  if (baseline == "rp") return predict_flat_reject(data, t, p, fmap, gamma);
  return predict_flat_reject(data, t, p, fmap, 0.0);
}

// Gamma for predict/eval: explicit value, or calibrated on --val over the grid.
double choose_gamma(const Flags& f, const Settings& s, const Taxonomy& t, const Model& m,
                    std::ostream& out) {
  if (s.gamma && s.grid) throw UsageError("give either --gamma or --gamma-grid, not both");
  if (s.gamma) return *s.gamma;
  if (!s.grid) return 0.0;
  require(f.val, "--val (with --gamma-grid)");
  const auto val = load_split(f.val, t, SplitTag::kVal);
  Calibration cal;
  if (s.baseline == "deep-rtc") {
    cal = calibrate_gamma(val, t, m.ckpt.params, m.ckpt.fmap, *s.grid);
  } else if (s.baseline == "rhc") {
    cal = calibrate_rhc_gamma(val, t, m.ckpt.params, m.ckpt.fmap, *s.grid);
  } else {
    throw UsageError("--gamma-grid applies to deep-rtc and rhc only");
  }
  out << "calibrated gamma " << cal.gamma.value() << "\n";
  return cal.gamma.value();
}

json metrics_json(const Metrics& m) {
  return json{{"cpb", m.cpb},           {"cpb_normalized", m.cpb_normalized},
              {"leaf_acc", m.leaf_acc}, {"hier_acc", m.hier_acc},
              {"depth", m.depth},       {"leaf_freq", m.leaf_freq},
              {"n", m.n}};
}

json report_json(const MetricsReport& r) {
  json j;
  j["n_samples"] = r.n_samples;
  j["all"] = metrics_json(r.all);
  for (const char* b : {"many", "medium", "few"}) {
    const auto& m = r.per_split.at(b);
    j[b] = m ? metrics_json(*m) : json(nullptr);
  }
  return j;
}

// ---------------------------------------------------------------- commands

int cmd_synth(const Flags& f, const Settings& s, std::ostream& out) {
  const auto dir = out_dir(f);
  const auto b = synth_generate(s.synth);
  save_taxonomy((dir / "taxonomy.tsv").string(), b.taxonomy);
  save_dataset((dir / "train.csv").string(), b.train, b.taxonomy);
  save_dataset((dir / "val.csv").string(), b.val, b.taxonomy);
  save_dataset((dir / "test.csv").string(), b.test, b.taxonomy);
  {
    auto sp = open_out(dir / "splits.csv");
    sp << "# id,tag\n";
    for (const Dataset* d : {&b.train, &b.val, &b.test}) {
      for (std::size_t i = 0; i < d->size(); ++i) {
        sp << d->ids[i] << ',' << to_string((*d->split_tags)[i]) << '\n';
      }
    }
  }
  auto echoed = s;
  const SyntheticConfig& c = s.synth;
  std::ostringstream shape;
  for (std::size_t i = 0; i < c.tree_shape.size(); ++i) shape << (i ? "," : "") << c.tree_shape[i];
  echoed.values["tree_shape"] = shape.str();
  echoed.values["feature_dim"] = std::to_string(c.feature_dim);
  echoed.values["class_sep"] = join_reals({c.class_sep});
  echoed.values["noise_sd"] = join_reals({c.noise_sd});
  echoed.values["imbalance_factor"] = join_reals({c.imbalance_factor});
  echoed.values["n_max"] = std::to_string(c.n_max);
  echoed.values["test_per_class"] = std::to_string(c.test_per_class);
  echoed.values["val_fraction"] = join_reals({c.val_fraction});
  echo_config(dir, "synth", echoed);
  for (const auto& w : b.warnings) out << "warning: " << w << "\n";
  out << "synth: " << b.taxonomy.num_leaves() << " leaves, " << b.train.size() << " train, "
      << b.val.size() << " val, " << b.test.size() << " test -> " << dir.string() << "\n";
  return kOk;
}

int cmd_train(const Flags& f, const Settings& s, std::ostream& out) {
  require(f.taxonomy, "--taxonomy");
  require(f.train, "--train");
  const auto dir = out_dir(f);
  const auto t = load_taxonomy(f.taxonomy);
  const auto data = load_split(f.train, t, SplitTag::kTrain);
  TrainResult result;
  Checkpoint ckpt;
  if (s.baseline == "deep-rtc") {
    result = train(data, t, s.train);
    ckpt = make_checkpoint(t, result.params, result.fmap, "deep-rtc");
  } else if (s.baseline == "flat") {
    result = train_flat(data, t, s.train);
    ckpt = make_checkpoint(t.flattened(), result.params, result.fmap, "flat");
  } else {
    throw UsageError("train --baseline must be deep-rtc or flat (rhc and rp reuse a flat checkpoint)");
  }
  save_checkpoint((dir / "checkpoint.txt").string(), ckpt);
  auto log = open_out(dir / "train_log.csv");
  write_train_log(log, result.log);
  echo_config(dir, "train", s);
  out << "train: " << result.log.size() << " epochs";
  if (!result.log.empty()) out << ", final loss " << result.log.back().l_total;
  out << " -> " << (dir / "checkpoint.txt").string() << "\n";
  return kOk;
}

int cmd_calibrate(const Flags& f, const Settings& s, std::ostream& out) {
  require(f.taxonomy, "--taxonomy");
  require(f.val, "--val");
  require(f.checkpoint, "--checkpoint");
  const auto dir = out_dir(f);
  const auto t = load_taxonomy(f.taxonomy);
  const auto val = load_split(f.val, t, SplitTag::kVal);
  const auto m = load_model(f.checkpoint, t);
  check_kind(m, s.baseline);
  const auto grid = s.grid.value_or(default_gamma_grid());
  Calibration cal;
  if (s.baseline == "deep-rtc") {
    cal = calibrate_gamma(val, t, m.ckpt.params, m.ckpt.fmap, grid);
  } else if (s.baseline == "rhc") {
    cal = calibrate_rhc_gamma(val, t, m.ckpt.params, m.ckpt.fmap, grid);
  } else {
    throw UsageError("calibrate --baseline must be deep-rtc or rhc");
  }
  {
    auto g = open_out(dir / "gamma.txt");
    g << std::setprecision(17) << "gamma=" << cal.gamma.value() << "\n";
  }
  auto c = open_out(dir / "calibration.csv");
  c << "# gamma,val_cpb\n" << std::setprecision(17);
  for (std::size_t i = 0; i < cal.grid.size(); ++i) c << cal.grid[i] << ',' << cal.scores[i] << '\n';
  echo_config(dir, "calibrate", s);
  out << "calibrate: gamma " << cal.gamma.value() << "\n";
  return kOk;
}

int cmd_predict(const Flags& f, const Settings& s, std::ostream& out, bool with_metrics) {
  require(f.taxonomy, "--taxonomy");
  require(f.test, "--test");
  require(f.checkpoint, "--checkpoint");
  if (with_metrics) require(f.train, "--train");
  const auto dir = out_dir(f);
  const auto t = load_taxonomy(f.taxonomy);
  const auto test = load_split(f.test, t, SplitTag::kTest);
  const auto m = load_model(f.checkpoint, t);
  check_kind(m, s.baseline);
  const double gamma = choose_gamma(f, s, t, m, out);
  const auto decisions = decide(test, t, m, s.baseline, gamma);
  {
    auto p = open_out(dir / "predictions.csv");
    write_predictions(p, test, decisions, t);
  }
  if (with_metrics) {
    const auto train_set = load_split(f.train, t, SplitTag::kTrain);
    const auto split = popularity_split(t, split_counts(train_set, t));
    std::vector<Decision> leaves;
    if (s.baseline == "deep-rtc") leaves = decide(test, t, m, s.baseline, 0.0);
    const auto r = report(decisions, test.labels, split, t, leaves);
    {
      auto kv = open_out(dir / "metrics.txt");
      write_report_kv(kv, r);
    }
    json j;
    j["method"] = s.baseline;
    j["gamma"] = gamma;
    j["report"] = report_json(r);
    j["config"] = config_json(s);
    open_out(dir / "metrics.json") << j.dump(2) << "\n";
    out << "eval: cpb " << r.all.cpb << ", hier_acc " << r.all.hier_acc << ", leaf_acc "
        << r.all.leaf_acc << "\n";
  } else {
    out << "predict: " << decisions.size() << " decisions at gamma " << gamma << "\n";
  }
  echo_config(dir, with_metrics ? "eval" : "predict", s);
  return kOk;
}

int cmd_compare(const Flags& f, const Settings& s, std::ostream& out) {
  require(f.taxonomy, "--taxonomy");
  require(f.train, "--train");
  require(f.test, "--test");
  require(f.checkpoint, "--checkpoint");
  const auto dir = out_dir(f);
  const auto t = load_taxonomy(f.taxonomy);
  const auto train_set = load_split(f.train, t, SplitTag::kTrain);
  const auto test = load_split(f.test, t, SplitTag::kTest);
  const auto deep = load_model(f.checkpoint, t);
  check_kind(deep, "deep-rtc");
  Model flat;
  if (!f.flat_checkpoint.empty()) {
    flat = load_model(f.flat_checkpoint, t);
    check_kind(flat, "flat");
  } else {
    const auto r = train_flat(train_set, t, s.train);
    flat.ckpt = make_checkpoint(t.flattened(), r.params, r.fmap, "flat");
    flat.flat = true;
  }
  const auto split = popularity_split(t, split_counts(train_set, t));

  std::vector<Decision> traces;
  std::vector<Eigen::VectorXd> posts;
  std::vector<double> root_conf, rhc_conf, flat_conf;
  for (Eigen::Index i = 0; i < test.features.rows(); ++i) {
    const Eigen::VectorXd x = test.features.row(i).transpose();
    traces.push_back(rtc_trace(x, t, deep.ckpt.params, deep.ckpt.fmap));
    root_conf.push_back(traces.back().path.front().confidence);
    posts.push_back(flat_posterior(x, flat.ckpt.params, flat.ckpt.fmap));
    flat_conf.push_back(posts.back().maxCoeff());
    rhc_conf.push_back(rhc_from_posterior(t, posts.back(), CompetenceLevel(0.0)).path.front().confidence);
  }
  const auto deep_leaves = predict_rtc(test, t, deep.ckpt.params, deep.ckpt.fmap, CompetenceLevel(0.0));
  const auto flat_leaves = predict_flat_reject(test, t, flat.ckpt.params, flat.ckpt.fmap, 0.0);

  std::map<std::string, json> reports;
  for (const char* method : {"deep-rtc", "flat", "rhc", "rp"}) {
    reports[method] = json{{"method", method}, {"n_samples", test.size()}, {"rates", json::array()}};
  }
  auto csv = open_out(dir / "compare.csv");
  csv << "# method,rate,threshold,rejected,all.cpb,all.hier_acc,all.leaf_acc,few.cpb,medium.cpb,many.cpb\n";
  csv << std::setprecision(10);
  auto emit = [&](const std::string& method, double rate, double threshold,
                  const std::vector<Decision>& d, const std::vector<Decision>& leaves) {
    const auto r = report(d, test.labels, split, t, leaves);
    const auto rejected = std::count_if(d.begin(), d.end(), [](const Decision& x) {
      return x.exit_node == kRoot;
    });
    reports[method]["rates"].push_back(json{{"rate", rate},
                                            {"threshold", threshold},
                                            {"rejected", rejected},
                                            {"report", report_json(r)}});
    csv << method << ',' << rate << ',' << threshold << ',' << rejected << ',' << r.all.cpb << ','
        << r.all.hier_acc << ',' << r.all.leaf_acc;
    for (const char* b : {"few", "medium", "many"}) {
      csv << ',';
      if (const auto& m = r.per_split.at(b)) csv << m->cpb;
    }
    csv << '\n';
  };
  for (double rate : s.rates) {
    const double g_deep = std::min(1.0, threshold_for_rate(root_conf, rate));
    std::vector<Decision> d;
    for (const auto& tr : traces) d.push_back(truncate_trace(tr, t, CompetenceLevel(g_deep)));
    emit("deep-rtc", rate, g_deep, d, deep_leaves);

    // The flat classifier has no reject option; it is reported unchanged.
    emit("flat", rate, 0.0, flat_leaves, flat_leaves);

    const double g_rhc = std::min(1.0, threshold_for_rate(rhc_conf, rate));
    d.clear();
    for (const auto& p : posts) d.push_back(rhc_from_posterior(t, p, CompetenceLevel(g_rhc)));
    emit("rhc", rate, g_rhc, d, flat_leaves);

    const double th = threshold_for_rate(flat_conf, rate);
    emit("rp", rate, th, predict_flat_reject(test, t, flat.ckpt.params, flat.ckpt.fmap, th), flat_leaves);
  }
  for (auto& [method, j] : reports) {
    j["config"] = config_json(s);
    open_out(dir / ("report_" + method + ".json")) << j.dump(2) << "\n";
  }
  echo_config(dir, "compare", s);
  out << "compare: " << s.rates.size() << " rates x 4 methods -> " << (dir / "compare.csv").string()
      << "\n";
  return kOk;
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "key=value configuration file");
  sub->add_option("--set", f.sets, "override one configuration key (key=value), repeatable");
  sub->add_option("--seed", f.seed, "random seed");
  sub->add_option("--out-dir", f.out_dir, "output directory")->required();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Realistic taxonomic classification: synth, train, calibrate, predict, eval, compare",
               "deeprtc"};
  app.footer(kUsageFooter);
  app.require_subcommand(1);
  Flags f;

  auto* synth = app.add_subcommand("synth", "generate a long-tailed hierarchical Gaussian benchmark");
  add_common(synth, f);

  auto* tr = app.add_subcommand("train", "train a Deep-RTC head (or the flat baseline)");
  add_common(tr, f);
  tr->add_option("--taxonomy", f.taxonomy, "taxonomy edge file (child<TAB>parent)");
  tr->add_option("--train", f.train, "training CSV");
  tr->add_option("--baseline", f.baseline, "deep-rtc or flat");

  auto* cal = app.add_subcommand("calibrate", "pick gamma on a validation set");
  add_common(cal, f);
  cal->add_option("--taxonomy", f.taxonomy, "taxonomy edge file");
  cal->add_option("--val", f.val, "validation CSV");
  cal->add_option("--checkpoint", f.checkpoint, "trained checkpoint");
  cal->add_option("--gamma-grid", f.gamma_grid, "comma-separated gamma values");
  cal->add_option("--baseline", f.baseline, "deep-rtc or rhc");

  CLI::App* pred = app.add_subcommand("predict", "write per-sample decisions");
  CLI::App* ev = app.add_subcommand("eval", "write a metrics report");
  for (auto* sub : {pred, ev}) {
    add_common(sub, f);
    sub->add_option("--taxonomy", f.taxonomy, "taxonomy edge file");
    sub->add_option("--test", f.test, "test CSV");
    sub->add_option("--checkpoint", f.checkpoint, "trained checkpoint");
    sub->add_option("--gamma", f.gamma, "competence level, or a gamma.txt file");
    sub->add_option("--gamma-grid", f.gamma_grid, "calibrate on --val over these values");
    sub->add_option("--val", f.val, "validation CSV (with --gamma-grid)");
    sub->add_option("--baseline", f.baseline, "deep-rtc, flat, rhc or rp");
  }
  ev->add_option("--train", f.train, "training CSV (popularity buckets)");

  auto* cmp = app.add_subcommand("compare", "all methods at matched rejection rates");
  add_common(cmp, f);
  cmp->add_option("--taxonomy", f.taxonomy, "taxonomy edge file");
  cmp->add_option("--train", f.train, "training CSV");
  cmp->add_option("--test", f.test, "test CSV");
  cmp->add_option("--checkpoint", f.checkpoint, "Deep-RTC checkpoint");
  cmp->add_option("--flat-checkpoint", f.flat_checkpoint,
                  "flat baseline checkpoint (trained from --train if omitted)");
  cmp->add_option("--rejection-rates", f.rejection_rates, "comma-separated rates (default 0.05,0.1,0.2)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run 'deeprtc --help' for usage\n";
    return kUsage;
  }

  try {
    const Settings s = resolve(f);
    if (*synth) return cmd_synth(f, s, out);
    if (*tr) return cmd_train(f, s, out);
    if (*cal) return cmd_calibrate(f, s, out);
    if (*pred) return cmd_predict(f, s, out, false);
    if (*ev) return cmd_predict(f, s, out, true);
    if (*cmp) return cmd_compare(f, s, out);
    return kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const TaxonomyError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const ModelError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const EvaluationError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace deeprtc::cli
