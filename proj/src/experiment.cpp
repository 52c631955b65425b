#include "oral/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "oral/pseudo_label.hpp"

namespace oral {

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  return d;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  if (v.empty() || v[0] == '-') throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size()) throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::invalid_argument(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

SbmSpec& sbm_of(ExperimentConfig& c) {
  if (!c.sbm) c.sbm = SbmSpec{};
  return *c.sbm;
}

template <typename Get>
std::string sbm_get(const ExperimentConfig& c, Get get) {
  return c.sbm ? get(*c.sbm) : std::string();
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<Field> table = {
      {"dataset.path", [](const C& c) { return c.dataset_path; }, [](C& c, S v) { c.dataset_path = v; }},
      {"sbm.class_sizes",
       [](const C& c) {
         return sbm_get(c, [](const SbmSpec& s) {
           std::string out;
           for (std::size_t i = 0; i < s.class_sizes.size(); ++i) out += (i ? "," : "") + std::to_string(s.class_sizes[i]);
           return out;
         });
       },
       [](C& c, S v) {
         auto& s = sbm_of(c);
         s.class_sizes.clear();
         for (const auto& x : split_commas(v)) s.class_sizes.push_back(parse_u64("sbm.class_sizes", x));
       }},
      {"sbm.intra_edge_prob", [](const C& c) { return sbm_get(c, [](const SbmSpec& s) { return num(s.intra_edge_prob); }); },
       [](C& c, S v) { sbm_of(c).intra_edge_prob = parse_double("sbm.intra_edge_prob", v); }},
      {"sbm.inter_edge_prob", [](const C& c) { return sbm_get(c, [](const SbmSpec& s) { return num(s.inter_edge_prob); }); },
       [](C& c, S v) { sbm_of(c).inter_edge_prob = parse_double("sbm.inter_edge_prob", v); }},
      {"sbm.feature_dim", [](const C& c) { return sbm_get(c, [](const SbmSpec& s) { return std::to_string(s.feature_dim); }); },
       [](C& c, S v) { sbm_of(c).feature_dim = parse_u64("sbm.feature_dim", v); }},
      {"sbm.class_mean_separation",
       [](const C& c) { return sbm_get(c, [](const SbmSpec& s) { return num(s.class_mean_separation); }); },
       [](C& c, S v) { sbm_of(c).class_mean_separation = parse_double("sbm.class_mean_separation", v); }},
      {"sbm.feature_noise_std",
       [](const C& c) { return sbm_get(c, [](const SbmSpec& s) { return num(s.feature_noise_std); }); },
       [](C& c, S v) { sbm_of(c).feature_noise_std = parse_double("sbm.feature_noise_std", v); }},
      {"sbm.seed", [](const C& c) { return sbm_get(c, [](const SbmSpec& s) { return std::to_string(s.seed); }); },
       [](C& c, S v) { sbm_of(c).seed = parse_u64("sbm.seed", v); }},
      {"split.file", [](const C& c) { return c.split_file; }, [](C& c, S v) { c.split_file = v; }},
      {"split.known_class_fraction", [](const C& c) { return num(c.known_class_fraction); },
       [](C& c, S v) { c.known_class_fraction = parse_double("split.known_class_fraction", v); }},
      {"split.train_fraction", [](const C& c) { return num(c.train_fraction); },
       [](C& c, S v) { c.train_fraction = parse_double("split.train_fraction", v); }},
      {"split.val_fraction", [](const C& c) { return num(c.val_fraction); },
       [](C& c, S v) { c.val_fraction = parse_double("split.val_fraction", v); }},
      {"split.seed", [](const C& c) { return std::to_string(c.split_seed); },
       [](C& c, S v) { c.split_seed = parse_u64("split.seed", v); }},
      {"model.layers", [](const C& c) { return std::to_string(c.model.layers); },
       [](C& c, S v) { c.model.layers = parse_u64("model.layers", v); }},
      {"model.hidden", [](const C& c) { return std::to_string(c.model.hidden); },
       [](C& c, S v) { c.model.hidden = parse_u64("model.hidden", v); }},
      {"model.n_prototypes", [](const C& c) { return std::to_string(c.model.n_prototypes); },
       [](C& c, S v) { c.model.n_prototypes = parse_u64("model.n_prototypes", v); }},
      {"model.topk", [](const C& c) { return std::to_string(c.model.topk); },
       [](C& c, S v) { c.model.topk = parse_u64("model.topk", v); }},
      {"model.attention",
       [](const C& c) { return std::string(c.model.attention == AttentionMode::kUniform ? "uniform" : "group"); },
       [](C& c, S v) {
         if (v == "group") c.model.attention = AttentionMode::kGroupAware;
         else if (v == "uniform") c.model.attention = AttentionMode::kUniform;
         else throw std::invalid_argument("model.attention: expected group or uniform");
       }},
      {"model.prototype_jitter", [](const C& c) { return num(c.model.prototype_jitter); },
       [](C& c, S v) { c.model.prototype_jitter = parse_double("model.prototype_jitter", v); }},
      {"train.learning_rate", [](const C& c) { return num(c.model.learning_rate); },
       [](C& c, S v) { c.model.learning_rate = parse_double("train.learning_rate", v); }},
      {"train.weight_decay", [](const C& c) { return num(c.model.weight_decay); },
       [](C& c, S v) { c.model.weight_decay = parse_double("train.weight_decay", v); }},
      {"train.max_iterations", [](const C& c) { return std::to_string(c.model.max_iterations); },
       [](C& c, S v) { c.model.max_iterations = parse_u64("train.max_iterations", v); }},
      {"train.refine_period", [](const C& c) { return std::to_string(c.model.refine_period); },
       [](C& c, S v) { c.model.refine_period = parse_u64("train.refine_period", v); }},
      {"train.convergence_tol", [](const C& c) { return num(c.model.convergence_tol); },
       [](C& c, S v) { c.model.convergence_tol = parse_double("train.convergence_tol", v); }},
      {"train.convergence_window", [](const C& c) { return std::to_string(c.model.convergence_window); },
       [](C& c, S v) { c.model.convergence_window = parse_u64("train.convergence_window", v); }},
      {"train.use_refinement", [](const C& c) { return std::string(c.model.use_refinement ? "true" : "false"); },
       [](C& c, S v) { c.model.use_refinement = parse_bool("train.use_refinement", v); }},
      {"train.use_consistency", [](const C& c) { return std::string(c.model.use_consistency ? "true" : "false"); },
       [](C& c, S v) { c.model.use_consistency = parse_bool("train.use_consistency", v); }},
      {"train.pseudo_supervision", [](const C& c) { return std::string(c.model.pseudo_supervision ? "true" : "false"); },
       [](C& c, S v) { c.model.pseudo_supervision = parse_bool("train.pseudo_supervision", v); }},
      {"pseudo.eta", [](const C& c) { return num(c.model.eta); },
       [](C& c, S v) { c.model.eta = parse_double("pseudo.eta", v); }},
      {"pseudo.gamma", [](const C& c) { return num(c.model.gamma); },
       [](C& c, S v) { c.model.gamma = parse_double("pseudo.gamma", v); }},
      {"refine.mu", [](const C& c) { return num(c.model.mu); },
       [](C& c, S v) { c.model.mu = parse_double("refine.mu", v); }},
      {"augment.edge_drop_rate", [](const C& c) { return num(c.model.edge_drop_rate); },
       [](C& c, S v) { c.model.edge_drop_rate = parse_double("augment.edge_drop_rate", v); }},
      {"augment.feature_mask_rate", [](const C& c) { return num(c.model.feature_mask_rate); },
       [](C& c, S v) { c.model.feature_mask_rate = parse_double("augment.feature_mask_rate", v); }},
      {"granularity.prior_n",
       [](const C& c) { return c.model.prior_n ? std::to_string(*c.model.prior_n) : std::string("none"); },
       [](C& c, S v) {
         if (v == "none" || v.empty()) c.model.prior_n.reset();
         else c.model.prior_n = parse_u64("granularity.prior_n", v);
       }},
      {"granularity.range",
       [](const C& c) {
         return c.model.granularity_range ? std::to_string(c.model.granularity_range->first) + "," +
                                                std::to_string(c.model.granularity_range->second)
                                          : std::string("auto");
       },
       [](C& c, S v) {
         if (v == "auto" || v.empty()) {
           c.model.granularity_range.reset();
           return;
         }
         const auto parts = split_commas(v);
         if (parts.size() != 2) throw std::invalid_argument("granularity.range: expected lo,hi or auto");
         c.model.granularity_range =
             std::pair{parse_u64("granularity.range", parts[0]), parse_u64("granularity.range", parts[1])};
       }},
      {"granularity.tolerance", [](const C& c) { return num(c.model.granularity_tolerance); },
       [](C& c, S v) { c.model.granularity_tolerance = parse_double("granularity.tolerance", v); }},
      {"granularity.tie_break",
       [](const C& c) {
         return std::string(c.model.granularity_tie_break == GranularityTieBreak::kLargestEigengap ? "eigengap"
                                                                                                   : "smallest");
       },
       [](C& c, S v) {
         if (v == "smallest") c.model.granularity_tie_break = GranularityTieBreak::kSmallestN;
         else if (v == "eigengap") c.model.granularity_tie_break = GranularityTieBreak::kLargestEigengap;
         else throw std::invalid_argument("granularity.tie_break: expected smallest or eigengap");
       }},
      {"run.seed", [](const C& c) { return std::to_string(c.model.seed); },
       [](C& c, S v) { c.model.seed = parse_u64("run.seed", v); }},
      {"run.baseline", [](const C& c) { return std::string(c.baseline ? "true" : "false"); },
       [](C& c, S v) { c.baseline = parse_bool("run.baseline", v); }},
      {"run.output_dir", [](const C& c) { return c.output_dir; }, [](C& c, S v) { c.output_dir = v; }},
  };
  return table;
}

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const DivergenceError&) {
    throw;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string(name) + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << text;
}

void append_metrics(std::ostringstream& out, const std::string& prefix, const OpenWorldMetrics& m) {
  out << prefix << "acc_all = " << num(m.acc_all) << '\n';
  out << prefix << "acc_known = " << num(m.acc_known) << '\n';
  out << prefix << "acc_novel = " << num(m.acc_novel) << '\n';
  out << prefix << "predicted_class_count = " << m.predicted_class_count << '\n';
  if (m.class_count_mae) out << prefix << "class_count_mae = " << num(*m.class_count_mae) << '\n';
}

}  // namespace

// ------------------------------------------------------------------ config

void ExperimentConfig::validate() const {
  if (dataset_path.empty() == !sbm.has_value())
    throw std::invalid_argument("config: exactly one of dataset.path and sbm.* must be set");
  if (sbm) sbm->validate();
  if (!(known_class_fraction > 0.0 && known_class_fraction < 1.0))
    throw std::invalid_argument("config: split.known_class_fraction must lie in (0,1)");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("config: split.train_fraction must lie in (0,1)");
  if (!(val_fraction >= 0.0 && train_fraction + val_fraction < 1.0))
    throw std::invalid_argument("config: split.val_fraction must be >= 0 with train + val < 1");
  model.validate();
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::to_kv() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (key == f.key) {
      f.set(*this, trim(value));
      return;
    }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    try {
      base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& file, ExperimentConfig base) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string format_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& [k, v] : config.to_kv()) out += k + " = " + v + "\n";
  return out;
}

ExperimentConfig sbm_benchmark_config(std::uint64_t seed, double inter_edge_prob) {
  ExperimentConfig c;
  SbmSpec s;
  s.class_sizes = {60, 60, 60, 60, 60};
  s.intra_edge_prob = 0.1;
  s.inter_edge_prob = inter_edge_prob;
  s.class_mean_separation = 4.0;
  s.feature_noise_std = 1.0;
  s.seed = seed;
  c.sbm = s;
  c.split_seed = seed;
  c.model.seed = seed;
  return c;
}

// ------------------------------------------------------------------ report

std::string RunReport::to_text() const {
  std::ostringstream out;
  for (const auto& [k, v] : config) out << "config." << k << " = " << v << '\n';
  append_metrics(out, "", ensemble);
  out << "true_class_count = " << true_class_count << '\n';
  out << "known_class_count = " << known_class_count << '\n';
  out << "estimated_class_count = " << estimated_class_count << '\n';
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    out << p << "best_n = " << layers[l].best_n << '\n';
    append_metrics(out, p, layers[l].metrics);
  }
  if (baseline) append_metrics(out, "baseline.", *baseline);
  out << "epochs = " << epochs << '\n';
  out << "converged = " << (converged ? "true" : "false") << '\n';
  for (std::size_t r = 0; r < refinements.size(); ++r) {
    const auto& x = refinements[r];
    const std::string p = "refine." + std::to_string(r) + ".";
    out << p << "epoch = " << x.epoch << '\n'
        << p << "confident = " << x.confident << '\n'
        << p << "recovered = " << x.recovered << '\n'
        << p << "removed = " << x.removed << '\n'
        << p << "edges_after = " << x.edges_after << '\n';
  }
  for (const auto& l : losses)
    out << "loss." << l.epoch << " = " << num(l.ce) << ' ' << num(l.reg) << ' ' << num(l.con) << ' ' << num(l.total)
        << '\n';
  out << "wall_seconds = " << num(wall_seconds) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------- run

RunReport run_experiment(const ExperimentConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  stage("config", [&] { config.validate(); });

  const AttributedGraph full = stage("load", [&] {
    return config.sbm ? generate_sbm(*config.sbm).graph : load_graph(config.dataset_path);
  });
  const OpenWorldSplit split = stage("split", [&] {
    return config.split_file.empty()
               ? make_open_world_split(full, config.known_class_fraction, config.train_fraction,
                                       config.val_fraction, config.split_seed)
               : load_split(config.split_file);
  });
  const AttributedGraph train = stage("split", [&] { return apply_split(full, split); });
  const FitResult fitted = stage("fit", [&] { return fit(train, config.model); });

  RunReport report;
  report.config = config.to_kv();
  report.losses = fitted.state.losses;
  report.refinements = fitted.state.refinements;
  report.epochs = fitted.state.epoch;
  report.converged = fitted.state.converged;
  report.true_class_count = split.all_classes.size();
  report.known_class_count = split.known_classes.size();

  std::vector<ClassId> truth;
  for (NodeId v : split.test_nodes) {
    if (!full.labels[v]) throw std::runtime_error("eval: test node " + std::to_string(v) + " has no label");
    truth.push_back(*full.labels[v]);
  }
  auto on_test = [&](const std::vector<int>& all) {
    std::vector<int> out;
    for (NodeId v : split.test_nodes) out.push_back(all[v]);
    return out;
  };

  std::vector<Matrix> preds;
  for (const auto& c : fitted.caches) preds.push_back(c.p);
  const EnsemblePrediction ens = stage("inference", [&] { return ensemble_predict(preds, config.model.eta); });
  const std::vector<int> ens_test = on_test(ens.labels());

  stage("eval", [&] {
    std::map<std::size_t, std::size_t> votes;
    for (std::size_t l = 0; l < fitted.caches.size(); ++l) {
      LayerReport lr;
      lr.best_n = fitted.state.best_n[l];
      lr.metrics = open_world_accuracy(on_test(row_argmax(fitted.caches[l].p)), truth, split.known_classes);
      report.layers.push_back(lr);
      ++votes[lr.best_n];
    }
    // Most frequent per-layer granularity; ties go to the shallower layer's value.
    std::size_t best = 0;
    for (const auto& lr : report.layers)
      if (votes[lr.best_n] > best) {
        best = votes[lr.best_n];
        report.estimated_class_count = lr.best_n;
      }
    report.ensemble = open_world_accuracy(ens_test, truth, split.known_classes);
    report.ensemble.class_count_mae = class_count_error(static_cast<double>(report.estimated_class_count),
                                                        static_cast<double>(report.true_class_count));
    if (config.baseline && report.true_class_count >= 2)
      report.baseline = open_world_accuracy(
          kmeans_feature_baseline(full, split, report.true_class_count, config.model.seed), truth,
          split.known_classes);
  });
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!config.output_dir.empty()) {
    stage("write", [&] {
      const std::filesystem::path dir = config.output_dir;
      std::filesystem::create_directories(dir);
      write_text(dir / "config.txt", format_config(config));
      write_text(dir / "report.txt", report.to_text());
      save_split(split, dir / "split.json");
      std::vector<NodeId> unlabeled;
      for (std::size_t i = 0; i < train.node_count; ++i)
        if (!train.label_mask[i]) unlabeled.push_back(static_cast<NodeId>(i));
      write_pseudo_labels(select_confident(ens.suppressed.p_hat, unlabeled, config.model.gamma), ens.suppressed.p_hat,
                          dir / "pseudo_labels.csv");
      std::ostringstream pred;
      for (std::size_t t = 0; t < split.test_nodes.size(); ++t) pred << split.test_nodes[t] << ',' << ens_test[t] << '\n';
      write_text(dir / "predictions.csv", pred.str());
      write_edges_csv(fitted.final_edges, dir / "edges.csv");
      save_checkpoint(fitted.stack, fitted.state.best_n, fitted.final_edges, (dir / "checkpoint.txt").string());
    });
  }
  return report;
}

std::vector<RunReport> run_sweep(const ExperimentConfig& config, const std::string& parameter,
                                 const std::vector<std::string>& values) {
  static const std::map<std::string, std::string> keys = {
      {"N_pro", "model.n_prototypes"}, {"n_prototypes", "model.n_prototypes"},
      {"gamma", "pseudo.gamma"},       {"mu", "refine.mu"},
      {"L", "model.layers"},           {"layers", "model.layers"},
      {"eta", "pseudo.eta"},
  };
  const auto it = keys.find(parameter);
  if (it == keys.end()) throw std::invalid_argument("sweep: unknown parameter '" + parameter + "' (N_pro, gamma, mu, L, eta)");
  std::vector<RunReport> out;
  std::ostringstream table;
  table << parameter << ",acc_all,acc_known,acc_novel,estimated_class_count\n";
  for (const auto& v : values) {
    ExperimentConfig c = config;
    c.set(it->second, v);
    if (!config.output_dir.empty()) c.output_dir = (std::filesystem::path(config.output_dir) / (parameter + "=" + v)).string();
    out.push_back(run_experiment(c));
    const auto& m = out.back().ensemble;
    table << v << ',' << num(m.acc_all) << ',' << num(m.acc_known) << ',' << num(m.acc_novel) << ','
          << out.back().estimated_class_count << '\n';
  }
  if (!config.output_dir.empty() && !values.empty()) write_text(std::filesystem::path(config.output_dir) / "sweep.csv", table.str());
  return out;
}

std::vector<std::pair<NodeId, int>> load_predictions(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  std::vector<std::pair<NodeId, int>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto parts = split_commas(line);
    if (parts.size() != 2) throw std::runtime_error(file.string() + ":" + std::to_string(lineno) + ": expected node,group");
    const auto node = parse_u64("node", parts[0]);
    const auto group = parse_u64("group", parts[1]);
    out.emplace_back(static_cast<NodeId>(node), static_cast<int>(group));
  }
  return out;
}

}  // namespace oral
