#pragma once

// Experiment configuration, end-to-end runs and report emission.

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "oral/eval.hpp"
#include "oral/graph.hpp"
#include "oral/pan.hpp"

namespace oral {

struct ExperimentConfig {
  std::string dataset_path;      // dataset.path
  std::optional<SbmSpec> sbm;    // sbm.*
  std::string split_file;        // split.file; empty = generate
  double known_class_fraction = 0.8;
  double train_fraction = 0.7;
  double val_fraction = 0.15;
  std::uint64_t split_seed = 0;
  PanConfig model;
  bool baseline = true;
  std::string output_dir;        // run.output_dir; empty = no files written

  // Exactly one of dataset_path / sbm, plus model.validate().
  void validate() const;

  // Every field as (dotted key, value) in a fixed order.
  std::vector<std::pair<std::string, std::string>> to_kv() const;
  // Throws std::invalid_argument on an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  static std::vector<std::string> keys();
};

// `key = value` lines; '#' starts a comment; blank lines ignored.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& file, ExperimentConfig base = {});
std::string format_config(const ExperimentConfig& config);

// The planted-partition setup used throughout the tests: five classes of 60
// nodes, one of them held out as novel.
ExperimentConfig sbm_benchmark_config(std::uint64_t seed, double inter_edge_prob = 0.01);

struct LayerReport {
  std::size_t best_n = 0;
  OpenWorldMetrics metrics;
};

struct RunReport {
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<LossRecord> losses;
  std::vector<RefinementRecord> refinements;
  std::vector<LayerReport> layers;
  OpenWorldMetrics ensemble;
  std::size_t true_class_count = 0;
  std::size_t known_class_count = 0;
  std::size_t estimated_class_count = 0;
  std::optional<OpenWorldMetrics> baseline;
  std::size_t epochs = 0;
  bool converged = false;
  double wall_seconds = 0.0;

  // key = value text. Metric values are printed exactly (%.17g).
  std::string to_text() const;
};

// Stage errors are rethrown as std::runtime_error prefixed with the stage.
RunReport run_experiment(const ExperimentConfig& config);

// One run per value of `parameter` (N_pro, gamma, mu, L, eta), each into
// its own subdirectory when an output directory is set.
std::vector<RunReport> run_sweep(const ExperimentConfig& config, const std::string& parameter,
                                 const std::vector<std::string>& values);

// Node/group rows `node,group`.
std::vector<std::pair<NodeId, int>> load_predictions(const std::filesystem::path& file);

}  // namespace oral
