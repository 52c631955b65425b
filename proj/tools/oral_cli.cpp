#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "oral/eval.hpp"
#include "oral/experiment.hpp"

namespace {

struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& app) {
    app.add_option("-c,--config", file, "key = value config file")->check(CLI::ExistingFile);
    for (const auto& key : oral::ExperimentConfig::keys())
      options[key] = app.add_option("--" + key, values[key], "config field " + key);
  }

  // Config file first, then flags; flags win.
  oral::ExperimentConfig build() const {
    oral::ExperimentConfig config = file.empty() ? oral::ExperimentConfig{} : oral::load_config(file);
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) config.set(key, values.at(key));
    return config;
  }
};

void print_summary(const oral::RunReport& r) {
  std::printf("acc_all=%.4f acc_known=%.4f acc_novel=%.4f estimated_classes=%zu true_classes=%zu",
              r.ensemble.acc_all, r.ensemble.acc_known, r.ensemble.acc_novel, r.estimated_class_count,
              r.true_class_count);
  if (r.baseline) std::printf(" baseline_acc_all=%.4f", r.baseline->acc_all);
  std::printf(" epochs=%zu wall=%.2fs\n", r.epochs, r.wall_seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oral: open-world node classification with prototypical attention"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "train and evaluate one configuration");
  ConfigFlags run_flags;
  run_flags.attach(*run);
  bool print_report = false;
  run->add_flag("--print-report", print_report, "print the full report instead of a summary");

  auto* sweep = app.add_subcommand("sweep", "one run per value of a hyperparameter");
  ConfigFlags sweep_flags;
  sweep_flags.attach(*sweep);
  std::string sweep_param;
  std::vector<std::string> sweep_values;
  sweep->add_option("--param", sweep_param, "N_pro, gamma, mu, L or eta")->required();
  sweep->add_option("--values", sweep_values, "values to try")->delimiter(',');

  auto* gen = app.add_subcommand("gen", "write a planted-partition dataset directory");
  ConfigFlags gen_flags;
  gen_flags.attach(*gen);
  std::string gen_out;
  gen->add_option("-o,--out", gen_out, "output dataset directory")->required();

  auto* eval = app.add_subcommand("eval", "score a node,group predictions file");
  std::string eval_pred, eval_data, eval_split;
  eval->add_option("-p,--predictions", eval_pred, "predictions csv")->required()->check(CLI::ExistingFile);
  eval->add_option("-d,--dataset", eval_data, "dataset directory with labels.csv")->required()->check(CLI::ExistingDirectory);
  eval->add_option("-s,--split", eval_split, "split.json naming the known classes")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto report = oral::run_experiment(run_flags.build());
      if (print_report) std::cout << report.to_text();
      else print_summary(report);
    } else if (*sweep) {
      const auto config = sweep_flags.build();
      const auto reports = oral::run_sweep(config, sweep_param, sweep_values);
      for (std::size_t i = 0; i < reports.size(); ++i) {
        std::printf("%s=%s ", sweep_param.c_str(), sweep_values[i].c_str());
        print_summary(reports[i]);
      }
    } else if (*gen) {
      auto config = gen_flags.build();
      if (!config.sbm) config.sbm = oral::sbm_benchmark_config(config.model.seed).sbm;
      const auto sbm = oral::generate_sbm(*config.sbm);
      oral::save_graph(sbm.graph, gen_out);
      std::printf("wrote %zu nodes, %zu edges to %s\n", sbm.graph.node_count, sbm.graph.edges.size(), gen_out.c_str());
    } else if (*eval) {
      const auto g = oral::load_graph(eval_data);
      const auto preds = oral::load_predictions(eval_pred);
      std::vector<oral::ClassId> known;
      if (!eval_split.empty()) known = oral::load_split(eval_split).known_classes;
      std::vector<int> groups;
      std::vector<oral::ClassId> truth;
      for (auto [node, group] : preds) {
        if (node >= g.node_count || !g.labels[node])
          throw std::runtime_error("node " + std::to_string(node) + " has no label in " + eval_data);
        groups.push_back(group);
        truth.push_back(*g.labels[node]);
      }
      const auto m = oral::open_world_accuracy(groups, truth, known);
      const std::set<oral::ClassId> classes(truth.begin(), truth.end());
      std::printf("acc_all = %.17g\nacc_known = %.17g\nacc_novel = %.17g\npredicted_class_count = %zu\n"
                  "class_count_mae = %.17g\n",
                  m.acc_all, m.acc_known, m.acc_novel, m.predicted_class_count,
                  oral::class_count_error(static_cast<double>(m.predicted_class_count),
                                          static_cast<double>(classes.size())));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
