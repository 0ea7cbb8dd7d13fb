// dropnas — desk-scale differentiable architecture search with grouped
// operation dropout. Subcommands: search, derive, eval, sweep, grid,
// cluster, correlate, ablate.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dropnas/dropnas.hpp"

using namespace dropnas;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_flag;
  std::uint64_t seed_flag = 0;
  bool seed_set = false;
  int subset = 0;
  int workers = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)")->required();
  cmd->add_option("--set", args.overrides, "dotted-path override, e.g. train.drop.r=1e-4");
  cmd->add_option("--out", args.out_flag, "output root (overrides config and DROPNAS_OUT)");
  cmd->add_option("--seed", args.seed_flag, "seed override")->each([&](const std::string&) {
    args.seed_set = true;
  });
  cmd->add_option("--subset", args.subset, "load only the first N records per dataset file");
  cmd->add_option("--workers", args.workers, "parallel workers for sweep/grid/ablate");
  // drop-rate shorthands for the common knobs
  cmd->add_option_function<std::string>(
      "--drop-r", [&args](const std::string& v) { args.overrides.push_back("train.drop.r=" + v); },
      "drop path rate r");
  cmd->add_option_function<std::string>(
      "--drop-rp",
      [&args](const std::string& v) { args.overrides.push_back("train.drop.rate_p=" + v); },
      "drop rate override for the parameterized group");
  cmd->add_option_function<std::string>(
      "--drop-rnp",
      [&args](const std::string& v) { args.overrides.push_back("train.drop.rate_np=" + v); },
      "drop rate override for the non-parameterized group");
}

ExperimentConfig load_config(const CommonArgs& args) {
  nlohmann::json j = load_config_json(args.config_path);
  for (const std::string& ov : args.overrides) apply_override(j, ov);
  ExperimentConfig cfg = config_from_json(j);
  if (args.seed_set) {
    cfg.seed = args.seed_flag;
    cfg.train.seed = args.seed_flag;
    cfg.eval.seed = args.seed_flag;
  }
  if (args.subset > 0) cfg.dataset.subset = args.subset;
  return cfg;
}

RunDir make_run_dir(const CommonArgs& args, const ExperimentConfig& cfg,
                    const std::string& label) {
  const std::string root = resolve_out_root(args.out_flag, cfg.out_dir);
  RunDir dir = RunDir::create(root, config_hash(cfg), label);
  dir.write_json("config.json", config_to_json(cfg));
  return dir;
}

int cmd_search(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  DatasetPair data = make_dataset(cfg.dataset, cfg.seed);
  bind_dataset_dims(cfg, data);
  RunDir dir = make_run_dir(args, cfg, "search");
  SearchSpace space = build_space(cfg.space);
  Supernet net(cfg.model, space, cfg.seed);
  SearchResult res = run_search(net, cfg.train, data, dir.path, config_hash(cfg));
  dir.write_json("genotype.json", genotype_to_json(res.genotype));
  std::cout << "run_dir: " << dir.path << "\n"
            << "final_loss: " << res.final_loss << "\n"
            << "final_train_acc: " << res.final_accuracy << "\n"
            << "checkpoint: " << res.checkpoint_path << "\n"
            << "genotype: " << dir.file("genotype.json") << "\n";
  return 0;
}

int cmd_derive(const CommonArgs& args, const std::string& checkpoint) {
  ExperimentConfig cfg = load_config(args);
  DatasetPair data = make_dataset(cfg.dataset, cfg.seed);
  bind_dataset_dims(cfg, data);
  SearchSpace space = build_space(cfg.space);
  Supernet net(cfg.model, space, cfg.seed);
  if (!checkpoint.empty()) {
    CheckpointHeader hdr = load_checkpoint(net.params, checkpoint);
    if (hdr.config_hash != config_hash(cfg))
      std::cerr << "warning: checkpoint config hash differs from the given config\n";
  }
  Genotype geno = derive_genotype(net);
  geno.meta.seed = cfg.seed;
  geno.meta.r = cfg.train.drop.r;
  geno.meta.config_hash = config_hash_hex(cfg);
  RunDir dir = make_run_dir(args, cfg, "derive");
  dir.write_json("genotype.json", genotype_to_json(geno));
  std::cout << "run_dir: " << dir.path << "\n"
            << genotype_to_json(geno).dump(2) << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& genotype_path) {
  ExperimentConfig cfg = load_config(args);
  DatasetPair data = make_dataset(cfg.dataset, cfg.seed);
  bind_dataset_dims(cfg, data);
  SearchSpace space = build_space(cfg.space);
  std::ifstream gin(genotype_path);
  if (!gin) throw ConfigError("cannot open genotype file: " + genotype_path);
  Genotype geno = genotype_from_json(nlohmann::json::parse(gin));
  validate_genotype(geno, space);
  EvalConfig ecfg = cfg.eval;
  if (geno.reduction.empty()) ecfg.use_reduction = false;
  StandaloneModel model(geno, space, ecfg, cfg.model.in_channels, cfg.model.classes, cfg.seed);
  EvalReport report = train_standalone(model, data);
  RunDir dir = make_run_dir(args, cfg, "eval");
  nlohmann::json out{{"schema_version", 1},
                     {"config_hash", config_hash_hex(cfg)},
                     {"genotype", genotype_path},
                     {"final_accuracy", report.final_accuracy},
                     {"best_accuracy", report.best_accuracy},
                     {"final_loss", report.final_loss},
                     {"epochs", report.epochs}};
  dir.write_json("eval.json", out);
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_sweep(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  DatasetPair data = make_dataset(cfg.dataset, cfg.seed);
  bind_dataset_dims(cfg, data);
  RunDir dir = make_run_dir(args, cfg, "sweep");
  diag::SweepReport rep =
      diag::sweep_drop_rate(cfg.sweep.rates, cfg.sweep.seeds, cfg, data, dir.path, args.workers);
  diag::write_sweep_report(rep, dir.path, config_hash(cfg));
  int failed = 0;
  for (const auto& run : rep.runs) failed += run.result.ok ? 0 : 1;
  std::cout << "run_dir: " << dir.path << "\n"
            << "runs: " << rep.runs.size() << " (" << failed << " failed)\n"
            << "summary: " << dir.file("sweep_summary.csv") << "\n";
  return 0;
}

int cmd_grid(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  DatasetPair data = make_dataset(cfg.dataset, cfg.seed);
  bind_dataset_dims(cfg, data);
  RunDir dir = make_run_dir(args, cfg, "grid");
  diag::GridReport rep = diag::group_rate_grid(cfg.grid.rates_p, cfg.grid.rates_np,
                                               cfg.grid.seeds, cfg, data, dir.path, args.workers);
  diag::write_grid_report(rep, cfg.grid.rates_p, cfg.grid.rates_np, dir.path, config_hash(cfg));
  std::cout << "run_dir: " << dir.path << "\n"
            << "cells: " << rep.cells.size() << "\n"
            << "summary: " << dir.file("grid_summary.csv") << "\n";
  return 0;
}

int cmd_cluster(const CommonArgs& args, const std::string& checkpoint) {
  ExperimentConfig cfg = load_config(args);
  DatasetPair data = make_dataset(cfg.dataset, cfg.seed);
  bind_dataset_dims(cfg, data);
  SearchSpace space = build_space(cfg.space);
  Supernet net(cfg.model, space, cfg.seed);
  if (!checkpoint.empty()) load_checkpoint(net.params, checkpoint);
  diag::ClusterReport rep = diag::cluster_edge_features(
      net, cfg.cluster.cell_index, cfg.cluster.edge, data.train, cfg.cluster.samples, cfg.seed);
  RunDir dir = make_run_dir(args, cfg, "cluster");
  diag::write_cluster_report(rep, dir.file("cluster.json"), dir.file("cluster.csv"),
                             config_hash(cfg));
  std::cout << "run_dir: " << dir.path << "\n"
            << "points: " << rep.op_names.size() << (rep.warning ? " (warning: " : "")
            << (rep.warning ? rep.warning_msg + ")" : "") << "\n";
  return 0;
}

int cmd_correlate(const CommonArgs& args, const std::string& checkpoint,
                  const std::string& genotype_path) {
  ExperimentConfig cfg = load_config(args);
  DatasetPair data = make_dataset(cfg.dataset, cfg.seed);
  bind_dataset_dims(cfg, data);
  SearchSpace space = build_space(cfg.space);
  Supernet net(cfg.model, space, cfg.seed);
  if (!checkpoint.empty()) load_checkpoint(net.params, checkpoint);
  Genotype base;
  if (!genotype_path.empty()) {
    std::ifstream gin(genotype_path);
    if (!gin) throw ConfigError("cannot open genotype file: " + genotype_path);
    base = genotype_from_json(nlohmann::json::parse(gin));
  } else {
    base = derive_genotype(net);
  }
  validate_genotype(base, space);
  RunDir dir = make_run_dir(args, cfg, "correlate");
  diag::CorrelationReport rep =
      diag::alpha_accuracy_correlation(net, base, cfg, data, dir.path);
  diag::write_correlation_report(rep, dir.path, config_hash(cfg));
  if (!rep.ok) throw ConfigError(rep.error);
  std::cout << "run_dir: " << dir.path << "\n"
            << "coefficient: " << rep.coefficient << "\n";
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  DatasetPair data = make_dataset(cfg.dataset, cfg.seed);
  bind_dataset_dims(cfg, data);
  RunDir dir = make_run_dir(args, cfg, "ablate");
  diag::AblationReport rep = diag::run_ablation(cfg, data, dir.path, args.workers);
  diag::write_ablation_report(rep, dir.path, config_hash(cfg));
  std::cout << "run_dir: " << dir.path << "\n";
  for (const auto& v : rep.variants)
    std::cout << v.name << ": " << (v.result.ok ? "ok" : "failed")
              << " final_acc=" << v.result.accuracy_final << "\n";
  return 0;
}

nlohmann::json error_json(int code, const std::string& kind, const std::string& message) {
  return nlohmann::json{{"schema_version", 1},
                        {"error", {{"code", code}, {"kind", kind}, {"message", message}}}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale differentiable architecture search with grouped operation dropout"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string checkpoint, genotype_path;

  CLI::App* search = app.add_subcommand("search", "one-level supernet search");
  add_common(search, args);
  CLI::App* derive = app.add_subcommand("derive", "derive the genotype from a checkpoint");
  add_common(derive, args);
  derive->add_option("--checkpoint", checkpoint, "supernet checkpoint (fresh init if omitted)");
  CLI::App* eval = app.add_subcommand("eval", "train a stand-alone model from a genotype");
  add_common(eval, args);
  eval->add_option("--genotype", genotype_path, "genotype JSON")->required();
  CLI::App* sweep = app.add_subcommand("sweep", "drop-rate sweep: search+derive+eval per rate");
  add_common(sweep, args);
  CLI::App* grid = app.add_subcommand("grid", "per-group drop-rate grid");
  add_common(grid, args);
  CLI::App* cluster = app.add_subcommand("cluster", "feature-cluster diagnostic on one edge");
  add_common(cluster, args);
  cluster->add_option("--checkpoint", checkpoint, "supernet checkpoint");
  CLI::App* correlate =
      app.add_subcommand("correlate", "alpha vs stand-alone accuracy on one edge");
  add_common(correlate, args);
  correlate->add_option("--checkpoint", checkpoint, "supernet checkpoint");
  correlate->add_option("--genotype", genotype_path, "base genotype (derived if omitted)");
  CLI::App* ablate = app.add_subcommand("ablate", "four runs with each technique disabled");
  add_common(ablate, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << error_json(2, "cli", e.what()).dump() << "\n";
    return 2;
  }

  try {
    if (search->parsed()) return cmd_search(args);
    if (derive->parsed()) return cmd_derive(args, checkpoint);
    if (eval->parsed()) return cmd_eval(args, genotype_path);
    if (sweep->parsed()) return cmd_sweep(args);
    if (grid->parsed()) return cmd_grid(args);
    if (cluster->parsed()) return cmd_cluster(args, checkpoint);
    if (correlate->parsed()) return cmd_correlate(args, checkpoint, genotype_path);
    if (ablate->parsed()) return cmd_ablate(args);
  } catch (const ConfigError& e) {
    std::cerr << error_json(2, "config", e.what()).dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << error_json(1, "runtime", e.what()).dump() << "\n";
    return 1;
  }
  return 0;
}
