#ifndef DROPNAS_DIAG_HARNESS_HPP
#define DROPNAS_DIAG_HARNESS_HPP

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dropnas/diag/linalg.hpp"
#include "dropnas/io/config.hpp"
#include "dropnas/io/run_dir.hpp"
#include "dropnas/standalone.hpp"
#include "dropnas/trainer.hpp"

namespace dropnas::diag {

// ------------------------------------------------------------- clustering

struct ClusterReport {
  int cell_index = 0;
  int edge_index = 0;
  std::vector<std::string> op_names;
  std::vector<std::array<Real, 2>> coords;
  std::vector<int> cluster;
  bool warning = false;
  std::string warning_msg;
};

// Feature-cluster diagnostic: sample data, compute each non-zero op's output
// on one edge (all ops kept), mean-pool spatially, average over samples,
// k-means with k=3, then PCA down to two dimensions for plotting.
inline ClusterReport cluster_edge_features(const Supernet& net, int cell_index, int edge_index,
                                           const Dataset& data, int samples,
                                           std::uint64_t seed) {
  samples = std::min(samples, data.count);
  if (samples < 1) throw ConfigError("cluster diagnostic needs at least one sample");

  // deterministic sample subset
  std::vector<int> pool(static_cast<size_t>(data.count));
  for (int i = 0; i < data.count; ++i) pool[static_cast<size_t>(i)] = i;
  RngStream rng(seed, "cluster-sample");
  for (int i = 0; i < samples; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(data.count - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }

  std::vector<Point> op_means;
  std::vector<std::string> names;
  const int batch = 64;
  long seen = 0;
  for (int start = 0; start < samples; start += batch) {
    const int n = std::min(batch, samples - start);
    std::vector<int> idx(pool.begin() + start, pool.begin() + start + n);
    std::vector<int> labels;
    Tensor x = make_batch(data, idx, labels);
    EdgeFeatures feats = extract_edge_features(net, cell_index, edge_index, x);
    if (op_means.empty()) {
      for (int oi : feats.op_indices)
        names.push_back(net.space.ops[static_cast<size_t>(oi)].name);
      op_means.assign(feats.features.size(), {});
    }
    for (size_t o = 0; o < feats.features.size(); ++o) {
      const Tensor& f = feats.features[o];
      const int C = f.dim(1);
      const long hw = static_cast<long>(f.dim(2)) * f.dim(3);
      if (op_means[o].empty()) op_means[o].assign(static_cast<size_t>(C), Real(0));
      for (int s = 0; s < n; ++s)
        for (int c = 0; c < C; ++c) {
          const Real* p = f.v().data() + (static_cast<long>(s) * C + c) * hw;
          Real acc = 0;
          for (long i = 0; i < hw; ++i) acc += p[i];
          op_means[o][static_cast<size_t>(c)] += acc / static_cast<Real>(hw);
        }
    }
    seen += n;
  }
  for (Point& p : op_means)
    for (Real& v : p) v /= static_cast<Real>(seen);

  ClusterReport rep;
  rep.cell_index = cell_index;
  rep.edge_index = edge_index;
  rep.op_names = names;

  // degenerate features: every op produced the same mean vector
  Real spread = 0;
  for (size_t a = 0; a < op_means.size(); ++a)
    for (size_t b = a + 1; b < op_means.size(); ++b)
      for (size_t d = 0; d < op_means[a].size(); ++d)
        spread = std::max(spread, std::abs(op_means[a][d] - op_means[b][d]));
  if (spread < Real(1e-12)) {
    rep.warning = true;
    rep.warning_msg = "degenerate features: all operations produced identical outputs";
  }

  RngStream krng(seed, "cluster-kmeans");
  KMeansResult km = kmeans(op_means, std::min<int>(3, static_cast<int>(op_means.size())), krng);
  rep.cluster = km.assign;
  if (km.collapsed && !rep.warning) {
    rep.warning = true;
    rep.warning_msg = "k-means collapsed: an empty cluster remained after convergence";
  }
  PcaResult pca = pca2(op_means);
  rep.coords = pca.coords;
  for (const auto& xy : rep.coords)
    if (!std::isfinite(xy[0]) || !std::isfinite(xy[1]))
      throw NumericError("non-finite cluster coordinates");
  return rep;
}

inline void write_cluster_report(const ClusterReport& rep, const std::string& json_path,
                                 const std::string& csv_path, std::uint64_t config_hash) {
  nlohmann::json points = nlohmann::json::array();
  for (size_t i = 0; i < rep.op_names.size(); ++i)
    points.push_back({{"op", rep.op_names[i]},
                      {"x", rep.coords[i][0]},
                      {"y", rep.coords[i][1]},
                      {"cluster", rep.cluster[i]}});
  std::ostringstream hash_hex;
  hash_hex << std::hex << config_hash;
  nlohmann::json j{{"schema_version", 1},
                   {"config_hash", hash_hex.str()},
                   {"cell_index", rep.cell_index},
                   {"edge_index", rep.edge_index},
                   {"warning", rep.warning},
                   {"warning_msg", rep.warning_msg},
                   {"points", points}};
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + json_path);
  out << j.dump(2) << "\n";

  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot write " + csv_path);
  csv << "# schema=dropnas.cluster.v1 config_hash=" << hash_hex.str() << "\n";
  csv << "cell,edge,op,x,y,cluster\n" << std::setprecision(17);
  for (size_t i = 0; i < rep.op_names.size(); ++i)
    csv << rep.cell_index << ',' << rep.edge_index << ',' << rep.op_names[i] << ','
        << rep.coords[i][0] << ',' << rep.coords[i][1] << ',' << rep.cluster[i] << "\n";
}

// ------------------------------------------------------------- pipeline

// search -> derive -> stand-alone evaluation, the unit of work for sweeps,
// grids and ablations
struct PipelineResult {
  bool ok = false;
  std::string error;
  std::string run_dir;
  Real search_loss = 0;
  Real accuracy_final = 0;
  Real accuracy_best = 0;
  Genotype genotype;
};

inline PipelineResult run_pipeline(ExperimentConfig cfg, const DatasetPair& data,
                                   const std::string& out_dir) {
  PipelineResult res;
  res.run_dir = out_dir;
  try {
    bind_dataset_dims(cfg, data);
    const std::uint64_t hash = config_hash(cfg);
    std::filesystem::create_directories(out_dir);
    {
      std::ofstream cj(out_dir + "/config.json", std::ios::trunc);
      cj << config_to_json(cfg).dump(2) << "\n";
    }
    SearchSpace space = build_space(cfg.space);
    Supernet net(cfg.model, space, cfg.seed);
    SearchResult search = run_search(net, cfg.train, data, out_dir, hash);
    res.search_loss = search.final_loss;
    res.genotype = search.genotype;
    {
      std::ofstream gj(out_dir + "/genotype.json", std::ios::trunc);
      gj << genotype_to_json(search.genotype).dump(2) << "\n";
    }
    EvalConfig ecfg = cfg.eval;
    if (res.genotype.reduction.empty()) ecfg.use_reduction = false;
    StandaloneModel model(res.genotype, space, ecfg, cfg.model.in_channels, cfg.model.classes,
                          cfg.seed);
    EvalReport report = train_standalone(model, data);
    res.accuracy_final = report.final_accuracy;
    res.accuracy_best = report.best_accuracy;
    res.ok = true;
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
  }
  return res;
}

namespace detail {

// run jobs on a small pool; results land in disjoint slots, reports are
// written by the caller afterwards (single writer)
inline void run_jobs(std::vector<std::function<void()>>& jobs, int workers) {
  workers = std::max(1, workers);
  if (workers == 1) {
    for (auto& j : jobs) j();
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      while (true) {
        const size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        jobs[i]();
      }
    });
  for (auto& th : pool) th.join();
}

inline std::string rate_tag(double r) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << r;
  return os.str();
}

}  // namespace detail

// ------------------------------------------------------------- sweep

struct SweepRun {
  double r = 0;
  double p_d = 0;
  std::string regime;
  std::uint64_t seed = 0;
  PipelineResult result;
};

struct SweepReport {
  struct Row {
    double r = 0;
    double p_d = 0;
    std::string regime;
    double mean_acc = 0;
    double std_acc = 0;
    int seeds_used = 0;
  };
  std::vector<SweepRun> runs;
  std::vector<Row> rows;
};

inline SweepReport sweep_drop_rate(const std::vector<double>& rates,
                                   const std::vector<std::uint64_t>& seeds,
                                   const ExperimentConfig& base, const DatasetPair& data,
                                   const std::string& out_dir, int workers = 1) {
  if (rates.empty() || seeds.empty())
    throw ConfigError("sweep needs at least one rate and one seed");
  SweepReport report;
  report.runs.resize(rates.size() * seeds.size());
  std::vector<std::function<void()>> jobs;
  for (size_t ri = 0; ri < rates.size(); ++ri)
    for (size_t si = 0; si < seeds.size(); ++si) {
      const size_t slot = ri * seeds.size() + si;
      jobs.push_back([&, ri, si, slot] {
        SweepRun& run = report.runs[slot];
        run.r = rates[ri];
        run.seed = seeds[si];
        ExperimentConfig cfg = base;
        cfg.seed = seeds[si];
        cfg.train.seed = seeds[si];
        cfg.eval.seed = seeds[si];
        cfg.train.drop.r = static_cast<Real>(rates[ri]);
        cfg.train.drop.rate_p.reset();
        cfg.train.drop.rate_np.reset();
        try {
          SearchSpace space = build_space(cfg.space);
          run.p_d = drop_prob(static_cast<Real>(rates[ri]),
                              static_cast<int>(space.param_idx.size()));
          run.regime = regime_of(static_cast<Real>(run.p_d));
        } catch (const std::exception& e) {
          run.result.ok = false;
          run.result.error = e.what();
          return;
        }
        run.result = run_pipeline(cfg, data,
                                  out_dir + "/r" + detail::rate_tag(rates[ri]) + "-s" +
                                      std::to_string(seeds[si]));
      });
    }
  detail::run_jobs(jobs, workers);

  for (size_t ri = 0; ri < rates.size(); ++ri) {
    SweepReport::Row row;
    row.r = rates[ri];
    std::vector<double> accs;
    for (size_t si = 0; si < seeds.size(); ++si) {
      const SweepRun& run = report.runs[ri * seeds.size() + si];
      row.p_d = run.p_d;
      row.regime = run.regime;
      if (run.result.ok) accs.push_back(run.result.accuracy_final);
    }
    row.seeds_used = static_cast<int>(accs.size());
    if (!accs.empty()) {
      double m = 0;
      for (double a : accs) m += a;
      m /= static_cast<double>(accs.size());
      row.mean_acc = m;
      if (accs.size() >= 2) {
        double s = 0;
        for (double a : accs) s += (a - m) * (a - m);
        row.std_acc = std::sqrt(s / static_cast<double>(accs.size() - 1));
      }
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

inline void write_sweep_report(const SweepReport& report, const std::string& out_dir,
                               std::uint64_t config_hash) {
  std::ostringstream hh;
  hh << std::hex << config_hash;
  {
    std::ofstream runs(out_dir + "/sweep_runs.csv", std::ios::trunc);
    if (!runs) throw IoError("cannot write sweep_runs.csv");
    runs << "# schema=dropnas.sweep_runs.v1 config_hash=" << hh.str() << "\n";
    runs << "r,p_d,regime,seed,status,final_acc,best_acc,error\n" << std::setprecision(17);
    for (const SweepRun& run : report.runs)
      runs << run.r << ',' << run.p_d << ',' << run.regime << ',' << run.seed << ','
           << (run.result.ok ? "ok" : "failed") << ',' << run.result.accuracy_final << ','
           << run.result.accuracy_best << ",\"" << run.result.error << "\"\n";
  }
  {
    std::ofstream sum(out_dir + "/sweep_summary.csv", std::ios::trunc);
    if (!sum) throw IoError("cannot write sweep_summary.csv");
    sum << "# schema=dropnas.sweep_summary.v1 config_hash=" << hh.str() << "\n";
    sum << "r,p_d,regime,mean_acc,std_acc,seeds_used\n" << std::setprecision(17);
    for (const auto& row : report.rows)
      sum << row.r << ',' << row.p_d << ',' << row.regime << ',' << row.mean_acc << ','
          << row.std_acc << ',' << row.seeds_used << "\n";
  }
}

// ------------------------------------------------------------- rate grid

struct GridReport {
  struct Cell {
    double rate_p = 0, rate_np = 0;
    bool diagonal = false;
    double mean_acc = 0, std_acc = 0;
    int seeds_used = 0;
  };
  std::vector<SweepRun> runs;  // reusing the per-run record; r holds rate_p
  std::vector<Cell> cells;
};

inline GridReport group_rate_grid(const std::vector<double>& rates_p,
                                  const std::vector<double>& rates_np,
                                  const std::vector<std::uint64_t>& seeds,
                                  const ExperimentConfig& base, const DatasetPair& data,
                                  const std::string& out_dir, int workers = 1) {
  if (rates_p.empty() || rates_np.empty() || seeds.empty())
    throw ConfigError("grid needs non-empty rate lists and seeds");
  GridReport report;
  report.runs.resize(rates_p.size() * rates_np.size() * seeds.size());
  std::vector<std::function<void()>> jobs;
  size_t slot = 0;
  for (size_t pi = 0; pi < rates_p.size(); ++pi)
    for (size_t ni = 0; ni < rates_np.size(); ++ni)
      for (size_t si = 0; si < seeds.size(); ++si, ++slot) {
        const size_t s = slot;
        jobs.push_back([&, pi, ni, si, s] {
          SweepRun& run = report.runs[s];
          run.r = rates_p[pi];
          run.seed = seeds[si];
          ExperimentConfig cfg = base;
          cfg.seed = seeds[si];
          cfg.train.seed = seeds[si];
          cfg.eval.seed = seeds[si];
          cfg.train.drop.rate_p = static_cast<Real>(rates_p[pi]);
          cfg.train.drop.rate_np = static_cast<Real>(rates_np[ni]);
          run.result = run_pipeline(cfg, data,
                                    out_dir + "/p" + detail::rate_tag(rates_p[pi]) + "-np" +
                                        detail::rate_tag(rates_np[ni]) + "-s" +
                                        std::to_string(seeds[si]));
        });
      }
  detail::run_jobs(jobs, workers);

  slot = 0;
  for (size_t pi = 0; pi < rates_p.size(); ++pi)
    for (size_t ni = 0; ni < rates_np.size(); ++ni) {
      GridReport::Cell cell;
      cell.rate_p = rates_p[pi];
      cell.rate_np = rates_np[ni];
      cell.diagonal = rates_p[pi] == rates_np[ni];
      std::vector<double> accs;
      for (size_t si = 0; si < seeds.size(); ++si, ++slot)
        if (report.runs[slot].result.ok) accs.push_back(report.runs[slot].result.accuracy_final);
      cell.seeds_used = static_cast<int>(accs.size());
      if (!accs.empty()) {
        double m = 0;
        for (double a : accs) m += a;
        m /= static_cast<double>(accs.size());
        cell.mean_acc = m;
        if (accs.size() >= 2) {
          double v = 0;
          for (double a : accs) v += (a - m) * (a - m);
          cell.std_acc = std::sqrt(v / static_cast<double>(accs.size() - 1));
        }
      }
      report.cells.push_back(cell);
    }
  return report;
}

inline void write_grid_report(const GridReport& report, const std::vector<double>& rates_p,
                              const std::vector<double>& rates_np, const std::string& out_dir,
                              std::uint64_t config_hash) {
  std::ostringstream hh;
  hh << std::hex << config_hash;
  {
    std::ofstream sum(out_dir + "/grid_summary.csv", std::ios::trunc);
    if (!sum) throw IoError("cannot write grid_summary.csv");
    sum << "# schema=dropnas.grid_summary.v1 config_hash=" << hh.str() << "\n";
    sum << "rate_p,rate_np,diagonal,mean_acc,std_acc,seeds_used\n" << std::setprecision(17);
    for (const auto& c : report.cells)
      sum << c.rate_p << ',' << c.rate_np << ',' << (c.diagonal ? 1 : 0) << ',' << c.mean_acc
          << ',' << c.std_acc << ',' << c.seeds_used << "\n";
  }
  {
    // matrix layout: rows = non-parameterized rates, columns = parameterized
    std::ofstream mat(out_dir + "/grid_matrix.csv", std::ios::trunc);
    if (!mat) throw IoError("cannot write grid_matrix.csv");
    mat << "# schema=dropnas.grid_matrix.v1 config_hash=" << hh.str() << "\n";
    mat << "rate_np\\rate_p";
    for (double rp : rates_p) mat << ',' << rp;
    mat << "\n" << std::setprecision(10);
    for (double rn : rates_np) {
      mat << rn;
      for (double rp : rates_p) {
        for (const auto& c : report.cells)
          if (c.rate_p == rp && c.rate_np == rn) mat << ',' << c.mean_acc;
      }
      mat << "\n";
    }
  }
}

// ------------------------------------------------------------- correlation

struct CorrelationReport {
  bool ok = false;
  std::string error;
  double coefficient = 0;
  std::string cell_kind;
  int edge = 0;
  struct Entry {
    std::string op;
    double alpha = 0;
    double accuracy = 0;
    bool trained = false;
    std::string error;
  };
  std::vector<Entry> table;
};

// Variant study on one edge: swap in each non-zero candidate op, train the
// stand-alone model, and correlate accuracy against that op's alpha.
inline CorrelationReport alpha_accuracy_correlation(const Supernet& net,
                                                    const Genotype& base,
                                                    const ExperimentConfig& cfg,
                                                    const DatasetPair& data,
                                                    const std::string& out_dir) {
  CorrelationReport rep;
  rep.cell_kind = cfg.correlate.cell_kind;
  rep.edge = cfg.correlate.edge;
  const CellKind kind =
      cfg.correlate.cell_kind == "reduction" ? CellKind::Reduction : CellKind::Normal;

  const auto edges = enumerate_edges(CellGraph::make(net.mcfg.nodes));
  if (rep.edge < 0 || rep.edge >= static_cast<int>(edges.size())) {
    rep.error = "edge index out of range";
    return rep;
  }
  const int pred = edges[static_cast<size_t>(rep.edge)].first;
  const int node = edges[static_cast<size_t>(rep.edge)].second - 2;

  const auto& choices = base.for_kind(kind);
  bool edge_in_genotype = false;
  for (const auto& ch : choices)
    edge_in_genotype = edge_in_genotype || (ch.node == node && ch.pred == pred);
  if (!edge_in_genotype) {
    rep.error = "edge (" + std::to_string(pred) + " -> node " + std::to_string(node) +
                ") is not part of the base genotype; pick a selected edge";
    return rep;
  }

  const std::vector<std::vector<Real>> alpha = mean_alpha_for_kind(net, kind);
  std::filesystem::create_directories(out_dir);

  std::vector<double> xs, ys;
  for (int o = 0; o < net.space.size(); ++o) {
    if (net.space.ops[static_cast<size_t>(o)].is_zero) continue;
    CorrelationReport::Entry entry;
    entry.op = net.space.ops[static_cast<size_t>(o)].name;
    entry.alpha = alpha[static_cast<size_t>(rep.edge)][static_cast<size_t>(o)];
    Genotype variant = base;
    auto& vchoices = kind == CellKind::Normal ? variant.normal : variant.reduction;
    for (auto& ch : vchoices)
      if (ch.node == node && ch.pred == pred) ch.op = entry.op;
    try {
      EvalConfig ecfg = cfg.eval;
      if (variant.reduction.empty()) ecfg.use_reduction = false;
      SearchSpace space = build_space(cfg.space);
      StandaloneModel model(variant, space, ecfg, cfg.model.in_channels, cfg.model.classes,
                            cfg.seed);
      EvalReport er = train_standalone(model, data);
      entry.accuracy = er.final_accuracy;
      entry.trained = true;
      xs.push_back(entry.alpha);
      ys.push_back(entry.accuracy);
    } catch (const std::exception& e) {
      entry.error = e.what();
    }
    rep.table.push_back(std::move(entry));
  }

  if (xs.size() < 3) {
    rep.error = "correlation undefined: fewer than 3 variants trained";
    return rep;
  }
  std::optional<double> coeff = pearson(xs, ys);
  if (!coeff) {
    rep.error = "correlation undefined: zero variance in alpha or accuracy";
    return rep;
  }
  rep.coefficient = *coeff;
  rep.ok = true;
  return rep;
}

inline void write_correlation_report(const CorrelationReport& rep, const std::string& out_dir,
                                     std::uint64_t config_hash) {
  std::ostringstream hh;
  hh << std::hex << config_hash;
  {
    std::ofstream csv(out_dir + "/correlation_table.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write correlation_table.csv");
    csv << "# schema=dropnas.correlation.v1 config_hash=" << hh.str() << "\n";
    csv << "cell_kind,edge,op,alpha,accuracy,trained,error\n" << std::setprecision(17);
    for (const auto& e : rep.table)
      csv << rep.cell_kind << ',' << rep.edge << ',' << e.op << ',' << e.alpha << ','
          << e.accuracy << ',' << (e.trained ? 1 : 0) << ",\"" << e.error << "\"\n";
  }
  nlohmann::json j{{"schema_version", 1},
                   {"config_hash", hh.str()},
                   {"cell_kind", rep.cell_kind},
                   {"edge", rep.edge},
                   {"ok", rep.ok},
                   {"coefficient", rep.coefficient},
                   {"error", rep.error}};
  std::ofstream out(out_dir + "/correlation.json", std::ios::trunc);
  out << j.dump(2) << "\n";
}

// ------------------------------------------------------------- ablation

struct AblationReport {
  struct Variant {
    std::string name;
    PipelineResult result;
  };
  std::vector<Variant> variants;
};

// Four complete runs: everything on, then each technique disabled in turn.
inline AblationReport run_ablation(const ExperimentConfig& base, const DatasetPair& data,
                                   const std::string& out_dir, int workers = 1) {
  struct Spec {
    const char* name;
    bool adjust, partial, grouping;
  };
  const std::vector<Spec> specs{{"full", true, true, true},
                                {"no_alpha_adjust", false, true, true},
                                {"no_partial_decay", true, false, true},
                                {"no_grouping", true, true, false}};
  AblationReport report;
  report.variants.resize(specs.size());
  std::vector<std::function<void()>> jobs;
  for (size_t i = 0; i < specs.size(); ++i) {
    jobs.push_back([&, i] {
      ExperimentConfig cfg = base;
      cfg.train.alpha_adjust = specs[i].adjust;
      cfg.train.partial_decay = specs[i].partial;
      cfg.train.grouping = specs[i].grouping;
      report.variants[i].name = specs[i].name;
      report.variants[i].result = run_pipeline(cfg, data, out_dir + "/" + specs[i].name);
    });
  }
  detail::run_jobs(jobs, workers);
  return report;
}

inline void write_ablation_report(const AblationReport& report, const std::string& out_dir,
                                  std::uint64_t config_hash) {
  std::ostringstream hh;
  hh << std::hex << config_hash;
  std::ofstream csv(out_dir + "/ablate.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write ablate.csv");
  csv << "# schema=dropnas.ablate.v1 config_hash=" << hh.str() << "\n";
  csv << "variant,status,search_loss,final_acc,best_acc,error\n" << std::setprecision(17);
  for (const auto& v : report.variants)
    csv << v.name << ',' << (v.result.ok ? "ok" : "failed") << ',' << v.result.search_loss
        << ',' << v.result.accuracy_final << ',' << v.result.accuracy_best << ",\""
        << v.result.error << "\"\n";
}

}  // namespace dropnas::diag

#endif
