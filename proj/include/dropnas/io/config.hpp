#ifndef DROPNAS_IO_CONFIG_HPP
#define DROPNAS_IO_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dropnas/core/rng.hpp"
#include "dropnas/io/dataset.hpp"
#include "dropnas/space.hpp"
#include "dropnas/standalone.hpp"
#include "dropnas/supernet/supernet.hpp"
#include "dropnas/trainer.hpp"

namespace dropnas {

struct SweepSettings {
  // default grid spans the published regimes: never-drop, three rates around
  // the recommended one, and the one-path / two-path equivalents given as
  // r = p_d^4
  std::vector<double> rates{0.0, 1e-5, 3e-5, 1e-4, 0.31640625, 0.586181640625};
  std::vector<std::uint64_t> seeds{1, 2};
};

struct GridSettings {
  std::vector<double> rates_p{1e-5, 3e-5, 1e-4};
  std::vector<double> rates_np{1e-5, 3e-5, 1e-4};
  std::vector<std::uint64_t> seeds{1};
};

struct CorrelateSettings {
  std::string cell_kind = "normal";
  int edge = 0;
};

struct ClusterSettings {
  int cell_index = 0;
  int edge = 0;
  int samples = 1000;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir;  // output root; may be overridden by flag / env
  SpaceConfig space;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  DatasetSpec dataset;
  SweepSettings sweep;
  GridSettings grid;
  CorrelateSettings correlate;
  ClusterSettings cluster;
};

namespace cfgdetail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::set<std::string>& allowed,
                           const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

inline void get_opt_real(const json& j, const char* key, std::optional<Real>& out) {
  if (j.contains(key) && !j[key].is_null()) out = j[key].get<Real>();
}

}  // namespace cfgdetail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using cfgdetail::get_if;
  using cfgdetail::get_opt_real;
  using cfgdetail::reject_unknown;
  ExperimentConfig cfg;

  reject_unknown(j, {"schema_version", "seed", "out_dir", "space", "model", "train", "eval",
                     "dataset", "sweep", "grid", "correlate", "cluster"},
                 "config root");
  if (j.contains("schema_version") && j["schema_version"].get<int>() != 1)
    throw ConfigError("unsupported config schema_version");
  get_if(j, "seed", cfg.seed);
  get_if(j, "out_dir", cfg.out_dir);

  if (j.contains("space")) {
    const auto& s = j["space"];
    reject_unknown(s, {"name", "ops", "rate_p", "rate_np"}, "space");
    get_if(s, "name", cfg.space.name);
    get_if(s, "ops", cfg.space.custom_ops);
    get_opt_real(s, "rate_p", cfg.space.rate_p);
    get_opt_real(s, "rate_np", cfg.space.rate_np);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    reject_unknown(m, {"cells", "nodes", "channels", "stem_multiplier", "use_reduction",
                       "per_cell_alpha", "bn_affine"},
                   "model");
    get_if(m, "cells", cfg.model.cells);
    get_if(m, "nodes", cfg.model.nodes);
    get_if(m, "channels", cfg.model.channels);
    get_if(m, "stem_multiplier", cfg.model.stem_multiplier);
    get_if(m, "use_reduction", cfg.model.use_reduction);
    get_if(m, "per_cell_alpha", cfg.model.per_cell_alpha);
    get_if(m, "bn_affine", cfg.model.bn_affine);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    reject_unknown(t, {"epochs", "batch_size", "w", "alpha", "drop", "alpha_adjust",
                       "partial_decay", "grouping", "cosine_lr"},
                   "train");
    get_if(t, "epochs", cfg.train.epochs);
    get_if(t, "batch_size", cfg.train.batch_size);
    if (t.contains("w")) {
      const auto& w = t["w"];
      reject_unknown(w, {"lr", "momentum", "weight_decay", "clip"}, "train.w");
      get_if(w, "lr", cfg.train.w.lr);
      get_if(w, "momentum", cfg.train.w.momentum);
      get_if(w, "weight_decay", cfg.train.w.weight_decay);
      get_if(w, "clip", cfg.train.w.clip);
    }
    if (t.contains("alpha")) {
      const auto& a = t["alpha"];
      reject_unknown(a, {"lr", "beta1", "beta2", "weight_decay"}, "train.alpha");
      get_if(a, "lr", cfg.train.a.lr);
      get_if(a, "beta1", cfg.train.a.beta1);
      get_if(a, "beta2", cfg.train.a.beta2);
      get_if(a, "weight_decay", cfg.train.a.weight_decay);
    }
    if (t.contains("drop")) {
      const auto& d = t["drop"];
      reject_unknown(d, {"r", "rate_p", "rate_np", "resample_cap"}, "train.drop");
      get_if(d, "r", cfg.train.drop.r);
      get_opt_real(d, "rate_p", cfg.train.drop.rate_p);
      get_opt_real(d, "rate_np", cfg.train.drop.rate_np);
      get_if(d, "resample_cap", cfg.train.drop.resample_cap);
    }
    get_if(t, "alpha_adjust", cfg.train.alpha_adjust);
    get_if(t, "partial_decay", cfg.train.partial_decay);
    get_if(t, "grouping", cfg.train.grouping);
    get_if(t, "cosine_lr", cfg.train.cosine_lr);
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    reject_unknown(e, {"cells", "channels", "stem_multiplier", "use_reduction", "bn_affine",
                       "epochs", "batch_size", "lr", "momentum", "weight_decay", "clip",
                       "cosine_lr", "cutout", "cutout_length", "aux_tower", "aux_weight"},
                   "eval");
    get_if(e, "cells", cfg.eval.cells);
    get_if(e, "channels", cfg.eval.channels);
    get_if(e, "stem_multiplier", cfg.eval.stem_multiplier);
    get_if(e, "use_reduction", cfg.eval.use_reduction);
    get_if(e, "bn_affine", cfg.eval.bn_affine);
    get_if(e, "epochs", cfg.eval.epochs);
    get_if(e, "batch_size", cfg.eval.batch_size);
    get_if(e, "lr", cfg.eval.lr);
    get_if(e, "momentum", cfg.eval.momentum);
    get_if(e, "weight_decay", cfg.eval.weight_decay);
    get_if(e, "clip", cfg.eval.clip);
    get_if(e, "cosine_lr", cfg.eval.cosine_lr);
    get_if(e, "cutout", cfg.eval.cutout);
    get_if(e, "cutout_length", cfg.eval.cutout_length);
    get_if(e, "aux_tower", cfg.eval.aux_tower);
    get_if(e, "aux_weight", cfg.eval.aux_weight);
  }
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    reject_unknown(d, {"kind", "path", "classes", "train_count", "test_count", "image_size",
                       "channels", "subset", "normalize_mean", "normalize_std"},
                   "dataset");
    get_if(d, "kind", cfg.dataset.kind);
    get_if(d, "path", cfg.dataset.path);
    get_if(d, "classes", cfg.dataset.classes);
    get_if(d, "train_count", cfg.dataset.train_count);
    get_if(d, "test_count", cfg.dataset.test_count);
    get_if(d, "image_size", cfg.dataset.image_size);
    get_if(d, "channels", cfg.dataset.channels);
    get_if(d, "subset", cfg.dataset.subset);
    get_if(d, "normalize_mean", cfg.dataset.normalize_mean);
    get_if(d, "normalize_std", cfg.dataset.normalize_std);
  }
  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    reject_unknown(s, {"rates", "seeds"}, "sweep");
    get_if(s, "rates", cfg.sweep.rates);
    get_if(s, "seeds", cfg.sweep.seeds);
  }
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    reject_unknown(g, {"rates_p", "rates_np", "seeds"}, "grid");
    get_if(g, "rates_p", cfg.grid.rates_p);
    get_if(g, "rates_np", cfg.grid.rates_np);
    get_if(g, "seeds", cfg.grid.seeds);
  }
  if (j.contains("correlate")) {
    const auto& c = j["correlate"];
    reject_unknown(c, {"cell_kind", "edge"}, "correlate");
    get_if(c, "cell_kind", cfg.correlate.cell_kind);
    get_if(c, "edge", cfg.correlate.edge);
  }
  if (j.contains("cluster")) {
    const auto& c = j["cluster"];
    reject_unknown(c, {"cell_index", "edge", "samples"}, "cluster");
    get_if(c, "cell_index", cfg.cluster.cell_index);
    get_if(c, "edge", cfg.cluster.edge);
    get_if(c, "samples", cfg.cluster.samples);
  }

  // validation beyond key/type checks
  if (cfg.train.epochs <= 0 || cfg.train.batch_size <= 0)
    throw ConfigError("train.epochs and train.batch_size must be positive");
  if (cfg.model.cells <= 0 || cfg.model.nodes <= 0 || cfg.model.channels <= 0)
    throw ConfigError("model dimensions must be positive");
  if (!(cfg.train.drop.r >= 0 && cfg.train.drop.r < 1))
    throw ConfigError("train.drop.r must be in [0,1)");
  if (cfg.dataset.kind != "cifar10-binary" &&
      (cfg.dataset.train_count <= 0 || cfg.dataset.test_count <= 0))
    throw ConfigError("dataset sample counts must be positive");
  if (cfg.correlate.cell_kind != "normal" && cfg.correlate.cell_kind != "reduction")
    throw ConfigError("correlate.cell_kind must be normal or reduction");
  build_space(cfg.space);  // raises on bad op sets
  // mirror the experiment seed into the nested configs
  cfg.train.seed = cfg.seed;
  cfg.eval.seed = cfg.seed;
  return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["space"] = {{"name", cfg.space.name}, {"ops", cfg.space.custom_ops}};
  if (cfg.space.rate_p) j["space"]["rate_p"] = *cfg.space.rate_p;
  if (cfg.space.rate_np) j["space"]["rate_np"] = *cfg.space.rate_np;
  j["model"] = {{"cells", cfg.model.cells},
                {"nodes", cfg.model.nodes},
                {"channels", cfg.model.channels},
                {"stem_multiplier", cfg.model.stem_multiplier},
                {"use_reduction", cfg.model.use_reduction},
                {"per_cell_alpha", cfg.model.per_cell_alpha},
                {"bn_affine", cfg.model.bn_affine}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"w",
                 {{"lr", cfg.train.w.lr},
                  {"momentum", cfg.train.w.momentum},
                  {"weight_decay", cfg.train.w.weight_decay},
                  {"clip", cfg.train.w.clip}}},
                {"alpha",
                 {{"lr", cfg.train.a.lr},
                  {"beta1", cfg.train.a.beta1},
                  {"beta2", cfg.train.a.beta2},
                  {"weight_decay", cfg.train.a.weight_decay}}},
                {"drop", {{"r", cfg.train.drop.r}, {"resample_cap", cfg.train.drop.resample_cap}}},
                {"alpha_adjust", cfg.train.alpha_adjust},
                {"partial_decay", cfg.train.partial_decay},
                {"grouping", cfg.train.grouping},
                {"cosine_lr", cfg.train.cosine_lr}};
  if (cfg.train.drop.rate_p) j["train"]["drop"]["rate_p"] = *cfg.train.drop.rate_p;
  if (cfg.train.drop.rate_np) j["train"]["drop"]["rate_np"] = *cfg.train.drop.rate_np;
  j["eval"] = {{"cells", cfg.eval.cells},
               {"channels", cfg.eval.channels},
               {"stem_multiplier", cfg.eval.stem_multiplier},
               {"use_reduction", cfg.eval.use_reduction},
               {"bn_affine", cfg.eval.bn_affine},
               {"epochs", cfg.eval.epochs},
               {"batch_size", cfg.eval.batch_size},
               {"lr", cfg.eval.lr},
               {"momentum", cfg.eval.momentum},
               {"weight_decay", cfg.eval.weight_decay},
               {"clip", cfg.eval.clip},
               {"cosine_lr", cfg.eval.cosine_lr},
               {"cutout", cfg.eval.cutout},
               {"cutout_length", cfg.eval.cutout_length},
               {"aux_tower", cfg.eval.aux_tower},
               {"aux_weight", cfg.eval.aux_weight}};
  j["dataset"] = {{"kind", cfg.dataset.kind},
                  {"path", cfg.dataset.path},
                  {"classes", cfg.dataset.classes},
                  {"train_count", cfg.dataset.train_count},
                  {"test_count", cfg.dataset.test_count},
                  {"image_size", cfg.dataset.image_size},
                  {"channels", cfg.dataset.channels},
                  {"subset", cfg.dataset.subset},
                  {"normalize_mean", cfg.dataset.normalize_mean},
                  {"normalize_std", cfg.dataset.normalize_std}};
  j["sweep"] = {{"rates", cfg.sweep.rates}, {"seeds", cfg.sweep.seeds}};
  j["grid"] = {{"rates_p", cfg.grid.rates_p},
               {"rates_np", cfg.grid.rates_np},
               {"seeds", cfg.grid.seeds}};
  j["correlate"] = {{"cell_kind", cfg.correlate.cell_kind}, {"edge", cfg.correlate.edge}};
  j["cluster"] = {{"cell_index", cfg.cluster.cell_index},
                  {"edge", cfg.cluster.edge},
                  {"samples", cfg.cluster.samples}};
  return j;
}

// canonical dump (nlohmann objects iterate in key order) -> 64-bit hash
inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string dump = config_to_json(cfg).dump();
  return fnv1a64(dump);
}

inline std::string config_hash_hex(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << std::hex << config_hash(cfg);
  return os.str();
}

// dotted-path override: "train.drop.r=0.0001"; the value is parsed as JSON,
// falling back to a string literal. "drop.*" is accepted as shorthand for
// "train.drop.*".
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like key.path=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  if (path.rfind("drop.", 0) == 0) path = "train." + path;
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (...) {
    value = raw;
  }
  nlohmann::json* node = &j;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("empty key in override path: " + assignment);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline nlohmann::json load_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
}

// model dims that come from the dataset
inline void bind_dataset_dims(ExperimentConfig& cfg, const DatasetPair& data) {
  cfg.model.in_channels = data.train.channels;
  cfg.model.classes = data.train.classes;
}

}  // namespace dropnas

#endif
