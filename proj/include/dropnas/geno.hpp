#ifndef DROPNAS_GENO_HPP
#define DROPNAS_GENO_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dropnas/space.hpp"
#include "dropnas/supernet/supernet.hpp"

namespace dropnas {

// Discrete architecture: per cell kind, per intermediate node, exactly two
// (predecessor, operation) choices. Node indices are intermediate-relative
// (0-based); predecessors use the cell numbering where 0/1 are the inputs.
struct Genotype {
  struct Choice {
    int node = 0;
    int pred = 0;
    std::string op;
  };
  std::vector<Choice> normal;
  std::vector<Choice> reduction;  // empty when the model has no reduction cells
  int nodes = 0;

  struct Meta {
    std::uint64_t seed = 0;
    Real r = 0;
    std::string config_hash;
  } meta;

  const std::vector<Choice>& for_kind(CellKind k) const {
    return k == CellKind::Normal ? normal : reduction;
  }
};

namespace detail {

inline std::vector<Real> softmax_values(const std::vector<Real>& a) {
  Real mx = a[0];
  for (Real v : a) mx = std::max(mx, v);
  Real z = 0;
  std::vector<Real> p(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    p[i] = std::exp(a[i] - mx);
    z += p[i];
  }
  for (Real& v : p) v /= z;
  return p;
}

}  // namespace detail

// Two-step derivation: per edge the winner is the best non-zero op by p;
// per node keep the two incoming edges with the largest winner-p. All ties
// break deterministically (lower op index, then lower predecessor index).
inline std::vector<Genotype::Choice> derive_cell(
    const std::vector<std::vector<Real>>& edge_alpha, const SearchSpace& space, int nodes) {
  const CellGraph g = CellGraph::make(nodes);
  const auto edges = enumerate_edges(g);
  if (edge_alpha.size() != edges.size())
    throw ContractError("alpha table does not match edge count");

  struct EdgeScore {
    int pred;
    int op;
    Real p;
  };
  std::vector<Genotype::Choice> out;
  size_t e = 0;
  for (int j = 2; j < nodes + 2; ++j) {
    std::vector<EdgeScore> incoming;
    for (int i = 0; i < j; ++i, ++e) {
      const std::vector<Real> p = detail::softmax_values(edge_alpha[e]);
      int best = -1;
      for (int o = 0; o < space.size(); ++o) {
        if (space.ops[static_cast<size_t>(o)].is_zero) continue;
        if (best < 0 || p[static_cast<size_t>(o)] > p[static_cast<size_t>(best)]) best = o;
      }
      incoming.push_back({i, best, p[static_cast<size_t>(best)]});
    }
    std::stable_sort(incoming.begin(), incoming.end(),
                     [](const EdgeScore& a, const EdgeScore& b) { return a.p > b.p; });
    for (int k = 0; k < 2 && k < static_cast<int>(incoming.size()); ++k)
      out.push_back({j - 2, incoming[static_cast<size_t>(k)].pred,
                     space.ops[static_cast<size_t>(incoming[static_cast<size_t>(k)].op)].name});
  }
  // fixed ordering inside a node: by predecessor index
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.node != b.node ? a.node < b.node : a.pred < b.pred;
  });
  return out;
}

inline std::vector<std::vector<Real>> mean_alpha_for_kind(const Supernet& net, CellKind kind) {
  std::vector<std::vector<Real>> acc;
  int n = 0;
  for (const AlphaBank& b : net.banks) {
    if (b.kind != kind) continue;
    if (acc.empty())
      acc.assign(b.edge_alpha.size(),
                 std::vector<Real>(static_cast<size_t>(net.space.size()), Real(0)));
    for (size_t e = 0; e < b.edge_alpha.size(); ++e)
      for (int o = 0; o < net.space.size(); ++o)
        acc[e][static_cast<size_t>(o)] += b.edge_alpha[e].v()[static_cast<size_t>(o)];
    ++n;
  }
  for (auto& v : acc)
    for (Real& x : v) x /= static_cast<Real>(n);
  return acc;
}

inline Genotype derive_genotype(const Supernet& net) {
  for (const AlphaBank& b : net.banks)
    for (const Tensor& a : b.edge_alpha)
      for (Real v : a.v())
        if (!std::isfinite(v)) throw NumericError("non-finite alpha in derivation");
  Genotype geno;
  geno.nodes = net.mcfg.nodes;
  geno.normal = derive_cell(mean_alpha_for_kind(net, CellKind::Normal), net.space, net.mcfg.nodes);
  if (net.bank_for_kind(CellKind::Reduction) >= 0)
    geno.reduction =
        derive_cell(mean_alpha_for_kind(net, CellKind::Reduction), net.space, net.mcfg.nodes);
  return geno;
}

// ------------------------------------------------------------ JSON schema v1

inline nlohmann::json genotype_to_json(const Genotype& g) {
  nlohmann::json cells = nlohmann::json::object();
  auto put = [&](const char* key, const std::vector<Genotype::Choice>& choices) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : choices) arr.push_back({c.node, c.pred, c.op});
    cells[key] = arr;
  };
  put("normal", g.normal);
  if (!g.reduction.empty()) put("reduction", g.reduction);
  return nlohmann::json{{"schema_version", 1},
                        {"nodes", g.nodes},
                        {"cells", cells},
                        {"meta",
                         {{"seed", g.meta.seed},
                          {"r", g.meta.r},
                          {"config_hash", g.meta.config_hash}}}};
}

inline Genotype genotype_from_json(const nlohmann::json& j) {
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1)
    throw ConfigError("unsupported genotype schema version");
  Genotype g;
  g.nodes = j.at("nodes").get<int>();
  auto read = [&](const char* key, std::vector<Genotype::Choice>& out) {
    if (!j.at("cells").contains(key)) return;
    for (const auto& item : j.at("cells").at(key))
      out.push_back({item.at(0).get<int>(), item.at(1).get<int>(), item.at(2).get<std::string>()});
  };
  read("normal", g.normal);
  read("reduction", g.reduction);
  if (j.contains("meta")) {
    g.meta.seed = j["meta"].value("seed", std::uint64_t{0});
    g.meta.r = j["meta"].value("r", 0.0);
    g.meta.config_hash = j["meta"].value("config_hash", "");
  }
  return g;
}

// two distinct predecessors per node, predecessors precede the node, no zero op
inline void validate_genotype(const Genotype& g, const SearchSpace& space) {
  auto check = [&](const std::vector<Genotype::Choice>& choices, const char* kind) {
    if (choices.empty()) return;
    std::map<int, std::vector<int>> preds;
    for (const auto& c : choices) {
      const int op = space.find(c.op);
      if (op < 0) throw ConfigError(std::string("genotype op not in space: ") + c.op);
      if (space.ops[static_cast<size_t>(op)].is_zero)
        throw ConfigError(std::string("genotype contains the zero op in ") + kind);
      if (c.pred >= c.node + 2)
        throw ConfigError("genotype predecessor does not precede node");
      preds[c.node].push_back(c.pred);
    }
    for (auto& [node, ps] : preds) {
      if (ps.size() != 2) throw ConfigError("genotype node without exactly two choices");
      if (ps[0] == ps[1]) throw ConfigError("genotype node with duplicate predecessors");
    }
  };
  check(g.normal, "normal");
  check(g.reduction, "reduction");
}

}  // namespace dropnas

#endif
