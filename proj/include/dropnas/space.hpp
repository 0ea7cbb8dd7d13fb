#ifndef DROPNAS_SPACE_HPP
#define DROPNAS_SPACE_HPP

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dropnas/core/errors.hpp"
#include "dropnas/core/tensor.hpp"

namespace dropnas {

enum class OpGroup { Parameterized, NonParameterized };
enum class OpFamily { SepConv, DilConv, MaxPool, AvgPool, Identity, Zero };

struct OpKind {
  std::string name;
  OpFamily family;
  int kernel = 0;    // sep/dil conv kernel size
  int dilation = 1;  // dil conv only
  OpGroup group = OpGroup::NonParameterized;
  bool is_zero = false;
};

// Ordered candidate-operation list with its parameterized / non-parameterized
// partition. Immutable after construction.
struct SearchSpace {
  std::vector<OpKind> ops;
  std::vector<int> param_idx;     // indices of parameterized ops, in order
  std::vector<int> nonparam_idx;  // indices of non-parameterized ops, in order
  std::optional<Real> rate_p;     // per-group drop-rate override
  std::optional<Real> rate_np;

  int size() const { return static_cast<int>(ops.size()); }

  int zero_index() const {
    for (int i = 0; i < size(); ++i)
      if (ops[static_cast<size_t>(i)].is_zero) return i;
    return -1;
  }

  const std::vector<int>& group_indices(OpGroup g) const {
    return g == OpGroup::Parameterized ? param_idx : nonparam_idx;
  }

  // all-index "group" used when grouping is disabled
  std::vector<int> all_indices() const {
    std::vector<int> v(static_cast<size_t>(size()));
    for (int i = 0; i < size(); ++i) v[static_cast<size_t>(i)] = i;
    return v;
  }

  int find(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (ops[static_cast<size_t>(i)].name == name) return i;
    return -1;
  }
};

namespace detail {

inline OpKind catalog_op(const std::string& name) {
  if (name == "sep_conv_3x3")
    return {name, OpFamily::SepConv, 3, 1, OpGroup::Parameterized, false};
  if (name == "sep_conv_5x5")
    return {name, OpFamily::SepConv, 5, 1, OpGroup::Parameterized, false};
  if (name == "dil_conv_3x3")
    return {name, OpFamily::DilConv, 3, 2, OpGroup::Parameterized, false};
  if (name == "dil_conv_5x5")
    return {name, OpFamily::DilConv, 5, 2, OpGroup::Parameterized, false};
  if (name == "max_pool_3x3")
    return {name, OpFamily::MaxPool, 3, 1, OpGroup::NonParameterized, false};
  if (name == "avg_pool_3x3")
    return {name, OpFamily::AvgPool, 3, 1, OpGroup::NonParameterized, false};
  if (name == "skip_connect" || name == "skip_connect_b" || name == "skip_connect_c")
    return {name, OpFamily::Identity, 0, 1, OpGroup::NonParameterized, false};
  if (name == "none") return {name, OpFamily::Zero, 0, 1, OpGroup::NonParameterized, true};
  throw ConfigError("unknown operation name '" + name + "'");
}

inline std::vector<std::string> preset_ops(const std::string& preset) {
  if (preset == "darts")
    return {"sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5",
            "max_pool_3x3", "avg_pool_3x3", "skip_connect", "none"};
  if (preset == "1-skip")
    return {"sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5",
            "skip_connect", "none"};
  if (preset == "3-skip")
    return {"sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5",
            "skip_connect_b", "skip_connect_c", "skip_connect", "none"};
  throw ConfigError("unknown search-space preset '" + preset + "'");
}

}  // namespace detail

struct SpaceConfig {
  std::string name = "darts";          // preset, or "custom"
  std::vector<std::string> custom_ops; // used when name == "custom"
  std::optional<Real> rate_p, rate_np;
};

inline SearchSpace build_space(const SpaceConfig& cfg) {
  std::vector<std::string> names =
      cfg.name == "custom" ? cfg.custom_ops : detail::preset_ops(cfg.name);
  SearchSpace space;
  std::set<std::string> seen;
  int zeros = 0;
  for (const std::string& n : names) {
    if (!seen.insert(n).second) throw ConfigError("duplicate operation name '" + n + "'");
    OpKind op = detail::catalog_op(n);
    if (op.is_zero) ++zeros;
    int idx = space.size();
    if (op.group == OpGroup::Parameterized)
      space.param_idx.push_back(idx);
    else
      space.nonparam_idx.push_back(idx);
    space.ops.push_back(std::move(op));
  }
  if (space.param_idx.empty()) throw ConfigError("search space has an empty parameterized group");
  if (space.nonparam_idx.empty())
    throw ConfigError("search space has an empty non-parameterized group");
  if (zeros > 1) throw ConfigError("search space has more than one zero operation");
  space.rate_p = cfg.rate_p;
  space.rate_np = cfg.rate_np;
  return space;
}

enum class CellKind { Normal, Reduction };

inline const char* cell_kind_name(CellKind k) {
  return k == CellKind::Normal ? "normal" : "reduction";
}

// Cell DAG: nodes 0 and 1 are the two inputs, nodes 2..nodes+1 are the
// intermediate nodes. Every intermediate node receives an edge from each
// prior node. In reduction cells the edges leaving the input nodes use
// stride 2.
struct CellGraph {
  int nodes = 0;  // intermediate node count
  CellKind kind = CellKind::Normal;

  static CellGraph make(int intermediate_nodes, CellKind kind = CellKind::Normal) {
    if (intermediate_nodes < 1) throw ConfigError("cell needs at least one intermediate node");
    CellGraph g;
    g.nodes = intermediate_nodes;
    g.kind = kind;
    return g;
  }

  int edge_count() const {
    int n = 0;
    for (int j = 0; j < nodes; ++j) n += j + 2;
    return n;
  }
};

// Deterministic edge order: lexicographic by (target node, source node).
inline std::vector<std::pair<int, int>> enumerate_edges(const CellGraph& g) {
  std::vector<std::pair<int, int>> edges;
  for (int j = 2; j < g.nodes + 2; ++j)
    for (int i = 0; i < j; ++i) edges.emplace_back(i, j);
  return edges;
}

}  // namespace dropnas

#endif
