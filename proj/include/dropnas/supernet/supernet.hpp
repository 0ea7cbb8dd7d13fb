#ifndef DROPNAS_SUPERNET_SUPERNET_HPP
#define DROPNAS_SUPERNET_SUPERNET_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dropnas/dropsched.hpp"
#include "dropnas/space.hpp"
#include "dropnas/supernet/modules.hpp"

namespace dropnas {

struct ModelConfig {
  int cells = 4;
  int nodes = 2;         // intermediate nodes per cell
  int channels = 8;      // initial cell channels
  int stem_multiplier = 3;
  int in_channels = 2;
  int classes = 3;
  bool use_reduction = true;   // reduction cells at 1/3 and 2/3 depth
  bool per_cell_alpha = false; // escape hatch: one alpha bank per cell
  bool bn_affine = false;      // affine BN inside cells (off for the supernet)
};

// One alpha bank: per-edge architecture parameter vectors of length |O|.
// Shared mode has one bank per cell kind; per-cell mode one bank per cell.
struct AlphaBank {
  CellKind kind = CellKind::Normal;
  std::vector<Tensor> edge_alpha;
};

// Masks for one forward pass, aligned with the alpha banks.
struct DropPlan {
  std::vector<std::vector<DropMask>> masks;  // [bank][edge]
};

// Capture slot for the feature-cluster diagnostic: op outputs (all ops kept,
// unscaled) on one edge of one cell.
struct EdgeFeatureCapture {
  int cell_index = 0;
  int edge_index = 0;
  std::vector<Tensor> op_outputs;  // one per op; undefined Tensor for the zero op
};

// Weighted sum of the kept candidate operations: p = softmax over ALL alphas
// (dropped ops stay in the denominator), dropped ops contribute zero output
// and receive exactly zero gradient.
struct MixedEdge {
  const SearchSpace* space = nullptr;
  int stride = 1;
  int channels = 0;
  std::vector<std::unique_ptr<CandidateOp>> ops;

  Tensor forward(Tape& tape, const Tensor& x, const Tensor& alpha, const DropMask& mask,
                 std::vector<Tensor>* capture = nullptr) const {
    if (static_cast<int>(mask.keep.size()) != space->size())
      throw ContractError("mixed edge: mask length does not match op count");
    if (mask.kept_count() == 0)
      throw ContractError("mixed edge: every operation dropped");
    if (!mask_valid(*space, mask, /*grouping=*/false))
      throw ContractError("mixed edge: invalid mask");

    Tensor alpha_masked = grad_mask(tape, alpha, mask.keep);
    Tensor p = softmax(tape, alpha_masked);

    Tensor acc;
    if (capture) capture->assign(static_cast<size_t>(space->size()), Tensor{});
    for (int o = 0; o < space->size(); ++o) {
      const OpKind& kind = space->ops[static_cast<size_t>(o)];
      const bool kept = mask.keep[static_cast<size_t>(o)] != 0;
      if (kind.is_zero) continue;  // contributes exactly zero
      if (!kept && !capture) continue;
      Tensor feat = ops[static_cast<size_t>(o)]->forward(tape, x);
      if (capture) (*capture)[static_cast<size_t>(o)] = feat;
      if (!kept) continue;
      Tensor term = scale_by_element(tape, feat, p, o);
      acc = acc.defined() ? add(tape, acc, term) : term;
    }
    if (!acc.defined()) {
      // only the zero op (or nothing parameter-free) kept on this edge
      const int Ho = (x.dim(2) + stride - 1) / stride;
      const int Wo = (x.dim(3) + stride - 1) / stride;
      acc = Tensor::zeros({x.dim(0), channels, Ho, Wo}, false);
    }
    return acc;
  }
};

inline Tensor mixed_forward(Tape& tape, const MixedEdge& edge, const Tensor& x,
                            const Tensor& alpha, const DropMask& mask) {
  return edge.forward(tape, x, alpha, mask);
}

// x_j = sum of the incoming mixed edges
inline Tensor node_forward(Tape& tape, const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw ContractError("node with no incoming edges");
  Tensor acc = inputs[0];
  for (size_t i = 1; i < inputs.size(); ++i) {
    if (!same_shape(acc, inputs[i]))
      throw ConfigError("node aggregation shape mismatch: " + shape_str(acc.shape()) +
                        " vs " + shape_str(inputs[i].shape()));
    acc = add(tape, acc, inputs[i]);
  }
  return acc;
}

struct Cell {
  CellGraph graph;
  bool reduction = false;
  ReLUConvBN pre0, pre1;
  std::vector<MixedEdge> edges;  // enumerate_edges order

  // states: [s0, s1, node0, node1, ...]; output = concat of intermediate nodes
  Tensor forward(Tape& tape, const Tensor& s0, const Tensor& s1,
                 const std::vector<Tensor>& edge_alpha, const std::vector<DropMask>& masks,
                 int cell_index, EdgeFeatureCapture* capture = nullptr) const {
    std::vector<Tensor> states{pre0.forward(tape, s0), pre1.forward(tape, s1)};
    size_t e = 0;
    for (int j = 2; j < graph.nodes + 2; ++j) {
      std::vector<Tensor> incoming;
      for (int i = 0; i < j; ++i, ++e) {
        std::vector<Tensor>* cap = nullptr;
        if (capture && capture->cell_index == cell_index &&
            capture->edge_index == static_cast<int>(e))
          cap = &capture->op_outputs;
        incoming.push_back(edges[e].forward(tape, states[static_cast<size_t>(i)],
                                            edge_alpha[e], masks[e], cap));
      }
      states.push_back(node_forward(tape, incoming));
    }
    return concat_channels(tape, {states.begin() + 2, states.end()});
  }
};

struct Supernet {
  ModelConfig mcfg;
  SearchSpace space;
  ParamStore params;

  Conv2dLayer stem_conv;
  BatchNormLayer stem_bn;
  std::vector<Cell> cells;
  std::vector<int> cell_bank;  // alpha bank used by each cell
  std::vector<AlphaBank> banks;
  LinearLayer head;

  Supernet(ModelConfig cfg, SearchSpace sp, std::uint64_t seed)
      : mcfg(cfg), space(std::move(sp)) {
    RngStream rng(seed, "init");
    const int C = mcfg.channels;
    int c_curr = mcfg.stem_multiplier * C;
    stem_conv = Conv2dLayer::make(params, "stem.conv", mcfg.in_channels, c_curr, 3, 1, 1, 1, rng);
    stem_bn = BatchNormLayer::make(params, "stem.bn", c_curr, true, rng);

    // alpha banks first so their layout does not depend on cell weights
    const CellGraph normal_graph = CellGraph::make(mcfg.nodes, CellKind::Normal);
    auto add_bank = [&](CellKind kind, int bank_idx) {
      AlphaBank bank;
      bank.kind = kind;
      for (int e = 0; e < normal_graph.edge_count(); ++e) {
        Tensor a = Tensor::zeros({space.size()}, true);  // uniform p at init
        bank.edge_alpha.push_back(params.add(
            "alpha." + std::string(cell_kind_name(kind)) + ".bank" + std::to_string(bank_idx) +
                ".edge" + std::to_string(e),
            a, true, -1, bank_idx, e));
      }
      banks.push_back(std::move(bank));
    };

    std::vector<bool> is_reduction(static_cast<size_t>(mcfg.cells), false);
    if (mcfg.use_reduction && mcfg.cells >= 2) {
      is_reduction[static_cast<size_t>(mcfg.cells / 3)] = true;
      is_reduction[static_cast<size_t>(2 * mcfg.cells / 3)] = true;
    }

    if (mcfg.per_cell_alpha) {
      for (int i = 0; i < mcfg.cells; ++i)
        add_bank(is_reduction[static_cast<size_t>(i)] ? CellKind::Reduction : CellKind::Normal, i);
    } else {
      add_bank(CellKind::Normal, 0);
      bool any_red = false;
      for (bool r : is_reduction) any_red = any_red || r;
      if (any_red) add_bank(CellKind::Reduction, 1);
    }

    int cpp = c_curr, cp = c_curr;
    int c_cell = C;
    bool reduction_prev = false;
    for (int i = 0; i < mcfg.cells; ++i) {
      const bool reduction = is_reduction[static_cast<size_t>(i)];
      if (reduction) c_cell *= 2;
      Cell cell;
      cell.reduction = reduction;
      cell.graph = CellGraph::make(mcfg.nodes, reduction ? CellKind::Reduction : CellKind::Normal);
      const std::string cn = "cell" + std::to_string(i);
      cell.pre0 = ReLUConvBN::make(params, cn + ".pre0", cpp, c_cell,
                                   reduction_prev ? 2 : 1, mcfg.bn_affine, rng, {i});
      cell.pre1 = ReLUConvBN::make(params, cn + ".pre1", cp, c_cell, 1, mcfg.bn_affine, rng, {i});
      const auto edge_list = enumerate_edges(cell.graph);
      for (size_t e = 0; e < edge_list.size(); ++e) {
        MixedEdge me;
        me.space = &space;
        me.channels = c_cell;
        me.stride = (reduction && edge_list[e].first < 2) ? 2 : 1;
        for (int o = 0; o < space.size(); ++o) {
          ParamTag tag{i, static_cast<int>(e), o};
          me.ops.push_back(make_candidate_op(
              space.ops[static_cast<size_t>(o)], params,
              cn + ".edge" + std::to_string(e) + ".op" + std::to_string(o), c_cell,
              me.stride, mcfg.bn_affine, rng, tag));
        }
        cell.edges.push_back(std::move(me));
      }
      if (mcfg.per_cell_alpha)
        cell_bank.push_back(i);
      else
        cell_bank.push_back(reduction ? 1 : 0);
      cells.push_back(std::move(cell));
      reduction_prev = reduction;
      cpp = cp;
      cp = mcfg.nodes * c_cell;
    }
    head = LinearLayer::make(params, "head", cp, mcfg.classes, rng);
  }

  Supernet(const Supernet&) = delete;
  Supernet& operator=(const Supernet&) = delete;

  int edge_count() const { return CellGraph::make(mcfg.nodes).edge_count(); }

  DropPlan full_keep_plan() const {
    DropPlan plan;
    for (const AlphaBank& b : banks) {
      std::vector<DropMask> masks;
      for (size_t e = 0; e < b.edge_alpha.size(); ++e)
        masks.push_back(DropMask{std::vector<std::uint8_t>(static_cast<size_t>(space.size()), 1)});
      plan.masks.push_back(std::move(masks));
    }
    return plan;
  }

  DropPlan sample_plan(const DropConfig& dcfg, std::uint64_t seed, std::uint64_t step) const {
    DropPlan plan;
    for (size_t b = 0; b < banks.size(); ++b) {
      std::vector<DropMask> masks;
      for (size_t e = 0; e < banks[b].edge_alpha.size(); ++e) {
        RngStream rng(seed, "mask", step, (b << 32) | e);
        masks.push_back(sample_mask(space, dcfg, rng));
      }
      plan.masks.push_back(std::move(masks));
    }
    return plan;
  }

  Tensor forward(Tape& tape, const Tensor& x, const DropPlan& plan,
                 EdgeFeatureCapture* capture = nullptr) const {
    if (plan.masks.size() != banks.size())
      throw ContractError("drop plan does not cover every alpha bank");
    for (size_t b = 0; b < banks.size(); ++b)
      if (plan.masks[b].size() != banks[b].edge_alpha.size())
        throw ContractError("drop plan does not cover every edge");
    Tensor s = stem_bn.forward(tape, stem_conv.forward(tape, x));
    Tensor s0 = s, s1 = s;
    for (size_t i = 0; i < cells.size(); ++i) {
      const int b = cell_bank[i];
      Tensor out = cells[i].forward(tape, s0, s1, banks[static_cast<size_t>(b)].edge_alpha,
                                    plan.masks[static_cast<size_t>(b)], static_cast<int>(i),
                                    capture);
      s0 = s1;
      s1 = out;
    }
    return head.forward(tape, global_avg_pool(tape, s1));
  }

  std::vector<Tensor> weight_params() const {
    std::vector<Tensor> out;
    for (const ParamInfo& e : params.entries)
      if (!e.is_alpha) out.push_back(e.t);
    return out;
  }

  std::vector<Tensor> alpha_params() const {
    std::vector<Tensor> out;
    for (const ParamInfo& e : params.entries)
      if (e.is_alpha) out.push_back(e.t);
    return out;
  }

  // bank index for a cell kind in shared mode (first matching bank otherwise)
  int bank_for_kind(CellKind kind) const {
    for (size_t b = 0; b < banks.size(); ++b)
      if (banks[b].kind == kind) return static_cast<int>(b);
    return -1;
  }
};

// Per-op feature maps on one edge, computed with every op kept. One tensor
// per non-zero op, in space order.
struct EdgeFeatures {
  std::vector<int> op_indices;
  std::vector<Tensor> features;
};

inline EdgeFeatures extract_edge_features(const Supernet& net, int cell_index, int edge_index,
                                          const Tensor& batch) {
  if (cell_index < 0 || cell_index >= static_cast<int>(net.cells.size()))
    throw ConfigError("unknown cell index " + std::to_string(cell_index));
  if (edge_index < 0 || edge_index >= net.edge_count())
    throw ConfigError("unknown edge index " + std::to_string(edge_index));
  Tape tape;
  EdgeFeatureCapture cap;
  cap.cell_index = cell_index;
  cap.edge_index = edge_index;
  net.forward(tape, batch, net.full_keep_plan(), &cap);
  EdgeFeatures out;
  for (int o = 0; o < net.space.size(); ++o) {
    if (net.space.ops[static_cast<size_t>(o)].is_zero) continue;
    out.op_indices.push_back(o);
    out.features.push_back(cap.op_outputs[static_cast<size_t>(o)]);
  }
  return out;
}

}  // namespace dropnas

#endif
