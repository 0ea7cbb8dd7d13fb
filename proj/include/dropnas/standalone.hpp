#ifndef DROPNAS_STANDALONE_HPP
#define DROPNAS_STANDALONE_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dropnas/core/optim.hpp"
#include "dropnas/geno.hpp"
#include "dropnas/io/dataset.hpp"
#include "dropnas/supernet/modules.hpp"

namespace dropnas {

struct EvalConfig {
  int cells = 4;
  int channels = 8;
  int stem_multiplier = 3;
  bool use_reduction = true;
  bool bn_affine = true;
  int epochs = 12;
  int batch_size = 32;
  Real lr = Real(0.05);
  Real momentum = Real(0.9);
  Real weight_decay = Real(3e-4);
  Real clip = Real(3);
  bool cosine_lr = true;
  bool cutout = false;  // zero a random square per training image
  int cutout_length = 4;
  bool aux_tower = false;  // extra classifier at 2/3 depth
  Real aux_weight = Real(0.4);
  std::uint64_t seed = 1;
};

// Discrete cell: per intermediate node, the two selected (pred, op) modules.
struct DiscreteCell {
  int nodes = 0;
  bool reduction = false;
  ReLUConvBN pre0, pre1;
  struct NodeOp {
    int pred = 0;
    std::unique_ptr<CandidateOp> op;
  };
  std::vector<std::vector<NodeOp>> per_node;  // two entries per node

  Tensor forward(Tape& tape, const Tensor& s0, const Tensor& s1) const {
    std::vector<Tensor> states{pre0.forward(tape, s0), pre1.forward(tape, s1)};
    for (const auto& node_ops : per_node) {
      std::vector<Tensor> terms;
      for (const auto& no : node_ops)
        terms.push_back(no.op->forward(tape, states[static_cast<size_t>(no.pred)]));
      states.push_back(node_forward(tape, terms));
    }
    return concat_channels(tape, {states.begin() + 2, states.end()});
  }
};

// Stand-alone network assembled from a genotype; no architecture parameters.
struct StandaloneModel {
  EvalConfig ecfg;
  SearchSpace space;
  Genotype genotype;
  ParamStore params;
  int in_channels = 0, classes = 0;

  Conv2dLayer stem_conv;
  BatchNormLayer stem_bn;
  std::vector<DiscreteCell> cells;
  LinearLayer head;
  LinearLayer aux_head;  // used when ecfg.aux_tower
  int aux_cell = -1;
  int aux_channels = 0;

  StandaloneModel(const Genotype& geno, const SearchSpace& sp, const EvalConfig& cfg,
                  int in_ch, int num_classes, std::uint64_t seed)
      : ecfg(cfg), space(sp), genotype(geno), in_channels(in_ch), classes(num_classes) {
    validate_genotype(geno, space);
    RngStream rng(seed, "init");
    const int C = cfg.channels;
    int c_curr = cfg.stem_multiplier * C;
    stem_conv = Conv2dLayer::make(params, "stem.conv", in_ch, c_curr, 3, 1, 1, 1, rng);
    stem_bn = BatchNormLayer::make(params, "stem.bn", c_curr, true, rng);

    std::vector<bool> is_reduction(static_cast<size_t>(cfg.cells), false);
    if (cfg.use_reduction && cfg.cells >= 2) {
      is_reduction[static_cast<size_t>(cfg.cells / 3)] = true;
      is_reduction[static_cast<size_t>(2 * cfg.cells / 3)] = true;
    }
    bool needs_reduction_genes = false;
    for (bool r : is_reduction) needs_reduction_genes = needs_reduction_genes || r;
    if (needs_reduction_genes && geno.reduction.empty())
      throw ConfigError("genotype has no reduction genes but the model uses reduction cells");

    int cpp = c_curr, cp = c_curr;
    int c_cell = C;
    bool reduction_prev = false;
    for (int i = 0; i < cfg.cells; ++i) {
      const bool reduction = is_reduction[static_cast<size_t>(i)];
      if (reduction) c_cell *= 2;
      DiscreteCell cell;
      cell.nodes = geno.nodes;
      cell.reduction = reduction;
      const std::string cn = "cell" + std::to_string(i);
      cell.pre0 = ReLUConvBN::make(params, cn + ".pre0", cpp, c_cell,
                                   reduction_prev ? 2 : 1, cfg.bn_affine, rng, {i});
      cell.pre1 = ReLUConvBN::make(params, cn + ".pre1", cp, c_cell, 1, cfg.bn_affine, rng, {i});
      const auto& choices = geno.for_kind(reduction ? CellKind::Reduction : CellKind::Normal);
      cell.per_node.resize(static_cast<size_t>(geno.nodes));
      for (const auto& ch : choices) {
        const int op_idx = space.find(ch.op);
        const int stride = (reduction && ch.pred < 2) ? 2 : 1;
        DiscreteCell::NodeOp no;
        no.pred = ch.pred;
        no.op = make_candidate_op(
            space.ops[static_cast<size_t>(op_idx)], params,
            cn + ".node" + std::to_string(ch.node) + ".pred" + std::to_string(ch.pred),
            c_cell, stride, cfg.bn_affine, rng, {i, -1, op_idx});
        cell.per_node[static_cast<size_t>(ch.node)].push_back(std::move(no));
      }
      cells.push_back(std::move(cell));
      if (i == 2 * cfg.cells / 3) {
        aux_cell = i;
        aux_channels = geno.nodes * c_cell;
      }
      reduction_prev = reduction;
      cpp = cp;
      cp = geno.nodes * c_cell;
    }
    head = LinearLayer::make(params, "head", cp, num_classes, rng);
    if (cfg.aux_tower && aux_cell >= 0)
      aux_head = LinearLayer::make(params, "aux_head", aux_channels, num_classes, rng);
  }

  StandaloneModel(const StandaloneModel&) = delete;
  StandaloneModel& operator=(const StandaloneModel&) = delete;

  Tensor forward(Tape& tape, const Tensor& x, Tensor* aux_logits = nullptr) const {
    Tensor s = stem_bn.forward(tape, stem_conv.forward(tape, x));
    Tensor s0 = s, s1 = s;
    for (size_t i = 0; i < cells.size(); ++i) {
      Tensor out = cells[i].forward(tape, s0, s1);
      if (aux_logits && static_cast<int>(i) == aux_cell && ecfg.aux_tower)
        *aux_logits = aux_head.forward(tape, global_avg_pool(tape, out));
      s0 = s1;
      s1 = out;
    }
    return head.forward(tape, global_avg_pool(tape, s1));
  }
};

// Weight inheritance for oracle comparisons: copy every matching candidate-op
// weight (plus stem/preprocess/head) from a supernet with identical dims.
inline void inherit_weights(StandaloneModel& model, const Supernet& net) {
  // supernet param names carry (cell, edge, op); the standalone model names
  // carry (cell, node, pred). Match via the genotype's edge mapping.
  std::map<std::string, const ParamInfo*> net_params;
  for (const ParamInfo& e : net.params.entries) net_params[e.name] = &e;

  auto copy_exact = [&](const std::string& name, Tensor dst) {
    auto it = net_params.find(name);
    if (it == net_params.end()) {
      // BN affine params may exist only on the standalone side; their init
      // (gamma=1, beta=0) leaves the function unchanged
      if (name.size() > 6 && (name.rfind(".gamma") == name.size() - 6 ||
                              name.rfind(".beta") == name.size() - 5))
        return;
      throw ContractError("missing supernet param " + name);
    }
    if (it->second->t.shape() != dst.shape())
      throw ContractError("shape mismatch inheriting " + name);
    dst.v() = it->second->t.v();
  };

  for (const ParamInfo& e : model.params.entries) {
    // shared weights share names with the supernet
    if (e.name.rfind("stem.", 0) == 0 || e.name.rfind("head.", 0) == 0 ||
        e.name.find(".pre0.") != std::string::npos ||
        e.name.find(".pre1.") != std::string::npos) {
      copy_exact(e.name, e.t);
      continue;
    }
    // candidate-op weights: cell{i}.node{n}.pred{p}.<leaf> -> cell{i}.edge{e}.op{o}.<leaf>
    if (e.name.rfind("cell", 0) == 0 && e.name.find(".node") != std::string::npos) {
      const size_t cpos = e.name.find(".node");
      const int cell = std::stoi(e.name.substr(4, cpos - 4));
      const size_t ppos = e.name.find(".pred", cpos);
      const int node = std::stoi(e.name.substr(cpos + 5, ppos - cpos - 5));
      const size_t leaf_pos = e.name.find('.', ppos + 5);
      const int pred = std::stoi(e.name.substr(ppos + 5, leaf_pos - ppos - 5));
      const std::string leaf = e.name.substr(leaf_pos);  // ".dw1.w" etc.

      const bool reduction = model.cells[static_cast<size_t>(cell)].reduction;
      const auto& choices =
          model.genotype.for_kind(reduction ? CellKind::Reduction : CellKind::Normal);
      std::string op_name;
      for (const auto& ch : choices)
        if (ch.node == node && ch.pred == pred) op_name = ch.op;
      const int op_idx = model.space.find(op_name);
      // edge index for (pred -> node): edges into node j start at sum_{k<j}(k+2)
      int edge = 0;
      for (int j = 0; j < node; ++j) edge += j + 2;
      edge += pred;
      copy_exact("cell" + std::to_string(cell) + ".edge" + std::to_string(edge) + ".op" +
                     std::to_string(op_idx) + leaf,
                 e.t);
      continue;
    }
    if (e.name.rfind("aux_head", 0) == 0) continue;  // no supernet counterpart
    throw ContractError("unmatched standalone param " + e.name);
  }
}

struct EvalReport {
  Real final_accuracy = 0;
  Real best_accuracy = 0;
  Real final_loss = 0;
  int epochs = 0;
};

inline Real evaluate_accuracy(const StandaloneModel& model, const Dataset& test,
                              int batch_size) {
  int hits = 0, total = 0;
  // whole batches only: per-batch BN statistics degenerate on tiny remainders
  batch_size = std::min(batch_size, test.count);
  for (int start = 0; start + batch_size <= test.count; start += batch_size) {
    std::vector<int> idx(static_cast<size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) idx[static_cast<size_t>(i)] = start + i;
    std::vector<int> labels;
    Tensor x = make_batch(test, idx, labels);
    Tape tape;
    Tensor logits = model.forward(tape, x);
    const int K = logits.dim(1);
    for (int i = 0; i < batch_size; ++i) {
      int best = 0;
      for (int k = 1; k < K; ++k)
        if (logits.v()[static_cast<long>(i) * K + k] >
            logits.v()[static_cast<long>(i) * K + best])
          best = k;
      if (best == labels[static_cast<size_t>(i)]) ++hits;
      ++total;
    }
  }
  return total > 0 ? static_cast<Real>(hits) / static_cast<Real>(total) : Real(0);
}

inline void apply_cutout(Tensor& x, int length, RngStream& rng) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (int n = 0; n < N; ++n) {
    const int cy = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(H)));
    const int cx = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(W)));
    for (int c = 0; c < C; ++c)
      for (int y = std::max(0, cy - length / 2); y < std::min(H, cy + (length + 1) / 2); ++y)
        for (int xx = std::max(0, cx - length / 2); xx < std::min(W, cx + (length + 1) / 2); ++xx)
          x.v()[((static_cast<long>(n) * C + c) * H + y) * W + xx] = Real(0);
  }
}

inline EvalReport train_standalone(StandaloneModel& model, const DatasetPair& data) {
  const EvalConfig& cfg = model.ecfg;
  if (data.train.count < cfg.batch_size)
    throw ConfigError("eval batch size " + std::to_string(cfg.batch_size) +
                      " exceeds the training set (" + std::to_string(data.train.count) + ")");
  std::vector<Tensor> params;
  for (const ParamInfo& e : model.params.entries) params.push_back(e.t);
  Optimizer opt = Optimizer::sgd_momentum(cfg.lr, cfg.momentum, cfg.weight_decay);

  const int steps_per_epoch = data.train.count / cfg.batch_size;
  std::vector<int> order(static_cast<size_t>(data.train.count));
  for (int i = 0; i < data.train.count; ++i) order[static_cast<size_t>(i)] = i;

  EvalReport report;
  report.epochs = cfg.epochs;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.cosine_lr)
      opt.lr = Real(0.5) * cfg.lr * (Real(1) + std::cos(Real(M_PI) * epoch / std::max(1, cfg.epochs)));
    RngStream shuffle(cfg.seed, "eval-shuffle", static_cast<std::uint64_t>(epoch));
    for (int i = data.train.count - 1; i > 0; --i) {
      const int j = static_cast<int>(shuffle.uniform_int(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    for (int s = 0; s < steps_per_epoch; ++s, ++step) {
      std::vector<int> idx(order.begin() + static_cast<long>(s) * cfg.batch_size,
                           order.begin() + static_cast<long>(s + 1) * cfg.batch_size);
      std::vector<int> labels;
      Tensor x = make_batch(data.train, idx, labels);
      if (cfg.cutout) {
        RngStream crng(cfg.seed, "cutout", static_cast<std::uint64_t>(step));
        apply_cutout(x, cfg.cutout_length, crng);
      }
      zero_grads(params);
      Tape tape;
      Tensor aux_logits;
      Tensor logits = model.forward(tape, x, &aux_logits);
      Tensor loss = cross_entropy(tape, logits, labels);
      if (cfg.aux_tower && aux_logits.defined())
        loss = add(tape, loss,
                   scale(tape, cross_entropy(tape, aux_logits, labels), cfg.aux_weight));
      tape.backward(loss);
      clip_grad_norm(params, cfg.clip);
      opt.step(params);
      report.final_loss = loss.item();
    }
    const Real acc = evaluate_accuracy(model, data.test, cfg.batch_size);
    report.final_accuracy = acc;
    report.best_accuracy = std::max(report.best_accuracy, acc);
  }
  return report;
}

// Uniformly random valid genotype; the control arm for comparative checks.
inline Genotype random_genotype(const SearchSpace& space, int nodes, bool with_reduction,
                                RngStream& rng) {
  Genotype g;
  g.nodes = nodes;
  auto gen = [&](std::vector<Genotype::Choice>& out) {
    for (int node = 0; node < nodes; ++node) {
      const int npred = node + 2;
      int p1 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(npred)));
      int p2 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(npred - 1)));
      if (p2 >= p1) ++p2;
      if (p1 > p2) std::swap(p1, p2);
      for (int p : {p1, p2}) {
        int op;
        do {
          op = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(space.size())));
        } while (space.ops[static_cast<size_t>(op)].is_zero);
        out.push_back({node, p, space.ops[static_cast<size_t>(op)].name});
      }
    }
  };
  gen(g.normal);
  if (with_reduction) gen(g.reduction);
  return g;
}

}  // namespace dropnas

#endif
