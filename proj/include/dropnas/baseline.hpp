#ifndef DROPNAS_BASELINE_HPP
#define DROPNAS_BASELINE_HPP

// Reference implementations used as oracles in tests. They deliberately
// re-derive the forward wiring from raw core ops and the stored weight
// tensors instead of calling the module forward methods, so a bug in the
// main path cannot hide in the reference. Test builds only.

#include <string>
#include <vector>

#include "dropnas/core/optim.hpp"
#include "dropnas/geno.hpp"
#include "dropnas/supernet/supernet.hpp"
#include "dropnas/trainer.hpp"

namespace dropnas::baseline {

namespace detail {

inline Tensor ref_bn(Tape& tape, const Tensor& x, const BatchNormLayer& bn) {
  return batch_norm(tape, x, bn.affine ? bn.gamma : Tensor{}, bn.affine ? bn.beta : Tensor{});
}

// candidate-op forward rebuilt from the weight tensors
inline Tensor ref_op_forward(Tape& tape, const OpKind& kind, const CandidateOp& op,
                             const Tensor& x) {
  switch (kind.family) {
    case OpFamily::SepConv: {
      const auto& m = static_cast<const SepConvOp&>(op);
      const int c = x.dim(1);
      Tensor h = relu(tape, x);
      h = conv2d(tape, h, m.dw1.w, m.dw1.stride, 1, c);
      h = conv2d(tape, h, m.pw1.w, 1, 1, 1);
      h = ref_bn(tape, h, m.bn1);
      h = relu(tape, h);
      h = conv2d(tape, h, m.dw2.w, 1, 1, c);
      h = conv2d(tape, h, m.pw2.w, 1, 1, 1);
      return ref_bn(tape, h, m.bn2);
    }
    case OpFamily::DilConv: {
      const auto& m = static_cast<const DilConvOp&>(op);
      const int c = x.dim(1);
      Tensor h = relu(tape, x);
      h = conv2d(tape, h, m.dw.w, m.dw.stride, m.dw.dilation, c);
      h = conv2d(tape, h, m.pw.w, 1, 1, 1);
      return ref_bn(tape, h, m.bn);
    }
    case OpFamily::MaxPool:
      return max_pool3x3(tape, x, static_cast<const MaxPoolOp&>(op).stride);
    case OpFamily::AvgPool:
      return avg_pool3x3(tape, x, static_cast<const AvgPoolOp&>(op).stride);
    case OpFamily::Identity:
      return subsample(tape, x, static_cast<const IdentityOp&>(op).stride);
    case OpFamily::Zero: {
      const int s = static_cast<const ZeroOp&>(op).stride;
      return Tensor::zeros(
          {x.dim(0), x.dim(1), (x.dim(2) + s - 1) / s, (x.dim(3) + s - 1) / s}, false);
    }
  }
  throw ContractError("unreachable");
}

inline Tensor ref_preprocess(Tape& tape, const Tensor& x, const ReLUConvBN& pre) {
  Tensor h = conv2d(tape, relu(tape, x), pre.conv.w, pre.conv.stride, 1, 1);
  return ref_bn(tape, h, pre.bn);
}

}  // namespace detail

// Plain mixture forward: p = softmax(alpha) over every op, every op's output
// summed with weight p_o. No masks, no gradient filtering.
inline Tensor reference_forward(Tape& tape, const Supernet& net, const Tensor& x) {
  Tensor s = detail::ref_bn(tape, conv2d(tape, x, net.stem_conv.w, 1, 1, 1), net.stem_bn);
  Tensor s0 = s, s1 = s;
  for (size_t ci = 0; ci < net.cells.size(); ++ci) {
    const Cell& cell = net.cells[ci];
    const auto& alphas = net.banks[static_cast<size_t>(net.cell_bank[ci])].edge_alpha;
    std::vector<Tensor> states{detail::ref_preprocess(tape, s0, cell.pre0),
                               detail::ref_preprocess(tape, s1, cell.pre1)};
    size_t e = 0;
    for (int j = 2; j < cell.graph.nodes + 2; ++j) {
      Tensor node;
      for (int i = 0; i < j; ++i, ++e) {
        Tensor p = softmax(tape, alphas[e]);
        Tensor mixed;
        for (int o = 0; o < net.space.size(); ++o) {
          const OpKind& kind = net.space.ops[static_cast<size_t>(o)];
          Tensor feat = detail::ref_op_forward(tape, kind, *cell.edges[e].ops[static_cast<size_t>(o)],
                                               states[static_cast<size_t>(i)]);
          if (kind.is_zero) continue;  // exact zeros either way
          Tensor term = scale_by_element(tape, feat, p, o);
          mixed = mixed.defined() ? add(tape, mixed, term) : term;
        }
        node = node.defined() ? add(tape, node, mixed) : mixed;
      }
      states.push_back(node);
    }
    s0 = s1;
    s1 = concat_channels(tape, {states.begin() + 2, states.end()});
  }
  return add_bias(tape, matmul(tape, global_avg_pool(tape, s1), net.head.w), net.head.b);
}

// One plain one-level optimization step (everything kept, decay everywhere,
// no adjustment); validates train_step at drop rate zero.
inline StepRecord darts_reference_step(Supernet& net, const Tensor& x,
                                       const std::vector<int>& labels, Optimizer& w_opt,
                                       Optimizer& a_opt, Real clip) {
  std::vector<Tensor> w_params = net.weight_params();
  std::vector<Tensor> a_params = net.alpha_params();
  zero_grads(w_params);
  zero_grads(a_params);
  Tape tape;
  Tensor logits = reference_forward(tape, net, x);
  Tensor loss = cross_entropy(tape, logits, labels);
  tape.backward(loss);
  clip_grad_norm(w_params, clip);
  w_opt.step(w_params);
  a_opt.step(a_params);
  StepRecord rec;
  rec.loss = loss.item();
  rec.accuracy = batch_accuracy(logits, labels);
  return rec;
}

// Supernet forward with the genotype's ops forced to coefficient 1 and every
// other edge/op zeroed — the derivation semantics, on shared weights.
inline Tensor hard_mask_forward(Tape& tape, const Supernet& net, const Genotype& geno,
                                const Tensor& x) {
  Tensor s = detail::ref_bn(tape, conv2d(tape, x, net.stem_conv.w, 1, 1, 1), net.stem_bn);
  Tensor s0 = s, s1 = s;
  for (size_t ci = 0; ci < net.cells.size(); ++ci) {
    const Cell& cell = net.cells[ci];
    const auto& choices =
        geno.for_kind(cell.reduction ? CellKind::Reduction : CellKind::Normal);
    std::vector<Tensor> states{detail::ref_preprocess(tape, s0, cell.pre0),
                               detail::ref_preprocess(tape, s1, cell.pre1)};
    for (int node = 0; node < cell.graph.nodes; ++node) {
      Tensor acc;
      for (const auto& ch : choices) {
        if (ch.node != node) continue;
        int edge = 0;
        for (int j = 0; j < node; ++j) edge += j + 2;
        edge += ch.pred;
        const int op_idx = net.space.find(ch.op);
        Tensor feat = detail::ref_op_forward(
            tape, net.space.ops[static_cast<size_t>(op_idx)],
            *cell.edges[static_cast<size_t>(edge)].ops[static_cast<size_t>(op_idx)],
            states[static_cast<size_t>(ch.pred)]);
        acc = acc.defined() ? add(tape, acc, feat) : feat;
      }
      states.push_back(acc);
    }
    s0 = s1;
    s1 = concat_channels(tape, {states.begin() + 2, states.end()});
  }
  return add_bias(tape, matmul(tape, global_avg_pool(tape, s1), net.head.w), net.head.b);
}

struct ParityReport {
  double max_abs_deviation = 0;
  int steps_compared = 0;
  bool pass = true;
};

// Max absolute deviation across every parameter of two models.
inline double max_param_deviation(const Supernet& a, const Supernet& b) {
  double dev = 0;
  if (a.params.entries.size() != b.params.entries.size())
    throw ContractError("parity: parameter count mismatch");
  for (size_t i = 0; i < a.params.entries.size(); ++i) {
    const auto& pa = a.params.entries[i].t.v();
    const auto& pb = b.params.entries[i].t.v();
    for (size_t k = 0; k < pa.size(); ++k)
      dev = std::max(dev, std::abs(static_cast<double>(pa[k]) - static_cast<double>(pb[k])));
  }
  return dev;
}

}  // namespace dropnas::baseline

#endif
