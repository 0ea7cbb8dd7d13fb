#ifndef DROPNAS_SUPERNET_MODULES_HPP
#define DROPNAS_SUPERNET_MODULES_HPP

#include <memory>
#include <string>
#include <vector>

#include "dropnas/core/ops.hpp"
#include "dropnas/core/rng.hpp"
#include "dropnas/space.hpp"

namespace dropnas {

// Flat registry of every learnable tensor in a model, in construction order.
// Optimizers and checkpoints index into this.
struct ParamInfo {
  std::string name;
  Tensor t;
  bool is_alpha = false;
  int cell = -1;  // owning cell (op weights)
  int bank = -1;  // owning alpha bank (alpha vectors)
  int edge = -1;  // edge index within the cell/bank, -1 for shared weights
  int op = -1;    // candidate-op index within the space, -1 for shared weights
};

struct ParamStore {
  std::vector<ParamInfo> entries;

  Tensor add(std::string name, Tensor t, bool is_alpha = false, int cell = -1,
             int bank = -1, int edge = -1, int op = -1) {
    entries.push_back({std::move(name), t, is_alpha, cell, bank, edge, op});
    return t;
  }

  long total_size() const {
    long n = 0;
    for (const ParamInfo& e : entries) n += e.t.numel();
    return n;
  }
};

// fan-in scaled normal init
inline void init_conv_weight(Tensor& w, RngStream& rng) {
  const int cig = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const Real std = std::sqrt(Real(2) / static_cast<Real>(cig * kh * kw));
  for (Real& v : w.v()) v = static_cast<Real>(rng.normal()) * std;
}

inline void init_dense_weight(Tensor& w, RngStream& rng) {
  const Real std = std::sqrt(Real(1) / static_cast<Real>(w.dim(0)));
  for (Real& v : w.v()) v = static_cast<Real>(rng.normal()) * std;
}

// Tag carried while building a cell so op weights land in the store with
// their (cell, edge, op) coordinates.
struct ParamTag {
  int cell = -1, edge = -1, op = -1;
};

struct Conv2dLayer {
  Tensor w;
  int stride = 1, dilation = 1, groups = 1;

  static Conv2dLayer make(ParamStore& ps, const std::string& name, int c_in, int c_out,
                          int k, int stride, int dilation, int groups, RngStream& rng,
                          ParamTag tag = {}) {
    Conv2dLayer l;
    l.stride = stride;
    l.dilation = dilation;
    l.groups = groups;
    Tensor w = Tensor::zeros({c_out, c_in / groups, k, k}, true);
    init_conv_weight(w, rng);
    l.w = ps.add(name + ".w", w, false, tag.cell, -1, tag.edge, tag.op);
    return l;
  }

  Tensor forward(Tape& tape, const Tensor& x) const {
    return conv2d(tape, x, w, stride, dilation, groups);
  }
};

struct BatchNormLayer {
  Tensor gamma, beta;  // undefined when affine is off
  bool affine = false;

  static BatchNormLayer make(ParamStore& ps, const std::string& name, int c, bool affine,
                             RngStream&, ParamTag tag = {}) {
    BatchNormLayer l;
    l.affine = affine;
    if (affine) {
      Tensor g = Tensor::zeros({c}, true);
      std::fill(g.v().begin(), g.v().end(), Real(1));
      Tensor b = Tensor::zeros({c}, true);
      l.gamma = ps.add(name + ".gamma", g, false, tag.cell, -1, tag.edge, tag.op);
      l.beta = ps.add(name + ".beta", b, false, tag.cell, -1, tag.edge, tag.op);
    }
    return l;
  }

  Tensor forward(Tape& tape, const Tensor& x) const {
    return batch_norm(tape, x, affine ? gamma : Tensor{}, affine ? beta : Tensor{});
  }
};

struct LinearLayer {
  Tensor w, b;

  static LinearLayer make(ParamStore& ps, const std::string& name, int in, int out,
                          RngStream& rng) {
    LinearLayer l;
    Tensor w = Tensor::zeros({in, out}, true);
    init_dense_weight(w, rng);
    l.w = ps.add(name + ".w", w);
    l.b = ps.add(name + ".b", Tensor::zeros({out}, true));
    return l;
  }

  Tensor forward(Tape& tape, const Tensor& x) const {
    return add_bias(tape, matmul(tape, x, w), b);
  }
};

// relu -> 1x1 conv -> bn; stride 2 when the incoming state needs halving
struct ReLUConvBN {
  Conv2dLayer conv;
  BatchNormLayer bn;

  static ReLUConvBN make(ParamStore& ps, const std::string& name, int c_in, int c_out,
                         int stride, bool affine, RngStream& rng, ParamTag tag = {}) {
    ReLUConvBN m;
    m.conv = Conv2dLayer::make(ps, name + ".conv", c_in, c_out, 1, stride, 1, 1, rng, tag);
    m.bn = BatchNormLayer::make(ps, name + ".bn", c_out, affine, rng, tag);
    return m;
  }

  Tensor forward(Tape& tape, const Tensor& x) const {
    return bn.forward(tape, conv.forward(tape, relu(tape, x)));
  }
};

// ------------------------------------------------------------ candidate ops

struct CandidateOp {
  virtual ~CandidateOp() = default;
  virtual Tensor forward(Tape& tape, const Tensor& x) const = 0;
  virtual bool has_weights() const { return false; }
};

// relu -> depthwise(k, stride) -> pointwise -> bn, applied twice
// (second pass at stride 1), the separable convolution used on edges
struct SepConvOp final : CandidateOp {
  Conv2dLayer dw1, pw1, dw2, pw2;
  BatchNormLayer bn1, bn2;

  static std::unique_ptr<SepConvOp> make(ParamStore& ps, const std::string& name, int c,
                                         int k, int stride, bool affine, RngStream& rng,
                                         ParamTag tag) {
    auto op = std::make_unique<SepConvOp>();
    op->dw1 = Conv2dLayer::make(ps, name + ".dw1", c, c, k, stride, 1, c, rng, tag);
    op->pw1 = Conv2dLayer::make(ps, name + ".pw1", c, c, 1, 1, 1, 1, rng, tag);
    op->bn1 = BatchNormLayer::make(ps, name + ".bn1", c, affine, rng, tag);
    op->dw2 = Conv2dLayer::make(ps, name + ".dw2", c, c, k, 1, 1, c, rng, tag);
    op->pw2 = Conv2dLayer::make(ps, name + ".pw2", c, c, 1, 1, 1, 1, rng, tag);
    op->bn2 = BatchNormLayer::make(ps, name + ".bn2", c, affine, rng, tag);
    return op;
  }

  Tensor forward(Tape& tape, const Tensor& x) const override {
    Tensor h = bn1.forward(tape, pw1.forward(tape, dw1.forward(tape, relu(tape, x))));
    return bn2.forward(tape, pw2.forward(tape, dw2.forward(tape, relu(tape, h))));
  }
  bool has_weights() const override { return true; }
};

// relu -> dilated depthwise -> pointwise -> bn
struct DilConvOp final : CandidateOp {
  Conv2dLayer dw, pw;
  BatchNormLayer bn;

  static std::unique_ptr<DilConvOp> make(ParamStore& ps, const std::string& name, int c,
                                         int k, int dilation, int stride, bool affine,
                                         RngStream& rng, ParamTag tag) {
    auto op = std::make_unique<DilConvOp>();
    op->dw = Conv2dLayer::make(ps, name + ".dw", c, c, k, stride, dilation, c, rng, tag);
    op->pw = Conv2dLayer::make(ps, name + ".pw", c, c, 1, 1, 1, 1, rng, tag);
    op->bn = BatchNormLayer::make(ps, name + ".bn", c, affine, rng, tag);
    return op;
  }

  Tensor forward(Tape& tape, const Tensor& x) const override {
    return bn.forward(tape, pw.forward(tape, dw.forward(tape, relu(tape, x))));
  }
  bool has_weights() const override { return true; }
};

struct MaxPoolOp final : CandidateOp {
  int stride = 1;
  explicit MaxPoolOp(int s) : stride(s) {}
  Tensor forward(Tape& tape, const Tensor& x) const override {
    return max_pool3x3(tape, x, stride);
  }
};

struct AvgPoolOp final : CandidateOp {
  int stride = 1;
  explicit AvgPoolOp(int s) : stride(s) {}
  Tensor forward(Tape& tape, const Tensor& x) const override {
    return avg_pool3x3(tape, x, stride);
  }
};

// stride 1: identity; stride 2: parameter-free spatial subsampling, keeping
// the whole non-parameterized group weight-free
struct IdentityOp final : CandidateOp {
  int stride = 1;
  explicit IdentityOp(int s) : stride(s) {}
  Tensor forward(Tape& tape, const Tensor& x) const override {
    return subsample(tape, x, stride);
  }
};

struct ZeroOp final : CandidateOp {
  int stride = 1;
  explicit ZeroOp(int s) : stride(s) {}
  Tensor forward(Tape&, const Tensor& x) const override {
    const int N = x.dim(0), C = x.dim(1);
    const int Ho = (x.dim(2) + stride - 1) / stride, Wo = (x.dim(3) + stride - 1) / stride;
    return Tensor::zeros({N, C, Ho, Wo}, false);
  }
};

inline std::unique_ptr<CandidateOp> make_candidate_op(const OpKind& kind, ParamStore& ps,
                                                      const std::string& name, int c,
                                                      int stride, bool affine,
                                                      RngStream& rng, ParamTag tag) {
  switch (kind.family) {
    case OpFamily::SepConv:
      return SepConvOp::make(ps, name, c, kind.kernel, stride, affine, rng, tag);
    case OpFamily::DilConv:
      return DilConvOp::make(ps, name, c, kind.kernel, kind.dilation, stride, affine, rng, tag);
    case OpFamily::MaxPool:
      return std::make_unique<MaxPoolOp>(stride);
    case OpFamily::AvgPool:
      return std::make_unique<AvgPoolOp>(stride);
    case OpFamily::Identity:
      return std::make_unique<IdentityOp>(stride);
    case OpFamily::Zero:
      return std::make_unique<ZeroOp>(stride);
  }
  throw ContractError("unreachable op family");
}

}  // namespace dropnas

#endif
