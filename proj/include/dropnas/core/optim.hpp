#ifndef DROPNAS_CORE_OPTIM_HPP
#define DROPNAS_CORE_OPTIM_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dropnas/core/tensor.hpp"

namespace dropnas {

inline void zero_grads(std::vector<Tensor>& params) {
  for (Tensor& p : params) p.zero_grad();
}

// Uniformly rescales all gradients so the global L2 norm is <= max_norm.
// Returns the norm before clipping. No-op on an all-zero gradient set.
inline Real clip_grad_norm(std::vector<Tensor>& params, Real max_norm) {
  Real sq = 0;
  for (Tensor& p : params) {
    if (!p.tracked()) continue;
    for (Real g : p.g()) sq += g * g;
  }
  const Real norm = std::sqrt(sq);
  if (norm > max_norm && norm > Real(0)) {
    const Real s = max_norm / norm;
    for (Tensor& p : params) {
      if (!p.tracked()) continue;
      for (Real& g : p.g()) g *= s;
    }
  }
  return norm;
}

enum class OptKind { SgdMomentum, Adam };

// Per-element active masks: an inactive element is skipped entirely — its
// value, momentum and Adam moments stay bit-identical across the step. Weight
// decay is folded into the gradient of active elements only, which is how
// partial decay over the kept operations is realized.
struct Optimizer {
  OptKind kind = OptKind::SgdMomentum;
  Real lr = 0;
  Real momentum = 0;           // sgd-momentum
  Real beta1 = 0.9, beta2 = 0.999;  // adam
  Real weight_decay = 0;
  Real eps = Real(1e-8);
  long step_count = 0;

  std::vector<std::vector<Real>> m1;  // momentum buffer / first moment
  std::vector<std::vector<Real>> m2;  // second moment (adam only)

  static Optimizer sgd_momentum(Real lr, Real momentum, Real weight_decay) {
    Optimizer o;
    o.kind = OptKind::SgdMomentum;
    o.lr = lr;
    o.momentum = momentum;
    o.weight_decay = weight_decay;
    return o;
  }

  static Optimizer adam(Real lr, Real beta1, Real beta2, Real weight_decay) {
    Optimizer o;
    o.kind = OptKind::Adam;
    o.lr = lr;
    o.beta1 = beta1;
    o.beta2 = beta2;
    o.weight_decay = weight_decay;
    return o;
  }

  // active[i] == nullptr means every element of params[i] is active.
  void step(std::vector<Tensor>& params,
            const std::vector<const std::vector<std::uint8_t>*>* active = nullptr) {
    ensure_buffers(params);
    ++step_count;
    const Real bc1 = kind == OptKind::Adam ? Real(1) - std::pow(beta1, (Real)step_count) : Real(1);
    const Real bc2 = kind == OptKind::Adam ? Real(1) - std::pow(beta2, (Real)step_count) : Real(1);
    for (size_t pi = 0; pi < params.size(); ++pi) {
      Tensor& p = params[pi];
      if (!p.tracked() || p.g().size() != p.v().size())
        throw ContractError("optimizer step: missing gradient on tracked parameter");
      const std::vector<std::uint8_t>* mask =
          active && pi < active->size() ? (*active)[pi] : nullptr;
      Real* v = p.v().data();
      const Real* g = p.g().data();
      Real* b1 = m1[pi].data();
      Real* b2 = kind == OptKind::Adam ? m2[pi].data() : nullptr;
      const long n = p.numel();
      for (long i = 0; i < n; ++i) {
        if (mask && !(*mask)[static_cast<size_t>(i)]) continue;
        const Real geff = g[i] + weight_decay * v[i];
        if (kind == OptKind::SgdMomentum) {
          b1[i] = momentum * b1[i] + geff;
          v[i] -= lr * b1[i];
        } else {
          b1[i] = beta1 * b1[i] + (Real(1) - beta1) * geff;
          b2[i] = beta2 * b2[i] + (Real(1) - beta2) * geff * geff;
          const Real mhat = b1[i] / bc1;
          const Real vhat = b2[i] / bc2;
          v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
      }
    }
  }

 private:
  void ensure_buffers(const std::vector<Tensor>& params) {
    if (m1.size() == params.size()) {
      for (size_t i = 0; i < params.size(); ++i)
        if (m1[i].size() != params[i].v().size())
          throw ContractError("optimizer moment buffer shape mismatch");
      return;
    }
    if (!m1.empty()) throw ContractError("optimizer parameter set changed between steps");
    m1.assign(params.size(), {});
    if (kind == OptKind::Adam) m2.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
      m1[i].assign(params[i].v().size(), Real(0));
      if (kind == OptKind::Adam) m2[i].assign(params[i].v().size(), Real(0));
    }
  }
};

}  // namespace dropnas

#endif
