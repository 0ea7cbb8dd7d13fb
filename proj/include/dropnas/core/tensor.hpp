#ifndef DROPNAS_CORE_TENSOR_HPP
#define DROPNAS_CORE_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dropnas/core/errors.hpp"

namespace dropnas {

// 64-bit by default; define DROPNAS_REAL_FLOAT to build the whole stack in
// 32-bit (faster, looser tolerances). Tests and correctness runs use double.
#ifdef DROPNAS_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<int>;

inline long numel_of(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

struct TensorImpl {
  Shape shape;
  std::vector<Real> v;  // values, row-major
  std::vector<Real> g;  // gradient, same layout; empty when untracked
  bool tracked = false;
};

// Value-semantics handle onto a shared storage node. Copies alias.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool tracked = false) {
    Tensor t;
    t.p_ = std::make_shared<TensorImpl>();
    t.p_->shape = std::move(shape);
    long n = numel_of(t.p_->shape);
    if (n < 0) throw ConfigError("negative dimension in shape " + shape_str(t.p_->shape));
    t.p_->v.assign(static_cast<size_t>(n), Real(0));
    t.p_->tracked = tracked;
    if (tracked) t.p_->g.assign(static_cast<size_t>(n), Real(0));
    return t;
  }

  static Tensor from(Shape shape, std::vector<Real> values, bool tracked = false) {
    Tensor t = zeros(std::move(shape), tracked);
    if (static_cast<long>(values.size()) != t.numel())
      throw ConfigError("value count " + std::to_string(values.size()) +
                        " does not match shape " + shape_str(t.shape()));
    t.p_->v = std::move(values);
    return t;
  }

  static Tensor scalar(Real x, bool tracked = false) { return from({1}, {x}, tracked); }

  bool defined() const { return p_ != nullptr; }
  const Shape& shape() const { return p_->shape; }
  long numel() const { return static_cast<long>(p_->v.size()); }
  bool tracked() const { return p_ && p_->tracked; }

  std::vector<Real>& v() { return p_->v; }
  const std::vector<Real>& v() const { return p_->v; }
  std::vector<Real>& g() { return p_->g; }
  const std::vector<Real>& g() const { return p_->g; }

  Real item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return p_->v[0];
  }

  void zero_grad() {
    if (tracked()) std::fill(p_->g.begin(), p_->g.end(), Real(0));
  }

  // Detached copy of values (fresh storage, untracked).
  Tensor clone_values() const {
    Tensor t = zeros(shape(), false);
    t.p_->v = p_->v;
    return t;
  }

  std::shared_ptr<TensorImpl> impl() const { return p_; }

  int dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(p_->shape.size()); }

 private:
  std::shared_ptr<TensorImpl> p_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

inline void check_finite(const Tensor& t, const char* op_name) {
  for (Real x : t.v())
    if (!std::isfinite(x))
      throw NumericError(std::string("non-finite output in op '") + op_name + "'");
}

}  // namespace dropnas

#endif
