#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vigicaps/errors.hpp"
#include "vigicaps/tensor.hpp"

namespace vigicaps::ad {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  const Tensor::Shape& shape() const { return value().shape(); }
};

/// Ordered record of primitive applications. Forward ops append nodes;
/// backward() walks them once in reverse, accumulating gradients into the
/// leaves. A tape and its vars form a single-threaded unit.
class Tape {
 public:
  Var input(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return input(std::move(value), false); }

  /// Reverse pass from a scalar loss. Throws NonScalarOutput if the loss is
  /// not a scalar and DoubleBackward if called a second time.
  void backward(const Var& loss);

  const Tensor& value(const Var& v) const { return slots_[static_cast<std::size_t>(v.id)].value; }
  const Tensor& grad(const Var& v) const;
  bool requires_grad(const Var& v) const { return slots_[static_cast<std::size_t>(v.id)].requires_grad; }

  std::size_t node_count() const { return nodes_.size(); }

  // --- op support (used by the primitive implementations) ---
  Var emit(Tensor value, bool requires_grad);
  void record(std::function<void()> backward_fn);
  /// Gradient accumulation buffer for a var, allocated on first use.
  std::span<double> grad_buffer(const Var& v);
  bool has_grad(const Var& v) const { return slots_[static_cast<std::size_t>(v.id)].has_grad; }

 private:
  struct Slot {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
  };
  std::vector<Slot> slots_;
  std::vector<std::function<void()>> nodes_;
  bool backward_run_ = false;
};

/// Running batch-norm statistics; owned by the model, updated by batchnorm()
/// in train mode, frozen in eval mode.
struct BatchNormStats {
  Tensor mean;
  Tensor var;
  double momentum = 0.99;
};

// --- primitives -----------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);  // broadcasting: equal shapes, suffix shape, or scalar
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var concat(std::span<const Var> parts, int axis);
Var reshape(const Var& a, Tensor::Shape shape);
Var slice(const Var& a, int axis, std::int64_t start, std::int64_t stop);
Var transpose(const Var& a, const std::vector<int>& perm);
/// Valid (unpadded) 2-D convolution: x [B,Cin,H,W], k [Cout,Cin,e,e], bias [Cout].
Var conv2d(const Var& x, const Var& kernel, const Var& bias, int stride);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var leaky_relu(const Var& a, double alpha);
Var softmax(const Var& a, int axis);
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_axis(const Var& a, int axis);
/// Euclidean norm over the last axis (axis dropped).
Var l2_norm(const Var& a);
/// Capsule squash over the last axis: v = s * |s| / (1 + |s|^2); zero maps to
/// zero and gets zero gradient.
Var squash(const Var& a);
/// Batch normalization over all leading axes, per trailing-axis feature.
/// In train mode batch statistics are used and, when `running` is non-null,
/// folded into the running statistics; eval mode applies the frozen affine map.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats* running, bool train,
              double eps = 1e-5);

// --- fused capsule-routing kernels ----------------------------------------

/// Prediction vectors: u [B,N,d] x w [N,K,d,H] -> [B,N,K,H].
Var capsule_predict(const Var& u, const Var& w);
/// s[b,k,h] = sum_n c[b,n,k] * uhat[b,n,k,h].
Var route_weighted_sum(const Var& c, const Var& uhat);
/// a[b,n,k] = sum_h uhat[b,n,k,h] * v[b,k,h].
Var route_agreement(const Var& uhat, const Var& v);

// --- verification ----------------------------------------------------------

/// Compares the tape gradient of a scalar-valued function against central
/// finite differences at step h; returns the max over coordinates of
/// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x, double h);

}  // namespace vigicaps::ad
