#include "vigicaps/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace vigicaps::ad {

namespace {

using EMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EMatrix>;
using MutMap = Eigen::Map<EMatrix>;

void check_same_tape(const Var& a, const Var& b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ShapeMismatch("operands live on different tapes");
}

std::int64_t prod(std::span<const std::int64_t> dims) {
  return std::accumulate(dims.begin(), dims.end(), std::int64_t{1}, std::multiplies<>());
}

enum class Broadcast { Same, Suffix, Scalar };

Broadcast broadcast_kind(const Tensor::Shape& a, const Tensor::Shape& b, const char* op) {
  if (a == b) return Broadcast::Same;
  if (Tensor::count(b) == 1) return Broadcast::Scalar;
  if (b.size() < a.size() && std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size())))
    return Broadcast::Suffix;
  throw ShapeMismatch(std::string(op) + ": cannot broadcast " + shape_to_string(b) + " onto " +
                      shape_to_string(a));
}

int normalize_axis(int axis, int ndim, const char* op) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim) throw ShapeMismatch(std::string(op) + ": axis out of range");
  return axis;
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }
const Tensor& Var::grad() const { return tape->grad(*this); }
bool Var::requires_grad() const { return tape->requires_grad(*this); }

Var Tape::input(Tensor value, bool requires_grad) { return emit(std::move(value), requires_grad); }

Var Tape::emit(Tensor value, bool requires_grad) {
  Slot slot;
  slot.value = std::move(value);
  slot.requires_grad = requires_grad;
  slots_.push_back(std::move(slot));
  return Var{this, static_cast<std::int32_t>(slots_.size() - 1)};
}

void Tape::record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

const Tensor& Tape::grad(const Var& v) const {
  const Slot& s = slots_[static_cast<std::size_t>(v.id)];
  if (!s.has_grad) throw ShapeMismatch("no gradient recorded for this var (run backward first)");
  return s.grad;
}

std::span<double> Tape::grad_buffer(const Var& v) {
  Slot& s = slots_[static_cast<std::size_t>(v.id)];
  if (!s.has_grad) {
    s.grad = Tensor::zeros(s.value.shape());
    s.has_grad = true;
  }
  return s.grad.mutable_data();
}

void Tape::backward(const Var& loss) {
  if (backward_run_) throw DoubleBackward("backward already run on this tape");
  if (loss.value().numel() != 1) throw NonScalarOutput("backward requires a scalar loss");
  backward_run_ = true;
  grad_buffer(loss)[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

namespace {

/// Shared boilerplate: emit the output and, when any input needs gradients,
/// record the backward closure.
template <typename Backward>
Var unary_op(const Var& a, Tensor out, Backward&& bw) {
  Tape& t = *a.tape;
  bool rg = a.requires_grad();
  Var o = t.emit(std::move(out), rg);
  if (rg)
    t.record([a, o, bw = std::forward<Backward>(bw)]() {
      if (!a.tape->has_grad(o)) return;
      bw(o.grad(), a.tape->grad_buffer(a));
    });
  return o;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0))
    throw ShapeMismatch("matmul: incompatible shapes " + shape_to_string(av.shape()) + " x " +
                        shape_to_string(bv.shape()));
  const auto m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  {
    ConstMap A(av.data().data(), m, k), B(bv.data().data(), k, n);
    MutMap C(out.mutable_data().data(), m, n);
    C.noalias() = A * B;
  }
  Tape& t = *a.tape;
  bool rg = a.requires_grad() || b.requires_grad();
  Var o = t.emit(std::move(out), rg);
  if (rg)
    t.record([a, b, o, m, k, n]() {
      if (!o.tape->has_grad(o)) return;
      ConstMap G(o.grad().data().data(), m, n);
      if (a.requires_grad()) {
        ConstMap B(b.value().data().data(), k, n);
        MutMap dA(a.tape->grad_buffer(a).data(), m, k);
        dA.noalias() += G * B.transpose();
      }
      if (b.requires_grad()) {
        ConstMap A(a.value().data().data(), m, k);
        MutMap dB(b.tape->grad_buffer(b).data(), k, n);
        dB.noalias() += A.transpose() * G;
      }
    });
  return o;
}

namespace {

Var elementwise_binary(const Var& a, const Var& b, const char* name, bool is_mul, double b_sign) {
  check_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcast_kind(av.shape(), bv.shape(), name);
  const std::int64_t n = av.numel();
  // index of b feeding element i: i (Same), i % bn (Suffix), 0 (Scalar)
  const std::int64_t bn = kind == Broadcast::Same ? n : (kind == Broadcast::Scalar ? 1 : bv.numel());
  Tensor out(av.shape());
  {
    auto dst = out.mutable_data();
    auto x = av.data();
    auto y = bv.data();
    if (is_mul)
      for (std::int64_t i = 0; i < n; ++i) dst[i] = x[i] * y[i % bn];
    else
      for (std::int64_t i = 0; i < n; ++i) dst[i] = x[i] + b_sign * y[i % bn];
  }
  Tape& t = *a.tape;
  bool rg = a.requires_grad() || b.requires_grad();
  Var o = t.emit(std::move(out), rg);
  if (rg)
    t.record([a, b, o, is_mul, b_sign, n, bn]() {
      if (!o.tape->has_grad(o)) return;
      auto g = o.grad().data();
      if (a.requires_grad()) {
        auto da = a.tape->grad_buffer(a);
        if (is_mul) {
          auto y = b.value().data();
          for (std::int64_t i = 0; i < n; ++i) da[static_cast<std::size_t>(i)] += g[i] * y[i % bn];
        } else {
          for (std::int64_t i = 0; i < n; ++i) da[static_cast<std::size_t>(i)] += g[i];
        }
      }
      if (b.requires_grad()) {
        auto db = b.tape->grad_buffer(b);
        if (is_mul) {
          auto x = a.value().data();
          for (std::int64_t i = 0; i < n; ++i) db[static_cast<std::size_t>(i % bn)] += g[i] * x[i];
        } else {
          for (std::int64_t i = 0; i < n; ++i) db[static_cast<std::size_t>(i % bn)] += b_sign * g[i];
        }
      }
    });
  return o;
}

}  // namespace

Var add(const Var& a, const Var& b) { return elementwise_binary(a, b, "add", false, 1.0); }
Var sub(const Var& a, const Var& b) { return elementwise_binary(a, b, "sub", false, -1.0); }
Var mul(const Var& a, const Var& b) { return elementwise_binary(a, b, "mul", true, 1.0); }

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  {
    auto dst = out.mutable_data();
    auto x = av.data();
    for (std::int64_t i = 0; i < av.numel(); ++i) dst[i] = c * x[i];
  }
  return unary_op(a, std::move(out), [c](const Tensor& g, std::span<double> da) {
    auto gs = g.data();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += c * gs[i];
  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat: no inputs");
  Tape& t = *parts[0].tape;
  const auto& first = parts[0].value().shape();
  axis = normalize_axis(axis, static_cast<int>(first.size()), "concat");
  Tensor::Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  bool rg = false;
  for (const Var& p : parts) {
    check_same_tape(parts[0], p);
    const auto& s = p.value().shape();
    if (s.size() != first.size()) throw ShapeMismatch("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (static_cast<int>(d) != axis && s[d] != first[d])
        throw ShapeMismatch("concat: shape mismatch at axis " + std::to_string(d));
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
    rg = rg || p.requires_grad();
  }
  const std::int64_t outer = prod({first.data(), static_cast<std::size_t>(axis)});
  const std::int64_t inner = prod({first.data() + axis + 1, first.size() - static_cast<std::size_t>(axis) - 1});
  const std::int64_t total_axis = out_shape[static_cast<std::size_t>(axis)];
  Tensor out(out_shape);
  {
    auto dst = out.mutable_data();
    std::int64_t offset = 0;
    for (const Var& p : parts) {
      const std::int64_t ax = p.value().dim(axis);
      auto src = p.value().data();
      for (std::int64_t r = 0; r < outer; ++r)
        std::copy_n(src.data() + r * ax * inner, ax * inner, dst.data() + (r * total_axis + offset) * inner);
      offset += ax;
    }
  }
  std::vector<Var> held(parts.begin(), parts.end());
  Var o = t.emit(std::move(out), rg);
  if (rg)
    t.record([held = std::move(held), o, axis, outer, inner, total_axis]() {
      if (!o.tape->has_grad(o)) return;
      auto g = o.grad().data();
      std::int64_t offset = 0;
      for (const Var& p : held) {
        const std::int64_t ax = p.value().dim(axis);
        if (p.requires_grad()) {
          auto dp = p.tape->grad_buffer(p);
          for (std::int64_t r = 0; r < outer; ++r)
            for (std::int64_t i = 0; i < ax * inner; ++i)
              dp[r * ax * inner + i] += g[(r * total_axis + offset) * inner + i];
        }
        offset += ax;
      }
    });
  return o;
}

Var reshape(const Var& a, Tensor::Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return unary_op(a, std::move(out), [](const Tensor& g, std::span<double> da) {
    auto gs = g.data();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += gs[i];
  });
}

Var slice(const Var& a, int axis, std::int64_t start, std::int64_t stop) {
  const Tensor& av = a.value();
  axis = normalize_axis(axis, av.ndim(), "slice");
  const auto& s = av.shape();
  if (start < 0 || stop > s[static_cast<std::size_t>(axis)] || start >= stop)
    throw ShapeMismatch("slice: range [" + std::to_string(start) + ", " + std::to_string(stop) +
                        ") invalid for axis size " + std::to_string(s[static_cast<std::size_t>(axis)]));
  const std::int64_t outer = prod({s.data(), static_cast<std::size_t>(axis)});
  const std::int64_t inner = prod({s.data() + axis + 1, s.size() - static_cast<std::size_t>(axis) - 1});
  const std::int64_t ax = s[static_cast<std::size_t>(axis)];
  const std::int64_t width = stop - start;
  Tensor::Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = width;
  Tensor out(out_shape);
  {
    auto dst = out.mutable_data();
    auto src = av.data();
    for (std::int64_t r = 0; r < outer; ++r)
      std::copy_n(src.data() + (r * ax + start) * inner, width * inner, dst.data() + r * width * inner);
  }
  return unary_op(a, std::move(out),
                  [outer, inner, ax, start, width](const Tensor& g, std::span<double> da) {
                    auto gs = g.data();
                    for (std::int64_t r = 0; r < outer; ++r)
                      for (std::int64_t i = 0; i < width * inner; ++i)
                        da[(r * ax + start) * inner + i] += gs[r * width * inner + i];
                  });
}

namespace {

std::vector<std::int64_t> row_strides(const Tensor::Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<std::size_t>(i)] = st[static_cast<std::size_t>(i) + 1] * s[static_cast<std::size_t>(i) + 1];
  return st;
}

}  // namespace

Var transpose(const Var& a, const std::vector<int>& perm) {
  const Tensor& av = a.value();
  const int nd = av.ndim();
  if (static_cast<int>(perm.size()) != nd) throw ShapeMismatch("transpose: perm rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(nd), false);
  Tensor::Shape out_shape(static_cast<std::size_t>(nd));
  for (int i = 0; i < nd; ++i) {
    int p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= nd || seen[static_cast<std::size_t>(p)]) throw ShapeMismatch("transpose: invalid perm");
    seen[static_cast<std::size_t>(p)] = true;
    out_shape[static_cast<std::size_t>(i)] = av.dim(p);
  }
  auto in_strides = row_strides(av.shape());
  auto out_strides = row_strides(out_shape);
  const auto n = av.numel();
  // src index for each dst index, reused by the backward scatter
  auto mapping = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n));
  Tensor out(out_shape);
  {
    auto dst = out.mutable_data();
    auto src = av.data();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(nd), 0);
    for (std::int64_t o = 0; o < n; ++o) {
      std::int64_t rem = o, src_off = 0;
      for (int d = 0; d < nd; ++d) {
        std::int64_t coord = rem / out_strides[static_cast<std::size_t>(d)];
        rem %= out_strides[static_cast<std::size_t>(d)];
        src_off += coord * in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
      }
      (*mapping)[static_cast<std::size_t>(o)] = src_off;
      dst[o] = src[src_off];
    }
  }
  return unary_op(a, std::move(out), [mapping](const Tensor& g, std::span<double> da) {
    auto gs = g.data();
    for (std::size_t o = 0; o < mapping->size(); ++o) da[static_cast<std::size_t>((*mapping)[o])] += gs[o];
  });
}

Var conv2d(const Var& x, const Var& kernel, const Var& bias, int stride) {
  check_same_tape(x, kernel);
  check_same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  const Tensor& bv = bias.value();
  if (xv.ndim() != 4 || kv.ndim() != 4 || kv.dim(1) != xv.dim(1))
    throw ShapeMismatch("conv2d: expected x [B,Cin,H,W], kernel [Cout,Cin,e,e]");
  if (kv.dim(2) != kv.dim(3)) throw ShapeMismatch("conv2d: kernel must be square");
  if (stride < 1) throw ShapeMismatch("conv2d: stride must be >= 1");
  const std::int64_t B = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::int64_t Cout = kv.dim(0), e = kv.dim(2);
  if (bv.numel() != Cout) throw ShapeMismatch("conv2d: bias size must equal Cout");
  if (H < e || W < e) throw ShapeMismatch("conv2d: kernel larger than input");
  const std::int64_t Ho = (H - e) / stride + 1, Wo = (W - e) / stride + 1;
  Tensor out({B, Cout, Ho, Wo});
  {
    auto dst = out.mutable_data();
    auto xs = xv.data();
    auto ks = kv.data();
    auto bs = bv.data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t co = 0; co < Cout; ++co)
        for (std::int64_t oh = 0; oh < Ho; ++oh)
          for (std::int64_t ow = 0; ow < Wo; ++ow) {
            double acc = bs[co];
            for (std::int64_t ci = 0; ci < Cin; ++ci)
              for (std::int64_t u = 0; u < e; ++u)
                for (std::int64_t v = 0; v < e; ++v)
                  acc += xs[((b * Cin + ci) * H + oh * stride + u) * W + ow * stride + v] *
                         ks[((co * Cin + ci) * e + u) * e + v];
            dst[((b * Cout + co) * Ho + oh) * Wo + ow] = acc;
          }
  }
  Tape& t = *x.tape;
  bool rg = x.requires_grad() || kernel.requires_grad() || bias.requires_grad();
  Var o = t.emit(std::move(out), rg);
  if (rg)
    t.record([x, kernel, bias, o, B, Cin, H, W, Cout, e, Ho, Wo, stride]() {
      if (!o.tape->has_grad(o)) return;
      auto g = o.grad().data();
      auto xs = x.value().data();
      auto ks = kernel.value().data();
      const bool gx = x.requires_grad(), gk = kernel.requires_grad(), gb = bias.requires_grad();
      std::span<double> dx = gx ? x.tape->grad_buffer(x) : std::span<double>{};
      std::span<double> dk = gk ? kernel.tape->grad_buffer(kernel) : std::span<double>{};
      std::span<double> db = gb ? bias.tape->grad_buffer(bias) : std::span<double>{};
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t co = 0; co < Cout; ++co)
          for (std::int64_t oh = 0; oh < Ho; ++oh)
            for (std::int64_t ow = 0; ow < Wo; ++ow) {
              const double go = g[((b * Cout + co) * Ho + oh) * Wo + ow];
              if (gb) db[static_cast<std::size_t>(co)] += go;
              for (std::int64_t ci = 0; ci < Cin; ++ci)
                for (std::int64_t u = 0; u < e; ++u)
                  for (std::int64_t v = 0; v < e; ++v) {
                    const auto xi = ((b * Cin + ci) * H + oh * stride + u) * W + ow * stride + v;
                    const auto kidx = ((co * Cin + ci) * e + u) * e + v;
                    if (gx) dx[static_cast<std::size_t>(xi)] += go * ks[kidx];
                    if (gk) dk[static_cast<std::size_t>(kidx)] += go * xs[xi];
                  }
            }
    });
  return o;
}

Var sigmoid(const Var& a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  {
    auto dst = out.mutable_data();
    auto xs = av.data();
    for (std::int64_t i = 0; i < av.numel(); ++i) {
      const double v = xs[i];
      dst[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
  }
  Tensor saved = out;
  return unary_op(a, std::move(out), [saved](const Tensor& g, std::span<double> da) {
    auto gs = g.data();
    auto ys = saved.data();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += gs[i] * ys[i] * (1.0 - ys[i]);
  });
}

Var tanh(const Var& a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  {
    auto dst = out.mutable_data();
    auto xs = av.data();
    for (std::int64_t i = 0; i < av.numel(); ++i) dst[i] = std::tanh(xs[i]);
  }
  Tensor saved = out;
  return unary_op(a, std::move(out), [saved](const Tensor& g, std::span<double> da) {
    auto gs = g.data();
    auto ys = saved.data();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += gs[i] * (1.0 - ys[i] * ys[i]);
  });
}

Var leaky_relu(const Var& a, double alpha) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  {
    auto dst = out.mutable_data();
    auto xs = av.data();
    for (std::int64_t i = 0; i < av.numel(); ++i) dst[i] = xs[i] >= 0.0 ? xs[i] : alpha * xs[i];
  }
  Tensor saved = av;
  return unary_op(a, std::move(out), [saved, alpha](const Tensor& g, std::span<double> da) {
    auto gs = g.data();
    auto xs = saved.data();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += gs[i] * (xs[static_cast<std::int64_t>(i)] >= 0.0 ? 1.0 : alpha);
  });
}

Var softmax(const Var& a, int axis) {
  const Tensor& av = a.value();
  axis = normalize_axis(axis, av.ndim(), "softmax");
  const auto& s = av.shape();
  const std::int64_t outer = prod({s.data(), static_cast<std::size_t>(axis)});
  const std::int64_t inner = prod({s.data() + axis + 1, s.size() - static_cast<std::size_t>(axis) - 1});
  const std::int64_t ax = s[static_cast<std::size_t>(axis)];
  Tensor out(s);
  {
    auto dst = out.mutable_data();
    auto xs = av.data();
    for (std::int64_t r = 0; r < outer; ++r)
      for (std::int64_t c = 0; c < inner; ++c) {
        const std::int64_t base = r * ax * inner + c;
        double mx = xs[base];
        for (std::int64_t k = 1; k < ax; ++k) mx = std::max(mx, xs[base + k * inner]);
        double denom = 0.0;
        for (std::int64_t k = 0; k < ax; ++k) {
          const double ev = std::exp(xs[base + k * inner] - mx);
          dst[base + k * inner] = ev;
          denom += ev;
        }
        for (std::int64_t k = 0; k < ax; ++k) dst[base + k * inner] /= denom;
      }
  }
  Tensor saved = out;
  return unary_op(a, std::move(out), [saved, outer, inner, ax](const Tensor& g, std::span<double> da) {
    auto gs = g.data();
    auto ys = saved.data();
    for (std::int64_t r = 0; r < outer; ++r)
      for (std::int64_t c = 0; c < inner; ++c) {
        const std::int64_t base = r * ax * inner + c;
        double dot = 0.0;
        for (std::int64_t k = 0; k < ax; ++k) dot += gs[base + k * inner] * ys[base + k * inner];
        for (std::int64_t k = 0; k < ax; ++k)
          da[static_cast<std::size_t>(base + k * inner)] += ys[base + k * inner] * (gs[base + k * inner] - dot);
      }
  });
}

Var sum(const Var& a) {
  const Tensor& av = a.value();
  double acc = 0.0;
  for (double v : av.data()) acc += v;
  return unary_op(a, Tensor::scalar(acc), [](const Tensor& g, std::span<double> da) {
    const double gv = g[0];
    for (auto& d : da) d += gv;
  });
}

Var mean(const Var& a) {
  const Tensor& av = a.value();
  const double n = static_cast<double>(av.numel());
  double acc = 0.0;
  for (double v : av.data()) acc += v;
  return unary_op(a, Tensor::scalar(acc / n), [n](const Tensor& g, std::span<double> da) {
    const double gv = g[0] / n;
    for (auto& d : da) d += gv;
  });
}

Var sum_axis(const Var& a, int axis) {
  const Tensor& av = a.value();
  axis = normalize_axis(axis, av.ndim(), "sum_axis");
  const auto& s = av.shape();
  const std::int64_t outer = prod({s.data(), static_cast<std::size_t>(axis)});
  const std::int64_t inner = prod({s.data() + axis + 1, s.size() - static_cast<std::size_t>(axis) - 1});
  const std::int64_t ax = s[static_cast<std::size_t>(axis)];
  Tensor::Shape out_shape;
  for (std::size_t d = 0; d < s.size(); ++d)
    if (static_cast<int>(d) != axis) out_shape.push_back(s[d]);
  if (out_shape.empty()) out_shape = {};
  Tensor out(out_shape);
  {
    auto dst = out.mutable_data();
    auto xs = av.data();
    for (std::int64_t r = 0; r < outer; ++r)
      for (std::int64_t c = 0; c < inner; ++c) {
        double acc = 0.0;
        for (std::int64_t k = 0; k < ax; ++k) acc += xs[(r * ax + k) * inner + c];
        dst[r * inner + c] = acc;
      }
  }
  return unary_op(a, std::move(out), [outer, inner, ax](const Tensor& g, std::span<double> da) {
    auto gs = g.data();
    for (std::int64_t r = 0; r < outer; ++r)
      for (std::int64_t c = 0; c < inner; ++c) {
        const double gv = gs[r * inner + c];
        for (std::int64_t k = 0; k < ax; ++k) da[static_cast<std::size_t>((r * ax + k) * inner + c)] += gv;
      }
  });
}

Var l2_norm(const Var& a) {
  const Tensor& av = a.value();
  if (av.ndim() < 1) throw ShapeMismatch("l2_norm: needs at least one axis");
  const auto& s = av.shape();
  const std::int64_t ax = s.back();
  const std::int64_t rows = av.numel() / ax;
  Tensor::Shape out_shape(s.begin(), s.end() - 1);
  Tensor out(out_shape);
  {
    auto dst = out.mutable_data();
    auto xs = av.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < ax; ++k) acc += xs[r * ax + k] * xs[r * ax + k];
      dst[r] = std::sqrt(acc);
    }
  }
  Tensor saved_x = av;
  Tensor saved_n = out;
  return unary_op(a, std::move(out), [saved_x, saved_n, rows, ax](const Tensor& g, std::span<double> da) {
    auto gs = g.data();
    auto xs = saved_x.data();
    auto ns = saved_n.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      if (ns[r] == 0.0) continue;
      const double gv = gs[r] / ns[r];
      for (std::int64_t k = 0; k < ax; ++k) da[static_cast<std::size_t>(r * ax + k)] += gv * xs[r * ax + k];
    }
  });
}

Var squash(const Var& a) {
  const Tensor& av = a.value();
  if (av.ndim() < 1) throw ShapeMismatch("squash: needs at least one axis");
  const std::int64_t ax = av.shape().back();
  const std::int64_t rows = av.numel() / ax;
  Tensor out(av.shape());
  Tensor norms({std::max<std::int64_t>(rows, 1)});
  {
    auto dst = out.mutable_data();
    auto n2s = norms.mutable_data();
    auto xs = av.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      double n2 = 0.0;
      for (std::int64_t k = 0; k < ax; ++k) n2 += xs[r * ax + k] * xs[r * ax + k];
      n2s[r] = n2;
      const double factor = n2 == 0.0 ? 0.0 : n2 / (1.0 + n2) / std::sqrt(n2);
      for (std::int64_t k = 0; k < ax; ++k) dst[r * ax + k] = xs[r * ax + k] * factor;
    }
  }
  Tensor saved_x = av;
  return unary_op(a, std::move(out), [saved_x, norms, rows, ax](const Tensor& g, std::span<double> da) {
    auto gs = g.data();
    auto xs = saved_x.data();
    auto n2s = norms.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double n2 = n2s[r];
      if (n2 < 1e-300) continue;  // continuous extension: zero gradient at the origin
      const double root = std::sqrt(n2);
      const double factor = root / (1.0 + n2);
      const double fprime = (1.0 - n2) / (2.0 * root * (1.0 + n2) * (1.0 + n2));
      double dot = 0.0;
      for (std::int64_t k = 0; k < ax; ++k) dot += xs[r * ax + k] * gs[r * ax + k];
      for (std::int64_t k = 0; k < ax; ++k)
        da[static_cast<std::size_t>(r * ax + k)] += factor * gs[r * ax + k] + 2.0 * xs[r * ax + k] * fprime * dot;
    }
  });
}

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats* running, bool train,
              double eps) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  const Tensor& xv = x.value();
  if (xv.ndim() < 2) throw ShapeMismatch("batchnorm: input must have a batch axis");
  const std::int64_t D = xv.shape().back();
  const std::int64_t R = xv.numel() / D;
  if (gamma.value().numel() != D || beta.value().numel() != D)
    throw ShapeMismatch("batchnorm: gamma/beta must have one entry per feature");
  Tensor mu({D}), var({D});
  if (train) {
    auto mus = mu.mutable_data();
    auto vars = var.mutable_data();
    auto xs = xv.data();
    for (std::int64_t d = 0; d < D; ++d) {
      double m = 0.0;
      for (std::int64_t r = 0; r < R; ++r) m += xs[r * D + d];
      m /= static_cast<double>(R);
      double v = 0.0;
      for (std::int64_t r = 0; r < R; ++r) {
        const double c = xs[r * D + d] - m;
        v += c * c;
      }
      mus[d] = m;
      vars[d] = v / static_cast<double>(R);
    }
    if (running != nullptr) {
      auto rm = running->mean.mutable_data();
      auto rv = running->var.mutable_data();
      const double mom = running->momentum;
      for (std::int64_t d = 0; d < D; ++d) {
        rm[d] = mom * rm[d] + (1.0 - mom) * mus[d];
        rv[d] = mom * rv[d] + (1.0 - mom) * vars[d];
      }
    }
  } else {
    if (running == nullptr) throw ShapeMismatch("batchnorm: eval mode requires running statistics");
    mu = running->mean;
    var = running->var;
  }
  Tensor xhat(xv.shape());
  Tensor invstd({D});
  {
    auto is = invstd.mutable_data();
    auto vars = var.data();
    for (std::int64_t d = 0; d < D; ++d) is[d] = 1.0 / std::sqrt(vars[d] + eps);
    auto xh = xhat.mutable_data();
    auto xs = xv.data();
    auto mus = mu.data();
    for (std::int64_t r = 0; r < R; ++r)
      for (std::int64_t d = 0; d < D; ++d) xh[r * D + d] = (xs[r * D + d] - mus[d]) * is[d];
  }
  Tensor out(xv.shape());
  {
    auto dst = out.mutable_data();
    auto xh = xhat.data();
    auto gs = gamma.value().data();
    auto bs = beta.value().data();
    for (std::int64_t r = 0; r < R; ++r)
      for (std::int64_t d = 0; d < D; ++d) dst[r * D + d] = gs[d] * xh[r * D + d] + bs[d];
  }
  Tape& t = *x.tape;
  bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  Var o = t.emit(std::move(out), rg);
  if (rg)
    t.record([x, gamma, beta, o, xhat, invstd, train, R, D]() {
      if (!o.tape->has_grad(o)) return;
      auto g = o.grad().data();
      auto xh = xhat.data();
      auto is = invstd.data();
      auto gam = gamma.value().data();
      if (gamma.requires_grad()) {
        auto dg = gamma.tape->grad_buffer(gamma);
        for (std::int64_t r = 0; r < R; ++r)
          for (std::int64_t d = 0; d < D; ++d) dg[static_cast<std::size_t>(d)] += g[r * D + d] * xh[r * D + d];
      }
      if (beta.requires_grad()) {
        auto db = beta.tape->grad_buffer(beta);
        for (std::int64_t r = 0; r < R; ++r)
          for (std::int64_t d = 0; d < D; ++d) db[static_cast<std::size_t>(d)] += g[r * D + d];
      }
      if (x.requires_grad()) {
        auto dx = x.tape->grad_buffer(x);
        if (train) {
          // d/dx of the batch-statistics normalization
          std::vector<double> gsum(static_cast<std::size_t>(D), 0.0), gxsum(static_cast<std::size_t>(D), 0.0);
          for (std::int64_t r = 0; r < R; ++r)
            for (std::int64_t d = 0; d < D; ++d) {
              gsum[static_cast<std::size_t>(d)] += g[r * D + d];
              gxsum[static_cast<std::size_t>(d)] += g[r * D + d] * xh[r * D + d];
            }
          const double rn = 1.0 / static_cast<double>(R);
          for (std::int64_t r = 0; r < R; ++r)
            for (std::int64_t d = 0; d < D; ++d)
              dx[static_cast<std::size_t>(r * D + d)] +=
                  gam[d] * is[d] *
                  (g[r * D + d] - rn * gsum[static_cast<std::size_t>(d)] -
                   xh[r * D + d] * rn * gxsum[static_cast<std::size_t>(d)]);
        } else {
          for (std::int64_t r = 0; r < R; ++r)
            for (std::int64_t d = 0; d < D; ++d)
              dx[static_cast<std::size_t>(r * D + d)] += g[r * D + d] * gam[d] * is[d];
        }
      }
    });
  return o;
}

Var capsule_predict(const Var& u, const Var& w) {
  check_same_tape(u, w);
  const Tensor& uv = u.value();
  const Tensor& wv = w.value();
  if (uv.ndim() != 3 || wv.ndim() != 4 || uv.dim(1) != wv.dim(0) || uv.dim(2) != wv.dim(2))
    throw ShapeMismatch("capsule_predict: expected u [B,N,d], w [N,K,d,H]");
  const std::int64_t B = uv.dim(0), N = uv.dim(1), d = uv.dim(2), K = wv.dim(1), H = wv.dim(3);
  Tensor out({B, N, K, H});
  {
    auto dst = out.mutable_data();
    auto us = uv.data();
    auto ws = wv.data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t k = 0; k < K; ++k)
          for (std::int64_t h = 0; h < H; ++h) {
            double acc = 0.0;
            for (std::int64_t e = 0; e < d; ++e)
              acc += us[(b * N + n) * d + e] * ws[((n * K + k) * d + e) * H + h];
            dst[((b * N + n) * K + k) * H + h] = acc;
          }
  }
  Tape& t = *u.tape;
  bool rg = u.requires_grad() || w.requires_grad();
  Var o = t.emit(std::move(out), rg);
  if (rg)
    t.record([u, w, o, B, N, d, K, H]() {
      if (!o.tape->has_grad(o)) return;
      auto g = o.grad().data();
      auto us = u.value().data();
      auto ws = w.value().data();
      const bool gu = u.requires_grad(), gw = w.requires_grad();
      std::span<double> du = gu ? u.tape->grad_buffer(u) : std::span<double>{};
      std::span<double> dw = gw ? w.tape->grad_buffer(w) : std::span<double>{};
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t k = 0; k < K; ++k)
            for (std::int64_t h = 0; h < H; ++h) {
              const double go = g[((b * N + n) * K + k) * H + h];
              for (std::int64_t e = 0; e < d; ++e) {
                if (gu)
                  du[static_cast<std::size_t>((b * N + n) * d + e)] += go * ws[((n * K + k) * d + e) * H + h];
                if (gw)
                  dw[static_cast<std::size_t>(((n * K + k) * d + e) * H + h)] += go * us[(b * N + n) * d + e];
              }
            }
    });
  return o;
}

Var route_weighted_sum(const Var& c, const Var& uhat) {
  check_same_tape(c, uhat);
  const Tensor& cv = c.value();
  const Tensor& uv = uhat.value();
  if (cv.ndim() != 3 || uv.ndim() != 4 || cv.dim(0) != uv.dim(0) || cv.dim(1) != uv.dim(1) ||
      cv.dim(2) != uv.dim(2))
    throw ShapeMismatch("route_weighted_sum: expected c [B,N,K], uhat [B,N,K,H]");
  const std::int64_t B = cv.dim(0), N = cv.dim(1), K = cv.dim(2), H = uv.dim(3);
  Tensor out({B, K, H});
  {
    auto dst = out.mutable_data();
    auto cs = cv.data();
    auto us = uv.data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t k = 0; k < K; ++k)
        for (std::int64_t h = 0; h < H; ++h) {
          double acc = 0.0;
          for (std::int64_t n = 0; n < N; ++n)
            acc += cs[(b * N + n) * K + k] * us[((b * N + n) * K + k) * H + h];
          dst[(b * K + k) * H + h] = acc;
        }
  }
  Tape& t = *c.tape;
  bool rg = c.requires_grad() || uhat.requires_grad();
  Var o = t.emit(std::move(out), rg);
  if (rg)
    t.record([c, uhat, o, B, N, K, H]() {
      if (!o.tape->has_grad(o)) return;
      auto g = o.grad().data();
      auto cs = c.value().data();
      auto us = uhat.value().data();
      const bool gc = c.requires_grad(), gu = uhat.requires_grad();
      std::span<double> dc = gc ? c.tape->grad_buffer(c) : std::span<double>{};
      std::span<double> du = gu ? uhat.tape->grad_buffer(uhat) : std::span<double>{};
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t k = 0; k < K; ++k) {
            double dotc = 0.0;
            for (std::int64_t h = 0; h < H; ++h) {
              const double go = g[(b * K + k) * H + h];
              if (gu)
                du[static_cast<std::size_t>(((b * N + n) * K + k) * H + h)] += go * cs[(b * N + n) * K + k];
              dotc += go * us[((b * N + n) * K + k) * H + h];
            }
            if (gc) dc[static_cast<std::size_t>((b * N + n) * K + k)] += dotc;
          }
    });
  return o;
}

Var route_agreement(const Var& uhat, const Var& v) {
  check_same_tape(uhat, v);
  const Tensor& uv = uhat.value();
  const Tensor& vv = v.value();
  if (uv.ndim() != 4 || vv.ndim() != 3 || uv.dim(0) != vv.dim(0) || uv.dim(2) != vv.dim(1) ||
      uv.dim(3) != vv.dim(2))
    throw ShapeMismatch("route_agreement: expected uhat [B,N,K,H], v [B,K,H]");
  const std::int64_t B = uv.dim(0), N = uv.dim(1), K = uv.dim(2), H = uv.dim(3);
  Tensor out({B, N, K});
  {
    auto dst = out.mutable_data();
    auto us = uv.data();
    auto vs = vv.data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t k = 0; k < K; ++k) {
          double acc = 0.0;
          for (std::int64_t h = 0; h < H; ++h)
            acc += us[((b * N + n) * K + k) * H + h] * vs[(b * K + k) * H + h];
          dst[(b * N + n) * K + k] = acc;
        }
  }
  Tape& t = *uhat.tape;
  bool rg = uhat.requires_grad() || v.requires_grad();
  Var o = t.emit(std::move(out), rg);
  if (rg)
    t.record([uhat, v, o, B, N, K, H]() {
      if (!o.tape->has_grad(o)) return;
      auto g = o.grad().data();
      auto us = uhat.value().data();
      auto vs = v.value().data();
      const bool gu = uhat.requires_grad(), gv = v.requires_grad();
      std::span<double> du = gu ? uhat.tape->grad_buffer(uhat) : std::span<double>{};
      std::span<double> dv = gv ? v.tape->grad_buffer(v) : std::span<double>{};
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t k = 0; k < K; ++k) {
            const double go = g[(b * N + n) * K + k];
            for (std::int64_t h = 0; h < H; ++h) {
              if (gu) du[static_cast<std::size_t>(((b * N + n) * K + k) * H + h)] += go * vs[(b * K + k) * H + h];
              if (gv) dv[static_cast<std::size_t>((b * K + k) * H + h)] += go * us[((b * N + n) * K + k) * H + h];
            }
          }
    });
  return o;
}

double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x, double h) {
  Tensor g_ad;
  {
    Tape tape;
    Var vx = tape.input(x, true);
    Var loss = f(tape, vx);
    if (loss.value().numel() != 1) throw NonScalarOutput("grad_check requires a scalar-valued function");
    tape.backward(loss);
    g_ad = vx.grad();
  }
  auto eval = [&](const Tensor& point) {
    Tape tape;
    Var vx = tape.input(point, false);
    Var loss = f(tape, vx);
    if (loss.value().numel() != 1) throw NonScalarOutput("grad_check requires a scalar-valued function");
    return loss.value().scalar_value();
  };
  double max_err = 0.0;
  Tensor probe = x;
  auto pd = probe.mutable_data();
  auto ga = g_ad.data();
  for (std::size_t i = 0; i < pd.size(); ++i) {
    const double orig = pd[i];
    pd[i] = orig + h;
    const double fp = eval(probe);
    pd[i] = orig - h;
    const double fm = eval(probe);
    pd[i] = orig;
    const double g_fd = (fp - fm) / (2.0 * h);
    const double err = std::abs(ga[static_cast<std::int64_t>(i)] - g_fd) /
                       std::max({1.0, std::abs(ga[static_cast<std::int64_t>(i)]), std::abs(g_fd)});
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace vigicaps::ad
