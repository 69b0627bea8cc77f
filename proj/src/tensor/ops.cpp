// Copyright 2026 The denseflow-cpp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "denseflow/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <string>

#include "gemm.hpp"

namespace denseflow::ops {

namespace {

using detail::Storage;
template <typename T>
using StoragePtr = std::shared_ptr<Storage<T>>;

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (!active_tape<T>()) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T, typename F>
void record(const char* op, Tensor<T>& out, F&& backward) {
  out.set_requires_grad(true);
  active_tape<T>()->push({op, out.storage(), std::function<void()>(std::forward<F>(backward))});
}

// Gradient buffer of an input, or nullptr when it takes no gradient.
template <typename T>
T* grad_of(const StoragePtr<T>& s) {
  if (!s->requires_grad) return nullptr;
  s->ensure_grad();
  return s->grad.data();
}

void require_rank_le4(const Shape& s, const char* op) {
  if (s.size() > 4) {
    throw ShapeError(std::string(op) + ": rank > 4 not supported, got " + shape_str(s));
  }
}

std::array<std::int64_t, 4> pad4(const Shape& s) {
  std::array<std::int64_t, 4> out{1, 1, 1, 1};
  const std::size_t off = 4 - s.size();
  for (std::size_t i = 0; i < s.size(); ++i) out[off + i] = s[i];
  return out;
}

std::array<std::int64_t, 4> strides4(const std::array<std::int64_t, 4>& ext) {
  std::array<std::int64_t, 4> st{};
  std::int64_t acc = 1;
  for (int i = 3; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= ext[static_cast<std::size_t>(i)];
  }
  return st;
}

struct Broadcast {
  Shape out;
  std::array<std::int64_t, 4> ext{};
  std::array<std::int64_t, 4> sa{};
  std::array<std::int64_t, 4> sb{};
};

Broadcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  require_rank_le4(a, op);
  require_rank_le4(b, op);
  const auto pa = pad4(a);
  const auto pb = pad4(b);
  Broadcast bc;
  const std::size_t rank = std::max(a.size(), b.size());
  for (std::size_t i = 0; i < 4; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " do not broadcast");
    }
    bc.ext[i] = std::max(pa[i], pb[i]);
    if (pa[i] == 0 || pb[i] == 0) bc.ext[i] = 0;
  }
  const auto sa = strides4(pa);
  const auto sb = strides4(pb);
  for (std::size_t i = 0; i < 4; ++i) {
    bc.sa[i] = (pa[i] == 1) ? 0 : sa[i];
    bc.sb[i] = (pb[i] == 1) ? 0 : sb[i];
  }
  for (std::size_t i = 4 - rank; i < 4; ++i) bc.out.push_back(bc.ext[i]);
  return bc;
}

// f(out_index, a_index, b_index) in row-major order of the output.
template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  std::int64_t o = 0;
  for (std::int64_t i0 = 0; i0 < bc.ext[0]; ++i0) {
    for (std::int64_t i1 = 0; i1 < bc.ext[1]; ++i1) {
      for (std::int64_t i2 = 0; i2 < bc.ext[2]; ++i2) {
        const std::int64_t ba = i0 * bc.sa[0] + i1 * bc.sa[1] + i2 * bc.sa[2];
        const std::int64_t bb = i0 * bc.sb[0] + i1 * bc.sb[1] + i2 * bc.sb[2];
        for (std::int64_t i3 = 0; i3 < bc.ext[3]; ++i3) {
          f(o++, ba + i3 * bc.sa[3], bb + i3 * bc.sb[3]);
        }
      }
    }
  }
}

// Binary elementwise op. fwd(x, y) -> z; dx(x, y, z) and dy(x, y, z) are the
// local partial derivatives.
template <typename T, typename Fwd, typename Dx, typename Dy>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Dx dx, Dy dy) {
  const Broadcast bc = broadcast_shapes(a.shape(), b.shape(), op);
  Tensor<T> out(bc.out);
  {
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.mutable_data().data();
    for_each_broadcast(bc, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
      po[o] = fwd(pa[ia], pb[ib]);
    });
  }
  if (should_record<T>({&a, &b})) {
    record(op, out, [sa = a.storage(), sb = b.storage(), so = out.storage(), bc, dx, dy]() {
      T* ga = grad_of<T>(sa);
      T* gb = grad_of<T>(sb);
      const T* g = so->grad.data();
      const T* pa = sa->data.data();
      const T* pb = sb->data.data();
      const T* po = so->data.data();
      for_each_broadcast(bc, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
        if (ga) ga[ia] += g[o] * dx(pa[ia], pb[ib], po[o]);
        if (gb) gb[ib] += g[o] * dy(pa[ia], pb[ib], po[o]);
      });
    });
  }
  return out;
}

// Unary elementwise op; d(x, y) is dy/dx.
template <typename T, typename Fwd, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& a, Fwd fwd, D d) {
  Tensor<T> out(a.shape());
  {
    const auto in = a.data();
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = fwd(in[i]);
  }
  if (should_record<T>({&a})) {
    record(op, out, [sa = a.storage(), so = out.storage(), d]() {
      T* ga = grad_of<T>(sa);
      if (!ga) return;
      const auto& g = so->grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * d(sa->data[i], so->data[i]);
    });
  }
  return out;
}

template <typename T>
T softplus_scalar(T x) {
  // max(x, 0) + log1p(exp(-|x|)) is exact to rounding on both tails.
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  for (T v : b.data()) {
    if (v == T(0)) throw NumericDomainError("div: division by zero");
  }
  return binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T z) { return -z / y; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary<T>("mul_scalar", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary<T>("neg", a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  for (T v : a.data()) {
    if (!(v > T(0))) throw NumericDomainError("log: non-positive input");
  }
  return unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary<T>(
      "sigmoid", a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> log_sigmoid(const Tensor<T>& a) {
  return unary<T>(
      "log_sigmoid", a, [](T x) { return -softplus_scalar(-x); },
      [](T x, T) { return sigmoid_scalar(-x); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return unary<T>(
      "softplus", a, [](T x) { return softplus_scalar(x); },
      [](T x, T) { return sigmoid_scalar(x); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary<T>(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  for (T v : a.data()) {
    if (v < T(0)) throw NumericDomainError("sqrt: negative input");
  }
  return unary<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return unary<T>(
      "clamp", a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (should_record<T>({&a})) {
    record("sum", out, [sa = a.storage(), so = out.storage()]() {
      T* ga = grad_of<T>(sa);
      if (!ga) return;
      const T g = so->grad[0];
      for (std::size_t i = 0; i < sa->data.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_axes(const Tensor<T>& a, const std::vector<int>& axes, bool keepdims) {
  require_rank_le4(a.shape(), "sum_axes");
  const int r = a.rank();
  Shape kept = a.shape();
  std::vector<bool> reduced(static_cast<std::size_t>(r), false);
  for (int ax : axes) {
    if (ax < 0) ax += r;
    if (ax < 0 || ax >= r) throw ShapeError("sum_axes: axis out of range for " + shape_str(a.shape()));
    reduced[static_cast<std::size_t>(ax)] = true;
    kept[static_cast<std::size_t>(ax)] = 1;
  }
  Shape final_shape;
  for (int i = 0; i < r; ++i) {
    if (!reduced[static_cast<std::size_t>(i)] || keepdims) final_shape.push_back(kept[static_cast<std::size_t>(i)]);
  }
  // Treat the kept-dims output as the broadcast operand "b" of a.
  const Broadcast bc = broadcast_shapes(a.shape(), kept, "sum_axes");
  Tensor<T> out(final_shape);
  {
    const T* pa = a.data().data();
    T* po = out.mutable_data().data();
    for_each_broadcast(bc, [&](std::int64_t o, std::int64_t, std::int64_t ib) { po[ib] += pa[o]; });
  }
  if (should_record<T>({&a})) {
    record("sum_axes", out, [sa = a.storage(), so = out.storage(), bc]() {
      T* ga = grad_of<T>(sa);
      if (!ga) return;
      const T* g = so->grad.data();
      for_each_broadcast(bc, [&](std::int64_t o, std::int64_t, std::int64_t ib) { ga[o] += g[ib]; });
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_axes(const Tensor<T>& a, const std::vector<int>& axes, bool keepdims) {
  std::int64_t count = 1;
  for (int ax : axes) count *= a.dim(ax);
  return mul_scalar(sum_axes(a, axes, keepdims), T(1) / static_cast<T>(count));
}

template <typename T>
Tensor<T> sum_per_example(const Tensor<T>& a) {
  if (a.rank() < 1) throw ShapeError("sum_per_example: needs a batch axis");
  const std::int64_t b = a.dim(0);
  const std::int64_t rest = b == 0 ? 0 : a.numel() / b;
  return sum_axes(reshape(a, Shape{b, rest}), {1}, false);
}

template <typename T>
Tensor<T> max_last(const Tensor<T>& a, bool keepdims) {
  if (a.rank() < 1) throw ShapeError("max_last: needs at least one axis");
  const std::int64_t n = a.dim(-1);
  if (n == 0) throw ShapeError("max_last: empty axis");
  const std::int64_t rows = a.numel() / n;
  Shape shape = a.shape();
  if (keepdims) {
    shape.back() = 1;
  } else {
    shape.pop_back();
  }
  Tensor<T> out(shape);
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(rows));
  {
    const T* pa = a.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < n; ++j) {
        if (pa[r * n + j] > pa[r * n + best]) best = j;
      }
      argmax[static_cast<std::size_t>(r)] = best;
      po[r] = pa[r * n + best];
    }
  }
  if (should_record<T>({&a})) {
    record("max_last", out, [sa = a.storage(), so = out.storage(), argmax, n]() {
      T* ga = grad_of<T>(sa);
      if (!ga) return;
      for (std::size_t r = 0; r < argmax.size(); ++r) {
        ga[static_cast<std::int64_t>(r) * n + argmax[r]] += so->grad[r];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const int ra = a.rank();
  const int rb = b.rank();
  if (ra < 2 || ra > 3 || rb < 2 || rb > 3) {
    throw ShapeError("matmul: operands must be rank 2 or 3, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  const std::int64_t ba = ra == 3 ? a.dim(0) : 1;
  const std::int64_t bb = rb == 3 ? b.dim(0) : 1;
  if (k != k2 || (ra == 3 && rb == 3 && ba != bb)) {
    throw ShapeError("matmul: extent mismatch between " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::int64_t batch = std::max(ba, bb);
  const bool batched = ra == 3 || rb == 3;
  Tensor<T> out(batched ? Shape{batch, m, n} : Shape{m, n});
  const std::int64_t sa = ra == 3 ? m * k : 0;
  const std::int64_t sb = rb == 3 ? k * n : 0;
  {
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < batch; ++i) {
      detail::gemm_nn(m, n, k, pa + i * sa, pb + i * sb, po + i * m * n);
    }
  }
  if (should_record<T>({&a, &b})) {
    record("matmul", out,
           [sta = a.storage(), stb = b.storage(), so = out.storage(), batch, m, n, k, sa, sb]() {
             T* ga = grad_of<T>(sta);
             T* gb = grad_of<T>(stb);
             const T* g = so->grad.data();
             for (std::int64_t i = 0; i < batch; ++i) {
               const T* gi = g + i * m * n;
               // dA = G B^T, dB = A^T G
               if (ga) detail::gemm_nt(m, k, n, gi, stb->data.data() + i * sb, ga + i * sa);
               if (gb) detail::gemm_tn(k, n, m, sta->data.data() + i * sa, gi, gb + i * sb);
             }
           });
  }
  return out;
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  const int r = a.rank();
  if (r == 2) return permute(a, {1, 0});
  if (r == 3) return permute(a, {0, 2, 1});
  if (r == 4) return permute(a, {0, 1, 3, 2});
  throw ShapeError("transpose_last2: rank must be 2..4, got " + shape_str(a.shape()));
}

namespace {

struct ConvGeom {
  std::int64_t batch, cin, h, w, cout, kh, kw, pad, ho, wo;
  std::int64_t kdim() const { return cin * kh * kw; }
  std::int64_t npix() const { return ho * wo; }
};

template <typename T>
void im2col(const ConvGeom& g, const T* x, T* col) {
  const std::int64_t n = g.npix();
  const std::int64_t bn = g.batch * n;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const std::int64_t row = (c * g.kh + ky) * g.kw + kx;
        T* dst_row = col + row * bn;
        for (std::int64_t b = 0; b < g.batch; ++b) {
          const T* src = x + (b * g.cin + c) * g.h * g.w;
          T* dst = dst_row + b * n;
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            const std::int64_t iy = oy + ky - g.pad;
            T* d = dst + oy * g.wo;
            if (iy < 0 || iy >= g.h) {
              std::fill(d, d + g.wo, T(0));
              continue;
            }
            for (std::int64_t ox = 0; ox < g.wo; ++ox) {
              const std::int64_t ix = ox + kx - g.pad;
              d[ox] = (ix >= 0 && ix < g.w) ? src[iy * g.w + ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeom& g, const T* col, T* dx) {
  const std::int64_t n = g.npix();
  const std::int64_t bn = g.batch * n;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const std::int64_t row = (c * g.kh + ky) * g.kw + kx;
        const T* src_row = col + row * bn;
        for (std::int64_t b = 0; b < g.batch; ++b) {
          T* dst = dx + (b * g.cin + c) * g.h * g.w;
          const T* s = src_row + b * n;
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            const std::int64_t iy = oy + ky - g.pad;
            if (iy < 0 || iy >= g.h) continue;
            for (std::int64_t ox = 0; ox < g.wo; ++ox) {
              const std::int64_t ix = ox + kx - g.pad;
              if (ix >= 0 && ix < g.w) dst[iy * g.w + ix] += s[oy * g.wo + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int padding) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw ShapeError("conv2d: expected rank-4 input and kernel, got " + shape_str(input.shape()) +
                     " and " + shape_str(kernel.shape()));
  }
  ConvGeom g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0),
             kernel.dim(2), kernel.dim(3), padding, 0, 0};
  if (kernel.dim(1) != g.cin) {
    throw ShapeError("conv2d: input channels " + std::to_string(g.cin) + " vs kernel " +
                     shape_str(kernel.shape()));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
  if (padding < 0) throw ShapeError("conv2d: negative padding");
  g.ho = g.h + 2 * g.pad - g.kh + 1;
  g.wo = g.w + 2 * g.pad - g.kw + 1;
  if (g.ho <= 0 || g.wo <= 0) {
    throw ShapeError("conv2d: non-positive output extent for input " + shape_str(input.shape()) +
                     " and kernel " + shape_str(kernel.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != g.cout) throw ShapeError("conv2d: bias size mismatch");

  const std::int64_t n = g.npix();
  const std::int64_t bn = g.batch * n;
  const std::int64_t kd = g.kdim();
  std::vector<T> col(static_cast<std::size_t>(kd * bn));
  im2col(g, input.data().data(), col.data());
  std::vector<T> outmat(static_cast<std::size_t>(g.cout * bn), T(0));
  detail::gemm_nn(g.cout, bn, kd, kernel.data().data(), col.data(), outmat.data());

  Tensor<T> out(Shape{g.batch, g.cout, g.ho, g.wo});
  {
    T* po = out.mutable_data().data();
    const T* pbias = has_bias ? bias.data().data() : nullptr;
    for (std::int64_t b = 0; b < g.batch; ++b) {
      for (std::int64_t co = 0; co < g.cout; ++co) {
        const T* src = outmat.data() + co * bn + b * n;
        T* dst = po + (b * g.cout + co) * n;
        const T add = pbias ? pbias[co] : T(0);
        for (std::int64_t i = 0; i < n; ++i) dst[i] = src[i] + add;
      }
    }
  }
  const bool rec = has_bias ? should_record<T>({&input, &kernel, &bias})
                            : should_record<T>({&input, &kernel});
  if (rec) {
    record("conv2d", out,
           [sx = input.storage(), sk = kernel.storage(),
            sbias = has_bias ? bias.storage() : StoragePtr<T>{}, so = out.storage(), g]() {
             const std::int64_t n = g.npix();
             const std::int64_t bn = g.batch * n;
             const std::int64_t kd = g.kdim();
             std::vector<T> gmat(static_cast<std::size_t>(g.cout * bn));
             const T* gout = so->grad.data();
             for (std::int64_t b = 0; b < g.batch; ++b) {
               for (std::int64_t co = 0; co < g.cout; ++co) {
                 std::copy_n(gout + (b * g.cout + co) * n, n, gmat.data() + co * bn + b * n);
               }
             }
             if (sbias) {
               if (T* gb = grad_of<T>(sbias)) {
                 for (std::int64_t co = 0; co < g.cout; ++co) {
                   T acc = T(0);
                   for (std::int64_t i = 0; i < bn; ++i) acc += gmat[static_cast<std::size_t>(co * bn + i)];
                   gb[co] += acc;
                 }
               }
             }
             if (T* gk = grad_of<T>(sk)) {
               std::vector<T> col(static_cast<std::size_t>(kd * bn));
               im2col(g, sx->data.data(), col.data());
               detail::gemm_nt(g.cout, kd, bn, gmat.data(), col.data(), gk);
             }
             if (T* gx = grad_of<T>(sx)) {
               std::vector<T> dcol(static_cast<std::size_t>(kd * bn), T(0));
               detail::gemm_tn(kd, bn, g.cout, sk->data.data(), gmat.data(), dcol.data());
               col2im_add(g, dcol.data(), gx);
             }
           });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_last(const Tensor<T>& a) {
  if (a.rank() < 1) throw ShapeError("softmax_last: needs at least one axis");
  const std::int64_t n = a.dim(-1);
  const std::int64_t rows = n == 0 ? 0 : a.numel() / n;
  Tensor<T> out(a.shape());
  {
    const T* pa = a.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* x = pa + r * n;
      T* y = po + r * n;
      const T mx = *std::max_element(x, x + n);
      T total = T(0);
      for (std::int64_t j = 0; j < n; ++j) {
        y[j] = std::exp(x[j] - mx);
        total += y[j];
      }
      for (std::int64_t j = 0; j < n; ++j) y[j] /= total;
    }
  }
  if (should_record<T>({&a})) {
    record("softmax_last", out, [sa = a.storage(), so = out.storage(), n, rows]() {
      T* ga = grad_of<T>(sa);
      if (!ga) return;
      const T* g = so->grad.data();
      const T* y = so->data.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        T dot = T(0);
        for (std::int64_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
        for (std::int64_t j = 0; j < n; ++j) ga[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(shape, std::vector<T>(a.data().begin(), a.data().end()));
  if (should_record<T>({&a})) {
    record("reshape", out, [sa = a.storage(), so = out.storage()]() {
      T* ga = grad_of<T>(sa);
      if (!ga) return;
      for (std::size_t i = 0; i < so->grad.size(); ++i) ga[i] += so->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int r = parts[0].rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
  Shape shape = parts[0].shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != axis && p.dim(i) != shape[static_cast<std::size_t>(i)]) {
        throw ShapeError("concat: incompatible shapes " + shape_str(parts[0].shape()) + " and " +
                         shape_str(p.shape()));
      }
    }
    total += p.dim(axis);
  }
  shape[static_cast<std::size_t>(axis)] = total;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= shape[static_cast<std::size_t>(i)];

  Tensor<T> out(shape);
  T* po = out.mutable_data().data();
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::int64_t chunk = p.dim(axis) * inner;
    const T* src = p.data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * chunk, chunk, po + o * total * inner + off * inner);
    }
    off += p.dim(axis);
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any && active_tape<T>()) {
    std::vector<StoragePtr<T>> stores;
    std::vector<std::int64_t> extents;
    for (const auto& p : parts) {
      stores.push_back(p.storage());
      extents.push_back(p.dim(axis));
    }
    record("concat", out, [stores, extents, offsets, so = out.storage(), outer, inner, total]() {
      const T* g = so->grad.data();
      for (std::size_t i = 0; i < stores.size(); ++i) {
        T* gp = grad_of<T>(stores[i]);
        if (!gp) continue;
        const std::int64_t chunk = extents[i] * inner;
        for (std::int64_t o = 0; o < outer; ++o) {
          const T* src = g + o * total * inner + offsets[i] * inner;
          T* dst = gp + o * chunk;
          for (std::int64_t j = 0; j < chunk; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, std::int64_t start, std::int64_t length) {
  const int r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("slice: axis out of range");
  const std::int64_t extent = a.dim(axis);
  if (start < 0 || length < 0 || start + length > extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") exceeds extent " +
                     std::to_string(extent) + " of " + shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape[static_cast<std::size_t>(axis)] = length;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= shape[static_cast<std::size_t>(i)];
  Tensor<T> out(shape);
  const T* pa = a.data().data();
  T* po = out.mutable_data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(pa + (o * extent + start) * inner, length * inner, po + o * length * inner);
  }
  if (should_record<T>({&a})) {
    record("slice", out, [sa = a.storage(), so = out.storage(), outer, inner, extent, start, length]() {
      T* ga = grad_of<T>(sa);
      if (!ga) return;
      const T* g = so->grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        T* dst = ga + (o * extent + start) * inner;
        const T* src = g + o * length * inner;
        for (std::int64_t j = 0; j < length * inner; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& order) {
  const int r = a.rank();
  require_rank_le4(a.shape(), "permute");
  if (static_cast<int>(order.size()) != r) throw ShapeError("permute: order length != rank");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int o : order) {
    if (o < 0 || o >= r || seen[static_cast<std::size_t>(o)]) throw ShapeError("permute: invalid order");
    seen[static_cast<std::size_t>(o)] = true;
  }
  Shape shape;
  for (int o : order) shape.push_back(a.dim(o));
  // Input strides, then reordered to follow the output axes.
  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r));
  std::int64_t acc = 1;
  for (int i = r - 1; i >= 0; --i) {
    in_strides[static_cast<std::size_t>(i)] = acc;
    acc *= a.dim(i);
  }
  std::array<std::int64_t, 4> ext{1, 1, 1, 1};
  std::array<std::int64_t, 4> st{0, 0, 0, 0};
  for (int i = 0; i < r; ++i) {
    ext[static_cast<std::size_t>(4 - r + i)] = shape[static_cast<std::size_t>(i)];
    st[static_cast<std::size_t>(4 - r + i)] = in_strides[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
  }
  std::vector<std::int64_t> src_index(static_cast<std::size_t>(a.numel()));
  {
    std::int64_t o = 0;
    for (std::int64_t i0 = 0; i0 < ext[0]; ++i0)
      for (std::int64_t i1 = 0; i1 < ext[1]; ++i1)
        for (std::int64_t i2 = 0; i2 < ext[2]; ++i2)
          for (std::int64_t i3 = 0; i3 < ext[3]; ++i3)
            src_index[static_cast<std::size_t>(o++)] = i0 * st[0] + i1 * st[1] + i2 * st[2] + i3 * st[3];
  }
  Tensor<T> out(shape);
  const T* pa = a.data().data();
  T* po = out.mutable_data().data();
  for (std::size_t i = 0; i < src_index.size(); ++i) po[i] = pa[src_index[i]];
  if (should_record<T>({&a})) {
    record("permute", out, [sa = a.storage(), so = out.storage(), src_index]() {
      T* ga = grad_of<T>(sa);
      if (!ga) return;
      for (std::size_t i = 0; i < src_index.size(); ++i) ga[src_index[i]] += so->grad[i];
    });
  }
  return out;
}

namespace {

// Index map from each output element of space_to_channel to its source.
std::vector<std::int64_t> squeeze_index(std::int64_t b, std::int64_t c, std::int64_t h,
                                        std::int64_t w) {
  const std::int64_t h2 = h / 2, w2 = w / 2;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(b * c * h * w));
  std::size_t o = 0;
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t dy = 0; dy < 2; ++dy)
        for (std::int64_t dx = 0; dx < 2; ++dx)
          for (std::int64_t i = 0; i < h2; ++i)
            for (std::int64_t j = 0; j < w2; ++j)
              idx[o++] = ((n * c + ch) * h + 2 * i + dy) * w + 2 * j + dx;
  return idx;
}

template <typename T>
Tensor<T> gather(const char* op, const Tensor<T>& a, const Shape& shape,
                 std::vector<std::int64_t> src, bool inverse) {
  Tensor<T> out(shape);
  const T* pa = a.data().data();
  T* po = out.mutable_data().data();
  // inverse: out[src[i]] = a[i]; otherwise out[i] = a[src[i]].
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (inverse) {
      po[src[i]] = pa[i];
    } else {
      po[i] = pa[src[i]];
    }
  }
  if (should_record<T>({&a})) {
    record(op, out, [sa = a.storage(), so = out.storage(), src = std::move(src), inverse]() {
      T* ga = grad_of<T>(sa);
      if (!ga) return;
      const T* g = so->grad.data();
      for (std::size_t i = 0; i < src.size(); ++i) {
        if (inverse) {
          ga[i] += g[src[i]];
        } else {
          ga[src[i]] += g[i];
        }
      }
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> space_to_channel(const Tensor<T>& a) {
  if (a.rank() != 4) throw ShapeError("space_to_channel: expected rank 4, got " + shape_str(a.shape()));
  const auto b = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("space_to_channel: spatial extents of " + shape_str(a.shape()) +
                     " are not divisible by 2");
  }
  return gather<T>("space_to_channel", a, Shape{b, 4 * c, h / 2, w / 2}, squeeze_index(b, c, h, w),
                   false);
}

template <typename T>
Tensor<T> channel_to_space(const Tensor<T>& a) {
  if (a.rank() != 4) throw ShapeError("channel_to_space: expected rank 4, got " + shape_str(a.shape()));
  const auto b = a.dim(0), c4 = a.dim(1), h2 = a.dim(2), w2 = a.dim(3);
  if (c4 % 4 != 0) {
    throw ShapeError("channel_to_space: channel count of " + shape_str(a.shape()) +
                     " is not divisible by 4");
  }
  const auto c = c4 / 4;
  return gather<T>("channel_to_space", a, Shape{b, c, 2 * h2, 2 * w2},
                   squeeze_index(b, c, 2 * h2, 2 * w2), true);
}

template <typename T>
Tensor<T> eye(std::int64_t n) {
  Tensor<T> out(Shape{n, n});
  auto d = out.mutable_data();
  for (std::int64_t i = 0; i < n; ++i) d[static_cast<std::size_t>(i * n + i)] = T(1);
  return out;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
  for (T v : a.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  T m = T(0);
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

#define DENSEFLOW_OPS_INSTANTIATE(T)                                                          \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                      \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                      \
  template Tensor<T> neg<T>(const Tensor<T>&);                                                \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                \
  template Tensor<T> log<T>(const Tensor<T>&);                                                \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                            \
  template Tensor<T> log_sigmoid<T>(const Tensor<T>&);                                        \
  template Tensor<T> softplus<T>(const Tensor<T>&);                                           \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                               \
  template Tensor<T> relu<T>(const Tensor<T>&);                                               \
  template Tensor<T> abs<T>(const Tensor<T>&);                                                \
  template Tensor<T> square<T>(const Tensor<T>&);                                             \
  template Tensor<T> sqrt<T>(const Tensor<T>&);                                               \
  template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                        \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                \
  template Tensor<T> sum_axes<T>(const Tensor<T>&, const std::vector<int>&, bool);            \
  template Tensor<T> mean_axes<T>(const Tensor<T>&, const std::vector<int>&, bool);           \
  template Tensor<T> sum_per_example<T>(const Tensor<T>&);                                    \
  template Tensor<T> max_last<T>(const Tensor<T>&, bool);                                     \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> transpose_last2<T>(const Tensor<T>&);                                    \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);    \
  template Tensor<T> softmax_last<T>(const Tensor<T>&);                                       \
  template Tensor<T> reshape<T>(const Tensor<T>&, const Shape&);                              \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                           \
  template Tensor<T> slice<T>(const Tensor<T>&, int, std::int64_t, std::int64_t);             \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<int>&);                   \
  template Tensor<T> space_to_channel<T>(const Tensor<T>&);                                   \
  template Tensor<T> channel_to_space<T>(const Tensor<T>&);                                   \
  template Tensor<T> eye<T>(std::int64_t);                                                    \
  template bool all_finite<T>(const Tensor<T>&);                                              \
  template T max_abs_diff<T>(const Tensor<T>&, const Tensor<T>&);

DENSEFLOW_OPS_INSTANTIATE(float)
DENSEFLOW_OPS_INSTANTIATE(double)

}  // namespace denseflow::ops
