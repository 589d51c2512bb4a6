#include "hfan/ops.hpp"

#include <algorithm>
#include <cmath>

#include "hfan/kernels.hpp"

namespace hfan::ops {
namespace {

namespace kp = kernels::parallel;

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_rank(const char* op, const Shape& shape, std::size_t rank) {
  if (shape.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(shape));
  }
}

// Maps each element of `a_shape` to the element of the broadcast operand.
std::vector<std::size_t> broadcast_index(const char* op, const Shape& a_shape, const Shape& b_shape) {
  if (a_shape.size() != b_shape.size()) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b_shape) + " to " +
                         shape_str(a_shape));
  }
  const std::size_t r = a_shape.size();
  std::vector<std::size_t> bstride(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = r; i-- > 0;) {
    if (b_shape[i] == a_shape[i]) {
      bstride[i] = stride;
    } else if (b_shape[i] != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b_shape) + " to " +
                           shape_str(a_shape));
    }
    stride *= b_shape[i];
  }
  const std::size_t n = shape_numel(a_shape);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t bi = 0;
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = bi;
    for (std::size_t ax = r; ax-- > 0;) {
      ++counter[ax];
      bi += bstride[ax];
      if (counter[ax] < a_shape[ax]) break;
      bi -= bstride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return idx;
}

enum class Arith { Add, Sub, Mul };

template <typename T>
Var<T> arith(const char* op, Arith kind, const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = a.tape();
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const bool same = av.shape() == bv.shape();
  std::vector<std::size_t> bidx;
  if (!same) bidx = broadcast_index(op, av.shape(), bv.shape());
  Tensor<T> out(av.shape());
  const std::size_t n = av.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const T x = av[i];
    const T y = bv[same ? i : bidx[i]];
    out[i] = kind == Arith::Add ? x + y : kind == Arith::Sub ? x - y : x * y;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(op, std::move(out), {ia, ib},
                     [ia, ib, kind, same, bidx = std::move(bidx)](Tape<T>& t, const Tensor<T>& g) {
                       const std::size_t n = g.numel();
                       if (t.requires_grad(ia)) {
                         if (kind == Arith::Mul) {
                           const Tensor<T>& bv = t.value(ib);
                           Tensor<T>& ga = t.grad(ia);
                           for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[same ? i : bidx[i]];
                         } else {
                           t.accumulate(ia, g);
                         }
                       }
                       if (t.requires_grad(ib)) {
                         Tensor<T>& gb = t.grad(ib);
                         const Tensor<T>& av = t.value(ia);
                         for (std::size_t i = 0; i < n; ++i) {
                           const std::size_t j = same ? i : bidx[i];
                           if (kind == Arith::Add) gb[j] += g[i];
                           else if (kind == Arith::Sub) gb[j] -= g[i];
                           else gb[j] += g[i] * av[i];
                         }
                       }
                     });
}

struct ResizeTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

// Half-pixel source coordinates, clamped at the low edge.
ResizeTaps resize_taps(std::size_t in, std::size_t out) {
  ResizeTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = scale * (static_cast<double>(o) + 0.5) - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    t.lo[o] = i0;
    t.hi[o] = i0 + (i0 < in - 1 ? 1 : 0);
    t.frac[o] = src - static_cast<double>(i0);
  }
  return t;
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  kp::gemm(av.raw(), bv.raw(), out.raw(), m, k, n, false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) {
      std::vector<T> bt(k * n);
      kp::transpose(t.value(ib).raw(), bt.data(), k, n);
      kp::gemm(g.raw(), bt.data(), t.grad(ia).raw(), m, n, k, true);
    }
    if (t.requires_grad(ib)) {
      std::vector<T> at(m * k);
      kp::transpose(t.value(ia).raw(), at.data(), m, k);
      kp::gemm(at.data(), g.raw(), t.grad(ib).raw(), k, m, n, true);
    }
  });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  }
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  Tensor<T> out({batch, m, n});
  for (std::size_t s = 0; s < batch; ++s)
    kp::gemm(av.raw() + s * m * k, bv.raw() + s * k * n, out.raw() + s * m * n, m, k, n, false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("bmm", std::move(out), {ia, ib}, [ia, ib, batch, m, k, n](Tape<T>& t, const Tensor<T>& g) {
    std::vector<T> tmp(std::max(k * n, m * k));
    for (std::size_t s = 0; s < batch; ++s) {
      const T* gs = g.raw() + s * m * n;
      if (t.requires_grad(ia)) {
        kp::transpose(t.value(ib).raw() + s * k * n, tmp.data(), k, n);
        kp::gemm(gs, tmp.data(), t.grad(ia).raw() + s * m * k, m, n, k, true);
      }
      if (t.requires_grad(ib)) {
        kp::transpose(t.value(ia).raw() + s * m * k, tmp.data(), m, k);
        kp::gemm(tmp.data(), gs, t.grad(ib).raw() + s * k * n, k, m, n, true);
      }
    }
  });
}

template <typename T>
Var<T> transpose_last2(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  require_rank("transpose_last2", xv.shape(), 3);
  const std::size_t batch = xv.dim(0), r = xv.dim(1), c = xv.dim(2);
  Tensor<T> out({batch, c, r});
  for (std::size_t s = 0; s < batch; ++s) kp::transpose(xv.raw() + s * r * c, out.raw() + s * r * c, r, c);
  const std::size_t ix = x.id();
  return x.tape().record("transpose", std::move(out), {ix}, [ix, batch, r, c](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad(ix);
    for (std::size_t s = 0; s < batch; ++s) {
      const T* gs = g.raw() + s * r * c;
      T* dst = gx.raw() + s * r * c;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += gs[j * r + i];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  const Shape in_shape = x.value().shape();
  return x.tape().record("reshape", std::move(out), {ix}, [ix, in_shape](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(ix, g.reshaped(in_shape));
  });
}

template <typename T>
Var<T> conv1x1(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const Tensor<T>& bv = bias.value();
  require_rank("conv1x1", xv.shape(), 4);
  if (wv.rank() != 2 || wv.dim(1) != xv.dim(1) || bv.numel() != wv.dim(0)) {
    throw DimensionError("conv1x1: input " + shape_str(xv.shape()) + " does not match weight " +
                         shape_str(wv.shape()) + " / bias " + shape_str(bv.shape()));
  }
  const std::size_t batch = xv.dim(0), cin = xv.dim(1), cout = wv.dim(0), pixels = xv.dim(2) * xv.dim(3);
  Tensor<T> out({batch, cout, xv.dim(2), xv.dim(3)});
  kp::conv1x1(xv.raw(), wv.raw(), bv.raw(), out.raw(), batch, cin, cout, pixels);
  const std::size_t ix = x.id(), iw = w.id(), ib = bias.id();
  return x.tape().record(
      "conv1x1", std::move(out), {ix, iw, ib}, [=](Tape<T>& t, const Tensor<T>& g) {
        if (t.requires_grad(ix)) {
          std::vector<T> wt(cin * cout);
          kp::transpose(t.value(iw).raw(), wt.data(), cout, cin);
          T* gx = t.grad(ix).raw();
          for (std::size_t n = 0; n < batch; ++n)
            kp::gemm(wt.data(), g.raw() + n * cout * pixels, gx + n * cin * pixels, cin, cout, pixels, true);
        }
        if (t.requires_grad(iw)) {
          std::vector<T> xt(cin * pixels);
          const T* xs = t.value(ix).raw();
          T* gw = t.grad(iw).raw();
          for (std::size_t n = 0; n < batch; ++n) {
            kp::transpose(xs + n * cin * pixels, xt.data(), cin, pixels);
            kp::gemm(g.raw() + n * cout * pixels, xt.data(), gw, cout, pixels, cin, true);
          }
        }
        if (t.requires_grad(ib)) {
          T* gb = t.grad(ib).raw();
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t o = 0; o < cout; ++o) {
              const T* row = g.raw() + (n * cout + o) * pixels;
              T s = T(0);
              for (std::size_t p = 0; p < pixels; ++p) s += row[p];
              gb[o] += s;
            }
        }
      });
}

template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state,
                 Mode mode, double eps, double momentum) {
  const Tensor<T>& xv = x.value();
  require_rank("batchnorm", xv.shape(), 4);
  const std::size_t batch = xv.dim(0), ch = xv.dim(1), pixels = xv.dim(2) * xv.dim(3);
  if (gamma.value().numel() != ch || beta.value().numel() != ch) {
    throw DimensionError("batchnorm: " + std::to_string(ch) + " channels but gamma " +
                         shape_str(gamma.value().shape()) + ", beta " + shape_str(beta.value().shape()));
  }
  if (!(eps > 0)) throw ContractError("batchnorm: eps must be positive");
  if (state.running_mean.numel() != ch) state = BatchNormState<T>(ch);

  std::vector<T> mean(ch), var(ch);
  if (mode == Mode::Train) {
    kp::channel_stats(xv.raw(), mean.data(), var.data(), batch, ch, pixels);
    const std::size_t count = batch * pixels;
    const T m = static_cast<T>(momentum);
    const T unbias = count > 1 ? static_cast<T>(count) / static_cast<T>(count - 1) : T(1);
    for (std::size_t c = 0; c < ch; ++c) {
      state.running_mean[c] = (T(1) - m) * state.running_mean[c] + m * mean[c];
      state.running_var[c] = (T(1) - m) * state.running_var[c] + m * var[c] * unbias;
    }
    ++state.batches;
  } else {
    if (!state.initialized()) {
      throw StateError("batchnorm: eval mode requested before running statistics were populated");
    }
    for (std::size_t c = 0; c < ch; ++c) {
      mean[c] = state.running_mean[c];
      var[c] = state.running_var[c];
    }
  }

  std::vector<T> invstd(ch);
  for (std::size_t c = 0; c < ch; ++c) invstd[c] = T(1) / std::sqrt(var[c] + static_cast<T>(eps));

  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& btv = beta.value();
  Tensor<T> xhat(xv.shape());
  Tensor<T> out(xv.shape());
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t off = (n * ch + c) * pixels;
      for (std::size_t p = 0; p < pixels; ++p) {
        const T h = (xv[off + p] - mean[c]) * invstd[c];
        xhat[off + p] = h;
        out[off + p] = gv[c] * h + btv[c];
      }
    }

  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool train = mode == Mode::Train;
  return x.tape().record(
      train ? "batchnorm(train)" : "batchnorm(eval)", std::move(out), {ix, ig, ib},
      [=, xhat = std::move(xhat), invstd = std::move(invstd)](Tape<T>& t, const Tensor<T>& g) {
        std::vector<T> sum_g(ch, T(0)), sum_gh(ch, T(0));
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t off = (n * ch + c) * pixels;
            for (std::size_t p = 0; p < pixels; ++p) {
              sum_g[c] += g[off + p];
              sum_gh[c] += g[off + p] * xhat[off + p];
            }
          }
        if (t.requires_grad(ig)) {
          Tensor<T>& gg = t.grad(ig);
          for (std::size_t c = 0; c < ch; ++c) gg[c] += sum_gh[c];
        }
        if (t.requires_grad(ib)) {
          Tensor<T>& gb = t.grad(ib);
          for (std::size_t c = 0; c < ch; ++c) gb[c] += sum_g[c];
        }
        if (!t.requires_grad(ix)) return;
        const Tensor<T>& gv = t.value(ig);
        Tensor<T>& gx = t.grad(ix);
        const T count = static_cast<T>(batch * pixels);
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t off = (n * ch + c) * pixels;
            const T k = gv[c] * invstd[c];
            if (train) {
              const T mg = sum_g[c] / count, mgh = sum_gh[c] / count;
              for (std::size_t p = 0; p < pixels; ++p)
                gx[off + p] += k * (g[off + p] - mg - xhat[off + p] * mgh);
            } else {
              for (std::size_t p = 0; p < pixels; ++p) gx[off + p] += k * g[off + p];
            }
          }
      });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return arith("add", Arith::Add, a, b);
}
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return arith("sub", Arith::Sub, a, b);
}
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return arith("mul", Arith::Mul, a, b);
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> out = x.value();
  for (T& v : out.storage()) v *= s;
  const std::size_t ix = x.id();
  return x.tape().record("scale", std::move(out), {ix}, [ix, s](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * s;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T s) {
  Tensor<T> out = x.value();
  for (T& v : out.storage()) v += s;
  const std::size_t ix = x.id();
  return x.tape().record("add_scalar", std::move(out), {ix},
                         [ix](Tape<T>& t, const Tensor<T>& g) { t.accumulate(ix, g); });
}

template <typename T>
Tensor<T> softmax_value(const Tensor<T>& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor<T> out(x.shape());
  const bool big = x.numel() >= kernels::kParallelGrain;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t oo = 0; oo < static_cast<std::ptrdiff_t>(s.outer); ++oo) {
    const auto o = static_cast<std::size_t>(oo);
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      T mx = x[base];
      for (std::size_t k = 1; k < s.len; ++k) mx = std::max(mx, x[base + k * s.inner]);
      T z = T(0);
      for (std::size_t k = 0; k < s.len; ++k) {
        const T e = std::exp(x[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) out[base + k * s.inner] /= z;
    }
  }
  return out;
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  Tensor<T> out = softmax_value(x.value(), axis);
  const AxisSplit s = split_at(x.value().shape(), axis);
  Tensor<T> saved = out;
  const std::size_t ix = x.id();
  return x.tape().record("softmax", std::move(out), {ix}, [ix, s, y = std::move(saved)](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad(ix);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        T dot = T(0);
        for (std::size_t k = 0; k < s.len; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
        for (std::size_t k = 0; k < s.len; ++k) {
          const std::size_t j = base + k * s.inner;
          gx[j] += y[j] * (g[j] - dot);
        }
      }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (T& v : out.storage()) v = v > T(0) ? v : T(0);
  const std::size_t ix = x.id();
  return x.tape().record("relu", std::move(out), {ix}, [ix](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(ix);
    Tensor<T>& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (xv[i] > T(0)) gx[i] += g[i];
  });
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (T& v : out.storage()) v = sigmoid_scalar(v);
  Tensor<T> saved = out;
  const std::size_t ix = x.id();
  return x.tape().record("sigmoid", std::move(out), {ix}, [ix, y = std::move(saved)](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  require_rank("global_avg_pool", xv.shape(), 4);
  const std::size_t planes = xv.dim(0) * xv.dim(1), pixels = xv.dim(2) * xv.dim(3);
  Tensor<T> out({xv.dim(0), xv.dim(1), 1, 1});
  for (std::size_t q = 0; q < planes; ++q) {
    T s = T(0);
    for (std::size_t p = 0; p < pixels; ++p) s += xv[q * pixels + p];
    out[q] = s / static_cast<T>(pixels);
  }
  const std::size_t ix = x.id();
  return x.tape().record("global_avg_pool", std::move(out), {ix}, [ix, planes, pixels](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad(ix);
    for (std::size_t q = 0; q < planes; ++q) {
      const T v = g[q] / static_cast<T>(pixels);
      for (std::size_t p = 0; p < pixels; ++p) gx[q * pixels + p] += v;
    }
  });
}

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  require_rank("avg_pool2", xv.shape(), 4);
  const std::size_t h = xv.dim(2), w = xv.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw DimensionError("avg_pool2: odd spatial extent in " + shape_str(xv.shape()));
  const std::size_t planes = xv.dim(0) * xv.dim(1), oh = h / 2, ow = w / 2;
  Tensor<T> out({xv.dim(0), xv.dim(1), oh, ow});
  for (std::size_t q = 0; q < planes; ++q) {
    const T* src = xv.raw() + q * h * w;
    T* dst = out.raw() + q * oh * ow;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const T* p = src + 2 * i * w + 2 * j;
        dst[i * ow + j] = (p[0] + p[1] + p[w] + p[w + 1]) * T(0.25);
      }
  }
  const std::size_t ix = x.id();
  return x.tape().record("avg_pool2", std::move(out), {ix}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad(ix);
    for (std::size_t q = 0; q < planes; ++q) {
      T* dst = gx.raw() + q * h * w;
      const T* src = g.raw() + q * oh * ow;
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const T v = src[i * ow + j] * T(0.25);
          T* p = dst + 2 * i * w + 2 * j;
          p[0] += v;
          p[1] += v;
          p[w] += v;
          p[w + 1] += v;
        }
    }
  });
}

template <typename T>
Tensor<T> bilinear_resize_value(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require_rank("bilinear_resize", x.shape(), 4);
  if (out_h == 0 || out_w == 0) throw ContractError("bilinear_resize: output extent must be >= 1");
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (out_h == h && out_w == w) return x;
  const ResizeTaps ty = resize_taps(h, out_h), tx = resize_taps(w, out_w);
  const std::size_t planes = x.dim(0) * x.dim(1);
  Tensor<T> out({x.dim(0), x.dim(1), out_h, out_w});
  const bool big = planes * out_h * out_w >= kernels::kParallelGrain;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t qq = 0; qq < static_cast<std::ptrdiff_t>(planes); ++qq) {
    const auto q = static_cast<std::size_t>(qq);
    const T* src = x.raw() + q * h * w;
    T* dst = out.raw() + q * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const T ly = static_cast<T>(ty.frac[i]), hy = T(1) - ly;
      const T* r0 = src + ty.lo[i] * w;
      const T* r1 = src + ty.hi[i] * w;
      for (std::size_t j = 0; j < out_w; ++j) {
        const T lx = static_cast<T>(tx.frac[j]), hx = T(1) - lx;
        const std::size_t x0 = tx.lo[j], x1 = tx.hi[j];
        dst[i * out_w + j] = hy * (hx * r0[x0] + lx * r0[x1]) + ly * (hx * r1[x0] + lx * r1[x1]);
      }
    }
  }
  return out;
}

template <typename T>
Var<T> bilinear_resize(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
  Tensor<T> out = bilinear_resize_value(x.value(), out_h, out_w);
  const std::size_t h = x.value().dim(2), w = x.value().dim(3);
  const std::size_t planes = x.value().dim(0) * x.value().dim(1);
  const std::size_t ix = x.id();
  return x.tape().record("bilinear_resize", std::move(out), {ix}, [=](Tape<T>& t, const Tensor<T>& g) {
    if (out_h == h && out_w == w) {
      t.accumulate(ix, g);
      return;
    }
    const ResizeTaps ty = resize_taps(h, out_h), tx = resize_taps(w, out_w);
    Tensor<T>& gx = t.grad(ix);
    const bool big = planes * out_h * out_w >= kernels::kParallelGrain;
#pragma omp parallel for schedule(static) if (big)
    for (std::ptrdiff_t qq = 0; qq < static_cast<std::ptrdiff_t>(planes); ++qq) {
      const auto q = static_cast<std::size_t>(qq);
      T* dst = gx.raw() + q * h * w;
      const T* src = g.raw() + q * out_h * out_w;
      for (std::size_t i = 0; i < out_h; ++i) {
        const T ly = static_cast<T>(ty.frac[i]), hy = T(1) - ly;
        T* r0 = dst + ty.lo[i] * w;
        T* r1 = dst + ty.hi[i] * w;
        for (std::size_t j = 0; j < out_w; ++j) {
          const T lx = static_cast<T>(tx.frac[j]), hx = T(1) - lx;
          const T v = src[i * out_w + j];
          r0[tx.lo[j]] += hy * hx * v;
          r0[tx.hi[j]] += hy * lx * v;
          r1[tx.lo[j]] += ly * hx * v;
          r1[tx.hi[j]] += ly * lx * v;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> nearest_resize_value(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require_rank("nearest_resize", x.shape(), 4);
  if (out_h == 0 || out_w == 0) throw ContractError("nearest_resize: output extent must be >= 1");
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (out_h == h && out_w == w) return x;
  std::vector<std::size_t> ys(out_h), xs(out_w);
  for (std::size_t i = 0; i < out_h; ++i)
    ys[i] = std::min(h - 1, static_cast<std::size_t>((static_cast<double>(i) + 0.5) * h / out_h));
  for (std::size_t j = 0; j < out_w; ++j)
    xs[j] = std::min(w - 1, static_cast<std::size_t>((static_cast<double>(j) + 0.5) * w / out_w));
  const std::size_t planes = x.dim(0) * x.dim(1);
  Tensor<T> out({x.dim(0), x.dim(1), out_h, out_w});
  for (std::size_t q = 0; q < planes; ++q)
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j)
        out[(q * out_h + i) * out_w + j] = x[(q * h + ys[i]) * w + xs[j]];
  return out;
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ContractError("concat: no inputs");
  const Shape& first = xs.front().value().shape();
  Shape out_shape = first;
  out_shape.at(axis) = 0;
  std::vector<std::size_t> lens;
  std::vector<std::size_t> ids;
  for (const Var<T>& v : xs) {
    const Shape& s = v.value().shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first) +
                           " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
    lens.push_back(s[axis]);
    ids.push_back(v.id());
  }
  const AxisSplit so = split_at(out_shape, axis);
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor<T>& v = xs[k].value();
    const std::size_t chunk = lens[k] * so.inner;
    for (std::size_t o = 0; o < so.outer; ++o)
      std::copy_n(v.raw() + o * chunk, chunk, out.raw() + (o * so.len + offset) * so.inner);
    offset += lens[k];
  }
  return xs.front().tape().record("concat", std::move(out), ids, [ids, lens, so](Tape<T>& t, const Tensor<T>& g) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t chunk = lens[k] * so.inner;
      if (t.requires_grad(ids[k])) {
        T* gx = t.grad(ids[k]).raw();
        for (std::size_t o = 0; o < so.outer; ++o) {
          const T* src = g.raw() + (o * so.len + offset) * so.inner;
          for (std::size_t i = 0; i < chunk; ++i) gx[o * chunk + i] += src[i];
        }
      }
      offset += lens[k];
    }
  });
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& in_shape = x.value().shape();
  const AxisSplit s = split_at(in_shape, axis);
  if (begin >= end || end > s.len) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for axis " + std::to_string(axis) + " of " + shape_str(in_shape));
  }
  Shape out_shape = in_shape;
  out_shape[axis] = end - begin;
  Tensor<T> out(out_shape);
  const std::size_t chunk = (end - begin) * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(x.value().raw() + (o * s.len + begin) * s.inner, chunk, out.raw() + o * chunk);
  const std::size_t ix = x.id();
  return x.tape().record("slice", std::move(out), {ix}, [=](Tape<T>& t, const Tensor<T>& g) {
    T* gx = t.grad(ix).raw();
    for (std::size_t o = 0; o < s.outer; ++o) {
      T* dst = gx + (o * s.len + begin) * s.inner;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[o * chunk + i];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = T(0);
  for (T v : x.value().storage()) s += v;
  const std::size_t ix = x.id();
  return x.tape().record("sum", Tensor<T>({1}, s), {ix}, [ix](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad(ix);
    for (T& v : gx.storage()) v += g[0];
  });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const Tensor<T>& labels) {
  const Tensor<T>& q = logits.value();
  require_rank("softmax_cross_entropy", q.shape(), 4);
  const std::size_t batch = q.dim(0), classes = q.dim(1), pixels = q.dim(2) * q.dim(3);
  if (labels.shape() != Shape{batch, 1, q.dim(2), q.dim(3)}) {
    throw DimensionError("softmax_cross_entropy: labels " + shape_str(labels.shape()) +
                         " do not match logits " + shape_str(q.shape()));
  }
  std::vector<std::size_t> cls(batch * pixels);
  for (std::size_t i = 0; i < cls.size(); ++i) {
    const T v = labels[i];
    if (!(v >= T(0)) || v != std::floor(v) || static_cast<std::size_t>(v) >= classes) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(static_cast<double>(v)) +
                      " at position " + std::to_string(i) + " is not a class index");
    }
    cls[i] = static_cast<std::size_t>(v);
  }
  Tensor<T> prob = softmax_value(q, 1);
  T total = T(0);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t p = 0; p < pixels; ++p) {
      const std::size_t base = n * classes * pixels + p;
      T mx = q[base];
      for (std::size_t k = 1; k < classes; ++k) mx = std::max(mx, q[base + k * pixels]);
      T z = T(0);
      for (std::size_t k = 0; k < classes; ++k) z += std::exp(q[base + k * pixels] - mx);
      total += std::log(z) + mx - q[base + cls[n * pixels + p] * pixels];
    }
  const T count = static_cast<T>(batch * pixels);
  const std::size_t il = logits.id();
  return logits.tape().record(
      "softmax_cross_entropy", Tensor<T>({1}, total / count), {il},
      [=, prob = std::move(prob), cls = std::move(cls)](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& gq = t.grad(il);
        const T k = g[0] / count;
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t p = 0; p < pixels; ++p) {
              const std::size_t i = (n * classes + c) * pixels + p;
              const T target = cls[n * pixels + p] == c ? T(1) : T(0);
              gq[i] += k * (prob[i] - target);
            }
      });
}

#define HFAN_INSTANTIATE_OPS(T)                                                                    \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                            \
  template Var<T> bmm(const Var<T>&, const Var<T>&);                                               \
  template Var<T> transpose_last2(const Var<T>&);                                                  \
  template Var<T> reshape(const Var<T>&, Shape);                                                   \
  template Var<T> conv1x1(const Var<T>&, const Var<T>&, const Var<T>&);                            \
  template Var<T> batchnorm(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormState<T>&, Mode, \
                            double, double);                                                       \
  template Var<T> add(const Var<T>&, const Var<T>&);                                               \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                               \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                               \
  template Var<T> scale(const Var<T>&, T);                                                         \
  template Var<T> add_scalar(const Var<T>&, T);                                                    \
  template Var<T> softmax(const Var<T>&, std::size_t);                                             \
  template Var<T> relu(const Var<T>&);                                                             \
  template Var<T> sigmoid(const Var<T>&);                                                          \
  template Var<T> global_avg_pool(const Var<T>&);                                                  \
  template Var<T> avg_pool2(const Var<T>&);                                                        \
  template Var<T> bilinear_resize(const Var<T>&, std::size_t, std::size_t);                        \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                                 \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);                     \
  template Var<T> sum(const Var<T>&);                                                              \
  template Var<T> softmax_cross_entropy(const Var<T>&, const Tensor<T>&);                          \
  template Tensor<T> softmax_value(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> bilinear_resize_value(const Tensor<T>&, std::size_t, std::size_t);            \
  template Tensor<T> nearest_resize_value(const Tensor<T>&, std::size_t, std::size_t);             \
  template T sigmoid_scalar(T);

HFAN_INSTANTIATE_OPS(float)
HFAN_INSTANTIATE_OPS(double)

#undef HFAN_INSTANTIATE_OPS

}  // namespace hfan::ops
