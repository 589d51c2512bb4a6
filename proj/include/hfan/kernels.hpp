#pragma once

// Dense inner loops used by the differentiable ops.
//
// Each kernel exists twice: `parallel` (OpenMP over independent outputs) and
// `reference` (straight serial loops, kept for tests and benchmarks). Both
// variants accumulate every output element in the same sequential order, so
// their results are bit-identical regardless of thread count.

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace hfan::kernels {

// Below this many multiply-adds the OpenMP fork costs more than it saves.
inline constexpr std::size_t kParallelGrain = std::size_t{1} << 15;

namespace reference {

/// c[m x n] (+)= a[m x k] * b[k x n]; accumulation over k in increasing order.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void transpose(const T* src, T* dst, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

/// y[n, o, p] = sum_c w[o, c] * x[n, c, p] + bias[o]
template <typename T>
void conv1x1(const T* x, const T* w, const T* bias, T* y, std::size_t batch, std::size_t cin,
             std::size_t cout, std::size_t pixels) {
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t p = 0; p < pixels; ++p) {
        T acc = T(0);
        for (std::size_t c = 0; c < cin; ++c) acc += w[o * cin + c] * x[(n * cin + c) * pixels + p];
        y[(n * cout + o) * pixels + p] = acc + bias[o];
      }
    }
  }
}

/// Per-channel mean and biased variance over (batch, pixels), two passes.
template <typename T>
void channel_stats(const T* x, T* mean, T* var, std::size_t batch, std::size_t channels,
                   std::size_t pixels) {
  const T count = static_cast<T>(batch * pixels);
  for (std::size_t c = 0; c < channels; ++c) {
    T s = T(0);
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t p = 0; p < pixels; ++p) s += x[(n * channels + c) * pixels + p];
    const T mu = s / count;
    T q = T(0);
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t p = 0; p < pixels; ++p) {
        const T d = x[(n * channels + c) * pixels + p] - mu;
        q += d * d;
      }
    mean[c] = mu;
    var[c] = q / count;
  }
}

}  // namespace reference

namespace parallel {

template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  const bool big = m * k * n >= kParallelGrain;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    T* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void transpose(const T* src, T* dst, std::size_t rows, std::size_t cols) {
  const bool big = rows * cols >= kParallelGrain;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t cc = 0; cc < static_cast<std::ptrdiff_t>(cols); ++cc) {
    const auto c = static_cast<std::size_t>(cc);
    for (std::size_t r = 0; r < rows; ++r) dst[c * rows + r] = src[r * cols + c];
  }
}

template <typename T>
void conv1x1(const T* x, const T* w, const T* bias, T* y, std::size_t batch, std::size_t cin,
             std::size_t cout, std::size_t pixels) {
  const bool big = batch * cin * cout * pixels >= kParallelGrain;
#pragma omp parallel for collapse(2) schedule(static) if (big)
  for (std::ptrdiff_t nn = 0; nn < static_cast<std::ptrdiff_t>(batch); ++nn) {
    for (std::ptrdiff_t oo = 0; oo < static_cast<std::ptrdiff_t>(cout); ++oo) {
      const auto n = static_cast<std::size_t>(nn);
      const auto o = static_cast<std::size_t>(oo);
      T* yrow = y + (n * cout + o) * pixels;
      std::fill(yrow, yrow + pixels, T(0));
      for (std::size_t c = 0; c < cin; ++c) {
        const T wv = w[o * cin + c];
        const T* xrow = x + (n * cin + c) * pixels;
        for (std::size_t p = 0; p < pixels; ++p) yrow[p] += wv * xrow[p];
      }
      const T b = bias[o];
      for (std::size_t p = 0; p < pixels; ++p) yrow[p] += b;
    }
  }
}

template <typename T>
void channel_stats(const T* x, T* mean, T* var, std::size_t batch, std::size_t channels,
                   std::size_t pixels) {
  const T count = static_cast<T>(batch * pixels);
  const bool big = batch * channels * pixels >= kParallelGrain;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t cc = 0; cc < static_cast<std::ptrdiff_t>(channels); ++cc) {
    const auto c = static_cast<std::size_t>(cc);
    T s = T(0);
    for (std::size_t n = 0; n < batch; ++n) {
      const T* row = x + (n * channels + c) * pixels;
      for (std::size_t p = 0; p < pixels; ++p) s += row[p];
    }
    const T mu = s / count;
    T q = T(0);
    for (std::size_t n = 0; n < batch; ++n) {
      const T* row = x + (n * channels + c) * pixels;
      for (std::size_t p = 0; p < pixels; ++p) {
        const T d = row[p] - mu;
        q += d * d;
      }
    }
    mean[c] = mu;
    var[c] = q / count;
  }
}

}  // namespace parallel

}  // namespace hfan::kernels
