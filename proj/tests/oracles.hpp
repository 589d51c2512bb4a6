#pragma once

// Independent reference computations for the alignment, adaptation and metric code,
// shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "hfan/adapt.hpp"
#include "hfan/align.hpp"
#include "test_support.hpp"

namespace hfan::test {

inline Tensor<double> oracle_cbr(const Tensor<double>& x, ConvBnRelu<double>& layer) {
  Tensor<double> y = test::oracle_conv1x1(x, layer.conv.weight.value, layer.conv.bias.value);
  y = test::oracle_batchnorm(y, layer.bn.gamma.value, layer.bn.beta.value, ops::kBatchNormEps);
  for (double& v : y.storage()) v = std::max(v, 0.0);
  return y;
}

// M[n, c, k] = sum_p softmax_p(P[n, k, :]) * I[n, c, p]
inline Tensor<double> oracle_css(const Tensor<double>& I, const Tensor<double>& P) {
  const std::size_t N = I.dim(0), C = I.dim(1), HW = I.dim(2) * I.dim(3), K = P.dim(1);
  Tensor<double> m({N, C, K});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k) {
      const double* logits = &P[(n * K + k) * HW];
      double mx = logits[0];
      for (std::size_t p = 1; p < HW; ++p) mx = std::max(mx, logits[p]);
      double z = 0.0;
      for (std::size_t p = 0; p < HW; ++p) z += std::exp(logits[p] - mx);
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t p = 0; p < HW; ++p) s += std::exp(logits[p] - mx) / z * I[(n * C + c) * HW + p];
        m[(n * C + c) * K + k] = s;
      }
    }
  return m;
}

struct PocOracle {
  Tensor<double> weights;  // N x HW x 2
  Tensor<double> out;
};

/// Pixel-to-class attention spelled out per pixel: logits q.k * alpha, two-way
/// softmax, weighted value, concatenation with X, then the output block.
inline PocOracle oracle_poc(const Tensor<double>& X, const Tensor<double>& M, PocParams<double>& params) {
  const std::size_t N = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3), K = M.dim(2);
  const std::size_t d = params.query.conv.weight.value.dim(0);
  Tensor<double> Q = oracle_cbr(X, params.query);
  Tensor<double> M4 = M.reshaped({N, C, K, 1});
  Tensor<double> Kt = oracle_cbr(M4, params.key), V = oracle_cbr(M4, params.value);
  const double alpha = 1.0 / std::sqrt(double(C));
  PocOracle o{Tensor<double>({N, HW, K}), {}};
  Tensor<double> cat({N, C + d, X.dim(2), X.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < HW; ++p) cat[(n * (C + d) + c) * HW + p] = X[(n * C + c) * HW + p];
    for (std::size_t p = 0; p < HW; ++p) {
      std::vector<double> logit(K);
      double mx = -INFINITY;
      for (std::size_t k = 0; k < K; ++k) {
        logit[k] = 0.0;
        for (std::size_t j = 0; j < d; ++j) logit[k] += Q[(n * d + j) * HW + p] * Kt[(n * d + j) * K + k];
        logit[k] *= alpha;
        mx = std::max(mx, logit[k]);
      }
      double z = 0.0;
      for (double& l : logit) z += (l = std::exp(l - mx));
      for (std::size_t k = 0; k < K; ++k) o.weights[(n * HW + p) * K + k] = logit[k] / z;
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += logit[k] / z * V[(n * d + j) * K + k];
        cat[(n * (C + d) + C + j) * HW + p] = s;
      }
    }
  }
  o.out = oracle_cbr(cat, params.out);
  return o;
}

// Gate recomputed branch by branch in double from the raw parameters.
inline Tensor<double> oracle_gate(const Tensor<double>& I, const Tensor<double>& O, FatParams<double>& p) {
  const std::size_t N = I.dim(0), C = I.dim(1), H = I.dim(2), W = I.dim(3);
  Tensor<double> F(I.shape());
  for (std::size_t i = 0; i < F.numel(); ++i) F[i] = I[i] + O[i];

  Tensor<double> s = oracle_conv1x1(F, p.spatial_reduce.conv.weight.value, p.spatial_reduce.conv.bias.value);
  s = oracle_batchnorm(s, p.spatial_reduce.bn.gamma.value, p.spatial_reduce.bn.beta.value, ops::kBatchNormEps);
  for (double& v : s.storage()) v = std::max(v, 0.0);
  s = oracle_conv1x1(s, p.spatial_expand.weight.value, p.spatial_expand.bias.value);

  Tensor<double> g({N, C, 1, 1});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) acc += F.at(n, c, h, w);
      g.at(n, c, 0, 0) = acc / double(H * W);
    }
  Tensor<double> r = oracle_conv1x1(g, p.pooled_reduce.weight.value, p.pooled_reduce.bias.value);
  for (double& v : r.storage()) v = std::max(v, 0.0);
  Tensor<double> e = oracle_conv1x1(r, p.pooled_expand.weight.value, p.pooled_expand.bias.value);

  Tensor<double> gate(I.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
          gate.at(n, c, h, w) = 1.0 / (1.0 + std::exp(-(s.at(n, c, h, w) + e.at(n, c, 0, 0))));
  return gate;
}

// A few random rectangles, so boundaries are long and connected.
inline Tensor<float> blobs(Rng& rng, std::size_t h, std::size_t w) {
  Tensor<float> m({h, w});
  const std::size_t count = 1 + rng.index(3);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t y0 = rng.index(h), x0 = rng.index(w);
    const std::size_t y1 = std::min(h, y0 + 2 + rng.index(h / 2)), x1 = std::min(w, x0 + 2 + rng.index(w / 2));
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) m[y * w + x] = 1.0f;
  }
  return m;
}

inline double oracle_jaccard(const Tensor<float>& a, const Tensor<float>& b) {
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    inter += a[i] * b[i];
    uni += std::max(a[i], b[i]);
  }
  return uni == 0 ? 1.0 : inter / uni;
}

// Boundary pixels listed explicitly, then matched by pairwise distance.
inline std::vector<std::pair<long, long>> oracle_boundary(const Tensor<float>& m) {
  const long h = long(m.dim(0)), w = long(m.dim(1));
  auto at = [&](long y, long x) { return y < 0 || x < 0 || y >= h || x >= w ? 0.0f : m[std::size_t(y * w + x)]; };
  std::vector<std::pair<long, long>> out;
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      if (at(y, x) == 0.0f) continue;
      if (at(y - 1, x) == 0.0f || at(y + 1, x) == 0.0f || at(y, x - 1) == 0.0f || at(y, x + 1) == 0.0f) {
        out.emplace_back(y, x);
      }
    }
  return out;
}

inline double oracle_boundary_f(const Tensor<float>& p, const Tensor<float>& g, double tol) {
  const auto bp = oracle_boundary(p), bg = oracle_boundary(g);
  if (bp.empty() && bg.empty()) return 1.0;
  if (bp.empty() || bg.empty()) return 0.0;
  auto matched = [&](const auto& from, const auto& to) {
    double count = 0;
    for (auto [y, x] : from) {
      for (auto [yy, xx] : to) {
        if (std::sqrt(double((y - yy) * (y - yy) + (x - xx) * (x - xx))) <= tol) {
          ++count;
          break;
        }
      }
    }
    return count / double(from.size());
  };
  const double prec = matched(bp, bg), rec = matched(bg, bp);
  return prec + rec == 0 ? 0.0 : 2 * prec * rec / (prec + rec);
}

}  // namespace hfan::test
