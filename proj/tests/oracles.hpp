#ifndef CLUST3_TESTS_ORACLES_HPP
#define CLUST3_TESTS_ORACLES_HPP

// Independent reference implementations and a finite-difference checker. These
// deliberately use the dumbest possible formulations.

#include <cmath>
#include <functional>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace oracles {

using clust3::Tensor;

inline Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor<double> c({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a.at2(i, p) * b.at2(p, j);
      c.at2(i, j) = s;
    }
  return c;
}

// direct 6-loop cross-correlation with zero padding
inline Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& w, int stride,
                                   int pad) {
  const int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int Co = w.shape[0], KH = w.shape[2], KW = w.shape[3];
  const int Ho = (H + 2 * pad - KH) / stride + 1;
  const int Wo = (W + 2 * pad - KW) / stride + 1;
  Tensor<double> y({B, Co, Ho, Wo});
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Co; ++co)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          double s = 0.0;
          for (int ci = 0; ci < C; ++ci)
            for (int kh = 0; kh < KH; ++kh)
              for (int kw = 0; kw < KW; ++kw) {
                const int ih = oh * stride + kh - pad;
                const int iw = ow * stride + kw - pad;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                s += x.at4(b, ci, ih, iw) *
                     w.data[((static_cast<std::size_t>(co) * C + ci) * KH + kh) * KW + kw];
              }
          y.at4(b, co, oh, ow) = s;
        }
  return y;
}

inline Tensor<double> random_tensor(clust3::Rng& rng, std::vector<int> shape, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

// random row-stochastic matrix via softmax of random logits
inline Tensor<double> random_stochastic(clust3::Rng& rng, int n, int k, double scale = 2.0) {
  Tensor<double> z({n, k});
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) {
      z.at2(i, j) = std::exp(rng.uniform(-scale, scale));
      s += z.at2(i, j);
    }
    for (int j = 0; j < k; ++j) z.at2(i, j) /= s;
  }
  return z;
}

// Central finite differences of `eval` with respect to every element of
// `param`. `eval` must recompute the scalar loss from the current parameter
// values. Restores the parameter afterwards.
inline Tensor<double> finite_diff(Tensor<double>& param, const std::function<double()>& eval,
                                  double h = 1e-5) {
  Tensor<double> g(param.shape);
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    const double orig = param.data[i];
    param.data[i] = orig + h;
    const double fp = eval();
    param.data[i] = orig - h;
    const double fm = eval();
    param.data[i] = orig;
    g.data[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// relative error with an absolute floor so near-zero gradients do not explode
inline double max_rel_err(const Tensor<double>& a, const Tensor<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double denom = std::max({1.0, std::abs(a.data[i]), std::abs(b.data[i])});
    worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom);
  }
  return worst;
}

}  // namespace oracles

#endif
