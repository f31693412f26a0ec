#ifndef CLUST3_AUTODIFF_HPP
#define CLUST3_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "common.hpp"
#include "tensor.hpp"

namespace clust3 {

// Define-by-run reverse-mode autodiff. A Tape records one backward closure per
// forward op; Var is a shared node holding value and (if needed) gradient.

template <class T>
struct VarNode {
  Tensor<T> value;
  Tensor<T> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  void ensure_grad() {
    if (!requires_grad) {
      grad = Tensor<T>::zeros(value.shape);
      requires_grad = true;
    }
  }
};

template <class T>
using Var = std::shared_ptr<VarNode<T>>;

template <class T>
inline Var<T> make_var(Tensor<T> value, bool requires_grad = false) {
  auto v = std::make_shared<VarNode<T>>();
  v->value = std::move(value);
  if (requires_grad) v->ensure_grad();
  return v;
}

// Opt-in full-tensor finiteness checks after every forward op (used by tests;
// training loops check losses instead to stay cheap).
inline bool& finite_checks() {
  static bool on = false;
  return on;
}

template <class T>
inline void check_forward(const Var<T>& out, const char* op) {
  if (finite_checks() && !out->value.all_finite())
    throw NumericError(std::string(op) + ": non-finite value in forward output");
}

template <class T>
class Tape {
 public:
  void record(std::function<void()> back) { backs_.push_back(std::move(back)); }

  std::size_t size() const { return backs_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays recorded ops in reverse.
  void backward(const Var<T>& loss) {
    if (loss->value.numel() != 1)
      throw ContractError("backward: loss must be scalar");
    if (!loss->requires_grad)
      throw ContractError("backward: loss does not require grad");
    loss->grad.data[0] += T(1);
    for (auto it = backs_.rbegin(); it != backs_.rend(); ++it) (*it)();
  }

  void clear() { backs_.clear(); }

 private:
  std::vector<std::function<void()>> backs_;
};

namespace detail {

template <class T>
inline Var<T> result_of(Tape<T>& /*tape*/, Tensor<T> value, bool any_rg) {
  return make_var<T>(std::move(value), any_rg);
}

}  // namespace detail

// ---- elementwise / structural ops ----

template <class T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value))
    throw DimensionError("add: shape mismatch " + shape_str(a->value) + " vs " + shape_str(b->value));
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
  bool rg = a->requires_grad || b->requires_grad;
  Var<T> c = make_var<T>(std::move(out), rg);
  check_forward(c, "add");
  if (rg) {
    tape.record([a, b, c]() {
      if (a->requires_grad)
        for (std::size_t i = 0; i < c->grad.data.size(); ++i) a->grad.data[i] += c->grad.data[i];
      if (b->requires_grad)
        for (std::size_t i = 0; i < c->grad.data.size(); ++i) b->grad.data[i] += c->grad.data[i];
    });
  }
  return c;
}

template <class T>
Var<T> scale(Tape<T>& tape, const Var<T>& a, T s) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v *= s;
  Var<T> c = make_var<T>(std::move(out), a->requires_grad);
  check_forward(c, "scale");
  if (a->requires_grad) {
    tape.record([a, c, s]() {
      for (std::size_t i = 0; i < c->grad.data.size(); ++i) a->grad.data[i] += s * c->grad.data[i];
    });
  }
  return c;
}

template <class T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  Var<T> y = make_var<T>(std::move(out), x->requires_grad);
  check_forward(y, "relu");
  if (x->requires_grad) {
    tape.record([x, y]() {
      for (std::size_t i = 0; i < y->grad.data.size(); ++i)
        if (x->value.data[i] > T(0)) x->grad.data[i] += y->grad.data[i];
    });
  }
  return y;
}

// ---- matrix ops ----

template <class T>
Var<T> matmul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  if (a->value.shape.size() != 2 || b->value.shape.size() != 2)
    throw DimensionError("matmul: operands must be 2-D");
  const int m = a->value.shape[0], k = a->value.shape[1];
  const int k2 = b->value.shape[0], n = b->value.shape[1];
  if (k != k2)
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a->value) + " * " + shape_str(b->value));
  Tensor<T> out({m, n});
  const T* A = a->value.data.data();
  const T* B = b->value.data.data();
  T* C = out.data.data();
  for (int i = 0; i < m; ++i) {
    T* Ci = C + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = A[static_cast<std::size_t>(i) * k + p];
      const T* Bp = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) Ci[j] += av * Bp[j];
    }
  }
  bool rg = a->requires_grad || b->requires_grad;
  Var<T> c = make_var<T>(std::move(out), rg);
  check_forward(c, "matmul");
  if (rg) {
    tape.record([a, b, c, m, k, n]() {
      const T* dC = c->grad.data.data();
      if (a->requires_grad) {
        // dA = dC * B^T
        const T* B = b->value.data.data();
        T* dA = a->grad.data.data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            T acc = T(0);
            const T* dCi = dC + static_cast<std::size_t>(i) * n;
            const T* Bp = B + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) acc += dCi[j] * Bp[j];
            dA[static_cast<std::size_t>(i) * k + p] += acc;
          }
      }
      if (b->requires_grad) {
        // dB = A^T * dC
        const T* A = a->value.data.data();
        T* dB = b->grad.data.data();
        for (int i = 0; i < m; ++i) {
          const T* dCi = dC + static_cast<std::size_t>(i) * n;
          for (int p = 0; p < k; ++p) {
            const T av = A[static_cast<std::size_t>(i) * k + p];
            T* dBp = dB + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) dBp[j] += av * dCi[j];
          }
        }
      }
    });
  }
  return c;
}

// x[N x K] + row vector b[K]
template <class T>
Var<T> add_rowvec(Tape<T>& tape, const Var<T>& x, const Var<T>& b) {
  if (x->value.shape.size() != 2 || b->value.shape.size() != 1 || b->value.shape[0] != x->value.shape[1])
    throw DimensionError("add_rowvec: want (NxK) + (K)");
  const int n = x->value.shape[0], k = x->value.shape[1];
  Tensor<T> out = x->value;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) out.data[static_cast<std::size_t>(i) * k + j] += b->value.data[j];
  bool rg = x->requires_grad || b->requires_grad;
  Var<T> y = make_var<T>(std::move(out), rg);
  check_forward(y, "add_rowvec");
  if (rg) {
    tape.record([x, b, y, n, k]() {
      if (x->requires_grad)
        for (std::size_t i = 0; i < y->grad.data.size(); ++i) x->grad.data[i] += y->grad.data[i];
      if (b->requires_grad)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < k; ++j) b->grad.data[j] += y->grad.data[static_cast<std::size_t>(i) * k + j];
    });
  }
  return y;
}

// ---- convolution ----

// C(M,N) += A(M,K) B(K,N); all rows contiguous
template <class T>
void gemm_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(M,K) += A(M,N) B(K,N)^T
template <class T>
void gemm_abt_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * n;
    T* crow = c + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T* brow = b + static_cast<std::size_t>(p) * n;
      T acc = T(0);
      // reduction is reassociated for SIMD; order is still fixed per build
#pragma omp simd reduction(+ : acc)
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C(K,N) += A(M,K)^T B(M,N)
template <class T>
void gemm_atb_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    const T* brow = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      T* crow = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Patch matrix layout: row (ci*KH+kh)*KW+kw, column (b*Ho+oh)*Wo+ow.
template <class T, bool Accumulate>
void conv_patch_pass(T* x, T* col, int B, int C, int H, int W, int KH, int KW, int stride, int pad,
                     int Ho, int Wo) {
  const std::size_t n = static_cast<std::size_t>(B) * Ho * Wo;
  for (int ci = 0; ci < C; ++ci)
    for (int kh = 0; kh < KH; ++kh)
      for (int kw = 0; kw < KW; ++kw) {
        T* crow = col + static_cast<std::size_t>((ci * KH + kh) * KW + kw) * n;
        // valid ow range so that 0 <= iw < W
        int lo = 0, hi = Wo;
        while (lo < hi && lo * stride + kw - pad < 0) ++lo;
        while (hi > lo && (hi - 1) * stride + kw - pad >= W) --hi;
        for (int b = 0; b < B; ++b) {
          T* xp = x + (static_cast<std::size_t>(b) * C + ci) * H * W;
          for (int oh = 0; oh < Ho; ++oh) {
            const int ih = oh * stride + kh - pad;
            T* cslot = crow + static_cast<std::size_t>(b * Ho + oh) * Wo;
            if (ih < 0 || ih >= H) {
              if (!Accumulate) std::fill(cslot, cslot + Wo, T(0));
              continue;
            }
            T* xrow = xp + static_cast<std::size_t>(ih) * W + (kw - pad);
            if (Accumulate) {
              // col2im: scatter-add patch gradients back into dX
              if (stride == 1)
                for (int ow = lo; ow < hi; ++ow) xrow[ow] += cslot[ow];
              else
                for (int ow = lo; ow < hi; ++ow) xrow[2 * ow] += cslot[ow];
            } else {
              for (int ow = 0; ow < lo; ++ow) cslot[ow] = T(0);
              if (stride == 1)
                for (int ow = lo; ow < hi; ++ow) cslot[ow] = xrow[ow];
              else
                for (int ow = lo; ow < hi; ++ow) cslot[ow] = xrow[2 * ow];
              for (int ow = hi; ow < Wo; ++ow) cslot[ow] = T(0);
            }
          }
        }
      }
}

template <class T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, const Var<T>& w, int stride, int pad) {
  if (x->value.shape.size() != 4 || w->value.shape.size() != 4)
    throw DimensionError("conv2d: want 4-D input and weight");
  if (stride != 1 && stride != 2) throw DimensionError("conv2d: stride must be 1 or 2");
  if (pad != 0 && pad != 1) throw DimensionError("conv2d: pad must be 0 or 1");
  const int B = x->value.shape[0], C = x->value.shape[1], H = x->value.shape[2], W = x->value.shape[3];
  const int Co = w->value.shape[0], Ci = w->value.shape[1], KH = w->value.shape[2], KW = w->value.shape[3];
  if (Ci != C) throw DimensionError("conv2d: channel mismatch");
  if ((H + 2 * pad - KH) % stride != 0 || (W + 2 * pad - KW) % stride != 0)
    throw DimensionError("conv2d: non-integral output size");
  const int Ho = (H + 2 * pad - KH) / stride + 1;
  const int Wo = (W + 2 * pad - KW) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw DimensionError("conv2d: empty output");

  // im2col + GEMM; the patch matrix is kept alive for the backward pass
  const int ckk = C * KH * KW;
  const std::size_t n = static_cast<std::size_t>(B) * Ho * Wo;
  const std::size_t hw = static_cast<std::size_t>(Ho) * Wo;
  auto col = std::make_shared<std::vector<T>>(static_cast<std::size_t>(ckk) * n);
  conv_patch_pass<T, false>(const_cast<T*>(x->value.data.data()), col->data(), B, C, H, W, KH, KW,
                            stride, pad, Ho, Wo);

  std::vector<T> ymat(static_cast<std::size_t>(Co) * n, T(0));
  gemm_acc(w->value.data.data(), col->data(), ymat.data(), Co, ckk, static_cast<int>(n));

  Tensor<T> out({B, Co, Ho, Wo});
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Co; ++co)
      std::copy_n(ymat.data() + static_cast<std::size_t>(co) * n + static_cast<std::size_t>(b) * hw,
                  hw, out.data.data() + (static_cast<std::size_t>(b) * Co + co) * hw);

  bool rg = x->requires_grad || w->requires_grad;
  Var<T> y = make_var<T>(std::move(out), rg);
  check_forward(y, "conv2d");
  if (rg) {
    tape.record([x, w, y, col, stride, pad, B, C, H, W, Co, KH, KW, Ho, Wo, ckk, n, hw]() {
      std::vector<T> dymat(static_cast<std::size_t>(Co) * n);
      for (int b = 0; b < B; ++b)
        for (int co = 0; co < Co; ++co)
          std::copy_n(y->grad.data.data() + (static_cast<std::size_t>(b) * Co + co) * hw, hw,
                      dymat.data() + static_cast<std::size_t>(co) * n + static_cast<std::size_t>(b) * hw);
      if (w->requires_grad)
        gemm_abt_acc(dymat.data(), col->data(), w->grad.data.data(), Co, ckk, static_cast<int>(n));
      if (x->requires_grad) {
        std::vector<T> dcol(static_cast<std::size_t>(ckk) * n, T(0));
        gemm_atb_acc(w->value.data.data(), dymat.data(), dcol.data(), Co, ckk, static_cast<int>(n));
        conv_patch_pass<T, true>(x->grad.data.data(), dcol.data(), B, C, H, W, KH, KW, stride, pad,
                                 Ho, Wo);
      }
    });
  }
  return y;
}

// ---- batch normalization ----

template <class T>
struct BNState {
  Tensor<T> running_mean;  // [C]
  Tensor<T> running_var;   // [C]
};

enum class BnMode { Train, Eval };

// Train mode normalizes with batch statistics over (B,H,W) per channel and
// refreshes running stats with momentum; eval mode uses running stats. Biased
// variance throughout.
template <class T>
Var<T> batchnorm2d(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                   BNState<T>& state, BnMode mode, T momentum = T(0.1), T eps = T(1e-5),
                   bool update_running = true) {
  if (x->value.shape.size() != 4) throw DimensionError("batchnorm: want 4-D input");
  const int B = x->value.shape[0], C = x->value.shape[1], H = x->value.shape[2], W = x->value.shape[3];
  if (gamma->value.numel() != C || beta->value.numel() != C)
    throw DimensionError("batchnorm: affine parameter size mismatch");
  const std::int64_t M = static_cast<std::int64_t>(B) * H * W;
  if (mode == BnMode::Train && M < 2) throw ContractError("batchnorm: need B*H*W >= 2 in train mode");

  Tensor<T> mean({C}), inv_std({C});
  if (mode == BnMode::Train) {
    for (int c = 0; c < C; ++c) {
      double mu = 0.0;
      for (int b = 0; b < B; ++b)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) mu += static_cast<double>(x->value.at4(b, c, h, w));
      mu /= static_cast<double>(M);
      double var = 0.0;
      for (int b = 0; b < B; ++b)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            const double d = static_cast<double>(x->value.at4(b, c, h, w)) - mu;
            var += d * d;
          }
      var /= static_cast<double>(M);
      mean.data[c] = static_cast<T>(mu);
      inv_std.data[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      if (update_running) {
        state.running_mean.data[c] =
            (T(1) - momentum) * state.running_mean.data[c] + momentum * static_cast<T>(mu);
        state.running_var.data[c] =
            (T(1) - momentum) * state.running_var.data[c] + momentum * static_cast<T>(var);
      }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean.data[c] = state.running_mean.data[c];
      inv_std.data[c] = T(1) / std::sqrt(state.running_var.data[c] + eps);
    }
  }

  Tensor<T> out({B, C, H, W});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T mu = mean.data[c], is = inv_std.data[c];
      const T g = gamma->value.data[c], be = beta->value.data[c];
      const T* xp = &x->value.data[((static_cast<std::size_t>(b) * C + c) * H) * W];
      T* yp = &out.data[((static_cast<std::size_t>(b) * C + c) * H) * W];
      for (int i = 0; i < H * W; ++i) yp[i] = g * (xp[i] - mu) * is + be;
    }

  bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
  Var<T> y = make_var<T>(std::move(out), rg);
  check_forward(y, "batchnorm");
  if (rg) {
    auto mean_c = std::make_shared<Tensor<T>>(std::move(mean));
    auto istd_c = std::make_shared<Tensor<T>>(std::move(inv_std));
    tape.record([x, gamma, beta, y, mean_c, istd_c, mode, B, C, H, W, M]() {
      const int HW = H * W;
      for (int c = 0; c < C; ++c) {
        const T mu = mean_c->data[c], is = istd_c->data[c];
        const T g = gamma->value.data[c];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < B; ++b) {
          const std::size_t off = ((static_cast<std::size_t>(b) * C + c) * H) * W;
          const T* xp = &x->value.data[off];
          const T* dyp = &y->grad.data[off];
          for (int i = 0; i < HW; ++i) {
            sum_dy += static_cast<double>(dyp[i]);
            sum_dy_xhat += static_cast<double>(dyp[i]) * static_cast<double>((xp[i] - mu) * is);
          }
        }
        if (gamma->requires_grad) gamma->grad.data[c] += static_cast<T>(sum_dy_xhat);
        if (beta->requires_grad) beta->grad.data[c] += static_cast<T>(sum_dy);
        if (x->requires_grad) {
          const T mdy = static_cast<T>(sum_dy / static_cast<double>(M));
          const T mdyx = static_cast<T>(sum_dy_xhat / static_cast<double>(M));
          for (int b = 0; b < B; ++b) {
            const std::size_t off = ((static_cast<std::size_t>(b) * C + c) * H) * W;
            const T* xp = &x->value.data[off];
            const T* dyp = &y->grad.data[off];
            T* dxp = &x->grad.data[off];
            if (mode == BnMode::Train) {
              for (int i = 0; i < HW; ++i) {
                const T xhat = (xp[i] - mu) * is;
                dxp[i] += g * is * (dyp[i] - mdy - xhat * mdyx);
              }
            } else {
              for (int i = 0; i < HW; ++i) dxp[i] += g * is * dyp[i];
            }
          }
        }
      }
    });
  }
  return y;
}

// ---- pooling / reshaping ----

template <class T>
Var<T> avgpool2(Tape<T>& tape, const Var<T>& x) {
  if (x->value.shape.size() != 4) throw DimensionError("avgpool2: want 4-D input");
  const int B = x->value.shape[0], C = x->value.shape[1], H = x->value.shape[2], W = x->value.shape[3];
  if (H % 2 != 0 || W % 2 != 0) throw DimensionError("avgpool2: odd spatial size");
  const int Ho = H / 2, Wo = W / 2;
  Tensor<T> out({B, C, Ho, Wo});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          const T s = x->value.at4(b, c, 2 * oh, 2 * ow) + x->value.at4(b, c, 2 * oh, 2 * ow + 1) +
                      x->value.at4(b, c, 2 * oh + 1, 2 * ow) + x->value.at4(b, c, 2 * oh + 1, 2 * ow + 1);
          out.at4(b, c, oh, ow) = s * T(0.25);
        }
  Var<T> y = make_var<T>(std::move(out), x->requires_grad);
  check_forward(y, "avgpool2");
  if (x->requires_grad) {
    tape.record([x, y, B, C, Ho, Wo]() {
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
          for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow) {
              const T d = y->grad.at4(b, c, oh, ow) * T(0.25);
              x->grad.at4(b, c, 2 * oh, 2 * ow) += d;
              x->grad.at4(b, c, 2 * oh, 2 * ow + 1) += d;
              x->grad.at4(b, c, 2 * oh + 1, 2 * ow) += d;
              x->grad.at4(b, c, 2 * oh + 1, 2 * ow + 1) += d;
            }
    });
  }
  return y;
}

template <class T>
Var<T> global_avg_pool(Tape<T>& tape, const Var<T>& x) {
  if (x->value.shape.size() != 4) throw DimensionError("global_avg_pool: want 4-D input");
  const int B = x->value.shape[0], C = x->value.shape[1], H = x->value.shape[2], W = x->value.shape[3];
  const T inv = T(1) / static_cast<T>(H * W);
  Tensor<T> out({B, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      T s = T(0);
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) s += x->value.at4(b, c, h, w);
      out.at2(b, c) = s * inv;
    }
  Var<T> y = make_var<T>(std::move(out), x->requires_grad);
  check_forward(y, "global_avg_pool");
  if (x->requires_grad) {
    tape.record([x, y, B, C, H, W, inv]() {
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const T d = y->grad.at2(b, c) * inv;
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) x->grad.at4(b, c, h, w) += d;
        }
    });
  }
  return y;
}

// (B,C,H,W) -> (B*H*W, C): flatten along batch and spatial dims, channels as
// feature columns.
template <class T>
Var<T> to_rows(Tape<T>& tape, const Var<T>& x) {
  if (x->value.shape.size() != 4) throw DimensionError("to_rows: want 4-D input");
  const int B = x->value.shape[0], C = x->value.shape[1], H = x->value.shape[2], W = x->value.shape[3];
  Tensor<T> out({B * H * W, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          out.at2((b * H + h) * W + w, c) = x->value.at4(b, c, h, w);
  Var<T> y = make_var<T>(std::move(out), x->requires_grad);
  if (x->requires_grad) {
    tape.record([x, y, B, C, H, W]() {
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
              x->grad.at4(b, c, h, w) += y->grad.at2((b * H + h) * W + w, c);
    });
  }
  return y;
}

// ---- softmax and losses ----

template <class T>
Var<T> softmax_rows(Tape<T>& tape, const Var<T>& x) {
  if (x->value.shape.size() != 2) throw DimensionError("softmax_rows: want 2-D input");
  const int N = x->value.shape[0], K = x->value.shape[1];
  Tensor<T> out({N, K});
  for (int i = 0; i < N; ++i) {
    const T* xi = &x->value.data[static_cast<std::size_t>(i) * K];
    T* yi = &out.data[static_cast<std::size_t>(i) * K];
    T m = xi[0];
    for (int j = 1; j < K; ++j) m = std::max(m, xi[j]);
    T s = T(0);
    for (int j = 0; j < K; ++j) {
      yi[j] = std::exp(xi[j] - m);
      s += yi[j];
    }
    const T inv = T(1) / s;
    for (int j = 0; j < K; ++j) yi[j] *= inv;
  }
  Var<T> y = make_var<T>(std::move(out), x->requires_grad);
  check_forward(y, "softmax_rows");
  if (x->requires_grad) {
    tape.record([x, y, N, K]() {
      for (int i = 0; i < N; ++i) {
        const T* yi = &y->value.data[static_cast<std::size_t>(i) * K];
        const T* dyi = &y->grad.data[static_cast<std::size_t>(i) * K];
        T dot = T(0);
        for (int j = 0; j < K; ++j) dot += dyi[j] * yi[j];
        T* dxi = &x->grad.data[static_cast<std::size_t>(i) * K];
        for (int j = 0; j < K; ++j) dxi[j] += yi[j] * (dyi[j] - dot);
      }
    });
  }
  return y;
}

// Mean over the batch of -log softmax(logits)[label].
template <class T>
Var<T> cross_entropy(Tape<T>& tape, const Var<T>& logits, const std::vector<int>& labels) {
  if (logits->value.shape.size() != 2) throw DimensionError("cross_entropy: want 2-D logits");
  const int B = logits->value.shape[0], K = logits->value.shape[1];
  if (static_cast<int>(labels.size()) != B)
    throw DimensionError("cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= K) throw ContractError("cross_entropy: label out of range");

  auto probs = std::make_shared<Tensor<T>>(Tensor<T>({B, K}));
  double loss = 0.0;
  for (int i = 0; i < B; ++i) {
    const T* li = &logits->value.data[static_cast<std::size_t>(i) * K];
    T m = li[0];
    for (int j = 1; j < K; ++j) m = std::max(m, li[j]);
    double s = 0.0;
    for (int j = 0; j < K; ++j) s += std::exp(static_cast<double>(li[j] - m));
    const double lse = static_cast<double>(m) + std::log(s);
    loss += lse - static_cast<double>(li[labels[static_cast<std::size_t>(i)]]);
    for (int j = 0; j < K; ++j)
      probs->at2(i, j) = static_cast<T>(std::exp(static_cast<double>(li[j]) - lse));
  }
  loss /= static_cast<double>(B);

  Var<T> out = make_var<T>(Tensor<T>::scalar(static_cast<T>(loss)), logits->requires_grad);
  check_forward(out, "cross_entropy");
  if (logits->requires_grad) {
    tape.record([logits, out, probs, labels, B, K]() {
      const T g = out->grad.data[0] / static_cast<T>(B);
      for (int i = 0; i < B; ++i) {
        T* dl = &logits->grad.data[static_cast<std::size_t>(i) * K];
        for (int j = 0; j < K; ++j) {
          T p = probs->at2(i, j);
          if (j == labels[static_cast<std::size_t>(i)]) p -= T(1);
          dl[j] += g * p;
        }
      }
    });
  }
  return out;
}

// log clamped at p >= 1e-12 so 0*log(0) contributes 0; probabilities
// themselves are untouched (row sums stay exact).
template <class T>
inline T clamped_log(T p) {
  return std::log(std::max(p, T(1e-12)));
}

template <class T>
struct ImParts {
  T h_cond = T(0);  // H(Z|X)
  T h_marg = T(0);  // H(Z)
};

// L_IM = H(Z|X) - H(Z) on a row-stochastic N x K assignment matrix.
template <class T>
Var<T> im_loss(Tape<T>& tape, const Var<T>& z, ImParts<T>* parts = nullptr) {
  if (z->value.shape.size() != 2) throw DimensionError("im_loss: want 2-D assignment matrix");
  const int N = z->value.shape[0], K = z->value.shape[1];
  for (int i = 0; i < N; ++i) {
    double s = 0.0;
    for (int j = 0; j < K; ++j) {
      const double v = static_cast<double>(z->value.at2(i, j));
      if (v < -1e-4 || v > 1.0 + 1e-4) throw ContractError("im_loss: entry outside [0,1]");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-4) throw ContractError("im_loss: row does not sum to 1");
  }

  auto marg = std::make_shared<Tensor<T>>(Tensor<T>({K}));
  double h_cond = 0.0;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < K; ++j) {
      const T v = z->value.at2(i, j);
      marg->data[j] += v;
      h_cond -= static_cast<double>(v) * static_cast<double>(clamped_log(v));
    }
  h_cond /= static_cast<double>(N);
  double h_marg = 0.0;
  for (int j = 0; j < K; ++j) {
    marg->data[j] /= static_cast<T>(N);
    h_marg -= static_cast<double>(marg->data[j]) * static_cast<double>(clamped_log(marg->data[j]));
  }
  if (parts) {
    parts->h_cond = static_cast<T>(h_cond);
    parts->h_marg = static_cast<T>(h_marg);
  }

  Var<T> out = make_var<T>(Tensor<T>::scalar(static_cast<T>(h_cond - h_marg)), z->requires_grad);
  check_forward(out, "im_loss");
  if (z->requires_grad) {
    tape.record([z, out, marg, N, K]() {
      const T g = out->grad.data[0] / static_cast<T>(N);
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < K; ++j)
          z->grad.at2(i, j) += g * (clamped_log(marg->data[j]) - clamped_log(z->value.at2(i, j)));
    });
  }
  return out;
}

// Mean per-row entropy of softmax(logits); the TENT objective.
template <class T>
Var<T> mean_prediction_entropy(Tape<T>& tape, const Var<T>& logits) {
  if (logits->value.shape.size() != 2)
    throw DimensionError("mean_prediction_entropy: want 2-D logits");
  const int B = logits->value.shape[0], K = logits->value.shape[1];
  auto probs = std::make_shared<Tensor<T>>(Tensor<T>({B, K}));
  double total = 0.0;
  for (int i = 0; i < B; ++i) {
    const T* li = &logits->value.data[static_cast<std::size_t>(i) * K];
    T m = li[0];
    for (int j = 1; j < K; ++j) m = std::max(m, li[j]);
    double s = 0.0;
    for (int j = 0; j < K; ++j) s += std::exp(static_cast<double>(li[j] - m));
    const double lse = static_cast<double>(m) + std::log(s);
    for (int j = 0; j < K; ++j) {
      const double p = std::exp(static_cast<double>(li[j]) - lse);
      probs->at2(i, j) = static_cast<T>(p);
      total -= p * static_cast<double>(clamped_log(static_cast<T>(p)));
    }
  }
  total /= static_cast<double>(B);

  Var<T> out = make_var<T>(Tensor<T>::scalar(static_cast<T>(total)), logits->requires_grad);
  check_forward(out, "mean_prediction_entropy");
  if (logits->requires_grad) {
    tape.record([logits, out, probs, B, K]() {
      const T g = out->grad.data[0] / static_cast<T>(B);
      for (int i = 0; i < B; ++i) {
        // dH/dp_j chained through the softmax Jacobian
        T dot = T(0);
        for (int j = 0; j < K; ++j) {
          const T p = probs->at2(i, j);
          dot += p * (-(clamped_log(p) + T(1)));
        }
        T* dl = &logits->grad.data[static_cast<std::size_t>(i) * K];
        for (int j = 0; j < K; ++j) {
          const T p = probs->at2(i, j);
          dl[j] += g * p * (-(clamped_log(p) + T(1)) - dot);
        }
      }
    });
  }
  return out;
}

}  // namespace clust3

#endif
