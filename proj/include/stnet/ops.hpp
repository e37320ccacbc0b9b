#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "stnet/kernels.hpp"
#include "stnet/tape.hpp"
#include "stnet/tensor.hpp"

// Differentiable operations. Forward runs eagerly through the kernels; when a
// tape is active and an input requires gradients, a backward closure is
// recorded. Shape mismatches throw; there is no implicit broadcasting.
namespace stnet::ops {

template <typename T>
bool track(const Tensor<T>& a) {
  return Tape<T>::active() && a.requires_grad();
}

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& what) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(static_cast<double>(t.data()[i])))
      throw std::runtime_error("non-finite value in " + what);
}

// ---- linear algebra --------------------------------------------------------

// c[m,n] = a[m,k] * b[k,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
        "matmul: bad shapes " + a.shape_str() + " x " + b.shape_str());
  const int m = static_cast<int>(a.dim(0)), k = static_cast<int>(a.dim(1)),
            n = static_cast<int>(b.dim(1));
  Tensor<T> c({a.dim(0), b.dim(1)});
  kernels::gemm_nn(a.data(), b.data(), c.data(), m, k, n);
  if (Tape<T>::active() && (a.requires_grad() || b.requires_grad())) {
    c.set_requires_grad(true);
    Tensor<T> ca = a, cb = b, cc = c;
    Tape<T>::record([ca, cb, cc, m, k, n]() mutable {
      if (ca.requires_grad())  // dA += dC * B^T
        kernels::gemm_nt(cc.grad(), cb.data(), ca.grad(), m, n, k, true);
      if (cb.requires_grad())  // dB += A^T * dC
        kernels::gemm_tn(ca.data(), cc.grad(), cb.grad(), k, m, n, true);
    });
  }
  return c;
}

// c[m,n] = a[m,k] * b[n,k]^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(1),
        "matmul_nt: bad shapes " + a.shape_str() + " x " + b.shape_str());
  const int m = static_cast<int>(a.dim(0)), k = static_cast<int>(a.dim(1)),
            n = static_cast<int>(b.dim(0));
  Tensor<T> c({a.dim(0), b.dim(0)});
  kernels::gemm_nt(a.data(), b.data(), c.data(), m, k, n);
  if (Tape<T>::active() && (a.requires_grad() || b.requires_grad())) {
    c.set_requires_grad(true);
    Tensor<T> ca = a, cb = b, cc = c;
    Tape<T>::record([ca, cb, cc, m, k, n]() mutable {
      if (ca.requires_grad())  // dA += dC * B
        kernels::gemm_nn(cc.grad(), cb.data(), ca.grad(), m, n, k, true);
      if (cb.requires_grad())  // dB += dC^T * A
        kernels::gemm_tn(cc.grad(), ca.data(), cb.grad(), n, m, k, true);
    });
  }
  return c;
}

// y[r] = W[r,c] * v[c]
template <typename T>
Tensor<T> matvec(const Tensor<T>& w, const Tensor<T>& v) {
  check(w.ndim() == 2 && v.ndim() == 1 && w.dim(1) == v.dim(0),
        "matvec: bad shapes " + w.shape_str() + " x " + v.shape_str());
  const int r = static_cast<int>(w.dim(0)), c = static_cast<int>(w.dim(1));
  Tensor<T> y({w.dim(0)});
  kernels::gemm_nn(w.data(), v.data(), y.data(), r, c, 1);
  if (Tape<T>::active() && (w.requires_grad() || v.requires_grad())) {
    y.set_requires_grad(true);
    Tensor<T> cw = w, cv = v, cy = y;
    Tape<T>::record([cw, cv, cy, r, c]() mutable {
      if (cw.requires_grad()) {
        T* dw = cw.grad();
        const T* dy = cy.grad();
        const T* vd = cv.data();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            dw[static_cast<std::size_t>(i) * c + j] += dy[i] * vd[j];
      }
      if (cv.requires_grad())  // dv += W^T dy
        kernels::gemm_tn(cw.data(), cy.grad(), cv.grad(), c, r, 1, true);
    });
  }
  return y;
}

// ---- convolutions ----------------------------------------------------------

// x[N,C,H,W], w[F,C,K,K] -> y[N,F,OH,OW]. Cross-correlation (no kernel flip),
// computed as gemm(w_flat, im2col(x)) per image.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  check(x.ndim() == 4 && w.ndim() == 4 && x.dim(1) == w.dim(1) &&
            w.dim(2) == w.dim(3),
        "conv2d: bad shapes " + x.shape_str() + " w " + w.shape_str());
  check(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const int N = static_cast<int>(x.dim(0)), C = static_cast<int>(x.dim(1)),
            H = static_cast<int>(x.dim(2)), W = static_cast<int>(x.dim(3)),
            F = static_cast<int>(w.dim(0)), K = static_cast<int>(w.dim(2));
  const int OH = kernels::conv_out_dim(H, K, stride, pad);
  const int OW = kernels::conv_out_dim(W, K, stride, pad);
  check(OH > 0 && OW > 0, "conv2d: output would be empty");
  const int CK = C * K * K, P = OH * OW;
  Tensor<T> y({static_cast<std::size_t>(N), static_cast<std::size_t>(F),
               static_cast<std::size_t>(OH), static_cast<std::size_t>(OW)});
  std::vector<T> cols(static_cast<std::size_t>(CK) * P);
  for (int n = 0; n < N; ++n) {
    kernels::im2col(x.data() + static_cast<std::size_t>(n) * C * H * W, C, H,
                    W, K, stride, pad, cols.data());
    kernels::gemm_nn(w.data(), cols.data(),
                     y.data() + static_cast<std::size_t>(n) * F * P, F, CK, P);
  }
  if (Tape<T>::active() && (x.requires_grad() || w.requires_grad())) {
    y.set_requires_grad(true);
    Tensor<T> cx = x, cw = w, cy = y;
    Tape<T>::record([cx, cw, cy, N, C, H, W, F, K, stride, pad, CK,
                     P]() mutable {
      std::vector<T> cols(static_cast<std::size_t>(CK) * P);
      std::vector<T> dcols;
      if (cx.requires_grad()) dcols.resize(static_cast<std::size_t>(CK) * P);
      for (int n = 0; n < N; ++n) {
        const T* dyn = cy.grad() + static_cast<std::size_t>(n) * F * P;
        if (cw.requires_grad()) {  // dW += dY_n * cols_n^T
          kernels::im2col(cx.data() + static_cast<std::size_t>(n) * C * H * W,
                          C, H, W, K, stride, pad, cols.data());
          kernels::gemm_nt(dyn, cols.data(), cw.grad(), F, P, CK, true);
        }
        if (cx.requires_grad()) {  // dcols = W^T * dY_n, scatter-added
          kernels::gemm_tn(cw.data(), dyn, dcols.data(), CK, F, P);
          kernels::col2im(dcols.data(), C, H, W, K, stride, pad,
                          cx.grad() + static_cast<std::size_t>(n) * C * H * W);
        }
      }
    });
  }
  return y;
}

// x[N,C,H,W], w[C,1,K,K] -> y[N,C,OH,OW]
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride,
                           int pad) {
  check(x.ndim() == 4 && w.ndim() == 4 && x.dim(1) == w.dim(0) &&
            w.dim(1) == 1 && w.dim(2) == w.dim(3),
        "depthwise_conv2d: bad shapes " + x.shape_str() + " w " +
            w.shape_str());
  const int N = static_cast<int>(x.dim(0)), C = static_cast<int>(x.dim(1)),
            H = static_cast<int>(x.dim(2)), W = static_cast<int>(x.dim(3)),
            K = static_cast<int>(w.dim(2));
  const int OH = kernels::conv_out_dim(H, K, stride, pad);
  const int OW = kernels::conv_out_dim(W, K, stride, pad);
  check(OH > 0 && OW > 0, "depthwise_conv2d: output would be empty");
  Tensor<T> y({static_cast<std::size_t>(N), static_cast<std::size_t>(C),
               static_cast<std::size_t>(OH), static_cast<std::size_t>(OW)});
  kernels::depthwise_forward(x.data(), w.data(), y.data(), N, C, H, W, K,
                             stride, pad);
  if (Tape<T>::active() && (x.requires_grad() || w.requires_grad())) {
    y.set_requires_grad(true);
    Tensor<T> cx = x, cw = w, cy = y;
    Tape<T>::record([cx, cw, cy, N, C, H, W, K, stride, pad]() mutable {
      kernels::depthwise_backward(
          cx.data(), cw.data(), cy.grad(),
          cx.requires_grad() ? cx.grad() : nullptr,
          cw.requires_grad() ? cw.grad() : nullptr, N, C, H, W, K, stride,
          pad);
    });
  }
  return y;
}

// ---- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(),
        "add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T> c(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    c.data()[i] = a.data()[i] + b.data()[i];
  if (Tape<T>::active() && (a.requires_grad() || b.requires_grad())) {
    c.set_requires_grad(true);
    Tensor<T> ca = a, cb = b, cc = c;
    Tape<T>::record([ca, cb, cc]() mutable {
      if (ca.requires_grad())
        for (std::size_t i = 0; i < ca.size(); ++i)
          ca.grad()[i] += cc.grad()[i];
      if (cb.requires_grad())
        for (std::size_t i = 0; i < cb.size(); ++i)
          cb.grad()[i] += cc.grad()[i];
    });
  }
  return c;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(),
        "mul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T> c(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    c.data()[i] = a.data()[i] * b.data()[i];
  if (Tape<T>::active() && (a.requires_grad() || b.requires_grad())) {
    c.set_requires_grad(true);
    Tensor<T> ca = a, cb = b, cc = c;
    Tape<T>::record([ca, cb, cc]() mutable {
      if (ca.requires_grad())
        for (std::size_t i = 0; i < ca.size(); ++i)
          ca.grad()[i] += cc.grad()[i] * cb.data()[i];
      if (cb.requires_grad())
        for (std::size_t i = 0; i < cb.size(); ++i)
          cb.grad()[i] += cc.grad()[i] * ca.data()[i];
    });
  }
  return c;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    y.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  if (track(x)) {
    y.set_requires_grad(true);
    Tensor<T> cx = x, cy = y;
    Tape<T>::record([cx, cy]() mutable {
      for (std::size_t i = 0; i < cx.size(); ++i)
        if (cx.data()[i] > T(0)) cx.grad()[i] += cy.grad()[i];
    });
  }
  return y;
}

// x[N,C,H,W] scaled per channel by s[C].
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
  check(x.ndim() == 4 && s.ndim() == 1 && s.dim(0) == x.dim(1),
        "channel_scale: bad shapes " + x.shape_str() + " s " + s.shape_str());
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> y(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const T sc = s.data()[c];
      const T* xp = x.data() + (n * C + c) * HW;
      T* yp = y.data() + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) yp[i] = xp[i] * sc;
    }
  if (Tape<T>::active() && (x.requires_grad() || s.requires_grad())) {
    y.set_requires_grad(true);
    Tensor<T> cx = x, cs = s, cy = y;
    Tape<T>::record([cx, cs, cy, N, C, HW]() mutable {
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const T* dyp = cy.grad() + (n * C + c) * HW;
          if (cx.requires_grad()) {
            const T sc = cs.data()[c];
            T* dxp = cx.grad() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) dxp[i] += dyp[i] * sc;
          }
          if (cs.requires_grad()) {
            const T* xp = cx.data() + (n * C + c) * HW;
            T acc = T(0);
            for (std::size_t i = 0; i < HW; ++i) acc += dyp[i] * xp[i];
            cs.grad()[c] += acc;
          }
        }
    });
  }
  return y;
}

// ---- shape ops -------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<std::size_t> shape) {
  check(Tensor<T>::count(shape) == x.size(),
        "reshape: element count mismatch for " + x.shape_str());
  Tensor<T> y(std::move(shape));
  std::copy(x.data(), x.data() + x.size(), y.data());
  if (track(x)) {
    y.set_requires_grad(true);
    Tensor<T> cx = x, cy = y;
    Tape<T>::record([cx, cy]() mutable {
      for (std::size_t i = 0; i < cx.size(); ++i)
        cx.grad()[i] += cy.grad()[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.ndim() == 4 && b.ndim() == 4 && a.dim(0) == b.dim(0) &&
            a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
        "concat_channels: incompatible " + a.shape_str() + " vs " +
            b.shape_str());
  const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1),
                    HW = a.dim(2) * a.dim(3);
  Tensor<T> y({N, Ca + Cb, a.dim(2), a.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy(a.data() + n * Ca * HW, a.data() + (n + 1) * Ca * HW,
              y.data() + n * (Ca + Cb) * HW);
    std::copy(b.data() + n * Cb * HW, b.data() + (n + 1) * Cb * HW,
              y.data() + (n * (Ca + Cb) + Ca) * HW);
  }
  if (Tape<T>::active() && (a.requires_grad() || b.requires_grad())) {
    y.set_requires_grad(true);
    Tensor<T> ca = a, cb = b, cy = y;
    Tape<T>::record([ca, cb, cy, N, Ca, Cb, HW]() mutable {
      for (std::size_t n = 0; n < N; ++n) {
        if (ca.requires_grad()) {
          const T* g = cy.grad() + n * (Ca + Cb) * HW;
          T* da = ca.grad() + n * Ca * HW;
          for (std::size_t i = 0; i < Ca * HW; ++i) da[i] += g[i];
        }
        if (cb.requires_grad()) {
          const T* g = cy.grad() + (n * (Ca + Cb) + Ca) * HW;
          T* db = cb.grad() + n * Cb * HW;
          for (std::size_t i = 0; i < Cb * HW; ++i) db[i] += g[i];
        }
      }
    });
  }
  return y;
}

// ---- batchnorm -------------------------------------------------------------

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;  // [C]
  Tensor<T> running_var;   // [C]
  explicit BatchNormState(std::size_t C)
      : running_mean({C}), running_var({C}) {
    for (std::size_t c = 0; c < C; ++c) running_var.data()[c] = T(1);
  }
  BatchNormState() = default;
};

// Training mode normalizes with batch statistics (biased variance) and
// updates running stats in place; eval mode normalizes with running stats.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BatchNormState<T>& state,
                      bool training, T momentum = T(0.1),
                      T eps = T(1e-5)) {
  check(x.ndim() == 4 && gamma.ndim() == 1 && beta.ndim() == 1 &&
            gamma.dim(0) == x.dim(1) && beta.dim(0) == x.dim(1),
        "batchnorm2d: bad shapes " + x.shape_str());
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const std::size_t M = N * HW;
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  Tensor<T> invstd({C});
  for (std::size_t c = 0; c < C; ++c) {
    T mean, var;
    if (training) {
      T sum = T(0);
      for (std::size_t n = 0; n < N; ++n) {
        const T* xp = x.data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) sum += xp[i];
      }
      mean = sum / static_cast<T>(M);
      T vsum = T(0);
      for (std::size_t n = 0; n < N; ++n) {
        const T* xp = x.data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const T d = xp[i] - mean;
          vsum += d * d;
        }
      }
      var = vsum / static_cast<T>(M);
      state.running_mean.data()[c] =
          (T(1) - momentum) * state.running_mean.data()[c] + momentum * mean;
      state.running_var.data()[c] =
          (T(1) - momentum) * state.running_var.data()[c] + momentum * var;
    } else {
      mean = state.running_mean.data()[c];
      var = state.running_var.data()[c];
    }
    const T is = T(1) / std::sqrt(var + eps);
    invstd.data()[c] = is;
    const T g = gamma.data()[c], bt = beta.data()[c];
    for (std::size_t n = 0; n < N; ++n) {
      const T* xp = x.data() + (n * C + c) * HW;
      T* xh = xhat.data() + (n * C + c) * HW;
      T* yp = y.data() + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        xh[i] = (xp[i] - mean) * is;
        yp[i] = g * xh[i] + bt;
      }
    }
  }
  if (Tape<T>::active() &&
      (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    y.set_requires_grad(true);
    Tensor<T> cx = x, cg = gamma, cb = beta, cy = y, cxh = xhat,
              cis = invstd;
    Tape<T>::record([cx, cg, cb, cy, cxh, cis, N, C, HW, M,
                     training]() mutable {
      for (std::size_t c = 0; c < C; ++c) {
        T dgamma = T(0), dbeta = T(0);
        for (std::size_t n = 0; n < N; ++n) {
          const T* dyp = cy.grad() + (n * C + c) * HW;
          const T* xh = cxh.data() + (n * C + c) * HW;
          for (std::size_t i = 0; i < HW; ++i) {
            dgamma += dyp[i] * xh[i];
            dbeta += dyp[i];
          }
        }
        if (cg.requires_grad()) cg.grad()[c] += dgamma;
        if (cb.requires_grad()) cb.grad()[c] += dbeta;
        if (cx.requires_grad()) {
          const T g = cg.data()[c], is = cis.data()[c];
          if (training) {
            const T scale = g * is / static_cast<T>(M);
            for (std::size_t n = 0; n < N; ++n) {
              const T* dyp = cy.grad() + (n * C + c) * HW;
              const T* xh = cxh.data() + (n * C + c) * HW;
              T* dxp = cx.grad() + (n * C + c) * HW;
              for (std::size_t i = 0; i < HW; ++i)
                dxp[i] += scale * (static_cast<T>(M) * dyp[i] - dbeta -
                                   xh[i] * dgamma);
            }
          } else {
            for (std::size_t n = 0; n < N; ++n) {
              const T* dyp = cy.grad() + (n * C + c) * HW;
              T* dxp = cx.grad() + (n * C + c) * HW;
              for (std::size_t i = 0; i < HW; ++i) dxp[i] += g * is * dyp[i];
            }
          }
        }
      }
    });
  }
  return y;
}

// ---- pooling / dense -------------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  check(x.ndim() == 4, "global_avg_pool: need NCHW, got " + x.shape_str());
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> y({N, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const T* xp = x.data() + (n * C + c) * HW;
      T acc = T(0);
      for (std::size_t i = 0; i < HW; ++i) acc += xp[i];
      y.data()[n * C + c] = acc / static_cast<T>(HW);
    }
  if (track(x)) {
    y.set_requires_grad(true);
    Tensor<T> cx = x, cy = y;
    Tape<T>::record([cx, cy, N, C, HW]() mutable {
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const T g = cy.grad()[n * C + c] / static_cast<T>(HW);
          T* dxp = cx.grad() + (n * C + c) * HW;
          for (std::size_t i = 0; i < HW; ++i) dxp[i] += g;
        }
    });
  }
  return y;
}

// y[N,out] = x[N,in] * w[out,in]^T + b[out]
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  check(x.ndim() == 2 && w.ndim() == 2 && x.dim(1) == w.dim(1) &&
            b.ndim() == 1 && b.dim(0) == w.dim(0),
        "dense: bad shapes " + x.shape_str() + " w " + w.shape_str());
  const int N = static_cast<int>(x.dim(0)), in = static_cast<int>(x.dim(1)),
            out = static_cast<int>(w.dim(0));
  Tensor<T> y({x.dim(0), w.dim(0)});
  kernels::gemm_nt(x.data(), w.data(), y.data(), N, in, out);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < out; ++o)
      y.data()[static_cast<std::size_t>(n) * out + o] += b.data()[o];
  if (Tape<T>::active() &&
      (x.requires_grad() || w.requires_grad() || b.requires_grad())) {
    y.set_requires_grad(true);
    Tensor<T> cx = x, cw = w, cb = b, cy = y;
    Tape<T>::record([cx, cw, cb, cy, N, in, out]() mutable {
      if (cx.requires_grad())  // dX += dY * W
        kernels::gemm_nn(cy.grad(), cw.data(), cx.grad(), N, out, in, true);
      if (cw.requires_grad())  // dW += dY^T * X
        kernels::gemm_tn(cy.grad(), cx.data(), cw.grad(), out, N, in, true);
      if (cb.requires_grad())
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < out; ++o)
            cb.grad()[o] += cy.grad()[static_cast<std::size_t>(n) * out + o];
    });
  }
  return y;
}

// y[N,K] = x[N,K] + b[K], b broadcast across rows.
template <typename T>
Tensor<T> add_bias_rows(const Tensor<T>& x, const Tensor<T>& b) {
  check(x.ndim() == 2 && b.ndim() == 1 && b.dim(0) == x.dim(1),
        "add_bias_rows: bad shapes " + x.shape_str() + " b " + b.shape_str());
  const std::size_t N = x.dim(0), K = x.dim(1);
  Tensor<T> y(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k)
      y.data()[n * K + k] = x.data()[n * K + k] + b.data()[k];
  if (Tape<T>::active() && (x.requires_grad() || b.requires_grad())) {
    y.set_requires_grad(true);
    Tensor<T> cx = x, cb = b, cy = y;
    Tape<T>::record([cx, cb, cy, N, K]() mutable {
      if (cx.requires_grad())
        for (std::size_t i = 0; i < N * K; ++i) cx.grad()[i] += cy.grad()[i];
      if (cb.requires_grad())
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < K; ++k)
            cb.grad()[k] += cy.grad()[n * K + k];
    });
  }
  return y;
}

// ---- losses ----------------------------------------------------------------

// Row-wise softmax with max subtraction; writes probabilities into out.
template <typename T>
void softmax_rows(const T* logits, T* out, std::size_t rows,
                  std::size_t cols, T inv_temp = T(1)) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* lp = logits + r * cols;
    T* op = out + r * cols;
    T mx = lp[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, lp[c]);
    T sum = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      op[c] = std::exp((lp[c] - mx) * inv_temp);
      sum += op[c];
    }
    for (std::size_t c = 0; c < cols; ++c) op[c] /= sum;
  }
}

// Mean cross-entropy over the batch; labels are class indices.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                const std::vector<int>& labels) {
  check(logits.ndim() == 2 && labels.size() == logits.dim(0),
        "softmax_cross_entropy: bad shapes " + logits.shape_str());
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  for (int l : labels)
    check(l >= 0 && static_cast<std::size_t>(l) < K,
          "softmax_cross_entropy: label out of range");
  Tensor<T> probs({N, K});
  softmax_rows(logits.data(), probs.data(), N, K);
  T loss = T(0);
  for (std::size_t n = 0; n < N; ++n)
    loss -= std::log(std::max(probs.data()[n * K + labels[n]],
                              std::numeric_limits<T>::min()));
  Tensor<T> out({1});
  out.data()[0] = loss / static_cast<T>(N);
  if (track(logits)) {
    out.set_requires_grad(true);
    Tensor<T> cl = logits, cp = probs, co = out;
    std::vector<int> lab = labels;
    Tape<T>::record([cl, cp, co, lab, N, K]() mutable {
      const T g = co.grad()[0] / static_cast<T>(N);
      for (std::size_t n = 0; n < N; ++n) {
        T* dl = cl.grad() + n * K;
        const T* pp = cp.data() + n * K;
        for (std::size_t k = 0; k < K; ++k) dl[k] += g * pp[k];
        dl[lab[n]] -= g;
      }
    });
  }
  return out;
}

// (1-lambda)*CE(student, labels) + lambda*T^2*KL(softmax(teacher/T) ||
// softmax(student/T)), mean over the batch. Teacher logits are constants.
// lambda = 0 short-circuits to plain cross-entropy (bitwise).
template <typename T>
Tensor<T> distillation_loss(const Tensor<T>& student, const Tensor<T>& teacher,
                            const std::vector<int>& labels, T temperature,
                            T lambda) {
  if (lambda == T(0)) return softmax_cross_entropy(student, labels);
  check(student.shape() == teacher.shape(),
        "distillation_loss: student/teacher shape mismatch");
  check(temperature > T(0) && lambda >= T(0) && lambda <= T(1),
        "distillation_loss: bad temperature/lambda");
  const std::size_t N = student.dim(0), K = student.dim(1);
  for (int l : labels)
    check(l >= 0 && static_cast<std::size_t>(l) < K,
          "distillation_loss: label out of range");
  Tensor<T> ps({N, K}), psT({N, K}), ptT({N, K});
  softmax_rows(student.data(), ps.data(), N, K);
  softmax_rows(student.data(), psT.data(), N, K, T(1) / temperature);
  softmax_rows(teacher.data(), ptT.data(), N, K, T(1) / temperature);
  T ce = T(0), kl = T(0);
  for (std::size_t n = 0; n < N; ++n) {
    ce -= std::log(std::max(ps.data()[n * K + labels[n]],
                            std::numeric_limits<T>::min()));
    for (std::size_t k = 0; k < K; ++k) {
      const T pt = ptT.data()[n * K + k];
      if (pt > T(0))
        kl += pt * (std::log(pt) -
                    std::log(std::max(psT.data()[n * K + k],
                                      std::numeric_limits<T>::min())));
    }
  }
  Tensor<T> out({1});
  out.data()[0] = ((T(1) - lambda) * ce +
                   lambda * temperature * temperature * kl) /
                  static_cast<T>(N);
  if (track(student)) {
    out.set_requires_grad(true);
    Tensor<T> cs = student, cps = ps, cpsT = psT, cptT = ptT, co = out;
    std::vector<int> lab = labels;
    const T temp = temperature, lam = lambda;
    Tape<T>::record([cs, cps, cpsT, cptT, co, lab, N, K, temp,
                     lam]() mutable {
      const T g = co.grad()[0] / static_cast<T>(N);
      for (std::size_t n = 0; n < N; ++n) {
        T* dl = cs.grad() + n * K;
        for (std::size_t k = 0; k < K; ++k) {
          T d = (T(1) - lam) * cps.data()[n * K + k];
          d += lam * temp * (cpsT.data()[n * K + k] - cptT.data()[n * K + k]);
          dl[k] += g * d;
        }
        dl[lab[n]] -= g * (T(1) - lam);
      }
    });
  }
  return out;
}

// Mean squared error against a constant target.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  check(pred.shape() == target.shape(), "mse_loss: shape mismatch");
  T acc = T(0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred.data()[i] - target.data()[i];
    acc += d * d;
  }
  Tensor<T> out({1});
  out.data()[0] = acc / static_cast<T>(pred.size());
  if (track(pred)) {
    out.set_requires_grad(true);
    Tensor<T> cp = pred, ct = target, co = out;
    Tape<T>::record([cp, ct, co]() mutable {
      const T g = co.grad()[0] * T(2) / static_cast<T>(cp.size());
      for (std::size_t i = 0; i < cp.size(); ++i)
        cp.grad()[i] += g * (cp.data()[i] - ct.data()[i]);
    });
  }
  return out;
}

template <typename T>
int argmax_row(const Tensor<T>& logits, std::size_t row) {
  const std::size_t K = logits.dim(1);
  const T* p = logits.data() + row * K;
  int best = 0;
  for (std::size_t k = 1; k < K; ++k)
    if (p[k] > p[best]) best = static_cast<int>(k);
  return best;
}

}  // namespace stnet::ops
