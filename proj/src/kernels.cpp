#include "stnet/kernels.hpp"

#include <omp.h>

#include <atomic>
#include <cstring>

namespace stnet::kernels {

namespace {
std::atomic<bool> g_parallel{true};
}

void set_parallel(bool on) { g_parallel.store(on); }
bool parallel_enabled() { return g_parallel.load(); }
int thread_count() { return parallel_enabled() ? omp_get_max_threads() : 1; }

// ---- gemm ------------------------------------------------------------------

template <typename T>
static inline void gemm_nn_row(const T* A, const T* B, T* C, int i, int k,
                               int n, bool accumulate) {
  T* Ci = C + static_cast<std::size_t>(i) * n;
  if (!accumulate)
    for (int j = 0; j < n; ++j) Ci[j] = T(0);
  const T* Ai = A + static_cast<std::size_t>(i) * k;
  for (int kk = 0; kk < k; ++kk) {
    const T a = Ai[kk];
    if (a == T(0)) continue;
    const T* Bk = B + static_cast<std::size_t>(kk) * n;
    for (int j = 0; j < n; ++j) Ci[j] += a * Bk[j];
  }
}

template <typename T>
void gemm_nn_serial(const T* A, const T* B, T* C, int m, int k, int n,
                    bool accumulate) {
  for (int i = 0; i < m; ++i) gemm_nn_row(A, B, C, i, k, n, accumulate);
}

template <typename T>
void gemm_nn_parallel(const T* A, const T* B, T* C, int m, int k, int n,
                      bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) gemm_nn_row(A, B, C, i, k, n, accumulate);
}

template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int m, int k, int n,
             bool accumulate) {
  if (parallel_enabled())
    gemm_nn_parallel(A, B, C, m, k, n, accumulate);
  else
    gemm_nn_serial(A, B, C, m, k, n, accumulate);
}

template <typename T>
static inline void gemm_nt_row(const T* A, const T* B, T* C, int i, int k,
                               int n, bool accumulate) {
  const T* Ai = A + static_cast<std::size_t>(i) * k;
  T* Ci = C + static_cast<std::size_t>(i) * n;
  for (int j = 0; j < n; ++j) {
    const T* Bj = B + static_cast<std::size_t>(j) * k;
    T acc = T(0);
    for (int kk = 0; kk < k; ++kk) acc += Ai[kk] * Bj[kk];
    if (accumulate)
      Ci[j] += acc;
    else
      Ci[j] = acc;
  }
}

template <typename T>
void gemm_nt_serial(const T* A, const T* B, T* C, int m, int k, int n,
                    bool accumulate) {
  for (int i = 0; i < m; ++i) gemm_nt_row(A, B, C, i, k, n, accumulate);
}

template <typename T>
void gemm_nt_parallel(const T* A, const T* B, T* C, int m, int k, int n,
                      bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) gemm_nt_row(A, B, C, i, k, n, accumulate);
}

template <typename T>
void gemm_nt(const T* A, const T* B, T* C, int m, int k, int n,
             bool accumulate) {
  if (parallel_enabled())
    gemm_nt_parallel(A, B, C, m, k, n, accumulate);
  else
    gemm_nt_serial(A, B, C, m, k, n, accumulate);
}

template <typename T>
static inline void gemm_tn_row(const T* A, const T* B, T* C, int i, int k,
                               int m, int n, bool accumulate) {
  T* Ci = C + static_cast<std::size_t>(i) * n;
  if (!accumulate)
    for (int j = 0; j < n; ++j) Ci[j] = T(0);
  for (int kk = 0; kk < k; ++kk) {
    const T a = A[static_cast<std::size_t>(kk) * m + i];
    if (a == T(0)) continue;
    const T* Bk = B + static_cast<std::size_t>(kk) * n;
    for (int j = 0; j < n; ++j) Ci[j] += a * Bk[j];
  }
}

template <typename T>
void gemm_tn_serial(const T* A, const T* B, T* C, int m, int k, int n,
                    bool accumulate) {
  for (int i = 0; i < m; ++i) gemm_tn_row(A, B, C, i, k, m, n, accumulate);
}

template <typename T>
void gemm_tn_parallel(const T* A, const T* B, T* C, int m, int k, int n,
                      bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) gemm_tn_row(A, B, C, i, k, m, n, accumulate);
}

template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int m, int k, int n,
             bool accumulate) {
  if (parallel_enabled())
    gemm_tn_parallel(A, B, C, m, k, n, accumulate);
  else
    gemm_tn_serial(A, B, C, m, k, n, accumulate);
}

// ---- im2col ----------------------------------------------------------------

template <typename T>
void im2col(const T* x, int C, int H, int W, int K, int stride, int pad,
            T* cols) {
  const int OH = conv_out_dim(H, K, stride, pad);
  const int OW = conv_out_dim(W, K, stride, pad);
  const int P = OH * OW;
  for (int c = 0; c < C; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int ki = 0; ki < K; ++ki) {
      for (int kj = 0; kj < K; ++kj) {
        T* row = cols + (static_cast<std::size_t>(c) * K * K + ki * K + kj) * P;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < OW; ++ox) row[oy * OW + ox] = T(0);
            continue;
          }
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride - pad + kj;
            row[oy * OW + ox] =
                (ix < 0 || ix >= W) ? T(0) : xc[iy * W + ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int C, int H, int W, int K, int stride, int pad,
            T* x) {
  const int OH = conv_out_dim(H, K, stride, pad);
  const int OW = conv_out_dim(W, K, stride, pad);
  const int P = OH * OW;
  for (int c = 0; c < C; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int ki = 0; ki < K; ++ki) {
      for (int kj = 0; kj < K; ++kj) {
        const T* row =
            cols + (static_cast<std::size_t>(c) * K * K + ki * K + kj) * P;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix < 0 || ix >= W) continue;
            xc[iy * W + ix] += row[oy * OW + ox];
          }
        }
      }
    }
  }
}

// ---- depthwise -------------------------------------------------------------

template <typename T>
static inline void depthwise_channel(const T* x, const T* w, T* y, int n,
                                     int c, int C, int H, int W, int K,
                                     int stride, int pad) {
  const int OH = conv_out_dim(H, K, stride, pad);
  const int OW = conv_out_dim(W, K, stride, pad);
  const T* xc = x + (static_cast<std::size_t>(n) * C + c) * H * W;
  const T* wc = w + static_cast<std::size_t>(c) * K * K;
  T* yc = y + (static_cast<std::size_t>(n) * C + c) * OH * OW;
  for (int oy = 0; oy < OH; ++oy) {
    for (int ox = 0; ox < OW; ++ox) {
      T acc = T(0);
      for (int ki = 0; ki < K; ++ki) {
        const int iy = oy * stride - pad + ki;
        if (iy < 0 || iy >= H) continue;
        for (int kj = 0; kj < K; ++kj) {
          const int ix = ox * stride - pad + kj;
          if (ix < 0 || ix >= W) continue;
          acc += wc[ki * K + kj] * xc[iy * W + ix];
        }
      }
      yc[oy * OW + ox] = acc;
    }
  }
}

template <typename T>
void depthwise_forward_serial(const T* x, const T* w, T* y, int N, int C,
                              int H, int W, int K, int stride, int pad) {
  for (int nc = 0; nc < N * C; ++nc)
    depthwise_channel(x, w, y, nc / C, nc % C, C, H, W, K, stride, pad);
}

template <typename T>
void depthwise_forward_parallel(const T* x, const T* w, T* y, int N, int C,
                                int H, int W, int K, int stride, int pad) {
#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < N * C; ++nc)
    depthwise_channel(x, w, y, nc / C, nc % C, C, H, W, K, stride, pad);
}

template <typename T>
void depthwise_forward(const T* x, const T* w, T* y, int N, int C, int H,
                       int W, int K, int stride, int pad) {
  if (parallel_enabled())
    depthwise_forward_parallel(x, w, y, N, C, H, W, K, stride, pad);
  else
    depthwise_forward_serial(x, w, y, N, C, H, W, K, stride, pad);
}

template <typename T>
void depthwise_backward(const T* x, const T* w, const T* dy, T* dx, T* dw,
                        int N, int C, int H, int W, int K, int stride,
                        int pad) {
  const int OH = conv_out_dim(H, K, stride, pad);
  const int OW = conv_out_dim(W, K, stride, pad);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* xc = x + (static_cast<std::size_t>(n) * C + c) * H * W;
      const T* dyc = dy + (static_cast<std::size_t>(n) * C + c) * OH * OW;
      const T* wc = w + static_cast<std::size_t>(c) * K * K;
      T* dxc = dx ? dx + (static_cast<std::size_t>(n) * C + c) * H * W
                  : nullptr;
      T* dwc = dw ? dw + static_cast<std::size_t>(c) * K * K : nullptr;
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          const T g = dyc[oy * OW + ox];
          if (g == T(0)) continue;
          for (int ki = 0; ki < K; ++ki) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= H) continue;
            for (int kj = 0; kj < K; ++kj) {
              const int ix = ox * stride - pad + kj;
              if (ix < 0 || ix >= W) continue;
              if (dwc) dwc[ki * K + kj] += g * xc[iy * W + ix];
              if (dxc) dxc[iy * W + ix] += g * wc[ki * K + kj];
            }
          }
        }
      }
    }
  }
}

// ---- ternary ---------------------------------------------------------------

template <typename T>
static inline void ternary_row(const std::int8_t* t, const T* v, T* y, int r,
                               int cols) {
  const std::int8_t* tr = t + static_cast<std::size_t>(r) * cols;
  T acc = T(0);
  for (int c = 0; c < cols; ++c) {
    const std::int8_t e = tr[c];
    if (e > 0)
      acc += v[c];
    else if (e < 0)
      acc -= v[c];
  }
  y[r] = acc;
}

template <typename T>
void ternary_matvec_serial(const std::int8_t* t, const T* v, T* y, int rows,
                           int cols) {
  for (int r = 0; r < rows; ++r) ternary_row(t, v, y, r, cols);
}

template <typename T>
void ternary_matvec_parallel(const std::int8_t* t, const T* v, T* y, int rows,
                             int cols) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) ternary_row(t, v, y, r, cols);
}

template <typename T>
void ternary_matvec(const std::int8_t* t, const T* v, T* y, int rows,
                    int cols) {
  if (parallel_enabled())
    ternary_matvec_parallel(t, v, y, rows, cols);
  else
    ternary_matvec_serial(t, v, y, rows, cols);
}

// ---- instantiations --------------------------------------------------------

#define STNET_INSTANTIATE(T)                                                  \
  template void gemm_nn_serial<T>(const T*, const T*, T*, int, int, int,     \
                                  bool);                                      \
  template void gemm_nn_parallel<T>(const T*, const T*, T*, int, int, int,   \
                                    bool);                                    \
  template void gemm_nn<T>(const T*, const T*, T*, int, int, int, bool);     \
  template void gemm_nt_serial<T>(const T*, const T*, T*, int, int, int,     \
                                  bool);                                      \
  template void gemm_nt_parallel<T>(const T*, const T*, T*, int, int, int,   \
                                    bool);                                    \
  template void gemm_nt<T>(const T*, const T*, T*, int, int, int, bool);     \
  template void gemm_tn_serial<T>(const T*, const T*, T*, int, int, int,     \
                                  bool);                                      \
  template void gemm_tn_parallel<T>(const T*, const T*, T*, int, int, int,   \
                                    bool);                                    \
  template void gemm_tn<T>(const T*, const T*, T*, int, int, int, bool);     \
  template void im2col<T>(const T*, int, int, int, int, int, int, T*);       \
  template void col2im<T>(const T*, int, int, int, int, int, int, T*);       \
  template void depthwise_forward_serial<T>(const T*, const T*, T*, int, int, \
                                            int, int, int, int, int);        \
  template void depthwise_forward_parallel<T>(const T*, const T*, T*, int,   \
                                              int, int, int, int, int, int); \
  template void depthwise_forward<T>(const T*, const T*, T*, int, int, int,  \
                                     int, int, int, int);                    \
  template void depthwise_backward<T>(const T*, const T*, const T*, T*, T*,  \
                                      int, int, int, int, int, int, int);    \
  template void ternary_matvec_serial<T>(const std::int8_t*, const T*, T*,   \
                                         int, int);                          \
  template void ternary_matvec_parallel<T>(const std::int8_t*, const T*, T*, \
                                           int, int);                        \
  template void ternary_matvec<T>(const std::int8_t*, const T*, T*, int, int);

STNET_INSTANTIATE(float)
STNET_INSTANTIATE(double)

#undef STNET_INSTANTIATE

}  // namespace stnet::kernels
