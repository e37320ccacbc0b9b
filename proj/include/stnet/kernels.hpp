#pragma once

#include <cstddef>
#include <cstdint>

// Raw numeric kernels. Every kernel has a _serial reference implementation
// and an OpenMP-parallel variant; the unsuffixed name dispatches on the
// runtime switch. Parallel variants assign disjoint output elements to
// threads and keep each element's accumulation order identical to the serial
// code, so results are bit-identical at any thread count.
namespace stnet::kernels {

void set_parallel(bool on);
bool parallel_enabled();
int thread_count();

// C[m x n] = A[m x k] * B[k x n]; accumulate adds into C instead.
template <typename T>
void gemm_nn_serial(const T* A, const T* B, T* C, int m, int k, int n,
                    bool accumulate = false);
template <typename T>
void gemm_nn_parallel(const T* A, const T* B, T* C, int m, int k, int n,
                      bool accumulate = false);
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int m, int k, int n,
             bool accumulate = false);

// C[m x n] = A[m x k] * B[n x k]^T
template <typename T>
void gemm_nt_serial(const T* A, const T* B, T* C, int m, int k, int n,
                    bool accumulate = false);
template <typename T>
void gemm_nt_parallel(const T* A, const T* B, T* C, int m, int k, int n,
                      bool accumulate = false);
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, int m, int k, int n,
             bool accumulate = false);

// C[m x n] = A[k x m]^T * B[k x n]
template <typename T>
void gemm_tn_serial(const T* A, const T* B, T* C, int m, int k, int n,
                    bool accumulate = false);
template <typename T>
void gemm_tn_parallel(const T* A, const T* B, T* C, int m, int k, int n,
                      bool accumulate = false);
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int m, int k, int n,
             bool accumulate = false);

inline int conv_out_dim(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// x[C,H,W] -> cols[C*K*K, OH*OW], patch row index r = (c*K + ki)*K + kj.
// This layout matches a row-major [F, C*K*K] weight flatten, so a conv
// forward is gemm_nn(w_flat, cols).
template <typename T>
void im2col(const T* x, int C, int H, int W, int K, int stride, int pad,
            T* cols);
// Scatter-add of cols back into x (x must be zero-initialized by caller).
template <typename T>
void col2im(const T* cols, int C, int H, int W, int K, int stride, int pad,
            T* x);

// Depthwise conv, w[C,K,K]. y[C,OH,OW] per image.
template <typename T>
void depthwise_forward_serial(const T* x, const T* w, T* y, int N, int C,
                              int H, int W, int K, int stride, int pad);
template <typename T>
void depthwise_forward_parallel(const T* x, const T* w, T* y, int N, int C,
                                int H, int W, int K, int stride, int pad);
template <typename T>
void depthwise_forward(const T* x, const T* w, T* y, int N, int C, int H,
                       int W, int K, int stride, int pad);

// Accumulates into dx and dw (caller zero-initializes as needed).
template <typename T>
void depthwise_backward(const T* x, const T* w, const T* dy, T* dx, T* dw,
                        int N, int C, int H, int W, int K, int stride,
                        int pad);

// y[r] = sum_c t[r*cols + c] * v[c] with t in {-1,0,+1}: adds/subs only,
// no scalar multiplications.
template <typename T>
void ternary_matvec_serial(const std::int8_t* t, const T* v, T* y, int rows,
                           int cols);
template <typename T>
void ternary_matvec_parallel(const std::int8_t* t, const T* v, T* y, int rows,
                             int cols);
template <typename T>
void ternary_matvec(const std::int8_t* t, const T* v, T* y, int rows,
                    int cols);

}  // namespace stnet::kernels
