#pragma once

// Row-major single-threaded GEMM kernels. All of them accumulate into C.
// The inner loops are unit-stride axpy forms so the compiler can vectorize
// them without reassociating reductions; results are bit-reproducible.

#include <cstddef>
#include <vector>

namespace saig::nn::detail {

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A, const T* __restrict B,
             T* __restrict C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c_row = C + i * N;
    const T* a_row = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T a = a_row[k];
      if (a == T{0}) continue;
      const T* b_row = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c_row[j] += a * b_row[j];
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A, const T* __restrict B,
             T* __restrict C) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* a_row = A + k * M;
    const T* b_row = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T a = a_row[i];
      if (a == T{0}) continue;
      T* c_row = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c_row[j] += a * b_row[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A, const T* __restrict B,
             T* __restrict C) {
  std::vector<T> bt(K * N);
  for (std::size_t j = 0; j < N; ++j) {
    for (std::size_t k = 0; k < K; ++k) bt[k * N + j] = B[j * K + k];
  }
  gemm_nn(M, N, K, A, bt.data(), C);
}

}  // namespace saig::nn::detail
