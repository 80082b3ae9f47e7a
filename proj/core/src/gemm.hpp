#pragma once

#include <cstddef>

// Row-major dense products used by conv2d and linear. Each output element is
// accumulated in increasing order of the inner index, so results do not
// depend on how the loops are blocked.

namespace swgrid::detail {

/// C(M,N) += A(M,K) * B(K,N)
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* __restrict__ a, const T* __restrict__ b,
             T* __restrict__ c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C(M,N) += A(M,K) * B(N,K)^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* __restrict__ a, const T* __restrict__ b,
             T* __restrict__ c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

/// C(M,N) += A(K,M)^T * B(K,N)
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* __restrict__ a, const T* __restrict__ b,
             T* __restrict__ c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace swgrid::detail
