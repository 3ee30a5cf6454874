#pragma once

#include <cstddef>

#ifdef UNETMER_USE_CBLAS
#include <cblas.h>
#endif

namespace unetmer::nn {

// Row-major C[m,n] = alpha * op(A) * op(B) + beta * C.

#ifdef UNETMER_USE_CBLAS

inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 double alpha, const double* a, std::size_t lda, const double* b,
                 std::size_t ldb, double beta, double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
              beta, c, static_cast<int>(ldc));
}

inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
                 float beta, float* c, std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
              beta, c, static_cast<int>(ldc));
}

#else

// Reference kernel, used only when no CBLAS is available at configure time.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
  auto at = [&](std::size_t i, std::size_t j) { return trans_a ? a[j * lda + i] : a[i * lda + j]; };
  auto bt = [&](std::size_t i, std::size_t j) { return trans_b ? b[j * ldb + i] : b[i * ldb + j]; };
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += at(i, p) * bt(p, j);
      c[i * ldc + j] = alpha * acc + beta * c[i * ldc + j];
    }
}

#endif

}  // namespace unetmer::nn
