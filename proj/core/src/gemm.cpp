#include "csunet/gemm.hpp"

#include <cstdlib>
#include <string>

#ifdef CSUNET_HAVE_BLAS
extern "C" {
void sgemm_(const char*, const char*, const int*, const int*, const int*, const float*,
            const float*, const int*, const float*, const int*, const float*, float*, const int*);
void dgemm_(const char*, const char*, const int*, const int*, const int*, const double*,
            const double*, const int*, const double*, const int*, const double*, double*,
            const int*);
void openblas_set_num_threads(int) __attribute__((weak));
}
#endif

namespace csunet {
namespace {

template <typename T>
void gemm_fallback(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha,
                   const T* a, int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * ldc;
        if (beta == T(0)) {
            for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
        } else if (beta != T(1)) {
            for (int64_t j = 0; j < n; ++j) crow[j] *= beta;
        }
        for (int64_t p = 0; p < k; ++p) {
            T av = alpha * (trans_a ? a[p * lda + i] : a[i * lda + p]);
            const T* brow = trans_b ? nullptr : b + p * ldb;
            if (trans_b) {
                for (int64_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
            } else {
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

#ifdef CSUNET_HAVE_BLAS
// Row-major via the column-major Fortran interface: C^T = op(B)^T op(A)^T.
template <typename T, typename F>
void gemm_blas(F blas, bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha,
               const T* a, int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
    const char ta = trans_a ? 'T' : 'N';
    const char tb = trans_b ? 'T' : 'N';
    const int mi = int(n), ni = int(m), ki = int(k);
    const int ldbi = int(ldb), ldai = int(lda), ldci = int(ldc);
    blas(&tb, &ta, &mi, &ni, &ki, &alpha, b, &ldbi, a, &ldai, &beta, c, &ldci);
}
#endif

}  // namespace

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha,
          const float* a, int64_t lda, const float* b, int64_t ldb, float beta, float* c,
          int64_t ldc) {
    if (m == 0 || n == 0) return;
#ifdef CSUNET_HAVE_BLAS
    gemm_blas<float>(sgemm_, trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
#else
    gemm_fallback(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
#endif
}

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, int64_t lda, const double* b, int64_t ldb, double beta, double* c,
          int64_t ldc) {
    if (m == 0 || n == 0) return;
#ifdef CSUNET_HAVE_BLAS
    gemm_blas<double>(dgemm_, trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
#else
    gemm_fallback(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
#endif
}

void pin_blas_threads() {
    // CSUNET_THREADS controls BLAS parallelism; default 1 for reproducibility.
    int n = 1;
    if (const char* env = getenv("CSUNET_THREADS")) {
        n = std::atoi(env);
        if (n < 1) n = 1;
    }
    const std::string ns = std::to_string(n);
    setenv("OPENBLAS_NUM_THREADS", ns.c_str(), 1);
    setenv("OMP_NUM_THREADS", ns.c_str(), 1);
#ifdef CSUNET_HAVE_BLAS
    if (openblas_set_num_threads) openblas_set_num_threads(n);
#endif
}

}  // namespace csunet
