#include "dyncap/kernels.hpp"

#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dyncap::kernels {

namespace {

thread_local bool g_serial = false;

// Below this many multiply-adds the thread spawn costs more than the loop.
constexpr std::size_t kParallelCutoff = 64 * 1024;

bool use_parallel(std::size_t work, std::size_t rows) {
#ifdef _OPENMP
    return !g_serial && work >= kParallelCutoff && rows >= 2;
#else
    (void)work;
    (void)rows;
    return false;
#endif
}

inline void row_nn(const double* a, const double* b, double* c,
                   std::size_t i, std::size_t k, std::size_t n) {
    double* ci = c + i * n;
    std::memset(ci, 0, n * sizeof(double));
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
        const double av = ai[p];
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
}

inline void row_tn(const double* a, const double* b, double* c,
                   std::size_t i, std::size_t m, std::size_t k, std::size_t n) {
    double* ci = c + i * n;
    std::memset(ci, 0, n * sizeof(double));
    for (std::size_t p = 0; p < k; ++p) {
        const double av = a[p * m + i];
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
}

inline void row_nt(const double* a, const double* b, double* c,
                   std::size_t i, std::size_t k, std::size_t n) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b + j * k;
        double sum = 0.0;
        for (std::size_t p = 0; p < k; ++p) sum += ai[p] * bj[p];
        ci[j] = sum;
    }
}

}  // namespace

void set_serial_in_this_thread(bool serial) { g_serial = serial; }
bool serial_in_this_thread() { return g_serial; }

void matmul_nn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) row_nn(a, b, c, i, k, n);
}

void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    if (!use_parallel(m * k * n, m)) {
        matmul_nn_serial(a, b, c, m, k, n);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        row_nn(a, b, c, static_cast<std::size_t>(i), k, n);
    }
#endif
}

void matmul_tn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) row_tn(a, b, c, i, m, k, n);
}

void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    if (!use_parallel(m * k * n, m)) {
        matmul_tn_serial(a, b, c, m, k, n);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        row_tn(a, b, c, static_cast<std::size_t>(i), m, k, n);
    }
#endif
}

void matmul_nt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) row_nt(a, b, c, i, k, n);
}

void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    if (!use_parallel(m * k * n, m)) {
        matmul_nt_serial(a, b, c, m, k, n);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        row_nt(a, b, c, static_cast<std::size_t>(i), k, n);
    }
#endif
}

}  // namespace dyncap::kernels
