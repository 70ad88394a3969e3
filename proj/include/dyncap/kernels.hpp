#pragma once

#include <cstddef>

namespace dyncap::kernels {

// Dense matmul kernels. Each comes in a serial reference version and an
// OpenMP version parallelized over output rows. The parallel versions
// accumulate every output element in the same order as the serial ones,
// so results are bitwise identical regardless of thread count.
//
// C must not alias A or B. C is overwritten.

// C(m,n) = A(m,k) * B(k,n)
void matmul_nn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);

// C(m,n) = A(k,m)^T * B(k,n)
void matmul_tn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);

// C(m,n) = A(m,k) * B(n,k)^T
void matmul_nt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);

// Forces the calling thread's kernels into the serial path. Sweep worker
// threads set this so OpenMP teams are not spawned from inside an already
// parallel grid.
void set_serial_in_this_thread(bool serial);
bool serial_in_this_thread();

}  // namespace dyncap::kernels
