#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "dyncap/kernels.hpp"
#include "dyncap/rng.hpp"
#include "dyncap/tensor.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) {
        fn();
    }
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
    struct Case {
        std::size_t m, k, n;
        int reps;
    };
    const Case cases[] = {
        {64, 257, 64, 50},
        {128, 512, 256, 20},
        {256, 256, 256, 20},
        {512, 512, 512, 5},
    };

    std::printf("matmul_nn: serial vs parallel (row-partitioned)\n");
    std::printf("%8s %8s %8s %12s %12s %9s %12s\n", "m", "k", "n", "serial ms", "parallel ms",
                "speedup", "max |diff|");
    for (const Case& c : cases) {
        const dyncap::RngStream rng(7, 0);
        dyncap::Tensor a({c.m, c.k});
        dyncap::Tensor b({c.k, c.n});
        for (std::size_t i = 0; i < a.numel(); ++i) {
            a[i] = rng.normal(i);
        }
        for (std::size_t i = 0; i < b.numel(); ++i) {
            b[i] = rng.normal(a.numel() + i);
        }
        dyncap::Tensor out_serial({c.m, c.n});
        dyncap::Tensor out_parallel({c.m, c.n});

        const double serial_ms = time_ms(
            [&] {
                dyncap::kernels::matmul_nn_serial(a.data().data(), b.data().data(),
                                                  out_serial.data().data(), c.m, c.k, c.n);
            },
            c.reps);
        const double parallel_ms = time_ms(
            [&] {
                dyncap::kernels::matmul_nn(a.data().data(), b.data().data(),
                                           out_parallel.data().data(), c.m, c.k, c.n);
            },
            c.reps);

        double max_diff = 0.0;
        for (std::size_t i = 0; i < out_serial.numel(); ++i) {
            max_diff = std::max(max_diff, std::fabs(out_serial[i] - out_parallel[i]));
        }
        std::printf("%8zu %8zu %8zu %12.3f %12.3f %8.2fx %12.3g\n", c.m, c.k, c.n, serial_ms,
                    parallel_ms, serial_ms / parallel_ms, max_diff);
    }
    return 0;
}
