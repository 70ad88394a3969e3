#include "dyncap/fft.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dyncap::fft {

namespace {

bool power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace

void transform(std::vector<double>& re, std::vector<double>& im) {
    const std::size_t n = re.size();
    if (im.size() != n) throw std::invalid_argument("fft: component lengths differ");
    if (!power_of_two(n)) throw std::invalid_argument("fft: length must be a power of two");
    if (n == 1) return;

    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }

    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (std::size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::size_t a = i + k, b = i + k + len / 2;
                const double tr = re[b] * cr - im[b] * ci;
                const double ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

std::vector<double> hann(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                     static_cast<double>(n)));
    }
    return w;
}

std::vector<double> magnitude(const std::vector<double>& frame) {
    std::vector<double> re = frame;
    std::vector<double> im(frame.size(), 0.0);
    transform(re, im);
    std::vector<double> mag(frame.size() / 2 + 1);
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::hypot(re[i], im[i]);
    return mag;
}

}  // namespace dyncap::fft
