#include "disbench/fft.hpp"

#include <cmath>

namespace disbench {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<cplx>& a, bool inverse) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {  // bit-reversal permutation
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? kTwoPi : -kTwoPi) / static_cast<double>(len);
        const cplx wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                const cplx u = a[i + k];
                const cplx v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

void dft_naive(std::vector<cplx>& a, bool inverse) {
    const size_t n = a.size();
    std::vector<cplx> out(n);
    const double sign = inverse ? 1.0 : -1.0;
    for (size_t k = 0; k < n; ++k) {
        cplx acc(0.0, 0.0);
        for (size_t t = 0; t < n; ++t) {
            const double ang = sign * kTwoPi * static_cast<double>(k * t % n) / static_cast<double>(n);
            acc += a[t] * cplx(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    a = std::move(out);
}

}  // namespace

void dft_1d(std::vector<cplx>& a, bool inverse) {
    if (a.size() <= 1) return;
    if (is_pow2(a.size()))
        fft_radix2(a, inverse);
    else
        dft_naive(a, inverse);
    if (inverse) {
        const double inv_n = 1.0 / static_cast<double>(a.size());
        for (auto& x : a) x *= inv_n;
    }
}

void dft_2d(std::vector<cplx>& a, int h, int w, bool inverse) {
    std::vector<cplx> line(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) line[x] = a[static_cast<size_t>(y) * w + x];
        dft_1d(line, inverse);
        for (int x = 0; x < w; ++x) a[static_cast<size_t>(y) * w + x] = line[x];
    }
    line.assign(static_cast<size_t>(h), cplx());
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) line[y] = a[static_cast<size_t>(y) * w + x];
        dft_1d(line, inverse);
        for (int y = 0; y < h; ++y) a[static_cast<size_t>(y) * w + x] = line[y];
    }
}

}  // namespace disbench
