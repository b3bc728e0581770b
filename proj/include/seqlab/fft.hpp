#pragma once

#include <complex>
#include <unordered_map>
#include <vector>

#include "seqlab/tensor.hpp"

namespace seqlab::fft {

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

namespace detail {

// Twiddle table for size n: w[k] = exp(-2*pi*i*k/n), k < n/2.
template <class T>
const std::vector<std::complex<T>>& twiddles(std::size_t n) {
    static thread_local std::unordered_map<std::size_t, std::vector<std::complex<T>>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<std::complex<T>> w(n / 2);
    const double step = -2.0 * M_PI / static_cast<double>(n);
    for (std::size_t k = 0; k < n / 2; ++k) {
        double a = step * static_cast<double>(k);
        w[k] = std::complex<T>(static_cast<T>(std::cos(a)), static_cast<T>(std::sin(a)));
    }
    return cache.emplace(n, std::move(w)).first->second;
}

inline std::uint32_t reverse_bits(std::uint32_t x, int bits) {
    std::uint32_t r = 0;
    for (int i = 0; i < bits; ++i) {
        r = (r << 1) | (x & 1u);
        x >>= 1;
    }
    return r;
}

// Bit-reversal permutation table for size n, cached per thread like twiddles.
inline const std::vector<std::uint32_t>& reversal_table(std::size_t n, int bits) {
    static thread_local std::unordered_map<std::size_t, std::vector<std::uint32_t>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<std::uint32_t> r(n);
    for (std::uint32_t i = 0; i < n; ++i) r[i] = reverse_bits(i, bits);
    return cache.emplace(n, std::move(r)).first->second;
}

}  // namespace detail

/// Complex product in explicit real arithmetic (avoids the checked libcall).
template <class T>
inline std::complex<T> cmul(const std::complex<T>& a, const std::complex<T>& b) {
    return std::complex<T>(a.real() * b.real() - a.imag() * b.imag(),
                           a.real() * b.imag() + a.imag() * b.real());
}

/// In-place iterative radix-2 FFT over a power-of-two length.
template <class T>
void fft_pow2(std::complex<T>* a, std::size_t n, bool inverse) {
    require((n & (n - 1)) == 0 && n >= 1, "fft: length must be a power of two");
    if (n == 1) return;
    int bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    const auto& rev = detail::reversal_table(n, bits);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t j = rev[i];
        if (i < j) std::swap(a[i], a[j]);
    }
    const auto& w = detail::twiddles<T>(n);
    // butterflies in explicit real arithmetic: the std::complex operator*
    // otherwise lowers to a libcall with NaN-recovery branches
    const T conj_sign = inverse ? T(-1) : T(1);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len >> 1;
        const std::size_t stride = n / len;
        for (std::size_t start = 0; start < n; start += len) {
            for (std::size_t k = 0; k < half; ++k) {
                const std::complex<T> tw = w[k * stride];
                const T wr = tw.real();
                const T wi = conj_sign * tw.imag();
                std::complex<T>& ua = a[start + k];
                std::complex<T>& va = a[start + k + half];
                const T br = va.real(), bi = va.imag();
                const T vr = br * wr - bi * wi;
                const T vi = br * wi + bi * wr;
                const T ur = ua.real(), ui = ua.imag();
                ua = std::complex<T>(ur + vr, ui + vi);
                va = std::complex<T>(ur - vr, ui - vi);
            }
        }
    }
    if (inverse) {
        const T inv_n = T(1) / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) a[i] *= inv_n;
    }
}

/// Spectrum of a real signal zero-padded to length n.
template <class T>
std::vector<std::complex<T>> spectrum(const T* x, std::size_t len, std::size_t n) {
    std::vector<std::complex<T>> a(n);
    for (std::size_t i = 0; i < len; ++i) a[i] = std::complex<T>(x[i], T(0));
    fft_pow2(a.data(), n, false);
    return a;
}

/// Packs two real signals into one complex FFT and separates their spectra.
template <class T>
void spectrum_pair(const T* x0, const T* x1, std::size_t len, std::size_t n,
                   std::vector<std::complex<T>>& s0, std::vector<std::complex<T>>& s1,
                   std::vector<std::complex<T>>& scratch) {
    scratch.assign(n, std::complex<T>(T(0), T(0)));
    for (std::size_t i = 0; i < len; ++i)
        scratch[i] = std::complex<T>(x0[i], x1 ? x1[i] : T(0));
    fft_pow2(scratch.data(), n, false);
    s0.resize(n);
    s1.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::complex<T> z = scratch[k];
        const std::complex<T> zc = std::conj(scratch[(n - k) & (n - 1)]);
        s0[k] = (z + zc) * T(0.5);
        // -0.5i * (z - zc), expanded to stay in real arithmetic
        const std::complex<T> d = z - zc;
        s1[k] = std::complex<T>(T(0.5) * d.imag(), T(-0.5) * d.real());
    }
}

/// Inverse transform of two spectra of real signals, packed in one pass.
template <class T>
void inverse_pair(const std::vector<std::complex<T>>& s0,
                  const std::vector<std::complex<T>>& s1, std::size_t n,
                  T* y0, std::size_t out_len0, T* y1, std::size_t out_len1,
                  std::vector<std::complex<T>>& scratch) {
    scratch.resize(n);
    for (std::size_t k = 0; k < n; ++k)  // s0 + i*s1, expanded
        scratch[k] = std::complex<T>(s0[k].real() - s1[k].imag(),
                                     s0[k].imag() + s1[k].real());
    fft_pow2(scratch.data(), n, true);
    for (std::size_t i = 0; i < out_len0; ++i) y0[i] = scratch[i].real();
    if (y1)
        for (std::size_t i = 0; i < out_len1; ++i) y1[i] = scratch[i].imag();
}

/// First L samples of the linear convolution x (*) k, computed circularly over
/// a power-of-two length >= L + Lk so the wrap-around never aliases them.
template <class T>
void causal_convolve(const T* x, std::size_t l, const T* k, std::size_t lk, T* y) {
    require(l >= 1, "causal_convolve: empty signal");
    const std::size_t n = next_pow2(l + lk);
    auto xs = spectrum(x, l, n);
    auto ks = spectrum(k, lk, n);
    for (std::size_t i = 0; i < n; ++i) xs[i] = cmul(xs[i], ks[i]);
    fft_pow2(xs.data(), n, true);
    for (std::size_t i = 0; i < l; ++i) y[i] = xs[i].real();
}

/// Tensor form over the trailing axis; leading axes of x and k must match.
template <class T>
Tensor<T> fft_circular_convolve(const Tensor<T>& x, const Tensor<T>& k) {
    require(x.ndim() >= 1 && k.ndim() == x.ndim(), "fft_circular_convolve: rank mismatch");
    const std::int64_t l = x.shape.back();
    const std::int64_t lk = k.shape.back();
    require(l >= 1, "fft_circular_convolve: L = 0 rejected");
    const std::int64_t rows = x.numel() / l;
    require(k.numel() / lk == rows, "fft_circular_convolve: leading dims mismatch");
    Tensor<T> y(x.shape);
    for (std::int64_t r = 0; r < rows; ++r)
        causal_convolve(x.data.data() + r * l, static_cast<std::size_t>(l),
                        k.data.data() + r * lk, static_cast<std::size_t>(lk),
                        y.data.data() + r * l);
    return y;
}

}  // namespace seqlab::fft
