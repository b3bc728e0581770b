#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "seqlab/fft.hpp"

using namespace seqlab;

namespace {

// independent O(L*Lk) oracle for the first L samples of x (*) k
template <class T>
Tensor<T> direct_convolve(const Tensor<T>& x, const Tensor<T>& k) {
    const std::int64_t l = x.shape.back();
    const std::int64_t lk = k.shape.back();
    const std::int64_t rows = x.numel() / l;
    Tensor<T> y(x.shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = x.data.data() + r * l;
        const T* kr = k.data.data() + r * lk;
        T* yr = y.data.data() + r * l;
        for (std::int64_t t = 0; t < l; ++t) {
            double acc = 0.0;
            for (std::int64_t s = 0; s <= std::min(t, lk - 1); ++s)
                acc += static_cast<double>(xr[t - s]) * static_cast<double>(kr[s]);
            yr[t] = static_cast<T>(acc);
        }
    }
    return y;
}

}  // namespace

TEST_CASE("delta kernel is the identity") {
    auto x = from_values<double>({3}, {1, 0, 0});
    auto k = from_values<double>({1}, {1});
    auto y = fft::fft_circular_convolve(x, k);
    CHECK(max_abs_diff(y, x) < 1e-14);
}

TEST_CASE("running-sum kernel matches the direct oracle") {
    auto x = from_values<double>({4}, {1, 1, 1, 1});
    auto k = from_values<double>({2}, {1, 1});
    auto y = fft::fft_circular_convolve(x, k);
    CHECK(y.data[0] == doctest::Approx(1.0));
    CHECK(y.data[1] == doctest::Approx(2.0));
    CHECK(y.data[2] == doctest::Approx(2.0));
    CHECK(y.data[3] == doctest::Approx(2.0));
}

TEST_CASE("fft convolution equals direct convolution across lengths") {
    Rng rng(31);
    for (std::int64_t l : {1, 2, 255, 256, 4096}) {
        // float64
        {
            auto x = randn<double>({2, l}, rng);
            auto k = randn<double>({2, l}, rng);
            auto y = fft::fft_circular_convolve(x, k);
            auto ref = direct_convolve(x, k);
            CHECK_MESSAGE(max_abs_diff(y, ref) < 1e-10, "L=" << l << " (f64)");
        }
        // float32
        {
            auto x = randn<float>({2, l}, rng);
            auto k = randn<float>({2, l}, rng);
            auto y = fft::fft_circular_convolve(x, k);
            auto ref = direct_convolve(x, k);
            CHECK_MESSAGE(max_abs_diff(y, ref) < 1e-4, "L=" << l << " (f32)");
        }
    }
}

TEST_CASE("random L=256 case stays under 1e-10") {
    Rng rng(77);
    auto x = randn<double>({1, 256}, rng);
    auto k = randn<double>({1, 64}, rng);
    auto y = fft::fft_circular_convolve(x, k);
    auto ref = direct_convolve(x, k);
    CHECK(max_abs_diff(y, ref) < 1e-10);
}

TEST_CASE("empty signals are rejected") {
    Tensor<double> x({1, 0});
    Tensor<double> k({1, 4});
    CHECK_THROWS_AS(fft::fft_circular_convolve(x, k), std::invalid_argument);
}

TEST_CASE("spectrum pair packing round-trips two real signals") {
    Rng rng(5);
    const std::size_t n = 64;
    auto a = randn<double>({48}, rng);
    auto b = randn<double>({48}, rng);
    std::vector<std::complex<double>> sa, sb, scratch;
    fft::spectrum_pair(a.data.data(), b.data.data(), 48, n, sa, sb, scratch);
    auto ra = fft::spectrum(a.data.data(), 48, n);
    auto rb = fft::spectrum(b.data.data(), 48, n);
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::abs(sa[i] - ra[i]) < 1e-12);
        CHECK(std::abs(sb[i] - rb[i]) < 1e-12);
    }
    std::vector<double> ya(48), yb(48);
    fft::inverse_pair(sa, sb, n, ya.data(), 48, yb.data(), 48, scratch);
    for (std::size_t i = 0; i < 48; ++i) {
        CHECK(ya[i] == doctest::Approx(a.data[i]).epsilon(1e-12));
        CHECK(yb[i] == doctest::Approx(b.data[i]).epsilon(1e-12));
    }
}
