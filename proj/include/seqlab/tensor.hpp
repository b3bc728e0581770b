#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqlab {

using Shape = std::vector<std::int64_t>;

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline std::int64_t numel_of(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                           std::multiplies<>());
}

/// Dense row-major n-dimensional array, the universal value type.
template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
    }
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        require(numel_of(shape) == static_cast<std::int64_t>(data.size()),
                "tensor: shape/data size mismatch");
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <class T>
Tensor<T> zeros(Shape s) { return Tensor<T>(std::move(s)); }

template <class T>
Tensor<T> full(Shape s, T v) {
    Tensor<T> t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

template <class T>
Tensor<T> from_values(Shape s, std::initializer_list<double> vals) {
    Tensor<T> t(std::move(s));
    require(t.numel() == static_cast<std::int64_t>(vals.size()),
            "from_values: count mismatch");
    std::size_t i = 0;
    for (double v : vals) t.data[i++] = static_cast<T>(v);
    return t;
}

/// Owned RNG handle; every randomized routine takes one explicitly.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double normal(double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> d(mean, stddev);
        return d(gen_);
    }
    double uniform(double lo = 0.0, double hi = 1.0) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(gen_);
    }
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive
        std::uniform_int_distribution<std::int64_t> d(lo, hi);
        return d(gen_);
    }
    std::uint64_t next_u64() { return gen_(); }
    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

template <class T>
Tensor<T> randn(Shape s, Rng& rng, double stddev = 1.0) {
    Tensor<T> t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, stddev));
    return t;
}

template <class T>
Tensor<T> rand_uniform(Shape s, Rng& rng, double lo, double hi) {
    Tensor<T> t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

}  // namespace seqlab
