#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "biasblend/common.hpp"
#include "biasblend/rng.hpp"

namespace bb {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) {
        check(d > 0, "shape dims must be positive, got ", d);
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major n-d array. T is float for training, double for oracles;
// vectorization order for an image (c,h,w) keeps channels outermost:
// flat = c*h_in*w_in + k*w_in + l.
template <class T>
struct TensorT {
    Shape shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), T{0}) {}
    TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        check(static_cast<std::int64_t>(data.size()) == shape_numel(shape),
              "tensor data length ", data.size(), " does not match shape ", shape_str(shape));
    }
    TensorT(Shape s, std::initializer_list<T> d) : TensorT(std::move(s), std::vector<T>(d)) {}

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t ndim() const { return shape.size(); }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    // 2-d accessors (rows x cols)
    T& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
    const T& at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * shape[1] + c)]; }

    TensorT reshaped(Shape s) const {
        check(shape_numel(s) == numel(), "reshape ", shape_str(shape), " -> ", shape_str(s),
              " changes element count");
        TensorT out = *this;
        out.shape = std::move(s);
        return out;
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    static TensorT zeros(Shape s) { return TensorT(std::move(s)); }

    static TensorT full(Shape s, T v) {
        TensorT t(std::move(s));
        t.fill(v);
        return t;
    }

    static TensorT identity(std::int64_t n) {
        TensorT t({n, n});
        for (std::int64_t i = 0; i < n; ++i) t.at(i, i) = T{1};
        return t;
    }

    static TensorT uniform(Shape s, Rng& rng, double lo, double hi) {
        TensorT t(std::move(s));
        for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    static TensorT randn(Shape s, Rng& rng, double stddev = 1.0) {
        TensorT t(std::move(s));
        for (auto& v : t.data) v = static_cast<T>(rng.normal() * stddev);
        return t;
    }

    template <class U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace bb
