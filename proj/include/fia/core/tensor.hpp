#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fia/core/error.hpp"
#include "fia/core/rng.hpp"

namespace fia {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

// Dense row-major tensor. Plain value type; copies copy the buffer.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape)) throw InputError("tensor data size does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor randn(Shape s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = static_cast<T>(rng.normal() * stddev);
        return t;
    }
    static Tensor uniform(Shape s, Rng& rng, double lo, double hi) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }
    static Tensor from(Shape s, std::initializer_list<T> vals) { return Tensor(std::move(s), std::vector<T>(vals)); }

    size_t numel() const { return data.size(); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int size(int i) const { return shape[static_cast<size_t>(i)]; }
    bool empty() const { return data.empty(); }

    T& operator[](size_t i) { return data[i]; }
    const T& operator[](size_t i) const { return data[i]; }

    // 4-D (N,C,H,W) indexing; also 3-D/2-D overloads.
    T& at(int n, int c, int h, int w) {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const T& at(int n, int c, int h, int w) const {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    T& at(int c, int h, int w) { return data[(static_cast<size_t>(c) * shape[1] + h) * shape[2] + w]; }
    const T& at(int c, int h, int w) const { return data[(static_cast<size_t>(c) * shape[1] + h) * shape[2] + w]; }
    T& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    const T& at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel()) throw InputError("reshape " + shape_str(shape) + " -> " + shape_str(s) + " changes element count");
        return Tensor(std::move(s), data);
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T>
void check_shape(const Tensor<T>& t, const Shape& want, const char* what) {
    if (t.shape != want) throw InputError(std::string(what) + ": expected shape " + shape_str(want) + ", got " + shape_str(t.shape));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw InputError("max_abs_diff: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double m = 0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

// Stack per-sample tensors (C,H,W) into a batch (N,C,H,W).
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
    if (items.empty()) throw InputError("stack_batch: empty list");
    Shape s = items[0].shape;
    Shape out_shape;
    out_shape.push_back(static_cast<int>(items.size()));
    for (int d : s) out_shape.push_back(d);
    Tensor<T> out(out_shape);
    size_t per = items[0].numel();
    for (size_t i = 0; i < items.size(); ++i) {
        if (items[i].shape != s) throw InputError("stack_batch: inhomogeneous shapes");
        std::copy(items[i].data.begin(), items[i].data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return out;
}

// Extract sample n from a batch (N,C,...) as (C,...).
template <typename T>
Tensor<T> unstack_one(const Tensor<T>& batch, int n) {
    Shape s(batch.shape.begin() + 1, batch.shape.end());
    size_t per = shape_numel(s);
    Tensor<T> out(s);
    std::copy(batch.data.begin() + static_cast<std::ptrdiff_t>(n * per), batch.data.begin() + static_cast<std::ptrdiff_t>((n + 1) * per),
              out.data.begin());
    return out;
}

}  // namespace fia
