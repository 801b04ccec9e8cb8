#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpda {

// Dense row-major tensor. Rank is small (<= 4) everywhere in this project;
// feature maps use the axis order [agents, height, width, channels].
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(checked_count(shape)) {}
    Tensor(std::vector<int> s, T fill) : shape(std::move(s)), data(checked_count(shape), fill) {}

    static int64_t checked_count(const std::vector<int>& s) {
        if (s.empty()) throw std::invalid_argument("tensor rank must be >= 1");
        int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
            n *= d;
        }
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    // [A,H,W,C] accessor
    T& at4(int a, int i, int j, int c) {
        return data[((static_cast<int64_t>(a) * shape[1] + i) * shape[2] + j) * shape[3] + c];
    }
    const T& at4(int a, int i, int j, int c) const {
        return data[((static_cast<int64_t>(a) * shape[1] + i) * shape[2] + j) * shape[3] + c];
    }
    // [G,T,D] accessor
    T& at3(int g, int t, int d) {
        return data[(static_cast<int64_t>(g) * shape[1] + t) * shape[2] + d];
    }
    const T& at3(int g, int t, int d) const {
        return data[(static_cast<int64_t>(g) * shape[1] + t) * shape[2] + d];
    }
    T& at2(int r, int c) { return data[static_cast<int64_t>(r) * shape[1] + c]; }
    const T& at2(int r, int c) const { return data[static_cast<int64_t>(r) * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (int64_t i = 0; i < size(); ++i) out.data[static_cast<size_t>(i)] = static_cast<U>(data[static_cast<size_t>(i)]);
        return out;
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace mpda
