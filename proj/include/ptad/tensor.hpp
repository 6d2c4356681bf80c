#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ptad {

// Dense row-major tensor. Images are rank-2 (height, width), parameter
// blocks carry whatever rank the layer needs.
template <typename T>
struct Tensor {
    std::vector<int> dims;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
        v.assign(numel_of(dims), T(0));
    }
    Tensor(std::vector<int> d, std::vector<T> data) : dims(std::move(d)), v(std::move(data)) {
        if (v.size() != numel_of(dims)) throw std::invalid_argument("tensor: data size does not match dims");
    }

    static std::size_t numel_of(const std::vector<int>& d) {
        std::size_t n = 1;
        for (int x : d) {
            if (x <= 0) throw std::invalid_argument("tensor: nonpositive dimension");
            n *= static_cast<std::size_t>(x);
        }
        return n;
    }

    std::size_t numel() const { return v.size(); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }
    T& operator[](std::size_t i) { return v[i]; }
    const T& operator[](std::size_t i) const { return v[i]; }

    bool same_shape(const Tensor& o) const { return dims == o.dims; }
};

template <typename T>
using Image = Tensor<T>;  // rank-2, {height, width}

using ImageF = Tensor<float>;

template <typename T>
Image<T> make_image(int height, int width) {
    return Image<T>({height, width});
}

// Named parameter blocks; std::map keeps iteration order deterministic.
template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

template <typename T, typename U>
Tensor<U> cast_tensor(const Tensor<T>& a) {
    Tensor<U> out(a.dims);
    for (std::size_t i = 0; i < a.numel(); ++i) out.v[i] = static_cast<U>(a.v[i]);
    return out;
}

}  // namespace ptad
