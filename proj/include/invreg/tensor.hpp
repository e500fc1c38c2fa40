#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace invreg {

using Shape3 = std::array<int64_t, 3>;

inline int64_t voxel_count(const Shape3& s) { return s[0] * s[1] * s[2]; }

inline std::string shape_str(const Shape3& s) {
    return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]);
}

/// Dense multi-channel 3D grid.
/// Linear layout: index = x + X*(y + Y*(z + Z*c)) — x fastest, channel
/// outermost, so every channel is one contiguous X*Y*Z block.
template <typename T>
struct Tensor3 {
    Shape3 shape{0, 0, 0};
    int64_t channels = 0;
    std::vector<T> v;

    Tensor3() = default;
    Tensor3(Shape3 s, int64_t c) : shape(s), channels(c), v((size_t)(voxel_count(s) * c), T(0)) {}

    int64_t nx() const { return shape[0]; }
    int64_t ny() const { return shape[1]; }
    int64_t nz() const { return shape[2]; }
    int64_t plane() const { return voxel_count(shape); }
    int64_t size() const { return (int64_t)v.size(); }

    int64_t index(int64_t x, int64_t y, int64_t z, int64_t c = 0) const {
        return x + shape[0] * (y + shape[1] * (z + shape[2] * c));
    }
    T& at(int64_t x, int64_t y, int64_t z, int64_t c = 0) { return v[(size_t)index(x, y, z, c)]; }
    const T& at(int64_t x, int64_t y, int64_t z, int64_t c = 0) const {
        return v[(size_t)index(x, y, z, c)];
    }

    T* channel(int64_t c) { return v.data() + c * plane(); }
    const T* channel(int64_t c) const { return v.data() + c * plane(); }

    void fill(T value) { std::fill(v.begin(), v.end(), value); }
};

template <typename To, typename From>
Tensor3<To> cast_tensor(const Tensor3<From>& t) {
    Tensor3<To> out(t.shape, t.channels);
    for (size_t i = 0; i < t.v.size(); ++i) out.v[i] = (To)t.v[i];
    return out;
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

}  // namespace invreg
