#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "invreg/tensor.hpp"

namespace invreg {

enum class DType { f32, u16 };
enum class Intent { image, labels, flow };

inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "u16"; }
inline const char* intent_name(Intent i) {
    switch (i) {
        case Intent::image: return "image";
        case Intent::labels: return "labels";
        default: return "flow";
    }
}

struct VolumeHeader {
    Shape3 shape{0, 0, 0};
    int64_t channels = 1;
    DType dtype = DType::f32;
    std::array<double, 3> voxel_size_mm{1.0, 1.0, 1.0};
    Intent intent = Intent::image;

    int64_t element_count() const { return voxel_count(shape) * channels; }
    int64_t element_size() const { return dtype == DType::f32 ? 4 : 2; }
    int64_t payload_bytes() const { return element_count() * element_size(); }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            require(shape[a] >= 1, "volume header: shape components must be >= 1");
            require(voxel_size_mm[a] > 0.0, "volume header: voxel sizes must be positive");
        }
        require(channels >= 1, "volume header: channels must be >= 1");
        if (intent == Intent::labels)
            require(dtype == DType::u16 && channels == 1, "volume header: labels require u16, 1 channel");
        if (intent == Intent::flow)
            require(dtype == DType::f32 && channels == 3, "volume header: flow requires f32, 3 channels");
    }
};

/// Scalar image volume (intensities), f32 storage.
struct Volume3 {
    VolumeHeader header;
    std::vector<float> data;

    int64_t voxels() const { return voxel_count(header.shape); }
    float& at(int64_t x, int64_t y, int64_t z, int64_t c = 0) {
        return data[(size_t)(x + header.shape[0] * (y + header.shape[1] * (z + header.shape[2] * c)))];
    }
    float at(int64_t x, int64_t y, int64_t z, int64_t c = 0) const {
        return data[(size_t)(x + header.shape[0] * (y + header.shape[1] * (z + header.shape[2] * c)))];
    }
};

/// Integer anatomical-region labels, one per voxel; 0 is background.
struct LabelVolume3 {
    VolumeHeader header;
    std::vector<uint16_t> data;

    int64_t voxels() const { return voxel_count(header.shape); }
    uint16_t& at(int64_t x, int64_t y, int64_t z) {
        return data[(size_t)(x + header.shape[0] * (y + header.shape[1] * z))];
    }
    uint16_t at(int64_t x, int64_t y, int64_t z) const {
        return data[(size_t)(x + header.shape[0] * (y + header.shape[1] * z))];
    }
};

/// Per-voxel displacement field in voxel units, channels (dx, dy, dz).
/// Pull semantics everywhere: output(p) = input(p + flow(p)).
struct FlowField3 {
    VolumeHeader header;
    std::vector<float> data;

    int64_t voxels() const { return voxel_count(header.shape); }
    float& at(int64_t x, int64_t y, int64_t z, int64_t c) {
        return data[(size_t)(x + header.shape[0] * (y + header.shape[1] * (z + header.shape[2] * c)))];
    }
    float at(int64_t x, int64_t y, int64_t z, int64_t c) const {
        return data[(size_t)(x + header.shape[0] * (y + header.shape[1] * (z + header.shape[2] * c)))];
    }
};

inline Volume3 make_volume(Shape3 shape, int64_t channels = 1,
                           std::array<double, 3> voxel_mm = {1.0, 1.0, 1.0}) {
    Volume3 v;
    v.header.shape = shape;
    v.header.channels = channels;
    v.header.dtype = DType::f32;
    v.header.voxel_size_mm = voxel_mm;
    v.header.intent = Intent::image;
    v.header.validate();
    v.data.assign((size_t)v.header.element_count(), 0.0f);
    return v;
}

inline LabelVolume3 make_labels(Shape3 shape, std::array<double, 3> voxel_mm = {1.0, 1.0, 1.0}) {
    LabelVolume3 v;
    v.header.shape = shape;
    v.header.channels = 1;
    v.header.dtype = DType::u16;
    v.header.voxel_size_mm = voxel_mm;
    v.header.intent = Intent::labels;
    v.header.validate();
    v.data.assign((size_t)v.header.element_count(), 0);
    return v;
}

inline FlowField3 make_flow(Shape3 shape, std::array<double, 3> voxel_mm = {1.0, 1.0, 1.0}) {
    FlowField3 f;
    f.header.shape = shape;
    f.header.channels = 3;
    f.header.dtype = DType::f32;
    f.header.voxel_size_mm = voxel_mm;
    f.header.intent = Intent::flow;
    f.header.validate();
    f.data.assign((size_t)f.header.element_count(), 0.0f);
    return f;
}

inline void check_finite(const std::vector<float>& data, const std::string& what) {
    for (float x : data)
        require(std::isfinite(x), what + ": non-finite value in payload");
}

template <typename T>
Tensor3<T> to_tensor(const Volume3& v) {
    Tensor3<T> t(v.header.shape, v.header.channels);
    for (size_t i = 0; i < v.data.size(); ++i) t.v[i] = (T)v.data[i];
    return t;
}

template <typename T>
Tensor3<T> to_tensor(const FlowField3& f) {
    Tensor3<T> t(f.header.shape, 3);
    for (size_t i = 0; i < f.data.size(); ++i) t.v[i] = (T)f.data[i];
    return t;
}

template <typename T>
Volume3 to_volume(const Tensor3<T>& t, std::array<double, 3> voxel_mm = {1.0, 1.0, 1.0}) {
    Volume3 v = make_volume(t.shape, t.channels, voxel_mm);
    for (size_t i = 0; i < t.v.size(); ++i) v.data[i] = (float)t.v[i];
    return v;
}

template <typename T>
FlowField3 to_flow(const Tensor3<T>& t, std::array<double, 3> voxel_mm = {1.0, 1.0, 1.0}) {
    require(t.channels == 3, "to_flow: tensor must have 3 channels");
    FlowField3 f = make_flow(t.shape, voxel_mm);
    for (size_t i = 0; i < t.v.size(); ++i) f.data[i] = (float)t.v[i];
    return f;
}

namespace detail {

// Center crop/pad: out voxel xo reads in voxel xo + shift with
// shift = floor((N-M)/2); the extra voxel of an odd difference always sits
// on the high side. Out-of-range reads become `fill`.
template <typename T>
std::vector<T> pad_crop_data(const std::vector<T>& in, Shape3 in_shape, int64_t channels,
                             Shape3 out_shape, T fill) {
    std::array<int64_t, 3> shift;
    for (int a = 0; a < 3; ++a) {
        int64_t n = in_shape[a], m = out_shape[a];
        shift[a] = n >= m ? (n - m) / 2 : -((m - n) / 2);
    }
    std::vector<T> out((size_t)(voxel_count(out_shape) * channels), fill);
    for (int64_t c = 0; c < channels; ++c)
        for (int64_t z = 0; z < out_shape[2]; ++z) {
            int64_t zi = z + shift[2];
            if (zi < 0 || zi >= in_shape[2]) continue;
            for (int64_t y = 0; y < out_shape[1]; ++y) {
                int64_t yi = y + shift[1];
                if (yi < 0 || yi >= in_shape[1]) continue;
                for (int64_t x = 0; x < out_shape[0]; ++x) {
                    int64_t xi = x + shift[0];
                    if (xi < 0 || xi >= in_shape[0]) continue;
                    out[(size_t)(x + out_shape[0] * (y + out_shape[1] * (z + out_shape[2] * c)))] =
                        in[(size_t)(xi + in_shape[0] * (yi + in_shape[1] * (zi + in_shape[2] * c)))];
                }
            }
        }
    return out;
}

}  // namespace detail

inline Volume3 pad_crop_to_shape(const Volume3& v, Shape3 target) {
    for (int a = 0; a < 3; ++a) require(target[a] >= 1, "pad_crop_to_shape: target components must be >= 1");
    Volume3 out = v;
    out.header.shape = target;
    out.data = detail::pad_crop_data(v.data, v.header.shape, v.header.channels, target, 0.0f);
    return out;
}

inline LabelVolume3 pad_crop_to_shape(const LabelVolume3& v, Shape3 target) {
    for (int a = 0; a < 3; ++a) require(target[a] >= 1, "pad_crop_to_shape: target components must be >= 1");
    LabelVolume3 out = v;
    out.header.shape = target;
    out.data = detail::pad_crop_data(v.data, v.header.shape, v.header.channels, target, (uint16_t)0);
    return out;
}

/// Linear rescale so min -> 0 and max -> 1; a constant volume maps to zeros.
inline Volume3 normalize_intensity(const Volume3& v) {
    Volume3 out = v;
    if (v.data.empty()) return out;
    float lo = v.data[0], hi = v.data[0];
    for (float x : v.data) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (hi <= lo) {
        std::fill(out.data.begin(), out.data.end(), 0.0f);
        return out;
    }
    float scale = 1.0f / (hi - lo);
    for (auto& x : out.data) x = (x - lo) * scale;
    return out;
}

}  // namespace invreg
