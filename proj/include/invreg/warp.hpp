#pragma once

#include <cmath>
#include <cstdint>

#include "invreg/parallel.hpp"
#include "invreg/tensor.hpp"
#include "invreg/volume.hpp"

namespace invreg {

namespace detail {

template <typename T>
void check_warp_shapes(const Tensor3<T>& img, const Tensor3<T>& flow) {
    require(img.shape == flow.shape,
            "warp: image shape " + shape_str(img.shape) + " != flow shape " + shape_str(flow.shape));
    require(flow.channels == 3, "warp: flow must have 3 channels");
}

// Sample position along one axis: clamp to [0, n-1], split into base cell and
// fraction. `clamped` records whether the raw coordinate was out of range —
// the derivative w.r.t. the flow component is zero there.
template <typename T>
struct AxisSample {
    int64_t i0, i1;
    T frac;
    bool clamped;
};

template <typename T>
AxisSample<T> axis_sample(T q_raw, int64_t n) {
    AxisSample<T> s;
    T q = q_raw;
    s.clamped = false;
    if (q < T(0)) {
        q = T(0);
        s.clamped = true;
    } else if (q > T(n - 1)) {
        q = T(n - 1);
        s.clamped = true;
    }
    T fl = std::floor(q);
    s.i0 = (int64_t)fl;
    if (s.i0 > n - 1) s.i0 = n - 1;
    s.i1 = s.i0 + 1 < n ? s.i0 + 1 : n - 1;
    s.frac = q - (T)s.i0;
    return s;
}

}  // namespace detail

/// Trilinear resample under a displacement field:
/// out(p, c) = img(p + flow(p), c), coordinates clamped to the volume edge.
template <typename T>
Tensor3<T> trilinear_warp_t(const Tensor3<T>& img, const Tensor3<T>& flow) {
    detail::check_warp_shapes(img, flow);
    const int64_t X = img.nx(), Y = img.ny(), Z = img.nz(), C = img.channels;
    const int64_t P = img.plane();
    Tensor3<T> out(img.shape, C);
    const T* fx = flow.channel(0);
    const T* fy = flow.channel(1);
    const T* fz = flow.channel(2);

    parallel_for(Z, [&](int64_t z0, int64_t z1) {
        for (int64_t z = z0; z < z1; ++z)
            for (int64_t y = 0; y < Y; ++y)
                for (int64_t x = 0; x < X; ++x) {
                    int64_t p = x + X * (y + Y * z);
                    auto sx = detail::axis_sample((T)x + fx[p], X);
                    auto sy = detail::axis_sample((T)y + fy[p], Y);
                    auto sz = detail::axis_sample((T)z + fz[p], Z);
                    T wx1 = sx.frac, wx0 = T(1) - wx1;
                    T wy1 = sy.frac, wy0 = T(1) - wy1;
                    T wz1 = sz.frac, wz0 = T(1) - wz1;
                    for (int64_t c = 0; c < C; ++c) {
                        const T* ic = img.v.data() + c * P;
                        auto v = [&](int64_t xi, int64_t yi, int64_t zi) {
                            return ic[xi + X * (yi + Y * zi)];
                        };
                        T s = wz0 * (wy0 * (wx0 * v(sx.i0, sy.i0, sz.i0) + wx1 * v(sx.i1, sy.i0, sz.i0)) +
                                     wy1 * (wx0 * v(sx.i0, sy.i1, sz.i0) + wx1 * v(sx.i1, sy.i1, sz.i0))) +
                              wz1 * (wy0 * (wx0 * v(sx.i0, sy.i0, sz.i1) + wx1 * v(sx.i1, sy.i0, sz.i1)) +
                                     wy1 * (wx0 * v(sx.i0, sy.i1, sz.i1) + wx1 * v(sx.i1, sy.i1, sz.i1)));
                        out.v[(size_t)(p + c * P)] = s;
                    }
                }
    });
    return out;
}

/// Exact adjoint of trilinear_warp_t. Accumulates into grad_img / grad_flow
/// (callers pass zero-initialized tensors of the right shapes). Where a
/// sample coordinate was clamped the flow gradient component is zero.
template <typename T>
void trilinear_warp_grad_t(const Tensor3<T>& img, const Tensor3<T>& flow,
                           const Tensor3<T>& upstream, Tensor3<T>& grad_img,
                           Tensor3<T>& grad_flow) {
    detail::check_warp_shapes(img, flow);
    require(upstream.shape == img.shape && upstream.channels == img.channels,
            "warp grad: upstream shape mismatch");
    require(grad_img.shape == img.shape && grad_img.channels == img.channels,
            "warp grad: grad_img shape mismatch");
    require(grad_flow.shape == flow.shape && grad_flow.channels == 3,
            "warp grad: grad_flow shape mismatch");
    const int64_t X = img.nx(), Y = img.ny(), Z = img.nz(), C = img.channels;
    const int64_t P = img.plane();
    const T* fx = flow.channel(0);
    const T* fy = flow.channel(1);
    const T* fz = flow.channel(2);
    T* gfx = grad_flow.channel(0);
    T* gfy = grad_flow.channel(1);
    T* gfz = grad_flow.channel(2);

    // Image gradient is a scatter; kept serial so accumulation order is fixed.
    for (int64_t z = 0; z < Z; ++z)
        for (int64_t y = 0; y < Y; ++y)
            for (int64_t x = 0; x < X; ++x) {
                int64_t p = x + X * (y + Y * z);
                auto sx = detail::axis_sample((T)x + fx[p], X);
                auto sy = detail::axis_sample((T)y + fy[p], Y);
                auto sz = detail::axis_sample((T)z + fz[p], Z);
                T wx1 = sx.frac, wx0 = T(1) - wx1;
                T wy1 = sy.frac, wy0 = T(1) - wy1;
                T wz1 = sz.frac, wz0 = T(1) - wz1;
                T gx = 0, gy = 0, gz = 0;
                for (int64_t c = 0; c < C; ++c) {
                    const T* ic = img.v.data() + c * P;
                    T* gc = grad_img.v.data() + c * P;
                    auto at = [&](int64_t xi, int64_t yi, int64_t zi) -> int64_t {
                        return xi + X * (yi + Y * zi);
                    };
                    T u = upstream.v[(size_t)(p + c * P)];
                    // corner weights
                    T w000 = wx0 * wy0 * wz0, w100 = wx1 * wy0 * wz0;
                    T w010 = wx0 * wy1 * wz0, w110 = wx1 * wy1 * wz0;
                    T w001 = wx0 * wy0 * wz1, w101 = wx1 * wy0 * wz1;
                    T w011 = wx0 * wy1 * wz1, w111 = wx1 * wy1 * wz1;
                    gc[at(sx.i0, sy.i0, sz.i0)] += u * w000;
                    gc[at(sx.i1, sy.i0, sz.i0)] += u * w100;
                    gc[at(sx.i0, sy.i1, sz.i0)] += u * w010;
                    gc[at(sx.i1, sy.i1, sz.i0)] += u * w110;
                    gc[at(sx.i0, sy.i0, sz.i1)] += u * w001;
                    gc[at(sx.i1, sy.i0, sz.i1)] += u * w101;
                    gc[at(sx.i0, sy.i1, sz.i1)] += u * w011;
                    gc[at(sx.i1, sy.i1, sz.i1)] += u * w111;

                    T v000 = ic[at(sx.i0, sy.i0, sz.i0)], v100 = ic[at(sx.i1, sy.i0, sz.i0)];
                    T v010 = ic[at(sx.i0, sy.i1, sz.i0)], v110 = ic[at(sx.i1, sy.i1, sz.i0)];
                    T v001 = ic[at(sx.i0, sy.i0, sz.i1)], v101 = ic[at(sx.i1, sy.i0, sz.i1)];
                    T v011 = ic[at(sx.i0, sy.i1, sz.i1)], v111 = ic[at(sx.i1, sy.i1, sz.i1)];
                    gx += u * (wy0 * wz0 * (v100 - v000) + wy1 * wz0 * (v110 - v010) +
                               wy0 * wz1 * (v101 - v001) + wy1 * wz1 * (v111 - v011));
                    gy += u * (wx0 * wz0 * (v010 - v000) + wx1 * wz0 * (v110 - v100) +
                               wx0 * wz1 * (v011 - v001) + wx1 * wz1 * (v111 - v101));
                    gz += u * (wx0 * wy0 * (v001 - v000) + wx1 * wy0 * (v101 - v100) +
                               wx0 * wy1 * (v011 - v010) + wx1 * wy1 * (v111 - v110));
                }
                gfx[p] += sx.clamped ? T(0) : gx;
                gfy[p] += sy.clamped ? T(0) : gy;
                gfz[p] += sz.clamped ? T(0) : gz;
            }
}

/// Nearest-neighbour label resample: out(p) = labels(round(p + flow(p))),
/// coordinates clamped, ties rounded half-up per component.
inline LabelVolume3 nearest_warp(const LabelVolume3& labels, const FlowField3& flow) {
    require(labels.header.shape == flow.header.shape,
            "nearest_warp: label shape " + shape_str(labels.header.shape) + " != flow shape " +
                shape_str(flow.header.shape));
    const Shape3 s = labels.header.shape;
    const int64_t X = s[0], Y = s[1], Z = s[2];
    LabelVolume3 out = labels;
    const float* fx = flow.data.data();
    const float* fy = flow.data.data() + flow.voxels();
    const float* fz = flow.data.data() + 2 * flow.voxels();
    auto snap = [](double q, int64_t n) {
        if (q < 0.0) q = 0.0;
        if (q > (double)(n - 1)) q = (double)(n - 1);
        int64_t i = (int64_t)std::floor(q + 0.5);
        return std::clamp<int64_t>(i, 0, n - 1);
    };
    parallel_for(Z, [&](int64_t z0, int64_t z1) {
        for (int64_t z = z0; z < z1; ++z)
            for (int64_t y = 0; y < Y; ++y)
                for (int64_t x = 0; x < X; ++x) {
                    int64_t p = x + X * (y + Y * z);
                    int64_t xi = snap((double)x + fx[p], X);
                    int64_t yi = snap((double)y + fy[p], Y);
                    int64_t zi = snap((double)z + fz[p], Z);
                    out.data[(size_t)p] = labels.data[(size_t)(xi + X * (yi + Y * zi))];
                }
    });
    return out;
}

/// Two-step resample: warp by `first`, then warp the result by `second`.
template <typename T>
Tensor3<T> sequential_warp_t(const Tensor3<T>& img, const Tensor3<T>& first,
                             const Tensor3<T>& second) {
    return trilinear_warp_t(trilinear_warp_t(img, first), second);
}

inline Volume3 trilinear_warp(const Volume3& img, const FlowField3& flow) {
    Tensor3<float> out = trilinear_warp_t(to_tensor<float>(img), to_tensor<float>(flow));
    Volume3 v = img;
    v.data = std::move(out.v);
    return v;
}

inline Volume3 sequential_warp(const Volume3& img, const FlowField3& first, const FlowField3& second) {
    Tensor3<float> out =
        sequential_warp_t(to_tensor<float>(img), to_tensor<float>(first), to_tensor<float>(second));
    Volume3 v = img;
    v.data = std::move(out.v);
    return v;
}

}  // namespace invreg
