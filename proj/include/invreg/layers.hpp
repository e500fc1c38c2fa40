#pragma once

#include <cstdint>

#include "invreg/parallel.hpp"
#include "invreg/tensor.hpp"

namespace invreg {

// 3x3x3 convolution kernels with zero padding 1. Stride 1 preserves the
// extent; stride 2 yields ceil(extent / 2). Weight layout:
// W[((oc*IC + ic)*3 + kz)*3 + ky)*3 + kx], one bias per output channel.

inline Shape3 conv_output_shape(Shape3 in, int stride) {
    if (stride == 1) return in;
    return {(in[0] + 1) / 2, (in[1] + 1) / 2, (in[2] + 1) / 2};
}

template <typename T>
void conv3_forward(const Tensor3<T>& in, Tensor3<T>& out, const T* W, const T* bias, int stride) {
    const int64_t X = in.nx(), Y = in.ny(), Z = in.nz(), IC = in.channels;
    const int64_t OX = out.nx(), OY = out.ny(), OZ = out.nz(), OC = out.channels;
    parallel_for_each(OC, [&](int64_t oc) {
        T* op = out.channel(oc);
        const int64_t on = OX * OY * OZ;
        for (int64_t i = 0; i < on; ++i) op[i] = bias[oc];
        for (int64_t ic = 0; ic < IC; ++ic) {
            const T* ip = in.channel(ic);
            const T* wk = W + ((oc * IC + ic) * 27);
            for (int64_t kz = 0; kz < 3; ++kz)
                for (int64_t ky = 0; ky < 3; ++ky)
                    for (int64_t kx = 0; kx < 3; ++kx) {
                        T w = wk[(kz * 3 + ky) * 3 + kx];
                        if (w == T(0)) continue;
                        int64_t dz = kz - 1, dy = ky - 1, dx = kx - 1;
                        if (stride == 1) {
                            int64_t z_lo = std::max<int64_t>(0, -dz), z_hi = std::min(OZ, Z - dz);
                            int64_t y_lo = std::max<int64_t>(0, -dy), y_hi = std::min(OY, Y - dy);
                            int64_t x_lo = std::max<int64_t>(0, -dx), x_hi = std::min(OX, X - dx);
                            for (int64_t z = z_lo; z < z_hi; ++z)
                                for (int64_t y = y_lo; y < y_hi; ++y) {
                                    T* orow = op + OX * (y + OY * z);
                                    const T* irow = ip + (x_lo + dx) + X * ((y + dy) + Y * (z + dz));
                                    for (int64_t x = x_lo; x < x_hi; ++x)
                                        orow[x] += w * irow[x - x_lo];
                                }
                        } else {
                            for (int64_t z = 0; z < OZ; ++z) {
                                int64_t zi = 2 * z + dz;
                                if (zi < 0 || zi >= Z) continue;
                                for (int64_t y = 0; y < OY; ++y) {
                                    int64_t yi = 2 * y + dy;
                                    if (yi < 0 || yi >= Y) continue;
                                    T* orow = op + OX * (y + OY * z);
                                    const T* irow = ip + X * (yi + Y * zi);
                                    for (int64_t x = 0; x < OX; ++x) {
                                        int64_t xi = 2 * x + dx;
                                        if (xi < 0 || xi >= X) continue;
                                        orow[x] += w * irow[xi];
                                    }
                                }
                            }
                        }
                    }
        }
    });
}

// Gradient w.r.t. the convolution input; gather form, parallel per input channel.
template <typename T>
void conv3_backward_input(const Tensor3<T>& grad_out, Tensor3<T>& grad_in, const T* W, int stride,
                          int64_t in_channels) {
    const int64_t X = grad_in.nx(), Y = grad_in.ny(), Z = grad_in.nz();
    const int64_t OX = grad_out.nx(), OY = grad_out.ny(), OZ = grad_out.nz(), OC = grad_out.channels;
    parallel_for_each(in_channels, [&](int64_t ic) {
        T* gp = grad_in.channel(ic);
        const int64_t n = X * Y * Z;
        for (int64_t i = 0; i < n; ++i) gp[i] = T(0);
        for (int64_t oc = 0; oc < OC; ++oc) {
            const T* gout = grad_out.channel(oc);
            const T* wk = W + ((oc * in_channels + ic) * 27);
            for (int64_t kz = 0; kz < 3; ++kz)
                for (int64_t ky = 0; ky < 3; ++ky)
                    for (int64_t kx = 0; kx < 3; ++kx) {
                        T w = wk[(kz * 3 + ky) * 3 + kx];
                        if (w == T(0)) continue;
                        int64_t dz = kz - 1, dy = ky - 1, dx = kx - 1;
                        if (stride == 1) {
                            // input (x,y,z) feeds output (x-dx, y-dy, z-dz)
                            int64_t z_lo = std::max<int64_t>(0, dz), z_hi = std::min(Z, OZ + dz);
                            int64_t y_lo = std::max<int64_t>(0, dy), y_hi = std::min(Y, OY + dy);
                            int64_t x_lo = std::max<int64_t>(0, dx), x_hi = std::min(X, OX + dx);
                            for (int64_t z = z_lo; z < z_hi; ++z)
                                for (int64_t y = y_lo; y < y_hi; ++y) {
                                    T* grow = gp + X * (y + Y * z);
                                    const T* orow = gout + (x_lo - dx) + OX * ((y - dy) + OY * (z - dz));
                                    for (int64_t x = x_lo; x < x_hi; ++x)
                                        grow[x] += w * orow[x - x_lo];
                                }
                        } else {
                            // input (x,y,z) feeds output ((x-dx)/2, ...) when divisible
                            for (int64_t z = 0; z < Z; ++z) {
                                int64_t zr = z - dz;
                                if (zr < 0 || zr % 2 || zr / 2 >= OZ) continue;
                                for (int64_t y = 0; y < Y; ++y) {
                                    int64_t yr = y - dy;
                                    if (yr < 0 || yr % 2 || yr / 2 >= OY) continue;
                                    T* grow = gp + X * (y + Y * z);
                                    const T* orow = gout + OX * (yr / 2 + OY * (zr / 2));
                                    for (int64_t x = 0; x < X; ++x) {
                                        int64_t xr = x - dx;
                                        if (xr < 0 || xr % 2 || xr / 2 >= OX) continue;
                                        grow[x] += w * orow[xr / 2];
                                    }
                                }
                            }
                        }
                    }
        }
    });
}

// Gradient w.r.t. weights and biases; parallel per output channel, serial
// voxel order within, accumulated in double.
template <typename T>
void conv3_backward_params(const Tensor3<T>& grad_out, const Tensor3<T>& in, T* gW, T* gB,
                           int stride) {
    const int64_t X = in.nx(), Y = in.ny(), Z = in.nz(), IC = in.channels;
    const int64_t OX = grad_out.nx(), OY = grad_out.ny(), OZ = grad_out.nz(), OC = grad_out.channels;
    parallel_for_each(OC, [&](int64_t oc) {
        const T* gout = grad_out.channel(oc);
        double bsum = 0.0;
        const int64_t on = OX * OY * OZ;
        for (int64_t i = 0; i < on; ++i) bsum += (double)gout[i];
        gB[oc] += (T)bsum;
        for (int64_t ic = 0; ic < IC; ++ic) {
            const T* ip = in.channel(ic);
            T* wk = gW + ((oc * IC + ic) * 27);
            for (int64_t kz = 0; kz < 3; ++kz)
                for (int64_t ky = 0; ky < 3; ++ky)
                    for (int64_t kx = 0; kx < 3; ++kx) {
                        int64_t dz = kz - 1, dy = ky - 1, dx = kx - 1;
                        double acc = 0.0;
                        for (int64_t z = 0; z < OZ; ++z) {
                            int64_t zi = stride * z + dz;
                            if (zi < 0 || zi >= Z) continue;
                            for (int64_t y = 0; y < OY; ++y) {
                                int64_t yi = stride * y + dy;
                                if (yi < 0 || yi >= Y) continue;
                                const T* orow = gout + OX * (y + OY * z);
                                const T* irow = ip + X * (yi + Y * zi);
                                if (stride == 1) {
                                    int64_t x_lo = std::max<int64_t>(0, -dx), x_hi = std::min(OX, X - dx);
                                    for (int64_t x = x_lo; x < x_hi; ++x)
                                        acc += (double)orow[x] * (double)irow[x + dx];
                                } else {
                                    for (int64_t x = 0; x < OX; ++x) {
                                        int64_t xi = 2 * x + dx;
                                        if (xi < 0 || xi >= X) continue;
                                        acc += (double)orow[x] * (double)irow[xi];
                                    }
                                }
                            }
                        }
                        wk[(kz * 3 + ky) * 3 + kx] += (T)acc;
                    }
        }
    });
}

template <typename T>
void leaky_relu_forward(Tensor3<T>& t, T slope) {
    parallel_for(t.size(), [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            T v = t.v[(size_t)i];
            if (v < T(0)) t.v[(size_t)i] = slope * v;
        }
    });
}

// Needs the layer *input* to recover the active branch.
template <typename T>
void leaky_relu_backward(const Tensor3<T>& input, Tensor3<T>& grad, T slope) {
    parallel_for(grad.size(), [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i)
            if (input.v[(size_t)i] < T(0)) grad.v[(size_t)i] *= slope;
    });
}

/// Nearest-neighbour x2 upsampling: out(p) = in(p / 2).
template <typename T>
Tensor3<T> upsample2_forward(const Tensor3<T>& in) {
    Shape3 os{in.nx() * 2, in.ny() * 2, in.nz() * 2};
    Tensor3<T> out(os, in.channels);
    parallel_for_each(in.channels, [&](int64_t c) {
        const T* ip = in.channel(c);
        T* op = out.channel(c);
        for (int64_t z = 0; z < os[2]; ++z)
            for (int64_t y = 0; y < os[1]; ++y)
                for (int64_t x = 0; x < os[0]; ++x)
                    op[x + os[0] * (y + os[1] * z)] =
                        ip[(x / 2) + in.nx() * ((y / 2) + in.ny() * (z / 2))];
    });
    return out;
}

/// Adjoint of nearest upsampling: each coarse voxel sums its 8 children.
template <typename T>
Tensor3<T> upsample2_adjoint(const Tensor3<T>& grad_out, Shape3 in_shape) {
    Tensor3<T> grad_in(in_shape, grad_out.channels);
    const int64_t OX = grad_out.nx(), OY = grad_out.ny();
    parallel_for_each(grad_out.channels, [&](int64_t c) {
        const T* gp = grad_out.channel(c);
        T* op = grad_in.channel(c);
        for (int64_t z = 0; z < in_shape[2]; ++z)
            for (int64_t y = 0; y < in_shape[1]; ++y)
                for (int64_t x = 0; x < in_shape[0]; ++x) {
                    T s = 0;
                    for (int64_t cz = 0; cz < 2; ++cz)
                        for (int64_t cy = 0; cy < 2; ++cy)
                            for (int64_t cx = 0; cx < 2; ++cx)
                                s += gp[(2 * x + cx) + OX * ((2 * y + cy) + OY * (2 * z + cz))];
                    op[x + in_shape[0] * (y + in_shape[1] * z)] = s;
                }
    });
    return grad_in;
}

template <typename T>
Tensor3<T> concat_channels(const Tensor3<T>& a, const Tensor3<T>& b) {
    require(a.shape == b.shape, "concat: shape mismatch");
    Tensor3<T> out(a.shape, a.channels + b.channels);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
    return out;
}

}  // namespace invreg
