#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "invreg/parallel.hpp"
#include "invreg/tensor.hpp"
#include "invreg/warp.hpp"

namespace invreg {

namespace detail {

// Window sums with edge clamping: (M f)(p) = sum over offsets o in [-r, r]^3
// of f(clamp(p + o)). Separable; accumulation is always in double.

inline void box_line(const double* in, double* out, int64_t n, int64_t stride, int64_t r) {
    for (int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int64_t t = i - r; t <= i + r; ++t) {
            int64_t tc = t < 0 ? 0 : (t > n - 1 ? n - 1 : t);
            s += in[tc * stride];
        }
        out[i * stride] = s;
    }
}

// Adjoint of box_line: scatter with the same clamped multiplicities.
inline void box_line_adj(const double* in, double* out, int64_t n, int64_t stride, int64_t r) {
    for (int64_t i = 0; i < n; ++i) out[i * stride] = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double v = in[i * stride];
        for (int64_t t = i - r; t <= i + r; ++t) {
            int64_t tc = t < 0 ? 0 : (t > n - 1 ? n - 1 : t);
            out[tc * stride] += v;
        }
    }
}

inline void box_pass(double* buf, double* scratch, Shape3 s, int64_t r, int axis, bool adjoint) {
    const int64_t X = s[0], Y = s[1], Z = s[2];
    auto line = adjoint ? box_line_adj : box_line;
    if (axis == 0) {
        parallel_for(Z, [&](int64_t z0, int64_t z1) {
            for (int64_t z = z0; z < z1; ++z)
                for (int64_t y = 0; y < Y; ++y) {
                    int64_t base = X * (y + Y * z);
                    line(buf + base, scratch + base, X, 1, r);
                }
        });
    } else if (axis == 1) {
        parallel_for(Z, [&](int64_t z0, int64_t z1) {
            for (int64_t z = z0; z < z1; ++z)
                for (int64_t x = 0; x < X; ++x) {
                    int64_t base = x + X * Y * z;
                    line(buf + base, scratch + base, Y, X, r);
                }
        });
    } else {
        parallel_for(Y, [&](int64_t y0, int64_t y1) {
            for (int64_t y = y0; y < y1; ++y)
                for (int64_t x = 0; x < X; ++x) {
                    int64_t base = x + X * y;
                    line(buf + base, scratch + base, Z, X * Y, r);
                }
        });
    }
    std::swap_ranges(scratch, scratch + X * Y * Z, buf);
}

inline void box_sum(std::vector<double>& buf, std::vector<double>& scratch, Shape3 s, int64_t r) {
    box_pass(buf.data(), scratch.data(), s, r, 0, false);
    box_pass(buf.data(), scratch.data(), s, r, 1, false);
    box_pass(buf.data(), scratch.data(), s, r, 2, false);
}

inline void box_sum_adjoint(std::vector<double>& buf, std::vector<double>& scratch, Shape3 s, int64_t r) {
    box_pass(buf.data(), scratch.data(), s, r, 2, true);
    box_pass(buf.data(), scratch.data(), s, r, 1, true);
    box_pass(buf.data(), scratch.data(), s, r, 0, true);
}

template <typename T>
void check_cc_inputs(const Tensor3<T>& a, const Tensor3<T>& b, int64_t window) {
    require(a.shape == b.shape, "local_cc: shape mismatch");
    require(a.channels == 1 && b.channels == 1, "local_cc: inputs must be single channel");
    require(window >= 1 && window % 2 == 1, "local_cc: window must be odd and positive");
}

struct CcFields {
    int64_t n;  // window volume
    std::vector<double> sa, sb, saa, sbb, sab;
};

template <typename T>
CcFields cc_window_sums(const Tensor3<T>& a, const Tensor3<T>& b, int64_t window) {
    const int64_t V = a.plane();
    const int64_t r = window / 2;
    CcFields f;
    f.n = window * window * window;
    f.sa.resize((size_t)V);
    f.sb.resize((size_t)V);
    f.saa.resize((size_t)V);
    f.sbb.resize((size_t)V);
    f.sab.resize((size_t)V);
    for (int64_t i = 0; i < V; ++i) {
        double av = (double)a.v[(size_t)i], bv = (double)b.v[(size_t)i];
        f.sa[(size_t)i] = av;
        f.sb[(size_t)i] = bv;
        f.saa[(size_t)i] = av * av;
        f.sbb[(size_t)i] = bv * bv;
        f.sab[(size_t)i] = av * bv;
    }
    std::vector<double> scratch((size_t)V);
    box_sum(f.sa, scratch, a.shape, r);
    box_sum(f.sb, scratch, a.shape, r);
    box_sum(f.saa, scratch, a.shape, r);
    box_sum(f.sbb, scratch, a.shape, r);
    box_sum(f.sab, scratch, a.shape, r);
    return f;
}

struct CcCenterStats {
    double cross, var_a, var_b, mean_a, mean_b;
};

inline CcCenterStats cc_center(const CcFields& f, int64_t i) {
    double n = (double)f.n;
    CcCenterStats s;
    s.mean_a = f.sa[(size_t)i] / n;
    s.mean_b = f.sb[(size_t)i] / n;
    s.cross = f.sab[(size_t)i] - f.sa[(size_t)i] * f.sb[(size_t)i] / n;
    s.var_a = std::max(0.0, f.saa[(size_t)i] - f.sa[(size_t)i] * f.sa[(size_t)i] / n);
    s.var_b = std::max(0.0, f.sbb[(size_t)i] - f.sb[(size_t)i] * f.sb[(size_t)i] / n);
    return s;
}

}  // namespace detail

/// Squared local normalized cross-correlation, meaned over all voxels.
/// Per center p, with window statistics over the edge-clamped w^3 window:
/// cc(p) = cross^2 / ((var_a + eps) * (var_b + eps)); returns mean cc in [0, 1].
template <typename T>
double local_cc_t(const Tensor3<T>& a, const Tensor3<T>& b, int64_t window, double eps = 1e-5) {
    detail::check_cc_inputs(a, b, window);
    auto f = detail::cc_window_sums(a, b, window);
    const int64_t V = a.plane();
    double total = 0.0;
    for (int64_t i = 0; i < V; ++i) {
        auto s = detail::cc_center(f, i);
        total += s.cross * s.cross / ((s.var_a + eps) * (s.var_b + eps));
    }
    return total / (double)V;
}

/// Adjoint of local_cc_t; accumulates upstream * d(local_cc)/d(input) into
/// grad_a and grad_b.
template <typename T>
void local_cc_grad_t(const Tensor3<T>& a, const Tensor3<T>& b, int64_t window, double upstream,
                     Tensor3<T>& grad_a, Tensor3<T>& grad_b, double eps = 1e-5) {
    detail::check_cc_inputs(a, b, window);
    require(grad_a.shape == a.shape && grad_b.shape == b.shape && grad_a.channels == 1 &&
                grad_b.channels == 1,
            "local_cc_grad: gradient shape mismatch");
    if (upstream == 0.0) return;
    auto f = detail::cc_window_sums(a, b, window);
    const int64_t V = a.plane();
    const int64_t r = window / 2;

    // Per-center coefficient fields; the voxel gradient is their adjoint
    // window sum combined with the local values:
    //   d cc(p)/d a(j) = 2 * c1 * (b(j) - mean_b) - 2 * c1 * c2a * (a(j) - mean_a)
    // with c1 = cross / ((var_a+eps)(var_b+eps)), c2a = cross / (var_a+eps).
    std::vector<double> A((size_t)V), FB((size_t)V), FC((size_t)V), FD((size_t)V);
    std::vector<double> GB((size_t)V), GC((size_t)V), GD((size_t)V);
    parallel_for(V, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            auto s = detail::cc_center(f, i);
            double da = s.var_a + eps, db = s.var_b + eps;
            double c1 = s.cross / (da * db);
            double c2a = s.cross / da;
            double c2b = s.cross / db;
            A[(size_t)i] = c1;
            FB[(size_t)i] = c1 * s.mean_b;
            FC[(size_t)i] = c1 * c2a;
            FD[(size_t)i] = c1 * c2a * s.mean_a;
            GB[(size_t)i] = c1 * s.mean_a;
            GC[(size_t)i] = c1 * c2b;
            GD[(size_t)i] = c1 * c2b * s.mean_b;
        }
    });

    std::vector<double> scratch((size_t)V);
    Shape3 shp = a.shape;
    detail::box_sum_adjoint(A, scratch, shp, r);
    detail::box_sum_adjoint(FB, scratch, shp, r);
    detail::box_sum_adjoint(FC, scratch, shp, r);
    detail::box_sum_adjoint(FD, scratch, shp, r);
    detail::box_sum_adjoint(GB, scratch, shp, r);
    detail::box_sum_adjoint(GC, scratch, shp, r);
    detail::box_sum_adjoint(GD, scratch, shp, r);

    const double k = 2.0 * upstream / (double)V;
    parallel_for(V, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            double av = (double)a.v[(size_t)i], bv = (double)b.v[(size_t)i];
            grad_a.v[(size_t)i] +=
                (T)(k * (bv * A[(size_t)i] - FB[(size_t)i] - av * FC[(size_t)i] + FD[(size_t)i]));
            grad_b.v[(size_t)i] +=
                (T)(k * (av * A[(size_t)i] - GB[(size_t)i] - bv * GC[(size_t)i] + GD[(size_t)i]));
        }
    });
}

enum class CycleNorm { mean, sum };

struct LossReport {
    double similarity_forward = 0.0;
    double similarity_backward = 0.0;
    double cycle = 0.0;
    double total = 0.0;
    double cycle_weight = 1.0;
};

struct LossOptions {
    int64_t window = 9;
    double cycle_weight = 1.0;
    double eps = 1e-5;
    CycleNorm cycle_norm = CycleNorm::mean;
};

namespace detail {

template <typename T>
double l1_residual(const Tensor3<T>& x, const Tensor3<T>& ref, CycleNorm norm) {
    double s = 0.0;
    for (size_t i = 0; i < x.v.size(); ++i) s += std::abs((double)x.v[i] - (double)ref.v[i]);
    return norm == CycleNorm::mean ? s / (double)x.v.size() : s;
}

}  // namespace detail

/// -CC(S o flow_st, T) - CC(T o flow_ts, S); always in [-2, 0].
template <typename T>
double similarity_loss_t(const Tensor3<T>& S, const Tensor3<T>& Tv, const Tensor3<T>& flow_st,
                         const Tensor3<T>& flow_ts, int64_t window, double eps = 1e-5) {
    Tensor3<T> ws = trilinear_warp_t(S, flow_st);
    Tensor3<T> wt = trilinear_warp_t(Tv, flow_ts);
    return -local_cc_t(ws, Tv, window, eps) - local_cc_t(wt, S, window, eps);
}

/// Round-trip L1: |(T o flow_ts) o flow_st - T| + |(S o flow_st) o flow_ts - S|,
/// each term a per-voxel mean by default.
template <typename T>
double cycle_loss_t(const Tensor3<T>& S, const Tensor3<T>& Tv, const Tensor3<T>& flow_st,
                    const Tensor3<T>& flow_ts, CycleNorm norm = CycleNorm::mean) {
    Tensor3<T> rt = sequential_warp_t(Tv, flow_ts, flow_st);
    Tensor3<T> rs = sequential_warp_t(S, flow_st, flow_ts);
    return detail::l1_residual(rt, Tv, norm) + detail::l1_residual(rs, S, norm);
}

template <typename T>
LossReport total_loss_t(const Tensor3<T>& S, const Tensor3<T>& Tv, const Tensor3<T>& flow_st,
                        const Tensor3<T>& flow_ts, const LossOptions& opt = {}) {
    require(opt.cycle_weight >= 0.0, "total_loss: cycle_weight must be >= 0");
    Tensor3<T> ws = trilinear_warp_t(S, flow_st);
    Tensor3<T> wt = trilinear_warp_t(Tv, flow_ts);
    LossReport rep;
    rep.cycle_weight = opt.cycle_weight;
    rep.similarity_forward = -local_cc_t(ws, Tv, opt.window, opt.eps);
    rep.similarity_backward = -local_cc_t(wt, S, opt.window, opt.eps);
    Tensor3<T> rt = trilinear_warp_t(wt, flow_st);
    Tensor3<T> rs = trilinear_warp_t(ws, flow_ts);
    rep.cycle = detail::l1_residual(rt, Tv, opt.cycle_norm) + detail::l1_residual(rs, S, opt.cycle_norm);
    rep.total = rep.similarity_forward + rep.similarity_backward + opt.cycle_weight * rep.cycle;
    return rep;
}

/// Gradient of the total loss with respect to both flow fields. grad_flow_st
/// and grad_flow_ts are overwritten. The L1 subgradient at 0 is taken as 0.
/// Returns the same report as total_loss_t evaluated at the inputs.
template <typename T>
LossReport total_loss_grad_t(const Tensor3<T>& S, const Tensor3<T>& Tv, const Tensor3<T>& flow_st,
                             const Tensor3<T>& flow_ts, Tensor3<T>& grad_flow_st,
                             Tensor3<T>& grad_flow_ts, const LossOptions& opt = {}) {
    require(opt.cycle_weight >= 0.0, "total_loss: cycle_weight must be >= 0");
    const int64_t V = S.plane();
    Tensor3<T> ws = trilinear_warp_t(S, flow_st);   // S o phi_st
    Tensor3<T> wt = trilinear_warp_t(Tv, flow_ts);  // T o phi_ts
    Tensor3<T> rt = trilinear_warp_t(wt, flow_st);  // (T o phi_ts) o phi_st
    Tensor3<T> rs = trilinear_warp_t(ws, flow_ts);  // (S o phi_st) o phi_ts

    LossReport rep;
    rep.cycle_weight = opt.cycle_weight;
    rep.similarity_forward = -local_cc_t(ws, Tv, opt.window, opt.eps);
    rep.similarity_backward = -local_cc_t(wt, S, opt.window, opt.eps);
    rep.cycle =
        detail::l1_residual(rt, Tv, opt.cycle_norm) + detail::l1_residual(rs, S, opt.cycle_norm);
    rep.total = rep.similarity_forward + rep.similarity_backward + opt.cycle_weight * rep.cycle;

    grad_flow_st = Tensor3<T>(flow_st.shape, 3);
    grad_flow_ts = Tensor3<T>(flow_ts.shape, 3);
    Tensor3<T> g_ws(ws.shape, 1), g_wt(wt.shape, 1);
    Tensor3<T> sink(ws.shape, 1);

    // Cycle terms enter through the second resample.
    if (opt.cycle_weight > 0.0) {
        double scale = opt.cycle_weight * (opt.cycle_norm == CycleNorm::mean ? 1.0 / (double)V : 1.0);
        Tensor3<T> g_rt(rt.shape, 1), g_rs(rs.shape, 1);
        for (int64_t i = 0; i < V; ++i) {
            double dt = (double)rt.v[(size_t)i] - (double)Tv.v[(size_t)i];
            double ds = (double)rs.v[(size_t)i] - (double)S.v[(size_t)i];
            g_rt.v[(size_t)i] = (T)(dt > 0.0 ? scale : (dt < 0.0 ? -scale : 0.0));
            g_rs.v[(size_t)i] = (T)(ds > 0.0 ? scale : (ds < 0.0 ? -scale : 0.0));
        }
        trilinear_warp_grad_t(wt, flow_st, g_rt, g_wt, grad_flow_st);
        trilinear_warp_grad_t(ws, flow_ts, g_rs, g_ws, grad_flow_ts);
    }

    // Similarity terms (upstream -1 for the negated correlations).
    local_cc_grad_t(ws, Tv, opt.window, -1.0, g_ws, sink, opt.eps);
    sink.fill(T(0));
    local_cc_grad_t(wt, S, opt.window, -1.0, g_wt, sink, opt.eps);

    // Through the first resamples into the flow fields.
    sink.fill(T(0));
    trilinear_warp_grad_t(S, flow_st, g_ws, sink, grad_flow_st);
    sink.fill(T(0));
    trilinear_warp_grad_t(Tv, flow_ts, g_wt, sink, grad_flow_ts);
    return rep;
}

/// Gradient of the cycle term alone (unit weight) with respect to both flows;
/// accumulates into grad_flow_st / grad_flow_ts.
template <typename T>
double cycle_loss_grad_t(const Tensor3<T>& S, const Tensor3<T>& Tv, const Tensor3<T>& flow_st,
                         const Tensor3<T>& flow_ts, Tensor3<T>& grad_flow_st,
                         Tensor3<T>& grad_flow_ts, CycleNorm norm = CycleNorm::mean) {
    const int64_t V = S.plane();
    Tensor3<T> ws = trilinear_warp_t(S, flow_st);
    Tensor3<T> wt = trilinear_warp_t(Tv, flow_ts);
    Tensor3<T> rt = trilinear_warp_t(wt, flow_st);
    Tensor3<T> rs = trilinear_warp_t(ws, flow_ts);
    double value = detail::l1_residual(rt, Tv, norm) + detail::l1_residual(rs, S, norm);

    double scale = norm == CycleNorm::mean ? 1.0 / (double)V : 1.0;
    Tensor3<T> g_rt(rt.shape, 1), g_rs(rs.shape, 1);
    for (int64_t i = 0; i < V; ++i) {
        double dt = (double)rt.v[(size_t)i] - (double)Tv.v[(size_t)i];
        double ds = (double)rs.v[(size_t)i] - (double)S.v[(size_t)i];
        g_rt.v[(size_t)i] = (T)(dt > 0.0 ? scale : (dt < 0.0 ? -scale : 0.0));
        g_rs.v[(size_t)i] = (T)(ds > 0.0 ? scale : (ds < 0.0 ? -scale : 0.0));
    }
    Tensor3<T> g_wt(wt.shape, 1), g_ws(ws.shape, 1), sink(ws.shape, 1);
    trilinear_warp_grad_t(wt, flow_st, g_rt, g_wt, grad_flow_st);
    trilinear_warp_grad_t(ws, flow_ts, g_rs, g_ws, grad_flow_ts);
    trilinear_warp_grad_t(S, flow_st, g_ws, sink, grad_flow_st);
    sink.fill(T(0));
    trilinear_warp_grad_t(Tv, flow_ts, g_wt, sink, grad_flow_ts);
    return value;
}

/// Forward-similarity-only objective (-CC(S o flow_st, T)) and its gradient,
/// used by the single-decoder ablation.
template <typename T>
double similarity_fwd_loss_grad_t(const Tensor3<T>& S, const Tensor3<T>& Tv,
                                  const Tensor3<T>& flow_st, Tensor3<T>& grad_flow_st,
                                  int64_t window, double eps = 1e-5) {
    Tensor3<T> ws = trilinear_warp_t(S, flow_st);
    double value = -local_cc_t(ws, Tv, window, eps);
    grad_flow_st = Tensor3<T>(flow_st.shape, 3);
    Tensor3<T> g_ws(ws.shape, 1), sink(ws.shape, 1);
    local_cc_grad_t(ws, Tv, window, -1.0, g_ws, sink, eps);
    sink.fill(T(0));
    trilinear_warp_grad_t(S, flow_st, g_ws, sink, grad_flow_st);
    return value;
}

}  // namespace invreg
