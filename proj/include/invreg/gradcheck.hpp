#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "invreg/layers.hpp"
#include "invreg/loss.hpp"
#include "invreg/net.hpp"
#include "invreg/warp.hpp"

namespace invreg {

// Central finite-difference audit of every analytic gradient in the library,
// all in double precision. Each item reports the worst relative error over a
// few seeds; relative means |a - fd| / max(|a|, |fd|, floor) with a floor
// tied to the largest gradient seen, the usual mixed tolerance.

struct GradCheckItem {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 1e-4;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckItem> items;
    bool all_pass = true;
};

namespace gradcheck_detail {

class RelErr {
public:
    void add(double analytic, double fd) {
        pairs_.push_back({analytic, fd});
        scale_ = std::max({scale_, std::abs(analytic), std::abs(fd)});
    }
    double max_rel() const {
        double worst = 0.0;
        double floor = std::max(1e-3 * scale_, 1e-12);
        for (auto [a, f] : pairs_) {
            double denom = std::max({std::abs(a), std::abs(f), floor});
            worst = std::max(worst, std::abs(a - f) / denom);
        }
        return worst;
    }
    size_t count() const { return pairs_.size(); }

private:
    std::vector<std::pair<double, double>> pairs_;
    double scale_ = 0.0;
};

inline Tensor3<double> random_tensor(Shape3 shape, int64_t channels, double lo, double hi,
                                     std::mt19937_64& rng) {
    Tensor3<double> t(shape, channels);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.v) v = dist(rng);
    return t;
}

inline double central_diff(std::vector<double>& x, size_t i, double h,
                           const std::function<double()>& f) {
    double keep = x[i];
    x[i] = keep + h;
    double fp = f();
    x[i] = keep - h;
    double fm = f();
    x[i] = keep;
    return (fp - fm) / (2.0 * h);
}

// The objectives with L1 terms, rectifiers or resampling are only piecewise
// smooth. When the probe straddles a kink the one-sided slopes disagree and
// the central difference is meaningless; such probes are skipped.
inline bool central_diff_smooth(std::vector<double>& x, size_t i, double h,
                                const std::function<double()>& f, double* fd_out,
                                double slope_tol = 0.03) {
    double keep = x[i];
    double f0 = f();
    x[i] = keep + h;
    double fp = f();
    x[i] = keep - h;
    double fm = f();
    x[i] = keep;
    double sp = (fp - f0) / h, sm = (f0 - fm) / h;
    *fd_out = (fp - fm) / (2.0 * h);
    double scale = std::max({std::abs(sp), std::abs(sm), 1e-8});
    return std::abs(sp - sm) <= slope_tol * scale + 1e-7;
}

}  // namespace gradcheck_detail

inline GradCheckReport run_gradient_audit(uint64_t seed, int n_seeds = 3) {
    using namespace gradcheck_detail;
    GradCheckReport report;
    auto push = [&](const std::string& name, double err, double tol) {
        bool pass = err < tol;
        report.items.push_back({name, err, tol, pass});
        report.all_pass = report.all_pass && pass;
    };

    const double h = 1e-4;

    // trilinear warp: image and flow adjoints
    {
        RelErr err_img, err_flow;
        for (int s = 0; s < n_seeds; ++s) {
            std::mt19937_64 rng(seed + 11 * (uint64_t)s);
            Shape3 shp{5, 4, 5};
            auto img = random_tensor(shp, 1, 0.0, 1.0, rng);
            auto flow = random_tensor(shp, 3, -1.2, 1.2, rng);
            auto up = random_tensor(shp, 1, -1.0, 1.0, rng);
            Tensor3<double> g_img(shp, 1), g_flow(shp, 3);
            trilinear_warp_grad_t(img, flow, up, g_img, g_flow);
            auto f = [&] {
                auto out = trilinear_warp_t(img, flow);
                double s2 = 0;
                for (size_t i = 0; i < out.v.size(); ++i) s2 += up.v[i] * out.v[i];
                return s2;
            };
            for (size_t i = 0; i < img.v.size(); ++i)
                err_img.add(g_img.v[i], central_diff(img.v, i, h, f));
            // piecewise linear in the flow: probes straddling a cell face or
            // the clamp boundary are skipped by the slope test
            double fd;
            for (size_t i = 0; i < flow.v.size(); ++i)
                if (central_diff_smooth(flow.v, i, h, f, &fd)) err_flow.add(g_flow.v[i], fd);
        }
        push("warp/grad_image", err_img.max_rel(), 1e-4);
        push("warp/grad_flow", err_flow.max_rel(), 1e-4);
    }

    // local squared NCC
    {
        RelErr err;
        for (int s = 0; s < n_seeds; ++s) {
            std::mt19937_64 rng(seed + 13 * (uint64_t)s + 1);
            Shape3 shp{5, 5, 5};
            auto a = random_tensor(shp, 1, 0.0, 1.0, rng);
            auto b = random_tensor(shp, 1, 0.0, 1.0, rng);
            Tensor3<double> ga(shp, 1), gb(shp, 1);
            local_cc_grad_t(a, b, 3, 1.0, ga, gb);
            auto f = [&] { return local_cc_t(a, b, 3); };
            for (size_t i = 0; i < a.v.size(); ++i) err.add(ga.v[i], central_diff(a.v, i, h, f));
            for (size_t i = 0; i < b.v.size(); ++i) err.add(gb.v[i], central_diff(b.v, i, h, f));
        }
        push("local_cc/grad", err.max_rel(), 1e-4);
    }

    // cycle loss through both resampling stages
    {
        RelErr err;
        for (int s = 0; s < n_seeds; ++s) {
            std::mt19937_64 rng(seed + 17 * (uint64_t)s + 2);
            Shape3 shp{5, 5, 4};
            auto S = random_tensor(shp, 1, 0.0, 1.0, rng);
            auto T = random_tensor(shp, 1, 0.0, 1.0, rng);
            auto fst = random_tensor(shp, 3, -0.9, 0.9, rng);
            auto fts = random_tensor(shp, 3, -0.9, 0.9, rng);
            Tensor3<double> gst(shp, 3), gts(shp, 3);
            cycle_loss_grad_t(S, T, fst, fts, gst, gts);
            auto f = [&] { return cycle_loss_t(S, T, fst, fts); };
            double fd;
            for (size_t i = 0; i < fst.v.size(); ++i)
                if (central_diff_smooth(fst.v, i, h, f, &fd)) err.add(gst.v[i], fd);
            for (size_t i = 0; i < fts.v.size(); ++i)
                if (central_diff_smooth(fts.v, i, h, f, &fd)) err.add(gts.v[i], fd);
        }
        push("cycle_loss/grad_flows", err.max_rel(), 1e-4);
    }

    // full objective w.r.t. both flows
    {
        RelErr err;
        for (int s = 0; s < n_seeds; ++s) {
            std::mt19937_64 rng(seed + 19 * (uint64_t)s + 3);
            Shape3 shp{5, 5, 5};
            auto S = random_tensor(shp, 1, 0.0, 1.0, rng);
            auto T = random_tensor(shp, 1, 0.0, 1.0, rng);
            auto fst = random_tensor(shp, 3, -0.9, 0.9, rng);
            auto fts = random_tensor(shp, 3, -0.9, 0.9, rng);
            LossOptions opt{3, 0.7, 1e-5, CycleNorm::mean};
            Tensor3<double> gst, gts;
            total_loss_grad_t(S, T, fst, fts, gst, gts, opt);
            auto f = [&] { return total_loss_t(S, T, fst, fts, opt).total; };
            double fd;
            for (size_t i = 0; i < fst.v.size(); ++i)
                if (central_diff_smooth(fst.v, i, h, f, &fd)) err.add(gst.v[i], fd);
            for (size_t i = 0; i < fts.v.size(); ++i)
                if (central_diff_smooth(fts.v, i, h, f, &fd)) err.add(gts.v[i], fd);
        }
        push("total_loss/grad_flows", err.max_rel(), 1e-4);
    }

    // convolution layers, both strides
    for (int stride : {1, 2}) {
        RelErr err;
        for (int s = 0; s < n_seeds; ++s) {
            std::mt19937_64 rng(seed + 23 * (uint64_t)s + (uint64_t)stride);
            Shape3 shp{6, 5, 4};
            const int64_t IC = 3, OC = 2;
            auto in = random_tensor(shp, IC, -1.0, 1.0, rng);
            std::vector<double> W(27 * IC * OC), B(OC);
            std::uniform_real_distribution<double> dist(-0.5, 0.5);
            for (auto& w : W) w = dist(rng);
            for (auto& b : B) b = dist(rng);
            Tensor3<double> out(conv_output_shape(shp, stride), OC);
            auto up = random_tensor(out.shape, OC, -1.0, 1.0, rng);
            auto f = [&] {
                Tensor3<double> o(conv_output_shape(shp, stride), OC);
                conv3_forward(in, o, W.data(), B.data(), stride);
                double s2 = 0;
                for (size_t i = 0; i < o.v.size(); ++i) s2 += up.v[i] * o.v[i];
                return s2;
            };
            std::vector<double> gW(W.size(), 0.0), gB(B.size(), 0.0);
            conv3_backward_params(up, in, gW.data(), gB.data(), stride);
            Tensor3<double> gin(shp, IC);
            conv3_backward_input(up, gin, W.data(), stride, IC);
            for (size_t i = 0; i < W.size(); i += 7) err.add(gW[i], central_diff(W, i, h, f));
            for (size_t i = 0; i < B.size(); ++i) err.add(gB[i], central_diff(B, i, h, f));
            for (size_t i = 0; i < in.v.size(); i += 11) err.add(gin.v[i], central_diff(in.v, i, h, f));
        }
        push(stride == 1 ? "conv3/stride1" : "conv3/stride2", err.max_rel(), 1e-4);
    }

    // leaky rectifier
    {
        RelErr err;
        for (int s = 0; s < n_seeds; ++s) {
            std::mt19937_64 rng(seed + 29 * (uint64_t)s + 5);
            Shape3 shp{4, 4, 4};
            auto x = random_tensor(shp, 2, -1.0, 1.0, rng);
            auto up = random_tensor(shp, 2, -1.0, 1.0, rng);
            auto f = [&] {
                Tensor3<double> y = x;
                leaky_relu_forward(y, kLeakySlope);
                double s2 = 0;
                for (size_t i = 0; i < y.v.size(); ++i) s2 += up.v[i] * y.v[i];
                return s2;
            };
            Tensor3<double> g = up;
            leaky_relu_backward(x, g, kLeakySlope);
            for (size_t i = 0; i < x.v.size(); ++i) {
                if (std::abs(x.v[i]) < 10 * h) continue;  // kink at 0
                err.add(g.v[i], central_diff(x.v, i, h, f));
            }
        }
        push("leaky_relu/grad", err.max_rel(), 1e-4);
    }

    // upsampling and skip-combine + concat are linear; check the adjoint
    // identity <L x, y> == <x, L^T y> directly.
    {
        std::mt19937_64 rng(seed + 31);
        Shape3 shp{4, 3, 5};
        auto x = random_tensor(shp, 3, -1.0, 1.0, rng);
        auto ox = upsample2_forward(x);
        auto y = random_tensor(ox.shape, 3, -1.0, 1.0, rng);
        auto xt = upsample2_adjoint(y, shp);
        double lhs = 0, rhs = 0;
        for (size_t i = 0; i < ox.v.size(); ++i) lhs += ox.v[i] * y.v[i];
        for (size_t i = 0; i < x.v.size(); ++i) rhs += x.v[i] * xt.v[i];
        double denom = std::max({std::abs(lhs), std::abs(rhs), 1e-12});
        push("upsample2/adjoint", std::abs(lhs - rhs) / denom, 1e-10);
    }
    {
        std::mt19937_64 rng(seed + 37);
        Shape3 shp{4, 4, 4};
        double worst = 0.0;
        for (bool subtract : {false, true}) {
            auto e = random_tensor(shp, 3, -1.0, 1.0, rng);
            auto d = random_tensor(shp, 3, -1.0, 1.0, rng);
            Tensor3<double> comb(shp, 3);
            for (size_t i = 0; i < comb.v.size(); ++i)
                comb.v[i] = subtract ? e.v[i] - d.v[i] : e.v[i] + d.v[i];
            auto out = concat_channels(comb, d);
            auto u = random_tensor(out.shape, 6, -1.0, 1.0, rng);
            double lhs = 0;
            for (size_t i = 0; i < out.v.size(); ++i) lhs += out.v[i] * u.v[i];
            double rhs = 0;
            size_t half = comb.v.size();
            for (size_t i = 0; i < half; ++i) {
                double gc = u.v[i], gd = u.v[half + i];
                rhs += e.v[i] * gc + d.v[i] * ((subtract ? -1.0 : 1.0) * gc + gd);
            }
            double denom = std::max({std::abs(lhs), std::abs(rhs), 1e-12});
            worst = std::max(worst, std::abs(lhs - rhs) / denom);
        }
        push("skip_concat/adjoint", worst, 1e-10);
    }

    // full network through the training objective, sampled parameters
    {
        RelErr err;
        const double hn = 1e-6;
        for (int s = 0; s < n_seeds; ++s) {
            std::mt19937_64 rng(seed + 41 * (uint64_t)s + 7);
            Shape3 shp{12, 12, 12};
            auto net = build_network<double>(2, 4, shp, seed + (uint64_t)s);
            // the flow heads initialize to zero, which would zero out the
            // gradient of everything upstream of them; audit at a general
            // position instead
            std::uniform_real_distribution<double> jitter(-0.05, 0.05);
            for (auto& p : net.params) p += jitter(rng);
            auto S = random_tensor(shp, 1, 0.0, 1.0, rng);
            auto T = random_tensor(shp, 1, 0.0, 1.0, rng);
            LossOptions opt{5, 1.0, 1e-5, CycleNorm::mean};

            NetTape<double> tape;
            auto flows = net_forward(net, S, T, &tape);
            Tensor3<double> gst, gts;
            total_loss_grad_t(S, T, flows.flow_st, flows.flow_ts, gst, gts, opt);
            net.zero_grads();
            net_backward(net, tape, gst, gts);

            auto f = [&] {
                auto fl = net_forward(net, S, T);
                return total_loss_t(S, T, fl.flow_st, fl.flow_ts, opt).total;
            };
            std::uniform_int_distribution<size_t> pick(0, net.params.size() - 1);
            int checked = 0;
            for (int i = 0; i < 120 && checked < 34; ++i) {
                size_t j = pick(rng);
                double fd;
                // very tight slope tolerance: with thousands of voxels one
                // L1 residual or rectifier crossing moves the slope by well
                // under a percent yet corrupts the quotient near 1e-4
                if (central_diff_smooth(net.params, j, hn, f, &fd, 1e-3)) {
                    err.add(net.grads[j], fd);
                    ++checked;
                }
            }
        }
        // a vacuous pass (all probes rejected) must not count
        push("network/params", err.count() >= (size_t)(30 * n_seeds)
                                   ? err.max_rel()
                                   : std::numeric_limits<double>::infinity(),
             1e-4);
    }

    return report;
}

inline std::string format_gradcheck(const GradCheckReport& report) {
    std::string out;
    char line[160];
    for (const auto& item : report.items) {
        std::snprintf(line, sizeof(line), "%-24s max_rel_err %.3e  tol %.0e  %s\n",
                      item.name.c_str(), item.max_rel_err, item.tolerance,
                      item.pass ? "PASS" : "FAIL");
        out += line;
    }
    out += report.all_pass ? "gradient audit: PASS\n" : "gradient audit: FAIL\n";
    return out;
}

}  // namespace invreg
