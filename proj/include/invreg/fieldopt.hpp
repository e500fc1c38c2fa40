#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "invreg/adam.hpp"
#include "invreg/io_util.hpp"
#include "invreg/loss.hpp"
#include "invreg/volume.hpp"

namespace invreg {

struct FieldOptConfig {
    double lr = 1e-2;
    int64_t steps = 200;
    int64_t window = 9;
    double cycle_weight = 1.0;
    uint64_t seed = 0;
    CycleNorm cycle_norm = CycleNorm::mean;
    double cc_eps = 1e-5;
};

struct FieldOptResult {
    FlowField3 flow_st, flow_ts;
    std::vector<LossReport> trace;  // loss before each step, then the final value
};

inline std::string fieldopt_trace_csv(const std::vector<LossReport>& trace) {
    std::string out = "step,sim_fwd,sim_bwd,cycle,total\n";
    for (size_t i = 0; i < trace.size(); ++i)
        out += std::to_string(i) + "," + fmt_g(trace[i].similarity_forward) + "," +
               fmt_g(trace[i].similarity_backward) + "," + fmt_g(trace[i].cycle) + "," +
               fmt_g(trace[i].total) + "\n";
    return out;
}

/// Network-free registration baseline: Adam directly on the two flow grids
/// (zero-initialized) against the same similarity + cycle objective.
inline FieldOptResult optimize_fields(const Volume3& S, const Volume3& T, const FieldOptConfig& cfg) {
    require(S.header.shape == T.header.shape, "optimize_fields: shape mismatch");
    require(S.header.channels == 1 && T.header.channels == 1,
            "optimize_fields: inputs must be single channel");
    require(cfg.steps >= 0, "optimize_fields: steps must be >= 0");

    const Shape3 shape = S.header.shape;
    Tensor3<float> s = to_tensor<float>(S), t = to_tensor<float>(T);
    Tensor3<float> fst(shape, 3), fts(shape, 3);
    LossOptions lopt{cfg.window, cfg.cycle_weight, cfg.cc_eps, cfg.cycle_norm};
    AdamConfig acfg{cfg.lr, 0.9, 0.999, 1e-8};
    AdamState<float> adam_st(fst.v.size()), adam_ts(fts.v.size());

    FieldOptResult res;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        Tensor3<float> gst, gts;
        LossReport rep = total_loss_grad_t(s, t, fst, fts, gst, gts, lopt);
        res.trace.push_back(rep);
        adam_step(adam_st, fst.v, gst.v, acfg);
        adam_step(adam_ts, fts.v, gts.v, acfg);
    }
    res.trace.push_back(total_loss_t(s, t, fst, fts, lopt));
    res.flow_st = to_flow(fst, S.header.voxel_size_mm);
    res.flow_ts = to_flow(fts, S.header.voxel_size_mm);
    return res;
}

}  // namespace invreg
