#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "invreg/adam.hpp"
#include "invreg/io_util.hpp"
#include "invreg/loss.hpp"
#include "invreg/net.hpp"
#include "invreg/volume.hpp"

namespace invreg {

struct TrainConfig {
    double learning_rate = 1e-4;
    int64_t epochs = 1;
    int64_t window = 9;
    double cycle_weight = 1.0;
    uint64_t seed = 0;
    bool ablate_backward = false;  // single-decoder mode: no backward flow, no cycle term
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int levels = 4;
    int64_t base_channels = 32;
    CycleNorm cycle_norm = CycleNorm::mean;
    double cc_eps = 1e-5;

    void validate() const {
        require(learning_rate > 0.0, "train: learning_rate must be > 0");
        require(epochs >= 1, "train: epochs must be >= 1");
        require(window >= 1 && window % 2 == 1, "train: window must be odd");
        require(cycle_weight >= 0.0, "train: cycle_weight must be >= 0");
    }
};

/// All ordered (source, target) pairs with source != target, ascending.
inline std::vector<std::pair<int, int>> make_pairs(int n_subjects) {
    require(n_subjects >= 2, "make_pairs: need at least 2 subjects");
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve((size_t)n_subjects * (size_t)(n_subjects - 1));
    for (int s = 0; s < n_subjects; ++s)
        for (int t = 0; t < n_subjects; ++t)
            if (s != t) pairs.emplace_back(s, t);
    return pairs;
}

inline std::vector<std::pair<int, int>> shuffled_pairs(int n_subjects, uint64_t seed, int64_t epoch) {
    auto pairs = make_pairs(n_subjects);
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + (uint64_t)epoch + 1);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    return pairs;
}

struct TrainLogRow {
    int64_t epoch;
    int pair_src, pair_dst;
    LossReport loss;
};

inline std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
    std::string out = "epoch,pair_src,pair_dst,sim_fwd,sim_bwd,cycle,total\n";
    for (const auto& r : rows) {
        out += std::to_string(r.epoch) + "," + std::to_string(r.pair_src) + "," +
               std::to_string(r.pair_dst) + "," + fmt_g(r.loss.similarity_forward) + "," +
               fmt_g(r.loss.similarity_backward) + "," + fmt_g(r.loss.cycle) + "," +
               fmt_g(r.loss.total) + "\n";
    }
    return out;
}

struct TrainResult {
    Network<float> net;
    std::vector<TrainLogRow> log;
};

/// Pairwise trainer: every epoch visits all N*(N-1) ordered pairs in a
/// seeded shuffle, one Adam step per pair. Writes a checkpoint per epoch and
/// the per-pair loss log when out_dir is nonempty. Deterministic per seed.
inline TrainResult train(const std::vector<Volume3>& subjects, const TrainConfig& cfg,
                         const std::string& out_dir = "") {
    cfg.validate();
    require(subjects.size() >= 2, "train: need at least 2 subjects");
    const Shape3 shape = subjects[0].header.shape;
    for (const auto& s : subjects) {
        require(s.header.shape == shape, "train: subjects must share one shape");
        require(s.header.channels == 1, "train: subjects must be single channel");
    }

    TrainResult res;
    res.net = build_network<float>(cfg.levels, cfg.base_channels, shape, cfg.seed);
    AdamState<float> adam(res.net.params.size());
    AdamConfig acfg{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
    LossOptions lopt{cfg.window, cfg.cycle_weight, cfg.cc_eps, cfg.cycle_norm};

    std::vector<Tensor3<float>> vols;
    vols.reserve(subjects.size());
    for (const auto& s : subjects) vols.push_back(to_tensor<float>(s));

    if (!out_dir.empty()) ensure_dir(out_dir);

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto pairs = shuffled_pairs((int)subjects.size(), cfg.seed, epoch);
        for (auto [si, ti] : pairs) {
            const Tensor3<float>& S = vols[(size_t)si];
            const Tensor3<float>& Tv = vols[(size_t)ti];
            NetTape<float> tape;
            auto flows = net_forward(res.net, S, Tv, &tape, !cfg.ablate_backward);

            LossReport rep;
            Tensor3<float> gfst, gfts;
            if (cfg.ablate_backward) {
                rep.cycle_weight = cfg.cycle_weight;
                rep.similarity_forward =
                    similarity_fwd_loss_grad_t(S, Tv, flows.flow_st, gfst, cfg.window, cfg.cc_eps);
                rep.total = rep.similarity_forward;
                gfts = Tensor3<float>(shape, 3);
            } else {
                rep = total_loss_grad_t(S, Tv, flows.flow_st, flows.flow_ts, gfst, gfts, lopt);
            }

            res.net.zero_grads();
            net_backward(res.net, tape, gfst, gfts);
            adam_step(adam, res.net.params, res.net.grads, acfg);
            res.log.push_back({epoch, si, ti, rep});
        }
        if (!out_dir.empty()) {
            char name[64];
            std::snprintf(name, sizeof(name), "ckpt_epoch_%04d.ckpt", (int)epoch);
            CheckpointMeta meta{cfg.window, cfg.cycle_weight, cfg.seed, epoch};
            save_checkpoint(res.net, meta, out_dir + "/" + name);
        }
    }
    if (!out_dir.empty()) {
        CheckpointMeta meta{cfg.window, cfg.cycle_weight, cfg.seed, cfg.epochs - 1};
        save_checkpoint(res.net, meta, out_dir + "/checkpoint.ckpt");
        write_text_file(out_dir + "/train_log.csv", train_log_csv(res.log));
    }
    return res;
}

}  // namespace invreg
