#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "invreg/io_util.hpp"
#include "invreg/ivr_io.hpp"
#include "invreg/volume.hpp"
#include "invreg/warp.hpp"

namespace invreg {

struct GaussianBump {
    std::array<double, 3> center;
    std::array<double, 3> amplitude;  // peak displacement, voxel units
    double sigma = 1.0;
};

/// Sum-of-Gaussians displacement field:
/// phi(p) = sum_b amplitude_b * exp(-|p - center_b|^2 / (2 sigma_b^2)).
/// Each |amplitude| must stay below its sigma, which keeps the map invertible.
inline FlowField3 gaussian_flow(Shape3 shape, const std::vector<GaussianBump>& bumps) {
    for (const auto& b : bumps) {
        require(b.sigma > 0.0, "gaussian_flow: sigma must be positive");
        double amp = std::sqrt(b.amplitude[0] * b.amplitude[0] + b.amplitude[1] * b.amplitude[1] +
                               b.amplitude[2] * b.amplitude[2]);
        require(amp < b.sigma, "gaussian_flow: |amplitude| must be < sigma");
    }
    FlowField3 flow = make_flow(shape);
    const int64_t X = shape[0], Y = shape[1], Z = shape[2];
    const int64_t P = voxel_count(shape);
    for (int64_t z = 0; z < Z; ++z)
        for (int64_t y = 0; y < Y; ++y)
            for (int64_t x = 0; x < X; ++x) {
                int64_t p = x + X * (y + Y * z);
                double fx = 0, fy = 0, fz = 0;
                for (const auto& b : bumps) {
                    double dx = (double)x - b.center[0];
                    double dy = (double)y - b.center[1];
                    double dz = (double)z - b.center[2];
                    double w = std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * b.sigma * b.sigma));
                    fx += b.amplitude[0] * w;
                    fy += b.amplitude[1] * w;
                    fz += b.amplitude[2] * w;
                }
                flow.data[(size_t)p] = (float)fx;
                flow.data[(size_t)(p + P)] = (float)fy;
                flow.data[(size_t)(p + 2 * P)] = (float)fz;
            }
    return flow;
}

inline double max_flow_magnitude(const FlowField3& flow) {
    const int64_t P = flow.voxels();
    double best = 0.0;
    for (int64_t p = 0; p < P; ++p) {
        double fx = flow.data[(size_t)p];
        double fy = flow.data[(size_t)(p + P)];
        double fz = flow.data[(size_t)(p + 2 * P)];
        best = std::max(best, std::sqrt(fx * fx + fy * fy + fz * fz));
    }
    return best;
}

/// Random smooth deformation: `n_bumps` Gaussian bumps with centers in the
/// interior, peak displacement capped at max_disp.
inline FlowField3 random_gaussian_flow(Shape3 shape, int n_bumps, double max_disp, uint64_t seed) {
    std::mt19937_64 rng(seed);
    double min_dim = (double)std::min({shape[0], shape[1], shape[2]});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<GaussianBump> bumps;
    for (int i = 0; i < n_bumps; ++i) {
        GaussianBump b;
        for (int a = 0; a < 3; ++a)
            b.center[a] = (0.25 + 0.5 * unit(rng)) * (double)(shape[a] - 1);
        b.sigma = (0.22 + 0.10 * unit(rng)) * min_dim;
        double dir[3] = {gauss(rng), gauss(rng), gauss(rng)};
        double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
        if (norm < 1e-12) {
            dir[0] = 1.0;
            norm = 1.0;
        }
        double mag = (0.7 + 0.3 * unit(rng)) * std::min(max_disp, 0.8 * b.sigma) / (double)n_bumps;
        for (int a = 0; a < 3; ++a) b.amplitude[a] = dir[a] / norm * mag;
        bumps.push_back(b);
    }
    return gaussian_flow(shape, bumps);
}

struct Phantom {
    Volume3 image;
    LabelVolume3 labels;
};

/// Multi-blob phantom: soft spheres with distinct labels over a smooth
/// low-frequency textured background, normalized to [0, 1].
inline Phantom make_phantom(Shape3 shape, int n_blobs, uint64_t seed) {
    for (int a = 0; a < 3; ++a) require(shape[a] >= 16, "make_phantom: shape must be >= 16 per axis");
    require(n_blobs >= 1 && n_blobs < 65536, "make_phantom: blob count out of range");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double min_dim = (double)std::min({shape[0], shape[1], shape[2]});

    struct Blob {
        double c[3], r, amp;
    };
    std::vector<Blob> blobs;
    int attempts = 0;
    while ((int)blobs.size() < n_blobs) {
        require(++attempts < 20000, "make_phantom: cannot place non-overlapping blobs, reduce count");
        Blob b;
        b.r = (0.13 + 0.07 * unit(rng)) * min_dim;
        for (int a = 0; a < 3; ++a) {
            double margin = b.r + 1.5;
            if (2.0 * margin >= (double)(shape[a] - 1)) margin = (double)(shape[a] - 1) / 2.0 - 0.5;
            b.c[a] = margin + unit(rng) * ((double)(shape[a] - 1) - 2.0 * margin);
        }
        b.amp = 0.55 + 0.4 * unit(rng);
        bool ok = true;
        for (const auto& o : blobs) {
            double d2 = 0;
            for (int a = 0; a < 3; ++a) d2 += (b.c[a] - o.c[a]) * (b.c[a] - o.c[a]);
            if (std::sqrt(d2) < b.r + o.r + 1.0) {
                ok = false;
                break;
            }
        }
        if (ok) blobs.push_back(b);
    }

    // background texture: a few random low-frequency waves
    double w[3][3], phase[3];
    for (int k = 0; k < 3; ++k) {
        phase[k] = unit(rng) * 6.283185307179586;
        for (int a = 0; a < 3; ++a) w[k][a] = (0.08 + 0.20 * unit(rng)) / min_dim * 16.0;
    }

    Phantom out;
    out.image = make_volume(shape);
    out.labels = make_labels(shape);
    const int64_t X = shape[0], Y = shape[1], Z = shape[2];
    for (int64_t z = 0; z < Z; ++z)
        for (int64_t y = 0; y < Y; ++y)
            for (int64_t x = 0; x < X; ++x) {
                int64_t p = x + X * (y + Y * z);
                double v = 0.12;
                for (int k = 0; k < 3; ++k)
                    v += 0.008 * std::sin(w[k][0] * x + w[k][1] * y + w[k][2] * z + phase[k]);
                uint16_t label = 0;
                for (size_t bi = 0; bi < blobs.size(); ++bi) {
                    const auto& b = blobs[bi];
                    double dx = x - b.c[0], dy = y - b.c[1], dz = z - b.c[2];
                    double d = std::sqrt(dx * dx + dy * dy + dz * dz);
                    v += b.amp / (1.0 + std::exp((d - b.r) / 2.0));
                    if (d <= b.r) label = (uint16_t)(bi + 1);
                }
                out.image.data[(size_t)p] = (float)v;
                out.labels.data[(size_t)p] = label;
            }
    out.image = normalize_intensity(out.image);
    return out;
}

struct SynthPair {
    Volume3 source, target;
    LabelVolume3 source_labels, target_labels;
};

/// Deforms a phantom by a known flow: target = source resampled under the
/// flow, labels carried along with nearest-neighbour sampling.
inline SynthPair make_pair(const Phantom& phantom, const FlowField3& flow_gt) {
    require(phantom.image.header.shape == flow_gt.header.shape, "make_pair: shape mismatch");
    SynthPair p;
    p.source = phantom.image;
    p.source_labels = phantom.labels;
    p.target = trilinear_warp(phantom.image, flow_gt);
    p.target_labels = nearest_warp(phantom.labels, flow_gt);
    return p;
}

struct SynthDataset {
    std::vector<Volume3> images;
    std::vector<LabelVolume3> labels;
    std::vector<FlowField3> truth;  // template -> subject deformations
};

/// A family of subjects derived from one template phantom, each deformed by
/// its own random smooth flow. Deterministic per seed.
inline SynthDataset generate_dataset(Shape3 shape, int n_subjects, int n_blobs, double max_disp,
                                     uint64_t seed) {
    require(n_subjects >= 1, "generate_dataset: need at least 1 subject");
    Phantom tmpl = make_phantom(shape, n_blobs, seed);
    SynthDataset ds;
    for (int i = 0; i < n_subjects; ++i) {
        FlowField3 flow = random_gaussian_flow(shape, 2, max_disp, seed * 7919u + 101u * (uint64_t)(i + 1));
        SynthPair pair = make_pair(tmpl, flow);
        ds.images.push_back(std::move(pair.target));
        ds.labels.push_back(std::move(pair.target_labels));
        ds.truth.push_back(std::move(flow));
    }
    return ds;
}

/// Emits subjects/NN_image.ivr, subjects/NN_labels.ivr and truth/NN_flow.ivr.
inline void write_dataset(const SynthDataset& ds, const std::string& dir) {
    ensure_dir(dir + "/subjects");
    ensure_dir(dir + "/truth");
    char name[64];
    for (size_t i = 0; i < ds.images.size(); ++i) {
        std::snprintf(name, sizeof(name), "%s/subjects/%02d_image.ivr", dir.c_str(), (int)i);
        save_ivr(name, ds.images[i]);
        std::snprintf(name, sizeof(name), "%s/subjects/%02d_labels.ivr", dir.c_str(), (int)i);
        save_ivr(name, ds.labels[i]);
        std::snprintf(name, sizeof(name), "%s/truth/%02d_flow.ivr", dir.c_str(), (int)i);
        save_ivr(name, ds.truth[i]);
    }
}

}  // namespace invreg
