#include <gtest/gtest.h>

#include <map>

#include "invreg/metrics.hpp"
#include "invreg/synth.hpp"
#include "oracle.hpp"

using namespace invreg;

TEST(GaussianFlow, NoBumpsGivesZeroFlow) {
    FlowField3 f = gaussian_flow({8, 8, 8}, {});
    for (float v : f.data) EXPECT_EQ(v, 0.0f);
}

TEST(GaussianFlow, CenterAndSigmaValues) {
    GaussianBump b{{4.0, 4.0, 4.0}, {2.0, 0.0, 0.0}, 3.0};
    FlowField3 f = gaussian_flow({9, 9, 9}, {b});
    EXPECT_FLOAT_EQ(f.at(4, 4, 4, 0), 2.0f);  // exp(0) = 1
    EXPECT_FLOAT_EQ(f.at(4, 4, 4, 1), 0.0f);
    // at distance sigma from the center: amplitude * exp(-1/2)
    EXPECT_NEAR(f.at(7, 4, 4, 0), 2.0 * std::exp(-0.5), 1e-6);
}

TEST(GaussianFlow, AmplitudeBoundEnforced) {
    GaussianBump bad{{4.0, 4.0, 4.0}, {3.0, 0.0, 0.0}, 3.0};  // |amp| == sigma
    EXPECT_THROW(gaussian_flow({9, 9, 9}, {bad}), std::runtime_error);
    GaussianBump worse{{4.0, 4.0, 4.0}, {2.0, 2.0, 2.0}, 3.0};  // |amp| ~ 3.46
    EXPECT_THROW(gaussian_flow({9, 9, 9}, {worse}), std::runtime_error);
}

TEST(RandomGaussianFlow, RespectsDisplacementCap) {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        FlowField3 f = random_gaussian_flow({16, 16, 16}, 2, 2.5, seed);
        EXPECT_LE(max_flow_magnitude(f), 2.5 + 1e-6);
    }
}

TEST(MakePhantom, DeterministicPerSeed) {
    Phantom a = make_phantom({16, 16, 16}, 3, 42);
    Phantom b = make_phantom({16, 16, 16}, 3, 42);
    EXPECT_EQ(a.image.data, b.image.data);
    EXPECT_EQ(a.labels.data, b.labels.data);
    Phantom c = make_phantom({16, 16, 16}, 3, 43);
    EXPECT_NE(a.image.data, c.image.data);
}

TEST(MakePhantom, LabelCountMatchesRequest) {
    for (int n : {1, 2, 3}) {
        Phantom p = make_phantom({20, 20, 20}, n, 7);
        std::map<uint16_t, int64_t> counts;
        for (auto l : p.labels.data)
            if (l) ++counts[l];
        EXPECT_EQ((int)counts.size(), n);
        for (const auto& [label, c] : counts) {
            EXPECT_GE(label, 1);
            EXPECT_LE(label, n);
            EXPECT_GT(c, 0);
        }
    }
}

TEST(MakePhantom, LabelCentroidInsideItsBlob) {
    Phantom p = make_phantom({20, 20, 20}, 3, 11);
    std::map<uint16_t, std::array<double, 4>> acc;  // x, y, z, count
    const Shape3 s = p.labels.header.shape;
    for (int64_t z = 0; z < s[2]; ++z)
        for (int64_t y = 0; y < s[1]; ++y)
            for (int64_t x = 0; x < s[0]; ++x) {
                uint16_t l = p.labels.at(x, y, z);
                if (!l) continue;
                acc[l][0] += (double)x;
                acc[l][1] += (double)y;
                acc[l][2] += (double)z;
                acc[l][3] += 1.0;
            }
    for (const auto& [label, a] : acc) {
        int64_t cx = (int64_t)std::llround(a[0] / a[3]);
        int64_t cy = (int64_t)std::llround(a[1] / a[3]);
        int64_t cz = (int64_t)std::llround(a[2] / a[3]);
        EXPECT_EQ(p.labels.at(cx, cy, cz), label);  // balls are convex
    }
}

TEST(MakePhantom, RejectsBadRequests) {
    EXPECT_THROW(make_phantom({8, 8, 8}, 2, 1), std::runtime_error);     // too small
    EXPECT_THROW(make_phantom({16, 16, 16}, 400, 1), std::runtime_error);  // cannot place
}

TEST(MakePair, ZeroFlowGivesIdenticalPair) {
    Phantom p = make_phantom({16, 16, 16}, 2, 5);
    FlowField3 zero = make_flow({16, 16, 16});
    SynthPair pair = make_pair(p, zero);
    EXPECT_EQ(pair.target.data, pair.source.data);
    EXPECT_EQ(pair.target_labels.data, pair.source_labels.data);
}

TEST(MakePair, ConstantShiftMovesCentroids) {
    Phantom p = make_phantom({24, 24, 24}, 1, 9);
    // pull-style: flow = -2 in x moves content +2 voxels in x
    FlowField3 flow = make_flow({24, 24, 24});
    for (int64_t i = 0; i < flow.voxels(); ++i) flow.data[(size_t)i] = -2.0f;
    SynthPair pair = make_pair(p, flow);

    auto centroid_x = [](const LabelVolume3& v) {
        double sx = 0, n = 0;
        const Shape3 s = v.header.shape;
        for (int64_t z = 0; z < s[2]; ++z)
            for (int64_t y = 0; y < s[1]; ++y)
                for (int64_t x = 0; x < s[0]; ++x)
                    if (v.at(x, y, z)) {
                        sx += (double)x;
                        n += 1;
                    }
        return sx / n;
    };
    EXPECT_NEAR(centroid_x(pair.target_labels), centroid_x(pair.source_labels) + 2.0, 0.2);
    // overlap strictly decreases under a displacing flow
    auto dice = dice_per_label(pair.source_labels, pair.target_labels);
    for (const auto& [label, d] : dice) EXPECT_LT(d, 1.0);
}

TEST(GenerateDataset, DeterministicLayoutAndTruth) {
    SynthDataset a = generate_dataset({16, 16, 16}, 4, 2, 1.5, 77);
    SynthDataset b = generate_dataset({16, 16, 16}, 4, 2, 1.5, 77);
    ASSERT_EQ(a.images.size(), 4u);
    ASSERT_EQ(a.labels.size(), 4u);
    ASSERT_EQ(a.truth.size(), 4u);
    for (size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(a.images[i].data, b.images[i].data);
        EXPECT_LE(max_flow_magnitude(a.truth[i]), 1.5 + 1e-6);
    }
    // subjects differ from each other
    EXPECT_NE(a.images[0].data, a.images[1].data);
}

TEST(WriteDataset, EmitsExpectedFiles) {
    oracle::TempDir tmp("synth");
    SynthDataset ds = generate_dataset({16, 16, 16}, 3, 2, 1.0, 5);
    write_dataset(ds, tmp.path());
    for (int i = 0; i < 3; ++i) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "subjects/%02d_image.ivr", i);
        EXPECT_TRUE(std::filesystem::exists(tmp.file(buf)));
        std::snprintf(buf, sizeof(buf), "subjects/%02d_labels.ivr", i);
        EXPECT_TRUE(std::filesystem::exists(tmp.file(buf)));
        std::snprintf(buf, sizeof(buf), "truth/%02d_flow.ivr", i);
        EXPECT_TRUE(std::filesystem::exists(tmp.file(buf)));
    }
}
