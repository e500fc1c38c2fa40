#include <gtest/gtest.h>

#include <random>

#include "invreg/metrics.hpp"
#include "oracle.hpp"

using namespace invreg;

namespace {

LabelVolume3 random_labels(Shape3 shape, int max_label, uint64_t seed) {
    LabelVolume3 v = make_labels(shape);
    std::mt19937_64 rng(seed);
    for (auto& l : v.data) l = (uint16_t)(rng() % (uint64_t)(max_label + 1));
    return v;
}

}  // namespace

TEST(Dice, IdenticalVolumesScoreOne) {
    auto a = random_labels({6, 6, 6}, 4, 1);
    for (const auto& [label, d] : dice_per_label(a, a)) {
        EXPECT_NE(label, 0);
        EXPECT_DOUBLE_EQ(d, 1.0);
    }
}

TEST(Dice, DisjointSupportsScoreZero) {
    LabelVolume3 a = make_labels({4, 4, 4}), b = make_labels({4, 4, 4});
    a.at(0, 0, 0) = 5;
    b.at(3, 3, 3) = 5;
    auto d = dice_per_label(a, b);
    ASSERT_TRUE(d.count(5));
    EXPECT_DOUBLE_EQ(d[5], 0.0);
}

TEST(Dice, HandCountedExample) {
    // |A_5| = 4, |B_5| = 6, overlap 3 -> 2*3/10 = 0.6
    LabelVolume3 a = make_labels({4, 4, 4}), b = make_labels({4, 4, 4});
    for (int i = 0; i < 4; ++i) a.data[(size_t)i] = 5;
    for (int i = 1; i < 7; ++i) b.data[(size_t)i] = 5;
    auto d = dice_per_label(a, b);
    EXPECT_DOUBLE_EQ(d[5], 0.6);
}

TEST(Dice, AbsentLabelsOmitted) {
    LabelVolume3 a = make_labels({2, 2, 2}), b = make_labels({2, 2, 2});
    a.at(0, 0, 0) = 1;
    b.at(0, 0, 0) = 1;
    auto d = dice_per_label(a, b);
    EXPECT_EQ(d.size(), 1u);
    EXPECT_TRUE(d.count(1));
}

TEST(Dice, MatchesCountingOracleOnRandomPairs) {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        auto a = random_labels({8, 8, 8}, 3, 1000 + seed);
        auto b = random_labels({8, 8, 8}, 3, 2000 + seed);
        auto d = dice_per_label(a, b);
        auto d_sym = dice_per_label(b, a);
        for (const auto& [label, val] : d) {
            EXPECT_DOUBLE_EQ(val, oracle::dice_label(a, b, label));
            EXPECT_DOUBLE_EQ(val, d_sym[label]);
            EXPECT_GE(val, 0.0);
            EXPECT_LE(val, 1.0);
        }
    }
}

TEST(Bir, IdentityScoresOne) {
    auto a = random_labels({6, 6, 6}, 4, 3);
    EXPECT_DOUBLE_EQ(bir(a, a), 1.0);
}

TEST(Bir, AllBackgroundWarpedScoresZero) {
    LabelVolume3 target = make_labels({4, 4, 4}), warped = make_labels({4, 4, 4});
    for (int i = 0; i < 9; ++i) target.data[(size_t)i] = 2;
    EXPECT_DOUBLE_EQ(bir(target, warped), 0.0);
}

TEST(Bir, HandCountedExample) {
    // 10 nonzero target voxels, 4 mismatches on them + 2 on background:
    // 1 - 6/10 = 0.4
    LabelVolume3 target = make_labels({4, 4, 4}), warped = make_labels({4, 4, 4});
    for (int i = 0; i < 10; ++i) {
        target.data[(size_t)i] = 1;
        warped.data[(size_t)i] = 1;
    }
    for (int i = 0; i < 4; ++i) warped.data[(size_t)i] = 3;  // mismatch on support
    warped.data[20] = 7;                                     // mismatch on background
    warped.data[21] = 7;
    EXPECT_DOUBLE_EQ(bir(target, warped), 0.4);
}

TEST(Bir, AllZeroTargetRejected) {
    LabelVolume3 target = make_labels({2, 2, 2}), warped = make_labels({2, 2, 2});
    EXPECT_THROW(bir(target, warped), std::runtime_error);
}

TEST(Bir, MatchesCountingOracleAndBound) {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        auto t = random_labels({8, 8, 8}, 2, 3000 + seed);
        auto w = random_labels({8, 8, 8}, 2, 4000 + seed);
        bool has_support = false;
        for (auto l : t.data) has_support |= l != 0;
        if (!has_support) continue;
        double got = bir(t, w);
        EXPECT_DOUBLE_EQ(got, oracle::bir(t, w));
        EXPECT_LE(got, 1.0);
    }
}

TEST(Aggregate, KnownValues) {
    auto [m1, s1] = aggregate({0.5, 0.5});
    EXPECT_DOUBLE_EQ(m1, 0.5);
    EXPECT_DOUBLE_EQ(s1, 0.0);
    auto [m2, s2] = aggregate({0.0, 1.0});
    EXPECT_DOUBLE_EQ(m2, 0.5);
    EXPECT_DOUBLE_EQ(s2, 0.5);
    EXPECT_THROW(aggregate({}), std::runtime_error);
}

TEST(Aggregate, MatchesTwoPassReference) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    std::vector<double> values(90);
    for (auto& v : values) v = dist(rng);
    auto [mean, sd] = aggregate(values);
    auto [rmean, rsd] = oracle::mean_std_twopass(values);
    EXPECT_NEAR(mean, rmean, 1e-12);
    EXPECT_NEAR(sd, rsd, 1e-12);
}

TEST(Quantiles, LinearInterpolationRule) {
    std::vector<double> v{0.1, 0.3, 0.5, 0.7, 0.9};
    EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.25), 0.3);
    EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.5), 0.5);
    EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.75), 0.7);
    std::vector<double> w{1.0, 2.0, 3.0, 4.0};
    EXPECT_DOUBLE_EQ(quantile_sorted(w, 0.25), 1.75);
    EXPECT_DOUBLE_EQ(quantile_sorted(w, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(quantile_sorted(w, 0.75), 3.25);
}

TEST(EvaluatePairs, IdenticalPairPerfectScores) {
    auto labels = random_labels({6, 6, 6}, 3, 7);
    EvalReport rep = evaluate_pairs({{0, 1, labels, labels}});
    EXPECT_DOUBLE_EQ(rep.bir_mean, 1.0);
    EXPECT_DOUBLE_EQ(rep.bir_std, 0.0);
    for (const auto& row : rep.dice) EXPECT_DOUBLE_EQ(row.dice, 1.0);
}

TEST(EvaluatePairs, NinetyPairRowCountAndReports) {
    oracle::TempDir tmp("eval");
    std::vector<EvalPair> pairs;
    int id = 0;
    for (int s = 0; s < 10; ++s)
        for (int t = 0; t < 10; ++t) {
            if (s == t) continue;
            EvalPair p;
            p.src = s;
            p.dst = t;
            p.target = random_labels({4, 4, 4}, 2, 5000 + (uint64_t)id);
            p.warped = random_labels({4, 4, 4}, 2, 6000 + (uint64_t)id);
            bool has = false;
            for (auto l : p.target.data) has |= l != 0;
            if (!has) p.target.at(0, 0, 0) = 1;
            pairs.push_back(std::move(p));
            ++id;
        }
    ASSERT_EQ(pairs.size(), 90u);
    EvalReport rep = evaluate_pairs(pairs);
    EXPECT_EQ(rep.bir.size(), 90u);
    write_eval_reports(rep, tmp.path());
    auto count_lines = [&](const std::string& name) {
        auto bytes = oracle::read_file_bytes(tmp.file(name));
        return std::count(bytes.begin(), bytes.end(), '\n');
    };
    EXPECT_EQ(count_lines("bir.csv"), 91);     // header + 90 rows
    EXPECT_EQ(count_lines("summary.csv"), 3);  // header + bir + dice
    EXPECT_GT(count_lines("dice.csv"), 1);
    EXPECT_GT(count_lines("boxplot.csv"), 1);
}

TEST(EvaluatePairs, BoxplotQuantilesMatchSortOracle) {
    // five pairs, one shared label, known dice sequence
    std::vector<EvalPair> pairs;
    std::vector<double> dices;
    for (int k = 0; k < 5; ++k) {
        LabelVolume3 t = make_labels({8, 1, 1}), w = make_labels({8, 1, 1});
        for (int i = 0; i < 4; ++i) t.data[(size_t)i] = 1;
        for (int i = 0; i < 4; ++i) w.data[(size_t)(i + k)] = 1;  // overlap 4-k
        pairs.push_back({k, k + 1, t, w});
        dices.push_back(2.0 * (4 - k) / 8.0);
    }
    EvalReport rep = evaluate_pairs(pairs);
    ASSERT_EQ(rep.boxplot.size(), 1u);
    std::sort(dices.begin(), dices.end());
    EXPECT_DOUBLE_EQ(rep.boxplot[0].min, dices.front());
    EXPECT_DOUBLE_EQ(rep.boxplot[0].max, dices.back());
    EXPECT_DOUBLE_EQ(rep.boxplot[0].median, dices[2]);
    EXPECT_DOUBLE_EQ(rep.boxplot[0].q1, quantile_sorted(dices, 0.25));
    EXPECT_DOUBLE_EQ(rep.boxplot[0].q3, quantile_sorted(dices, 0.75));
}
