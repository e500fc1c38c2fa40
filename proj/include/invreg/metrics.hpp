#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "invreg/io_util.hpp"
#include "invreg/volume.hpp"

namespace invreg {

/// Per-label Dice overlap 2|A∩B| / (|A|+|B|) over all nonzero labels present
/// in either volume; labels absent from both are omitted.
inline std::map<uint16_t, double> dice_per_label(const LabelVolume3& a, const LabelVolume3& b) {
    require(a.header.shape == b.header.shape, "dice_per_label: shape mismatch");
    std::map<uint16_t, int64_t> count_a, count_b, inter;
    for (size_t i = 0; i < a.data.size(); ++i) {
        uint16_t la = a.data[i], lb = b.data[i];
        if (la) ++count_a[la];
        if (lb) ++count_b[lb];
        if (la && la == lb) ++inter[la];
    }
    std::map<uint16_t, double> dice;
    auto add = [&](uint16_t label) {
        if (dice.count(label)) return;
        int64_t ca = count_a.count(label) ? count_a[label] : 0;
        int64_t cb = count_b.count(label) ? count_b[label] : 0;
        int64_t ci = inter.count(label) ? inter[label] : 0;
        dice[label] = 2.0 * (double)ci / (double)(ca + cb);
    };
    for (const auto& [l, _] : count_a) add(l);
    for (const auto& [l, _] : count_b) add(l);
    return dice;
}

/// Binary intensity ratio: 1 - |{p : target != warped}| / |{p : target != 0}|.
/// Can go negative when mismatches outside the target support dominate.
inline double bir(const LabelVolume3& target, const LabelVolume3& warped) {
    require(target.header.shape == warped.header.shape, "bir: shape mismatch");
    int64_t diff = 0, support = 0;
    for (size_t i = 0; i < target.data.size(); ++i) {
        if (target.data[i] != warped.data[i]) ++diff;
        if (target.data[i] != 0) ++support;
    }
    require(support > 0, "bir: target has no nonzero voxels");
    return 1.0 - (double)diff / (double)support;
}

/// Arithmetic mean and population (divisor n) standard deviation.
inline std::pair<double, double> aggregate(const std::vector<double>& values) {
    require(!values.empty(), "aggregate: empty list");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= (double)values.size();
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= (double)values.size();
    return {mean, std::sqrt(var)};
}

/// Quantile by linear interpolation between order statistics of the sorted
/// sample (the same rule most plotting packages use for boxplots).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    require(!sorted.empty(), "quantile: empty list");
    if (sorted.size() == 1) return sorted[0];
    double pos = q * (double)(sorted.size() - 1);
    size_t lo = (size_t)std::floor(pos);
    size_t hi = std::min(lo + 1, sorted.size() - 1);
    double frac = pos - (double)lo;
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct EvalPair {
    int src = 0, dst = 0;
    LabelVolume3 target;
    LabelVolume3 warped;
};

struct DiceRow {
    int src, dst;
    uint16_t label;
    double dice;
};

struct BirRow {
    int src, dst;
    double bir;
};

struct BoxplotRow {
    uint16_t label;
    double min, q1, median, q3, max;
};

struct EvalReport {
    std::vector<DiceRow> dice;
    std::vector<BirRow> bir;
    double bir_mean = 0, bir_std = 0;
    double dice_mean = 0, dice_std = 0;
    std::vector<BoxplotRow> boxplot;  // per-label Dice quantiles across pairs
};

inline EvalReport evaluate_pairs(const std::vector<EvalPair>& pairs) {
    require(!pairs.empty(), "evaluate_pairs: empty pair list");
    EvalReport rep;
    std::map<uint16_t, std::vector<double>> per_label;
    std::vector<double> bir_values, dice_values;
    for (const auto& p : pairs) {
        double b = bir(p.target, p.warped);
        rep.bir.push_back({p.src, p.dst, b});
        bir_values.push_back(b);
        for (const auto& [label, d] : dice_per_label(p.target, p.warped)) {
            rep.dice.push_back({p.src, p.dst, label, d});
            dice_values.push_back(d);
            per_label[label].push_back(d);
        }
    }
    std::tie(rep.bir_mean, rep.bir_std) = aggregate(bir_values);
    if (!dice_values.empty()) std::tie(rep.dice_mean, rep.dice_std) = aggregate(dice_values);
    for (auto& [label, values] : per_label) {
        std::sort(values.begin(), values.end());
        rep.boxplot.push_back({label, values.front(), quantile_sorted(values, 0.25),
                               quantile_sorted(values, 0.5), quantile_sorted(values, 0.75),
                               values.back()});
    }
    return rep;
}

/// Emits dice.csv, bir.csv, summary.csv and boxplot.csv into `dir`.
inline void write_eval_reports(const EvalReport& rep, const std::string& dir) {
    ensure_dir(dir);
    std::string dice = "pair_src,pair_dst,label,dice\n";
    for (const auto& r : rep.dice)
        dice += std::to_string(r.src) + "," + std::to_string(r.dst) + "," + std::to_string(r.label) +
                "," + fmt_g(r.dice) + "\n";
    write_text_file(dir + "/dice.csv", dice);

    std::string bir = "pair_src,pair_dst,bir\n";
    for (const auto& r : rep.bir)
        bir += std::to_string(r.src) + "," + std::to_string(r.dst) + "," + fmt_g(r.bir) + "\n";
    write_text_file(dir + "/bir.csv", bir);

    std::string summary = "metric,mean,std\n";
    summary += "bir," + fmt_g(rep.bir_mean) + "," + fmt_g(rep.bir_std) + "\n";
    summary += "dice," + fmt_g(rep.dice_mean) + "," + fmt_g(rep.dice_std) + "\n";
    write_text_file(dir + "/summary.csv", summary);

    std::string box = "label,min,q1,median,q3,max\n";
    for (const auto& r : rep.boxplot)
        box += std::to_string(r.label) + "," + fmt_g(r.min) + "," + fmt_g(r.q1) + "," +
               fmt_g(r.median) + "," + fmt_g(r.q3) + "," + fmt_g(r.max) + "\n";
    write_text_file(dir + "/boxplot.csv", box);
}

}  // namespace invreg
