#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "csds/imaging.hpp"
#include "csds/tensor.hpp"

namespace csds {

/// Dice as a percentage; both-empty pairs score 100 by convention.
inline double dice_score(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw DimensionError("dice_score: mask shapes differ");
    std::size_t inter = 0, p = 0, g = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        p += pred.values[i];
        g += gt.values[i];
        inter += static_cast<std::size_t>(pred.values[i] & gt.values[i]);
    }
    if (p + g == 0) return 100.0;
    return 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

inline double jaccard_score(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw DimensionError("jaccard_score: mask shapes differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += static_cast<std::size_t>(pred.values[i] & gt.values[i]);
        uni += static_cast<std::size_t>(pred.values[i] | gt.values[i]);
    }
    if (uni == 0) return 100.0;
    return 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
}

/// Argmax over channels of [C,H,W] logits or probabilities; class 1 of a
/// 2-class output becomes the foreground bit.
inline BinaryMask logits_to_mask(const Tensor& logits) {
    int c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    BinaryMask out(h, w);
    const float* z = logits.data().data();
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        float bv = z[i];
        for (int ci = 1; ci < c; ++ci)
            if (z[ci * plane + i] > bv) {
                bv = z[ci * plane + i];
                best = ci;
            }
        out.values[i] = best > 0 ? 1 : 0;
    }
    return out;
}

inline BinaryMask tensor_to_mask(const Tensor& mask01) {
    int h = mask01.dim(1), w = mask01.dim(2);
    BinaryMask out(h, w);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = mask01[i] > 0.5f ? 1 : 0;
    return out;
}

struct MetricRow {
    std::string run_id;
    int fold = 0;
    int epoch = 0;
    std::string split;
    double dice = 0.0;
    double jaccard = 0.0;
    double loss_sup = 0.0;
    double loss_unsup = 0.0;
    double lambda_unsup = 0.0;
    double wall_time_s = 0.0;  // recorded in the run manifest, not the CSV
};

/// Wall time is deliberately not a CSV column: metrics.csv must be
/// bit-identical across same-seed runs.
inline std::string metrics_csv_header() {
    return "run_id,fold,epoch,split,dice,jaccard,loss_sup,loss_unsup,lambda_unsup";
}

inline std::string to_csv(const MetricRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%d,%d,%s,%.6f,%.6f,%.6f,%.6f,%.6f",
                  r.run_id.c_str(), r.fold, r.epoch, r.split.c_str(), r.dice, r.jaccard,
                  r.loss_sup, r.loss_unsup, r.lambda_unsup);
    return buf;
}

struct Aggregate {
    double mean = 0.0;
    double std_dev = 0.0;  // sample std (n-1); 0 when n == 1
    int n = 0;
    bool single_fold = false;

    std::string formatted() const {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", mean, std_dev);
        return buf;
    }
};

inline Aggregate aggregate_folds(const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("aggregate_folds: need at least one value");
    Aggregate a;
    a.n = static_cast<int>(values.size());
    a.single_fold = a.n == 1;
    double sum = 0.0;
    for (double v : values) sum += v;
    a.mean = sum / a.n;
    if (a.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.std_dev = std::sqrt(ss / (a.n - 1));
    }
    return a;
}

} // namespace csds
