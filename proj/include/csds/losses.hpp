#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "csds/imaging.hpp"
#include "csds/ops.hpp"
#include "csds/tensor.hpp"

namespace csds {

/// Scalar loss node plus its component breakdown.
struct LossValue {
    Tensor value;  // [1], participates in the graph
    float ce = 0.0f;
    float dice = 0.0f;
    float weight_mean = 1.0f;

    float scalar() const { return value[0]; }
};

enum class PseudoMode { Hard, Soft };

namespace detail {

inline void check_loss_shapes(const Tensor& a, const Tensor& b, const char* op) {
    if (a.ndim() != 4 || b.ndim() != 4 || a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": logits/target must be matching [B,C,H,W]");
}

inline void check_weights(const std::vector<ScalarMap>* weights, int b, int h, int w,
                          const char* op) {
    if (!weights) return;
    if (static_cast<int>(weights->size()) != b)
        throw DimensionError(std::string(op) + ": one weight map per batch sample required");
    for (const auto& m : *weights)
        if (m.height != h || m.width != w)
            throw DimensionError(std::string(op) + ": weight map dims mismatch");
}

inline float weight_at(const std::vector<ScalarMap>* weights, int b, std::size_t pixel) {
    return weights ? (*weights)[static_cast<std::size_t>(b)].values[pixel] : 1.0f;
}

/// Pixel-weighted softmax cross-entropy from logits. `validate_onehot`
/// is relaxed for soft (teacher-distribution) targets.
inline Tensor cross_entropy_impl(const Tensor& logits, const Tensor& target,
                                 const std::vector<ScalarMap>* weights, bool validate_onehot,
                                 float* out_weight_mean) {
    check_loss_shapes(logits, target, "cross_entropy");
    int b = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    check_weights(weights, b, h, w, "cross_entropy");
    std::size_t plane = static_cast<std::size_t>(h) * w;
    std::size_t sample = static_cast<std::size_t>(c) * plane;

    double total = 0.0;
    double wsum = 0.0;
    for (int bi = 0; bi < b; ++bi) {
        const float* z = logits.data().data() + bi * sample;
        const float* t = target.data().data() + bi * sample;
        for (std::size_t p = 0; p < plane; ++p) {
            float mx = z[p];
            for (int ci = 1; ci < c; ++ci) mx = std::max(mx, z[ci * plane + p]);
            double denom = 0.0;
            double tsum = 0.0;
            double px_loss = 0.0;
            for (int ci = 0; ci < c; ++ci) denom += std::exp(z[ci * plane + p] - mx);
            double log_denom = std::log(denom);
            for (int ci = 0; ci < c; ++ci) {
                float tv = t[ci * plane + p];
                if (validate_onehot && tv != 0.0f && tv != 1.0f)
                    throw ValidationError("cross_entropy: target is not one-hot");
                tsum += tv;
                px_loss -= tv * (z[ci * plane + p] - mx - log_denom);
            }
            if (validate_onehot && std::fabs(tsum - 1.0) > 1e-6)
                throw ValidationError("cross_entropy: target channel sum != 1");
            float wv = weight_at(weights, bi, p);
            total += wv * px_loss;
            wsum += wv;
        }
    }
    std::size_t npx = static_cast<std::size_t>(b) * plane;
    if (out_weight_mean) *out_weight_mean = static_cast<float>(wsum / static_cast<double>(npx));
    Tensor out = Tensor::from_data({1}, {static_cast<float>(total / static_cast<double>(npx))});

    if (track_grad({&logits})) {
        auto zn = logits.node();
        auto tn = target.node();
        auto on = out.node();
        // copy the weight maps: the caller's vector may not outlive the graph
        auto wcopy = weights ? std::make_shared<std::vector<ScalarMap>>(*weights) : nullptr;
        detail::attach(out, {logits, target}, [zn, tn, on, wcopy, b, c, plane, sample, npx] {
            if (!zn->requires_grad) return;
            if (zn->grad.empty()) zn->grad.assign(zn->data.size(), 0.0f);
            float up = on->grad[0] / static_cast<float>(npx);
            for (int bi = 0; bi < b; ++bi) {
                const float* z = zn->data.data() + bi * sample;
                const float* t = tn->data.data() + bi * sample;
                float* dz = zn->grad.data() + bi * sample;
                for (std::size_t p = 0; p < plane; ++p) {
                    float mx = z[p];
                    for (int ci = 1; ci < c; ++ci) mx = std::max(mx, z[ci * plane + p]);
                    double denom = 0.0;
                    for (int ci = 0; ci < c; ++ci) denom += std::exp(z[ci * plane + p] - mx);
                    float wv = wcopy ? (*wcopy)[static_cast<std::size_t>(bi)].values[p] : 1.0f;
                    for (int ci = 0; ci < c; ++ci) {
                        float sm = static_cast<float>(std::exp(z[ci * plane + p] - mx) / denom);
                        dz[ci * plane + p] += up * wv * (sm - t[ci * plane + p]);
                    }
                }
            }
        });
    }
    return out;
}

} // namespace detail

inline LossValue cross_entropy(const Tensor& logits, const Tensor& target_onehot,
                               const std::vector<ScalarMap>* pixel_weights = nullptr) {
    LossValue lv;
    lv.value = detail::cross_entropy_impl(logits, target_onehot, pixel_weights, true,
                                          &lv.weight_mean);
    lv.ce = lv.value[0];
    return lv;
}

/// Soft Dice: 1 - mean over (batch, class) of (2*sum(p*t)+s)/(sum(p)+sum(t)+s).
inline LossValue soft_dice(const Tensor& probs, const Tensor& target_onehot, float smooth = 1.0f) {
    detail::check_loss_shapes(probs, target_onehot, "soft_dice");
    if (smooth <= 0.0f) throw ConfigError("soft_dice: smooth must be > 0");
    int b = probs.dim(0), c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    std::size_t plane = static_cast<std::size_t>(h) * w;

    int bc = b * c;
    std::vector<double> inter(static_cast<std::size_t>(bc)), psum(static_cast<std::size_t>(bc)),
        tsum(static_cast<std::size_t>(bc));
    double acc = 0.0;
    for (int i = 0; i < bc; ++i) {
        const float* p = probs.data().data() + static_cast<std::size_t>(i) * plane;
        const float* t = target_onehot.data().data() + static_cast<std::size_t>(i) * plane;
        double in = 0.0, ps = 0.0, ts = 0.0;
        for (std::size_t k = 0; k < plane; ++k) {
            in += static_cast<double>(p[k]) * t[k];
            ps += p[k];
            ts += t[k];
        }
        inter[static_cast<std::size_t>(i)] = in;
        psum[static_cast<std::size_t>(i)] = ps;
        tsum[static_cast<std::size_t>(i)] = ts;
        acc += (2.0 * in + smooth) / (ps + ts + smooth);
    }
    LossValue lv;
    lv.value = Tensor::from_data({1}, {static_cast<float>(1.0 - acc / bc)});
    lv.dice = lv.value[0];

    if (track_grad({&probs})) {
        auto pn = probs.node();
        auto tn = target_onehot.node();
        auto on = lv.value.node();
        detail::attach(lv.value, {probs, target_onehot},
                       [pn, tn, on, bc, plane, smooth, inter, psum, tsum] {
            if (!pn->requires_grad) return;
            if (pn->grad.empty()) pn->grad.assign(pn->data.size(), 0.0f);
            float up = on->grad[0] / static_cast<float>(bc);
            for (int i = 0; i < bc; ++i) {
                const float* t = tn->data.data() + static_cast<std::size_t>(i) * plane;
                float* dp = pn->grad.data() + static_cast<std::size_t>(i) * plane;
                double den = psum[static_cast<std::size_t>(i)] + tsum[static_cast<std::size_t>(i)] + smooth;
                double num = 2.0 * inter[static_cast<std::size_t>(i)] + smooth;
                for (std::size_t k = 0; k < plane; ++k) {
                    // d(dice_bc)/dp = (2*t*den - num) / den^2; loss = 1 - mean(dice)
                    double d = (2.0 * t[k] * den - num) / (den * den);
                    dp[k] -= up * static_cast<float>(d);
                }
            }
        });
    }
    return lv;
}

/// Eq. of the supervised objective: 0.5*CE + 0.5*Dice(softmax(logits)).
/// Pixel weights apply per pixel to CE and as a mean-weight scale to Dice
/// (Dice is a global overlap, not a per-pixel sum).
inline LossValue ce_dice(const Tensor& logits, const Tensor& target,
                         const std::vector<ScalarMap>* pixel_weights = nullptr,
                         float dice_smooth = 1.0f, bool validate_onehot = true) {
    LossValue lv;
    float wmean = 1.0f;
    Tensor ce = detail::cross_entropy_impl(logits, target, pixel_weights, validate_onehot, &wmean);
    Tensor probs = softmax_channel(logits);
    LossValue dice = soft_dice(probs, target, dice_smooth);
    Tensor dice_term = pixel_weights ? scale(dice.value, wmean) : dice.value;
    lv.value = add(scale(ce, 0.5f), scale(dice_term, 0.5f));
    lv.ce = ce[0];
    lv.dice = dice_term[0];
    lv.weight_mean = wmean;
    return lv;
}

/// Hard-mode pseudo-label: per-pixel argmax of teacher logits, ties resolved
/// to the lowest class index.
inline Tensor hard_pseudo_label(const Tensor& teacher_logits) {
    if (teacher_logits.ndim() != 4) throw DimensionError("hard_pseudo_label: expected [B,C,H,W]");
    int b = teacher_logits.dim(0), c = teacher_logits.dim(1);
    int h = teacher_logits.dim(2), w = teacher_logits.dim(3);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    std::size_t sample = static_cast<std::size_t>(c) * plane;
    Tensor out({b, c, h, w});
    for (int bi = 0; bi < b; ++bi) {
        const float* z = teacher_logits.data().data() + bi * sample;
        float* t = out.data().data() + bi * sample;
        for (std::size_t p = 0; p < plane; ++p) {
            int best = 0;
            float bv = z[p];
            for (int ci = 1; ci < c; ++ci)
                if (z[ci * plane + p] > bv) {  // strict: ties keep the lowest index
                    bv = z[ci * plane + p];
                    best = ci;
                }
            t[static_cast<std::size_t>(best) * plane + p] = 1.0f;
        }
    }
    return out;
}

/// Uncertainty-weighted consistency between a student and detached teacher
/// logits. Gradient flows to the student only.
inline LossValue unsup_pair_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                                 const std::vector<ScalarMap>& weight_maps,
                                 PseudoMode mode = PseudoMode::Hard, float dice_smooth = 1.0f) {
    detail::check_loss_shapes(student_logits, teacher_logits, "unsup_pair_loss");
    if (teacher_logits.requires_grad())
        throw ValidationError("unsup_pair_loss: teacher logits must be detached");
    Tensor target;
    {
        NoGradGuard ng;
        target = mode == PseudoMode::Hard ? hard_pseudo_label(teacher_logits)
                                          : softmax_channel(teacher_logits);
    }
    return ce_dice(student_logits, target, &weight_maps, dice_smooth,
                   /*validate_onehot=*/mode == PseudoMode::Hard);
}

} // namespace csds
