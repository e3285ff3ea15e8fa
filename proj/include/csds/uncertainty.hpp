#pragma once

#include <cmath>
#include <string>

#include "csds/imaging.hpp"
#include "csds/ops.hpp"
#include "csds/tensor.hpp"

namespace csds {

enum class UncertaintyStage { Base, ColorModulated, StructureModulated };

/// Per-pixel predictive uncertainty; stage records how far along the
/// color -> structure modulation chain the map is.
struct UncertaintyMap {
    int height = 0;
    int width = 0;
    std::vector<float> values;
    UncertaintyStage stage = UncertaintyStage::Base;

    float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return values.size(); }
};

enum class WeightMode { Direct, InverseExp };

struct UncertaintyConfig {
    float tau_color = 0.5f;
    float tau_structure = 0.5f;
    float lambda_color = 0.5f;
    float lambda_structure = 0.5f;
    float eps = 1e-8f;
    SmoothMode smooth_mode = SmoothMode::Gaussian3x3;
    WeightMode weight_mode = WeightMode::Direct;
};

/// Shannon entropy (natural log) of per-pixel class distributions.
/// probs: [C,H,W] softmax output.
inline UncertaintyMap entropy_map(const Tensor& probs, float eps = 1e-8f) {
    if (probs.ndim() != 3) throw DimensionError("entropy_map: expected [C,H,W]");
    if (eps <= 0.0f) throw ConfigError("entropy_map: eps must be > 0");
    int c = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    UncertaintyMap out;
    out.height = h;
    out.width = w;
    out.values.assign(plane, 0.0f);
    const float* p = probs.data().data();
    for (std::size_t i = 0; i < plane; ++i) {
        double acc = 0.0;
        for (int ci = 0; ci < c; ++ci) {
            float pv = p[ci * plane + i];
            if (pv < 0.0f) throw NumericError("entropy_map: negative probability");
            acc -= pv * std::log(pv + eps);
        }
        out.values[i] = static_cast<float>(acc);
    }
    return out;
}

/// out(x) = u(x) * (1 + lambda * mask(x)); advances the stage tag.
inline UncertaintyMap modulate(const UncertaintyMap& u, const BinaryMask& mask, float lambda) {
    if (lambda < 0.0f || lambda > 1.0f) throw ConfigError("modulate: lambda must be in [0,1]");
    if (u.height != mask.height || u.width != mask.width)
        throw DimensionError("modulate: map and mask shapes differ");
    if (u.stage == UncertaintyStage::StructureModulated)
        throw ConfigError("modulate: map is already fully modulated");
    UncertaintyMap out = u;
    for (std::size_t i = 0; i < u.size(); ++i)
        out.values[i] = u.values[i] * (1.0f + lambda * static_cast<float>(mask.values[i]));
    out.stage = u.stage == UncertaintyStage::Base ? UncertaintyStage::ColorModulated
                                                  : UncertaintyStage::StructureModulated;
    return out;
}

/// Full chain from teacher logits: entropy, color modulation from smoothed
/// inter-channel variance, then structure modulation from edge magnitude.
/// Returns (color-branch map, structure-branch map).
inline std::pair<UncertaintyMap, UncertaintyMap> csds_uncertainty(const Tensor& teacher_logits,
                                                                  const Tensor& image,
                                                                  const UncertaintyConfig& cfg) {
    NoGradGuard ng;
    Tensor probs = softmax_channel(teacher_logits);
    UncertaintyMap base = entropy_map(probs, cfg.eps);

    ScalarMap variance = channel_variance_map(image);
    BinaryMask color_mask =
        threshold_mask(normalize_max(smooth(variance, cfg.smooth_mode), cfg.eps), cfg.tau_color);
    UncertaintyMap color_map = modulate(base, color_mask, cfg.lambda_color);

    BinaryMask structure_mask =
        threshold_mask(edge_magnitude_map(image, cfg.eps), cfg.tau_structure);
    UncertaintyMap structure_map = modulate(color_map, structure_mask, cfg.lambda_structure);
    return {color_map, structure_map};
}

/// Direct mode: u / mean(u), so the expected weight is 1 and the unsupervised
/// loss scale stays decoupled from the uncertainty scale. InverseExp: exp(-u).
inline ScalarMap to_loss_weight(const UncertaintyMap& u, WeightMode mode = WeightMode::Direct) {
    ScalarMap out(u.height, u.width);
    if (mode == WeightMode::InverseExp) {
        for (std::size_t i = 0; i < u.size(); ++i) out.values[i] = std::exp(-u.values[i]);
        return out;
    }
    double acc = 0.0;
    for (float v : u.values) acc += v;
    double m = u.size() ? acc / static_cast<double>(u.size()) : 0.0;
    if (m <= 0.0) {
        std::fill(out.values.begin(), out.values.end(), 1.0f);  // degenerate certain prediction
        return out;
    }
    float inv = static_cast<float>(1.0 / m);
    for (std::size_t i = 0; i < u.size(); ++i) out.values[i] = u.values[i] * inv;
    return out;
}

} // namespace csds
