#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "csds/errors.hpp"
#include "csds/tensor.hpp"

namespace csds {

/// Nonnegative per-pixel scalar field (variance maps, edge maps, weights).
struct ScalarMap {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    ScalarMap() = default;
    ScalarMap(int h, int w, float fill = 0.0f)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    float& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return values.size(); }
};

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> values;  // 0 or 1

    BinaryMask() = default;
    BinaryMask(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return values.size(); }
};

enum class SmoothMode { Gaussian3x3, AvgPool3x3 };

namespace detail {
inline void require_rgb(const Tensor& image, const char* op) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw DimensionError(std::string(op) + ": expected [3,H,W] image");
}
} // namespace detail

/// Per-pixel population variance over the three channels.
inline ScalarMap channel_variance_map(const Tensor& image) {
    detail::require_rgb(image, "channel_variance_map");
    int h = image.dim(1), w = image.dim(2);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    const float* r = image.data().data();
    const float* g = r + plane;
    const float* b = g + plane;
    ScalarMap out(h, w);
    for (std::size_t i = 0; i < plane; ++i) {
        float mu = (r[i] + g[i] + b[i]) / 3.0f;
        float dr = r[i] - mu, dg = g[i] - mu, db = b[i] - mu;
        out.values[i] = (dr * dr + dg * dg + db * db) / 3.0f;
    }
    return out;
}

/// 3x3 smoothing with replicate-border padding. The Gaussian kernel uses
/// sigma = 1.0 and is renormalized to sum 1.
inline ScalarMap smooth(const ScalarMap& map, SmoothMode mode = SmoothMode::Gaussian3x3) {
    float kern[3][3];
    if (mode == SmoothMode::AvgPool3x3) {
        for (auto& row : kern)
            for (auto& v : row) v = 1.0f / 9.0f;
    } else {
        float sum = 0.0f;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                float v = std::exp(-(dx * dx + dy * dy) / 2.0f);
                kern[dy + 1][dx + 1] = v;
                sum += v;
            }
        for (auto& row : kern)
            for (auto& v : row) v /= sum;
    }
    ScalarMap out(map.height, map.width);
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            float acc = 0.0f;
            for (int dy = -1; dy <= 1; ++dy) {
                int sy = std::clamp(y + dy, 0, map.height - 1);
                for (int dx = -1; dx <= 1; ++dx) {
                    int sx = std::clamp(x + dx, 0, map.width - 1);
                    acc += kern[dy + 1][dx + 1] * map.at(sy, sx);
                }
            }
            out.at(y, x) = acc;
        }
    }
    return out;
}

/// out(x) = in(x) / (max over all pixels + eps). All-zero input stays all-zero.
inline ScalarMap normalize_max(const ScalarMap& map, float eps = 1e-8f) {
    if (eps <= 0.0f) throw ConfigError("normalize_max: eps must be > 0");
    float mx = 0.0f;
    for (float v : map.values) mx = std::max(mx, v);
    ScalarMap out(map.height, map.width);
    float inv = 1.0f / (mx + eps);
    for (std::size_t i = 0; i < map.size(); ++i) out.values[i] = map.values[i] * inv;
    return out;
}

/// Strict comparison: 1 where value > tau.
inline BinaryMask threshold_mask(const ScalarMap& map, float tau) {
    if (tau < 0.0f || tau > 1.0f) throw ConfigError("threshold_mask: tau must be in [0,1]");
    BinaryMask out(map.height, map.width);
    for (std::size_t i = 0; i < map.size(); ++i)
        out.values[i] = map.values[i] > tau ? 1 : 0;
    return out;
}

/// Raw channel-averaged finite-difference edge magnitude E. Replicate
/// padding makes the last row/column differences zero.
inline ScalarMap edge_magnitude_raw(const Tensor& image) {
    detail::require_rgb(image, "edge_magnitude_map");
    int h = image.dim(1), w = image.dim(2);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    ScalarMap e(h, w);
    for (int c = 0; c < 3; ++c) {
        const float* ch = image.data().data() + c * plane;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                float gh = (x + 1 < w) ? std::fabs(ch[y * w + x + 1] - ch[y * w + x]) : 0.0f;
                float gv = (y + 1 < h) ? std::fabs(ch[(y + 1) * w + x] - ch[y * w + x]) : 0.0f;
                e.at(y, x) += gh + gv;
            }
        }
    }
    for (float& v : e.values) v /= 3.0f;
    return e;
}

/// Max-normalized edge magnitude map (the form consumed by the masks).
inline ScalarMap edge_magnitude_map(const Tensor& image, float eps = 1e-8f) {
    return normalize_max(edge_magnitude_raw(image), eps);
}

} // namespace csds
