#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "csds/errors.hpp"
#include "csds/rng.hpp"
#include "csds/tensor.hpp"

namespace csds {

// ---------------------------------------------------------------------------
// Color-branch augmentations. These never move a pixel.
// ---------------------------------------------------------------------------

struct ColorJitterParams {
    float brightness_delta = 0.0f;
    float contrast_factor = 1.0f;
    float saturation_factor = 1.0f;
    float hue_delta = 0.0f;  // fraction of the full hue circle
};

struct ColorJitterRanges {
    float brightness = 0.1f;
    float contrast_lo = 0.8f, contrast_hi = 1.2f;
    float saturation_lo = 0.8f, saturation_hi = 1.2f;
    float hue = 0.05f;
};

inline ColorJitterParams sample_color_jitter(const ColorJitterRanges& r, Rng& rng) {
    ColorJitterParams p;
    p.brightness_delta = rng.uniform(-r.brightness, r.brightness);
    p.contrast_factor = rng.uniform(r.contrast_lo, r.contrast_hi);
    p.saturation_factor = rng.uniform(r.saturation_lo, r.saturation_hi);
    p.hue_delta = rng.uniform(-r.hue, r.hue);
    return p;
}

namespace detail {

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
    float mx = std::max({r, g, b});
    float mn = std::min({r, g, b});
    float d = mx - mn;
    v = mx;
    s = mx > 0.0f ? d / mx : 0.0f;
    if (d <= 0.0f) {
        h = 0.0f;
        return;
    }
    if (mx == r)
        h = std::fmod((g - b) / d, 6.0f);
    else if (mx == g)
        h = (b - r) / d + 2.0f;
    else
        h = (r - g) / d + 4.0f;
    h /= 6.0f;
    if (h < 0.0f) h += 1.0f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
    float hh = h * 6.0f;
    int i = static_cast<int>(std::floor(hh)) % 6;
    if (i < 0) i += 6;
    float f = hh - std::floor(hh);
    float p = v * (1.0f - s);
    float q = v * (1.0f - s * f);
    float t = v * (1.0f - s * (1.0f - f));
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

inline void require_rgb01(const Tensor& image, const char* op) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw DimensionError(std::string(op) + ": expected [3,H,W] image");
}

} // namespace detail

/// Brightness -> contrast (about the per-image mean) -> saturation (blend
/// with luma gray) -> hue rotation in HSV, then clamp to [0,1].
inline Tensor color_jitter(const Tensor& image, const ColorJitterParams& params) {
    detail::require_rgb01(image, "color_jitter");
    int h = image.dim(1), w = image.dim(2);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out = image.detach_copy();
    float* d = out.data().data();

    if (params.brightness_delta != 0.0f)
        for (std::size_t i = 0; i < 3 * plane; ++i) d[i] += params.brightness_delta;

    if (params.contrast_factor != 1.0f) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 3 * plane; ++i) acc += d[i];
        float mu = static_cast<float>(acc / (3.0 * plane));
        for (std::size_t i = 0; i < 3 * plane; ++i) d[i] = mu + params.contrast_factor * (d[i] - mu);
    }

    if (params.saturation_factor != 1.0f) {
        for (std::size_t i = 0; i < plane; ++i) {
            float gray = 0.299f * d[i] + 0.587f * d[plane + i] + 0.114f * d[2 * plane + i];
            d[i] = gray + params.saturation_factor * (d[i] - gray);
            d[plane + i] = gray + params.saturation_factor * (d[plane + i] - gray);
            d[2 * plane + i] = gray + params.saturation_factor * (d[2 * plane + i] - gray);
        }
    }

    for (std::size_t i = 0; i < 3 * plane; ++i) d[i] = std::clamp(d[i], 0.0f, 1.0f);

    if (params.hue_delta != 0.0f) {
        for (std::size_t i = 0; i < plane; ++i) {
            float hh, ss, vv;
            detail::rgb_to_hsv(d[i], d[plane + i], d[2 * plane + i], hh, ss, vv);
            hh += params.hue_delta;
            hh -= std::floor(hh);
            detail::hsv_to_rgb(hh, ss, vv, d[i], d[plane + i], d[2 * plane + i]);
        }
        for (std::size_t i = 0; i < 3 * plane; ++i) d[i] = std::clamp(d[i], 0.0f, 1.0f);
    }
    return out;
}

/// Per-channel CDF matching on 256 bins: each source intensity maps to the
/// smallest reference intensity whose CDF reaches the source CDF.
inline Tensor histogram_match(const Tensor& source, const Tensor& reference) {
    detail::require_rgb01(source, "histogram_match");
    detail::require_rgb01(reference, "histogram_match");
    int h = source.dim(1), w = source.dim(2);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    std::size_t ref_plane = static_cast<std::size_t>(reference.dim(1)) * reference.dim(2);
    Tensor out = source.detach_copy();

    auto bin_of = [](float v) {
        int b = static_cast<int>(v * 255.0f + 0.5f);
        return std::clamp(b, 0, 255);
    };

    for (int c = 0; c < 3; ++c) {
        const float* src = source.data().data() + c * plane;
        const float* ref = reference.data().data() + c * ref_plane;
        float* dst = out.data().data() + c * plane;

        std::array<double, 256> src_cdf{}, ref_cdf{};
        for (std::size_t i = 0; i < plane; ++i) src_cdf[static_cast<std::size_t>(bin_of(src[i]))] += 1.0;
        for (std::size_t i = 0; i < ref_plane; ++i) ref_cdf[static_cast<std::size_t>(bin_of(ref[i]))] += 1.0;
        for (int b = 1; b < 256; ++b) {
            src_cdf[static_cast<std::size_t>(b)] += src_cdf[static_cast<std::size_t>(b - 1)];
            ref_cdf[static_cast<std::size_t>(b)] += ref_cdf[static_cast<std::size_t>(b - 1)];
        }
        for (int b = 0; b < 256; ++b) {
            src_cdf[static_cast<std::size_t>(b)] /= static_cast<double>(plane);
            ref_cdf[static_cast<std::size_t>(b)] /= static_cast<double>(ref_plane);
        }

        std::array<float, 256> lut{};
        int rb = 0;
        for (int b = 0; b < 256; ++b) {
            while (rb < 255 && ref_cdf[static_cast<std::size_t>(rb)] < src_cdf[static_cast<std::size_t>(b)]) ++rb;
            lut[static_cast<std::size_t>(b)] = static_cast<float>(rb) / 255.0f;
        }
        for (std::size_t i = 0; i < plane; ++i) dst[i] = lut[static_cast<std::size_t>(bin_of(src[i]))];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structure-branch augmentation: elastic deformation.
// ---------------------------------------------------------------------------

struct ElasticField {
    int height = 0;
    int width = 0;
    std::vector<float> dx, dy;  // displacement in pixels
    float alpha = 0.0f;
    float sigma = 0.0f;

    ElasticField negated() const {
        ElasticField f = *this;
        for (float& v : f.dx) v = -v;
        for (float& v : f.dy) v = -v;
        return f;
    }
};

namespace detail {

inline void gaussian_blur_field(std::vector<float>& field, int h, int w, float sigma) {
    int radius = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
    std::vector<float> kern(static_cast<std::size_t>(2 * radius + 1));
    float sum = 0.0f;
    for (int i = -radius; i <= radius; ++i) {
        float v = std::exp(-(static_cast<float>(i) * i) / (2.0f * sigma * sigma));
        kern[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (float& v : kern) v /= sum;

    std::vector<float> tmp(field.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float acc = 0.0f;
            for (int i = -radius; i <= radius; ++i)
                acc += kern[static_cast<std::size_t>(i + radius)] *
                       field[static_cast<std::size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
            tmp[static_cast<std::size_t>(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float acc = 0.0f;
            for (int i = -radius; i <= radius; ++i)
                acc += kern[static_cast<std::size_t>(i + radius)] *
                       tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
            field[static_cast<std::size_t>(y) * w + x] = acc;
        }
}

inline void rescale_max_abs(std::vector<float>& field, float alpha) {
    float mx = 0.0f;
    for (float v : field) mx = std::max(mx, std::fabs(v));
    if (mx <= 0.0f) {
        std::fill(field.begin(), field.end(), 0.0f);
        return;
    }
    float s = alpha / mx;
    for (float& v : field) v *= s;
}

} // namespace detail

/// Gaussian-smoothed uniform noise, each component rescaled so its max
/// absolute displacement equals alpha. Deterministic from rng.
inline ElasticField sample_elastic(int h, int w, float alpha, float sigma, Rng& rng) {
    if (alpha < 0.0f) throw ConfigError("sample_elastic: alpha must be >= 0");
    if (sigma <= 0.0f) throw ConfigError("sample_elastic: sigma must be > 0");
    ElasticField f;
    f.height = h;
    f.width = w;
    f.alpha = alpha;
    f.sigma = sigma;
    std::size_t n = static_cast<std::size_t>(h) * w;
    f.dx.resize(n);
    f.dy.resize(n);
    for (std::size_t i = 0; i < n; ++i) f.dx[i] = rng.uniform(-1.0f, 1.0f);
    for (std::size_t i = 0; i < n; ++i) f.dy[i] = rng.uniform(-1.0f, 1.0f);
    if (alpha == 0.0f) {
        std::fill(f.dx.begin(), f.dx.end(), 0.0f);
        std::fill(f.dy.begin(), f.dy.end(), 0.0f);
        return f;
    }
    detail::gaussian_blur_field(f.dx, h, w, sigma);
    detail::gaussian_blur_field(f.dy, h, w, sigma);
    detail::rescale_max_abs(f.dx, alpha);
    detail::rescale_max_abs(f.dy, alpha);
    return f;
}

enum class Interp { Bilinear, Nearest };

/// output(x,y) = input(x + dx, y + dy) with replicate border.
/// Accepts any [C,H,W] tensor; use Nearest for label masks.
inline Tensor warp(const Tensor& input, const ElasticField& field, Interp interp) {
    if (input.ndim() != 3) throw DimensionError("warp: expected [C,H,W]");
    int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (field.height != h || field.width != w)
        throw DimensionError("warp: field dims do not match image");
    Tensor out(input.shape());
    std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::size_t i = static_cast<std::size_t>(y) * w + x;
            float sx = std::clamp(static_cast<float>(x) + field.dx[i], 0.0f,
                                  static_cast<float>(w - 1));
            float sy = std::clamp(static_cast<float>(y) + field.dy[i], 0.0f,
                                  static_cast<float>(h - 1));
            if (interp == Interp::Nearest) {
                int ix = static_cast<int>(std::lround(sx));
                int iy = static_cast<int>(std::lround(sy));
                for (int ci = 0; ci < c; ++ci)
                    out[ci * plane + i] = input[ci * plane + static_cast<std::size_t>(iy) * w + ix];
            } else {
                int x0 = static_cast<int>(std::floor(sx));
                int y0 = static_cast<int>(std::floor(sy));
                int x1 = std::min(x0 + 1, w - 1);
                int y1 = std::min(y0 + 1, h - 1);
                float fx = sx - static_cast<float>(x0);
                float fy = sy - static_cast<float>(y0);
                for (int ci = 0; ci < c; ++ci) {
                    const float* p = input.data().data() + ci * plane;
                    float top = p[y0 * w + x0] * (1.0f - fx) + p[y0 * w + x1] * fx;
                    float bot = p[y1 * w + x0] * (1.0f - fx) + p[y1 * w + x1] * fx;
                    out[ci * plane + i] = top * (1.0f - fy) + bot * fy;
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shared geometric augmentation (lossless on labels).
// ---------------------------------------------------------------------------

struct SharedGeom {
    bool hflip = false;
    bool vflip = false;
    int rot90 = 0;  // number of 90-degree CCW rotations, in {0,1,2,3}
};

inline SharedGeom sample_shared_geom(Rng& rng) {
    SharedGeom g;
    g.hflip = rng.coin();
    g.vflip = rng.coin();
    g.rot90 = rng.uniform_int(0, 3);
    return g;
}

namespace detail {

inline Tensor hflip(const Tensor& t) {
    int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor out(t.shape());
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out[(static_cast<std::size_t>(ci) * h + y) * w + x] =
                    t[(static_cast<std::size_t>(ci) * h + y) * w + (w - 1 - x)];
    return out;
}

inline Tensor vflip(const Tensor& t) {
    int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor out(t.shape());
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            std::copy_n(t.data().data() + (static_cast<std::size_t>(ci) * h + (h - 1 - y)) * w, w,
                        out.data().data() + (static_cast<std::size_t>(ci) * h + y) * w);
    return out;
}

// one 90-degree CCW rotation; output is [C,W,H]
inline Tensor rot90_once(const Tensor& t) {
    int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor out({c, w, h});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out[(static_cast<std::size_t>(ci) * w + (w - 1 - x)) * h + y] =
                    t[(static_cast<std::size_t>(ci) * h + y) * w + x];
    return out;
}

inline Tensor apply_geom_one(const Tensor& t, const SharedGeom& g) {
    Tensor out = t.detach_copy();
    if (g.hflip) out = hflip(out);
    if (g.vflip) out = vflip(out);
    for (int i = 0; i < (g.rot90 & 3); ++i) out = rot90_once(out);
    return out;
}

} // namespace detail

inline std::pair<Tensor, std::optional<Tensor>> shared_geom_apply(const Tensor& image,
                                                                  const std::optional<Tensor>& mask,
                                                                  const SharedGeom& g) {
    if (image.ndim() != 3) throw DimensionError("shared_geom_apply: expected [C,H,W]");
    std::optional<Tensor> out_mask;
    if (mask) out_mask = detail::apply_geom_one(*mask, g);
    return {detail::apply_geom_one(image, g), std::move(out_mask)};
}

} // namespace csds
