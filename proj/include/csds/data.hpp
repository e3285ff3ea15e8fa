#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "csds/imaging.hpp"
#include "csds/png_io.hpp"
#include "csds/rng.hpp"
#include "csds/tensor.hpp"

namespace csds {

struct Sample {
    Tensor image;  // [3,H,W] in [0,1]
    Tensor mask;   // [1,H,W] in {0,1}
    std::string id;
    bool labeled = false;
};

/// Fixed 20% test set plus five-fold cross-validation over the rest.
/// Fold i validates on folds[i] and trains on the other four folds, of which
/// labeled[i] is the labeled subset.
struct DatasetSplits {
    std::vector<std::string> test;
    std::array<std::vector<std::string>, 5> folds;
    std::array<std::vector<std::string>, 5> labeled;

    std::vector<std::string> train_ids(int fold) const {
        std::vector<std::string> out;
        for (int f = 0; f < 5; ++f)
            if (f != fold) out.insert(out.end(), folds[static_cast<std::size_t>(f)].begin(),
                                      folds[static_cast<std::size_t>(f)].end());
        return out;
    }
    const std::vector<std::string>& val_ids(int fold) const {
        return folds[static_cast<std::size_t>(fold)];
    }
};

struct SynthConfig {
    int canvas = 64;
    int gland_count_min = 3;
    int gland_count_max = 7;
    float radius_min_frac = 0.10f;   // of canvas size
    float radius_max_frac = 0.22f;
    float lumen_ratio = 0.55f;       // lumen radius as fraction of gland radius
    float stain_shift = 0.08f;       // per-image color shift amplitude
    float noise_level = 0.03f;
    std::uint64_t seed = 0;

    void validate() const {
        if (canvas < 16) throw ConfigError("synth: canvas must be >= 16");
        if (gland_count_min > gland_count_max) throw ConfigError("synth: empty gland count range");
        if (radius_min_frac > radius_max_frac || radius_min_frac <= 0.0f)
            throw ConfigError("synth: bad radius range");
        if (lumen_ratio <= 0.0f || lumen_ratio >= 1.0f) throw ConfigError("synth: lumen_ratio in (0,1)");
    }
};

namespace detail {

struct StainColors {
    float ring[3];
    float lumen[3];
    float bg[3];
};

inline StainColors shifted_stains(Rng& rng, float amp) {
    // H&E-ish bases: hematoxylin-purple epithelium, pale lumen, eosin-pink bg
    StainColors s{{0.42f, 0.26f, 0.56f}, {0.93f, 0.88f, 0.94f}, {0.91f, 0.72f, 0.80f}};
    float shift[3] = {rng.uniform(-amp, amp), rng.uniform(-amp, amp), rng.uniform(-amp, amp)};
    for (int c = 0; c < 3; ++c) {
        s.ring[c] = std::clamp(s.ring[c] + shift[c], 0.0f, 1.0f);
        s.lumen[c] = std::clamp(s.lumen[c] + 0.5f * shift[c], 0.0f, 1.0f);
        s.bg[c] = std::clamp(s.bg[c] + shift[c], 0.0f, 1.0f);
    }
    return s;
}

} // namespace detail

/// Renders random elliptical "glands" (dark epithelial ring, pale lumen) on a
/// noisy eosin background with a per-image stain shift. Deterministic from
/// (cfg.seed, index); retries until the mask area lands in [0.05, 0.7].
inline Sample generate_sample(const SynthConfig& cfg, int index) {
    cfg.validate();
    Rng rng = Rng(cfg.seed).split(static_cast<std::uint64_t>(index));
    int n = cfg.canvas;
    std::size_t plane = static_cast<std::size_t>(n) * n;

    for (int attempt = 0; attempt < 100; ++attempt) {
        detail::StainColors stains = detail::shifted_stains(rng, cfg.stain_shift);
        Sample s;
        s.id = "synth_" + std::to_string(index);
        s.image = Tensor({3, n, n});
        s.mask = Tensor({1, n, n});
        float* img = s.image.data().data();
        float* msk = s.mask.data().data();
        for (std::size_t i = 0; i < plane; ++i) {
            float tex = rng.uniform(-cfg.noise_level, cfg.noise_level);
            for (int c = 0; c < 3; ++c)
                img[c * plane + i] = std::clamp(stains.bg[c] + tex, 0.0f, 1.0f);
        }

        int glands = rng.uniform_int(cfg.gland_count_min, cfg.gland_count_max);
        for (int g = 0; g < glands; ++g) {
            float cx = rng.uniform(0.1f, 0.9f) * static_cast<float>(n);
            float cy = rng.uniform(0.1f, 0.9f) * static_cast<float>(n);
            float rx = rng.uniform(cfg.radius_min_frac, cfg.radius_max_frac) * static_cast<float>(n);
            float ry = rng.uniform(cfg.radius_min_frac, cfg.radius_max_frac) * static_cast<float>(n);
            float ang = rng.uniform(0.0f, 3.14159265f);
            float ca = std::cos(ang), sa = std::sin(ang);
            for (int y = 0; y < n; ++y) {
                for (int x = 0; x < n; ++x) {
                    float px = static_cast<float>(x) - cx;
                    float py = static_cast<float>(y) - cy;
                    float u = (px * ca + py * sa) / rx;
                    float v = (-px * sa + py * ca) / ry;
                    float d = u * u + v * v;
                    if (d > 1.0f) continue;
                    std::size_t i = static_cast<std::size_t>(y) * n + x;
                    msk[i] = 1.0f;
                    const float* col =
                        d <= cfg.lumen_ratio * cfg.lumen_ratio ? stains.lumen : stains.ring;
                    for (int c = 0; c < 3; ++c) img[c * plane + i] = col[c];
                }
            }
        }

        double area = 0.0;
        for (std::size_t i = 0; i < plane; ++i) area += msk[i];
        double frac = area / static_cast<double>(plane);
        if (frac >= 0.05 && frac <= 0.7) return s;
    }
    throw NumericError("generate_sample: mask area constraint unsatisfiable after 100 retries");
}

/// Shuffle by seed; first ceil(0.2 n) ids form the fixed test set; the rest
/// go round-robin into five folds. Within each fold's training portion the
/// first max(1, round(r * count)) shuffled ids are labeled.
inline DatasetSplits make_splits(std::vector<std::string> ids, std::uint64_t seed,
                                 float labeled_ratio) {
    if (ids.size() < 10) throw ConfigError("make_splits: need at least 10 ids");
    if (labeled_ratio <= 0.0f || labeled_ratio > 1.0f)
        throw ConfigError("make_splits: labeled_ratio must be in (0,1]");
    Rng rng(seed);
    for (std::size_t i = ids.size(); i > 1; --i)
        std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);

    DatasetSplits s;
    std::size_t n_test = static_cast<std::size_t>(
        std::ceil(0.2 * static_cast<double>(ids.size())));
    s.test.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
    for (std::size_t i = n_test; i < ids.size(); ++i)
        s.folds[(i - n_test) % 5].push_back(ids[i]);

    for (int f = 0; f < 5; ++f) {
        std::vector<std::string> train = s.train_ids(f);
        Rng frng = rng.split(static_cast<std::uint64_t>(f) + 1000);
        for (std::size_t i = train.size(); i > 1; --i)
            std::swap(train[i - 1],
                      train[static_cast<std::size_t>(frng.uniform_int(0, static_cast<int>(i) - 1))]);
        std::size_t n_lab = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(labeled_ratio * static_cast<double>(train.size()))));
        n_lab = std::min(n_lab, train.size());
        s.labeled[static_cast<std::size_t>(f)].assign(
            train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n_lab));
    }
    return s;
}

// ---------------------------------------------------------------------------
// PNG round-trips and directory loading.
// ---------------------------------------------------------------------------

inline PngImage image_to_png(const Tensor& image) {
    int h = image.dim(1), w = image.dim(2);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    PngImage out;
    out.height = h;
    out.width = w;
    out.channels = 3;
    out.pixels.resize(plane * 3);
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c)
            out.pixels[i * 3 + static_cast<std::size_t>(c)] = static_cast<unsigned char>(
                std::clamp(image[static_cast<std::size_t>(c) * plane + i], 0.0f, 1.0f) * 255.0f + 0.5f);
    return out;
}

inline PngImage mask_to_png(const Tensor& mask) {
    int h = mask.dim(1), w = mask.dim(2);
    PngImage out;
    out.height = h;
    out.width = w;
    out.channels = 1;
    out.pixels.resize(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < out.pixels.size(); ++i)
        out.pixels[i] = mask[i] > 0.5f ? 255 : 0;
    return out;
}

inline PngImage scalar_map_to_png(const ScalarMap& map) {
    PngImage out;
    out.height = map.height;
    out.width = map.width;
    out.channels = 1;
    out.pixels.resize(map.size());
    float mx = 0.0f;
    for (float v : map.values) mx = std::max(mx, v);
    float s = mx > 0.0f ? 255.0f / mx : 0.0f;
    for (std::size_t i = 0; i < map.size(); ++i)
        out.pixels[i] = static_cast<unsigned char>(std::clamp(map.values[i] * s, 0.0f, 255.0f) + 0.5f);
    return out;
}

namespace detail {

inline Tensor resize_bilinear(const Tensor& t, int oh, int ow) {
    int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor out({c, oh, ow});
    for (int ci = 0; ci < c; ++ci) {
        const float* src = t.data().data() + static_cast<std::size_t>(ci) * h * w;
        float* dst = out.data().data() + static_cast<std::size_t>(ci) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            float sy = (static_cast<float>(y) + 0.5f) * static_cast<float>(h) / static_cast<float>(oh) - 0.5f;
            sy = std::clamp(sy, 0.0f, static_cast<float>(h - 1));
            int y0 = static_cast<int>(sy);
            int y1 = std::min(y0 + 1, h - 1);
            float fy = sy - static_cast<float>(y0);
            for (int x = 0; x < ow; ++x) {
                float sx = (static_cast<float>(x) + 0.5f) * static_cast<float>(w) / static_cast<float>(ow) - 0.5f;
                sx = std::clamp(sx, 0.0f, static_cast<float>(w - 1));
                int x0 = static_cast<int>(sx);
                int x1 = std::min(x0 + 1, w - 1);
                float fx = sx - static_cast<float>(x0);
                float top = src[y0 * w + x0] * (1 - fx) + src[y0 * w + x1] * fx;
                float bot = src[y1 * w + x0] * (1 - fx) + src[y1 * w + x1] * fx;
                dst[y * ow + x] = top * (1 - fy) + bot * fy;
            }
        }
    }
    return out;
}

inline Tensor resize_nearest(const Tensor& t, int oh, int ow) {
    int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor out({c, oh, ow});
    for (int ci = 0; ci < c; ++ci) {
        const float* src = t.data().data() + static_cast<std::size_t>(ci) * h * w;
        float* dst = out.data().data() + static_cast<std::size_t>(ci) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            int sy = std::min(h - 1, static_cast<int>((static_cast<float>(y) + 0.5f) *
                                                      static_cast<float>(h) / static_cast<float>(oh)));
            for (int x = 0; x < ow; ++x) {
                int sx = std::min(w - 1, static_cast<int>((static_cast<float>(x) + 0.5f) *
                                                          static_cast<float>(w) / static_cast<float>(ow)));
                dst[y * ow + x] = src[sy * w + sx];
            }
        }
    }
    return out;
}

} // namespace detail

inline void save_sample(const Sample& s, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    write_png((fs::path(dir) / "images" / (s.id + ".png")).string(), image_to_png(s.image));
    write_png((fs::path(dir) / "masks" / (s.id + ".png")).string(), mask_to_png(s.mask));
}

struct LoadReport {
    std::vector<Sample> samples;
    std::vector<std::string> skipped;  // image stems without a mask
};

/// Loads `images/*.png` + `masks/*.png` with matching stems, resizing to
/// resize_to x resize_to (bilinear for images, nearest for masks, masks
/// binarized at 127). resize_to = 0 keeps the native size.
inline LoadReport load_dir(const std::string& path, int resize_to) {
    namespace fs = std::filesystem;
    LoadReport report;
    fs::path images = fs::path(path) / "images";
    fs::path masks = fs::path(path) / "masks";
    if (!fs::is_directory(images)) return report;

    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(images))
        if (e.path().extension() == ".png") stems.push_back(e.path().stem().string());
    std::sort(stems.begin(), stems.end());

    for (const auto& stem : stems) {
        fs::path mask_path = masks / (stem + ".png");
        if (!fs::exists(mask_path)) {
            report.skipped.push_back(stem);
            continue;
        }
        PngImage img = read_png((images / (stem + ".png")).string());
        PngImage msk = read_png(mask_path.string());

        Sample s;
        s.id = stem;
        std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
        s.image = Tensor({3, img.height, img.width});
        for (std::size_t i = 0; i < plane; ++i)
            for (int c = 0; c < 3; ++c)
                s.image[static_cast<std::size_t>(c) * plane + i] =
                    static_cast<float>(img.pixels[i * static_cast<std::size_t>(img.channels) +
                                                  static_cast<std::size_t>(img.channels == 3 ? c : 0)]) /
                    255.0f;

        std::size_t mplane = static_cast<std::size_t>(msk.height) * msk.width;
        s.mask = Tensor({1, msk.height, msk.width});
        for (std::size_t i = 0; i < mplane; ++i)
            s.mask[i] = msk.pixels[i * static_cast<std::size_t>(msk.channels)] > 127 ? 1.0f : 0.0f;

        if (resize_to > 0 && (img.height != resize_to || img.width != resize_to)) {
            s.image = detail::resize_bilinear(s.image, resize_to, resize_to);
            s.mask = detail::resize_nearest(s.mask, resize_to, resize_to);
        }
        report.samples.push_back(std::move(s));
    }
    return report;
}

inline void write_split_manifest(const DatasetSplits& s, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    auto list = [&os](const std::vector<std::string>& ids) {
        os << "[";
        for (std::size_t i = 0; i < ids.size(); ++i)
            os << (i ? ", " : "") << "\"" << ids[i] << "\"";
        os << "]";
    };
    os << "{\n  \"test\": ";
    list(s.test);
    os << ",\n  \"folds\": [";
    for (int f = 0; f < 5; ++f) {
        os << (f ? ", " : "");
        list(s.folds[static_cast<std::size_t>(f)]);
    }
    os << "],\n  \"labeled\": [";
    for (int f = 0; f < 5; ++f) {
        os << (f ? ", " : "");
        list(s.labeled[static_cast<std::size_t>(f)]);
    }
    os << "]\n}\n";
}

} // namespace csds
