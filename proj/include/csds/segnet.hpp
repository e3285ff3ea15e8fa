#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "csds/ops.hpp"
#include "csds/rng.hpp"
#include "csds/tensor.hpp"

namespace csds {

/// Small BN-free encoder-decoder: two 3x3 convs per level, stride-2 max-pool
/// down, nearest upsample + skip concat up, 1x1 head. Output logits keep the
/// input resolution.
struct SegNetConfig {
    int in_channels = 3;
    int num_classes = 2;
    int base_width = 16;
    int depth = 3;
    std::uint64_t seed = 0;

    void validate() const {
        if (in_channels < 1) throw ConfigError("segnet: in_channels must be >= 1");
        if (num_classes < 2) throw ConfigError("segnet: num_classes must be >= 2");
        if (base_width < 4) throw ConfigError("segnet: base_width must be >= 4");
        if (depth < 1 || depth > 4) throw ConfigError("segnet: depth must be in [1,4]");
    }

    /// Architecture fingerprint; seed excluded so differently-initialized
    /// nets of the same shape stay EMA-compatible.
    std::uint64_t fingerprint() const {
        std::uint64_t h = 1469598103934665603ull;
        auto mix = [&h](std::uint64_t v) {
            h ^= v;
            h *= 1099511628211ull;
        };
        mix(static_cast<std::uint64_t>(in_channels));
        mix(static_cast<std::uint64_t>(num_classes));
        mix(static_cast<std::uint64_t>(base_width));
        mix(static_cast<std::uint64_t>(depth));
        return h;
    }
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};

struct ModelState {
    SegNetConfig config;
    std::uint64_t fingerprint = 0;
    std::vector<NamedParam> params;

    ModelState clone() const {
        ModelState out;
        out.config = config;
        out.fingerprint = fingerprint;
        out.params.reserve(params.size());
        for (const auto& p : params) {
            Tensor t = p.tensor.detach_copy();
            t.set_requires_grad(true);
            out.params.push_back({p.name, std::move(t)});
        }
        return out;
    }

    void zero_grads() {
        for (auto& p : params) p.tensor.zero_grad();
    }
    void drop_grads() {
        for (auto& p : params) p.tensor.drop_grad();
    }

    bool ema_compatible(const ModelState& other) const {
        if (fingerprint != other.fingerprint || params.size() != other.params.size()) return false;
        for (std::size_t i = 0; i < params.size(); ++i)
            if (params[i].name != other.params[i].name ||
                params[i].tensor.shape() != other.params[i].tensor.shape())
                return false;
        return true;
    }
};

namespace detail {

inline Tensor he_conv(int cout, int cin, int k, Rng& rng) {
    Tensor w({cout, cin, k, k}, true);
    float s = std::sqrt(2.0f / static_cast<float>(cin * k * k));
    for (auto& v : w.data()) v = rng.normal() * s;
    return w;
}

inline void push_conv(ModelState& m, const std::string& prefix, int cout, int cin, int k,
                      Rng& rng) {
    m.params.push_back({prefix + ".w", he_conv(cout, cin, k, rng)});
    m.params.push_back({prefix + ".b", Tensor({cout}, true)});  // zero bias
}

} // namespace detail

inline ModelState segnet_build(const SegNetConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelState m;
    m.config = cfg;
    m.fingerprint = cfg.fingerprint();
    int ch = cfg.in_channels;
    for (int l = 0; l < cfg.depth; ++l) {
        int w = cfg.base_width << l;
        detail::push_conv(m, "enc" + std::to_string(l) + ".conv1", w, ch, 3, rng);
        detail::push_conv(m, "enc" + std::to_string(l) + ".conv2", w, w, 3, rng);
        ch = w;
    }
    int bw = cfg.base_width << cfg.depth;
    detail::push_conv(m, "bottleneck.conv1", bw, ch, 3, rng);
    detail::push_conv(m, "bottleneck.conv2", bw, bw, 3, rng);
    ch = bw;
    for (int l = cfg.depth - 1; l >= 0; --l) {
        int w = cfg.base_width << l;
        detail::push_conv(m, "dec" + std::to_string(l) + ".conv1", w, ch + w, 3, rng);
        detail::push_conv(m, "dec" + std::to_string(l) + ".conv2", w, w, 3, rng);
        ch = w;
    }
    detail::push_conv(m, "head", cfg.num_classes, ch, 1, rng);
    return m;
}

namespace detail {

inline const Tensor& param(const ModelState& m, std::size_t& cursor) {
    return m.params[cursor++].tensor;
}

inline Tensor conv_block(const Tensor& x, const ModelState& m, std::size_t& cursor) {
    const Tensor& w1 = param(m, cursor);
    const Tensor& b1 = param(m, cursor);
    const Tensor& w2 = param(m, cursor);
    const Tensor& b2 = param(m, cursor);
    return relu(conv2d(relu(conv2d(x, w1, b1)), w2, b2));
}

} // namespace detail

/// Logits for a [B,3,H,W] batch; H, W must be divisible by 2^depth.
/// Eval mode records no graph, so repeated forwards are bit-identical.
inline Tensor segnet_forward(const ModelState& state, const Tensor& batch, bool train_mode) {
    if (batch.ndim() != 4) throw DimensionError("segnet_forward: expected [B,C,H,W]");
    int h = batch.dim(2), w = batch.dim(3);
    int div = 1 << state.config.depth;
    if (h % div != 0 || w % div != 0)
        throw DimensionError("segnet_forward: H and W must be divisible by 2^depth");

    std::optional<NoGradGuard> guard;
    if (!train_mode) guard.emplace();

    std::size_t cursor = 0;
    std::vector<Tensor> skips;
    Tensor x = batch;
    for (int l = 0; l < state.config.depth; ++l) {
        x = detail::conv_block(x, state, cursor);
        skips.push_back(x);
        x = max_pool2(x);
    }
    x = detail::conv_block(x, state, cursor);
    for (int l = state.config.depth - 1; l >= 0; --l) {
        x = upsample_nearest(x, 2);
        x = concat_channels(x, skips[static_cast<std::size_t>(l)]);
        x = detail::conv_block(x, state, cursor);
    }
    const Tensor& hw = detail::param(state, cursor);
    const Tensor& hb = detail::param(state, cursor);
    return conv2d(x, hw, hb);
}

// ---------------------------------------------------------------------------
// Checkpoint format: "CSDSCKPT" magic, u32 version, u64 fingerprint,
// u32 tensor count, then per tensor: u32 name length, name bytes, u32 ndim,
// u32 dims..., f32 data. Little-endian throughout. A JSON sidecar at
// <path>.json records the SegNetConfig.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'C', 'S', 'D', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void read_pod(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
}
} // namespace detail

/// Atomic write: temp file then rename.
inline void save_checkpoint(const ModelState& state, const std::string& path) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw IoError("cannot open " + tmp + " for writing");
        os.write(kCheckpointMagic, 8);
        detail::write_pod(os, kCheckpointVersion);
        detail::write_pod(os, state.fingerprint);
        detail::write_pod(os, static_cast<std::uint32_t>(state.params.size()));
        for (const auto& p : state.params) {
            detail::write_pod(os, static_cast<std::uint32_t>(p.name.size()));
            os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
            detail::write_pod(os, static_cast<std::uint32_t>(p.tensor.ndim()));
            for (int d : p.tensor.shape()) detail::write_pod(os, static_cast<std::uint32_t>(d));
            os.write(reinterpret_cast<const char*>(p.tensor.data().data()),
                     static_cast<std::streamsize>(p.tensor.numel() * sizeof(float)));
        }
        if (!os) throw IoError("write failed: " + tmp);
    }
    std::remove(path.c_str());
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("rename failed: " + path);

    std::ofstream js(path + ".json");
    js << "{\n"
       << "  \"in_channels\": " << state.config.in_channels << ",\n"
       << "  \"num_classes\": " << state.config.num_classes << ",\n"
       << "  \"base_width\": " << state.config.base_width << ",\n"
       << "  \"depth\": " << state.config.depth << ",\n"
       << "  \"seed\": " << state.config.seed << "\n"
       << "}\n";
}

inline ModelState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError("bad checkpoint magic: " + path);
    std::uint32_t version = 0;
    detail::read_pod(is, version);
    if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version");
    ModelState m;
    detail::read_pod(is, m.fingerprint);
    std::uint32_t count = 0;
    detail::read_pod(is, count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = 0;
        detail::read_pod(is, name_len);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        std::uint32_t nd = 0;
        detail::read_pod(is, nd);
        std::vector<int> shape(nd);
        for (auto& d : shape) {
            std::uint32_t v = 0;
            detail::read_pod(is, v);
            d = static_cast<int>(v);
        }
        Tensor t(shape, true);
        is.read(reinterpret_cast<char*>(t.data().data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
        m.params.push_back({std::move(name), std::move(t)});
    }
    if (!is) throw IoError("truncated checkpoint: " + path);

    // sidecar restores the architecture description when present
    std::ifstream js(path + ".json");
    if (js) {
        std::string buf((std::istreambuf_iterator<char>(js)), std::istreambuf_iterator<char>());
        auto grab = [&buf](const std::string& k, long long fallback) -> long long {
            auto pos = buf.find("\"" + k + "\"");
            if (pos == std::string::npos) return fallback;
            pos = buf.find(':', pos);
            return std::stoll(buf.substr(pos + 1));
        };
        m.config.in_channels = static_cast<int>(grab("in_channels", 3));
        m.config.num_classes = static_cast<int>(grab("num_classes", 2));
        m.config.base_width = static_cast<int>(grab("base_width", 16));
        m.config.depth = static_cast<int>(grab("depth", 3));
        m.config.seed = static_cast<std::uint64_t>(grab("seed", 0));
    }
    return m;
}

} // namespace csds
