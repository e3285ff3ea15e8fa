#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "csds/tensor.hpp"

namespace csds {

namespace detail {

inline void attach(Tensor& out, std::initializer_list<Tensor> parents, std::function<void()> fn) {
    out.set_requires_grad(true);
    for (const Tensor& p : parents) out.node()->parents.push_back(p.handle());
    // dead branches never receive an output gradient; skip them
    Tensor::Node* self = out.node();
    out.node()->backprop = [self, fn = std::move(fn)] {
        if (!self->grad.empty()) fn();
    };
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": operand shapes differ");
}

// input [C,H,W] -> col [C*k*k, Ho*Wo]
inline void im2col(const float* in, int c, int h, int w, int k, int stride, int pad,
                   int ho, int wo, float* col) {
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* dst = col + ((ch * k + ky) * k + kx) * (ho * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst + oy * wo, dst + (oy + 1) * wo, 0.0f);
                        continue;
                    }
                    const float* src = in + (ch * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kx - pad;
                        dst[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

inline void col2im_add(const float* col, int c, int h, int w, int k, int stride, int pad,
                       int ho, int wo, float* in_grad) {
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* src = col + ((ch * k + ky) * k + kx) * (ho * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    float* dst = in_grad + (ch * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < w) dst[ix] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    if (track_grad({&a, &b})) {
        auto an = a.node();
        auto bn = b.node();
        auto on = out.node();
        detail::attach(out, {a, b}, [an, bn, on] {
            if (an->requires_grad) {
                if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                if (bn->grad.empty()) bn->grad.assign(bn->data.size(), 0.0f);
                for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

inline Tensor multiply(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "multiply");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
    if (track_grad({&a, &b})) {
        auto an = a.node();
        auto bn = b.node();
        auto on = out.node();
        detail::attach(out, {a, b}, [an, bn, on] {
            if (an->requires_grad) {
                if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    an->grad[i] += on->grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                if (bn->grad.empty()) bn->grad.assign(bn->data.size(), 0.0f);
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    bn->grad[i] += on->grad[i] * an->data[i];
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, float s) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
    if (track_grad({&a})) {
        auto an = a.node();
        auto on = out.node();
        detail::attach(out, {a}, [an, on, s] {
            if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * s;
        });
    }
    return out;
}

inline Tensor relu(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] > 0.0f ? a[i] : 0.0f;
    if (track_grad({&a})) {
        auto an = a.node();
        auto on = out.node();
        // subgradient at 0 is 0: the mask is strict
        detail::attach(out, {a}, [an, on] {
            if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                if (an->data[i] > 0.0f) an->grad[i] += on->grad[i];
        });
    }
    return out;
}

/// Reductions accumulate in double to bound drift at 32-bit storage.
inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    Tensor out = Tensor::from_data({1}, {static_cast<float>(acc)});
    if (track_grad({&a})) {
        auto an = a.node();
        auto on = out.node();
        detail::attach(out, {a}, [an, on] {
            if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[0];
        });
    }
    return out;
}

inline Tensor mean(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    float inv = 1.0f / static_cast<float>(a.numel());
    Tensor out = Tensor::from_data({1}, {static_cast<float>(acc) * inv});
    if (track_grad({&a})) {
        auto an = a.node();
        auto on = out.node();
        detail::attach(out, {a}, [an, on, inv] {
            if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[0] * inv;
        });
    }
    return out;
}

/// Channel-wise softmax with max-subtraction. Accepts [C,H,W] or [B,C,H,W].
inline Tensor softmax_channel(const Tensor& logits) {
    std::vector<int> shape = logits.shape();
    bool promoted = false;
    if (shape.size() == 3) {
        shape.insert(shape.begin(), 1);
        promoted = true;
    }
    if (shape.size() != 4) throw DimensionError("softmax_channel expects [B,C,H,W] or [C,H,W]");
    int b = shape[0], c = shape[1], h = shape[2], w = shape[3];
    if (c < 2) throw ConfigError("softmax_channel requires at least 2 channels");

    Tensor out(logits.shape());
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t sample = static_cast<std::size_t>(c) * plane;
    for (int bi = 0; bi < b; ++bi) {
        const float* in = logits.data().data() + bi * sample;
        float* o = out.data().data() + bi * sample;
        for (std::size_t p = 0; p < plane; ++p) {
            float mx = in[p];
            for (int ci = 1; ci < c; ++ci) mx = std::max(mx, in[ci * plane + p]);
            double denom = 0.0;
            for (int ci = 0; ci < c; ++ci) {
                float e = std::exp(in[ci * plane + p] - mx);
                o[ci * plane + p] = e;
                denom += e;
            }
            float inv = static_cast<float>(1.0 / denom);
            for (int ci = 0; ci < c; ++ci) o[ci * plane + p] *= inv;
        }
    }
    if (track_grad({&logits})) {
        auto ln = logits.node();
        auto on = out.node();
        detail::attach(out, {logits}, [ln, on, b, c, plane, sample] {
            if (ln->grad.empty()) ln->grad.assign(ln->data.size(), 0.0f);
            for (int bi = 0; bi < b; ++bi) {
                const float* s = on->data.data() + bi * sample;
                const float* dy = on->grad.data() + bi * sample;
                float* dx = ln->grad.data() + bi * sample;
                for (std::size_t p = 0; p < plane; ++p) {
                    double dot = 0.0;
                    for (int ci = 0; ci < c; ++ci) dot += dy[ci * plane + p] * s[ci * plane + p];
                    for (int ci = 0; ci < c; ++ci)
                        dx[ci * plane + p] += s[ci * plane + p] *
                                              (dy[ci * plane + p] - static_cast<float>(dot));
                }
            }
        });
    }
    (void)promoted;
    return out;
}

/// 2-D convolution, square kernel, im2col + sgemm. Layouts:
/// input [B,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout].
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     int stride = 1, int pad = -1) {
    if (input.ndim() != 4) throw DimensionError("conv2d: input must be [B,Cin,H,W]");
    if (weight.ndim() != 4) throw DimensionError("conv2d: weight must be [Cout,Cin,k,k]");
    int b = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    int cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != cin) throw DimensionError("conv2d: channel mismatch");
    if (weight.dim(3) != k) throw DimensionError("conv2d: kernel must be square");
    if (k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd");
    if (bias.ndim() != 1 || bias.dim(0) != cout) throw DimensionError("conv2d: bias shape");
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (pad < 0) pad = k / 2;

    int ho = (h + 2 * pad - k) / stride + 1;
    int wo = (w + 2 * pad - k) / stride + 1;
    if (ho < 1 || wo < 1) throw DimensionError("conv2d: empty output");

    const int ckk = cin * k * k;
    const int hw = ho * wo;
    Tensor out({b, cout, ho, wo});
    std::vector<float> col(static_cast<std::size_t>(ckk) * hw);
    for (int bi = 0; bi < b; ++bi) {
        const float* in = input.data().data() + static_cast<std::size_t>(bi) * cin * h * w;
        float* o = out.data().data() + static_cast<std::size_t>(bi) * cout * hw;
        detail::im2col(in, cin, h, w, k, stride, pad, ho, wo, col.data());
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, cout, hw, ckk, 1.0f,
                    weight.data().data(), ckk, col.data(), hw, 0.0f, o, hw);
        for (int co = 0; co < cout; ++co) {
            float bv = bias[static_cast<std::size_t>(co)];
            for (int p = 0; p < hw; ++p) o[co * hw + p] += bv;
        }
    }

    if (track_grad({&input, &weight, &bias})) {
        auto in_n = input.node();
        auto w_n = weight.node();
        auto b_n = bias.node();
        auto on = out.node();
        detail::attach(out, {input, weight, bias},
                       [in_n, w_n, b_n, on, b, cin, h, w, cout, k, stride, pad, ho, wo] {
            const int ckk = cin * k * k;
            const int hw = ho * wo;
            std::vector<float> col(static_cast<std::size_t>(ckk) * hw);
            if (w_n->requires_grad && w_n->grad.empty()) w_n->grad.assign(w_n->data.size(), 0.0f);
            if (b_n->requires_grad && b_n->grad.empty()) b_n->grad.assign(b_n->data.size(), 0.0f);
            if (in_n->requires_grad && in_n->grad.empty()) in_n->grad.assign(in_n->data.size(), 0.0f);
            std::vector<float> dcol;
            for (int bi = 0; bi < b; ++bi) {
                const float* dout = on->grad.data() + static_cast<std::size_t>(bi) * cout * hw;
                const float* in = in_n->data.data() + static_cast<std::size_t>(bi) * cin * h * w;
                if (w_n->requires_grad) {
                    detail::im2col(in, cin, h, w, k, stride, pad, ho, wo, col.data());
                    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, cout, ckk, hw, 1.0f,
                                dout, hw, col.data(), hw, 1.0f, w_n->grad.data(), ckk);
                }
                if (b_n->requires_grad) {
                    for (int co = 0; co < cout; ++co) {
                        double acc = 0.0;
                        for (int p = 0; p < hw; ++p) acc += dout[co * hw + p];
                        b_n->grad[static_cast<std::size_t>(co)] += static_cast<float>(acc);
                    }
                }
                if (in_n->requires_grad) {
                    dcol.assign(static_cast<std::size_t>(ckk) * hw, 0.0f);
                    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, ckk, hw, cout, 1.0f,
                                w_n->data.data(), ckk, dout, hw, 0.0f, dcol.data(), hw);
                    detail::col2im_add(dcol.data(), cin, h, w, k, stride, pad, ho, wo,
                                       in_n->grad.data() + static_cast<std::size_t>(bi) * cin * h * w);
                }
            }
        });
    }
    return out;
}

/// 2x2 max pooling, stride 2. Requires even H, W.
inline Tensor max_pool2(const Tensor& input) {
    if (input.ndim() != 4) throw DimensionError("max_pool2: input must be [B,C,H,W]");
    int b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h % 2 != 0 || w % 2 != 0) throw DimensionError("max_pool2: H and W must be even");
    int ho = h / 2, wo = w / 2;
    Tensor out({b, c, ho, wo});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    const float* in = input.data().data();
    for (int bc = 0; bc < b * c; ++bc) {
        const float* plane = in + static_cast<std::size_t>(bc) * h * w;
        float* o = out.data().data() + static_cast<std::size_t>(bc) * ho * wo;
        std::size_t* am = argmax->data() + static_cast<std::size_t>(bc) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                std::size_t base = static_cast<std::size_t>(2 * oy) * w + 2 * ox;
                std::size_t best = base;
                float bv = plane[base];
                const std::size_t cand[3] = {base + 1, base + w, base + w + 1};
                for (std::size_t idx : cand)
                    if (plane[idx] > bv) { bv = plane[idx]; best = idx; }
                o[oy * wo + ox] = bv;
                am[oy * wo + ox] = static_cast<std::size_t>(bc) * h * w + best;
            }
        }
    }
    if (track_grad({&input})) {
        auto in_n = input.node();
        auto on = out.node();
        detail::attach(out, {input}, [in_n, on, argmax] {
            if (in_n->grad.empty()) in_n->grad.assign(in_n->data.size(), 0.0f);
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                in_n->grad[(*argmax)[i]] += on->grad[i];
        });
    }
    return out;
}

inline Tensor upsample_nearest(const Tensor& input, int factor) {
    if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
    if (input.ndim() != 4) throw DimensionError("upsample_nearest: input must be [B,C,H,W]");
    int b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    int ho = h * factor, wo = w * factor;
    Tensor out({b, c, ho, wo});
    for (int bc = 0; bc < b * c; ++bc) {
        const float* in = input.data().data() + static_cast<std::size_t>(bc) * h * w;
        float* o = out.data().data() + static_cast<std::size_t>(bc) * ho * wo;
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox)
                o[oy * wo + ox] = in[(oy / factor) * w + ox / factor];
    }
    if (track_grad({&input})) {
        auto in_n = input.node();
        auto on = out.node();
        detail::attach(out, {input}, [in_n, on, b, c, h, w, factor] {
            if (in_n->grad.empty()) in_n->grad.assign(in_n->data.size(), 0.0f);
            int ho = h * factor, wo = w * factor;
            for (int bc = 0; bc < b * c; ++bc) {
                const float* dy = on->grad.data() + static_cast<std::size_t>(bc) * ho * wo;
                float* dx = in_n->grad.data() + static_cast<std::size_t>(bc) * h * w;
                for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox)
                        dx[(oy / factor) * w + ox / factor] += dy[oy * wo + ox];
            }
        });
    }
    return out;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 4 || b.ndim() != 4) throw DimensionError("concat_channels: expect 4-D");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw DimensionError("concat_channels: non-channel dims differ");
    int bs = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out({bs, ca + cb, h, w});
    for (int bi = 0; bi < bs; ++bi) {
        std::copy_n(a.data().data() + bi * ca * plane, ca * plane,
                    out.data().data() + bi * (ca + cb) * plane);
        std::copy_n(b.data().data() + bi * cb * plane, cb * plane,
                    out.data().data() + bi * (ca + cb) * plane + ca * plane);
    }
    if (track_grad({&a, &b})) {
        auto an = a.node();
        auto bn = b.node();
        auto on = out.node();
        detail::attach(out, {a, b}, [an, bn, on, bs, ca, cb, plane] {
            for (int bi = 0; bi < bs; ++bi) {
                const float* dy = on->grad.data() + bi * (ca + cb) * plane;
                if (an->requires_grad) {
                    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
                    float* da = an->grad.data() + bi * ca * plane;
                    for (std::size_t i = 0; i < ca * plane; ++i) da[i] += dy[i];
                }
                if (bn->requires_grad) {
                    if (bn->grad.empty()) bn->grad.assign(bn->data.size(), 0.0f);
                    float* db = bn->grad.data() + bi * cb * plane;
                    for (std::size_t i = 0; i < cb * plane; ++i) db[i] += dy[ca * plane + i];
                }
            }
        });
    }
    return out;
}

} // namespace csds
