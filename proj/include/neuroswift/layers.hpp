#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "neuroswift/rng.hpp"
#include "neuroswift/tensor.hpp"

namespace neuroswift {

enum class LayerKind { linear, layernorm, groupnorm, attention };

// Parameter-group tag driving the cross-subject freeze/fine-tune protocol.
// Assigned at construction, immutable afterwards.
enum class GroupTag { fc_input, core, head, norm };

inline const char* to_string(GroupTag g) {
    switch (g) {
        case GroupTag::fc_input: return "fc_input";
        case GroupTag::core: return "core";
        case GroupTag::head: return "head";
        case GroupTag::norm: return "norm";
    }
    return "?";
}

inline GroupTag group_tag_from_string(const std::string& s) {
    if (s == "fc_input") return GroupTag::fc_input;
    if (s == "core") return GroupTag::core;
    if (s == "head") return GroupTag::head;
    if (s == "norm") return GroupTag::norm;
    throw ConfigError("unknown group tag: " + s);
}

struct LayerParams {
    LayerKind kind;
    GroupTag group;
    std::map<std::string, Tensor> tensors;

    const Tensor& t(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ConfigError("layer missing tensor: " + name);
        return it->second;
    }
    Tensor& t(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ConfigError("layer missing tensor: " + name);
        return it->second;
    }
};

// Kaiming-style fan-in scaled init for linears, ones/zeros for norm affines.
// The gain defaults to the usual sqrt(2); voxel-facing layers use a smaller
// one so that learned weight norms dominate the random-init floor in the
// contribution maps (the following LayerNorm makes the forward pass
// scale-invariant anyway).
inline LayerParams make_linear(std::size_t din, std::size_t dout, GroupTag group, RngStream& rng,
                               double gain = 1.4142135623730951) {
    LayerParams p{LayerKind::linear, group, {}};
    Tensor w({din, dout});
    const double std = gain / std::sqrt(static_cast<double>(din));
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = std * rng.next_normal();
    p.tensors.emplace("W", std::move(w));
    p.tensors.emplace("b", Tensor({dout}));
    return p;
}

inline LayerParams make_layernorm(std::size_t d, GroupTag group) {
    LayerParams p{LayerKind::layernorm, group, {}};
    p.tensors.emplace("gamma", Tensor::full({d}, 1.0));
    p.tensors.emplace("beta", Tensor({d}));
    return p;
}

inline LayerParams make_groupnorm(std::size_t channels, GroupTag group) {
    LayerParams p{LayerKind::groupnorm, group, {}};
    p.tensors.emplace("gamma", Tensor::full({channels}, 1.0));
    p.tensors.emplace("beta", Tensor({channels}));
    return p;
}

inline LayerParams make_attention(std::size_t width, GroupTag group, RngStream& rng) {
    LayerParams p{LayerKind::attention, group, {}};
    const double std = std::sqrt(1.0 / static_cast<double>(width));
    for (const char* name : {"Wq", "Wk", "Wv", "Wo"}) {
        Tensor w({width, width});
        for (std::size_t i = 0; i < w.numel(); ++i) w[i] = std * rng.next_normal();
        p.tensors.emplace(name, std::move(w));
    }
    return p;
}

// ---------------------------------------------------------------------------
// linear: y[i,j] = sum_k x[i,k] W[k,j] + b[j]
// ---------------------------------------------------------------------------

inline Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(0) || b.numel() != w.dim(1)) {
        throw DimensionError("linear: x" + x.dims_str() + " W" + w.dims_str() + " b" +
                             b.dims_str());
    }
    Tensor y = matmul(x, w);
    for (std::size_t i = 0; i < y.dim(0); ++i)
        for (std::size_t j = 0; j < y.dim(1); ++j) y.at2(i, j) += b[j];
    return y;
}

// Accumulates into caller-owned gradient buffers; pass nullptr to skip one.
inline void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gy, Tensor* gx,
                            Tensor* gw, Tensor* gb) {
    if (gx) axpy(1.0, matmul_nt(gy, w), *gx);
    if (gw) axpy(1.0, matmul_tn(x, gy), *gw);
    if (gb) {
        for (std::size_t i = 0; i < gy.dim(0); ++i)
            for (std::size_t j = 0; j < gy.dim(1); ++j) (*gb)[j] += gy.at2(i, j);
    }
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis of a [B x D] tensor, population variance
// ---------------------------------------------------------------------------

struct LayerNormCtx {
    Tensor xhat;      // [B x D]
    Tensor inv_std;   // [B]
};

inline Tensor layer_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                 double eps, LayerNormCtx* ctx = nullptr) {
    if (x.ndim() != 2) throw DimensionError("layer_norm: expected rank-2 input");
    const std::size_t b = x.dim(0), d = x.dim(1);
    if (d == 0 || gamma.numel() != d || beta.numel() != d) {
        throw DimensionError("layer_norm: affine width mismatch");
    }
    if (eps < 0.0) throw ConfigError("layer_norm: eps must be >= 0");
    Tensor y({b, d});
    Tensor xhat({b, d});
    Tensor inv_std({b});
    for (std::size_t i = 0; i < b; ++i) {
        const double* row = x.data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (row[j] - mean) * is;
            xhat.at2(i, j) = xh;
            y.at2(i, j) = gamma[j] * xh + beta[j];
        }
    }
    if (ctx) {
        ctx->xhat = std::move(xhat);
        ctx->inv_std = std::move(inv_std);
    }
    return y;
}

inline void layer_norm_backward(const LayerNormCtx& ctx, const Tensor& gamma, const Tensor& gy,
                                Tensor* gx, Tensor* ggamma, Tensor* gbeta) {
    const std::size_t b = gy.dim(0), d = gy.dim(1);
    for (std::size_t i = 0; i < b; ++i) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double g = gy.at2(i, j) * gamma[j];
            sum_g += g;
            sum_gx += g * ctx.xhat.at2(i, j);
        }
        const double n = static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double g = gy.at2(i, j) * gamma[j];
            if (gx) {
                (*gx).at2(i, j) +=
                    ctx.inv_std[i] * (g - sum_g / n - ctx.xhat.at2(i, j) * sum_gx / n);
            }
            if (ggamma) (*ggamma)[j] += gy.at2(i, j) * ctx.xhat.at2(i, j);
            if (gbeta) (*gbeta)[j] += gy.at2(i, j);
        }
    }
}

// ---------------------------------------------------------------------------
// group_norm over a [C x H x W] tensor: standardize per channel group, then
// per-channel affine
// ---------------------------------------------------------------------------

struct GroupNormCtx {
    Tensor xhat;            // [C x H x W]
    std::vector<double> inv_std;  // per group
};

inline Tensor group_norm_forward(const Tensor& x, std::size_t groups, const Tensor& gamma,
                                 const Tensor& beta, double eps, GroupNormCtx* ctx = nullptr) {
    if (x.ndim() != 3) throw DimensionError("group_norm: expected rank-3 input");
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    if (groups == 0 || c % groups != 0) {
        throw ConfigError("group_norm: channels " + std::to_string(c) + " not divisible by " +
                          std::to_string(groups) + " groups");
    }
    if (gamma.numel() != c || beta.numel() != c) {
        throw DimensionError("group_norm: affine width mismatch");
    }
    if (eps < 0.0) throw ConfigError("group_norm: eps must be >= 0");
    const std::size_t cpg = c / groups;
    Tensor y(x.dims());
    Tensor xhat(x.dims());
    std::vector<double> inv_std(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        const double* gp = x.data() + g * cpg * hw;
        const std::size_t n = cpg * hw;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += gp[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (gp[i] - mean) * (gp[i] - mean);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[g] = is;
        for (std::size_t cc = 0; cc < cpg; ++cc) {
            const std::size_t ch = g * cpg + cc;
            for (std::size_t i = 0; i < hw; ++i) {
                const double xh = (x.data()[ch * hw + i] - mean) * is;
                xhat.data()[ch * hw + i] = xh;
                y.data()[ch * hw + i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    if (ctx) {
        ctx->xhat = std::move(xhat);
        ctx->inv_std = std::move(inv_std);
    }
    return y;
}

inline void group_norm_backward(const GroupNormCtx& ctx, std::size_t groups, const Tensor& gamma,
                                const Tensor& gy, Tensor* gx, Tensor* ggamma, Tensor* gbeta) {
    const std::size_t c = gy.dim(0), hw = gy.dim(1) * gy.dim(2);
    const std::size_t cpg = c / groups;
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t n = cpg * hw;
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t cc = 0; cc < cpg; ++cc) {
            const std::size_t ch = g * cpg + cc;
            for (std::size_t i = 0; i < hw; ++i) {
                const double gv = gy.data()[ch * hw + i] * gamma[ch];
                sum_g += gv;
                sum_gx += gv * ctx.xhat.data()[ch * hw + i];
            }
        }
        const double dn = static_cast<double>(n);
        for (std::size_t cc = 0; cc < cpg; ++cc) {
            const std::size_t ch = g * cpg + cc;
            for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t k = ch * hw + i;
                const double gv = gy.data()[k] * gamma[ch];
                if (gx) {
                    gx->data()[k] += ctx.inv_std[g] *
                                     (gv - sum_g / dn - ctx.xhat.data()[k] * sum_gx / dn);
                }
                if (ggamma) (*ggamma)[ch] += gy.data()[k] * ctx.xhat.data()[k];
                if (gbeta) (*gbeta)[ch] += gy.data()[k];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// silu: x * sigmoid(x)
// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Tensor silu_forward(const Tensor& x) {
    Tensor y = x;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x[i] * sigmoid(x[i]);
    return y;
}

inline void silu_backward(const Tensor& x, const Tensor& gy, Tensor* gx) {
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double s = sigmoid(x[i]);
        (*gx)[i] += gy[i] * s * (1.0 + x[i] * (1.0 - s));
    }
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

enum class Mode { train, eval };

struct DropoutCtx {
    std::vector<double> mask;  // survivor scale per element; empty in eval mode
};

inline Tensor dropout_forward(const Tensor& x, double p, Mode mode, RngStream& rng,
                              DropoutCtx* ctx = nullptr) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0,1)");
    if (mode == Mode::eval || p == 0.0) {
        if (ctx) ctx->mask.clear();
        return x;
    }
    const double keep_scale = 1.0 / (1.0 - p);
    Tensor y(x.dims());
    std::vector<double> mask(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        mask[i] = rng.next_uniform() < p ? 0.0 : keep_scale;
        y[i] = x[i] * mask[i];
    }
    if (ctx) ctx->mask = std::move(mask);
    return y;
}

inline void dropout_backward(const DropoutCtx& ctx, const Tensor& gy, Tensor* gx) {
    if (ctx.mask.empty()) {
        axpy(1.0, gy, *gx);
        return;
    }
    for (std::size_t i = 0; i < gy.numel(); ++i) (*gx)[i] += gy[i] * ctx.mask[i];
}

// ---------------------------------------------------------------------------
// cross attention: softmax((q Wq)(kv Wk)^T / sqrt(d)) (kv Wv) Wo
// single head, no residual inside
// ---------------------------------------------------------------------------

struct AttnCtx {
    Tensor qp, kp, vp;  // projected q, k, v
    Tensor probs;       // [Tq x Tkv] attention weights
    Tensor o1;          // probs * vp, before the output projection
};

inline void softmax_rows(Tensor& m) {
    for (std::size_t i = 0; i < m.dim(0); ++i) {
        double* row = m.data() + i * m.dim(1);
        double mx = row[0];
        for (std::size_t j = 1; j < m.dim(1); ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < m.dim(1); ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < m.dim(1); ++j) row[j] /= sum;
    }
}

inline Tensor cross_attention_forward(const Tensor& q, const Tensor& kv, const LayerParams& params,
                                      AttnCtx* ctx = nullptr) {
    if (q.ndim() != 2 || kv.ndim() != 2 || q.dim(1) != kv.dim(1)) {
        throw DimensionError("cross_attention: width mismatch q" + q.dims_str() + " kv" +
                             kv.dims_str());
    }
    const Tensor& wq = params.t("Wq");
    if (wq.dim(0) != q.dim(1)) throw DimensionError("cross_attention: projection width mismatch");
    Tensor qp = matmul(q, wq);
    Tensor kp = matmul(kv, params.t("Wk"));
    Tensor vp = matmul(kv, params.t("Wv"));
    Tensor scores = matmul_nt(qp, kp);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(qp.dim(1)));
    for (std::size_t i = 0; i < scores.numel(); ++i) scores[i] *= inv_sqrt_d;
    softmax_rows(scores);
    Tensor o1 = matmul(scores, vp);
    Tensor out = matmul(o1, params.t("Wo"));
    if (ctx) {
        ctx->qp = std::move(qp);
        ctx->kp = std::move(kp);
        ctx->vp = std::move(vp);
        ctx->probs = std::move(scores);
        ctx->o1 = std::move(o1);
    }
    return out;
}

inline void cross_attention_backward(const Tensor& q, const Tensor& kv, const LayerParams& params,
                                     const AttnCtx& ctx, const Tensor& gy, Tensor* gq, Tensor* gkv,
                                     std::map<std::string, Tensor>* gparams) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(ctx.qp.dim(1)));
    Tensor g_o1 = matmul_nt(gy, params.t("Wo"));
    Tensor g_probs = matmul_nt(g_o1, ctx.vp);
    Tensor g_vp = matmul_tn(ctx.probs, g_o1);
    // softmax backward per row
    Tensor g_scores(ctx.probs.dims());
    for (std::size_t i = 0; i < g_probs.dim(0); ++i) {
        double dotrow = 0.0;
        for (std::size_t j = 0; j < g_probs.dim(1); ++j)
            dotrow += g_probs.at2(i, j) * ctx.probs.at2(i, j);
        for (std::size_t j = 0; j < g_probs.dim(1); ++j)
            g_scores.at2(i, j) = ctx.probs.at2(i, j) * (g_probs.at2(i, j) - dotrow);
    }
    for (std::size_t i = 0; i < g_scores.numel(); ++i) g_scores[i] *= inv_sqrt_d;
    Tensor g_qp = matmul(g_scores, ctx.kp);
    Tensor g_kp = matmul_tn(g_scores, ctx.qp);
    if (gparams) {
        axpy(1.0, matmul_tn(ctx.o1, gy), gparams->at("Wo"));
        axpy(1.0, matmul_tn(q, g_qp), gparams->at("Wq"));
        axpy(1.0, matmul_tn(kv, g_kp), gparams->at("Wk"));
        axpy(1.0, matmul_tn(kv, g_vp), gparams->at("Wv"));
    }
    if (gq) axpy(1.0, matmul_nt(g_qp, params.t("Wq")), *gq);
    if (gkv) {
        axpy(1.0, matmul_nt(g_kp, params.t("Wk")), *gkv);
        axpy(1.0, matmul_nt(g_vp, params.t("Wv")), *gkv);
    }
}

// ---------------------------------------------------------------------------
// nearest-neighbor upsampling on [C x H x W]
// ---------------------------------------------------------------------------

inline Tensor upsample_nearest_forward(const Tensor& x, std::size_t factor) {
    if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
    if (x.ndim() != 3) throw DimensionError("upsample_nearest: expected rank-3 input");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor y({c, h * factor, w * factor});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h * factor; ++i)
            for (std::size_t j = 0; j < w * factor; ++j)
                y.at3(ch, i, j) = x.at3(ch, i / factor, j / factor);
    return y;
}

// Gradient of each source cell is the sum over its replication block.
inline void upsample_nearest_backward(std::size_t factor, const Tensor& gy, Tensor* gx) {
    const std::size_t c = gx->dim(0), h = gx->dim(1), w = gx->dim(2);
    if (gy.dim(0) != c || gy.dim(1) != h * factor || gy.dim(2) != w * factor) {
        throw DimensionError("upsample_nearest backward: shape mismatch");
    }
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h * factor; ++i)
            for (std::size_t j = 0; j < w * factor; ++j)
                gx->at3(ch, i / factor, j / factor) += gy.at3(ch, i, j);
}

}  // namespace neuroswift
