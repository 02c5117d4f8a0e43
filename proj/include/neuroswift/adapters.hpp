#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "neuroswift/layers.hpp"
#include "neuroswift/world.hpp"

namespace neuroswift {

// voxel-facing layers start small so trained structure shows in weight norms
constexpr double kVoxelInputGain = 0.05;

struct ResidualBlockParams {
    LayerParams lin1, ln, lin2;  // all group core
};

inline ResidualBlockParams make_residual_block(std::size_t hidden, RngStream& rng) {
    ResidualBlockParams b;
    b.lin1 = make_linear(hidden, hidden, GroupTag::core, rng);
    b.ln = make_layernorm(hidden, GroupTag::core);  // block norms stay with the trunk
    b.lin2 = make_linear(hidden, hidden, GroupTag::core, rng);
    return b;
}

// ---------------------------------------------------------------------------
// AutoKL Adapter: voxels -> latent grid
// linear -> layernorm -> silu -> dropout -> residual blocks -> linear ->
// reshape -> groupnorm -> nearest upsample
// ---------------------------------------------------------------------------

struct AutoKLAdapterParams {
    std::size_t voxels = 0;
    std::size_t hidden = 128;
    std::size_t n_blocks = 2;
    std::size_t gn_groups = 2;
    double dropout_p = 0.1;
    double eps = 1e-5;
    std::size_t latent_channels = 4, latent_h = 4, latent_w = 4, upsample = 2;

    LayerParams fc_in;   // group fc_input
    LayerParams ln_in;   // group norm
    std::vector<ResidualBlockParams> blocks;
    LayerParams fc_out;  // group fc_input
    LayerParams gn_out;  // group norm

    std::size_t low_len() const { return latent_channels * latent_h * latent_w; }
    std::vector<std::size_t> out_dims(std::size_t batch) const {
        return {batch, latent_channels, latent_h * upsample, latent_w * upsample};
    }
};

inline AutoKLAdapterParams make_autokl_adapter(std::size_t voxels, std::size_t hidden,
                                               std::size_t n_blocks, std::size_t gn_groups,
                                               double dropout_p, const WorldDims& dims,
                                               RngStream rng) {
    AutoKLAdapterParams p;
    p.voxels = voxels;
    p.hidden = hidden;
    p.n_blocks = n_blocks;
    p.gn_groups = gn_groups;
    p.dropout_p = dropout_p;
    p.latent_channels = dims.latent_channels;
    p.latent_h = dims.latent_h;
    p.latent_w = dims.latent_w;
    p.upsample = dims.upsample;
    if (dims.latent_channels % gn_groups != 0) {
        throw ConfigError("autokl adapter: channels not divisible by gn_groups");
    }
    p.fc_in = make_linear(voxels, hidden, GroupTag::fc_input, rng, kVoxelInputGain);
    p.ln_in = make_layernorm(hidden, GroupTag::norm);
    for (std::size_t i = 0; i < n_blocks; ++i) p.blocks.push_back(make_residual_block(hidden, rng));
    p.fc_out = make_linear(hidden, p.low_len(), GroupTag::fc_input, rng);
    p.gn_out = make_groupnorm(dims.latent_channels, GroupTag::norm);
    return p;
}

struct ResidualBlockCtx {
    Tensor in, a, b_out, s;  // block input, lin1 out, layernorm out, silu out
    LayerNormCtx ln;
};

struct AutoKLCtx {
    Tensor v;                 // input batch
    Tensor h0, h1, h2, h3;    // fc_in, layernorm, silu, dropout outputs
    LayerNormCtx ln_in;
    DropoutCtx drop;
    std::vector<ResidualBlockCtx> blocks;
    Tensor trunk_out;
    Tensor flat;              // fc_out output
    std::vector<GroupNormCtx> gn;
    Tensor gn_in;             // [B x low_len], reshaped fc_out rows
};

// Shared residual-trunk step used by both adapters.
inline Tensor residual_block_forward(const ResidualBlockParams& p, const Tensor& x,
                                     double eps, ResidualBlockCtx* ctx) {
    ResidualBlockCtx local;
    ResidualBlockCtx& c = ctx ? *ctx : local;
    c.in = x;
    c.a = linear_forward(x, p.lin1.t("W"), p.lin1.t("b"));
    c.b_out = layer_norm_forward(c.a, p.ln.t("gamma"), p.ln.t("beta"), eps, &c.ln);
    c.s = silu_forward(c.b_out);
    Tensor d = linear_forward(c.s, p.lin2.t("W"), p.lin2.t("b"));
    return add(x, d);
}

using GradMap = std::map<std::string, Tensor>;

inline Tensor& grad_at(GradMap& g, const std::string& path) {
    auto it = g.find(path);
    if (it == g.end()) throw ConfigError("gradient buffer missing: " + path);
    return it->second;
}

inline void residual_block_backward(const ResidualBlockParams& p, const ResidualBlockCtx& ctx,
                                    const Tensor& g_out, Tensor* g_in, GradMap& grads,
                                    const std::string& prefix) {
    // out = in + lin2(silu(ln(lin1(in))))
    Tensor g_s(ctx.s.dims());
    linear_backward(ctx.s, p.lin2.t("W"), g_out, &g_s, &grad_at(grads, prefix + ".lin2.W"),
                    &grad_at(grads, prefix + ".lin2.b"));
    Tensor g_b(ctx.b_out.dims());
    silu_backward(ctx.b_out, g_s, &g_b);
    Tensor g_a(ctx.a.dims());
    layer_norm_backward(ctx.ln, p.ln.t("gamma"), g_b, &g_a, &grad_at(grads, prefix + ".ln.gamma"),
                        &grad_at(grads, prefix + ".ln.beta"));
    axpy(1.0, g_out, *g_in);  // skip connection
    linear_backward(ctx.in, p.lin1.t("W"), g_a, g_in, &grad_at(grads, prefix + ".lin1.W"),
                    &grad_at(grads, prefix + ".lin1.b"));
}

// Forward pass over a voxel batch; output is [B x C x hf x wf].
inline Tensor autokl_forward(const AutoKLAdapterParams& p, const Tensor& v, Mode mode,
                             RngStream& rng, AutoKLCtx* ctx = nullptr) {
    if (v.ndim() != 2 || v.dim(1) != p.voxels) {
        throw DimensionError("autokl_forward: voxel width " + v.dims_str() + " != " +
                             std::to_string(p.voxels));
    }
    AutoKLCtx local;
    AutoKLCtx& c = ctx ? *ctx : local;
    c.v = v;
    c.h0 = linear_forward(v, p.fc_in.t("W"), p.fc_in.t("b"));
    c.h1 = layer_norm_forward(c.h0, p.ln_in.t("gamma"), p.ln_in.t("beta"), p.eps, &c.ln_in);
    c.h2 = silu_forward(c.h1);
    c.h3 = dropout_forward(c.h2, p.dropout_p, mode, rng, &c.drop);
    Tensor x = c.h3;
    c.blocks.resize(p.blocks.size());
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        x = residual_block_forward(p.blocks[i], x, p.eps, &c.blocks[i]);
    }
    c.trunk_out = x;
    c.flat = linear_forward(x, p.fc_out.t("W"), p.fc_out.t("b"));
    const std::size_t batch = v.dim(0);
    const std::size_t hf = p.latent_h * p.upsample, wf = p.latent_w * p.upsample;
    Tensor out({batch, p.latent_channels, hf, wf});
    c.gn.resize(batch);
    c.gn_in = c.flat;
    for (std::size_t i = 0; i < batch; ++i) {
        Tensor grid({p.latent_channels, p.latent_h, p.latent_w});
        for (std::size_t k = 0; k < grid.numel(); ++k) grid[k] = c.flat.at2(i, k);
        Tensor normed = group_norm_forward(grid, p.gn_groups, p.gn_out.t("gamma"),
                                           p.gn_out.t("beta"), p.eps, &c.gn[i]);
        Tensor up = upsample_nearest_forward(normed, p.upsample);
        std::copy(up.vec().begin(), up.vec().end(),
                  out.vec().begin() + static_cast<std::ptrdiff_t>(i * up.numel()));
    }
    return out;
}

inline void autokl_backward(const AutoKLAdapterParams& p, const AutoKLCtx& ctx,
                            const Tensor& grad_out, GradMap& grads, Tensor* grad_v = nullptr) {
    const std::size_t batch = ctx.v.dim(0);
    const std::size_t hf = p.latent_h * p.upsample, wf = p.latent_w * p.upsample;
    Tensor g_flat({batch, p.low_len()});
    for (std::size_t i = 0; i < batch; ++i) {
        Tensor g_up({p.latent_channels, hf, wf});
        std::copy(grad_out.vec().begin() + static_cast<std::ptrdiff_t>(i * g_up.numel()),
                  grad_out.vec().begin() + static_cast<std::ptrdiff_t>((i + 1) * g_up.numel()),
                  g_up.vec().begin());
        Tensor g_norm({p.latent_channels, p.latent_h, p.latent_w});
        upsample_nearest_backward(p.upsample, g_up, &g_norm);
        Tensor g_grid({p.latent_channels, p.latent_h, p.latent_w});
        group_norm_backward(ctx.gn[i], p.gn_groups, p.gn_out.t("gamma"), g_norm, &g_grid,
                            &grad_at(grads, "gn_out.gamma"), &grad_at(grads, "gn_out.beta"));
        for (std::size_t k = 0; k < g_grid.numel(); ++k) g_flat.at2(i, k) = g_grid[k];
    }
    Tensor g_x(ctx.trunk_out.dims());
    linear_backward(ctx.trunk_out, p.fc_out.t("W"), g_flat, &g_x, &grad_at(grads, "fc_out.W"),
                    &grad_at(grads, "fc_out.b"));
    for (std::size_t i = p.blocks.size(); i-- > 0;) {
        Tensor g_prev(ctx.blocks[i].in.dims());
        residual_block_backward(p.blocks[i], ctx.blocks[i], g_x, &g_prev, grads,
                                "block" + std::to_string(i));
        g_x = std::move(g_prev);
    }
    Tensor g_h2(ctx.h2.dims());
    dropout_backward(ctx.drop, g_x, &g_h2);
    Tensor g_h1(ctx.h1.dims());
    silu_backward(ctx.h1, g_h2, &g_h1);
    Tensor g_h0(ctx.h0.dims());
    layer_norm_backward(ctx.ln_in, p.ln_in.t("gamma"), g_h1, &g_h0,
                        &grad_at(grads, "ln_in.gamma"), &grad_at(grads, "ln_in.beta"));
    linear_backward(ctx.v, p.fc_in.t("W"), g_h0, grad_v, &grad_at(grads, "fc_in.W"),
                    &grad_at(grads, "fc_in.b"));
}

// ---------------------------------------------------------------------------
// CLIP Adapter: voxels -> (image tokens, text tokens)
// embed net -> residual trunk -> two linear heads
// ---------------------------------------------------------------------------

struct ClipAdapterParams {
    std::size_t voxels = 0;
    std::size_t hidden = 128;
    std::size_t n_blocks = 2;
    double dropout_p = 0.1;
    double eps = 1e-5;
    std::size_t txt_tokens = 8, img_tokens = 16, token_dim = 32;

    LayerParams fc_in;     // group fc_input
    LayerParams ln_in;     // group norm
    std::vector<ResidualBlockParams> blocks;
    LayerParams head_img;  // group head
    LayerParams head_txt;  // group head
};

inline ClipAdapterParams make_clip_adapter(std::size_t voxels, std::size_t hidden,
                                           std::size_t n_blocks, double dropout_p,
                                           const WorldDims& dims, RngStream rng) {
    ClipAdapterParams p;
    p.voxels = voxels;
    p.hidden = hidden;
    p.n_blocks = n_blocks;
    p.dropout_p = dropout_p;
    p.txt_tokens = dims.txt_tokens;
    p.img_tokens = dims.img_tokens;
    p.token_dim = dims.token_dim;
    p.fc_in = make_linear(voxels, hidden, GroupTag::fc_input, rng, kVoxelInputGain);
    p.ln_in = make_layernorm(hidden, GroupTag::norm);
    for (std::size_t i = 0; i < n_blocks; ++i) p.blocks.push_back(make_residual_block(hidden, rng));
    p.head_img = make_linear(hidden, dims.img_tokens * dims.token_dim, GroupTag::head, rng);
    p.head_txt = make_linear(hidden, dims.txt_tokens * dims.token_dim, GroupTag::head, rng);
    return p;
}

struct ClipCtx {
    Tensor v;
    Tensor h0, h1, h2, h3;
    LayerNormCtx ln_in;
    DropoutCtx drop;
    std::vector<ResidualBlockCtx> blocks;
    Tensor trunk_out;
};

struct ClipForwardOut {
    Tensor e_img;  // [B x img_tokens x token_dim]
    Tensor e_txt;  // [B x txt_tokens x token_dim]
};

inline ClipForwardOut clip_forward(const ClipAdapterParams& p, const Tensor& v, Mode mode,
                                   RngStream& rng, ClipCtx* ctx = nullptr) {
    if (v.ndim() != 2 || v.dim(1) != p.voxels) {
        throw DimensionError("clip_forward: voxel width " + v.dims_str() + " != " +
                             std::to_string(p.voxels));
    }
    ClipCtx local;
    ClipCtx& c = ctx ? *ctx : local;
    c.v = v;
    c.h0 = linear_forward(v, p.fc_in.t("W"), p.fc_in.t("b"));
    c.h1 = layer_norm_forward(c.h0, p.ln_in.t("gamma"), p.ln_in.t("beta"), p.eps, &c.ln_in);
    c.h2 = silu_forward(c.h1);
    c.h3 = dropout_forward(c.h2, p.dropout_p, mode, rng, &c.drop);
    Tensor x = c.h3;
    c.blocks.resize(p.blocks.size());
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        x = residual_block_forward(p.blocks[i], x, p.eps, &c.blocks[i]);
    }
    c.trunk_out = x;
    const std::size_t batch = v.dim(0);
    ClipForwardOut out;
    out.e_img = linear_forward(x, p.head_img.t("W"), p.head_img.t("b"))
                    .reshaped({batch, p.img_tokens, p.token_dim});
    out.e_txt = linear_forward(x, p.head_txt.t("W"), p.head_txt.t("b"))
                    .reshaped({batch, p.txt_tokens, p.token_dim});
    return out;
}

inline void clip_backward(const ClipAdapterParams& p, const ClipCtx& ctx, const Tensor& g_img,
                          const Tensor& g_txt, GradMap& grads, Tensor* grad_v = nullptr) {
    const std::size_t batch = ctx.v.dim(0);
    Tensor g_img_flat = g_img.reshaped({batch, p.img_tokens * p.token_dim});
    Tensor g_txt_flat = g_txt.reshaped({batch, p.txt_tokens * p.token_dim});
    Tensor g_x(ctx.trunk_out.dims());
    linear_backward(ctx.trunk_out, p.head_img.t("W"), g_img_flat, &g_x,
                    &grad_at(grads, "head_img.W"), &grad_at(grads, "head_img.b"));
    linear_backward(ctx.trunk_out, p.head_txt.t("W"), g_txt_flat, &g_x,
                    &grad_at(grads, "head_txt.W"), &grad_at(grads, "head_txt.b"));
    for (std::size_t i = p.blocks.size(); i-- > 0;) {
        Tensor g_prev(ctx.blocks[i].in.dims());
        residual_block_backward(p.blocks[i], ctx.blocks[i], g_x, &g_prev, grads,
                                "block" + std::to_string(i));
        g_x = std::move(g_prev);
    }
    Tensor g_h2(ctx.h2.dims());
    dropout_backward(ctx.drop, g_x, &g_h2);
    Tensor g_h1(ctx.h1.dims());
    silu_backward(ctx.h1, g_h2, &g_h1);
    Tensor g_h0(ctx.h0.dims());
    layer_norm_backward(ctx.ln_in, p.ln_in.t("gamma"), g_h1, &g_h0,
                        &grad_at(grads, "ln_in.gamma"), &grad_at(grads, "ln_in.beta"));
    linear_backward(ctx.v, p.fc_in.t("W"), g_h0, grad_v, &grad_at(grads, "fc_in.W"),
                    &grad_at(grads, "fc_in.b"));
}

// ---------------------------------------------------------------------------
// Parameter traversal, census, re-initialization
// ---------------------------------------------------------------------------

using ParamVisitor = std::function<void(const std::string& path, GroupTag group, Tensor& tensor)>;

inline void visit_layer(LayerParams& layer, const std::string& prefix, const ParamVisitor& fn) {
    for (auto& [name, tensor] : layer.tensors) fn(prefix + "." + name, layer.group, tensor);
}

inline void visit_params(AutoKLAdapterParams& p, const ParamVisitor& fn) {
    visit_layer(p.fc_in, "fc_in", fn);
    visit_layer(p.ln_in, "ln_in", fn);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        const std::string b = "block" + std::to_string(i);
        visit_layer(p.blocks[i].lin1, b + ".lin1", fn);
        visit_layer(p.blocks[i].ln, b + ".ln", fn);
        visit_layer(p.blocks[i].lin2, b + ".lin2", fn);
    }
    visit_layer(p.fc_out, "fc_out", fn);
    visit_layer(p.gn_out, "gn_out", fn);
}

inline void visit_params(ClipAdapterParams& p, const ParamVisitor& fn) {
    visit_layer(p.fc_in, "fc_in", fn);
    visit_layer(p.ln_in, "ln_in", fn);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        const std::string b = "block" + std::to_string(i);
        visit_layer(p.blocks[i].lin1, b + ".lin1", fn);
        visit_layer(p.blocks[i].ln, b + ".ln", fn);
        visit_layer(p.blocks[i].lin2, b + ".lin2", fn);
    }
    visit_layer(p.head_img, "head_img", fn);
    visit_layer(p.head_txt, "head_txt", fn);
}

template <typename Params>
inline void visit_params_const(const Params& p, const ParamVisitor& fn) {
    visit_params(const_cast<Params&>(p), fn);
}

template <typename Params>
inline GradMap zero_grads_like(const Params& p) {
    GradMap g;
    visit_params_const(p, [&](const std::string& path, GroupTag, Tensor& t) {
        g.emplace(path, Tensor(t.dims()));
    });
    return g;
}

struct ParamCensus {
    std::map<std::string, std::size_t> by_group;  // group name -> element count
    std::size_t total = 0;

    std::size_t group(const std::string& name) const {
        auto it = by_group.find(name);
        return it == by_group.end() ? 0 : it->second;
    }
    double fraction(const std::vector<std::string>& groups) const {
        std::size_t n = 0;
        for (const auto& g : groups) n += group(g);
        return total == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(total);
    }
};

template <typename Params>
inline ParamCensus param_census(const Params& p) {
    ParamCensus c;
    c.by_group = {{"fc_input", 0}, {"core", 0}, {"head", 0}, {"norm", 0}};
    visit_params_const(p, [&](const std::string&, GroupTag g, Tensor& t) {
        c.by_group[to_string(g)] += t.numel();
        c.total += t.numel();
    });
    return c;
}

inline ParamCensus census_sum(const ParamCensus& a, const ParamCensus& b) {
    ParamCensus c = a;
    for (const auto& [k, v] : b.by_group) c.by_group[k] += v;
    c.total += b.total;
    return c;
}

// Re-create the voxel-facing input layer at a new width; every other tensor
// is left bit-identical. Used by the cross-subject fine-tune path.
inline void reinit_input_layers(AutoKLAdapterParams& p, std::size_t new_voxels, RngStream rng) {
    if (new_voxels < 1) throw ConfigError("reinit_input_layers: voxel width must be >= 1");
    p.fc_in = make_linear(new_voxels, p.hidden, GroupTag::fc_input, rng, kVoxelInputGain);
    p.voxels = new_voxels;
}

inline void reinit_input_layers(ClipAdapterParams& p, std::size_t new_voxels, RngStream rng) {
    if (new_voxels < 1) throw ConfigError("reinit_input_layers: voxel width must be >= 1");
    p.fc_in = make_linear(new_voxels, p.hidden, GroupTag::fc_input, rng, kVoxelInputGain);
    p.voxels = new_voxels;
}

}  // namespace neuroswift
