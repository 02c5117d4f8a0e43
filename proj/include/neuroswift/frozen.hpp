#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "neuroswift/layers.hpp"
#include "neuroswift/linalg.hpp"
#include "neuroswift/nstf.hpp"
#include "neuroswift/schedule.hpp"

namespace neuroswift {

struct WorldDims {
    std::size_t latent_channels = 4;
    std::size_t latent_h = 4;
    std::size_t latent_w = 4;
    std::size_t upsample = 2;
    std::size_t code_dim = 16;
    std::size_t txt_tokens = 8;
    std::size_t img_tokens = 16;
    std::size_t token_dim = 32;
    std::size_t image_h = 32;
    std::size_t image_w = 32;

    std::size_t latent_hf() const { return latent_h * upsample; }
    std::size_t latent_wf() const { return latent_w * upsample; }
    std::size_t latent_len() const { return latent_channels * latent_hf() * latent_wf(); }
    std::size_t image_len() const { return 3 * image_h * image_w; }
    std::vector<std::size_t> latent_dims() const {
        return {latent_channels, latent_hf(), latent_wf()};
    }
    std::vector<std::size_t> image_dims() const { return {3, image_h, image_w}; }

    void validate() const {
        if (latent_channels < 1 || latent_h < 1 || latent_w < 1 || upsample < 1 || code_dim < 1 ||
            txt_tokens < 1 || img_tokens < 1 || token_dim < 1 || image_h < 1 || image_w < 1) {
            throw ConfigError("world dims: all extents must be >= 1");
        }
        if (image_len() < latent_len()) {
            throw ConfigError("world dims: image space (" + std::to_string(image_len()) +
                              ") must be at least latent space (" + std::to_string(latent_len()) +
                              ") for an orthonormal decoder");
        }
        if (txt_tokens * token_dim < code_dim || img_tokens * token_dim < code_dim) {
            throw ConfigError("world dims: token spaces must be at least code_dim wide");
        }
    }
};

// Toy cross-attention denoiser standing in for the conditioned UNet. All
// parameters are frozen at world generation.
struct DenoiserParams {
    LayerParams proj_in;    // latent channels -> model width
    Tensor time_proj;       // [16 x width]
    LayerParams attn;       // Wq, Wk, Wv, Wo
    LayerParams ff1, ff2;   // width -> width
    LayerParams proj_out;   // width -> latent channels
};

// Expand a low-resolution latent vector (C x h x w) to full resolution
// (C x hf x wf) by nearest replication; the index map matches
// upsample_nearest_forward.
inline Tensor expand_low_latent(const Tensor& low, const WorldDims& dims) {
    if (low.numel() != dims.latent_channels * dims.latent_h * dims.latent_w) {
        throw DimensionError("expand_low_latent: wrong low-resolution length");
    }
    Tensor grid({dims.latent_channels, dims.latent_h, dims.latent_w}, low.vec());
    return upsample_nearest_forward(grid, dims.upsample);
}

inline Tensor sinusoidal_embedding16(std::size_t t) {
    Tensor e({16});
    for (std::size_t i = 0; i < 8; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(2 * i) / 16.0);
        e[2 * i] = std::sin(static_cast<double>(t) * freq);
        e[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
    }
    return e;
}

// Frozen stand-ins for the pretrained stack. The decoder has orthonormal
// columns so the encoder E = D^T inverts it exactly, which makes the decode
// step losslessly testable.
class FrozenWorldComponents {
  public:
    FrozenWorldComponents() = default;

    FrozenWorldComponents(const WorldDims& dims, RngStream rng, double semantic_fine_fraction = 0.75)
        : dims_(dims), fine_fraction_(semantic_fine_fraction) {
        dims_.validate();
        if (fine_fraction_ < 0.0 || fine_fraction_ >= 1.0) {
            throw ConfigError("frozen: semantic fine fraction must be in [0,1)");
        }
        if (dims_.upsample == 1) fine_fraction_ = 0.0;  // no finer scale exists
        const std::size_t latent = dims_.latent_len();
        const std::size_t image = dims_.image_len();
        {
            RngStream r = rng.substream("decoder");
            dec_ = random_orthonormal_columns(image, latent, r);
        }
        {
            // The semantic map splits across spatial scales: a coarse part
            // lives at the adapter's low resolution (replicated up, the way
            // compressed latents are smooth) and a fine part with zero block
            // means that no upsampled prediction can represent. The fine
            // fraction is what the structural pathway must leave to the
            // semantic one.
            RngStream r = rng.substream("semantic_latent_map");
            const std::size_t low = dims_.latent_channels * dims_.latent_h * dims_.latent_w;
            const double fine = fine_fraction_;
            const double s = 1.0 / std::sqrt(static_cast<double>(dims_.code_dim));
            Tensor g_low = normal_draw(r, {low, dims_.code_dim});
            g_ = Tensor({latent, dims_.code_dim});
            for (std::size_t col = 0; col < dims_.code_dim; ++col) {
                Tensor low_col({low});
                for (std::size_t i = 0; i < low; ++i) low_col[i] = s * g_low.at2(i, col);
                Tensor full = expand_low_latent(low_col, dims_);
                for (std::size_t i = 0; i < latent; ++i)
                    g_.at2(i, col) = std::sqrt(1.0 - fine) * full[i];
            }
            if (fine > 0.0) {
                const std::size_t block = dims_.upsample * dims_.upsample;
                const double rescale =
                    std::sqrt(static_cast<double>(block) / static_cast<double>(block - 1));
                Tensor g_hi = normal_draw(r, {latent, dims_.code_dim});
                for (std::size_t col = 0; col < dims_.code_dim; ++col) {
                    Tensor column({latent});
                    for (std::size_t i = 0; i < latent; ++i) column[i] = g_hi.at2(i, col);
                    remove_block_means(column);
                    for (std::size_t i = 0; i < latent; ++i)
                        g_.at2(i, col) += std::sqrt(fine) * s * rescale * column[i];
                }
            }
        }
        {
            RngStream r = rng.substream("text_clipper");
            txt_map_ = normal_draw(r, {dims_.txt_tokens * dims_.token_dim, dims_.code_dim});
            const double s = 1.0 / std::sqrt(static_cast<double>(dims_.code_dim));
            for (std::size_t i = 0; i < txt_map_.numel(); ++i) txt_map_[i] *= s;
            pos_txt_ = scale(normal_draw(r, {dims_.txt_tokens, dims_.token_dim}), 0.1);
        }
        {
            RngStream r = rng.substream("image_clipper");
            img_map_ = normal_draw(r, {dims_.img_tokens * dims_.token_dim, image});
            const double s = 1.0 / std::sqrt(static_cast<double>(image));
            for (std::size_t i = 0; i < img_map_.numel(); ++i) img_map_[i] *= s;
            pos_img_ = scale(normal_draw(r, {dims_.img_tokens, dims_.token_dim}), 0.1);
        }
        {
            RngStream r = rng.substream("denoiser");
            const std::size_t width = dims_.token_dim;
            denoiser_.proj_in = make_linear(dims_.latent_channels, width, GroupTag::core, r);
            denoiser_.time_proj = scale(normal_draw(r, {16, width}), 0.25);
            denoiser_.attn = make_attention(width, GroupTag::core, r);
            denoiser_.ff1 = make_linear(width, width, GroupTag::core, r);
            denoiser_.ff2 = make_linear(width, width, GroupTag::core, r);
            denoiser_.proj_out = make_linear(width, dims_.latent_channels, GroupTag::core, r);
            // keep predicted noise modest so untrained sampling stays bounded
            Tensor& wout = denoiser_.proj_out.t("W");
            for (std::size_t i = 0; i < wout.numel(); ++i) wout[i] *= 0.1;
        }
        rebuild_derived();
    }

    const WorldDims& dims() const { return dims_; }
    const Tensor& decoder_matrix() const { return dec_; }
    const Tensor& semantic_latent_map() const { return g_; }
    const Tensor& text_map() const { return txt_map_; }
    const Tensor& image_map() const { return img_map_; }
    const Tensor& text_positional() const { return pos_txt_; }
    const Tensor& image_positional() const { return pos_img_; }
    const DenoiserParams& denoiser() const { return denoiser_; }

    // z = D^T vec(image), reshaped to the full-resolution latent grid
    Tensor autokl_encode(const Tensor& image) const {
        if (image.dims() != dims_.image_dims()) {
            throw DimensionError("autokl_encode: image dims " + image.dims_str());
        }
        Tensor flat({1, image.numel()}, image.vec());
        Tensor z = matmul(flat, dec_);  // (1 x image) * (image x latent)
        return z.reshaped(dims_.latent_dims());
    }

    // image = D vec(z)
    Tensor autokl_decode(const Tensor& z) const {
        if (z.dims() != dims_.latent_dims()) {
            throw DimensionError("autokl_decode: latent dims " + z.dims_str());
        }
        Tensor flat({1, z.numel()}, z.vec());
        Tensor img = matmul_nt(flat, dec_);  // (1 x latent) * (latent x image)^T... via dec rows
        return img.reshaped(dims_.image_dims());
    }

    // tokens = reshape(T_txt_map code) + positional offsets
    Tensor clip_text_encode(const Tensor& code) const {
        check_code(code, "clip_text_encode");
        Tensor c({dims_.code_dim, 1}, code.vec());
        Tensor tok = matmul(txt_map_, c).reshaped({dims_.txt_tokens, dims_.token_dim});
        return add(tok, pos_txt_);
    }

    Tensor clip_image_encode(const Tensor& image) const {
        if (image.dims() != dims_.image_dims()) {
            throw DimensionError("clip_image_encode: image dims " + image.dims_str());
        }
        Tensor v({image.numel(), 1}, image.vec());
        Tensor tok = matmul(img_map_eff_, v).reshaped({dims_.img_tokens, dims_.token_dim});
        return add(tok, pos_img_);
    }

    // semantic latent: the code-only part of the latent, no structural residual
    Tensor semantic_latent(const Tensor& code) const {
        check_code(code, "semantic_latent");
        Tensor c({dims_.code_dim, 1}, code.vec());
        return matmul(g_, c).reshaped(dims_.latent_dims());
    }

    // image = decode(G code) + sigma * seeded perturbation
    Tensor semantic_image_gen(const Tensor& code, RngStream& rng, double sigma) const {
        Tensor img = autokl_decode(semantic_latent(code));
        if (sigma > 0.0) {
            for (std::size_t i = 0; i < img.numel(); ++i) img[i] += sigma * rng.next_normal();
        }
        return img;
    }

    // Exact noise predictor for a point-mass latent distribution at G code:
    // eps_hat = (z_t - sqrt(alpha_bar_t) z*) / sqrt(1 - alpha_bar_t)
    Tensor oracle_denoiser(const Tensor& z_t, std::size_t t, const Tensor& code,
                           const NoiseSchedule& schedule) const {
        schedule.check_t(t, "oracle_denoiser");
        if (schedule.alpha_bar[t] >= 1.0) {
            throw ConfigError("oracle_denoiser: schedule must keep alpha_bar < 1 for t >= 1");
        }
        Tensor target = semantic_latent(code);
        require_same_dims(z_t, target, "oracle_denoiser");
        const double a = std::sqrt(schedule.alpha_bar[t]);
        const double b = 1.0 / std::sqrt(1.0 - schedule.alpha_bar[t]);
        Tensor out(z_t.dims());
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (z_t[i] - a * target[i]) * b;
        return out;
    }

    // Posterior-mean noise predictor for the structured latent prior
    // z0 = G code + u, u ~ N(0, prior_std^2) on the subspace orthogonal to
    // range(G) and a point mass along it. The orthogonal part of the
    // point-mass prediction is shrunk by
    // (1-alpha_bar) / (prior_std^2 alpha_bar + 1-alpha_bar); prior_std = 0
    // reduces exactly to oracle_denoiser. A positive width keeps the
    // data-borne structural residual in the trajectory while the semantic
    // component still converges onto G code.
    Tensor gaussian_oracle_denoiser(const Tensor& z_t, std::size_t t, const Tensor& code,
                                    const NoiseSchedule& schedule, double prior_std) const {
        if (prior_std < 0.0) throw ConfigError("gaussian_oracle_denoiser: prior_std must be >= 0");
        Tensor eps = oracle_denoiser(z_t, t, code, schedule);
        if (prior_std == 0.0) return eps;
        const double ab = schedule.alpha_bar[t];
        const double shrink = (1.0 - ab) / (prior_std * prior_std * ab + (1.0 - ab));
        // eps - (1 - shrink) * P_orth(eps), with P_orth = I - B B^T
        Tensor flat({eps.numel()}, eps.vec());
        const std::size_t k = latent_sem_basis_.dim(1);
        std::vector<double> coef(k, 0.0);
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t i = 0; i < flat.numel(); ++i)
                coef[j] += latent_sem_basis_.at2(i, j) * flat[i];
        for (std::size_t i = 0; i < flat.numel(); ++i) {
            double in_g = 0.0;
            for (std::size_t j = 0; j < k; ++j) in_g += latent_sem_basis_.at2(i, j) * coef[j];
            flat[i] = in_g + shrink * (flat[i] - in_g);
        }
        return flat.reshaped(z_t.dims());
    }

    // Recover the semantic code from predicted CLIP embeddings by inverting
    // the frozen token maps (least squares). Weights choose how text and
    // image estimates blend; a dropped modality passes weight 0.
    Tensor estimate_code(const Tensor* e_txt, const Tensor* e_img, double w_txt,
                         double w_img) const {
        if (w_txt < 0.0 || w_img < 0.0 || (w_txt == 0.0 && w_img == 0.0)) {
            throw ConfigError("estimate_code: need nonnegative weights, at least one > 0");
        }
        if (w_txt > 0.0 && e_txt == nullptr) throw ConfigError("estimate_code: e_txt missing");
        if (w_img > 0.0 && e_img == nullptr) throw ConfigError("estimate_code: e_img missing");
        Tensor code({dims_.code_dim});
        const double wsum = w_txt + w_img;
        if (w_txt > 0.0) {
            Tensor delta = sub(*e_txt, pos_txt_);
            Tensor flat({delta.numel(), 1}, delta.vec());
            Tensor c = matmul(pinv_txt_, flat);
            axpy(w_txt / wsum, c.reshaped({dims_.code_dim}), code);
        }
        if (w_img > 0.0) {
            Tensor delta = sub(*e_img, pos_img_);
            Tensor flat({delta.numel(), 1}, delta.vec());
            Tensor c = matmul(pinv_img_, flat);
            axpy(w_img / wsum, c.reshaped({dims_.code_dim}), code);
        }
        return code;
    }

    // Structural residual draw: a low-resolution gaussian with the semantic
    // directions projected out (structure carries no code information), then
    // rescaled to unit per-element variance and expanded to full resolution.
    Tensor sample_structural_residual(RngStream& rng) const {
        const std::size_t low = residual_null_basis_.dim(0);
        const std::size_t k = residual_null_basis_.dim(1);
        if (low <= k) throw ConfigError("residual draw: code_dim must be below the latent size");
        Tensor r = normal_draw(rng, {low});
        for (std::size_t j = 0; j < k; ++j) {
            double proj = 0.0;
            for (std::size_t i = 0; i < low; ++i) proj += residual_null_basis_.at2(i, j) * r[i];
            for (std::size_t i = 0; i < low; ++i) r[i] -= proj * residual_null_basis_.at2(i, j);
        }
        const double rescale = std::sqrt(static_cast<double>(low) / static_cast<double>(low - k));
        for (std::size_t i = 0; i < low; ++i) r[i] *= rescale;
        return expand_low_latent(r, dims_);
    }

    void set_tensors(WorldDims dims, Tensor dec, Tensor g, Tensor txt_map, Tensor img_map,
                     Tensor pos_txt, Tensor pos_img, DenoiserParams denoiser) {
        dims_ = dims;
        dims_.validate();
        dec_ = std::move(dec);
        g_ = std::move(g);
        txt_map_ = std::move(txt_map);
        img_map_ = std::move(img_map);
        pos_txt_ = std::move(pos_txt);
        pos_img_ = std::move(pos_img);
        denoiser_ = std::move(denoiser);
        rebuild_derived();
    }

  private:
    // subtract the mean of every upsample block from a full-resolution
    // latent vector, leaving only detail an upsampled grid cannot carry
    void remove_block_means(Tensor& full) const {
        const std::size_t hw_f = dims_.latent_hf() * dims_.latent_wf();
        for (std::size_t c = 0; c < dims_.latent_channels; ++c)
            for (std::size_t bi = 0; bi < dims_.latent_h; ++bi)
                for (std::size_t bj = 0; bj < dims_.latent_w; ++bj) {
                    double mean = 0.0;
                    for (std::size_t u = 0; u < dims_.upsample; ++u)
                        for (std::size_t v = 0; v < dims_.upsample; ++v) {
                            const std::size_t i = bi * dims_.upsample + u;
                            const std::size_t j = bj * dims_.upsample + v;
                            mean += full[c * hw_f + i * dims_.latent_wf() + j];
                        }
                    mean /= static_cast<double>(dims_.upsample * dims_.upsample);
                    for (std::size_t u = 0; u < dims_.upsample; ++u)
                        for (std::size_t v = 0; v < dims_.upsample; ++v) {
                            const std::size_t i = bi * dims_.upsample + u;
                            const std::size_t j = bj * dims_.upsample + v;
                            full[c * hw_f + i * dims_.latent_wf() + j] -= mean;
                        }
                }
    }

    void check_code(const Tensor& code, const char* what) const {
        if (code.numel() != dims_.code_dim) {
            throw DimensionError(std::string(what) + ": code dim " + std::to_string(code.numel()) +
                                 " != " + std::to_string(dims_.code_dim));
        }
    }

    void rebuild_derived() {
        // the image clipper reads only the semantic image subspace
        // span(D G): selective to content, blind to structural residue,
        // the way contrastive image encoders behave
        Tensor dg = matmul(dec_, g_);  // [image_len x code_dim]
        Tensor q = dg;
        for (std::size_t j = 0; j < q.dim(1); ++j) {
            for (std::size_t k = 0; k < j; ++k) {
                double proj = 0.0;
                for (std::size_t i = 0; i < q.dim(0); ++i) proj += q.at2(i, k) * q.at2(i, j);
                for (std::size_t i = 0; i < q.dim(0); ++i) q.at2(i, j) -= proj * q.at2(i, k);
            }
            double nrm = 0.0;
            for (std::size_t i = 0; i < q.dim(0); ++i) nrm += q.at2(i, j) * q.at2(i, j);
            nrm = std::sqrt(nrm);
            if (nrm < 1e-12) throw NumericalError("frozen: degenerate semantic image subspace");
            for (std::size_t i = 0; i < q.dim(0); ++i) q.at2(i, j) /= nrm;
        }
        img_sem_basis_ = std::move(q);
        img_map_eff_ = matmul(matmul(img_map_, img_sem_basis_), transpose2(img_sem_basis_));

        // orthonormal basis of range(G) at full latent resolution
        {
            Tensor qg = g_;
            for (std::size_t j = 0; j < qg.dim(1); ++j) {
                for (std::size_t k = 0; k < j; ++k) {
                    double proj = 0.0;
                    for (std::size_t i = 0; i < qg.dim(0); ++i)
                        proj += qg.at2(i, k) * qg.at2(i, j);
                    for (std::size_t i = 0; i < qg.dim(0); ++i)
                        qg.at2(i, j) -= proj * qg.at2(i, k);
                }
                double nrm = 0.0;
                for (std::size_t i = 0; i < qg.dim(0); ++i) nrm += qg.at2(i, j) * qg.at2(i, j);
                nrm = std::sqrt(nrm);
                if (nrm < 1e-12) throw NumericalError("frozen: degenerate semantic latent map");
                for (std::size_t i = 0; i < qg.dim(0); ++i) qg.at2(i, j) /= nrm;
            }
            latent_sem_basis_ = std::move(qg);
        }

        // orthonormal basis of the low-resolution semantic directions, used
        // to draw structural residuals orthogonal to the semantic subspace
        const std::size_t low = dims_.latent_channels * dims_.latent_h * dims_.latent_w;
        Tensor g_low({low, dims_.code_dim});
        const std::size_t hw_f = dims_.latent_hf() * dims_.latent_wf();
        const std::size_t hw = dims_.latent_h * dims_.latent_w;
        for (std::size_t c = 0; c < dims_.latent_channels; ++c)
            for (std::size_t i = 0; i < dims_.latent_h; ++i)
                for (std::size_t j = 0; j < dims_.latent_w; ++j) {
                    const std::size_t low_idx = c * hw + i * dims_.latent_w + j;
                    for (std::size_t k = 0; k < dims_.code_dim; ++k) {
                        double mean = 0.0;  // block mean kills the fine part
                        for (std::size_t u = 0; u < dims_.upsample; ++u)
                            for (std::size_t v = 0; v < dims_.upsample; ++v) {
                                const std::size_t fi = i * dims_.upsample + u;
                                const std::size_t fj = j * dims_.upsample + v;
                                mean += g_.at2(c * hw_f + fi * dims_.latent_wf() + fj, k);
                            }
                        g_low.at2(low_idx, k) =
                            mean / static_cast<double>(dims_.upsample * dims_.upsample);
                    }
                }
        for (std::size_t j = 0; j < g_low.dim(1); ++j) {
            for (std::size_t k = 0; k < j; ++k) {
                double proj = 0.0;
                for (std::size_t i = 0; i < low; ++i) proj += g_low.at2(i, k) * g_low.at2(i, j);
                for (std::size_t i = 0; i < low; ++i) g_low.at2(i, j) -= proj * g_low.at2(i, k);
            }
            double nrm = 0.0;
            for (std::size_t i = 0; i < low; ++i) nrm += g_low.at2(i, j) * g_low.at2(i, j);
            nrm = std::sqrt(nrm);
            if (nrm < 1e-12) throw NumericalError("frozen: degenerate semantic latent subspace");
            for (std::size_t i = 0; i < low; ++i) g_low.at2(i, j) /= nrm;
        }
        residual_null_basis_ = std::move(g_low);

        pinv_txt_ = pinv_tall(txt_map_);
        // image tokens of a semantic image factor through decode(G code)
        Tensor m_img = matmul(img_map_eff_, matmul(dec_, g_));
        pinv_img_ = pinv_tall(m_img);
    }

    WorldDims dims_;
    double fine_fraction_ = 0.0;
    Tensor dec_;       // [image_len x latent_len], orthonormal columns
    Tensor g_;         // [latent_len x code_dim]
    Tensor txt_map_;   // [txt_tokens*token_dim x code_dim]
    Tensor img_map_;   // [img_tokens*token_dim x image_len]
    Tensor pos_txt_;   // [txt_tokens x token_dim]
    Tensor pos_img_;   // [img_tokens x token_dim]
    DenoiserParams denoiser_;
    Tensor img_sem_basis_;       // orthonormal basis of span(D G)
    Tensor latent_sem_basis_;    // orthonormal basis of range(G), full resolution
    Tensor img_map_eff_;         // img_map restricted to the semantic subspace
    Tensor residual_null_basis_; // low-res orthonormal basis of the semantic directions
    Tensor pinv_txt_;  // [code_dim x txt_tokens*token_dim]
    Tensor pinv_img_;  // [code_dim x img_tokens*token_dim]
};

// ---------------------------------------------------------------------------
// attention denoiser forward/backward
// ---------------------------------------------------------------------------

struct AttnDenoiserCtx {
    Tensor tokens;       // [T_lat x C] latent tokens
    Tensor x0, x1, x2;   // after proj_in, after time add, after attention
    Tensor kv;           // conditioning rows
    Tensor f1, f1s;      // ff hidden pre/post silu
    Tensor x3;           // after feed-forward residual
    AttnCtx attn;
};

// Latent grid -> spatial tokens (one row per spatial site, channels as features).
inline Tensor latent_to_tokens(const Tensor& z) {
    const std::size_t c = z.dim(0), hw = z.dim(1) * z.dim(2);
    Tensor t({hw, c});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) t.at2(i, ch) = z.data()[ch * hw + i];
    return t;
}

inline Tensor tokens_to_latent(const Tensor& t, const std::vector<std::size_t>& latent_dims) {
    const std::size_t c = latent_dims[0], hw = latent_dims[1] * latent_dims[2];
    Tensor z(latent_dims);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) z.data()[ch * hw + i] = t.at2(i, ch);
    return z;
}

inline Tensor concat_rows(const Tensor* a, const Tensor* b) {
    if (a == nullptr && b == nullptr) throw ConfigError("concat_rows: no conditioning rows");
    if (a == nullptr) return *b;
    if (b == nullptr) return *a;
    if (a->dim(1) != b->dim(1)) throw DimensionError("concat_rows: width mismatch");
    Tensor out({a->dim(0) + b->dim(0), a->dim(1)});
    std::copy(a->vec().begin(), a->vec().end(), out.vec().begin());
    std::copy(b->vec().begin(), b->vec().end(), out.vec().begin() + a->numel());
    return out;
}

// Conditioned noise prediction: latent tokens are projected to the model
// width, timestep-embedded, fused with the text/image token rows through
// cross attention, refined by a feed-forward block, and projected back.
inline Tensor attn_denoiser_forward(const Tensor& z_t, std::size_t t, const Tensor* e_txt,
                                    const Tensor* e_img, const DenoiserParams& p,
                                    AttnDenoiserCtx* ctx = nullptr) {
    AttnDenoiserCtx local;
    AttnDenoiserCtx& c = ctx ? *ctx : local;
    c.tokens = latent_to_tokens(z_t);
    c.x0 = linear_forward(c.tokens, p.proj_in.t("W"), p.proj_in.t("b"));
    Tensor temb({1, 16}, sinusoidal_embedding16(t).vec());
    Tensor tadd = matmul(temb, p.time_proj);  // [1 x width]
    c.x1 = c.x0;
    for (std::size_t i = 0; i < c.x1.dim(0); ++i)
        for (std::size_t j = 0; j < c.x1.dim(1); ++j) c.x1.at2(i, j) += tadd.at2(0, j);
    c.kv = concat_rows(e_txt, e_img);
    Tensor a = cross_attention_forward(c.x1, c.kv, p.attn, &c.attn);
    c.x2 = add(c.x1, a);
    c.f1 = linear_forward(c.x2, p.ff1.t("W"), p.ff1.t("b"));
    c.f1s = silu_forward(c.f1);
    Tensor f2 = linear_forward(c.f1s, p.ff2.t("W"), p.ff2.t("b"));
    c.x3 = add(c.x2, f2);
    Tensor out = linear_forward(c.x3, p.proj_out.t("W"), p.proj_out.t("b"));
    return tokens_to_latent(out, z_t.dims());
}

struct DenoiserGrads {
    Tensor proj_in_w, proj_in_b;
    Tensor time_proj;
    std::map<std::string, Tensor> attn;
    Tensor ff1_w, ff1_b, ff2_w, ff2_b;
    Tensor proj_out_w, proj_out_b;

    static DenoiserGrads zeros_like(const DenoiserParams& p) {
        DenoiserGrads g;
        g.proj_in_w = Tensor(p.proj_in.t("W").dims());
        g.proj_in_b = Tensor(p.proj_in.t("b").dims());
        g.time_proj = Tensor(p.time_proj.dims());
        for (const auto& [k, v] : p.attn.tensors) g.attn.emplace(k, Tensor(v.dims()));
        g.ff1_w = Tensor(p.ff1.t("W").dims());
        g.ff1_b = Tensor(p.ff1.t("b").dims());
        g.ff2_w = Tensor(p.ff2.t("W").dims());
        g.ff2_b = Tensor(p.ff2.t("b").dims());
        g.proj_out_w = Tensor(p.proj_out.t("W").dims());
        g.proj_out_b = Tensor(p.proj_out.t("b").dims());
        return g;
    }
};

inline void attn_denoiser_backward(const Tensor& z_t, std::size_t t, const DenoiserParams& p,
                                   const AttnDenoiserCtx& ctx, const Tensor& grad_out,
                                   Tensor* gz, DenoiserGrads* gp) {
    Tensor g_out_tokens = latent_to_tokens(grad_out);
    Tensor g_x3(ctx.x3.dims());
    linear_backward(ctx.x3, p.proj_out.t("W"), g_out_tokens, &g_x3,
                    gp ? &gp->proj_out_w : nullptr, gp ? &gp->proj_out_b : nullptr);
    // x3 = x2 + ff2(silu(ff1(x2)))
    Tensor g_f1s(ctx.f1s.dims());
    linear_backward(ctx.f1s, p.ff2.t("W"), g_x3, &g_f1s, gp ? &gp->ff2_w : nullptr,
                    gp ? &gp->ff2_b : nullptr);
    Tensor g_f1(ctx.f1.dims());
    silu_backward(ctx.f1, g_f1s, &g_f1);
    Tensor g_x2 = g_x3;  // residual branch
    linear_backward(ctx.x2, p.ff1.t("W"), g_f1, &g_x2, gp ? &gp->ff1_w : nullptr,
                    gp ? &gp->ff1_b : nullptr);
    // x2 = x1 + attn(x1, kv)
    Tensor g_x1 = g_x2;
    cross_attention_backward(ctx.x1, ctx.kv, p.attn, ctx.attn, g_x2, &g_x1, nullptr,
                             gp ? &gp->attn : nullptr);
    // x1 = x0 + temb * time_proj broadcast over rows
    if (gp) {
        Tensor temb = sinusoidal_embedding16(t);
        for (std::size_t j = 0; j < g_x1.dim(1); ++j) {
            double colsum = 0.0;
            for (std::size_t i = 0; i < g_x1.dim(0); ++i) colsum += g_x1.at2(i, j);
            for (std::size_t k = 0; k < 16; ++k) gp->time_proj.at2(k, j) += temb[k] * colsum;
        }
    }
    Tensor g_tokens(ctx.tokens.dims());
    linear_backward(ctx.tokens, p.proj_in.t("W"), g_x1, &g_tokens, gp ? &gp->proj_in_w : nullptr,
                    gp ? &gp->proj_in_b : nullptr);
    if (gz) axpy(1.0, tokens_to_latent(g_tokens, z_t.dims()), *gz);
}

}  // namespace neuroswift
