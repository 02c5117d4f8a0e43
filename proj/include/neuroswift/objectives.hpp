#pragma once

#include <cmath>
#include <map>
#include <string>

#include "neuroswift/layers.hpp"

namespace neuroswift {

struct LossValue {
    double scalar = 0.0;
    std::map<std::string, double> breakdown;

    void check_finite(const char* what) const {
        if (!std::isfinite(scalar)) throw NumericalError(std::string(what) + ": non-finite loss");
    }
};

// Mean over every element (batch included) of the squared difference, so the
// magnitude is dimension-independent; the raw sum is kept in the breakdown.
inline LossValue mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad_pred = nullptr) {
    require_same_dims(pred, target, "mse_loss");
    const double n = static_cast<double>(pred.numel());
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = pred[i] - target[i];
        sum += d * d;
        if (grad_pred) (*grad_pred)[i] += 2.0 * d / n;
    }
    LossValue out;
    out.scalar = sum / n;
    out.breakdown["mse"] = out.scalar;
    out.breakdown["mse_raw_sum"] = sum;
    out.check_finite("mse_loss");
    return out;
}

namespace detail {

inline Tensor l2_normalize_rows(const Tensor& m, std::vector<double>* norms) {
    Tensor out = m;
    if (norms) norms->resize(m.dim(0));
    for (std::size_t i = 0; i < m.dim(0); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.dim(1); ++j) s += m.at2(i, j) * m.at2(i, j);
        const double nrm = std::sqrt(s);
        if (nrm <= 0.0) throw NumericalError("softclip_loss: zero-norm embedding row");
        if (norms) (*norms)[i] = nrm;
        for (std::size_t j = 0; j < m.dim(1); ++j) out.at2(i, j) /= nrm;
    }
    return out;
}

// row-wise log-softmax, numerically stable
inline Tensor log_softmax_rows(const Tensor& m) {
    Tensor out = m;
    for (std::size_t i = 0; i < m.dim(0); ++i) {
        double mx = m.at2(i, 0);
        for (std::size_t j = 1; j < m.dim(1); ++j) mx = std::max(mx, m.at2(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < m.dim(1); ++j) sum += std::exp(m.at2(i, j) - mx);
        const double lse = mx + std::log(sum);
        for (std::size_t j = 0; j < m.dim(1); ++j) out.at2(i, j) = m.at2(i, j) - lse;
    }
    return out;
}

}  // namespace detail

struct SoftClipOptions {
    double temp = 0.1;
    bool normalize_rows = true;  // treat dot products as cosine similarities
};

// Soft-label contrastive loss over a batch of embedding rows:
//   soft = row_softmax(t t^T / temp)
//   loss = -sum_ij soft[i,j] * log row_softmax(p t^T / temp)[i,j]
// Summed, not averaged, over the batch. Gradient is w.r.t. p and flows
// through the row normalization when it is enabled.
inline LossValue softclip_loss(const Tensor& p, const Tensor& t, const SoftClipOptions& opt,
                               Tensor* grad_p = nullptr) {
    if (p.ndim() != 2 || t.ndim() != 2) throw DimensionError("softclip_loss: expected [N x E]");
    require_same_dims(p, t, "softclip_loss");
    if (!(opt.temp > 0.0)) throw ConfigError("softclip_loss: temperature must be > 0");
    const std::size_t n = p.dim(0);

    std::vector<double> p_norms;
    Tensor pn = opt.normalize_rows ? detail::l2_normalize_rows(p, &p_norms) : p;
    Tensor tn = opt.normalize_rows ? detail::l2_normalize_rows(t, nullptr) : t;

    Tensor target_logits = matmul_nt(tn, tn);
    for (std::size_t i = 0; i < target_logits.numel(); ++i) target_logits[i] /= opt.temp;
    Tensor soft = target_logits;
    softmax_rows(soft);

    Tensor pred_logits = matmul_nt(pn, tn);
    for (std::size_t i = 0; i < pred_logits.numel(); ++i) pred_logits[i] /= opt.temp;
    Tensor logp = detail::log_softmax_rows(pred_logits);

    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) loss -= soft.at2(i, j) * logp.at2(i, j);

    if (grad_p) {
        // dL/dlogits = row_softmax(pred_logits) - soft
        Tensor probs = pred_logits;
        softmax_rows(probs);
        Tensor g_logits = sub(probs, soft);
        // dL/dpn = g_logits tn / temp
        Tensor g_pn = matmul(g_logits, tn);
        for (std::size_t i = 0; i < g_pn.numel(); ++i) g_pn[i] /= opt.temp;
        if (!opt.normalize_rows) {
            axpy(1.0, g_pn, *grad_p);
        } else {
            // through row normalization: g = (g_pn - pn (pn . g_pn)) / |p_i|
            for (std::size_t i = 0; i < n; ++i) {
                double d = 0.0;
                for (std::size_t j = 0; j < p.dim(1); ++j) d += pn.at2(i, j) * g_pn.at2(i, j);
                for (std::size_t j = 0; j < p.dim(1); ++j) {
                    (*grad_p).at2(i, j) += (g_pn.at2(i, j) - pn.at2(i, j) * d) / p_norms[i];
                }
            }
        }
    }

    LossValue out;
    out.scalar = loss;
    out.breakdown["softclip"] = loss;
    out.check_finite("softclip_loss");
    return out;
}

// Combined per-modality objective: SoftCLIP + MSE on the flattened token
// embeddings of a batch, both terms weighted 1:1.
inline LossValue clip_modality_loss(const Tensor& pred_flat, const Tensor& target_flat,
                                    const SoftClipOptions& opt, Tensor* grad_pred = nullptr) {
    LossValue sc = softclip_loss(pred_flat, target_flat, opt, grad_pred);
    LossValue ms = mse_loss(pred_flat, target_flat, grad_pred);
    LossValue out;
    out.scalar = sc.scalar + ms.scalar;
    out.breakdown["softclip"] = sc.scalar;
    out.breakdown["mse"] = ms.scalar;
    out.check_finite("clip_modality_loss");
    return out;
}

inline LossValue clip_image_loss(const Tensor& e_img_pred, const Tensor& e_img_clip,
                                 const SoftClipOptions& opt, Tensor* grad_pred = nullptr) {
    return clip_modality_loss(e_img_pred, e_img_clip, opt, grad_pred);
}

inline LossValue clip_text_loss(const Tensor& e_txt_pred, const Tensor& e_txt_clip,
                                const SoftClipOptions& opt, Tensor* grad_pred = nullptr) {
    return clip_modality_loss(e_txt_pred, e_txt_clip, opt, grad_pred);
}

}  // namespace neuroswift
