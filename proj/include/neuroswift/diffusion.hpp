#pragma once

#include <cstdint>
#include <string>

#include "neuroswift/frozen.hpp"
#include "neuroswift/schedule.hpp"

namespace neuroswift {

enum class ConditioningMode { full, only_z, no_text, no_image, no_z };
enum class DenoiserChoice { oracle, attn };

inline const char* to_string(ConditioningMode m) {
    switch (m) {
        case ConditioningMode::full: return "full";
        case ConditioningMode::only_z: return "only_z";
        case ConditioningMode::no_text: return "no_text";
        case ConditioningMode::no_image: return "no_image";
        case ConditioningMode::no_z: return "no_z";
    }
    return "?";
}

inline ConditioningMode conditioning_mode_from_string(const std::string& s) {
    if (s == "full") return ConditioningMode::full;
    if (s == "only_z") return ConditioningMode::only_z;
    if (s == "no_text") return ConditioningMode::no_text;
    if (s == "no_image") return ConditioningMode::no_image;
    if (s == "no_z") return ConditioningMode::no_z;
    throw ConfigError("unknown conditioning mode: " + s);
}

inline const char* to_string(DenoiserChoice d) {
    return d == DenoiserChoice::oracle ? "oracle" : "attn";
}

inline DenoiserChoice denoiser_from_string(const std::string& s) {
    if (s == "oracle") return DenoiserChoice::oracle;
    if (s == "attn") return DenoiserChoice::attn;
    throw ConfigError("unknown denoiser: " + s);
}

struct ReconstructionConfig {
    double strength = 0.75;  // structural strength s in (0,1]
    std::size_t steps = 50;
    double beta_start = 0.004;
    double beta_end = 0.36;
    ConditioningMode mode = ConditioningMode::full;
    DenoiserChoice denoiser = DenoiserChoice::oracle;
    std::uint64_t seed = 99;
    bool ancestral_noise = true;
    std::size_t noise_cutoff = 1;  // suppress the stochastic term for t <= cutoff
    double guidance_text = 0.5;
    double guidance_image = 0.5;
    // width of the latent prior the oracle conditions on; 0 is the exact
    // point mass, a positive value preserves structural residue through the
    // reverse pass
    double oracle_prior_std = 0.0;

    void validate() const {
        if (!(strength > 0.0) || strength > 1.0) {
            throw ConfigError("reconstruct: strength must be in (0,1]");
        }
        if (steps < 1) throw ConfigError("reconstruct: steps must be >= 1");
        if (guidance_text < 0.0 || guidance_image < 0.0 ||
            (guidance_text == 0.0 && guidance_image == 0.0)) {
            throw ConfigError("reconstruct: guidance weights must be nonnegative, not both zero");
        }
        if (oracle_prior_std < 0.0) {
            throw ConfigError("reconstruct: oracle_prior_std must be >= 0");
        }
    }
};

struct ReconstructionResult {
    Tensor z_final;
    Tensor image;
};

// Full reconstruction path: structural-strength noising of z_pred, conditioned
// ancestral denoising from tau down to 1, then the frozen decode. Conditioning
// modes drop text/image tokens or the structural prior per the ablation names.
// The oracle denoiser needs a semantic code: the caller either supplies one or
// it is recovered from the conditioning embeddings via the frozen token maps,
// blended by the guidance weights.
inline ReconstructionResult reconstruct(const Tensor& z_pred, const Tensor* e_txt,
                                        const Tensor* e_img, const ReconstructionConfig& cfg,
                                        const NoiseSchedule& schedule,
                                        const FrozenWorldComponents& frozen, RngStream rng,
                                        const Tensor* code = nullptr) {
    cfg.validate();
    if (z_pred.dims() != frozen.dims().latent_dims()) {
        throw DimensionError("reconstruct: z_pred dims " + z_pred.dims_str());
    }
    if (schedule.n != cfg.steps) throw ConfigError("reconstruct: schedule length != cfg.steps");

    ReconstructionResult out;
    if (cfg.mode == ConditioningMode::only_z) {
        // structural path only: no noising, no guidance loop
        out.z_final = z_pred;
        out.image = frozen.autokl_decode(out.z_final);
        return out;
    }

    const bool use_txt = cfg.mode != ConditioningMode::no_text;
    const bool use_img = cfg.mode != ConditioningMode::no_image;
    const Tensor* txt = use_txt ? e_txt : nullptr;
    const Tensor* img = use_img ? e_img : nullptr;

    Tensor oracle_code;
    if (cfg.denoiser == DenoiserChoice::oracle) {
        if (code != nullptr) {
            oracle_code = *code;
        } else {
            const double w_txt = use_txt ? cfg.guidance_text : 0.0;
            const double w_img = use_img ? cfg.guidance_image : 0.0;
            if ((w_txt > 0.0 && txt == nullptr) || (w_img > 0.0 && img == nullptr) ||
                (w_txt == 0.0 && w_img == 0.0)) {
                throw ConfigError(
                    "reconstruct: oracle denoiser requires a semantic code or conditioning "
                    "embeddings to recover one");
            }
            oracle_code = frozen.estimate_code(txt, img, w_txt, w_img);
        }
    } else {
        if (txt == nullptr && img == nullptr) {
            throw ConfigError("reconstruct: attn denoiser requires conditioning tokens");
        }
    }

    const std::size_t tau = initial_step(cfg.steps, cfg.strength);
    Tensor z = cfg.mode == ConditioningMode::no_z ? normal_draw(rng, z_pred.dims())
                                                  : add_noise(z_pred, tau, schedule, rng);
    for (std::size_t t = tau; t >= 1; --t) {
        Tensor eps_hat =
            cfg.denoiser == DenoiserChoice::oracle
                ? frozen.gaussian_oracle_denoiser(z, t, oracle_code, schedule,
                                                  cfg.oracle_prior_std)
                : attn_denoiser_forward(z, t, txt, img, frozen.denoiser());
        const bool add = cfg.ancestral_noise && t > cfg.noise_cutoff && t > 1;
        z = denoise_step(z, t, eps_hat, schedule, rng, add);
    }
    if (!z.all_finite()) throw NumericalError("reconstruct: non-finite latent");
    out.z_final = std::move(z);
    out.image = frozen.autokl_decode(out.z_final);
    return out;
}

}  // namespace neuroswift
