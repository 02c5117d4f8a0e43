#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "neuroswift/frozen.hpp"
#include "neuroswift/roi.hpp"

namespace neuroswift {

struct WorldConfig {
    std::uint64_t seed = 1234;
    WorldDims dims;
    // per-region signal-to-noise; <= 0 means noiseless
    std::map<std::string, double> region_snr;
    // 1 = voxels read the structural latent, 0 = voxels read the semantic code
    std::map<std::string, double> region_structural_weight;
    double residual_ratio = 1.0;  // std of the structural residual r
    // share of semantic latent energy at the fine spatial scale, beyond the
    // reach of the upsampled structural prediction
    double semantic_fine_fraction = 0.85;
    double semantic_noise = 0.05;  // perturbation of generated semantic images
    std::size_t n_shared = 100;
    std::vector<std::size_t> baseline_region_sizes = {128, 64, 64, 64, 96, 48, 48};
    double template_shrink = 0.2;
    double template_boundary_fraction = 0.3;

    double snr_for(const std::string& region) const {
        auto it = region_snr.find(region);
        return it == region_snr.end() ? 4.0 : it->second;
    }
    double structural_weight_for(const std::string& region) const {
        auto it = region_structural_weight.find(region);
        if (it != region_structural_weight.end()) return it->second;
        return is_structural_region(region) ? 1.0 : 0.0;
    }
    void validate() const {
        dims.validate();
        if (n_shared < 1) throw ConfigError("world: n_shared must be >= 1");
        if (baseline_region_sizes.size() != region_vocabulary().size()) {
            throw ConfigError("world: expected 7 baseline region sizes");
        }
        if (residual_ratio < 0.0) throw ConfigError("world: residual_ratio must be >= 0");
        if (semantic_fine_fraction < 0.0 || semantic_fine_fraction >= 1.0) {
            throw ConfigError("world: semantic_fine_fraction must be in [0,1)");
        }
        if (semantic_noise < 0.0) throw ConfigError("world: semantic_noise must be >= 0");
        for (const auto& [name, w] : region_structural_weight) {
            if (w < 0.0 || w > 1.0) {
                throw ConfigError("world: structural weight for " + name + " must be in [0,1]");
            }
        }
    }
};

struct World {
    WorldConfig config;
    FrozenWorldComponents frozen;
    Tensor shared_codes;  // [n_shared x code_dim]
    Tensor shared_resid;  // [n_shared x latent_len], unit-scale draws
    std::vector<std::int64_t> shared_ids;
    std::uint64_t hash = 0;
};

namespace detail {

inline std::uint64_t fnv1a_bytes(std::uint64_t h, const std::string& bytes) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a_tensor(std::uint64_t h, const Tensor& t) {
    return fnv1a_bytes(h, nstf::encode(t));
}

}  // namespace detail

inline std::uint64_t compute_world_hash(const World& w) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const FrozenWorldComponents& f = w.frozen;
    for (const Tensor* t :
         {&f.decoder_matrix(), &f.semantic_latent_map(), &f.text_map(), &f.image_map(),
          &f.text_positional(), &f.image_positional(), &f.denoiser().time_proj,
          &f.denoiser().proj_in.t("W"), &f.denoiser().proj_in.t("b"),
          &f.denoiser().attn.t("Wq"), &f.denoiser().attn.t("Wk"), &f.denoiser().attn.t("Wv"),
          &f.denoiser().attn.t("Wo"), &f.denoiser().ff1.t("W"), &f.denoiser().ff1.t("b"),
          &f.denoiser().ff2.t("W"), &f.denoiser().ff2.t("b"), &f.denoiser().proj_out.t("W"),
          &f.denoiser().proj_out.t("b"), &w.shared_codes, &w.shared_resid}) {
        h = detail::fnv1a_tensor(h, *t);
    }
    return h;
}

inline World generate_world(const WorldConfig& config) {
    config.validate();
    World w;
    w.config = config;
    RngStream root(config.seed, hash_name("world"));
    w.frozen = FrozenWorldComponents(config.dims, root, config.semantic_fine_fraction);
    RngStream shared = root.substream("shared_stimuli");
    w.shared_codes = normal_draw(shared, {config.n_shared, config.dims.code_dim});
    w.shared_resid = Tensor({config.n_shared, config.dims.latent_len()});
    for (std::size_t i = 0; i < config.n_shared; ++i) {
        Tensor full = w.frozen.sample_structural_residual(shared);
        for (std::size_t k = 0; k < full.numel(); ++k) w.shared_resid.at2(i, k) = full[k];
    }
    w.shared_ids.resize(config.n_shared);
    for (std::size_t i = 0; i < config.n_shared; ++i) w.shared_ids[i] = static_cast<std::int64_t>(i);
    w.hash = compute_world_hash(w);
    return w;
}

enum class Split { train, val, shared_test };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::shared_test: return "shared_test";
    }
    return "?";
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "shared_test") return Split::shared_test;
    throw ConfigError("unknown split tag: " + s);
}

struct SubjectDataset {
    std::string subject_id;
    Tensor voxels;  // [trials x total_voxels]
    std::vector<std::int64_t> stimulus_ids;
    std::vector<Split> split;
    Tensor codes;   // [trials x code_dim], the caption analog of each trial
    Tensor zgt;     // [trials x latent_len]
    std::uint64_t world_hash = 0;

    std::size_t n_trials() const { return split.size(); }

    std::vector<std::size_t> indices_of(Split s) const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < split.size(); ++i)
            if (split[i] == s) idx.push_back(i);
        return idx;
    }

    Tensor row_latent(std::size_t trial, const WorldDims& dims) const {
        Tensor z(dims.latent_dims());
        for (std::size_t k = 0; k < z.numel(); ++k) z[k] = zgt.at2(trial, k);
        return z;
    }
    Tensor row_code(std::size_t trial) const {
        Tensor c({codes.dim(1)});
        for (std::size_t k = 0; k < c.numel(); ++k) c[k] = codes.at2(trial, k);
        return c;
    }
};

// Synthesizes one subject: a seeded region partition, per-subject voxel
// encoding maps, and train/val/shared trials. Shared trials reuse the world
// stimulus list, so every subject of a world sees the same shared test set.
inline std::pair<SubjectDataset, RoiMask> generate_subject(
    const World& world, const std::string& subject_id, std::size_t n_train, std::size_t n_val,
    std::size_t n_shared, const std::vector<std::size_t>& region_sizes, RngStream rng) {
    if (n_shared != world.config.n_shared) {
        throw ConfigError("generate_subject: n_shared " + std::to_string(n_shared) +
                          " != world shared list size " + std::to_string(world.config.n_shared));
    }
    const WorldDims& dims = world.config.dims;
    const std::size_t latent = dims.latent_len();
    const std::size_t code_dim = dims.code_dim;

    RoiMask mask = make_subject_mask(subject_id, region_sizes, rng.substream("mask"));
    const std::size_t total = mask.total_voxels;

    // region label per voxel column
    std::vector<const std::string*> region_of(total, nullptr);
    for (const auto& [name, idx] : mask.regions)
        for (std::size_t v : idx) region_of[v] = &name;

    // per-voxel encoding rows, pre-scaled by the structural mixture weight
    const double var_z = 1.0 + world.config.residual_ratio * world.config.residual_ratio;
    RngStream rng_a = rng.substream("structural_map");
    RngStream rng_b = rng.substream("semantic_map");
    Tensor a_map({latent, total});  // voxels = zgt * a_map + codes * b_map + noise
    Tensor b_map({code_dim, total});
    std::vector<double> inv_snr(total, 0.0);
    for (std::size_t j = 0; j < total; ++j) {
        const std::string& region = *region_of[j];
        const double lam = world.config.structural_weight_for(region);
        const double a_scale = lam / std::sqrt(static_cast<double>(latent) * var_z);
        const double b_scale = (1.0 - lam) / std::sqrt(static_cast<double>(code_dim));
        for (std::size_t k = 0; k < latent; ++k) a_map.at2(k, j) = a_scale * rng_a.next_normal();
        for (std::size_t k = 0; k < code_dim; ++k) b_map.at2(k, j) = b_scale * rng_b.next_normal();
        const double snr = world.config.snr_for(region);
        inv_snr[j] = snr > 0.0 ? 1.0 / snr : 0.0;
    }

    const std::size_t n_total = n_shared + n_train + n_val;
    SubjectDataset ds;
    ds.subject_id = subject_id;
    ds.world_hash = world.hash;
    ds.codes = Tensor({n_total, code_dim});
    ds.zgt = Tensor({n_total, latent});
    ds.stimulus_ids.resize(n_total);
    ds.split.resize(n_total);

    RngStream rng_stim = rng.substream("subject_stimuli");
    const std::int64_t id_base =
        1000000 + static_cast<std::int64_t>(hash_name(subject_id) % 4096) * 10000;
    for (std::size_t i = 0; i < n_total; ++i) {
        if (i < n_shared) {
            ds.split[i] = Split::shared_test;
            ds.stimulus_ids[i] = world.shared_ids[i];
            for (std::size_t k = 0; k < code_dim; ++k)
                ds.codes.at2(i, k) = world.shared_codes.at2(i, k);
            for (std::size_t k = 0; k < latent; ++k)
                ds.zgt.at2(i, k) = world.shared_resid.at2(i, k);  // residual; combined below
        } else {
            ds.split[i] = i < n_shared + n_train ? Split::train : Split::val;
            ds.stimulus_ids[i] = id_base + static_cast<std::int64_t>(i - n_shared);
            for (std::size_t k = 0; k < code_dim; ++k) ds.codes.at2(i, k) = rng_stim.next_normal();
            Tensor resid = world.frozen.sample_structural_residual(rng_stim);
            for (std::size_t k = 0; k < latent; ++k) ds.zgt.at2(i, k) = resid[k];
        }
    }
    // z_gt = G c + residual_ratio * r  (zgt currently holds the raw residual draw)
    {
        Tensor gc = matmul_nt(ds.codes, world.frozen.semantic_latent_map());  // [n x latent]
        for (std::size_t i = 0; i < n_total; ++i)
            for (std::size_t k = 0; k < latent; ++k)
                ds.zgt.at2(i, k) = gc.at2(i, k) + world.config.residual_ratio * ds.zgt.at2(i, k);
    }

    ds.voxels = matmul(ds.zgt, a_map);
    axpy(1.0, matmul(ds.codes, b_map), ds.voxels);
    // noise calibrated to each voxel's realized signal variance, so the
    // configured region SNR holds per voxel regardless of latent covariance
    std::vector<double> noise_std(total, 0.0);
    for (std::size_t j = 0; j < total; ++j) {
        if (inv_snr[j] == 0.0) continue;
        double mean = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < n_total; ++i) {
            mean += ds.voxels.at2(i, j);
            m2 += ds.voxels.at2(i, j) * ds.voxels.at2(i, j);
        }
        mean /= static_cast<double>(n_total);
        const double var = m2 / static_cast<double>(n_total) - mean * mean;
        noise_std[j] = std::sqrt(std::max(var, 0.0)) * inv_snr[j];
    }
    RngStream rng_noise = rng.substream("measurement_noise");
    for (std::size_t i = 0; i < n_total; ++i)
        for (std::size_t j = 0; j < total; ++j)
            if (noise_std[j] > 0.0) ds.voxels.at2(i, j) += noise_std[j] * rng_noise.next_normal();

    return {std::move(ds), std::move(mask)};
}

// Stimulus image of a trial; decode is exact, so this is also the ground
// truth the frozen encoder maps back to zgt.
inline Tensor stimulus_image(const World& world, const SubjectDataset& ds, std::size_t trial) {
    return world.frozen.autokl_decode(ds.row_latent(trial, world.config.dims));
}

}  // namespace neuroswift
