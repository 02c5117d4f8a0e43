#pragma once

#include <optional>
#include <string>
#include <vector>

#include "neuroswift/diffusion.hpp"
#include "neuroswift/manifests.hpp"
#include "neuroswift/training.hpp"

namespace neuroswift {

struct SubjectSpec {
    std::string id;
    std::size_t n_train = 600;
    std::size_t n_val = 100;
    std::vector<std::size_t> region_sizes;  // empty -> world baseline sizes
};

enum class MaskMode { subject, std_template };

inline const char* to_string(MaskMode m) {
    return m == MaskMode::subject ? "subject" : "std_template";
}

inline MaskMode mask_mode_from_string(const std::string& s) {
    if (s == "subject") return MaskMode::subject;
    if (s == "std_template") return MaskMode::std_template;
    throw ConfigError("unknown mask mode: " + s);
}

struct EvaluateConfig {
    std::vector<std::string> extractors = {"pixels", "random_projection", "frozen_clip_image"};
    std::size_t rp_dim = 256;
    std::uint64_t rp_seed = 555;
};

// Whole-run configuration; every field has a schema default so an empty
// JSON object is a valid config.
struct RunConfig {
    WorldConfig world;
    std::vector<SubjectSpec> subjects;
    TrainConfig train;
    MaskMode mask_mode = MaskMode::subject;
    TrainConfig finetune_train;
    double budget_fraction = 0.125;
    ReconstructionConfig reconstruct;
    // empty -> condition the oracle on a prior as wide as the world residual
    std::optional<double> oracle_prior_std_override;
    EvaluateConfig evaluate;
    std::string out_root = "neuroswift_out";

    RunConfig() {
        reconstruct.strength = 0.6;
        subjects.push_back({"subj01", 600, 100, {128, 64, 64, 64, 96, 48, 48}});
        subjects.push_back({"subj02", 600, 100, {112, 56, 56, 56, 84, 42, 42}});
        // structural voxels are noisier than semantic ones and the residual
        // carries most of the latent energy; this is what separates the
        // structural and semantic pathways in the ablation table
        world.residual_ratio = 2.0;
        world.n_shared = 150;
        for (const char* r : {"Early", "Midventral", "Midlateral", "Midparietal"}) {
            world.region_snr[r] = 2.0;
        }
        finetune_train.epochs = 20;
        reconstruct.ancestral_noise = false;  // deterministic reverse pass by default
    }

    const SubjectSpec& subject(const std::string& id) const {
        for (const auto& s : subjects)
            if (s.id == id) return s;
        throw ConfigError("subject '" + id + "' not present in config");
    }

    std::vector<std::size_t> region_sizes_for(const SubjectSpec& s) const {
        return s.region_sizes.empty() ? world.baseline_region_sizes : s.region_sizes;
    }

    double resolved_oracle_prior_std() const {
        return oracle_prior_std_override.value_or(world.residual_ratio);
    }

    ReconstructionConfig resolved_reconstruct() const {
        ReconstructionConfig r = reconstruct;
        r.oracle_prior_std = resolved_oracle_prior_std();
        return r;
    }

    void validate() const {
        world.validate();
        train.validate();
        finetune_train.validate();
        reconstruct.validate();
        if (subjects.empty()) throw ConfigError("config: at least one subject required");
        for (const auto& s : subjects) {
            if (s.id.empty()) throw ConfigError("config: subject id must be nonempty");
            if (!s.region_sizes.empty() && s.region_sizes.size() != region_vocabulary().size()) {
                throw ConfigError("config: subject " + s.id + " needs 7 region sizes");
            }
        }
        if (!(budget_fraction > 0.0) || budget_fraction > 1.0) {
            throw ConfigError("config: budget_fraction must be in (0,1]");
        }
        for (const auto& e : evaluate.extractors) {
            if (e != "pixels" && e != "random_projection" && e != "frozen_clip_image") {
                throw ConfigError("config: unknown extractor '" + e + "'");
            }
        }
        if (evaluate.rp_dim < 1) throw ConfigError("config: rp_dim must be >= 1");
    }
};

inline TrainConfig train_config_from_json(const json& j, const std::string& path,
                                          TrainConfig base) {
    StrictObj o(j, path);
    base.epochs = o.get_or<std::size_t>("epochs", base.epochs);
    base.batch_size = o.get_or<std::size_t>("batch_size", base.batch_size);
    base.learning_rate = o.get_or<double>("learning_rate", base.learning_rate);
    base.beta1 = o.get_or<double>("beta1", base.beta1);
    base.beta2 = o.get_or<double>("beta2", base.beta2);
    base.adam_eps = o.get_or<double>("adam_eps", base.adam_eps);
    base.temp = o.get_or<double>("temp", base.temp);
    base.normalize_embeddings = o.get_or<bool>("normalize_embeddings", base.normalize_embeddings);
    base.dropout_p = o.get_or<double>("dropout", base.dropout_p);
    base.seed = o.get_or<std::uint64_t>("seed", base.seed);
    base.hidden = o.get_or<std::size_t>("hidden", base.hidden);
    base.n_blocks = o.get_or<std::size_t>("n_blocks", base.n_blocks);
    base.gn_groups = o.get_or<std::size_t>("gn_groups", base.gn_groups);
    o.done();
    return base;
}

inline json train_config_to_json(const TrainConfig& t) {
    return {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"adam_eps", t.adam_eps},
            {"temp", t.temp},
            {"normalize_embeddings", t.normalize_embeddings},
            {"dropout", t.dropout_p},
            {"seed", t.seed},
            {"hidden", t.hidden},
            {"n_blocks", t.n_blocks},
            {"gn_groups", t.gn_groups}};
}

inline RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    StrictObj o(j, "config");
    if (const json* wj = o.maybe("world")) {
        c.world = world_config_from_json(*wj, "config.world", c.world);
    }
    if (const json* sj = o.maybe("subjects")) {
        if (!sj->is_array() || sj->empty()) {
            throw ConfigError("config.subjects: expected a nonempty array");
        }
        c.subjects.clear();
        for (const auto& s : *sj) {
            StrictObj so(s, "config.subjects[]");
            SubjectSpec spec;
            spec.id = so.get_or<std::string>("id", "");
            spec.n_train = so.get_or<std::size_t>("n_train", spec.n_train);
            spec.n_val = so.get_or<std::size_t>("n_val", spec.n_val);
            spec.region_sizes = so.get_or<std::vector<std::size_t>>("region_sizes", {});
            so.done();
            c.subjects.push_back(std::move(spec));
        }
    }
    if (const json* tj = o.maybe("train")) {
        c.train = train_config_from_json(*tj, "config.train", c.train);
    }
    c.mask_mode = mask_mode_from_string(o.get_or<std::string>("mask_mode", "subject"));
    if (const json* fj = o.maybe("finetune")) {
        json rest = *fj;
        if (rest.is_object() && rest.contains("budget_fraction")) {
            c.budget_fraction = rest.at("budget_fraction").get<double>();
            rest.erase("budget_fraction");
        }
        c.finetune_train = train_config_from_json(rest, "config.finetune", c.finetune_train);
    }
    if (const json* rj = o.maybe("reconstruct")) {
        StrictObj ro(*rj, "config.reconstruct");
        c.reconstruct.strength = ro.get_or<double>("s", c.reconstruct.strength);
        c.reconstruct.steps = ro.get_or<std::size_t>("steps", c.reconstruct.steps);
        c.reconstruct.beta_start = ro.get_or<double>("beta_start", c.reconstruct.beta_start);
        c.reconstruct.beta_end = ro.get_or<double>("beta_end", c.reconstruct.beta_end);
        c.reconstruct.mode = conditioning_mode_from_string(
            ro.get_or<std::string>("mode", to_string(c.reconstruct.mode)));
        c.reconstruct.denoiser =
            denoiser_from_string(ro.get_or<std::string>("denoiser", to_string(c.reconstruct.denoiser)));
        c.reconstruct.seed = ro.get_or<std::uint64_t>("seed", c.reconstruct.seed);
        c.reconstruct.ancestral_noise =
            ro.get_or<bool>("ancestral_noise", c.reconstruct.ancestral_noise);
        c.reconstruct.noise_cutoff = ro.get_or<std::size_t>("noise_cutoff", c.reconstruct.noise_cutoff);
        c.reconstruct.guidance_text = ro.get_or<double>("guidance_text", c.reconstruct.guidance_text);
        c.reconstruct.guidance_image =
            ro.get_or<double>("guidance_image", c.reconstruct.guidance_image);
        if (const json* op = ro.maybe("oracle_prior_std")) {
            c.oracle_prior_std_override = op->get<double>();
        }
        ro.done();
    }
    if (const json* ej = o.maybe("evaluate")) {
        StrictObj eo(*ej, "config.evaluate");
        c.evaluate.extractors =
            eo.get_or<std::vector<std::string>>("extractors", c.evaluate.extractors);
        c.evaluate.rp_dim = eo.get_or<std::size_t>("rp_dim", c.evaluate.rp_dim);
        c.evaluate.rp_seed = eo.get_or<std::uint64_t>("rp_seed", c.evaluate.rp_seed);
        eo.done();
    }
    if (const json* pj = o.maybe("paths")) {
        StrictObj po(*pj, "config.paths");
        c.out_root = po.get_or<std::string>("root", c.out_root);
        po.done();
    }
    o.done();
    c.validate();
    return c;
}

inline json run_config_to_json(const RunConfig& c) {
    json subjects = json::array();
    for (const auto& s : c.subjects) {
        subjects.push_back({{"id", s.id},
                            {"n_train", s.n_train},
                            {"n_val", s.n_val},
                            {"region_sizes", s.region_sizes}});
    }
    json finetune = train_config_to_json(c.finetune_train);
    finetune["budget_fraction"] = c.budget_fraction;
    json reconstruct = {{"s", c.reconstruct.strength},
                        {"steps", c.reconstruct.steps},
                        {"beta_start", c.reconstruct.beta_start},
                        {"beta_end", c.reconstruct.beta_end},
                        {"mode", to_string(c.reconstruct.mode)},
                        {"denoiser", to_string(c.reconstruct.denoiser)},
                        {"seed", c.reconstruct.seed},
                        {"ancestral_noise", c.reconstruct.ancestral_noise},
                        {"noise_cutoff", c.reconstruct.noise_cutoff},
                        {"guidance_text", c.reconstruct.guidance_text},
                        {"guidance_image", c.reconstruct.guidance_image}};
    if (c.oracle_prior_std_override) {
        reconstruct["oracle_prior_std"] = *c.oracle_prior_std_override;
    }
    return {{"world", world_config_to_json(c.world)},
            {"subjects", subjects},
            {"train", train_config_to_json(c.train)},
            {"mask_mode", to_string(c.mask_mode)},
            {"finetune", finetune},
            {"reconstruct", reconstruct},
            {"evaluate",
             {{"extractors", c.evaluate.extractors},
              {"rp_dim", c.evaluate.rp_dim},
              {"rp_seed", c.evaluate.rp_seed}}},
            {"paths", {{"root", c.out_root}}}};
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    return run_config_from_json(load_json_file(path));
}

}  // namespace neuroswift
