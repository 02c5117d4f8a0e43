// neuroswift: synthetic fMRI-to-image reconstruction workbench.
// Subcommands cover world generation, subject synthesis, adapter training,
// cross-subject fine-tuning, guided reconstruction, evaluation, weight maps,
// and the end-to-end pipeline.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "neuroswift/config.hpp"
#include "neuroswift/evaluation.hpp"
#include "neuroswift/parallel.hpp"
#include "neuroswift/ppm.hpp"
#include "neuroswift/report.hpp"

namespace fs = std::filesystem;
using namespace neuroswift;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitCompat = 4;

RunConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return load_run_config(path);
}

void write_config_echo(const fs::path& dir, const RunConfig& cfg) {
    fs::create_directories(dir);
    save_json_file(dir / "config_echo.json", run_config_to_json(cfg));
}

fs::path world_dir(const RunConfig& cfg) { return fs::path(cfg.out_root) / "world"; }
fs::path subject_dir(const RunConfig& cfg, const std::string& id) {
    return fs::path(cfg.out_root) / "subjects" / id;
}
fs::path checkpoint_dir(const RunConfig& cfg, const std::string& id) {
    return fs::path(cfg.out_root) / "checkpoints" / id;
}
fs::path recon_dir(const RunConfig& cfg, const std::string& id, const std::string& mode) {
    return fs::path(cfg.out_root) / "recon" / id / mode;
}
fs::path eval_dir(const RunConfig& cfg, const std::string& id, const std::string& mode) {
    return fs::path(cfg.out_root) / "eval" / id / mode;
}
fs::path weights_dir(const RunConfig& cfg, const std::string& id) {
    return fs::path(cfg.out_root) / "weights" / id;
}

RngStream subject_stream(const World& world, const std::string& id) {
    return RngStream(world.config.seed, hash_name("subject:" + id));
}

RoiMask template_mask(const World& world) {
    return make_std_template_mask(world.config.baseline_region_sizes,
                                  world.config.template_shrink,
                                  world.config.template_boundary_fraction,
                                  RngStream(world.config.seed, hash_name("std_template")));
}

RoiMask mask_for_mode(const RunConfig& cfg, const World& world, const RoiMask& subject_mask) {
    return cfg.mask_mode == MaskMode::subject ? subject_mask : template_mask(world);
}

RoiMask mask_for_checkpoint(const Checkpoint& ck, const World& world,
                            const RoiMask& subject_mask) {
    return ck.mask_mode == "subject" ? subject_mask : template_mask(world);
}

std::pair<SubjectDataset, RoiMask> load_subject_checked(const RunConfig& cfg, const World& world,
                                                        const std::string& id) {
    const fs::path dir = subject_dir(cfg, id);
    if (!fs::exists(dir / "dataset.json")) {
        throw IoError("subject dataset not found at " + dir.string() + " (run synth first)");
    }
    auto pair = load_subject(dir);
    if (pair.first.world_hash != world.hash) {
        throw CompatibilityError("subject " + id + " was synthesized for a different world");
    }
    return pair;
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_world(const RunConfig& cfg, const std::string& out_override) {
    World world = generate_world(cfg.world);
    const fs::path dir = out_override.empty() ? world_dir(cfg) : fs::path(out_override);
    save_world(dir, world);
    write_config_echo(dir, cfg);
    std::printf("world %016llx written to %s\n", static_cast<unsigned long long>(world.hash),
                dir.string().c_str());
    return kExitOk;
}

int cmd_synth(const RunConfig& cfg, const std::string& subject_id,
              const std::string& out_override) {
    const SubjectSpec& spec = cfg.subject(subject_id);
    World world = generate_world(cfg.world);
    auto [ds, mask] =
        generate_subject(world, spec.id, spec.n_train, spec.n_val, world.config.n_shared,
                         cfg.region_sizes_for(spec), subject_stream(world, spec.id));
    const fs::path dir = out_override.empty() ? subject_dir(cfg, spec.id) : fs::path(out_override);
    save_subject(dir, ds, mask);
    write_config_echo(dir, cfg);
    std::printf("subject %s: %zu trials, %zu voxels -> %s\n", spec.id.c_str(), ds.n_trials(),
                mask.total_voxels, dir.string().c_str());
    return kExitOk;
}

int cmd_train(const RunConfig& cfg, const std::string& subject_id, const std::string& adapter,
              const std::string& out_override) {
    if (adapter != "autokl" && adapter != "clip" && adapter != "both") {
        throw ConfigError("--adapter must be autokl, clip, or both");
    }
    World world = generate_world(cfg.world);
    auto [ds, subject_mask] = load_subject_checked(cfg, world, subject_id);
    RoiMask mask = mask_for_mode(cfg, world, subject_mask);
    const std::size_t width = apply_mask(ds.voxels, mask).dim(1);

    Checkpoint ck;
    ck.subject_id = subject_id;
    ck.world_hash = world.hash;
    ck.mask_mode = to_string(cfg.mask_mode);
    RngStream init(cfg.train.seed, hash_name("init:" + subject_id));
    ck.autokl = make_autokl_adapter(width, cfg.train.hidden, cfg.train.n_blocks,
                                    cfg.train.gn_groups, cfg.train.dropout_p, world.config.dims,
                                    init.substream("autokl"));
    ck.clip = make_clip_adapter(width, cfg.train.hidden, cfg.train.n_blocks, cfg.train.dropout_p,
                                world.config.dims, init.substream("clip"));

    if (adapter == "autokl" || adapter == "both") {
        auto [params, history] = train_autokl(world, ds, mask, cfg.train);
        ck.autokl = std::move(params);
        ck.autokl_history = std::move(history);
        ck.autokl_state = "trained";
        std::printf("autokl: train %.6f val %.6f\n", ck.autokl_history.back().train_loss,
                    ck.autokl_history.back().val_loss);
    }
    if (adapter == "clip" || adapter == "both") {
        auto [params, history] = train_clip(world, ds, mask, cfg.train);
        ck.clip = std::move(params);
        ck.clip_history = std::move(history);
        ck.clip_state = "trained";
        std::printf("clip: train %.6f val %.6f\n", ck.clip_history.back().train_loss,
                    ck.clip_history.back().val_loss);
    }

    const fs::path dir =
        out_override.empty() ? checkpoint_dir(cfg, subject_id) : fs::path(out_override);
    save_checkpoint(dir, ck);
    write_config_echo(dir, cfg);
    std::printf("checkpoint -> %s\n", dir.string().c_str());
    return kExitOk;
}

int cmd_finetune(const RunConfig& cfg, const std::string& from, const std::string& subject_id,
                 double budget_fraction, const std::string& out_override, bool force) {
    World world = generate_world(cfg.world);
    Checkpoint base = load_checkpoint(from);
    check_checkpoint_world(base, world, force);
    auto [ds, subject_mask] = load_subject_checked(cfg, world, subject_id);
    RoiMask mask = mask_for_checkpoint(base, world, subject_mask);
    const double fraction = budget_fraction > 0.0 ? budget_fraction : cfg.budget_fraction;

    auto [tuned, report] = finetune_subject(base, world, ds, mask, fraction, cfg.finetune_train);
    tuned.mask_mode = base.mask_mode;

    const fs::path dir = out_override.empty()
                             ? checkpoint_dir(cfg, subject_id + "_finetuned")
                             : fs::path(out_override);
    save_checkpoint(dir, tuned);
    write_config_echo(dir, cfg);
    json rj = {{"kind", "neuroswift_finetune_report"},
               {"subject_id", subject_id},
               {"from", from},
               {"budget_fraction", fraction},
               {"budget_trials", report.budget_trials},
               {"trainable_params", report.trainable_params},
               {"total_params", report.total_params},
               {"trainable_fraction", report.trainable_fraction},
               {"frozen_hash_constant", report.frozen_hash_constant},
               {"autokl_val_loss", report.autokl_history.back().val_loss},
               {"clip_val_loss", report.clip_history.back().val_loss}};
    save_json_file(dir / "report.json", rj);
    std::printf("finetune %s: trainable %zu/%zu (%.4f), frozen hash %s\n", subject_id.c_str(),
                report.trainable_params, report.total_params, report.trainable_fraction,
                report.frozen_hash_constant ? "constant" : "CHANGED");
    std::printf("checkpoint -> %s\n", dir.string().c_str());
    return kExitOk;
}

struct ReconOutputs {
    std::vector<std::int64_t> stimulus_ids;
    std::vector<Tensor> images;
};

// Shared by cmd_reconstruct and the pipeline: run the adapters in eval mode
// over a split and sample every trial.
ReconOutputs run_reconstruction(const RunConfig& cfg, const World& world, const Checkpoint& ck,
                                const SubjectDataset& ds, const RoiMask& mask, Split split,
                                const ReconstructionConfig& rcfg, const fs::path& out) {
    const std::vector<std::size_t> trials = ds.indices_of(split);
    if (trials.empty()) throw ConfigError("reconstruct: empty split");
    Tensor masked = apply_mask(ds.voxels, mask);
    Tensor x({trials.size(), masked.dim(1)});
    for (std::size_t r = 0; r < trials.size(); ++r)
        for (std::size_t j = 0; j < masked.dim(1); ++j) x.at2(r, j) = masked.at2(trials[r], j);

    RngStream eval_rng(0, 0);
    Tensor z_pred_all = autokl_forward(ck.autokl, x, Mode::eval, eval_rng);
    ClipForwardOut emb = clip_forward(ck.clip, x, Mode::eval, eval_rng);

    NoiseSchedule schedule = make_schedule(rcfg.steps, rcfg.beta_start, rcfg.beta_end);
    const WorldDims& dims = world.config.dims;
    const std::size_t latent = dims.latent_len();

    ReconOutputs outs;
    outs.stimulus_ids.resize(trials.size());
    outs.images.resize(trials.size());
    std::vector<Tensor> z_finals(trials.size());
    parallel_for(trials.size(), [&](std::size_t r) {
        Tensor z_pred(dims.latent_dims());
        for (std::size_t k = 0; k < latent; ++k) z_pred[k] = z_pred_all.vec()[r * latent + k];
        Tensor e_txt({dims.txt_tokens, dims.token_dim});
        for (std::size_t k = 0; k < e_txt.numel(); ++k)
            e_txt[k] = emb.e_txt.vec()[r * e_txt.numel() + k];
        Tensor e_img({dims.img_tokens, dims.token_dim});
        for (std::size_t k = 0; k < e_img.numel(); ++k)
            e_img[k] = emb.e_img.vec()[r * e_img.numel() + k];
        const std::int64_t stim = ds.stimulus_ids[trials[r]];
        RngStream trial_rng(rcfg.seed,
                            hash_name("recon_trial") ^ static_cast<std::uint64_t>(stim));
        ReconstructionResult res =
            reconstruct(z_pred, &e_txt, &e_img, rcfg, schedule, world.frozen, trial_rng);
        outs.stimulus_ids[r] = stim;
        outs.images[r] = res.image;
        z_finals[r] = std::move(res.z_final);
    });

    if (!out.empty()) {
        fs::create_directories(out);
        json trials_json = json::array();
        for (std::size_t r = 0; r < trials.size(); ++r) {
            const std::string stem = "trial_" + std::to_string(outs.stimulus_ids[r]);
            nstf_write(out / (stem + "_z.nstf"), z_finals[r]);
            nstf_write(out / (stem + "_image.nstf"), outs.images[r]);
            write_ppm(out / (stem + ".ppm"), outs.images[r]);
            trials_json.push_back({{"stimulus_id", outs.stimulus_ids[r]},
                                   {"z", stem + "_z.nstf"},
                                   {"image", stem + "_image.nstf"},
                                   {"ppm", stem + ".ppm"}});
        }
        json mj = {{"kind", "neuroswift_recon"},
                   {"format_version", kManifestVersion},
                   {"subject_id", ds.subject_id},
                   {"split", to_string(split)},
                   {"mode", to_string(rcfg.mode)},
                   {"denoiser", to_string(rcfg.denoiser)},
                   {"world_hash", detail::hash_hex(world.hash)},
                   {"trials", trials_json}};
        save_json_file(out / "manifest.json", mj);
        write_config_echo(out, cfg);
    }
    return outs;
}

int cmd_reconstruct(const RunConfig& cfg_in, const std::string& checkpoint_path,
                    const std::string& subject_id, const std::string& split_name, double s_opt,
                    const std::string& mode_opt, const std::string& denoiser_opt,
                    std::int64_t seed_opt, const std::string& out_override, bool force) {
    RunConfig cfg = cfg_in;
    if (s_opt > 0.0) cfg.reconstruct.strength = s_opt;
    if (!mode_opt.empty()) cfg.reconstruct.mode = conditioning_mode_from_string(mode_opt);
    if (!denoiser_opt.empty()) cfg.reconstruct.denoiser = denoiser_from_string(denoiser_opt);
    if (seed_opt >= 0) cfg.reconstruct.seed = static_cast<std::uint64_t>(seed_opt);

    World world = generate_world(cfg.world);
    const fs::path ck_path =
        checkpoint_path.empty() ? checkpoint_dir(cfg, subject_id) : fs::path(checkpoint_path);
    Checkpoint ck = load_checkpoint(ck_path);
    check_checkpoint_world(ck, world, force);
    auto [ds, subject_mask] = load_subject_checked(cfg, world, subject_id);
    RoiMask mask = mask_for_checkpoint(ck, world, subject_mask);

    const Split split = split_from_string(split_name);
    const fs::path out = out_override.empty()
                             ? recon_dir(cfg, subject_id, to_string(cfg.reconstruct.mode))
                             : fs::path(out_override);
    ReconOutputs outs = run_reconstruction(cfg, world, ck, ds, mask, split,
                                           cfg.resolved_reconstruct(), out);
    std::printf("reconstructed %zu trials (mode %s, denoiser %s) -> %s\n", outs.images.size(),
                to_string(cfg.reconstruct.mode), to_string(cfg.reconstruct.denoiser),
                out.string().c_str());
    return kExitOk;
}

std::vector<FeatureExtractor> build_extractors(const RunConfig& cfg, const World& world) {
    std::vector<FeatureExtractor> out;
    for (const std::string& name : cfg.evaluate.extractors) {
        if (name == "pixels") {
            out.push_back(pixels_extractor());
        } else if (name == "random_projection") {
            out.push_back(random_projection_extractor(cfg.evaluate.rp_dim,
                                                      world.config.dims.image_len(),
                                                      cfg.evaluate.rp_seed));
        } else if (name == "frozen_clip_image") {
            out.push_back(frozen_clip_extractor(world.frozen));
        }
    }
    return out;
}

MetricReport evaluate_images(const RunConfig& cfg, const World& world,
                             const std::vector<Tensor>& recons, const std::vector<Tensor>& gts,
                             const std::vector<std::int64_t>& ids) {
    MetricReport report;
    report.n_trials = recons.size();
    report.config_echo = run_config_to_json(cfg);
    report.per_trial.resize(recons.size());
    std::vector<double> pix(recons.size()), ss(recons.size());
    parallel_for(recons.size(), [&](std::size_t i) {
        pix[i] = pixcorr(recons[i], gts[i]);
        ss[i] = ssim(recons[i], gts[i]);
    });
    double pix_sum = 0.0, ssim_sum = 0.0;
    for (std::size_t i = 0; i < recons.size(); ++i) {
        report.per_trial[i] = {ids[i], pix[i], ss[i]};
        pix_sum += pix[i];
        ssim_sum += ss[i];
    }
    report.mean_pixcorr = pix_sum / static_cast<double>(recons.size());
    report.mean_ssim = ssim_sum / static_cast<double>(recons.size());
    for (const FeatureExtractor& ex : build_extractors(cfg, world)) {
        report.two_way[ex.name] = two_way_identification(recons, gts, ex);
    }
    return report;
}

// Ground-truth images for the listed stimulus ids, decoded from the stored
// latents of the subject dataset.
std::vector<Tensor> gt_images_for(const World& world, const SubjectDataset& ds,
                                  const std::vector<std::int64_t>& ids) {
    std::map<std::int64_t, std::size_t> trial_of;
    for (std::size_t i = 0; i < ds.stimulus_ids.size(); ++i) trial_of[ds.stimulus_ids[i]] = i;
    std::vector<Tensor> out(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto it = trial_of.find(ids[i]);
        if (it == trial_of.end()) {
            throw CompatibilityError("stimulus id " + std::to_string(ids[i]) +
                                     " not present in subject dataset");
        }
        out[i] = stimulus_image(world, ds, it->second);
    }
    return out;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& recon_path,
                 const std::string& subject_id, const std::string& out_override) {
    World world = generate_world(cfg.world);
    auto [ds, subject_mask] = load_subject_checked(cfg, world, subject_id);

    const json mj = load_json_file(fs::path(recon_path) / "manifest.json");
    if (mj.value("kind", "") != "neuroswift_recon") {
        throw FormatError(recon_path + ": not a reconstruction manifest");
    }
    if (mj.value("world_hash", "") != detail::hash_hex(world.hash)) {
        throw CompatibilityError("reconstructions belong to a different world");
    }
    std::vector<std::int64_t> ids;
    std::vector<Tensor> recons;
    for (const auto& t : mj.at("trials")) {
        ids.push_back(t.at("stimulus_id").get<std::int64_t>());
        recons.push_back(nstf_read(fs::path(recon_path) / t.at("image").get<std::string>()));
    }
    std::vector<Tensor> gts = gt_images_for(world, ds, ids);

    MetricReport report = evaluate_images(cfg, world, recons, gts, ids);
    const fs::path out = out_override.empty()
                             ? eval_dir(cfg, subject_id, mj.value("mode", "unknown"))
                             : fs::path(out_override);
    write_report(out, report);
    std::printf("evaluate %s: pixcorr %.4f ssim %.4f", subject_id.c_str(), report.mean_pixcorr,
                report.mean_ssim);
    for (const auto& [name, pct] : report.two_way)
        std::printf(" two_way[%s] %.1f", name.c_str(), pct);
    std::printf(" -> %s\n", out.string().c_str());
    return kExitOk;
}

int cmd_weights_map(const RunConfig& cfg, const std::string& checkpoint_path,
                    const std::string& subject_id, const std::string& out_override, bool force) {
    World world = generate_world(cfg.world);
    const fs::path ck_path =
        checkpoint_path.empty() ? checkpoint_dir(cfg, subject_id) : fs::path(checkpoint_path);
    Checkpoint ck = load_checkpoint(ck_path);
    check_checkpoint_world(ck, world, force);
    auto [ds, subject_mask] = load_subject_checked(cfg, world, subject_id);
    RoiMask mask = mask_for_checkpoint(ck, world, subject_mask);

    const fs::path out =
        out_override.empty() ? weights_dir(cfg, subject_id) : fs::path(out_override);
    ContributionMap am = contribution_map(ck.autokl.fc_in.t("W"), mask, "autokl");
    ContributionMap cm = contribution_map(ck.clip.fc_in.t("W"), mask, "clip");
    write_contribution_map(out, am);
    write_contribution_map(out, cm);
    write_config_echo(out, cfg);
    std::printf("weights map %s: autokl Early mean %.4f, clip Ventral mean %.4f -> %s\n",
                subject_id.c_str(), am.region_means.at("Early"), cm.region_means.at("Ventral"),
                out.string().c_str());
    return kExitOk;
}

int cmd_pipeline(const RunConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    World world = generate_world(cfg.world);
    save_world(world_dir(cfg), world);
    write_config_echo(world_dir(cfg), cfg);
    std::printf("[pipeline] world %016llx\n", static_cast<unsigned long long>(world.hash));

    std::map<std::string, std::pair<SubjectDataset, RoiMask>> subjects;
    for (const SubjectSpec& spec : cfg.subjects) {
        auto pair =
            generate_subject(world, spec.id, spec.n_train, spec.n_val, world.config.n_shared,
                             cfg.region_sizes_for(spec), subject_stream(world, spec.id));
        save_subject(subject_dir(cfg, spec.id), pair.first, pair.second);
        write_config_echo(subject_dir(cfg, spec.id), cfg);
        std::printf("[pipeline] synth %s (%zu voxels)\n", spec.id.c_str(),
                    pair.second.total_voxels);
        subjects.emplace(spec.id, std::move(pair));
    }

    const std::string& first_id = cfg.subjects.front().id;
    std::map<std::string, Checkpoint> checkpoints;
    {
        auto& [ds, subject_mask] = subjects.at(first_id);
        RoiMask mask = mask_for_mode(cfg, world, subject_mask);
        Checkpoint ck;
        ck.subject_id = first_id;
        ck.world_hash = world.hash;
        ck.mask_mode = to_string(cfg.mask_mode);
        auto [ak, ah] = train_autokl(world, ds, mask, cfg.train);
        auto [cl, chh] = train_clip(world, ds, mask, cfg.train);
        ck.autokl = std::move(ak);
        ck.clip = std::move(cl);
        ck.autokl_history = std::move(ah);
        ck.clip_history = std::move(chh);
        ck.autokl_state = ck.clip_state = "trained";
        save_checkpoint(checkpoint_dir(cfg, first_id), ck);
        write_config_echo(checkpoint_dir(cfg, first_id), cfg);
        std::printf("[pipeline] pretrain %s: autokl val %.4f, clip val %.4f\n", first_id.c_str(),
                    ck.autokl_history.back().val_loss, ck.clip_history.back().val_loss);
        checkpoints.emplace(first_id, std::move(ck));
    }

    for (std::size_t i = 1; i < cfg.subjects.size(); ++i) {
        const std::string& id = cfg.subjects[i].id;
        auto& [ds, subject_mask] = subjects.at(id);
        RoiMask mask = mask_for_checkpoint(checkpoints.at(first_id), world, subject_mask);
        auto [tuned, report] = finetune_subject(checkpoints.at(first_id), world, ds, mask,
                                                cfg.budget_fraction, cfg.finetune_train);
        save_checkpoint(checkpoint_dir(cfg, id + "_finetuned"), tuned);
        write_config_echo(checkpoint_dir(cfg, id + "_finetuned"), cfg);
        std::printf("[pipeline] finetune %s: trainable %.4f of params, %zu trials\n", id.c_str(),
                    report.trainable_fraction, report.budget_trials);
        checkpoints.emplace(id, std::move(tuned));
    }

    const std::vector<ConditioningMode> modes = {
        ConditioningMode::full, ConditioningMode::only_z, ConditioningMode::no_text,
        ConditioningMode::no_image, ConditioningMode::no_z};
    json summary = json::array();
    std::vector<std::string> summary_lines;
    for (const SubjectSpec& spec : cfg.subjects) {
        const auto& [ds, subject_mask] = subjects.at(spec.id);
        const Checkpoint& ck = checkpoints.at(spec.id);
        RoiMask mask = mask_for_checkpoint(ck, world, subject_mask);
        for (ConditioningMode mode : modes) {
            ReconstructionConfig rcfg = cfg.resolved_reconstruct();
            rcfg.mode = mode;
            ReconOutputs outs = run_reconstruction(cfg, world, ck, ds, mask, Split::shared_test,
                                                   rcfg, recon_dir(cfg, spec.id, to_string(mode)));
            std::vector<Tensor> gts = gt_images_for(world, ds, outs.stimulus_ids);
            MetricReport report = evaluate_images(cfg, world, outs.images, gts, outs.stimulus_ids);
            write_report(eval_dir(cfg, spec.id, to_string(mode)), report);
            json row = {{"subject", spec.id},
                        {"mode", to_string(mode)},
                        {"pixcorr", detail::round_sig6(report.mean_pixcorr)},
                        {"ssim", detail::round_sig6(report.mean_ssim)}};
            char line[256];
            std::snprintf(line, sizeof(line), "%-8s %-9s pixcorr %7.4f  ssim %7.4f",
                          spec.id.c_str(), to_string(mode), report.mean_pixcorr,
                          report.mean_ssim);
            std::string l = line;
            for (const auto& [name, pct] : report.two_way) {
                row["two_way_" + name] = detail::round_sig6(pct);
                std::snprintf(line, sizeof(line), "  %s %5.1f", name.c_str(), pct);
                l += line;
            }
            summary.push_back(row);
            summary_lines.push_back(l);
        }
        ContributionMap am = contribution_map(ck.autokl.fc_in.t("W"), mask, "autokl");
        ContributionMap cm = contribution_map(ck.clip.fc_in.t("W"), mask, "clip");
        write_contribution_map(weights_dir(cfg, spec.id), am);
        write_contribution_map(weights_dir(cfg, spec.id), cm);
        write_config_echo(weights_dir(cfg, spec.id), cfg);
    }

    std::printf("\nsubject  mode      metric summary\n");
    std::ofstream csv(fs::path(cfg.out_root) / "summary.csv", std::ios::trunc);
    csv << "subject,mode,pixcorr,ssim";
    for (const auto& name : cfg.evaluate.extractors) csv << ",two_way_" << name;
    csv << "\n";
    for (std::size_t i = 0; i < summary_lines.size(); ++i) {
        std::printf("%s\n", summary_lines[i].c_str());
        const json& row = summary[i];
        csv << row.at("subject").get<std::string>() << "," << row.at("mode").get<std::string>()
            << "," << row.at("pixcorr").dump() << "," << row.at("ssim").dump();
        for (const auto& name : cfg.evaluate.extractors) {
            csv << "," << row.at("two_way_" + name).dump();
        }
        csv << "\n";
    }
    csv.close();
    save_json_file(fs::path(cfg.out_root) / "summary.json",
                   {{"kind", "neuroswift_summary"},
                    {"format_version", kManifestVersion},
                    {"world_hash", detail::hash_hex(world.hash)},
                    {"rows", summary}});
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("\npipeline complete in %.1f s -> %s\n", elapsed, cfg.out_root.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neuroswift: synthetic fMRI-to-image reconstruction workbench"};
    app.require_subcommand(1);

    std::string config_path, out_override, subject_id, adapter = "both";
    std::string checkpoint_path, recon_path, split_name = "shared_test";
    std::string mode_opt, denoiser_opt;
    double s_opt = -1.0, budget_fraction = -1.0;
    std::int64_t seed_opt = -1;
    bool force = false;

    auto* world_cmd = app.add_subcommand("world", "generate and save the synthetic world");
    world_cmd->add_option("--config", config_path, "run configuration JSON");
    world_cmd->add_option("--out", out_override, "output directory override");

    auto* synth_cmd = app.add_subcommand("synth", "synthesize one subject's dataset");
    synth_cmd->add_option("--config", config_path, "run configuration JSON");
    synth_cmd->add_option("--subject", subject_id, "subject id from the config")->required();
    synth_cmd->add_option("--out", out_override, "output directory override");

    auto* train_cmd = app.add_subcommand("train", "train adapters on one subject");
    train_cmd->add_option("--config", config_path, "run configuration JSON");
    train_cmd->add_option("--subject", subject_id, "subject id")->required();
    train_cmd->add_option("--adapter", adapter, "autokl | clip | both");
    train_cmd->add_option("--out", out_override, "checkpoint directory override");

    auto* finetune_cmd = app.add_subcommand("finetune", "fine-tune a checkpoint on a new subject");
    finetune_cmd->add_option("--config", config_path, "run configuration JSON");
    finetune_cmd->add_option("--from", checkpoint_path, "pretrained checkpoint directory")
        ->required();
    finetune_cmd->add_option("--subject", subject_id, "target subject id")->required();
    finetune_cmd->add_option("--budget-fraction", budget_fraction,
                             "fraction of training trials to use");
    finetune_cmd->add_option("--out", out_override, "checkpoint directory override");
    finetune_cmd->add_flag("--force", force, "skip the world hash check");

    auto* recon_cmd = app.add_subcommand("reconstruct", "sample reconstructions for a split");
    recon_cmd->add_option("--config", config_path, "run configuration JSON");
    recon_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint directory");
    recon_cmd->add_option("--subject", subject_id, "subject id")->required();
    recon_cmd->add_option("--split", split_name, "train | val | shared_test");
    recon_cmd->add_option("--s", s_opt, "structural strength in (0,1]");
    recon_cmd->add_option("--mode", mode_opt, "full | only_z | no_text | no_image | no_z");
    recon_cmd->add_option("--denoiser", denoiser_opt, "oracle | attn");
    recon_cmd->add_option("--seed", seed_opt, "sampling seed");
    recon_cmd->add_option("--out", out_override, "output directory override");
    recon_cmd->add_flag("--force", force, "skip the world hash check");

    auto* eval_cmd = app.add_subcommand("evaluate", "score reconstructions against ground truth");
    eval_cmd->add_option("--config", config_path, "run configuration JSON");
    eval_cmd->add_option("--recon-dir", recon_path, "reconstruction directory")->required();
    eval_cmd->add_option("--subject", subject_id, "subject id")->required();
    eval_cmd->add_option("--out", out_override, "report directory override");

    auto* weights_cmd = app.add_subcommand("weights-map", "export per-voxel contribution maps");
    weights_cmd->add_option("--config", config_path, "run configuration JSON");
    weights_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint directory");
    weights_cmd->add_option("--subject", subject_id, "subject id")->required();
    weights_cmd->add_option("--out", out_override, "output directory override");
    weights_cmd->add_flag("--force", force, "skip the world hash check");

    auto* pipeline_cmd = app.add_subcommand("pipeline", "run the full end-to-end pipeline");
    pipeline_cmd->add_option("--config", config_path, "run configuration JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitConfig;
    }

    try {
        RunConfig cfg = load_config_or_default(config_path);
        if (world_cmd->parsed()) return cmd_world(cfg, out_override);
        if (synth_cmd->parsed()) return cmd_synth(cfg, subject_id, out_override);
        if (train_cmd->parsed()) return cmd_train(cfg, subject_id, adapter, out_override);
        if (finetune_cmd->parsed()) {
            return cmd_finetune(cfg, checkpoint_path, subject_id, budget_fraction, out_override,
                                force);
        }
        if (recon_cmd->parsed()) {
            return cmd_reconstruct(cfg, checkpoint_path, subject_id, split_name, s_opt, mode_opt,
                                   denoiser_opt, seed_opt, out_override, force);
        }
        if (eval_cmd->parsed()) return cmd_evaluate(cfg, recon_path, subject_id, out_override);
        if (weights_cmd->parsed()) {
            return cmd_weights_map(cfg, checkpoint_path, subject_id, out_override, force);
        }
        if (pipeline_cmd->parsed()) return cmd_pipeline(cfg);
        std::fprintf(stderr, "no subcommand selected\n");
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const DimensionError& e) {
        std::fprintf(stderr, "dimension error: %s\n", e.what());
        return kExitConfig;
    } catch (const BoundsError& e) {
        std::fprintf(stderr, "bounds error: %s\n", e.what());
        return kExitConfig;
    } catch (const CompatibilityError& e) {
        std::fprintf(stderr, "compatibility error: %s\n", e.what());
        return kExitCompat;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return kExitIo;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
