#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "neuroswift/adapters.hpp"
#include "neuroswift/objectives.hpp"
#include "neuroswift/roi.hpp"
#include "neuroswift/world.hpp"

namespace neuroswift {

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double temp = 0.1;
    bool normalize_embeddings = true;
    double dropout_p = 0.1;
    std::uint64_t seed = 7;
    std::size_t hidden = 128;
    std::size_t n_blocks = 2;
    std::size_t gn_groups = 2;

    void validate() const {
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (!(temp > 0.0)) throw ConfigError("train: temp must be > 0");
        if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("train: dropout must be in [0,1)");
    }

    SoftClipOptions softclip() const { return SoftClipOptions{temp, normalize_embeddings}; }
};

// ---------------------------------------------------------------------------
// Adam with bias correction; state tensors are created lazily per parameter
// path, so a frozen parameter never acquires optimizer state.
// ---------------------------------------------------------------------------

struct AdamState {
    GradMap m, v;
    std::size_t step = 0;
};

inline void adam_update_tensor(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
                               std::size_t step, double lr, double beta1, double beta2,
                               double eps) {
    require_same_dims(param, grad, "adam_step");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.numel(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        param[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}

template <typename Params>
inline void adam_step(Params& params, const GradMap& grads, AdamState& st, const TrainConfig& cfg,
                      const std::set<GroupTag>& trainable) {
    ++st.step;
    visit_params(params, [&](const std::string& path, GroupTag group, Tensor& t) {
        if (trainable.find(group) == trainable.end()) return;
        auto git = grads.find(path);
        if (git == grads.end()) throw ConfigError("adam_step: no gradient for " + path);
        Tensor& m = st.m.emplace(path, Tensor(t.dims())).first->second;
        Tensor& v = st.v.emplace(path, Tensor(t.dims())).first->second;
        adam_update_tensor(t, git->second, m, v, st.step, cfg.learning_rate, cfg.beta1, cfg.beta2,
                           cfg.adam_eps);
    });
}

inline const std::set<GroupTag>& all_groups() {
    static const std::set<GroupTag> g = {GroupTag::fc_input, GroupTag::core, GroupTag::head,
                                         GroupTag::norm};
    return g;
}

inline const std::set<GroupTag>& finetune_groups() {
    static const std::set<GroupTag> g = {GroupTag::fc_input, GroupTag::head};
    return g;
}

// ---------------------------------------------------------------------------
// Histories and the checkpoint bundle
// ---------------------------------------------------------------------------

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::map<std::string, double> terms;
};

using TrainHistory = std::vector<EpochRecord>;

struct Checkpoint {
    std::uint32_t version = 1;
    std::string subject_id;
    std::uint64_t world_hash = 0;
    AutoKLAdapterParams autokl;
    ClipAdapterParams clip;
    TrainHistory autokl_history;
    TrainHistory clip_history;
    std::string autokl_state = "init";  // "init" | "trained" | "finetuned"
    std::string clip_state = "init";
    std::string mask_mode = "subject";  // which mask family produced the inputs
};

// Hash of the frozen parameter groups; constant across a fine-tune run.
template <typename Params>
inline std::uint64_t hash_groups(const Params& params, const std::set<GroupTag>& groups) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    visit_params_const(params, [&](const std::string& path, GroupTag g, Tensor& t) {
        if (groups.find(g) == groups.end()) return;
        h = detail::fnv1a_bytes(h, path);
        h = detail::fnv1a_tensor(h, t);
    });
    return h;
}

inline std::uint64_t frozen_groups_hash(const Checkpoint& ck) {
    static const std::set<GroupTag> frozen = {GroupTag::core, GroupTag::norm};
    std::uint64_t h = hash_groups(ck.autokl, frozen);
    return h ^ (hash_groups(ck.clip, frozen) * 0x9e3779b97f4a7c15ULL);
}

// ---------------------------------------------------------------------------
// Target preparation: the frozen stack supplies every training target
// ---------------------------------------------------------------------------

// z_gt rows, computed through the frozen encoder from the stimulus images,
// exactly as the structural pipeline is trained in the source system.
inline Tensor autokl_targets(const World& world, const SubjectDataset& ds,
                             const std::vector<std::size_t>& trials) {
    const std::size_t latent = world.config.dims.latent_len();
    Tensor out({trials.size(), latent});
    for (std::size_t r = 0; r < trials.size(); ++r) {
        Tensor z = world.frozen.autokl_encode(stimulus_image(world, ds, trials[r]));
        for (std::size_t k = 0; k < latent; ++k) out.at2(r, k) = z[k];
    }
    return out;
}

struct ClipTargets {
    Tensor txt;  // [n x txt_tokens*token_dim]
    Tensor img;  // [n x img_tokens*token_dim]
};

// Text targets come from the frozen text clipper on the trial code (the
// caption analog); image targets from the frozen image clipper applied to a
// generated semantic image, seeded per stimulus id.
inline ClipTargets clip_targets(const World& world, const SubjectDataset& ds,
                                const std::vector<std::size_t>& trials) {
    const WorldDims& dims = world.config.dims;
    ClipTargets out;
    out.txt = Tensor({trials.size(), dims.txt_tokens * dims.token_dim});
    out.img = Tensor({trials.size(), dims.img_tokens * dims.token_dim});
    for (std::size_t r = 0; r < trials.size(); ++r) {
        const Tensor code = ds.row_code(trials[r]);
        Tensor et = world.frozen.clip_text_encode(code);
        RngStream img_rng(world.config.seed,
                          hash_name("semantic_image") ^
                              static_cast<std::uint64_t>(ds.stimulus_ids[trials[r]]));
        Tensor ei = world.frozen.clip_image_encode(
            world.frozen.semantic_image_gen(code, img_rng, world.config.semantic_noise));
        for (std::size_t k = 0; k < et.numel(); ++k) out.txt.at2(r, k) = et[k];
        for (std::size_t k = 0; k < ei.numel(); ++k) out.img.at2(r, k) = ei[k];
    }
    return out;
}

namespace detail {

inline Tensor gather_rows(const Tensor& m, const std::vector<std::size_t>& rows) {
    Tensor out({rows.size(), m.dim(1)});
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t j = 0; j < m.dim(1); ++j) out.at2(r, j) = m.at2(rows[r], j);
    return out;
}

inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                          RngStream& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle_indices(order, rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t off = 0; off < n; off += batch_size) {
        batches.emplace_back(order.begin() + off,
                             order.begin() + std::min(n, off + batch_size));
    }
    return batches;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// AutoKL adapter training (MSE against encoder latents)
// ---------------------------------------------------------------------------

struct AutoKLTrainInputs {
    Tensor x_train, y_train;  // masked voxels, target latents (flattened rows)
    Tensor x_val, y_val;
};

inline AutoKLTrainInputs prepare_autokl_inputs(const World& world, const SubjectDataset& ds,
                                               const RoiMask& mask) {
    const auto train_idx = ds.indices_of(Split::train);
    const auto val_idx = ds.indices_of(Split::val);
    if (train_idx.empty()) throw ConfigError("train_autokl: empty train split");
    Tensor masked = apply_mask(ds.voxels, mask);
    AutoKLTrainInputs in;
    in.x_train = detail::gather_rows(masked, train_idx);
    in.y_train = autokl_targets(world, ds, train_idx);
    in.x_val = detail::gather_rows(masked, val_idx);
    in.y_val = autokl_targets(world, ds, val_idx);
    return in;
}

inline double autokl_eval_loss(const AutoKLAdapterParams& params, const Tensor& x,
                               const Tensor& y) {
    if (x.dim(0) == 0) return 0.0;
    RngStream unused(0, 0);
    Tensor pred = autokl_forward(params, x, Mode::eval, unused);
    return mse_loss(pred.reshaped(y.dims()), y).scalar;
}

// One optimization pass over prepared inputs; shared by pretraining and the
// fine-tune path (which restricts the trainable groups).
inline TrainHistory run_autokl_training(AutoKLAdapterParams& params, const AutoKLTrainInputs& in,
                                        const TrainConfig& cfg,
                                        const std::set<GroupTag>& trainable, RngStream rng,
                                        std::vector<std::uint64_t>* frozen_hashes = nullptr) {
    AdamState adam;
    TrainHistory history;
    RngStream drop_rng = rng.substream("dropout");
    static const std::set<GroupTag> frozen_set = {GroupTag::core, GroupTag::norm};
    const std::size_t n = in.x_train.dim(0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngStream shuffle_rng = rng.substream("shuffle").substream(epoch);
        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (const auto& batch : detail::make_batches(n, cfg.batch_size, shuffle_rng)) {
            Tensor x = detail::gather_rows(in.x_train, batch);
            Tensor y = detail::gather_rows(in.y_train, batch);
            AutoKLCtx ctx;
            Tensor pred = autokl_forward(params, x, Mode::train, drop_rng, &ctx);
            Tensor grad_flat(y.dims());
            LossValue loss = mse_loss(pred.reshaped(y.dims()), y, &grad_flat);
            Tensor grad = grad_flat.reshaped(pred.dims());
            GradMap grads = zero_grads_like(params);
            autokl_backward(params, ctx, grad, grads);
            adam_step(params, grads, adam, cfg, trainable);
            epoch_loss += loss.scalar;
            ++n_batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / static_cast<double>(n_batches);
        rec.val_loss = autokl_eval_loss(params, in.x_val, in.y_val);
        if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
            throw NumericalError("train_autokl: non-finite loss at epoch " +
                                 std::to_string(epoch));
        }
        history.push_back(rec);
        if (frozen_hashes) frozen_hashes->push_back(hash_groups(params, frozen_set));
    }
    return history;
}

inline std::pair<AutoKLAdapterParams, TrainHistory> train_autokl(const World& world,
                                                                 const SubjectDataset& ds,
                                                                 const RoiMask& mask,
                                                                 const TrainConfig& cfg) {
    cfg.validate();
    AutoKLTrainInputs in = prepare_autokl_inputs(world, ds, mask);
    RngStream rng(cfg.seed, hash_name("train_autokl:" + ds.subject_id));
    AutoKLAdapterParams params =
        make_autokl_adapter(in.x_train.dim(1), cfg.hidden, cfg.n_blocks, cfg.gn_groups,
                            cfg.dropout_p, world.config.dims, rng.substream("init"));
    TrainHistory history = run_autokl_training(params, in, cfg, all_groups(), rng);
    return {std::move(params), std::move(history)};
}

// ---------------------------------------------------------------------------
// CLIP adapter training (SoftCLIP + MSE on both modalities)
// ---------------------------------------------------------------------------

struct ClipTrainInputs {
    Tensor x_train;
    ClipTargets y_train;
    Tensor x_val;
    ClipTargets y_val;
};

inline ClipTrainInputs prepare_clip_inputs(const World& world, const SubjectDataset& ds,
                                           const RoiMask& mask) {
    const auto train_idx = ds.indices_of(Split::train);
    const auto val_idx = ds.indices_of(Split::val);
    if (train_idx.empty()) throw ConfigError("train_clip: empty train split");
    Tensor masked = apply_mask(ds.voxels, mask);
    ClipTrainInputs in;
    in.x_train = detail::gather_rows(masked, train_idx);
    in.y_train = clip_targets(world, ds, train_idx);
    in.x_val = detail::gather_rows(masked, val_idx);
    in.y_val = clip_targets(world, ds, val_idx);
    return in;
}

struct ClipLossOut {
    LossValue total;
    Tensor g_img, g_txt;  // gradients on flattened predictions
};

inline ClipLossOut clip_combined_loss(const Tensor& pred_img_flat, const Tensor& pred_txt_flat,
                                      const Tensor& tgt_img, const Tensor& tgt_txt,
                                      const SoftClipOptions& opt, bool want_grads) {
    ClipLossOut out;
    out.g_img = Tensor(pred_img_flat.dims());
    out.g_txt = Tensor(pred_txt_flat.dims());
    LossValue li = clip_image_loss(pred_img_flat, tgt_img, opt, want_grads ? &out.g_img : nullptr);
    LossValue lt = clip_text_loss(pred_txt_flat, tgt_txt, opt, want_grads ? &out.g_txt : nullptr);
    out.total.scalar = li.scalar + lt.scalar;
    out.total.breakdown["softclip_img"] = li.breakdown["softclip"];
    out.total.breakdown["mse_img"] = li.breakdown["mse"];
    out.total.breakdown["softclip_txt"] = lt.breakdown["softclip"];
    out.total.breakdown["mse_txt"] = lt.breakdown["mse"];
    return out;
}

inline double clip_eval_loss(const ClipAdapterParams& params, const Tensor& x,
                             const ClipTargets& y, const SoftClipOptions& opt) {
    if (x.dim(0) == 0) return 0.0;
    RngStream unused(0, 0);
    ClipForwardOut pred = clip_forward(params, x, Mode::eval, unused);
    const std::size_t b = x.dim(0);
    return clip_combined_loss(pred.e_img.reshaped({b, y.img.dim(1)}),
                              pred.e_txt.reshaped({b, y.txt.dim(1)}), y.img, y.txt, opt, false)
        .total.scalar;
}

inline TrainHistory run_clip_training(ClipAdapterParams& params, const ClipTrainInputs& in,
                                      const TrainConfig& cfg, const std::set<GroupTag>& trainable,
                                      RngStream rng,
                                      std::vector<std::uint64_t>* frozen_hashes = nullptr) {
    AdamState adam;
    TrainHistory history;
    RngStream drop_rng = rng.substream("dropout");
    static const std::set<GroupTag> frozen_set = {GroupTag::core, GroupTag::norm};
    const SoftClipOptions opt = cfg.softclip();
    const std::size_t n = in.x_train.dim(0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngStream shuffle_rng = rng.substream("shuffle").substream(epoch);
        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        std::map<std::string, double> term_sums;
        for (const auto& batch : detail::make_batches(n, cfg.batch_size, shuffle_rng)) {
            Tensor x = detail::gather_rows(in.x_train, batch);
            Tensor ti = detail::gather_rows(in.y_train.img, batch);
            Tensor tt = detail::gather_rows(in.y_train.txt, batch);
            ClipCtx ctx;
            ClipForwardOut pred = clip_forward(params, x, Mode::train, drop_rng, &ctx);
            const std::size_t b = batch.size();
            ClipLossOut loss =
                clip_combined_loss(pred.e_img.reshaped({b, ti.dim(1)}),
                                   pred.e_txt.reshaped({b, tt.dim(1)}), ti, tt, opt, true);
            GradMap grads = zero_grads_like(params);
            clip_backward(params, ctx, loss.g_img.reshaped(pred.e_img.dims()),
                          loss.g_txt.reshaped(pred.e_txt.dims()), grads);
            adam_step(params, grads, adam, cfg, trainable);
            epoch_loss += loss.total.scalar;
            for (const auto& [k, v] : loss.total.breakdown) term_sums[k] += v;
            ++n_batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / static_cast<double>(n_batches);
        rec.val_loss = clip_eval_loss(params, in.x_val, in.y_val, opt);
        for (auto& [k, v] : term_sums) rec.terms[k] = v / static_cast<double>(n_batches);
        if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
            throw NumericalError("train_clip: non-finite loss at epoch " + std::to_string(epoch));
        }
        history.push_back(rec);
        if (frozen_hashes) frozen_hashes->push_back(hash_groups(params, frozen_set));
    }
    return history;
}

inline std::pair<ClipAdapterParams, TrainHistory> train_clip(const World& world,
                                                             const SubjectDataset& ds,
                                                             const RoiMask& mask,
                                                             const TrainConfig& cfg) {
    cfg.validate();
    ClipTrainInputs in = prepare_clip_inputs(world, ds, mask);
    RngStream rng(cfg.seed, hash_name("train_clip:" + ds.subject_id));
    ClipAdapterParams params = make_clip_adapter(in.x_train.dim(1), cfg.hidden, cfg.n_blocks,
                                                 cfg.dropout_p, world.config.dims,
                                                 rng.substream("init"));
    TrainHistory history = run_clip_training(params, in, cfg, all_groups(), rng);
    return {std::move(params), std::move(history)};
}

// ---------------------------------------------------------------------------
// Cross-subject fine-tuning: freeze {core, norm}, retrain {fc_input, head}
// on a budget fraction of the new subject's training trials
// ---------------------------------------------------------------------------

struct FinetuneReport {
    double trainable_fraction = 0.0;
    std::size_t trainable_params = 0;
    std::size_t total_params = 0;
    std::size_t budget_trials = 0;
    bool frozen_hash_constant = false;
    std::vector<std::uint64_t> frozen_hashes_autokl;
    std::vector<std::uint64_t> frozen_hashes_clip;
    TrainHistory autokl_history;
    TrainHistory clip_history;
};

// Copy of a dataset keeping only the first `keep` training trials; the val
// and shared splits are untouched so budget comparisons share them.
inline SubjectDataset truncate_train_split(const SubjectDataset& ds, std::size_t keep) {
    std::vector<std::size_t> rows;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < ds.split.size(); ++i) {
        if (ds.split[i] == Split::train && seen++ >= keep) continue;
        rows.push_back(i);
    }
    SubjectDataset out;
    out.subject_id = ds.subject_id;
    out.world_hash = ds.world_hash;
    out.voxels = detail::gather_rows(ds.voxels, rows);
    out.codes = detail::gather_rows(ds.codes, rows);
    out.zgt = detail::gather_rows(ds.zgt, rows);
    for (std::size_t r : rows) {
        out.stimulus_ids.push_back(ds.stimulus_ids[r]);
        out.split.push_back(ds.split[r]);
    }
    return out;
}

inline std::pair<Checkpoint, FinetuneReport> finetune_subject(const Checkpoint& base,
                                                              const World& world,
                                                              const SubjectDataset& new_ds,
                                                              const RoiMask& new_mask,
                                                              double budget_fraction,
                                                              const TrainConfig& cfg) {
    cfg.validate();
    if (base.world_hash != new_ds.world_hash) {
        throw CompatibilityError("finetune: checkpoint world hash mismatch");
    }
    if (!(budget_fraction > 0.0) || budget_fraction > 1.0) {
        throw ConfigError("finetune: budget fraction must be in (0,1]");
    }
    const std::size_t n_train = new_ds.indices_of(Split::train).size();
    const std::size_t budget =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(
                                     budget_fraction * static_cast<double>(n_train))));
    SubjectDataset ds = truncate_train_split(new_ds, budget);

    Checkpoint out = base;
    out.subject_id = new_ds.subject_id;
    RngStream rng(cfg.seed, hash_name("finetune:" + new_ds.subject_id));
    const std::size_t width = apply_mask(ds.voxels, new_mask).dim(1);
    reinit_input_layers(out.autokl, width, rng.substream("reinit_autokl"));
    reinit_input_layers(out.clip, width, rng.substream("reinit_clip"));

    FinetuneReport report;
    report.budget_trials = budget;
    ParamCensus census = census_sum(param_census(out.autokl), param_census(out.clip));
    report.total_params = census.total;
    report.trainable_params = census.group("fc_input") + census.group("head");
    report.trainable_fraction = census.fraction({"fc_input", "head"});

    AutoKLTrainInputs ain = prepare_autokl_inputs(world, ds, new_mask);
    report.autokl_history = run_autokl_training(out.autokl, ain, cfg, finetune_groups(),
                                                rng.substream("autokl"),
                                                &report.frozen_hashes_autokl);
    ClipTrainInputs cin = prepare_clip_inputs(world, ds, new_mask);
    report.clip_history = run_clip_training(out.clip, cin, cfg, finetune_groups(),
                                            rng.substream("clip"), &report.frozen_hashes_clip);

    report.frozen_hash_constant = true;
    for (auto h : report.frozen_hashes_autokl)
        if (h != report.frozen_hashes_autokl.front()) report.frozen_hash_constant = false;
    for (auto h : report.frozen_hashes_clip)
        if (h != report.frozen_hashes_clip.front()) report.frozen_hash_constant = false;

    out.autokl_history = report.autokl_history;
    out.clip_history = report.clip_history;
    out.autokl_state = "finetuned";
    out.clip_state = "finetuned";
    return {std::move(out), std::move(report)};
}

}  // namespace neuroswift
