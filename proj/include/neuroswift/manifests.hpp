#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "json.hpp"
#include "neuroswift/training.hpp"

namespace neuroswift {

using nlohmann::json;

constexpr std::uint32_t kManifestVersion = 1;

// ---------------------------------------------------------------------------
// strict JSON reading: unknown keys are rejected with their path
// ---------------------------------------------------------------------------

class StrictObj {
  public:
    StrictObj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected a JSON object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json* maybe(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    const json& require(const std::string& key) {
        const json* p = maybe(key);
        if (!p) throw ConfigError(path_ + ": missing required key '" + key + "'");
        return *p;
    }

    template <typename T>
    T get_or(const std::string& key, T fallback) {
        const json* p = maybe(key);
        if (!p) return fallback;
        try {
            return p->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }

    std::string child_path(const std::string& key) const { return path_ + "." + key; }

    void done() const {
        for (const auto& [key, value] : j_.items()) {
            if (seen_.find(key) == seen_.end()) {
                throw ConfigError(path_ + ": unknown key '" + key + "'");
            }
        }
    }

    const json& raw() const { return j_; }

  private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline json load_json_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw FormatError("bad JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

inline void save_json_file(const std::filesystem::path& path, const json& j) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << j.dump(2) << "\n";
    if (!f) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// WorldConfig <-> JSON
// ---------------------------------------------------------------------------

inline json world_config_to_json(const WorldConfig& c) {
    json dims = {{"latent_channels", c.dims.latent_channels}, {"latent_h", c.dims.latent_h},
                 {"latent_w", c.dims.latent_w},               {"upsample", c.dims.upsample},
                 {"code_dim", c.dims.code_dim},               {"txt_tokens", c.dims.txt_tokens},
                 {"img_tokens", c.dims.img_tokens},           {"token_dim", c.dims.token_dim},
                 {"image_h", c.dims.image_h},                 {"image_w", c.dims.image_w}};
    json sizes = json::array();
    for (std::size_t s : c.baseline_region_sizes) sizes.push_back(s);
    json j = {{"seed", c.seed},
              {"dims", dims},
              {"region_snr", json(c.region_snr)},
              {"region_structural_weight", json(c.region_structural_weight)},
              {"residual_ratio", c.residual_ratio},
              {"semantic_fine_fraction", c.semantic_fine_fraction},
              {"semantic_noise", c.semantic_noise},
              {"n_shared", c.n_shared},
              {"baseline_region_sizes", sizes},
              {"template_shrink", c.template_shrink},
              {"template_boundary_fraction", c.template_boundary_fraction}};
    return j;
}

inline void check_region_names(const std::map<std::string, double>& m, const std::string& path) {
    const auto& vocab = region_vocabulary();
    for (const auto& [name, value] : m) {
        if (std::find(vocab.begin(), vocab.end(), name) == vocab.end()) {
            throw ConfigError(path + ": unknown region '" + name + "'");
        }
    }
}

inline WorldConfig world_config_from_json(const json& j, const std::string& path,
                                           WorldConfig c = WorldConfig{}) {
    StrictObj o(j, path);
    c.seed = o.get_or<std::uint64_t>("seed", c.seed);
    if (const json* dj = o.maybe("dims")) {
        StrictObj d(*dj, o.child_path("dims"));
        c.dims.latent_channels = d.get_or<std::size_t>("latent_channels", c.dims.latent_channels);
        c.dims.latent_h = d.get_or<std::size_t>("latent_h", c.dims.latent_h);
        c.dims.latent_w = d.get_or<std::size_t>("latent_w", c.dims.latent_w);
        c.dims.upsample = d.get_or<std::size_t>("upsample", c.dims.upsample);
        c.dims.code_dim = d.get_or<std::size_t>("code_dim", c.dims.code_dim);
        c.dims.txt_tokens = d.get_or<std::size_t>("txt_tokens", c.dims.txt_tokens);
        c.dims.img_tokens = d.get_or<std::size_t>("img_tokens", c.dims.img_tokens);
        c.dims.token_dim = d.get_or<std::size_t>("token_dim", c.dims.token_dim);
        c.dims.image_h = d.get_or<std::size_t>("image_h", c.dims.image_h);
        c.dims.image_w = d.get_or<std::size_t>("image_w", c.dims.image_w);
        d.done();
    }
    c.region_snr =
        o.get_or<std::map<std::string, double>>("region_snr", c.region_snr);
    check_region_names(c.region_snr, o.child_path("region_snr"));
    c.region_structural_weight = o.get_or<std::map<std::string, double>>(
        "region_structural_weight", c.region_structural_weight);
    check_region_names(c.region_structural_weight, o.child_path("region_structural_weight"));
    c.residual_ratio = o.get_or<double>("residual_ratio", c.residual_ratio);
    c.semantic_fine_fraction =
        o.get_or<double>("semantic_fine_fraction", c.semantic_fine_fraction);
    c.semantic_noise = o.get_or<double>("semantic_noise", c.semantic_noise);
    c.n_shared = o.get_or<std::size_t>("n_shared", c.n_shared);
    c.baseline_region_sizes =
        o.get_or<std::vector<std::size_t>>("baseline_region_sizes", c.baseline_region_sizes);
    c.template_shrink = o.get_or<double>("template_shrink", c.template_shrink);
    c.template_boundary_fraction =
        o.get_or<double>("template_boundary_fraction", c.template_boundary_fraction);
    o.done();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// world save/load
// ---------------------------------------------------------------------------

namespace detail {

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::uint64_t hash_from_hex(const std::string& s) {
    return std::strtoull(s.c_str(), nullptr, 16);
}

}  // namespace detail

inline void save_world(const std::filesystem::path& dir, const World& w) {
    std::filesystem::create_directories(dir);
    const std::vector<std::pair<std::string, const Tensor*>> tensors = {
        {"dec", &w.frozen.decoder_matrix()},
        {"g", &w.frozen.semantic_latent_map()},
        {"txt_map", &w.frozen.text_map()},
        {"img_map", &w.frozen.image_map()},
        {"pos_txt", &w.frozen.text_positional()},
        {"pos_img", &w.frozen.image_positional()},
        {"den_proj_in_W", &w.frozen.denoiser().proj_in.t("W")},
        {"den_proj_in_b", &w.frozen.denoiser().proj_in.t("b")},
        {"den_time_proj", &w.frozen.denoiser().time_proj},
        {"den_attn_Wq", &w.frozen.denoiser().attn.t("Wq")},
        {"den_attn_Wk", &w.frozen.denoiser().attn.t("Wk")},
        {"den_attn_Wv", &w.frozen.denoiser().attn.t("Wv")},
        {"den_attn_Wo", &w.frozen.denoiser().attn.t("Wo")},
        {"den_ff1_W", &w.frozen.denoiser().ff1.t("W")},
        {"den_ff1_b", &w.frozen.denoiser().ff1.t("b")},
        {"den_ff2_W", &w.frozen.denoiser().ff2.t("W")},
        {"den_ff2_b", &w.frozen.denoiser().ff2.t("b")},
        {"den_proj_out_W", &w.frozen.denoiser().proj_out.t("W")},
        {"den_proj_out_b", &w.frozen.denoiser().proj_out.t("b")},
        {"shared_codes", &w.shared_codes},
        {"shared_resid", &w.shared_resid}};
    json files = json::object();
    for (const auto& [name, t] : tensors) {
        const std::string fname = name + ".nstf";
        nstf_write(dir / fname, *t);
        files[name] = fname;
    }
    json j = {{"format_version", kManifestVersion},
              {"kind", "neuroswift_world"},
              {"config", world_config_to_json(w.config)},
              {"hash", detail::hash_hex(w.hash)},
              {"shared_ids", w.shared_ids},
              {"tensors", files}};
    save_json_file(dir / "world.json", j);
}

inline World load_world(const std::filesystem::path& dir) {
    const json j = load_json_file(dir / "world.json");
    StrictObj o(j, "world.json");
    if (o.get_or<std::string>("kind", "") != "neuroswift_world") {
        throw FormatError(dir.string() + ": not a world manifest");
    }
    if (o.get_or<std::uint32_t>("format_version", 0) != kManifestVersion) {
        throw FormatError(dir.string() + ": unsupported world format version");
    }
    World w;
    w.config = world_config_from_json(o.require("config"), "world.json.config");
    const json& files = o.require("tensors");
    auto read = [&](const std::string& name) {
        if (!files.contains(name)) throw FormatError("world manifest missing tensor " + name);
        return nstf_read(dir / files.at(name).get<std::string>());
    };
    DenoiserParams den;
    den.proj_in = LayerParams{LayerKind::linear, GroupTag::core, {}};
    den.proj_in.tensors.emplace("W", read("den_proj_in_W"));
    den.proj_in.tensors.emplace("b", read("den_proj_in_b"));
    den.time_proj = read("den_time_proj");
    den.attn = LayerParams{LayerKind::attention, GroupTag::core, {}};
    for (const char* k : {"Wq", "Wk", "Wv", "Wo"}) {
        den.attn.tensors.emplace(k, read(std::string("den_attn_") + k));
    }
    den.ff1 = LayerParams{LayerKind::linear, GroupTag::core, {}};
    den.ff1.tensors.emplace("W", read("den_ff1_W"));
    den.ff1.tensors.emplace("b", read("den_ff1_b"));
    den.ff2 = LayerParams{LayerKind::linear, GroupTag::core, {}};
    den.ff2.tensors.emplace("W", read("den_ff2_W"));
    den.ff2.tensors.emplace("b", read("den_ff2_b"));
    den.proj_out = LayerParams{LayerKind::linear, GroupTag::core, {}};
    den.proj_out.tensors.emplace("W", read("den_proj_out_W"));
    den.proj_out.tensors.emplace("b", read("den_proj_out_b"));
    w.frozen.set_tensors(w.config.dims, read("dec"), read("g"), read("txt_map"), read("img_map"),
                         read("pos_txt"), read("pos_img"), std::move(den));
    w.shared_codes = read("shared_codes");
    w.shared_resid = read("shared_resid");
    w.shared_ids = o.get_or<std::vector<std::int64_t>>("shared_ids", {});
    const std::string stored_hash = o.get_or<std::string>("hash", "");
    o.done();
    w.hash = compute_world_hash(w);
    if (detail::hash_hex(w.hash) != stored_hash) {
        throw FormatError(dir.string() + ": world hash mismatch, files corrupted or edited");
    }
    return w;
}

// ---------------------------------------------------------------------------
// subject save/load (dataset.json + mask.json + NSTF payloads)
// ---------------------------------------------------------------------------

inline void save_subject(const std::filesystem::path& dir, const SubjectDataset& ds,
                         const RoiMask& mask) {
    std::filesystem::create_directories(dir);
    nstf_write(dir / "voxels.nstf", ds.voxels);
    nstf_write(dir / "codes.nstf", ds.codes);
    nstf_write(dir / "zgt.nstf", ds.zgt);
    json splits = json::array();
    for (Split s : ds.split) splits.push_back(to_string(s));
    json dj = {{"format_version", kManifestVersion},
               {"kind", "neuroswift_subject"},
               {"subject_id", ds.subject_id},
               {"world_hash", detail::hash_hex(ds.world_hash)},
               {"stimulus_ids", ds.stimulus_ids},
               {"splits", splits},
               {"tensors",
                {{"voxels", "voxels.nstf"}, {"codes", "codes.nstf"}, {"zgt", "zgt.nstf"}}}};
    save_json_file(dir / "dataset.json", dj);
    json regions = json::array();
    for (const auto& [name, idx] : mask.regions) {
        regions.push_back({{"name", name}, {"indices", idx}});
    }
    json mj = {{"format_version", kManifestVersion},
               {"kind", "neuroswift_mask"},
               {"subject_id", mask.subject_id},
               {"total_voxels", mask.total_voxels},
               {"regions", regions}};
    save_json_file(dir / "mask.json", mj);
}

inline RoiMask load_mask(const std::filesystem::path& file) {
    const json j = load_json_file(file);
    StrictObj o(j, file.filename().string());
    if (o.get_or<std::string>("kind", "") != "neuroswift_mask") {
        throw FormatError(file.string() + ": not a mask manifest");
    }
    o.maybe("format_version");
    RoiMask mask;
    mask.subject_id = o.get_or<std::string>("subject_id", "");
    mask.total_voxels = o.get_or<std::size_t>("total_voxels", 0);
    const json& regions = o.require("regions");
    for (const auto& r : regions) {
        StrictObj ro(r, file.filename().string() + ".regions[]");
        std::string name = ro.get_or<std::string>("name", "");
        auto idx = ro.get_or<std::vector<std::size_t>>("indices", {});
        ro.done();
        mask.regions.emplace_back(std::move(name), std::move(idx));
    }
    o.done();
    validate_mask(mask);  // disjoint-cover invariant checked on load
    return mask;
}

inline std::pair<SubjectDataset, RoiMask> load_subject(const std::filesystem::path& dir) {
    const json j = load_json_file(dir / "dataset.json");
    StrictObj o(j, "dataset.json");
    if (o.get_or<std::string>("kind", "") != "neuroswift_subject") {
        throw FormatError(dir.string() + ": not a subject manifest");
    }
    o.maybe("format_version");
    SubjectDataset ds;
    ds.subject_id = o.get_or<std::string>("subject_id", "");
    ds.world_hash = detail::hash_from_hex(o.get_or<std::string>("world_hash", "0"));
    ds.stimulus_ids = o.get_or<std::vector<std::int64_t>>("stimulus_ids", {});
    for (const auto& s : o.require("splits")) ds.split.push_back(split_from_string(s));
    const json& files = o.require("tensors");
    ds.voxels = nstf_read(dir / files.at("voxels").get<std::string>());
    ds.codes = nstf_read(dir / files.at("codes").get<std::string>());
    ds.zgt = nstf_read(dir / files.at("zgt").get<std::string>());
    o.done();
    if (ds.voxels.dim(0) != ds.split.size() || ds.stimulus_ids.size() != ds.split.size()) {
        throw FormatError(dir.string() + ": trial count mismatch across dataset files");
    }
    RoiMask mask = load_mask(dir / "mask.json");
    if (mask.total_voxels != ds.voxels.dim(1)) {
        throw FormatError(dir.string() + ": mask voxel count != dataset voxel width");
    }
    return {std::move(ds), std::move(mask)};
}

// ---------------------------------------------------------------------------
// checkpoint save/load
// ---------------------------------------------------------------------------

inline json history_to_json(const TrainHistory& h) {
    json out = json::array();
    for (const auto& rec : h) {
        out.push_back({{"epoch", rec.epoch},
                       {"train_loss", rec.train_loss},
                       {"val_loss", rec.val_loss},
                       {"terms", json(rec.terms)}});
    }
    return out;
}

inline TrainHistory history_from_json(const json& j) {
    TrainHistory h;
    for (const auto& rj : j) {
        EpochRecord rec;
        rec.epoch = rj.at("epoch").get<std::size_t>();
        rec.train_loss = rj.at("train_loss").get<double>();
        rec.val_loss = rj.at("val_loss").get<double>();
        rec.terms = rj.at("terms").get<std::map<std::string, double>>();
        h.push_back(rec);
    }
    return h;
}

inline void write_history_csv(const std::filesystem::path& path, const Checkpoint& ck) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string());
    f << "adapter,epoch,split,term,value\n";
    char buf[64];
    auto row = [&](const char* adapter, std::size_t epoch, const char* split, const std::string& term,
                   double value) {
        std::snprintf(buf, sizeof(buf), "%.17g", value);
        f << adapter << "," << epoch << "," << split << "," << term << "," << buf << "\n";
    };
    for (const auto& [adapter, hist] :
         {std::pair<const char*, const TrainHistory*>{"autokl", &ck.autokl_history},
          std::pair<const char*, const TrainHistory*>{"clip", &ck.clip_history}}) {
        for (const auto& rec : *hist) {
            row(adapter, rec.epoch, "train", "loss", rec.train_loss);
            row(adapter, rec.epoch, "val", "loss", rec.val_loss);
            for (const auto& [term, value] : rec.terms) row(adapter, rec.epoch, "train", term, value);
        }
    }
}

inline json autokl_config_json(const AutoKLAdapterParams& p) {
    return {{"voxels", p.voxels},     {"hidden", p.hidden},
            {"n_blocks", p.n_blocks}, {"gn_groups", p.gn_groups},
            {"dropout_p", p.dropout_p}, {"eps", p.eps},
            {"latent_channels", p.latent_channels}, {"latent_h", p.latent_h},
            {"latent_w", p.latent_w}, {"upsample", p.upsample}};
}

inline json clip_config_json(const ClipAdapterParams& p) {
    return {{"voxels", p.voxels},     {"hidden", p.hidden},   {"n_blocks", p.n_blocks},
            {"dropout_p", p.dropout_p}, {"eps", p.eps},       {"txt_tokens", p.txt_tokens},
            {"img_tokens", p.img_tokens}, {"token_dim", p.token_dim}};
}

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
    std::filesystem::create_directories(dir / "tensors");
    json tensors = json::object();
    json groups = json::object();
    auto dump = [&](const std::string& prefix, const auto& params) {
        visit_params_const(params, [&](const std::string& path, GroupTag g, Tensor& t) {
            const std::string key = prefix + "." + path;
            const std::string fname = "tensors/" + key + ".nstf";
            nstf_write(dir / fname, t);
            tensors[key] = fname;
            groups[key] = to_string(g);
        });
    };
    dump("autokl", ck.autokl);
    dump("clip", ck.clip);
    json j = {{"format_version", ck.version},
              {"kind", "neuroswift_checkpoint"},
              {"subject_id", ck.subject_id},
              {"world_hash", detail::hash_hex(ck.world_hash)},
              {"autokl_state", ck.autokl_state},
              {"clip_state", ck.clip_state},
              {"mask_mode", ck.mask_mode},
              {"autokl_config", autokl_config_json(ck.autokl)},
              {"clip_config", clip_config_json(ck.clip)},
              {"autokl_history", history_to_json(ck.autokl_history)},
              {"clip_history", history_to_json(ck.clip_history)},
              {"tensors", tensors},
              {"groups", groups}};
    save_json_file(dir / "manifest.json", j);
    write_history_csv(dir / "history.csv", ck);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    const json j = load_json_file(dir / "manifest.json");
    StrictObj o(j, "manifest.json");
    if (o.get_or<std::string>("kind", "") != "neuroswift_checkpoint") {
        throw FormatError(dir.string() + ": not a checkpoint manifest");
    }
    Checkpoint ck;
    ck.version = o.get_or<std::uint32_t>("format_version", 0);
    if (ck.version != kManifestVersion) {
        throw FormatError(dir.string() + ": unsupported checkpoint version " +
                          std::to_string(ck.version));
    }
    ck.subject_id = o.get_or<std::string>("subject_id", "");
    ck.world_hash = detail::hash_from_hex(o.get_or<std::string>("world_hash", "0"));
    ck.autokl_state = o.get_or<std::string>("autokl_state", "init");
    ck.clip_state = o.get_or<std::string>("clip_state", "init");
    ck.mask_mode = o.get_or<std::string>("mask_mode", "subject");
    {
        StrictObj a(o.require("autokl_config"), "manifest.autokl_config");
        ck.autokl.voxels = a.get_or<std::size_t>("voxels", 0);
        ck.autokl.hidden = a.get_or<std::size_t>("hidden", 0);
        ck.autokl.n_blocks = a.get_or<std::size_t>("n_blocks", 0);
        ck.autokl.gn_groups = a.get_or<std::size_t>("gn_groups", 1);
        ck.autokl.dropout_p = a.get_or<double>("dropout_p", 0.0);
        ck.autokl.eps = a.get_or<double>("eps", 1e-5);
        ck.autokl.latent_channels = a.get_or<std::size_t>("latent_channels", 0);
        ck.autokl.latent_h = a.get_or<std::size_t>("latent_h", 0);
        ck.autokl.latent_w = a.get_or<std::size_t>("latent_w", 0);
        ck.autokl.upsample = a.get_or<std::size_t>("upsample", 1);
        a.done();
    }
    {
        StrictObj c(o.require("clip_config"), "manifest.clip_config");
        ck.clip.voxels = c.get_or<std::size_t>("voxels", 0);
        ck.clip.hidden = c.get_or<std::size_t>("hidden", 0);
        ck.clip.n_blocks = c.get_or<std::size_t>("n_blocks", 0);
        ck.clip.dropout_p = c.get_or<double>("dropout_p", 0.0);
        ck.clip.eps = c.get_or<double>("eps", 1e-5);
        ck.clip.txt_tokens = c.get_or<std::size_t>("txt_tokens", 0);
        ck.clip.img_tokens = c.get_or<std::size_t>("img_tokens", 0);
        ck.clip.token_dim = c.get_or<std::size_t>("token_dim", 0);
        c.done();
    }
    ck.autokl_history = history_from_json(o.get_or<json>("autokl_history", json::array()));
    ck.clip_history = history_from_json(o.get_or<json>("clip_history", json::array()));

    // build the parameter skeletons, then overwrite every tensor from disk
    RngStream scratch(0, 0);
    WorldDims adims;
    adims.latent_channels = ck.autokl.latent_channels;
    adims.latent_h = ck.autokl.latent_h;
    adims.latent_w = ck.autokl.latent_w;
    adims.upsample = ck.autokl.upsample;
    adims.txt_tokens = ck.clip.txt_tokens;
    adims.img_tokens = ck.clip.img_tokens;
    adims.token_dim = ck.clip.token_dim;
    AutoKLAdapterParams askel =
        make_autokl_adapter(ck.autokl.voxels, ck.autokl.hidden, ck.autokl.n_blocks,
                            ck.autokl.gn_groups, ck.autokl.dropout_p, adims, scratch);
    askel.eps = ck.autokl.eps;
    ClipAdapterParams cskel = make_clip_adapter(ck.clip.voxels, ck.clip.hidden, ck.clip.n_blocks,
                                                ck.clip.dropout_p, adims, scratch);
    cskel.eps = ck.clip.eps;
    ck.autokl = std::move(askel);
    ck.clip = std::move(cskel);

    const json& tensors = o.require("tensors");
    o.maybe("groups");
    auto restore = [&](const std::string& prefix, auto& params) {
        visit_params(params, [&](const std::string& path, GroupTag, Tensor& t) {
            const std::string key = prefix + "." + path;
            if (!tensors.contains(key)) {
                throw FormatError(dir.string() + ": checkpoint missing tensor " + key);
            }
            Tensor loaded = nstf_read(dir / tensors.at(key).get<std::string>());
            if (loaded.dims() != t.dims()) {
                throw FormatError(dir.string() + ": tensor " + key + " has dims " +
                                  loaded.dims_str() + ", expected " + t.dims_str());
            }
            t = std::move(loaded);
        });
    };
    restore("autokl", ck.autokl);
    restore("clip", ck.clip);
    o.done();
    return ck;
}

inline void check_checkpoint_world(const Checkpoint& ck, const World& world, bool force = false) {
    if (ck.world_hash != world.hash && !force) {
        throw CompatibilityError("checkpoint world hash " + detail::hash_hex(ck.world_hash) +
                                 " does not match world " + detail::hash_hex(world.hash));
    }
}

}  // namespace neuroswift
