#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "neuroswift/linalg.hpp"
#include "neuroswift/manifests.hpp"
#include "neuroswift/roi.hpp"
#include "neuroswift/world.hpp"

using namespace neuroswift;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path d = fs::temp_directory_path() / ("neuroswift_dataio_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

// Jacobi eigenvalues of a small symmetric matrix; test-side oracle for the
// singular values of G via eig(G^T G).
std::vector<double> symmetric_eigenvalues(Tensor m) {
    const std::size_t n = m.dim(0);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += m.at2(i, j) * m.at2(i, j);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(m.at2(p, q)) < 1e-18) continue;
                const double theta = (m.at2(q, q) - m.at2(p, p)) / (2.0 * m.at2(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m.at2(k, p), mkq = m.at2(k, q);
                    m.at2(k, p) = c * mkp - s * mkq;
                    m.at2(k, q) = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m.at2(p, k), mqk = m.at2(q, k);
                    m.at2(p, k) = c * mpk - s * mqk;
                    m.at2(q, k) = s * mpk + c * mqk;
                }
            }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = m.at2(i, i);
    return eig;
}

WorldConfig small_world_config(std::uint64_t seed) {
    WorldConfig c;
    c.seed = seed;
    c.dims.latent_channels = 4;
    c.dims.latent_h = 2;
    c.dims.latent_w = 2;
    c.dims.upsample = 2;
    c.dims.code_dim = 6;
    c.dims.txt_tokens = 3;
    c.dims.img_tokens = 4;
    c.dims.token_dim = 8;
    c.dims.image_h = 12;
    c.dims.image_w = 12;
    c.n_shared = 12;
    c.baseline_region_sizes = {20, 10, 10, 10, 16, 8, 8};
    return c;
}

// least-squares refit of voxel columns on a design matrix; returns R^2 of the
// best linear fit, the oracle for the voxel-coding checks
double refit_r2(const Tensor& design, const std::vector<double>& y) {
    const std::size_t n = design.dim(0), k = design.dim(1);
    Tensor xtx = matmul_tn(design, design);
    for (std::size_t i = 0; i < k; ++i) xtx.at2(i, i) += 1e-10;
    std::vector<double> xty(k, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) xty[j] += design.at2(i, j) * y[i];
    std::vector<double> beta = solve_linear(xtx, xty);
    double ss_res = 0.0, ss_tot = 0.0, mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double pred = 0.0;
        for (std::size_t j = 0; j < k; ++j) pred += design.at2(i, j) * beta[j];
        ss_res += (y[i] - pred) * (y[i] - pred);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    return 1.0 - ss_res / ss_tot;
}

}  // namespace

TEST_CASE("roi mask validation") {
    RoiMask m;
    m.subject_id = "s";
    m.total_voxels = 4;
    m.regions = {{"Early", {0, 1}}, {"Ventral", {2, 3}}};
    REQUIRE_NOTHROW(validate_mask(m));

    RoiMask overlap = m;
    overlap.regions[1].second = {1, 3};
    REQUIRE_THROWS_AS(validate_mask(overlap), FormatError);

    RoiMask gap = m;
    gap.total_voxels = 5;
    REQUIRE_THROWS_AS(validate_mask(gap), FormatError);

    RoiMask unknown = m;
    unknown.regions[0].first = "Sideways";
    REQUIRE_THROWS_AS(validate_mask(unknown), FormatError);
}

TEST_CASE("apply_mask gathers, subsets, inverts") {
    Tensor x = Tensor::from_rows({{10, 11, 12, 13}, {20, 21, 22, 23}});
    RoiMask m;
    m.subject_id = "s";
    m.total_voxels = 4;
    m.regions = {{"Early", {2, 0}}, {"Ventral", {3, 1}}};

    Tensor g = apply_mask(x, m);
    REQUIRE(g.dims() == std::vector<std::size_t>{2, 4});
    REQUIRE(g.at2(0, 0) == 12);
    REQUIRE(g.at2(0, 1) == 10);
    REQUIRE(g.at2(0, 2) == 13);
    REQUIRE(g.at2(0, 3) == 11);

    Tensor one = apply_mask(x, m, {"Ventral"});
    REQUIRE(one.dims() == std::vector<std::size_t>{2, 2});
    REQUIRE(one.at2(1, 0) == 23);

    // gather(gather^{-1}(x)) = x: invert the permutation and regather
    std::vector<std::size_t> perm;
    for (const auto& [name, idx] : m.regions) perm.insert(perm.end(), idx.begin(), idx.end());
    RoiMask inverse;
    inverse.subject_id = "s";
    inverse.total_voxels = 4;
    std::vector<std::size_t> inv(4);
    for (std::size_t i = 0; i < 4; ++i) inv[perm[i]] = i;
    inverse.regions = {{"Early", inv}};
    Tensor back = apply_mask(g, inverse);
    REQUIRE(bit_equal(back, x));

    RoiMask oob = m;
    oob.regions[0].second = {9, 0};
    REQUIRE_THROWS_AS(apply_mask(x, oob), BoundsError);
}

TEST_CASE("subject masks partition the voxel range") {
    RngStream rng(7, 7);
    RoiMask m = make_subject_mask("subj01", {5, 3, 3, 3, 4, 2, 2}, rng);
    REQUIRE(m.total_voxels == 22);
    REQUIRE(m.regions.size() == 7);
    REQUIRE_NOTHROW(validate_mask(m));
    REQUIRE(m.region_size("Early") == 5);
}

TEST_CASE("std template mask shrinks and stays valid") {
    RngStream rng(9, 9);
    RoiMask t = make_std_template_mask({20, 10, 10, 10, 16, 8, 8}, 0.2, 0.3, rng);
    REQUIRE_NOTHROW(validate_mask(t));
    REQUIRE(t.total_voxels < 82);
    REQUIRE(t.subject_id == "std_template");
    // every region shrank
    REQUIRE(t.region_size("Early") == 16);
    REQUIRE(t.region_size("Ventral") == 12);
}

TEST_CASE("generate_world is deterministic in the seed") {
    World a = generate_world(small_world_config(42));
    World b = generate_world(small_world_config(42));
    REQUIRE(a.hash == b.hash);
    REQUIRE(bit_equal(a.frozen.semantic_latent_map(), b.frozen.semantic_latent_map()));
    REQUIRE(bit_equal(a.shared_codes, b.shared_codes));

    World c = generate_world(small_world_config(43));
    REQUIRE(c.hash != a.hash);
    REQUIRE(norm2(sub(c.frozen.semantic_latent_map(), a.frozen.semantic_latent_map())) > 0.0);
}

TEST_CASE("semantic-to-latent map is well conditioned") {
    World w = generate_world(small_world_config(1234));
    const Tensor& g = w.frozen.semantic_latent_map();
    std::vector<double> eig = symmetric_eigenvalues(matmul_tn(g, g));
    double lo = eig[0], hi = eig[0];
    for (double e : eig) {
        lo = std::min(lo, e);
        hi = std::max(hi, e);
    }
    REQUIRE(lo > 0.0);
    REQUIRE(std::sqrt(hi / lo) < 100.0);
}

TEST_CASE("generate_subject noiseless coding is exactly linear") {
    WorldConfig cfg = small_world_config(77);
    for (const auto& r : region_vocabulary()) cfg.region_snr[r] = 0.0;  // noiseless
    World w = generate_world(cfg);
    auto [ds, mask] = generate_subject(w, "subj01", 60, 10, 12, {20, 10, 10, 10, 16, 8, 8},
                                       RngStream(w.config.seed, hash_name("subject:subj01")));
    // an Early voxel is an exact linear function of vec(z_gt)
    const auto& early = mask.regions[0].second;
    for (std::size_t probe = 0; probe < 3; ++probe) {
        std::vector<double> y(ds.n_trials());
        for (std::size_t i = 0; i < ds.n_trials(); ++i) y[i] = ds.voxels.at2(i, early[probe]);
        REQUIRE(refit_r2(ds.zgt, y) > 1.0 - 1e-8);
    }
    // a Ventral voxel is an exact linear function of the code
    const auto& ventral = mask.regions[4].second;
    std::vector<double> y(ds.n_trials());
    for (std::size_t i = 0; i < ds.n_trials(); ++i) y[i] = ds.voxels.at2(i, ventral[0]);
    REQUIRE(refit_r2(ds.codes, y) > 1.0 - 1e-8);
}

TEST_CASE("generate_subject default snr leaves most variance explained") {
    WorldConfig cfg = small_world_config(99);
    World w = generate_world(cfg);  // default SNR 4
    auto [ds, mask] = generate_subject(w, "subj01", 120, 10, 12, {20, 10, 10, 10, 16, 8, 8},
                                       RngStream(w.config.seed, hash_name("subject:subj01")));
    const auto& early = mask.regions[0].second;
    double mean_r2 = 0.0;
    for (std::size_t probe = 0; probe < 5; ++probe) {
        std::vector<double> y(ds.n_trials());
        for (std::size_t i = 0; i < ds.n_trials(); ++i) y[i] = ds.voxels.at2(i, early[probe]);
        mean_r2 += refit_r2(ds.zgt, y);
    }
    REQUIRE(mean_r2 / 5.0 > 0.9);
}

TEST_CASE("subjects of one world share the shared test stimuli") {
    World w = generate_world(small_world_config(5));
    auto [ds1, m1] = generate_subject(w, "subj01", 30, 5, 12, {20, 10, 10, 10, 16, 8, 8},
                                      RngStream(w.config.seed, hash_name("subject:subj01")));
    auto [ds2, m2] = generate_subject(w, "subj02", 30, 5, 12, {10, 6, 6, 6, 10, 4, 4},
                                      RngStream(w.config.seed, hash_name("subject:subj02")));
    auto shared1 = ds1.indices_of(Split::shared_test);
    auto shared2 = ds2.indices_of(Split::shared_test);
    REQUIRE(shared1.size() == 12);
    REQUIRE(shared1.size() == shared2.size());
    for (std::size_t k = 0; k < shared1.size(); ++k) {
        REQUIRE(ds1.stimulus_ids[shared1[k]] == ds2.stimulus_ids[shared2[k]]);
        // identical stimuli mean identical codes and latents
        for (std::size_t j = 0; j < ds1.codes.dim(1); ++j) {
            REQUIRE(ds1.codes.at2(shared1[k], j) == ds2.codes.at2(shared2[k], j));
        }
    }
    // but train ids are subject-specific
    auto t1 = ds1.indices_of(Split::train);
    auto t2 = ds2.indices_of(Split::train);
    REQUIRE(ds1.stimulus_ids[t1[0]] != ds2.stimulus_ids[t2[0]]);

    // wrong shared count is rejected
    REQUIRE_THROWS_AS(generate_subject(w, "s", 5, 5, 10, {20, 10, 10, 10, 16, 8, 8},
                                       RngStream(0, 0)),
                      ConfigError);

    // voxel widths differ across subjects, as the fine-tune path requires
    REQUIRE(ds1.voxels.dim(1) != ds2.voxels.dim(1));
}

TEST_CASE("subject generation is deterministic") {
    World w = generate_world(small_world_config(8));
    auto a = generate_subject(w, "subjx", 20, 4, 12, {20, 10, 10, 10, 16, 8, 8},
                              RngStream(3, 14));
    auto b = generate_subject(w, "subjx", 20, 4, 12, {20, 10, 10, 10, 16, 8, 8},
                              RngStream(3, 14));
    REQUIRE(bit_equal(a.first.voxels, b.first.voxels));
    REQUIRE(a.second.regions == b.second.regions);
}

TEST_CASE("world save/load round trip") {
    const fs::path dir = temp_dir("world_rt");
    World w = generate_world(small_world_config(21));
    save_world(dir, w);
    World back = load_world(dir);
    REQUIRE(back.hash == w.hash);
    REQUIRE(bit_equal(back.frozen.decoder_matrix(), w.frozen.decoder_matrix()));
    REQUIRE(bit_equal(back.shared_resid, w.shared_resid));
    REQUIRE(back.config.n_shared == w.config.n_shared);
    REQUIRE(back.shared_ids == w.shared_ids);

    // deterministic byte-identical manifests for the same config
    const fs::path dir2 = temp_dir("world_rt2");
    save_world(dir2, generate_world(small_world_config(21)));
    std::ifstream f1(dir / "world.json"), f2(dir2 / "world.json");
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(s1 == s2);

    // corrupting a payload is caught by the stored hash
    World tampered = w;
    tampered.shared_codes[0] += 1.0;
    save_world(dir2, tampered);  // hash field still matches original w
    // overwrite with stale manifest hash: rewrite manifest carrying w.hash
    json j = load_json_file(dir2 / "world.json");
    j["hash"] = detail::hash_hex(w.hash);
    save_json_file(dir2 / "world.json", j);
    REQUIRE_THROWS_AS(load_world(dir2), FormatError);
}

TEST_CASE("subject save/load round trip") {
    const fs::path dir = temp_dir("subject_rt");
    World w = generate_world(small_world_config(22));
    auto [ds, mask] = generate_subject(w, "subj01", 15, 5, 12, {20, 10, 10, 10, 16, 8, 8},
                                       RngStream(w.config.seed, hash_name("subject:subj01")));
    save_subject(dir, ds, mask);
    auto [ds2, mask2] = load_subject(dir);
    REQUIRE(bit_equal(ds2.voxels, ds.voxels));
    REQUIRE(bit_equal(ds2.codes, ds.codes));
    REQUIRE(bit_equal(ds2.zgt, ds.zgt));
    REQUIRE(ds2.stimulus_ids == ds.stimulus_ids);
    REQUIRE(ds2.split == ds.split);
    REQUIRE(mask2.regions == mask.regions);
    REQUIRE(ds2.world_hash == w.hash);

    // a mask violating the disjoint-cover invariant is rejected at load
    json mj = load_json_file(dir / "mask.json");
    mj["regions"][0]["indices"][0] = mj["regions"][1]["indices"][0];
    save_json_file(dir / "mask.json", mj);
    REQUIRE_THROWS_AS(load_subject(dir), FormatError);
}
