#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "neuroswift/diffusion.hpp"
#include "neuroswift/gradcheck.hpp"
#include "neuroswift/world.hpp"

using namespace neuroswift;

namespace {

WorldConfig tiny_config(std::uint64_t seed = 1001) {
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
    c.n_shared = 8;
    return c;
}

double cosine(const Tensor& a, const Tensor& b) {
    return dot(a, b) / (norm2(a) * norm2(b));
}

}  // namespace

TEST_CASE("autokl encoder inverts the decoder") {
    World w = generate_world(tiny_config());
    RngStream rng(5, 5);
    for (int rep = 0; rep < 3; ++rep) {
        Tensor z = normal_draw(rng, w.config.dims.latent_dims());
        Tensor img = w.frozen.autokl_decode(z);
        Tensor back = w.frozen.autokl_encode(img);
        REQUIRE(max_abs_diff(back, z) < 1e-10);
        // orthonormal columns preserve the norm
        REQUIRE(std::abs(norm2(img) - norm2(z)) < 1e-10);
    }
    Tensor zero_img = Tensor::zeros(w.config.dims.image_dims());
    REQUIRE(norm2(w.frozen.autokl_encode(zero_img)) == 0.0);
    REQUIRE(norm2(w.frozen.autokl_decode(Tensor::zeros(w.config.dims.latent_dims()))) == 0.0);

    Tensor bad({3, 5, 5});
    REQUIRE_THROWS_AS(w.frozen.autokl_encode(bad), DimensionError);
}

TEST_CASE("decode(encode(I)) is the orthogonal projection onto the decoder range") {
    World w = generate_world(tiny_config());
    RngStream rng(6, 6);
    Tensor img = normal_draw(rng, w.config.dims.image_dims());
    Tensor proj = w.frozen.autokl_decode(w.frozen.autokl_encode(img));
    Tensor resid = sub(img, proj);
    // the residual has no component left in the latent range
    Tensor resid_latent = w.frozen.autokl_encode(resid);
    REQUIRE(norm2(resid_latent) < 1e-8);
}

TEST_CASE("encode/decode are adjoint") {
    World w = generate_world(tiny_config());
    RngStream rng(7, 7);
    Tensor img = normal_draw(rng, w.config.dims.image_dims());
    Tensor z = normal_draw(rng, w.config.dims.latent_dims());
    const double lhs = dot(w.frozen.autokl_encode(img), z);
    const double rhs = dot(img, w.frozen.autokl_decode(z));
    REQUIRE(std::abs(lhs - rhs) < 1e-8);
}

TEST_CASE("clip text encoder is affine in the code") {
    World w = generate_world(tiny_config());
    Tensor zero_code = Tensor::zeros({w.config.dims.code_dim});
    REQUIRE(bit_equal(w.frozen.clip_text_encode(zero_code), w.frozen.text_positional()));

    RngStream rng(8, 8);
    Tensor c1 = normal_draw(rng, {w.config.dims.code_dim});
    Tensor c2 = normal_draw(rng, {w.config.dims.code_dim});
    Tensor lhs = sub(w.frozen.clip_text_encode(add(c1, c2)), w.frozen.text_positional());
    Tensor rhs = add(sub(w.frozen.clip_text_encode(c1), w.frozen.text_positional()),
                     sub(w.frozen.clip_text_encode(c2), w.frozen.text_positional()));
    REQUIRE(max_abs_diff(lhs, rhs) < 1e-10);

    // distinct codes land on distinguishable embeddings
    for (int rep = 0; rep < 100; ++rep) {
        Tensor a = normal_draw(rng, {w.config.dims.code_dim});
        Tensor b = normal_draw(rng, {w.config.dims.code_dim});
        REQUIRE(cosine(w.frozen.clip_text_encode(a), w.frozen.clip_text_encode(b)) < 0.99);
    }
}

TEST_CASE("clip image encoder mirrors the text encoder") {
    World w = generate_world(tiny_config());
    Tensor zero_img = Tensor::zeros(w.config.dims.image_dims());
    REQUIRE(bit_equal(w.frozen.clip_image_encode(zero_img), w.frozen.image_positional()));

    RngStream rng(9, 9);
    Tensor i1 = normal_draw(rng, w.config.dims.image_dims());
    Tensor i2 = normal_draw(rng, w.config.dims.image_dims());
    Tensor lhs = sub(w.frozen.clip_image_encode(add(i1, i2)), w.frozen.image_positional());
    Tensor rhs = add(sub(w.frozen.clip_image_encode(i1), w.frozen.image_positional()),
                     sub(w.frozen.clip_image_encode(i2), w.frozen.image_positional()));
    REQUIRE(max_abs_diff(lhs, rhs) < 1e-10);

    for (int rep = 0; rep < 100; ++rep) {
        Tensor a = w.frozen.clip_image_encode(normal_draw(rng, w.config.dims.image_dims()));
        Tensor b = w.frozen.clip_image_encode(normal_draw(rng, w.config.dims.image_dims()));
        REQUIRE(cosine(a, b) < 0.99);
    }
}

TEST_CASE("semantic image generation") {
    World w = generate_world(tiny_config());
    RngStream rng(10, 10);
    Tensor code = normal_draw(rng, {w.config.dims.code_dim});

    RngStream r0(1, 2);
    Tensor noiseless = w.frozen.semantic_image_gen(code, r0, 0.0);
    REQUIRE(bit_equal(noiseless, w.frozen.autokl_decode(w.frozen.semantic_latent(code))));

    RngStream ra(1, 2), rb(1, 2);
    Tensor ea = w.frozen.clip_image_encode(w.frozen.semantic_image_gen(code, ra, 0.1));
    Tensor eb = w.frozen.clip_image_encode(w.frozen.semantic_image_gen(code, rb, 0.1));
    REQUIRE(bit_equal(ea, eb));

    // the semantic image correlates with the full stimulus but misses the
    // structural residual, so the correlation stays away from 1
    double corr_sum = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        Tensor c = normal_draw(rng, {w.config.dims.code_dim});
        Tensor resid = normal_draw(rng, w.config.dims.latent_dims());
        Tensor z_full = add(w.frozen.semantic_latent(c), resid);
        Tensor full_img = w.frozen.autokl_decode(z_full);
        RngStream r(2, rep);
        Tensor sem_img = w.frozen.semantic_image_gen(c, r, 0.05);
        corr_sum += cosine(full_img, sem_img);
    }
    const double mean_corr = corr_sum / 100.0;
    REQUIRE(mean_corr > 0.0);
    REQUIRE(mean_corr < 1.0);
}

TEST_CASE("oracle denoiser inverts the one-step noising exactly") {
    World w = generate_world(tiny_config());
    NoiseSchedule s = make_schedule(100, 1e-3, 0.05);
    RngStream rng(11, 11);
    Tensor code = normal_draw(rng, {w.config.dims.code_dim});
    Tensor target = w.frozen.semantic_latent(code);

    // z_t exactly on the scaled target: predicted noise is zero
    for (std::size_t t : {std::size_t(1), std::size_t(50), std::size_t(100)}) {
        Tensor z_t = scale(target, std::sqrt(s.alpha_bar[t]));
        REQUIRE(norm2(w.frozen.oracle_denoiser(z_t, t, code, s)) < 1e-12);
    }

    // algebraic inversion of the noising identity
    for (std::size_t t : {std::size_t(1), std::size_t(37), std::size_t(100)}) {
        Tensor eps = normal_draw(rng, w.config.dims.latent_dims());
        Tensor z_t = add_noise_with(target, t, s, eps);
        Tensor eps_hat = w.frozen.oracle_denoiser(z_t, t, code, s);
        REQUIRE(max_abs_diff(eps_hat, eps) < 1e-10);
    }

    REQUIRE_THROWS_AS(w.frozen.oracle_denoiser(target, 0, code, s), ConfigError);
    REQUIRE_THROWS_AS(w.frozen.oracle_denoiser(target, 101, code, s), ConfigError);
}

TEST_CASE("noise-free oracle updates contract toward the scaled target") {
    World w = generate_world(tiny_config());
    NoiseSchedule s = make_schedule(60, 1e-3, 0.04);
    RngStream rng(12, 12);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor code = normal_draw(rng, {w.config.dims.code_dim});
        Tensor target = w.frozen.semantic_latent(code);
        Tensor z = normal_draw(rng, w.config.dims.latent_dims());
        RngStream unused(0, 0);
        for (std::size_t t = 60; t >= 1; --t) {
            const double d_before = norm2(sub(z, scale(target, std::sqrt(s.alpha_bar[t]))));
            Tensor eps_hat = w.frozen.oracle_denoiser(z, t, code, s);
            z = denoise_step(z, t, eps_hat, s, unused, false);
            const double d_after = norm2(sub(z, scale(target, std::sqrt(s.alpha_bar[t - 1]))));
            REQUIRE(d_after < d_before);
        }
    }
}

TEST_CASE("attention denoiser shape, conditioning sensitivity") {
    World w = generate_world(tiny_config());
    RngStream rng(13, 13);
    Tensor z = normal_draw(rng, w.config.dims.latent_dims());
    Tensor e_txt = normal_draw(rng, {w.config.dims.txt_tokens, w.config.dims.token_dim});
    Tensor e_img = normal_draw(rng, {w.config.dims.img_tokens, w.config.dims.token_dim});

    for (std::size_t t : {std::size_t(1), std::size_t(25)}) {
        Tensor out = attn_denoiser_forward(z, t, &e_txt, &e_img, w.frozen.denoiser());
        REQUIRE(out.dims() == z.dims());
        REQUIRE(out.all_finite());
    }

    // dropping the text rows changes the prediction
    Tensor with_txt = attn_denoiser_forward(z, 5, &e_txt, &e_img, w.frozen.denoiser());
    Tensor without_txt = attn_denoiser_forward(z, 5, nullptr, &e_img, w.frozen.denoiser());
    REQUIRE(norm2(sub(with_txt, without_txt)) > 0.0);

    REQUIRE_THROWS_AS(attn_denoiser_forward(z, 5, nullptr, nullptr, w.frozen.denoiser()),
                      ConfigError);
}

TEST_CASE("attention denoiser gradient check") {
    World w = generate_world(tiny_config());
    const DenoiserParams& dp = w.frozen.denoiser();
    RngStream rng(14, 14);
    Tensor z = normal_draw(rng, w.config.dims.latent_dims());
    Tensor e_txt = normal_draw(rng, {w.config.dims.txt_tokens, w.config.dims.token_dim});
    Tensor e_img = normal_draw(rng, {w.config.dims.img_tokens, w.config.dims.token_dim});
    Tensor loss_w = normal_draw(rng, w.config.dims.latent_dims());
    const std::size_t t = 7;

    auto pack_tensors = [](const std::vector<const Tensor*>& ts) {
        std::vector<double> out;
        for (const Tensor* x : ts) out.insert(out.end(), x->vec().begin(), x->vec().end());
        return out;
    };
    auto unpack_tensors = [](const std::vector<double>& flat, std::vector<Tensor*> ts) {
        std::size_t off = 0;
        for (Tensor* x : ts) {
            std::copy(flat.begin() + off, flat.begin() + off + x->numel(), x->vec().begin());
            off += x->numel();
        }
    };
    auto param_list = [](DenoiserParams& p) {
        return std::vector<Tensor*>{&p.proj_in.t("W"), &p.proj_in.t("b"), &p.time_proj,
                                    &p.attn.t("Wq"),   &p.attn.t("Wk"),   &p.attn.t("Wv"),
                                    &p.attn.t("Wo"),   &p.ff1.t("W"),     &p.ff1.t("b"),
                                    &p.ff2.t("W"),     &p.ff2.t("b"),     &p.proj_out.t("W"),
                                    &p.proj_out.t("b")};
    };

    DenoiserParams base = dp;
    std::vector<Tensor*> base_list = param_list(base);
    std::vector<const Tensor*> point_list = {&z};
    for (Tensor* p : base_list) point_list.push_back(p);

    DifferentiableScalarFn fn;
    fn.value = [&](const std::vector<double>& flat) {
        Tensor zz = z;
        DenoiserParams pp = base;
        std::vector<Tensor*> ts = {&zz};
        for (Tensor* p : param_list(pp)) ts.push_back(p);
        unpack_tensors(flat, ts);
        return dot(attn_denoiser_forward(zz, t, &e_txt, &e_img, pp), loss_w);
    };
    fn.gradient = [&](const std::vector<double>& flat) {
        Tensor zz = z;
        DenoiserParams pp = base;
        std::vector<Tensor*> ts = {&zz};
        for (Tensor* p : param_list(pp)) ts.push_back(p);
        unpack_tensors(flat, ts);
        AttnDenoiserCtx ctx;
        attn_denoiser_forward(zz, t, &e_txt, &e_img, pp, &ctx);
        Tensor gz(zz.dims());
        DenoiserGrads gp = DenoiserGrads::zeros_like(pp);
        attn_denoiser_backward(zz, t, pp, ctx, loss_w, &gz, &gp);
        return pack_tensors({&gz, &gp.proj_in_w, &gp.proj_in_b, &gp.time_proj, &gp.attn.at("Wq"),
                             &gp.attn.at("Wk"), &gp.attn.at("Wv"), &gp.attn.at("Wo"), &gp.ff1_w,
                             &gp.ff1_b, &gp.ff2_w, &gp.ff2_b, &gp.proj_out_w, &gp.proj_out_b});
    };
    REQUIRE(finite_diff_check(fn, pack_tensors(point_list), 1e-5) < 1e-4);
}

TEST_CASE("semantic code recovery from embeddings") {
    World w = generate_world(tiny_config());
    RngStream rng(15, 15);
    Tensor code = normal_draw(rng, {w.config.dims.code_dim});

    Tensor e_txt = w.frozen.clip_text_encode(code);
    Tensor c_txt = w.frozen.estimate_code(&e_txt, nullptr, 1.0, 0.0);
    REQUIRE(max_abs_diff(c_txt, code) < 1e-8);

    RngStream r(0, 0);
    Tensor e_img = w.frozen.clip_image_encode(w.frozen.semantic_image_gen(code, r, 0.0));
    Tensor c_img = w.frozen.estimate_code(nullptr, &e_img, 0.0, 1.0);
    REQUIRE(max_abs_diff(c_img, code) < 1e-8);

    Tensor c_both = w.frozen.estimate_code(&e_txt, &e_img, 0.5, 0.5);
    REQUIRE(max_abs_diff(c_both, code) < 1e-8);

    REQUIRE_THROWS_AS(w.frozen.estimate_code(nullptr, nullptr, 0.0, 0.0), ConfigError);
    REQUIRE_THROWS_AS(w.frozen.estimate_code(nullptr, &e_img, 1.0, 0.0), ConfigError);
}

TEST_CASE("frozen components stay frozen across use") {
    World w = generate_world(tiny_config());
    const std::uint64_t before = compute_world_hash(w);
    RngStream rng(16, 16);
    Tensor code = normal_draw(rng, {w.config.dims.code_dim});
    Tensor img = w.frozen.semantic_image_gen(code, rng, 0.1);
    w.frozen.clip_image_encode(img);
    w.frozen.clip_text_encode(code);
    w.frozen.autokl_encode(img);
    NoiseSchedule s = make_schedule(10, 1e-3, 0.02);
    w.frozen.oracle_denoiser(w.frozen.semantic_latent(code), 5, code, s);
    REQUIRE(compute_world_hash(w) == before);
}
