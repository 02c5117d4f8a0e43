#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "neuroswift/gradcheck.hpp"
#include "neuroswift/layers.hpp"
#include "neuroswift/rng.hpp"
#include "neuroswift/tensor.hpp"

using namespace neuroswift;

namespace {

// Pack tensors into one flat coordinate vector and back; the gradcheck
// closures below perturb every input and parameter coordinate through this.
std::vector<double> pack(const std::vector<const Tensor*>& ts) {
    std::vector<double> out;
    for (const Tensor* t : ts) out.insert(out.end(), t->vec().begin(), t->vec().end());
    return out;
}

void unpack(const std::vector<double>& flat, std::vector<Tensor*> ts) {
    std::size_t off = 0;
    for (Tensor* t : ts) {
        std::copy(flat.begin() + off, flat.begin() + off + t->numel(), t->vec().begin());
        off += t->numel();
    }
}

}  // namespace

TEST_CASE("tensor basics") {
    Tensor t({2, 3});
    REQUIRE(t.numel() == 6);
    REQUIRE_THROWS_AS(Tensor({2, 0}), DimensionError);
    REQUIRE_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
    REQUIRE_THROWS_AS(t.reshaped({5}), DimensionError);
    Tensor r = t.reshaped({3, 2});
    REQUIRE(r.dims() == std::vector<std::size_t>{3, 2});

    Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
    Tensor b = Tensor::from_rows({{5, 6}, {7, 8}});
    Tensor c = matmul(a, b);
    REQUIRE(c.at2(0, 0) == 19.0);
    REQUIRE(c.at2(1, 1) == 50.0);
    REQUIRE(max_abs_diff(matmul_tn(transpose2(a), b), c) == 0.0);
    REQUIRE(max_abs_diff(matmul_nt(a, transpose2(b)), c) == 0.0);
}

TEST_CASE("linear identity and arithmetic cases") {
    RngStream rng(42, 1);
    Tensor x = normal_draw(rng, {3, 4});
    Tensor w = Tensor::zeros({4, 4});
    for (std::size_t i = 0; i < 4; ++i) w.at2(i, i) = 1.0;
    Tensor b({4});
    REQUIRE(bit_equal(linear_forward(x, w, b), x));

    Tensor x2 = Tensor::from_rows({{1, 2}});
    Tensor w2 = Tensor::from_rows({{1}, {1}});
    Tensor b2({1}, {1.0});
    Tensor y = linear_forward(x2, w2, b2);
    REQUIRE(y.numel() == 1);
    REQUIRE(y[0] == 4.0);

    REQUIRE_THROWS_AS(linear_forward(x2, w, b), DimensionError);
}

TEST_CASE("linear gradient vs central finite differences") {
    RngStream rng(7, 2);
    Tensor x = normal_draw(rng, {5, 7});
    Tensor w = normal_draw(rng, {7, 3});
    Tensor b = normal_draw(rng, {3});
    Tensor loss_w = normal_draw(rng, {5, 3});

    DifferentiableScalarFn fn;
    fn.value = [&](const std::vector<double>& p) {
        Tensor xx = x, ww = w, bb = b;
        unpack(p, {&xx, &ww, &bb});
        return dot(linear_forward(xx, ww, bb), loss_w);
    };
    fn.gradient = [&](const std::vector<double>& p) {
        Tensor xx = x, ww = w, bb = b;
        unpack(p, {&xx, &ww, &bb});
        Tensor gx(xx.dims()), gw(ww.dims()), gb(bb.dims());
        linear_backward(xx, ww, loss_w, &gx, &gw, &gb);
        return pack({&gx, &gw, &gb});
    };
    REQUIRE(finite_diff_check(fn, pack({&x, &w, &b}), 1e-5) < 1e-6);
}

TEST_CASE("layer_norm cases") {
    Tensor gamma = Tensor::full({4}, 1.0);
    Tensor beta({4});
    Tensor constant = Tensor::full({2, 4}, 3.7);
    Tensor y = layer_norm_forward(constant, gamma, beta, 1e-5);
    for (std::size_t i = 0; i < y.numel(); ++i) REQUIRE(y[i] == 0.0);

    // mean 2, population std 1, eps = 0
    Tensor x = Tensor::from_rows({{1, 3}});
    Tensor g2 = Tensor::full({2}, 1.0), b2({2});
    Tensor y2 = layer_norm_forward(x, g2, b2, 0.0);
    REQUIRE(y2.at2(0, 0) == Catch::Approx(-1.0).margin(1e-12));
    REQUIRE(y2.at2(0, 1) == Catch::Approx(1.0).margin(1e-12));

    // constant input maps exactly to beta after the affine
    Tensor beta3 = Tensor::from_rows({{0.5, -2.0, 3.0, 0.25}}).reshaped({4});
    Tensor y3 = layer_norm_forward(constant, gamma, beta3, 1e-5);
    for (std::size_t i = 0; i < y3.dim(0); ++i)
        for (std::size_t j = 0; j < 4; ++j) REQUIRE(y3.at2(i, j) == beta3[j]);

    REQUIRE_THROWS_AS(layer_norm_forward(x, g2, b2, -1.0), ConfigError);
}

TEST_CASE("layer_norm gradient") {
    RngStream rng(11, 3);
    Tensor x = normal_draw(rng, {3, 8});
    Tensor gamma = normal_draw(rng, {8});
    Tensor beta = normal_draw(rng, {8});
    Tensor loss_w = normal_draw(rng, {3, 8});
    DifferentiableScalarFn fn;
    fn.value = [&](const std::vector<double>& p) {
        Tensor xx = x, gg = gamma, bb = beta;
        unpack(p, {&xx, &gg, &bb});
        return dot(layer_norm_forward(xx, gg, bb, 1e-5), loss_w);
    };
    fn.gradient = [&](const std::vector<double>& p) {
        Tensor xx = x, gg = gamma, bb = beta;
        unpack(p, {&xx, &gg, &bb});
        LayerNormCtx ctx;
        layer_norm_forward(xx, gg, bb, 1e-5, &ctx);
        Tensor gx(xx.dims()), ggrad(gg.dims()), bgrad(bb.dims());
        layer_norm_backward(ctx, gg, loss_w, &gx, &ggrad, &bgrad);
        return pack({&gx, &ggrad, &bgrad});
    };
    REQUIRE(finite_diff_check(fn, pack({&x, &gamma, &beta}), 1e-5) < 1e-6);
}

TEST_CASE("group_norm cases") {
    Tensor gamma = Tensor::full({4}, 1.0);
    Tensor beta({4});
    Tensor constant = Tensor::full({4, 2, 2}, -1.25);
    Tensor y = group_norm_forward(constant, 2, gamma, beta, 1e-5);
    for (std::size_t i = 0; i < y.numel(); ++i) REQUIRE(y[i] == 0.0);

    REQUIRE_THROWS_AS(group_norm_forward(constant, 3, gamma, beta, 1e-5), ConfigError);

    // groups == C reduces to per-channel instance normalization
    RngStream rng(5, 9);
    Tensor x = normal_draw(rng, {4, 3, 3});
    Tensor got = group_norm_forward(x, 4, gamma, beta, 1e-5);
    for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 9; ++i) mean += x.vec()[c * 9 + i];
        mean /= 9.0;
        double var = 0.0;
        for (std::size_t i = 0; i < 9; ++i) {
            var += (x.vec()[c * 9 + i] - mean) * (x.vec()[c * 9 + i] - mean);
        }
        var /= 9.0;
        for (std::size_t i = 0; i < 9; ++i) {
            const double expect = (x.vec()[c * 9 + i] - mean) / std::sqrt(var + 1e-5);
            REQUIRE(got.vec()[c * 9 + i] == Catch::Approx(expect).margin(1e-12));
        }
    }
}

TEST_CASE("group_norm gradient") {
    RngStream rng(13, 4);
    Tensor x = normal_draw(rng, {4, 4, 4});
    Tensor gamma = normal_draw(rng, {4});
    Tensor beta = normal_draw(rng, {4});
    Tensor loss_w = normal_draw(rng, {4, 4, 4});
    DifferentiableScalarFn fn;
    fn.value = [&](const std::vector<double>& p) {
        Tensor xx = x, gg = gamma, bb = beta;
        unpack(p, {&xx, &gg, &bb});
        return dot(group_norm_forward(xx, 2, gg, bb, 1e-5), loss_w);
    };
    fn.gradient = [&](const std::vector<double>& p) {
        Tensor xx = x, gg = gamma, bb = beta;
        unpack(p, {&xx, &gg, &bb});
        GroupNormCtx ctx;
        group_norm_forward(xx, 2, gg, bb, 1e-5, &ctx);
        Tensor gx(xx.dims()), ggrad(gg.dims()), bgrad(bb.dims());
        group_norm_backward(ctx, 2, gg, loss_w, &gx, &ggrad, &bgrad);
        return pack({&gx, &ggrad, &bgrad});
    };
    REQUIRE(finite_diff_check(fn, pack({&x, &gamma, &beta}), 1e-5) < 1e-6);
}

TEST_CASE("silu values against high-precision oracle") {
    Tensor x({3}, {0.0, 1.0, -20.0});
    Tensor y = silu_forward(x);
    REQUIRE(y[0] == 0.0);
    REQUIRE(y[1] == Catch::Approx(0.731058578630004879).epsilon(1e-12));
    REQUIRE(y[2] == Catch::Approx(-4.12230723638040716e-8).epsilon(1e-9));
}

TEST_CASE("dropout contract") {
    RngStream rng(3, 8);
    Tensor x = normal_draw(rng, {10, 10});
    RngStream r1(1, 1);
    REQUIRE(bit_equal(dropout_forward(x, 0.7, Mode::eval, r1), x));
    REQUIRE(bit_equal(dropout_forward(x, 0.0, Mode::train, r1), x));
    REQUIRE_THROWS_AS(dropout_forward(x, 1.0, Mode::train, r1), ConfigError);

    // p = 0.5, 1e6 ones: scaled survivor mean stays near 1
    Tensor ones = Tensor::full({1000, 1000}, 1.0);
    RngStream r2(99, 5);
    Tensor d = dropout_forward(ones, 0.5, Mode::train, r2);
    double mean = 0.0;
    for (std::size_t i = 0; i < d.numel(); ++i) mean += d[i];
    mean /= static_cast<double>(d.numel());
    REQUIRE(std::abs(mean - 1.0) < 0.01);
}

TEST_CASE("cross_attention structure") {
    RngStream rng(21, 6);
    LayerParams params = make_attention(8, GroupTag::core, rng);

    // a single key row receives attention weight one, so all outputs match
    Tensor q = normal_draw(rng, {4, 8});
    Tensor kv1 = normal_draw(rng, {1, 8});
    Tensor out1 = cross_attention_forward(q, kv1, params);
    for (std::size_t i = 1; i < out1.dim(0); ++i)
        for (std::size_t j = 0; j < out1.dim(1); ++j)
            REQUIRE(out1.at2(i, j) == Catch::Approx(out1.at2(0, j)).margin(1e-12));

    // zero query projection gives uniform attention: rows = mean of projected values
    LayerParams zq = params;
    zq.t("Wq") = Tensor::zeros({8, 8});
    Tensor kv = normal_draw(rng, {5, 8});
    AttnCtx ctx;
    Tensor out = cross_attention_forward(q, kv, zq, &ctx);
    Tensor vp = matmul(kv, zq.t("Wv"));
    Tensor mean_row({1, 8});
    for (std::size_t j = 0; j < 8; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < 5; ++i) s += vp.at2(i, j);
        mean_row.at2(0, j) = s / 5.0;
    }
    Tensor expect = matmul(mean_row, zq.t("Wo"));
    for (std::size_t i = 0; i < out.dim(0); ++i)
        for (std::size_t j = 0; j < 8; ++j)
            REQUIRE(out.at2(i, j) == Catch::Approx(expect.at2(0, j)).margin(1e-12));

    // attention rows sum to one
    for (std::size_t i = 0; i < ctx.probs.dim(0); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < ctx.probs.dim(1); ++j) s += ctx.probs.at2(i, j);
        REQUIRE(std::abs(s - 1.0) < 1e-12);
    }

    Tensor bad = normal_draw(rng, {5, 7});
    REQUIRE_THROWS_AS(cross_attention_forward(q, bad, params), DimensionError);
}

TEST_CASE("cross_attention gradient over all four projections") {
    RngStream rng(31, 7);
    Tensor q = normal_draw(rng, {3, 8});
    Tensor kv = normal_draw(rng, {5, 8});
    LayerParams params = make_attention(8, GroupTag::core, rng);
    Tensor loss_w = normal_draw(rng, {3, 8});

    std::vector<const Tensor*> packed = {&q, &kv, &params.t("Wq"), &params.t("Wk"),
                                         &params.t("Wv"), &params.t("Wo")};
    DifferentiableScalarFn fn;
    fn.value = [&](const std::vector<double>& p) {
        Tensor qq = q, kk = kv;
        LayerParams pp = params;
        unpack(p, {&qq, &kk, &pp.t("Wq"), &pp.t("Wk"), &pp.t("Wv"), &pp.t("Wo")});
        return dot(cross_attention_forward(qq, kk, pp), loss_w);
    };
    fn.gradient = [&](const std::vector<double>& p) {
        Tensor qq = q, kk = kv;
        LayerParams pp = params;
        unpack(p, {&qq, &kk, &pp.t("Wq"), &pp.t("Wk"), &pp.t("Wv"), &pp.t("Wo")});
        AttnCtx ctx;
        cross_attention_forward(qq, kk, pp, &ctx);
        Tensor gq(qq.dims()), gkv(kk.dims());
        std::map<std::string, Tensor> gp;
        for (const auto& [k, v] : pp.tensors) gp.emplace(k, Tensor(v.dims()));
        cross_attention_backward(qq, kk, pp, ctx, loss_w, &gq, &gkv, &gp);
        return pack({&gq, &gkv, &gp.at("Wq"), &gp.at("Wk"), &gp.at("Wv"), &gp.at("Wo")});
    };
    REQUIRE(finite_diff_check(fn, pack(packed), 1e-5) < 1e-5);
}

TEST_CASE("upsample_nearest") {
    RngStream rng(17, 10);
    Tensor x = normal_draw(rng, {2, 3, 3});
    REQUIRE(bit_equal(upsample_nearest_forward(x, 1), x));

    Tensor one = Tensor::full({1, 1, 1}, 7.0);
    Tensor up = upsample_nearest_forward(one, 2);
    REQUIRE(up.dims() == std::vector<std::size_t>{1, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(up[i] == 7.0);

    // backward of all-ones = factor^2 per source cell
    Tensor gy = Tensor::full({2, 9, 9}, 1.0);
    Tensor gx({2, 3, 3});
    upsample_nearest_backward(3, gy, &gx);
    for (std::size_t i = 0; i < gx.numel(); ++i) REQUIRE(gx[i] == 9.0);

    REQUIRE_THROWS_AS(upsample_nearest_forward(x, 0), ConfigError);
}

TEST_CASE("rng determinism and moments") {
    RngStream a(123, 7);
    RngStream b(123, 7);
    Tensor ta = normal_draw(a, {50});
    Tensor tb = normal_draw(b, {50});
    REQUIRE(bit_equal(ta, tb));

    RngStream c(123, 7);
    double mean = 0.0, m2 = 0.0;
    const std::size_t n = 1000000;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = c.next_normal();
        mean += x;
        m2 += x * x;
    }
    mean /= static_cast<double>(n);
    const double var = m2 / static_cast<double>(n) - mean * mean;
    REQUIRE(std::abs(mean) < 0.005);
    REQUIRE(std::abs(var - 1.0) < 0.01);
}

TEST_CASE("distinct streams are unrelated") {
    RngStream a(555, 1);
    RngStream b(555, 2);
    const std::size_t n = 100000;
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = a.next_normal();
        ys[i] = b.next_normal();
    }
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += xs[i];
        mb += ys[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (xs[i] - ma) * (ys[i] - mb);
        saa += (xs[i] - ma) * (xs[i] - ma);
        sbb += (ys[i] - mb) * (ys[i] - mb);
    }
    REQUIRE(std::abs(sab / std::sqrt(saa * sbb)) < 0.01);
}

TEST_CASE("finite_diff_check self checks") {
    // silu scalar at 0.3
    DifferentiableScalarFn silu_fn;
    silu_fn.value = [](const std::vector<double>& p) {
        Tensor x({1}, {p[0]});
        return silu_forward(x)[0];
    };
    silu_fn.gradient = [](const std::vector<double>& p) {
        Tensor x({1}, {p[0]});
        Tensor g({1});
        silu_backward(x, Tensor::full({1}, 1.0), &g);
        return std::vector<double>{g[0]};
    };
    REQUIRE(finite_diff_check(silu_fn, {0.3}, 1e-5) < 1e-8);

    // composed linear -> layernorm -> silu chain
    RngStream rng(77, 3);
    Tensor x = normal_draw(rng, {2, 5});
    Tensor w = normal_draw(rng, {5, 6});
    Tensor b = normal_draw(rng, {6});
    Tensor gamma = Tensor::full({6}, 1.0);
    Tensor beta({6});
    Tensor loss_w = normal_draw(rng, {2, 6});
    DifferentiableScalarFn chain;
    chain.value = [&](const std::vector<double>& p) {
        Tensor xx = x, ww = w, bb = b;
        unpack(p, {&xx, &ww, &bb});
        Tensor h = linear_forward(xx, ww, bb);
        Tensor ln = layer_norm_forward(h, gamma, beta, 1e-5);
        return dot(silu_forward(ln), loss_w);
    };
    chain.gradient = [&](const std::vector<double>& p) {
        Tensor xx = x, ww = w, bb = b;
        unpack(p, {&xx, &ww, &bb});
        Tensor h = linear_forward(xx, ww, bb);
        LayerNormCtx ctx;
        Tensor ln = layer_norm_forward(h, gamma, beta, 1e-5, &ctx);
        Tensor g_ln(ln.dims());
        silu_backward(ln, loss_w, &g_ln);
        Tensor g_h(h.dims());
        layer_norm_backward(ctx, gamma, g_ln, &g_h, nullptr, nullptr);
        Tensor gx(xx.dims()), gw(ww.dims()), gb(bb.dims());
        linear_backward(xx, ww, g_h, &gx, &gw, &gb);
        return pack({&gx, &gw, &gb});
    };
    REQUIRE(finite_diff_check(chain, pack({&x, &w, &b}), 1e-5) < 1e-5);

    REQUIRE_THROWS_AS(finite_diff_check(silu_fn, {0.3}, -1.0), ConfigError);
}

TEST_CASE("every layer primitive passes gradcheck at 20 random points") {
    RngStream rng(2024, 1);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        // linear
        {
            Tensor x = normal_draw(rng, {2, 4});
            Tensor w = normal_draw(rng, {4, 3});
            Tensor b = normal_draw(rng, {3});
            Tensor lw = normal_draw(rng, {2, 3});
            DifferentiableScalarFn fn;
            fn.value = [&](const std::vector<double>& p) {
                Tensor xx = x, ww = w, bb = b;
                unpack(p, {&xx, &ww, &bb});
                return dot(linear_forward(xx, ww, bb), lw);
            };
            fn.gradient = [&](const std::vector<double>& p) {
                Tensor xx = x, ww = w, bb = b;
                unpack(p, {&xx, &ww, &bb});
                Tensor gx(xx.dims()), gw(ww.dims()), gb(bb.dims());
                linear_backward(xx, ww, lw, &gx, &gw, &gb);
                return pack({&gx, &gw, &gb});
            };
            worst = std::max(worst, finite_diff_check(fn, pack({&x, &w, &b}), 1e-5));
        }
        // silu
        {
            Tensor x = normal_draw(rng, {3, 3});
            Tensor lw = normal_draw(rng, {3, 3});
            DifferentiableScalarFn fn;
            fn.value = [&](const std::vector<double>& p) {
                Tensor xx = x;
                unpack(p, {&xx});
                return dot(silu_forward(xx), lw);
            };
            fn.gradient = [&](const std::vector<double>& p) {
                Tensor xx = x;
                unpack(p, {&xx});
                Tensor gx(xx.dims());
                silu_backward(xx, lw, &gx);
                return pack({&gx});
            };
            worst = std::max(worst, finite_diff_check(fn, pack({&x}), 1e-5));
        }
        // layer_norm
        {
            Tensor x = normal_draw(rng, {2, 6});
            Tensor g = normal_draw(rng, {6});
            Tensor b = normal_draw(rng, {6});
            Tensor lw = normal_draw(rng, {2, 6});
            DifferentiableScalarFn fn;
            fn.value = [&](const std::vector<double>& p) {
                Tensor xx = x, gg = g, bb = b;
                unpack(p, {&xx, &gg, &bb});
                return dot(layer_norm_forward(xx, gg, bb, 1e-5), lw);
            };
            fn.gradient = [&](const std::vector<double>& p) {
                Tensor xx = x, gg = g, bb = b;
                unpack(p, {&xx, &gg, &bb});
                LayerNormCtx ctx;
                layer_norm_forward(xx, gg, bb, 1e-5, &ctx);
                Tensor gx(xx.dims()), ggr(gg.dims()), gbr(bb.dims());
                layer_norm_backward(ctx, gg, lw, &gx, &ggr, &gbr);
                return pack({&gx, &ggr, &gbr});
            };
            worst = std::max(worst, finite_diff_check(fn, pack({&x, &g, &b}), 1e-5));
        }
        // group_norm
        {
            Tensor x = normal_draw(rng, {4, 2, 2});
            Tensor g = normal_draw(rng, {4});
            Tensor b = normal_draw(rng, {4});
            Tensor lw = normal_draw(rng, {4, 2, 2});
            DifferentiableScalarFn fn;
            fn.value = [&](const std::vector<double>& p) {
                Tensor xx = x, gg = g, bb = b;
                unpack(p, {&xx, &gg, &bb});
                return dot(group_norm_forward(xx, 2, gg, bb, 1e-5), lw);
            };
            fn.gradient = [&](const std::vector<double>& p) {
                Tensor xx = x, gg = g, bb = b;
                unpack(p, {&xx, &gg, &bb});
                GroupNormCtx ctx;
                group_norm_forward(xx, 2, gg, bb, 1e-5, &ctx);
                Tensor gx(xx.dims()), ggr(gg.dims()), gbr(bb.dims());
                group_norm_backward(ctx, 2, gg, lw, &gx, &ggr, &gbr);
                return pack({&gx, &ggr, &gbr});
            };
            worst = std::max(worst, finite_diff_check(fn, pack({&x, &g, &b}), 1e-5));
        }
        // cross_attention
        {
            Tensor q = normal_draw(rng, {2, 4});
            Tensor kv = normal_draw(rng, {3, 4});
            LayerParams params = make_attention(4, GroupTag::core, rng);
            Tensor lw = normal_draw(rng, {2, 4});
            DifferentiableScalarFn fn;
            fn.value = [&](const std::vector<double>& p) {
                Tensor qq = q, kk = kv;
                LayerParams pp = params;
                unpack(p, {&qq, &kk, &pp.t("Wq"), &pp.t("Wk"), &pp.t("Wv"), &pp.t("Wo")});
                return dot(cross_attention_forward(qq, kk, pp), lw);
            };
            fn.gradient = [&](const std::vector<double>& p) {
                Tensor qq = q, kk = kv;
                LayerParams pp = params;
                unpack(p, {&qq, &kk, &pp.t("Wq"), &pp.t("Wk"), &pp.t("Wv"), &pp.t("Wo")});
                AttnCtx ctx;
                cross_attention_forward(qq, kk, pp, &ctx);
                Tensor gq(qq.dims()), gkv(kk.dims());
                std::map<std::string, Tensor> gp;
                for (const auto& [k, v] : pp.tensors) gp.emplace(k, Tensor(v.dims()));
                cross_attention_backward(qq, kk, pp, ctx, lw, &gq, &gkv, &gp);
                return pack({&gq, &gkv, &gp.at("Wq"), &gp.at("Wk"), &gp.at("Wv"), &gp.at("Wo")});
            };
            std::vector<const Tensor*> pt = {&q, &kv, &params.t("Wq"), &params.t("Wk"),
                                             &params.t("Wv"), &params.t("Wo")};
            worst = std::max(worst, finite_diff_check(fn, pack(pt), 1e-5));
        }
    }
    REQUIRE(worst < 1e-5);
}

TEST_CASE("forward ops are pure") {
    RngStream rng(404, 4);
    Tensor x = normal_draw(rng, {3, 5});
    Tensor w = normal_draw(rng, {5, 5});
    Tensor b = normal_draw(rng, {5});
    REQUIRE(bit_equal(linear_forward(x, w, b), linear_forward(x, w, b)));
    Tensor g = Tensor::full({5}, 1.0), be({5});
    REQUIRE(bit_equal(layer_norm_forward(x, g, be, 1e-5), layer_norm_forward(x, g, be, 1e-5)));
    RngStream d1(9, 9), d2(9, 9);
    REQUIRE(bit_equal(dropout_forward(x, 0.3, Mode::train, d1),
                      dropout_forward(x, 0.3, Mode::train, d2)));
}
