#include <doctest.h>

#include <algorithm>

#include "csunet/cst.hpp"
#include "csunet/gradcheck.hpp"

using namespace csunet;

namespace {

// Depthwise identity kernel: refinement becomes a no-op.
Tensor<double> identity_dw_kernel(int64_t d) {
    Tensor<double> k = Tensor<double>::zeros({d, 1, 3, 3});
    for (int64_t c = 0; c < d; ++c) k.ptr()[c * 9 + 4] = 1.0;
    return k;
}

CmsaParams<double> random_cmsa(int64_t d, int64_t heads, Rng& rng, bool identity_refine) {
    CmsaParams<double> p;
    p.heads = heads;
    p.qkv_kind = QkvKind::ConvWindowed;
    p.refine_kind = RefineKind::Depthwise;
    p.q_kernel = gradcheck::rand_tensor({d, 1, 3, 3}, rng, 0.5, false);
    p.k_kernel = gradcheck::rand_tensor({d, 1, 3, 3}, rng, 0.5, false);
    p.v_kernel = gradcheck::rand_tensor({d, 1, 3, 3}, rng, 0.5, false);
    auto mknorm = [&] {
        NormParams<double> n{gradcheck::rand_tensor({d}, rng, 0.2, false),
                             gradcheck::rand_tensor({d}, rng, 0.2, false)};
        for (double& v : n.gamma.data()) v += 1.0;
        return n;
    };
    p.q_norm = mknorm();
    p.k_norm = mknorm();
    p.v_norm = mknorm();
    p.refine_kernel =
        identity_refine ? identity_dw_kernel(d) : gradcheck::rand_tensor({d, 1, 3, 3}, rng, 0.5, false);
    return p;
}

}  // namespace

TEST_CASE("conv_qkv: zero window maps to the norm betas") {
    Rng rng(4);
    const int64_t d = 3, M = 3;
    CmsaParams<double> p = random_cmsa(d, 1, rng, true);
    auto wins = Tensor<double>::zeros({2, M, M, d});
    auto qkv = conv_qkv(wins, p);
    const NormParams<double>* norms[] = {&p.q_norm, &p.k_norm, &p.v_norm};
    for (int s = 0; s < 3; ++s)
        for (int64_t b = 0; b < 2; ++b)
            for (int64_t t = 0; t < M * M; ++t)
                for (int64_t c = 0; c < d; ++c)
                    CHECK(qkv[size_t(s)].at({b, t, c}) ==
                          doctest::Approx(norms[s]->beta.ptr()[c]).epsilon(1e-9));
}

TEST_CASE("conv_qkv: identical windows give identical projections") {
    Rng rng(6);
    const int64_t d = 4, M = 2;
    CmsaParams<double> p = random_cmsa(d, 2, rng, true);
    auto one = gradcheck::rand_tensor({1, M, M, d}, rng, 1.0, false);
    auto two = concat<double>({one, one}, 0);
    auto qkv = conv_qkv(two, p);
    for (int s = 0; s < 3; ++s)
        for (int64_t i = 0; i < M * M * d; ++i)
            CHECK(qkv[size_t(s)].ptr()[i] == qkv[size_t(s)].ptr()[M * M * d + i]);
}

TEST_CASE("conv_qkv per-window independence (no cross-window leakage)") {
    Rng rng(12);
    const int64_t d = 3, M = 2;
    WindowGrid grid{M, 0, 4, 4};
    CmsaParams<double> p = random_cmsa(d, 1, rng, true);
    auto x = gradcheck::rand_tensor({1, 4, 4, d}, rng, 1.0, false);
    auto x2 = x.clone();
    // perturb only the bottom-right window
    for (int64_t y = 2; y < 4; ++y)
        for (int64_t xx = 2; xx < 4; ++xx)
            for (int64_t c = 0; c < d; ++c) x2.ptr()[(y * 4 + xx) * d + c] += 3.0;
    auto qa = conv_qkv(window_partition(x, grid), p);
    auto qb = conv_qkv(window_partition(x2, grid), p);
    for (int64_t w = 0; w < 3; ++w)  // windows 0..2 untouched
        for (int64_t i = 0; i < M * M * d; ++i)
            CHECK(qa[0].ptr()[w * M * M * d + i] == qb[0].ptr()[w * M * M * d + i]);
}

TEST_CASE("conv_qkv windowed equals whole-map conv when one window covers the map") {
    Rng rng(19);
    const int64_t d = 4, M = 3;
    WindowGrid grid{M, 0, M, M};
    CmsaParams<double> pw = random_cmsa(d, 2, rng, true);
    CmsaParams<double> pm = pw;
    pw.qkv_kind = QkvKind::ConvWindowed;
    pm.qkv_kind = QkvKind::ConvWholeMap;
    auto x = gradcheck::rand_tensor({2, M, M, d}, rng, 1.0, false);
    auto a = w_cmsa(x, pw, grid);
    auto b = w_cmsa(x, pm, grid);
    for (int64_t i = 0; i < a.size(); ++i)
        CHECK(a.ptr()[i] == doctest::Approx(b.ptr()[i]).epsilon(1e-12));
}

TEST_CASE("w_cmsa: zero q/k gives uniform attention (window mean of v)") {
    const int64_t d = 2, M = 2;
    WindowGrid grid{M, 0, 2, 2};
    CmsaParams<double> p;
    p.heads = 1;
    p.qkv_kind = QkvKind::Linear;
    p.refine_kind = RefineKind::Depthwise;
    p.refine_kernel = identity_dw_kernel(d);
    // qkv weight: zero q and k columns, identity v columns
    p.qkv_weight = Tensor<double>::zeros({d, 3 * d});
    for (int64_t c = 0; c < d; ++c) p.qkv_weight.ptr()[c * 3 * d + 2 * d + c] = 1.0;
    p.qkv_bias = Tensor<double>::zeros({3 * d});

    Rng rng(3);
    auto x = gradcheck::rand_tensor({1, 2, 2, d}, rng, 1.0, false);
    auto y = w_cmsa(x, p, grid);
    for (int64_t c = 0; c < d; ++c) {
        double mean = 0;
        for (int64_t t = 0; t < 4; ++t) mean += x.ptr()[t * d + c];
        mean /= 4.0;
        for (int64_t t = 0; t < 4; ++t)
            CHECK(y.ptr()[t * d + c] == doctest::Approx(mean).epsilon(1e-9));
    }
}

TEST_CASE("w_cmsa single window matches dense reference attention") {
    Rng rng(77);
    const int64_t d = 4, heads = 2, dh = d / heads, M = 3, S = M * M;
    WindowGrid grid{M, 0, M, M};
    CmsaParams<double> p = random_cmsa(d, heads, rng, true);  // identity refinement
    auto x = gradcheck::rand_tensor({1, M, M, d}, rng, 1.0, false);

    auto qkv = conv_qkv(window_partition(x, grid), p);
    auto got = w_cmsa(x, p, grid);

    // dense O(S^2) reference per head
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t i = 0; i < S; ++i) {
            std::vector<double> logits(size_t(S), 0.0);
            for (int64_t j = 0; j < S; ++j) {
                double dot = 0;
                for (int64_t c = 0; c < dh; ++c)
                    dot += qkv[0].at({0, i, h * dh + c}) * qkv[1].at({0, j, h * dh + c});
                logits[size_t(j)] = dot / std::sqrt(double(dh));
            }
            double mx = *std::max_element(logits.begin(), logits.end()), Z = 0;
            for (double& l : logits) {
                l = std::exp(l - mx);
                Z += l;
            }
            for (int64_t c = 0; c < dh; ++c) {
                double acc = 0;
                for (int64_t j = 0; j < S; ++j)
                    acc += logits[size_t(j)] / Z * qkv[2].at({0, j, h * dh + c});
                const double out = got.at({0, i / M, i % M, h * dh + c});
                CHECK(out == doctest::Approx(acc).epsilon(1e-5));
            }
        }
}

TEST_CASE("shifted-window mask matches brute-force wrap analysis") {
    const int64_t M = 4;
    WindowGrid grid{M, M / 2, 2 * M, 2 * M};
    Tensor<double> mask = sw_attention_mask<double>(grid);
    // independent oracle: tokens may attend iff, per axis, they fall in the
    // same band of {interior, unwrapped tail, wrapped-around rows/cols}
    auto band = [&](int64_t v) {
        if (v < grid.height - M) return 0;
        if (v < grid.height - grid.shift) return 1;
        return 2;
    };
    for (int64_t ty = 0; ty < 2; ++ty)
        for (int64_t tx = 0; tx < 2; ++tx) {
            const int64_t w = ty * 2 + tx;
            for (int64_t i = 0; i < M * M; ++i)
                for (int64_t j = 0; j < M * M; ++j) {
                    const int64_t yi = ty * M + i / M, xi = tx * M + i % M;
                    const int64_t yj = ty * M + j / M, xj = tx * M + j % M;
                    // wrapped iff shifted coordinate maps past the torus seam
                    const bool wrap_yi = yi + grid.shift >= grid.height;
                    const bool wrap_yj = yj + grid.shift >= grid.height;
                    const bool wrap_xi = xi + grid.shift >= grid.width;
                    const bool wrap_xj = xj + grid.shift >= grid.width;
                    const bool allowed = band(yi) == band(yj) && band(xi) == band(xj);
                    // wrap parity must agree with band membership
                    if (allowed) {
                        CHECK(wrap_yi == wrap_yj);
                        CHECK(wrap_xi == wrap_xj);
                    }
                    const double m = mask.at({w, i, j});
                    CHECK(m == (allowed ? 0.0 : -1e9));
                }
        }
}

TEST_CASE("attention rows still sum to one under shift masking") {
    Rng rng(91);
    const int64_t M = 2;
    WindowGrid grid{M, 1, 4, 4};
    Tensor<double> mask = sw_attention_mask<double>(grid);
    auto logits = gradcheck::rand_tensor({grid.windows_per_image(), M * M, M * M}, rng, 2.0, false);
    auto probs = softmax(add(logits, mask));
    for (int64_t r = 0; r < probs.size() / (M * M); ++r) {
        double acc = 0;
        bool any_masked = false;
        for (int64_t c = 0; c < M * M; ++c) {
            const double v = probs.ptr()[r * M * M + c];
            acc += v;
            if (mask.ptr()[r * M * M + c] != 0.0) {
                any_masked = true;
                CHECK(v <= 1e-30);
            }
        }
        CHECK(acc == doctest::Approx(1.0).epsilon(1e-6));
        (void)any_masked;
    }
}

TEST_CASE("dsf: zero input propagates constants; shape holds below kernel size") {
    Rng rng(14);
    const int64_t d = 3;
    DsfParams<double> p;
    p.conv = true;
    p.dw_kernel = gradcheck::rand_tensor({d, 1, 7, 7}, rng, 0.2, false);
    p.norm = {Tensor<double>::full({d}, 1.0), gradcheck::rand_tensor({d}, rng, 0.5, false)};
    p.pw_expand_w = gradcheck::rand_tensor({d, 4 * d}, rng, 0.4, false);
    p.pw_expand_b = gradcheck::rand_tensor({4 * d}, rng, 0.4, false);
    p.pw_project_w = gradcheck::rand_tensor({4 * d, d}, rng, 0.4, false);
    p.pw_project_b = gradcheck::rand_tensor({d}, rng, 0.4, false);

    auto big = dsf(Tensor<double>::zeros({1, 9, 9, d}), p);
    // center pixels see the full (zero) neighborhood: spatially constant there
    for (int64_t c = 0; c < d; ++c)
        CHECK(big.at({0, 4, 4, c}) == doctest::Approx(big.at({0, 3, 4, c})).epsilon(1e-9));

    auto small = dsf(gradcheck::rand_tensor({2, 3, 4, d}, rng, 1.0, false), p);
    REQUIRE(small.shape() == Shape{2, 3, 4, d});
}

TEST_CASE("cst_block: zero branches reduce to the identity") {
    const int64_t d = 3, M = 2;
    WindowGrid grid{M, 0, 4, 4};
    CstBlockParams<double> b;
    b.pre_norm = {Tensor<double>::full({d}, 1.0), Tensor<double>::zeros({d})};
    b.cmsa.heads = 1;
    b.cmsa.qkv_kind = QkvKind::ConvWindowed;
    b.cmsa.refine_kind = RefineKind::Depthwise;
    b.cmsa.q_kernel = Tensor<double>::zeros({d, 1, 3, 3});
    b.cmsa.k_kernel = Tensor<double>::zeros({d, 1, 3, 3});
    b.cmsa.v_kernel = Tensor<double>::zeros({d, 1, 3, 3});
    b.cmsa.q_norm = {Tensor<double>::full({d}, 1.0), Tensor<double>::zeros({d})};
    b.cmsa.k_norm = {Tensor<double>::full({d}, 1.0), Tensor<double>::zeros({d})};
    b.cmsa.v_norm = {Tensor<double>::full({d}, 1.0), Tensor<double>::zeros({d})};
    b.cmsa.refine_kernel = Tensor<double>::zeros({d, 1, 3, 3});
    b.dsf.conv = true;
    b.dsf.dw_kernel = Tensor<double>::zeros({d, 1, 7, 7});
    b.dsf.norm = {Tensor<double>::full({d}, 1.0), Tensor<double>::zeros({d})};
    b.dsf.pw_expand_w = Tensor<double>::zeros({d, 4 * d});
    b.dsf.pw_expand_b = Tensor<double>::zeros({4 * d});
    b.dsf.pw_project_w = Tensor<double>::zeros({4 * d, d});
    b.dsf.pw_project_b = Tensor<double>::zeros({d});
    b.ls_attn = Tensor<double>::full({d}, 1.0);
    b.ls_dsf = Tensor<double>::full({d}, 1.0);

    Rng rng(5);
    auto x = gradcheck::rand_tensor({1, 4, 4, d}, rng, 1.0, false);
    auto y = cst_block(x, b, grid);
    for (int64_t i = 0; i < x.size(); ++i)
        CHECK(y.ptr()[i] == doctest::Approx(x.ptr()[i]).epsilon(1e-12));
}

TEST_CASE("cst_block at layer-scale init is near-identity") {
    Rng rng(21);
    const int64_t d = 4, M = 2;
    WindowGrid grid{M, 0, 4, 4};
    std::vector<Tensor<double>> leaves;
    CstBlockParams<double> b = gradcheck::detail::rand_block(
        d, 2, M, QkvKind::ConvWindowed, RefineKind::Depthwise, true, true, rng, leaves);
    for (double& v : b.ls_attn.data()) v = 1e-6;
    for (double& v : b.ls_dsf.data()) v = 1e-6;
    auto x = gradcheck::rand_tensor({1, 4, 4, d}, rng, 1.0, false);
    auto y = cst_block(x, b, grid);
    double num = 0, den = 0;
    for (int64_t i = 0; i < x.size(); ++i) {
        num += (y.ptr()[i] - x.ptr()[i]) * (y.ptr()[i] - x.ptr()[i]);
        den += x.ptr()[i] * x.ptr()[i];
    }
    CHECK(std::sqrt(num / den) < 1e-4);
}

TEST_CASE("cst_block equals straight-line recomposition of its equations") {
    Rng rng(33);
    const int64_t d = 4, M = 2;
    WindowGrid grid{M, 1, 4, 4};
    std::vector<Tensor<double>> leaves;
    CstBlockParams<double> b = gradcheck::detail::rand_block(
        d, 2, M, QkvKind::ConvWindowed, RefineKind::Depthwise, true, true, rng, leaves);
    auto x = gradcheck::rand_tensor({2, 4, 4, d}, rng, 1.0, false);

    auto got = cst_block(x, b, grid);
    auto zhat = add(x, detail::layer_scale(
                           w_cmsa(layer_norm(x, b.pre_norm.gamma, b.pre_norm.beta), b.cmsa, grid),
                           b.ls_attn));
    auto want = add(zhat, detail::layer_scale(dsf(zhat, b.dsf), b.ls_dsf));
    for (int64_t i = 0; i < got.size(); ++i) CHECK(got.ptr()[i] == want.ptr()[i]);
}

TEST_CASE("cst_layer chains an unshifted and a shifted block") {
    Rng rng(44);
    const int64_t d = 4, M = 2;
    WindowGrid grid{M, 0, 4, 4};
    std::vector<Tensor<double>> leaves;
    std::array<CstBlockParams<double>, 2> blocks = {
        gradcheck::detail::rand_block(d, 2, M, QkvKind::ConvWindowed, RefineKind::Depthwise, true,
                                      true, rng, leaves),
        gradcheck::detail::rand_block(d, 2, M, QkvKind::ConvWindowed, RefineKind::Depthwise, true,
                                      true, rng, leaves)};
    auto x = gradcheck::rand_tensor({1, 4, 4, d}, rng, 1.0, false);
    auto got = cst_layer(x, blocks, grid);
    WindowGrid g0 = grid, g1 = grid;
    g0.shift = 0;
    g1.shift = M / 2;
    auto want = cst_block(cst_block(x, blocks[0], g0), blocks[1], g1);
    for (int64_t i = 0; i < got.size(); ++i) CHECK(got.ptr()[i] == want.ptr()[i]);
}

TEST_CASE("finite-difference checks for composite blocks") {
    for (const char* scope :
         {"w_cmsa", "w_cmsa_shifted", "w_cmsa_linear", "dsf", "mlp_ffn", "cst_block"}) {
        gradcheck::Report r = gradcheck::run(scope, 57);
        INFO(r.name, " err=", r.max_err);
        CHECK(r.max_err < gradcheck::kTolComposite);
    }
}
