#pragma once

#include <functional>

#include "csunet/loss.hpp"
#include "csunet/network.hpp"
#include "csunet/rng.hpp"

namespace csunet::gradcheck {

struct Report {
    std::string name;
    double max_err = 0.0;
    double tol = 0.0;
    bool pass() const { return max_err < tol; }
};

inline Tensor<double> rand_tensor(Shape shape, Rng& rng, double scale = 0.5, bool leaf = true) {
    Tensor<double> t = leaf ? Tensor<double>::param(shape) : Tensor<double>::zeros(shape);
    for (double& v : t.data()) v = rng.uniform(-scale, scale);
    return t;
}

// Max discrepancy between tape gradients and 64-bit central differences over
// every element of every leaf. Error metric |a-n| / max(1, |a|, |n|): absolute
// for small gradients, relative for large ones.
inline double max_error(const std::function<Tensor<double>()>& f,
                        std::vector<Tensor<double>> leaves, double eps = 1e-5) {
    std::vector<std::vector<double>> analytic;
    {
        TapeScope<double> scope;
        Tensor<double> loss = f();
        for (auto& l : leaves) l.zero_grad();
        scope.tape.backward(loss);
        for (auto& l : leaves) analytic.emplace_back(l.grad().begin(), l.grad().end());
    }
    double worst = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        double* p = leaves[li].ptr();
        for (int64_t i = 0; i < leaves[li].size(); ++i) {
            const double keep = p[i];
            p[i] = keep + eps;
            const double f2 = f().item();
            p[i] = keep - eps;
            const double f1 = f().item();
            p[i] = keep;
            const double numeric = (f2 - f1) / (2.0 * eps);
            const double a = analytic[li][size_t(i)];
            const double err =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

namespace detail {

// Scalar readout with fixed pseudo-random weights so every output element
// matters. Seeded from the shape only: repeated calls inside one finite-
// difference sweep see identical weights.
inline Tensor<double> weighted_sum(const Tensor<double>& out, Rng& /*unused*/) {
    Rng wr(0xC0FFEEull ^ uint64_t(out.size() * 2654435761ull));
    Tensor<double> w = rand_tensor(out.shape(), wr, 1.0, /*leaf=*/false);
    return sum(mul(out, w));
}

inline CstBlockParams<double> rand_block(int64_t d, int64_t heads, int64_t M, QkvKind qkv,
                                         RefineKind refine, bool bias, bool conv_ffn, Rng& rng,
                                         std::vector<Tensor<double>>& leaves) {
    auto mk = [&](Shape s, double scale = 0.3) {
        Tensor<double> t = rand_tensor(std::move(s), rng, scale);
        leaves.push_back(t);
        return t;
    };
    auto mknorm = [&](int64_t n) {
        NormParams<double> np{mk({n}, 0.2), mk({n}, 0.2)};
        // keep gains near 1 so the normalized signal stays well-scaled
        for (double& v : np.gamma.data()) v += 1.0;
        return np;
    };
    CstBlockParams<double> b;
    b.pre_norm = mknorm(d);
    b.cmsa.heads = heads;
    b.cmsa.qkv_kind = qkv;
    b.cmsa.refine_kind = refine;
    if (qkv == QkvKind::Linear) {
        b.cmsa.qkv_weight = mk({d, 3 * d});
        b.cmsa.qkv_bias = mk({3 * d});
    } else {
        b.cmsa.q_kernel = mk({d, 1, 3, 3});
        b.cmsa.k_kernel = mk({d, 1, 3, 3});
        b.cmsa.v_kernel = mk({d, 1, 3, 3});
        b.cmsa.q_norm = mknorm(d);
        b.cmsa.k_norm = mknorm(d);
        b.cmsa.v_norm = mknorm(d);
    }
    if (bias) b.cmsa.bias_table = mk({(2 * M - 1) * (2 * M - 1), heads});
    if (refine == RefineKind::Depthwise) {
        b.cmsa.refine_kernel = mk({d, 1, 3, 3});
    } else {
        b.cmsa.proj_weight = mk({d, d});
        b.cmsa.proj_bias = mk({d});
    }
    b.dsf.conv = conv_ffn;
    if (conv_ffn) b.dsf.dw_kernel = mk({d, 1, 7, 7}, 0.1);
    b.dsf.norm = mknorm(d);
    b.dsf.pw_expand_w = mk({d, 4 * d});
    b.dsf.pw_expand_b = mk({4 * d});
    b.dsf.pw_project_w = mk({4 * d, d});
    b.dsf.pw_project_b = mk({d});
    b.ls_attn = mk({d}, 0.5);
    b.ls_dsf = mk({d}, 0.5);
    return b;
}

}  // namespace detail

inline constexpr double kTolElementary = 1e-6;
inline constexpr double kTolComposite = 1e-5;
inline constexpr double kTolFull = 1e-4;

inline std::vector<std::string> scopes() {
    return {"add",       "mul",           "matmul",        "linear",          "gelu",
            "softmax",   "layer_norm",    "concat",        "slice",           "permute",
            "gather_rows", "conv2d",      "conv2d_grouped", "depthwise_conv", "conv_transpose2d",
            "window_partition", "cyclic_shift", "space_to_depth", "depth_to_space",
            "cross_entropy", "soft_dice", "combined_loss", "w_cmsa",          "w_cmsa_shifted",
            "w_cmsa_linear", "dsf",       "mlp_ffn",       "cst_block",       "full"};
}

inline Report run(const std::string& scope, uint64_t seed) {
    Rng rng(seed);
    Report rep;
    rep.name = scope;
    rep.tol = kTolElementary;

    auto simple = [&](std::vector<Tensor<double>> leaves,
                      std::function<Tensor<double>()> f) { rep.max_err = max_error(f, leaves); };

    if (scope == "add" || scope == "mul") {
        Tensor<double> a = rand_tensor({2, 3, 4}, rng);
        Tensor<double> b = rand_tensor({3, 1}, rng);  // broadcast path
        simple({a, b}, [&, scope] {
            Tensor<double> o = scope == "add" ? add(a, b) : mul(a, b);
            return detail::weighted_sum(o, rng);
        });
    } else if (scope == "matmul") {
        Tensor<double> a = rand_tensor({2, 2, 3, 4}, rng);
        Tensor<double> b = rand_tensor({1, 2, 4, 5}, rng);  // batch-broadcast
        simple({a, b}, [&] { return detail::weighted_sum(matmul(a, b), rng); });
    } else if (scope == "linear") {
        Tensor<double> x = rand_tensor({3, 5, 4}, rng);
        Tensor<double> w = rand_tensor({4, 6}, rng);
        Tensor<double> b = rand_tensor({6}, rng);
        simple({x, w, b}, [&] { return detail::weighted_sum(linear(x, w, b), rng); });
    } else if (scope == "gelu") {
        Tensor<double> x = rand_tensor({4, 7}, rng, 2.0);
        simple({x}, [&] { return detail::weighted_sum(gelu(x), rng); });
    } else if (scope == "softmax") {
        Tensor<double> x = rand_tensor({3, 6}, rng, 2.0);
        simple({x}, [&] { return detail::weighted_sum(softmax(x), rng); });
    } else if (scope == "layer_norm") {
        Tensor<double> x = rand_tensor({2, 5, 6}, rng);
        Tensor<double> g = rand_tensor({6}, rng);
        Tensor<double> b = rand_tensor({6}, rng);
        simple({x, g, b}, [&] { return detail::weighted_sum(layer_norm(x, g, b), rng); });
    } else if (scope == "concat") {
        Tensor<double> a = rand_tensor({2, 3, 4}, rng);
        Tensor<double> b = rand_tensor({2, 2, 4}, rng);
        simple({a, b}, [&] { return detail::weighted_sum(concat<double>({a, b}, 1), rng); });
    } else if (scope == "slice") {
        Tensor<double> x = rand_tensor({3, 6, 5}, rng);
        simple({x}, [&] { return detail::weighted_sum(slice(x, {1, 2, 0}, {2, 3, 5}), rng); });
    } else if (scope == "permute") {
        Tensor<double> x = rand_tensor({2, 3, 4, 5}, rng);
        simple({x}, [&] { return detail::weighted_sum(permute(x, {3, 1, 0, 2}), rng); });
    } else if (scope == "gather_rows") {
        Tensor<double> t = rand_tensor({6, 3}, rng);
        std::vector<int64_t> idx = {0, 5, 2, 2, 1, 4, 0};
        simple({t}, [&] { return detail::weighted_sum(gather_rows(t, idx), rng); });
    } else if (scope == "conv2d") {
        Tensor<double> x = rand_tensor({2, 3, 6, 7}, rng);
        Tensor<double> w = rand_tensor({4, 3, 3, 3}, rng);
        Tensor<double> b = rand_tensor({4}, rng);
        simple({x, w, b},
               [&] { return detail::weighted_sum(conv2d(x, w, b, 2, 1), rng); });
    } else if (scope == "conv2d_grouped") {
        Tensor<double> x = rand_tensor({2, 4, 5, 5}, rng);
        Tensor<double> w = rand_tensor({6, 2, 3, 3}, rng);  // groups=2
        Tensor<double> b = rand_tensor({6}, rng);
        simple({x, w, b},
               [&] { return detail::weighted_sum(conv2d(x, w, b, 1, 1, 2), rng); });
    } else if (scope == "depthwise_conv") {
        Tensor<double> x = rand_tensor({2, 5, 6, 6}, rng);
        Tensor<double> w = rand_tensor({5, 1, 3, 3}, rng);
        simple({x, w},
               [&] { return detail::weighted_sum(conv2d(x, w, {}, 1, 1, 5), rng); });
    } else if (scope == "conv_transpose2d") {
        Tensor<double> x = rand_tensor({2, 4, 3, 3}, rng);
        Tensor<double> w = rand_tensor({4, 3, 2, 2}, rng);
        Tensor<double> b = rand_tensor({3}, rng);
        simple({x, w, b},
               [&] { return detail::weighted_sum(conv_transpose2d(x, w, b, 2), rng); });
    } else if (scope == "window_partition") {
        WindowGrid grid{2, 0, 4, 6};
        Tensor<double> x = rand_tensor({2, 4, 6, 3}, rng);
        simple({x}, [&] { return detail::weighted_sum(window_partition(x, grid), rng); });
    } else if (scope == "cyclic_shift") {
        Tensor<double> x = rand_tensor({2, 4, 5, 3}, rng);
        simple({x}, [&] { return detail::weighted_sum(cyclic_shift(x, -1, 2), rng); });
    } else if (scope == "space_to_depth") {
        Tensor<double> x = rand_tensor({2, 4, 6, 3}, rng);
        simple({x}, [&] { return detail::weighted_sum(space_to_depth2(x), rng); });
    } else if (scope == "depth_to_space") {
        Tensor<double> x = rand_tensor({2, 3, 2, 8}, rng);
        simple({x}, [&] { return detail::weighted_sum(depth_to_space(x, 2), rng); });
    } else if (scope == "cross_entropy" || scope == "soft_dice" || scope == "combined_loss") {
        const int64_t K = 3;
        std::vector<int32_t> labels;
        for (int64_t i = 0; i < 24; ++i) labels.push_back(int32_t(rng.uniform_int(0, K - 1)));
        if (scope == "combined_loss") {
            Tensor<double> logits = rand_tensor({2, K, 3, 4}, rng, 2.0);
            simple({logits}, [&] { return combined_loss(logits, labels); });
        } else {
            Tensor<double> logits = rand_tensor({24, K}, rng, 2.0);
            simple({logits}, [&, scope] {
                return scope == "cross_entropy" ? cross_entropy_mean(logits, labels)
                                                : soft_dice_loss(softmax(logits), labels);
            });
        }
    } else if (scope == "w_cmsa" || scope == "w_cmsa_shifted" || scope == "w_cmsa_linear" ||
               scope == "cst_block") {
        rep.tol = kTolComposite;
        const int64_t d = 4, M = 2;
        WindowGrid grid{M, scope == "w_cmsa_shifted" ? M / 2 : 0, 4, 4};
        const QkvKind qkv = scope == "w_cmsa_linear" ? QkvKind::Linear : QkvKind::ConvWindowed;
        std::vector<Tensor<double>> leaves;
        CstBlockParams<double> blk = detail::rand_block(
            d, 2, M, qkv, scope == "w_cmsa_linear" ? RefineKind::Linear : RefineKind::Depthwise,
            /*bias=*/true, /*conv_ffn=*/true, rng, leaves);
        Tensor<double> x = rand_tensor({2, 4, 4, d}, rng);
        leaves.push_back(x);
        simple(leaves, [&, scope] {
            Tensor<double> o = scope == "cst_block" ? cst_block(x, blk, grid)
                                                    : w_cmsa(x, blk.cmsa, grid);
            return detail::weighted_sum(o, rng);
        });
    } else if (scope == "dsf" || scope == "mlp_ffn") {
        rep.tol = kTolComposite;
        const int64_t d = 5;
        std::vector<Tensor<double>> leaves;
        CstBlockParams<double> blk =
            detail::rand_block(d, 1, 2, QkvKind::ConvWindowed, RefineKind::Depthwise, false,
                               scope == "dsf", rng, leaves);
        Tensor<double> x = rand_tensor({2, 4, 4, d}, rng);
        leaves.push_back(x);
        // unused attention leaves simply check out at zero gradient
        simple(leaves, [&] { return detail::weighted_sum(dsf(x, blk.dsf), rng); });
    } else if (scope == "full") {
        rep.tol = kTolFull;
        ModelConfig cfg;
        cfg.base_dim = 8;
        cfg.input_h = cfg.input_w = 64;
        cfg.window = 2;
        cfg.num_classes = 3;
        cfg.in_channels = 3;
        Model<double> model(cfg);
        model.init_weights(seed + 1);
        Tensor<double> img = rand_tensor({1, 3, 64, 64}, rng, 0.5, /*leaf=*/false);
        for (double& v : img.data()) v = std::abs(v);
        std::vector<int32_t> labels;
        for (int64_t i = 0; i < 64 * 64; ++i)
            labels.push_back(int32_t(rng.uniform_int(0, cfg.num_classes - 1)));

        auto f = [&] { return combined_loss(model.forward(img), labels); };
        std::map<std::string, std::vector<double>> analytic;
        {
            TapeScope<double> scope_;
            Tensor<double> loss = f();
            model.params().zero_grads();
            scope_.tape.backward(loss);
            for (const auto& [k, v] : model.params().map())
                analytic.emplace(k, std::vector<double>(
                                        const_cast<Tensor<double>&>(v).grad().begin(),
                                        const_cast<Tensor<double>&>(v).grad().end()));
        }
        // 20 sampled parameter entries, finite differences on each.
        const auto& order = model.params().order();
        const double eps = 1e-5;
        for (int s = 0; s < 20; ++s) {
            const std::string& name = order[size_t(rng.uniform_int(0, int64_t(order.size()) - 1))];
            Tensor<double>& p = model.params().at(name);
            const int64_t i = rng.uniform_int(0, p.size() - 1);
            const double keep = p.ptr()[i];
            p.ptr()[i] = keep + eps;
            const double f2 = f().item();
            p.ptr()[i] = keep - eps;
            const double f1 = f().item();
            p.ptr()[i] = keep;
            const double numeric = (f2 - f1) / (2.0 * eps);
            const double a = analytic.at(name)[size_t(i)];
            rep.max_err = std::max(
                rep.max_err, std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)}));
        }
    } else {
        throw UsageError("gradcheck: unknown scope '" + scope + "'");
    }
    return rep;
}

inline std::vector<Report> run_all(uint64_t seed) {
    std::vector<Report> out;
    for (const std::string& s : scopes()) out.push_back(run(s, seed));
    return out;
}

}  // namespace csunet::gradcheck
