#pragma once

#include <map>
#include <string>

#include "csunet/cst.hpp"
#include "csunet/rng.hpp"

namespace csunet {

// Full architecture hyperparameters. Defaults are the final model
// (ablation method 6) at 224x224.
struct ModelConfig {
    int64_t in_channels = 3;
    int64_t num_classes = 9;
    int64_t base_dim = 96;  // C; stage s runs at C*2^s, bottleneck at C*2^3
    int64_t input_h = 224;
    int64_t input_w = 224;
    std::vector<int64_t> depths = {2, 2, 2};  // encoder CST blocks per stage
    int64_t bottleneck_depth = 2;
    std::vector<int64_t> heads = {};  // per stage + bottleneck; empty = derive from base_dim
    int64_t window = 7;               // M

    // Ablation toggles (Emb/Proj/Pos/Att/DSF/SC).
    bool conv_embedding = true;
    bool conv_projection = true;
    bool use_bias_table = false;
    bool conv_attention_refine = true;
    bool use_dsf = true;
    bool use_sc = true;

    int64_t stage_dim(int64_t s) const { return base_dim << s; }

    std::vector<int64_t> resolved_heads() const {
        if (!heads.empty()) return heads;
        std::vector<int64_t> h;
        for (int64_t s = 0; s < 4; ++s) h.push_back(std::max<int64_t>(1, stage_dim(s) / 32));
        return h;
    }

    void validate() const {
        if (in_channels < 1 || num_classes < 1 || base_dim < 1 || window < 1)
            throw ConfigError("model: in_channels/num_classes/base_dim/window must be positive");
        if (depths.size() != 3) throw ConfigError("model: depths must list 3 encoder stages");
        if (input_h % 4 != 0 || input_w % 4 != 0)
            throw ConfigError("model: input extents must be divisible by 4");
        const auto hd = resolved_heads();
        if (hd.size() != 4) throw ConfigError("model: heads must list 4 values");
        for (int64_t s = 0; s < 4; ++s) {
            const int64_t d = stage_dim(s);
            const int64_t he = (input_h / 4) >> s, we = (input_w / 4) >> s;
            if (he < 1 || we < 1 || he % window != 0 || we % window != 0)
                throw ConfigError("model: stage " + std::to_string(s) + " extent " +
                                  std::to_string(he) + "x" + std::to_string(we) +
                                  " not divisible by window " + std::to_string(window));
            if (d % hd[size_t(s)] != 0)
                throw ConfigError("model: stage dim " + std::to_string(d) +
                                  " not divisible by heads " + std::to_string(hd[size_t(s)]));
        }
        if (base_dim % 2 != 0) throw ConfigError("model: base_dim must be even");
    }
};

// Named parameter set; names are stable dotted paths used by checkpoints,
// gradient checks and the optimizer.
template <typename T>
class ParamStore {
public:
    enum class Init { Zero, One, LayerScale, TruncNormal02, KaimingConv };

    Tensor<T> add(const std::string& name, Shape shape, Init init) {
        if (map_.count(name)) throw UsageError("duplicate parameter name " + name);
        Tensor<T> t = Tensor<T>::param(std::move(shape));
        map_.emplace(name, t);
        order_.push_back(name);
        inits_.push_back(init);
        return t;
    }
    Tensor<T>& at(const std::string& name) {
        auto it = map_.find(name);
        if (it == map_.end()) throw UsageError("unknown parameter " + name);
        return it->second;
    }
    const std::map<std::string, Tensor<T>>& map() const { return map_; }
    const std::vector<std::string>& order() const { return order_; }

    int64_t count() const {
        int64_t n = 0;
        for (const auto& [k, v] : map_) n += v.size();
        return n;
    }

    void initialize(uint64_t seed) {
        Rng rng(seed);
        for (size_t i = 0; i < order_.size(); ++i) {
            Tensor<T>& t = map_.at(order_[i]);
            switch (inits_[i]) {
                case Init::Zero:
                    for (T& v : t.data()) v = T(0);
                    break;
                case Init::One:
                    for (T& v : t.data()) v = T(1);
                    break;
                case Init::LayerScale:
                    for (T& v : t.data()) v = T(1e-6);
                    break;
                case Init::TruncNormal02:
                    for (T& v : t.data()) v = T(rng.trunc_normal(0.02));
                    break;
                case Init::KaimingConv: {
                    // fan_in = (Cin/groups)*kh*kw == product of trailing dims
                    int64_t fan = 1;
                    for (size_t j = 1; j < t.rank(); ++j) fan *= t.shape()[j];
                    const double std = std::sqrt(2.0 / double(fan));
                    for (T& v : t.data()) v = T(rng.normal(0.0, std));
                    break;
                }
            }
        }
    }

    void zero_grads() {
        for (auto& [k, v] : map_) v.zero_grad();
    }

private:
    std::map<std::string, Tensor<T>> map_;
    std::vector<std::string> order_;
    std::vector<Init> inits_;
};

namespace net {

template <typename T>
struct ConvP {
    Tensor<T> w, b;
};
template <typename T>
struct LinearP {
    Tensor<T> w, b;
};

template <typename T>
struct EmbeddingP {
    bool conv = true;
    ConvP<T> c1, c2, c3, c4;
    NormParams<T> mid_norm;   // after the second conv (GELU+LN step)
    LinearP<T> patch;         // linear mode
    NormParams<T> norm;       // post-embedding LN (linear mode)
    Tensor<T> pos;            // absolute position embedding, if any
};

template <typename T>
struct MergeP {
    NormParams<T> norm;   // over 4c
    Tensor<T> reduce_w;   // [4c,2c], no bias
};

template <typename T>
struct UpP {
    bool conv = true;
    NormParams<T> norm;       // over d
    ConvP<T> deconv;          // [d,d/2,2,2] transpose conv
    Tensor<T> expand_w;       // [d,2d] patch-expand alternative
    NormParams<T> out_norm;   // over d/2 (patch-expand alternative)
};

template <typename T>
struct FuseP {
    bool sc = true;
    ConvP<T> conv1, conv2;  // SC module: 3x3 2c->c, 3x3 c->c
    LinearP<T> back;        // plain concat fusion: linear 2c->c
};

template <typename T>
struct HeadP {
    NormParams<T> norm;         // over C
    Tensor<T> expand_w;         // [C,16C], no bias
    NormParams<T> expand_norm;  // over C after depth-to-space
    LinearP<T> classifier;      // [C,num_classes]
};

}  // namespace net

// CS-Unet: convolutional token embedding, 3 encoder stages with patch
// merging, 2-block bottleneck, symmetric decoder, 4x patch expansion head.
template <typename T>
class Model {
public:
    using Init = typename ParamStore<T>::Init;

    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        build();
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    void init_weights(uint64_t seed) { params_.initialize(seed); }

    // img [N,in_channels,H,W] -> logits [N,num_classes,H,W]
    Tensor<T> forward(const Tensor<T>& img) const {
        if (img.rank() != 4 || img.dim(1) != cfg_.in_channels || img.dim(2) != cfg_.input_h ||
            img.dim(3) != cfg_.input_w)
            throw ShapeError("forward: expected [N," + std::to_string(cfg_.in_channels) + "," +
                             std::to_string(cfg_.input_h) + "," + std::to_string(cfg_.input_w) +
                             "], got " + shape_str(img.shape()));
        Tensor<T> x = embed_forward(img);  // [N,H/4,W/4,C]
        std::vector<Tensor<T>> skips;
        for (size_t s = 0; s < 3; ++s) {
            x = run_blocks(x, enc_[s]);
            skips.push_back(x);
            x = merge_forward(x, merges_[s]);
        }
        x = run_blocks(x, bottleneck_, /*force_no_shift=*/true);
        for (size_t s = 0; s < 3; ++s) {
            x = up_forward(x, ups_[s]);
            x = fuse_forward(x, skips[2 - s], fuses_[s]);
            x = run_blocks(x, dec_[s]);
        }
        return head_forward(x);
    }

    std::pair<Tensor<T>, std::vector<Tensor<T>>> encoder_forward(const Tensor<T>& img) const {
        Tensor<T> x = embed_forward(img);
        std::vector<Tensor<T>> skips;
        for (size_t s = 0; s < 3; ++s) {
            x = run_blocks(x, enc_[s]);
            skips.push_back(x);
            x = merge_forward(x, merges_[s]);
        }
        x = run_blocks(x, bottleneck_, true);
        return {x, skips};
    }

private:
    struct StageBlocks {
        std::vector<CstBlockParams<T>> blocks;
        WindowGrid grid;  // shift filled per block at run time
    };

    ModelConfig cfg_;
    ParamStore<T> params_;
    net::EmbeddingP<T> embed_;
    std::array<StageBlocks, 3> enc_;
    std::array<net::MergeP<T>, 3> merges_;
    StageBlocks bottleneck_;
    std::array<net::UpP<T>, 3> ups_;
    std::array<net::FuseP<T>, 3> fuses_;
    std::array<StageBlocks, 3> dec_;
    net::HeadP<T> head_;

    NormParams<T> add_norm(const std::string& prefix, int64_t d) {
        return {params_.add(prefix + ".gamma", {d}, Init::One),
                params_.add(prefix + ".beta", {d}, Init::Zero)};
    }
    net::ConvP<T> add_conv(const std::string& prefix, int64_t cout, int64_t cin, int64_t k) {
        return {params_.add(prefix + ".w", {cout, cin, k, k}, Init::KaimingConv),
                params_.add(prefix + ".b", {cout}, Init::Zero)};
    }
    net::LinearP<T> add_linear(const std::string& prefix, int64_t in, int64_t out) {
        return {params_.add(prefix + ".w", {in, out}, Init::TruncNormal02),
                params_.add(prefix + ".b", {out}, Init::Zero)};
    }

    QkvKind qkv_kind() const {
        if (cfg_.conv_projection) return QkvKind::ConvWindowed;
        return cfg_.conv_embedding ? QkvKind::ConvWholeMap : QkvKind::Linear;
    }

    CstBlockParams<T> add_block(const std::string& prefix, int64_t d, int64_t heads) {
        CstBlockParams<T> b;
        b.pre_norm = add_norm(prefix + ".pre_norm", d);
        b.cmsa.heads = heads;
        b.cmsa.qkv_kind = qkv_kind();
        b.cmsa.refine_kind =
            cfg_.conv_attention_refine ? RefineKind::Depthwise : RefineKind::Linear;
        if (b.cmsa.qkv_kind == QkvKind::Linear) {
            b.cmsa.qkv_weight = params_.add(prefix + ".cmsa.qkv.w", {d, 3 * d}, Init::TruncNormal02);
            b.cmsa.qkv_bias = params_.add(prefix + ".cmsa.qkv.b", {3 * d}, Init::Zero);
        } else {
            b.cmsa.q_kernel = params_.add(prefix + ".cmsa.q_kernel", {d, 1, 3, 3}, Init::KaimingConv);
            b.cmsa.k_kernel = params_.add(prefix + ".cmsa.k_kernel", {d, 1, 3, 3}, Init::KaimingConv);
            b.cmsa.v_kernel = params_.add(prefix + ".cmsa.v_kernel", {d, 1, 3, 3}, Init::KaimingConv);
            b.cmsa.q_norm = add_norm(prefix + ".cmsa.q_norm", d);
            b.cmsa.k_norm = add_norm(prefix + ".cmsa.k_norm", d);
            b.cmsa.v_norm = add_norm(prefix + ".cmsa.v_norm", d);
        }
        if (cfg_.use_bias_table) {
            const int64_t M = cfg_.window;
            b.cmsa.bias_table = params_.add(prefix + ".cmsa.bias_table",
                                            {(2 * M - 1) * (2 * M - 1), heads}, Init::TruncNormal02);
        }
        if (b.cmsa.refine_kind == RefineKind::Depthwise) {
            b.cmsa.refine_kernel =
                params_.add(prefix + ".cmsa.refine_kernel", {d, 1, 3, 3}, Init::KaimingConv);
        } else {
            auto p = add_linear(prefix + ".cmsa.proj", d, d);
            b.cmsa.proj_weight = p.w;
            b.cmsa.proj_bias = p.b;
        }
        b.dsf.conv = cfg_.use_dsf;
        if (b.dsf.conv)
            b.dsf.dw_kernel = params_.add(prefix + ".dsf.dw_kernel", {d, 1, 7, 7}, Init::KaimingConv);
        b.dsf.norm = add_norm(prefix + ".dsf.norm", d);
        auto e = add_linear(prefix + ".dsf.pw_expand", d, 4 * d);
        auto pr = add_linear(prefix + ".dsf.pw_project", 4 * d, d);
        b.dsf.pw_expand_w = e.w;
        b.dsf.pw_expand_b = e.b;
        b.dsf.pw_project_w = pr.w;
        b.dsf.pw_project_b = pr.b;
        b.ls_attn = params_.add(prefix + ".ls_attn", {d}, Init::LayerScale);
        b.ls_dsf = params_.add(prefix + ".ls_dsf", {d}, Init::LayerScale);
        return b;
    }

    void build() {
        const int64_t C = cfg_.base_dim;
        const auto heads = cfg_.resolved_heads();
        embed_.conv = cfg_.conv_embedding;
        if (embed_.conv) {
            embed_.c1 = add_conv("embed.conv1", C / 2, cfg_.in_channels, 3);
            embed_.c2 = add_conv("embed.conv2", C / 2, C / 2, 3);
            embed_.mid_norm = add_norm("embed.norm", C / 2);
            embed_.c3 = add_conv("embed.conv3", C, C / 2, 3);
            embed_.c4 = add_conv("embed.conv4", C, C, 3);
        } else {
            embed_.patch = add_linear("embed.patch", 16 * cfg_.in_channels, C);
            embed_.norm = add_norm("embed.norm", C);
        }
        if (cfg_.use_bias_table && !cfg_.conv_embedding)
            embed_.pos = params_.add("embed.pos", {(cfg_.input_h / 4) * (cfg_.input_w / 4), C},
                                     Init::TruncNormal02);

        for (int64_t s = 0; s < 3; ++s) {
            const int64_t d = cfg_.stage_dim(s);
            StageBlocks st;
            st.grid = {cfg_.window, 0, (cfg_.input_h / 4) >> s, (cfg_.input_w / 4) >> s};
            for (int64_t i = 0; i < cfg_.depths[size_t(s)]; ++i)
                st.blocks.push_back(
                    add_block("enc" + std::to_string(s) + ".block" + std::to_string(i), d,
                              heads[size_t(s)]));
            enc_[size_t(s)] = std::move(st);
            merges_[size_t(s)] = {
                add_norm("enc" + std::to_string(s) + ".merge.norm", 4 * d),
                params_.add("enc" + std::to_string(s) + ".merge.reduce.w", {4 * d, 2 * d},
                            Init::TruncNormal02)};
        }

        bottleneck_.grid = {cfg_.window, 0, (cfg_.input_h / 4) >> 3, (cfg_.input_w / 4) >> 3};
        for (int64_t i = 0; i < cfg_.bottleneck_depth; ++i)
            bottleneck_.blocks.push_back(
                add_block("bottleneck.block" + std::to_string(i), cfg_.stage_dim(3), heads[3]));

        for (int64_t s = 0; s < 3; ++s) {
            const int64_t d = cfg_.stage_dim(3 - s);  // pre-upsample width
            const int64_t c = d / 2;
            const std::string pre = "dec" + std::to_string(s);
            net::UpP<T> up;
            up.conv = cfg_.use_sc;
            up.norm = add_norm(pre + ".up.norm", d);
            if (up.conv) {
                up.deconv.w = params_.add(pre + ".up.deconv.w", {d, c, 2, 2}, Init::KaimingConv);
                up.deconv.b = params_.add(pre + ".up.deconv.b", {c}, Init::Zero);
            } else {
                up.expand_w = params_.add(pre + ".up.expand.w", {d, 2 * d}, Init::TruncNormal02);
                up.out_norm = add_norm(pre + ".up.out_norm", c);
            }
            ups_[size_t(s)] = std::move(up);
            net::FuseP<T> fu;
            fu.sc = cfg_.use_sc;
            if (fu.sc) {
                fu.conv1 = add_conv(pre + ".sc.conv1", c, 2 * c, 3);
                fu.conv2 = add_conv(pre + ".sc.conv2", c, c, 3);
            } else {
                fu.back = add_linear(pre + ".fuse.back", 2 * c, c);
            }
            fuses_[size_t(s)] = std::move(fu);
            StageBlocks st;
            st.grid = {cfg_.window, 0, (cfg_.input_h / 4) >> (2 - s), (cfg_.input_w / 4) >> (2 - s)};
            for (int64_t i = 0; i < cfg_.depths[size_t(2 - s)]; ++i)
                st.blocks.push_back(
                    add_block(pre + ".block" + std::to_string(i), c, heads[size_t(2 - s)]));
            dec_[size_t(s)] = std::move(st);
        }

        head_.norm = add_norm("head.norm", C);
        head_.expand_w = params_.add("head.expand.w", {C, 16 * C}, Init::TruncNormal02);
        head_.expand_norm = add_norm("head.expand_norm", C);
        head_.classifier = add_linear("head.classifier", C, cfg_.num_classes);
    }

    Tensor<T> embed_forward(const Tensor<T>& img) const {
        Tensor<T> x;
        if (embed_.conv) {
            Tensor<T> y = gelu(conv2d(img, embed_.c1.w, embed_.c1.b, 1, 1));
            y = gelu(conv2d(y, embed_.c2.w, embed_.c2.b, 2, 1));
            y = permute(y, {0, 2, 3, 1});
            y = layer_norm(y, embed_.mid_norm.gamma, embed_.mid_norm.beta);
            y = permute(y, {0, 3, 1, 2});
            y = gelu(conv2d(y, embed_.c3.w, embed_.c3.b, 1, 1));
            y = gelu(conv2d(y, embed_.c4.w, embed_.c4.b, 2, 1));
            x = permute(y, {0, 2, 3, 1});
        } else {
            Tensor<T> nhwc = permute(img, {0, 2, 3, 1});
            Tensor<T> patches = space_to_depth2(space_to_depth2(nhwc));
            x = linear(patches, embed_.patch.w, embed_.patch.b);
            x = layer_norm(x, embed_.norm.gamma, embed_.norm.beta);
        }
        if (embed_.pos.defined())
            x = add(x, reshape(embed_.pos, {1, x.dim(1), x.dim(2), x.dim(3)}));
        return x;
    }

    Tensor<T> run_blocks(const Tensor<T>& x, const StageBlocks& st,
                         bool force_no_shift = false) const {
        Tensor<T> y = x;
        WindowGrid grid = st.grid;
        for (size_t i = 0; i < st.blocks.size(); ++i) {
            grid.shift = (!force_no_shift && i % 2 == 1) ? grid.window / 2 : 0;
            y = cst_block(y, st.blocks[i], grid);
        }
        return y;
    }

    Tensor<T> merge_forward(const Tensor<T>& x, const net::MergeP<T>& m) const {
        Tensor<T> y = space_to_depth2(x);
        y = layer_norm(y, m.norm.gamma, m.norm.beta);
        return linear(y, m.reduce_w);
    }

    Tensor<T> up_forward(const Tensor<T>& x, const net::UpP<T>& up) const {
        Tensor<T> y = layer_norm(x, up.norm.gamma, up.norm.beta);
        if (up.conv) {
            y = permute(y, {0, 3, 1, 2});
            y = conv_transpose2d(y, up.deconv.w, up.deconv.b, 2);
            y = permute(y, {0, 2, 3, 1});
            return gelu(y);
        }
        y = linear(y, up.expand_w);
        y = depth_to_space(y, 2);
        return layer_norm(y, up.out_norm.gamma, up.out_norm.beta);
    }

    Tensor<T> fuse_forward(const Tensor<T>& up, const Tensor<T>& skip,
                           const net::FuseP<T>& fu) const {
        if (up.shape() != skip.shape())
            throw ShapeError("skip fusion shape mismatch: " + shape_str(up.shape()) + " vs " +
                             shape_str(skip.shape()));
        Tensor<T> cat = concat<T>({up, skip}, 3);
        if (!fu.sc) return linear(cat, fu.back.w, fu.back.b);
        Tensor<T> y = permute(cat, {0, 3, 1, 2});
        y = gelu(conv2d(y, fu.conv1.w, fu.conv1.b, 1, 1));
        y = gelu(conv2d(y, fu.conv2.w, fu.conv2.b, 1, 1));
        return permute(y, {0, 2, 3, 1});
    }

    Tensor<T> head_forward(const Tensor<T>& x) const {
        Tensor<T> y = layer_norm(x, head_.norm.gamma, head_.norm.beta);
        y = linear(y, head_.expand_w);
        y = depth_to_space(y, 4);
        y = layer_norm(y, head_.expand_norm.gamma, head_.expand_norm.beta);
        y = linear(y, head_.classifier.w, head_.classifier.b);
        return permute(y, {0, 3, 1, 2});  // [N,K,H,W]
    }
};

// Exact count of scalar learnables.
template <typename T>
int64_t count_params(const Model<T>& model) {
    return model.params().count();
}

inline double params_in_millions(int64_t n) { return double(n) / 1e6; }

// Ablation grid: toggles per method id, full-scale defaults otherwise.
inline ModelConfig ablation_config(int64_t method_id) {
    if (method_id < 0 || method_id > 6)
        throw UsageError("ablation method id must be in 0..6, got " + std::to_string(method_id));
    ModelConfig cfg;
    cfg.conv_embedding = method_id >= 1;
    cfg.conv_projection = method_id >= 2;
    cfg.conv_attention_refine = method_id >= 3;
    cfg.use_dsf = method_id >= 4;
    cfg.use_sc = method_id >= 5;
    cfg.use_bias_table = (method_id <= 2 || method_id == 5);
    return cfg;
}

}  // namespace csunet
