#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "csunet/config.hpp"
#include "csunet/data.hpp"
#include "csunet/loss.hpp"
#include "csunet/metrics.hpp"
#include "csunet/optim.hpp"
#include "csunet/serialize.hpp"

namespace csunet {

struct EvalResult {
    std::vector<double> dsc;   // per class, including background at index 0
    double mean_dsc = 0.0;     // foreground mean
    std::vector<double> hd95;  // per class
    double mean_hd95 = 0.0;    // foreground mean
};

struct EpochStats {
    int64_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    EvalResult val;
};

struct TrainResult {
    std::vector<EpochStats> history;
    double best_dsc = -1.0;
    std::string best_path, last_path;
};

namespace detail {

inline std::string json_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string metrics_json(const EpochStats& st) {
    std::string s = "{\"epoch\":" + std::to_string(st.epoch) + ",\"lr\":" + json_num(st.lr) +
                    ",\"train_loss\":" + json_num(st.train_loss) + ",\"val_dsc\":[";
    for (size_t k = 0; k < st.val.dsc.size(); ++k)
        s += (k ? "," : "") + json_num(st.val.dsc[k]);
    s += "],\"val_mean_dsc\":" + json_num(st.val.mean_dsc) + ",\"val_hd95\":[";
    for (size_t k = 0; k < st.val.hd95.size(); ++k)
        s += (k ? "," : "") + json_num(st.val.hd95[k]);
    s += "],\"val_mean_hd95\":" + json_num(st.val.mean_hd95) + "}";
    return s;
}

// Stacks samples (optionally augmented) into a batch tensor + label vector.
inline std::pair<Tensor<float>, std::vector<int32_t>> make_batch(
    const std::vector<SegSample>& set, const std::vector<int64_t>& idx, size_t lo, size_t hi,
    bool augmented, Rng* rng) {
    const int64_t B = int64_t(hi - lo);
    const int64_t h = set[size_t(idx[lo])].h, w = set[size_t(idx[lo])].w;
    Tensor<float> images = Tensor<float>::zeros({B, 3, h, w});
    std::vector<int32_t> labels(size_t(B * h * w));
    for (size_t b = lo; b < hi; ++b) {
        const SegSample& src = set[size_t(idx[b])];
        if (src.h != h || src.w != w) throw ShapeError("batch mixes sample extents");
        SegSample s;
        if (augmented) {
            s.image = src.image.clone();
            s.mask = src.mask;
            s.h = src.h;
            s.w = src.w;
            augment(s, *rng);
        }
        const SegSample& use = augmented ? s : src;
        std::copy(use.image.ptr(), use.image.ptr() + 3 * h * w,
                  images.ptr() + int64_t(b - lo) * 3 * h * w);
        std::copy(use.mask.begin(), use.mask.end(), labels.begin() + int64_t(b - lo) * h * w);
    }
    return {images, labels};
}

}  // namespace detail

// Mean-over-cases validation metrics: per-case per-class DSC and HD95,
// averaged over cases, foreground mean over classes.
inline EvalResult evaluate(const Model<float>& model, const std::vector<SegSample>& set) {
    if (set.empty()) throw UsageError("evaluate: empty dataset");
    const int64_t K = model.config().num_classes;
    EvalResult r;
    r.dsc.assign(size_t(K), 0.0);
    r.hd95.assign(size_t(K), 0.0);
    std::vector<int64_t> one = {0};
    for (const SegSample& s : set) {
        auto [img, labels] = detail::make_batch({s}, one, 0, 1, false, nullptr);
        Tensor<float> logits = model.forward(img);
        metrics::Mask pred = metrics::argmax_masks(logits)[0];
        const std::vector<double> d = metrics::dice_per_class(pred, s.mask, K);
        for (int64_t k = 0; k < K; ++k) {
            r.dsc[size_t(k)] += d[size_t(k)];
            r.hd95[size_t(k)] += metrics::hausdorff(pred, s.mask, s.h, s.w, int32_t(k), 95);
        }
    }
    for (int64_t k = 0; k < K; ++k) {
        r.dsc[size_t(k)] /= double(set.size());
        r.hd95[size_t(k)] /= double(set.size());
    }
    r.mean_dsc = metrics::mean_foreground(r.dsc);
    r.mean_hd95 = metrics::mean_foreground(r.hd95);
    return r;
}

inline Checkpoint make_checkpoint(const RunConfig& cfg, Model<float>& model,
                                  AdamW<float>& opt, int64_t epochs_done, const Rng& rng) {
    Checkpoint ck;
    ck.config_text = cfg.dump();
    ck.epoch = epochs_done;
    ck.opt_step = opt.step_count();
    ck.rng_state = rng.state();
    for (const auto& [k, v] : model.params().map()) ck.params.emplace(k, v);
    for (auto& [k, v] : opt.moments1()) ck.opt_m.emplace(k, v);
    for (auto& [k, v] : opt.moments2()) ck.opt_v.emplace(k, v);
    return ck;
}

// Copies checkpoint tensors into live model/optimizer state, shape-checked.
inline void restore_checkpoint(const Checkpoint& ck, Model<float>& model, AdamW<float>* opt,
                               Rng* rng) {
    auto copy_into = [](const std::map<std::string, Tensor<float>>& src,
                        auto get_dst, const char* what) {
        for (const auto& [name, t] : src) {
            Tensor<float>* dst = get_dst(name);
            if (!dst) throw IoError(std::string("checkpoint ") + what + " '" + name +
                                    "' has no counterpart in this model config");
            if (dst->shape() != t.shape())
                throw IoError(std::string("checkpoint ") + what + " '" + name + "' shape " +
                              shape_str(t.shape()) + " != model " + shape_str(dst->shape()));
            std::copy(t.ptr(), t.ptr() + t.size(), dst->ptr());
        }
    };
    if (ck.params.size() != model.params().map().size())
        throw IoError("checkpoint parameter set does not match model (" +
                      std::to_string(ck.params.size()) + " vs " +
                      std::to_string(model.params().map().size()) + " tensors)");
    copy_into(ck.params, [&](const std::string& n) -> Tensor<float>* {
        auto& m = model.params();
        try {
            return &m.at(n);
        } catch (const UsageError&) {
            return nullptr;
        }
    }, "parameter");
    if (opt) {
        copy_into(ck.opt_m, [&](const std::string& n) -> Tensor<float>* {
            auto it = opt->moments1().find(n);
            return it == opt->moments1().end() ? nullptr : &it->second;
        }, "moment");
        copy_into(ck.opt_v, [&](const std::string& n) -> Tensor<float>* {
            auto it = opt->moments2().find(n);
            return it == opt->moments2().end() ? nullptr : &it->second;
        }, "moment");
        opt->set_step_count(ck.opt_step);
    }
    if (rng && !ck.rng_state.empty()) rng->restore(ck.rng_state);
}

// Epoch loop: seeded shuffle, augmentation, AdamW with warmup+cosine schedule,
// per-epoch validation, JSONL metrics log, best/last checkpoint retention.
inline TrainResult train_model(const RunConfig& cfg, Model<float>& model,
                               const std::vector<SegSample>& train_set,
                               const std::vector<SegSample>& val_set, const std::string& run_dir,
                               bool resume = false, bool quiet = false,
                               int64_t session_epochs = -1) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (train_set.empty() || val_set.empty()) throw UsageError("train: empty dataset split");
    fs::create_directories(run_dir);
    const std::string last_path = (fs::path(run_dir) / "last.ckpt").string();
    const std::string best_path = (fs::path(run_dir) / "best.ckpt").string();
    const std::string log_path = (fs::path(run_dir) / "metrics.jsonl").string();

    AdamW<float> opt(model.params(), {0.9, 0.999, 1e-8, cfg.train.weight_decay});
    Rng rng(cfg.train.seed);
    int64_t start_epoch = 0;
    TrainResult result;
    result.best_path = best_path;
    result.last_path = last_path;

    if (resume) {
        if (!fs::exists(last_path)) throw IoError("resume requested but " + last_path + " missing");
        Checkpoint ck = Checkpoint::load(last_path);
        if (ck.config_text != cfg.dump())
            throw IoError("resume: checkpoint was produced by a different resolved config");
        restore_checkpoint(ck, model, &opt, &rng);
        start_epoch = ck.epoch;
        // best-so-far from the existing log
        std::ifstream lg(log_path);
        std::string line;
        while (std::getline(lg, line)) {
            const auto pos = line.find("\"val_mean_dsc\":");
            if (pos != std::string::npos)
                result.best_dsc = std::max(result.best_dsc, std::stod(line.substr(pos + 15)));
        }
    }

    // Fresh runs truncate any stale log so reruns compare bitwise; resumed
    // runs keep appending to their own history.
    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open metrics log " + log_path);

    std::vector<int64_t> order(train_set.size());

    // session_epochs limits how many epochs this call runs (for interrupted-
    // run tests); the schedule always follows the configured total.
    const int64_t end_epoch = session_epochs < 0
                                  ? cfg.train.epochs
                                  : std::min(cfg.train.epochs, start_epoch + session_epochs);
    for (int64_t epoch = start_epoch; epoch < end_epoch; ++epoch) {
        const double lr = lr_schedule(epoch, cfg.train.epochs, cfg.train.lr,
                                      cfg.train.warmup_epochs);
        // each epoch's permutation depends only on the rng state, so a resumed
        // run replays exactly the same batch schedule as a straight run
        for (size_t i = 0; i < order.size(); ++i) order[i] = int64_t(i);
        rng.shuffle(order.begin(), order.end());
        double loss_acc = 0.0;
        int64_t batches = 0;
        for (size_t lo = 0; lo < order.size(); lo += size_t(cfg.train.batch)) {
            const size_t hi = std::min(order.size(), lo + size_t(cfg.train.batch));
            auto [images, labels] =
                detail::make_batch(train_set, order, lo, hi, cfg.train.augment, &rng);
            TapeScope<float> scope;
            Tensor<float> logits = model.forward(images);
            Tensor<float> loss = combined_loss(logits, labels);
            model.params().zero_grads();
            scope.tape.backward(loss);
            opt.step(lr);
            loss_acc += double(loss.item());
            ++batches;
        }

        EpochStats st;
        st.epoch = epoch;
        st.lr = lr;
        st.train_loss = loss_acc / double(batches);
        st.val = evaluate(model, val_set);
        log << detail::metrics_json(st) << '\n';
        log.flush();
        if (!quiet)
            std::printf("epoch %3lld  lr %.3e  loss %.4f  val dsc %.4f  hd95 %.2f\n",
                        (long long)epoch, lr, st.train_loss, st.val.mean_dsc, st.val.mean_hd95);

        Checkpoint ck = make_checkpoint(cfg, model, opt, epoch + 1, rng);
        ck.save(last_path);
        if (st.val.mean_dsc > result.best_dsc) {
            result.best_dsc = st.val.mean_dsc;
            ck.save(best_path);
        }
        result.history.push_back(std::move(st));
    }
    return result;
}

// Deterministic train/val split of one synthetic pool (validation = tail).
inline std::pair<std::vector<SegSample>, std::vector<SegSample>> split_dataset(
    std::vector<SegSample> all, double val_fraction) {
    const size_t n_val = std::max<size_t>(1, size_t(double(all.size()) * val_fraction));
    if (n_val >= all.size()) throw ConfigError("val_fraction leaves no training data");
    std::vector<SegSample> val(all.end() - ptrdiff_t(n_val), all.end());
    all.resize(all.size() - n_val);
    return {std::move(all), std::move(val)};
}

inline std::pair<std::vector<SegSample>, std::vector<SegSample>> load_split(const RunConfig& cfg) {
    std::vector<SegSample> all =
        cfg.data.kind == "synthetic"
            ? synth_dataset(cfg.data.seed, cfg.data.samples, cfg.data.size, cfg.data.num_classes)
            : load_dataset_dir(cfg.data.dir);
    return split_dataset(std::move(all), cfg.train.val_fraction);
}

}  // namespace csunet
