// Command-line front end: train / eval / predict / params / gradcheck /
// ablate / dump-config. Exit codes: 0 ok, 1 usage or config error, 2 data or
// I/O error, 3 verification failure.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "csunet/gradcheck.hpp"
#include "csunet/train.hpp"

namespace fs = std::filesystem;
using namespace csunet;

namespace {

RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& sets) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::parse_file(config_path);
    for (const std::string& s : sets) cfg.apply_override(s);
    return cfg;
}

void apply_method(ModelConfig& m, int64_t method) {
    const ModelConfig t = ablation_config(method);
    m.conv_embedding = t.conv_embedding;
    m.conv_projection = t.conv_projection;
    m.use_bias_table = t.use_bias_table;
    m.conv_attention_refine = t.conv_attention_refine;
    m.use_dsf = t.use_dsf;
    m.use_sc = t.use_sc;
}

// Leading name component, e.g. "enc0.block1.ls_attn" -> "enc0".
std::string group_of(const std::string& name) { return name.substr(0, name.find('.')); }

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets, bool resume) {
    RunConfig cfg = resolve_config(config_path, sets);
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    {
        std::ofstream snap(fs::path(cfg.out_dir) / "config.resolved");
        if (!snap) throw IoError("cannot write resolved config into " + cfg.out_dir);
        snap << cfg.dump();
    }
    Model<float> model(cfg.model);
    model.init_weights(cfg.train.seed);
    auto [train_set, val_set] = load_split(cfg);
    TrainResult r = train_model(cfg, model, train_set, val_set, cfg.out_dir, resume);
    std::printf("best val dsc %.4f  (checkpoint %s)\n", r.best_dsc, r.best_path.c_str());
    return 0;
}

std::pair<RunConfig, Model<float>> load_model(const std::string& ckpt_path,
                                              const std::vector<std::string>& sets,
                                              Checkpoint& ck_out) {
    ck_out = Checkpoint::load(ckpt_path);
    RunConfig cfg = RunConfig::parse_text(ck_out.config_text, ckpt_path + "#config");
    for (const std::string& s : sets) cfg.apply_override(s);
    Model<float> model(cfg.model);
    restore_checkpoint(ck_out, model, nullptr, nullptr);
    return {cfg, std::move(model)};
}

int cmd_eval(const std::string& ckpt_path, const std::vector<std::string>& sets,
             const std::string& split, const std::string& out_path) {
    Checkpoint ck;
    auto [cfg, model] = load_model(ckpt_path, sets, ck);
    cfg.validate();
    auto [train_set, val_set] = load_split(cfg);
    std::vector<SegSample> set;
    if (split == "val") set = std::move(val_set);
    else if (split == "train") set = std::move(train_set);
    else if (split == "all") {
        set = std::move(train_set);
        set.insert(set.end(), val_set.begin(), val_set.end());
    } else {
        throw UsageError("--split must be train, val or all");
    }

    EvalResult r = evaluate(model, set);
    std::printf("%-12s %10s %10s\n", "class", "dsc", "hd95");
    for (size_t k = 0; k < r.dsc.size(); ++k)
        std::printf("%-12zu %10.4f %10.2f\n", k, r.dsc[k], r.hd95[k]);
    std::printf("%-12s %10.4f %10.2f   (foreground mean, %zu samples)\n", "mean", r.mean_dsc,
                r.mean_hd95, set.size());

    std::ofstream rec(out_path);
    if (!rec) throw IoError("cannot write " + out_path);
    for (size_t k = 0; k < r.dsc.size(); ++k)
        rec << "{\"class\":" << k << ",\"dsc\":" << detail::json_num(r.dsc[k])
            << ",\"hd95\":" << detail::json_num(r.hd95[k]) << "}\n";
    rec << "{\"class\":\"mean\",\"dsc\":" << detail::json_num(r.mean_dsc)
        << ",\"hd95\":" << detail::json_num(r.mean_hd95) << "}\n";
    return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& image_path,
                const std::string& out_path) {
    Checkpoint ck;
    auto [cfg, model] = load_model(ckpt_path, {}, ck);
    Tensor<float> img = raster::read_image(image_path);
    if (img.dim(1) != cfg.model.input_h || img.dim(2) != cfg.model.input_w)
        throw UsageError("image is " + std::to_string(img.dim(2)) + "x" +
                         std::to_string(img.dim(1)) + " but the model expects " +
                         std::to_string(cfg.model.input_w) + "x" +
                         std::to_string(cfg.model.input_h) +
                         "; resize the raster to the model extent first");
    Tensor<float> batch = reshape(img, {1, 3, img.dim(1), img.dim(2)});
    metrics::Mask mask = metrics::argmax_masks(model.forward(batch))[0];
    raster::write_mask_p2(out_path, mask, img.dim(1), img.dim(2),
                          std::max<int64_t>(1, cfg.model.num_classes - 1));
    std::ofstream legend(out_path + ".legend.txt");
    if (!legend) throw IoError("cannot write legend beside " + out_path);
    legend << "0 background\n";
    for (int64_t k = 1; k < cfg.model.num_classes; ++k) legend << k << " class_" << k << "\n";
    std::printf("wrote %s (+legend)\n", out_path.c_str());
    return 0;
}

int cmd_params(const std::string& config_path, const std::vector<std::string>& sets,
               int64_t method) {
    RunConfig cfg = resolve_config(config_path, sets);
    if (method >= 0) apply_method(cfg.model, method);
    Model<float> model(cfg.model);
    std::map<std::string, int64_t> groups;
    for (const auto& [name, t] : model.params().map()) groups[group_of(name)] += t.size();
    int64_t total = 0;
    for (const auto& [g, n] : groups) {
        std::printf("%-12s %12lld\n", g.c_str(), (long long)n);
        total += n;
    }
    std::printf("%-12s %12lld  (%.2fM)\n", "total", (long long)total,
                params_in_millions(total));
    if (total != count_params(model)) throw VerifyError("per-group sum disagrees with total");
    return 0;
}

int cmd_gradcheck(const std::string& scope, uint64_t seed) {
    std::vector<gradcheck::Report> reports;
    if (scope == "all") {
        reports = gradcheck::run_all(seed);
    } else {
        reports.push_back(gradcheck::run(scope, seed));
    }
    bool ok = true;
    for (const auto& r : reports) {
        std::printf("%-20s max err %.3e  tol %.0e  %s\n", r.name.c_str(), r.max_err, r.tol,
                    r.pass() ? "ok" : "FAIL");
        ok = ok && r.pass();
    }
    if (!ok) throw VerifyError("gradient check failed");
    return 0;
}

int cmd_ablate(std::vector<int64_t> ids, const std::string& config_path,
               const std::vector<std::string>& sets, bool with_training) {
    if (ids.empty()) ids = {0, 1, 2, 3, 4, 5, 6};
    std::printf("%-7s %-4s %-5s %-4s %-4s %-4s %-3s %10s %s\n", "method", "emb", "proj", "pos",
                "att", "dsf", "sc", "params(M)", with_training ? "  val_dsc" : "");
    for (int64_t id : ids) {
        RunConfig cfg = resolve_config(config_path, sets);
        apply_method(cfg.model, id);
        Model<float> model(cfg.model);
        const double m = params_in_millions(count_params(model));
        std::string dsc;
        if (with_training) {
            cfg.validate();
            model.init_weights(cfg.train.seed);
            auto [train_set, val_set] = load_split(cfg);
            const std::string dir =
                (fs::path(cfg.out_dir) / ("ablate-" + std::to_string(id))).string();
            TrainResult r =
                train_model(cfg, model, train_set, val_set, dir, false, /*quiet=*/true);
            char buf[32];
            std::snprintf(buf, sizeof buf, "  %7.4f", r.best_dsc);
            dsc = buf;
        }
        const ModelConfig& mc = cfg.model;
        auto mark = [](bool b) { return b ? "y" : "-"; };
        std::printf("%-7lld %-4s %-5s %-4s %-4s %-4s %-3s %10.2f%s\n", (long long)id,
                    mark(mc.conv_embedding), mark(mc.conv_projection), mark(mc.use_bias_table),
                    mark(mc.conv_attention_refine), mark(mc.use_dsf), mark(mc.use_sc), m,
                    dsc.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    pin_blas_threads();
    CLI::App app{"CS-Unet: convolutional Swin transformer for 2D segmentation"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, image_path, out_path, split = "val", scope = "all";
    std::vector<std::string> sets;
    std::vector<int64_t> ids;
    uint64_t seed = 0;
    int64_t method = -1;
    bool resume = false, with_training = false;

    auto* train = app.add_subcommand("train", "train a model per config");
    train->add_option("-c,--config", config_path, "config file")->required();
    train->add_option("-s,--set", sets, "dotted-key override, key=value");
    train->add_flag("--resume", resume, "continue from <out_dir>/last.ckpt");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("-s,--set", sets, "dotted-key override, key=value");
    eval->add_option("--split", split, "train|val|all (default val)");
    eval->add_option("-o,--out", out_path, "record file (default eval.jsonl beside checkpoint)");

    auto* predict = app.add_subcommand("predict", "segment one raster image");
    predict->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    predict->add_option("--image", image_path, "input P5/P6 raster")->required();
    predict->add_option("-o,--out", out_path, "output P2 mask path")->required();

    auto* params = app.add_subcommand("params", "parameter-count report");
    params->add_option("-c,--config", config_path, "config file (default: full model)");
    params->add_option("-s,--set", sets, "dotted-key override, key=value");
    params->add_option("--method", method, "ablation method id 0..6");

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gradcheck_cmd->add_option("--scope", scope, "op name, 'full', or 'all' (default all)");
    gradcheck_cmd->add_option("--seed", seed, "rng seed");

    auto* ablate = app.add_subcommand("ablate", "module-ablation comparison table");
    ablate->add_option("--ids", ids, "method ids (default 0..6)")->delimiter(',');
    ablate->add_option("-c,--config", config_path, "base config (default: full model)");
    ablate->add_option("-s,--set", sets, "dotted-key override, key=value");
    ablate->add_flag("--train", with_training, "also run training per method (slow)");

    auto* dump = app.add_subcommand("dump-config", "print the resolved configuration");
    dump->add_option("-c,--config", config_path, "config file (default: shipped defaults)");
    dump->add_option("-s,--set", sets, "dotted-key override, key=value");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*train) return cmd_train(config_path, sets, resume);
        if (*eval) {
            if (out_path.empty())
                out_path = (fs::path(ckpt_path).parent_path() / "eval.jsonl").string();
            return cmd_eval(ckpt_path, sets, split, out_path);
        }
        if (*predict) return cmd_predict(ckpt_path, image_path, out_path);
        if (*params) return cmd_params(config_path, sets, method);
        if (*gradcheck_cmd) return cmd_gradcheck(scope, seed);
        if (*ablate) return cmd_ablate(ids, config_path, sets, with_training);
        if (*dump) {
            std::fputs(resolve_config(config_path, sets).dump().c_str(), stdout);
            return 0;
        }
    } catch (const VerifyError& e) {
        std::fprintf(stderr, "verification failure: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "data/io error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
