#include "csunet/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace csunet {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw ConfigError(key + ": expected boolean, got '" + v + "'");
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected integer, got '" + v + "'");
    }
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected unsigned integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected number, got '" + v + "'");
    }
}

std::vector<int64_t> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int64_t> out;
    if (trim(v).empty() || v == "auto") return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
    return out;
}

std::string fmt_int_list(const std::vector<int64_t>& v) {
    if (v.empty()) return "auto";
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Field {
    const char* key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& schema() {
    static const std::vector<Field> fields = {
        {"model.in_channels",
         [](RunConfig& c, const std::string& v) { c.model.in_channels = parse_int("model.in_channels", v); },
         [](const RunConfig& c) { return std::to_string(c.model.in_channels); }},
        {"model.num_classes",
         [](RunConfig& c, const std::string& v) { c.model.num_classes = parse_int("model.num_classes", v); },
         [](const RunConfig& c) { return std::to_string(c.model.num_classes); }},
        {"model.base_dim",
         [](RunConfig& c, const std::string& v) { c.model.base_dim = parse_int("model.base_dim", v); },
         [](const RunConfig& c) { return std::to_string(c.model.base_dim); }},
        {"model.input_h",
         [](RunConfig& c, const std::string& v) { c.model.input_h = parse_int("model.input_h", v); },
         [](const RunConfig& c) { return std::to_string(c.model.input_h); }},
        {"model.input_w",
         [](RunConfig& c, const std::string& v) { c.model.input_w = parse_int("model.input_w", v); },
         [](const RunConfig& c) { return std::to_string(c.model.input_w); }},
        {"model.depths",
         [](RunConfig& c, const std::string& v) { c.model.depths = parse_int_list("model.depths", v); },
         [](const RunConfig& c) { return fmt_int_list(c.model.depths); }},
        {"model.bottleneck_depth",
         [](RunConfig& c, const std::string& v) { c.model.bottleneck_depth = parse_int("model.bottleneck_depth", v); },
         [](const RunConfig& c) { return std::to_string(c.model.bottleneck_depth); }},
        {"model.heads",
         [](RunConfig& c, const std::string& v) { c.model.heads = parse_int_list("model.heads", v); },
         [](const RunConfig& c) { return fmt_int_list(c.model.heads); }},
        {"model.window",
         [](RunConfig& c, const std::string& v) { c.model.window = parse_int("model.window", v); },
         [](const RunConfig& c) { return std::to_string(c.model.window); }},
        {"model.conv_embedding",
         [](RunConfig& c, const std::string& v) { c.model.conv_embedding = parse_bool("model.conv_embedding", v); },
         [](const RunConfig& c) { return c.model.conv_embedding ? "true" : "false"; }},
        {"model.conv_projection",
         [](RunConfig& c, const std::string& v) { c.model.conv_projection = parse_bool("model.conv_projection", v); },
         [](const RunConfig& c) { return c.model.conv_projection ? "true" : "false"; }},
        {"model.use_bias_table",
         [](RunConfig& c, const std::string& v) { c.model.use_bias_table = parse_bool("model.use_bias_table", v); },
         [](const RunConfig& c) { return c.model.use_bias_table ? "true" : "false"; }},
        {"model.conv_attention_refine",
         [](RunConfig& c, const std::string& v) { c.model.conv_attention_refine = parse_bool("model.conv_attention_refine", v); },
         [](const RunConfig& c) { return c.model.conv_attention_refine ? "true" : "false"; }},
        {"model.use_dsf",
         [](RunConfig& c, const std::string& v) { c.model.use_dsf = parse_bool("model.use_dsf", v); },
         [](const RunConfig& c) { return c.model.use_dsf ? "true" : "false"; }},
        {"model.use_sc",
         [](RunConfig& c, const std::string& v) { c.model.use_sc = parse_bool("model.use_sc", v); },
         [](const RunConfig& c) { return c.model.use_sc ? "true" : "false"; }},
        {"train.lr",
         [](RunConfig& c, const std::string& v) { c.train.lr = parse_double("train.lr", v); },
         [](const RunConfig& c) { return fmt_double(c.train.lr); }},
        {"train.epochs",
         [](RunConfig& c, const std::string& v) { c.train.epochs = parse_int("train.epochs", v); },
         [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
        {"train.batch",
         [](RunConfig& c, const std::string& v) { c.train.batch = parse_int("train.batch", v); },
         [](const RunConfig& c) { return std::to_string(c.train.batch); }},
        {"train.seed",
         [](RunConfig& c, const std::string& v) { c.train.seed = parse_uint("train.seed", v); },
         [](const RunConfig& c) { return std::to_string(c.train.seed); }},
        {"train.warmup_epochs",
         [](RunConfig& c, const std::string& v) { c.train.warmup_epochs = parse_int("train.warmup_epochs", v); },
         [](const RunConfig& c) { return std::to_string(c.train.warmup_epochs); }},
        {"train.weight_decay",
         [](RunConfig& c, const std::string& v) { c.train.weight_decay = parse_double("train.weight_decay", v); },
         [](const RunConfig& c) { return fmt_double(c.train.weight_decay); }},
        {"train.augment",
         [](RunConfig& c, const std::string& v) { c.train.augment = parse_bool("train.augment", v); },
         [](const RunConfig& c) { return c.train.augment ? "true" : "false"; }},
        {"train.val_fraction",
         [](RunConfig& c, const std::string& v) { c.train.val_fraction = parse_double("train.val_fraction", v); },
         [](const RunConfig& c) { return fmt_double(c.train.val_fraction); }},
        {"data.kind",
         [](RunConfig& c, const std::string& v) {
             if (v != "synthetic" && v != "dir")
                 throw ConfigError("data.kind: expected 'synthetic' or 'dir', got '" + v + "'");
             c.data.kind = v;
         },
         [](const RunConfig& c) { return c.data.kind; }},
        {"data.seed",
         [](RunConfig& c, const std::string& v) { c.data.seed = parse_uint("data.seed", v); },
         [](const RunConfig& c) { return std::to_string(c.data.seed); }},
        {"data.samples",
         [](RunConfig& c, const std::string& v) { c.data.samples = parse_int("data.samples", v); },
         [](const RunConfig& c) { return std::to_string(c.data.samples); }},
        {"data.size",
         [](RunConfig& c, const std::string& v) { c.data.size = parse_int("data.size", v); },
         [](const RunConfig& c) { return std::to_string(c.data.size); }},
        {"data.num_classes",
         [](RunConfig& c, const std::string& v) { c.data.num_classes = parse_int("data.num_classes", v); },
         [](const RunConfig& c) { return std::to_string(c.data.num_classes); }},
        {"data.dir",
         [](RunConfig& c, const std::string& v) { c.data.dir = v; },
         [](const RunConfig& c) { return c.data.dir; }},
        {"out_dir",
         [](RunConfig& c, const std::string& v) { c.out_dir = v; },
         [](const RunConfig& c) { return c.out_dir; }},
    };
    return fields;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const Field& f : schema()) {
        if (key == f.key) {
            f.set(*this, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig RunConfig::parse_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_text(ss.str(), path);
}

std::string RunConfig::dump() const {
    std::string out;
    for (const Field& f : schema()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
    return out;
}

void RunConfig::validate() const {
    model.validate();
    if (train.epochs < 1 || train.batch < 1) throw ConfigError("train: epochs/batch must be >= 1");
    if (train.lr <= 0) throw ConfigError("train.lr must be positive");
    if (train.val_fraction <= 0.0 || train.val_fraction >= 1.0)
        throw ConfigError("train.val_fraction must lie in (0,1)");
    if (train.warmup_epochs < 1) throw ConfigError("train.warmup_epochs must be >= 1");
    if (data.kind == "synthetic") {
        if (data.size != model.input_h || data.size != model.input_w)
            throw ConfigError("data.size must match model input extent");
        if (data.num_classes != model.num_classes)
            throw ConfigError("data.num_classes must match model.num_classes");
        if (data.samples < 5) throw ConfigError("data.samples too small to split");
    } else if (data.dir.empty()) {
        throw ConfigError("data.kind=dir requires data.dir");
    }
}

}  // namespace csunet
