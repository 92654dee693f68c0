#pragma once

#include "csunet/network.hpp"

namespace csunet {

struct TrainConfig {
    double lr = 1e-3;
    int64_t epochs = 300;
    int64_t batch = 24;
    uint64_t seed = 0;
    int64_t warmup_epochs = 10;
    double weight_decay = 5e-4;
    bool augment = true;
    double val_fraction = 0.2;
};

struct DataConfig {
    std::string kind = "synthetic";  // "synthetic" | "dir"
    uint64_t seed = 1234;
    int64_t samples = 200;           // total; val split taken from the tail
    int64_t size = 224;
    int64_t num_classes = 9;
    std::string dir;
};

// Whole-run configuration. Parsed from `key = value` text (dotted keys, '#'
// comments); unknown keys are rejected so typos fail loudly. dump() emits the
// complete schema with current values and re-parses to an identical config.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    std::string out_dir = "runs/default";

    static RunConfig parse_file(const std::string& path);
    static RunConfig parse_text(const std::string& text, const std::string& origin = "<text>");
    void set(const std::string& key, const std::string& value);  // one dotted key
    void apply_override(const std::string& assignment);          // "key=value"
    std::string dump() const;

    // Cross-section consistency (extents, class counts, synthetic-vs-dir).
    void validate() const;
};

}  // namespace csunet
