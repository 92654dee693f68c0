#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "csunet/config.hpp"
#include "csunet/data.hpp"
#include "csunet/gradcheck.hpp"
#include "csunet/serialize.hpp"

using namespace csunet;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const char* name) {
    const fs::path dir = fs::temp_directory_path() / "csunet-serialize-test";
    fs::create_directories(dir);
    return (dir / name).string();
}

}  // namespace

TEST_CASE("tensor container round-trips bitwise over 1000 random tensors") {
    Rng rng(2024);
    const std::string path = temp_path("roundtrip.bin");
    for (int rep = 0; rep < 1000; ++rep) {
        std::vector<serialize::Entry> entries;
        const int64_t n_entries = rng.uniform_int(1, 3);
        std::vector<Tensor<float>> f32;
        std::vector<Tensor<double>> f64;
        for (int64_t e = 0; e < n_entries; ++e) {
            Shape shape;
            const int64_t ndim = rng.uniform_int(1, 4);
            for (int64_t d = 0; d < ndim; ++d) shape.push_back(rng.uniform_int(1, 5));
            const std::string name = "t" + std::to_string(e);
            if (rng.bernoulli(0.5)) {
                auto t = gradcheck::rand_tensor(shape, rng, 10.0, false);
                Tensor<float> tf = Tensor<float>::zeros(shape);
                for (int64_t i = 0; i < t.size(); ++i) tf.ptr()[i] = float(t.ptr()[i]);
                f32.push_back(tf);
                entries.push_back(serialize::tensor_entry(name, tf));
            } else {
                auto t = gradcheck::rand_tensor(shape, rng, 10.0, false);
                f64.push_back(t);
                entries.push_back(serialize::tensor_entry(name, t));
            }
        }
        serialize::write_container(path, entries);
        auto back = serialize::read_container(path);
        REQUIRE(back.size() == entries.size());
        for (size_t i = 0; i < entries.size(); ++i) {
            REQUIRE(back[i].name == entries[i].name);
            REQUIRE(back[i].dtype == entries[i].dtype);
            REQUIRE(back[i].shape == entries[i].shape);
            REQUIRE(back[i].bytes == entries[i].bytes);  // bitwise
        }
    }
}

TEST_CASE("container rejects foreign magic and unknown versions") {
    const std::string path = temp_path("tamper.bin");
    serialize::write_container(
        path, {serialize::tensor_entry("x", Tensor<float>::full({2, 2}, 1.5f))});

    // bump the version field (bytes 4..7)
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const uint32_t bad = serialize::kVersion + 1;
        f.write(reinterpret_cast<const char*>(&bad), 4);
    }
    CHECK_THROWS_AS(serialize::read_container(path), IoError);

    {
        std::ofstream f(path, std::ios::binary);
        f << "NOPE";
    }
    CHECK_THROWS_AS(serialize::read_container(path), IoError);
    CHECK_THROWS_AS(serialize::read_container(temp_path("missing.bin")), IoError);
}

TEST_CASE("string and int entries round-trip") {
    const std::string path = temp_path("meta.bin");
    serialize::write_container(path, {serialize::string_entry("s", "hello = world\n# x"),
                                      serialize::int_entry("i", -12345678901234LL)});
    auto back = serialize::read_container(path);
    REQUIRE(back.size() == 2);
    CHECK(std::string(back[0].bytes.begin(), back[0].bytes.end()) == "hello = world\n# x");
    int64_t v = 0;
    std::memcpy(&v, back[1].bytes.data(), 8);
    CHECK(v == -12345678901234LL);
}

TEST_CASE("checkpoint round-trips parameters, moments, counters and rng state") {
    Rng rng(5);
    Checkpoint ck;
    ck.config_text = "model.base_dim = 8\n";
    ck.epoch = 17;
    ck.opt_step = 1234;
    Rng state_src(99);
    for (int i = 0; i < 5; ++i) state_src.uniform();
    ck.rng_state = state_src.state();
    for (int i = 0; i < 4; ++i) {
        const std::string name = "layer" + std::to_string(i) + ".w";
        Shape shape{rng.uniform_int(1, 6), rng.uniform_int(1, 6)};
        auto mk = [&]() {
            Tensor<float> t = Tensor<float>::zeros(shape);
            for (auto& v : t.data()) v = float(rng.normal());
            return t;
        };
        ck.params.emplace(name, mk());
        ck.opt_m.emplace(name, mk());
        ck.opt_v.emplace(name, mk());
    }

    const std::string path = temp_path("model.ckpt");
    ck.save(path);
    Checkpoint back = Checkpoint::load(path);
    CHECK(back.config_text == ck.config_text);
    CHECK(back.epoch == 17);
    CHECK(back.opt_step == 1234);
    CHECK(back.rng_state == ck.rng_state);
    REQUIRE(back.params.size() == 4);
    REQUIRE(back.opt_m.size() == 4);
    REQUIRE(back.opt_v.size() == 4);
    for (const auto& [name, t] : ck.params) {
        const auto& b = back.params.at(name);
        REQUIRE(b.shape() == t.shape());
        for (int64_t i = 0; i < t.size(); ++i) REQUIRE(b.ptr()[i] == t.ptr()[i]);
    }
    // restored rng continues the original stream
    Rng cont(0);
    cont.restore(back.rng_state);
    CHECK(cont.uniform() == state_src.uniform());
}

TEST_CASE("checkpoint load rejects entries outside the schema") {
    Checkpoint ck;
    ck.config_text = "x";
    const std::string path = temp_path("extra.ckpt");
    ck.save(path);
    auto entries = serialize::read_container(path);
    entries.push_back(serialize::int_entry("mystery", 1));
    serialize::write_container(path, entries);
    CHECK_THROWS_AS(Checkpoint::load(path), IoError);
}

TEST_CASE("binary image raster round-trip") {
    Rng rng(31);
    Tensor<float> img = Tensor<float>::zeros({3, 9, 7});
    for (auto& v : img.data()) v = float(rng.uniform());
    const std::string path = temp_path("img.ppm");
    raster::write_image_p6(path, img);
    Tensor<float> back = raster::read_image(path);
    REQUIRE(back.shape() == img.shape());
    // 8-bit quantization: exact at the byte level, within 1/255 in value
    for (int64_t i = 0; i < img.size(); ++i)
        REQUIRE(std::abs(back.ptr()[i] - img.ptr()[i]) <= 0.5f / 255.0f + 1e-6f);
    // a second write/read is bitwise stable (quantization is idempotent)
    const std::string path2 = temp_path("img2.ppm");
    raster::write_image_p6(path2, back);
    Tensor<float> again = raster::read_image(path2);
    for (int64_t i = 0; i < back.size(); ++i) REQUIRE(again.ptr()[i] == back.ptr()[i]);
}

TEST_CASE("ascii mask raster round-trip and grayscale image read") {
    Rng rng(32);
    std::vector<int32_t> mask(size_t(6 * 11));
    for (auto& v : mask) v = int32_t(rng.uniform_int(0, 8));
    const std::string path = temp_path("mask.pgm");
    raster::write_mask_p2(path, mask, 6, 11, 8);
    int64_t h = 0, w = 0;
    auto back = raster::read_mask_p2(path, h, w);
    CHECK(h == 6);
    CHECK(w == 11);
    REQUIRE(back == mask);

    // P5 reads replicate the single channel
    const std::string p5 = temp_path("gray.pgm");
    {
        std::ofstream f(p5, std::ios::binary);
        f << "P5\n2 2\n255\n";
        const unsigned char px[4] = {0, 85, 170, 255};
        f.write(reinterpret_cast<const char*>(px), 4);
    }
    Tensor<float> g = raster::read_image(p5);
    REQUIRE(g.shape() == Shape{3, 2, 2});
    CHECK(g.at({0, 1, 1}) == doctest::Approx(1.0f));
    CHECK(g.at({1, 1, 1}) == doctest::Approx(1.0f));
    CHECK(g.at({2, 0, 0}) == doctest::Approx(0.0f));
}

TEST_CASE("config text round-trips through dump and rejects unknown keys") {
    RunConfig cfg;
    cfg.model.base_dim = 8;
    cfg.model.input_h = cfg.model.input_w = 64;
    cfg.model.window = 2;
    cfg.model.num_classes = 3;
    cfg.train.lr = 0.005;
    cfg.train.epochs = 12;
    cfg.data.size = 64;
    cfg.data.num_classes = 3;
    cfg.out_dir = "runs/x";
    RunConfig back = RunConfig::parse_text(cfg.dump());
    CHECK(back.dump() == cfg.dump());

    CHECK_THROWS_AS(RunConfig::parse_text("model.no_such_knob = 1\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse_text("train.lr 0.1\n"), ConfigError);  // missing '='

    RunConfig ov;
    ov.apply_override("train.batch=7");
    CHECK(ov.train.batch == 7);
    CHECK_THROWS_AS(ov.apply_override("train.batch"), ConfigError);
}
