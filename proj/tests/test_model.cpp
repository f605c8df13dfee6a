#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <unistd.h>

#include "doctest.h"
#include "phyg/model.hpp"
#include "phyg/model_io.hpp"

using namespace phyg;

namespace {

ArchitectureSpec model_a_28() { return make_preset("a", 28, 28, 1, 10, 0.5); }

std::string temp_path(const char* stem) {
    return std::string("/tmp/phyg_test_") + stem + "_" + std::to_string(::getpid()) + ".phyg";
}

}  // namespace

TEST_CASE("parameter count matches the hand-computed layer-by-layer sum") {
    // 28x28x1, preset "a": two 3x3x16 convs, pool, two 3x3x32 convs, pool,
    // dense 256, dense 256, softmax 10.
    const std::int64_t conv1 = 3 * 3 * 1 * 16 + 16;     // 160
    const std::int64_t conv2 = 3 * 3 * 16 * 16 + 16;    // 2320
    const std::int64_t conv3 = 3 * 3 * 16 * 32 + 32;    // 4640
    const std::int64_t conv4 = 3 * 3 * 32 * 32 + 32;    // 9248
    // 28->26->24, pool 12, ->10->8, pool 4: flatten 4*4*32 = 512
    const std::int64_t dense1 = 512 * 256 + 256;         // 131328
    const std::int64_t dense2 = 256 * 256 + 256;         // 65792
    const std::int64_t head = 256 * 10 + 10;             // 2570
    const std::int64_t expected = conv1 + conv2 + conv3 + conv4 + dense1 + dense2 + head;
    CHECK(expected == 216058);
    CHECK(model_a_28().param_count() == expected);
}

TEST_CASE("build_model is deterministic in the seed") {
    auto spec = make_preset("desk-a", 16, 16, 1, 10);
    ModelHandle m1 = build_model(spec, 42);
    ModelHandle m2 = build_model(spec, 42);
    ModelHandle m3 = build_model(spec, 43);
    CHECK(m1.params.data == m2.params.data);
    CHECK(m1.params.data != m3.params.data);
    CHECK(m1.params.size() == spec.param_count());
}

TEST_CASE("degenerate layer specs are rejected") {
    ArchitectureSpec spec;
    spec.in_h = 8;
    spec.in_w = 8;
    spec.in_c = 1;
    spec.classes = 3;
    spec.layers = {LayerSpec::dense(0), LayerSpec::softmax_head(3)};
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

    spec.layers = {LayerSpec::conv(9, 9, 4), LayerSpec::softmax_head(3)};
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

    spec.layers = {LayerSpec::dense(4)};  // no softmax head
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

    spec.layers = {LayerSpec::softmax_head(3), LayerSpec::dense(4)};  // head not last
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("canonical text round-trips the architecture") {
    for (const char* name : {"a", "c", "desk-b", "desk-e"}) {
        auto spec = make_preset(name, 28, 28, 1, 10, 0.5);
        auto parsed = ArchitectureSpec::from_text(spec.to_text());
        CHECK(parsed == spec);
        CHECK(parsed.to_text() == spec.to_text());
    }
    CHECK_THROWS_AS(ArchitectureSpec::from_text("conv 3x3x4 relu; softmax 2"),
                    std::invalid_argument);
    CHECK_THROWS_AS(ArchitectureSpec::from_text("input 8x8x1; wiggle 3; softmax 2"),
                    std::invalid_argument);
}

TEST_CASE("all presets compose at their intended input sizes") {
    for (const auto& name : preset_names()) {
        const bool desk = name.rfind("desk-", 0) == 0;
        int side = desk ? 16 : 28;
        auto spec = make_preset(name, side, side, 1, 10);
        CHECK_NOTHROW(spec.validate());
        CHECK(spec.param_count() > 0);
    }
}

TEST_CASE("model save/load round-trip is bit-exact") {
    auto spec = make_preset("desk-c", 16, 16, 1, 10);
    ModelHandle m = build_model(spec, 7, "roundtrip");
    m.meta.provenance = "infected";
    const std::string path = temp_path("roundtrip");
    save_model(m, path);
    ModelHandle back = load_model(path);
    CHECK(back.spec == m.spec);
    CHECK(back.params.data == m.params.data);
    CHECK(back.meta.name == "roundtrip");
    CHECK(back.meta.provenance == "infected");
    CHECK(back.meta.train_seed == m.meta.train_seed);
    std::remove(path.c_str());
}

TEST_CASE("model file corruption is detected") {
    auto spec = make_preset("desk-a", 16, 16, 1, 4);
    ModelHandle m = build_model(spec, 3);
    const std::string path = temp_path("corrupt");
    save_model(m, path);

    SUBCASE("flipped payload byte fails the checksum") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(64);
        char b;
        f.seekg(64);
        f.get(b);
        f.seekp(64);
        f.put(static_cast<char>(b ^ 0x5a));
        f.close();
        CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("checksum"),
                             std::runtime_error);
    }
    SUBCASE("wrong magic is reported as such") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("NOPE", 4);
        f.close();
        CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("magic"), std::runtime_error);
    }
    SUBCASE("truncation is reported") {
        std::ifstream in(path, std::ios::binary);
        std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(buf.data(), static_cast<std::streamsize>(buf.size() / 2));
        out.close();
        CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("truncated"),
                             std::runtime_error);
    }
    std::remove(path.c_str());
}

TEST_CASE("crc32 matches the standard test vector") {
    // IEEE 802.3 check value for "123456789".
    CHECK(crc32("123456789", 9) == 0xCBF43926u);
}
