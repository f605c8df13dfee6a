#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <unistd.h>

#include "doctest.h"
#include "phyg/data.hpp"
#include "phyg/model.hpp"
#include "phyg/trainer.hpp"

using namespace phyg;

namespace {

std::string tmpfile_name(const char* stem) {
    return std::string("/tmp/phyg_data_") + stem + "_" + std::to_string(::getpid());
}

// Sorted (label, pixels) view for set comparisons.
std::vector<std::pair<int, std::vector<double>>> as_rows(const Dataset& ds) {
    std::vector<std::pair<int, std::vector<double>>> rows;
    for (std::int64_t i = 0; i < ds.size(); ++i)
        rows.emplace_back(ds.labels[static_cast<std::size_t>(i)],
                          ds.images[static_cast<std::size_t>(i)].data);
    std::sort(rows.begin(), rows.end());
    return rows;
}

}  // namespace

TEST_CASE("idx round-trip preserves images and labels") {
    Dataset ds = synth_generate(4, 6, 99);
    // Quantize to the byte grid first so the round-trip is exact.
    for (Tensor& img : ds.images)
        for (double& p : img.data) p = std::lround(p * 255.0) / 255.0;

    const std::string ip = tmpfile_name("imgs"), lp = tmpfile_name("lbls");
    save_idx(ds, ip, lp);
    Dataset back = load_idx(ip, lp);
    CHECK(back.size() == ds.size());
    CHECK(back.class_count == ds.class_count);
    for (std::int64_t i = 0; i < ds.size(); ++i) {
        CHECK(back.labels[static_cast<std::size_t>(i)] ==
              ds.labels[static_cast<std::size_t>(i)]);
        CHECK(back.images[static_cast<std::size_t>(i)].shape ==
              ds.images[static_cast<std::size_t>(i)].shape);
        for (std::size_t p = 0; p < back.images[static_cast<std::size_t>(i)].data.size(); ++p)
            CHECK(back.images[static_cast<std::size_t>(i)].data[p] ==
                  doctest::Approx(ds.images[static_cast<std::size_t>(i)].data[p])
                      .epsilon(1e-12));
    }
    std::remove(ip.c_str());
    std::remove(lp.c_str());
}

TEST_CASE("idx byte 255 becomes exactly 1.0 and byte 0 becomes 0.0") {
    Dataset ds;
    ds.class_count = 2;
    Tensor img = Tensor::zeros({2, 2, 1});
    img.data = {0.0, 1.0, 100.0 / 255.0, 7.0 / 255.0};
    ds.images.push_back(img);
    ds.labels.push_back(1);
    const std::string ip = tmpfile_name("b255i"), lp = tmpfile_name("b255l");
    save_idx(ds, ip, lp);
    Dataset back = load_idx(ip, lp);
    CHECK(back.images[0].data[0] == 0.0);
    CHECK(back.images[0].data[1] == 1.0);
    CHECK(back.images[0].data[2] == 100.0 / 255.0);
    std::remove(ip.c_str());
    std::remove(lp.c_str());
}

TEST_CASE("idx loader rejects malformed files") {
    const std::string ip = tmpfile_name("badm"), lp = tmpfile_name("badml");
    Dataset ds = synth_generate(2, 3, 1);
    save_idx(ds, ip, lp);

    SUBCASE("bad magic") {
        std::fstream f(ip, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(3);
        f.put(0x42);
        f.close();
        CHECK_THROWS_WITH_AS(load_idx(ip, lp), doctest::Contains("magic"), std::runtime_error);
    }
    SUBCASE("count mismatch between files") {
        Dataset more = synth_generate(2, 4, 1);
        const std::string lp2 = tmpfile_name("badml2");
        save_idx(more, tmpfile_name("badm2"), lp2);
        CHECK_THROWS_WITH_AS(load_idx(ip, lp2), doctest::Contains("counts differ"),
                             std::runtime_error);
        std::remove(lp2.c_str());
    }
    SUBCASE("truncation") {
        std::ifstream in(ip, std::ios::binary);
        std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(ip, std::ios::binary | std::ios::trunc);
        out.write(buf.data(), static_cast<std::streamsize>(buf.size() - 10));
        out.close();
        CHECK_THROWS_WITH_AS(load_idx(ip, lp), doctest::Contains("truncated"),
                             std::runtime_error);
    }
    std::remove(ip.c_str());
    std::remove(lp.c_str());
}

TEST_CASE("synthetic generator: determinism, counts, zero-noise collapse") {
    Dataset a = synth_generate(3, 100, 7);
    Dataset b = synth_generate(3, 100, 7);
    Dataset c = synth_generate(3, 100, 8);
    CHECK(a.size() == 300);
    REQUIRE(a.size() == b.size());
    bool identical = true, differs_from_c = false;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        if (a.images[static_cast<std::size_t>(i)].data !=
            b.images[static_cast<std::size_t>(i)].data)
            identical = false;
        if (a.images[static_cast<std::size_t>(i)].data !=
            c.images[static_cast<std::size_t>(i)].data)
            differs_from_c = true;
    }
    CHECK(identical);
    CHECK(differs_from_c);

    auto by_class = a.indices_by_class();
    for (const auto& idx : by_class) CHECK(idx.size() == 100);
    CHECK_NOTHROW(a.validate());

    Dataset flat = synth_generate(3, 5, 7, 0.0);
    for (int cls = 0; cls < 3; ++cls)
        for (int s = 1; s < 5; ++s)
            CHECK(flat.images[static_cast<std::size_t>(cls * 5 + s)].data ==
                  flat.images[static_cast<std::size_t>(cls * 5)].data);

    CHECK_THROWS_AS(synth_generate(1, 5, 7), std::invalid_argument);
    CHECK_THROWS_AS(synth_generate(3, 0, 7), std::invalid_argument);
}

TEST_CASE("synthetic classes are linearly separable (probe >= 95%)") {
    Dataset ds = synth_generate(10, 50, 2026);
    Dataset probe_train = subsample(ds, 0.8, 1);
    // The held-out 20%: remove the training rows from the full set.
    auto train_rows = as_rows(probe_train);
    Dataset heldout;
    heldout.class_count = ds.class_count;
    for (std::int64_t i = 0; i < ds.size(); ++i) {
        auto row = std::make_pair(ds.labels[static_cast<std::size_t>(i)],
                                  ds.images[static_cast<std::size_t>(i)].data);
        if (!std::binary_search(train_rows.begin(), train_rows.end(), row)) {
            heldout.images.push_back(ds.images[static_cast<std::size_t>(i)]);
            heldout.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
        }
    }
    REQUIRE(heldout.size() == 100);

    ArchitectureSpec linear;
    linear.in_h = 16;
    linear.in_w = 16;
    linear.in_c = 1;
    linear.classes = 10;
    linear.layers = {LayerSpec::softmax_head(10)};
    TrainConfig tc;
    tc.epochs = 20;
    tc.batch_size = 32;
    tc.learning_rate = 0.05;
    tc.dropout = 0.0;
    tc.seed = 5;
    ModelHandle probe = train(build_model(linear, 5), probe_train, tc);
    CHECK(evaluate_accuracy(probe, heldout) >= 0.95);
}

TEST_CASE("subsample is stratified and exact") {
    Dataset ds = synth_generate(5, 40, 3);
    Dataset sub = subsample(ds, 0.2, 11);
    CHECK(sub.size() == 5 * 8);
    auto by_class = sub.indices_by_class();
    for (const auto& idx : by_class) CHECK(idx.size() == 8);

    Dataset all = subsample(ds, 1.0, 11);
    CHECK(as_rows(all) == as_rows(ds));  // full fraction = permutation

    CHECK_THROWS_AS(subsample(ds, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(subsample(ds, 1.5, 1), std::invalid_argument);
    Dataset tiny = synth_generate(2, 2, 5);
    CHECK_THROWS_AS(subsample(tiny, 0.1, 1), std::invalid_argument);  // would empty a class
}

TEST_CASE("split_disjoint partitions the dataset exactly") {
    Dataset ds = synth_generate(4, 30, 17);
    auto parts = split_disjoint(ds, 3, 9);
    REQUIRE(parts.size() == 3);
    std::int64_t total = 0;
    for (const auto& p : parts) {
        CHECK(p.size() == 40);
        total += p.size();
    }
    CHECK(total == ds.size());

    // Union of parts equals the original set, and no row repeats.
    std::vector<std::pair<int, std::vector<double>>> all_rows;
    for (const auto& p : parts) {
        auto rows = as_rows(p);
        all_rows.insert(all_rows.end(), rows.begin(), rows.end());
    }
    std::sort(all_rows.begin(), all_rows.end());
    CHECK(all_rows == as_rows(ds));
    CHECK(std::adjacent_find(all_rows.begin(), all_rows.end()) == all_rows.end());

    CHECK_THROWS_AS(split_disjoint(ds, 1, 9), std::invalid_argument);
    Dataset tiny = synth_generate(2, 2, 5);
    CHECK_THROWS_AS(split_disjoint(tiny, 3, 9), std::invalid_argument);
}
