#include <set>
#include <stdexcept>

#include "doctest.h"
#include "phyg/data.hpp"
#include "phyg/mitigator.hpp"
#include "phyg/net.hpp"
#include "planted.hpp"

using namespace phyg;

namespace {

MitigationConfig quick_cfg() {
    MitigationConfig cfg;
    cfg.max_iters = 1500;
    cfg.seed = 1;
    cfg.retrain.batch_size = 32;
    return cfg;
}

DetectionConfig detect_cfg() {
    DetectionConfig cfg;
    cfg.max_iters = 400;
    cfg.phase1_max_iters = 8000;  // see test_detector: the planted toy saturates
    cfg.num_samples = 10;
    cfg.gamma_iters = 200;
    cfg.lambda_iters = 200;
    cfg.seed = 2;
    return cfg;
}

// Uniform 2-pixel dataset labeled by the reference's rule (class 1 iff
// x1 > 0.5): the "true task" of the planted scenario.
Dataset planted_clean(int n, std::uint64_t seed) {
    Dataset ds;
    ds.class_count = 2;
    ds.name = "planted-clean";
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        double a = rng.uniform(), b = rng.uniform();
        ds.images.push_back(Tensor({1, 2, 1}, {a, b}));
        ds.labels.push_back(b > 0.5 ? 1 : 0);
    }
    return ds;
}

}  // namespace

TEST_CASE("unlearning craft lands in the suspect's poisoned region and the reference's basin") {
    ModelHandle T = planted::suspect();
    ModelHandle R = planted::reference();
    MitigationConfig cfg = quick_cfg();

    // Feasibility oracle: the corner (1, 0) satisfies both targets.
    CompiledModel ct(T), cr(R);
    Workspace ws;
    bool feasible = false;
    for (int i = 0; i <= 100 && !feasible; ++i)
        for (int j = 0; j <= 100 && !feasible; ++j) {
            const std::vector<double> x = {i / 100.0, j / 100.0};
            if (ct.loss(x, 1, ws) < cfg.loss_target && cr.loss(x, 0, ws) < cfg.loss_target)
                feasible = true;
        }
    REQUIRE(feasible);

    int successes = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        UnlearnSample u = craft_unlearning_sample(T, {R}, 1, 0, cfg, 50 + s);
        if (!u.success) continue;
        ++successes;
        CHECK(u.loss_suspect_target < cfg.loss_target);
        CHECK(u.loss_ref_basin < cfg.loss_target);
        // loss < 0.01 forces the argmax on both sides.
        CHECK(predict(T, u.x).label == 1);
        CHECK(predict(R, u.x).label == 0);
        CHECK(u.basin_label == 0);
    }
    CHECK(successes >= 4);

    UnlearnSample a = craft_unlearning_sample(T, {R}, 1, 0, cfg, 123);
    UnlearnSample b = craft_unlearning_sample(T, {R}, 1, 0, cfg, 123);
    CHECK(a.x.data == b.x.data);  // deterministic in the seed
}

TEST_CASE("a healthy suspect identical to the reference cannot be crafted against") {
    ModelHandle R = planted::reference();
    MitigationConfig cfg = quick_cfg();
    cfg.max_iters = 300;
    // Demands loss(x, 1) < 0.01 and loss(x, 0) < 0.01 on the same model:
    // softmax mass cannot exceed 1.
    UnlearnSample u = craft_unlearning_sample(R, {R}, 1, 0, cfg, 9);
    CHECK_FALSE(u.success);
    CHECK_THROWS_AS(craft_unlearning_sample(R, {R}, 1, 1, cfg, 9), std::invalid_argument);
}

TEST_CASE("unlearning set composition matches the closed forms") {
    Dataset clean = synth_generate(10, 500, 4);  // N = 5000
    std::vector<std::pair<Tensor, int>> crafted;
    for (int i = 0; i < 3; ++i) crafted.emplace_back(clean.images[static_cast<std::size_t>(i)], 2);

    MitigationConfig cfg = quick_cfg();
    Dataset mixed = build_unlearning_set(clean, crafted, cfg, 11);
    CHECK(mixed.size() == 500 + 100);  // round(0.10 * 5000) + round(0.20 * 500)

    // The crafted images cycle; count entries equal to a crafted pixel row.
    int crafted_count = 0;
    std::set<std::vector<double>> crafted_rows;
    for (const auto& [img, label] : crafted) crafted_rows.insert(img.data);
    for (std::int64_t i = 0; i < mixed.size(); ++i)
        if (crafted_rows.count(mixed.images[static_cast<std::size_t>(i)].data) &&
            mixed.labels[static_cast<std::size_t>(i)] == 2)
            ++crafted_count;
    CHECK(crafted_count >= 100);  // 100 crafted entries (may collide with clean rows)

    CHECK_THROWS_AS(build_unlearning_set(clean, {}, cfg, 1), std::invalid_argument);
}

TEST_CASE("unlearn: zero retrain epochs returns the model unchanged, tagged patched") {
    ModelHandle T = planted::suspect();
    Dataset clean = planted_clean(64, 3);
    MitigationConfig cfg = quick_cfg();
    cfg.retrain_epochs = 0;
    ModelHandle out = unlearn(T, clean, cfg);
    CHECK(out.params.data == T.params.data);
    CHECK(out.meta.provenance == "patched");
}

TEST_CASE("iterate_until_clean: a clean model needs zero rounds") {
    ModelHandle R = planted::reference();
    Dataset clean = planted_clean(64, 5);
    // Reference identical to the suspect: criteria exclusion guarantees no
    // label can be flagged.
    MitigationResult res =
        iterate_until_clean(R, {R}, detect_cfg(), quick_cfg(), clean, 3);
    CHECK(res.resolved);
    CHECK(res.rounds_used == 0);
    CHECK(res.model.params.data == R.params.data);
    CHECK_FALSE(res.final_report.model_infected);
}

TEST_CASE("iterate_until_clean reports unresolved when rounds run out") {
    ModelHandle T = planted::suspect();
    ModelHandle R = planted::reference();
    Dataset clean = planted_clean(64, 7);
    MitigationConfig cfg = quick_cfg();
    cfg.retrain_epochs = 0;  // retraining does nothing, infection persists
    MitigationResult res = iterate_until_clean(T, {R}, detect_cfg(), cfg, clean, 2);
    CHECK_FALSE(res.resolved);
    CHECK(res.rounds_used == 2);
    CHECK(res.final_report.model_infected);
    REQUIRE(res.rounds.size() == 2);
    CHECK(res.rounds[0].crafted_success > 0);
    CHECK_THROWS_AS(iterate_until_clean(T, {R}, detect_cfg(), cfg, clean, 0),
                    std::invalid_argument);
}

TEST_CASE("iterate_until_clean unlearns the planted region") {
    ModelHandle T = planted::suspect();
    ModelHandle R = planted::reference();
    Dataset clean = planted_clean(400, 9);
    MitigationConfig cfg = quick_cfg();
    // The planted weights sit at magnitude 20; give the tiny linear model a
    // retrain budget that can actually move them.
    cfg.retrain_epochs = 40;
    cfg.retrain.learning_rate = 0.5;
    cfg.retrain.batch_size = 16;
    MitigationResult res = iterate_until_clean(T, {R}, detect_cfg(), cfg, clean, 4);
    CHECK(res.resolved);
    CHECK(res.rounds_used >= 1);
    CHECK_FALSE(res.final_report.model_infected);
    CHECK(res.model.meta.provenance == "patched");
    // The patched model no longer claims the poisoned corner.
    CHECK(predict(res.model, Tensor({1, 2, 1}, {1.0, 0.0})).label == 0);
}

TEST_CASE("mitigation config validation") {
    MitigationConfig cfg = quick_cfg();
    cfg.clean_fraction = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = quick_cfg();
    cfg.adversarial_fraction = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = quick_cfg();
    cfg.loss_target = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
