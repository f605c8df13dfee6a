#include <algorithm>
#include <stdexcept>

#include "doctest.h"
#include "phyg/attacks.hpp"
#include "phyg/data.hpp"
#include "phyg/net.hpp"
#include "planted.hpp"

using namespace phyg;

namespace {

AttackSpec mislabel_spec(int target, int source, double p) {
    AttackSpec s;
    s.technique = Technique::Mislabel;
    s.target_labels = {target};
    s.source_class = source;
    s.proportion = p;
    return s;
}

AttackSpec badnets_spec(std::vector<int> targets, std::vector<TriggerSpec> triggers, double p) {
    AttackSpec s;
    s.technique = Technique::BadNets;
    s.target_labels = std::move(targets);
    s.proportion = p;
    s.triggers = std::move(triggers);
    return s;
}

}  // namespace

TEST_CASE("mislabel: exact count, only source-class labels rewritten") {
    Dataset ds = synth_generate(4, 250, 5);  // N = 1000
    auto res = mislabel_poison(ds, mislabel_spec(1, 2, 0.05), 77);
    CHECK(res.dataset.size() == 1000);
    CHECK(res.poisoned_indices.size() == 50);  // floor(0.05 * 1000)

    for (std::int64_t i : res.poisoned_indices) {
        CHECK(ds.labels[static_cast<std::size_t>(i)] == 2);
        CHECK(res.dataset.labels[static_cast<std::size_t>(i)] == 1);
        CHECK(res.dataset.images[static_cast<std::size_t>(i)].data ==
              ds.images[static_cast<std::size_t>(i)].data);
    }
    // Everything off the poisoned list is untouched.
    std::vector<bool> poisoned(1000, false);
    for (std::int64_t i : res.poisoned_indices) poisoned[static_cast<std::size_t>(i)] = true;
    for (std::int64_t i = 0; i < 1000; ++i)
        if (!poisoned[static_cast<std::size_t>(i)]) {
            CHECK(res.dataset.labels[static_cast<std::size_t>(i)] ==
                  ds.labels[static_cast<std::size_t>(i)]);
        }

    // Deterministic in the seed.
    auto res2 = mislabel_poison(ds, mislabel_spec(1, 2, 0.05), 77);
    CHECK(res2.poisoned_indices == res.poisoned_indices);
}

TEST_CASE("mislabel: vanishing proportion leaves the dataset unchanged") {
    Dataset ds = synth_generate(4, 50, 5);
    auto res = mislabel_poison(ds, mislabel_spec(1, 2, 1e-9), 3);
    CHECK(res.poisoned_indices.empty());
    CHECK(res.dataset.labels == ds.labels);
}

TEST_CASE("mislabel: too few source samples is an error") {
    Dataset ds = synth_generate(10, 20, 5);  // 20 per class, N=200
    CHECK_THROWS_AS(mislabel_poison(ds, mislabel_spec(1, 2, 0.2), 3), std::invalid_argument);
    CHECK_THROWS_AS(mislabel_poison(ds, mislabel_spec(2, 2, 0.05), 3), std::invalid_argument);
}

TEST_CASE("apply_trigger: patch anchors bottom-right and is idempotent") {
    Dataset ds = synth_generate(2, 1, 9);
    const Tensor& img = ds.images[0];
    TriggerSpec patch = TriggerSpec::patch();
    Tensor once = apply_trigger(img, patch);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const double v = once.data[static_cast<std::size_t>(y) * 16 + x];
            if (y >= 12 && x >= 12)
                CHECK(v == 1.0);
            else
                CHECK(v == img.data[static_cast<std::size_t>(y) * 16 + x]);
        }
    CHECK(apply_trigger(once, patch).data == once.data);

    CHECK_THROWS_AS(apply_trigger(img, TriggerSpec::patch(4, 4, 14, 0)),
                    std::invalid_argument);
}

TEST_CASE("apply_trigger: blend identity at rho=0, pure noise at rho=1") {
    Dataset ds = synth_generate(2, 2, 9);
    Tensor same = apply_trigger(ds.images[0], TriggerSpec::blend(5, 0.0));
    CHECK(same.data == ds.images[0].data);

    Tensor n1 = apply_trigger(ds.images[0], TriggerSpec::blend(5, 1.0));
    Tensor n2 = apply_trigger(ds.images[1], TriggerSpec::blend(5, 1.0));
    CHECK(n1.data == n2.data);  // the image is gone; only the noise field remains
    for (double v : n1.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("backdoor: clone-and-append with exact counts") {
    Dataset ds = synth_generate(4, 250, 5);  // N = 1000
    auto res = backdoor_poison(ds, badnets_spec({1}, {TriggerSpec::patch()}, 0.05), 3);
    CHECK(res.dataset.size() == 1050);
    CHECK(res.poisoned_indices.size() == 50);
    for (std::int64_t i = 0; i < 1000; ++i) {
        CHECK(res.dataset.labels[static_cast<std::size_t>(i)] ==
              ds.labels[static_cast<std::size_t>(i)]);
        CHECK(res.dataset.images[static_cast<std::size_t>(i)].data ==
              ds.images[static_cast<std::size_t>(i)].data);
    }
    for (std::int64_t i : res.poisoned_indices) {
        CHECK(i >= 1000);
        CHECK(res.dataset.labels[static_cast<std::size_t>(i)] == 1);
        // the patch is visible
        CHECK(res.dataset.images[static_cast<std::size_t>(i)].data[15 * 16 + 15] == 1.0);
    }
}

TEST_CASE("backdoor: nine triggers on one label inject 9 * floor(p*N) disjoint clones") {
    Dataset ds = synth_generate(4, 250, 5);
    std::vector<TriggerSpec> triggers;
    for (int row : {0, 6, 12})
        for (int col : {0, 6, 12}) triggers.push_back(TriggerSpec::patch(4, 4, row, col));
    auto res = backdoor_poison(ds, badnets_spec({1}, triggers, 0.05), 3);
    CHECK(res.dataset.size() == 1000 + 9 * 50);
    CHECK(res.poisoned_indices.size() == 450);
    for (std::int64_t i : res.poisoned_indices)
        CHECK(res.dataset.labels[static_cast<std::size_t>(i)] == 1);
}

TEST_CASE("adversarial test set: backdoor filters the target class") {
    Dataset test = synth_generate(4, 25, 6);
    auto spec = badnets_spec({1}, {TriggerSpec::patch()}, 0.05);
    Dataset adv = make_adversarial_testset(test, spec, 1);
    CHECK(adv.size() == 75);  // every non-target image
    for (std::int64_t i = 0; i < adv.size(); ++i) {
        CHECK(adv.labels[static_cast<std::size_t>(i)] != 1);
        CHECK(adv.images[static_cast<std::size_t>(i)].data[15 * 16 + 15] == 1.0);
    }
}

TEST_CASE("adversarial test set: mislabel keeps source images bit-identical") {
    Dataset test = synth_generate(4, 25, 6);
    auto spec = mislabel_spec(1, 2, 0.05);
    Dataset adv = make_adversarial_testset(test, spec, 1);
    CHECK(adv.size() == 25);
    std::size_t j = 0;
    for (std::int64_t i = 0; i < test.size(); ++i) {
        if (test.labels[static_cast<std::size_t>(i)] != 2) continue;
        CHECK(adv.images[j].data == test.images[static_cast<std::size_t>(i)].data);
        CHECK(adv.labels[j] == 2);
        ++j;
    }
}

TEST_CASE("per_pair_specs expands labels x triggers") {
    auto spec = badnets_spec({1, 2}, {TriggerSpec::patch(), TriggerSpec::patch(4, 4, 0, 0)}, 0.05);
    auto pairs = per_pair_specs(spec);
    REQUIRE(pairs.size() == 4);
    for (const auto& p : pairs) {
        CHECK(p.target_labels.size() == 1);
        CHECK(p.triggers.size() == 1);
    }
}

TEST_CASE("adaptive crafting descends the summed ensemble loss") {
    // Single-member ensemble: plain targeted descent toward label 1.
    std::vector<ModelHandle> ensemble = {planted::reference()};
    Tensor start({1, 2, 1}, {0.5, 0.5});
    auto out = adaptive_poison(ensemble, {{start, 1}}, 0.05, 500);
    REQUIRE(out.size() == 1);
    CompiledModel ref(ensemble[0]);
    Workspace ws;
    const double final_loss = ref.loss(out[0].data, 1, ws);
    CHECK(final_loss <= 0.01);  // hit the 0.01 * k stopping target
    for (double v : out[0].data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // Two disagreeing members: the craft must satisfy both.
    std::vector<ModelHandle> both = {planted::suspect(), planted::reference()};
    auto out2 = adaptive_poison(both, {{start, 1}}, 0.05, 2000);
    CompiledModel sus(both[0]);
    const double l_s = sus.loss(out2[0].data, 1, ws);
    const double l_r = ref.loss(out2[0].data, 1, ws);
    CHECK(l_s + l_r <= 0.02);
    CHECK(out2[0].data[0] > 0.9);  // x0 -> 1 satisfies the suspect
    CHECK(out2[0].data[1] > 0.9);  // x1 -> 1 satisfies the reference

    CHECK_THROWS_AS(adaptive_poison({}, {{start, 1}}, 0.05, 10), std::invalid_argument);
}
