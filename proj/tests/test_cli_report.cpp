#include <stdexcept>

#include "doctest.h"
#include "phyg/config.hpp"
#include "phyg/report.hpp"
#include "phyg/version.hpp"

using namespace phyg;

TEST_CASE("kv config parsing: comments, unknown keys, duplicates") {
    auto kv = KvConfig::parse_text("# comment\n\nseed = 5\ndetect.beta = 0.3\n", "t");
    CHECK(kv.get_u64("seed", 0) == 5);
    CHECK(kv.get_double("detect.beta", 0) == doctest::Approx(0.3));

    CHECK_THROWS_AS(KvConfig::parse_text("wiggle.wobble = 1\n", "t"), ConfigError);
    CHECK_THROWS_AS(KvConfig::parse_text("seed = 1\nseed = 2\n", "t"), ConfigError);
    CHECK_THROWS_AS(KvConfig::parse_text("just some text\n", "t"), ConfigError);
    CHECK_THROWS_AS(KvConfig::parse_text("seed = abc\n", "t").get_u64("seed", 0), ConfigError);
}

TEST_CASE("experiment config: defaults and derived seeds") {
    auto kv = KvConfig::parse_text("seed = 9\n", "t");
    ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
    CHECK(cfg.seed == 9);
    CHECK(cfg.dataset.source == DatasetConfig::Source::Synthetic);
    CHECK(cfg.detect.beta == doctest::Approx(0.2));
    CHECK(cfg.detect.num_samples == 100);
    CHECK(cfg.train.epochs == 50);
    CHECK(cfg.train.learning_rate == doctest::Approx(0.01));
    CHECK(cfg.train.momentum == doctest::Approx(0.9));
    CHECK(cfg.train.batch_size == 128);
    CHECK_FALSE(cfg.has_attack);

    // Changing the global seed moves every derived stage seed.
    auto kv2 = KvConfig::parse_text("seed = 10\n", "t");
    ExperimentConfig cfg2 = ExperimentConfig::from_kv(kv2);
    CHECK(cfg.train.seed != cfg2.train.seed);
    CHECK(cfg.detect.seed != cfg2.detect.seed);

    // Explicit stage seed wins over the derivation.
    auto kv3 = KvConfig::parse_text("seed = 9\ntrain.seed = 123\n", "t");
    CHECK(ExperimentConfig::from_kv(kv3).train.seed == 123);
}

TEST_CASE("experiment config: exactly one dataset source") {
    CHECK_THROWS_AS(ExperimentConfig::from_kv(KvConfig::parse_text(
                        "dataset.source = synthetic\ndataset.idx.train_images = x\n", "t")),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_kv(KvConfig::parse_text(
                        "dataset.source = idx\ndataset.synthetic.classes = 4\n", "t")),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_kv(
                        KvConfig::parse_text("dataset.source = idx\n", "t")),
                    ConfigError);  // idx requires all four paths
}

TEST_CASE("experiment config: attack and trigger groups") {
    auto kv = KvConfig::parse_text(
        "attack.technique = badnets\n"
        "attack.target_labels = 3,5\n"
        "attack.trigger.kind = patch\n"
        "attack.trigger.row = 0\n"
        "attack.trigger.col = 0\n"
        "attack.trigger2.kind = blend\n"
        "attack.trigger2.transparency = 0.2\n",
        "t");
    ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
    REQUIRE(cfg.has_attack);
    CHECK(cfg.attack.target_labels == std::vector<int>{3, 5});
    REQUIRE(cfg.attack.triggers.size() == 2);
    CHECK(cfg.attack.triggers[0].kind == TriggerSpec::Kind::Patch);
    CHECK(cfg.attack.triggers[0].row == 0);
    CHECK(cfg.attack.triggers[1].kind == TriggerSpec::Kind::Blend);
    CHECK(cfg.attack.triggers[1].transparency == doctest::Approx(0.2));

    CHECK_THROWS_AS(ExperimentConfig::from_kv(
                        KvConfig::parse_text("attack.technique = frobnicate\n", "t")),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_kv(KvConfig::parse_text(
                        "reference.mode = files\n", "t")),
                    ConfigError);  // files mode without files
}

TEST_CASE("reference resolution honors the same-architecture removal rule") {
    auto kv = KvConfig::parse_text(
        "reference.mode = self_train\n"
        "reference.count = 3\n"
        "reference.fraction = 0.4\n"
        "reference.archs = desk-a,desk-b\n"
        "reference.epochs = 1\n",
        "t");
    ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
    Dataset clean = synth_generate(3, 12, 5);
    ArchitectureSpec suspect_arch = make_preset("desk-a", 16, 16, 1, 3, 0.5);
    auto refs = resolve_references(cfg, clean, &suspect_arch);
    // Pool was desk-a, desk-b, desk-a; both desk-a members must be dropped.
    REQUIRE(refs.size() == 1);
    CHECK(refs[0].spec == make_preset("desk-b", 16, 16, 1, 3, 0.5));

    // A single self-trained reference may share the suspect's architecture.
    auto kv1 = KvConfig::parse_text(
        "reference.count = 1\nreference.archs = desk-a\nreference.epochs = 1\n"
        "reference.fraction = 0.4\n",
        "t");
    auto one = resolve_references(ExperimentConfig::from_kv(kv1), clean, &suspect_arch);
    CHECK(one.size() == 1);
}

TEST_CASE("reports: canonical skeleton and merge consistency checks") {
    std::map<std::string, std::string> echo = {{"seed", "7"}};
    Json a = report_skeleton("train", "aabbccdd", 7, echo);
    a["metrics"]["classification_accuracy"] = 0.97;
    a["timing"]["wall_seconds"] = 1.25;
    Json b = report_skeleton("detect", "aabbccdd", 7, echo);
    b["detection"]["model_infected"] = true;
    b["detection"]["labels"] = Json::array();
    b["timing"]["wall_seconds"] = 9.5;

    Json merged = merge_reports({a, b});
    CHECK(merged["stages"].size() == 2);
    CHECK(merged["config_hash"] == "aabbccdd");

    // Idempotent: merging the merge with its parts changes nothing.
    Json again = merge_reports({merged, a, b});
    CHECK(strip_timing(again) == strip_timing(merged));

    Json alien = report_skeleton("poison", "deadbeef", 7, echo);
    CHECK_THROWS_AS(merge_reports({a, alien}), ConfigError);

    Json old = report_skeleton("poison", "aabbccdd", 7, echo);
    old["report_schema"] = kReportSchemaVersion + 1;
    CHECK_THROWS_AS(merge_reports({a, old}), ConfigError);

    Json conflicting = a;
    conflicting["metrics"]["classification_accuracy"] = 0.5;
    CHECK_THROWS_AS(merge_reports({a, conflicting}), ConfigError);

    const std::string md = summary_markdown(merged);
    CHECK(md.find("train") != std::string::npos);
    CHECK(md.find("INFECTED") != std::string::npos);
}

TEST_CASE("reports differing only in timing compare equal") {
    std::map<std::string, std::string> echo;
    Json a = report_skeleton("train", "x", 1, echo);
    Json b = a;
    a["timing"]["wall_seconds"] = 1.0;
    b["timing"]["wall_seconds"] = 2.0;
    CHECK(reports_equal_modulo_timing(a, b));
    b["seed"] = 2;
    CHECK_FALSE(reports_equal_modulo_timing(a, b));
}

TEST_CASE("crc32 hex formatting") {
    CHECK(crc32_hex("123456789") == "cbf43926");
    CHECK(crc32_hex("") == "00000000");
}
