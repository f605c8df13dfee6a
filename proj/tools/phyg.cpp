// Command-line driver: composes the pipeline stages from one experiment
// config file and writes canonical JSON reports plus model/dataset artifacts.
//
// Exit codes: 0 success, 2 invalid config/arguments, 3 infection unresolved
// after the allowed mitigation rounds.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "phyg/attacks.hpp"
#include "phyg/config.hpp"
#include "phyg/data.hpp"
#include "phyg/detector.hpp"
#include "phyg/mitigator.hpp"
#include "phyg/model_io.hpp"
#include "phyg/net.hpp"
#include "phyg/report.hpp"
#include "phyg/rng.hpp"
#include "phyg/trainer.hpp"
#include "phyg/version.hpp"

namespace fs = std::filesystem;
using namespace phyg;

namespace {

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    bool fast = false;
};

ExperimentConfig load_config(const Overrides& ov) {
    KvConfig kv = KvConfig::parse_file(ov.config_path);
    if (ov.seed) kv.values["seed"] = std::to_string(*ov.seed);
    ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
    cfg.config_hash = crc32_hex(kv.raw);
    if (ov.out_dir) cfg.out_dir = *ov.out_dir;
    if (ov.fast) cfg.detect.num_samples = 10;
    fs::create_directories(cfg.out_dir);
    return cfg;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string out_path(const ExperimentConfig& cfg, const std::string& file) {
    return (fs::path(cfg.out_dir) / file).string();
}

Json model_output_entry(const std::string& path) {
    Json j;
    j["path"] = path;
    j["crc32"] = [] (const std::string& p) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%08x", crc32_file(p));
        return std::string(buf);
    }(path);
    return j;
}

EvalMetrics eval_model(const ModelHandle& m, const Dataset& test) {
    EvalMetrics metrics;
    metrics.classification_accuracy = evaluate_accuracy(m, test);
    metrics.per_class_accuracy = per_class_accuracy(m, test);
    metrics.attack_success_rate = -1.0;  // not applicable unless an attack is configured
    return metrics;
}

int cmd_train(const Overrides& ov) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg = load_config(ov);
    ResolvedData data = resolve_dataset(cfg);
    ArchitectureSpec arch = resolve_arch(cfg.model.arch, data.train, cfg.train.dropout);

    ModelHandle init = build_model(arch, cfg.model.seed, cfg.model.name);
    TrainResult res = train_traced(init, data.train, cfg.train);
    res.model.meta.provenance = "clean";

    const std::string model_path = out_path(cfg, cfg.model.name + "_clean.phyg");
    save_model(res.model, model_path);

    EvalMetrics metrics = eval_model(res.model, data.test);
    Json report = report_skeleton("train", cfg.config_hash, cfg.seed, cfg.echo);
    report["outputs"]["model"] = model_output_entry(model_path);
    report["metrics"] = metrics_to_json(metrics);
    report["metrics"]["train_accuracy"] = evaluate_accuracy(res.model, data.train);
    report["metrics"]["final_epoch_mean_loss"] =
        res.epoch_mean_loss.empty() ? 0.0 : res.epoch_mean_loss.back();
    report["timing"]["wall_seconds"] = seconds_since(t0);
    write_json_file(out_path(cfg, "train_report.json"), report);

    std::cout << "train: accuracy " << metrics.classification_accuracy << " -> " << model_path
              << "\n";
    return 0;
}

int cmd_poison(const Overrides& ov) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg = load_config(ov);
    if (!cfg.has_attack) throw ConfigError("poison requires an attack.technique");
    ResolvedData data = resolve_dataset(cfg);
    cfg.attack.validate(data.train.class_count);
    ArchitectureSpec arch = resolve_arch(cfg.model.arch, data.train, cfg.train.dropout);

    PoisonResult poison;
    if (cfg.attack.technique == Technique::Mislabel) {
        poison = mislabel_poison(data.train, cfg.attack, cfg.attack_seed);
    } else if (cfg.attack.technique == Technique::BadNets ||
               cfg.attack.technique == Technique::Chen) {
        poison = backdoor_poison(data.train, cfg.attack, cfg.attack_seed);
    } else {
        // Detection-aware attack: craft injections against the reference
        // ensemble, then add them to the training set labeled y_t.
        std::vector<ModelHandle> ensemble = resolve_references(cfg, data.train, nullptr);
        const auto want = static_cast<std::int64_t>(cfg.attack.proportion *
                                                    static_cast<double>(data.train.size()));
        Rng rng(seed_combine(cfg.attack_seed, 0xADA7u));
        std::vector<std::int64_t> order(static_cast<std::size_t>(data.train.size()));
        for (std::int64_t i = 0; i < data.train.size(); ++i)
            order[static_cast<std::size_t>(i)] = i;
        rng.shuffle(order);
        const int y_t = cfg.attack.target_labels.front();
        std::vector<std::pair<Tensor, int>> targets;
        for (std::int64_t i = 0; i < want; ++i)
            targets.emplace_back(data.train.images[static_cast<std::size_t>(order[i])], y_t);
        std::vector<Tensor> crafted = adaptive_poison(ensemble, targets, 0.01, 1000);
        poison.dataset = data.train;
        poison.dataset.name += "/adaptive";
        for (Tensor& x : crafted) {
            poison.poisoned_indices.push_back(poison.dataset.size());
            poison.dataset.images.push_back(std::move(x));
            poison.dataset.labels.push_back(y_t);
        }
    }

    const std::string pi = out_path(cfg, "poisoned_train_images.idx");
    const std::string pl = out_path(cfg, "poisoned_train_labels.idx");
    save_idx(poison.dataset, pi, pl);

    ModelHandle infected =
        train(build_model(arch, cfg.model.seed, cfg.model.name), poison.dataset, cfg.train);
    infected.meta.provenance = "infected";
    const std::string model_path = out_path(cfg, cfg.model.name + "_infected.phyg");
    save_model(infected, model_path);

    Json report = report_skeleton("poison", cfg.config_hash, cfg.seed, cfg.echo);
    report["outputs"]["model"] = model_output_entry(model_path);
    report["outputs"]["poisoned_train_images"] = pi;
    report["outputs"]["poisoned_train_labels"] = pl;
    report["poison"]["indices"] = poison.poisoned_indices;
    report["poison"]["count"] = poison.poisoned_indices.size();

    EvalMetrics metrics = eval_model(infected, data.test);
    if (cfg.attack.technique == Technique::Adaptive) {
        // No trigger to apply at test time; measure how often the crafted
        // injections themselves land on the target label.
        Dataset crafted_set;
        crafted_set.class_count = poison.dataset.class_count;
        for (std::int64_t i : poison.poisoned_indices) {
            crafted_set.images.push_back(poison.dataset.images[static_cast<std::size_t>(i)]);
            crafted_set.labels.push_back(poison.dataset.labels[static_cast<std::size_t>(i)]);
        }
        metrics.attack_success_rate =
            crafted_set.size() == 0
                ? 0.0
                : attack_success_rate(infected, crafted_set, cfg.attack.target_labels.front());
        report["metrics"] = metrics_to_json(metrics);
    } else {
        Dataset adv = make_adversarial_testset(data.test, per_pair_specs(cfg.attack).front(),
                                               cfg.attack_seed);
        const std::string ai = out_path(cfg, "adversarial_test_images.idx");
        const std::string al = out_path(cfg, "adversarial_test_labels.idx");
        save_idx(adv, ai, al);
        report["outputs"]["adversarial_test_images"] = ai;
        report["outputs"]["adversarial_test_labels"] = al;
        metrics.attack_success_rate =
            attack_success_rate(infected, adv, cfg.attack.target_labels.front());
        report["metrics"] = metrics_to_json(metrics);
        // Per-(label, trigger) success rates for multi-pair campaigns.
        Json per_pair = Json::array();
        for (const AttackSpec& pair : per_pair_specs(cfg.attack)) {
            Dataset pair_adv = make_adversarial_testset(data.test, pair, cfg.attack_seed);
            Json entry;
            entry["target_label"] = pair.target_labels.front();
            entry["attack_success_rate"] =
                attack_success_rate(infected, pair_adv, pair.target_labels.front());
            per_pair.push_back(std::move(entry));
        }
        report["poison"]["per_pair_asr"] = std::move(per_pair);
    }

    report["timing"]["wall_seconds"] = seconds_since(t0);
    write_json_file(out_path(cfg, "poison_report.json"), report);
    std::cout << "poison: " << poison.poisoned_indices.size() << " poisoned samples, asr "
              << metrics.attack_success_rate << ", accuracy "
              << metrics.classification_accuracy << " -> " << model_path << "\n";
    return 0;
}

int cmd_detect(const Overrides& ov) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg = load_config(ov);
    if (cfg.detect_suspect.empty())
        throw ConfigError("detect requires detect.suspect = <model file>");
    ResolvedData data = resolve_dataset(cfg);
    ModelHandle suspect = load_model(cfg.detect_suspect);
    std::vector<ModelHandle> refs = resolve_references(cfg, data.train, &suspect.spec);

    DetectionReport det = detect_model(suspect, refs, cfg.detect, cfg.ground_truth);

    Json report = report_skeleton("detect", cfg.config_hash, cfg.seed, cfg.echo);
    report["detection"] = detection_report_to_json(det);
    report["suspect"] = cfg.detect_suspect;
    report["reference_count"] = refs.size();
    report["timing"]["wall_seconds"] = seconds_since(t0);
    report["timing"]["detection_seconds"] = det.wall_seconds;
    write_json_file(out_path(cfg, "detect_report.json"), report);

    std::cout << "detect: model " << (det.model_infected ? "INFECTED" : "clean");
    for (const LabelVerdict& v : det.verdicts)
        if (v.infected) std::cout << " label=" << v.label << " prob=" << v.prob;
    std::cout << " -> " << out_path(cfg, "detect_report.json") << "\n";
    return 0;
}

int cmd_mitigate(const Overrides& ov) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg = load_config(ov);
    if (cfg.detect_suspect.empty())
        throw ConfigError("mitigate requires detect.suspect = <model file>");
    ResolvedData data = resolve_dataset(cfg);
    ModelHandle suspect = load_model(cfg.detect_suspect);
    std::vector<ModelHandle> refs = resolve_references(cfg, data.train, &suspect.spec);

    std::optional<Dataset> adversarial;
    if (cfg.has_attack && cfg.attack.technique != Technique::Adaptive) {
        cfg.attack.validate(data.test.class_count);
        adversarial = make_adversarial_testset(data.test, per_pair_specs(cfg.attack).front(),
                                               cfg.attack_seed);
    }

    Json report = report_skeleton("mitigate", cfg.config_hash, cfg.seed, cfg.echo);
    Json before;
    before["classification_accuracy"] = evaluate_accuracy(suspect, data.test);
    if (adversarial)
        before["attack_success_rate"] =
            attack_success_rate(suspect, *adversarial, cfg.attack.target_labels.front());
    report["mitigation"]["before"] = before;

    MitigationResult res = iterate_until_clean(suspect, refs, cfg.detect, cfg.mitigate,
                                               data.train, cfg.max_rounds);

    const std::string model_path = out_path(cfg, cfg.model.name + "_patched.phyg");
    res.model.meta.name = cfg.model.name + "_patched";
    save_model(res.model, model_path);

    Json after;
    after["classification_accuracy"] = evaluate_accuracy(res.model, data.test);
    if (adversarial)
        after["attack_success_rate"] =
            attack_success_rate(res.model, *adversarial, cfg.attack.target_labels.front());
    report["mitigation"]["after"] = after;
    report["mitigation"]["rounds_used"] = res.rounds_used;
    report["mitigation"]["resolved"] = res.resolved;
    Json rounds = Json::array();
    for (const MitigationRound& r : res.rounds) {
        Json jr;
        jr["flagged_labels"] = r.flagged_labels;
        jr["crafted_success"] = r.crafted_success;
        jr["crafted_total"] = r.crafted_total;
        rounds.push_back(std::move(jr));
    }
    report["mitigation"]["rounds"] = std::move(rounds);
    report["detection"] = detection_report_to_json(res.final_report);
    report["outputs"]["model"] = model_output_entry(model_path);
    report["timing"]["wall_seconds"] = seconds_since(t0);
    write_json_file(out_path(cfg, "mitigate_report.json"), report);

    std::cout << "mitigate: " << (res.resolved ? "resolved" : "UNRESOLVED") << " in "
              << res.rounds_used << " round(s) -> " << model_path << "\n";
    return res.resolved ? 0 : 3;
}

int cmd_report(const std::vector<std::string>& paths, const std::string& out_dir) {
    std::vector<Json> reports;
    for (const std::string& p : paths) reports.push_back(read_json_file(p));
    Json merged = merge_reports(reports);
    fs::create_directories(out_dir);
    const std::string json_path = (fs::path(out_dir) / "summary.json").string();
    const std::string md_path = (fs::path(out_dir) / "summary.md").string();
    write_json_file(json_path, merged);
    std::ofstream md(md_path, std::ios::trunc);
    md << summary_markdown(merged);
    std::cout << "report: " << merged["stages"].size() << " stage(s) -> " << json_path << ", "
              << md_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"poisoned-model detection and mitigation toolkit"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    Overrides ov;
    std::vector<std::string> report_paths;
    std::string report_out = ".";

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", ov.config_path, "experiment config file")->required();
        cmd->add_option("--seed", [&ov](const CLI::results_t& res) {
            ov.seed = std::stoull(res[0]);
            return true;
        }, "override the global seed");
        cmd->add_option("--out", [&ov](const CLI::results_t& res) {
            ov.out_dir = res[0];
            return true;
        }, "override the output directory");
        cmd->add_flag("--fast", ov.fast, "crafted samples per label = 10");
    };

    CLI::App* train = app.add_subcommand("train", "train a clean model");
    add_common(train);
    CLI::App* poison = app.add_subcommand("poison", "poison the training set and train the infected model");
    add_common(poison);
    CLI::App* detect = app.add_subcommand("detect", "scan a model for infected labels");
    add_common(detect);
    CLI::App* mitigate = app.add_subcommand("mitigate", "detect and unlearn until clean");
    add_common(mitigate);
    CLI::App* report = app.add_subcommand("report", "merge stage reports into a summary");
    report->add_option("paths", report_paths, "stage report JSON files")->required();
    report->add_option("--out", report_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(ov);
        if (poison->parsed()) return cmd_poison(ov);
        if (detect->parsed()) return cmd_detect(ov);
        if (mitigate->parsed()) return cmd_mitigate(ov);
        if (report->parsed()) return cmd_report(report_paths, report_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
