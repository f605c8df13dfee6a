#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "phyg/attacks.hpp"
#include "phyg/data.hpp"
#include "phyg/detector.hpp"
#include "phyg/mitigator.hpp"
#include "phyg/model.hpp"
#include "phyg/trainer.hpp"

namespace phyg {

// Invalid configuration or arguments: maps to CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat "key = value" text with dotted section prefixes and '#' comment lines.
struct KvConfig {
    std::map<std::string, std::string> values;
    std::string raw;  // original file bytes (hashed into reports)

    static KvConfig parse_file(const std::string& path);
    static KvConfig parse_text(const std::string& text, const std::string& origin);

    bool has(const std::string& key) const { return values.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    std::vector<int> get_int_list(const std::string& key) const;       // comma separated
    std::vector<std::string> get_str_list(const std::string& key) const;
};

struct DatasetConfig {
    enum class Source { Synthetic, Idx };
    Source source = Source::Synthetic;
    // synthetic
    int classes = 10;
    int train_per_class = 300;
    int test_per_class = 60;
    std::uint64_t seed = 1;
    double noise_sigma = 0.05;
    // idx
    std::string train_images, train_labels, test_images, test_labels;
};

struct ModelConfig {
    std::string arch = "desk-a";
    std::uint64_t seed = 11;
    std::string name = "model";
};

struct ReferenceConfig {
    enum class Mode { SelfTrain, Files };
    Mode mode = Mode::SelfTrain;
    int count = 1;
    double fraction = 0.25;           // clean subsample used to self-train
    std::vector<std::string> archs;   // cycled across the pool
    int epochs = 20;
    std::uint64_t seed = 21;
    std::vector<std::string> files;
};

// One experiment file drives every subcommand; each stage reads its section.
struct ExperimentConfig {
    std::uint64_t seed = 7;

    DatasetConfig dataset;
    ModelConfig model;
    TrainConfig train;

    bool has_attack = false;
    AttackSpec attack;
    std::uint64_t attack_seed = 9;

    ReferenceConfig reference;

    DetectionConfig detect;
    std::string detect_suspect;  // model file analyzed by detect/mitigate
    std::optional<std::vector<int>> ground_truth;

    MitigationConfig mitigate;
    int max_rounds = 4;

    std::string out_dir = "out";

    std::string config_hash;  // crc32 of the raw config bytes, hex
    std::map<std::string, std::string> echo;

    static ExperimentConfig from_kv(const KvConfig& kv);
    static ExperimentConfig load(const std::string& path);
};

// Dataset and model-pool resolution shared by the subcommands.
struct ResolvedData {
    Dataset train;
    Dataset test;
};
ResolvedData resolve_dataset(const ExperimentConfig& cfg);

// A preset name is instantiated at the dataset geometry; anything else is
// parsed as canonical architecture text.
ArchitectureSpec resolve_arch(const std::string& name_or_text, const Dataset& sample,
                              double dropout_rate);

// Self-trains or loads the reference pool. When the pool has two or more
// members, any member sharing the suspect's architecture is dropped.
std::vector<ModelHandle> resolve_references(const ExperimentConfig& cfg, const Dataset& clean,
                                            const ArchitectureSpec* suspect_arch);

}  // namespace phyg
