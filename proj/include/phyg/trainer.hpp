#pragma once

#include <cstdint>
#include <vector>

#include "phyg/data.hpp"
#include "phyg/model.hpp"

namespace phyg {

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double dropout = 0.5;  // rate installed into preset dropout layers at build time
    int batch_size = 128;
    int epochs = 50;
    std::uint64_t seed = 0;
    int threads = 0;  // 0 = default_thread_count()

    void validate() const;
};

struct EvalMetrics {
    double classification_accuracy = 0.0;
    double attack_success_rate = 0.0;
    std::vector<double> per_class_accuracy;
};

struct TrainResult {
    ModelHandle model;
    std::vector<double> epoch_mean_loss;
};

// Minibatch SGD with momentum on the cross-entropy objective, dropout active,
// seeded shuffle per epoch, last incomplete batch used. Deterministic in
// (initial model, dataset, config); a non-finite loss aborts with a
// diagnostic. Returns a fresh handle.
TrainResult train_traced(const ModelHandle& model, const Dataset& ds, const TrainConfig& cfg);
ModelHandle train(const ModelHandle& model, const Dataset& ds, const TrainConfig& cfg);

double evaluate_accuracy(const ModelHandle& model, const Dataset& ds, int threads = 0);
std::vector<double> per_class_accuracy(const ModelHandle& model, const Dataset& ds,
                                       int threads = 0);

// Fraction of adversarial samples predicted as the target label.
double attack_success_rate(const ModelHandle& model, const Dataset& adversarial, int target_label,
                           int threads = 0);

}  // namespace phyg
