#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "phyg/model.hpp"
#include "phyg/net.hpp"
#include "phyg/tensor.hpp"

namespace phyg {

// Raised when a reference model cannot separate the decision space for a
// label: its maximum reachable loss never exceeds beta, or gradient ascent
// makes no progress at all (input-independent logits).
struct DegenerateReferenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DetectionConfig {
    double alpha = 0.01;          // crafting step
    double beta = 0.2;            // poisoned-region loss bound
    double gamma_fraction = 0.5;  // gamma = fraction * max reachable reference loss
    double phase1_floor = 3.0;    // escape threshold on the suspect loss
    int max_iters = 2000;         // phase-2 descent cap
    int phase1_max_iters = 500;
    int num_samples = 100;        // crafted probes per label (10 in fast mode)
    double prob_threshold = 0.5;  // label infected iff prob >= threshold
    int lambda_iters = 1000;      // ascent iterations per lambda-tuning round
    int lambda_rounds = 5;
    int gamma_starts = 8;         // random restarts for the gamma ascent
    int gamma_iters = 500;
    std::uint64_t seed = 0;
    int threads = 0;
    bool record_traces = false;   // keep per-iteration loss traces in CraftOutcome

    void validate() const;
};

struct CraftOutcome {
    Tensor x;
    bool reached = false;
    double final_loss_suspect = 0.0;
    std::vector<double> final_loss_refs;
    double phase1_exit_loss = 0.0;  // suspect loss when phase 1 ended
    int phase1_iters = 0;
    bool escaped = false;  // phase 1 cleared the floor within its budget
    // Phase-2 per-iteration losses (suspect, then one column per reference);
    // populated only when cfg.record_traces.
    std::vector<double> trace_suspect;
    std::vector<std::vector<double>> trace_refs;
};

struct LabelVerdict {
    int label = 0;
    double prob = 0.0;  // fraction of crafted samples that reached the poisoned region
    bool infected = false;
    int reached_count = 0;
    std::vector<double> lambdas;
    std::vector<double> gammas;
};

struct DetectionReport {
    std::vector<LabelVerdict> verdicts;  // one per label, ascending
    bool model_infected = false;
    // Populated when ground truth is supplied.
    bool has_ground_truth = false;
    std::vector<int> ground_truth_labels;
    double false_positive_rate = 0.0;
    std::vector<int> true_positives;  // 1/0 per ground-truth label
    double wall_seconds = 0.0;
};

// Seeded gradient ascent maximizing the reference loss for the label from
// gamma_starts Gaussian starts, x clamped to [0,1] each step; returns
// gamma_fraction * (max observed loss). Throws DegenerateReferenceError.
double estimate_gamma(const ModelHandle& reference, int label, const DetectionConfig& cfg);
double estimate_gamma(const CompiledModel& reference, int label, const DetectionConfig& cfg);

// Balances the two loss terms: repeatedly ascends
// L_suspect(z) + lambda * L_ref(z) for lambda_iters, then re-estimates lambda
// as the end-state loss ratio, until the two sides agree within 5% or rounds
// run out.
double tune_lambda(const ModelHandle& suspect, const ModelHandle& reference, int label,
                   const DetectionConfig& cfg);
double tune_lambda(const CompiledModel& suspect, const CompiledModel& reference, int label,
                   const DetectionConfig& cfg);

// Three-phase probe craft: escape the label's decision region (ascent until
// the suspect loss clears phase1_floor), descend
// L_suspect - sum_i lambda_i * L_ref_i, and accept iff the suspect loss is
// <= beta while every reference loss is >= its gamma.
CraftOutcome craft_sample(const ModelHandle& suspect, const std::vector<ModelHandle>& references,
                          int label, const std::vector<double>& lambdas,
                          const std::vector<double>& gammas, const DetectionConfig& cfg,
                          std::uint64_t sample_seed);
CraftOutcome craft_sample(const CompiledModel& suspect,
                          const std::vector<const CompiledModel*>& references, int label,
                          const std::vector<double>& lambdas, const std::vector<double>& gammas,
                          const DetectionConfig& cfg, std::uint64_t sample_seed);

LabelVerdict detect_label(const ModelHandle& suspect, const std::vector<ModelHandle>& references,
                          int label, const DetectionConfig& cfg);

DetectionReport detect_model(const ModelHandle& suspect,
                             const std::vector<ModelHandle>& references,
                             const DetectionConfig& cfg,
                             const std::optional<std::vector<int>>& ground_truth = std::nullopt);

}  // namespace phyg
