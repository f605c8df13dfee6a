#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "phyg/data.hpp"
#include "phyg/detector.hpp"
#include "phyg/model.hpp"
#include "phyg/trainer.hpp"

namespace phyg {

struct MitigationConfig {
    double c_init = 1.0;               // weight on the reference basin term
    double d_init = 1.0;               // weight on the reference repulsion term
    double loss_target = 0.01;         // both guided losses must fall below this
    int samples_per_pair = 5;          // crafted x per (infected, basin) label pair
    double clean_fraction = 0.10;      // of the clean data
    double adversarial_fraction = 0.20;  // crafted entries, relative to the clean portion
    int retrain_epochs = 5;
    double alpha = 0.01;               // craft step
    int max_iters = 2000;              // craft iteration cap
    std::uint64_t seed = 0;
    int threads = 0;
    TrainConfig retrain;               // lr/momentum/batch for the unlearning retrain

    void validate() const;
};

struct UnlearnSample {
    Tensor x;
    int basin_label = 0;  // y_o: the healthy class the references pull x into
    bool success = false;
    double loss_suspect_target = 0.0;  // L_T(x, y_t) at exit
    double loss_ref_basin = 0.0;       // max_i L_ref_i(x, y_o) at exit
};

// Descends L_T(x,y_t) + c * sum_i L_ref_i(x,y_o) - d * sum_i L_ref_i(x,y_t)
// from a Gaussian start, clamped to [0,1]; every 100 iterations the violated
// term's coefficient is multiplied by 1.5 (capped at 1e4). Success requires
// L_T(x,y_t) < loss_target and every reference's L(x,y_o) < loss_target.
UnlearnSample craft_unlearning_sample(const ModelHandle& suspect,
                                      const std::vector<ModelHandle>& references, int target_label,
                                      int basin_label, const MitigationConfig& cfg,
                                      std::uint64_t seed);

// round(clean_fraction * N) stratified clean samples plus crafted entries
// cycled/truncated to round(adversarial_fraction * clean portion), labeled
// with their basin classes, shuffled by seed.
Dataset build_unlearning_set(const Dataset& clean,
                             const std::vector<std::pair<Tensor, int>>& crafted,
                             const MitigationConfig& cfg, std::uint64_t seed);

// Retrains the suspect on the mixed set for retrain_epochs; the result is
// tagged provenance "patched".
ModelHandle unlearn(const ModelHandle& suspect, const Dataset& mixed, const MitigationConfig& cfg);

struct MitigationRound {
    std::vector<int> flagged_labels;
    int crafted_success = 0;
    int crafted_total = 0;
};

struct MitigationResult {
    ModelHandle model;
    int rounds_used = 0;
    bool resolved = false;  // false: max_rounds exhausted with infection remaining
    DetectionReport final_report;
    std::vector<MitigationRound> rounds;
};

// detect -> craft for every flagged label -> unlearn, repeated until no label
// is flagged or max_rounds is exhausted.
MitigationResult iterate_until_clean(const ModelHandle& suspect,
                                     const std::vector<ModelHandle>& references,
                                     const DetectionConfig& detect_cfg,
                                     const MitigationConfig& mit_cfg, const Dataset& clean,
                                     int max_rounds);

}  // namespace phyg
