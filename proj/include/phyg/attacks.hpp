#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "phyg/data.hpp"
#include "phyg/model.hpp"

namespace phyg {

enum class Technique { Mislabel, BadNets, Chen, Adaptive };

struct TriggerSpec {
    enum class Kind { Patch, Blend };
    Kind kind = Kind::Patch;
    // patch: solid block written over the image; row/col = -1 anchors bottom-right
    int height = 4, width = 4;
    int row = -1, col = -1;
    double value = 1.0;
    // blend: (1 - transparency) * image + transparency * noise(noise_seed)
    std::uint64_t noise_seed = 1;
    double transparency = 0.1;

    static TriggerSpec patch(int h = 4, int w = 4, int row = -1, int col = -1,
                             double value = 1.0);
    static TriggerSpec blend(std::uint64_t noise_seed = 1, double transparency = 0.1);
};

// Declarative description of one poisoning campaign.
struct AttackSpec {
    Technique technique = Technique::Mislabel;
    std::vector<int> target_labels;      // y_t, one or more
    int source_class = -1;               // mislabel only
    double proportion = 0.06;            // fraction of |ds| poisoned, per (label, trigger) pair
    std::vector<TriggerSpec> triggers;   // backdoor techniques

    void validate(int class_count) const;
};

struct PoisonResult {
    Dataset dataset;
    std::vector<std::int64_t> poisoned_indices;
};

// Rewrites the labels of floor(p * N) seeded-uniform source-class samples to
// the target label(s); images untouched, dataset size unchanged.
PoisonResult mislabel_poison(const Dataset& ds, const AttackSpec& spec, std::uint64_t seed);

// Patch: overwrite the anchored window. Blend: (1-rho) x + rho * noise,
// clamped to [0, 1]. The blend noise field is a fixed per-trigger pattern.
Tensor apply_trigger(const Tensor& image, const TriggerSpec& trigger);

// Clones floor(p * N) clean samples per (target label, trigger) pair with
// pairwise-disjoint sources, applies the trigger, relabels to the target and
// appends. Originals are retained.
PoisonResult backdoor_poison(const Dataset& ds, const AttackSpec& spec, std::uint64_t seed);

// Backdoor: the first (label, trigger) pair applied to every test image not
// of that label. Mislabel: the source-class test images, unmodified. Labels
// keep their ground-truth values.
Dataset make_adversarial_testset(const Dataset& test, const AttackSpec& spec, std::uint64_t seed);

// Splits a multi-label / multi-trigger campaign into its (label, trigger)
// components, e.g. for per-trigger success-rate measurement.
std::vector<AttackSpec> per_pair_specs(const AttackSpec& spec);

// Detection-aware crafting: each target image descends the summed
// cross-entropy over all ensemble members toward its target label, clamped
// to [0, 1] per step, stopping at a summed loss <= 0.01 * k. The step halves
// when a move would increase the summed loss.
std::vector<Tensor> adaptive_poison(const std::vector<ModelHandle>& ensemble,
                                    const std::vector<std::pair<Tensor, int>>& targets,
                                    double step, int iters);

}  // namespace phyg
