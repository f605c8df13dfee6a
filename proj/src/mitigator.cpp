#include "phyg/mitigator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "phyg/net.hpp"
#include "phyg/parallel.hpp"
#include "phyg/rng.hpp"

namespace phyg {

void MitigationConfig::validate() const {
    if (loss_target <= 0.0) throw std::invalid_argument("loss target must be positive");
    if (!(clean_fraction > 0.0 && clean_fraction < 1.0))
        throw std::invalid_argument("clean fraction must be in (0, 1)");
    if (!(adversarial_fraction > 0.0 && adversarial_fraction < 1.0))
        throw std::invalid_argument("adversarial fraction must be in (0, 1)");
    if (samples_per_pair < 1) throw std::invalid_argument("samples_per_pair must be >= 1");
    if (retrain_epochs < 0) throw std::invalid_argument("retrain epochs must be >= 0");
    if (alpha <= 0.0) throw std::invalid_argument("craft step must be positive");
    if (max_iters < 1) throw std::invalid_argument("craft iteration cap must be >= 1");
    if (c_init <= 0.0 || d_init <= 0.0)
        throw std::invalid_argument("c and d must start positive");
}

namespace {

constexpr double kCoeffCap = 1e4;
constexpr int kAdjustEvery = 100;

UnlearnSample craft_unlearning_compiled(const CompiledModel& suspect,
                                        const std::vector<const CompiledModel*>& refs,
                                        int target_label, int basin_label,
                                        const MitigationConfig& cfg, std::uint64_t seed) {
    Workspace ws;
    std::vector<double> x(static_cast<std::size_t>(suspect.plan.input_n));
    std::vector<double> g(x.size()), g_one(x.size());

    Rng rng(seed);
    for (double& v : x) v = std::clamp(rng.normal(0.5, 0.25), 0.0, 1.0);

    double c = cfg.c_init, d = cfg.d_init;
    double loss_t = 0.0, basin_max = 0.0;

    // loss_t = L_T(x, y_t); basin/repel terms summed over the reference
    // ensemble with unit weights; criteria use the worst reference member.
    auto eval = [&]() {
        std::fill(g.begin(), g.end(), 0.0);
        loss_t = suspect.loss_and_input_grad(x, target_label, g_one, ws);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = g_one[i];
        basin_max = 0.0;
        for (const CompiledModel* r : refs) {
            const double basin = r->loss_and_input_grad(x, basin_label, g_one, ws);
            basin_max = std::max(basin_max, basin);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * g_one[i];
            r->loss_and_input_grad(x, target_label, g_one, ws);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= d * g_one[i];
        }
        if (!std::isfinite(loss_t) || !std::isfinite(basin_max))
            throw std::runtime_error("non-finite loss while crafting unlearning sample");
    };

    eval();
    bool success = loss_t < cfg.loss_target && basin_max < cfg.loss_target;
    for (int it = 0; it < cfg.max_iters && !success; ++it) {
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] = std::clamp(x[i] - cfg.alpha * g[i], 0.0, 1.0);
        eval();
        success = loss_t < cfg.loss_target && basin_max < cfg.loss_target;
        if (!success && (it + 1) % kAdjustEvery == 0) {
            if (loss_t >= cfg.loss_target) d = std::min(d * 1.5, kCoeffCap);
            if (basin_max >= cfg.loss_target) c = std::min(c * 1.5, kCoeffCap);
        }
    }

    UnlearnSample out;
    out.x = Tensor({suspect.plan.arch.in_h, suspect.plan.arch.in_w, suspect.plan.arch.in_c},
                   std::vector<double>(x.begin(), x.end()));
    out.basin_label = basin_label;
    out.success = success;
    out.loss_suspect_target = loss_t;
    out.loss_ref_basin = basin_max;
    return out;
}

}  // namespace

UnlearnSample craft_unlearning_sample(const ModelHandle& suspect,
                                      const std::vector<ModelHandle>& references, int target_label,
                                      int basin_label, const MitigationConfig& cfg,
                                      std::uint64_t seed) {
    cfg.validate();
    if (references.empty()) throw std::invalid_argument("unlearning craft needs >= 1 reference");
    if (basin_label == target_label)
        throw std::invalid_argument("basin label must differ from the target label");
    CompiledModel s(suspect);
    std::vector<CompiledModel> refs;
    refs.reserve(references.size());
    for (const ModelHandle& r : references) refs.emplace_back(r);
    std::vector<const CompiledModel*> ptrs;
    for (const CompiledModel& r : refs) ptrs.push_back(&r);
    return craft_unlearning_compiled(s, ptrs, target_label, basin_label, cfg, seed);
}

Dataset build_unlearning_set(const Dataset& clean,
                             const std::vector<std::pair<Tensor, int>>& crafted,
                             const MitigationConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (clean.size() == 0) throw std::invalid_argument("clean dataset is empty");
    if (crafted.empty())
        throw std::invalid_argument("no successful crafted samples for the unlearning set");

    Dataset mixed = subsample(clean, cfg.clean_fraction, seed_combine(seed, 0xC1EAu));
    const auto crafted_n = static_cast<std::int64_t>(
        std::llround(cfg.adversarial_fraction * static_cast<double>(mixed.size())));
    for (std::int64_t i = 0; i < crafted_n; ++i) {
        const auto& [img, label] = crafted[static_cast<std::size_t>(i) % crafted.size()];
        mixed.images.push_back(img);
        mixed.labels.push_back(label);
    }
    mixed.name = clean.name + "/unlearning";

    std::vector<std::int64_t> order(static_cast<std::size_t>(mixed.size()));
    for (std::int64_t i = 0; i < mixed.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(seed_combine(seed, 0x5FFEu));
    rng.shuffle(order);
    Dataset shuffled;
    shuffled.class_count = mixed.class_count;
    shuffled.name = mixed.name;
    for (std::int64_t i : order) {
        shuffled.images.push_back(std::move(mixed.images[static_cast<std::size_t>(i)]));
        shuffled.labels.push_back(mixed.labels[static_cast<std::size_t>(i)]);
    }
    return shuffled;
}

ModelHandle unlearn(const ModelHandle& suspect, const Dataset& mixed,
                    const MitigationConfig& cfg) {
    cfg.validate();
    TrainConfig tc = cfg.retrain;
    tc.epochs = cfg.retrain_epochs;
    tc.seed = seed_combine(cfg.seed, 0x0E7A11u);
    tc.threads = cfg.threads;
    ModelHandle patched = train(suspect, mixed, tc);
    patched.meta.provenance = "patched";
    return patched;
}

MitigationResult iterate_until_clean(const ModelHandle& suspect,
                                     const std::vector<ModelHandle>& references,
                                     const DetectionConfig& detect_cfg,
                                     const MitigationConfig& mit_cfg, const Dataset& clean,
                                     int max_rounds) {
    detect_cfg.validate();
    mit_cfg.validate();
    if (max_rounds < 1) throw std::invalid_argument("max_rounds must be >= 1");

    MitigationResult result;
    result.model = suspect;
    for (int round = 0; round <= max_rounds; ++round) {
        DetectionReport report = detect_model(result.model, references, detect_cfg);
        std::vector<int> flagged;
        for (const LabelVerdict& v : report.verdicts)
            if (v.infected) flagged.push_back(v.label);
        if (flagged.empty()) {
            result.resolved = true;
            result.final_report = std::move(report);
            return result;
        }
        if (round == max_rounds) {
            result.resolved = false;  // infection remains after the allowed rounds
            result.final_report = std::move(report);
            return result;
        }

        // Craft basin samples for every flagged label against every other
        // class; tasks are independent, seeded by (round, y_t, y_o, index).
        CompiledModel s(result.model);
        std::vector<CompiledModel> refs;
        refs.reserve(references.size());
        for (const ModelHandle& r : references) refs.emplace_back(r);
        std::vector<const CompiledModel*> ptrs;
        for (const CompiledModel& r : refs) ptrs.push_back(&r);

        struct Task {
            int y_t, y_o, index;
        };
        std::vector<Task> tasks;
        for (int y_t : flagged)
            for (int y_o = 0; y_o < clean.class_count; ++y_o)
                if (y_o != y_t)
                    for (int i = 0; i < mit_cfg.samples_per_pair; ++i)
                        tasks.push_back(Task{y_t, y_o, i});

        std::vector<UnlearnSample> samples(tasks.size());
        parallel_ranges(static_cast<std::int64_t>(tasks.size()),
                        mit_cfg.threads > 0 ? mit_cfg.threads : default_thread_count(),
                        [&](int, std::int64_t b, std::int64_t e) {
                            for (std::int64_t t = b; t < e; ++t) {
                                const Task& task = tasks[static_cast<std::size_t>(t)];
                                const std::uint64_t seed = seed_combine(
                                    mit_cfg.seed, static_cast<std::uint64_t>(round),
                                    seed_combine(static_cast<std::uint64_t>(task.y_t),
                                                 static_cast<std::uint64_t>(task.y_o),
                                                 static_cast<std::uint64_t>(task.index)));
                                samples[static_cast<std::size_t>(t)] = craft_unlearning_compiled(
                                    s, ptrs, task.y_t, task.y_o, mit_cfg, seed);
                            }
                        });

        MitigationRound round_info;
        round_info.flagged_labels = flagged;
        round_info.crafted_total = static_cast<int>(samples.size());
        std::vector<std::pair<Tensor, int>> crafted;
        for (UnlearnSample& us : samples)
            if (us.success) crafted.emplace_back(std::move(us.x), us.basin_label);
        round_info.crafted_success = static_cast<int>(crafted.size());
        result.rounds.push_back(round_info);

        Dataset mixed = build_unlearning_set(clean, crafted, mit_cfg,
                                             seed_combine(mit_cfg.seed, 0x30D5u,
                                                          static_cast<std::uint64_t>(round)));
        result.model = unlearn(result.model, mixed, mit_cfg);
        result.rounds_used = round + 1;
    }
    return result;  // unreachable
}

}  // namespace phyg
