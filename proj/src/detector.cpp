#include "phyg/detector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "phyg/parallel.hpp"
#include "phyg/rng.hpp"

namespace phyg {

namespace {

constexpr std::uint64_t kGammaTag = 0x6A33A0u;
constexpr std::uint64_t kLambdaTag = 0x1A3BDAu;

void gaussian_image(std::vector<double>& x, Rng& rng) {
    for (double& v : x) v = std::clamp(rng.normal(0.5, 0.25), 0.0, 1.0);
}

void check_finite_loss(double v, const char* where) {
    if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite loss in ") + where);
}

}  // namespace

void DetectionConfig::validate() const {
    if (alpha <= 0.0 || beta <= 0.0) throw std::invalid_argument("alpha and beta must be positive");
    if (!(gamma_fraction > 0.0 && gamma_fraction < 1.0))
        throw std::invalid_argument("gamma fraction must be in (0, 1)");
    if (!(prob_threshold > 0.0 && prob_threshold <= 1.0))
        throw std::invalid_argument("prob threshold must be in (0, 1]");
    if (num_samples < 1) throw std::invalid_argument("num_samples must be >= 1");
    if (max_iters < 1 || phase1_max_iters < 1)
        throw std::invalid_argument("iteration caps must be >= 1");
    if (lambda_iters < 1 || lambda_rounds < 1 || gamma_starts < 1 || gamma_iters < 1)
        throw std::invalid_argument("tuning iteration counts must be >= 1");
}

double estimate_gamma(const CompiledModel& reference, int label, const DetectionConfig& cfg) {
    cfg.validate();
    Workspace ws;
    std::vector<double> x(static_cast<std::size_t>(reference.plan.input_n));
    std::vector<double> grad(x.size());

    double max_observed = -1.0;
    double min_initial = 1e300;
    for (int start = 0; start < cfg.gamma_starts; ++start) {
        Rng rng(seed_combine(cfg.seed, kGammaTag, static_cast<std::uint64_t>(label),
                             static_cast<std::uint64_t>(start)));
        gaussian_image(x, rng);
        double loss = reference.loss_and_input_grad(x, label, grad, ws);
        check_finite_loss(loss, "gamma estimation");
        min_initial = std::min(min_initial, loss);
        max_observed = std::max(max_observed, loss);
        for (int it = 0; it < cfg.gamma_iters; ++it) {
            for (std::size_t i = 0; i < x.size(); ++i)
                x[i] = std::clamp(x[i] + cfg.alpha * grad[i], 0.0, 1.0);
            loss = reference.loss_and_input_grad(x, label, grad, ws);
            check_finite_loss(loss, "gamma estimation");
            max_observed = std::max(max_observed, loss);
        }
    }
    if (max_observed <= cfg.beta)
        throw DegenerateReferenceError("reference cannot separate label " + std::to_string(label) +
                                       ": max reachable loss " + std::to_string(max_observed) +
                                       " <= beta " + std::to_string(cfg.beta));
    // A loss surface that is flat across every start and every ascent step
    // cannot separate anything (e.g. input-independent logits).
    if (max_observed - min_initial <= 1e-9)
        throw DegenerateReferenceError("reference loss for label " + std::to_string(label) +
                                       " does not respond to the input (zero ascent progress)");
    return cfg.gamma_fraction * max_observed;
}

double estimate_gamma(const ModelHandle& reference, int label, const DetectionConfig& cfg) {
    CompiledModel cm(reference);
    return estimate_gamma(cm, label, cfg);
}

double tune_lambda(const CompiledModel& suspect, const CompiledModel& reference, int label,
                   const DetectionConfig& cfg) {
    cfg.validate();
    if (suspect.plan.input_n != reference.plan.input_n)
        throw std::invalid_argument("suspect and reference input shapes differ");
    Workspace ws;
    std::vector<double> z(static_cast<std::size_t>(suspect.plan.input_n));
    std::vector<double> g_s(z.size()), g_r(z.size());

    double lambda = 1.0;
    Rng rng(seed_combine(cfg.seed, kLambdaTag, static_cast<std::uint64_t>(label)));
    for (int round = 0; round < cfg.lambda_rounds; ++round) {
        gaussian_image(z, rng);
        double loss_s = 0.0, loss_r = 0.0;
        for (int it = 0; it < cfg.lambda_iters; ++it) {
            loss_s = suspect.loss_and_input_grad(z, label, g_s, ws);
            loss_r = reference.loss_and_input_grad(z, label, g_r, ws);
            check_finite_loss(loss_s + loss_r, "lambda tuning");
            for (std::size_t i = 0; i < z.size(); ++i)
                z[i] = std::clamp(z[i] + cfg.alpha * (g_s[i] + lambda * g_r[i]), 0.0, 1.0);
        }
        loss_s = suspect.loss(z, label, ws);
        loss_r = reference.loss(z, label, ws);
        if (loss_r <= 1e-9)
            throw std::runtime_error("lambda tuning: reference loss vanished for label " +
                                     std::to_string(label));
        const bool converged =
            std::abs(loss_s - lambda * loss_r) <= 0.05 * std::max(loss_s, lambda * loss_r);
        lambda = loss_s / loss_r;
        if (converged) break;
    }
    return lambda;
}

double tune_lambda(const ModelHandle& suspect, const ModelHandle& reference, int label,
                   const DetectionConfig& cfg) {
    CompiledModel s(suspect), r(reference);
    return tune_lambda(s, r, label, cfg);
}

CraftOutcome craft_sample(const CompiledModel& suspect,
                          const std::vector<const CompiledModel*>& references, int label,
                          const std::vector<double>& lambdas, const std::vector<double>& gammas,
                          const DetectionConfig& cfg, std::uint64_t sample_seed) {
    if (references.empty()) throw std::invalid_argument("craft_sample needs >= 1 reference");
    if (lambdas.size() != references.size() || gammas.size() != references.size())
        throw std::invalid_argument("lambdas/gammas must align with references");
    const std::size_t k = references.size();

    Workspace ws;
    std::vector<double> x(static_cast<std::size_t>(suspect.plan.input_n));
    std::vector<double> g_s(x.size()), g_r(x.size()), step(x.size());
    std::vector<double> ref_losses(k, 0.0);

    Rng rng(sample_seed);
    gaussian_image(x, rng);

    CraftOutcome outcome;
    auto finish = [&](bool reached, double loss_s) {
        outcome.reached = reached;
        outcome.final_loss_suspect = loss_s;
        outcome.final_loss_refs = ref_losses;
        outcome.x = Tensor({suspect.plan.arch.in_h, suspect.plan.arch.in_w,
                            suspect.plan.arch.in_c},
                           std::vector<double>(x.begin(), x.end()));
        return outcome;
    };

    // Phase 1: ascend the suspect loss until the probe sits clear of the
    // label's decision region.
    double loss_s = suspect.loss_and_input_grad(x, label, g_s, ws);
    check_finite_loss(loss_s, "craft phase 1");
    int it1 = 0;
    while (loss_s <= cfg.phase1_floor) {
        if (it1++ >= cfg.phase1_max_iters) {
            outcome.phase1_exit_loss = loss_s;
            outcome.phase1_iters = it1 - 1;
            outcome.escaped = false;
            for (std::size_t r = 0; r < k; ++r) ref_losses[r] = references[r]->loss(x, label, ws);
            return finish(false, loss_s);
        }
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] = std::clamp(x[i] + cfg.alpha * g_s[i], 0.0, 1.0);
        loss_s = suspect.loss_and_input_grad(x, label, g_s, ws);
        check_finite_loss(loss_s, "craft phase 1");
    }
    outcome.phase1_exit_loss = loss_s;
    outcome.phase1_iters = it1;
    outcome.escaped = true;

    // Phase 2: descend L_suspect - sum_i lambda_i * L_ref_i.
    auto eval_all = [&]() {
        std::fill(step.begin(), step.end(), 0.0);
        loss_s = suspect.loss_and_input_grad(x, label, g_s, ws);
        for (std::size_t i = 0; i < x.size(); ++i) step[i] = g_s[i];
        for (std::size_t r = 0; r < k; ++r) {
            ref_losses[r] = references[r]->loss_and_input_grad(x, label, g_r, ws);
            for (std::size_t i = 0; i < x.size(); ++i) step[i] -= lambdas[r] * g_r[i];
        }
        double total = loss_s;
        for (double v : ref_losses) total += v;
        check_finite_loss(total, "craft phase 2");
    };
    auto criteria_met = [&]() {
        if (loss_s > cfg.beta) return false;
        for (std::size_t r = 0; r < k; ++r)
            if (ref_losses[r] < gammas[r]) return false;
        return true;
    };

    eval_all();
    for (int it = 0; it < cfg.max_iters; ++it) {
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] = std::clamp(x[i] - cfg.alpha * step[i], 0.0, 1.0);
        eval_all();
        if (cfg.record_traces) {
            outcome.trace_suspect.push_back(loss_s);
            outcome.trace_refs.push_back(ref_losses);
        }
        if (criteria_met()) break;
    }
    return finish(criteria_met(), loss_s);
}

CraftOutcome craft_sample(const ModelHandle& suspect, const std::vector<ModelHandle>& references,
                          int label, const std::vector<double>& lambdas,
                          const std::vector<double>& gammas, const DetectionConfig& cfg,
                          std::uint64_t sample_seed) {
    CompiledModel s(suspect);
    std::vector<CompiledModel> refs;
    refs.reserve(references.size());
    for (const ModelHandle& r : references) refs.emplace_back(r);
    std::vector<const CompiledModel*> ptrs;
    for (const CompiledModel& r : refs) ptrs.push_back(&r);
    return craft_sample(s, ptrs, label, lambdas, gammas, cfg, sample_seed);
}

namespace {

LabelVerdict detect_label_compiled(const CompiledModel& suspect,
                                   const std::vector<const CompiledModel*>& references, int label,
                                   const DetectionConfig& cfg) {
    LabelVerdict verdict;
    verdict.label = label;
    for (std::size_t r = 0; r < references.size(); ++r)
        verdict.gammas.push_back(estimate_gamma(*references[r], label, cfg));
    for (std::size_t r = 0; r < references.size(); ++r)
        verdict.lambdas.push_back(tune_lambda(suspect, *references[r], label, cfg));

    std::vector<std::uint8_t> reached(static_cast<std::size_t>(cfg.num_samples), 0);
    parallel_ranges(cfg.num_samples, cfg.threads > 0 ? cfg.threads : default_thread_count(),
                    [&](int, std::int64_t b, std::int64_t e) {
                        for (std::int64_t s = b; s < e; ++s) {
                            const std::uint64_t seed =
                                seed_combine(cfg.seed, static_cast<std::uint64_t>(label),
                                             static_cast<std::uint64_t>(s));
                            CraftOutcome out = craft_sample(suspect, references, label,
                                                            verdict.lambdas, verdict.gammas, cfg,
                                                            seed);
                            reached[static_cast<std::size_t>(s)] = out.reached ? 1 : 0;
                        }
                    });
    verdict.reached_count = static_cast<int>(
        std::count(reached.begin(), reached.end(), std::uint8_t{1}));
    verdict.prob = static_cast<double>(verdict.reached_count) /
                   static_cast<double>(cfg.num_samples);
    verdict.infected = verdict.prob >= cfg.prob_threshold;  // boundary counts as infected
    return verdict;
}

}  // namespace

LabelVerdict detect_label(const ModelHandle& suspect, const std::vector<ModelHandle>& references,
                          int label, const DetectionConfig& cfg) {
    cfg.validate();
    if (references.empty()) throw std::invalid_argument("detection needs >= 1 reference");
    CompiledModel s(suspect);
    std::vector<CompiledModel> refs;
    refs.reserve(references.size());
    for (const ModelHandle& r : references) refs.emplace_back(r);
    std::vector<const CompiledModel*> ptrs;
    for (const CompiledModel& r : refs) ptrs.push_back(&r);
    return detect_label_compiled(s, ptrs, label, cfg);
}

DetectionReport detect_model(const ModelHandle& suspect,
                             const std::vector<ModelHandle>& references,
                             const DetectionConfig& cfg,
                             const std::optional<std::vector<int>>& ground_truth) {
    cfg.validate();
    if (references.empty()) throw std::invalid_argument("detection needs >= 1 reference");
    const auto t0 = std::chrono::steady_clock::now();

    CompiledModel s(suspect);
    std::vector<CompiledModel> refs;
    refs.reserve(references.size());
    for (const ModelHandle& r : references) refs.emplace_back(r);
    std::vector<const CompiledModel*> ptrs;
    for (const CompiledModel& r : refs) ptrs.push_back(&r);

    DetectionReport report;
    for (int label = 0; label < suspect.spec.classes; ++label)
        report.verdicts.push_back(detect_label_compiled(s, ptrs, label, cfg));
    report.model_infected = std::any_of(report.verdicts.begin(), report.verdicts.end(),
                                        [](const LabelVerdict& v) { return v.infected; });

    if (ground_truth.has_value()) {
        report.has_ground_truth = true;
        report.ground_truth_labels = *ground_truth;
        std::sort(report.ground_truth_labels.begin(), report.ground_truth_labels.end());
        int healthy = 0, healthy_flagged = 0;
        for (const LabelVerdict& v : report.verdicts) {
            const bool is_infected_label =
                std::binary_search(report.ground_truth_labels.begin(),
                                   report.ground_truth_labels.end(), v.label);
            if (!is_infected_label) {
                ++healthy;
                if (v.infected) ++healthy_flagged;
            }
        }
        report.false_positive_rate =
            healthy > 0 ? static_cast<double>(healthy_flagged) / healthy : 0.0;
        for (int gt : report.ground_truth_labels)
            report.true_positives.push_back(report.verdicts[static_cast<std::size_t>(gt)].infected
                                                ? 1
                                                : 0);
    }

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace phyg
