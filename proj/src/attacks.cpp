#include "phyg/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "phyg/net.hpp"
#include "phyg/rng.hpp"

namespace phyg {

TriggerSpec TriggerSpec::patch(int h, int w, int row, int col, double value) {
    TriggerSpec t;
    t.kind = Kind::Patch;
    t.height = h;
    t.width = w;
    t.row = row;
    t.col = col;
    t.value = value;
    return t;
}

TriggerSpec TriggerSpec::blend(std::uint64_t noise_seed, double transparency) {
    TriggerSpec t;
    t.kind = Kind::Blend;
    t.noise_seed = noise_seed;
    t.transparency = transparency;
    return t;
}

void AttackSpec::validate(int class_count) const {
    if (target_labels.empty()) throw std::invalid_argument("attack needs at least one target label");
    for (int y : target_labels)
        if (y < 0 || y >= class_count)
            throw std::invalid_argument("attack target label out of range");
    if (!(proportion > 0.0 && proportion < 0.5))
        throw std::invalid_argument("attack proportion must be in (0, 0.5)");
    if (technique == Technique::Mislabel) {
        if (source_class < 0 || source_class >= class_count)
            throw std::invalid_argument("mislabel attack needs a valid source class");
        for (int y : target_labels)
            if (y == source_class)
                throw std::invalid_argument("mislabel source class cannot be a target label");
    }
    if (technique == Technique::BadNets || technique == Technique::Chen) {
        if (triggers.empty()) throw std::invalid_argument("backdoor attack needs a trigger");
        for (const TriggerSpec& t : triggers) {
            if (t.kind == TriggerSpec::Kind::Patch) {
                if (t.height <= 0 || t.width <= 0)
                    throw std::invalid_argument("trigger patch must be non-empty");
            } else if (!(t.transparency >= 0.0 && t.transparency <= 1.0)) {
                throw std::invalid_argument("trigger transparency must be in [0, 1]");
            }
        }
    }
}

PoisonResult mislabel_poison(const Dataset& ds, const AttackSpec& spec, std::uint64_t seed) {
    spec.validate(ds.class_count);
    if (spec.technique != Technique::Mislabel)
        throw std::invalid_argument("mislabel_poison requires a mislabel attack spec");
    auto by_class = ds.indices_by_class();
    auto& source = by_class[static_cast<std::size_t>(spec.source_class)];
    const auto want =
        static_cast<std::int64_t>(std::floor(spec.proportion * static_cast<double>(ds.size())));
    if (want > static_cast<std::int64_t>(source.size()))
        throw std::invalid_argument(
            "source class has too few samples: need " + std::to_string(want) + ", have " +
            std::to_string(source.size()));

    PoisonResult out;
    out.dataset = ds;
    out.dataset.name = ds.name + "/mislabel";
    if (want == 0) return out;

    Rng rng(seed_combine(seed, 0x3151u));
    rng.shuffle(source);
    out.poisoned_indices.assign(source.begin(), source.begin() + want);
    std::sort(out.poisoned_indices.begin(), out.poisoned_indices.end());
    // Multiple target labels share the poison budget as evenly as possible.
    for (std::size_t i = 0; i < out.poisoned_indices.size(); ++i) {
        int y_t = spec.target_labels[i % spec.target_labels.size()];
        out.dataset.labels[static_cast<std::size_t>(out.poisoned_indices[i])] = y_t;
    }
    return out;
}

Tensor apply_trigger(const Tensor& image, const TriggerSpec& trigger) {
    if (image.shape.size() != 3)
        throw std::invalid_argument("apply_trigger expects an HxWxC image tensor");
    const int h = image.shape[0], w = image.shape[1], c = image.shape[2];
    Tensor out = image;
    if (trigger.kind == TriggerSpec::Kind::Patch) {
        const int row = trigger.row < 0 ? h - trigger.height : trigger.row;
        const int col = trigger.col < 0 ? w - trigger.width : trigger.col;
        if (row < 0 || col < 0 || row + trigger.height > h || col + trigger.width > w)
            throw std::invalid_argument("trigger patch out of image bounds");
        for (int y = row; y < row + trigger.height; ++y)
            for (int x = col; x < col + trigger.width; ++x)
                for (int ci = 0; ci < c; ++ci)
                    out.data[(static_cast<std::size_t>(y) * w + x) * c + ci] = trigger.value;
    } else {
        // The noise field is a fixed pattern determined by noise_seed: it is
        // the trigger itself, identical across train and test applications.
        Rng rng(seed_combine(trigger.noise_seed, 0xB1E4Du));
        const double rho = trigger.transparency;
        for (double& v : out.data) {
            const double n = rng.uniform();
            v = std::clamp((1.0 - rho) * v + rho * n, 0.0, 1.0);
        }
    }
    return out;
}

PoisonResult backdoor_poison(const Dataset& ds, const AttackSpec& spec, std::uint64_t seed) {
    spec.validate(ds.class_count);
    if (spec.technique != Technique::BadNets && spec.technique != Technique::Chen)
        throw std::invalid_argument("backdoor_poison requires a badnets or chen attack spec");
    const auto per_pair =
        static_cast<std::int64_t>(std::floor(spec.proportion * static_cast<double>(ds.size())));
    const std::int64_t pairs =
        static_cast<std::int64_t>(spec.target_labels.size()) *
        static_cast<std::int64_t>(spec.triggers.size());
    const std::int64_t total = per_pair * pairs;
    if (total > ds.size())
        throw std::invalid_argument("not enough clean samples for disjoint backdoor injection");

    PoisonResult out;
    out.dataset = ds;
    out.dataset.name = ds.name + "/backdoor";
    if (total == 0) return out;

    std::vector<std::int64_t> order(static_cast<std::size_t>(ds.size()));
    for (std::int64_t i = 0; i < ds.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(seed_combine(seed, 0xBAD5u));
    rng.shuffle(order);

    std::int64_t cursor = 0;
    for (int y_t : spec.target_labels) {
        for (const TriggerSpec& trigger : spec.triggers) {
            for (std::int64_t i = 0; i < per_pair; ++i) {
                const std::int64_t src = order[static_cast<std::size_t>(cursor++)];
                Tensor poisoned = apply_trigger(ds.images[static_cast<std::size_t>(src)], trigger);
                out.poisoned_indices.push_back(out.dataset.size());
                out.dataset.images.push_back(std::move(poisoned));
                out.dataset.labels.push_back(y_t);
            }
        }
    }
    return out;
}

Dataset make_adversarial_testset(const Dataset& test, const AttackSpec& spec,
                                 std::uint64_t seed) {
    (void)seed;  // selection is exhaustive; kept for interface stability
    spec.validate(test.class_count);
    Dataset out;
    out.class_count = test.class_count;
    out.name = test.name + "/adversarial";
    if (spec.technique == Technique::Mislabel) {
        for (std::int64_t i = 0; i < test.size(); ++i) {
            if (test.labels[static_cast<std::size_t>(i)] != spec.source_class) continue;
            out.images.push_back(test.images[static_cast<std::size_t>(i)]);
            out.labels.push_back(test.labels[static_cast<std::size_t>(i)]);
        }
    } else if (spec.technique == Technique::BadNets || spec.technique == Technique::Chen) {
        const int y_t = spec.target_labels.front();
        const TriggerSpec& trigger = spec.triggers.front();
        for (std::int64_t i = 0; i < test.size(); ++i) {
            if (test.labels[static_cast<std::size_t>(i)] == y_t) continue;
            out.images.push_back(apply_trigger(test.images[static_cast<std::size_t>(i)], trigger));
            out.labels.push_back(test.labels[static_cast<std::size_t>(i)]);
        }
    } else {
        throw std::invalid_argument("adversarial test sets exist for mislabel and backdoor specs");
    }
    if (out.images.empty()) throw std::invalid_argument("adversarial test set came out empty");
    return out;
}

std::vector<AttackSpec> per_pair_specs(const AttackSpec& spec) {
    std::vector<AttackSpec> out;
    if (spec.technique == Technique::Mislabel) {
        for (int y : spec.target_labels) {
            AttackSpec s = spec;
            s.target_labels = {y};
            out.push_back(std::move(s));
        }
        return out;
    }
    for (int y : spec.target_labels) {
        for (const TriggerSpec& t : spec.triggers) {
            AttackSpec s = spec;
            s.target_labels = {y};
            s.triggers = {t};
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::vector<Tensor> adaptive_poison(const std::vector<ModelHandle>& ensemble,
                                    const std::vector<std::pair<Tensor, int>>& targets,
                                    double step, int iters) {
    if (ensemble.empty()) throw std::invalid_argument("adaptive attack needs a non-empty ensemble");
    if (step <= 0.0) throw std::invalid_argument("adaptive attack step must be positive");
    std::vector<CompiledModel> models;
    models.reserve(ensemble.size());
    for (const ModelHandle& m : ensemble) models.emplace_back(m);
    const double stop = 0.01 * static_cast<double>(ensemble.size());

    std::vector<Tensor> out;
    out.reserve(targets.size());
    Workspace ws;
    std::vector<double> grad, grad_one;
    for (const auto& [image, y_t] : targets) {
        Tensor x = image;
        grad.assign(x.data.size(), 0.0);
        grad_one.assign(x.data.size(), 0.0);

        auto summed_loss_grad = [&](const Tensor& at, std::vector<double>* g) {
            if (g) std::fill(g->begin(), g->end(), 0.0);
            double total = 0.0;
            for (const CompiledModel& m : models) {
                if (g) {
                    total += m.loss_and_input_grad(at.data, y_t, grad_one, ws);
                    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += grad_one[i];
                } else {
                    total += m.loss(at.data, y_t, ws);
                }
            }
            if (!std::isfinite(total))
                throw std::runtime_error("non-finite loss in adaptive attack");
            return total;
        };

        double current = summed_loss_grad(x, &grad);
        double rate = step;
        for (int it = 0; it < iters && current > stop; ++it) {
            Tensor candidate = x;
            for (std::size_t i = 0; i < candidate.data.size(); ++i)
                candidate.data[i] -= rate * grad[i];
            clamp_inplace(candidate, 0.0, 1.0);
            const double cand_loss = summed_loss_grad(candidate, nullptr);
            if (cand_loss > current) {
                rate *= 0.5;  // reject and back off
                continue;
            }
            x = std::move(candidate);
            current = summed_loss_grad(x, &grad);
        }
        out.push_back(std::move(x));
    }
    return out;
}

}  // namespace phyg
