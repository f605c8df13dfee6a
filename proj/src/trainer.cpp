#include "phyg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "phyg/net.hpp"
#include "phyg/parallel.hpp"
#include "phyg/rng.hpp"

namespace phyg {

namespace {

// Batch work is split into fixed-size chunks whose partial sums are reduced
// in chunk order, so results are bit-identical for any worker count.
constexpr std::int64_t kChunk = 16;

}  // namespace

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw std::invalid_argument("learning rate must be positive");
    if (momentum < 0.0) throw std::invalid_argument("momentum must be >= 0");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
    if (batch_size <= 0) throw std::invalid_argument("batch size must be positive");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
}

TrainResult train_traced(const ModelHandle& model, const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (ds.size() == 0) throw std::invalid_argument("cannot train on an empty dataset");
    if (ds.class_count != model.spec.classes)
        throw std::invalid_argument("dataset class count does not match model");
    const NetPlan plan = NetPlan::compile(model.spec);
    const std::int64_t expect = std::int64_t{model.spec.in_h} * model.spec.in_w * model.spec.in_c;
    for (const Tensor& img : ds.images)
        if (img.size() != expect)
            throw std::invalid_argument("dataset image shape does not match model input");

    std::vector<double> params = model.params.data;
    std::vector<double> velocity(params.size(), 0.0);
    const std::int64_t n = ds.size();
    const int threads = cfg.threads > 0 ? cfg.threads : default_thread_count();

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::vector<double> batch_grad(params.size());
    const std::int64_t max_chunks = (cfg.batch_size + kChunk - 1) / kChunk;
    std::vector<std::vector<double>> chunk_grads(static_cast<std::size_t>(max_chunks));
    std::vector<double> chunk_loss(static_cast<std::size_t>(max_chunks));
    std::vector<Workspace> workspaces(static_cast<std::size_t>(std::max(threads, 1)));

    TrainResult result;
    result.epoch_mean_loss.reserve(static_cast<std::size_t>(cfg.epochs));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        Rng shuffle_rng(seed_combine(cfg.seed, 0x7E0Cu, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
            const std::int64_t batch_n = std::min<std::int64_t>(cfg.batch_size, n - start);
            const std::int64_t n_chunks = (batch_n + kChunk - 1) / kChunk;
            for (std::int64_t cidx = 0; cidx < n_chunks; ++cidx) {
                chunk_grads[static_cast<std::size_t>(cidx)].assign(params.size(), 0.0);
                chunk_loss[static_cast<std::size_t>(cidx)] = 0.0;
            }

            parallel_ranges(n_chunks, threads, [&](int worker, std::int64_t cb, std::int64_t ce) {
                Workspace& ws = workspaces[static_cast<std::size_t>(worker)];
                for (std::int64_t cidx = cb; cidx < ce; ++cidx) {
                    auto& grad = chunk_grads[static_cast<std::size_t>(cidx)];
                    double loss_sum = 0.0;
                    const std::int64_t lo = start + cidx * kChunk;
                    const std::int64_t hi = std::min(lo + kChunk, start + batch_n);
                    for (std::int64_t slot = lo; slot < hi; ++slot) {
                        const std::int64_t sample = order[static_cast<std::size_t>(slot)];
                        Rng drop_rng(seed_combine(cfg.seed, 0xD120u,
                                                  static_cast<std::uint64_t>(epoch) *
                                                          static_cast<std::uint64_t>(n) +
                                                      static_cast<std::uint64_t>(slot)));
                        auto logits = net_forward(plan, params,
                                                  ds.images[static_cast<std::size_t>(sample)].data,
                                                  ws, RunMode::Train, &drop_rng);
                        loss_sum += cross_entropy_logits(
                            logits, ds.labels[static_cast<std::size_t>(sample)]);
                        net_backward(plan, params, ws,
                                     ds.labels[static_cast<std::size_t>(sample)], {}, grad,
                                     RunMode::Train);
                    }
                    chunk_loss[static_cast<std::size_t>(cidx)] = loss_sum;
                }
            });

            std::fill(batch_grad.begin(), batch_grad.end(), 0.0);
            double batch_loss = 0.0;
            for (std::int64_t cidx = 0; cidx < n_chunks; ++cidx) {
                const auto& grad = chunk_grads[static_cast<std::size_t>(cidx)];
                for (std::size_t i = 0; i < batch_grad.size(); ++i) batch_grad[i] += grad[i];
                batch_loss += chunk_loss[static_cast<std::size_t>(cidx)];
            }
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                         std::to_string(epoch) + ", batch offset " +
                                         std::to_string(start));
            epoch_loss += batch_loss;

            const double inv = 1.0 / static_cast<double>(batch_n);
            for (std::size_t i = 0; i < params.size(); ++i) {
                velocity[i] = cfg.momentum * velocity[i] -
                              cfg.learning_rate * batch_grad[i] * inv;
                params[i] += velocity[i];
            }
        }
        result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(n));
    }

    ModelHandle out;
    out.spec = model.spec;
    const int n_params = static_cast<int>(params.size());
    out.params = Tensor({n_params}, std::move(params));
    quantize_to_f32(out.params);
    ensure_finite(out.params, "trained parameters");
    out.meta = model.meta;
    out.meta.train_seed = cfg.seed;
    result.model = std::move(out);
    return result;
}

ModelHandle train(const ModelHandle& model, const Dataset& ds, const TrainConfig& cfg) {
    return train_traced(model, ds, cfg).model;
}

namespace {

std::vector<int> predict_all(const ModelHandle& model, const Dataset& ds, int threads) {
    if (ds.size() == 0) throw std::invalid_argument("cannot evaluate an empty dataset");
    const CompiledModel cm(model);
    std::vector<int> preds(static_cast<std::size_t>(ds.size()));
    parallel_ranges(ds.size(), threads > 0 ? threads : default_thread_count(),
                    [&](int, std::int64_t b, std::int64_t e) {
                        Workspace ws;
                        for (std::int64_t i = b; i < e; ++i)
                            preds[static_cast<std::size_t>(i)] = cm.predict_label(
                                ds.images[static_cast<std::size_t>(i)].data, ws);
                    });
    return preds;
}

}  // namespace

double evaluate_accuracy(const ModelHandle& model, const Dataset& ds, int threads) {
    auto preds = predict_all(model, ds, threads);
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == ds.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

std::vector<double> per_class_accuracy(const ModelHandle& model, const Dataset& ds, int threads) {
    auto preds = predict_all(model, ds, threads);
    std::vector<std::int64_t> hits(static_cast<std::size_t>(ds.class_count), 0);
    std::vector<std::int64_t> counts(static_cast<std::size_t>(ds.class_count), 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        ++counts[static_cast<std::size_t>(ds.labels[i])];
        if (preds[i] == ds.labels[i]) ++hits[static_cast<std::size_t>(ds.labels[i])];
    }
    std::vector<double> acc(static_cast<std::size_t>(ds.class_count), 0.0);
    for (int c = 0; c < ds.class_count; ++c)
        if (counts[static_cast<std::size_t>(c)] > 0)
            acc[static_cast<std::size_t>(c)] =
                static_cast<double>(hits[static_cast<std::size_t>(c)]) /
                static_cast<double>(counts[static_cast<std::size_t>(c)]);
    return acc;
}

double attack_success_rate(const ModelHandle& model, const Dataset& adversarial, int target_label,
                           int threads) {
    auto preds = predict_all(model, adversarial, threads);
    std::int64_t hits = 0;
    for (int p : preds)
        if (p == target_label) ++hits;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace phyg
