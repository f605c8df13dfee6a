#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "phyg/model.hpp"
#include "phyg/rng.hpp"
#include "phyg/tensor.hpp"

namespace phyg {

// Compiled per-layer shapes and parameter offsets for one architecture.
struct LayerPlan {
    LayerSpec spec;
    // Spatial layers track (h, w, c); dense layers use flat in_n/out_n.
    int in_h = 0, in_w = 0, in_c = 0;
    int out_h = 0, out_w = 0, out_c = 0;
    std::int64_t in_n = 0, out_n = 0;
    std::int64_t w_off = -1, b_off = -1;
};

struct NetPlan {
    ArchitectureSpec arch;
    std::vector<LayerPlan> layers;
    std::int64_t param_count = 0;
    std::int64_t input_n = 0;

    static NetPlan compile(const ArchitectureSpec& arch);
};

enum class RunMode { Eval, Train };

// Per-thread scratch for forward/backward passes; reusable across calls.
struct Workspace {
    std::vector<std::vector<double>> acts;       // acts[0] = input, acts[i+1] = layer i out
    std::vector<std::vector<int>> pool_argmax;   // per layer (empty unless maxpool)
    std::vector<std::vector<double>> drop_mask;  // per layer (empty unless dropout in Train)
    std::vector<std::vector<double>> grad_bufs;  // backward activations

    void prepare(const NetPlan& plan);
};

// Numerically stable -log softmax(logits)[label]; 64-bit arithmetic via the
// log-sum-exp trick so losses in the tens stay exact.
double cross_entropy_logits(std::span<const double> logits, int label);

// Forward pass. Fills ws.acts; returns span of the logits (ws.acts.back()).
// In Train mode dropout masks are drawn from dropout_rng (required).
std::span<const double> net_forward(const NetPlan& plan, std::span<const double> params,
                                    std::span<const double> input, Workspace& ws,
                                    RunMode mode = RunMode::Eval, Rng* dropout_rng = nullptr);

// Reverse pass for the cross-entropy loss at `label`, using the activations
// left in ws by net_forward. Writes the input gradient and/or accumulates
// parameter gradients (either span may be empty to skip it).
void net_backward(const NetPlan& plan, std::span<const double> params, Workspace& ws, int label,
                  std::span<double> input_grad, std::span<double> param_grad_accum,
                  RunMode mode = RunMode::Eval);

// Model compiled once for repeated evaluation; immutable and shareable
// between threads (each thread brings its own Workspace).
struct CompiledModel {
    NetPlan plan;
    std::vector<double> params;

    explicit CompiledModel(const ModelHandle& m);

    double loss(std::span<const double> image, int label, Workspace& ws) const;
    // Loss and d(loss)/d(image) in one pass.
    double loss_and_input_grad(std::span<const double> image, int label, std::span<double> grad,
                               Workspace& ws) const;
    int predict_label(std::span<const double> image, Workspace& ws) const;
};

// --- Spec-level operations over ModelHandle -------------------------------

// Raw logits (length classes). Throws on shape mismatch or non-finite output.
Tensor forward(const ModelHandle& model, const Tensor& input);

double cross_entropy(const Tensor& logits, int label);

struct Prediction {
    int label = 0;
    double confidence = 0.0;  // softmax mass of the argmax; ties break to the lowest index
};
Prediction predict(const ModelHandle& model, const Tensor& input);

enum class GradWhich { Input, Params, Both };
GradientPair loss_gradients(const ModelHandle& model, const Tensor& input, int label,
                            GradWhich which);

}  // namespace phyg
