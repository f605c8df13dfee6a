#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phyg/tensor.hpp"

namespace phyg {

enum class LayerKind { Conv, MaxPool, Dense, Dropout, SoftmaxHead };

// One layer descriptor. Convolutions are stride-1, valid-padding, with a
// built-in ReLU; max pooling strides by its own window; dense layers may be
// ReLU or linear; the softmax head is the final linear layer producing
// logits (softmax itself is applied by the loss / predict).
struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    int kernel_h = 0, kernel_w = 0, channels = 0;  // conv
    int pool_h = 0, pool_w = 0;                    // maxpool
    int units = 0;                                 // dense / softmax head
    bool relu = true;                              // dense only; conv is always ReLU
    double rate = 0.0;                             // dropout

    static LayerSpec conv(int kh, int kw, int out_channels);
    static LayerSpec maxpool(int ph, int pw);
    static LayerSpec dense(int units, bool relu = true);
    static LayerSpec dropout(double rate);
    static LayerSpec softmax_head(int classes);

    bool operator==(const LayerSpec&) const = default;
};

struct ArchitectureSpec {
    int in_h = 0, in_w = 0, in_c = 0;
    int classes = 0;
    std::vector<LayerSpec> layers;

    // Checks that consecutive layer shapes compose and that exactly one
    // softmax head exists, last. Throws std::invalid_argument.
    void validate() const;

    std::int64_t param_count() const;

    // Canonical one-line text form, e.g.
    //   "input 16x16x1; conv 3x3x8 relu; maxpool 2x2; dense 64 relu;
    //    dropout 0.5; softmax 10"
    std::string to_text() const;
    static ArchitectureSpec from_text(const std::string& text);

    bool operator==(const ArchitectureSpec&) const = default;
};

struct ModelMeta {
    std::string name = "model";
    std::uint64_t train_seed = 0;
    std::string provenance = "clean";  // clean | infected | patched
};

// Immutable after construction. Parameters are a flat tensor whose layout is
// defined by the layer order (conv: w[oc][ic][kh][kw] then bias[oc]; dense and
// softmax head: w[unit][in] then bias[unit]). Every parameter value is kept
// exactly representable as a 32-bit float so that file round-trips are
// bit-exact.
struct ModelHandle {
    ArchitectureSpec spec;
    Tensor params;
    ModelMeta meta;
};

// Snaps every value to its float32 representation.
void quantize_to_f32(Tensor& t);

// Fan-in-scaled uniform init (weights in +-sqrt(3/fan_in), biases zero),
// deterministic in init_seed.
ModelHandle build_model(const ArchitectureSpec& spec, std::uint64_t init_seed,
                        const std::string& name = "model");

// Named architecture presets, parameterised on the input geometry so the
// same pool serves 28x28 and 16x16 tasks. "a".."f" are the full-size
// reference nets (28x28-class inputs); "desk-a".."desk-f" are reduced
// variants sized for quick CPU runs. All presets are structurally distinct
// (kernel size 3/5, widths, dense depth).
std::vector<std::string> preset_names();
ArchitectureSpec make_preset(const std::string& name, int in_h, int in_w, int in_c,
                             int classes, double dropout_rate = 0.5);

}  // namespace phyg
