#include "phyg/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace phyg {

NetPlan NetPlan::compile(const ArchitectureSpec& arch) {
    arch.validate();
    NetPlan plan;
    plan.arch = arch;
    plan.input_n = std::int64_t{arch.in_h} * arch.in_w * arch.in_c;

    int h = arch.in_h, w = arch.in_w, c = arch.in_c;
    bool spatial = true;
    std::int64_t flat = plan.input_n;
    std::int64_t offset = 0;
    for (const LayerSpec& l : arch.layers) {
        LayerPlan lp;
        lp.spec = l;
        lp.in_h = h;
        lp.in_w = w;
        lp.in_c = c;
        lp.in_n = flat;
        switch (l.kind) {
            case LayerKind::Conv: {
                lp.out_h = h - l.kernel_h + 1;
                lp.out_w = w - l.kernel_w + 1;
                lp.out_c = l.channels;
                lp.out_n = std::int64_t{lp.out_h} * lp.out_w * lp.out_c;
                lp.w_off = offset;
                offset += std::int64_t{l.channels} * c * l.kernel_h * l.kernel_w;
                lp.b_off = offset;
                offset += l.channels;
                break;
            }
            case LayerKind::MaxPool: {
                lp.out_h = h / l.pool_h;
                lp.out_w = w / l.pool_w;
                lp.out_c = c;
                lp.out_n = std::int64_t{lp.out_h} * lp.out_w * lp.out_c;
                break;
            }
            case LayerKind::Dense:
            case LayerKind::SoftmaxHead: {
                lp.out_n = l.units;
                lp.w_off = offset;
                offset += std::int64_t{l.units} * flat;
                lp.b_off = offset;
                offset += l.units;
                spatial = false;
                break;
            }
            case LayerKind::Dropout: {
                lp.out_h = h;
                lp.out_w = w;
                lp.out_c = c;
                lp.out_n = flat;
                break;
            }
        }
        if (l.kind == LayerKind::Conv || l.kind == LayerKind::MaxPool ||
            (l.kind == LayerKind::Dropout && spatial)) {
            h = lp.out_h;
            w = lp.out_w;
            c = lp.out_c;
        }
        flat = lp.out_n;
        plan.layers.push_back(lp);
    }
    plan.param_count = offset;
    return plan;
}

void Workspace::prepare(const NetPlan& plan) {
    const std::size_t n = plan.layers.size();
    acts.resize(n + 1);
    pool_argmax.resize(n);
    drop_mask.resize(n);
    grad_bufs.resize(n + 1);
    acts[0].resize(static_cast<std::size_t>(plan.input_n));
    grad_bufs[0].resize(static_cast<std::size_t>(plan.input_n));
    for (std::size_t i = 0; i < n; ++i) {
        acts[i + 1].resize(static_cast<std::size_t>(plan.layers[i].out_n));
        grad_bufs[i + 1].resize(static_cast<std::size_t>(plan.layers[i].out_n));
        if (plan.layers[i].spec.kind == LayerKind::MaxPool)
            pool_argmax[i].resize(static_cast<std::size_t>(plan.layers[i].out_n));
        if (plan.layers[i].spec.kind == LayerKind::Dropout)
            drop_mask[i].resize(static_cast<std::size_t>(plan.layers[i].out_n));
    }
}

namespace {

// Input/activation layout is row-major (h, w, c); conv weights are
// w[oc][ic][ky][kx].
void conv_forward(const LayerPlan& lp, const double* params, const double* in, double* out) {
    const int kh = lp.spec.kernel_h, kw = lp.spec.kernel_w;
    const int ic_n = lp.in_c, oc_n = lp.out_c;
    const int iw = lp.in_w;
    const double* w = params + lp.w_off;
    const double* b = params + lp.b_off;
    const std::int64_t w_per_oc = std::int64_t{ic_n} * kh * kw;
    for (int oy = 0; oy < lp.out_h; ++oy) {
        for (int ox = 0; ox < lp.out_w; ++ox) {
            double* o = out + (std::int64_t{oy} * lp.out_w + ox) * oc_n;
            for (int oc = 0; oc < oc_n; ++oc) {
                const double* wk = w + oc * w_per_oc;
                double acc = b[oc];
                for (int ky = 0; ky < kh; ++ky) {
                    const double* row = in + (std::int64_t{oy + ky} * iw + ox) * ic_n;
                    for (int kx = 0; kx < kw; ++kx) {
                        const double* px = row + kx * ic_n;
                        for (int ci = 0; ci < ic_n; ++ci)
                            acc += wk[(ci * kh + ky) * kw + kx] * px[ci];
                    }
                }
                o[oc] = acc > 0.0 ? acc : 0.0;  // built-in ReLU
            }
        }
    }
}

void conv_backward(const LayerPlan& lp, const double* params, const double* in, const double* out,
                   const double* dout, double* din, double* dparams) {
    const int kh = lp.spec.kernel_h, kw = lp.spec.kernel_w;
    const int ic_n = lp.in_c, oc_n = lp.out_c;
    const int iw = lp.in_w;
    const double* w = params + lp.w_off;
    const std::int64_t w_per_oc = std::int64_t{ic_n} * kh * kw;
    if (din) std::memset(din, 0, sizeof(double) * static_cast<std::size_t>(lp.in_n));
    for (int oy = 0; oy < lp.out_h; ++oy) {
        for (int ox = 0; ox < lp.out_w; ++ox) {
            const std::int64_t o_base = (std::int64_t{oy} * lp.out_w + ox) * oc_n;
            for (int oc = 0; oc < oc_n; ++oc) {
                if (out[o_base + oc] <= 0.0) continue;  // ReLU gate
                const double g = dout[o_base + oc];
                if (g == 0.0) continue;
                const double* wk = w + oc * w_per_oc;
                double* dwk = dparams ? dparams + lp.w_off + oc * w_per_oc : nullptr;
                for (int ky = 0; ky < kh; ++ky) {
                    const std::int64_t row = (std::int64_t{oy + ky} * iw + ox) * ic_n;
                    for (int kx = 0; kx < kw; ++kx) {
                        const std::int64_t px = row + kx * ic_n;
                        for (int ci = 0; ci < ic_n; ++ci) {
                            const std::int64_t wi = (std::int64_t{ci} * kh + ky) * kw + kx;
                            if (din) din[px + ci] += g * wk[wi];
                            if (dwk) dwk[wi] += g * in[px + ci];
                        }
                    }
                }
                if (dparams) dparams[lp.b_off + oc] += g;
            }
        }
    }
}

void maxpool_forward(const LayerPlan& lp, const double* in, double* out, int* argmax) {
    const int ph = lp.spec.pool_h, pw = lp.spec.pool_w;
    const int c_n = lp.in_c, iw = lp.in_w;
    for (int oy = 0; oy < lp.out_h; ++oy) {
        for (int ox = 0; ox < lp.out_w; ++ox) {
            for (int ci = 0; ci < c_n; ++ci) {
                double best = -1e300;
                std::int64_t best_idx = -1;
                for (int ky = 0; ky < ph; ++ky) {
                    for (int kx = 0; kx < pw; ++kx) {
                        const std::int64_t idx =
                            (std::int64_t{oy * ph + ky} * iw + (ox * pw + kx)) * c_n + ci;
                        if (in[idx] > best) {  // ties keep the first scanned
                            best = in[idx];
                            best_idx = idx;
                        }
                    }
                }
                const std::int64_t o = (std::int64_t{oy} * lp.out_w + ox) * c_n + ci;
                out[o] = best;
                argmax[o] = static_cast<int>(best_idx);
            }
        }
    }
}

void dense_forward(const LayerPlan& lp, const double* params, const double* in, double* out,
                   bool relu) {
    const double* w = params + lp.w_off;
    const double* b = params + lp.b_off;
    const std::int64_t n_in = lp.in_n;
    for (std::int64_t u = 0; u < lp.out_n; ++u) {
        const double* wu = w + u * n_in;
        double acc = b[u];
        for (std::int64_t i = 0; i < n_in; ++i) acc += wu[i] * in[i];
        out[u] = (relu && acc < 0.0) ? 0.0 : acc;
    }
}

void dense_backward(const LayerPlan& lp, const double* params, const double* in, const double* out,
                    const double* dout, double* din, double* dparams, bool relu) {
    const double* w = params + lp.w_off;
    const std::int64_t n_in = lp.in_n;
    if (din) std::memset(din, 0, sizeof(double) * static_cast<std::size_t>(n_in));
    for (std::int64_t u = 0; u < lp.out_n; ++u) {
        double g = dout[u];
        if (relu && out[u] <= 0.0) g = 0.0;
        if (g == 0.0) continue;
        const double* wu = w + u * n_in;
        if (din)
            for (std::int64_t i = 0; i < n_in; ++i) din[i] += g * wu[i];
        if (dparams) {
            double* dwu = dparams + lp.w_off + u * n_in;
            for (std::int64_t i = 0; i < n_in; ++i) dwu[i] += g * in[i];
            dparams[lp.b_off + u] += g;
        }
    }
}

}  // namespace

double cross_entropy_logits(std::span<const double> logits, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
        throw std::invalid_argument("label out of range for logits of length " +
                                    std::to_string(logits.size()));
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    return mx + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

std::span<const double> net_forward(const NetPlan& plan, std::span<const double> params,
                                    std::span<const double> input, Workspace& ws, RunMode mode,
                                    Rng* dropout_rng) {
    if (static_cast<std::int64_t>(input.size()) != plan.input_n)
        throw std::invalid_argument("input length " + std::to_string(input.size()) +
                                    " does not match model input size " +
                                    std::to_string(plan.input_n));
    if (static_cast<std::int64_t>(params.size()) != plan.param_count)
        throw std::invalid_argument("parameter vector does not match plan");
    if (mode == RunMode::Train && dropout_rng == nullptr)
        throw std::invalid_argument("train-mode forward requires a dropout rng");
    ws.prepare(plan);
    std::copy(input.begin(), input.end(), ws.acts[0].begin());
    const double* p = params.data();
    for (std::size_t i = 0; i < plan.layers.size(); ++i) {
        const LayerPlan& lp = plan.layers[i];
        const double* in = ws.acts[i].data();
        double* out = ws.acts[i + 1].data();
        switch (lp.spec.kind) {
            case LayerKind::Conv:
                conv_forward(lp, p, in, out);
                break;
            case LayerKind::MaxPool:
                maxpool_forward(lp, in, out, ws.pool_argmax[i].data());
                break;
            case LayerKind::Dense:
                dense_forward(lp, p, in, out, lp.spec.relu);
                break;
            case LayerKind::SoftmaxHead:
                dense_forward(lp, p, in, out, false);
                break;
            case LayerKind::Dropout: {
                if (mode == RunMode::Train && lp.spec.rate > 0.0) {
                    const double keep_scale = 1.0 / (1.0 - lp.spec.rate);
                    double* mask = ws.drop_mask[i].data();
                    for (std::int64_t j = 0; j < lp.out_n; ++j) {
                        mask[j] = dropout_rng->uniform() < lp.spec.rate ? 0.0 : keep_scale;
                        out[j] = in[j] * mask[j];
                    }
                } else {
                    std::copy(ws.acts[i].begin(), ws.acts[i].end(), ws.acts[i + 1].begin());
                    if (!ws.drop_mask[i].empty())
                        std::fill(ws.drop_mask[i].begin(), ws.drop_mask[i].end(), 1.0);
                }
                break;
            }
        }
    }
    return ws.acts.back();
}

void net_backward(const NetPlan& plan, std::span<const double> params, Workspace& ws, int label,
                  std::span<double> input_grad, std::span<double> param_grad_accum, RunMode mode) {
    (void)mode;  // dropout masks were recorded by the forward pass
    const std::size_t n_layers = plan.layers.size();
    const std::vector<double>& logits = ws.acts[n_layers];
    if (label < 0 || static_cast<std::int64_t>(label) >= plan.layers.back().out_n)
        throw std::invalid_argument("label out of range");
    const bool want_input = !input_grad.empty();
    const bool want_params = !param_grad_accum.empty();
    if (want_input && static_cast<std::int64_t>(input_grad.size()) != plan.input_n)
        throw std::invalid_argument("input gradient buffer has wrong size");
    if (want_params && static_cast<std::int64_t>(param_grad_accum.size()) != plan.param_count)
        throw std::invalid_argument("parameter gradient buffer has wrong size");

    // d(cross entropy)/d(logits) = softmax - onehot
    std::vector<double>& dlogits = ws.grad_bufs[n_layers];
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) sum += std::exp(logits[i] - mx);
    for (std::size_t i = 0; i < logits.size(); ++i)
        dlogits[i] = std::exp(logits[i] - mx) / sum - (static_cast<int>(i) == label ? 1.0 : 0.0);

    const double* p = params.data();
    double* dparams = want_params ? param_grad_accum.data() : nullptr;
    for (std::size_t ri = n_layers; ri-- > 0;) {
        const LayerPlan& lp = plan.layers[ri];
        const double* in = ws.acts[ri].data();
        const double* out = ws.acts[ri + 1].data();
        const double* dout = ws.grad_bufs[ri + 1].data();
        const bool need_din = want_input || ri > 0;
        double* din = need_din ? ws.grad_bufs[ri].data() : nullptr;
        switch (lp.spec.kind) {
            case LayerKind::Conv:
                conv_backward(lp, p, in, out, dout, din, dparams);
                break;
            case LayerKind::MaxPool: {
                if (din) {
                    std::memset(din, 0, sizeof(double) * static_cast<std::size_t>(lp.in_n));
                    const int* argmax = ws.pool_argmax[ri].data();
                    for (std::int64_t j = 0; j < lp.out_n; ++j) din[argmax[j]] += dout[j];
                }
                break;
            }
            case LayerKind::Dense:
                dense_backward(lp, p, in, out, dout, din, dparams, lp.spec.relu);
                break;
            case LayerKind::SoftmaxHead:
                dense_backward(lp, p, in, out, dout, din, dparams, false);
                break;
            case LayerKind::Dropout: {
                if (din) {
                    if (ws.drop_mask[ri].empty()) {
                        std::copy(dout, dout + lp.out_n, din);
                    } else {
                        const double* mask = ws.drop_mask[ri].data();
                        for (std::int64_t j = 0; j < lp.out_n; ++j) din[j] = dout[j] * mask[j];
                    }
                }
                break;
            }
        }
    }
    if (want_input)
        std::copy(ws.grad_bufs[0].begin(), ws.grad_bufs[0].end(), input_grad.begin());
}

CompiledModel::CompiledModel(const ModelHandle& m) : plan(NetPlan::compile(m.spec)) {
    if (m.params.size() != plan.param_count)
        throw std::invalid_argument("model parameter vector does not match its architecture");
    params = m.params.data;
}

double CompiledModel::loss(std::span<const double> image, int label, Workspace& ws) const {
    auto logits = net_forward(plan, params, image, ws);
    return cross_entropy_logits(logits, label);
}

double CompiledModel::loss_and_input_grad(std::span<const double> image, int label,
                                          std::span<double> grad, Workspace& ws) const {
    auto logits = net_forward(plan, params, image, ws);
    double l = cross_entropy_logits(logits, label);
    net_backward(plan, params, ws, label, grad, {});
    return l;
}

int CompiledModel::predict_label(std::span<const double> image, Workspace& ws) const {
    auto logits = net_forward(plan, params, image, ws);
    int best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = static_cast<int>(i);
    return best;
}

Tensor forward(const ModelHandle& model, const Tensor& input) {
    ensure_finite(input, "forward input");
    CompiledModel cm(model);
    Workspace ws;
    auto logits = net_forward(cm.plan, cm.params, input.data, ws);
    Tensor out({model.spec.classes}, std::vector<double>(logits.begin(), logits.end()));
    ensure_finite(out, "forward logits");
    return out;
}

double cross_entropy(const Tensor& logits, int label) {
    return cross_entropy_logits(logits.data, label);
}

Prediction predict(const ModelHandle& model, const Tensor& input) {
    Tensor logits = forward(model, input);
    int best = 0;
    for (std::int64_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = static_cast<int>(i);
    double mx = logits[best];
    double sum = 0.0;
    for (double v : logits.data) sum += std::exp(v - mx);
    return Prediction{best, 1.0 / sum};
}

GradientPair loss_gradients(const ModelHandle& model, const Tensor& input, int label,
                            GradWhich which) {
    ensure_finite(input, "gradient input");
    if (label < 0 || label >= model.spec.classes)
        throw std::invalid_argument("label out of range");
    CompiledModel cm(model);
    Workspace ws;
    net_forward(cm.plan, cm.params, input.data, ws);

    GradientPair pair;
    std::span<double> in_span, par_span;
    if (which == GradWhich::Input || which == GradWhich::Both) {
        pair.wrt_input = Tensor::zeros(input.shape);
        in_span = pair.wrt_input.data;
    }
    if (which == GradWhich::Params || which == GradWhich::Both) {
        pair.wrt_params = Tensor::zeros({static_cast<int>(cm.plan.param_count)});
        par_span = pair.wrt_params.data;
    }
    net_backward(cm.plan, cm.params, ws, label, in_span, par_span);
    if (!pair.wrt_input.data.empty()) ensure_finite(pair.wrt_input, "input gradient");
    if (!pair.wrt_params.data.empty()) ensure_finite(pair.wrt_params, "parameter gradient");
    return pair;
}

}  // namespace phyg
