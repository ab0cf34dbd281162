#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sdc/rng.hpp"
#include "sdc/tensor.hpp"

namespace sdc {

enum class LayerKind { Conv, MaxPool, Relu, Flatten, Fc };

struct LayerSpec {
    LayerKind kind;
    // conv
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    // fc
    int fan_in = 0;
    int fan_out = 0;
    bool dropconnect_enabled = false;

    bool has_params() const { return kind == LayerKind::Conv || kind == LayerKind::Fc; }
};

/// Weight/bias tensors aligned with a LayerSpec chain (undefined tensors for
/// parameterless layers). Inference with training_mode=false never mutates
/// the state, so a frozen model is safe to share.
struct ModelState {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
    bool training_mode = false;
    std::uint64_t rng_seed = 0;

    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> out;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i].defined()) out.push_back(&weights[i]);
            if (biases[i].defined()) out.push_back(&biases[i]);
        }
        return out;
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& w : weights)
            if (w.defined()) n += w.numel();
        for (const auto& b : biases)
            if (b.defined()) n += b.numel();
        return n;
    }

    void zero_grads() {
        for (Tensor* p : parameters()) p->zero_grad();
    }
};

/// A structured or Bernoulli mask to apply to one fc layer's weight matrix
/// during a forward pass, with its compensation scale.
struct AppliedMask {
    int layer_index = -1;
    Tensor mask;
    double scale = 1.0;
};

using MaskOverlay = std::vector<AppliedMask>;

/// Masked weights: elementwise product with the binary mask times a scale.
/// The input weights are untouched; gradient (when taped) flows through the
/// kept positions only.
inline Tensor apply_mask(const Tensor& weights, const Tensor& mask, double scale,
                         GradTape* tape = nullptr) {
    detail::check_same_shape(weights, mask, "apply_mask");
    Tensor out = Tensor::zeros(weights.shape());
    const auto& wv = weights.values();
    const auto& mv = mask.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = wv[i] * mv[i] * scale;
    if (detail::want_tape(tape, {&weights})) {
        out.set_requires_grad(true);
        Tensor wc = weights, mc = mask, oc = out;
        tape->record([wc, mc, oc, scale]() mutable {
            if (!oc.has_grad() || !wc.requires_grad()) return;
            const auto& g = oc.grad();
            const auto& mv = mc.values();
            auto& ig = wc.grad_mut();
            for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i] * mv[i] * scale;
        });
    }
    return out;
}

/// LeNet5 for 28x28 single-channel input:
/// conv(1->6, 5x5, pad 2) - relu - pool - conv(6->16, 5x5) - relu - pool -
/// flatten - fc(400->120) - relu - fc(120->84) - relu - fc(84->num_classes).
/// DropConnect is enabled on the three fc layers only.
inline std::vector<LayerSpec> lenet5_specs(int num_classes) {
    if (num_classes < 2) throw std::invalid_argument("lenet5_specs: num_classes must be >= 2");
    std::vector<LayerSpec> specs;
    auto conv = [](int cin, int cout, int k, int stride, int pad) {
        LayerSpec s;
        s.kind = LayerKind::Conv;
        s.in_channels = cin;
        s.out_channels = cout;
        s.kernel = k;
        s.stride = stride;
        s.padding = pad;
        return s;
    };
    auto plain = [](LayerKind kind) {
        LayerSpec s;
        s.kind = kind;
        return s;
    };
    auto fc = [](int fin, int fout) {
        LayerSpec s;
        s.kind = LayerKind::Fc;
        s.fan_in = fin;
        s.fan_out = fout;
        s.dropconnect_enabled = true;
        return s;
    };
    specs.push_back(conv(1, 6, 5, 1, 2));
    specs.push_back(plain(LayerKind::Relu));
    specs.push_back(plain(LayerKind::MaxPool));
    specs.push_back(conv(6, 16, 5, 1, 0));
    specs.push_back(plain(LayerKind::Relu));
    specs.push_back(plain(LayerKind::MaxPool));
    specs.push_back(plain(LayerKind::Flatten));
    specs.push_back(fc(400, 120));
    specs.push_back(plain(LayerKind::Relu));
    specs.push_back(fc(120, 84));
    specs.push_back(plain(LayerKind::Relu));
    specs.push_back(fc(84, num_classes));
    return specs;
}

/// Kaiming-uniform init, bound sqrt(6 / fan_in), biases zero. All weights are
/// drawn from the "init" stream of the given seed in layer order, so two
/// builds with the same seed are bit-identical.
inline ModelState init_model(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
    RngStream rng(seed, "init");
    ModelState state;
    state.rng_seed = seed;
    state.weights.resize(specs.size());
    state.biases.resize(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& s = specs[i];
        if (s.kind == LayerKind::Conv) {
            const int fan_in = s.in_channels * s.kernel * s.kernel;
            const double bound = std::sqrt(6.0 / fan_in);
            Tensor w = Tensor::zeros({s.out_channels, s.in_channels, s.kernel, s.kernel}, true);
            for (auto& v : w.values()) v = rng.uniform(-bound, bound);
            state.weights[i] = w;
            state.biases[i] = Tensor::zeros({s.out_channels}, true);
        } else if (s.kind == LayerKind::Fc) {
            const double bound = std::sqrt(6.0 / s.fan_in);
            Tensor w = Tensor::zeros({s.fan_in, s.fan_out}, true);
            for (auto& v : w.values()) v = rng.uniform(-bound, bound);
            state.weights[i] = w;
            state.biases[i] = Tensor::zeros({s.fan_out}, true);
        }
    }
    return state;
}

inline std::pair<std::vector<LayerSpec>, ModelState> build_lenet5(int num_classes,
                                                                  std::uint64_t seed) {
    auto specs = lenet5_specs(num_classes);
    return {specs, init_model(specs, seed)};
}

/// Forward pass producing logits [N x num_classes]. The overlay, when given,
/// supplies a (mask, scale) for specific fc layers; other layers run plain.
inline Tensor forward_logits(const std::vector<LayerSpec>& specs, const ModelState& state,
                             const Tensor& input, GradTape* tape = nullptr,
                             const MaskOverlay* overlay = nullptr) {
    Tensor h = input;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& s = specs[i];
        switch (s.kind) {
            case LayerKind::Conv:
                h = conv2d(h, state.weights[i], s.stride, s.padding, tape);
                h = add_channel_bias(h, state.biases[i], tape);
                break;
            case LayerKind::MaxPool:
                h = maxpool2(h, tape);
                break;
            case LayerKind::Relu:
                h = relu(h, tape);
                break;
            case LayerKind::Flatten:
                h = flatten_rows(h, tape);
                break;
            case LayerKind::Fc: {
                Tensor w = state.weights[i];
                if (overlay) {
                    for (const AppliedMask& am : *overlay) {
                        if (am.layer_index == static_cast<int>(i)) {
                            w = apply_mask(w, am.mask, am.scale, tape);
                            break;
                        }
                    }
                }
                h = matmul(h, w, tape);
                h = add_row_bias(h, state.biases[i], tape);
                break;
            }
        }
    }
    return h;
}

/// Mean cross-entropy over the batch: -log_softmax(logits)[i, labels[i]].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                            GradTape* tape = nullptr) {
    return nll_mean(log_softmax_rows(logits, tape), labels, tape);
}

inline int argmax_row(const Tensor& rows, int row) {
    const int k = rows.dim(1);
    const double* p = rows.values().data() + static_cast<std::size_t>(row) * k;
    int best = 0;
    for (int j = 1; j < k; ++j)
        if (p[j] > p[best]) best = j;
    return best;
}

inline double accuracy(const Tensor& logits, const std::vector<int>& labels) {
    const int n = logits.dim(0);
    int hits = 0;
    for (int i = 0; i < n; ++i)
        if (argmax_row(logits, i) == labels[i]) ++hits;
    return static_cast<double>(hits) / n;
}

/// Adam with bias correction; defaults beta1=0.9, beta2=0.999, eps=1e-8.
struct AdamState {
    double lr = 7.5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    explicit AdamState(const std::vector<Tensor*>& params, double learning_rate = 7.5e-4)
        : lr(learning_rate) {
        m.reserve(params.size());
        v.reserve(params.size());
        for (const Tensor* p : params) {
            m.emplace_back(p->values().size(), 0.0);
            v.emplace_back(p->values().size(), 0.0);
        }
    }
};

inline void adam_step(AdamState& state, const std::vector<Tensor*>& params) {
    if (params.size() != state.m.size())
        throw std::invalid_argument("adam_step: parameter list does not match optimizer state");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p];
        const auto& g = t.grad();
        if (g.size() != state.m[p].size())
            throw std::invalid_argument("adam_step: gradient shape mismatch at parameter " +
                                        std::to_string(p));
        auto& vals = t.values();
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < vals.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            vals[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace sdc
