#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "sdc/errors.hpp"
#include "sdc/nn.hpp"
#include "sdc/rng.hpp"
#include "sdc/tensor.hpp"

namespace sdc {

/// DropConnect training configuration for one layer: the split count rho
/// fixes both the drop rate 1/rho and the keep probability 1 - 1/rho.
struct TrainMaskConfig {
    int rho = 10;

    explicit TrainMaskConfig(int rho_) : rho(rho_) {
        if (rho < 2) throw config_error("TrainMaskConfig: rho must be >= 2");
    }
    double drop_rate() const { return 1.0 / rho; }
    double keep_prob() const { return 1.0 - 1.0 / rho; }
};

/// Fresh i.i.d. Bernoulli(p) 0/1 mask for a weight matrix; drawn once per
/// batch per layer during training.
inline Tensor sample_train_mask(int rows, int cols, double keep_prob, RngStream& rng) {
    if (!(keep_prob > 0.0 && keep_prob < 1.0))
        throw std::invalid_argument("sample_train_mask: keep probability must be in (0,1)");
    Tensor mask = Tensor::zeros({rows, cols});
    for (auto& v : mask.values()) v = rng.bernoulli(keep_prob) ? 1.0 : 0.0;
    return mask;
}

/// The rho structured masks of one layer: dense 0/1 matrices plus the sorted
/// zero-position lists. Zero positions partition the weight entries, so each
/// position is dropped in exactly one mask.
struct LayerMasks {
    std::vector<Tensor> masks;
    std::vector<std::vector<std::uint64_t>> zero_positions;

    int rho() const { return static_cast<int>(masks.size()); }
};

/// Cut a uniformly random permutation of the n = rows*cols positions into rho
/// contiguous blocks: block sizes are floor(n/rho), with the first n mod rho
/// blocks one larger. Block m gives mask m's zero positions.
inline LayerMasks build_structured_masks(int rows, int cols, int rho, RngStream& rng) {
    if (rho < 2) throw config_error("build_structured_masks: rho must be >= 2");
    const std::int64_t n = static_cast<std::int64_t>(rows) * cols;
    if (rho > n)
        throw config_error("build_structured_masks: rho " + std::to_string(rho) +
                           " exceeds weight count " + std::to_string(n) +
                           "; every mask needs at least one zero");
    std::vector<std::uint64_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), std::uint64_t{0});
    rng.shuffle(perm);

    LayerMasks lm;
    lm.masks.reserve(static_cast<std::size_t>(rho));
    lm.zero_positions.reserve(static_cast<std::size_t>(rho));
    const std::int64_t base = n / rho;
    const std::int64_t rem = n % rho;
    std::size_t cursor = 0;
    for (int m = 0; m < rho; ++m) {
        const std::int64_t block = base + (m < rem ? 1 : 0);
        std::vector<std::uint64_t> zeros(perm.begin() + cursor, perm.begin() + cursor + block);
        cursor += static_cast<std::size_t>(block);
        std::sort(zeros.begin(), zeros.end());
        Tensor mask = Tensor::full({rows, cols}, 1.0);
        for (std::uint64_t z : zeros) mask.values()[static_cast<std::size_t>(z)] = 0.0;
        lm.masks.push_back(std::move(mask));
        lm.zero_positions.push_back(std::move(zeros));
    }
    return lm;
}

/// Structured masks for every dropconnect-enabled layer of a model, built
/// from the "split" stream of `seed`. Immutable after construction.
struct MaskSet {
    int rho = 0;
    std::uint64_t seed = 0;
    struct Entry {
        int layer_index = -1;
        LayerMasks masks;
    };
    std::vector<Entry> entries;

    const Entry* find(int layer_index) const {
        for (const auto& e : entries)
            if (e.layer_index == layer_index) return &e;
        return nullptr;
    }
};

inline MaskSet build_mask_set(const std::vector<LayerSpec>& specs, int rho, std::uint64_t seed) {
    RngStream rng(seed, "split");
    MaskSet set;
    set.rho = rho;
    set.seed = seed;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (!specs[i].dropconnect_enabled) continue;
        MaskSet::Entry e;
        e.layer_index = static_cast<int>(i);
        e.masks = build_structured_masks(specs[i].fan_in, specs[i].fan_out, rho, rng);
        set.entries.push_back(std::move(e));
    }
    return set;
}

/// One sub-network's softmax output for a batch: every dropconnect layer uses
/// its split_index-th structured mask. Each mask keeps fraction (rho-1)/rho
/// of the weights, so the test-time compensation scale is rho/(rho-1).
inline Tensor subnetwork_forward(const std::vector<LayerSpec>& specs, const ModelState& state,
                                 const MaskSet& mask_set, int split_index, const Tensor& input,
                                 bool rescale = true) {
    if (state.training_mode)
        throw std::logic_error("subnetwork_forward: model must not be in training mode");
    if (split_index < 0 || split_index >= mask_set.rho)
        throw std::out_of_range("subnetwork_forward: split index " + std::to_string(split_index) +
                                " outside [0, " + std::to_string(mask_set.rho) + ")");
    const double scale =
        rescale ? static_cast<double>(mask_set.rho) / (mask_set.rho - 1) : 1.0;
    MaskOverlay overlay;
    for (const auto& e : mask_set.entries)
        overlay.push_back({e.layer_index, e.masks.masks[static_cast<std::size_t>(split_index)],
                           scale});
    return softmax_rows(forward_logits(specs, state, input, nullptr, &overlay));
}

/// Monte-Carlo comparator: S independent Bernoulli(p) weight-mask draws, each
/// forwarded with compensation scale 1/p. Returns S softmax outputs.
inline std::vector<Tensor> mc_sample_forward(const std::vector<LayerSpec>& specs,
                                             const ModelState& state, double keep_prob, int S,
                                             RngStream& rng, const Tensor& input,
                                             bool rescale = true) {
    if (state.training_mode)
        throw std::logic_error("mc_sample_forward: model must not be in training mode");
    if (S < 2) throw std::invalid_argument("mc_sample_forward: need S >= 2 samples");
    const double scale = rescale ? 1.0 / keep_prob : 1.0;
    std::vector<Tensor> outputs;
    outputs.reserve(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s) {
        MaskOverlay overlay;
        for (std::size_t i = 0; i < specs.size(); ++i) {
            if (!specs[i].dropconnect_enabled) continue;
            overlay.push_back({static_cast<int>(i),
                               sample_train_mask(specs[i].fan_in, specs[i].fan_out, keep_prob, rng),
                               scale});
        }
        outputs.push_back(softmax_rows(forward_logits(specs, state, input, nullptr, &overlay)));
    }
    return outputs;
}

}  // namespace sdc
