#pragma once

// Fully connected ReLU classifier shared by the ensemble members and the
// generator. Parameters live in one flat vector laid out layer by layer as
// [W_0 (in x out, row-major), b_0, W_1, b_1, ...].

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fed/autodiff.hpp"
#include "fed/tensor.hpp"

namespace fed {

class Rng;

struct MlpSpec {
    /// Input dimension, hidden widths..., number of classes.
    std::vector<std::size_t> widths;

    std::size_t input_dim() const { return widths.front(); }
    std::size_t num_classes() const { return widths.back(); }
    std::size_t num_layers() const { return widths.size() - 1; }
    std::size_t num_hidden() const { return widths.size() - 2; }
    /// Requires at least one hidden layer unless `allow_linear`.
    void validate(bool allow_linear = false) const;

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct LayerSlot {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
};

class ParamLayout {
public:
    explicit ParamLayout(const MlpSpec& spec);

    const std::vector<LayerSlot>& layers() const { return layers_; }
    std::size_t total() const { return total_; }

    /// Splits a flat vector into [W_0, b_0, W_1, b_1, ...].
    std::vector<Tensor> unpack(std::span<const double> flat) const;
    Tensor pack(std::span<const Tensor> tensors) const;

private:
    std::vector<LayerSlot> layers_;
    std::size_t total_ = 0;
};

struct ModelParams {
    MlpSpec spec;
    Tensor flat;
};

/// He-normal weights, zero biases.
Tensor init_mlp_params(const MlpSpec& spec, Rng& rng);

/// Called on each hidden activation (after ReLU) with the hidden index.
using HiddenHook = std::function<void(std::size_t hidden_index, Tensor& activation)>;
using GraphHiddenHook = std::function<ad::Var(std::size_t hidden_index, ad::Var activation)>;

/// Logits [B x C] for inputs [B x d]; no graph is built.
Tensor mlp_logits(const MlpSpec& spec, std::span<const double> flat, const Tensor& inputs,
                  const HiddenHook& hook = {});
Tensor mlp_probs(const MlpSpec& spec, std::span<const double> flat, const Tensor& inputs);

/// Graph version; `layer_params` holds [W_0, b_0, W_1, b_1, ...] nodes.
ad::Var mlp_logits(std::span<const ad::Var> layer_params, ad::Var inputs, const GraphHiddenHook& hook = {});

/// Row softmax with max subtraction, identical arithmetic to ad::softmax_rows.
Tensor softmax_rows(const Tensor& logits);

}  // namespace fed
