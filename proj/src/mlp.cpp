#include "fed/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fed/errors.hpp"
#include "fed/kernels.hpp"
#include "fed/random.hpp"

namespace fed {

void MlpSpec::validate(bool allow_linear) const {
    if (widths.size() < (allow_linear ? 2u : 3u)) {
        throw ConfigError("mlp needs input, " + std::string(allow_linear ? "" : "at least one hidden layer, ") +
                          "and output widths");
    }
    for (std::size_t w : widths) {
        if (w == 0) throw ConfigError("mlp widths must be positive");
    }
}

ParamLayout::ParamLayout(const MlpSpec& spec) {
    for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
        LayerSlot slot;
        slot.in = spec.widths[l];
        slot.out = spec.widths[l + 1];
        slot.weight_offset = total_;
        slot.bias_offset = total_ + slot.in * slot.out;
        total_ = slot.bias_offset + slot.out;
        layers_.push_back(slot);
    }
}

std::vector<Tensor> ParamLayout::unpack(std::span<const double> flat) const {
    if (flat.size() < total_) throw DimensionError("flat parameter vector shorter than layout");
    std::vector<Tensor> out;
    out.reserve(2 * layers_.size());
    for (const auto& s : layers_) {
        out.emplace_back(Shape{s.in, s.out},
                         std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(s.weight_offset),
                                             flat.begin() + static_cast<std::ptrdiff_t>(s.bias_offset)));
        out.emplace_back(Shape{s.out},
                         std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(s.bias_offset),
                                             flat.begin() + static_cast<std::ptrdiff_t>(s.bias_offset + s.out)));
    }
    return out;
}

Tensor ParamLayout::pack(std::span<const Tensor> tensors) const {
    if (tensors.size() != 2 * layers_.size()) throw DimensionError("pack: wrong number of tensors");
    std::vector<double> flat;
    flat.reserve(total_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& w = tensors[2 * l];
        const auto& b = tensors[2 * l + 1];
        if (w.size() != layers_[l].in * layers_[l].out || b.size() != layers_[l].out) {
            throw DimensionError("pack: tensor sizes do not match layer " + std::to_string(l));
        }
        flat.insert(flat.end(), w.data().begin(), w.data().end());
        flat.insert(flat.end(), b.data().begin(), b.data().end());
    }
    return Tensor::vector(std::move(flat));
}

Tensor init_mlp_params(const MlpSpec& spec, Rng& rng) {
    const ParamLayout layout(spec);
    Tensor flat({layout.total()}, 0.0);
    for (const auto& s : layout.layers()) {
        const double std = std::sqrt(2.0 / static_cast<double>(s.in));
        for (std::size_t i = 0; i < s.in * s.out; ++i) flat[s.weight_offset + i] = std * rng.normal();
    }
    return flat;
}

Tensor mlp_logits(const MlpSpec& spec, std::span<const double> flat, const Tensor& inputs, const HiddenHook& hook) {
    const ParamLayout layout(spec);
    if (flat.size() < layout.total()) throw DimensionError("mlp: parameter vector too short");
    if (inputs.rank() != 2 || inputs.cols() != spec.input_dim()) {
        throw DimensionError("mlp: inputs " + shape_string(inputs.shape()) + " do not match input width " +
                             std::to_string(spec.input_dim()));
    }
    const std::size_t rows = inputs.rows();
    Tensor h = inputs;
    const auto& layers = layout.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& s = layers[l];
        Tensor next({rows, s.out});
        kernels::matmul(h.data(), flat.subspan(s.weight_offset, s.in * s.out), next.data(), rows, s.in, s.out);
        const double* bias = flat.data() + s.bias_offset;
        const bool hidden = l + 1 < layers.size();
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < s.out; ++j) {
                double v = next(i, j) + bias[j];
                if (hidden) v = v > 0.0 ? v : 0.0;
                next(i, j) = v;
            }
        }
        if (hidden && hook) hook(l, next);
        h = std::move(next);
    }
    return h;
}

Tensor mlp_probs(const MlpSpec& spec, std::span<const double> flat, const Tensor& inputs) {
    return softmax_rows(mlp_logits(spec, flat, inputs));
}

ad::Var mlp_logits(std::span<const ad::Var> layer_params, ad::Var inputs, const GraphHiddenHook& hook) {
    if (layer_params.size() % 2 != 0 || layer_params.empty()) throw DimensionError("mlp graph: bad parameter list");
    const std::size_t n_layers = layer_params.size() / 2;
    ad::Var h = inputs;
    for (std::size_t l = 0; l < n_layers; ++l) {
        h = ad::add_bias(ad::matmul(h, layer_params[2 * l]), layer_params[2 * l + 1]);
        if (l + 1 < n_layers) {
            h = ad::relu(h);
            if (hook) h = hook(l, h);
        }
    }
    return h;
}

Tensor softmax_rows(const Tensor& logits) {
    const std::size_t rows = logits.rows(), cols = logits.cols();
    Tensor out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        double hi = logits(i, 0);
        for (std::size_t j = 1; j < cols; ++j) hi = std::max(hi, logits(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            out(i, j) = std::exp(logits(i, j) - hi);
            total += out(i, j);
        }
        for (std::size_t j = 0; j < cols; ++j) out(i, j) /= total;
    }
    return out;
}

}  // namespace fed
