#include "fed/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fed/errors.hpp"
#include "fed/optim.hpp"

namespace fed::gen {

MlpSpec GeneratorSpec::network() const {
    MlpSpec net = base;
    net.widths.front() += input_noise_dims;
    return net;
}

void GeneratorSpec::validate() const {
    base.validate();
    for (std::size_t i = 0; i < hidden_noise_sites.size(); ++i) {
        if (hidden_noise_sites[i] >= base.num_hidden()) {
            throw ConfigError("generator: noise site " + std::to_string(hidden_noise_sites[i]) +
                              " is not a hidden layer");
        }
        if (i > 0 && hidden_noise_sites[i] <= hidden_noise_sites[i - 1]) {
            throw ConfigError("generator: noise sites must be strictly increasing");
        }
    }
    if (!(init_noise_scale > 0.0)) throw ConfigError("generator: init_noise_scale must be positive");
}

GeneratorSpec GeneratorSpec::with_defaults(std::size_t data_dim, std::vector<std::size_t> hidden,
                                           std::size_t classes) {
    GeneratorSpec spec;
    spec.base.widths.push_back(data_dim);
    spec.base.widths.insert(spec.base.widths.end(), hidden.begin(), hidden.end());
    spec.base.widths.push_back(classes);
    spec.input_noise_dims = data_dim;
    spec.hidden_noise_sites.resize(hidden.size());
    std::iota(spec.hidden_noise_sites.begin(), spec.hidden_noise_sites.end(), std::size_t{0});
    return spec;
}

double GeneratorParams::noise_scale(std::size_t site) const { return std::exp(log_noise_scale[site]); }

GeneratorParams init_generator(const GeneratorSpec& spec, Rng& rng) {
    spec.validate();
    GeneratorParams p;
    p.weights = init_mlp_params(spec.network(), rng);
    p.log_noise_scale = Tensor({spec.hidden_noise_sites.size()}, std::log(spec.init_noise_scale));
    return p;
}

GeneratorParams without_hidden_noise(GeneratorParams params) {
    for (double& v : params.log_noise_scale.data()) v = -std::numeric_limits<double>::infinity();
    return params;
}

std::size_t EpsilonBatch::batch() const { return hidden_noise.empty() ? 0 : hidden_noise.front().dim(1); }

EpsilonBatch EpsilonBatch::slice(std::size_t j) const {
    EpsilonBatch out;
    const std::size_t d_eps = input_noise.cols();
    out.input_noise = Tensor({1, d_eps}, std::vector<double>(input_noise.row(j).begin(), input_noise.row(j).end()));
    for (const auto& h : hidden_noise) {
        const auto r = h.row(j);
        out.hidden_noise.emplace_back(Shape{1, h.dim(1), h.dim(2)}, std::vector<double>(r.begin(), r.end()));
    }
    return out;
}

EpsilonBatch draw_epsilon(const GeneratorSpec& spec, std::size_t functions, std::size_t batch, Rng& rng) {
    EpsilonBatch eps;
    eps.input_noise = Tensor({functions, spec.input_noise_dims});
    for (std::size_t s = 0; s < spec.hidden_noise_sites.size(); ++s) {
        eps.hidden_noise.emplace_back(Shape{functions, batch, spec.site_width(s)});
    }
    for (std::size_t j = 0; j < functions; ++j) {
        for (double& v : eps.input_noise.row(j)) v = rng.normal();
        for (auto& h : eps.hidden_noise) {
            auto r = h.row(j);
            if (spec.share_hidden_noise) {
                const std::size_t width = h.dim(2);
                for (std::size_t k = 0; k < width; ++k) r[k] = rng.normal();
                for (std::size_t i = 1; i < batch; ++i) std::copy_n(r.begin(), width, r.begin() + i * width);
            } else {
                for (double& v : r) v = rng.normal();
            }
        }
    }
    return eps;
}

EpsilonBatch stack(std::span<const EpsilonBatch> parts) {
    if (parts.empty()) throw ContractError("stack: no epsilon batches");
    std::size_t functions = 0;
    for (const auto& p : parts) functions += p.num_functions();
    EpsilonBatch out;
    const std::size_t d_eps = parts.front().input_noise.cols();
    std::vector<double> input;
    input.reserve(functions * d_eps);
    for (const auto& p : parts) input.insert(input.end(), p.input_noise.data().begin(), p.input_noise.data().end());
    out.input_noise = Tensor({functions, d_eps}, std::move(input));
    for (std::size_t s = 0; s < parts.front().hidden_noise.size(); ++s) {
        const auto& first = parts.front().hidden_noise[s];
        std::vector<double> h;
        h.reserve(functions * first.dim(1) * first.dim(2));
        for (const auto& p : parts) {
            h.insert(h.end(), p.hidden_noise[s].data().begin(), p.hidden_noise[s].data().end());
        }
        out.hidden_noise.emplace_back(Shape{functions, first.dim(1), first.dim(2)}, std::move(h));
    }
    return out;
}

namespace {

void check_eps(const GeneratorSpec& spec, const Tensor& inputs, const EpsilonBatch& eps) {
    if (inputs.rank() != 2 || inputs.cols() != spec.data_dim()) {
        throw DimensionError("generator: inputs " + shape_string(inputs.shape()) + " do not match data dimension " +
                             std::to_string(spec.data_dim()));
    }
    if (eps.input_noise.rank() != 2 || eps.input_noise.cols() != spec.input_noise_dims) {
        throw DimensionError("generator: input noise has shape " + shape_string(eps.input_noise.shape()));
    }
    if (eps.hidden_noise.size() != spec.hidden_noise_sites.size()) {
        throw DimensionError("generator: wrong number of hidden noise sites");
    }
    const std::size_t m = eps.num_functions(), b = inputs.rows();
    for (std::size_t s = 0; s < eps.hidden_noise.size(); ++s) {
        const Shape want{m, b, spec.site_width(s)};
        if (eps.hidden_noise[s].shape() != want) {
            throw DimensionError("generator: hidden noise site " + std::to_string(s) + " has shape " +
                                 shape_string(eps.hidden_noise[s].shape()) + ", expected " + shape_string(want));
        }
    }
}

// Row j*B + i = (x_i, input_noise_j).
Tensor augmented_inputs(const Tensor& inputs, const Tensor& input_noise) {
    const std::size_t m = input_noise.rows(), b = inputs.rows(), d = inputs.cols(), de = input_noise.cols();
    Tensor x({m * b, d + de});
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i = 0; i < b; ++i) {
            auto row = x.row(j * b + i);
            const auto xi = inputs.row(i);
            const auto ej = input_noise.row(j);
            std::copy(xi.begin(), xi.end(), row.begin());
            std::copy(ej.begin(), ej.end(), row.begin() + static_cast<std::ptrdiff_t>(d));
        }
    }
    return x;
}

// Maps hidden layer index -> site index (or npos).
std::vector<std::size_t> site_lookup(const GeneratorSpec& spec) {
    std::vector<std::size_t> lookup(spec.base.num_hidden(), static_cast<std::size_t>(-1));
    for (std::size_t s = 0; s < spec.hidden_noise_sites.size(); ++s) lookup[spec.hidden_noise_sites[s]] = s;
    return lookup;
}

}  // namespace

Tensor generator_forward(const GeneratorSpec& spec, const GeneratorParams& params, const Tensor& inputs,
                         const EpsilonBatch& eps) {
    check_eps(spec, inputs, eps);
    const std::size_t m = eps.num_functions(), b = inputs.rows();
    const auto lookup = site_lookup(spec);
    const HiddenHook hook = [&](std::size_t layer, Tensor& h) {
        const std::size_t s = lookup[layer];
        if (s == static_cast<std::size_t>(-1)) return;
        const double scale = params.noise_scale(s);
        const auto noise = eps.hidden_noise[s].data();
        auto values = h.data();
        for (std::size_t k = 0; k < values.size(); ++k) values[k] = values[k] + scale * noise[k];
    };
    const Tensor logits =
        mlp_logits(spec.network(), params.weights.data(), augmented_inputs(inputs, eps.input_noise), hook);
    return softmax_rows(logits).reshaped({m, b, spec.num_classes()});
}

GeneratorGraph::GeneratorGraph(const GeneratorSpec& spec, const GeneratorParams& params) : spec_(spec) {
    const ParamLayout layout(spec.network());
    for (auto& t : layout.unpack(params.weights.data())) layers_.push_back(graph_.parameter(std::move(t)));
    for (double v : params.log_noise_scale.data()) log_scales_.push_back(graph_.parameter(Tensor::scalar(v)));
}

ad::Var GeneratorGraph::probs(const Tensor& inputs, const EpsilonBatch& eps) {
    check_eps(spec_, inputs, eps);
    const std::size_t rows = eps.num_functions() * inputs.rows();
    const auto lookup = site_lookup(spec_);
    const GraphHiddenHook hook = [&](std::size_t layer, ad::Var h) {
        const std::size_t s = lookup[layer];
        if (s == static_cast<std::size_t>(-1)) return h;
        const ad::Var noise = graph_.constant(eps.hidden_noise[s].reshaped({rows, spec_.site_width(s)}));
        return ad::add(h, ad::mul(ad::exp(log_scales_[s]), noise));
    };
    const ad::Var x = graph_.constant(augmented_inputs(inputs, eps.input_noise));
    return ad::softmax_rows(mlp_logits(layers_, x, hook));
}

GeneratorParams GeneratorGraph::gradients() const {
    std::vector<Tensor> grads;
    for (const auto& v : layers_) grads.push_back(graph_.grad(v));
    GeneratorParams out;
    out.weights = ParamLayout(spec_.network()).pack(grads);
    out.log_noise_scale = Tensor({log_scales_.size()});
    for (std::size_t s = 0; s < log_scales_.size(); ++s) out.log_noise_scale[s] = graph_.grad(log_scales_[s])[0];
    return out;
}

TeacherSet TeacherSet::dense(const Tensor& predictions) {
    if (predictions.rank() != 3) throw DimensionError("teachers: predictions must be [N x M x C]");
    TeacherSet t;
    const std::size_t n = predictions.dim(0), m = predictions.dim(1);
    t.num_members_ = m;
    t.num_classes_ = predictions.dim(2);
    t.probs_ = predictions.storage();
    t.member_ids_.reserve(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) t.member_ids_.push_back(static_cast<std::uint32_t>(j));
        t.offsets_.push_back(t.member_ids_.size());
    }
    return t;
}

TeacherSet TeacherSet::ragged(const posterior::RaggedPredictions& heldout) {
    TeacherSet t;
    t.num_members_ = heldout.num_members;
    t.num_classes_ = heldout.num_classes;
    t.offsets_ = heldout.offsets;
    t.member_ids_ = heldout.member_ids;
    t.probs_ = heldout.probs;
    return t;
}

std::span<const std::uint32_t> TeacherSet::members(std::size_t point) const {
    return std::span<const std::uint32_t>(member_ids_).subspan(offsets_[point], offsets_[point + 1] - offsets_[point]);
}

std::span<const double> TeacherSet::prob(std::size_t point, std::size_t slot) const {
    return std::span<const double>(probs_).subspan((offsets_[point] + slot) * num_classes_, num_classes_);
}

void DistillConfig::validate() const {
    if (batch_size < 1) throw ConfigError("distill: batch_size must be at least 1");
    if (virtual_members < 2) throw ConfigError("distill: virtual_members must be at least 2");
    if (epochs < 1) throw ConfigError("distill: epochs must be at least 1");
    kernel.validate();
    LrSchedule(base_lr, milestones, factor);
}

bool pick_teachers(std::span<const std::uint32_t> available, std::span<const std::size_t> rank, std::size_t count,
                   Rng& rng, std::vector<std::size_t>& slots) {
    if (available.empty()) throw ContractError("pick_teachers: point has no teachers");
    std::vector<std::size_t> order(available.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return rank[available[a]] < rank[available[b]]; });
    slots.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(count, order.size())));
    const bool short_of_members = slots.size() < count;
    while (slots.size() < count) slots.push_back(rng.index(available.size()));
    return short_of_members;
}

ad::Var distill_loss(GeneratorGraph& gg, const Tensor& inputs, const EpsilonBatch& eps, const Tensor& teacher_reps,
                     const mmd::KernelSpec& kernel) {
    const ad::Var probs = gg.probs(inputs, eps);
    const std::size_t m = eps.num_functions();
    const ad::Var reps = ad::reshape(probs, {m, probs.value().size() / m});
    return mmd::mmd2(teacher_reps, reps, kernel);
}

DistillResult distill_train(const GeneratorSpec& spec, GeneratorParams init, const Tensor& inputs,
                            const TeacherSet& teachers, const DistillConfig& cfg) {
    spec.validate();
    cfg.validate();
    const std::size_t n = teachers.num_points(), c = teachers.num_classes(), vm = cfg.virtual_members;
    if (inputs.rank() != 2 || inputs.rows() != n) {
        throw DimensionError("distill: " + std::to_string(inputs.rows()) + " inputs for " + std::to_string(n) +
                             " teacher points");
    }
    if (c != spec.num_classes()) throw DimensionError("distill: class count differs between teachers and generator");

    Rng rng(cfg.seed);
    const LrSchedule schedule(cfg.base_lr, cfg.milestones, cfg.factor);
    DistillResult result;
    result.params = std::move(init);
    Adam adam({result.params.weights.shape(), result.params.log_noise_scale.shape()}, AdamConfig{cfg.base_lr});
    std::vector<std::size_t> rank(teachers.num_members());
    std::vector<std::size_t> slots;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        adam.set_lr(schedule.at(epoch));
        const auto order = rng.permutation(n);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, n - start);
            const auto priority = rng.permutation(teachers.num_members());
            for (std::size_t r = 0; r < priority.size(); ++r) rank[priority[r]] = r;

            Tensor x({b, spec.data_dim()});
            Tensor reps({vm, b * c});
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t point = order[start + i];
                const auto src = inputs.row(point);
                std::copy(src.begin(), src.end(), x.row(i).begin());
                if (pick_teachers(teachers.members(point), rank, vm, rng, slots)) ++result.replacement_warnings;
                for (std::size_t j = 0; j < vm; ++j) {
                    const auto p = teachers.prob(point, slots[j]);
                    std::copy(p.begin(), p.end(), reps.row(j).begin() + static_cast<std::ptrdiff_t>(i * c));
                }
            }
            const EpsilonBatch eps = draw_epsilon(spec, vm, b, rng);

            GeneratorGraph gg(spec, result.params);
            const ad::Var loss = distill_loss(gg, x, eps, reps, cfg.kernel);
            gg.graph().backward(loss);
            GeneratorParams grads = gg.gradients();
            if (!cfg.train_noise_scales) std::fill(grads.log_noise_scale.data().begin(), grads.log_noise_scale.data().end(), 0.0);
            const double value = loss.value().item();
            if (!std::isfinite(value)) {
                throw NumericError("distill: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(result.steps));
            }
            std::vector<Tensor> params{std::move(result.params.weights), std::move(result.params.log_noise_scale)};
            const std::vector<Tensor> g{std::move(grads.weights), std::move(grads.log_noise_scale)};
            adam.step(params, g);
            result.params.weights = std::move(params[0]);
            result.params.log_noise_scale = std::move(params[1]);
            loss_sum += value;
            ++batches;
            ++result.steps;
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    }
    return result;
}

Tensor sample_predictions(const GeneratorSpec& spec, const GeneratorParams& params, const Tensor& inputs,
                          std::size_t n_functions, std::uint64_t seed) {
    if (n_functions < 1) throw ContractError("sample_predictions: n_functions must be at least 1");
    const std::size_t n = inputs.rows(), c = spec.num_classes();
    // Keep each batched forward pass around 16k rows.
    const std::size_t chunk = std::max<std::size_t>(1, (std::size_t{1} << 14) / std::max<std::size_t>(n, 1));
    const std::size_t chunks = (n_functions + chunk - 1) / chunk;
    Tensor out({n, n_functions, c});
    const auto cc = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t k = 0; k < cc; ++k) {
        const std::size_t first = static_cast<std::size_t>(k) * chunk;
        const std::size_t count = std::min(chunk, n_functions - first);
        std::vector<EpsilonBatch> parts;
        parts.reserve(count);
        for (std::size_t f = first; f < first + count; ++f) {
            Rng rng(derive_seed(seed, f));
            parts.push_back(draw_epsilon(spec, 1, n, rng));
        }
        const Tensor probs = generator_forward(spec, params, inputs, stack(parts));
        for (std::size_t f = 0; f < count; ++f) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < c; ++j) out(i, first + f, j) = probs(f, i, j);
            }
        }
    }
    return out;
}

Tensor paired_function_values(const GeneratorSpec& spec, const GeneratorParams& params, std::span<const double> x1,
                              std::span<const double> x2, std::size_t c1, std::size_t c2, std::size_t n_functions,
                              std::uint64_t seed) {
    const std::size_t d = spec.data_dim();
    if (x1.size() != d || x2.size() != d) throw DimensionError("covariance: input dimension mismatch");
    if (c1 >= spec.num_classes() || c2 >= spec.num_classes()) throw DimensionError("covariance: class out of range");
    Tensor inputs({2, d});
    std::copy(x1.begin(), x1.end(), inputs.row(0).begin());
    std::copy(x2.begin(), x2.end(), inputs.row(1).begin());
    // Both inputs are evaluated under one function draw, so hidden noise is
    // shared across the pair whatever the training-time setting.
    GeneratorSpec shared = spec;
    shared.share_hidden_noise = true;
    Tensor table({n_functions, 2});
    std::vector<EpsilonBatch> parts;
    parts.reserve(n_functions);
    for (std::size_t f = 0; f < n_functions; ++f) {
        Rng rng(derive_seed(seed, f));
        parts.push_back(draw_epsilon(shared, 1, 2, rng));
    }
    const Tensor probs = generator_forward(shared, params, inputs, stack(parts));
    for (std::size_t f = 0; f < n_functions; ++f) {
        table(f, 0) = probs(f, 0, c1);
        table(f, 1) = probs(f, 1, c2);
    }
    return table;
}

double covariance_between_inputs(const GeneratorSpec& spec, const GeneratorParams& params,
                                 std::span<const double> x1, std::span<const double> x2, std::size_t c1,
                                 std::size_t c2, std::size_t n_functions, std::uint64_t seed) {
    if (n_functions < 2) throw ContractError("covariance: needs at least two function samples");
    const Tensor t = paired_function_values(spec, params, x1, x2, c1, c2, n_functions, seed);
    const double nf = static_cast<double>(n_functions);
    double mean_a = 0.0, mean_b = 0.0;
    for (std::size_t f = 0; f < n_functions; ++f) {
        mean_a += t(f, 0);
        mean_b += t(f, 1);
    }
    mean_a /= nf;
    mean_b /= nf;
    double acc = 0.0;
    for (std::size_t f = 0; f < n_functions; ++f) acc += (t(f, 0) - mean_a) * (t(f, 1) - mean_b);
    return acc / (nf - 1.0);
}

}  // namespace fed::gen
