#pragma once

// Noise-injected generator network and its distillation loop.
//
// The generator is an MLP whose input is the data point concatenated with
// `input_noise_dims` standard-normal values; after selected hidden layers
// (post-ReLU) it adds scale_s * N(0, 1) noise with a learnable per-site
// log-scale. One draw of all noise values is one function sample. M draws
// are evaluated together as a single [M*B x ...] batch.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fed/autodiff.hpp"
#include "fed/mlp.hpp"
#include "fed/mmd.hpp"
#include "fed/posterior.hpp"
#include "fed/random.hpp"
#include "fed/tensor.hpp"

namespace fed::gen {

struct GeneratorSpec {
    /// Data dimension, hidden widths..., number of classes.
    MlpSpec base;
    std::size_t input_noise_dims = 0;
    /// Hidden layer indices that receive additive noise.
    std::vector<std::size_t> hidden_noise_sites;
    double init_noise_scale = 0.1;
    /// Share hidden noise across batch elements instead of drawing it per element.
    bool share_hidden_noise = false;

    /// The underlying network, whose first width is d + input_noise_dims.
    MlpSpec network() const;
    std::size_t data_dim() const { return base.input_dim(); }
    std::size_t num_classes() const { return base.num_classes(); }
    std::size_t site_width(std::size_t site) const { return base.widths[hidden_noise_sites[site] + 1]; }
    void validate() const;

    /// d noise dims and noise after every hidden layer.
    static GeneratorSpec with_defaults(std::size_t data_dim, std::vector<std::size_t> hidden, std::size_t classes);

    friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

struct GeneratorParams {
    Tensor weights;          // flat MLP parameters of spec.network()
    Tensor log_noise_scale;  // one entry per noise site

    double noise_scale(std::size_t site) const;
};

GeneratorParams init_generator(const GeneratorSpec& spec, Rng& rng);
/// Copy with every noise scale set to exactly zero.
GeneratorParams without_hidden_noise(GeneratorParams params);

struct EpsilonBatch {
    Tensor input_noise;                // [M x d_eps]
    std::vector<Tensor> hidden_noise;  // per site [M x B x width]

    std::size_t num_functions() const { return input_noise.rows(); }
    std::size_t batch() const;
    /// Function slice j as a one-function batch.
    EpsilonBatch slice(std::size_t j) const;
};

/// Draws function j's input noise and then its hidden noise for every site.
EpsilonBatch draw_epsilon(const GeneratorSpec& spec, std::size_t functions, std::size_t batch, Rng& rng);
/// Concatenates single-function batches along the function axis.
EpsilonBatch stack(std::span<const EpsilonBatch> parts);

/// Probabilities [M x B x C] for inputs [B x d].
Tensor generator_forward(const GeneratorSpec& spec, const GeneratorParams& params, const Tensor& inputs,
                         const EpsilonBatch& eps);

/// Graph-backed generator for training and gradient checks. Not movable:
/// its Vars point into the owned graph.
class GeneratorGraph {
public:
    GeneratorGraph(const GeneratorSpec& spec, const GeneratorParams& params);
    GeneratorGraph(const GeneratorGraph&) = delete;
    GeneratorGraph& operator=(const GeneratorGraph&) = delete;

    ad::Graph& graph() { return graph_; }
    /// Probabilities as a [M*B x C] node, row j*B + i for function j, input i.
    ad::Var probs(const Tensor& inputs, const EpsilonBatch& eps);
    /// Gradients after graph().backward(), in GeneratorParams layout.
    GeneratorParams gradients() const;

private:
    GeneratorSpec spec_;
    ad::Graph graph_;
    std::vector<ad::Var> layers_;
    std::vector<ad::Var> log_scales_;
};

/// Teacher predictions available per distillation point: all M members for a
/// dense [N x M x C] tensor, or the held-out subset for ragged predictions.
class TeacherSet {
public:
    static TeacherSet dense(const Tensor& predictions);
    static TeacherSet ragged(const posterior::RaggedPredictions& heldout);

    std::size_t num_points() const { return offsets_.size() - 1; }
    std::size_t num_members() const { return num_members_; }
    std::size_t num_classes() const { return num_classes_; }
    std::span<const std::uint32_t> members(std::size_t point) const;
    std::span<const double> prob(std::size_t point, std::size_t slot) const;

private:
    std::size_t num_members_ = 0;
    std::size_t num_classes_ = 0;
    std::vector<std::size_t> offsets_{0};
    std::vector<std::uint32_t> member_ids_;
    std::vector<double> probs_;
};

struct DistillConfig {
    std::size_t batch_size = 64;
    std::size_t virtual_members = 8;
    std::size_t epochs = 200;
    /// Small datasets give few steps per epoch, so the rate sits above the
    /// usual 1e-3 to converge before the milestones decay it.
    double base_lr = 5e-3;
    std::vector<std::size_t> milestones{35, 45, 55, 70, 80};
    double factor = 0.33;
    mmd::KernelSpec kernel = mmd::KernelSpec::rbf_mixture({2.0, 10.0, 20.0, 50.0});
    std::uint64_t seed = 0;
    bool train_noise_scales = true;

    void validate() const;
};

/// Picks `count` teacher slots for one point given a priority order over
/// member ids (rank[id] = position). Available members are taken in priority
/// order; when fewer than `count` exist the rest are drawn uniformly with
/// replacement and the function returns true.
bool pick_teachers(std::span<const std::uint32_t> available, std::span<const std::size_t> rank, std::size_t count,
                   Rng& rng, std::vector<std::size_t>& slots);

struct DistillResult {
    GeneratorParams params;
    std::vector<double> epoch_loss;
    std::size_t steps = 0;
    /// Points that had to reuse teachers because fewer than virtual_members were available.
    std::size_t replacement_warnings = 0;
};

/// MMD^2 distillation with Adam and a milestone schedule. `inputs` row p
/// belongs to teacher point p.
DistillResult distill_train(const GeneratorSpec& spec, GeneratorParams init, const Tensor& inputs,
                            const TeacherSet& teachers, const DistillConfig& cfg);

/// One training-step loss for fixed noise and teacher reps (used for gradient checks).
ad::Var distill_loss(GeneratorGraph& gg, const Tensor& inputs, const EpsilonBatch& eps, const Tensor& teacher_reps,
                     const mmd::KernelSpec& kernel);

/// [N x F x C] probabilities; function f uses noise from Rng(derive_seed(seed, f)),
/// so results do not depend on how functions are chunked or threaded.
Tensor sample_predictions(const GeneratorSpec& spec, const GeneratorParams& params, const Tensor& inputs,
                          std::size_t n_functions, std::uint64_t seed);

/// Sample covariance (n - 1 denominator) over function draws of
/// q(c1 | x1, eps) and q(c2 | x2, eps); both inputs see the same noise.
double covariance_between_inputs(const GeneratorSpec& spec, const GeneratorParams& params,
                                 std::span<const double> x1, std::span<const double> x2, std::size_t c1,
                                 std::size_t c2, std::size_t n_functions, std::uint64_t seed);

/// The per-function table behind covariance_between_inputs: [F x 2].
Tensor paired_function_values(const GeneratorSpec& spec, const GeneratorParams& params, std::span<const double> x1,
                              std::span<const double> x2, std::size_t c1, std::size_t c2, std::size_t n_functions,
                              std::uint64_t seed);

}  // namespace fed::gen
