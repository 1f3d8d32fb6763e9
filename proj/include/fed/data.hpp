#pragma once

// Synthetic classification data, the train/validation split, mixup
// auxiliary sets and out-of-distribution inputs. Every generator is a pure
// function of its arguments and seed.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fed/tensor.hpp"

namespace fed::data {

struct LabeledDataset {
    Tensor inputs;                    // [N x d]
    std::vector<std::size_t> labels;  // N entries in [0, num_classes)
    std::size_t num_classes = 0;
    std::string name;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return inputs.cols(); }
    /// Throws ContractError when an invariant is broken.
    void validate() const;
    LabeledDataset subset(std::span<const std::size_t> indices) const;
};

/// Two interleaved half circles in the plane, classes balanced (odd n gives
/// class 0 the extra point). Class 0 lies on (cos t, sin t), class 1 on
/// (1 - cos t, 0.5 - sin t), t evenly spaced on [0, pi].
LabeledDataset make_two_moons(std::size_t n, double noise_std, std::uint64_t seed);

/// Isotropic Gaussian clusters, one class per center.
LabeledDataset make_blobs(std::size_t n, const std::vector<std::vector<double>>& centers, double std,
                          std::uint64_t seed);

/// Concentric noisy circles in the plane, one class per radius.
LabeledDataset make_rings(std::size_t n, const std::vector<double>& radii, double noise_std, std::uint64_t seed);

struct SplitPlan {
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
    std::uint64_t seed = 0;
};

/// Uniform shuffle followed by an 80/20 cut; |train| = round(0.8 N).
SplitPlan split(std::size_t n, std::uint64_t seed);
inline SplitPlan split(const LabeledDataset& ds, std::uint64_t seed) { return split(ds.size(), seed); }

struct MixupOrigin {
    std::size_t i = 0;
    std::size_t j = 0;
    double lambda = 0.0;
};

struct MixupDataset {
    Tensor inputs;  // [n_aux x d]
    std::vector<MixupOrigin> provenance;
    double alpha = 0.0;
    /// [n_aux x C] mixed one-hot labels, only when requested.
    std::optional<Tensor> soft_labels;
};

struct MixupOptions {
    double alpha = 0.2;
    bool mix_labels = false;
    /// Overrides the Beta draw; used to pin endpoints in tests.
    std::optional<double> fixed_lambda;
};

/// n_aux points lambda * x_i + (1 - lambda) * x_j with i != j uniform and
/// lambda ~ Beta(alpha, alpha).
MixupDataset make_mixup(const LabeledDataset& train, std::size_t n_aux, const MixupOptions& options,
                        std::uint64_t seed);

struct Translate {
    std::vector<double> offset;
};
struct ScaleRadius {
    double factor = 1.0;
};
/// Gaussian blob of inputs no training point is near. Without a center it
/// is placed beyond the data's extent in a random direction; with one it
/// sits exactly there (e.g. an empty gap between clusters).
struct DisjointBlob {
    std::size_t n = 0;   // 0: same count as the dataset
    double std = 0.0;    // 0: half the data's RMS radius
    std::vector<double> center;
};
using OodShift = std::variant<Translate, ScaleRadius, DisjointBlob>;

/// Root-mean-square distance of the inputs to their centroid.
double rms_radius(const Tensor& inputs);
/// 5 x rms_radius.
double default_ood_margin(const LabeledDataset& ds);
/// Minimum Euclidean distance from each row of `points` to any row of `reference`.
std::vector<double> nearest_distances(const Tensor& points, const Tensor& reference);

/// Shifted, unlabeled inputs. Every produced point must be at least
/// `margin` away from all dataset inputs; violations throw DomainError
/// naming the offending points.
Tensor make_ood(const LabeledDataset& ds, const OodShift& shift, std::uint64_t seed,
                std::optional<double> margin = std::nullopt);

/// CSV with header x0..x{d-1},label.
void write_csv(std::ostream& out, const LabeledDataset& ds);

}  // namespace fed::data
