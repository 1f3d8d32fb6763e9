#include "fed/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "fed/errors.hpp"
#include "fed/random.hpp"

namespace fed::data {

void LabeledDataset::validate() const {
    if (labels.empty()) throw ContractError("dataset '" + name + "' is empty");
    if (inputs.rank() != 2 || inputs.rows() != labels.size()) {
        throw ContractError("dataset '" + name + "': inputs " + shape_string(inputs.shape()) + " vs " +
                            std::to_string(labels.size()) + " labels");
    }
    for (std::size_t y : labels) {
        if (y >= num_classes) throw ContractError("dataset '" + name + "': label out of range");
    }
    if (!inputs.all_finite()) throw ContractError("dataset '" + name + "': non-finite input");
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
    const std::size_t d = dim();
    LabeledDataset out;
    out.inputs = Tensor({indices.size(), d});
    out.num_classes = num_classes;
    out.name = name;
    out.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto src = inputs.row(indices[r]);
        std::copy(src.begin(), src.end(), out.inputs.row(r).begin());
        out.labels.push_back(labels[indices[r]]);
    }
    return out;
}

LabeledDataset make_two_moons(std::size_t n, double noise_std, std::uint64_t seed) {
    if (n < 2) throw ContractError("two moons needs n >= 2");
    if (noise_std < 0.0) throw ContractError("noise_std must be non-negative");
    Rng rng(seed);
    const std::size_t n0 = (n + 1) / 2, n1 = n / 2;
    LabeledDataset ds{Tensor({n, 2}), {}, 2, "two_moons"};
    ds.labels.reserve(n);
    auto arc = [](std::size_t k, std::size_t count) {
        return count > 1 ? std::numbers::pi * static_cast<double>(k) / static_cast<double>(count - 1) : 0.0;
    };
    std::size_t r = 0;
    for (std::size_t k = 0; k < n0; ++k, ++r) {
        const double t = arc(k, n0);
        ds.inputs(r, 0) = std::cos(t);
        ds.inputs(r, 1) = std::sin(t);
        ds.labels.push_back(0);
    }
    for (std::size_t k = 0; k < n1; ++k, ++r) {
        const double t = arc(k, n1);
        ds.inputs(r, 0) = 1.0 - std::cos(t);
        ds.inputs(r, 1) = 0.5 - std::sin(t);
        ds.labels.push_back(1);
    }
    if (noise_std > 0.0) {
        for (double& v : ds.inputs.data()) v += noise_std * rng.normal();
    }
    return ds;
}

LabeledDataset make_blobs(std::size_t n, const std::vector<std::vector<double>>& centers, double std,
                          std::uint64_t seed) {
    if (centers.size() < 2) throw ContractError("make_blobs needs at least 2 centers");
    if (std < 0.0) throw ContractError("blob std must be non-negative");
    const std::size_t d = centers.front().size();
    for (const auto& c : centers) {
        if (c.size() != d || d == 0) throw DimensionError("blob centers must share a positive dimension");
    }
    const std::size_t classes = centers.size();
    Rng rng(seed);
    LabeledDataset ds{Tensor({n, d}), {}, classes, "blobs"};
    std::size_t r = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        const std::size_t count = n / classes + (c < n % classes ? 1 : 0);
        for (std::size_t k = 0; k < count; ++k, ++r) {
            for (std::size_t j = 0; j < d; ++j) ds.inputs(r, j) = centers[c][j] + std * rng.normal();
            ds.labels.push_back(c);
        }
    }
    return ds;
}

LabeledDataset make_rings(std::size_t n, const std::vector<double>& radii, double noise_std, std::uint64_t seed) {
    if (radii.size() < 2) throw ContractError("make_rings needs at least 2 radii");
    if (noise_std < 0.0) throw ContractError("noise_std must be non-negative");
    const std::size_t classes = radii.size();
    Rng rng(seed);
    LabeledDataset ds{Tensor({n, 2}), {}, classes, "rings"};
    std::size_t r = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        const std::size_t count = n / classes + (c < n % classes ? 1 : 0);
        for (std::size_t k = 0; k < count; ++k, ++r) {
            const double angle = 2.0 * std::numbers::pi * rng.uniform();
            const double radius = radii[c] + noise_std * rng.normal();
            ds.inputs(r, 0) = radius * std::cos(angle);
            ds.inputs(r, 1) = radius * std::sin(angle);
            ds.labels.push_back(c);
        }
    }
    return ds;
}

SplitPlan split(std::size_t n, std::uint64_t seed) {
    if (n < 5) throw ContractError("split needs at least 5 points, got " + std::to_string(n));
    Rng rng(seed);
    auto order = rng.permutation(n);
    // round(0.8 n) in integers; 8n is even so there is never a .5 tie.
    const std::size_t n_train = (8 * n + 5) / 10;
    SplitPlan plan;
    plan.seed = seed;
    plan.train_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    plan.val_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    return plan;
}

MixupDataset make_mixup(const LabeledDataset& train, std::size_t n_aux, const MixupOptions& options,
                        std::uint64_t seed) {
    if (train.size() < 2) throw ContractError("mixup needs at least two training points to form a pair");
    if (n_aux < 1) throw ContractError("mixup: n_aux must be at least 1");
    if (!(options.alpha > 0.0)) throw ContractError("mixup: alpha must be positive");
    if (options.fixed_lambda && !(*options.fixed_lambda >= 0.0 && *options.fixed_lambda <= 1.0)) {
        throw ContractError("mixup: fixed lambda must lie in [0,1]");
    }
    const std::size_t n = train.size(), d = train.dim();
    Rng rng(seed);
    MixupDataset out;
    out.alpha = options.alpha;
    out.inputs = Tensor({n_aux, d});
    out.provenance.reserve(n_aux);
    if (options.mix_labels) out.soft_labels = Tensor({n_aux, train.num_classes}, 0.0);
    for (std::size_t r = 0; r < n_aux; ++r) {
        const std::size_t i = rng.index(n);
        std::size_t j = rng.index(n - 1);
        if (j >= i) ++j;
        const double lambda = options.fixed_lambda ? *options.fixed_lambda : rng.beta(options.alpha, options.alpha);
        const auto xi = train.inputs.row(i);
        const auto xj = train.inputs.row(j);
        auto dst = out.inputs.row(r);
        for (std::size_t k = 0; k < d; ++k) dst[k] = lambda * xi[k] + (1.0 - lambda) * xj[k];
        if (out.soft_labels) {
            (*out.soft_labels)(r, train.labels[i]) += lambda;
            (*out.soft_labels)(r, train.labels[j]) += 1.0 - lambda;
        }
        out.provenance.push_back({i, j, lambda});
    }
    return out;
}

double rms_radius(const Tensor& inputs) {
    const std::size_t n = inputs.rows(), d = inputs.cols();
    std::vector<double> centroid(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) centroid[k] += inputs(i, k);
    }
    for (double& c : centroid) c /= static_cast<double>(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = inputs(i, k) - centroid[k];
            acc += diff * diff;
        }
    }
    return std::sqrt(acc / static_cast<double>(n));
}

double default_ood_margin(const LabeledDataset& ds) { return 5.0 * rms_radius(ds.inputs); }

std::vector<double> nearest_distances(const Tensor& points, const Tensor& reference) {
    const std::size_t d = points.cols();
    if (reference.cols() != d) throw DimensionError("nearest_distances: dimension mismatch");
    std::vector<double> out(points.rows());
    for (std::size_t i = 0; i < points.rows(); ++i) {
        double best = INFINITY;
        for (std::size_t j = 0; j < reference.rows(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = points(i, k) - reference(j, k);
                acc += diff * diff;
            }
            best = std::min(best, acc);
        }
        out[i] = std::sqrt(best);
    }
    return out;
}

namespace {

std::vector<double> centroid_of(const Tensor& x) {
    std::vector<double> c(x.cols(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t k = 0; k < x.cols(); ++k) c[k] += x(i, k);
    }
    for (double& v : c) v /= static_cast<double>(x.rows());
    return c;
}

struct ShiftBuilder {
    const LabeledDataset& ds;
    Rng& rng;
    double margin;

    Tensor operator()(const Translate& t) const {
        if (t.offset.size() != ds.dim()) throw DimensionError("ood translate: offset dimension mismatch");
        Tensor out = ds.inputs;
        for (std::size_t i = 0; i < out.rows(); ++i) {
            for (std::size_t k = 0; k < out.cols(); ++k) out(i, k) += t.offset[k];
        }
        return out;
    }

    Tensor operator()(const ScaleRadius& s) const {
        const auto c = centroid_of(ds.inputs);
        Tensor out = ds.inputs;
        for (std::size_t i = 0; i < out.rows(); ++i) {
            for (std::size_t k = 0; k < out.cols(); ++k) out(i, k) = c[k] + s.factor * (out(i, k) - c[k]);
        }
        return out;
    }

    Tensor operator()(const DisjointBlob& b) const {
        const std::size_t d = ds.dim();
        const std::size_t n = b.n ? b.n : ds.size();
        const double std = b.std > 0.0 ? b.std : 0.5 * rms_radius(ds.inputs);
        if (!b.center.empty()) {
            if (b.center.size() != d) throw DimensionError("ood blob: center dimension mismatch");
            Tensor out({n, d});
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t k = 0; k < d; ++k) out(i, k) = b.center[k] + std * rng.normal();
            }
            return out;
        }
        const auto c = centroid_of(ds.inputs);
        double extent = 0.0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += (ds.inputs(i, k) - c[k]) * (ds.inputs(i, k) - c[k]);
            extent = std::max(extent, std::sqrt(acc));
        }
        std::vector<double> dir(d);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (double& v : dir) {
                v = rng.normal();
                norm += v * v;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        const double distance = extent + margin + 6.0 * std;
        Tensor out({n, d});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < d; ++k) out(i, k) = c[k] + distance * dir[k] / norm + std * rng.normal();
        }
        return out;
    }
};

}  // namespace

Tensor make_ood(const LabeledDataset& ds, const OodShift& shift, std::uint64_t seed, std::optional<double> margin) {
    ds.validate();
    const double m = margin ? *margin : default_ood_margin(ds);
    Rng rng(seed);
    Tensor out = std::visit(ShiftBuilder{ds, rng, m}, shift);
    const auto dist = nearest_distances(out, ds.inputs);
    std::vector<std::size_t> bad;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        if (!(dist[i] > m)) bad.push_back(i);
    }
    if (!bad.empty()) {
        std::ostringstream msg;
        msg << "ood margin " << m << " violated by " << bad.size() << " point(s):";
        for (std::size_t k = 0; k < std::min<std::size_t>(bad.size(), 8); ++k) {
            msg << " #" << bad[k] << " (distance " << dist[bad[k]] << ")";
        }
        if (bad.size() > 8) msg << " ...";
        throw DomainError(msg.str());
    }
    return out;
}

void write_csv(std::ostream& out, const LabeledDataset& ds) {
    const std::size_t d = ds.dim();
    for (std::size_t k = 0; k < d; ++k) out << 'x' << k << ',';
    out << "label\n";
    out.precision(17);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t k = 0; k < d; ++k) out << ds.inputs(i, k) << ',';
        out << ds.labels[i] << '\n';
    }
}

}  // namespace fed::data
