#include "fed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fed/errors.hpp"

namespace fed::metrics {

void validate_predictions(const Tensor& pt, double tol) {
    if (pt.rank() != 3) throw ContractError("predictions must be [N x M x C], got " + shape_string(pt.shape()));
    const std::size_t rows = pt.dim(0) * pt.dim(1), c = pt.dim(2);
    for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            const double v = pt[r * c + k];
            if (!(v >= 0.0)) throw ContractError("predictions: negative or NaN probability in row " + std::to_string(r));
            total += v;
        }
        if (std::abs(total - 1.0) > tol) {
            throw ContractError("predictions: row " + std::to_string(r) + " sums to " + std::to_string(total));
        }
    }
}

std::size_t argmax(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k) {
        if (row[k] > row[best]) best = k;
    }
    return best;
}

Tensor mean_prediction(const Tensor& pt) {
    const std::size_t n = pt.dim(0), m = pt.dim(1), c = pt.dim(2);
    Tensor out({n, c}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t k = 0; k < c; ++k) out(i, k) += pt(i, j, k);
        }
        for (std::size_t k = 0; k < c; ++k) out(i, k) /= static_cast<double>(m);
    }
    return out;
}

double accuracy(const Tensor& pt, std::span<const std::size_t> labels) {
    const Tensor mean = mean_prediction(pt);
    if (labels.size() != mean.rows()) throw DimensionError("accuracy: label count does not match predictions");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += argmax(mean.row(i)) == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double agreement(const Tensor& pt) {
    const std::size_t n = pt.dim(0), m = pt.dim(1), c = pt.dim(2);
    if (m < 2) throw ContractError("agreement needs at least two members");
    const double pairs = 0.5 * static_cast<double>(m) * static_cast<double>(m - 1);
    std::vector<std::size_t> votes(c);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(votes.begin(), votes.end(), 0);
        for (std::size_t j = 0; j < m; ++j) {
            ++votes[argmax(std::span<const double>(pt.data()).subspan((i * m + j) * c, c))];
        }
        double same = 0.0;
        for (std::size_t v : votes) same += 0.5 * static_cast<double>(v) * static_cast<double>(v ? v - 1 : 0);
        total += same / pairs;
    }
    return total / static_cast<double>(n);
}

std::vector<ReliabilityBin> reliability_bins(const Tensor& pt, std::span<const std::size_t> labels,
                                             std::size_t n_bins) {
    if (n_bins == 0) throw ContractError("ece: n_bins must be positive");
    const Tensor mean = mean_prediction(pt);
    if (labels.size() != mean.rows()) throw DimensionError("ece: label count does not match predictions");
    std::vector<ReliabilityBin> bins(n_bins);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto row = mean.row(i);
        const std::size_t pred = argmax(row);
        const double conf = row[pred];
        auto b = static_cast<std::size_t>(std::ceil(conf * static_cast<double>(n_bins)));
        b = std::clamp<std::size_t>(b, 1, n_bins) - 1;
        bins[b].count += 1;
        bins[b].mean_confidence += conf;
        bins[b].mean_accuracy += pred == labels[i] ? 1.0 : 0.0;
    }
    for (auto& bin : bins) {
        if (bin.count) {
            bin.mean_confidence /= static_cast<double>(bin.count);
            bin.mean_accuracy /= static_cast<double>(bin.count);
        }
    }
    return bins;
}

double ece(const Tensor& pt, std::span<const std::size_t> labels, std::size_t n_bins) {
    const auto bins = reliability_bins(pt, labels, n_bins);
    const double n = static_cast<double>(labels.size());
    double total = 0.0;
    for (const auto& bin : bins) {
        total += static_cast<double>(bin.count) / n * std::abs(bin.mean_accuracy - bin.mean_confidence);
    }
    return 100.0 * total;
}

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

Uncertainty uncertainty_decomposition(const Tensor& pt) {
    const std::size_t n = pt.dim(0), m = pt.dim(1), c = pt.dim(2);
    const Tensor mean = mean_prediction(pt);
    Uncertainty u;
    u.total.resize(n);
    u.aleatoric.resize(n);
    u.knowledge.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        u.total[i] = entropy(mean.row(i));
        double ale = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            ale += entropy(std::span<const double>(pt.data()).subspan((i * m + j) * c, c));
        }
        u.aleatoric[i] = ale / static_cast<double>(m);
        // Identical members carry no knowledge uncertainty; the subtraction
        // alone would leave rounding residue from the averaged mean.
        const auto rows = std::span<const double>(pt.data()).subspan(i * m * c, m * c);
        bool identical = true;
        for (std::size_t k = c; k < rows.size() && identical; ++k) identical = rows[k] == rows[k % c];
        u.knowledge[i] = identical ? 0.0 : std::max(0.0, u.total[i] - u.aleatoric[i]);
    }
    return u;
}

RocCurve roc_auc(std::span<const double> scores_in, std::span<const double> scores_out) {
    if (scores_in.empty() || scores_out.empty()) throw ContractError("roc_auc: both score lists must be nonempty");
    std::vector<double> neg(scores_in.begin(), scores_in.end());
    std::vector<double> pos(scores_out.begin(), scores_out.end());
    std::sort(neg.begin(), neg.end(), std::greater<>());
    std::sort(pos.begin(), pos.end(), std::greater<>());
    std::vector<double> thresholds(neg);
    thresholds.insert(thresholds.end(), pos.begin(), pos.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    RocCurve curve;
    curve.fpr.push_back(0.0);
    curve.tpr.push_back(0.0);
    curve.thresholds.push_back(INFINITY);
    const double n_neg = static_cast<double>(neg.size()), n_pos = static_cast<double>(pos.size());
    std::size_t ni = 0, pi = 0;
    for (double t : thresholds) {
        while (ni < neg.size() && neg[ni] >= t) ++ni;
        while (pi < pos.size() && pos[pi] >= t) ++pi;
        curve.fpr.push_back(static_cast<double>(ni) / n_neg);
        curve.tpr.push_back(static_cast<double>(pi) / n_pos);
        curve.thresholds.push_back(t);
    }
    for (std::size_t k = 1; k < curve.fpr.size(); ++k) {
        curve.auc += (curve.fpr[k] - curve.fpr[k - 1]) * 0.5 * (curve.tpr[k] + curve.tpr[k - 1]);
    }
    return curve;
}

}  // namespace fed::metrics
