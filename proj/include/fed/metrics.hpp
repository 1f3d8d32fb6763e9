#pragma once

// Evaluation over prediction tensors [N x M x C]: N inputs, M members or
// function samples, C class probabilities per row.

#include <cstddef>
#include <span>
#include <vector>

#include "fed/tensor.hpp"

namespace fed::metrics {

/// Throws ContractError unless `pt` is [N x M x C] with every row summing to 1 within `tol`.
void validate_predictions(const Tensor& pt, double tol = 1e-9);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> row);

/// Mean over members, [N x C].
Tensor mean_prediction(const Tensor& pt);
double accuracy(const Tensor& pt, std::span<const std::size_t> labels);

/// Mean over inputs of the fraction of unordered distinct member pairs whose
/// argmax labels agree. Throws ContractError when M < 2.
double agreement(const Tensor& pt);

struct ReliabilityBin {
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double mean_accuracy = 0.0;
};

/// Equal-width bins over (0, 1]; bin b holds confidences in (b/n, (b+1)/n].
std::vector<ReliabilityBin> reliability_bins(const Tensor& pt, std::span<const std::size_t> labels,
                                             std::size_t n_bins = 15);
/// Expected calibration error in percent.
double ece(const Tensor& pt, std::span<const std::size_t> labels, std::size_t n_bins = 15);

struct Uncertainty {
    std::vector<double> total;      // entropy of the mean prediction
    std::vector<double> aleatoric;  // mean member entropy
    std::vector<double> knowledge;  // total - aleatoric, clamped at 0
};

Uncertainty uncertainty_decomposition(const Tensor& pt);
double entropy(std::span<const double> p);

struct RocCurve {
    std::vector<double> fpr;
    std::vector<double> tpr;
    std::vector<double> thresholds;
    double auc = 0.0;
};

/// Out-of-distribution scores are the positives (higher = more OOD).
RocCurve roc_auc(std::span<const double> scores_in, std::span<const double> scores_out);

}  // namespace fed::metrics
