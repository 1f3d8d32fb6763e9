#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fed/tensor.hpp"

namespace fed {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed list of parameter tensors.
class Adam {
public:
    Adam(const std::vector<Shape>& shapes, AdamConfig config = {});

    /// One update. Throws NumericError naming the tensor and element if any
    /// gradient is NaN or infinite; parameters are left untouched then.
    void step(std::span<Tensor> params, std::span<const Tensor> grads);

    void set_lr(double lr) { config_.lr = lr; }
    double lr() const { return config_.lr; }
    std::size_t step_count() const { return step_; }
    const std::vector<Tensor>& first_moment() const { return m_; }
    const std::vector<Tensor>& second_moment() const { return v_; }

private:
    AdamConfig config_;
    std::size_t step_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

/// Piecewise-constant schedule: lr(epoch) = base_lr * factor^(#milestones <= epoch).
/// Epochs are counted from 0.
class LrSchedule {
public:
    LrSchedule(double base_lr, std::vector<std::size_t> milestones, double factor);

    double at(std::size_t epoch) const;
    double base_lr() const { return base_lr_; }
    const std::vector<std::size_t>& milestones() const { return milestones_; }
    double factor() const { return factor_; }

private:
    double base_lr_;
    std::vector<std::size_t> milestones_;
    double factor_;
};

}  // namespace fed
