#include "fed/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fed/errors.hpp"

namespace fed {

Adam::Adam(const std::vector<Shape>& shapes, AdamConfig config) : config_(config) {
    for (const auto& shape : shapes) {
        m_.emplace_back(shape, 0.0);
        v_.emplace_back(shape, 0.0);
    }
}

void Adam::step(std::span<Tensor> params, std::span<const Tensor> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw DimensionError("adam: expected " + std::to_string(m_.size()) + " parameter tensors");
    }
    for (std::size_t t = 0; t < grads.size(); ++t) {
        if (params[t].shape() != m_[t].shape() || grads[t].shape() != m_[t].shape()) {
            throw DimensionError("adam: shape mismatch for parameter " + std::to_string(t));
        }
        for (std::size_t i = 0; i < grads[t].size(); ++i) {
            if (!std::isfinite(grads[t][i])) {
                throw NumericError("adam: non-finite gradient " + std::to_string(grads[t][i]) + " in parameter " +
                                   std::to_string(t) + " element " + std::to_string(i) + " at step " +
                                   std::to_string(step_ + 1));
            }
        }
    }
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t t = 0; t < grads.size(); ++t) {
        auto p = params[t].data();
        auto g = grads[t].data();
        auto m = m_[t].data();
        auto v = v_[t].data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            p[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        }
    }
}

LrSchedule::LrSchedule(double base_lr, std::vector<std::size_t> milestones, double factor)
    : base_lr_(base_lr), milestones_(std::move(milestones)), factor_(factor) {
    if (!(base_lr_ > 0.0)) throw ConfigError("lr schedule: base_lr must be positive");
    if (!(factor_ > 0.0 && factor_ < 1.0)) throw ConfigError("lr schedule: factor must lie in (0,1)");
    for (std::size_t i = 1; i < milestones_.size(); ++i) {
        if (milestones_[i] <= milestones_[i - 1]) {
            throw ConfigError("lr schedule: milestones must be strictly increasing");
        }
    }
}

double LrSchedule::at(std::size_t epoch) const {
    const auto passed = std::upper_bound(milestones_.begin(), milestones_.end(), epoch) - milestones_.begin();
    return base_lr_ * std::pow(factor_, static_cast<double>(passed));
}

}  // namespace fed
