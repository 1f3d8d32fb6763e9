#include "fed/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fed/errors.hpp"
#include "fed/kernels.hpp"

namespace fed::ad {

const Tensor& Var::value() const { return graph_->value_of(id_); }

Var Graph::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, false, false, {}, {}});
    return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, true, true, {}, {}});
    return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    Node node{std::move(value), {}, false, false, false, {}, {}};
    for (const Var& in : inputs) {
        if (in.graph_ != this) throw ContractError("op input belongs to a different graph");
        node.inputs.push_back(in.id_);
        node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var loss) {
    if (loss.graph_ != this) throw ContractError("loss belongs to a different graph");
    if (nodes_[loss.id_].value.size() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " +
                            shape_string(nodes_[loss.id_].value.shape()));
    }
    for (auto& node : nodes_) {
        node.has_grad = false;
        node.grad = Tensor();
    }
    nodes_[loss.id_].grad = Tensor(nodes_[loss.id_].value.shape(), 1.0);
    nodes_[loss.id_].has_grad = true;
    for (std::size_t id = loss.id_ + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (!node.has_grad || !node.backward) continue;
        // accumulate() only touches earlier nodes, so node.grad is stable here.
        node.backward(*this, node.grad);
    }
}

Tensor Graph::grad(Var v) const {
    const Node& node = nodes_[v.id_];
    if (node.has_grad) return node.grad;
    return Tensor(node.value.shape(), 0.0);
}

void Graph::accumulate(Var v, const Tensor& delta) {
    Node& node = nodes_[v.id_];
    if (!node.requires_grad) return;
    if (delta.size() != node.value.size()) {
        throw DimensionError("gradient of size " + std::to_string(delta.size()) + " for node of shape " +
                             shape_string(node.value.shape()));
    }
    if (!node.has_grad) {
        node.grad = Tensor(node.value.shape(), delta.storage());
        node.has_grad = true;
        return;
    }
    auto g = node.grad.data();
    auto d = delta.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i];
}

namespace {

void require_rank2(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw DimensionError(std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
}

enum class Broadcast { kSame, kLeftScalar, kRightScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::kSame;
    if (a.size() == 1) return Broadcast::kLeftScalar;
    if (b.size() == 1) return Broadcast::kRightScalar;
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " are not broadcast-compatible");
}

double sum_of(const Tensor& t) {
    double acc = 0.0;
    for (double v : t.data()) acc += v;
    return acc;
}

template <typename F>
Tensor map(const Tensor& t, F f) {
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = f(t[i]);
    return out;
}

// out = op(a, b) with broadcast; d_a = da(a_i, b_i) * g, d_b likewise.
template <typename Op, typename DA, typename DB>
Var binary(Var a, Var b, const char* name, Op op, DA da, DB db) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Broadcast kind = broadcast_kind(av, bv, name);
    const Shape& out_shape = kind == Broadcast::kLeftScalar ? bv.shape() : av.shape();
    Tensor out(out_shape);
    const std::size_t n = out.size();
    auto a_at = [&, kind](std::size_t i) { return kind == Broadcast::kLeftScalar ? av[0] : av[i]; };
    auto b_at = [&, kind](std::size_t i) { return kind == Broadcast::kRightScalar ? bv[0] : bv[i]; };
    for (std::size_t i = 0; i < n; ++i) out[i] = op(a_at(i), b_at(i));

    return a.graph().record(std::move(out), {a, b}, [a, b, kind, da, db](Graph& g, const Tensor& grad) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        const std::size_t n = grad.size();
        auto ai = [&](std::size_t i) { return kind == Broadcast::kLeftScalar ? av[0] : av[i]; };
        auto bi = [&](std::size_t i) { return kind == Broadcast::kRightScalar ? bv[0] : bv[i]; };
        if (g.requires_grad(a)) {
            Tensor ga(av.shape(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                ga[kind == Broadcast::kLeftScalar ? 0 : i] += da(ai(i), bi(i)) * grad[i];
            }
            g.accumulate(a, ga);
        }
        if (g.requires_grad(b)) {
            Tensor gb(bv.shape(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                gb[kind == Broadcast::kRightScalar ? 0 : i] += db(ai(i), bi(i)) * grad[i];
            }
            g.accumulate(b, gb);
        }
    });
}

}  // namespace

Var matmul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank2(av, "matmul");
    require_rank2(bv, "matmul");
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    if (bv.rows() != k) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_string(av.shape()) + " * " +
                             shape_string(bv.shape()));
    }
    Tensor out({m, n});
    kernels::matmul(av.data(), bv.data(), out.data(), m, k, n);
    return a.graph().record(std::move(out), {a, b}, [a, b, m, k, n](Graph& g, const Tensor& grad) {
        if (g.requires_grad(a)) {
            Tensor ga({m, k});
            kernels::matmul_bt(grad.data(), b.value().data(), ga.data(), m, n, k);
            g.accumulate(a, ga);
        }
        if (g.requires_grad(b)) {
            Tensor gb({k, n});
            kernels::matmul_at(a.value().data(), grad.data(), gb.data(), m, k, n);
            g.accumulate(b, gb);
        }
    });
}

Var add(Var a, Var b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Var scale(Var a, double factor) {
    Tensor out = map(a.value(), [factor](double x) { return factor * x; });
    return a.graph().record(std::move(out), {a}, [a, factor](Graph& g, const Tensor& grad) {
        g.accumulate(a, map(grad, [factor](double x) { return factor * x; }));
    });
}

Var relu(Var a) {
    Tensor out = map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; });
    return a.graph().record(std::move(out), {a}, [a](Graph& g, const Tensor& grad) {
        const Tensor& x = a.value();
        Tensor ga(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] = x[i] > 0.0 ? grad[i] : 0.0;
        g.accumulate(a, ga);
    });
}

Var exp(Var a) {
    Tensor out = map(a.value(), [](double x) { return std::exp(x); });
    Tensor saved = out;
    return a.graph().record(std::move(out), {a}, [a, saved = std::move(saved)](Graph& g, const Tensor& grad) {
        Tensor ga(saved.shape());
        for (std::size_t i = 0; i < saved.size(); ++i) ga[i] = saved[i] * grad[i];
        g.accumulate(a, ga);
    });
}

Var log(Var a) {
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0)) {
            throw DomainError("log of non-positive value " + std::to_string(x[i]) + " at flat index " +
                              std::to_string(i));
        }
    }
    Tensor out = map(x, [](double v) { return std::log(v); });
    return a.graph().record(std::move(out), {a}, [a](Graph& g, const Tensor& grad) {
        const Tensor& x = a.value();
        Tensor ga(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] = grad[i] / x[i];
        g.accumulate(a, ga);
    });
}

Var add_bias(Var x, Var bias) {
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    require_rank2(xv, "add_bias");
    const std::size_t rows = xv.rows(), cols = xv.cols();
    if (bv.size() != cols || (bv.rank() == 2 && bv.rows() != 1) || bv.rank() > 2) {
        throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not match rows of " +
                             shape_string(xv.shape()));
    }
    Tensor out = xv;
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) out(i, j) += bv[j];
    }
    return x.graph().record(std::move(out), {x, bias}, [x, bias, rows, cols](Graph& g, const Tensor& grad) {
        g.accumulate(x, grad);
        if (g.requires_grad(bias)) {
            Tensor gb(bias.value().shape(), 0.0);
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < cols; ++j) gb[j] += grad[i * cols + j];
            }
            g.accumulate(bias, gb);
        }
    });
}

Var sum(Var a) {
    Tensor out = Tensor::scalar(sum_of(a.value()));
    return a.graph().record(std::move(out), {a}, [a](Graph& g, const Tensor& grad) {
        g.accumulate(a, Tensor(a.value().shape(), grad[0]));
    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var reshape(Var a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return a.graph().record(std::move(out), {a}, [a](Graph& g, const Tensor& grad) {
        g.accumulate(a, grad);
    });
}

Var softmax_rows(Var logits) {
    const Tensor& z = logits.value();
    require_rank2(z, "softmax_rows");
    const std::size_t rows = z.rows(), cols = z.cols();
    Tensor out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        double hi = z(i, 0);
        for (std::size_t j = 1; j < cols; ++j) hi = std::max(hi, z(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            out(i, j) = std::exp(z(i, j) - hi);
            total += out(i, j);
        }
        for (std::size_t j = 0; j < cols; ++j) out(i, j) /= total;
    }
    Tensor saved = out;
    return logits.graph().record(std::move(out), {logits},
                                 [logits, saved = std::move(saved), rows, cols](Graph& g, const Tensor& grad) {
                                     Tensor gz({rows, cols});
                                     for (std::size_t i = 0; i < rows; ++i) {
                                         double dot = 0.0;
                                         for (std::size_t j = 0; j < cols; ++j) dot += grad(i, j) * saved(i, j);
                                         for (std::size_t j = 0; j < cols; ++j) {
                                             gz(i, j) = saved(i, j) * (grad(i, j) - dot);
                                         }
                                     }
                                     g.accumulate(logits, gz);
                                 });
}

Var cross_entropy(Var probs, const Tensor& soft_targets) {
    const Tensor& p = probs.value();
    require_rank2(p, "cross_entropy");
    if (soft_targets.shape() != p.shape()) {
        throw DimensionError("cross_entropy: targets " + shape_string(soft_targets.shape()) + " vs probs " +
                             shape_string(p.shape()));
    }
    const std::size_t rows = p.rows();
    double loss = 0.0;
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (soft_targets[i] == 0.0) continue;
        double q = p[i];
        if (q < kProbFloor) {
            q = kProbFloor;
            ++clamped;
        }
        loss -= soft_targets[i] * std::log(q);
    }
    probs.graph().note_clamp(clamped);
    Tensor out = Tensor::scalar(loss / static_cast<double>(rows));
    return probs.graph().record(std::move(out), {probs}, [probs, soft_targets, rows](Graph& g, const Tensor& grad) {
        const Tensor& p = probs.value();
        Tensor gp(p.shape(), 0.0);
        const double s = grad[0] / static_cast<double>(rows);
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (soft_targets[i] == 0.0 || p[i] < kProbFloor) continue;
            gp[i] = -s * soft_targets[i] / p[i];
        }
        g.accumulate(probs, gp);
    });
}

Var cross_entropy(Var probs, std::span<const std::size_t> labels) {
    const Tensor& p = probs.value();
    require_rank2(p, "cross_entropy");
    if (labels.size() != p.rows()) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(p.rows()) + " rows");
    }
    Tensor targets(p.shape(), 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= p.cols()) throw DimensionError("cross_entropy: label out of range");
        targets(i, labels[i]) = 1.0;
    }
    return cross_entropy(probs, targets);
}

}  // namespace fed::ad
