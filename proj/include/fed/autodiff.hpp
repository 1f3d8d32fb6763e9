#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// A Graph records nodes in creation order, so every node's inputs precede it
// and a single reverse sweep is a valid topological backward pass. Graphs are
// cheap and meant to be rebuilt for every optimisation step.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "fed/tensor.hpp"

namespace fed::ad {

class Graph;

/// Handle to a node of a Graph. Valid as long as the graph is alive.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t id() const { return id_; }
    Graph& graph() const { return *graph_; }

private:
    friend class Graph;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

class Graph {
public:
    using Backward = std::function<void(Graph&, const Tensor& grad_out)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf that never receives a gradient.
    Var constant(Tensor value);
    /// Trainable leaf.
    Var parameter(Tensor value);
    /// Records an op node. `backward` is invoked with the node's output
    /// gradient and must call accumulate() for its inputs.
    Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);

    /// Reverse sweep from a scalar loss. Throws ContractError otherwise.
    void backward(Var loss);

    /// Gradient of the last backward pass; zeros for untouched nodes.
    Tensor grad(Var v) const;
    void accumulate(Var v, const Tensor& delta);
    bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }

    std::size_t size() const { return nodes_.size(); }
    std::span<const std::size_t> inputs_of(Var v) const { return nodes_[v.id_].inputs; }
    const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }

    /// Probability entries clamped to the log floor so far.
    std::size_t clamp_count() const { return clamp_count_; }
    void note_clamp(std::size_t n) { clamp_count_ += n; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        bool trainable = false;
        std::vector<std::size_t> inputs;
        Backward backward;
    };

    std::deque<Node> nodes_;  // deque: value() references survive later record() calls
    std::size_t clamp_count_ = 0;
};

/// Probability floor used by log-likelihood terms.
inline constexpr double kProbFloor = 1e-12;

// Differentiable primitives. Binary elementwise ops accept equal shapes or a
// single-element operand broadcast against the other; anything else throws
// DimensionError.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);
Var exp(Var a);
/// Throws DomainError on any non-positive entry.
Var log(Var a);
/// x[B x n] + bias[n] (or [1 x n]) added to every row.
Var add_bias(Var x, Var bias);
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);
/// Row-wise softmax with max subtraction.
Var softmax_rows(Var logits);
/// Mean over rows of -log probs[i][label_i]; zero probabilities are clamped
/// to kProbFloor and counted on the graph.
Var cross_entropy(Var probs, std::span<const std::size_t> labels);
/// Mean over rows of -sum_c target[i][c] * log probs[i][c].
Var cross_entropy(Var probs, const Tensor& soft_targets);

}  // namespace fed::ad
