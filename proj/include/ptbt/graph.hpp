#pragma once

// Reverse-mode differentiation over a recorded expression graph.
//
// A Graph is built symbolically: leaves are named inputs/parameters or
// owned constants, and every op node refers only to nodes created before it,
// so creation order is a topological order. forward() evaluates the graph
// against a set of bindings, backward() propagates a seed gradient back and
// accumulates parameter gradients by name until zero_grad() is called.

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ptbt/kernels.hpp"
#include "ptbt/tensor.hpp"

namespace ptbt {

enum class OpKind : std::uint8_t {
    Input,
    Param,
    Constant,
    MatMul,
    Add,
    Mul,
    Scale,
    AddBias,
    Relu,
    Softmax,
    LayerNorm,
    Embedding,
    Dropout,
    CrossEntropy,
    Attention,
    Sum,
};

std::string_view op_name(OpKind kind);

struct NodeId {
    std::size_t index = 0;
    auto operator<=>(const NodeId&) const = default;
};

class GraphError : public std::runtime_error {
public:
    GraphError(std::optional<NodeId> node, const std::string& what);
    std::optional<NodeId> node() const noexcept { return node_; }

private:
    std::optional<NodeId> node_;
};

// Non-owning name -> tensor map. Bound tensors must outlive every forward()
// and backward() that uses them.
class Bindings {
public:
    Bindings() = default;
    Bindings& bind(std::string name, const Tensor& value);
    const Tensor* find(std::string_view name) const;
    std::vector<std::string> names() const;

private:
    std::unordered_map<std::string, const Tensor*> map_;
};

using Gradients = std::map<std::string, Tensor>;

struct CrossEntropyOptions {
    double label_smoothing = 0.0;
    std::int32_t pad_id = 0;
};

struct AttentionOptions {
    std::size_t batch = 1;
    std::size_t heads = 1;
    bool causal = false;
    // batch * key_len flags, nonzero = masked key; empty = no padding.
    std::vector<std::uint8_t> key_pad;
};

class Graph {
public:
    NodeId input(std::string name);
    NodeId param(std::string name);
    NodeId constant(Tensor value);

    // a: [..., K]; b: [K, N] (or [N, K] with transpose_b). Result [..., N].
    NodeId matmul(NodeId a, NodeId b, bool transpose_b = false);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double factor);
    // bias broadcast over the trailing axis only.
    NodeId add_bias(NodeId a, NodeId bias);
    NodeId relu(NodeId a);
    NodeId softmax(NodeId a);
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5);
    // table: [V, D]; result [ids.size(), D].
    NodeId embedding(NodeId table, std::vector<std::int32_t> ids);
    // Inverted dropout; identity when the graph is in evaluation mode.
    NodeId dropout(NodeId a, double rate, std::uint64_t seed);
    // logits: [N, V] rows; mean smoothed cross-entropy over non-pad targets.
    NodeId cross_entropy(NodeId logits, std::vector<std::int32_t> targets, CrossEntropyOptions options = {});
    // q: [batch*Tq, D]; k, v: [batch*Tk, D]. Multi-head scaled dot product.
    NodeId attention(NodeId q, NodeId k, NodeId v, AttentionOptions options);
    NodeId sum(NodeId a);

    void set_training(bool training) noexcept { training_ = training; }
    bool training() const noexcept { return training_; }

    std::size_t size() const noexcept { return nodes_.size(); }
    OpKind kind(NodeId id) const { return nodes_.at(id.index).kind; }
    NodeId output() const;
    void set_output(NodeId id);

    // Evaluates every node; returns the output node's value.
    const Tensor& forward(const Bindings& bindings);
    const Tensor& value(NodeId id) const;
    bool has_forward() const noexcept { return evaluated_; }

    // Seed must have the output's shape. Parameter gradients accumulate
    // across calls; intermediate gradients are recomputed each call.
    const Gradients& backward(const Tensor& seed);
    // Seed of 1 for a scalar output.
    const Gradients& backward();
    const Gradients& gradients() const noexcept { return param_grads_; }
    void zero_grad();

    // Sign pattern of every ReLU input after the last forward; +1, -1 or 0.
    std::vector<std::int8_t> relu_signature() const;

private:
    struct Attrs {
        bool transpose_b = false;
        double scalar = 0.0;
        std::vector<std::int32_t> ids;
        CrossEntropyOptions ce;
        AttentionOptions attn;
        std::uint64_t seed = 0;
    };

    struct Node {
        OpKind kind = OpKind::Constant;
        std::vector<NodeId> inputs;
        std::string name;
        bool needs_grad = false;
        Attrs attrs;
        const Tensor* bound = nullptr;
        Tensor value;
        Tensor grad;
        std::vector<double> saved;
        std::vector<double> saved2;
    };

    NodeId push(Node node);
    const Tensor& val(NodeId id) const;
    Tensor& grad_of(NodeId id);
    void eval_node(std::size_t index);
    void backprop_node(std::size_t index);

    std::vector<Node> nodes_;
    std::optional<NodeId> output_;
    bool training_ = true;
    bool evaluated_ = false;
    Gradients param_grads_;
};

struct FiniteDifferenceOptions {
    double eps = 1e-4;
    // Skip components whose perturbation changes any ReLU input sign
    // (including inputs sitting exactly at zero).
    bool skip_relu_kinks = true;
    // Only probe these parameter names; empty = every bound Param.
    std::vector<std::string> only;
    // Probe at most this many components per parameter (evenly strided);
    // zero = all.
    std::size_t max_components_per_param = 0;
};

struct FiniteDifferenceResult {
    double max_relative_error = 0.0;
    std::size_t probed = 0;
    std::size_t skipped = 0;
    std::string worst_param;
};

// max over probed components of |analytic - central| /
// max(|analytic|, |central|, 1e-12). The graph output must be a scalar.
FiniteDifferenceResult finite_difference_check(Graph& graph, const Bindings& bindings,
                                               const FiniteDifferenceOptions& options = {});

}  // namespace ptbt
