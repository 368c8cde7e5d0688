#include "ptbt/graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ptbt {

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Input: return "input";
        case OpKind::Param: return "param";
        case OpKind::Constant: return "constant";
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::AddBias: return "add_bias";
        case OpKind::Relu: return "relu";
        case OpKind::Softmax: return "softmax";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::Embedding: return "embedding";
        case OpKind::Dropout: return "dropout";
        case OpKind::CrossEntropy: return "cross_entropy";
        case OpKind::Attention: return "attention";
        case OpKind::Sum: return "sum";
    }
    return "?";
}

GraphError::GraphError(std::optional<NodeId> node, const std::string& what)
    : std::runtime_error(node ? "node " + std::to_string(node->index) + ": " + what : what), node_(node) {}

Bindings& Bindings::bind(std::string name, const Tensor& value) {
    map_[std::move(name)] = &value;
    return *this;
}

const Tensor* Bindings::find(std::string_view name) const {
    auto it = map_.find(std::string(name));
    return it == map_.end() ? nullptr : it->second;
}

std::vector<std::string> Bindings::names() const {
    std::vector<std::string> out;
    out.reserve(map_.size());
    for (const auto& [k, _] : map_) out.push_back(k);
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// construction

NodeId Graph::push(Node node) {
    for (NodeId in : node.inputs) {
        if (in.index >= nodes_.size())
            throw GraphError(NodeId{nodes_.size()}, "input node " + std::to_string(in.index) + " does not exist yet");
        node.needs_grad = node.needs_grad || nodes_[in.index].needs_grad;
    }
    nodes_.push_back(std::move(node));
    evaluated_ = false;
    return NodeId{nodes_.size() - 1};
}

NodeId Graph::input(std::string name) {
    Node n;
    n.kind = OpKind::Input;
    n.name = std::move(name);
    return push(std::move(n));
}

NodeId Graph::param(std::string name) {
    Node n;
    n.kind = OpKind::Param;
    n.name = std::move(name);
    n.needs_grad = true;
    return push(std::move(n));
}

NodeId Graph::constant(Tensor value) {
    Node n;
    n.kind = OpKind::Constant;
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b, bool transpose_b) {
    Node n;
    n.kind = OpKind::MatMul;
    n.inputs = {a, b};
    n.attrs.transpose_b = transpose_b;
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    Node n;
    n.kind = OpKind::Add;
    n.inputs = {a, b};
    return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    Node n;
    n.kind = OpKind::Mul;
    n.inputs = {a, b};
    return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double factor) {
    Node n;
    n.kind = OpKind::Scale;
    n.inputs = {a};
    n.attrs.scalar = factor;
    return push(std::move(n));
}

NodeId Graph::add_bias(NodeId a, NodeId bias) {
    Node n;
    n.kind = OpKind::AddBias;
    n.inputs = {a, bias};
    return push(std::move(n));
}

NodeId Graph::relu(NodeId a) {
    Node n;
    n.kind = OpKind::Relu;
    n.inputs = {a};
    return push(std::move(n));
}

NodeId Graph::softmax(NodeId a) {
    Node n;
    n.kind = OpKind::Softmax;
    n.inputs = {a};
    return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias, double eps) {
    Node n;
    n.kind = OpKind::LayerNorm;
    n.inputs = {x, gain, bias};
    n.attrs.scalar = eps;
    return push(std::move(n));
}

NodeId Graph::embedding(NodeId table, std::vector<std::int32_t> ids) {
    Node n;
    n.kind = OpKind::Embedding;
    n.inputs = {table};
    n.attrs.ids = std::move(ids);
    return push(std::move(n));
}

NodeId Graph::dropout(NodeId a, double rate, std::uint64_t seed) {
    if (!(rate >= 0.0 && rate < 1.0)) throw GraphError(std::nullopt, "dropout rate must be in [0,1)");
    Node n;
    n.kind = OpKind::Dropout;
    n.inputs = {a};
    n.attrs.scalar = rate;
    n.attrs.seed = seed;
    return push(std::move(n));
}

NodeId Graph::cross_entropy(NodeId logits, std::vector<std::int32_t> targets, CrossEntropyOptions options) {
    if (!(options.label_smoothing >= 0.0 && options.label_smoothing < 1.0))
        throw GraphError(std::nullopt, "label smoothing must be in [0,1)");
    Node n;
    n.kind = OpKind::CrossEntropy;
    n.inputs = {logits};
    n.attrs.ids = std::move(targets);
    n.attrs.ce = options;
    return push(std::move(n));
}

NodeId Graph::attention(NodeId q, NodeId k, NodeId v, AttentionOptions options) {
    Node n;
    n.kind = OpKind::Attention;
    n.inputs = {q, k, v};
    n.attrs.attn = std::move(options);
    return push(std::move(n));
}

NodeId Graph::sum(NodeId a) {
    Node n;
    n.kind = OpKind::Sum;
    n.inputs = {a};
    return push(std::move(n));
}

NodeId Graph::output() const {
    if (output_) return *output_;
    if (nodes_.empty()) throw GraphError(std::nullopt, "empty graph has no output");
    return NodeId{nodes_.size() - 1};
}

void Graph::set_output(NodeId id) {
    if (id.index >= nodes_.size()) throw GraphError(id, "output node does not exist");
    output_ = id;
}

// ---------------------------------------------------------------------------
// forward

const Tensor& Graph::val(NodeId id) const {
    const Node& n = nodes_[id.index];
    return n.bound ? *n.bound : n.value;
}

const Tensor& Graph::value(NodeId id) const {
    if (id.index >= nodes_.size()) throw GraphError(id, "no such node");
    if (!evaluated_) throw GraphError(id, "value requested before forward");
    return val(id);
}

const Tensor& Graph::forward(const Bindings& bindings) {
    evaluated_ = false;
    for (auto& n : nodes_) {
        n.bound = nullptr;
        if (n.kind != OpKind::Input && n.kind != OpKind::Param) continue;
        n.bound = bindings.find(n.name);
        if (!n.bound) throw GraphError(NodeId{static_cast<std::size_t>(&n - nodes_.data())}, "unbound name '" + n.name + "'");
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) eval_node(i);
    evaluated_ = true;
    return val(output());
}

namespace {

[[noreturn]] void shape_error(std::size_t index, OpKind kind, const std::string& detail) {
    throw GraphError(NodeId{index}, std::string(op_name(kind)) + ": " + detail);
}

Shape with_last(const Shape& s, std::size_t last) {
    Shape out = s;
    out.back() = last;
    return out;
}

}  // namespace

void Graph::eval_node(std::size_t index) {
    Node& n = nodes_[index];
    auto in = [&](std::size_t i) -> const Tensor& { return val(n.inputs[i]); };

    switch (n.kind) {
        case OpKind::Input:
        case OpKind::Param:
        case OpKind::Constant:
            return;

        case OpKind::MatMul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            if (b.rank() != 2) shape_error(index, n.kind, "right operand must be rank 2, got " + shape_str(b.shape()));
            const std::size_t k = a.cols();
            const std::size_t bk = n.attrs.transpose_b ? b.dim(1) : b.dim(0);
            const std::size_t cols = n.attrs.transpose_b ? b.dim(0) : b.dim(1);
            if (k != bk)
                shape_error(index, n.kind,
                            "inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                                (n.attrs.transpose_b ? "^T" : ""));
            n.value = Tensor(with_last(a.shape(), cols));
            kernels::gemm(false, n.attrs.transpose_b, a.rows(), cols, k, 1.0, a.data(), k, b.data(), b.dim(1), 0.0,
                          n.value.data(), cols);
            return;
        }

        case OpKind::Add:
        case OpKind::Mul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            if (a.shape() != b.shape())
                shape_error(index, n.kind, "operands " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
            n.value = Tensor(a.shape());
            double* out = n.value.data();
            if (n.kind == OpKind::Add)
                for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
            else
                for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
            return;
        }

        case OpKind::Scale: {
            const Tensor& a = in(0);
            n.value = Tensor(a.shape());
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] * n.attrs.scalar;
            return;
        }

        case OpKind::AddBias: {
            const Tensor& a = in(0);
            const Tensor& bias = in(1);
            if (bias.size() != a.cols())
                shape_error(index, n.kind, "bias " + shape_str(bias.shape()) + " vs input " + shape_str(a.shape()));
            n.value = Tensor(a.shape());
            const std::size_t c = a.cols();
            for (std::size_t r = 0; r < a.rows(); ++r)
                for (std::size_t j = 0; j < c; ++j) n.value[r * c + j] = a[r * c + j] + bias[j];
            return;
        }

        case OpKind::Relu: {
            const Tensor& a = in(0);
            n.value = Tensor(a.shape());
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] > 0.0 ? a[i] : 0.0;
            return;
        }

        case OpKind::Softmax: {
            const Tensor& a = in(0);
            n.value = a;
            kernels::softmax_rows(n.value.data(), a.rows(), a.cols());
            return;
        }

        case OpKind::LayerNorm: {
            const Tensor& x = in(0);
            const Tensor& g = in(1);
            const Tensor& b = in(2);
            if (g.size() != x.cols() || b.size() != x.cols())
                shape_error(index, n.kind,
                            "gain/bias " + shape_str(g.shape()) + "/" + shape_str(b.shape()) + " vs input " +
                                shape_str(x.shape()));
            n.value = Tensor(x.shape());
            n.saved.assign(x.rows(), 0.0);
            n.saved2.assign(x.rows(), 0.0);
            kernels::layer_norm_forward(x.data(), g.data(), b.data(), n.value.data(), n.saved.data(), n.saved2.data(),
                                        x.rows(), x.cols(), n.attrs.scalar);
            return;
        }

        case OpKind::Embedding: {
            const Tensor& table = in(0);
            if (table.rank() != 2) shape_error(index, n.kind, "table must be rank 2");
            const auto& ids = n.attrs.ids;
            if (ids.empty()) shape_error(index, n.kind, "no ids");
            const std::size_t d = table.dim(1);
            n.value = Tensor({ids.size(), d});
            for (std::size_t r = 0; r < ids.size(); ++r) {
                if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= table.dim(0))
                    shape_error(index, n.kind,
                                "id " + std::to_string(ids[r]) + " outside table of " + std::to_string(table.dim(0)));
                std::copy_n(table.data() + static_cast<std::size_t>(ids[r]) * d, d, n.value.data() + r * d);
            }
            return;
        }

        case OpKind::Dropout: {
            const Tensor& a = in(0);
            const double rate = n.attrs.scalar;
            if (!training_ || rate == 0.0) {
                n.saved.clear();
                n.value = a;
                return;
            }
            std::mt19937_64 rng(n.attrs.seed);
            std::bernoulli_distribution keep(1.0 - rate);
            const double scale = 1.0 / (1.0 - rate);
            n.saved.resize(a.size());
            n.value = Tensor(a.shape());
            for (std::size_t i = 0; i < a.size(); ++i) {
                n.saved[i] = keep(rng) ? scale : 0.0;
                n.value[i] = a[i] * n.saved[i];
            }
            return;
        }

        case OpKind::CrossEntropy: {
            const Tensor& logits = in(0);
            const auto& t = n.attrs.ids;
            const std::size_t rows = logits.rows();
            const std::size_t v = logits.cols();
            if (t.size() != rows)
                shape_error(index, n.kind,
                            std::to_string(t.size()) + " targets for logits " + shape_str(logits.shape()));
            // saved: softmax probabilities; saved2[0]: non-pad count
            n.saved.assign(logits.values().begin(), logits.values().end());
            kernels::softmax_rows(n.saved.data(), rows, v);
            const double eps = n.attrs.ce.label_smoothing;
            const double uniform = eps / static_cast<double>(v);
            double total = 0.0;
            std::size_t count = 0;
            for (std::size_t r = 0; r < rows; ++r) {
                if (t[r] == n.attrs.ce.pad_id) continue;
                if (t[r] < 0 || static_cast<std::size_t>(t[r]) >= v)
                    shape_error(index, n.kind, "target " + std::to_string(t[r]) + " outside vocabulary of " + std::to_string(v));
                const double* lr = logits.data() + r * v;
                double mx = lr[0];
                for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, lr[j]);
                double se = 0.0;
                for (std::size_t j = 0; j < v; ++j) se += std::exp(lr[j] - mx);
                const double lse = mx + std::log(se);
                double loss = (1.0 - eps) * (lse - lr[t[r]]);
                if (eps > 0.0) {
                    double sum_logp = 0.0;
                    for (std::size_t j = 0; j < v; ++j) sum_logp += lr[j] - lse;
                    loss -= uniform * sum_logp;
                }
                total += loss;
                ++count;
            }
            if (count == 0) throw GraphError(NodeId{index}, "cross_entropy: every target is padding");
            n.saved2.assign(1, static_cast<double>(count));
            n.value = Tensor::scalar(total / static_cast<double>(count));
            return;
        }

        case OpKind::Attention: {
            const Tensor& q = in(0);
            const Tensor& k = in(1);
            const Tensor& v = in(2);
            const auto& o = n.attrs.attn;
            const std::size_t d = q.cols();
            if (k.cols() != d || v.cols() != d || k.shape() != v.shape())
                shape_error(index, n.kind,
                            "q/k/v " + shape_str(q.shape()) + " " + shape_str(k.shape()) + " " + shape_str(v.shape()));
            if (o.heads == 0 || d % o.heads != 0) shape_error(index, n.kind, "model dim not divisible by heads");
            if (o.batch == 0 || q.rows() % o.batch != 0 || k.rows() % o.batch != 0)
                shape_error(index, n.kind, "rows not divisible by batch " + std::to_string(o.batch));
            kernels::AttentionShape s{o.batch, q.rows() / o.batch, k.rows() / o.batch, d, o.heads, 0, o.causal};
            if (!o.key_pad.empty() && o.key_pad.size() != k.rows())
                shape_error(index, n.kind, "key padding mask has " + std::to_string(o.key_pad.size()) + " entries");
            n.saved.assign(s.batch * s.heads * s.q_len * s.k_len, 0.0);
            n.value = Tensor(q.shape());
            kernels::attention_forward(s, q.data(), k.data(), v.data(), o.key_pad, n.saved.data(), n.value.data());
            return;
        }

        case OpKind::Sum: {
            const Tensor& a = in(0);
            double s = 0.0;
            for (double x : a.values()) s += x;
            n.value = Tensor::scalar(s);
            return;
        }
    }
}

// ---------------------------------------------------------------------------
// backward

Tensor& Graph::grad_of(NodeId id) {
    Node& n = nodes_[id.index];
    if (n.grad.empty()) n.grad = Tensor(val(id).shape());
    return n.grad;
}

const Gradients& Graph::backward() {
    if (!evaluated_) throw GraphError(std::nullopt, "backward called before forward");
    return backward(Tensor(val(output()).shape(), 1.0));
}

const Gradients& Graph::backward(const Tensor& seed) {
    if (!evaluated_) throw GraphError(std::nullopt, "backward called before forward");
    const NodeId out = output();
    if (seed.shape() != val(out).shape())
        throw GraphError(out, "seed gradient " + shape_str(seed.shape()) + " does not match output " +
                                  shape_str(val(out).shape()));
    for (auto& n : nodes_) n.grad = Tensor();
    if (!nodes_[out.index].needs_grad) return param_grads_;
    grad_of(out) = seed;
    for (std::size_t i = out.index + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.empty()) continue;
        backprop_node(i);
    }
    return param_grads_;
}

void Graph::zero_grad() { param_grads_.clear(); }

void Graph::backprop_node(std::size_t index) {
    Node& n = nodes_[index];
    const Tensor& g = n.grad;
    auto wants = [&](std::size_t i) { return nodes_[n.inputs[i].index].needs_grad; };
    auto in = [&](std::size_t i) -> const Tensor& { return val(n.inputs[i]); };

    switch (n.kind) {
        case OpKind::Input:
        case OpKind::Constant:
            return;

        case OpKind::Param: {
            auto it = param_grads_.find(n.name);
            if (it == param_grads_.end()) {
                param_grads_.emplace(n.name, g);
            } else {
                Tensor& acc = it->second;
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
            }
            return;
        }

        case OpKind::MatMul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            const std::size_t k = a.cols();
            const std::size_t cols = g.cols();
            const std::size_t rows = a.rows();
            if (wants(0)) {
                // dA = dC * op(B)^T
                Tensor& ga = grad_of(n.inputs[0]);
                kernels::gemm(false, !n.attrs.transpose_b, rows, k, cols, 1.0, g.data(), cols, b.data(), b.dim(1), 1.0,
                              ga.data(), k);
            }
            if (wants(1)) {
                Tensor& gb = grad_of(n.inputs[1]);
                if (n.attrs.transpose_b)  // dB[N,K] = dC^T A
                    kernels::gemm(true, false, cols, k, rows, 1.0, g.data(), cols, a.data(), k, 1.0, gb.data(), k);
                else  // dB[K,N] = A^T dC
                    kernels::gemm(true, false, k, cols, rows, 1.0, a.data(), k, g.data(), cols, 1.0, gb.data(), cols);
            }
            return;
        }

        case OpKind::Add: {
            for (std::size_t s = 0; s < 2; ++s) {
                if (!wants(s)) continue;
                Tensor& gi = grad_of(n.inputs[s]);
                for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
            }
            return;
        }

        case OpKind::Mul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            if (wants(0)) {
                Tensor& ga = grad_of(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
            }
            if (wants(1)) {
                Tensor& gb = grad_of(n.inputs[1]);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
            }
            return;
        }

        case OpKind::Scale: {
            Tensor& ga = grad_of(n.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.attrs.scalar;
            return;
        }

        case OpKind::AddBias: {
            const std::size_t c = g.cols();
            if (wants(0)) {
                Tensor& ga = grad_of(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (wants(1)) {
                Tensor& gb = grad_of(n.inputs[1]);
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
            }
            return;
        }

        case OpKind::Relu: {
            const Tensor& a = in(0);
            Tensor& ga = grad_of(n.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (a[i] > 0.0) ga[i] += g[i];
            return;
        }

        case OpKind::Softmax: {
            const Tensor& y = n.value;
            Tensor& ga = grad_of(n.inputs[0]);
            const std::size_t c = y.cols();
            for (std::size_t r = 0; r < y.rows(); ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
                for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
            }
            return;
        }

        case OpKind::LayerNorm: {
            const Tensor& x = in(0);
            const Tensor& gain = in(1);
            double* dx = wants(0) ? grad_of(n.inputs[0]).data() : nullptr;
            double* dg = wants(1) ? grad_of(n.inputs[1]).data() : nullptr;
            double* db = wants(2) ? grad_of(n.inputs[2]).data() : nullptr;
            kernels::layer_norm_backward(x.data(), gain.data(), n.saved.data(), n.saved2.data(), g.data(), dx, dg, db,
                                         x.rows(), x.cols());
            return;
        }

        case OpKind::Embedding: {
            Tensor& gt = grad_of(n.inputs[0]);
            const std::size_t d = gt.dim(1);
            const auto& ids = n.attrs.ids;
            for (std::size_t r = 0; r < ids.size(); ++r) {
                double* dst = gt.data() + static_cast<std::size_t>(ids[r]) * d;
                const double* src = g.data() + r * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
            return;
        }

        case OpKind::Dropout: {
            Tensor& ga = grad_of(n.inputs[0]);
            if (n.saved.empty()) {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            } else {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.saved[i];
            }
            return;
        }

        case OpKind::CrossEntropy: {
            const std::size_t v = in(0).cols();
            const std::size_t rows = in(0).rows();
            const auto& t = n.attrs.ids;
            const double eps = n.attrs.ce.label_smoothing;
            const double uniform = eps / static_cast<double>(v);
            const double scale = g[0] / n.saved2[0];
            Tensor& gl = grad_of(n.inputs[0]);
            for (std::size_t r = 0; r < rows; ++r) {
                if (t[r] == n.attrs.ce.pad_id) continue;
                const double* p = n.saved.data() + r * v;
                double* dst = gl.data() + r * v;
                for (std::size_t j = 0; j < v; ++j) dst[j] += scale * (p[j] - uniform);
                dst[t[r]] -= scale * (1.0 - eps);
            }
            return;
        }

        case OpKind::Attention: {
            const Tensor& q = in(0);
            const Tensor& k = in(1);
            const Tensor& v = in(2);
            const auto& o = n.attrs.attn;
            kernels::AttentionShape s{o.batch, q.rows() / o.batch, k.rows() / o.batch, q.cols(), o.heads, 0, o.causal};
            double* dq = wants(0) ? grad_of(n.inputs[0]).data() : nullptr;
            double* dk = wants(1) ? grad_of(n.inputs[1]).data() : nullptr;
            double* dv = wants(2) ? grad_of(n.inputs[2]).data() : nullptr;
            kernels::attention_backward(s, q.data(), k.data(), v.data(), n.saved.data(), g.data(), dq, dk, dv);
            return;
        }

        case OpKind::Sum: {
            Tensor& ga = grad_of(n.inputs[0]);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
            return;
        }
    }
}

std::vector<std::int8_t> Graph::relu_signature() const {
    std::vector<std::int8_t> sig;
    for (const auto& n : nodes_) {
        if (n.kind != OpKind::Relu) continue;
        const Tensor& a = val(n.inputs[0]);
        for (double x : a.values()) sig.push_back(static_cast<std::int8_t>(x > 0.0 ? 1 : (x < 0.0 ? -1 : 0)));
    }
    return sig;
}

// ---------------------------------------------------------------------------

FiniteDifferenceResult finite_difference_check(Graph& graph, const Bindings& bindings,
                                               const FiniteDifferenceOptions& options) {
    graph.forward(bindings);
    if (graph.value(graph.output()).size() != 1)
        throw GraphError(graph.output(), "finite difference check needs a scalar output");

    // Private copies of every bound tensor so components can be perturbed.
    std::map<std::string, Tensor> copies;
    Bindings local;
    for (const auto& name : bindings.names()) {
        copies.emplace(name, *bindings.find(name));
        local.bind(name, copies.at(name));
    }
    graph.zero_grad();
    graph.forward(local);
    const auto base_sig = graph.relu_signature();
    const Gradients analytic = graph.backward();
    graph.zero_grad();

    FiniteDifferenceResult result;
    const double eps = options.eps;
    for (const auto& [name, grad] : analytic) {
        if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), name) == options.only.end())
            continue;
        Tensor& p = copies.at(name);
        std::size_t stride = 1;
        if (options.max_components_per_param && p.size() > options.max_components_per_param)
            stride = p.size() / options.max_components_per_param;
        for (std::size_t i = 0; i < p.size(); i += stride) {
            const double orig = p[i];
            p[i] = orig + eps;
            const double up = graph.forward(local).item();
            auto sig_up = graph.relu_signature();
            p[i] = orig - eps;
            const double down = graph.forward(local).item();
            auto sig_down = graph.relu_signature();
            p[i] = orig;
            // A zero entry in base_sig always flips under a perturbation that
            // reaches it, so this also excludes inputs sitting exactly at 0.
            if (options.skip_relu_kinks) {
                if (sig_up != base_sig || sig_down != base_sig) {
                    ++result.skipped;
                    continue;
                }
            }
            const double central = (up - down) / (2.0 * eps);
            const double a = grad[i];
            const double denom = std::max({std::abs(a), std::abs(central), 1e-12});
            const double rel = std::abs(a - central) / denom;
            ++result.probed;
            if (rel > result.max_relative_error) {
                result.max_relative_error = rel;
                result.worst_param = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    graph.forward(bindings);
    return result;
}

}  // namespace ptbt
