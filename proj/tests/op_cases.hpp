#pragma once

// One small scalar graph per op, for gradient checks.

#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ptbt/graph.hpp"
#include "test_util.hpp"

namespace ptbt::testing {

// Projects a node onto a fixed random direction so every op is checked
// through a scalar with O(1) gradients.
inline void project(Graph& g, NodeId out, const Shape& shape, std::mt19937_64& rng) {
    g.sum(g.mul(out, g.constant(random_tensor(shape, rng))));
}

struct OpCase {
    const char* name;
    std::function<void(Graph&, std::map<std::string, Tensor>&, std::mt19937_64&)> build;
};

inline std::vector<OpCase> op_cases() {
    return {
        {"matmul",
         [](Graph& g, auto& t, auto& rng) {
             t["a"] = random_tensor({3, 4}, rng);
             t["b"] = random_tensor({4, 5}, rng);
             project(g, g.matmul(g.param("a"), g.param("b")), {3, 5}, rng);
         }},
        {"matmul_transposed",
         [](Graph& g, auto& t, auto& rng) {
             t["a"] = random_tensor({3, 4}, rng);
             t["b"] = random_tensor({5, 4}, rng);
             project(g, g.matmul(g.param("a"), g.param("b"), true), {3, 5}, rng);
         }},
        {"add",
         [](Graph& g, auto& t, auto& rng) {
             t["a"] = random_tensor({2, 3}, rng);
             t["b"] = random_tensor({2, 3}, rng);
             project(g, g.add(g.param("a"), g.param("b")), {2, 3}, rng);
         }},
        {"mul",
         [](Graph& g, auto& t, auto& rng) {
             t["a"] = random_tensor({2, 3}, rng);
             t["b"] = random_tensor({2, 3}, rng);
             project(g, g.mul(g.param("a"), g.param("b")), {2, 3}, rng);
         }},
        {"scale",
         [](Graph& g, auto& t, auto& rng) {
             t["a"] = random_tensor({4}, rng);
             project(g, g.scale(g.param("a"), -1.7), {4}, rng);
         }},
        {"add_bias",
         [](Graph& g, auto& t, auto& rng) {
             t["a"] = random_tensor({3, 4}, rng);
             t["b"] = random_tensor({4}, rng);
             project(g, g.add_bias(g.param("a"), g.param("b")), {3, 4}, rng);
         }},
        {"relu",
         [](Graph& g, auto& t, auto& rng) {
             t["a"] = random_tensor({3, 4}, rng);
             project(g, g.relu(g.param("a")), {3, 4}, rng);
         }},
        {"softmax",
         [](Graph& g, auto& t, auto& rng) {
             t["a"] = random_tensor({3, 5}, rng, 2.0);
             project(g, g.softmax(g.param("a")), {3, 5}, rng);
         }},
        {"layer_norm",
         [](Graph& g, auto& t, auto& rng) {
             t["x"] = random_tensor({3, 6}, rng, 2.0);
             t["g"] = random_tensor({6}, rng);
             t["b"] = random_tensor({6}, rng);
             project(g, g.layer_norm(g.param("x"), g.param("g"), g.param("b")), {3, 6}, rng);
         }},
        {"embedding",
         [](Graph& g, auto& t, auto& rng) {
             t["e"] = random_tensor({5, 3}, rng);
             project(g, g.embedding(g.param("e"), {4, 0, 4, 2}), {4, 3}, rng);
         }},
        {"dropout",
         [](Graph& g, auto& t, auto& rng) {
             t["a"] = random_tensor({4, 4}, rng);
             project(g, g.dropout(g.param("a"), 0.3, rng()), {4, 4}, rng);
         }},
        {"cross_entropy",
         [](Graph& g, auto& t, auto& rng) {
             t["l"] = random_tensor({4, 6}, rng, 2.0);
             g.cross_entropy(g.param("l"), {1, 0, 5, 3}, {0.1, 0});
         }},
        {"attention",
         [](Graph& g, auto& t, auto& rng) {
             t["q"] = random_tensor({6, 4}, rng);
             t["k"] = random_tensor({8, 4}, rng);
             t["v"] = random_tensor({8, 4}, rng);
             AttentionOptions o{2, 2, false, {0, 0, 0, 1, 0, 0, 1, 1}};
             project(g, g.attention(g.param("q"), g.param("k"), g.param("v"), o), {6, 4}, rng);
         }},
        {"causal_attention",
         [](Graph& g, auto& t, auto& rng) {
             t["x"] = random_tensor({6, 4}, rng);
             auto x = g.param("x");
             project(g, g.attention(x, x, x, {2, 2, true, {}}), {6, 4}, rng);
         }},
        {"sum",
         [](Graph& g, auto& t, auto& rng) {
             t["a"] = random_tensor({3, 2}, rng);
             g.sum(g.param("a"));
         }},
    };
}

}  // namespace ptbt::testing
