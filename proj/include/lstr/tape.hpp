#pragma once

// Reverse-mode gradient tape over MatD. Nodes are appended in forward order,
// so walking the node list backward visits the graph in reverse topological
// order. One tape per training worker; not thread-safe.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lstr/mat.hpp"

namespace lstr {

struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

enum class OpKind {
    leaf,
    matmul,
    transpose,
    add,
    scale,
    add_row,
    relu,
    layer_norm,
    softmax_rows,
    col_slice,
    col_concat,
    sum_all,
    softmax_xent,
};

const char* op_name(OpKind k);
std::span<const OpKind> differentiable_ops();

class Tape {
public:
    Var leaf(MatD value);

    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var add(Var a, Var b);
    Var scale(Var a, double s);
    Var add_row(Var x, Var r);
    Var relu(Var x);
    Var layer_norm(Var x, Var gain, Var bias, double eps);
    Var softmax_rows(Var s, const AttentionMask* mask = nullptr);
    Var col_slice(Var x, int c0, int w);
    Var col_concat(std::span<const Var> parts);
    Var sum_all(Var x);
    // Summed cross entropy of row softmax(logits) against integer labels;
    // returns a 1x1 scalar.
    Var softmax_xent(Var logits, std::vector<int> labels);

    // Seeds d(root)/d(root) = 1 (root must be 1x1) and replays the tape in
    // reverse, accumulating gradients into every node.
    void backward(Var root);

    const MatD& val(Var v) const { return nodes_[v.id].value; }
    const MatD& grad(Var v) const { return nodes_[v.id].grad; }

    std::size_t node_count() const { return nodes_.size(); }

    // Scales the gradient contribution of one op kind. Used by the gradcheck
    // harness to prove the checker catches a broken backward rule.
    void inject_backward_fault(OpKind k, double scale) { faults_[k] = scale; }

private:
    struct Node {
        OpKind kind = OpKind::leaf;
        MatD value;
        MatD grad;
        std::function<void(Tape&, const Node&)> back;
    };

    Var push(OpKind kind, MatD value, std::function<void(Tape&, const Node&)> back);
    double fault(OpKind k) const;
    MatD& grad_mut(Var v) { return nodes_[v.id].grad; }

    std::vector<Node> nodes_;
    std::map<OpKind, double> faults_;
};

}  // namespace lstr
