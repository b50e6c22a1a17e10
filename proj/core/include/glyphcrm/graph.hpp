#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "glyphcrm/tensor.hpp"

namespace glyphcrm {

template <typename T>
class GraphT;

// Handle to one node of a graph. Cheap to copy; valid while the graph lives.
template <typename T>
class VarT {
public:
    VarT() = default;

    int id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }
    const TensorT<T>& value() const;
    // Gradient w.r.t. this node after backward(); zeros if untouched.
    const TensorT<T>& grad() const;
    const Shape& shape() const { return value().shape(); }

private:
    friend class GraphT<T>;
    VarT(GraphT<T>* g, int id) : graph_(g), id_(id) {}
    GraphT<T>* graph_ = nullptr;
    int id_ = -1;
};

// Reverse-mode tape. Operations execute eagerly and append one record each;
// backward() replays the records in exact reverse execution order and sums
// gradients across fan-out. One graph serves one forward/backward pass.
template <typename T>
class GraphT {
public:
    GraphT() = default;
    GraphT(const GraphT&) = delete;
    GraphT& operator=(const GraphT&) = delete;

    // Leaf node. Gradients are tracked iff value.requires_grad is set.
    VarT<T> leaf(TensorT<T> value, std::string name = {});

    VarT<T> add(VarT<T> a, VarT<T> b);
    VarT<T> mul(VarT<T> a, VarT<T> b);
    VarT<T> scale(VarT<T> a, double c);
    VarT<T> reshape(VarT<T> a, Shape shape);
    VarT<T> transpose(VarT<T> a);

    VarT<T> slice_rows(VarT<T> a, std::int64_t row0, std::int64_t count);
    VarT<T> slice_cols(VarT<T> a, std::int64_t col0, std::int64_t count);
    VarT<T> concat_rows(std::span<const VarT<T>> parts);
    VarT<T> concat_cols(std::span<const VarT<T>> parts);

    // out[i] = table[rows[i]]; duplicate indices accumulate on backward.
    VarT<T> gather_rows(VarT<T> table, std::vector<std::int64_t> rows);

    VarT<T> sum(VarT<T> a);

    VarT<T> matmul(VarT<T> a, VarT<T> b);

    // x: ...xD_in, weight: D_inxD_out, bias: D_out. Affine map over the last axis.
    VarT<T> linear(VarT<T> x, VarT<T> weight, VarT<T> bias);

    // x: NxC_inxHxW, kernel: C_outxC_inxkxk, bias: C_out. Cross-correlation.
    VarT<T> conv2d(VarT<T> x, VarT<T> kernel, VarT<T> bias, int stride, int padding);

    // 2x2 window, stride 2; ties route the gradient to the first index in
    // row-major scan.
    VarT<T> maxpool2(VarT<T> x);

    VarT<T> relu(VarT<T> x);

    // Standardizes the last axis (epsilon inside the square root), then gain/shift.
    VarT<T> layer_norm(VarT<T> x, VarT<T> gain, VarT<T> shift, double eps = 1e-5);

    // Max-subtracted softmax over the last axis.
    VarT<T> softmax(VarT<T> x);

    // Mean NLL over rows whose target != ignore_id; 0 if every row is ignored.
    VarT<T> cross_entropy(VarT<T> logits, std::vector<std::int64_t> targets,
                          std::int64_t ignore_id);

    // root must be scalar. May be called once per graph.
    void backward(VarT<T> root);

    std::size_t node_count() const { return nodes_.size(); }

    const TensorT<T>& node_value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const TensorT<T>& node_grad(int id);

private:
    struct Node {
        TensorT<T> value;
        TensorT<T> grad;  // allocated on first accumulation
        bool requires_grad = false;
        std::string name;
        std::function<void()> back;  // propagates this node's grad to its inputs
    };

    VarT<T> emit(TensorT<T> value, bool requires_grad, std::function<void()> back);
    TensorT<T>& grad_buf(int id);
    bool needs_grad(VarT<T> v) const { return nodes_[static_cast<std::size_t>(v.id_)].requires_grad; }
    void check_same_graph(VarT<T> v) const;

    std::vector<Node> nodes_;
    bool backward_done_ = false;
    TensorT<T> empty_grad_;  // lazily created zero tensor store

    friend class VarT<T>;
};

using Graph = GraphT<float>;
using Var = VarT<float>;

extern template class GraphT<float>;
extern template class GraphT<double>;
extern template class VarT<float>;
extern template class VarT<double>;

}  // namespace glyphcrm
