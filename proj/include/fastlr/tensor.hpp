#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "fastlr/errors.hpp"

namespace fastlr {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct TensorNode;
class GradientMap;

/// Value-semantics handle onto a node of the reverse-mode tape.
///
/// Every op builds a new node whose backprop closure scatters the incoming
/// gradient to its parents. Gradients are materialized by backward(), which
/// returns a GradientMap keyed by node; the tape itself is just the parent
/// links, so independent forward passes (e.g. batch items) can run and
/// differentiate concurrently as long as they only share leaf tensors.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double fill, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t numel() const;
    std::size_t dim(std::size_t i) const;
    std::size_t rank() const;

    const std::vector<double>& data() const;
    std::vector<double>& mutable_data();  // leaf tensors only

    bool requires_grad() const;
    double value() const;  // scalar tensors only
    double at(std::size_t i) const { return data()[i]; }
    double at2(std::size_t r, std::size_t c) const;

    TensorNode* node() const { return node_.get(); }
    std::shared_ptr<TensorNode> shared_node() const { return node_; }

    friend Tensor make_op(Shape shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(const std::vector<double>&, GradientMap&)> backprop);

private:
    std::shared_ptr<TensorNode> node_;
};

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    bool requires_grad = false;
    bool leaf = false;
    bool backward_done = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Receives d(loss)/d(this node) and accumulates parent contributions.
    std::function<void(const std::vector<double>& out_grad, GradientMap& grads)> backprop;
};

/// Gradient buffers produced by one backward() call, keyed by tape node.
class GradientMap {
public:
    std::vector<double>& buffer(const TensorNode* n, std::size_t numel);
    const std::vector<double>* find(const Tensor& t) const;
    const std::vector<double>& at(const Tensor& t) const;
    bool contains(const Tensor& t) const;

    /// Element-wise add of another map (shapes must agree on shared keys).
    void accumulate(const GradientMap& other);
    /// Drop buffers for non-leaf nodes. backward() calls this so returned
    /// maps only reference tensors that outlive the op graph.
    void prune_non_leaf();
    void scale(double s);
    double global_norm() const;

    auto begin() const { return grads_.begin(); }
    auto end() const { return grads_.end(); }
    std::size_t size() const { return grads_.size(); }

private:
    std::unordered_map<const TensorNode*, std::vector<double>> grads_;
};

/// Builds a tape node from precomputed forward values plus a backprop
/// closure. The extension point custom ops (I&F firing, CTC) hook into.
Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(const std::vector<double>&, GradientMap&)> backprop);

/// Reverse-mode sweep from a scalar loss. Returns gradients for every
/// requires_grad tensor reachable from the loss. Calling twice on the same
/// loss node without reset_backward() is an error.
GradientMap backward(const Tensor& loss);
void reset_backward(const Tensor& loss);

// ---- forward ops ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);   // same shape, or [T×d]+[d]
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);   // elementwise
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m×k]·[k×n]
Tensor transpose(const Tensor& a);                // 2-D

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // DomainError on values <= 0
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor softmax_rows(const Tensor& a);      // last dim, max-subtracted
Tensor log_softmax_rows(const Tensor& a);

/// Per-row layer norm with learned gain/bias of size [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor concat_rows(const std::vector<Tensor>& parts);   // 2-D, same col count
Tensor concat_cols(const std::vector<Tensor>& parts);   // 2-D, same row count
Tensor concat1d(const std::vector<Tensor>& parts);      // 1-D pieces
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
Tensor slice1d(const Tensor& a, std::size_t i0, std::size_t i1);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);   // scalar
Tensor mean(const Tensor& a);  // scalar

enum class ConvPadding { Same, Causal };

/// 1-D convolution along the time axis. x is [T×C_in], w is [k×C_in×C_out],
/// b is [C_out]. Same padding keeps length T; causal padding only looks back.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
              ConvPadding padding = ConvPadding::Same);

/// Rows of `table` ([V×d]) gathered by id; backward scatters into the table.
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

/// Sum over positions of -log softmax(logits)[target]. logits is [n×V].
Tensor cross_entropy_sum(const Tensor& logits, const std::vector<int>& targets);

/// Additive attention mask applied before softmax; mask entries are 0 or -inf
/// stand-ins (masked entries forced to a large negative constant, no grad).
Tensor add_mask(const Tensor& scores, const std::vector<double>& mask);

}  // namespace fastlr
