#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "rccr/tensor.hpp"

namespace rccr::ad {

/// One vertex of an eagerly evaluated (define-by-run) computation graph.
/// The backward rule is a closure over the parent nodes it writes into.
class Node {
public:
    Tensor value;
    Tensor grad;
    bool grad_present = false;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    /// Lazily allocate the gradient buffer (zeros, value-shaped).
    Tensor& ensure_grad();
};

using NodePtr = std::shared_ptr<Node>;

/// Value-semantics handle to a graph node. Copies share the node.
class Value {
public:
    Value() = default;
    explicit Value(NodePtr node) : node_(std::move(node)) {}

    const Tensor& tensor() const { return node_->value; }
    const Tensor& grad() const;
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    const NodePtr& node() const { return node_; }

    void zero_grad();

private:
    NodePtr node_;
};

/// Leaf with no gradient tracking.
Value constant(Tensor t);
Value constant(double v);

/// Leaf that participates in backward().
Value parameter(Tensor t);

// ---- elementwise ----
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value neg(const Value& a);
Value scale(const Value& a, double c);
Value relu(const Value& a);
Value gelu(const Value& a);
Value exp(const Value& a);
Value log(const Value& a);
/// log(max(x, 1e-12)); the floor applies inside the logarithm only and the
/// gradient is zero in the floored region.
Value log_clamped(const Value& a);
/// Domain error below -1.
Value log1p(const Value& a);
/// Elementwise Huber: 0.5 x^2 for |x| <= delta, else delta(|x| - delta/2).
Value huber(const Value& a, double delta);

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator-(const Value& a) { return neg(a); }

// ---- linear algebra / network layers ----
Value matmul(const Value& a, const Value& b);  // (M,K) x (K,N)
/// x: (..., I) flattened over leading extents, w: (I, O), b: (O).
Value affine(const Value& x, const Value& w, const Value& b);
/// x: (N, L, Cin), w: (Cout, Cin, K) with K odd, b: (Cout); zero padding of
/// (K-1)/2 on both sides, then the given stride.
Value conv1d(const Value& x, const Value& w, const Value& b, std::size_t stride = 1);
Value max_pool1d(const Value& x, std::size_t window, std::size_t stride);
Value mean_pool1d(const Value& x, std::size_t window, std::size_t stride);
/// (N, L, C) -> (N, bins, C); bins partition positions as evenly as possible.
Value adaptive_mean_pool1d(const Value& x, std::size_t bins);

// ---- shape / axis ----
Value reduce_sum(const Value& x, std::size_t axis);
Value reduce_mean(const Value& x, std::size_t axis);
Value sum_all(const Value& x);
Value mean_all(const Value& x);
Value reverse_axis(const Value& x, std::size_t axis);
/// out[..., k] = x[..., perm[k]]; perm must be a bijection on the last axis.
Value permute_last_axis(const Value& x, const std::vector<std::size_t>& perm);
/// Broadcast-multiply by a fixed vector along the last axis.
Value mask_last_axis(const Value& x, const Tensor& mask);
Value slice(const Value& x, std::size_t axis, std::size_t start, std::size_t stop);
Value concat(const Value& a, const Value& b, std::size_t axis);
Value reshape(const Value& x, std::vector<std::size_t> shape);

// ---- softmax / losses ----
/// Tempered softmax along the last axis with max-subtraction.
Value softmax(const Value& x, double temperature = 1.0);
/// Mean negative log-likelihood of integer classes under softmax(logits).
/// logits: (..., C); one label per leading position, row-major order.
Value cross_entropy(const Value& logits, const std::vector<int>& labels);

/// Reverse-mode sweep from a scalar root; accumulates into every
/// requires-grad leaf in deterministic topological order.
void backward(const Value& root);

/// Max relative error between reverse-mode gradients of f and central finite
/// differences, componentwise over all inputs. eps must lie in (0, 1e-2].
/// Relative error denominator: max(|analytic|, |numeric|, 1e-8).
double grad_check(const std::function<Value(const std::vector<Value>&)>& f,
                  const std::vector<Tensor>& inputs, double eps);
double grad_check(const std::function<Value(const Value&)>& f, const Tensor& input,
                  double eps);

}  // namespace rccr::ad
