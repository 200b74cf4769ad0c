#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vtg/errors.hpp"
#include "vtg/rng.hpp"

namespace vtg {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;               // lazily allocated on first use
    bool requires_grad = false;
    std::string name;                       // set for parameters; "" otherwise

    // Reverse edges.  `parents` keeps upstream nodes alive until backward()
    // releases the graph; `backprop` pushes this node's grad into them.
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

} // namespace detail

// While at least one NoGradGuard is alive, ops record no tape: outputs are
// plain values with requires_grad=false.  Used for evaluation and decoding.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// Value-semantics handle onto a shared autodiff node.  All data is f64.
// Every op validates shapes up front (DimensionError) and checks its output
// for NaN/Inf (NumericError).
class Tensor {
public:
    Tensor() = default;

    // --- factories ---------------------------------------------------------
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from_data(Shape shape, std::vector<double> values);
    static Tensor scalar(double value);
    // Trainable leaf: requires_grad=true, carries a name for diagnostics.
    static Tensor param(Shape shape, std::vector<double> values, std::string name);
    static Tensor param_normal(Shape shape, Rng& rng, double stddev, std::string name);
    static Tensor param_zeros(Shape shape, std::string name);

    // --- inspection --------------------------------------------------------
    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const { return shape_numel(shape()); }
    std::size_t size() const;
    const std::vector<double>& data() const;
    std::vector<double>& mutable_data();    // leaf construction only
    double value() const;                   // rank-0 / single-element access
    double at(std::size_t i) const;
    bool requires_grad() const;
    // Flip trainability in place (affects every handle to this leaf); graphs
    // built afterwards respect the new setting.  Used to freeze a base model.
    void set_requires_grad(bool v);
    const std::string& name() const;

    // Gradient access (valid after backward()).  ContractError if the
    // tensor never received a gradient.
    const std::vector<double>& grad() const;
    bool has_grad() const;
    void zero_grad();

    // Copy of the values with no tape attached.
    Tensor detach() const;

    // --- internal ----------------------------------------------------------
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

// Seeds `root`'s grad with ones (it is almost always a scalar loss), runs
// reverse-mode accumulation in topological order, then frees the graph.
// Gradients accumulate across calls until zero_grad().
void backward(const Tensor& root);

// --- elementwise ------------------------------------------------------------
// Binary ops broadcast over leading axes only: shapes must be equal, or one
// operand's shape must be a trailing suffix of the other's.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double c);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

// --- matmul -----------------------------------------------------------------
// Contracts the last axis of `a` with the second-to-last of `b`.  Leading
// (batch) axes must match exactly, or be absent on one side, in which case
// that operand is shared across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);

// --- reductions / normalizations ---------------------------------------------
Tensor sum_axis(const Tensor& x, int axis);     // drops the axis
Tensor mean_axis(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);                // rank-0 result
Tensor mean_all(const Tensor& x);
Tensor softmax_axis(const Tensor& x, int axis);
// y = x / max(||x||_2, eps) along `axis`.
Tensor l2_normalize_axis(const Tensor& x, int axis, double eps = 1e-12);
// y_i = x_i / (sum_axis + eps); used for attention renormalization.
Tensor div_by_axis_sum(const Tensor& x, int axis, double eps);

// --- shape ops ----------------------------------------------------------------
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose_last2(const Tensor& x);
Tensor concat_axis(const std::vector<Tensor>& parts, int axis);
std::vector<Tensor> split_axis(const Tensor& x, int axis, std::size_t parts);

// --- rows (rank-2 gather/scatter) ----------------------------------------------
// out[r, :] = x[index[r], :].  Duplicate indices allowed; grads accumulate.
Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& index);
// out = x with out[index[r], :] = rows[r, :].  Indices must be unique.
Tensor put_rows(const Tensor& x, const Tensor& rows, const std::vector<std::size_t>& index);

// --- fused primitives ------------------------------------------------------------
// Per-slice (last axis) normalization with learned gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
// Mean negative log-likelihood over rows of `logits` [P, V] where mask[r] is
// nonzero; rows with mask 0 contribute nothing.  Rank-0 result.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<std::uint8_t>& mask);

} // namespace vtg
