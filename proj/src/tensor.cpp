#include "vtg/tensor.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <unordered_set>

extern "C" void openblas_set_num_threads(int);

namespace vtg {

namespace {

thread_local int no_grad_depth = 0;

void check_finite(const std::vector<double>& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string(what) + " produced a non-finite value");
    }
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
    long a = axis;
    if (a < 0) a += static_cast<long>(rank);
    if (a < 0 || a >= static_cast<long>(rank)) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for rank " + std::to_string(rank));
    }
    return static_cast<std::size_t>(a);
}

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_node(Shape shape, std::vector<double> data, const char* op) {
    check_finite(data, op);
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->name = op;
    return n;
}

// Attach reverse edges if recording is on and any input needs gradients.
void record(const NodePtr& out, std::vector<NodePtr> parents, std::function<void()> backprop) {
    if (no_grad_depth > 0) return;
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    if (!needs) return;
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backprop = std::move(backprop);
}

// Decompose a shape around `axis` into (outer, n, inner) extents so that the
// flat index of element (o, i, j) is (o*n + i)*inner + j.
struct AxisView {
    std::size_t outer = 1, n = 1, inner = 1;
};
AxisView axis_view(const Shape& s, std::size_t axis) {
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
    v.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

// Suffix broadcast check for elementwise binary ops.  Returns true if `small`
// equals the trailing axes of `big`.
bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

struct BcastPlan {
    Shape out;
    bool a_small = false;   // a is broadcast over leading axes of b
    bool b_small = false;
};

BcastPlan bcast_plan(const Tensor& a, const Tensor& b, const char* op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    BcastPlan p;
    if (sa == sb) {
        p.out = sa;
    } else if (is_suffix(sb, sa)) {
        p.out = sa;
        p.b_small = true;
    } else if (is_suffix(sa, sb)) {
        p.out = sb;
        p.a_small = true;
    } else {
        throw DimensionError(std::string(op) + ": shapes " + shape_str(sa) + " and " +
                             shape_str(sb) + " are not equal and neither is a trailing suffix of the other");
    }
    return p;
}

void blas_gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
               const double* a, std::size_t lda, const double* b, std::size_t ldb,
               double beta, double* c, std::size_t ldc) {
    static const bool init = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)init;
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

} // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) {
        if (d == 0) throw DimensionError("zero-extent axis in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }
bool grad_enabled() { return no_grad_depth == 0; }

// --- Tensor basics -----------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
    std::size_t n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), "zeros"));
}

Tensor Tensor::full(Shape shape, double value) {
    std::size_t n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, value), "full"));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("from_data: shape " + shape_str(shape) + " expects " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    return Tensor(make_node(std::move(shape), std::move(values), "from_data"));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

Tensor Tensor::param(Shape shape, std::vector<double> values, std::string name) {
    Tensor t = from_data(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    t.node_->name = std::move(name);
    return t;
}

Tensor Tensor::param_normal(Shape shape, Rng& rng, double stddev, std::string name) {
    std::size_t n = shape_numel(shape);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, stddev);
    return param(std::move(shape), std::move(v), std::move(name));
}

Tensor Tensor::param_zeros(Shape shape, std::string name) {
    std::size_t n = shape_numel(shape);
    return param(std::move(shape), std::vector<double>(n, 0.0), std::move(name));
}

const Shape& Tensor::shape() const {
    if (!node_) throw ContractError("shape() on an undefined tensor");
    return node_->shape;
}

std::size_t Tensor::size() const { return shape_numel(shape()); }

const std::vector<double>& Tensor::data() const {
    if (!node_) throw ContractError("data() on an undefined tensor");
    return node_->data;
}

std::vector<double>& Tensor::mutable_data() {
    if (!node_) throw ContractError("mutable_data() on an undefined tensor");
    return node_->data;
}

double Tensor::value() const {
    if (size() != 1) throw DimensionError("value() needs a single-element tensor, got " + shape_str(shape()));
    return data()[0];
}

double Tensor::at(std::size_t i) const { return data().at(i); }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
    if (!node_) throw ContractError("set_requires_grad() on an undefined tensor");
    node_->requires_grad = v;
}

const std::string& Tensor::name() const {
    if (!node_) throw ContractError("name() on an undefined tensor");
    return node_->name;
}

const std::vector<double>& Tensor::grad() const {
    if (!node_) throw ContractError("grad() on an undefined tensor");
    if (node_->grad.empty()) {
        throw ContractError("no gradient recorded for '" + node_->name +
                            "'; did backward() reach it?");
    }
    return node_->grad;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
    if (!node_) throw ContractError("detach() on an undefined tensor");
    return Tensor(make_node(node_->shape, node_->data, "detach"));
}

// --- backward ----------------------------------------------------------------

void backward(const Tensor& root) {
    const auto& r = root.node();
    if (!r) throw ContractError("backward() on an undefined tensor");
    if (!r->requires_grad) throw ContractError("backward() on a tensor that requires no gradient");

    // Seed: d(root)/d(root) = 1 for every element.
    r->ensure_grad();
    for (auto& g : r->grad) g += 1.0;

    // Reverse post-order DFS over parent edges = consumers before producers.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(r.get(), 0);
    seen.insert(r.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (!node->backprop) continue;
        if (node->grad.empty()) continue;   // no gradient flowed here
        check_finite(node->grad, node->name.c_str());
        node->backprop();
    }

    // Release the graph; leaf gradients stay until zero_grad().
    for (detail::Node* node : order) {
        node->backprop = nullptr;
        node->parents.clear();
    }
}

// --- elementwise -------------------------------------------------------------

namespace {

// Shared skeleton for add/sub/mul with suffix broadcasting.
// combine(x, y) gives the output; dfa/dfb give local derivatives wrt a and b.
template <class Combine, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, Combine combine, DA dfa, DB dfb) {
    BcastPlan plan = bcast_plan(a, b, op);
    const auto& av = a.data();
    const auto& bv = b.data();
    std::size_t n = shape_numel(plan.out);
    std::size_t na = av.size(), nb = bv.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = combine(av[i % na], bv[i % nb]);
    NodePtr node = make_node(plan.out, std::move(out), op);
    auto pa = a.node(), pb = b.node();
    detail::Node* self = node.get();
    record(node, {pa, pb}, [self, pa, pb, dfa, dfb, n, na, nb] {
        const auto& g = self->grad;
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                pa->grad[i % na] += g[i] * dfa(pa->data[i % na], pb->data[i % nb]);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                pb->grad[i % nb] += g[i] * dfb(pa->data[i % na], pb->data[i % nb]);
        }
    });
    return Tensor(node);
}

template <class F, class DF>
Tensor unary_op(const Tensor& x, const char* op, F f, DF df_from_y) {
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    NodePtr node = make_node(x.shape(), std::move(out), op);
    auto px = x.node();
    detail::Node* self = node.get();
    record(node, {px}, [self, px, df_from_y] {
        px->ensure_grad();
        for (std::size_t i = 0; i < self->data.size(); ++i)
            px->grad[i] += self->grad[i] * df_from_y(self->data[i], px->data[i]);
    });
    return Tensor(node);
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double s) {
    return unary_op(
        x, "scale", [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double c) {
    return unary_op(
        x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
    auto f = [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
    };
    return unary_op(x, "sigmoid", f, [](double y, double) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
    return unary_op(
        x, "tanh", [](double v) { return std::tanh(v); },
        [](double y, double) { return 1.0 - y * y; });
}

// --- matmul ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2)
        throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(sa) + " and " + shape_str(sb));
    std::size_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
    std::size_t k2 = sb[sb.size() - 2], n = sb[sb.size() - 1];
    if (k != k2)
        throw DimensionError("matmul: inner extents differ, " + shape_str(sa) + " vs " + shape_str(sb));

    Shape batch_a(sa.begin(), sa.end() - 2);
    Shape batch_b(sb.begin(), sb.end() - 2);
    Shape batch;
    bool a_shared = false, b_shared = false;
    if (batch_a == batch_b) {
        batch = batch_a;
    } else if (batch_a.empty()) {
        batch = batch_b;
        a_shared = true;
    } else if (batch_b.empty()) {
        batch = batch_a;
        b_shared = true;
    } else {
        throw DimensionError("matmul: batch axes must match exactly or be absent on one side, got " +
                             shape_str(sa) + " and " + shape_str(sb));
    }
    std::size_t nb = shape_numel(batch);

    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<double> out(shape_numel(out_shape));
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    for (std::size_t t = 0; t < nb; ++t) {
        blas_gemm(false, false, m, n, k, ap + (a_shared ? 0 : t * m * k), k,
                  bp + (b_shared ? 0 : t * k * n), n, 0.0, out.data() + t * m * n, n);
    }
    NodePtr node = make_node(std::move(out_shape), std::move(out), "matmul");
    auto pa = a.node(), pb = b.node();
    detail::Node* self = node.get();
    record(node, {pa, pb}, [self, pa, pb, m, n, k, nb, a_shared, b_shared] {
        const double* g = self->grad.data();
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t t = 0; t < nb; ++t) {
                // dA = dC * B^T, accumulated in place.
                blas_gemm(false, true, m, k, n, g + t * m * n, n,
                          pb->data.data() + (b_shared ? 0 : t * k * n), n, 1.0,
                          pa->grad.data() + (a_shared ? 0 : t * m * k), k);
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t t = 0; t < nb; ++t) {
                // dB = A^T * dC, accumulated in place.
                blas_gemm(true, false, k, n, m, pa->data.data() + (a_shared ? 0 : t * m * k), k,
                          g + t * m * n, n, 1.0, pb->grad.data() + (b_shared ? 0 : t * k * n), n);
            }
        }
    });
    return Tensor(node);
}

// --- reductions / normalizations ----------------------------------------------

namespace {

Tensor reduce_axis(const Tensor& x, int axis_in, bool mean, const char* op) {
    std::size_t axis = normalize_axis(axis_in, x.rank(), op);
    AxisView v = axis_view(x.shape(), axis);
    Shape out_shape;
    for (std::size_t i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(x.shape()[i]);
    std::vector<double> out(v.outer * v.inner, 0.0);
    const auto& xv = x.data();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.n; ++i)
            for (std::size_t j = 0; j < v.inner; ++j)
                out[o * v.inner + j] += xv[(o * v.n + i) * v.inner + j];
    double w = mean ? 1.0 / static_cast<double>(v.n) : 1.0;
    if (mean)
        for (auto& e : out) e *= w;
    NodePtr node = make_node(std::move(out_shape), std::move(out), op);
    auto px = x.node();
    detail::Node* self = node.get();
    record(node, {px}, [self, px, v, w] {
        px->ensure_grad();
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.n; ++i)
                for (std::size_t j = 0; j < v.inner; ++j)
                    px->grad[(o * v.n + i) * v.inner + j] += self->grad[o * v.inner + j] * w;
    });
    return Tensor(node);
}

} // namespace

Tensor sum_axis(const Tensor& x, int axis) { return reduce_axis(x, axis, false, "sum_axis"); }
Tensor mean_axis(const Tensor& x, int axis) { return reduce_axis(x, axis, true, "mean_axis"); }

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    NodePtr node = make_node({}, {s}, "sum_all");
    auto px = x.node();
    detail::Node* self = node.get();
    record(node, {px}, [self, px] {
        px->ensure_grad();
        for (auto& g : px->grad) g += self->grad[0];
    });
    return Tensor(node);
}

Tensor mean_all(const Tensor& x) {
    std::size_t n = x.size();
    double s = 0.0;
    for (double v : x.data()) s += v;
    NodePtr node = make_node({}, {s / static_cast<double>(n)}, "mean_all");
    auto px = x.node();
    detail::Node* self = node.get();
    record(node, {px}, [self, px, n] {
        px->ensure_grad();
        double w = self->grad[0] / static_cast<double>(n);
        for (auto& g : px->grad) g += w;
    });
    return Tensor(node);
}

Tensor softmax_axis(const Tensor& x, int axis_in) {
    std::size_t axis = normalize_axis(axis_in, x.rank(), "softmax_axis");
    AxisView v = axis_view(x.shape(), axis);
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t j = 0; j < v.inner; ++j) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < v.n; ++i) mx = std::max(mx, xv[(o * v.n + i) * v.inner + j]);
            double z = 0.0;
            for (std::size_t i = 0; i < v.n; ++i) {
                double e = std::exp(xv[(o * v.n + i) * v.inner + j] - mx);
                out[(o * v.n + i) * v.inner + j] = e;
                z += e;
            }
            for (std::size_t i = 0; i < v.n; ++i) out[(o * v.n + i) * v.inner + j] /= z;
        }
    }
    NodePtr node = make_node(x.shape(), std::move(out), "softmax_axis");
    auto px = x.node();
    detail::Node* self = node.get();
    record(node, {px}, [self, px, v] {
        px->ensure_grad();
        const auto& y = self->data;
        const auto& g = self->grad;
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t j = 0; j < v.inner; ++j) {
                double dot = 0.0;
                for (std::size_t i = 0; i < v.n; ++i) {
                    std::size_t idx = (o * v.n + i) * v.inner + j;
                    dot += y[idx] * g[idx];
                }
                for (std::size_t i = 0; i < v.n; ++i) {
                    std::size_t idx = (o * v.n + i) * v.inner + j;
                    px->grad[idx] += y[idx] * (g[idx] - dot);
                }
            }
        }
    });
    return Tensor(node);
}

Tensor l2_normalize_axis(const Tensor& x, int axis_in, double eps) {
    std::size_t axis = normalize_axis(axis_in, x.rank(), "l2_normalize_axis");
    AxisView v = axis_view(x.shape(), axis);
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    std::vector<double> norms(v.outer * v.inner);    // clamped norms, reused in backward
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t j = 0; j < v.inner; ++j) {
            double ss = 0.0;
            for (std::size_t i = 0; i < v.n; ++i) {
                double e = xv[(o * v.n + i) * v.inner + j];
                ss += e * e;
            }
            double r = std::max(std::sqrt(ss), eps);
            norms[o * v.inner + j] = r;
            for (std::size_t i = 0; i < v.n; ++i) {
                std::size_t idx = (o * v.n + i) * v.inner + j;
                out[idx] = xv[idx] / r;
            }
        }
    }
    NodePtr node = make_node(x.shape(), std::move(out), "l2_normalize_axis");
    auto px = x.node();
    detail::Node* self = node.get();
    record(node, {px}, [self, px, v, eps, norms = std::move(norms)] {
        px->ensure_grad();
        const auto& y = self->data;
        const auto& g = self->grad;
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t j = 0; j < v.inner; ++j) {
                double r = norms[o * v.inner + j];
                if (r <= eps) {
                    // Clamped branch: y = x / eps is linear in x.
                    for (std::size_t i = 0; i < v.n; ++i) {
                        std::size_t idx = (o * v.n + i) * v.inner + j;
                        px->grad[idx] += g[idx] / eps;
                    }
                    continue;
                }
                double dot = 0.0;
                for (std::size_t i = 0; i < v.n; ++i) {
                    std::size_t idx = (o * v.n + i) * v.inner + j;
                    dot += y[idx] * g[idx];
                }
                for (std::size_t i = 0; i < v.n; ++i) {
                    std::size_t idx = (o * v.n + i) * v.inner + j;
                    px->grad[idx] += (g[idx] - y[idx] * dot) / r;
                }
            }
        }
    });
    return Tensor(node);
}

Tensor div_by_axis_sum(const Tensor& x, int axis_in, double eps) {
    std::size_t axis = normalize_axis(axis_in, x.rank(), "div_by_axis_sum");
    AxisView v = axis_view(x.shape(), axis);
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    std::vector<double> denom(v.outer * v.inner);
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t j = 0; j < v.inner; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < v.n; ++i) s += xv[(o * v.n + i) * v.inner + j];
            double d = s + eps;
            denom[o * v.inner + j] = d;
            for (std::size_t i = 0; i < v.n; ++i) {
                std::size_t idx = (o * v.n + i) * v.inner + j;
                out[idx] = xv[idx] / d;
            }
        }
    }
    NodePtr node = make_node(x.shape(), std::move(out), "div_by_axis_sum");
    auto px = x.node();
    detail::Node* self = node.get();
    record(node, {px}, [self, px, v, denom = std::move(denom)] {
        px->ensure_grad();
        const auto& g = self->grad;
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t j = 0; j < v.inner; ++j) {
                double d = denom[o * v.inner + j];
                double gx = 0.0;   // sum_i g_i * x_i
                for (std::size_t i = 0; i < v.n; ++i) {
                    std::size_t idx = (o * v.n + i) * v.inner + j;
                    gx += g[idx] * px->data[idx];
                }
                for (std::size_t i = 0; i < v.n; ++i) {
                    std::size_t idx = (o * v.n + i) * v.inner + j;
                    px->grad[idx] += g[idx] / d - gx / (d * d);
                }
            }
        }
    });
    return Tensor(node);
}

// --- shape ops ----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    NodePtr node = make_node(std::move(shape), x.data(), "reshape");
    auto px = x.node();
    detail::Node* self = node.get();
    record(node, {px}, [self, px] {
        px->ensure_grad();
        for (std::size_t i = 0; i < self->grad.size(); ++i) px->grad[i] += self->grad[i];
    });
    return Tensor(node);
}

Tensor transpose_last2(const Tensor& x) {
    if (x.rank() < 2) throw DimensionError("transpose_last2: rank >= 2 required, got " + shape_str(x.shape()));
    Shape s = x.shape();
    std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
    std::swap(s[s.size() - 2], s[s.size() - 1]);
    std::size_t nb = x.size() / (r * c);
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t t = 0; t < nb; ++t)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
                out[t * r * c + j * r + i] = xv[t * r * c + i * c + j];
    NodePtr node = make_node(std::move(s), std::move(out), "transpose_last2");
    auto px = x.node();
    detail::Node* self = node.get();
    record(node, {px}, [self, px, nb, r, c] {
        px->ensure_grad();
        for (std::size_t t = 0; t < nb; ++t)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    px->grad[t * r * c + i * c + j] += self->grad[t * r * c + j * r + i];
    });
    return Tensor(node);
}

Tensor concat_axis(const std::vector<Tensor>& parts, int axis_in) {
    if (parts.empty()) throw DimensionError("concat_axis: no inputs");
    std::size_t rank = parts[0].rank();
    std::size_t axis = normalize_axis(axis_in, rank, "concat_axis");
    Shape out_shape = parts[0].shape();
    std::size_t total = parts[0].shape()[axis];
    for (std::size_t p = 1; p < parts.size(); ++p) {
        const Shape& s = parts[p].shape();
        if (s.size() != rank) throw DimensionError("concat_axis: rank mismatch between inputs");
        for (std::size_t i = 0; i < rank; ++i) {
            if (i != axis && s[i] != out_shape[i])
                throw DimensionError("concat_axis: shapes " + shape_str(out_shape) + " and " + shape_str(s) +
                                     " differ off the concat axis");
        }
        total += s[axis];
    }
    out_shape[axis] = total;
    AxisView vo = axis_view(out_shape, axis);
    std::vector<double> out(shape_numel(out_shape));
    std::size_t offset = 0;   // running start along the concat axis
    for (const Tensor& p : parts) {
        std::size_t np = p.shape()[axis];
        const auto& pv = p.data();
        for (std::size_t o = 0; o < vo.outer; ++o)
            std::memcpy(out.data() + (o * vo.n + offset) * vo.inner,
                        pv.data() + o * np * vo.inner, np * vo.inner * sizeof(double));
        offset += np;
    }
    NodePtr node = make_node(std::move(out_shape), std::move(out), "concat_axis");
    std::vector<NodePtr> parents;
    std::vector<std::size_t> extents;
    for (const Tensor& p : parts) {
        parents.push_back(p.node());
        extents.push_back(p.shape()[axis]);
    }
    detail::Node* self = node.get();
    record(node, parents, [self, parents, extents, vo] {
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < parents.size(); ++pi) {
            const auto& p = parents[pi];
            std::size_t np = extents[pi];
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t o = 0; o < vo.outer; ++o)
                    for (std::size_t e = 0; e < np * vo.inner; ++e)
                        p->grad[o * np * vo.inner + e] += self->grad[(o * vo.n + offset) * vo.inner + e];
            }
            offset += np;
        }
    });
    return Tensor(node);
}

std::vector<Tensor> split_axis(const Tensor& x, int axis_in, std::size_t parts) {
    std::size_t axis = normalize_axis(axis_in, x.rank(), "split_axis");
    std::size_t n = x.shape()[axis];
    if (parts == 0 || n % parts != 0)
        throw DimensionError("split_axis: axis extent " + std::to_string(n) + " not divisible into " +
                             std::to_string(parts) + " parts");
    std::size_t np = n / parts;
    AxisView v = axis_view(x.shape(), axis);
    Shape part_shape = x.shape();
    part_shape[axis] = np;
    const auto& xv = x.data();
    std::vector<Tensor> out;
    for (std::size_t pi = 0; pi < parts; ++pi) {
        std::vector<double> pd(shape_numel(part_shape));
        for (std::size_t o = 0; o < v.outer; ++o)
            std::memcpy(pd.data() + o * np * v.inner,
                        xv.data() + (o * v.n + pi * np) * v.inner, np * v.inner * sizeof(double));
        NodePtr node = make_node(part_shape, std::move(pd), "split_axis");
        auto px = x.node();
        detail::Node* self = node.get();
        record(node, {px}, [self, px, v, np, pi] {
            px->ensure_grad();
            for (std::size_t o = 0; o < v.outer; ++o)
                for (std::size_t e = 0; e < np * v.inner; ++e)
                    px->grad[(o * v.n + pi * np) * v.inner + e] += self->grad[o * np * v.inner + e];
        });
        out.emplace_back(node);
    }
    return out;
}

// --- rows ----------------------------------------------------------------------

Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& index) {
    if (x.rank() != 2) throw DimensionError("take_rows: rank-2 input required, got " + shape_str(x.shape()));
    std::size_t rows = x.shape()[0], cols = x.shape()[1];
    for (std::size_t r : index)
        if (r >= rows) throw DimensionError("take_rows: index " + std::to_string(r) + " out of range " + std::to_string(rows));
    std::vector<double> out(index.size() * cols);
    const auto& xv = x.data();
    for (std::size_t i = 0; i < index.size(); ++i)
        std::memcpy(out.data() + i * cols, xv.data() + index[i] * cols, cols * sizeof(double));
    NodePtr node = make_node({index.size(), cols}, std::move(out), "take_rows");
    auto px = x.node();
    detail::Node* self = node.get();
    record(node, {px}, [self, px, index, cols] {
        px->ensure_grad();
        for (std::size_t i = 0; i < index.size(); ++i)
            for (std::size_t j = 0; j < cols; ++j)
                px->grad[index[i] * cols + j] += self->grad[i * cols + j];
    });
    return Tensor(node);
}

Tensor put_rows(const Tensor& x, const Tensor& rows, const std::vector<std::size_t>& index) {
    if (x.rank() != 2 || rows.rank() != 2)
        throw DimensionError("put_rows: rank-2 inputs required, got " + shape_str(x.shape()) + " and " +
                             shape_str(rows.shape()));
    std::size_t nr = x.shape()[0], cols = x.shape()[1];
    if (rows.shape()[1] != cols || rows.shape()[0] != index.size())
        throw DimensionError("put_rows: replacement " + shape_str(rows.shape()) + " does not match " +
                             std::to_string(index.size()) + " rows of width " + std::to_string(cols));
    std::unordered_set<std::size_t> uniq(index.begin(), index.end());
    if (uniq.size() != index.size()) throw ContractError("put_rows: duplicate row indices");
    for (std::size_t r : index)
        if (r >= nr) throw DimensionError("put_rows: index " + std::to_string(r) + " out of range " + std::to_string(nr));
    std::vector<double> out = x.data();
    const auto& rv = rows.data();
    for (std::size_t i = 0; i < index.size(); ++i)
        std::memcpy(out.data() + index[i] * cols, rv.data() + i * cols, cols * sizeof(double));
    NodePtr node = make_node(x.shape(), std::move(out), "put_rows");
    auto px = x.node(), pr = rows.node();
    detail::Node* self = node.get();
    record(node, {px, pr}, [self, px, pr, index, cols] {
        if (px->requires_grad) {
            px->ensure_grad();
            std::vector<std::uint8_t> replaced(px->shape[0], 0);
            for (std::size_t r : index) replaced[r] = 1;
            for (std::size_t r = 0; r < px->shape[0]; ++r) {
                if (replaced[r]) continue;
                for (std::size_t j = 0; j < cols; ++j) px->grad[r * cols + j] += self->grad[r * cols + j];
            }
        }
        if (pr->requires_grad) {
            pr->ensure_grad();
            for (std::size_t i = 0; i < index.size(); ++i)
                for (std::size_t j = 0; j < cols; ++j)
                    pr->grad[i * cols + j] += self->grad[index[i] * cols + j];
        }
    });
    return Tensor(node);
}

// --- fused primitives ------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() < 1) throw DimensionError("layer_norm: rank >= 1 required");
    std::size_t d = x.shape().back();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                             shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    std::size_t slices = x.size() / d;
    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    std::vector<double> out(xv.size());
    std::vector<double> inv_sigma(slices);
    for (std::size_t s = 0; s < slices; ++s) {
        const double* row = xv.data() + s * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += row[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= static_cast<double>(d);
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[s] = is;
        for (std::size_t i = 0; i < d; ++i) out[s * d + i] = gv[i] * (row[i] - mu) * is + bv[i];
    }
    NodePtr node = make_node(x.shape(), std::move(out), "layer_norm");
    auto px = x.node(), pg = gain.node(), pb = bias.node();
    detail::Node* self = node.get();
    record(node, {px, pg, pb}, [self, px, pg, pb, d, slices, inv_sigma = std::move(inv_sigma)] {
        const auto& g = self->grad;
        const auto& gv = pg->data;
        std::vector<double> xhat(d), dxhat(d);
        if (px->requires_grad) px->ensure_grad();
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (std::size_t s = 0; s < slices; ++s) {
            double is = inv_sigma[s];
            const double* row = px->data.data() + s * d;
            double mu = 0.0;
            for (std::size_t i = 0; i < d; ++i) mu += row[i];
            mu /= static_cast<double>(d);
            for (std::size_t i = 0; i < d; ++i) xhat[i] = (row[i] - mu) * is;
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                dxhat[i] = g[s * d + i] * gv[i];
                m1 += dxhat[i];
                m2 += dxhat[i] * xhat[i];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            if (px->requires_grad)
                for (std::size_t i = 0; i < d; ++i)
                    px->grad[s * d + i] += is * (dxhat[i] - m1 - xhat[i] * m2);
            if (pg->requires_grad)
                for (std::size_t i = 0; i < d; ++i) pg->grad[i] += g[s * d + i] * xhat[i];
            if (pb->requires_grad)
                for (std::size_t i = 0; i < d; ++i) pb->grad[i] += g[s * d + i];
        }
    });
    return Tensor(node);
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<std::uint8_t>& mask) {
    if (logits.rank() != 2)
        throw DimensionError("cross_entropy_rows: rank-2 logits required, got " + shape_str(logits.shape()));
    std::size_t p = logits.shape()[0], vsz = logits.shape()[1];
    if (targets.size() != p || mask.size() != p)
        throw DimensionError("cross_entropy_rows: logits " + shape_str(logits.shape()) + " need " +
                             std::to_string(p) + " targets and mask entries, got " +
                             std::to_string(targets.size()) + " and " + std::to_string(mask.size()));
    std::size_t n_masked = 0;
    for (std::size_t r = 0; r < p; ++r) {
        if (!mask[r]) continue;
        ++n_masked;
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vsz)
            throw ContractError("cross_entropy_rows: target " + std::to_string(targets[r]) +
                                " out of vocabulary range at row " + std::to_string(r));
    }
    if (n_masked == 0) throw ValueError("cross_entropy_rows: mask selects no rows");
    const auto& lv = logits.data();
    double loss = 0.0;
    for (std::size_t r = 0; r < p; ++r) {
        if (!mask[r]) continue;
        const double* row = lv.data() + r * vsz;
        double mx = *std::max_element(row, row + vsz);
        double z = 0.0;
        for (std::size_t c = 0; c < vsz; ++c) z += std::exp(row[c] - mx);
        loss += (mx + std::log(z)) - row[targets[r]];
    }
    loss /= static_cast<double>(n_masked);
    NodePtr node = make_node({}, {loss}, "cross_entropy_rows");
    auto pl = logits.node();
    detail::Node* self = node.get();
    record(node, {pl}, [self, pl, targets, mask, n_masked, p, vsz] {
        pl->ensure_grad();
        double w = self->grad[0] / static_cast<double>(n_masked);
        for (std::size_t r = 0; r < p; ++r) {
            if (!mask[r]) continue;
            const double* row = pl->data.data() + r * vsz;
            double mx = *std::max_element(row, row + vsz);
            double z = 0.0;
            for (std::size_t c = 0; c < vsz; ++c) z += std::exp(row[c] - mx);
            for (std::size_t c = 0; c < vsz; ++c) {
                double soft = std::exp(row[c] - mx) / z;
                double onehot = (static_cast<int>(c) == targets[r]) ? 1.0 : 0.0;
                pl->grad[r * vsz + c] += w * (soft - onehot);
            }
        }
    });
    return Tensor(node);
}

} // namespace vtg
