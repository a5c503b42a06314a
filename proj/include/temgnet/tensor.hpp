#pragma once

// Dense double-precision tensors with reverse-mode automatic
// differentiation. Every operation records enough on the node it creates
// to push gradients back to its inputs; backward() walks the recorded
// graph in reverse topological order. All math is 64-bit and all loops
// run in a fixed order, so identical inputs give bit-identical outputs.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "temgnet/errors.hpp"
#include "temgnet/rng.hpp"

namespace temgnet {

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first touched

    // Tape record. Leaves have no backward_fn; interior nodes hold their
    // inputs (keeping the graph alive) and a rule that reads this node's
    // grad and accumulates into the inputs' grads.
    const char* op = "leaf";
    std::vector<NodePtr> inputs;
    std::function<void(TensorNode&)> backward_fn;

    std::size_t numel() const { return data.size(); }
    bool on_tape() const { return static_cast<bool>(backward_fn); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

namespace detail {

inline bool& grad_mode() {
    thread_local bool mode = true;
    return mode;
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) {
        if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(s));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

}  // namespace detail

// Disables tape recording for the enclosing scope (inference paths).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        return filled(std::move(shape), 0.0);
    }

    static Tensor filled(Shape shape, double value) {
        auto n = std::make_shared<TensorNode>();
        std::size_t count = detail::shape_numel(shape);
        n->shape = std::move(shape);
        n->data.assign(count, value);
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<double> values) {
        std::size_t count = detail::shape_numel(shape);
        if (values.size() != count)
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->data = std::move(values);
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }
    const NodePtr& node() const { return node_; }

    const Shape& shape() const { return check().shape; }
    std::size_t numel() const { return check().numel(); }
    std::size_t ndim() const { return check().shape.size(); }

    // 2-D helpers; a 1-D tensor counts as a single row.
    std::int64_t rows() const {
        const auto& s = shape();
        return s.size() == 1 ? 1 : s[0];
    }
    std::int64_t cols() const {
        const auto& s = shape();
        return s.back();
    }

    double* data() { return check().data.data(); }
    const double* data() const { return check().data.data(); }
    std::vector<double>& values() { return check().data; }
    const std::vector<double>& values() const { return check().data; }

    double at(std::int64_t i) const { return check().data.at(static_cast<std::size_t>(i)); }
    double at(std::int64_t i, std::int64_t j) const {
        return check().data.at(static_cast<std::size_t>(i * cols() + j));
    }
    double& at(std::int64_t i) { return check().data.at(static_cast<std::size_t>(i)); }
    double& at(std::int64_t i, std::int64_t j) {
        return check().data.at(static_cast<std::size_t>(i * cols() + j));
    }

    bool requires_grad() const { return check().requires_grad; }
    Tensor& set_requires_grad(bool v = true) {
        check().requires_grad = v;
        return *this;
    }

    bool has_grad() const { return defined() && !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw ContractError("tensor has no gradient; run backward() first");
        return node_->grad;
    }
    void zero_grad() {
        if (defined() && !node_->grad.empty())
            node_->grad.assign(node_->data.size(), 0.0);
    }

    // Deep copy, detached from any graph.
    Tensor clone() const {
        const auto& n = check();
        Tensor t = Tensor::from(n.shape, n.data);
        t.node_->requires_grad = n.requires_grad;
        return t;
    }

private:
    TensorNode& check() const {
        if (!node_) throw ContractError("operation on an undefined tensor");
        return *node_;
    }
    NodePtr node_;
};

namespace detail {

inline bool wants_grad(const NodePtr& n) { return n->requires_grad || n->on_tape(); }

inline bool tape_wanted(std::initializer_list<const Tensor*> ins) {
    if (!grad_mode()) return false;
    for (const Tensor* t : ins)
        if (t->defined() && wants_grad(t->node())) return true;
    return false;
}

inline Tensor make_result(const char* op, Shape shape, std::vector<double> data) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->op = op;
    return Tensor(std::move(n));
}

inline void attach(Tensor& out, std::vector<Tensor> ins,
                   std::function<void(TensorNode&)> fn) {
    auto& n = *out.node();
    n.inputs.reserve(ins.size());
    for (auto& t : ins) n.inputs.push_back(t.node());
    n.backward_fn = std::move(fn);
}

inline void require_finite(const Tensor& t, const char* op) {
    for (double v : t.values())
        if (!std::isfinite(v))
            throw DomainError(std::string(op) + ": input contains NaN or Inf");
}

inline void check_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2)
        throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
}

// Order-independent summation: the terms are sorted by value (bit pattern
// breaks ties, so signed zeros order deterministically) before the fold.
// The result is a pure function of the term multiset, which makes
// reductions along the sequence axis invariant under input permutation at
// the bit level. Used only where that invariance matters; cost is
// O(n log n) on short buffers.
inline double sorted_sum(std::vector<double>& buf) {
    std::sort(buf.begin(), buf.end(), [](double a, double b) {
        if (a != b) return a < b;
        return std::bit_cast<std::uint64_t>(a) < std::bit_cast<std::uint64_t>(b);
    });
    double s = 0.0;
    for (double v : buf) s += v;
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Interior-node gradients are reset
// on every call; leaf gradients accumulate until zero_grad().
inline void backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward: undefined tensor");
    TensorNode* root = loss.node().get();
    if (root->numel() != 1)
        throw ContractError("backward: loss must be a scalar, got shape " + shape_str(root->shape));
    if (!root->on_tape())
        throw ContractError("backward: loss was not produced by taped operations");

    // Post-order DFS over on-tape nodes; the resulting order is a valid
    // topological order of the forward computation.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    struct Frame {
        TensorNode* node;
        std::size_t next_input;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    seen.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_input < f.node->inputs.size()) {
            TensorNode* in = f.node->inputs[f.next_input++].get();
            if (in->on_tape() && !seen.count(in)) {
                seen.insert(in);
                stack.push_back({in, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    for (TensorNode* n : order) n->grad.assign(n->data.size(), 0.0);
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) (*it)->backward_fn(**it);
}

// ---------------------------------------------------------------------------
// elementwise operations
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
    Tensor r = detail::make_result("add", a.shape(), std::move(out));
    if (detail::tape_wanted({&a, &b})) {
        detail::attach(r, {a, b}, [na = a.node(), nb = b.node()](TensorNode& self) {
            if (detail::wants_grad(na)) {
                na->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i];
            }
            if (detail::wants_grad(nb)) {
                nb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) nb->grad[i] += self.grad[i];
            }
        });
    }
    return r;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
    Tensor r = detail::make_result("sub", a.shape(), std::move(out));
    if (detail::tape_wanted({&a, &b})) {
        detail::attach(r, {a, b}, [na = a.node(), nb = b.node()](TensorNode& self) {
            if (detail::wants_grad(na)) {
                na->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i];
            }
            if (detail::wants_grad(nb)) {
                nb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) nb->grad[i] -= self.grad[i];
            }
        });
    }
    return r;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
    Tensor r = detail::make_result("mul", a.shape(), std::move(out));
    if (detail::tape_wanted({&a, &b})) {
        detail::attach(r, {a, b}, [na = a.node(), nb = b.node()](TensorNode& self) {
            if (detail::wants_grad(na)) {
                na->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    na->grad[i] += self.grad[i] * nb->data[i];
            }
            if (detail::wants_grad(nb)) {
                nb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    nb->grad[i] += self.grad[i] * na->data[i];
            }
        });
    }
    return r;
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * pa[i];
    Tensor r = detail::make_result("scale", a.shape(), std::move(out));
    if (detail::tape_wanted({&a})) {
        detail::attach(r, {a}, [na = a.node(), c](TensorNode& self) {
            na->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += c * self.grad[i];
        });
    }
    return r;
}

// x * Phi(x) with Phi the standard normal CDF (exact erf form).
inline Tensor gelu(const Tensor& x) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    std::vector<double> out(x.numel());
    const double* px = x.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = px[i] * 0.5 * std::erfc(-px[i] * kInvSqrt2);
    Tensor r = detail::make_result("gelu", x.shape(), std::move(out));
    if (detail::tape_wanted({&x})) {
        detail::attach(r, {x}, [nx = x.node()](TensorNode& self) {
            constexpr double kInvSqrt2l = 0.70710678118654752440;
            constexpr double kInvSqrt2Pi = 0.39894228040143267794;
            nx->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double v = nx->data[i];
                const double cdf = 0.5 * std::erfc(-v * kInvSqrt2l);
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                nx->grad[i] += self.grad[i] * (cdf + v * pdf);
            }
        });
    }
    return r;
}

// ---------------------------------------------------------------------------
// matrix operations
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_2d(a, "matmul");
    detail::check_2d(b, "matmul");
    const std::int64_t m = a.shape()[0], k = a.shape()[1];
    const std::int64_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::int64_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::int64_t t = 0; t < k; ++t) {
            const double av = pa[i * k + t];
            const double* brow = pb + t * n;
            for (std::int64_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
    Tensor r = detail::make_result("matmul", {m, n}, std::move(out));
    if (detail::tape_wanted({&a, &b})) {
        detail::attach(r, {a, b}, [na = a.node(), nb = b.node(), m, k, n](TensorNode& self) {
            const double* g = self.grad.data();
            if (detail::wants_grad(na)) {
                na->ensure_grad();
                // dA += G . B^T (row-by-row dot products)
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t t = 0; t < k; ++t) {
                        const double* grow = g + i * n;
                        const double* brow = nb->data.data() + t * n;
                        double s = 0.0;
                        for (std::int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                        na->grad[i * k + t] += s;
                    }
            }
            if (detail::wants_grad(nb)) {
                nb->ensure_grad();
                // dB += A^T . G
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t t = 0; t < k; ++t) {
                        const double av = na->data[i * k + t];
                        const double* grow = g + i * n;
                        double* drow = nb->grad.data() + t * n;
                        for (std::int64_t j = 0; j < n; ++j) drow[j] += av * grow[j];
                    }
            }
        });
    }
    return r;
}

// C = A . B^T; rows of both operands are contiguous, which keeps the
// attention score computation cache-friendly.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::check_2d(a, "matmul_nt");
    detail::check_2d(b, "matmul_nt");
    const std::int64_t m = a.shape()[0], k = a.shape()[1];
    const std::int64_t n = b.shape()[0], k2 = b.shape()[1];
    if (k != k2)
        throw ShapeError("matmul_nt: inner dimensions disagree: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    std::vector<double> out(static_cast<std::size_t>(m * n));
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
            const double* ar = pa + i * k;
            const double* br = pb + j * k;
            double s = 0.0;
            for (std::int64_t t = 0; t < k; ++t) s += ar[t] * br[t];
            out[static_cast<std::size_t>(i * n + j)] = s;
        }
    Tensor r = detail::make_result("matmul_nt", {m, n}, std::move(out));
    if (detail::tape_wanted({&a, &b})) {
        detail::attach(r, {a, b}, [na = a.node(), nb = b.node(), m, k, n](TensorNode& self) {
            const double* g = self.grad.data();
            if (detail::wants_grad(na)) {
                na->ensure_grad();
                // dA += G . B
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j) {
                        const double gv = g[i * n + j];
                        const double* brow = nb->data.data() + j * k;
                        double* drow = na->grad.data() + i * k;
                        for (std::int64_t t = 0; t < k; ++t) drow[t] += gv * brow[t];
                    }
            }
            if (detail::wants_grad(nb)) {
                nb->ensure_grad();
                // dB += G^T . A
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j) {
                        const double gv = g[i * n + j];
                        const double* arow = na->data.data() + i * k;
                        double* drow = nb->grad.data() + j * k;
                        for (std::int64_t t = 0; t < k; ++t) drow[t] += gv * arow[t];
                    }
            }
        });
    }
    return r;
}

// C = P . V where the reduction axis is a sequence dimension. Forward
// sums each output element's terms in value-sorted order, so permuting
// the sequence (rows of P's columns together with rows of V) permutes
// rows of C without changing any retained row's bits.
inline Tensor attn_mix(const Tensor& p, const Tensor& v) {
    detail::check_2d(p, "attn_mix");
    detail::check_2d(v, "attn_mix");
    const std::int64_t m = p.shape()[0], k = p.shape()[1];
    const std::int64_t k2 = v.shape()[0], n = v.shape()[1];
    if (k != k2)
        throw ShapeError("attn_mix: inner dimensions disagree: " + shape_str(p.shape()) +
                         " vs " + shape_str(v.shape()));
    std::vector<double> out(static_cast<std::size_t>(m * n));
    std::vector<double> terms(static_cast<std::size_t>(k));
    const double* pp = p.data();
    const double* pv = v.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
            for (std::int64_t t = 0; t < k; ++t)
                terms[static_cast<std::size_t>(t)] = pp[i * k + t] * pv[t * n + j];
            out[static_cast<std::size_t>(i * n + j)] = detail::sorted_sum(terms);
        }
    Tensor r = detail::make_result("attn_mix", {m, n}, std::move(out));
    if (detail::tape_wanted({&p, &v})) {
        detail::attach(r, {p, v}, [np = p.node(), nv = v.node(), m, k, n](TensorNode& self) {
            const double* g = self.grad.data();
            if (detail::wants_grad(np)) {
                np->ensure_grad();
                // dP += G . V^T
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t t = 0; t < k; ++t) {
                        const double* grow = g + i * n;
                        const double* vrow = nv->data.data() + t * n;
                        double s = 0.0;
                        for (std::int64_t j = 0; j < n; ++j) s += grow[j] * vrow[j];
                        np->grad[i * k + t] += s;
                    }
            }
            if (detail::wants_grad(nv)) {
                nv->ensure_grad();
                // dV += P^T . G
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t t = 0; t < k; ++t) {
                        const double pv2 = np->data[i * k + t];
                        const double* grow = g + i * n;
                        double* drow = nv->grad.data() + t * n;
                        for (std::int64_t j = 0; j < n; ++j) drow[j] += pv2 * grow[j];
                    }
            }
        });
    }
    return r;
}

inline Tensor transpose(const Tensor& a) {
    detail::check_2d(a, "transpose");
    const std::int64_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j * m + i)] = pa[i * n + j];
    Tensor r = detail::make_result("transpose", {n, m}, std::move(out));
    if (detail::tape_wanted({&a})) {
        detail::attach(r, {a}, [na = a.node(), m, n](TensorNode& self) {
            na->ensure_grad();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j)
                    na->grad[static_cast<std::size_t>(i * n + j)] += self.grad[j * m + i];
        });
    }
    return r;
}

// Broadcasts a length-c vector over the rows of an r x c matrix.
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    detail::check_2d(m, "add_rowvec");
    const std::int64_t r = m.shape()[0], c = m.shape()[1];
    if (v.numel() != static_cast<std::size_t>(c))
        throw ShapeError("add_rowvec: vector length " + shape_str(v.shape()) +
                         " does not match matrix " + shape_str(m.shape()));
    std::vector<double> out(m.numel());
    const double* pm = m.data();
    const double* pv = v.data();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j)
            out[static_cast<std::size_t>(i * c + j)] = pm[i * c + j] + pv[j];
    Tensor out_t = detail::make_result("add_rowvec", m.shape(), std::move(out));
    if (detail::tape_wanted({&m, &v})) {
        detail::attach(out_t, {m, v}, [nm = m.node(), nv = v.node(), r, c](TensorNode& self) {
            if (detail::wants_grad(nm)) {
                nm->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) nm->grad[i] += self.grad[i];
            }
            if (detail::wants_grad(nv)) {
                nv->ensure_grad();
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < c; ++j)
                        nv->grad[static_cast<std::size_t>(j)] += self.grad[i * c + j];
            }
        });
    }
    return out_t;
}

// ---------------------------------------------------------------------------
// row-wise softmax and layer normalization
// ---------------------------------------------------------------------------

// Row-wise softmax with max subtraction; invariant to adding a constant
// to a row. Rejects non-finite input.
inline Tensor softmax_rows(const Tensor& m) {
    detail::check_2d(m, "softmax_rows");
    detail::require_finite(m, "softmax_rows");
    const std::int64_t r = m.shape()[0], c = m.shape()[1];
    std::vector<double> out(m.numel());
    std::vector<double> terms(static_cast<std::size_t>(c));
    const double* pm = m.data();
    for (std::int64_t i = 0; i < r; ++i) {
        const double* row = pm + i * c;
        double mx = row[0];
        for (std::int64_t j = 1; j < c; ++j)
            if (row[j] > mx) mx = row[j];
        for (std::int64_t j = 0; j < c; ++j) {
            const double e = std::exp(row[j] - mx);
            out[static_cast<std::size_t>(i * c + j)] = e;
            terms[static_cast<std::size_t>(j)] = e;
        }
        // order-independent denominator: a permuted row normalizes to the
        // bit-identical probability multiset
        const double inv = 1.0 / detail::sorted_sum(terms);
        for (std::int64_t j = 0; j < c; ++j) out[static_cast<std::size_t>(i * c + j)] *= inv;
    }
    Tensor out_t = detail::make_result("softmax_rows", m.shape(), std::move(out));
    if (detail::tape_wanted({&m})) {
        detail::attach(out_t, {m}, [nm = m.node(), r, c](TensorNode& self) {
            nm->ensure_grad();
            // dZ = P .* (dP - rowsum(dP .* P))
            for (std::int64_t i = 0; i < r; ++i) {
                const double* p = self.data.data() + i * c;
                const double* g = self.grad.data() + i * c;
                double dot = 0.0;
                for (std::int64_t j = 0; j < c; ++j) dot += g[j] * p[j];
                double* d = nm->grad.data() + i * c;
                for (std::int64_t j = 0; j < c; ++j) d[j] += p[j] * (g[j] - dot);
            }
        });
    }
    return out_t;
}

// Normalizes each length-d row to zero mean and unit (biased) variance,
// then applies the gamma/beta affine map. A 1-D input is treated as a
// single row.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    const std::int64_t d = x.cols();
    const std::int64_t r = x.rows();
    if (d < 2) throw ShapeError("layer_norm: normalized extent must be >= 2, got " + shape_str(x.shape()));
    if (gamma.numel() != static_cast<std::size_t>(d) || beta.numel() != static_cast<std::size_t>(d))
        throw ShapeError("layer_norm: gamma/beta must have length " + std::to_string(d));

    std::vector<double> out(x.numel());
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r));
    const double* px = x.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    for (std::int64_t i = 0; i < r; ++i) {
        const double* row = px + i * d;
        double mean = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double t = row[j] - mean;
            var += t * t;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(i)] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const double xh = (row[j] - mean) * is;
            (*xhat)[static_cast<std::size_t>(i * d + j)] = xh;
            out[static_cast<std::size_t>(i * d + j)] = pg[j] * xh + pb[j];
        }
    }
    Tensor out_t = detail::make_result("layer_norm", x.shape(), std::move(out));
    if (detail::tape_wanted({&x, &gamma, &beta})) {
        detail::attach(out_t, {x, gamma, beta},
                       [nx = x.node(), ng = gamma.node(), nb = beta.node(), xhat, inv_std, r,
                        d](TensorNode& self) {
                           const double* g = self.grad.data();
                           if (detail::wants_grad(nb)) {
                               nb->ensure_grad();
                               for (std::int64_t i = 0; i < r; ++i)
                                   for (std::int64_t j = 0; j < d; ++j)
                                       nb->grad[static_cast<std::size_t>(j)] += g[i * d + j];
                           }
                           if (detail::wants_grad(ng)) {
                               ng->ensure_grad();
                               for (std::int64_t i = 0; i < r; ++i)
                                   for (std::int64_t j = 0; j < d; ++j)
                                       ng->grad[static_cast<std::size_t>(j)] +=
                                           g[i * d + j] * (*xhat)[static_cast<std::size_t>(i * d + j)];
                           }
                           if (detail::wants_grad(nx)) {
                               nx->ensure_grad();
                               for (std::int64_t i = 0; i < r; ++i) {
                                   const double* xh = xhat->data() + i * d;
                                   const double is = (*inv_std)[static_cast<std::size_t>(i)];
                                   double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                                   for (std::int64_t j = 0; j < d; ++j) {
                                       const double dxh = g[i * d + j] * ng->data[static_cast<std::size_t>(j)];
                                       mean_dxhat += dxh;
                                       mean_dxhat_xhat += dxh * xh[j];
                                   }
                                   mean_dxhat /= static_cast<double>(d);
                                   mean_dxhat_xhat /= static_cast<double>(d);
                                   double* dx = nx->grad.data() + i * d;
                                   for (std::int64_t j = 0; j < d; ++j) {
                                       const double dxh = g[i * d + j] * ng->data[static_cast<std::size_t>(j)];
                                       dx[j] += is * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                                   }
                               }
                           }
                       });
    }
    return out_t;
}

// ---------------------------------------------------------------------------
// slicing, concatenation, reductions
// ---------------------------------------------------------------------------

inline Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1) {
    detail::check_2d(a, "slice_cols");
    const std::int64_t r = a.shape()[0], c = a.shape()[1];
    if (c0 < 0 || c1 > c || c0 >= c1)
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for " + shape_str(a.shape()));
    const std::int64_t w = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(r * w));
    const double* pa = a.data();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < w; ++j)
            out[static_cast<std::size_t>(i * w + j)] = pa[i * c + c0 + j];
    Tensor out_t = detail::make_result("slice_cols", {r, w}, std::move(out));
    if (detail::tape_wanted({&a})) {
        detail::attach(out_t, {a}, [na = a.node(), r, c, c0, w](TensorNode& self) {
            na->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < w; ++j)
                    na->grad[static_cast<std::size_t>(i * c + c0 + j)] += self.grad[i * w + j];
        });
    }
    return out_t;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::int64_t r = parts[0].rows();
    std::int64_t total = 0;
    for (const auto& p : parts) {
        detail::check_2d(p, "concat_cols");
        if (p.shape()[0] != r)
            throw ShapeError("concat_cols: row counts disagree: " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        total += p.shape()[1];
    }
    std::vector<double> out(static_cast<std::size_t>(r * total));
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t w = p.shape()[1];
        const double* pp = p.data();
        for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < w; ++j)
                out[static_cast<std::size_t>(i * total + off + j)] = pp[i * w + j];
        off += w;
    }
    Tensor out_t = detail::make_result("concat_cols", {r, total}, std::move(out));
    bool wanted = detail::grad_mode();
    if (wanted) {
        wanted = false;
        for (const auto& p : parts)
            if (detail::wants_grad(p.node())) wanted = true;
    }
    if (wanted) {
        std::vector<NodePtr> nodes;
        std::vector<std::int64_t> widths;
        for (const auto& p : parts) {
            nodes.push_back(p.node());
            widths.push_back(p.shape()[1]);
        }
        detail::attach(out_t, parts, [nodes, widths, r, total](TensorNode& self) {
            std::int64_t off2 = 0;
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                const std::int64_t w = widths[k];
                if (detail::wants_grad(nodes[k])) {
                    nodes[k]->ensure_grad();
                    for (std::int64_t i = 0; i < r; ++i)
                        for (std::int64_t j = 0; j < w; ++j)
                            nodes[k]->grad[static_cast<std::size_t>(i * w + j)] +=
                                self.grad[i * total + off2 + j];
                }
                off2 += w;
            }
        });
    }
    return out_t;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const std::int64_t c = parts[0].cols();
    std::int64_t total = 0;
    for (const auto& p : parts) {
        detail::check_2d(p, "concat_rows");
        if (p.shape()[1] != c)
            throw ShapeError("concat_rows: column counts disagree: " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        total += p.shape()[0];
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(total * c));
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    Tensor out_t = detail::make_result("concat_rows", {total, c}, std::move(out));
    bool wanted = detail::grad_mode();
    if (wanted) {
        wanted = false;
        for (const auto& p : parts)
            if (detail::wants_grad(p.node())) wanted = true;
    }
    if (wanted) {
        std::vector<NodePtr> nodes;
        std::vector<std::int64_t> heights;
        for (const auto& p : parts) {
            nodes.push_back(p.node());
            heights.push_back(p.shape()[0]);
        }
        detail::attach(out_t, parts, [nodes, heights, c](TensorNode& self) {
            std::int64_t row0 = 0;
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                if (detail::wants_grad(nodes[k])) {
                    nodes[k]->ensure_grad();
                    const std::size_t count = static_cast<std::size_t>(heights[k] * c);
                    for (std::size_t i = 0; i < count; ++i)
                        nodes[k]->grad[i] += self.grad[static_cast<std::size_t>(row0 * c) + i];
                }
                row0 += heights[k];
            }
        });
    }
    return out_t;
}

// Extracts row r as a 1 x c matrix.
inline Tensor row(const Tensor& a, std::int64_t r) {
    detail::check_2d(a, "row");
    const std::int64_t rows = a.shape()[0], c = a.shape()[1];
    if (r < 0 || r >= rows)
        throw ShapeError("row: index " + std::to_string(r) + " out of range for " + shape_str(a.shape()));
    std::vector<double> out(a.values().begin() + r * c, a.values().begin() + (r + 1) * c);
    Tensor out_t = detail::make_result("row", {1, c}, std::move(out));
    if (detail::tape_wanted({&a})) {
        detail::attach(out_t, {a}, [na = a.node(), r, c](TensorNode& self) {
            na->ensure_grad();
            for (std::int64_t j = 0; j < c; ++j)
                na->grad[static_cast<std::size_t>(r * c + j)] += self.grad[static_cast<std::size_t>(j)];
        });
    }
    return out_t;
}

inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    Tensor out_t = detail::make_result("sum_all", {1}, {s});
    if (detail::tape_wanted({&a})) {
        detail::attach(out_t, {a}, [na = a.node()](TensorNode& self) {
            na->ensure_grad();
            const double g = self.grad[0];
            for (std::size_t i = 0; i < na->grad.size(); ++i) na->grad[i] += g;
        });
    }
    return out_t;
}

// Inverted dropout; identity when rate == 0. Mask is drawn from the
// caller's seeded stream so training stays reproducible.
inline Tensor dropout(const Tensor& a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ContractError("dropout: rate must lie in [0, 1)");
    if (rate == 0.0) return a;
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(a.numel());
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
        (*mask)[i] = m;
        out[i] = pa[i] * m;
    }
    Tensor out_t = detail::make_result("dropout", a.shape(), std::move(out));
    if (detail::tape_wanted({&a})) {
        detail::attach(out_t, {a}, [na = a.node(), mask](TensorNode& self) {
            na->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                na->grad[i] += self.grad[i] * (*mask)[i];
        });
    }
    return out_t;
}

}  // namespace temgnet
