#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ovg/errors.hpp"
#include "ovg/rng.hpp"

namespace ovg {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

// Thread-local switch: with gradients disabled, ops produce detached values
// and no graph nodes are recorded.
inline bool& grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { grad_enabled() = false; }
    ~NoGradGuard() { grad_enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool prev_;
};

// Per-position validity mask for a sequence.
struct AttentionMask {
    std::vector<std::uint8_t> valid;

    AttentionMask() = default;
    explicit AttentionMask(std::vector<std::uint8_t> v) : valid(std::move(v)) {}

    static AttentionMask all(Index n) {
        return AttentionMask(std::vector<std::uint8_t>(static_cast<std::size_t>(n), 1));
    }
    static AttentionMask first(Index n_valid, Index n) {
        AttentionMask m = all(n);
        for (Index i = n_valid; i < n; ++i) m.valid[static_cast<std::size_t>(i)] = 0;
        return m;
    }

    Index length() const { return static_cast<Index>(valid.size()); }
    bool is_valid(Index i) const { return valid[static_cast<std::size_t>(i)] != 0; }
    bool all_valid() const {
        return std::all_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; });
    }
    Index count_valid() const {
        Index n = 0;
        for (auto v : valid) n += (v != 0);
        return n;
    }
};

// Dense 2-D tensor participating in a reverse-mode graph. Copies alias the
// same node (shared ownership), like a reference-counted handle.
//
// Gradients accumulate: repeated backward() calls without zero_grad() add up.
// Tensors already in a graph are never mutated in place; optimizers update
// leaf values between steps via value_mut().
template <typename S>
class Tensor {
   public:
    struct Node {
        Mat<S> value;
        Mat<S> grad;  // allocated lazily, zero-filled
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        // Reads this->grad, accumulates into parents' grads.
        std::function<void(Node&)> backprop;

        void ensure_grad() {
            if (grad.rows() != value.rows() || grad.cols() != value.cols())
                grad = Mat<S>::Zero(value.rows(), value.cols());
        }
    };
    using NodePtr = std::shared_ptr<Node>;

    Tensor() = default;
    explicit Tensor(Mat<S> v, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        node_->value = std::move(v);
        node_->requires_grad = requires_grad && grad_enabled();
    }

    static Tensor zeros(Index r, Index c, bool requires_grad = false) {
        return Tensor(Mat<S>::Zero(r, c), requires_grad);
    }
    static Tensor ones(Index r, Index c, bool requires_grad = false) {
        return Tensor(Mat<S>::Ones(r, c), requires_grad);
    }
    static Tensor constant(Index r, Index c, S v, bool requires_grad = false) {
        return Tensor(Mat<S>::Constant(r, c, v), requires_grad);
    }
    static Tensor scalar(S v, bool requires_grad = false) { return constant(1, 1, v, requires_grad); }

    static Tensor column(const std::vector<S>& v, bool requires_grad = false) {
        Mat<S> m(static_cast<Index>(v.size()), 1);
        for (Index i = 0; i < m.rows(); ++i) m(i, 0) = v[static_cast<std::size_t>(i)];
        return Tensor(std::move(m), requires_grad);
    }

    static Tensor randn(Index r, Index c, Rng& rng, S stddev = S(1), bool requires_grad = false) {
        Mat<S> m(r, c);
        for (Index i = 0; i < r; ++i)
            for (Index j = 0; j < c; ++j) m(i, j) = static_cast<S>(rng.normal()) * stddev;
        return Tensor(std::move(m), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    Index rows() const { return node_->value.rows(); }
    Index cols() const { return node_->value.cols(); }
    Index size() const { return node_->value.size(); }

    const Mat<S>& value() const { return node_->value; }
    // Leaf updates only (optimizer steps, parameter init).
    Mat<S>& value_mut() { return node_->value; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    const Mat<S>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    Mat<S>& grad_mut() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (node_) node_->grad.setZero(node_->value.rows(), node_->value.cols());
    }

    S item() const {
        if (rows() != 1 || cols() != 1) throw ShapeError("item(): tensor is not scalar");
        return node_->value(0, 0);
    }

    NodePtr node() const { return node_; }

    // Reverse-mode sweep from a scalar. The graph is a DAG; nodes are visited
    // in reverse topological order so each node's grad is complete before its
    // backprop runs.
    void backward() const {
        if (!node_) throw ShapeError("backward(): undefined tensor");
        if (rows() != 1 || cols() != 1) throw ShapeError("backward(): loss must be scalar");
        if (!std::isfinite(static_cast<double>(node_->value(0, 0))))
            throw NumericError("backward(): loss is not finite");
        if (!node_->requires_grad) return;

        std::vector<Node*> order;
        std::unordered_set<Node*> visited;
        struct Frame {
            Node* n;
            std::size_t next_parent;
        };
        std::vector<Frame> stack;
        stack.push_back({node_.get(), 0});
        visited.insert(node_.get());
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_parent < f.n->parents.size()) {
                Node* p = f.n->parents[f.next_parent++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(f.n);
                stack.pop_back();
            }
        }
        // Interior grads are scratch space for this sweep; leaf grads persist
        // so that repeated sweeps accumulate.
        for (Node* n : order) {
            n->ensure_grad();
            if (n->backprop) n->grad.setZero();
        }
        node_->grad(0, 0) += S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backprop) (*it)->backprop(**it);
        }
    }

    // Builds an op node. `backprop` receives the finished output node and must
    // accumulate into the parents it captured. When gradients are disabled or
    // no parent requires grad, the result is a detached constant.
    static Tensor make_op(Mat<S> value, std::vector<Tensor> parents,
                          std::function<void(Node&)> backprop) {
        Tensor out(std::move(value), false);
        bool needs = grad_enabled();
        if (needs) {
            needs = false;
            for (const auto& p : parents) needs = needs || p.requires_grad();
        }
        if (needs) {
            out.node_->requires_grad = true;
            out.node_->parents.reserve(parents.size());
            for (auto& p : parents) out.node_->parents.push_back(p.node_);
            out.node_->backprop = std::move(backprop);
        }
        return out;
    }

   private:
    NodePtr node_;
};

template <typename S>
bool all_finite(const Mat<S>& m) {
    return m.allFinite();
}

template <typename S>
void check_finite(const Tensor<S>& t, const std::string& what) {
    if (!all_finite(t.value())) throw NumericError(what + ": non-finite values");
}

// ---------------------------------------------------------------------------
// Elementwise binary ops with limited broadcasting: equal shapes, a 1x1
// scalar on either side, or a 1xC row vector against RxC.
// ---------------------------------------------------------------------------

namespace detail {

enum class Bcast { None, Scalar, Row };

template <typename S>
inline Bcast classify(Index ar, Index ac, Index br, Index bc, const char* op) {
    if (ar == br && ac == bc) return Bcast::None;
    if (br == 1 && bc == 1) return Bcast::Scalar;
    if (br == 1 && bc == ac) return Bcast::Row;
    throw ShapeError(std::string(op) + ": incompatible shapes " + std::to_string(ar) + "x" +
                     std::to_string(ac) + " vs " + std::to_string(br) + "x" + std::to_string(bc));
}

template <typename S>
inline Mat<S> expand(const Mat<S>& b, Index r, Index c, Bcast k) {
    switch (k) {
        case Bcast::None:
            return b;
        case Bcast::Scalar:
            return Mat<S>::Constant(r, c, b(0, 0));
        case Bcast::Row:
            return b.replicate(r, 1);
    }
    return b;
}

// Reduces a full-size gradient back onto the (possibly broadcast) operand.
template <typename S>
inline Mat<S> reduce_to(const Mat<S>& g, Index r, Index c) {
    if (g.rows() == r && g.cols() == c) return g;
    if (r == 1 && c == 1) {
        Mat<S> out(1, 1);
        out(0, 0) = g.sum();
        return out;
    }
    // row vector
    return g.colwise().sum();
}

template <typename S, typename FwdFn, typename BackA, typename BackB>
Tensor<S> binary_op(const Tensor<S>& a, const Tensor<S>& b, const char* name, FwdFn fwd,
                    BackA back_a, BackB back_b) {
    Bcast ka = Bcast::None, kb = Bcast::None;
    Index r = a.rows(), c = a.cols();
    if (a.rows() == b.rows() && a.cols() == b.cols()) {
        // no broadcast
    } else if ((b.rows() == 1 && b.cols() == 1) || (b.rows() == 1 && b.cols() == a.cols())) {
        kb = classify<S>(a.rows(), a.cols(), b.rows(), b.cols(), name);
    } else if ((a.rows() == 1 && a.cols() == 1) || (a.rows() == 1 && a.cols() == b.cols())) {
        ka = classify<S>(b.rows(), b.cols(), a.rows(), a.cols(), name);
        r = b.rows();
        c = b.cols();
    } else {
        throw ShapeError(std::string(name) + ": incompatible shapes");
    }
    Mat<S> av = expand(a.value(), r, c, ka);
    Mat<S> bv = expand(b.value(), r, c, kb);
    Mat<S> out = fwd(av, bv);
    auto an = a.node();
    auto bn = b.node();
    return Tensor<S>::make_op(
        std::move(out), {a, b},
        [an, bn, av, bv, back_a, back_b](typename Tensor<S>::Node& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                an->grad += reduce_to<S>(back_a(self.grad, av, bv, self.value), an->value.rows(),
                                         an->value.cols());
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                bn->grad += reduce_to<S>(back_b(self.grad, av, bv, self.value), bn->value.rows(),
                                         bn->value.cols());
            }
        });
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op(
        a, b, "add", [](const Mat<S>& x, const Mat<S>& y) -> Mat<S> { return x + y; },
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>&, const Mat<S>&) -> Mat<S> { return g; },
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>&, const Mat<S>&) -> Mat<S> { return g; });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op(
        a, b, "sub", [](const Mat<S>& x, const Mat<S>& y) -> Mat<S> { return x - y; },
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>&, const Mat<S>&) -> Mat<S> { return g; },
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>&, const Mat<S>&) -> Mat<S> {
            return Mat<S>(-g);
        });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op(
        a, b, "mul",
        [](const Mat<S>& x, const Mat<S>& y) -> Mat<S> { return x.cwiseProduct(y); },
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>& y, const Mat<S>&) -> Mat<S> {
            return g.cwiseProduct(y);
        },
        [](const Mat<S>& g, const Mat<S>& x, const Mat<S>&, const Mat<S>&) -> Mat<S> {
            return g.cwiseProduct(x);
        });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op(
        a, b, "div",
        [](const Mat<S>& x, const Mat<S>& y) -> Mat<S> { return x.cwiseQuotient(y); },
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>& y, const Mat<S>&) -> Mat<S> {
            return g.cwiseQuotient(y);
        },
        [](const Mat<S>& g, const Mat<S>& x, const Mat<S>& y, const Mat<S>&) -> Mat<S> {
            return Mat<S>(-g.cwiseProduct(x).cwiseQuotient(y.cwiseProduct(y)));
        });
}

// Elementwise min/max; on ties the first operand wins the gradient.
template <typename S>
Tensor<S> min_elt(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op(
        a, b, "min_elt",
        [](const Mat<S>& x, const Mat<S>& y) -> Mat<S> { return x.cwiseMin(y); },
        [](const Mat<S>& g, const Mat<S>& x, const Mat<S>& y, const Mat<S>&) -> Mat<S> {
            return (x.array() <= y.array()).template cast<S>().matrix().cwiseProduct(g);
        },
        [](const Mat<S>& g, const Mat<S>& x, const Mat<S>& y, const Mat<S>&) -> Mat<S> {
            return (x.array() > y.array()).template cast<S>().matrix().cwiseProduct(g);
        });
}

template <typename S>
Tensor<S> max_elt(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op(
        a, b, "max_elt",
        [](const Mat<S>& x, const Mat<S>& y) -> Mat<S> { return x.cwiseMax(y); },
        [](const Mat<S>& g, const Mat<S>& x, const Mat<S>& y, const Mat<S>&) -> Mat<S> {
            return (x.array() >= y.array()).template cast<S>().matrix().cwiseProduct(g);
        },
        [](const Mat<S>& g, const Mat<S>& x, const Mat<S>& y, const Mat<S>&) -> Mat<S> {
            return (x.array() < y.array()).template cast<S>().matrix().cwiseProduct(g);
        });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {
template <typename S, typename FwdFn, typename BackFn>
Tensor<S> unary_op(const Tensor<S>& x, FwdFn fwd, BackFn back) {
    Mat<S> out = fwd(x.value());
    auto xn = x.node();
    return Tensor<S>::make_op(std::move(out), {x},
                              [xn, back](typename Tensor<S>::Node& self) {
                                  if (!xn->requires_grad) return;
                                  xn->ensure_grad();
                                  xn->grad += back(self.grad, xn->value, self.value);
                              });
}
}  // namespace detail

template <typename S>
Tensor<S> neg(const Tensor<S>& x) {
    return detail::unary_op(
        x, [](const Mat<S>& v) -> Mat<S> { return -v; },
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>&) -> Mat<S> { return Mat<S>(-g); });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
    return detail::unary_op(
        x, [c](const Mat<S>& v) -> Mat<S> { return v * c; },
        [c](const Mat<S>& g, const Mat<S>&, const Mat<S>&) -> Mat<S> { return Mat<S>(g * c); });
}

template <typename S>
Tensor<S> add_const(const Tensor<S>& x, S c) {
    return detail::unary_op(
        x, [c](const Mat<S>& v) -> Mat<S> { return v.array() + c; },
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>&) -> Mat<S> { return g; });
}

template <typename S>
Tensor<S> exp_t(const Tensor<S>& x) {
    return detail::unary_op(
        x, [](const Mat<S>& v) -> Mat<S> { return v.array().exp(); },
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>& y) -> Mat<S> {
            return g.cwiseProduct(y);
        });
}

template <typename S>
Tensor<S> square(const Tensor<S>& x) {
    return detail::unary_op(
        x, [](const Mat<S>& v) -> Mat<S> { return v.cwiseProduct(v); },
        [](const Mat<S>& g, const Mat<S>& v, const Mat<S>&) -> Mat<S> {
            return Mat<S>(S(2) * g.cwiseProduct(v));
        });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    return detail::unary_op(
        x, [](const Mat<S>& v) -> Mat<S> { return v.cwiseMax(S(0)); },
        [](const Mat<S>& g, const Mat<S>& v, const Mat<S>&) -> Mat<S> {
            return (v.array() > S(0)).template cast<S>().matrix().cwiseProduct(g);
        });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    auto sig = [](S v) -> S {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
    };
    return detail::unary_op(
        x, [sig](const Mat<S>& v) -> Mat<S> { return v.unaryExpr(sig); },
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>& y) -> Mat<S> {
            return g.cwiseProduct(y.cwiseProduct((Mat<S>)(Mat<S>::Ones(y.rows(), y.cols()) - y)));
        });
}

// Exact GELU: x * Phi(x) with the Gaussian CDF.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    auto fwd = [](S v) -> S {
        return static_cast<S>(0.5 * static_cast<double>(v) *
                              (1.0 + std::erf(static_cast<double>(v) * inv_sqrt2)));
    };
    auto dfn = [](S v) -> S {
        const double d = static_cast<double>(v);
        const double cdf = 0.5 * (1.0 + std::erf(d * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * d * d);
        return static_cast<S>(cdf + d * pdf);
    };
    return detail::unary_op(
        x, [fwd](const Mat<S>& v) -> Mat<S> { return v.unaryExpr(fwd); },
        [dfn](const Mat<S>& g, const Mat<S>& v, const Mat<S>&) -> Mat<S> {
            return g.cwiseProduct(v.unaryExpr(dfn));
        });
}

// log(1 + exp(x)), overflow-safe.
template <typename S>
Tensor<S> softplus(const Tensor<S>& x) {
    auto fwd = [](S v) -> S {
        const double d = static_cast<double>(v);
        return static_cast<S>(std::max(d, 0.0) + std::log1p(std::exp(-std::abs(d))));
    };
    auto sig = [](S v) -> S {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
    };
    return detail::unary_op(
        x, [fwd](const Mat<S>& v) -> Mat<S> { return v.unaryExpr(fwd); },
        [sig](const Mat<S>& g, const Mat<S>& v, const Mat<S>&) -> Mat<S> {
            return g.cwiseProduct(v.unaryExpr(sig));
        });
}

// x^e elementwise for e >= 1 (0^e is 0 with zero slope for e > 1).
template <typename S>
Tensor<S> pow_const(const Tensor<S>& x, S e) {
    if (e < S(1)) throw ConfigError("pow_const: exponent must be >= 1");
    return detail::unary_op(
        x,
        [e](const Mat<S>& v) -> Mat<S> {
            return v.unaryExpr([e](S a) { return static_cast<S>(std::pow(a, e)); });
        },
        [e](const Mat<S>& g, const Mat<S>& v, const Mat<S>&) -> Mat<S> {
            return g.cwiseProduct(v.unaryExpr(
                [e](S a) { return static_cast<S>(e * std::pow(a, e - S(1))); }));
        });
}

// max(x, c); gradient passes only where x > c.
template <typename S>
Tensor<S> clamp_min(const Tensor<S>& x, S c) {
    return detail::unary_op(
        x, [c](const Mat<S>& v) -> Mat<S> { return v.cwiseMax(c); },
        [c](const Mat<S>& g, const Mat<S>& v, const Mat<S>&) -> Mat<S> {
            return (v.array() > c).template cast<S>().matrix().cwiseProduct(g);
        });
}

enum class Pointwise { Gelu, Relu, Sigmoid };

template <typename S>
Tensor<S> pointwise(const Tensor<S>& x, Pointwise kind) {
    switch (kind) {
        case Pointwise::Gelu:
            return gelu(x);
        case Pointwise::Relu:
            return relu(x);
        case Pointwise::Sigmoid:
            return sigmoid(x);
    }
    throw ConfigError("pointwise: unknown kind");
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()));
    Mat<S> out = a.value() * b.value();
    auto an = a.node();
    auto bn = b.node();
    return Tensor<S>::make_op(std::move(out), {a, b},
                              [an, bn](typename Tensor<S>::Node& self) {
                                  if (an->requires_grad) {
                                      an->ensure_grad();
                                      an->grad.noalias() += self.grad * bn->value.transpose();
                                  }
                                  if (bn->requires_grad) {
                                      bn->ensure_grad();
                                      bn->grad.noalias() += an->value.transpose() * self.grad;
                                  }
                              });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
    Mat<S> out = x.value().transpose();
    auto xn = x.node();
    return Tensor<S>::make_op(std::move(out), {x}, [xn](typename Tensor<S>::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        xn->grad += self.grad.transpose();
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
    Mat<S> out(1, 1);
    out(0, 0) = x.value().sum();
    auto xn = x.node();
    return Tensor<S>::make_op(std::move(out), {x}, [xn](typename Tensor<S>::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        xn->grad.array() += self.grad(0, 0);
    });
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
    return scale(sum_all(x), S(1) / static_cast<S>(x.size()));
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty");
    const Index r = parts.front().rows();
    Index c = 0;
    for (const auto& p : parts) {
        if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
        c += p.cols();
    }
    Mat<S> out(r, c);
    Index at = 0;
    std::vector<Index> offsets;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        offsets.push_back(at);
        at += p.cols();
    }
    std::vector<typename Tensor<S>::NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return Tensor<S>::make_op(std::move(out), parts,
                              [nodes, offsets](typename Tensor<S>::Node& self) {
                                  for (std::size_t i = 0; i < nodes.size(); ++i) {
                                      if (!nodes[i]->requires_grad) continue;
                                      nodes[i]->ensure_grad();
                                      nodes[i]->grad +=
                                          self.grad.middleCols(offsets[i], nodes[i]->value.cols());
                                  }
                              });
}

template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty");
    const Index c = parts.front().cols();
    Index r = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw ShapeError("concat_rows: col mismatch");
        r += p.rows();
    }
    Mat<S> out(r, c);
    Index at = 0;
    std::vector<Index> offsets;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        offsets.push_back(at);
        at += p.rows();
    }
    std::vector<typename Tensor<S>::NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return Tensor<S>::make_op(std::move(out), parts,
                              [nodes, offsets](typename Tensor<S>::Node& self) {
                                  for (std::size_t i = 0; i < nodes.size(); ++i) {
                                      if (!nodes[i]->requires_grad) continue;
                                      nodes[i]->ensure_grad();
                                      nodes[i]->grad +=
                                          self.grad.middleRows(offsets[i], nodes[i]->value.rows());
                                  }
                              });
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, Index j0, Index n) {
    if (j0 < 0 || n < 0 || j0 + n > x.cols()) throw ShapeError("slice_cols: out of range");
    Mat<S> out = x.value().middleCols(j0, n);
    auto xn = x.node();
    return Tensor<S>::make_op(std::move(out), {x}, [xn, j0, n](typename Tensor<S>::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        xn->grad.middleCols(j0, n) += self.grad;
    });
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, Index i0, Index n) {
    if (i0 < 0 || n < 0 || i0 + n > x.rows()) throw ShapeError("slice_rows: out of range");
    Mat<S> out = x.value().middleRows(i0, n);
    auto xn = x.node();
    return Tensor<S>::make_op(std::move(out), {x}, [xn, i0, n](typename Tensor<S>::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        xn->grad.middleRows(i0, n) += self.grad;
    });
}

// Output row r = x.row(idx[r]); backward scatter-adds.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, std::vector<Index> idx) {
    Mat<S> out(static_cast<Index>(idx.size()), x.cols());
    for (Index r = 0; r < out.rows(); ++r) {
        const Index i = idx[static_cast<std::size_t>(r)];
        if (i < 0 || i >= x.rows()) throw ShapeError("gather_rows: index out of range");
        out.row(r) = x.value().row(i);
    }
    auto xn = x.node();
    return Tensor<S>::make_op(std::move(out), {x},
                              [xn, idx = std::move(idx)](typename Tensor<S>::Node& self) {
                                  if (!xn->requires_grad) return;
                                  xn->ensure_grad();
                                  for (Index r = 0; r < self.grad.rows(); ++r)
                                      xn->grad.row(idx[static_cast<std::size_t>(r)]) +=
                                          self.grad.row(r);
                              });
}

// Places values row v into output row idx[v]; other rows are zero.
template <typename S>
Tensor<S> scatter_rows(const Tensor<S>& values, std::vector<Index> idx, Index n_rows) {
    if (values.rows() != static_cast<Index>(idx.size()))
        throw ShapeError("scatter_rows: index count mismatch");
    Mat<S> out = Mat<S>::Zero(n_rows, values.cols());
    for (Index v = 0; v < values.rows(); ++v) {
        const Index i = idx[static_cast<std::size_t>(v)];
        if (i < 0 || i >= n_rows) throw ShapeError("scatter_rows: index out of range");
        out.row(i) += values.value().row(v);
    }
    auto vn = values.node();
    return Tensor<S>::make_op(std::move(out), {values},
                              [vn, idx = std::move(idx)](typename Tensor<S>::Node& self) {
                                  if (!vn->requires_grad) return;
                                  vn->ensure_grad();
                                  for (Index v = 0; v < vn->value.rows(); ++v)
                                      vn->grad.row(v) +=
                                          self.grad.row(idx[static_cast<std::size_t>(v)]);
                              });
}

// Zeroes rows flagged invalid; valid rows pass through untouched.
template <typename S>
Tensor<S> zero_invalid_rows(const Tensor<S>& x, const AttentionMask& mask) {
    if (mask.length() != x.rows()) throw ShapeError("zero_invalid_rows: mask length mismatch");
    if (mask.all_valid()) return x;
    Mat<S> out = x.value();
    for (Index i = 0; i < out.rows(); ++i)
        if (!mask.is_valid(i)) out.row(i).setZero();
    auto xn = x.node();
    auto valid = mask.valid;
    return Tensor<S>::make_op(std::move(out), {x},
                              [xn, valid = std::move(valid)](typename Tensor<S>::Node& self) {
                                  if (!xn->requires_grad) return;
                                  xn->ensure_grad();
                                  for (Index i = 0; i < self.grad.rows(); ++i)
                                      if (valid[static_cast<std::size_t>(i)])
                                          xn->grad.row(i) += self.grad.row(i);
                              });
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

// Pairwise validity for attention scores: row i may see column j when both
// sequence positions are valid and, with a window radius set, |i-j| <= radius.
struct SoftmaxMask {
    const AttentionMask* row_valid = nullptr;
    const AttentionMask* col_valid = nullptr;
    Index band_radius = -1;  // <0: no band

    bool pair_valid(Index i, Index j) const {
        if (row_valid && !row_valid->is_valid(i)) return false;
        if (col_valid && !col_valid->is_valid(j)) return false;
        if (band_radius >= 0 && std::abs(static_cast<long long>(i - j)) > band_radius)
            return false;
        return true;
    }
    bool row_is_valid(Index i) const { return !row_valid || row_valid->is_valid(i); }
};

// Row-wise masked softmax with max-subtraction. Masked entries are exactly
// zero in the output and receive exactly zero gradient. Rows that are valid
// but fully masked out are an error; rows flagged invalid yield zeros.
template <typename S>
Tensor<S> softmax_masked_rows(const Tensor<S>& x, const SoftmaxMask& mask) {
    const Index r = x.rows(), c = x.cols();
    Mat<S> out = Mat<S>::Zero(r, c);
    std::vector<std::uint8_t> row_active(static_cast<std::size_t>(r), 0);
    for (Index i = 0; i < r; ++i) {
        if (!mask.row_is_valid(i)) continue;
        row_active[static_cast<std::size_t>(i)] = 1;
        S mx = std::numeric_limits<S>::lowest();
        bool any = false;
        for (Index j = 0; j < c; ++j) {
            if (!mask.pair_valid(i, j)) continue;
            any = true;
            mx = std::max(mx, x.value()(i, j));
        }
        if (!any)
            throw NumericError("softmax: fully masked row " + std::to_string(i));
        S denom = S(0);
        for (Index j = 0; j < c; ++j) {
            if (!mask.pair_valid(i, j)) continue;
            const S e = std::exp(x.value()(i, j) - mx);
            out(i, j) = e;
            denom += e;
        }
        for (Index j = 0; j < c; ++j)
            if (mask.pair_valid(i, j)) out(i, j) /= denom;
    }
    auto xn = x.node();
    return Tensor<S>::make_op(
        std::move(out), {x},
        [xn, row_active = std::move(row_active)](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const Mat<S>& y = self.value;
            const Mat<S>& gy = self.grad;
            for (Index i = 0; i < y.rows(); ++i) {
                if (!row_active[static_cast<std::size_t>(i)]) continue;
                const S dot = y.row(i).dot(gy.row(i));
                // zero entries contribute nothing and receive nothing
                xn->grad.row(i) += y.row(i).cwiseProduct(
                    (gy.row(i).array() - dot).matrix());
            }
        });
}

// Softmax along an axis (1: across columns within each row, 0: across rows
// within each column), optionally restricted to valid positions on that axis.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis, const AttentionMask* mask = nullptr) {
    if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
    if (axis == 0) return transpose(softmax(transpose(x), 1, mask));
    if (mask && mask->length() != x.cols()) throw ShapeError("softmax: mask length mismatch");
    SoftmaxMask m;
    m.col_valid = mask;
    return softmax_masked_rows(x, m);
}

// ---------------------------------------------------------------------------
// Layer norm (row-wise, population variance, then affine)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-5)) {
    if (eps <= S(0)) throw ConfigError("layer_norm: eps must be positive");
    const Index r = x.rows(), c = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c)
        throw ShapeError("layer_norm: gamma/beta must be 1x" + std::to_string(c));
    Mat<S> xhat(r, c);
    Mat<S> inv_sd(r, 1);
    for (Index i = 0; i < r; ++i) {
        const S mu = x.value().row(i).mean();
        const S var = (x.value().row(i).array() - mu).square().mean();
        const S isd = S(1) / std::sqrt(var + eps);
        inv_sd(i, 0) = isd;
        xhat.row(i) = (x.value().row(i).array() - mu) * isd;
    }
    Mat<S> out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                 beta.value().row(0).array();
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return Tensor<S>::make_op(
        std::move(out), {x, gamma, beta},
        [xn, gn, bn, xhat = std::move(xhat), inv_sd = std::move(inv_sd)](
            typename Tensor<S>::Node& self) {
            const Mat<S>& gy = self.grad;
            const Index rr = gy.rows(), cc = gy.cols();
            if (gn->requires_grad) {
                gn->ensure_grad();
                gn->grad.row(0) += (gy.array() * xhat.array()).colwise().sum().matrix();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                bn->grad.row(0) += gy.colwise().sum();
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (Index i = 0; i < rr; ++i) {
                    Eigen::Array<S, 1, Eigen::Dynamic> gh =
                        gy.row(i).array() * gn->value.row(0).array();
                    const S mean_gh = gh.mean();
                    const S mean_ghx = (gh * xhat.row(i).array()).mean();
                    xn->grad.row(i) +=
                        ((gh - mean_gh - xhat.row(i).array() * mean_ghx) * inv_sd(i, 0))
                            .matrix() *
                        S(1);
                    (void)cc;
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Temporal convolution, zero-padded ("same"), output length ceil(T/stride).
// taps[k] is the D_in x D_out weight for kernel offset k; the window is
// centered: input index = t*stride + k - (K-1)/2.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const std::vector<Tensor<S>>& taps,
                 const Tensor<S>* bias, Index stride) {
    if (stride < 1) throw ConfigError("conv1d: stride must be >= 1");
    if (taps.empty()) throw ShapeError("conv1d: no taps");
    const Index k_size = static_cast<Index>(taps.size());
    const Index t_in = x.rows(), d_in = x.cols();
    const Index d_out = taps.front().cols();
    for (const auto& w : taps)
        if (w.rows() != d_in || w.cols() != d_out) throw ShapeError("conv1d: tap shape mismatch");
    const Index pad = (k_size - 1) / 2;
    const Index t_out = (t_in + stride - 1) / stride;

    Mat<S> out = Mat<S>::Zero(t_out, d_out);
    for (Index t = 0; t < t_out; ++t) {
        for (Index k = 0; k < k_size; ++k) {
            const Index i = t * stride + k - pad;
            if (i < 0 || i >= t_in) continue;
            out.row(t).noalias() += x.value().row(i) * taps[static_cast<std::size_t>(k)].value();
        }
    }
    if (bias) {
        if (bias->rows() != 1 || bias->cols() != d_out) throw ShapeError("conv1d: bias shape");
        out.rowwise() += bias->value().row(0);
    }

    std::vector<Tensor<S>> parents;
    parents.push_back(x);
    for (const auto& w : taps) parents.push_back(w);
    if (bias) parents.push_back(*bias);

    auto xn = x.node();
    std::vector<typename Tensor<S>::NodePtr> wn;
    for (const auto& w : taps) wn.push_back(w.node());
    typename Tensor<S>::NodePtr bn = bias ? bias->node() : nullptr;

    return Tensor<S>::make_op(
        std::move(out), std::move(parents),
        [xn, wn, bn, stride, pad, t_in, k_size](typename Tensor<S>::Node& self) {
            const Mat<S>& gy = self.grad;
            if (xn->requires_grad) xn->ensure_grad();
            for (auto& w : wn)
                if (w->requires_grad) w->ensure_grad();
            for (Index t = 0; t < gy.rows(); ++t) {
                for (Index k = 0; k < k_size; ++k) {
                    const Index i = t * stride + k - pad;
                    if (i < 0 || i >= t_in) continue;
                    auto& w = wn[static_cast<std::size_t>(k)];
                    if (xn->requires_grad)
                        xn->grad.row(i).noalias() += gy.row(t) * w->value.transpose();
                    if (w->requires_grad)
                        w->grad.noalias() += xn->value.row(i).transpose() * gy.row(t);
                }
            }
            if (bn && bn->requires_grad) {
                bn->ensure_grad();
                bn->grad.row(0) += gy.colwise().sum();
            }
        });
}

template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const std::vector<Tensor<S>>& taps, Index stride) {
    return conv1d(x, taps, static_cast<const Tensor<S>*>(nullptr), stride);
}

// Inverted dropout. p == 0 is the identity; training code keeps it at 0 when
// determinism is required.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, Rng& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw ConfigError("dropout: p must be < 1");
    Mat<S> keep(x.rows(), x.cols());
    const S inv = static_cast<S>(1.0 / (1.0 - p));
    for (Index i = 0; i < x.rows(); ++i)
        for (Index j = 0; j < x.cols(); ++j) keep(i, j) = rng.uniform() < p ? S(0) : inv;
    Tensor<S> mask(std::move(keep), false);
    return mul(x, mask);
}

}  // namespace ovg
