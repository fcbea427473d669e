#pragma once

// Tape-based reverse-mode automatic differentiation over dense float64
// tensors. A Tape records every primitive executed through the free
// functions below; Tape::backward replays the recorded nodes in reverse
// order and returns exact gradients for every node, leaves included.
//
// Tensors are row-major. Most primitives work on rank-2 tensors; the
// elementwise ones accept any shape. A scalar has the empty shape {}.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ugrn/common.hpp"

namespace ugrn::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t k = 0; k < s.size(); ++k) os << (k ? "," : "") << s[k];
    os << ']';
    return os.str();
}

/// BCE clamps probabilities into [eps, 1 - eps].
inline constexpr double kBceEps = 1e-12;

struct Tensor {
    Shape shape;
    std::vector<double> values;
    /// Tape handle when the tensor is the value of a recorded node.
    std::optional<std::size_t> node;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        if (shape_size(shape) != values.size())
            throw ShapeError("tensor shape " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    }

    static Tensor zeros(Shape s) {
        const auto n = shape_size(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }
    static Tensor filled(Shape s, double v) {
        const auto n = shape_size(s);
        return Tensor(std::move(s), std::vector<double>(n, v));
    }
    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor vector(std::vector<double> v) {
        const auto n = v.size();
        return Tensor({n}, std::move(v));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
        return Tensor({rows, cols}, std::move(v));
    }

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }
    double item() const {
        if (values.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape));
        return values[0];
    }
    double& at(std::size_t i, std::size_t j) { return values[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return values[i * shape[1] + j]; }
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
  public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }

  private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Zero-initialised gradient buffers indexed by node id.
class GradBuffers {
  public:
    explicit GradBuffers(const Tape& tape);

    std::vector<double>& acc(std::size_t id);
    bool has(std::size_t id) const { return !buf_[id].empty(); }
    std::vector<double>& raw(std::size_t id) { return buf_[id]; }
    const std::vector<double>& raw(std::size_t id) const { return buf_[id]; }

  private:
    const Tape* tape_;
    std::vector<std::vector<double>> buf_;
};

using BackwardFn = std::function<void(const std::vector<double>& grad_out, GradBuffers& grads)>;

/// Result of Tape::backward: gradients for every node on the loss's ancestry.
class Gradients {
  public:
    Gradients(const Tape& tape, GradBuffers buffers) : tape_(&tape), buffers_(std::move(buffers)) {}

    /// Gradient with respect to v; zeros if v does not influence the loss.
    Tensor wrt(const Var& v) const;
    Tensor wrt(std::size_t node_id) const;

  private:
    const Tape* tape_;
    GradBuffers buffers_;
};

class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor t, bool requires_grad = true) {
        return push(std::move(t), {}, requires_grad, nullptr);
    }
    Var constant(Tensor t) { return leaf(std::move(t), false); }

    /// When disabled, primitives still compute values but record no
    /// backward closures (inference mode).
    void set_recording(bool on) { recording_ = on; }
    bool recording() const { return recording_; }

    std::size_t size() const { return nodes_.size(); }
    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

    /// Reverse-mode sweep from a scalar loss. Nodes are visited exactly once,
    /// in strict reverse tape order, so repeated calls are bitwise identical.
    Gradients backward(const Var& loss) const {
        if (loss.tape() != this) throw UserError("backward: loss is not on this tape");
        if (loss.id() >= nodes_.size()) throw UserError("backward: unknown node");
        const auto& lv = nodes_[loss.id()].value;
        if (lv.size() != 1)
            throw ShapeError("backward: loss must be scalar, got shape " + shape_str(lv.shape));
        GradBuffers grads(*this);
        grads.acc(loss.id())[0] = 1.0;
        for (std::size_t k = loss.id() + 1; k-- > 0;) {
            const auto& node = nodes_[k];
            if (!node.requires_grad || !grads.has(k) || !node.backward) continue;
            node.backward(grads.raw(k), grads);
        }
        return Gradients(*this, std::move(grads));
    }

    /// Records a node. Used by the primitives; the closure is dropped when
    /// recording is off or no input needs a gradient.
    Var push(Tensor value, std::vector<std::size_t> inputs, bool requires_grad, BackwardFn fn) {
        Node node;
        node.value = std::move(value);
        node.value.node = nodes_.size();
        node.requires_grad = requires_grad;
        if (recording_ && requires_grad) {
            node.inputs = std::move(inputs);
            node.backward = std::move(fn);
        }
        nodes_.push_back(std::move(node));
        return Var(this, nodes_.size() - 1);
    }

  private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
    bool recording_ = true;
};

inline const Tensor& Var::value() const {
    if (!tape_) throw UserError("unbound Var");
    return tape_->value(id_);
}

inline GradBuffers::GradBuffers(const Tape& tape) : tape_(&tape), buf_(tape.size()) {}

inline std::vector<double>& GradBuffers::acc(std::size_t id) {
    auto& b = buf_[id];
    if (b.empty()) b.assign(tape_->value(id).size(), 0.0);
    return b;
}

inline Tensor Gradients::wrt(std::size_t node_id) const {
    const auto& v = tape_->value(node_id);
    if (node_id < tape_->size() && buffers_.has(node_id)) return Tensor(v.shape, buffers_.raw(node_id));
    return Tensor::zeros(v.shape);
}

inline Tensor Gradients::wrt(const Var& v) const {
    if (v.tape() != tape_) throw UserError("gradient requested for a node on another tape");
    return wrt(v.id());
}

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
    if (!a.tape() || a.tape() != b.tape()) throw UserError("operands live on different tapes");
    return *a.tape();
}

inline bool needs(const Var& v) { return v.tape()->requires_grad(v.id()); }

inline void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

// c(m x n) += a(m x k) * b(k x n)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c(m x k) += a(m x n) * b(k x n)^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        double* ci = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* bp = b + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += ai[j] * bp[j];
            ci[p] += s;
        }
    }
}

// c(k x n) += a(m x k)^T * b(m x n)
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

inline Var matmul(const Var& a, const Var& b) {
    Tape& tape = detail::same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    detail::require_rank2(av, "matmul");
    detail::require_rank2(bv, "matmul");
    if (av.cols() != bv.rows())
        throw ShapeError("matmul: inner extents differ " + shape_str(av.shape) + " x " + shape_str(bv.shape));
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor out = Tensor::zeros({m, n});
    detail::gemm_nn(av.values.data(), bv.values.data(), out.values.data(), m, k, n);
    const bool ga = detail::needs(a), gb = detail::needs(b);
    const std::size_t ia = a.id(), ib = b.id();
    return tape.push(std::move(out), {ia, ib}, ga || gb,
                     [&tape, ia, ib, ga, gb, m, k, n](const std::vector<double>& g, GradBuffers& grads) {
                         if (ga)
                             detail::gemm_nt(g.data(), tape.value(ib).values.data(), grads.acc(ia).data(), m, n, k);
                         if (gb)
                             detail::gemm_tn(tape.value(ia).values.data(), g.data(), grads.acc(ib).data(), m, k, n);
                     });
}

namespace detail {

template <class Fwd, class Da, class Db>
Var binary_elementwise(const Var& a, const Var& b, const char* name, Fwd fwd, Da da, Db db) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same_shape(av, bv, name);
    Tensor out(av.shape, std::vector<double>(av.size()));
    for (std::size_t k = 0; k < av.size(); ++k) out.values[k] = fwd(av.values[k], bv.values[k]);
    const bool ga = needs(a), gb = needs(b);
    const std::size_t ia = a.id(), ib = b.id();
    return tape.push(std::move(out), {ia, ib}, ga || gb,
                     [&tape, ia, ib, ga, gb, da, db](const std::vector<double>& g, GradBuffers& grads) {
                         const auto& x = tape.value(ia).values;
                         const auto& y = tape.value(ib).values;
                         if (ga) {
                             auto& acc = grads.acc(ia);
                             for (std::size_t k = 0; k < g.size(); ++k) acc[k] += g[k] * da(x[k], y[k]);
                         }
                         if (gb) {
                             auto& acc = grads.acc(ib);
                             for (std::size_t k = 0; k < g.size(); ++k) acc[k] += g[k] * db(x[k], y[k]);
                         }
                     });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
    return detail::binary_elementwise(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
    return detail::binary_elementwise(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
    return detail::binary_elementwise(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

/// a (m x n) plus a row vector of n values broadcast over rows.
inline Var add_row(const Var& a, const Var& bias) {
    Tape& tape = detail::same_tape(a, bias);
    const Tensor& av = a.value();
    const Tensor& bv = bias.value();
    detail::require_rank2(av, "add_row");
    const std::size_t m = av.rows(), n = av.cols();
    if (bv.size() != n)
        throw ShapeError("add_row: bias " + shape_str(bv.shape) + " does not match columns of " + shape_str(av.shape));
    Tensor out = av;
    out.node.reset();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.values[i * n + j] += bv.values[j];
    const bool ga = detail::needs(a), gb = detail::needs(bias);
    const std::size_t ia = a.id(), ib = bias.id();
    return tape.push(std::move(out), {ia, ib}, ga || gb,
                     [ia, ib, ga, gb, m, n](const std::vector<double>& g, GradBuffers& grads) {
                         if (ga) {
                             auto& acc = grads.acc(ia);
                             for (std::size_t k = 0; k < g.size(); ++k) acc[k] += g[k];
                         }
                         if (gb) {
                             auto& acc = grads.acc(ib);
                             for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) acc[j] += g[i * n + j];
                         }
                     });
}

namespace detail {

template <class Fwd, class Deriv>
Var unary_elementwise(const Var& a, Fwd fwd, Deriv deriv) {
    Tape& tape = *a.tape();
    const Tensor& av = a.value();
    Tensor out(av.shape, std::vector<double>(av.size()));
    for (std::size_t k = 0; k < av.size(); ++k) out.values[k] = fwd(av.values[k]);
    const std::size_t ia = a.id();
    const std::size_t io = tape.size();
    return tape.push(std::move(out), {ia}, needs(a),
                     [&tape, ia, io, deriv](const std::vector<double>& g, GradBuffers& grads) {
                         const auto& x = tape.value(ia).values;
                         const auto& y = tape.value(io).values;
                         auto& acc = grads.acc(ia);
                         for (std::size_t k = 0; k < g.size(); ++k) acc[k] += g[k] * deriv(x[k], y[k]);
                     });
}

}  // namespace detail

inline Var scale(const Var& a, double c) {
    return detail::unary_elementwise(
        a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

/// Subgradient at 0 is 0.
inline Var relu(const Var& a) {
    return detail::unary_elementwise(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(const Var& a) {
    return detail::unary_elementwise(
        a, [](double x) { return detail::stable_sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var reshape(const Var& a, Shape shape) {
    Tape& tape = *a.tape();
    const Tensor& av = a.value();
    if (shape_size(shape) != av.size())
        throw ShapeError("reshape: " + shape_str(av.shape) + " -> " + shape_str(shape));
    Tensor out(std::move(shape), av.values);
    const std::size_t ia = a.id();
    return tape.push(std::move(out), {ia}, detail::needs(a), [ia](const std::vector<double>& g, GradBuffers& grads) {
        auto& acc = grads.acc(ia);
        for (std::size_t k = 0; k < g.size(); ++k) acc[k] += g[k];
    });
}

inline Var transpose(const Var& a) {
    Tape& tape = *a.tape();
    const Tensor& av = a.value();
    detail::require_rank2(av, "transpose");
    const std::size_t m = av.rows(), n = av.cols();
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.values[j * m + i] = av.values[i * n + j];
    const std::size_t ia = a.id();
    return tape.push(std::move(out), {ia}, detail::needs(a), [ia, m, n](const std::vector<double>& g, GradBuffers& grads) {
        auto& acc = grads.acc(ia);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) acc[i * n + j] += g[j * m + i];
    });
}

/// Columns [start, start + count) of a rank-2 tensor.
inline Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
    Tape& tape = *a.tape();
    const Tensor& av = a.value();
    detail::require_rank2(av, "slice_cols");
    const std::size_t m = av.rows(), n = av.cols();
    if (start + count > n)
        throw ShapeError("slice_cols: [" + std::to_string(start) + "," + std::to_string(start + count) +
                         ") out of " + shape_str(av.shape));
    Tensor out = Tensor::zeros({m, count});
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(av.values.begin() + static_cast<std::ptrdiff_t>(i * n + start), count,
                    out.values.begin() + static_cast<std::ptrdiff_t>(i * count));
    const std::size_t ia = a.id();
    return tape.push(std::move(out), {ia}, detail::needs(a),
                     [ia, m, n, start, count](const std::vector<double>& g, GradBuffers& grads) {
                         auto& acc = grads.acc(ia);
                         for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < count; ++j) acc[i * n + start + j] += g[i * count + j];
                     });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    Tape& tape = *parts.front().tape();
    const std::size_t m = parts.front().value().rows();
    std::vector<std::size_t> widths, ids;
    bool any = false;
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::same_tape(parts.front(), p);
        const auto& v = p.value();
        detail::require_rank2(v, "concat_cols");
        if (v.rows() != m) throw ShapeError("concat_cols: row counts differ");
        widths.push_back(v.cols());
        ids.push_back(p.id());
        total += v.cols();
        any = any || detail::needs(p);
    }
    Tensor out = Tensor::zeros({m, total});
    std::size_t off = 0;
    for (std::size_t q = 0; q < parts.size(); ++q) {
        const auto& v = parts[q].value();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < widths[q]; ++j) out.values[i * total + off + j] = v.values[i * widths[q] + j];
        off += widths[q];
    }
    return tape.push(std::move(out), ids, any,
                     [&tape, ids, widths, m, total](const std::vector<double>& g, GradBuffers& grads) {
                         std::size_t off = 0;
                         for (std::size_t q = 0; q < ids.size(); ++q) {
                             if (tape.requires_grad(ids[q])) {
                                 auto& acc = grads.acc(ids[q]);
                                 for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t j = 0; j < widths[q]; ++j)
                                         acc[i * widths[q] + j] += g[i * total + off + j];
                             }
                             off += widths[q];
                         }
                     });
}

/// Softmax over the last axis with max subtraction.
inline Var softmax_rows(const Var& a) {
    Tape& tape = *a.tape();
    const Tensor& av = a.value();
    if (av.rank() == 0) throw ShapeError("softmax_rows: scalar input");
    const std::size_t n = av.shape.back();
    const std::size_t m = n == 0 ? 0 : av.size() / n;
    Tensor out(av.shape, std::vector<double>(av.size()));
    for (std::size_t i = 0; i < m; ++i) {
        const double* x = av.values.data() + i * n;
        double* y = out.values.data() + i * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) y[j] /= s;
    }
    const std::size_t ia = a.id();
    const std::size_t io = tape.size();
    return tape.push(std::move(out), {ia}, detail::needs(a),
                     [&tape, ia, io, m, n](const std::vector<double>& g, GradBuffers& grads) {
                         const auto& y = tape.value(io).values;
                         auto& acc = grads.acc(ia);
                         for (std::size_t i = 0; i < m; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                             for (std::size_t j = 0; j < n; ++j)
                                 acc[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                         }
                     });
}

/// Layer normalisation over the last axis of a rank-2 tensor, followed by
/// an elementwise affine map with gamma and beta (n values each).
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
    Tape& tape = detail::same_tape(x, gamma);
    detail::same_tape(x, beta);
    const Tensor& xv = x.value();
    detail::require_rank2(xv, "layer_norm");
    const std::size_t m = xv.rows(), n = xv.cols();
    if (gamma.value().size() != n || beta.value().size() != n)
        throw ShapeError("layer_norm: affine parameters must have " + std::to_string(n) + " values");
    const auto& gv = gamma.value().values;
    const auto& bv = beta.value().values;
    std::vector<double> xhat(m * n), inv(m);
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* r = xv.values.data() + i * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += r[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (r[j] - mu) * (r[j] - mu);
        var /= static_cast<double>(n);
        inv[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (r[j] - mu) * inv[i];
            out.values[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
        }
    }
    const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
    const bool gx = detail::needs(x), gg = detail::needs(gamma), gb = detail::needs(beta);
    return tape.push(
        std::move(out), {ix, ig, ib}, gx || gg || gb,
        [&tape, ix, ig, ib, gx, gg, gb, m, n, xhat = std::move(xhat), inv = std::move(inv)](
            const std::vector<double>& g, GradBuffers& grads) {
            const auto& gam = tape.value(ig).values;
            if (gg) {
                auto& acc = grads.acc(ig);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) acc[j] += g[i * n + j] * xhat[i * n + j];
            }
            if (gb) {
                auto& acc = grads.acc(ib);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) acc[j] += g[i * n + j];
            }
            if (gx) {
                auto& acc = grads.acc(ix);
                const double nn = static_cast<double>(n);
                for (std::size_t i = 0; i < m; ++i) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double d = g[i * n + j] * gam[j];
                        s1 += d;
                        s2 += d * xhat[i * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        const double d = g[i * n + j] * gam[j];
                        acc[i * n + j] += inv[i] / nn * (nn * d - s1 - xhat[i * n + j] * s2);
                    }
                }
            }
        });
}

/// Rows of a rank-2 table selected by integer index (embedding lookup).
inline Var gather_rows(const Var& table, std::vector<std::size_t> indices) {
    Tape& tape = *table.tape();
    const Tensor& tv = table.value();
    detail::require_rank2(tv, "gather_rows");
    const std::size_t rows = tv.rows(), d = tv.cols();
    Tensor out = Tensor::zeros({indices.size(), d});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= rows)
            throw ShapeError("gather_rows: index " + std::to_string(indices[r]) + " outside table of " +
                             std::to_string(rows) + " rows");
        std::copy_n(tv.values.begin() + static_cast<std::ptrdiff_t>(indices[r] * d), d,
                    out.values.begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    const std::size_t it = table.id();
    return tape.push(std::move(out), {it}, detail::needs(table),
                     [it, d, indices = std::move(indices)](const std::vector<double>& g, GradBuffers& grads) {
                         auto& acc = grads.acc(it);
                         for (std::size_t r = 0; r < indices.size(); ++r)
                             for (std::size_t j = 0; j < d; ++j) acc[indices[r] * d + j] += g[r * d + j];
                     });
}

/// Single element (by flat index) as a scalar.
inline Var pick(const Var& a, std::size_t flat) {
    Tape& tape = *a.tape();
    const Tensor& av = a.value();
    if (flat >= av.size())
        throw ShapeError("pick: index " + std::to_string(flat) + " outside " + shape_str(av.shape));
    const std::size_t ia = a.id();
    return tape.push(Tensor::scalar(av.values[flat]), {ia}, detail::needs(a),
                     [ia, flat](const std::vector<double>& g, GradBuffers& grads) { grads.acc(ia)[flat] += g[0]; });
}

inline Var sum(const Var& a) {
    Tape& tape = *a.tape();
    const Tensor& av = a.value();
    double s = 0.0;
    for (double v : av.values) s += v;
    const std::size_t ia = a.id();
    return tape.push(Tensor::scalar(s), {ia}, detail::needs(a), [ia](const std::vector<double>& g, GradBuffers& grads) {
        auto& acc = grads.acc(ia);
        for (auto& v : acc) v += g[0];
    });
}

inline Var mean(const Var& a) {
    const auto n = a.value().size();
    if (n == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

/// Mean squared error against a constant target of the same shape.
inline Var mse(const Var& pred, const Tensor& target) {
    Tape& tape = *pred.tape();
    const Tensor& pv = pred.value();
    if (pv.size() != target.size())
        throw ShapeError("mse: prediction " + shape_str(pv.shape) + " vs target " + shape_str(target.shape));
    if (pv.size() == 0) throw ShapeError("mse of empty tensor");
    const double n = static_cast<double>(pv.size());
    double s = 0.0;
    for (std::size_t k = 0; k < pv.size(); ++k) {
        const double d = pv.values[k] - target.values[k];
        s += d * d;
    }
    const std::size_t ip = pred.id();
    return tape.push(Tensor::scalar(s / n), {ip}, detail::needs(pred),
                     [&tape, ip, n, t = target.values](const std::vector<double>& g, GradBuffers& grads) {
                         const auto& p = tape.value(ip).values;
                         auto& acc = grads.acc(ip);
                         for (std::size_t k = 0; k < p.size(); ++k) acc[k] += g[0] * 2.0 * (p[k] - t[k]) / n;
                     });
}

/// Mean binary cross-entropy of probabilities against {0,1} labels, with
/// probabilities clamped to [kBceEps, 1 - kBceEps].
inline Var bce(const Var& prob, const Tensor& labels) {
    Tape& tape = *prob.tape();
    const Tensor& pv = prob.value();
    if (pv.size() != labels.size())
        throw ShapeError("bce: probabilities " + shape_str(pv.shape) + " vs labels " + shape_str(labels.shape));
    if (pv.size() == 0) throw ShapeError("bce of empty tensor");
    const double n = static_cast<double>(pv.size());
    double s = 0.0;
    for (std::size_t k = 0; k < pv.size(); ++k) {
        const double p = std::clamp(pv.values[k], kBceEps, 1.0 - kBceEps);
        const double y = labels.values[k];
        s -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
    const std::size_t ip = prob.id();
    return tape.push(Tensor::scalar(s / n), {ip}, detail::needs(prob),
                     [&tape, ip, n, y = labels.values](const std::vector<double>& g, GradBuffers& grads) {
                         const auto& pr = tape.value(ip).values;
                         auto& acc = grads.acc(ip);
                         for (std::size_t k = 0; k < pr.size(); ++k) {
                             const double raw = pr[k];
                             if (raw < kBceEps || raw > 1.0 - kBceEps) continue;  // flat outside the clamp
                             acc[k] += g[0] * (-y[k] / raw + (1.0 - y[k]) / (1.0 - raw)) / n;
                         }
                     });
}

/// sum_k w_k * bce_k / sum_k w_k, with the same clamp as bce.
inline Var weighted_bce(const Var& prob, const Tensor& labels, const Tensor& weights) {
    Tape& tape = *prob.tape();
    const Tensor& pv = prob.value();
    if (pv.size() != labels.size() || pv.size() != weights.size())
        throw ShapeError("weighted_bce: probabilities " + shape_str(pv.shape) + " vs labels " + shape_str(labels.shape) +
                         " vs weights " + shape_str(weights.shape));
    if (pv.size() == 0) throw ShapeError("bce of empty tensor");
    double total = 0.0, s = 0.0;
    for (std::size_t k = 0; k < pv.size(); ++k) {
        if (!(weights.values[k] >= 0.0)) throw UserError("bce weights must be >= 0");
        total += weights.values[k];
        const double p = std::clamp(pv.values[k], kBceEps, 1.0 - kBceEps);
        const double y = labels.values[k];
        s -= weights.values[k] * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    }
    if (!(total > 0.0)) throw UserError("bce weights sum to zero");
    const std::size_t ip = prob.id();
    return tape.push(Tensor::scalar(s / total), {ip}, detail::needs(prob),
                     [&tape, ip, total, y = labels.values, w = weights.values](const std::vector<double>& g, GradBuffers& grads) {
                         const auto& pr = tape.value(ip).values;
                         auto& acc = grads.acc(ip);
                         for (std::size_t k = 0; k < pr.size(); ++k) {
                             const double raw = pr[k];
                             if (raw < kBceEps || raw > 1.0 - kBceEps) continue;
                             acc[k] += g[0] * w[k] * (-y[k] / raw + (1.0 - y[k]) / (1.0 - raw)) / total;
                         }
                     });
}

}  // namespace ugrn::ad
