#pragma once

// Dense row-major tensors with reverse-mode autodiff on an append-only tape.
// Scalar type is a template parameter: float is the production instantiation
// (with 64-bit accumulation in matmul and reductions), double backs the
// finite-difference oracles in the test suite.

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace mulan {

template <class R>
class TapeT;

template <class R>
struct TensorT {
    std::vector<int> shape;
    std::shared_ptr<std::vector<R>> data;
    TapeT<R>* tape = nullptr;
    int node = -1;

    TensorT() : data(std::make_shared<std::vector<R>>()) {}

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension");
            n *= d;
        }
        return n;
    }

    static TensorT zeros(std::vector<int> s) {
        TensorT t;
        t.shape = std::move(s);
        t.data = std::make_shared<std::vector<R>>(static_cast<size_t>(numel_of(t.shape)), R(0));
        return t;
    }

    static TensorT full(std::vector<int> s, R v) {
        TensorT t = zeros(std::move(s));
        for (auto& x : *t.data) x = v;
        return t;
    }

    static TensorT scalar(R v) { return full({1}, v); }

    static TensorT from(std::vector<int> s, std::vector<R> vals) {
        if (numel_of(s) != static_cast<int64_t>(vals.size()))
            throw std::invalid_argument("tensor: shape/data size mismatch");
        TensorT t;
        t.shape = std::move(s);
        t.data = std::make_shared<std::vector<R>>(std::move(vals));
        return t;
    }

    int64_t size() const { return static_cast<int64_t>(data->size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i < 0 ? i + ndim() : i)]; }
    bool tracked() const { return tape != nullptr && node >= 0; }

    R& operator[](int64_t i) { return (*data)[static_cast<size_t>(i)]; }
    R operator[](int64_t i) const { return (*data)[static_cast<size_t>(i)]; }
    R& at(int i, int j) { return (*data)[static_cast<size_t>(i) * shape.back() + j]; }
    R at(int i, int j) const { return (*data)[static_cast<size_t>(i) * shape.back() + j]; }

    R value() const {
        if (size() != 1) throw std::runtime_error("tensor: value() on non-scalar");
        return (*data)[0];
    }

    // deep copy of the buffer; drops tape association
    TensorT clone() const {
        TensorT t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<R>>(*data);
        return t;
    }

    TensorT detached() const {
        TensorT t = *this;
        t.tape = nullptr;
        t.node = -1;
        return t;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

namespace detail {

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

template <class R>
void check_finite(const std::vector<R>& v, const char* op) {
    for (R x : v)
        if (!std::isfinite(static_cast<double>(x)))
            throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
}

// Broadcast rule: equal shapes, a size-1 operand (scalar), or one shape being
// a trailing suffix of the other. Nothing more general is supported.
inline bool is_suffix(const std::vector<int>& small_, const std::vector<int>& big) {
    // [1,...,1,s...] counts as the trailing suffix [s...]
    std::vector<int> small = small_;
    while (!small.empty() && small.front() == 1) small.erase(small.begin());
    if (small.size() > big.size()) return false;
    for (size_t i = 0; i < small.size(); ++i)
        if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
    return true;
}

// Validates compatibility and returns the output shape: the operand with more
// elements wins; on ties the higher-rank shape is kept.
inline std::vector<int> broadcast_shape(const std::vector<int>& a, const std::vector<int>& b, const char* op) {
    int64_t na = 1, nb = 1;
    for (int d : a) na *= d;
    for (int d : b) nb *= d;
    const bool ok = (a == b) || na == 1 || nb == 1 || is_suffix(a, b) || is_suffix(b, a);
    if (!ok)
        throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                                    " are not broadcast-compatible");
    if (na != nb) return na > nb ? a : b;
    return a.size() >= b.size() ? a : b;
}

}  // namespace detail

template <class R>
class TapeT {
  public:
    using BackFn = std::function<void(const TensorT<R>& gout, TapeT<R>& tape)>;

    struct Node {
        BackFn back;          // empty for leaves
        std::vector<int> out_shape;
    };

    // Registers an existing tensor as a tracked leaf (shares its buffer).
    TensorT<R> leaf(const TensorT<R>& v) {
        TensorT<R> t = v;
        t.tape = this;
        t.node = add_node(BackFn{}, t.shape);
        return t;
    }

    int add_node(BackFn fn, const std::vector<int>& out_shape) {
        nodes_.push_back(Node{std::move(fn), out_shape});
        return static_cast<int>(nodes_.size()) - 1;
    }

    void accumulate(int node, const TensorT<R>& g) {
        auto& slot = grads_[static_cast<size_t>(node)];
        if (slot.size() == 0) {
            slot = g.clone();
        } else {
            if (slot.shape != g.shape) throw std::runtime_error("tape: gradient shape mismatch");
            for (int64_t i = 0; i < g.size(); ++i) (*slot.data)[static_cast<size_t>(i)] += (*g.data)[static_cast<size_t>(i)];
        }
    }

    // Reverse sweep from a scalar root (seeds 1).
    void backward(const TensorT<R>& root) {
        if (root.size() != 1) throw std::runtime_error("backward: root must be scalar");
        backward_seed(root, TensorT<R>::scalar(R(1)));
    }

    // Reverse sweep with an explicit cotangent; reusable on one tape.
    void backward_seed(const TensorT<R>& root, const TensorT<R>& cotangent) {
        if (root.tape != this || root.node < 0) throw std::runtime_error("backward: root not on this tape");
        if (cotangent.shape != root.shape) throw std::runtime_error("backward: cotangent shape mismatch");
        grads_.assign(nodes_.size(), TensorT<R>{});
        grads_[static_cast<size_t>(root.node)] = cotangent.clone();
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            auto& g = grads_[static_cast<size_t>(i)];
            if (g.size() == 0) continue;
            if (nodes_[static_cast<size_t>(i)].back) nodes_[static_cast<size_t>(i)].back(g, *this);
        }
    }

    // Gradient of a tracked tensor after backward; zero tensor if untouched.
    TensorT<R> grad(const TensorT<R>& t) const {
        if (t.tape != this || t.node < 0) throw std::runtime_error("grad: tensor not on this tape");
        const auto& g = grads_[static_cast<size_t>(t.node)];
        if (g.size() == 0) return TensorT<R>::zeros(t.shape);
        return g;
    }

    size_t node_count() const { return nodes_.size(); }

  private:
    std::vector<Node> nodes_;
    std::vector<TensorT<R>> grads_;
};

using Tape = TapeT<float>;
using TapeD = TapeT<double>;

namespace detail {

template <class R>
TapeT<R>* tape_of(std::initializer_list<const TensorT<R>*> ins) {
    TapeT<R>* t = nullptr;
    for (const auto* p : ins) {
        if (!p->tracked()) continue;
        if (t && t != p->tape) throw std::runtime_error("op: inputs live on different tapes");
        t = p->tape;
    }
    return t;
}

template <class R>
TensorT<R> make_op(const char* name, std::vector<int> shape, std::vector<R> vals,
                   std::initializer_list<const TensorT<R>*> ins, typename TapeT<R>::BackFn back) {
    check_finite(vals, name);
    TensorT<R> out = TensorT<R>::from(std::move(shape), std::move(vals));
    if (TapeT<R>* tp = tape_of<R>(ins)) {
        out.tape = tp;
        out.node = tp->add_node(std::move(back), out.shape);
    }
    return out;
}

// Sums a gradient of `from` shape down to `to` shape (inverse of broadcast).
template <class R>
TensorT<R> reduce_to_shape(const TensorT<R>& g, const std::vector<int>& to) {
    if (g.shape == to) return g;
    TensorT<R> out = TensorT<R>::zeros(to);
    const int64_t nto = out.size();
    if (nto == g.size()) {  // same data, rank differs only by leading 1s
        *out.data = *g.data;
        return out;
    }
    if (nto == 1) {
        double acc = 0.0;
        for (int64_t i = 0; i < g.size(); ++i) acc += static_cast<double>((*g.data)[static_cast<size_t>(i)]);
        (*out.data)[0] = static_cast<R>(acc);
        return out;
    }
    // trailing-suffix case: sum over leading blocks with 64-bit accumulators
    std::vector<double> acc(static_cast<size_t>(nto), 0.0);
    for (int64_t i = 0; i < g.size(); ++i) acc[static_cast<size_t>(i % nto)] += static_cast<double>((*g.data)[static_cast<size_t>(i)]);
    for (int64_t i = 0; i < nto; ++i) (*out.data)[static_cast<size_t>(i)] = static_cast<R>(acc[static_cast<size_t>(i)]);
    return out;
}

template <class R, class FwdFn, class DaFn, class DbFn>
TensorT<R> binary_op(const char* name, const TensorT<R>& a, const TensorT<R>& b, FwdFn f, DaFn da, DbFn db) {
    const std::vector<int> oshape = broadcast_shape(a.shape, b.shape, name);
    const int64_t n = TensorT<R>::numel_of(oshape);
    const int64_t na = a.size(), nb = b.size();
    std::vector<R> vals(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        vals[static_cast<size_t>(i)] = f((*a.data)[static_cast<size_t>(i % na)], (*b.data)[static_cast<size_t>(i % nb)]);

    TensorT<R> av = a, bv = b;
    auto back = [av, bv, da, db, na, nb](const TensorT<R>& g, TapeT<R>& tp) {
        if (av.tracked()) {
            TensorT<R> ga = TensorT<R>::zeros(g.shape);
            for (int64_t i = 0; i < g.size(); ++i)
                (*ga.data)[static_cast<size_t>(i)] =
                    (*g.data)[static_cast<size_t>(i)] *
                    da((*av.data)[static_cast<size_t>(i % na)], (*bv.data)[static_cast<size_t>(i % nb)]);
            tp.accumulate(av.node, reduce_to_shape(ga, av.shape));
        }
        if (bv.tracked()) {
            TensorT<R> gb = TensorT<R>::zeros(g.shape);
            for (int64_t i = 0; i < g.size(); ++i)
                (*gb.data)[static_cast<size_t>(i)] =
                    (*g.data)[static_cast<size_t>(i)] *
                    db((*av.data)[static_cast<size_t>(i % na)], (*bv.data)[static_cast<size_t>(i % nb)]);
            tp.accumulate(bv.node, reduce_to_shape(gb, bv.shape));
        }
    };
    return make_op<R>(name, oshape, std::move(vals), {&a, &b}, std::move(back));
}

template <class R, class FwdFn, class DFn>
TensorT<R> unary_op(const char* name, const TensorT<R>& x, FwdFn f, DFn dfdx) {
    std::vector<R> vals(static_cast<size_t>(x.size()));
    for (int64_t i = 0; i < x.size(); ++i) vals[static_cast<size_t>(i)] = f((*x.data)[static_cast<size_t>(i)]);
    TensorT<R> xv = x;
    auto back = [xv, dfdx](const TensorT<R>& g, TapeT<R>& tp) {
        if (!xv.tracked()) return;
        TensorT<R> gx = TensorT<R>::zeros(xv.shape);
        for (int64_t i = 0; i < gx.size(); ++i)
            (*gx.data)[static_cast<size_t>(i)] = (*g.data)[static_cast<size_t>(i)] * dfdx((*xv.data)[static_cast<size_t>(i)]);
        tp.accumulate(xv.node, gx);
    };
    return make_op<R>(name, x.shape, std::move(vals), {&x}, std::move(back));
}

template <class R>
R sigmoid_scalar(R x) {
    if (x >= R(0)) {
        R e = std::exp(-x);
        return R(1) / (R(1) + e);
    }
    R e = std::exp(x);
    return e / (R(1) + e);
}

template <class R>
R softplus_scalar(R x) {
    // log(1 + e^x), stable on both tails
    if (x > R(0)) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

}  // namespace detail

// ---- elementwise binary ops (broadcast: equal | scalar | trailing suffix) ----

template <class R>
TensorT<R> add(const TensorT<R>& a, const TensorT<R>& b) {
    return detail::binary_op<R>(
        "add", a, b, [](R x, R y) { return x + y; }, [](R, R) { return R(1); }, [](R, R) { return R(1); });
}

template <class R>
TensorT<R> sub(const TensorT<R>& a, const TensorT<R>& b) {
    return detail::binary_op<R>(
        "sub", a, b, [](R x, R y) { return x - y; }, [](R, R) { return R(1); }, [](R, R) { return R(-1); });
}

template <class R>
TensorT<R> mul(const TensorT<R>& a, const TensorT<R>& b) {
    return detail::binary_op<R>(
        "mul", a, b, [](R x, R y) { return x * y; }, [](R, R y) { return y; }, [](R x, R) { return x; });
}

template <class R>
TensorT<R> div(const TensorT<R>& a, const TensorT<R>& b) {
    for (int64_t i = 0; i < b.size(); ++i)
        if (std::abs(static_cast<double>((*b.data)[static_cast<size_t>(i)])) < 1e-30)
            throw std::runtime_error("div: divisor magnitude below 1e-30");
    return detail::binary_op<R>(
        "div", a, b, [](R x, R y) { return x / y; }, [](R, R y) { return R(1) / y; },
        [](R x, R y) { return -x / (y * y); });
}

template <class R> TensorT<R> operator+(const TensorT<R>& a, const TensorT<R>& b) { return add(a, b); }
template <class R> TensorT<R> operator-(const TensorT<R>& a, const TensorT<R>& b) { return sub(a, b); }
template <class R> TensorT<R> operator*(const TensorT<R>& a, const TensorT<R>& b) { return mul(a, b); }
template <class R> TensorT<R> operator/(const TensorT<R>& a, const TensorT<R>& b) { return div(a, b); }

// ---- elementwise unary ops ----

template <class R>
TensorT<R> exp(const TensorT<R>& x) {
    return detail::unary_op<R>("exp", x, [](R v) { return std::exp(v); }, [](R v) { return std::exp(v); });
}

template <class R>
TensorT<R> expm1(const TensorT<R>& x) {
    return detail::unary_op<R>("expm1", x, [](R v) { return std::expm1(v); }, [](R v) { return std::exp(v); });
}

template <class R>
TensorT<R> log(const TensorT<R>& x) {
    return detail::unary_op<R>("log", x, [](R v) { return std::log(v); }, [](R v) { return R(1) / v; });
}

template <class R>
TensorT<R> sigmoid(const TensorT<R>& x) {
    return detail::unary_op<R>(
        "sigmoid", x, [](R v) { return detail::sigmoid_scalar(v); },
        [](R v) {
            R s = detail::sigmoid_scalar(v);
            return s * (R(1) - s);
        });
}

template <class R>
TensorT<R> softplus(const TensorT<R>& x) {
    return detail::unary_op<R>(
        "softplus", x, [](R v) { return detail::softplus_scalar(v); },
        [](R v) { return detail::sigmoid_scalar(v); });
}

template <class R>
TensorT<R> sqrt(const TensorT<R>& x) {
    return detail::unary_op<R>(
        "sqrt", x, [](R v) { return std::sqrt(v); }, [](R v) { return R(0.5) / std::sqrt(v); });
}

template <class R>
TensorT<R> square(const TensorT<R>& x) {
    return detail::unary_op<R>("square", x, [](R v) { return v * v; }, [](R v) { return R(2) * v; });
}

template <class R>
TensorT<R> neg(const TensorT<R>& x) {
    return detail::unary_op<R>("neg", x, [](R v) { return -v; }, [](R) { return R(-1); });
}

template <class R> TensorT<R> operator-(const TensorT<R>& x) { return neg(x); }

template <class R>
TensorT<R> swish(const TensorT<R>& x) {
    return detail::unary_op<R>(
        "swish", x, [](R v) { return v * detail::sigmoid_scalar(v); },
        [](R v) {
            R s = detail::sigmoid_scalar(v);
            return s * (R(1) + v * (R(1) - s));
        });
}

template <class R>
TensorT<R> sin(const TensorT<R>& x) {
    return detail::unary_op<R>("sin", x, [](R v) { return std::sin(v); }, [](R v) { return std::cos(v); });
}

template <class R>
TensorT<R> cos(const TensorT<R>& x) {
    return detail::unary_op<R>("cos", x, [](R v) { return std::cos(v); }, [](R v) { return -std::sin(v); });
}

// ---- matmul ----

namespace detail {

// C[m,n] = A[m,k] * B[k,n], 64-bit accumulation
template <class R>
std::vector<R> mm_nn(const std::vector<R>& a, const std::vector<R>& b, int m, int k, int n) {
    std::vector<double> acc(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double av = static_cast<double>(a[static_cast<size_t>(i) * k + p]);
            const R* brow = &b[static_cast<size_t>(p) * n];
            double* crow = &acc[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) crow[j] += av * static_cast<double>(brow[j]);
        }
    std::vector<R> out(static_cast<size_t>(m) * n);
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<R>(acc[i]);
    return out;
}

// C[m,n] = A[m,k] * B[n,k]^T
template <class R>
std::vector<R> mm_nt(const std::vector<R>& a, const std::vector<R>& b, int m, int k, int n) {
    std::vector<R> out(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            const R* arow = &a[static_cast<size_t>(i) * k];
            const R* brow = &b[static_cast<size_t>(j) * k];
            for (int p = 0; p < k; ++p) acc += static_cast<double>(arow[p]) * static_cast<double>(brow[p]);
            out[static_cast<size_t>(i) * n + j] = static_cast<R>(acc);
        }
    return out;
}

// C[m,n] = A[k,m]^T * B[k,n]
template <class R>
std::vector<R> mm_tn(const std::vector<R>& a, const std::vector<R>& b, int m, int k, int n) {
    std::vector<double> acc(static_cast<size_t>(m) * n, 0.0);
    for (int p = 0; p < k; ++p) {
        const R* arow = &a[static_cast<size_t>(p) * m];
        const R* brow = &b[static_cast<size_t>(p) * n];
        for (int i = 0; i < m; ++i) {
            const double av = static_cast<double>(arow[i]);
            double* crow = &acc[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) crow[j] += av * static_cast<double>(brow[j]);
        }
    }
    std::vector<R> out(static_cast<size_t>(m) * n);
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<R>(acc[i]);
    return out;
}

}  // namespace detail

template <class R>
TensorT<R> matmul(const TensorT<R>& a, const TensorT<R>& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw std::invalid_argument("matmul: operands must be rank 2");
    const int m = a.shape[0], k = a.shape[1], k2 = b.shape[0], n = b.shape[1];
    if (k != k2)
        throw std::invalid_argument("matmul: inner dimensions disagree " + detail::shape_str(a.shape) + " x " +
                                    detail::shape_str(b.shape));
    std::vector<R> vals = detail::mm_nn(*a.data, *b.data, m, k, n);
    TensorT<R> av = a, bv = b;
    auto back = [av, bv, m, k, n](const TensorT<R>& g, TapeT<R>& tp) {
        if (av.tracked()) {
            TensorT<R> ga = TensorT<R>::from({m, k}, detail::mm_nt(*g.data, *bv.data, m, n, k));
            tp.accumulate(av.node, ga);
        }
        if (bv.tracked()) {
            TensorT<R> gb = TensorT<R>::from({k, n}, detail::mm_tn(*av.data, *g.data, k, m, n));
            tp.accumulate(bv.node, gb);
        }
    };
    return detail::make_op<R>("matmul", {m, n}, std::move(vals), {&a, &b}, std::move(back));
}

// ---- reductions ----

namespace detail {

inline std::vector<int> normalize_axes(std::vector<int> axes, int ndim) {
    for (auto& a : axes) {
        if (a < 0) a += ndim;
        if (a < 0 || a >= ndim) throw std::invalid_argument("reduce: invalid axis");
    }
    for (size_t i = 0; i < axes.size(); ++i)
        for (size_t j = i + 1; j < axes.size(); ++j)
            if (axes[i] == axes[j]) throw std::invalid_argument("reduce: duplicate axis");
    return axes;
}

}  // namespace detail

// Sum over the given axes. keepdims keeps reduced axes as size 1 (handy for
// re-expanding with matmul against a ones row).
template <class R>
TensorT<R> sum(const TensorT<R>& x, std::vector<int> axes, bool keepdims = false) {
    axes = detail::normalize_axes(std::move(axes), x.ndim());
    std::vector<bool> reduced(static_cast<size_t>(x.ndim()), false);
    for (int a : axes) reduced[static_cast<size_t>(a)] = true;

    std::vector<int> oshape;
    for (int i = 0; i < x.ndim(); ++i) {
        if (!reduced[static_cast<size_t>(i)]) oshape.push_back(x.shape[static_cast<size_t>(i)]);
        else if (keepdims) oshape.push_back(1);
    }
    if (oshape.empty()) oshape.push_back(1);

    // strides of x, and the flat output index for each input index
    const int nd = x.ndim();
    std::vector<int64_t> xstride(static_cast<size_t>(nd), 1);
    for (int i = nd - 2; i >= 0; --i)
        xstride[static_cast<size_t>(i)] = xstride[static_cast<size_t>(i) + 1] * x.shape[static_cast<size_t>(i) + 1];
    std::vector<int64_t> ostride(static_cast<size_t>(nd), 0);
    {
        int64_t s = 1;
        for (int i = nd - 1; i >= 0; --i) {
            if (!reduced[static_cast<size_t>(i)]) {
                ostride[static_cast<size_t>(i)] = s;
                s *= x.shape[static_cast<size_t>(i)];
            }
        }
    }
    const int64_t on = TensorT<R>::numel_of(oshape);
    std::vector<double> acc(static_cast<size_t>(on), 0.0);
    for (int64_t flat = 0; flat < x.size(); ++flat) {
        int64_t o = 0;
        int64_t rem = flat;
        for (int i = 0; i < nd; ++i) {
            int64_t q = rem / xstride[static_cast<size_t>(i)];
            rem -= q * xstride[static_cast<size_t>(i)];
            o += q * ostride[static_cast<size_t>(i)];
        }
        acc[static_cast<size_t>(o)] += static_cast<double>((*x.data)[static_cast<size_t>(flat)]);
    }
    std::vector<R> vals(static_cast<size_t>(on));
    for (int64_t i = 0; i < on; ++i) vals[static_cast<size_t>(i)] = static_cast<R>(acc[static_cast<size_t>(i)]);

    TensorT<R> xv = x;
    auto back = [xv, xstride, ostride, nd](const TensorT<R>& g, TapeT<R>& tp) {
        if (!xv.tracked()) return;
        TensorT<R> gx = TensorT<R>::zeros(xv.shape);
        for (int64_t flat = 0; flat < xv.size(); ++flat) {
            int64_t o = 0;
            int64_t rem = flat;
            for (int i = 0; i < nd; ++i) {
                int64_t q = rem / xstride[static_cast<size_t>(i)];
                rem -= q * xstride[static_cast<size_t>(i)];
                o += q * ostride[static_cast<size_t>(i)];
            }
            (*gx.data)[static_cast<size_t>(flat)] = (*g.data)[static_cast<size_t>(o)];
        }
        tp.accumulate(xv.node, gx);
    };
    return detail::make_op<R>("sum", oshape, std::move(vals), {&x}, std::move(back));
}

template <class R>
TensorT<R> sum(const TensorT<R>& x) {
    std::vector<int> axes(static_cast<size_t>(x.ndim()));
    for (int i = 0; i < x.ndim(); ++i) axes[static_cast<size_t>(i)] = i;
    return sum(x, axes);
}

template <class R>
TensorT<R> mean(const TensorT<R>& x, std::vector<int> axes, bool keepdims = false) {
    auto axs = detail::normalize_axes(axes, x.ndim());
    int64_t cnt = 1;
    for (int a : axs) cnt *= x.shape[static_cast<size_t>(a)];
    return sum(x, std::move(axes), keepdims) * TensorT<R>::scalar(R(1) / static_cast<R>(cnt));
}

template <class R>
TensorT<R> mean(const TensorT<R>& x) {
    return sum(x) * TensorT<R>::scalar(R(1) / static_cast<R>(x.size()));
}

// ---- shape ops ----

// Concatenate along the last axis; all leading dims must agree.
template <class R>
TensorT<R> concat_cols(const std::vector<TensorT<R>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    const int nd = parts[0].ndim();
    int64_t rows = parts[0].size() / parts[0].shape.back();
    int total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != nd) throw std::invalid_argument("concat_cols: rank mismatch");
        for (int i = 0; i + 1 < nd; ++i)
            if (p.shape[static_cast<size_t>(i)] != parts[0].shape[static_cast<size_t>(i)])
                throw std::invalid_argument("concat_cols: leading dims mismatch");
        total += p.shape.back();
    }
    std::vector<int> oshape = parts[0].shape;
    oshape.back() = total;
    std::vector<R> vals(static_cast<size_t>(rows) * total);
    int off = 0;
    for (const auto& p : parts) {
        const int w = p.shape.back();
        for (int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < w; ++j)
                vals[static_cast<size_t>(r) * total + off + j] = (*p.data)[static_cast<size_t>(r) * w + j];
        off += w;
    }
    std::vector<TensorT<R>> pv = parts;
    auto back = [pv, rows, total](const TensorT<R>& g, TapeT<R>& tp) {
        int off2 = 0;
        for (const auto& p : pv) {
            const int w = p.shape.back();
            if (p.tracked()) {
                TensorT<R> gp = TensorT<R>::zeros(p.shape);
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < w; ++j)
                        (*gp.data)[static_cast<size_t>(r) * w + j] = (*g.data)[static_cast<size_t>(r) * total + off2 + j];
                tp.accumulate(p.node, gp);
            }
            off2 += w;
        }
    };
    TapeT<R>* tp = nullptr;
    for (const auto& p : parts) {
        if (!p.tracked()) continue;
        if (tp && tp != p.tape) throw std::runtime_error("concat_cols: inputs live on different tapes");
        tp = p.tape;
    }
    detail::check_finite(vals, "concat_cols");
    TensorT<R> out = TensorT<R>::from(oshape, std::move(vals));
    if (tp) {
        out.tape = tp;
        out.node = tp->add_node(std::move(back), out.shape);
    }
    return out;
}

// Slice [start, start+len) of the last axis.
template <class R>
TensorT<R> slice_cols(const TensorT<R>& x, int start, int len) {
    const int w = x.shape.back();
    if (start < 0 || len <= 0 || start + len > w) throw std::invalid_argument("slice_cols: range out of bounds");
    const int64_t rows = x.size() / w;
    std::vector<int> oshape = x.shape;
    oshape.back() = len;
    std::vector<R> vals(static_cast<size_t>(rows) * len);
    for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < len; ++j) vals[static_cast<size_t>(r) * len + j] = (*x.data)[static_cast<size_t>(r) * w + start + j];
    TensorT<R> xv = x;
    auto back = [xv, start, len, rows, w](const TensorT<R>& g, TapeT<R>& tp) {
        if (!xv.tracked()) return;
        TensorT<R> gx = TensorT<R>::zeros(xv.shape);
        for (int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < len; ++j)
                (*gx.data)[static_cast<size_t>(r) * w + start + j] = (*g.data)[static_cast<size_t>(r) * len + j];
        tp.accumulate(xv.node, gx);
    };
    return detail::make_op<R>("slice_cols", oshape, std::move(vals), {&x}, std::move(back));
}

// ---- vjp ----

// u^T (df/dx) via one reverse pass on a fresh tape.
template <class R, class F>
TensorT<R> vjp(F&& f, const TensorT<R>& x, const TensorT<R>& u) {
    TapeT<R> tape;
    TensorT<R> xt = tape.leaf(x.detached());
    TensorT<R> y = f(xt);
    if (y.shape != u.shape) throw std::invalid_argument("vjp: cotangent shape does not match f(x)");
    if (!y.tracked()) return TensorT<R>::zeros(x.shape);
    tape.backward_seed(y, u);
    return tape.grad(xt);
}

}  // namespace mulan
