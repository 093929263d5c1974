#pragma once

// Dense n-dimensional tensors with reverse-mode automatic differentiation.
//
// A Tensor is a value-semantic handle onto a graph node. Operations on
// tensors whose inputs participate in gradient recording append nodes with a
// backward closure; backward() walks the graph in reverse topological order
// and accumulates gradients into every tracked leaf. The graph is rebuilt on
// every forward pass. Scalars are rank-1 tensors of extent 1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mlpsr/errors.hpp"

namespace mlpsr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

namespace detail {

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily by backward()
    bool tracked = false;   // leaf participates in gradient recording
    bool in_graph = false;  // tracked, or derived from a tracked node
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // scatter this->grad into parents

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

}  // namespace detail

template <class T>
class Tensor {
public:
    using Node = detail::Node<T>;

    Tensor() : node_(std::make_shared<Node>()) {}

    explicit Tensor(Shape shape) : node_(std::make_shared<Node>()) {
        check_shape(shape);
        node_->shape = std::move(shape);
        node_->data.assign(shape_numel(node_->shape), T(0));
    }

    Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<Node>()) {
        check_shape(shape);
        if (shape_numel(shape) != data.size())
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        node_->shape = std::move(shape);
        node_->data = std::move(data);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.node_->data.begin(), t.node_->data.end(), value);
        return t;
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }
    std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }

    const std::vector<T>& data() const { return node_->data; }
    // In-place mutation is reserved for leaves (parameter updates, loaders);
    // results of recorded ops must be treated as immutable.
    std::vector<T>& mutable_data() { return node_->data; }

    T operator[](std::size_t i) const { return node_->data[i]; }

    T at(std::initializer_list<std::size_t> idx) const {
        return node_->data[linear_index(idx)];
    }

    // Value of a single-element tensor.
    T value() const {
        if (size() != 1) throw ContractError("value() requires a scalar tensor, got shape " + shape_str(shape()));
        return node_->data[0];
    }

    bool tracked() const { return node_->tracked; }

    Tensor& set_tracked(bool v = true) {
        node_->tracked = v;
        node_->in_graph = v || !node_->parents.empty();
        return *this;
    }

    bool in_graph() const { return node_->in_graph; }

    bool has_grad() const { return node_->grad.size() == node_->data.size(); }

    // Gradient buffer; zeros when backward has not reached this tensor.
    std::vector<T> grad() const {
        if (has_grad()) return node_->grad;
        return std::vector<T>(node_->data.size(), T(0));
    }

    void clear_grad() { node_->grad.clear(); }

    // Same values, fresh untracked leaf. Cuts the graph.
    Tensor detach() const { return Tensor(node_->shape, node_->data); }

    // Deep copy preserving the tracked flag (still a leaf).
    Tensor clone() const {
        Tensor t(node_->shape, node_->data);
        t.node_->tracked = node_->tracked;
        t.node_->in_graph = node_->tracked;
        return t;
    }

    bool all_finite() const {
        for (T v : node_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void throw_if_nonfinite(const std::string& what) const {
        if (!all_finite()) throw NumericError(what + ": non-finite value detected");
    }

    std::shared_ptr<Node> node() const { return node_; }

private:
    static void check_shape(const Shape& shape) {
        for (std::size_t e : shape)
            if (e == 0) throw DimensionError("zero extent in shape " + shape_str(shape));
    }

    std::size_t linear_index(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != rank()) throw DimensionError("index rank mismatch");
        std::size_t lin = 0, axis = 0;
        for (std::size_t i : idx) {
            lin = lin * node_->shape[axis] + i;
            ++axis;
        }
        return lin;
    }

    std::shared_ptr<Node> node_;
};

using TensorF32 = Tensor<float>;
using TensorF64 = Tensor<double>;

namespace detail {

// Wraps a freshly computed result into a graph node. The backward closure is
// attached only when some parent participates in gradient recording.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backprop) {
    Tensor<T> out(std::move(shape), std::move(data));
    bool any = false;
    for (const auto& p : parents) any = any || p.in_graph();
    if (any) {
        auto n = out.node();
        n->in_graph = true;
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops

template <class T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a, b},
        [](detail::Node<T>& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            pa.ensure_grad();
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                pa.grad[i] += n.grad[i];
                pb.grad[i] += n.grad[i];
            }
        });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a, b},
        [](detail::Node<T>& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            pa.ensure_grad();
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                pa.grad[i] += n.grad[i];
                pb.grad[i] -= n.grad[i];
            }
        });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a, b},
        [](detail::Node<T>& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            pa.ensure_grad();
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                pa.grad[i] += n.grad[i] * pb.data[i];
                pb.grad[i] += n.grad[i] * pa.data[i];
            }
        });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
    std::vector<T> out(a.size());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    return detail::make_result<T>(a.shape(), std::move(out), {a},
        [c](detail::Node<T>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * c;
        });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    std::vector<T> out(a.size());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
    return detail::make_result<T>(a.shape(), std::move(out), {a},
        [](detail::Node<T>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) { return mul_scalar(a, T(-1)); }

// y = x + sign * s with s scalar (shape broadcast of a single value).
template <class T>
Tensor<T> add_broadcast_scalar(const Tensor<T>& x, const Tensor<T>& s, T sign = T(1)) {
    if (s.size() != 1) throw DimensionError("add_broadcast_scalar: second operand must be scalar");
    std::vector<T> out(x.size());
    const auto& xv = x.data();
    T sv = s.data()[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + sign * sv;
    return detail::make_result<T>(x.shape(), std::move(out), {x, s},
        [sign](detail::Node<T>& n) {
            auto& px = *n.parents[0];
            auto& ps = *n.parents[1];
            px.ensure_grad();
            ps.ensure_grad();
            T acc = T(0);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                px.grad[i] += n.grad[i];
                acc += n.grad[i];
            }
            ps.grad[0] += sign * acc;
        });
}

template <class T>
Tensor<T> sub_broadcast_scalar(const Tensor<T>& x, const Tensor<T>& s) {
    return add_broadcast_scalar(x, s, T(-1));
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] < T(0) ? -av[i] : av[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a},
        [](detail::Node<T>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                T x = pa.data[i];
                // subgradient 0 at the kink
                T s = x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
                pa.grad[i] += n.grad[i] * s;
            }
        });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
    return detail::make_result<T>(a.shape(), std::move(out), {a},
        [](detail::Node<T>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                pa.grad[i] += n.grad[i] / pa.data[i];
        });
}

// Pass-through gradient strictly inside (lo,hi), zero outside.
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    std::vector<T> out(a.size());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, av[i]));
    return detail::make_result<T>(a.shape(), std::move(out), {a},
        [lo, hi](detail::Node<T>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                if (pa.data[i] > lo && pa.data[i] < hi) pa.grad[i] += n.grad[i];
        });
}

// ---------------------------------------------------------------------------
// activations

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T alpha) {
    if (!(alpha > T(0) && alpha < T(1)))
        throw ContractError("leaky_relu: alpha must lie in (0,1)");
    std::vector<T> out(a.size());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T(0) ? av[i] : alpha * av[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a},
        [alpha](detail::Node<T>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                // subgradient 1 at 0
                T s = pa.data[i] >= T(0) ? T(1) : alpha;
                pa.grad[i] += n.grad[i] * s;
            }
        });
}

template <class T>
inline T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(av[i]);
    return detail::make_result<T>(a.shape(), std::move(out), {a},
        [](detail::Node<T>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                T s = n.data[i];
                pa.grad[i] += n.grad[i] * s * (T(1) - s);
            }
        });
}

// Exact Gaussian-CDF form: x * Phi(x).
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    std::vector<T> out(a.size());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = static_cast<double>(av[i]);
        out[i] = static_cast<T>(x * 0.5 * (1.0 + std::erf(x * inv_sqrt2)));
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a},
        [](detail::Node<T>& n) {
            auto& pa = *n.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                double x = static_cast<double>(pa.data[i]);
                double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                double dens = inv_sqrt2pi * std::exp(-0.5 * x * x);
                pa.grad[i] += n.grad[i] * static_cast<T>(phi + x * dens);
            }
        });
}

// ---------------------------------------------------------------------------
// linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul: operands must be rank 2, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    const std::size_t m = a.extent(0), k = a.extent(1);
    const std::size_t k2 = b.extent(0), n = b.extent(1);
    if (k != k2)
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    std::vector<T> out(m * n, T(0));
    {
        const T* A = a.data().data();
        const T* B = b.data().data();
        T* C = out.data();
        for (std::size_t i = 0; i < m; ++i) {
            const T* Ai = A + i * k;
            T* Ci = C + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const T aip = Ai[p];
                const T* Bp = B + p * n;
                for (std::size_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
            }
        }
    }
    return detail::make_result<T>({m, n}, std::move(out), {a, b},
        [m, k, n](detail::Node<T>& n_) {
            auto& pa = *n_.parents[0];
            auto& pb = *n_.parents[1];
            pa.ensure_grad();
            pb.ensure_grad();
            const T* G = n_.grad.data();
            const T* A = pa.data.data();
            const T* B = pb.data.data();
            // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i) {
                const T* Gi = G + i * n;
                T* dAi = pa.grad.data() + i * k;
                for (std::size_t p = 0; p < k; ++p) {
                    const T* Bp = B + p * n;
                    T acc = T(0);
                    for (std::size_t j = 0; j < n; ++j) acc += Gi[j] * Bp[j];
                    dAi[p] += acc;
                }
            }
            // dB = A^T * G
            for (std::size_t p = 0; p < k; ++p) {
                T* dBp = pb.grad.data() + p * n;
                for (std::size_t i = 0; i < m; ++i) {
                    const T aip = A[i * k + p];
                    const T* Gi = G + i * n;
                    for (std::size_t j = 0; j < n; ++j) dBp[j] += aip * Gi[j];
                }
            }
        });
}

// Adds b to every row of x[R x E].
template <class T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.rank() != 2 || b.rank() != 1 || b.extent(0) != x.extent(1))
        throw DimensionError("add_row_bias: need x[RxE] and b[E]");
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    std::vector<T> out(x.size());
    const auto& xv = x.data();
    const auto& bv = b.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] + bv[c];
    return detail::make_result<T>(x.shape(), std::move(out), {x, b},
        [rows, cols](detail::Node<T>& n) {
            auto& px = *n.parents[0];
            auto& pb = *n.parents[1];
            px.ensure_grad();
            pb.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) {
                    px.grad[r * cols + c] += n.grad[r * cols + c];
                    pb.grad[c] += n.grad[r * cols + c];
                }
        });
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add_row_bias(matmul(x, w), b);
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& x) {
    if (x.rank() != 2) throw DimensionError("transpose2d: rank-2 tensor required");
    const std::size_t m = x.extent(0), n = x.extent(1);
    std::vector<T> out(x.size());
    const auto& xv = x.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
    return detail::make_result<T>({n, m}, std::move(out), {x},
        [m, n](detail::Node<T>& nd) {
            auto& px = *nd.parents[0];
            px.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) px.grad[i * n + j] += nd.grad[j * m + i];
        });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.size())
        throw DimensionError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                             shape_str(shape));
    return detail::make_result<T>(std::move(shape), x.data(), {x},
        [](detail::Node<T>& n) {
            auto& px = *n.parents[0];
            px.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) px.grad[i] += n.grad[i];
        });
}

// ---------------------------------------------------------------------------
// convolution

// Cross-correlation (no kernel flip), zero padding.
// x[Cin x H x W], k[Cout x Cin x kh x kw], optional bias[Cout].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>* bias,
                 std::size_t sh, std::size_t sw, std::size_t ph, std::size_t pw) {
    if (x.rank() != 3) throw DimensionError("conv2d: input must be CxHxW, got " + shape_str(x.shape()));
    if (k.rank() != 4) throw DimensionError("conv2d: kernels must be Cout x Cin x kh x kw");
    if (sh == 0 || sw == 0) throw DimensionError("conv2d: stride must be positive");
    const std::size_t cin = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::size_t cout = k.extent(0), kh = k.extent(2), kw = k.extent(3);
    if (k.extent(1) != cin)
        throw DimensionError("conv2d: kernel input channels " + std::to_string(k.extent(1)) +
                             " != input channels " + std::to_string(cin));
    if (kh > h + 2 * ph || kw > w + 2 * pw)
        throw DimensionError("conv2d: kernel larger than padded input");
    if (bias && (bias->rank() != 1 || bias->extent(0) != cout))
        throw DimensionError("conv2d: bias must have one value per output channel");
    const std::size_t oh = (h + 2 * ph - kh) / sh + 1;
    const std::size_t ow = (w + 2 * pw - kw) / sw + 1;

    std::vector<T> out(cout * oh * ow, T(0));
    if (bias) {
        const auto& bv = bias->data();
        for (std::size_t co = 0; co < cout; ++co)
            std::fill(out.begin() + co * oh * ow, out.begin() + (co + 1) * oh * ow, bv[co]);
    }

    // Valid output range along one axis for kernel offset u: 0 <= o*s + u - p < n.
    auto out_range = [](std::size_t p, std::size_t u, std::size_t s, std::size_t n,
                        std::size_t m) -> std::pair<std::size_t, std::size_t> {
        std::ptrdiff_t lo_num = static_cast<std::ptrdiff_t>(p) - static_cast<std::ptrdiff_t>(u);
        std::size_t lo = lo_num <= 0 ? 0
                                     : static_cast<std::size_t>((lo_num + static_cast<std::ptrdiff_t>(s) - 1) /
                                                                static_cast<std::ptrdiff_t>(s));
        std::ptrdiff_t hi_num = static_cast<std::ptrdiff_t>(n) - 1 + lo_num;
        if (hi_num < 0) return {1, 0};  // empty
        std::size_t hi = std::min(m - 1, static_cast<std::size_t>(hi_num) / s);
        if (lo > hi) return {1, 0};
        return {lo, hi};
    };

    {
        const T* X = x.data().data();
        const T* K = k.data().data();
        T* O = out.data();
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t ci = 0; ci < cin; ++ci)
                for (std::size_t u = 0; u < kh; ++u) {
                    auto [olo, ohi] = out_range(ph, u, sh, h, oh);
                    if (olo > ohi) continue;
                    for (std::size_t v = 0; v < kw; ++v) {
                        auto [wlo, whi] = out_range(pw, v, sw, w, ow);
                        if (wlo > whi) continue;
                        const T kval = K[((co * cin + ci) * kh + u) * kw + v];
                        if (kval == T(0)) continue;
                        for (std::size_t o = olo; o <= ohi; ++o) {
                            const std::size_t ih = o * sh + u - ph;
                            const T* xrow = X + (ci * h + ih) * w + (wlo * sw + v - pw);
                            T* orow = O + (co * oh + o) * ow + wlo;
                            std::size_t cnt = whi - wlo + 1;
                            for (std::size_t q = 0; q < cnt; ++q) orow[q] += kval * xrow[q * sw];
                        }
                    }
                }
    }

    std::vector<Tensor<T>> parents = {x, k};
    if (bias) parents.push_back(*bias);
    bool has_bias = bias != nullptr;
    return detail::make_result<T>({cout, oh, ow}, std::move(out), std::move(parents),
        [cin, h, w, cout, kh, kw, sh, sw, ph, pw, oh, ow, out_range, has_bias](detail::Node<T>& nd) {
            auto& px = *nd.parents[0];
            auto& pk = *nd.parents[1];
            px.ensure_grad();
            pk.ensure_grad();
            const T* G = nd.grad.data();
            const T* X = px.data.data();
            const T* K = pk.data.data();
            for (std::size_t co = 0; co < cout; ++co)
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t u = 0; u < kh; ++u) {
                        auto [olo, ohi] = out_range(ph, u, sh, h, oh);
                        if (olo > ohi) continue;
                        for (std::size_t v = 0; v < kw; ++v) {
                            auto [wlo, whi] = out_range(pw, v, sw, w, ow);
                            if (wlo > whi) continue;
                            const std::size_t kidx = ((co * cin + ci) * kh + u) * kw + v;
                            const T kval = K[kidx];
                            T kacc = T(0);
                            for (std::size_t o = olo; o <= ohi; ++o) {
                                const std::size_t ih = o * sh + u - ph;
                                const std::size_t xbase = (ci * h + ih) * w + (wlo * sw + v - pw);
                                const std::size_t gbase = (co * oh + o) * ow + wlo;
                                const std::size_t cnt = whi - wlo + 1;
                                const T* grow = G + gbase;
                                const T* xrow = X + xbase;
                                T* dxrow = px.grad.data() + xbase;
                                for (std::size_t q = 0; q < cnt; ++q) {
                                    kacc += grow[q] * xrow[q * sw];
                                    dxrow[q * sw] += grow[q] * kval;
                                }
                            }
                            pk.grad[kidx] += kacc;
                        }
                    }
            if (has_bias) {
                auto& pb = *nd.parents[2];
                pb.ensure_grad();
                for (std::size_t co = 0; co < cout; ++co) {
                    T acc = T(0);
                    const T* g = G + co * oh * ow;
                    for (std::size_t i = 0; i < oh * ow; ++i) acc += g[i];
                    pb.grad[co] += acc;
                }
            }
        });
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias,
                 std::size_t sh, std::size_t sw, std::size_t ph, std::size_t pw) {
    return conv2d(x, k, &bias, sh, sw, ph, pw);
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, std::size_t sh, std::size_t sw,
                 std::size_t ph, std::size_t pw) {
    return conv2d(x, k, static_cast<const Tensor<T>*>(nullptr), sh, sw, ph, pw);
}

// ---------------------------------------------------------------------------
// normalization

// Standardizes over the last axis, then applies the affine pair.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    if (x.rank() < 1) throw DimensionError("layer_norm: rank >= 1 required");
    const std::size_t d = x.shape().back();
    if (gamma.rank() != 1 || gamma.extent(0) != d || beta.rank() != 1 || beta.extent(0) != d)
        throw DimensionError("layer_norm: gamma/beta must match last extent " + std::to_string(d));
    const std::size_t rows = x.size() / d;
    std::vector<T> out(x.size());
    const auto& xv = x.data();
    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xv.data() + r * d;
        T* yr = out.data() + r * d;
        T mean = T(0);
        for (std::size_t i = 0; i < d; ++i) mean += xr[i];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (std::size_t i = 0; i < d; ++i) {
            T c = xr[i] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        T inv = T(1) / std::sqrt(var + eps);
        for (std::size_t i = 0; i < d; ++i) yr[i] = gv[i] * ((xr[i] - mean) * inv) + bv[i];
    }
    return detail::make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
        [rows, d, eps](detail::Node<T>& n) {
            auto& px = *n.parents[0];
            auto& pg = *n.parents[1];
            auto& pb = *n.parents[2];
            px.ensure_grad();
            pg.ensure_grad();
            pb.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* xr = px.data.data() + r * d;
                const T* gr = n.grad.data() + r * d;
                T mean = T(0);
                for (std::size_t i = 0; i < d; ++i) mean += xr[i];
                mean /= static_cast<T>(d);
                T var = T(0);
                for (std::size_t i = 0; i < d; ++i) {
                    T c = xr[i] - mean;
                    var += c * c;
                }
                var /= static_cast<T>(d);
                T inv = T(1) / std::sqrt(var + eps);
                T gh_mean = T(0), ghx_mean = T(0);
                for (std::size_t i = 0; i < d; ++i) {
                    T xhat = (xr[i] - mean) * inv;
                    T gh = gr[i] * pg.data[i];
                    gh_mean += gh;
                    ghx_mean += gh * xhat;
                    pg.grad[i] += gr[i] * xhat;
                    pb.grad[i] += gr[i];
                }
                gh_mean /= static_cast<T>(d);
                ghx_mean /= static_cast<T>(d);
                for (std::size_t i = 0; i < d; ++i) {
                    T xhat = (xr[i] - mean) * inv;
                    T gh = gr[i] * pg.data[i];
                    px.grad[r * d + i] += (gh - gh_mean - xhat * ghx_mean) * inv;
                }
            }
        });
}

// Per-channel normalization over the spatial grid with running statistics.
// In training mode the current statistics are used and the running buffers
// are updated in place (running buffers are plain state, not graph leaves).
template <class T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                       T momentum = T(0.1), T eps = T(1e-5)) {
    if (x.rank() != 3) throw DimensionError("batch_norm2d: input must be CxHxW");
    const std::size_t c = x.extent(0), hw = x.extent(1) * x.extent(2);
    if (gamma.size() != c || beta.size() != c || running_mean.size() != c || running_var.size() != c)
        throw DimensionError("batch_norm2d: affine/statistic extents must equal channel count");
    std::vector<T> mean(c), var(c);
    const auto& xv = x.data();
    if (training) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* xr = xv.data() + ch * hw;
            T m = T(0);
            for (std::size_t i = 0; i < hw; ++i) m += xr[i];
            m /= static_cast<T>(hw);
            T v = T(0);
            for (std::size_t i = 0; i < hw; ++i) {
                T d = xr[i] - m;
                v += d * d;
            }
            v /= static_cast<T>(hw);
            mean[ch] = m;
            var[ch] = v;
        }
        auto& rm = running_mean.mutable_data();
        auto& rv = running_var.mutable_data();
        for (std::size_t ch = 0; ch < c; ++ch) {
            rm[ch] = (T(1) - momentum) * rm[ch] + momentum * mean[ch];
            rv[ch] = (T(1) - momentum) * rv[ch] + momentum * var[ch];
        }
    } else {
        mean = running_mean.data();
        var = running_var.data();
    }
    std::vector<T> out(x.size());
    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        T inv = T(1) / std::sqrt(var[ch] + eps);
        const T* xr = xv.data() + ch * hw;
        T* yr = out.data() + ch * hw;
        for (std::size_t i = 0; i < hw; ++i) yr[i] = gv[ch] * ((xr[i] - mean[ch]) * inv) + bv[ch];
    }
    return detail::make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
        [c, hw, mean, var, eps, training](detail::Node<T>& n) {
            auto& px = *n.parents[0];
            auto& pg = *n.parents[1];
            auto& pb = *n.parents[2];
            px.ensure_grad();
            pg.ensure_grad();
            pb.ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch) {
                T inv = T(1) / std::sqrt(var[ch] + eps);
                const T* xr = px.data.data() + ch * hw;
                const T* gr = n.grad.data() + ch * hw;
                T g_sum = T(0), gx_sum = T(0);
                for (std::size_t i = 0; i < hw; ++i) {
                    T xhat = (xr[i] - mean[ch]) * inv;
                    g_sum += gr[i];
                    gx_sum += gr[i] * xhat;
                    pg.grad[ch] += gr[i] * xhat;
                }
                pb.grad[ch] += g_sum;
                T* dx = px.grad.data() + ch * hw;
                if (training) {
                    T gm = g_sum / static_cast<T>(hw);
                    T gxm = gx_sum / static_cast<T>(hw);
                    for (std::size_t i = 0; i < hw; ++i) {
                        T xhat = (xr[i] - mean[ch]) * inv;
                        dx[i] += pg.data[ch] * inv * (gr[i] - gm - xhat * gxm);
                    }
                } else {
                    for (std::size_t i = 0; i < hw; ++i) dx[i] += pg.data[ch] * inv * gr[i];
                }
            }
        });
}

// ---------------------------------------------------------------------------
// reductions

namespace detail {
inline Shape reduced_shape(const Shape& in, const std::vector<std::size_t>& axes) {
    Shape out;
    for (std::size_t a = 0; a < in.size(); ++a)
        if (std::find(axes.begin(), axes.end(), a) == axes.end()) out.push_back(in[a]);
    if (out.empty()) out.push_back(1);
    return out;
}
}  // namespace detail

// Reduces over the given axes (all axes when the list is empty).
template <class T>
Tensor<T> reduce_sum(const Tensor<T>& x, std::vector<std::size_t> axes = {}) {
    if (axes.empty()) {
        axes.resize(x.rank());
        std::iota(axes.begin(), axes.end(), 0);
    }
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    for (std::size_t a : axes)
        if (a >= x.rank()) throw DimensionError("reduce: axis out of range");

    const Shape& in_shape = x.shape();
    Shape out_shape = detail::reduced_shape(in_shape, axes);
    const std::size_t out_n = shape_numel(out_shape);

    // Map each input linear index to its output linear index.
    std::vector<bool> is_reduced(x.rank(), false);
    for (std::size_t a : axes) is_reduced[a] = true;
    std::vector<std::size_t> out_stride(x.rank(), 0);
    {
        std::size_t stride = 1;
        for (std::size_t a = x.rank(); a-- > 0;) {
            if (!is_reduced[a]) {
                out_stride[a] = stride;
                stride *= in_shape[a];
            }
        }
    }
    std::vector<std::size_t> in_stride(x.rank(), 1);
    for (std::size_t a = x.rank() - 1; a-- > 0;) in_stride[a] = in_stride[a + 1] * in_shape[a + 1];

    auto out_index = [in_stride, out_stride, shape = in_shape](std::size_t lin) {
        std::size_t o = 0;
        for (std::size_t a = 0; a < shape.size(); ++a) {
            std::size_t idx = (lin / in_stride[a]) % shape[a];
            o += idx * out_stride[a];
        }
        return o;
    };

    std::vector<T> out(out_n, T(0));
    const auto& xv = x.data();
    for (std::size_t i = 0; i < xv.size(); ++i) out[out_index(i)] += xv[i];

    return detail::make_result<T>(std::move(out_shape), std::move(out), {x},
        [out_index, n_in = x.size()](detail::Node<T>& nd) {
            auto& px = *nd.parents[0];
            px.ensure_grad();
            for (std::size_t i = 0; i < n_in; ++i) px.grad[i] += nd.grad[out_index(i)];
        });
}

template <class T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::vector<std::size_t> axes = {}) {
    Tensor<T> s = reduce_sum(x, axes);
    T count = static_cast<T>(x.size() / s.size());
    return mul_scalar(s, T(1) / count);
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) { return reduce_mean(x); }

// ---------------------------------------------------------------------------
// shape / resolution ops for the networks

// Nearest-neighbor 2x enlargement of both spatial axes.
template <class T>
Tensor<T> nearest_upsample2x(const Tensor<T>& x) {
    if (x.rank() != 3) throw DimensionError("nearest_upsample2x: input must be CxHxW");
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    std::vector<T> out(c * 4 * h * w);
    const auto& xv = x.data();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i) {
            const T* xr = xv.data() + (ch * h + i) * w;
            T* y0 = out.data() + (ch * 2 * h + 2 * i) * 2 * w;
            T* y1 = y0 + 2 * w;
            for (std::size_t j = 0; j < w; ++j) {
                y0[2 * j] = y0[2 * j + 1] = xr[j];
                y1[2 * j] = y1[2 * j + 1] = xr[j];
            }
        }
    return detail::make_result<T>({c, 2 * h, 2 * w}, std::move(out), {x},
        [c, h, w](detail::Node<T>& nd) {
            auto& px = *nd.parents[0];
            px.ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < h; ++i) {
                    T* dxr = px.grad.data() + (ch * h + i) * w;
                    const T* g0 = nd.grad.data() + (ch * 2 * h + 2 * i) * 2 * w;
                    const T* g1 = g0 + 2 * w;
                    for (std::size_t j = 0; j < w; ++j)
                        dxr[j] += g0[2 * j] + g0[2 * j + 1] + g1[2 * j] + g1[2 * j + 1];
                }
        });
}

// Splits x[CxHxW] into non-overlapping ph x pw patches, one token per patch.
// Token s = pi*(W/pw)+pj; feature (di*pw+dj)*C + c. Output [S x ph*pw*C].
template <class T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t ph, std::size_t pw) {
    if (x.rank() != 3) throw DimensionError("patchify: input must be CxHxW");
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    if (ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0)
        throw ConfigError("patchify: feature map " + shape_str(x.shape()) +
                          " not divisible by patch " + std::to_string(ph) + "x" + std::to_string(pw));
    const std::size_t gh = h / ph, gw = w / pw;
    const std::size_t s = gh * gw, p = ph * pw * c;
    std::vector<T> out(s * p);
    const auto& xv = x.data();
    for (std::size_t pi = 0; pi < gh; ++pi)
        for (std::size_t pj = 0; pj < gw; ++pj) {
            T* tok = out.data() + (pi * gw + pj) * p;
            for (std::size_t di = 0; di < ph; ++di)
                for (std::size_t dj = 0; dj < pw; ++dj)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        tok[(di * pw + dj) * c + ch] = xv[(ch * h + pi * ph + di) * w + pj * pw + dj];
        }
    return detail::make_result<T>({s, p}, std::move(out), {x},
        [c, h, w, ph, pw, gh, gw, p](detail::Node<T>& nd) {
            auto& px = *nd.parents[0];
            px.ensure_grad();
            for (std::size_t pi = 0; pi < gh; ++pi)
                for (std::size_t pj = 0; pj < gw; ++pj) {
                    const T* g = nd.grad.data() + (pi * gw + pj) * p;
                    for (std::size_t di = 0; di < ph; ++di)
                        for (std::size_t dj = 0; dj < pw; ++dj)
                            for (std::size_t ch = 0; ch < c; ++ch)
                                px.grad[(ch * h + pi * ph + di) * w + pj * pw + dj] +=
                                    g[(di * pw + dj) * c + ch];
                }
        });
}

// Inverse of patchify for a known target geometry.
template <class T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t c, std::size_t h, std::size_t w,
                     std::size_t ph, std::size_t pw) {
    if (tokens.rank() != 2) throw DimensionError("unpatchify: tokens must be rank 2");
    if (h % ph != 0 || w % pw != 0) throw ConfigError("unpatchify: grid not divisible by patch");
    const std::size_t gh = h / ph, gw = w / pw;
    const std::size_t s = gh * gw, p = ph * pw * c;
    if (tokens.extent(0) != s || tokens.extent(1) != p)
        throw DimensionError("unpatchify: token table " + shape_str(tokens.shape()) +
                             " does not match target geometry");
    std::vector<T> out(c * h * w);
    const auto& tv = tokens.data();
    for (std::size_t pi = 0; pi < gh; ++pi)
        for (std::size_t pj = 0; pj < gw; ++pj) {
            const T* tok = tv.data() + (pi * gw + pj) * p;
            for (std::size_t di = 0; di < ph; ++di)
                for (std::size_t dj = 0; dj < pw; ++dj)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        out[(ch * h + pi * ph + di) * w + pj * pw + dj] = tok[(di * pw + dj) * c + ch];
        }
    return detail::make_result<T>({c, h, w}, std::move(out), {tokens},
        [c, h, w, ph, pw, gh, gw, p](detail::Node<T>& nd) {
            auto& pt = *nd.parents[0];
            pt.ensure_grad();
            for (std::size_t pi = 0; pi < gh; ++pi)
                for (std::size_t pj = 0; pj < gw; ++pj) {
                    T* g = pt.grad.data() + (pi * gw + pj) * p;
                    for (std::size_t di = 0; di < ph; ++di)
                        for (std::size_t dj = 0; dj < pw; ++dj)
                            for (std::size_t ch = 0; ch < c; ++ch)
                                g[(di * pw + dj) * c + ch] +=
                                    nd.grad[(ch * h + pi * ph + di) * w + pj * pw + dj];
                }
        });
}

// Gathers single-element tensors into one rank-1 tensor.
template <class T>
Tensor<T> stack_scalars(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw ContractError("stack_scalars: empty input");
    std::vector<T> out;
    out.reserve(xs.size());
    for (const auto& x : xs) {
        if (x.size() != 1) throw DimensionError("stack_scalars: all inputs must be scalar");
        out.push_back(x.data()[0]);
    }
    return detail::make_result<T>({xs.size()}, std::move(out), xs,
        [](detail::Node<T>& nd) {
            for (std::size_t i = 0; i < nd.parents.size(); ++i) {
                nd.parents[i]->ensure_grad();
                nd.parents[i]->grad[0] += nd.grad[i];
            }
        });
}

// ---------------------------------------------------------------------------
// backward pass

// Reverse-mode sweep from a scalar loss. Gradients of every node reachable in
// the recorded graph are reset and freshly accumulated; tracked leaves end up
// holding d(loss)/d(leaf).
template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    using Node = detail::Node<T>;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // iterative post-order DFS
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->in_graph && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        n->grad.assign(n->data.size(), T(0));
    }
    loss.node()->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Adam

// Bias-corrected Adam over an ordered parameter list. Moment buffers are
// positionally aligned with the parameters they belong to.
template <class T>
struct AdamState {
    std::size_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_params(const std::vector<Tensor<T>>& params, double lr_) {
        AdamState st;
        st.lr = lr_;
        st.m.reserve(params.size());
        st.v.reserve(params.size());
        for (const auto& p : params) {
            st.m.emplace_back(p.size(), T(0));
            st.v.emplace_back(p.size(), T(0));
        }
        return st;
    }
};

// One optimizer step; reads each parameter's gradient buffer and updates the
// parameter data in place. Non-finite gradients leave everything unchanged.
template <class T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state) {
    if (params.size() != state.m.size())
        throw ContractError("adam_step: state was built for a different parameter list");
    if (!(state.lr > 0)) throw ContractError("adam_step: learning rate must be positive");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i].size())
            throw DimensionError("adam_step: moment shape mismatch at parameter " + std::to_string(i));
        std::vector<T> g = params[i].grad();
        for (T x : g)
            if (!std::isfinite(static_cast<double>(x)))
                throw NumericError("adam_step: non-finite gradient, parameters unchanged");
    }
    state.step += 1;
    const double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::vector<T> g = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        auto& p = params[i].mutable_data();
        const T beta1 = static_cast<T>(state.beta1), beta2 = static_cast<T>(state.beta2);
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = beta1 * m[j] + (T(1) - beta1) * g[j];
            v[j] = beta2 * v[j] + (T(1) - beta2) * g[j] * g[j];
            T mhat = static_cast<T>(m[j] / b1t);
            T vhat = static_cast<T>(v[j] / b2t);
            p[j] -= static_cast<T>(state.lr) * mhat / (std::sqrt(vhat) + static_cast<T>(state.eps));
        }
    }
}

// Convenience overload for a single tensor.
template <class T>
void adam_step(Tensor<T>& param, AdamState<T>& state) {
    std::vector<Tensor<T>> v{param};
    adam_step(v, state);
}

}  // namespace mlpsr
