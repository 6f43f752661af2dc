#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace camds {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

enum class Mode { Train, Eval };

// Probe recording how close any relu input came to its kink during a forward
// pass. The finite-difference checker enables it to exclude coordinates whose
// sampled interval straddles a nonsmooth point.
struct KinkProbe {
    bool enabled = false;
    double min_distance = std::numeric_limits<double>::infinity();

    void reset() { min_distance = std::numeric_limits<double>::infinity(); }
};

inline KinkProbe& kink_probe() {
    static thread_local KinkProbe probe;
    return probe;
}

template <typename T>
struct NodeT {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated on demand; same length as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<NodeT<T>>> parents;
    std::function<void(NodeT<T>&)> backward_fn;  // empty for leaves

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

// Value-semantics handle to a node of the differentiation graph. Copies alias
// the same storage. Tensors are immutable once used in an op; leaves may be
// mutated through mutable_data() between forward passes (optimizer updates).
template <typename T>
class TensorT {
  public:
    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return alloc(std::move(shape), requires_grad);
    }

    static TensorT full(Shape shape, T v, bool requires_grad = false) {
        TensorT t = alloc(std::move(shape), requires_grad);
        std::fill(t.node_->value.begin(), t.node_->value.end(), v);
        return t;
    }

    static TensorT from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        validate_shape(shape);
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        TensorT t;
        t.node_ = std::make_shared<NodeT<T>>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        t.node_->requires_grad = requires_grad;
        if (requires_grad) t.node_->ensure_grad();
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const T> data() const { return node_->value; }
    // Leaves only: parameter updates and test setup. Mutating a tensor that
    // participates in a live graph invalidates that graph.
    std::span<T> mutable_data() { return node_->value; }

    std::span<const T> grad() const {
        node_->ensure_grad();
        return node_->grad;
    }

    void zero_grad() {
        node_->ensure_grad();
        std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1)
            throw std::invalid_argument("item() requires a single-element tensor, got shape " +
                                        shape_str(shape()));
        return node_->value[0];
    }

    // Reverse-mode sweep from a scalar root. Gradients accumulate into every
    // reachable node with requires_grad; the caller zeroes them between steps.
    void backward() {
        if (numel() != 1)
            throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                        shape_str(shape()));
        if (!node_->requires_grad) return;

        // iterative post-order DFS over the requires_grad subgraph
        std::vector<NodeT<T>*> order;
        std::unordered_set<NodeT<T>*> seen;
        std::vector<std::pair<NodeT<T>*, size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                ++stack.back().second;
                NodeT<T>* p = n->parents[idx].get();
                if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }

        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            NodeT<T>* n = *it;
            if (n->backward_fn) n->backward_fn(*n);
        }
    }

    std::shared_ptr<NodeT<T>>& node() { return node_; }
    const std::shared_ptr<NodeT<T>>& node() const { return node_; }

  private:
    static void validate_shape(const Shape& shape) {
        if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one extent");
        for (int d : shape)
            if (d < 1)
                throw std::invalid_argument("tensor extents must be positive, got " +
                                            shape_str(shape));
    }

    static TensorT alloc(Shape shape, bool requires_grad) {
        validate_shape(shape);
        TensorT t;
        t.node_ = std::make_shared<NodeT<T>>();
        t.node_->value.assign(static_cast<size_t>(shape_numel(shape)), T(0));
        t.node_->shape = std::move(shape);
        t.node_->requires_grad = requires_grad;
        if (requires_grad) t.node_->ensure_grad();
        return t;
    }

    std::shared_ptr<NodeT<T>> node_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
struct ParameterT {
    std::string name;
    TensorT<T> tensor;  // requires_grad leaf; grad buffer always allocated
};

namespace detail {

template <typename T>
TensorT<T> make_op(Shape shape, std::vector<TensorT<T>> parents,
                   std::function<void(NodeT<T>&)> backward_fn) {
    TensorT<T> out = TensorT<T>::zeros(std::move(shape));
    bool rg = false;
    for (auto& p : parents) {
        rg = rg || p.node()->requires_grad;
        out.node()->parents.push_back(p.node());
    }
    out.node()->requires_grad = rg;
    if (rg) out.node()->backward_fn = std::move(backward_fn);
    return out;
}

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn_acc(int64_t M, int64_t N, int64_t K, const T* __restrict A, const T* __restrict B,
                 T* __restrict C) {
    for (int64_t i = 0; i < M; ++i) {
        T* __restrict c = C + i * N;
        const T* __restrict a = A + i * K;
        for (int64_t k = 0; k < K; ++k) {
            const T av = a[k];
            const T* __restrict b = B + k * N;
            for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T. The dot product uses a fixed 16-lane
// accumulator split so it vectorizes without reassociating a single chain;
// the summation order is deterministic.
template <typename T>
void gemm_nt_acc(int64_t M, int64_t N, int64_t K, const T* __restrict A, const T* __restrict B,
                 T* __restrict C) {
    constexpr int64_t kLanes = 16;
    for (int64_t i = 0; i < M; ++i) {
        const T* __restrict a = A + i * K;
        for (int64_t j = 0; j < N; ++j) {
            const T* __restrict b = B + j * K;
            T acc[kLanes] = {};
            int64_t k = 0;
            for (; k + kLanes <= K; k += kLanes)
                for (int64_t u = 0; u < kLanes; ++u) acc[u] += a[k + u] * b[k + u];
            T tail = 0;
            for (; k < K; ++k) tail += a[k] * b[k];
            T total = 0;
            for (int64_t u = 0; u < kLanes; ++u) total += acc[u];
            C[i * N + j] += total + tail;
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn_acc(int64_t M, int64_t N, int64_t K, const T* __restrict A, const T* __restrict B,
                 T* __restrict C) {
    for (int64_t k = 0; k < K; ++k) {
        const T* __restrict a = A + k * M;
        const T* __restrict b = B + k * N;
        for (int64_t i = 0; i < M; ++i) {
            const T av = a[i];
            T* __restrict c = C + i * N;
            for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// col layout: [C*kh*kw, Ho*Wo]
template <typename T>
void im2col(const T* __restrict in, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho, int Wo,
            T* __restrict col) {
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                T* dst = col + (static_cast<int64_t>(c) * kh * kw + ki * kw + kj) *
                                   (static_cast<int64_t>(Ho) * Wo);
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride + ki - pad;
                    if (ih < 0 || ih >= H) {
                        std::fill(dst + static_cast<int64_t>(oh) * Wo,
                                  dst + static_cast<int64_t>(oh + 1) * Wo, T(0));
                        continue;
                    }
                    const T* src = in + (static_cast<int64_t>(c) * H + ih) * W;
                    T* drow = dst + static_cast<int64_t>(oh) * Wo;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride + kj - pad;
                        drow[ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_acc(const T* __restrict col, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
                int Wo, T* __restrict in_grad) {
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const T* src = col + (static_cast<int64_t>(c) * kh * kw + ki * kw + kj) *
                                         (static_cast<int64_t>(Ho) * Wo);
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride + ki - pad;
                    if (ih < 0 || ih >= H) continue;
                    T* dst = in_grad + (static_cast<int64_t>(c) * H + ih) * W;
                    const T* srow = src + static_cast<int64_t>(oh) * Wo;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride + kj - pad;
                        if (iw >= 0 && iw < W) dst[iw] += srow[ow];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// --- elementwise ops -------------------------------------------------------

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    KinkProbe& probe = kink_probe();
    if (probe.enabled) {
        for (T v : x.data())
            probe.min_distance = std::min(probe.min_distance, std::abs(static_cast<double>(v)));
    }
    TensorT<T> out = detail::make_op<T>(x.shape(), {x}, [](NodeT<T>& n) {
        NodeT<T>& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < n.value.size(); ++i)
            if (p.value[i] > T(0)) p.grad[i] += n.grad[i];
    });
    const auto in = x.data();
    auto o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
    return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    TensorT<T> out = detail::make_op<T>(a.shape(), {a, b}, [](NodeT<T>& n) {
        for (int pi = 0; pi < 2; ++pi) {
            NodeT<T>& p = *n.parents[pi];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (size_t i = 0; i < n.value.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
    const auto da = a.data();
    const auto db = b.data();
    auto o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = da[i] + db[i];
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    TensorT<T> out = detail::make_op<T>(a.shape(), {a, b}, [](NodeT<T>& n) {
        NodeT<T>& pa = *n.parents[0];
        NodeT<T>& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < n.value.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < n.value.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
        }
    });
    const auto da = a.data();
    const auto db = b.data();
    auto o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = da[i] * db[i];
    return out;
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& x, T s) {
    TensorT<T> out = detail::make_op<T>(x.shape(), {x}, [s](NodeT<T>& n) {
        NodeT<T>& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < n.value.size(); ++i) p.grad[i] += n.grad[i] * s;
    });
    const auto in = x.data();
    auto o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = in[i] * s;
    return out;
}

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
    TensorT<T> out = detail::make_op<T>({1}, {x}, [](NodeT<T>& n) {
        NodeT<T>& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const T g = n.grad[0];
        for (size_t i = 0; i < p.value.size(); ++i) p.grad[i] += g;
    });
    T acc = 0;
    for (T v : x.data()) acc += v;
    out.mutable_data()[0] = acc;
    return out;
}

// --- convolution -----------------------------------------------------------

// Cross-correlation (no kernel flip), zero padding. input [B,Cin,H,W],
// kernel [Cout,Cin,kh,kw], optional bias [Cout]. Pass a default-constructed
// tensor for no bias.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, const TensorT<T>& bias,
                  int stride, int pad) {
    if (input.shape().size() != 4)
        throw std::invalid_argument("conv2d: input must be 4-d, got " + shape_str(input.shape()));
    if (kernel.shape().size() != 4)
        throw std::invalid_argument("conv2d: kernel must be 4-d, got " + shape_str(kernel.shape()));
    const int B = input.shape()[0], Cin = input.shape()[1], H = input.shape()[2],
              W = input.shape()[3];
    const int Cout = kernel.shape()[0], Kc = kernel.shape()[1], kh = kernel.shape()[2],
              kw = kernel.shape()[3];
    if (Cin != Kc)
        throw std::invalid_argument("conv2d: input channels " + std::to_string(Cin) +
                                    " do not match kernel channels " + std::to_string(Kc) +
                                    " (input " + shape_str(input.shape()) + ", kernel " +
                                    shape_str(kernel.shape()) + ")");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (pad < 0) throw std::invalid_argument("conv2d: pad must be >= 0");
    if (kh > H + 2 * pad || kw > W + 2 * pad)
        throw std::invalid_argument("conv2d: kernel " + std::to_string(kh) + "x" +
                                    std::to_string(kw) + " exceeds padded input " +
                                    std::to_string(H + 2 * pad) + "x" + std::to_string(W + 2 * pad));
    if (bias.defined() && (bias.shape().size() != 1 || bias.shape()[0] != Cout))
        throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) +
                                    " does not match output channels " + std::to_string(Cout));

    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    const int64_t ckk = static_cast<int64_t>(Cin) * kh * kw;
    const int64_t hw_out = static_cast<int64_t>(Ho) * Wo;
    const bool has_bias = bias.defined();

    std::vector<TensorT<T>> parents = {input, kernel};
    if (has_bias) parents.push_back(bias);

    auto backward = [stride, pad, B, Cin, H, W, Cout, kh, kw, Ho, Wo, ckk, hw_out,
                     has_bias](NodeT<T>& n) {
        NodeT<T>& in = *n.parents[0];
        NodeT<T>& ker = *n.parents[1];
        std::vector<T> col;
        std::vector<T> dcol;
        if (ker.requires_grad) ker.ensure_grad();
        if (in.requires_grad) in.ensure_grad();
        for (int b = 0; b < B; ++b) {
            const T* dout_b = n.grad.data() + static_cast<int64_t>(b) * Cout * hw_out;
            if (ker.requires_grad) {
                col.assign(static_cast<size_t>(ckk * hw_out), T(0));
                detail::im2col(in.value.data() + static_cast<int64_t>(b) * Cin * H * W, Cin, H, W,
                               kh, kw, stride, pad, Ho, Wo, col.data());
                detail::gemm_nt_acc(Cout, ckk, hw_out, dout_b, col.data(), ker.grad.data());
            }
            if (in.requires_grad) {
                dcol.assign(static_cast<size_t>(ckk * hw_out), T(0));
                detail::gemm_tn_acc(ckk, hw_out, Cout, ker.value.data(), dout_b, dcol.data());
                detail::col2im_acc(dcol.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                                   in.grad.data() + static_cast<int64_t>(b) * Cin * H * W);
            }
        }
        if (has_bias) {
            NodeT<T>& bi = *n.parents[2];
            if (bi.requires_grad) {
                bi.ensure_grad();
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < Cout; ++c) {
                        const T* g = n.grad.data() + (static_cast<int64_t>(b) * Cout + c) * hw_out;
                        T acc = 0;
                        for (int64_t i = 0; i < hw_out; ++i) acc += g[i];
                        bi.grad[c] += acc;
                    }
            }
        }
    };

    TensorT<T> out = detail::make_op<T>({B, Cout, Ho, Wo}, std::move(parents), backward);

    std::vector<T> col(static_cast<size_t>(ckk * hw_out));
    const T* in_data = input.data().data();
    const T* k_data = kernel.data().data();
    T* out_data = out.mutable_data().data();
    for (int b = 0; b < B; ++b) {
        detail::im2col(in_data + static_cast<int64_t>(b) * Cin * H * W, Cin, H, W, kh, kw, stride,
                       pad, Ho, Wo, col.data());
        detail::gemm_nn_acc(Cout, hw_out, ckk, k_data, col.data(),
                            out_data + static_cast<int64_t>(b) * Cout * hw_out);
    }
    if (has_bias) {
        const T* b_data = bias.data().data();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < Cout; ++c) {
                T* o = out_data + (static_cast<int64_t>(b) * Cout + c) * hw_out;
                for (int64_t i = 0; i < hw_out; ++i) o[i] += b_data[c];
            }
    }
    return out;
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, int stride, int pad) {
    return conv2d(input, kernel, TensorT<T>(), stride, pad);
}

// --- batch normalization ----------------------------------------------------

template <typename T>
struct BnStateT {
    std::vector<T> running_mean;
    std::vector<T> running_var;  // biased batch variance
    int64_t updates = 0;
};

// Train mode normalizes with batch statistics and folds them into the running
// estimates as running <- f*running + (1-f)*batch. Eval mode normalizes with
// the running estimates and errors out if none were ever recorded.
template <typename T>
TensorT<T> batchnorm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                     BnStateT<T>& state, Mode mode, T moving_average_fraction, T epsilon) {
    if (x.shape().size() != 4)
        throw std::invalid_argument("batchnorm: input must be 4-d, got " + shape_str(x.shape()));
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
        throw std::invalid_argument("batchnorm: gamma/beta must have shape [" + std::to_string(C) +
                                    "]");
    if (static_cast<int>(state.running_mean.size()) != C ||
        static_cast<int>(state.running_var.size()) != C)
        throw std::invalid_argument("batchnorm: state vectors must have length " +
                                    std::to_string(C));
    const int64_t m = static_cast<int64_t>(B) * H * W;  // samples per channel
    const int64_t hw = static_cast<int64_t>(H) * W;

    std::vector<T> mean(C), inv_std(C);
    if (mode == Mode::Train) {
        if (m < 2)
            throw std::invalid_argument(
                "batchnorm: train mode requires at least 2 samples per channel, got " +
                std::to_string(m));
        for (int c = 0; c < C; ++c) {
            double acc = 0;
            for (int b = 0; b < B; ++b) {
                const T* p = x.data().data() + (static_cast<int64_t>(b) * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) acc += p[i];
            }
            const double mu = acc / static_cast<double>(m);
            double vacc = 0;
            for (int b = 0; b < B; ++b) {
                const T* p = x.data().data() + (static_cast<int64_t>(b) * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    const double d = p[i] - mu;
                    vacc += d * d;
                }
            }
            const double var = vacc / static_cast<double>(m);
            mean[c] = static_cast<T>(mu);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(epsilon)));
            state.running_mean[c] = moving_average_fraction * state.running_mean[c] +
                                    (T(1) - moving_average_fraction) * static_cast<T>(mu);
            state.running_var[c] = moving_average_fraction * state.running_var[c] +
                                   (T(1) - moving_average_fraction) * static_cast<T>(var);
        }
        state.updates += 1;
    } else {
        if (state.updates == 0)
            throw std::runtime_error("uninitialized normalization statistics: eval mode before "
                                     "any running-stat update");
        for (int c = 0; c < C; ++c) {
            mean[c] = state.running_mean[c];
            inv_std[c] = static_cast<T>(
                1.0 / std::sqrt(static_cast<double>(state.running_var[c]) +
                                static_cast<double>(epsilon)));
        }
    }

    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
    {
        const T* in = x.data().data();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const int64_t base = (static_cast<int64_t>(b) * C + c) * hw;
                const T mu = mean[c], is = inv_std[c];
                for (int64_t i = 0; i < hw; ++i) (*xhat)[base + i] = (in[base + i] - mu) * is;
            }
    }

    const bool train = mode == Mode::Train;
    auto backward = [B, C, hw, m, train, inv_std, xhat](NodeT<T>& n) {
        NodeT<T>& xin = *n.parents[0];
        NodeT<T>& ga = *n.parents[1];
        NodeT<T>& be = *n.parents[2];
        const T* dy = n.grad.data();
        const T* xh = xhat->data();

        if (ga.requires_grad) {
            ga.ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const int64_t base = (static_cast<int64_t>(b) * C + c) * hw;
                    T acc = 0;
                    for (int64_t i = 0; i < hw; ++i) acc += dy[base + i] * xh[base + i];
                    ga.grad[c] += acc;
                }
        }
        if (be.requires_grad) {
            be.ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const int64_t base = (static_cast<int64_t>(b) * C + c) * hw;
                    T acc = 0;
                    for (int64_t i = 0; i < hw; ++i) acc += dy[base + i];
                    be.grad[c] += acc;
                }
        }
        if (!xin.requires_grad) return;
        xin.ensure_grad();
        const T* gval = ga.value.data();
        if (train) {
            // dx = gamma*inv_std/m * (m*dy - sum(dy) - xhat*sum(dy*xhat)), per channel
            for (int c = 0; c < C; ++c) {
                double sum_dy = 0, sum_dy_xhat = 0;
                for (int b = 0; b < B; ++b) {
                    const int64_t base = (static_cast<int64_t>(b) * C + c) * hw;
                    for (int64_t i = 0; i < hw; ++i) {
                        sum_dy += dy[base + i];
                        sum_dy_xhat += dy[base + i] * xh[base + i];
                    }
                }
                const T k = gval[c] * inv_std[c] / static_cast<T>(m);
                const T sd = static_cast<T>(sum_dy), sdx = static_cast<T>(sum_dy_xhat);
                for (int b = 0; b < B; ++b) {
                    const int64_t base = (static_cast<int64_t>(b) * C + c) * hw;
                    for (int64_t i = 0; i < hw; ++i)
                        xin.grad[base + i] +=
                            k * (static_cast<T>(m) * dy[base + i] - sd - xh[base + i] * sdx);
                }
            }
        } else {
            for (int c = 0; c < C; ++c) {
                const T k = gval[c] * inv_std[c];
                for (int b = 0; b < B; ++b) {
                    const int64_t base = (static_cast<int64_t>(b) * C + c) * hw;
                    for (int64_t i = 0; i < hw; ++i) xin.grad[base + i] += k * dy[base + i];
                }
            }
        }
    };

    TensorT<T> out = detail::make_op<T>(x.shape(), {x, gamma, beta}, std::move(backward));
    {
        T* o = out.mutable_data().data();
        const T* g = gamma.data().data();
        const T* be = beta.data().data();
        const T* xh = xhat->data();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const int64_t base = (static_cast<int64_t>(b) * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) o[base + i] = g[c] * xh[base + i] + be[c];
            }
    }
    return out;
}

// --- pooling, scoring, losses -----------------------------------------------

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
    if (x.shape().size() != 4)
        throw std::invalid_argument("global_avg_pool: input must be 4-d, got " +
                                    shape_str(x.shape()));
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int64_t hw = static_cast<int64_t>(H) * W;
    TensorT<T> out = detail::make_op<T>({B, C}, {x}, [B, C, hw](NodeT<T>& n) {
        NodeT<T>& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const T g = n.grad[static_cast<int64_t>(b) * C + c] / static_cast<T>(hw);
                T* dst = p.grad.data() + (static_cast<int64_t>(b) * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) dst[i] += g;
            }
    });
    const T* in = x.data().data();
    T* o = out.mutable_data().data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* src = in + (static_cast<int64_t>(b) * C + c) * hw;
            T acc = 0;
            for (int64_t i = 0; i < hw; ++i) acc += src[i];
            o[static_cast<int64_t>(b) * C + c] = acc / static_cast<T>(hw);
        }
    return out;
}

// Row-wise softmax with max subtraction. scores [B,C].
template <typename T>
TensorT<T> softmax(const TensorT<T>& scores) {
    if (scores.shape().size() != 2)
        throw std::invalid_argument("softmax: input must be 2-d, got " + shape_str(scores.shape()));
    const int B = scores.shape()[0], C = scores.shape()[1];
    TensorT<T> out = detail::make_op<T>({B, C}, {scores}, [B, C](NodeT<T>& n) {
        NodeT<T>& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int b = 0; b < B; ++b) {
            const T* y = n.value.data() + static_cast<int64_t>(b) * C;
            const T* dy = n.grad.data() + static_cast<int64_t>(b) * C;
            T dot = 0;
            for (int c = 0; c < C; ++c) dot += dy[c] * y[c];
            T* dx = p.grad.data() + static_cast<int64_t>(b) * C;
            for (int c = 0; c < C; ++c) dx[c] += y[c] * (dy[c] - dot);
        }
    });
    const T* in = scores.data().data();
    T* o = out.mutable_data().data();
    for (int b = 0; b < B; ++b) {
        const T* row = in + static_cast<int64_t>(b) * C;
        T mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        T denom = 0;
        T* orow = o + static_cast<int64_t>(b) * C;
        for (int c = 0; c < C; ++c) {
            orow[c] = std::exp(row[c] - mx);
            denom += orow[c];
        }
        for (int c = 0; c < C; ++c) orow[c] /= denom;
    }
    return out;
}

// Mean over the batch of -log softmax(scores)[label], fused for stability.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& scores, const std::vector<int>& labels) {
    if (scores.shape().size() != 2)
        throw std::invalid_argument("cross_entropy: scores must be 2-d, got " +
                                    shape_str(scores.shape()));
    const int B = scores.shape()[0], C = scores.shape()[1];
    if (static_cast<int>(labels.size()) != B)
        throw std::invalid_argument("cross_entropy: got " + std::to_string(labels.size()) +
                                    " labels for batch of " + std::to_string(B));
    for (int l : labels)
        if (l < 0 || l >= C)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(l) +
                                        " out of range [0," + std::to_string(C) + ")");

    // softmax probabilities saved for the backward pass
    std::vector<T> probs(static_cast<size_t>(B) * C);
    const T* in = scores.data().data();
    double loss_acc = 0;
    for (int b = 0; b < B; ++b) {
        const T* row = in + static_cast<int64_t>(b) * C;
        T mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double denom = 0;
        for (int c = 0; c < C; ++c) denom += std::exp(static_cast<double>(row[c] - mx));
        const double lse = static_cast<double>(mx) + std::log(denom);
        loss_acc += lse - static_cast<double>(row[labels[b]]);
        for (int c = 0; c < C; ++c)
            probs[static_cast<int64_t>(b) * C + c] =
                static_cast<T>(std::exp(static_cast<double>(row[c]) - lse));
    }

    TensorT<T> out = detail::make_op<T>(
        {1}, {scores}, [B, C, labels, probs = std::move(probs)](NodeT<T>& n) {
            NodeT<T>& p = *n.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            const T g = n.grad[0] / static_cast<T>(B);
            for (int b = 0; b < B; ++b) {
                T* dst = p.grad.data() + static_cast<int64_t>(b) * C;
                const T* pr = probs.data() + static_cast<int64_t>(b) * C;
                for (int c = 0; c < C; ++c) dst[c] += g * (pr[c] - (c == labels[b] ? T(1) : T(0)));
            }
        });
    out.mutable_data()[0] = static_cast<T>(loss_acc / B);
    return out;
}

// input [B,K] x weight [N,K] (+ bias [N]) -> [B,N]
template <typename T>
TensorT<T> linear(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias) {
    if (input.shape().size() != 2 || weight.shape().size() != 2)
        throw std::invalid_argument("linear: input and weight must be 2-d");
    const int B = input.shape()[0], K = input.shape()[1], N = weight.shape()[0];
    if (weight.shape()[1] != K)
        throw std::invalid_argument("linear: weight " + shape_str(weight.shape()) +
                                    " incompatible with input " + shape_str(input.shape()));
    const bool has_bias = bias.defined();
    if (has_bias && bias.shape() != Shape{N})
        throw std::invalid_argument("linear: bias shape " + shape_str(bias.shape()) +
                                    " does not match output features " + std::to_string(N));

    std::vector<TensorT<T>> parents = {input, weight};
    if (has_bias) parents.push_back(bias);
    TensorT<T> out = detail::make_op<T>({B, N}, std::move(parents), [B, K, N,
                                                                     has_bias](NodeT<T>& n) {
        NodeT<T>& in = *n.parents[0];
        NodeT<T>& w = *n.parents[1];
        if (w.requires_grad) {
            w.ensure_grad();
            // dW[n,k] += sum_b g[b,n] * x[b,k]
            detail::gemm_tn_acc(N, K, B, n.grad.data(), in.value.data(), w.grad.data());
        }
        if (in.requires_grad) {
            in.ensure_grad();
            // dX[b,k] += sum_n g[b,n] * W[n,k]
            detail::gemm_nn_acc(B, K, N, n.grad.data(), w.value.data(), in.grad.data());
        }
        if (has_bias) {
            NodeT<T>& bi = *n.parents[2];
            if (bi.requires_grad) {
                bi.ensure_grad();
                for (int b = 0; b < B; ++b)
                    for (int j = 0; j < N; ++j) bi.grad[j] += n.grad[static_cast<int64_t>(b) * N + j];
            }
        }
    });
    T* o = out.mutable_data().data();
    detail::gemm_nt_acc(B, N, K, input.data().data(), weight.data().data(), o);
    if (has_bias) {
        const T* b_data = bias.data().data();
        for (int b = 0; b < B; ++b)
            for (int j = 0; j < N; ++j) o[static_cast<int64_t>(b) * N + j] += b_data[j];
    }
    return out;
}

template <typename T>
TensorT<T> linear(const TensorT<T>& input, const TensorT<T>& weight) {
    return linear(input, weight, TensorT<T>());
}

}  // namespace camds
