#include "ratebench/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace ratebench::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

thread_local bool g_grad_enabled = true;

void require_same_shape(const Var & a, const Var & b, const char * op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
}

void require_rank3(const Var & a, const char * op) {
    if (a.value().rank() != 3) {
        throw std::invalid_argument(std::string(op) + ": expected [B, C, T] input, got " + shape_str(a.shape()));
    }
}

template <typename Fwd, typename Bwd>
Var unary(const Var & a, Fwd fwd, Bwd dfdx) {
    Tensor out(a.shape());
    const float * x = a.value().data();
    float * y = out.data();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = fwd(x[i]);
    }
    return make_op(std::move(out), {a}, [dfdx](Node & node) {
        auto & in = node.inputs[0];
        if (!in->requires_grad) {
            return;
        }
        auto & gi = in->grad_buffer();
        const float * x = in->value.data();
        const float * y = node.value.data();
        const float * g = node.grad.data();
        const std::size_t n = node.value.numel();
        for (std::size_t i = 0; i < n; ++i) {
            gi[i] += g[i] * dfdx(x[i], y[i]);
        }
    });
}

// dst[(c*K + k) * t_cols + t] = src[c * t_src + t*stride - padding + k*dilation]
void im2col(const float * src, std::size_t channels, std::size_t t_src, std::size_t kernel, std::size_t stride,
            std::size_t padding, std::size_t dilation, std::size_t t_cols, float * dst) {
    for (std::size_t c = 0; c < channels; ++c) {
        const float * s = src + c * t_src;
        for (std::size_t k = 0; k < kernel; ++k) {
            float * d = dst + (c * kernel + k) * t_cols;
            const long offset = static_cast<long>(k * dilation) - static_cast<long>(padding);
            for (std::size_t t = 0; t < t_cols; ++t) {
                const long idx = static_cast<long>(t * stride) + offset;
                d[t] = (idx >= 0 && idx < static_cast<long>(t_src)) ? s[idx] : 0.0f;
            }
        }
    }
}

// Adjoint of im2col: accumulates columns back into dst.
void col2im(const float * cols, std::size_t channels, std::size_t t_dst, std::size_t kernel, std::size_t stride,
            std::size_t padding, std::size_t dilation, std::size_t t_cols, float * dst) {
    for (std::size_t c = 0; c < channels; ++c) {
        float * d = dst + c * t_dst;
        for (std::size_t k = 0; k < kernel; ++k) {
            const float * s = cols + (c * kernel + k) * t_cols;
            const long offset = static_cast<long>(k * dilation) - static_cast<long>(padding);
            for (std::size_t t = 0; t < t_cols; ++t) {
                const long idx = static_cast<long>(t * stride) + offset;
                if (idx >= 0 && idx < static_cast<long>(t_dst)) {
                    d[idx] += s[t];
                }
            }
        }
    }
}

}  // namespace

std::size_t shape_numel(const Shape & shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape & shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? ", " : "") << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
        throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                                    shape_str(shape_));
    }
}

float Tensor::item() const {
    if (data_.size() != 1) {
        throw std::invalid_argument("item() on tensor with shape " + shape_str(shape_));
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Tensor & Node::grad_buffer() {
    if (grad.empty() && value.numel() > 0) {
        grad = Tensor(value.shape());
    }
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
    if (node_ && !node_->grad.empty()) {
        std::fill(node_->grad.values().begin(), node_->grad.values().end(), 0.0f);
    }
}

void Var::backward() {
    if (!node_ || node_->value.numel() != 1) {
        throw std::invalid_argument("backward() requires a scalar");
    }
    if (!node_->requires_grad) {
        return;
    }
    // Iterative post-order DFS for a topological order.
    std::vector<Node *> order;
    std::unordered_set<Node *> visited;
    std::vector<std::pair<Node *, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto & [n, next] = stack.back();
        if (next < n->inputs.size()) {
            Node * child = n->inputs[next++].get();
            if (child->requires_grad && !child->inputs.empty() && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->grad_buffer()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node * n = *it;
        if (n->backward_fn && !n->grad.empty()) {
            n->backward_fn(*n);
        }
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() {
    g_grad_enabled = previous_;
}

bool grad_enabled() {
    return g_grad_enabled;
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node &)> backward) {
    const bool needs = g_grad_enabled &&
                       std::any_of(inputs.begin(), inputs.end(), [](const Var & v) { return v.requires_grad(); });
    Var out(std::move(value), needs);
    if (needs) {
        auto & node = *out.node();
        node.inputs.reserve(inputs.size());
        for (auto & v : inputs) {
            node.inputs.push_back(v.node());
        }
        node.backward_fn = std::move(backward);
    }
    return out;
}

// --- elementwise --------------------------------------------------------

Var add(const Var & a, const Var & b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    const auto n = out.numel();
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = a.value()[i] + b.value()[i];
    }
    return make_op(std::move(out), {a, b}, [](Node & node) {
        for (auto & in : node.inputs) {
            if (in->requires_grad) {
                auto & gi = in->grad_buffer();
                for (std::size_t i = 0; i < gi.numel(); ++i) {
                    gi[i] += node.grad[i];
                }
            }
        }
    });
}

Var sub(const Var & a, const Var & b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = a.value()[i] - b.value()[i];
    }
    return make_op(std::move(out), {a, b}, [](Node & node) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto & in = node.inputs[k];
            if (in->requires_grad) {
                const float sign = k == 0 ? 1.0f : -1.0f;
                auto & gi = in->grad_buffer();
                for (std::size_t i = 0; i < gi.numel(); ++i) {
                    gi[i] += sign * node.grad[i];
                }
            }
        }
    });
}

Var mul(const Var & a, const Var & b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = a.value()[i] * b.value()[i];
    }
    return make_op(std::move(out), {a, b}, [](Node & node) {
        auto & x = node.inputs[0];
        auto & y = node.inputs[1];
        if (x->requires_grad) {
            auto & gx = x->grad_buffer();
            for (std::size_t i = 0; i < gx.numel(); ++i) {
                gx[i] += node.grad[i] * y->value[i];
            }
        }
        if (y->requires_grad) {
            auto & gy = y->grad_buffer();
            for (std::size_t i = 0; i < gy.numel(); ++i) {
                gy[i] += node.grad[i] * x->value[i];
            }
        }
    });
}

Var div(const Var & a, const Var & b) {
    require_same_shape(a, b, "div");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = a.value()[i] / b.value()[i];
    }
    return make_op(std::move(out), {a, b}, [](Node & node) {
        auto & x = node.inputs[0];
        auto & y = node.inputs[1];
        if (x->requires_grad) {
            auto & gx = x->grad_buffer();
            for (std::size_t i = 0; i < gx.numel(); ++i) {
                gx[i] += node.grad[i] / y->value[i];
            }
        }
        if (y->requires_grad) {
            auto & gy = y->grad_buffer();
            for (std::size_t i = 0; i < gy.numel(); ++i) {
                gy[i] -= node.grad[i] * node.value[i] / y->value[i];
            }
        }
    });
}

Var scale(const Var & a, float s) {
    return unary(a, [s](float x) { return s * x; }, [s](float, float) { return s; });
}

Var add_scalar(const Var & a, float s) {
    return unary(a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Var square(const Var & a) {
    return unary(a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

Var exp(const Var & a) {
    return unary(a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Var log(const Var & a) {
    return unary(a, [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

Var sqrt(const Var & a) {
    return unary(a, [](float x) { return std::sqrt(x); }, [](float, float y) { return 0.5f / y; });
}

Var abs(const Var & a) {
    return unary(a, [](float x) { return std::abs(x); },
                 [](float x, float) { return x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f); });
}

Var tanh(const Var & a) {
    return unary(a, [](float x) { return std::tanh(x); }, [](float, float y) { return 1.0f - y * y; });
}

Var silu(const Var & a) {
    return unary(
        a, [](float x) { return x / (1.0f + std::exp(-x)); },
        [](float x, float) {
            const float s = 1.0f / (1.0f + std::exp(-x));
            return s * (1.0f + x * (1.0f - s));
        });
}

Var leaky_relu(const Var & a, float slope) {
    return unary(a, [slope](float x) { return x > 0.0f ? x : slope * x; },
                 [slope](float x, float) { return x > 0.0f ? 1.0f : slope; });
}

Var clamp(const Var & a, float lo, float hi) {
    return unary(a, [lo, hi](float x) { return std::clamp(x, lo, hi); },
                 [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

Var log10_clamped(const Var & a, float floor) {
    constexpr float inv_ln10 = 0.43429448190325176f;
    return unary(a, [floor](float x) { return std::log10(std::max(x, floor)); },
                 [floor](float x, float) { return x > floor ? inv_ln10 / x : 0.0f; });
}

Var detach(const Var & a) {
    return Var(a.value(), false);
}

// --- reductions ---------------------------------------------------------

Var sum(const Var & a) {
    double acc = 0.0;
    for (float v : a.value().values()) {
        acc += v;
    }
    return make_op(Tensor::scalar(static_cast<float>(acc)), {a}, [](Node & node) {
        auto & in = node.inputs[0];
        auto & gi = in->grad_buffer();
        const float g = node.grad[0];
        for (std::size_t i = 0; i < gi.numel(); ++i) {
            gi[i] += g;
        }
    });
}

Var mean(const Var & a) {
    const auto n = a.value().numel();
    if (n == 0) {
        throw std::invalid_argument("mean of empty tensor");
    }
    return scale(sum(a), 1.0f / static_cast<float>(n));
}

Var sum_channels(const Var & a) {
    require_rank3(a, "sum_channels");
    const auto B = a.value().dim(0), C = a.value().dim(1), T = a.value().dim(2);
    Tensor out({B, 1, T});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const float * x = a.value().data() + (b * C + c) * T;
            for (std::size_t t = 0; t < T; ++t) {
                out[b * T + t] += x[t];
            }
        }
    }
    return make_op(std::move(out), {a}, [B, C, T](Node & node) {
        auto & gi = node.inputs[0]->grad_buffer();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                float * g = gi.data() + (b * C + c) * T;
                for (std::size_t t = 0; t < T; ++t) {
                    g[t] += node.grad[b * T + t];
                }
            }
        }
    });
}

Var mean_batch_time(const Var & a) {
    require_rank3(a, "mean_batch_time");
    const auto B = a.value().dim(0), C = a.value().dim(1), T = a.value().dim(2);
    const float inv = 1.0f / static_cast<float>(B * T);
    Tensor out({C});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const float * x = a.value().data() + (b * C + c) * T;
            double acc = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                acc += x[t];
            }
            out[c] += static_cast<float>(acc) * inv;
        }
    }
    return make_op(std::move(out), {a}, [B, C, T, inv](Node & node) {
        auto & gi = node.inputs[0]->grad_buffer();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                float * g = gi.data() + (b * C + c) * T;
                const float gc = node.grad[c] * inv;
                for (std::size_t t = 0; t < T; ++t) {
                    g[t] += gc;
                }
            }
        }
    });
}

Var l1_loss(const Var & a, const Var & b) {
    return mean(abs(sub(a, b)));
}

Var mse_loss(const Var & a, const Var & b) {
    return mean(square(sub(a, b)));
}

// --- shape --------------------------------------------------------------

Var slice_channels(const Var & a, std::size_t start, std::size_t count) {
    require_rank3(a, "slice_channels");
    const auto B = a.value().dim(0), C = a.value().dim(1), T = a.value().dim(2);
    if (start + count > C) {
        throw std::invalid_argument("slice_channels: range exceeds channel count " + std::to_string(C));
    }
    Tensor out({B, count, T});
    for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(a.value().data() + (b * C + start) * T, count * T, out.data() + b * count * T);
    }
    return make_op(std::move(out), {a}, [B, C, T, start, count](Node & node) {
        auto & gi = node.inputs[0]->grad_buffer();
        for (std::size_t b = 0; b < B; ++b) {
            float * g = gi.data() + (b * C + start) * T;
            const float * go = node.grad.data() + b * count * T;
            for (std::size_t i = 0; i < count * T; ++i) {
                g[i] += go[i];
            }
        }
    });
}

Var concat_channels(const std::vector<Var> & parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_channels: no inputs");
    }
    for (const auto & p : parts) {
        require_rank3(p, "concat_channels");
    }
    const auto B = parts[0].value().dim(0), T = parts[0].value().dim(2);
    std::vector<std::size_t> offsets;
    std::size_t C = 0;
    for (const auto & p : parts) {
        if (p.value().dim(0) != B || p.value().dim(2) != T) {
            throw std::invalid_argument("concat_channels: batch/time mismatch");
        }
        offsets.push_back(C);
        C += p.value().dim(1);
    }
    Tensor out({B, C, T});
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto Ci = parts[i].value().dim(1);
        for (std::size_t b = 0; b < B; ++b) {
            std::copy_n(parts[i].value().data() + b * Ci * T, Ci * T, out.data() + (b * C + offsets[i]) * T);
        }
    }
    return make_op(std::move(out), parts, [B, C, T, offsets](Node & node) {
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
            auto & in = node.inputs[i];
            if (!in->requires_grad) {
                continue;
            }
            const auto Ci = in->value.dim(1);
            auto & gi = in->grad_buffer();
            for (std::size_t b = 0; b < B; ++b) {
                const float * go = node.grad.data() + (b * C + offsets[i]) * T;
                float * g = gi.data() + b * Ci * T;
                for (std::size_t k = 0; k < Ci * T; ++k) {
                    g[k] += go[k];
                }
            }
        }
    });
}

Var slice_batch(const Var & a, std::size_t start, std::size_t count) {
    if (a.value().rank() < 1 || start + count > a.value().dim(0)) {
        throw std::invalid_argument("slice_batch: range out of bounds");
    }
    Shape shape = a.shape();
    const std::size_t per = a.value().numel() / shape[0];
    shape[0] = count;
    Tensor out(shape);
    std::copy_n(a.value().data() + start * per, count * per, out.data());
    return make_op(std::move(out), {a}, [start, per](Node & node) {
        auto & gi = node.inputs[0]->grad_buffer();
        float * g = gi.data() + start * per;
        for (std::size_t i = 0; i < node.grad.numel(); ++i) {
            g[i] += node.grad[i];
        }
    });
}

Var reshape(const Var & a, Shape shape) {
    if (shape_numel(shape) != a.value().numel()) {
        throw std::invalid_argument("reshape: element count mismatch");
    }
    return make_op(a.value().reshaped(std::move(shape)), {a}, [](Node & node) {
        auto & gi = node.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < gi.numel(); ++i) {
            gi[i] += node.grad[i];
        }
    });
}

// --- linear algebra -----------------------------------------------------

Var matmul_const(const Tensor & matrix, const Var & x) {
    require_rank3(x, "matmul_const");
    if (matrix.rank() != 2 || matrix.dim(1) != x.value().dim(1)) {
        throw std::invalid_argument("matmul_const: matrix " + shape_str(matrix.shape()) +
                                    " incompatible with input " + shape_str(x.shape()));
    }
    const auto B = x.value().dim(0), K = x.value().dim(1), T = x.value().dim(2), R = matrix.dim(0);
    Tensor out({B, R, T});
    ConstMatMap m(matrix.data(), R, K);
    for (std::size_t b = 0; b < B; ++b) {
        MatMap(out.data() + b * R * T, R, T).noalias() = m * ConstMatMap(x.value().data() + b * K * T, K, T);
    }
    return make_op(std::move(out), {x}, [matrix, B, K, T, R](Node & node) {
        auto & gi = node.inputs[0]->grad_buffer();
        ConstMatMap m(matrix.data(), R, K);
        for (std::size_t b = 0; b < B; ++b) {
            MatMap(gi.data() + b * K * T, K, T).noalias() += m.transpose() *
                                                              ConstMatMap(node.grad.data() + b * R * T, R, T);
        }
    });
}

Var conv1d(const Var & x, const Var & weight, const Var & bias, Conv1dOptions opts) {
    require_rank3(x, "conv1d");
    const auto & w = weight.value();
    if (w.rank() != 3 || w.dim(1) != x.value().dim(1)) {
        throw std::invalid_argument("conv1d: weight " + shape_str(w.shape()) + " incompatible with input " +
                                    shape_str(x.shape()));
    }
    const auto B = x.value().dim(0), Cin = x.value().dim(1), Tin = x.value().dim(2);
    const auto Cout = w.dim(0), K = w.dim(2);
    const auto span = opts.dilation * (K - 1) + 1;
    if (Tin + 2 * opts.padding < span) {
        throw std::invalid_argument("conv1d: input of length " + std::to_string(Tin) + " shorter than kernel span");
    }
    const auto Tout = (Tin + 2 * opts.padding - span) / opts.stride + 1;
    const auto rows = Cin * K;

    auto cols = std::make_shared<std::vector<float>>(B * rows * Tout);
    Tensor out({B, Cout, Tout});
    ConstMatMap wm(w.data(), Cout, rows);
    for (std::size_t b = 0; b < B; ++b) {
        float * col = cols->data() + b * rows * Tout;
        im2col(x.value().data() + b * Cin * Tin, Cin, Tin, K, opts.stride, opts.padding, opts.dilation, Tout, col);
        MatMap o(out.data() + b * Cout * Tout, Cout, Tout);
        o.noalias() = wm * ConstMatMap(col, rows, Tout);
        if (bias.defined()) {
            for (std::size_t c = 0; c < Cout; ++c) {
                o.row(c).array() += bias.value()[c];
            }
        }
    }

    std::vector<Var> inputs{x, weight};
    if (bias.defined()) {
        inputs.push_back(bias);
    }
    return make_op(std::move(out), inputs, [=](Node & node) {
        auto & xin = node.inputs[0];
        auto & win = node.inputs[1];
        ConstMatMap wm(win->value.data(), Cout, rows);
        std::vector<float> gcol(xin->requires_grad ? rows * Tout : 0);
        for (std::size_t b = 0; b < B; ++b) {
            ConstMatMap g(node.grad.data() + b * Cout * Tout, Cout, Tout);
            const float * col = cols->data() + b * rows * Tout;
            if (win->requires_grad) {
                MatMap(win->grad_buffer().data(), Cout, rows).noalias() +=
                    g * ConstMatMap(col, rows, Tout).transpose();
            }
            if (node.inputs.size() > 2 && node.inputs[2]->requires_grad) {
                auto & gb = node.inputs[2]->grad_buffer();
                for (std::size_t c = 0; c < Cout; ++c) {
                    const float * gr = node.grad.data() + (b * Cout + c) * Tout;
                    gb[c] += static_cast<float>(std::accumulate(gr, gr + Tout, 0.0));
                }
            }
            if (xin->requires_grad) {
                MatMap(gcol.data(), rows, Tout).noalias() = wm.transpose() * g;
                col2im(gcol.data(), Cin, Tin, K, opts.stride, opts.padding, opts.dilation, Tout,
                       xin->grad_buffer().data() + b * Cin * Tin);
            }
        }
    });
}

Var conv_transpose1d(const Var & x, const Var & weight, const Var & bias, ConvTranspose1dOptions opts) {
    require_rank3(x, "conv_transpose1d");
    const auto & w = weight.value();
    if (w.rank() != 3 || w.dim(0) != x.value().dim(1)) {
        throw std::invalid_argument("conv_transpose1d: weight " + shape_str(w.shape()) +
                                    " incompatible with input " + shape_str(x.shape()));
    }
    const auto B = x.value().dim(0), Cin = x.value().dim(1), Tin = x.value().dim(2);
    const auto Cout = w.dim(1), K = w.dim(2);
    const long full = static_cast<long>((Tin - 1) * opts.stride + K + opts.output_padding);
    const long Tout_l = full - 2 * static_cast<long>(opts.padding);
    if (Tout_l <= 0) {
        throw std::invalid_argument("conv_transpose1d: non-positive output length");
    }
    const auto Tout = static_cast<std::size_t>(Tout_l);
    const auto rows = Cout * K;

    Tensor out({B, Cout, Tout});
    ConstMatMap wm(w.data(), Cin, rows);
    std::vector<float> col(rows * Tin);
    for (std::size_t b = 0; b < B; ++b) {
        MatMap(col.data(), rows, Tin).noalias() = wm.transpose() * ConstMatMap(x.value().data() + b * Cin * Tin, Cin, Tin);
        float * o = out.data() + b * Cout * Tout;
        col2im(col.data(), Cout, Tout, K, opts.stride, opts.padding, 1, Tin, o);
        if (bias.defined()) {
            for (std::size_t c = 0; c < Cout; ++c) {
                const float bc = bias.value()[c];
                for (std::size_t t = 0; t < Tout; ++t) {
                    o[c * Tout + t] += bc;
                }
            }
        }
    }

    std::vector<Var> inputs{x, weight};
    if (bias.defined()) {
        inputs.push_back(bias);
    }
    return make_op(std::move(out), inputs, [=](Node & node) {
        auto & xin = node.inputs[0];
        auto & win = node.inputs[1];
        ConstMatMap wm(win->value.data(), Cin, rows);
        std::vector<float> gcol(rows * Tin);
        for (std::size_t b = 0; b < B; ++b) {
            const float * g = node.grad.data() + b * Cout * Tout;
            im2col(g, Cout, Tout, K, opts.stride, opts.padding, 1, Tin, gcol.data());
            ConstMatMap gc(gcol.data(), rows, Tin);
            if (xin->requires_grad) {
                MatMap(xin->grad_buffer().data() + b * Cin * Tin, Cin, Tin).noalias() += wm * gc;
            }
            if (win->requires_grad) {
                MatMap(win->grad_buffer().data(), Cin, rows).noalias() +=
                    ConstMatMap(xin->value.data() + b * Cin * Tin, Cin, Tin) * gc.transpose();
            }
            if (node.inputs.size() > 2 && node.inputs[2]->requires_grad) {
                auto & gb = node.inputs[2]->grad_buffer();
                for (std::size_t c = 0; c < Cout; ++c) {
                    double acc = 0.0;
                    for (std::size_t t = 0; t < Tout; ++t) {
                        acc += g[c * Tout + t];
                    }
                    gb[c] += static_cast<float>(acc);
                }
            }
        }
    });
}

Var snake(const Var & x, const Var & alpha) {
    require_rank3(x, "snake");
    const auto B = x.value().dim(0), C = x.value().dim(1), T = x.value().dim(2);
    if (alpha.value().numel() != C) {
        throw std::invalid_argument("snake: alpha size does not match channels");
    }
    using ArrayMap = Eigen::Map<Eigen::ArrayXf>;
    using ConstArrayMap = Eigen::Map<const Eigen::ArrayXf>;
    constexpr float eps = 1e-9f;
    const auto n = static_cast<Eigen::Index>(T);
    // Rows are copied into aligned scratch: Eigen evaluates sin() with scalar code in the
    // unaligned head and tail, so results would otherwise depend on heap addresses.
    Tensor out(x.shape());
    Eigen::ArrayXf xa(n);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const float a = alpha.value()[c];
            xa = ConstArrayMap(x.value().data() + (b * C + c) * T, n);
            xa += (a * xa).sin().square() / (a + eps);
            ArrayMap(out.data() + (b * C + c) * T, n) = xa;
        }
    }
    return make_op(std::move(out), {x, alpha}, [B, C, T, n](Node & node) {
        auto & xin = node.inputs[0];
        auto & ain = node.inputs[1];
        Eigen::ArrayXf xi(n), g(n), s(n), s2(n);
        for (std::size_t c = 0; c < C; ++c) {
            const float a = ain->value[c];
            const float inv = 1.0f / (a + eps);
            double ga = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const auto off = (b * C + c) * T;
                xi = ConstArrayMap(xin->value.data() + off, n);
                g = ConstArrayMap(node.grad.data() + off, n);
                s = (a * xi).sin();
                s2 = (2.0f * a * xi).sin();
                if (xin->requires_grad) {
                    ArrayMap(xin->grad_buffer().data() + off, n) += g * (1.0f + s2 * (a * inv));
                }
                ga += (g * (xi * s2 * inv - s.square() * (inv * inv))).sum();
            }
            if (ain->requires_grad) {
                ain->grad_buffer()[c] += static_cast<float>(ga);
            }
        }
    });
}

}  // namespace ratebench::nn
