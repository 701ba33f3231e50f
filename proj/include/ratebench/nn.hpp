#pragma once

// Minimal reverse-mode autodiff over dense float tensors.
//
// Activations are laid out [batch, channels, time]. A Var owns a graph node;
// ops record a backward closure only when some input requires a gradient and
// gradient recording is enabled (see NoGradGuard).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ratebench::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape & shape);
std::string shape_str(const Shape & shape);

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor scalar(float value) { return Tensor({}, std::vector<float>{value}); }

    const Shape & shape() const { return shape_; }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float * data() { return data_.data(); }
    const float * data() const { return data_.data(); }
    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }
    std::vector<float> & storage() { return data_; }
    const std::vector<float> & storage() const { return data_; }

    float item() const;
    float & operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    Tensor reshaped(Shape shape) const;
    bool all_finite() const;

private:
    Shape shape_;
    std::vector<float> data_;
};

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node &)> backward_fn;

    /// Returns the gradient buffer, zero-allocating it on first use.
    Tensor & grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    const Tensor & value() const { return node_->value; }
    Tensor & mutable_value() { return node_->value; }
    const Shape & shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }

    /// Gradient buffer (allocated with zeros if backward never reached this node).
    Tensor & grad() { return node_->grad_buffer(); }
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    void zero_grad();

    /// Backpropagates from a scalar.
    void backward();

    const std::shared_ptr<Node> & node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard & operator=(const NoGradGuard &) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Creates an op result. `backward` receives the result node and must
/// accumulate into node.inputs[i]->grad_buffer() for inputs that require grad.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node &)> backward);

// --- elementwise --------------------------------------------------------

Var add(const Var & a, const Var & b);
Var sub(const Var & a, const Var & b);
Var mul(const Var & a, const Var & b);
/// a / b, both same shape.
Var div(const Var & a, const Var & b);
Var scale(const Var & a, float s);
Var add_scalar(const Var & a, float s);
Var square(const Var & a);
Var exp(const Var & a);
Var log(const Var & a);
Var sqrt(const Var & a);
Var abs(const Var & a);
Var tanh(const Var & a);
Var silu(const Var & a);
Var leaky_relu(const Var & a, float slope);
/// Clamps to [lo, hi]; the gradient is zero where the input is clamped.
Var clamp(const Var & a, float lo, float hi);
/// log10(max(a, floor)).
Var log10_clamped(const Var & a, float floor);
/// Stops gradient flow.
Var detach(const Var & a);

// --- reductions ---------------------------------------------------------

Var sum(const Var & a);
Var mean(const Var & a);
/// [B, C, T] -> [B, 1, T]
Var sum_channels(const Var & a);
/// [B, C, T] -> [C], mean over batch and time.
Var mean_batch_time(const Var & a);
/// mean(|a - b|)
Var l1_loss(const Var & a, const Var & b);
/// mean((a - b)^2)
Var mse_loss(const Var & a, const Var & b);

// --- shape --------------------------------------------------------------

/// [B, C, T] -> [B, count, T] taking channels [start, start + count).
Var slice_channels(const Var & a, std::size_t start, std::size_t count);
/// Concatenates [B, Ci, T] along channels.
Var concat_channels(const std::vector<Var> & parts);
/// [B, C, T] -> [count, C, T] taking batch items [start, start + count).
Var slice_batch(const Var & a, std::size_t start, std::size_t count);
Var reshape(const Var & a, Shape shape);

// --- linear algebra -----------------------------------------------------

/// out[b] = matrix (rows x K) * x[b] (K x T), matrix is a constant.
Var matmul_const(const Tensor & matrix, const Var & x);

struct Conv1dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;
};

/// x [B, Cin, T], weight [Cout, Cin, K], bias [Cout] (may be undefined).
Var conv1d(const Var & x, const Var & weight, const Var & bias, Conv1dOptions opts);

struct ConvTranspose1dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t output_padding = 0;
};

/// x [B, Cin, T], weight [Cin, Cout, K], bias [Cout] (may be undefined).
Var conv_transpose1d(const Var & x, const Var & weight, const Var & bias, ConvTranspose1dOptions opts);

/// Snake activation x + sin^2(alpha x) / alpha with a per-channel alpha [C].
Var snake(const Var & x, const Var & alpha);

}  // namespace ratebench::nn
