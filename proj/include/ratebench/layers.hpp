#pragma once

#include "ratebench/nn.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace ratebench::nn {

/// Ordered, named view of trainable parameters.
class ParameterList {
public:
    void add(std::string name, Var param);
    const std::vector<std::pair<std::string, Var>> & items() const { return items_; }
    std::size_t count() const;
    void zero_grad();
    /// Squared L2 norm of all gradients.
    double grad_norm_sq() const;
    /// Scales all gradients.
    void scale_grads(float s) const;

private:
    std::vector<std::pair<std::string, Var>> items_;
};

using Rng = std::mt19937_64;

/// Uniform(-bound, bound) with bound = 1/sqrt(fan_in).
Tensor uniform_init(Shape shape, std::size_t fan_in, Rng & rng);

class Conv1d {
public:
    Conv1d() = default;
    Conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Conv1dOptions opts, Rng & rng);

    Var operator()(const Var & x) const;
    void collect(const std::string & prefix, ParameterList & params) const;
    /// Zeroes weight and bias.
    void zero();

    Var weight;
    Var bias;
    Conv1dOptions opts;
};

class ConvTranspose1d {
public:
    ConvTranspose1d() = default;
    ConvTranspose1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, ConvTranspose1dOptions opts,
                    Rng & rng);

    Var operator()(const Var & x) const;
    void collect(const std::string & prefix, ParameterList & params) const;

    Var weight;
    Var bias;
    ConvTranspose1dOptions opts;
};

class Snake {
public:
    Snake() = default;
    explicit Snake(std::size_t channels);

    Var operator()(const Var & x) const { return snake(x, alpha); }
    void collect(const std::string & prefix, ParameterList & params) const;

    Var alpha;
};

/// x + conv1x1(snake(conv_k(snake(x)))) with "same" padding.
class ResidualUnit {
public:
    ResidualUnit() = default;
    ResidualUnit(std::size_t channels, std::size_t kernel, std::size_t dilation, Rng & rng);

    Var operator()(const Var & x) const;
    void collect(const std::string & prefix, ParameterList & params) const;

private:
    Snake act1_;
    Conv1d conv1_;
    Snake act2_;
    Conv1d conv2_;
};

struct AdamWOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with decoupled weight decay.
class AdamW {
public:
    AdamW(ParameterList params, AdamWOptions opts);

    void step();
    void zero_grad() { params_.zero_grad(); }
    const ParameterList & params() const { return params_; }
    std::int64_t steps_taken() const { return t_; }

    // Optimizer state, exposed for checkpointing; indexed like params().items().
    std::vector<std::vector<float>> & first_moments() { return m_; }
    std::vector<std::vector<float>> & second_moments() { return v_; }
    const std::vector<std::vector<float>> & first_moments() const { return m_; }
    const std::vector<std::vector<float>> & second_moments() const { return v_; }
    void set_steps_taken(std::int64_t t) { t_ = t; }

private:
    ParameterList params_;
    AdamWOptions opts_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    std::int64_t t_ = 0;
};

}  // namespace ratebench::nn
