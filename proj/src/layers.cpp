#include "ratebench/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace ratebench::nn {

void ParameterList::add(std::string name, Var param) {
    if (!param.requires_grad()) {
        throw std::invalid_argument("parameter '" + name + "' does not require grad");
    }
    items_.emplace_back(std::move(name), std::move(param));
}

std::size_t ParameterList::count() const {
    std::size_t n = 0;
    for (const auto & [name, p] : items_) {
        n += p.value().numel();
    }
    return n;
}

void ParameterList::zero_grad() {
    for (auto & [name, p] : items_) {
        p.zero_grad();
    }
}

double ParameterList::grad_norm_sq() const {
    double acc = 0.0;
    for (auto [name, p] : items_) {
        if (!p.has_grad()) {
            continue;
        }
        for (float g : p.grad().values()) {
            acc += static_cast<double>(g) * g;
        }
    }
    return acc;
}

void ParameterList::scale_grads(float s) const {
    for (auto [name, p] : items_) {
        if (p.has_grad()) {
            for (float & g : p.grad().values()) {
                g *= s;
            }
        }
    }
}

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng & rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (float & v : t.values()) {
        v = dist(rng);
    }
    return t;
}

Conv1d::Conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Conv1dOptions opts, Rng & rng)
    : weight(uniform_init({out_ch, in_ch, kernel}, in_ch * kernel, rng), true),
      bias(uniform_init({out_ch}, in_ch * kernel, rng), true),
      opts(opts) {}

Var Conv1d::operator()(const Var & x) const {
    return conv1d(x, weight, bias, opts);
}

void Conv1d::collect(const std::string & prefix, ParameterList & params) const {
    params.add(prefix + ".weight", weight);
    params.add(prefix + ".bias", bias);
}

void Conv1d::zero() {
    for (float & v : weight.mutable_value().values()) {
        v = 0.0f;
    }
    for (float & v : bias.mutable_value().values()) {
        v = 0.0f;
    }
}

ConvTranspose1d::ConvTranspose1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                                 ConvTranspose1dOptions opts, Rng & rng)
    : weight(uniform_init({in_ch, out_ch, kernel}, in_ch * kernel / std::max<std::size_t>(opts.stride, 1), rng),
             true),
      bias(uniform_init({out_ch}, in_ch * kernel / std::max<std::size_t>(opts.stride, 1), rng), true),
      opts(opts) {}

Var ConvTranspose1d::operator()(const Var & x) const {
    return conv_transpose1d(x, weight, bias, opts);
}

void ConvTranspose1d::collect(const std::string & prefix, ParameterList & params) const {
    params.add(prefix + ".weight", weight);
    params.add(prefix + ".bias", bias);
}

Snake::Snake(std::size_t channels) : alpha(Tensor({channels}, 1.0f), true) {}

void Snake::collect(const std::string & prefix, ParameterList & params) const {
    params.add(prefix + ".alpha", alpha);
}

ResidualUnit::ResidualUnit(std::size_t channels, std::size_t kernel, std::size_t dilation, Rng & rng)
    : act1_(channels),
      conv1_(channels, channels, kernel, {1, dilation * (kernel - 1) / 2, dilation}, rng),
      act2_(channels),
      conv2_(channels, channels, 1, {}, rng) {}

Var ResidualUnit::operator()(const Var & x) const {
    return add(x, conv2_(act2_(conv1_(act1_(x)))));
}

void ResidualUnit::collect(const std::string & prefix, ParameterList & params) const {
    act1_.collect(prefix + ".act1", params);
    conv1_.collect(prefix + ".conv1", params);
    act2_.collect(prefix + ".act2", params);
    conv2_.collect(prefix + ".conv2", params);
}

AdamW::AdamW(ParameterList params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {
    if (opts_.lr < 0.0 || opts_.weight_decay < 0.0) {
        throw std::invalid_argument("AdamW: lr and weight_decay must be >= 0");
    }
    for (const auto & [name, p] : params_.items()) {
        m_.emplace_back(p.value().numel(), 0.0f);
        v_.emplace_back(p.value().numel(), 0.0f);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const float lr = static_cast<float>(opts_.lr);
    const float decay = static_cast<float>(1.0 - opts_.lr * opts_.weight_decay);
    const float b1 = static_cast<float>(opts_.beta1);
    const float b2 = static_cast<float>(opts_.beta2);
    const float step_size = static_cast<float>(opts_.lr / bc1);
    const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const float eps = static_cast<float>(opts_.eps);
    if (lr == 0.0f) {
        return;
    }
    auto & items = params_.items();
    for (std::size_t k = 0; k < items.size(); ++k) {
        Var p = items[k].second;
        if (!p.has_grad()) {
            continue;
        }
        auto & w = p.mutable_value();
        const auto & g = p.grad();
        auto & m = m_[k];
        auto & v = v_[k];
        for (std::size_t i = 0; i < w.numel(); ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            w[i] *= decay;
            w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
        }
    }
}

}  // namespace ratebench::nn
