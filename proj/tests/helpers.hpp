#pragma once

#include "ratebench/config.hpp"
#include "ratebench/nn.hpp"

#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>

namespace testing {

namespace fs = std::filesystem;

/// Fresh, empty directory under the system temp dir.
inline fs::path fresh_dir(const std::string & name) {
    const fs::path p = fs::temp_directory_path() / ("ratebench_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

/// Small, fast training setup: 8 items of 0.1 s (4 latent frames each).
inline ratebench::TrainConfig tiny_config() {
    ratebench::TrainConfig cfg;
    cfg.data.n_items = 8;
    cfg.data.segment_s = 0.1;
    cfg.data.eval_fraction = 0.25;
    cfg.steps = 6;
    cfg.batch_size = 2;
    cfg.log_every = 1;
    cfg.eval_every = 3;
    cfg.lr = 1e-3;
    return cfg;
}

inline ratebench::nn::Tensor random_tensor(ratebench::nn::Shape shape, std::uint64_t seed, float scale = 1.0f) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, scale);
    ratebench::nn::Tensor t(std::move(shape));
    for (auto & v : t.values()) v = n(rng);
    return t;
}

/// Largest relative mismatch between backprop and central differences of a scalar function.
inline double gradcheck(const std::function<ratebench::nn::Var(const ratebench::nn::Var &)> & f,
                        const ratebench::nn::Tensor & x0, float h = 1e-2f) {
    using namespace ratebench::nn;
    Var x(x0, true);
    Var y = f(x);
    y.backward();
    const Tensor g = x.grad();
    double worst = 0.0;
    for (std::size_t i = 0; i < x0.numel(); ++i) {
        Tensor xp = x0, xm = x0;
        xp[i] += h;
        xm[i] -= h;
        const double fp = f(Var(xp)).value().item();
        const double fm = f(Var(xm)).value().item();
        const double num = (fp - fm) / (2.0 * h);
        const double err = std::abs(num - g[i]) / std::max({1e-2, std::abs(num), std::abs(double(g[i]))});
        worst = std::max(worst, err);
    }
    return worst;
}

inline bool bit_equal(const ratebench::nn::Tensor & a, const ratebench::nn::Tensor & b) {
    return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin(), b.values().end(),
                                               [](float x, float y) { return std::memcmp(&x, &y, sizeof x) == 0; });
}

}  // namespace testing
