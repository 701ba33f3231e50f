#pragma once

#include "ratebench/audio_model.hpp"
#include "ratebench/config.hpp"
#include "ratebench/layers.hpp"
#include "ratebench/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace ratebench {

/// Shifted cosine schedule: logSNR(t) = -2 log tan(pi t / 2) + 2 shift.
class NoiseSchedule {
public:
    explicit NoiseSchedule(double shift = -0.69314718055994531);

    double shift() const { return shift_; }
    /// Throws std::invalid_argument unless t lies in (0, 1).
    double logsnr(double t) const;
    double alpha(double t) const;
    double sigma(double t) const;

private:
    double shift_;
};

/// Training draws t from (kTimeEps, 1 - kTimeEps).
inline constexpr double kTimeEps = 1e-5;

/// v = alpha * eps - sigma * z.
std::vector<float> v_target(std::span<const float> z, std::span<const float> eps, double t,
                            const NoiseSchedule & schedule);
/// z_t = alpha * z + sigma * eps.
std::vector<float> noised_latent(std::span<const float> z, std::span<const float> eps, double t,
                                 const NoiseSchedule & schedule);

struct Recovered {
    std::vector<float> z;
    std::vector<float> eps;
};

/// z = alpha * z_t - sigma * v, eps = sigma * z_t + alpha * v.
Recovered recover_from_v(std::span<const float> z_t, std::span<const float> v, double t,
                         const NoiseSchedule & schedule);

/// Frozen encoder outputs: one [D, F] latent per item.
struct LatentSet {
    int dim = 0;
    int frames = 0;
    int num_classes = 0;
    std::vector<std::vector<float>> latents;  // each D * F, row-major [D, F]
    std::vector<int> labels;

    std::size_t size() const { return latents.size(); }
    /// Mean of z^2 over all entries.
    double second_moment() const;
};

/// Eval-mode (posterior mean) latents of `items`.
LatentSet extract_latents(Codec & codec, const std::vector<const std::vector<float> *> & items,
                          const std::vector<int> & labels, int num_classes, int sample_rate_hz);

/// Residual 1-D conv net over latent frames, conditioned on a sinusoidal time embedding
/// and an optional class one-hot. The output layer starts at zero.
class Denoiser {
public:
    Denoiser(int latent_dim, int num_classes, int width, int depth, nn::Rng & rng);

    int latent_dim() const { return latent_dim_; }
    int num_classes() const { return num_classes_; }

    /// z_t [B, D, F], one t and label per batch item (labels ignored without classes).
    nn::Var operator()(const nn::Var & z_t, const std::vector<double> & t, const std::vector<int> & labels) const;
    nn::ParameterList parameters() const;

private:
    int latent_dim_;
    int num_classes_;
    nn::Conv1d in_;
    std::vector<nn::Conv1d> block_a_;
    std::vector<nn::Conv1d> block_b_;
    nn::Conv1d out_;
};

inline constexpr int kTimeEmbeddingDim = 16;

/// E_t[alpha^2] + E_t[sigma^2] * E[z^2] for t uniform on (kTimeEps, 1 - kTimeEps), by quadrature.
double expected_v_second_moment(const NoiseSchedule & schedule, double z_second_moment);

struct DenoiserTrainResult {
    /// Mean training loss of every logged window.
    std::vector<double> losses;
    double init_loss = 0.0;
    double final_loss = 0.0;
};

/// Minimizes MSE(v_pred, v) with AdamW; deterministic for a fixed cfg.seed.
/// init_loss and final_loss average `probe_batches` fixed batches before and after training.
DenoiserTrainResult train_denoiser(const DiffusionConfig & cfg, const LatentSet & train, Denoiser & net,
                                   const NoiseSchedule & schedule, int probe_batches = 64);

struct VMse {
    double mse = 0.0;
    double v_second_moment = 0.0;
};

/// v-MSE on a fixed set of (t, eps) draws per item, plus the mean of v^2 over the same draws.
VMse validation_v_mse(const Denoiser & net, const LatentSet & data, const NoiseSchedule & schedule,
                      std::uint64_t seed, int draws_per_item = 8);

/// Deterministic DDIM-style sampler; returns [n, D, frames] latents.
nn::Tensor sample_latents(const Denoiser & net, const NoiseSchedule & schedule, int steps, int n, int frames,
                          const std::vector<int> & labels, std::uint64_t seed);

struct ProbeReport {
    std::string vae_id;
    double measured_kl = 0.0;
    double measured_bitrate = 0.0;
    double predictability_score = 0.0;
    double init_loss = 0.0;
    double analytic_init_loss = 0.0;
    double final_train_loss = 0.0;

    nlohmann::json to_json() const;
};

/// Trains a denoiser on a frozen VAE's train-split latents and scores its validation v-MSE
/// relative to E[v^2]. Throws FailedPrecondition for an untrained checkpoint.
ProbeReport predictability_score(const std::filesystem::path & vae_checkpoint, const DiffusionConfig & cfg);

}  // namespace ratebench
