#pragma once

#include "ratebench/layers.hpp"
#include "ratebench/nn.hpp"
#include "ratebench/rate_core.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ratebench {

enum class BottleneckKind { gaussian, vq };
enum class RateLossKind { target_kl, free_bits, none };

std::string to_string(BottleneckKind kind);
std::string to_string(RateLossKind kind);
BottleneckKind parse_bottleneck_kind(const std::string & s);
RateLossKind parse_rate_loss_kind(const std::string & s);

// The prior is fixed to N(0, I); there is no field for it.
struct BottleneckConfig {
    BottleneckKind kind = BottleneckKind::gaussian;
    int latent_dim = 16;
    RateLossKind rate_loss = RateLossKind::target_kl;
    double passthrough_prob = 0.0;
    /// Per-dimension floor of the free-bits rate term (nats).
    double free_bits_lambda = 0.5;
    int codebook_size = 16;
    int num_codebooks = 1;
    double ema_decay = 0.99;
    /// Codes whose EMA usage falls below this are re-seeded from batch features.
    double dead_code_threshold = 1e-3;

    /// Throws std::invalid_argument on inconsistent settings.
    void validate() const;
};

inline constexpr float kLogVarMin = -30.0f;
inline constexpr float kLogVarMax = 20.0f;

struct BottleneckResult {
    nn::Var z;             // [B, D, F], fed to the decoder
    nn::Var mu;            // gaussian only
    nn::Var log_var;       // gaussian only, clamped
    nn::Var per_frame_kl;  // [B, 1, F]; undefined for passthrough and vq
    nn::Var per_dim_kl;    // [D], batch/time mean; undefined for passthrough and vq
    /// vq: num_codebooks * ln K per frame, independent of the input.
    std::optional<double> constant_kl;
    std::map<std::string, nn::Var> aux_losses;
    bool was_passthrough = false;
    /// vq: selected code per stage, flattened [B * F] in (b, f) order.
    std::vector<std::vector<int>> codes;

    /// True when this batch contributes to rate statistics and the rate loss.
    bool has_rate() const { return per_frame_kl.defined(); }
    /// Batch mean of the per-frame KL; requires has_rate().
    double mean_kl() const;
};

/// Elementwise closed-form KL terms [B, D, F] of a diagonal Gaussian against N(0, 1).
nn::Var gaussian_kl_elements(const nn::Var & mu, const nn::Var & log_var);

/// Reparameterized Gaussian bottleneck over features [B, 2D, F] (mu channels first).
/// training: z = mu + sigma * eps with eps drawn from `rng_seed`; eval: z = mu.
BottleneckResult gaussian_forward(const nn::Var & features, int latent_dim, bool training, std::uint64_t rng_seed);

/// Pure auto-encoder path: z = mu, no sampling and no rate terms.
BottleneckResult passthrough_forward(const nn::Var & features, int latent_dim);

/// Bernoulli(prob) per batch, a pure function of (batch_index, seed).
bool choose_passthrough(std::uint64_t batch_index, double passthrough_prob, std::uint64_t rng_seed);

/// Rate term for the loss: target-KL or free-bits, or undefined when the batch carries no rate.
nn::Var rate_term(const BottleneckResult & result, RateLossKind kind, const RateSpec & spec, double free_bits_lambda);

/// Residual vector quantizer with EMA codebook updates.
class ResidualVq {
public:
    ResidualVq() = default;
    ResidualVq(int codebook_size, int num_codebooks, int dim, double ema_decay, double dead_code_threshold);

    bool initialized() const { return initialized_; }
    int codebook_size() const { return codebook_size_; }
    int num_codebooks() const { return num_codebooks_; }
    int dim() const { return dim_; }

    /// Seeds every codebook from random frames of `features` [B, D, F] (stage residuals for later stages).
    void initialize(const nn::Tensor & features, nn::Rng & rng);
    /// Sets codebook `stage` directly ([K, D] row-major) and marks the quantizer initialized
    /// once all stages are set.
    void set_codebook(int stage, std::vector<float> codes);
    const std::vector<float> & codebook(int stage) const { return codebooks_.at(stage); }

    /// Quantizes features [B, D, F]. When `training` and `rng` is given, codebooks are
    /// EMA-updated from this batch (single writer).
    BottleneckResult forward(const nn::Var & features, bool training, nn::Rng * rng);

    /// Flat state for checkpoints: codebooks, EMA counts and sums per stage.
    std::map<std::string, nn::Tensor> state() const;
    void load_state(const std::map<std::string, nn::Tensor> & state);

    /// Index of the nearest code (squared Euclidean) to `v` in codebook `stage`.
    int nearest(int stage, const float * v) const;

private:
    int codebook_size_ = 0;
    int num_codebooks_ = 0;
    int dim_ = 0;
    double ema_decay_ = 0.99;
    double dead_code_threshold_ = 1e-3;
    bool initialized_ = false;
    std::vector<std::vector<float>> codebooks_;   // [stage][K * D]
    std::vector<std::vector<double>> ema_count_;  // [stage][K]
    std::vector<std::vector<double>> ema_sum_;    // [stage][K * D]
    std::vector<bool> stage_set_;
};

}  // namespace ratebench
