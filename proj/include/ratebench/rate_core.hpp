#pragma once

// Rate bookkeeping for Gaussian and vector-quantized bottlenecks.
//
// All KL values are in nats per latent frame (summed over latent dimensions).
// Conversion to bits happens only in kl_to_bitrate() and vq_bitrate().

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ratebench {

/// Sample rate, hop, latent size and the rate target derived from them.
class RateSpec {
public:
    /// Builds a spec from a target bitrate; the per-frame target KL is derived.
    static RateSpec from_bitrate(double sample_rate_hz, int hop, int latent_dim, double target_bitrate_bps);
    /// Builds a spec from a per-frame target KL; the bitrate is derived.
    static RateSpec from_target_kl(double sample_rate_hz, int hop, int latent_dim, double target_kl_nats);

    double sample_rate_hz() const { return sample_rate_hz_; }
    int hop() const { return hop_; }
    double frame_rate_hz() const { return frame_rate_hz_; }
    int latent_dim() const { return latent_dim_; }
    double target_bitrate_bps() const { return target_bitrate_bps_; }
    double target_kl_nats() const { return target_kl_nats_; }

    /// Same spec with a different target KL.
    RateSpec with_target_kl(double target_kl_nats) const;

    /// True when sample rate, hop and latent dim agree (targets may differ).
    bool same_geometry(const RateSpec & other) const;

private:
    RateSpec(double sample_rate_hz, int hop, int latent_dim);

    double sample_rate_hz_;
    int hop_;
    double frame_rate_hz_;
    int latent_dim_;
    double target_bitrate_bps_ = 0.0;
    double target_kl_nats_ = 0.0;
};

/// Diagonal Gaussian posterior q(z|x) over `frames` latent frames of `dim` dimensions.
/// Storage is row-major [frames x dim].
struct GaussianPosterior {
    std::size_t frames = 0;
    std::size_t dim = 0;
    std::vector<double> mu;
    std::vector<double> log_var;

    GaussianPosterior() = default;
    GaussianPosterior(std::size_t frames, std::size_t dim);
    GaussianPosterior(std::size_t frames, std::size_t dim, std::vector<double> mu, std::vector<double> log_var);

    /// Throws std::invalid_argument on shape mismatch or non-finite entries.
    void validate() const;
};

/// KL(N(mu, exp(log_var)) || N(0, 1)) for a single dimension.
double gaussian_kl_term(double mu, double log_var);

struct KlTermGradient {
    double d_mu;
    double d_log_var;
};

/// Analytic gradient of gaussian_kl_term: d/dmu = mu, d/dlog_var = (exp(log_var) - 1) / 2.
KlTermGradient gaussian_kl_term_grad(double mu, double log_var);

/// Closed-form KL to the standard normal prior, one value per frame.
std::vector<double> gaussian_kl(const GaussianPosterior & post);

/// Gradient of sum_f gaussian_kl(post)[f] with respect to mu and log_var.
/// Returned in a posterior-shaped struct (mu holds d/dmu, log_var holds d/dlog_var).
GaussianPosterior gaussian_kl_gradient(const GaussianPosterior & post);

struct MonteCarloEstimate {
    double estimate;
    double std_error;
};

/// Sample-mean estimate of the per-frame KL, E_q[log q(z) - log p(z)], averaged over frames.
/// Uses the exact Gaussian log densities; deterministic for a fixed seed.
MonteCarloEstimate kl_mc_oracle(const GaussianPosterior & post, std::size_t n_samples, std::uint64_t seed);

/// Theoretical bitrate of a latent stream: frame_rate * KL / ln 2.
double kl_to_bitrate(double kl_nats_per_frame, double frame_rate_hz);

/// Inverse of kl_to_bitrate.
double bitrate_to_target_kl(double bps, double frame_rate_hz);

/// ((measured - target) / latent_dim)^2.
double target_kl_loss(double measured_kl, const RateSpec & spec);

/// Free-bits rate term: sum_j max(lambda_min, per_dim_kl[j]).
double free_bits_loss(std::span<const double> per_dim_kl, double lambda_min);

/// Rate of a residual VQ with a uniform prior over each codebook.
double vq_bitrate(int codebook_size, int num_codebooks, double frame_rate_hz);

/// Per-frame "KL" of a residual VQ under a uniform prior: num_codebooks * ln K.
double vq_kl_nats(int codebook_size, int num_codebooks);

}  // namespace ratebench
