#include "ratebench/rate_core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace ratebench {

namespace {

void require_non_negative(double value, const char * name) {
    if (!(value >= 0.0) || !std::isfinite(value)) {
        throw std::invalid_argument(std::string(name) + " must be finite and >= 0, got " + std::to_string(value));
    }
}

}  // namespace

RateSpec::RateSpec(double sample_rate_hz, int hop, int latent_dim)
    : sample_rate_hz_(sample_rate_hz), hop_(hop), frame_rate_hz_(0.0), latent_dim_(latent_dim) {
    if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) {
        throw std::invalid_argument("sample_rate_hz must be positive");
    }
    if (hop < 1) {
        throw std::invalid_argument("hop must be >= 1");
    }
    if (latent_dim < 1) {
        throw std::invalid_argument("latent_dim must be >= 1");
    }
    frame_rate_hz_ = sample_rate_hz / static_cast<double>(hop);
}

RateSpec RateSpec::from_bitrate(double sample_rate_hz, int hop, int latent_dim, double target_bitrate_bps) {
    RateSpec spec(sample_rate_hz, hop, latent_dim);
    require_non_negative(target_bitrate_bps, "target_bitrate_bps");
    spec.target_bitrate_bps_ = target_bitrate_bps;
    spec.target_kl_nats_ = bitrate_to_target_kl(target_bitrate_bps, spec.frame_rate_hz_);
    return spec;
}

RateSpec RateSpec::from_target_kl(double sample_rate_hz, int hop, int latent_dim, double target_kl_nats) {
    RateSpec spec(sample_rate_hz, hop, latent_dim);
    require_non_negative(target_kl_nats, "target_kl_nats");
    spec.target_kl_nats_ = target_kl_nats;
    spec.target_bitrate_bps_ = kl_to_bitrate(target_kl_nats, spec.frame_rate_hz_);
    return spec;
}

RateSpec RateSpec::with_target_kl(double target_kl_nats) const {
    return from_target_kl(sample_rate_hz_, hop_, latent_dim_, target_kl_nats);
}

bool RateSpec::same_geometry(const RateSpec & other) const {
    return sample_rate_hz_ == other.sample_rate_hz_ && hop_ == other.hop_ && latent_dim_ == other.latent_dim_;
}

GaussianPosterior::GaussianPosterior(std::size_t frames, std::size_t dim)
    : frames(frames), dim(dim), mu(frames * dim, 0.0), log_var(frames * dim, 0.0) {}

GaussianPosterior::GaussianPosterior(std::size_t frames, std::size_t dim, std::vector<double> mu,
                                     std::vector<double> log_var)
    : frames(frames), dim(dim), mu(std::move(mu)), log_var(std::move(log_var)) {
    validate();
}

void GaussianPosterior::validate() const {
    if (mu.size() != frames * dim || log_var.size() != frames * dim) {
        throw std::invalid_argument("posterior shape mismatch: mu has " + std::to_string(mu.size()) +
                                    " entries, log_var has " + std::to_string(log_var.size()) + ", expected " +
                                    std::to_string(frames * dim));
    }
    for (std::size_t i = 0; i < mu.size(); ++i) {
        if (!std::isfinite(mu[i]) || !std::isfinite(log_var[i])) {
            throw std::invalid_argument("posterior contains non-finite values at index " + std::to_string(i));
        }
    }
}

double gaussian_kl_term(double mu, double log_var) {
    // expm1 keeps the sigma^2 - 1 - log sigma^2 part accurate near the prior.
    return 0.5 * (std::expm1(log_var) - log_var + mu * mu);
}

KlTermGradient gaussian_kl_term_grad(double mu, double log_var) {
    return {mu, 0.5 * std::expm1(log_var)};
}

std::vector<double> gaussian_kl(const GaussianPosterior & post) {
    post.validate();
    std::vector<double> out(post.frames, 0.0);
    for (std::size_t f = 0; f < post.frames; ++f) {
        double acc = 0.0;
        for (std::size_t j = 0; j < post.dim; ++j) {
            const std::size_t i = f * post.dim + j;
            acc += gaussian_kl_term(post.mu[i], post.log_var[i]);
        }
        // Each term is >= 0 analytically; clamp rounding residue.
        out[f] = std::max(acc, 0.0);
    }
    return out;
}

GaussianPosterior gaussian_kl_gradient(const GaussianPosterior & post) {
    post.validate();
    GaussianPosterior grad(post.frames, post.dim);
    for (std::size_t i = 0; i < post.mu.size(); ++i) {
        const auto g = gaussian_kl_term_grad(post.mu[i], post.log_var[i]);
        grad.mu[i] = g.d_mu;
        grad.log_var[i] = g.d_log_var;
    }
    return grad;
}

MonteCarloEstimate kl_mc_oracle(const GaussianPosterior & post, std::size_t n_samples, std::uint64_t seed) {
    if (n_samples < 1000) {
        throw std::invalid_argument("kl_mc_oracle needs n_samples >= 1000, got " + std::to_string(n_samples));
    }
    post.validate();
    if (post.frames == 0) {
        throw std::invalid_argument("kl_mc_oracle needs at least one frame");
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<double> sigma(post.mu.size());
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        sigma[i] = std::exp(0.5 * post.log_var[i]);
    }

    // log q(z) - log p(z) with z = mu + sigma * eps:
    //   -0.5 log sigma^2 - 0.5 eps^2 + 0.5 z^2   (the 2*pi terms cancel)
    double mean = 0.0;
    double m2 = 0.0;
    const double inv_frames = 1.0 / static_cast<double>(post.frames);
    for (std::size_t n = 0; n < n_samples; ++n) {
        double sample = 0.0;
        for (std::size_t i = 0; i < post.mu.size(); ++i) {
            const double eps = normal(rng);
            const double z = post.mu[i] + sigma[i] * eps;
            sample += 0.5 * (z * z - eps * eps - post.log_var[i]);
        }
        sample *= inv_frames;
        // Welford update
        const double delta = sample - mean;
        mean += delta / static_cast<double>(n + 1);
        m2 += delta * (sample - mean);
    }
    const double variance = m2 / static_cast<double>(n_samples - 1);
    return {mean, std::sqrt(variance / static_cast<double>(n_samples))};
}

double kl_to_bitrate(double kl_nats_per_frame, double frame_rate_hz) {
    require_non_negative(kl_nats_per_frame, "kl_nats_per_frame");
    require_non_negative(frame_rate_hz, "frame_rate_hz");
    return frame_rate_hz * kl_nats_per_frame / std::numbers::ln2;
}

double bitrate_to_target_kl(double bps, double frame_rate_hz) {
    require_non_negative(bps, "bps");
    if (!(frame_rate_hz > 0.0) || !std::isfinite(frame_rate_hz)) {
        throw std::invalid_argument("frame_rate_hz must be positive");
    }
    return bps * std::numbers::ln2 / frame_rate_hz;
}

double target_kl_loss(double measured_kl, const RateSpec & spec) {
    require_non_negative(measured_kl, "measured_kl");
    const double diff = (measured_kl - spec.target_kl_nats()) / static_cast<double>(spec.latent_dim());
    return diff * diff;
}

double free_bits_loss(std::span<const double> per_dim_kl, double lambda_min) {
    require_non_negative(lambda_min, "lambda_min");
    double total = 0.0;
    for (double kl : per_dim_kl) {
        require_non_negative(kl, "per_dim_kl entry");
        total += std::max(lambda_min, kl);
    }
    return total;
}

double vq_bitrate(int codebook_size, int num_codebooks, double frame_rate_hz) {
    if (codebook_size < 2) {
        throw std::invalid_argument("codebook_size must be >= 2, got " + std::to_string(codebook_size));
    }
    if (num_codebooks < 1) {
        throw std::invalid_argument("num_codebooks must be >= 1");
    }
    require_non_negative(frame_rate_hz, "frame_rate_hz");
    return frame_rate_hz * static_cast<double>(num_codebooks) * std::log2(static_cast<double>(codebook_size));
}

double vq_kl_nats(int codebook_size, int num_codebooks) {
    if (codebook_size < 1 || num_codebooks < 1) {
        throw std::invalid_argument("codebook_size and num_codebooks must be >= 1");
    }
    return static_cast<double>(num_codebooks) * std::log(static_cast<double>(codebook_size));
}

}  // namespace ratebench
