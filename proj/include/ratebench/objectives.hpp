#pragma once

#include "ratebench/layers.hpp"
#include "ratebench/nn.hpp"

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace ratebench {

struct LossWeights {
    double recon_weight = 1.0;
    /// Multiplier of the rate term (target-KL or free-bits).
    double rate_weight = 1.0;
    double adv_weight = 0.0;
    double feature_match_weight = 0.0;

    // Inner mix of the reconstruction term.
    double mel_weight = 15.0;
    double stft_weight = 2.0;
    double waveform_weight = 0.1;
    /// VQ commitment term (encoder pulled toward its code).
    double commitment_weight = 0.25;

    /// Throws std::invalid_argument naming the first negative or non-finite weight.
    void validate() const;
};

/// (n_fft, n_mels) pairs; the STFT hop is n_fft / 4.
using MelScales = std::vector<std::pair<std::size_t, std::size_t>>;

MelScales default_mel_scales();
std::vector<std::size_t> default_stft_sizes();

/// Multi-scale L1 between log10 mel spectrograms of x and y ([B, 1, T] each). No gradient.
double mel_distance(const nn::Tensor & x, const nn::Tensor & y, double sample_rate,
                    const MelScales & scales = default_mel_scales());

/// Differentiable form of mel_distance (gradient flows into x and y).
nn::Var mel_loss(const nn::Var & x, const nn::Var & y, double sample_rate, const MelScales & scales);

/// Sum over FFT sizes of spectral convergence plus log-magnitude L1.
nn::Var multiscale_stft_loss(const nn::Var & x, const nn::Var & y, const std::vector<std::size_t> & ffts);

struct ReconTerms {
    nn::Var mel;
    nn::Var stft;
    nn::Var waveform;
    /// mel_weight * mel + stft_weight * stft + waveform_weight * waveform.
    nn::Var combined;
};

/// Reconstruction terms of `recon` against `target`; `target` carries no gradient.
ReconTerms recon_terms(const nn::Var & recon, const nn::Tensor & target, double sample_rate,
                       const LossWeights & weights, const MelScales & mel_scales = default_mel_scales(),
                       const std::vector<std::size_t> & stft_sizes = default_stft_sizes());

struct LossReport {
    double total = 0.0;
    double recon = 0.0;
    double rate = 0.0;
    double adv = 0.0;
    double feature_match = 0.0;
    double commitment = 0.0;
    double measured_kl_per_frame = 0.0;
    /// True when the batch carried no rate term (passthrough or vq).
    bool rate_excluded = false;
    std::map<std::string, double> components;
};

struct ObjectiveInputs {
    nn::Var recon;
    /// Undefined for passthrough and vq batches.
    nn::Var rate;
    nn::Var adv;
    nn::Var feature_match;
    nn::Var commitment;
    double measured_kl_per_frame = 0.0;
};

struct Objective {
    nn::Var total;
    LossReport report;
};

/// total = recon_weight*recon + rate_weight*rate + adv_weight*adv + feature_match_weight*fm
///         + commitment_weight*commitment. Undefined terms contribute 0.
Objective total_objective(const ObjectiveInputs & in, const LossWeights & weights);

/// Multi-resolution complex-spectrogram discriminator (1-D convs over STFT frames).
class SpectralDiscriminator {
public:
    /// Disabled discriminator; every loss call throws FailedPrecondition.
    SpectralDiscriminator() = default;
    SpectralDiscriminator(std::vector<std::size_t> ffts, std::size_t channels, nn::Rng & rng);

    bool enabled() const { return !heads_.empty(); }

    struct Output {
        std::vector<nn::Var> logits;                    // one per resolution
        std::vector<std::vector<nn::Var>> features;     // intermediate activations per resolution
    };

    Output operator()(const nn::Var & audio) const;
    nn::ParameterList parameters() const;

private:
    struct Head {
        std::size_t n_fft;
        std::vector<nn::Conv1d> convs;
        nn::Conv1d out;
    };
    std::vector<Head> heads_;
};

/// Least-squares discriminator loss: mean (D(real) - 1)^2 + mean D(fake)^2, summed over resolutions.
nn::Var discriminator_loss(const nn::Tensor & real, const nn::Tensor & fake, const SpectralDiscriminator & disc);

struct GeneratorAdvLoss {
    nn::Var adv;            // mean (D(fake) - 1)^2 summed over resolutions
    nn::Var feature_match;  // mean L1 between real and fake activations
};

GeneratorAdvLoss generator_adv_loss(const nn::Tensor & real, const nn::Var & fake, const SpectralDiscriminator & disc);

}  // namespace ratebench
