#pragma once

#include "ratebench/bottleneck.hpp"
#include "ratebench/layers.hpp"
#include "ratebench/nn.hpp"
#include "ratebench/rate_core.hpp"

#include <cstdint>
#include <vector>

namespace ratebench {

struct ModelConfig {
    int sample_rate_hz = 16000;
    int hop = 400;
    std::vector<int> strides{5, 4, 4, 5};
    /// conv_in output followed by the output of each downsampling block.
    std::vector<int> encoder_channels{8, 16, 32, 64, 64};
    /// decoder conv_in output followed by the output of each upsampling block.
    std::vector<int> decoder_channels{64, 64, 32, 16, 8};
    int latent_dim = 16;
    bool residual_units = false;
    int n_mels = 80;
    int mel_n_fft = 1024;
    bool mel_projection = true;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument when strides, hop and channel lists disagree.
    void validate() const;
    double frame_rate_hz() const { return static_cast<double>(sample_rate_hz) / hop; }
};

/// Waveforms [B, 1, T] at a known sample rate.
struct AudioBatch {
    nn::Tensor waveform;
    int sample_rate_hz = 0;

    /// Throws std::invalid_argument unless T is a positive multiple of hop and all values are finite.
    void validate(int hop) const;
    std::size_t batch() const { return waveform.dim(0); }
    std::size_t samples() const { return waveform.dim(2); }
};

/// Reflect-pads a waveform to the next multiple of hop.
std::vector<float> pad_to_hop(std::vector<float> samples, int hop);

/// Stacks equal-length waveforms into a batch.
AudioBatch make_batch(const std::vector<const std::vector<float> *> & items, int sample_rate_hz);

/// Fully convolutional waveform encoder/decoder with an additive mel projection at the encoder output.
class AudioModel {
public:
    AudioModel(const ModelConfig & cfg, int feature_channels);

    const ModelConfig & config() const { return cfg_; }
    int feature_channels() const { return feature_channels_; }

    /// [B, 1, T] -> [B, feature_channels, T / hop], without the mel projection.
    nn::Var encode(const AudioBatch & batch) const;
    /// features + proj(log_mel); log_mel is [B, n_mels, frames].
    nn::Var mel_projection_add(const nn::Var & features, const nn::Tensor & log_mel) const;
    /// Log-mel features aligned with the latent frames of `batch`.
    nn::Tensor log_mel(const AudioBatch & batch) const;
    /// encode() followed by mel_projection_add() when enabled.
    nn::Var encode_features(const AudioBatch & batch) const;
    /// [B, D, F] -> [B, 1, F * hop] in (-1, 1).
    nn::Var decode(const nn::Var & z) const;

    nn::ParameterList parameters() const;

private:
    ModelConfig cfg_;
    int feature_channels_;

    nn::Conv1d enc_in_;
    std::vector<nn::ResidualUnit> enc_res_;
    std::vector<nn::Snake> enc_act_;
    std::vector<nn::Conv1d> enc_down_;
    nn::Snake enc_out_act_;
    nn::Conv1d enc_out_;
    nn::Conv1d mel_proj_;

    nn::Conv1d dec_in_;
    std::vector<nn::Snake> dec_act_;
    std::vector<nn::ConvTranspose1d> dec_up_;
    std::vector<nn::ResidualUnit> dec_res_;
    nn::Snake dec_out_act_;
    nn::Conv1d dec_out_;
};

/// Encoder + bottleneck + decoder.
class Codec {
public:
    Codec(const ModelConfig & model, const BottleneckConfig & bottleneck);

    const ModelConfig & model_config() const { return model_.config(); }
    const BottleneckConfig & bottleneck_config() const { return bottleneck_; }
    AudioModel & model() { return model_; }
    const AudioModel & model() const { return model_; }
    ResidualVq & vq() { return vq_; }
    const ResidualVq & vq() const { return vq_; }

    struct Output {
        BottleneckResult bottleneck;
        nn::Var reconstruction;  // [B, 1, T]
    };

    struct ForwardOptions {
        bool training = false;
        bool passthrough = false;
        std::uint64_t noise_seed = 0;
        /// Enables EMA codebook updates for vq when training.
        nn::Rng * vq_rng = nullptr;
    };

    Output forward(const AudioBatch & batch, const ForwardOptions & opts);
    /// Eval-mode forward (posterior mean / nearest codes), no graph recorded.
    Output reconstruct(const AudioBatch & batch);

    /// Frame rate implied by the model.
    double frame_rate_hz() const { return model_.config().frame_rate_hz(); }
    /// Throws unless `spec` has the same sample rate, hop and latent dim.
    void check_rate_spec(const RateSpec & spec) const;

private:
    AudioModel model_;
    BottleneckConfig bottleneck_;
    ResidualVq vq_;
};

}  // namespace ratebench
