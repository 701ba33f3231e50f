#include "ratebench/audio_model.hpp"

#include "ratebench/dsp.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ratebench {

void ModelConfig::validate() const {
    if (sample_rate_hz <= 0) {
        throw std::invalid_argument("model.sample_rate_hz must be positive");
    }
    if (strides.empty()) {
        throw std::invalid_argument("model.strides must not be empty");
    }
    const long product = std::accumulate(strides.begin(), strides.end(), 1L, std::multiplies<>());
    if (product != hop) {
        throw std::invalid_argument("model.strides multiply to " + std::to_string(product) + " but model.hop is " +
                                    std::to_string(hop));
    }
    for (int s : strides) {
        if (s < 1) {
            throw std::invalid_argument("model.strides entries must be >= 1");
        }
    }
    if (encoder_channels.size() != strides.size() + 1 || decoder_channels.size() != strides.size() + 1) {
        throw std::invalid_argument("model.encoder_channels and model.decoder_channels need len(strides) + 1 entries");
    }
    for (int c : encoder_channels) {
        if (c < 1) throw std::invalid_argument("model.encoder_channels entries must be >= 1");
    }
    for (int c : decoder_channels) {
        if (c < 1) throw std::invalid_argument("model.decoder_channels entries must be >= 1");
    }
    if (latent_dim < 1) {
        throw std::invalid_argument("model.latent_dim must be >= 1");
    }
    if (n_mels < 1 || mel_n_fft < 2 || mel_n_fft % 2 != 0) {
        throw std::invalid_argument("model.n_mels must be >= 1 and model.mel_n_fft even");
    }
}

void AudioBatch::validate(int hop) const {
    if (waveform.rank() != 3 || waveform.dim(1) != 1 || waveform.dim(0) == 0) {
        throw std::invalid_argument("audio batch must be [B, 1, T] with B >= 1");
    }
    if (waveform.dim(2) == 0 || waveform.dim(2) % static_cast<std::size_t>(hop) != 0) {
        throw std::invalid_argument("audio length " + std::to_string(waveform.dim(2)) +
                                    " is not a positive multiple of hop " + std::to_string(hop) + "; pad first");
    }
    if (!waveform.all_finite()) {
        throw std::invalid_argument("audio batch contains non-finite samples");
    }
}

std::vector<float> pad_to_hop(std::vector<float> samples, int hop) {
    const std::size_t h = static_cast<std::size_t>(hop);
    const std::size_t n = samples.size();
    const std::size_t target = n == 0 ? h : (n + h - 1) / h * h;
    samples.reserve(target);
    for (std::size_t i = n; i < target; ++i) {
        // reflect about the last sample, falling back to zeros once the mirror runs out
        const long mirror = 2 * static_cast<long>(n) - 2 - static_cast<long>(i);
        samples.push_back(mirror >= 0 ? samples[static_cast<std::size_t>(mirror)] : 0.0f);
    }
    return samples;
}

AudioBatch make_batch(const std::vector<const std::vector<float> *> & items, int sample_rate_hz) {
    if (items.empty()) {
        throw std::invalid_argument("make_batch: no items");
    }
    const std::size_t T = items.front()->size();
    nn::Tensor wave({items.size(), 1, T});
    for (std::size_t b = 0; b < items.size(); ++b) {
        if (items[b]->size() != T) {
            throw std::invalid_argument("make_batch: items have different lengths");
        }
        std::copy(items[b]->begin(), items[b]->end(), wave.data() + b * T);
    }
    return {std::move(wave), sample_rate_hz};
}

AudioModel::AudioModel(const ModelConfig & cfg, int feature_channels) : cfg_(cfg), feature_channels_(feature_channels) {
    cfg_.validate();
    nn::Rng rng(cfg_.seed);
    const auto & ec = cfg_.encoder_channels;
    const auto & dc = cfg_.decoder_channels;
    const auto n_blocks = cfg_.strides.size();
    const auto uz = [](int v) { return static_cast<std::size_t>(v); };

    enc_in_ = nn::Conv1d(1, uz(ec[0]), 7, {1, 3, 1}, rng);
    for (std::size_t i = 0; i < n_blocks; ++i) {
        const auto s = uz(cfg_.strides[i]);
        if (cfg_.residual_units) {
            enc_res_.emplace_back(uz(ec[i]), 3, 1, rng);
        }
        enc_act_.emplace_back(uz(ec[i]));
        enc_down_.emplace_back(uz(ec[i]), uz(ec[i + 1]), 2 * s, nn::Conv1dOptions{s, (s + 1) / 2, 1}, rng);
    }
    enc_out_act_ = nn::Snake(uz(ec.back()));
    enc_out_ = nn::Conv1d(uz(ec.back()), uz(feature_channels_), 3, {1, 1, 1}, rng);
    mel_proj_ = nn::Conv1d(uz(cfg_.n_mels), uz(feature_channels_), 1, {}, rng);
    mel_proj_.zero();

    dec_in_ = nn::Conv1d(uz(cfg_.latent_dim), uz(dc[0]), 7, {1, 3, 1}, rng);
    for (std::size_t i = 0; i < n_blocks; ++i) {
        const auto s = uz(cfg_.strides[n_blocks - 1 - i]);
        dec_act_.emplace_back(uz(dc[i]));
        dec_up_.emplace_back(uz(dc[i]), uz(dc[i + 1]), 2 * s, nn::ConvTranspose1dOptions{s, (s + 1) / 2, s % 2},
                             rng);
        if (cfg_.residual_units) {
            dec_res_.emplace_back(uz(dc[i + 1]), 3, 1, rng);
        }
    }
    dec_out_act_ = nn::Snake(uz(dc.back()));
    dec_out_ = nn::Conv1d(uz(dc.back()), 1, 7, {1, 3, 1}, rng);
}

nn::Var AudioModel::encode(const AudioBatch & batch) const {
    batch.validate(cfg_.hop);
    if (batch.sample_rate_hz != cfg_.sample_rate_hz) {
        throw std::invalid_argument("audio batch sample rate " + std::to_string(batch.sample_rate_hz) +
                                    " does not match model rate " + std::to_string(cfg_.sample_rate_hz));
    }
    nn::Var x = enc_in_(nn::Var(batch.waveform));
    for (std::size_t i = 0; i < enc_down_.size(); ++i) {
        if (!enc_res_.empty()) {
            x = enc_res_[i](x);
        }
        x = enc_down_[i](enc_act_[i](x));
    }
    return enc_out_(enc_out_act_(x));
}

nn::Tensor AudioModel::log_mel(const AudioBatch & batch) const {
    const std::size_t frames = batch.samples() / static_cast<std::size_t>(cfg_.hop);
    return dsp::log_mel_features(batch.waveform, cfg_.sample_rate_hz, static_cast<std::size_t>(cfg_.mel_n_fft),
                                 static_cast<std::size_t>(cfg_.hop), static_cast<std::size_t>(cfg_.n_mels), frames);
}

nn::Var AudioModel::mel_projection_add(const nn::Var & features, const nn::Tensor & log_mel) const {
    const auto & f = features.value();
    if (log_mel.rank() != 3 || log_mel.dim(0) != f.dim(0) || log_mel.dim(1) != static_cast<std::size_t>(cfg_.n_mels)) {
        throw std::invalid_argument("mel_projection_add: expected [B, n_mels, frames] mel, got " +
                                    nn::shape_str(log_mel.shape()));
    }
    if (log_mel.dim(2) != f.dim(2)) {
        throw std::invalid_argument("mel_projection_add: mel has " + std::to_string(log_mel.dim(2)) +
                                    " frames but features have " + std::to_string(f.dim(2)));
    }
    return nn::add(features, mel_proj_(nn::Var(log_mel)));
}

nn::Var AudioModel::encode_features(const AudioBatch & batch) const {
    nn::Var features = encode(batch);
    if (cfg_.mel_projection) {
        features = mel_projection_add(features, log_mel(batch));
    }
    return features;
}

nn::Var AudioModel::decode(const nn::Var & z) const {
    const auto & zv = z.value();
    if (zv.rank() != 3 || zv.dim(1) != static_cast<std::size_t>(cfg_.latent_dim)) {
        throw std::invalid_argument("decode: expected [B, " + std::to_string(cfg_.latent_dim) + ", F] latents, got " +
                                    nn::shape_str(zv.shape()));
    }
    if (!zv.all_finite()) {
        throw std::invalid_argument("decode: latents contain non-finite values");
    }
    nn::Var x = dec_in_(z);
    for (std::size_t i = 0; i < dec_up_.size(); ++i) {
        x = dec_up_[i](dec_act_[i](x));
        if (!dec_res_.empty()) {
            x = dec_res_[i](x);
        }
    }
    return nn::tanh(dec_out_(dec_out_act_(x)));
}

nn::ParameterList AudioModel::parameters() const {
    nn::ParameterList p;
    enc_in_.collect("encoder.conv_in", p);
    for (std::size_t i = 0; i < enc_down_.size(); ++i) {
        const std::string b = "encoder.block" + std::to_string(i);
        if (!enc_res_.empty()) {
            enc_res_[i].collect(b + ".res", p);
        }
        enc_act_[i].collect(b + ".act", p);
        enc_down_[i].collect(b + ".down", p);
    }
    enc_out_act_.collect("encoder.out_act", p);
    enc_out_.collect("encoder.conv_out", p);
    mel_proj_.collect("encoder.mel_proj", p);
    dec_in_.collect("decoder.conv_in", p);
    for (std::size_t i = 0; i < dec_up_.size(); ++i) {
        const std::string b = "decoder.block" + std::to_string(i);
        dec_act_[i].collect(b + ".act", p);
        dec_up_[i].collect(b + ".up", p);
        if (!dec_res_.empty()) {
            dec_res_[i].collect(b + ".res", p);
        }
    }
    dec_out_act_.collect("decoder.out_act", p);
    dec_out_.collect("decoder.conv_out", p);
    return p;
}

namespace {

int feature_channels_for(const ModelConfig & model, const BottleneckConfig & bn) {
    if (bn.latent_dim != model.latent_dim) {
        throw std::invalid_argument("bottleneck.latent_dim (" + std::to_string(bn.latent_dim) +
                                    ") differs from model.latent_dim (" + std::to_string(model.latent_dim) + ")");
    }
    return bn.kind == BottleneckKind::gaussian ? 2 * model.latent_dim : model.latent_dim;
}

}  // namespace

Codec::Codec(const ModelConfig & model, const BottleneckConfig & bottleneck)
    : model_(model, feature_channels_for(model, bottleneck)), bottleneck_(bottleneck) {
    bottleneck_.validate();
    if (bottleneck_.kind == BottleneckKind::vq) {
        vq_ = ResidualVq(bottleneck_.codebook_size, bottleneck_.num_codebooks, bottleneck_.latent_dim,
                         bottleneck_.ema_decay, bottleneck_.dead_code_threshold);
    }
}

Codec::Output Codec::forward(const AudioBatch & batch, const ForwardOptions & opts) {
    const nn::Var features = model_.encode_features(batch);
    Output out;
    if (bottleneck_.kind == BottleneckKind::vq) {
        if (opts.training && !vq_.initialized() && opts.vq_rng != nullptr) {
            vq_.initialize(features.value(), *opts.vq_rng);
        }
        out.bottleneck = vq_.forward(features, opts.training, opts.training ? opts.vq_rng : nullptr);
    } else if (opts.passthrough) {
        out.bottleneck = passthrough_forward(features, bottleneck_.latent_dim);
    } else {
        out.bottleneck = gaussian_forward(features, bottleneck_.latent_dim, opts.training, opts.noise_seed);
    }
    out.reconstruction = model_.decode(out.bottleneck.z);
    return out;
}

Codec::Output Codec::reconstruct(const AudioBatch & batch) {
    nn::NoGradGuard guard;
    return forward(batch, ForwardOptions{});
}

void Codec::check_rate_spec(const RateSpec & spec) const {
    const auto & m = model_.config();
    if (spec.sample_rate_hz() != static_cast<double>(m.sample_rate_hz) || spec.hop() != m.hop ||
        spec.latent_dim() != m.latent_dim) {
        throw std::invalid_argument("rate spec geometry (sample rate, hop, latent dim) does not match the model");
    }
    const double implied = frame_rate_hz();
    if (std::abs(implied - spec.frame_rate_hz()) > 1e-9 * implied) {
        throw std::invalid_argument("rate spec frame rate does not match the model's implied frame rate");
    }
}

}  // namespace ratebench
