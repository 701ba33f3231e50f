#include "ratebench/objectives.hpp"

#include "ratebench/dsp.hpp"
#include "ratebench/errors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ratebench {

void LossWeights::validate() const {
    const std::pair<const char *, double> items[] = {
        {"recon_weight", recon_weight},       {"rate_weight", rate_weight},
        {"adv_weight", adv_weight},           {"feature_match_weight", feature_match_weight},
        {"mel_weight", mel_weight},           {"stft_weight", stft_weight},
        {"waveform_weight", waveform_weight}, {"commitment_weight", commitment_weight},
    };
    for (const auto & [name, value] : items) {
        if (!std::isfinite(value) || value < 0.0) {
            throw std::invalid_argument(std::string("weights.") + name + " must be a finite value >= 0");
        }
    }
}

MelScales default_mel_scales() { return {{2048, 80}, {512, 80}}; }

std::vector<std::size_t> default_stft_sizes() { return {2048, 512}; }

namespace {

constexpr float kMelFloor = 1e-5f;
constexpr float kMagFloor = 1e-5f;

void check_pair(const nn::Shape & a, const nn::Shape & b, const char * what) {
    if (a.size() != 3 || a[1] != 1) {
        throw std::invalid_argument(std::string(what) + ": expected [B, 1, T] waveforms, got " + nn::shape_str(a));
    }
    if (a != b) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + nn::shape_str(a) + " vs " +
                                    nn::shape_str(b));
    }
}

// sqrt(sum(a^2)) with a zero gradient at the origin.
nn::Var frobenius_norm(const nn::Var & a) {
    double acc = 0.0;
    for (float v : a.value().values()) {
        acc += static_cast<double>(v) * v;
    }
    const float norm = static_cast<float>(std::sqrt(acc));
    return nn::make_op(nn::Tensor::scalar(norm), {a}, [norm](nn::Node & node) {
        auto & in = *node.inputs[0];
        if (!in.requires_grad || norm == 0.0f) {
            return;
        }
        const float g = node.grad[0] / norm;
        auto & gi = in.grad_buffer();
        const auto & x = in.value;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            gi[i] += g * x[i];
        }
    });
}

nn::Var magnitude(const nn::Var & x, std::size_t n_fft) {
    return dsp::complex_magnitude(dsp::stft(x, dsp::StftConfig{n_fft, n_fft / 4}));
}

nn::Var log_mel_l1(const nn::Var & mag_x, const nn::Var & mag_y, double sample_rate, std::size_t n_fft,
                   std::size_t n_mels) {
    const nn::Tensor & fb = dsp::mel_filterbank(sample_rate, n_fft, n_mels);
    return nn::l1_loss(nn::log10_clamped(nn::matmul_const(fb, mag_x), kMelFloor),
                       nn::log10_clamped(nn::matmul_const(fb, mag_y), kMelFloor));
}

nn::Var stft_terms(const nn::Var & mag_x, const nn::Var & mag_y) {
    // Spectral convergence normalized by the mean of both norms so the term is symmetric.
    const nn::Var diff = frobenius_norm(nn::sub(mag_x, mag_y));
    const nn::Var denom = nn::add_scalar(nn::scale(nn::add(frobenius_norm(mag_x), frobenius_norm(mag_y)), 0.5f), 1e-7f);
    const nn::Var sc = nn::div(diff, denom);
    const nn::Var logmag = nn::l1_loss(nn::log10_clamped(mag_x, kMagFloor), nn::log10_clamped(mag_y, kMagFloor));
    return nn::add(sc, logmag);
}

nn::Var sum_vars(const std::vector<nn::Var> & terms) {
    nn::Var acc = terms.at(0);
    for (std::size_t i = 1; i < terms.size(); ++i) {
        acc = nn::add(acc, terms[i]);
    }
    return acc;
}

}  // namespace

nn::Var mel_loss(const nn::Var & x, const nn::Var & y, double sample_rate, const MelScales & scales) {
    check_pair(x.shape(), y.shape(), "mel_loss");
    if (scales.empty()) {
        throw std::invalid_argument("mel_loss: no scales");
    }
    std::vector<nn::Var> terms;
    for (const auto & [n_fft, n_mels] : scales) {
        terms.push_back(log_mel_l1(magnitude(x, n_fft), magnitude(y, n_fft), sample_rate, n_fft, n_mels));
    }
    return nn::scale(sum_vars(terms), 1.0f / static_cast<float>(scales.size()));
}

double mel_distance(const nn::Tensor & x, const nn::Tensor & y, double sample_rate, const MelScales & scales) {
    nn::NoGradGuard guard;
    return mel_loss(nn::Var(x), nn::Var(y), sample_rate, scales).value().item();
}

nn::Var multiscale_stft_loss(const nn::Var & x, const nn::Var & y, const std::vector<std::size_t> & ffts) {
    check_pair(x.shape(), y.shape(), "multiscale_stft_loss");
    if (ffts.empty()) {
        throw std::invalid_argument("multiscale_stft_loss: no FFT sizes");
    }
    std::vector<nn::Var> terms;
    for (std::size_t n : ffts) {
        terms.push_back(stft_terms(magnitude(x, n), magnitude(y, n)));
    }
    return sum_vars(terms);
}

ReconTerms recon_terms(const nn::Var & recon, const nn::Tensor & target, double sample_rate,
                       const LossWeights & weights, const MelScales & mel_scales,
                       const std::vector<std::size_t> & stft_sizes) {
    check_pair(recon.shape(), target.shape(), "recon_terms");
    const nn::Var y(target);
    // Magnitudes are shared between the mel and STFT terms when sizes coincide.
    std::map<std::size_t, std::pair<nn::Var, nn::Var>> mags;
    auto mag_pair = [&](std::size_t n) -> const std::pair<nn::Var, nn::Var> & {
        auto it = mags.find(n);
        if (it == mags.end()) {
            nn::Var my;
            {
                nn::NoGradGuard guard;
                my = magnitude(y, n);
            }
            it = mags.emplace(n, std::make_pair(magnitude(recon, n), my)).first;
        }
        return it->second;
    };

    ReconTerms out;
    std::vector<nn::Var> mel_terms;
    for (const auto & [n_fft, n_mels] : mel_scales) {
        const auto & [mx, my] = mag_pair(n_fft);
        mel_terms.push_back(log_mel_l1(mx, my, sample_rate, n_fft, n_mels));
    }
    out.mel = nn::scale(sum_vars(mel_terms), 1.0f / static_cast<float>(mel_scales.size()));
    std::vector<nn::Var> stft_parts;
    for (std::size_t n : stft_sizes) {
        const auto & [mx, my] = mag_pair(n);
        stft_parts.push_back(stft_terms(mx, my));
    }
    out.stft = sum_vars(stft_parts);
    out.waveform = nn::l1_loss(recon, y);
    out.combined = nn::add(nn::add(nn::scale(out.mel, static_cast<float>(weights.mel_weight)),
                                   nn::scale(out.stft, static_cast<float>(weights.stft_weight))),
                           nn::scale(out.waveform, static_cast<float>(weights.waveform_weight)));
    return out;
}

Objective total_objective(const ObjectiveInputs & in, const LossWeights & weights) {
    weights.validate();
    Objective out;
    auto & r = out.report;
    nn::Var total;
    auto accumulate = [&](const nn::Var & term, double w, double & slot, const char * name) {
        if (!term.defined()) {
            return;
        }
        slot = term.value().item();
        r.components[name] = slot;
        const nn::Var weighted = nn::scale(term, static_cast<float>(w));
        total = total.defined() ? nn::add(total, weighted) : weighted;
        r.total += w * slot;
    };
    accumulate(in.recon, weights.recon_weight, r.recon, "recon");
    accumulate(in.rate, weights.rate_weight, r.rate, "rate");
    accumulate(in.adv, weights.adv_weight, r.adv, "adv");
    accumulate(in.feature_match, weights.feature_match_weight, r.feature_match, "feature_match");
    accumulate(in.commitment, weights.commitment_weight, r.commitment, "commitment");
    r.rate_excluded = !in.rate.defined();
    r.measured_kl_per_frame = in.measured_kl_per_frame;
    out.total = total.defined() ? total : nn::Var(nn::Tensor::scalar(0.0f));
    // Report the value the optimizer actually sees.
    r.total = out.total.value().item();
    return out;
}

SpectralDiscriminator::SpectralDiscriminator(std::vector<std::size_t> ffts, std::size_t channels, nn::Rng & rng) {
    if (ffts.empty() || channels == 0) {
        throw std::invalid_argument("SpectralDiscriminator: need at least one resolution and one channel");
    }
    for (std::size_t n : ffts) {
        if (n < 4 || n % 2 != 0) {
            throw std::invalid_argument("SpectralDiscriminator: FFT sizes must be even and >= 4");
        }
        Head h;
        h.n_fft = n;
        const std::size_t in_ch = 2 * (n / 2 + 1);
        h.convs.emplace_back(in_ch, channels, 3, nn::Conv1dOptions{1, 1, 1}, rng);
        h.convs.emplace_back(channels, channels, 3, nn::Conv1dOptions{2, 1, 1}, rng);
        h.convs.emplace_back(channels, channels, 3, nn::Conv1dOptions{1, 2, 2}, rng);
        h.out = nn::Conv1d(channels, 1, 3, nn::Conv1dOptions{1, 1, 1}, rng);
        heads_.push_back(std::move(h));
    }
}

SpectralDiscriminator::Output SpectralDiscriminator::operator()(const nn::Var & audio) const {
    if (!enabled()) {
        throw FailedPrecondition("adversarial path is disabled");
    }
    Output out;
    for (const auto & h : heads_) {
        nn::Var x = dsp::stft(audio, dsp::StftConfig{h.n_fft, h.n_fft / 4});
        std::vector<nn::Var> feats;
        for (const auto & c : h.convs) {
            x = nn::leaky_relu(c(x), 0.1f);
            feats.push_back(x);
        }
        out.logits.push_back(h.out(x));
        out.features.push_back(std::move(feats));
    }
    return out;
}

nn::ParameterList SpectralDiscriminator::parameters() const {
    nn::ParameterList p;
    for (std::size_t i = 0; i < heads_.size(); ++i) {
        const std::string prefix = "disc.res" + std::to_string(i);
        for (std::size_t j = 0; j < heads_[i].convs.size(); ++j) {
            heads_[i].convs[j].collect(prefix + ".conv" + std::to_string(j), p);
        }
        heads_[i].out.collect(prefix + ".out", p);
    }
    return p;
}

nn::Var discriminator_loss(const nn::Tensor & real, const nn::Tensor & fake, const SpectralDiscriminator & disc) {
    if (!disc.enabled()) {
        throw FailedPrecondition("discriminator_loss: adversarial path is disabled");
    }
    check_pair(real.shape(), fake.shape(), "discriminator_loss");
    const auto dr = disc(nn::Var(real));
    const auto df = disc(nn::Var(fake));
    std::vector<nn::Var> terms;
    for (std::size_t i = 0; i < dr.logits.size(); ++i) {
        terms.push_back(nn::mean(nn::square(nn::add_scalar(dr.logits[i], -1.0f))));
        terms.push_back(nn::mean(nn::square(df.logits[i])));
    }
    return sum_vars(terms);
}

GeneratorAdvLoss generator_adv_loss(const nn::Tensor & real, const nn::Var & fake, const SpectralDiscriminator & disc) {
    if (!disc.enabled()) {
        throw FailedPrecondition("generator_adv_loss: adversarial path is disabled");
    }
    check_pair(real.shape(), fake.shape(), "generator_adv_loss");
    SpectralDiscriminator::Output dr;
    {
        nn::NoGradGuard guard;
        dr = disc(nn::Var(real));
    }
    const auto df = disc(fake);
    std::vector<nn::Var> adv, fm;
    for (std::size_t i = 0; i < df.logits.size(); ++i) {
        adv.push_back(nn::mean(nn::square(nn::add_scalar(df.logits[i], -1.0f))));
        for (std::size_t j = 0; j < df.features[i].size(); ++j) {
            fm.push_back(nn::l1_loss(df.features[i][j], dr.features[i][j]));
        }
    }
    GeneratorAdvLoss out;
    out.adv = sum_vars(adv);
    out.feature_match = nn::scale(sum_vars(fm), 1.0f / static_cast<float>(fm.size()));
    return out;
}

}  // namespace ratebench
