#pragma once

#include "ratebench/nn.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace ratebench::dsp {

/// Centered STFT with a periodic Hann window of length n_fft and reflect padding of n_fft / 2.
struct StftConfig {
    std::size_t n_fft = 1024;
    std::size_t hop = 256;
};

std::size_t stft_bins(const StftConfig & cfg);
std::size_t stft_frames(std::size_t samples, const StftConfig & cfg);

/// x [B, 1, T] -> [B, 2 * bins, frames]; channels [0, bins) hold the real part,
/// [bins, 2 * bins) the imaginary part. Differentiable with respect to x.
nn::Var stft(const nn::Var & x, const StftConfig & cfg);

/// [B, 2 * bins, F] -> [B, bins, F], sqrt(re^2 + im^2 + 1e-12).
nn::Var complex_magnitude(const nn::Var & spec);

/// Slaney-style mel filterbank with Slaney area normalization, shape [n_mels, n_fft / 2 + 1].
/// Cached per (sample_rate, n_fft, n_mels).
const nn::Tensor & mel_filterbank(double sample_rate, std::size_t n_fft, std::size_t n_mels);

/// Magnitude mel spectrogram [B, n_mels, F] of x [B, 1, T] with hop n_fft / 4.
nn::Var mel_spectrogram(const nn::Var & x, double sample_rate, std::size_t n_fft, std::size_t n_mels);

/// Non-differentiable log(mel + 1e-5) features [B, n_mels, frames] with the given hop,
/// truncated to the first `frames` STFT frames.
nn::Tensor log_mel_features(const nn::Tensor & wave, double sample_rate, std::size_t n_fft, std::size_t hop,
                            std::size_t n_mels, std::size_t frames);

/// Magnitudes |X_k|, k = 0..n/2, of the real DFT of `signal`.
std::vector<float> magnitude_spectrum(std::span<const float> signal);

/// Band-limited (windowed-sinc) resampling between arbitrary rates.
std::vector<float> resample(std::span<const float> input, double from_hz, double to_hz);

}  // namespace ratebench::dsp
