#include "ratebench/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <tuple>
#include <unordered_map>

namespace ratebench::dsp {

namespace {

// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex g_plan_mutex;

class RealFft {
public:
    explicit RealFft(std::size_t n) : n_(n) {
        real_ = static_cast<float *>(fftwf_malloc(sizeof(float) * n));
        spec_ = static_cast<fftwf_complex *>(fftwf_malloc(sizeof(fftwf_complex) * (n / 2 + 1)));
        if (!real_ || !spec_) {
            throw std::bad_alloc();
        }
        std::lock_guard lock(g_plan_mutex);
        const int ni = static_cast<int>(n);
        forward_ = fftwf_plan_dft_r2c_1d(ni, real_, spec_, FFTW_ESTIMATE);
        inverse_ = fftwf_plan_dft_c2r_1d(ni, spec_, real_, FFTW_ESTIMATE);
    }

    ~RealFft() {
        std::lock_guard lock(g_plan_mutex);
        fftwf_destroy_plan(forward_);
        fftwf_destroy_plan(inverse_);
        fftwf_free(real_);
        fftwf_free(spec_);
    }

    RealFft(const RealFft &) = delete;
    RealFft & operator=(const RealFft &) = delete;

    float * real() { return real_; }
    fftwf_complex * spec() { return spec_; }
    void forward() { fftwf_execute(forward_); }
    /// Unnormalized Hermitian inverse; destroys spec().
    void inverse() { fftwf_execute(inverse_); }

private:
    std::size_t n_;
    float * real_ = nullptr;
    fftwf_complex * spec_ = nullptr;
    fftwf_plan forward_ = nullptr;
    fftwf_plan inverse_ = nullptr;
};

RealFft & fft_for(std::size_t n) {
    thread_local std::unordered_map<std::size_t, std::unique_ptr<RealFft>> cache;
    auto & slot = cache[n];
    if (!slot) {
        slot = std::make_unique<RealFft>(n);
    }
    return *slot;
}

const std::vector<float> & hann(std::size_t n) {
    thread_local std::unordered_map<std::size_t, std::vector<float>> cache;
    auto & w = cache[n];
    if (w.empty()) {
        w.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                           static_cast<double>(n)));
        }
    }
    return w;
}

// Whole-sample symmetric reflection, repeated for indices far outside the signal.
inline std::size_t reflect_index(long j, long length) {
    if (length == 1) {
        return 0;
    }
    const long period = 2 * (length - 1);
    j = std::abs(j) % period;
    if (j >= length) {
        j = period - j;
    }
    return static_cast<std::size_t>(j);
}

double hz_to_mel(double hz) {
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    constexpr double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    return hz < min_log_hz ? hz / f_sp : min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz(double mel) {
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    constexpr double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    return mel < min_log_mel ? f_sp * mel : min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

}  // namespace

std::size_t stft_bins(const StftConfig & cfg) {
    return cfg.n_fft / 2 + 1;
}

std::size_t stft_frames(std::size_t samples, const StftConfig & cfg) {
    return 1 + samples / cfg.hop;
}

nn::Var stft(const nn::Var & x, const StftConfig & cfg) {
    const auto & xv = x.value();
    if (xv.rank() != 3 || xv.dim(1) != 1) {
        throw std::invalid_argument("stft: expected [B, 1, T] input, got " + nn::shape_str(xv.shape()));
    }
    if (cfg.n_fft < 2 || cfg.n_fft % 2 != 0 || cfg.hop == 0) {
        throw std::invalid_argument("stft: n_fft must be even and >= 2, hop >= 1");
    }
    const std::size_t B = xv.dim(0), T = xv.dim(2), N = cfg.n_fft, pad = N / 2;
    if (T == 0) {
        throw std::invalid_argument("stft: empty signal");
    }
    const std::size_t bins = stft_bins(cfg), F = stft_frames(T, cfg);
    const auto & win = hann(N);
    auto & fft = fft_for(N);

    nn::Tensor out({B, 2 * bins, F});
    for (std::size_t b = 0; b < B; ++b) {
        const float * s = xv.data() + b * T;
        float * o = out.data() + b * 2 * bins * F;
        for (std::size_t f = 0; f < F; ++f) {
            const long start = static_cast<long>(f * cfg.hop) - static_cast<long>(pad);
            for (std::size_t n = 0; n < N; ++n) {
                fft.real()[n] = win[n] * s[reflect_index(start + static_cast<long>(n), static_cast<long>(T))];
            }
            fft.forward();
            for (std::size_t k = 0; k < bins; ++k) {
                o[k * F + f] = fft.spec()[k][0];
                o[(bins + k) * F + f] = fft.spec()[k][1];
            }
        }
    }

    return nn::make_op(std::move(out), {x}, [B, T, N, pad, bins, F, hop = cfg.hop](nn::Node & node) {
        auto & gx = node.inputs[0]->grad_buffer();
        const auto & win = hann(N);
        auto & fft = fft_for(N);
        for (std::size_t b = 0; b < B; ++b) {
            const float * g = node.grad.data() + b * 2 * bins * F;
            float * dx = gx.data() + b * T;
            for (std::size_t f = 0; f < F; ++f) {
                // d/dy[n] = Re sum_k (g_re + i g_im) e^{+i 2 pi k n / N}, evaluated with a Hermitian
                // inverse by halving the interior bins.
                for (std::size_t k = 0; k < bins; ++k) {
                    const float half = (k == 0 || k == N / 2) ? 1.0f : 0.5f;
                    fft.spec()[k][0] = half * g[k * F + f];
                    fft.spec()[k][1] = half * g[(bins + k) * F + f];
                }
                fft.inverse();
                const long start = static_cast<long>(f * hop) - static_cast<long>(pad);
                for (std::size_t n = 0; n < N; ++n) {
                    dx[reflect_index(start + static_cast<long>(n), static_cast<long>(T))] += win[n] * fft.real()[n];
                }
            }
        }
    });
}

nn::Var complex_magnitude(const nn::Var & spec) {
    const auto & sv = spec.value();
    if (sv.rank() != 3 || sv.dim(1) % 2 != 0) {
        throw std::invalid_argument("complex_magnitude: expected [B, 2 * bins, F]");
    }
    const std::size_t B = sv.dim(0), bins = sv.dim(1) / 2, F = sv.dim(2);
    nn::Tensor out({B, bins, F});
    for (std::size_t b = 0; b < B; ++b) {
        const float * re = sv.data() + b * 2 * bins * F;
        const float * im = re + bins * F;
        float * o = out.data() + b * bins * F;
        for (std::size_t i = 0; i < bins * F; ++i) {
            o[i] = std::sqrt(re[i] * re[i] + im[i] * im[i] + 1e-12f);
        }
    }
    return nn::make_op(std::move(out), {spec}, [B, bins, F](nn::Node & node) {
        auto & in = node.inputs[0];
        auto & gi = in->grad_buffer();
        for (std::size_t b = 0; b < B; ++b) {
            const float * re = in->value.data() + b * 2 * bins * F;
            const float * im = re + bins * F;
            const float * mag = node.value.data() + b * bins * F;
            const float * g = node.grad.data() + b * bins * F;
            float * gre = gi.data() + b * 2 * bins * F;
            float * gim = gre + bins * F;
            for (std::size_t i = 0; i < bins * F; ++i) {
                gre[i] += g[i] * re[i] / mag[i];
                gim[i] += g[i] * im[i] / mag[i];
            }
        }
    });
}

const nn::Tensor & mel_filterbank(double sample_rate, std::size_t n_fft, std::size_t n_mels) {
    static std::mutex mutex;
    static std::map<std::tuple<double, std::size_t, std::size_t>, std::unique_ptr<nn::Tensor>> cache;
    std::lock_guard lock(mutex);
    auto & slot = cache[{sample_rate, n_fft, n_mels}];
    if (slot) {
        return *slot;
    }
    if (n_mels == 0 || n_fft < 2 || !(sample_rate > 0.0)) {
        throw std::invalid_argument("mel_filterbank: invalid configuration");
    }
    const std::size_t bins = n_fft / 2 + 1;
    const double mel_lo = hz_to_mel(0.0);
    const double mel_hi = hz_to_mel(sample_rate / 2.0);
    std::vector<double> hz(n_mels + 2);
    for (std::size_t i = 0; i < hz.size(); ++i) {
        hz[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
    }
    auto fb = std::make_unique<nn::Tensor>(nn::Shape{n_mels, bins});
    for (std::size_t m = 0; m < n_mels; ++m) {
        const double enorm = 2.0 / (hz[m + 2] - hz[m]);
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
            const double lower = (f - hz[m]) / (hz[m + 1] - hz[m]);
            const double upper = (hz[m + 2] - f) / (hz[m + 2] - hz[m + 1]);
            (*fb)[m * bins + k] = static_cast<float>(std::max(0.0, std::min(lower, upper)) * enorm);
        }
    }
    slot = std::move(fb);
    return *slot;
}

nn::Var mel_spectrogram(const nn::Var & x, double sample_rate, std::size_t n_fft, std::size_t n_mels) {
    const StftConfig cfg{n_fft, n_fft / 4};
    return nn::matmul_const(mel_filterbank(sample_rate, n_fft, n_mels), complex_magnitude(stft(x, cfg)));
}

nn::Tensor log_mel_features(const nn::Tensor & wave, double sample_rate, std::size_t n_fft, std::size_t hop,
                            std::size_t n_mels, std::size_t frames) {
    nn::NoGradGuard guard;
    const StftConfig cfg{n_fft, hop};
    const nn::Var mel = nn::matmul_const(mel_filterbank(sample_rate, n_fft, n_mels),
                                         complex_magnitude(stft(nn::Var(wave), cfg)));
    const auto & mv = mel.value();
    const std::size_t B = mv.dim(0), F = mv.dim(2);
    if (frames > F) {
        throw std::invalid_argument("log_mel_features: requested " + std::to_string(frames) + " frames but only " +
                                    std::to_string(F) + " available");
    }
    nn::Tensor out({B, n_mels, frames});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t m = 0; m < n_mels; ++m) {
            for (std::size_t f = 0; f < frames; ++f) {
                out[(b * n_mels + m) * frames + f] = std::log(mv[(b * n_mels + m) * F + f] + 1e-5f);
            }
        }
    }
    return out;
}

std::vector<float> magnitude_spectrum(std::span<const float> signal) {
    const std::size_t n = signal.size();
    if (n < 2) {
        throw std::invalid_argument("magnitude_spectrum: need at least 2 samples");
    }
    std::vector<float> in(signal.begin(), signal.end());
    std::vector<fftwf_complex> spec(n / 2 + 1);
    fftwf_plan plan;
    {
        std::lock_guard lock(g_plan_mutex);
        plan = fftwf_plan_dft_r2c_1d(static_cast<int>(n), in.data(), spec.data(), FFTW_ESTIMATE);
    }
    fftwf_execute(plan);
    {
        std::lock_guard lock(g_plan_mutex);
        fftwf_destroy_plan(plan);
    }
    std::vector<float> mags(spec.size());
    for (std::size_t k = 0; k < spec.size(); ++k) {
        mags[k] = std::hypot(spec[k][0], spec[k][1]);
    }
    return mags;
}

std::vector<float> resample(std::span<const float> input, double from_hz, double to_hz) {
    if (!(from_hz > 0.0) || !(to_hz > 0.0)) {
        throw std::invalid_argument("resample: rates must be positive");
    }
    if (from_hz == to_hz || input.empty()) {
        return {input.begin(), input.end()};
    }
    const double ratio = to_hz / from_hz;
    const double cutoff = std::min(1.0, ratio) * 0.97;
    constexpr double zeros = 16.0;
    const double half_width = zeros / cutoff;
    const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(input.size()) * ratio));
    const long n_in = static_cast<long>(input.size());

    std::vector<float> out(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
        const double center = static_cast<double>(i) / ratio;
        const long lo = std::max(0L, static_cast<long>(std::ceil(center - half_width)));
        const long hi = std::min(n_in - 1, static_cast<long>(std::floor(center + half_width)));
        double acc = 0.0;
        for (long j = lo; j <= hi; ++j) {
            const double d = center - static_cast<double>(j);
            const double arg = cutoff * d;
            const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
            const double window = 0.5 + 0.5 * std::cos(std::numbers::pi * d / half_width);
            acc += input[static_cast<std::size_t>(j)] * cutoff * sinc * window;
        }
        out[i] = static_cast<float>(acc);
    }
    return out;
}

}  // namespace ratebench::dsp
