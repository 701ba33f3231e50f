#include "helpers.hpp"
#include "ratebench/dsp.hpp"
#include "ratebench/layers.hpp"
#include "ratebench/nn.hpp"

#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

using namespace ratebench;
using namespace ratebench::nn;
using testing::gradcheck;
using testing::random_tensor;

namespace {

constexpr double kGradTol = 2e-2;

Var weighted_sum(const Var & y, std::uint64_t seed) {
    // Random projection so every output element gets a distinct upstream gradient.
    return sum(mul(y, Var(random_tensor(y.shape(), seed))));
}

}  // namespace

TEST_CASE("elementwise gradients") {
    const Tensor x = random_tensor({2, 3, 5}, 1);
    Tensor pos = x;
    for (auto & v : pos.values()) v = std::abs(v) + 0.5f;
    const Tensor other = random_tensor({2, 3, 5}, 2);
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(tanh(a), 7); }, x) < kGradTol);
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(silu(a), 7); }, x) < kGradTol);
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(exp(scale(a, 0.5f)), 7); }, x) < kGradTol);
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(log(a), 7); }, pos) < kGradTol);
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(sqrt(a), 7); }, pos) < kGradTol);
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(div(a, Var(pos)), 7); }, x) < kGradTol);
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(div(Var(x), a), 7); }, pos) < kGradTol);
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(mul(a, a), 7); }, x) < kGradTol);
    CHECK(gradcheck([&](const Var & a) { return mse_loss(a, Var(other)); }, x) < kGradTol);
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(log10_clamped(a, 1e-3f), 7); }, pos) < kGradTol);
}

TEST_CASE("reduction and shape gradients") {
    const Tensor x = random_tensor({2, 4, 3}, 3);
    CHECK(gradcheck([](const Var & a) { return weighted_sum(sum_channels(a), 8); }, x) < kGradTol);
    CHECK(gradcheck([](const Var & a) { return weighted_sum(mean_batch_time(a), 8); }, x) < kGradTol);
    CHECK(gradcheck([](const Var & a) { return weighted_sum(slice_channels(a, 1, 2), 8); }, x) < kGradTol);
    CHECK(gradcheck([](const Var & a) { return weighted_sum(slice_batch(a, 1, 1), 8); }, x) < kGradTol);
    CHECK(gradcheck([](const Var & a) { return weighted_sum(concat_channels({a, scale(a, 2.0f)}), 8); }, x) < kGradTol);
    CHECK(gradcheck([](const Var & a) { return weighted_sum(reshape(a, {2, 12, 1}), 8); }, x) < kGradTol);
}

TEST_CASE("clamp blocks gradient outside the range") {
    Var x(Tensor({1, 1, 3}, std::vector<float>{-2.0f, 0.0f, 2.0f}), true);
    sum(clamp(x, -1.0f, 1.0f)).backward();
    CHECK(x.grad()[0] == 0.0f);
    CHECK(x.grad()[1] == 1.0f);
    CHECK(x.grad()[2] == 0.0f);
}

TEST_CASE("detach and no-grad guard") {
    Var x(random_tensor({1, 1, 4}, 4), true);
    Var y = add(detach(x), x);
    sum(y).backward();
    for (float g : x.grad().values()) CHECK(g == 1.0f);
    {
        NoGradGuard guard;
        CHECK_FALSE(grad_enabled());
        Var z = mul(x, x);
        CHECK_FALSE(z.requires_grad());
    }
    CHECK(grad_enabled());
}

TEST_CASE("conv1d matches a direct loop") {
    const Tensor x = random_tensor({2, 3, 11}, 5);
    const Tensor w = random_tensor({4, 3, 3}, 6);
    const Tensor b = random_tensor({4}, 7);
    const Conv1dOptions opts{2, 2, 2};
    const Var y = conv1d(Var(x), Var(w), Var(b), opts);
    const std::size_t tout = (11 + 2 * 2 - 2 * (3 - 1) - 1) / 2 + 1;
    REQUIRE(y.shape() == Shape{2, 4, tout});
    for (std::size_t bi = 0; bi < 2; ++bi)
        for (std::size_t o = 0; o < 4; ++o)
            for (std::size_t t = 0; t < tout; ++t) {
                double acc = b[o];
                for (std::size_t c = 0; c < 3; ++c)
                    for (std::size_t k = 0; k < 3; ++k) {
                        const long pos = static_cast<long>(t * 2 + k * 2) - 2;
                        if (pos >= 0 && pos < 11) acc += w[(o * 3 + c) * 3 + k] * x[(bi * 3 + c) * 11 + pos];
                    }
                CHECK(y.value()[(bi * 4 + o) * tout + t] == doctest::Approx(acc).epsilon(1e-5));
            }
}

TEST_CASE("conv gradients") {
    const Tensor x = random_tensor({2, 3, 9}, 8);
    const Tensor w = random_tensor({4, 3, 3}, 9, 0.5f);
    const Tensor b = random_tensor({4}, 10);
    const Conv1dOptions opts{2, 1, 1};
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(conv1d(a, Var(w), Var(b), opts), 11); }, x) < kGradTol);
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(conv1d(Var(x), a, Var(b), opts), 11); }, w) < kGradTol);
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(conv1d(Var(x), Var(w), a, opts), 11); }, b) < kGradTol);

    const Tensor wt = random_tensor({3, 2, 4}, 12, 0.5f);
    const ConvTranspose1dOptions topts{2, 1, 0};
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(conv_transpose1d(a, Var(wt), Var(), topts), 13); }, x) < kGradTol);
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(conv_transpose1d(Var(x), a, Var(), topts), 13); }, wt) < kGradTol);
}

TEST_CASE("transposed conv is the adjoint of conv") {
    // <conv(x), y> == <x, convT(y)> with shared weights and no bias.
    const Tensor x = random_tensor({1, 3, 20}, 14);
    const Tensor w = random_tensor({5, 3, 4}, 15);  // conv: Cout=5, Cin=3
    const Var cx = conv1d(Var(x), Var(w), Var(), {2, 1, 1});
    const Tensor y = random_tensor(cx.shape(), 16);
    const Var ty = conv_transpose1d(Var(y), Var(w), Var(), {2, 1, 0});
    REQUIRE(ty.shape()[2] >= 20);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) lhs += double(cx.value()[i]) * y[i];
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t t = 0; t < 20; ++t) rhs += double(x[c * 20 + t]) * ty.value()[c * ty.shape()[2] + t];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
}

TEST_CASE("snake activation") {
    const Tensor x = random_tensor({2, 3, 37}, 17);
    Tensor alpha({3}, std::vector<float>{0.5f, 1.0f, 2.0f});
    const Var y = snake(Var(x), Var(alpha));
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const float a = alpha[(i / 37) % 3];
        const double s = std::sin(a * x[i]);
        CHECK(y.value()[i] == doctest::Approx(x[i] + s * s / a).epsilon(1e-5));
    }
    CHECK(gradcheck([&](const Var & v) { return weighted_sum(snake(v, Var(alpha)), 18); }, x) < kGradTol);
    CHECK(gradcheck([&](const Var & a) { return weighted_sum(snake(Var(x), a), 18); }, alpha) < kGradTol);
}

TEST_CASE("snake is bitwise independent of buffer placement") {
    // Same rows at different offsets inside larger tensors give identical bits.
    const Tensor x = random_tensor({1, 1, 53}, 19);
    Tensor alpha({1}, std::vector<float>{0.8f});
    const Var y0 = snake(Var(x), Var(alpha));
    for (std::size_t shift = 1; shift < 9; ++shift) {
        Tensor big({1, 2, 53 + shift});
        for (std::size_t t = 0; t < 53; ++t) big[53 + shift + t] = x[t];
        Tensor a2({2}, std::vector<float>{0.8f, 0.8f});
        const Var y = snake(Var(big), Var(a2));
        CHECK(std::memcmp(y.value().data() + 53 + shift, y0.value().data(), 53 * sizeof(float)) == 0);
    }
}

TEST_CASE("AdamW") {
    SUBCASE("zero learning rate keeps weights") {
        Var w(random_tensor({3}, 20), true);
        const Tensor before = w.value();
        ParameterList p;
        p.add("w", w);
        AdamW opt(p, {0.0, 0.9, 0.999, 1e-8, 0.01});
        sum(square(w)).backward();
        opt.step();
        CHECK(testing::bit_equal(w.value(), before));
    }
    SUBCASE("minimizes a quadratic") {
        Var w(Tensor({2}, std::vector<float>{3.0f, -2.0f}), true);
        ParameterList p;
        p.add("w", w);
        AdamW opt(p, {0.1, 0.9, 0.999, 1e-8, 0.0});
        for (int i = 0; i < 300; ++i) {
            opt.zero_grad();
            sum(square(w)).backward();
            opt.step();
        }
        CHECK(std::abs(w.value()[0]) < 0.05);
        CHECK(std::abs(w.value()[1]) < 0.05);
        CHECK(opt.steps_taken() == 300);
    }
    SUBCASE("decoupled weight decay shrinks without gradient") {
        Var w(Tensor({1}, std::vector<float>{1.0f}), true);
        ParameterList p;
        p.add("w", w);
        AdamW opt(p, {0.1, 0.9, 0.999, 1e-8, 0.5});
        opt.zero_grad();
        scale(w, 0.0f).backward();
        opt.step();
        CHECK(w.value()[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-6));
    }
}

TEST_CASE("STFT matches a direct DFT") {
    const std::size_t n = 64, hop = 16, len = 200;
    const Tensor x = random_tensor({1, 1, len}, 21);
    const Var s = dsp::stft(Var(x), {n, hop});
    const std::size_t bins = dsp::stft_bins({n, hop}), frames = dsp::stft_frames(len, {n, hop});
    REQUIRE(s.shape() == Shape{1, 2 * bins, frames});
    // Reflect-padded, periodic Hann, frame f starts at f * hop in the padded signal.
    std::vector<double> padded(len + n);
    for (std::size_t i = 0; i < padded.size(); ++i) {
        long j = static_cast<long>(i) - static_cast<long>(n / 2);
        if (j < 0) j = -j;
        if (j >= static_cast<long>(len)) j = 2 * (static_cast<long>(len) - 1) - j;
        padded[i] = x[j];
    }
    for (std::size_t f : {std::size_t{0}, std::size_t{3}, frames - 1}) {
        for (std::size_t k : {std::size_t{0}, std::size_t{5}, bins - 1}) {
            std::complex<double> acc = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double win = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / n);
                acc += padded[f * hop + i] * win * std::polar(1.0, -2 * std::numbers::pi * double(k * i) / n);
            }
            CHECK(s.value()[k * frames + f] == doctest::Approx(acc.real()).epsilon(1e-4).scale(1.0));
            CHECK(s.value()[(bins + k) * frames + f] == doctest::Approx(acc.imag()).epsilon(1e-4).scale(1.0));
        }
    }
    CHECK(gradcheck([](const Var & a) { return weighted_sum(dsp::complex_magnitude(dsp::stft(a, {16, 4})), 22); },
                    random_tensor({1, 1, 24}, 23)) < kGradTol);
}

TEST_CASE("mel filterbank and spectrum helpers") {
    const Tensor & fb = dsp::mel_filterbank(16000, 512, 40);
    REQUIRE(fb.shape() == Shape{40, 257});
    for (std::size_t m = 0; m < 40; ++m) {
        double row = 0.0;
        for (std::size_t k = 0; k < 257; ++k) {
            CHECK(fb[m * 257 + k] >= 0.0f);
            row += fb[m * 257 + k];
        }
        CHECK(row > 0.0);
    }
    CHECK(&dsp::mel_filterbank(16000, 512, 40) == &fb);

    std::vector<float> tone(1000);
    for (std::size_t i = 0; i < tone.size(); ++i) tone[i] = std::sin(2 * std::numbers::pi * 50 * i / 1000.0);
    const auto mag = dsp::magnitude_spectrum(tone);
    CHECK(std::max_element(mag.begin(), mag.end()) - mag.begin() == 50);
}

TEST_CASE("resampling keeps a tone's frequency") {
    std::vector<float> in(44100);
    for (std::size_t i = 0; i < in.size(); ++i) in[i] = std::sin(2 * std::numbers::pi * 440.0 * i / 44100.0);
    const auto out = dsp::resample(in, 44100, 16000);
    CHECK(out.size() == doctest::Approx(16000).epsilon(0.001));
    std::vector<float> cut(out.begin(), out.begin() + 16000);
    const auto mag = dsp::magnitude_spectrum(cut);
    CHECK(std::max_element(mag.begin(), mag.end()) - mag.begin() == 440);
}
