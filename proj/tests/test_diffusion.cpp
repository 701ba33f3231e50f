#include "helpers.hpp"
#include "ratebench/diffusion.hpp"
#include "ratebench/errors.hpp"
#include "ratebench/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace ratebench;
using testing::random_tensor;

namespace {

std::vector<float> randn(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> d;
    std::vector<float> v(n);
    for (auto & x : v) x = d(rng);
    return v;
}

/// Items of shape [1, frames] drawn from N(mean, sd^2).
LatentSet toy_set(std::size_t n, int frames, double mean, double sd, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> d(static_cast<float>(mean), static_cast<float>(sd));
    LatentSet s;
    s.dim = 1;
    s.frames = frames;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> z(frames);
        for (auto & x : z) x = d(rng);
        s.latents.push_back(std::move(z));
        s.labels.push_back(0);
    }
    return s;
}

DiffusionConfig small_cfg() {
    DiffusionConfig c;
    c.width = 16;
    c.depth = 2;
    c.steps = 200;
    c.batch_size = 8;
    c.conditioning = Conditioning::none;
    return c;
}

}  // namespace

TEST_CASE("schedule is variance preserving for both shifts") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(1e-6, 1 - 1e-6);
    for (double shift : {0.0, std::log(0.5)}) {
        const NoiseSchedule s(shift);
        for (int i = 0; i < 10000; ++i) {
            const double t = u(rng);
            CHECK(std::abs(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("schedule values and limits") {
    const NoiseSchedule plain(0.0), shifted(std::log(0.5));
    CHECK(plain.logsnr(0.5) == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
    CHECK(plain.alpha(0.5) == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(shifted.logsnr(0.5) == doctest::Approx(2 * std::log(0.5)).epsilon(1e-12));
    CHECK(std::abs(shifted.alpha(0.5) - 0.44721) <= 1e-5);
    CHECK(std::abs(shifted.sigma(0.5) - 0.89443) <= 1e-5);
    CHECK(shifted.alpha(1e-7) > 0.999999);
    CHECK(shifted.sigma(1 - 1e-7) > 0.999999);
    for (double t : {0.0, 1.0, -0.2, 1.5}) CHECK_THROWS_AS(plain.logsnr(t), std::invalid_argument);
    double prev = plain.logsnr(1e-4);
    for (int i = 1; i < 1000; ++i) {
        const double t = 1e-4 + i * (1 - 2e-4) / 1000;
        CHECK(plain.logsnr(t) < prev);
        CHECK(shifted.logsnr(t) < plain.logsnr(t));
        prev = plain.logsnr(t);
    }
}

TEST_CASE("v prediction identities") {
    const NoiseSchedule s;
    const auto z = randn(64, 2), eps = randn(64, 3);
    for (double t : {1e-5, 0.1, 0.5, 0.9, 1 - 1e-5}) {
        const auto zt = noised_latent(z, eps, t, s);
        const auto v = v_target(z, eps, t, s);
        const auto rec = recover_from_v(zt, v, t, s);
        for (std::size_t i = 0; i < z.size(); ++i) {
            CHECK(std::abs(rec.z[i] - z[i]) <= 1e-6);
            CHECK(std::abs(rec.eps[i] - eps[i]) <= 1e-6);
        }
    }
    const auto v0 = v_target(z, eps, 1e-9, s), v1 = v_target(z, eps, 1 - 1e-9, s);
    const auto zt0 = noised_latent(z, eps, 1e-9, s);
    const auto r0 = recover_from_v(zt0, v0, 1e-9, s);
    for (std::size_t i = 0; i < z.size(); ++i) {
        CHECK(v0[i] == doctest::Approx(eps[i]).epsilon(1e-6));
        CHECK(v1[i] == doctest::Approx(-z[i]).epsilon(1e-6));
        CHECK(r0.z[i] == doctest::Approx(zt0[i]).epsilon(1e-6));
    }
    CHECK_THROWS_AS(v_target(z, randn(10, 4), 0.5, s), std::invalid_argument);
    CHECK_THROWS_AS(recover_from_v(z, randn(10, 4), 0.5, s), std::invalid_argument);
}

TEST_CASE("expected v second moment matches sampling") {
    const NoiseSchedule s;
    const double ez2 = 2.5;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(kTimeEps, 1 - kTimeEps);
    double acc = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double t = u(rng);
        acc += s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) * ez2;
    }
    CHECK(expected_v_second_moment(s, ez2) == doctest::Approx(acc / n).epsilon(5e-3));
    CHECK(expected_v_second_moment(s, 1.0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("denoiser training") {
    const NoiseSchedule s;
    const LatentSet data = toy_set(32, 8, 1.0, 0.5, 1);

    SUBCASE("zero-output init matches the analytic loss") {
        nn::Rng rng(1);
        Denoiser net(1, 0, 16, 2, rng);
        DiffusionConfig cfg = small_cfg();
        cfg.steps = 0;
        const auto r = train_denoiser(cfg, data, net, s, 256);
        CHECK(r.init_loss == doctest::Approx(expected_v_second_moment(s, data.second_moment())).epsilon(0.05));
    }
    SUBCASE("zero learning rate keeps the loss flat") {
        nn::Rng rng(1);
        Denoiser net(1, 0, 16, 2, rng);
        DiffusionConfig cfg = small_cfg();
        cfg.lr = 0.0;
        cfg.steps = 30;
        const auto r = train_denoiser(cfg, data, net, s, 16);
        CHECK(r.final_loss == r.init_loss);
    }
    SUBCASE("seeded and deterministic") {
        DiffusionConfig cfg = small_cfg();
        cfg.steps = 50;
        nn::Rng r1(3), r2(3);
        Denoiser a(1, 0, 16, 2, r1), b(1, 0, 16, 2, r2);
        const auto ra = train_denoiser(cfg, data, a, s, 16), rb = train_denoiser(cfg, data, b, s, 16);
        CHECK(ra.final_loss == rb.final_loss);
        CHECK(ra.losses == rb.losses);
        CHECK(validation_v_mse(a, data, s, 5).mse == validation_v_mse(b, data, s, 5).mse);
    }
    SUBCASE("dimension mismatch") {
        nn::Rng rng(1);
        Denoiser net(3, 0, 16, 2, rng);
        CHECK_THROWS_AS(train_denoiser(small_cfg(), data, net, s), std::invalid_argument);
    }
}

TEST_CASE("sampler") {
    const NoiseSchedule s;
    const LatentSet data = toy_set(256, 4, 1.5, 0.5, 2);
    nn::Rng rng(4);
    Denoiser net(1, 0, 32, 2, rng);
    DiffusionConfig cfg = small_cfg();
    cfg.width = 32;
    cfg.steps = 1500;
    cfg.batch_size = 32;
    cfg.lr = 3e-3;
    train_denoiser(cfg, data, net, s, 8);

    SUBCASE("fixed seed reproduces") {
        const auto a = sample_latents(net, s, 20, 8, 4, {}, 11);
        const auto b = sample_latents(net, s, 20, 8, 4, {}, 11);
        CHECK(testing::bit_equal(a, b));
        CHECK(sample_latents(net, s, 1, 4, 4, {}, 12).all_finite());
    }
    SUBCASE("samples follow the data statistics") {
        const auto x = sample_latents(net, s, 50, 250, 4, {}, 13);  // 1000 values
        double mean = 0.0, var = 0.0;
        for (float v : x.values()) mean += v;
        mean /= x.numel();
        for (float v : x.values()) var += (v - mean) * (v - mean);
        var /= x.numel() - 1;
        MESSAGE("sample mean " << mean << " var " << var << " (data 1.5, 0.25)");
        CHECK(mean == doctest::Approx(1.5).epsilon(0.15));
        CHECK(var == doctest::Approx(0.25).epsilon(0.15));
    }
}

TEST_CASE("predictability probe") {
    const auto dir = testing::fresh_dir("probe");
    TrainConfig tc = testing::tiny_config();
    Trainer untrained(tc);
    untrained.save(dir / "untrained.rbck");
    DiffusionConfig cfg = small_cfg();
    cfg.steps = 100;
    CHECK_THROWS_AS(predictability_score(dir / "untrained.rbck", cfg), FailedPrecondition);

    Trainer t(tc);
    for (int i = 0; i < 3; ++i) t.train_step();
    t.save(dir / "vae.rbck");
    const ProbeReport a = predictability_score(dir / "vae.rbck", cfg);
    const ProbeReport b = predictability_score(dir / "vae.rbck", cfg);
    CHECK(a.predictability_score == b.predictability_score);
    CHECK(a.predictability_score >= 0.0);
    CHECK(a.predictability_score <= 1.5);
    CHECK(a.vae_id == "vae");
    CHECK(a.measured_bitrate == doctest::Approx(kl_to_bitrate(a.measured_kl, 40.0)).epsilon(1e-9));
    const auto j = a.to_json();
    for (const char * key : {"vae_id", "measured_bitrate", "predictability_score"}) CHECK(j.contains(key));

    // Constant latents: v = (alpha / sigma) z_t, learnable without any data statistics.
    const auto params = t.codec().model().parameters();
    for (const auto & [name, p] : params.items()) {
        if (name.rfind("encoder.conv_out", 0) == 0 || name.rfind("encoder.mel_proj", 0) == 0) {
            nn::Var v = p;
            for (auto & x : v.mutable_value().values()) x = 0.0f;
        }
    }
    t.save(dir / "flat.rbck");
    DiffusionConfig longer = cfg;
    longer.steps = 600;
    const ProbeReport flat = predictability_score(dir / "flat.rbck", longer);
    MESSAGE("constant-latent score " << flat.predictability_score << ", trained-VAE score " << a.predictability_score);
    CHECK(flat.measured_kl == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));
    CHECK(flat.final_train_loss < 0.7 * flat.init_loss);
    CHECK(flat.predictability_score < 1.0);
}
