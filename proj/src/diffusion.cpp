#include "ratebench/diffusion.hpp"

#include "ratebench/errors.hpp"
#include "ratebench/random.hpp"
#include "ratebench/trainer.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace ratebench {

namespace {

constexpr std::uint64_t kInitStream = 0xd1ff;
constexpr std::uint64_t kTrainStream = 0x7a11;
constexpr std::uint64_t kProbeStream = 0x960be;
constexpr std::uint64_t kValStream = 0xa1;

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_same(std::size_t a, std::size_t b, const char * what) {
    if (a != b) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" + std::to_string(a) + " vs " +
                                    std::to_string(b) + " elements)");
    }
}

}  // namespace

NoiseSchedule::NoiseSchedule(double shift) : shift_(shift) {
    if (!std::isfinite(shift)) throw std::invalid_argument("schedule shift must be finite");
}

double NoiseSchedule::logsnr(double t) const {
    if (!(t > 0.0 && t < 1.0)) {
        throw std::invalid_argument("t must lie in (0, 1), got " + std::to_string(t));
    }
    return -2.0 * std::log(std::tan(std::numbers::pi * t / 2.0)) + 2.0 * shift_;
}

double NoiseSchedule::alpha(double t) const { return std::sqrt(sigmoid(logsnr(t))); }

double NoiseSchedule::sigma(double t) const { return std::sqrt(sigmoid(-logsnr(t))); }

std::vector<float> v_target(std::span<const float> z, std::span<const float> eps, double t,
                            const NoiseSchedule & schedule) {
    check_same(z.size(), eps.size(), "v_target");
    const double a = schedule.alpha(t), s = schedule.sigma(t);
    std::vector<float> v(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) v[i] = static_cast<float>(a * eps[i] - s * z[i]);
    return v;
}

std::vector<float> noised_latent(std::span<const float> z, std::span<const float> eps, double t,
                                 const NoiseSchedule & schedule) {
    check_same(z.size(), eps.size(), "noised_latent");
    const double a = schedule.alpha(t), s = schedule.sigma(t);
    std::vector<float> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = static_cast<float>(a * z[i] + s * eps[i]);
    return out;
}

Recovered recover_from_v(std::span<const float> z_t, std::span<const float> v, double t,
                         const NoiseSchedule & schedule) {
    check_same(z_t.size(), v.size(), "recover_from_v");
    const double a = schedule.alpha(t), s = schedule.sigma(t);
    Recovered r;
    r.z.resize(z_t.size());
    r.eps.resize(z_t.size());
    for (std::size_t i = 0; i < z_t.size(); ++i) {
        r.z[i] = static_cast<float>(a * z_t[i] - s * v[i]);
        r.eps[i] = static_cast<float>(s * z_t[i] + a * v[i]);
    }
    return r;
}

double LatentSet::second_moment() const {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto & z : latents) {
        for (float v : z) acc += static_cast<double>(v) * v;
        n += z.size();
    }
    if (n == 0) throw std::invalid_argument("latent set is empty");
    return acc / static_cast<double>(n);
}

LatentSet extract_latents(Codec & codec, const std::vector<const std::vector<float> *> & items,
                          const std::vector<int> & labels, int num_classes, int sample_rate_hz) {
    if (items.empty()) throw std::invalid_argument("extract_latents: no items");
    if (labels.size() != items.size()) throw std::invalid_argument("extract_latents: one label per item required");
    LatentSet set;
    set.dim = codec.model_config().latent_dim;
    set.num_classes = num_classes;
    set.labels = labels;
    constexpr std::size_t kChunk = 8;
    for (std::size_t i = 0; i < items.size(); i += kChunk) {
        std::vector<const std::vector<float> *> group(items.begin() + i,
                                                      items.begin() + std::min(items.size(), i + kChunk));
        const AudioBatch batch = make_batch(group, sample_rate_hz);
        batch.validate(codec.model_config().hop);
        nn::Tensor z;
        {
            nn::NoGradGuard guard;
            const nn::Var features = codec.model().encode_features(batch);
            if (codec.bottleneck_config().kind == BottleneckKind::vq) {
                z = codec.vq().forward(features, false, nullptr).z.value();
            } else {
                z = nn::slice_channels(features, 0, static_cast<std::size_t>(set.dim)).value();
            }
        }
        const std::size_t D = z.dim(1), F = z.dim(2);
        set.frames = static_cast<int>(F);
        for (std::size_t b = 0; b < z.dim(0); ++b) {
            set.latents.emplace_back(z.data() + b * D * F, z.data() + (b + 1) * D * F);
        }
    }
    return set;
}

Denoiser::Denoiser(int latent_dim, int num_classes, int width, int depth, nn::Rng & rng)
    : latent_dim_(latent_dim), num_classes_(num_classes) {
    if (latent_dim < 1 || num_classes < 0 || width < 1 || depth < 1) {
        throw std::invalid_argument("Denoiser: invalid sizes");
    }
    const std::size_t cond = kTimeEmbeddingDim + static_cast<std::size_t>(num_classes);
    const std::size_t W = static_cast<std::size_t>(width);
    in_ = nn::Conv1d(static_cast<std::size_t>(latent_dim) + cond, W, 3, {1, 1, 1}, rng);
    for (int i = 0; i < depth; ++i) {
        block_a_.emplace_back(W + cond, W, 3, nn::Conv1dOptions{1, 1, 1}, rng);
        block_b_.emplace_back(W, W, 1, nn::Conv1dOptions{}, rng);
    }
    out_ = nn::Conv1d(W, static_cast<std::size_t>(latent_dim), 3, {1, 1, 1}, rng);
    out_.zero();
}

nn::Var Denoiser::operator()(const nn::Var & z_t, const std::vector<double> & t,
                             const std::vector<int> & labels) const {
    const auto & zs = z_t.shape();
    if (zs.size() != 3 || zs[1] != static_cast<std::size_t>(latent_dim_)) {
        throw std::invalid_argument("Denoiser: expected [B, " + std::to_string(latent_dim_) + ", F] input, got " +
                                    nn::shape_str(zs));
    }
    const std::size_t B = zs[0], F = zs[2];
    if (t.size() != B) throw std::invalid_argument("Denoiser: one t per batch item required");
    if (num_classes_ > 0 && labels.size() != B) throw std::invalid_argument("Denoiser: one label per batch item required");
    const std::size_t C = kTimeEmbeddingDim + static_cast<std::size_t>(num_classes_);
    nn::Tensor cond({B, C, F});
    for (std::size_t b = 0; b < B; ++b) {
        float * row = cond.data() + b * C * F;
        for (int k = 0; k < kTimeEmbeddingDim / 2; ++k) {
            const double w = std::numbers::pi * std::ldexp(1.0, k) * t[b];
            std::fill(row + (2 * k) * F, row + (2 * k + 1) * F, static_cast<float>(std::sin(w)));
            std::fill(row + (2 * k + 1) * F, row + (2 * k + 2) * F, static_cast<float>(std::cos(w)));
        }
        if (num_classes_ > 0) {
            const int y = labels[b];
            if (y < 0 || y >= num_classes_) throw std::invalid_argument("Denoiser: label out of range");
            std::fill(row + (kTimeEmbeddingDim + y) * F, row + (kTimeEmbeddingDim + y + 1) * F, 1.0f);
        }
    }
    const nn::Var c(std::move(cond));
    nn::Var x = in_(nn::concat_channels({z_t, c}));
    for (std::size_t i = 0; i < block_a_.size(); ++i) {
        const nn::Var h = block_b_[i](nn::silu(block_a_[i](nn::silu(nn::concat_channels({x, c})))));
        x = nn::add(x, h);
    }
    return out_(nn::silu(x));
}

nn::ParameterList Denoiser::parameters() const {
    nn::ParameterList p;
    in_.collect("denoiser.in", p);
    for (std::size_t i = 0; i < block_a_.size(); ++i) {
        block_a_[i].collect("denoiser.block" + std::to_string(i) + ".a", p);
        block_b_[i].collect("denoiser.block" + std::to_string(i) + ".b", p);
    }
    out_.collect("denoiser.out", p);
    return p;
}

double expected_v_second_moment(const NoiseSchedule & schedule, double z_second_moment) {
    // Midpoint rule; sigma^2 = 1 - alpha^2 so one integral suffices.
    constexpr int kNodes = 200000;
    const double lo = kTimeEps, hi = 1.0 - kTimeEps, h = (hi - lo) / kNodes;
    double a2 = 0.0;
    for (int i = 0; i < kNodes; ++i) {
        const double a = schedule.alpha(lo + (i + 0.5) * h);
        a2 += a * a;
    }
    a2 /= kNodes;
    return a2 + (1.0 - a2) * z_second_moment;
}

namespace {

struct VBatch {
    nn::Tensor z_t;
    nn::Tensor v;
    std::vector<double> t;
    std::vector<int> labels;
};

VBatch make_vbatch(const LatentSet & data, const std::vector<std::size_t> & idx, const NoiseSchedule & schedule,
                   std::mt19937_64 & rng) {
    const std::size_t B = idx.size(), D = static_cast<std::size_t>(data.dim), F = static_cast<std::size_t>(data.frames);
    std::uniform_real_distribution<double> ut(kTimeEps, 1.0 - kTimeEps);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    VBatch vb{nn::Tensor({B, D, F}), nn::Tensor({B, D, F}), {}, {}};
    std::vector<float> eps(D * F);
    for (std::size_t b = 0; b < B; ++b) {
        const double t = ut(rng);
        for (float & e : eps) e = normal(rng);
        const auto & z = data.latents[idx[b]];
        const auto zt = noised_latent(z, eps, t, schedule);
        const auto v = v_target(z, eps, t, schedule);
        std::copy(zt.begin(), zt.end(), vb.z_t.data() + b * D * F);
        std::copy(v.begin(), v.end(), vb.v.data() + b * D * F);
        vb.t.push_back(t);
        vb.labels.push_back(data.labels.empty() ? 0 : data.labels[idx[b]]);
    }
    return vb;
}

std::vector<std::size_t> draw_indices(std::size_t n, std::size_t B, std::mt19937_64 & rng) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> idx(B);
    for (auto & i : idx) i = pick(rng);
    return idx;
}

double batch_loss(const Denoiser & net, const VBatch & vb) {
    nn::NoGradGuard guard;
    return nn::mse_loss(net(nn::Var(vb.z_t), vb.t, vb.labels), nn::Var(vb.v)).value().item();
}

void check_latents(const LatentSet & data, const Denoiser & net) {
    if (data.size() == 0) throw std::invalid_argument("latent set is empty");
    if (data.dim != net.latent_dim()) {
        throw std::invalid_argument("latent dim " + std::to_string(data.dim) + " does not match the denoiser's " +
                                    std::to_string(net.latent_dim()));
    }
    for (const auto & z : data.latents) {
        if (z.size() != static_cast<std::size_t>(data.dim) * static_cast<std::size_t>(data.frames)) {
            throw std::invalid_argument("latent set items have inconsistent shapes");
        }
    }
}

}  // namespace

DenoiserTrainResult train_denoiser(const DiffusionConfig & cfg, const LatentSet & train, Denoiser & net,
                                   const NoiseSchedule & schedule, int probe_batches) {
    cfg.validate();
    check_latents(train, net);
    const std::size_t B = static_cast<std::size_t>(cfg.batch_size);

    std::vector<VBatch> probes;
    {
        std::mt19937_64 prng(derive_seed(cfg.seed, kProbeStream));
        for (int i = 0; i < probe_batches; ++i) {
            probes.push_back(make_vbatch(train, draw_indices(train.size(), B, prng), schedule, prng));
        }
    }
    auto probe_loss = [&] {
        double acc = 0.0;
        for (const auto & vb : probes) acc += batch_loss(net, vb);
        return probes.empty() ? 0.0 : acc / static_cast<double>(probes.size());
    };

    DenoiserTrainResult r;
    r.init_loss = probe_loss();
    nn::AdamW opt(net.parameters(), nn::AdamWOptions{cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    std::mt19937_64 rng(derive_seed(cfg.seed, kTrainStream));
    constexpr int kWindow = 100;
    double window = 0.0;
    int in_window = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        const VBatch vb = make_vbatch(train, draw_indices(train.size(), B, rng), schedule, rng);
        nn::Var loss = nn::mse_loss(net(nn::Var(vb.z_t), vb.t, vb.labels), nn::Var(vb.v));
        const double value = loss.value().item();
        if (!std::isfinite(value)) {
            throw TrainingDiverged("denoiser loss became non-finite at step " + std::to_string(step));
        }
        opt.zero_grad();
        loss.backward();
        opt.step();
        window += value;
        if (++in_window == kWindow || step + 1 == cfg.steps) {
            r.losses.push_back(window / in_window);
            window = 0.0;
            in_window = 0;
        }
    }
    r.final_loss = probe_loss();
    return r;
}

VMse validation_v_mse(const Denoiser & net, const LatentSet & data, const NoiseSchedule & schedule,
                      std::uint64_t seed, int draws_per_item) {
    check_latents(data, net);
    if (draws_per_item < 1) throw std::invalid_argument("draws_per_item must be >= 1");
    std::mt19937_64 rng(derive_seed(seed, kValStream));
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    double se = 0.0, v2 = 0.0;
    std::size_t n = 0;
    for (int d = 0; d < draws_per_item; ++d) {
        const VBatch vb = make_vbatch(data, all, schedule, rng);
        nn::NoGradGuard guard;
        const nn::Tensor pred = net(nn::Var(vb.z_t), vb.t, vb.labels).value();
        for (std::size_t i = 0; i < pred.numel(); ++i) {
            const double diff = static_cast<double>(pred[i]) - vb.v[i];
            se += diff * diff;
            v2 += static_cast<double>(vb.v[i]) * vb.v[i];
        }
        n += pred.numel();
    }
    return {se / static_cast<double>(n), v2 / static_cast<double>(n)};
}

nn::Tensor sample_latents(const Denoiser & net, const NoiseSchedule & schedule, int steps, int n, int frames,
                          const std::vector<int> & labels, std::uint64_t seed) {
    if (steps < 1 || n < 1 || frames < 1) throw std::invalid_argument("sample_latents: steps, n and frames must be >= 1");
    const std::size_t N = static_cast<std::size_t>(n), D = static_cast<std::size_t>(net.latent_dim()),
                      F = static_cast<std::size_t>(frames);
    std::vector<int> y = labels;
    if (y.empty()) y.assign(N, 0);
    if (y.size() != N) throw std::invalid_argument("sample_latents: one label per sample required");
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    nn::Tensor z({N, D, F});
    for (float & v : z.values()) v = normal(rng);

    nn::NoGradGuard guard;
    const double t_hi = 1.0 - kTimeEps, t_lo = kTimeEps;
    for (int i = 0; i < steps; ++i) {
        const double t = t_hi - (t_hi - t_lo) * i / steps;
        const double t_next = t_hi - (t_hi - t_lo) * (i + 1) / steps;
        const nn::Tensor v = net(nn::Var(z), std::vector<double>(N, t), y).value();
        const Recovered r = recover_from_v(z.values(), v.values(), t, schedule);
        if (i + 1 == steps) {
            return nn::Tensor({N, D, F}, r.z);
        }
        z = nn::Tensor({N, D, F}, noised_latent(r.z, r.eps, t_next, schedule));
    }
    return z;
}

nlohmann::json ProbeReport::to_json() const {
    return {{"vae_id", vae_id},
            {"measured_kl", measured_kl},
            {"measured_bitrate", measured_bitrate},
            {"predictability_score", predictability_score},
            {"init_loss", init_loss},
            {"analytic_init_loss", analytic_init_loss},
            {"final_train_loss", final_train_loss}};
}

ProbeReport predictability_score(const std::filesystem::path & vae_checkpoint, const DiffusionConfig & cfg) {
    cfg.validate();
    LoadedModel m = load_model(vae_checkpoint);
    if (m.step <= 0) {
        throw FailedPrecondition("VAE checkpoint " + vae_checkpoint.string() + " is untrained (step 0)");
    }
    const Dataset ds = load_dataset(m.config.data, m.config.model.sample_rate_hz, m.config.model.hop);
    const Split split = split_dataset(ds.items.size(), m.config.data.eval_fraction, m.config.data.seed);
    const int classes = cfg.conditioning == Conditioning::class_label ? static_cast<int>(ds.class_names.size()) : 0;
    auto gather = [&](const std::vector<std::size_t> & idx, std::vector<const std::vector<float> *> & items,
                      std::vector<int> & labels) {
        for (std::size_t i : idx) {
            items.push_back(&ds.items[i].samples);
            labels.push_back(ds.items[i].label);
        }
    };
    std::vector<const std::vector<float> *> train_items, eval_items;
    std::vector<int> train_labels, eval_labels;
    gather(split.train, train_items, train_labels);
    gather(split.eval, eval_items, eval_labels);

    const LatentSet train = extract_latents(*m.codec, train_items, train_labels, classes, ds.sample_rate_hz);
    const LatentSet val = extract_latents(*m.codec, eval_items, eval_labels, classes, ds.sample_rate_hz);
    const EvalResult rate = measure_kl_bitrate(*m.codec, eval_items, ds.sample_rate_hz);

    const NoiseSchedule schedule(cfg.shift);
    nn::Rng rng(derive_seed(cfg.seed, kInitStream));
    Denoiser net(train.dim, classes, cfg.width, cfg.depth, rng);
    const DenoiserTrainResult tr = train_denoiser(cfg, train, net, schedule);
    const VMse vm = validation_v_mse(net, val, schedule, cfg.seed);

    ProbeReport r;
    const auto parent = vae_checkpoint.parent_path().filename().string();
    r.vae_id = vae_checkpoint.filename() == "checkpoint.rbck" && !parent.empty() ? parent
                                                                                 : vae_checkpoint.stem().string();
    r.measured_kl = rate.kl_per_frame;
    r.measured_bitrate = rate.bitrate_bps;
    r.predictability_score = vm.v_second_moment > 0.0 ? vm.mse / vm.v_second_moment : 0.0;
    r.init_loss = tr.init_loss;
    r.analytic_init_loss = expected_v_second_moment(schedule, train.second_moment());
    r.final_train_loss = tr.final_loss;
    return r;
}

}  // namespace ratebench
