#include "ratebench/trainer.hpp"

#include "ratebench/checkpoint.hpp"
#include "ratebench/errors.hpp"
#include "ratebench/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ratebench {

using nlohmann::json;

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kDataStream = 0xda7a;
constexpr std::uint64_t kNoiseStream = 0x4015e;
constexpr std::uint64_t kPassthroughStream = 0x9a55;
constexpr std::uint64_t kVqStream = 0x7c0de;
constexpr std::uint64_t kDiscStream = 0xd15c;
constexpr std::size_t kEvalBatch = 8;

ModelConfig seeded_model(const TrainConfig & cfg) {
    ModelConfig m = cfg.model;
    m.seed = derive_seed(cfg.seed, kInitStream, cfg.model.seed);
    return m;
}

bool adversarial_enabled(const TrainConfig & cfg) {
    return cfg.weights.adv_weight > 0.0 || cfg.weights.feature_match_weight > 0.0;
}

json eval_json(const EvalResult & e) {
    return {{"kl_per_frame", e.kl_per_frame},
            {"bitrate_bps", e.bitrate_bps},
            {"mel_distance", e.mel_distance},
            {"per_dim_kl", e.per_dim_kl},
            {"items", e.items}};
}

void put_params(Checkpoint & ck, const std::string & prefix, const nn::ParameterList & params) {
    for (const auto & [name, p] : params.items()) {
        ck.tensors[prefix + name] = p.value();
    }
}

void get_params(const Checkpoint & ck, const std::string & prefix, const nn::ParameterList & params) {
    for (const auto & [name, p] : params.items()) {
        auto it = ck.tensors.find(prefix + name);
        if (it == ck.tensors.end()) {
            throw std::invalid_argument("checkpoint is missing tensor '" + prefix + name + "'");
        }
        if (it->second.shape() != p.value().shape()) {
            throw std::invalid_argument("checkpoint tensor '" + prefix + name + "' has shape " +
                                        nn::shape_str(it->second.shape()) + ", model expects " +
                                        nn::shape_str(p.value().shape()));
        }
        nn::Var v = p;
        v.mutable_value() = it->second;
    }
}

void put_optimizer(Checkpoint & ck, const std::string & prefix, const nn::AdamW & opt) {
    const auto & items = opt.params().items();
    for (std::size_t k = 0; k < items.size(); ++k) {
        const auto & shape = items[k].second.value().shape();
        ck.tensors[prefix + "m." + items[k].first] = nn::Tensor(shape, opt.first_moments()[k]);
        ck.tensors[prefix + "v." + items[k].first] = nn::Tensor(shape, opt.second_moments()[k]);
    }
}

void get_optimizer(const Checkpoint & ck, const std::string & prefix, nn::AdamW & opt, std::int64_t steps) {
    const auto & items = opt.params().items();
    for (std::size_t k = 0; k < items.size(); ++k) {
        for (const char * which : {"m.", "v."}) {
            const std::string key = prefix + which + items[k].first;
            auto it = ck.tensors.find(key);
            if (it == ck.tensors.end() || it->second.numel() != items[k].second.value().numel()) {
                throw std::invalid_argument("checkpoint optimizer state '" + key + "' missing or malformed");
            }
            auto & dst = which[0] == 'm' ? opt.first_moments()[k] : opt.second_moments()[k];
            dst = it->second.storage();
        }
    }
    opt.set_steps_taken(steps);
}

std::vector<std::vector<const std::vector<float> *>> chunk(const std::vector<const std::vector<float> *> & items) {
    std::vector<std::vector<const std::vector<float> *>> out;
    for (std::size_t i = 0; i < items.size(); i += kEvalBatch) {
        out.emplace_back(items.begin() + i, items.begin() + std::min(items.size(), i + kEvalBatch));
    }
    return out;
}

EvalResult evaluate_impl(Codec & codec, const std::vector<const std::vector<float> *> & items, int sample_rate_hz,
                         bool with_mel) {
    if (items.empty()) {
        throw std::invalid_argument("evaluation set is empty");
    }
    const auto & bn = codec.bottleneck_config();
    const double frame_rate = codec.frame_rate_hz();
    EvalResult r;
    r.items = items.size();
    double kl_sum = 0.0, frames = 0.0, mel_sum = 0.0;
    std::vector<double> dim_sum(bn.kind == BottleneckKind::gaussian ? bn.latent_dim : 0, 0.0);
    for (const auto & group : chunk(items)) {
        const AudioBatch batch = make_batch(group, sample_rate_hz);
        batch.validate(codec.model_config().hop);
        const Codec::Output out = codec.reconstruct(batch);
        const auto & res = out.bottleneck;
        if (res.has_rate()) {
            const auto & pf = res.per_frame_kl.value();
            const double n = static_cast<double>(pf.numel());
            kl_sum += res.mean_kl() * n;
            frames += n;
            const auto & pd = res.per_dim_kl.value();
            for (std::size_t d = 0; d < dim_sum.size(); ++d) dim_sum[d] += pd[d] * n;
        }
        if (with_mel) {
            mel_sum += mel_distance(out.reconstruction.value(), batch.waveform, sample_rate_hz) *
                       static_cast<double>(group.size());
        }
    }
    if (bn.kind == BottleneckKind::vq) {
        r.kl_per_frame = vq_kl_nats(bn.codebook_size, bn.num_codebooks);
        r.bitrate_bps = vq_bitrate(bn.codebook_size, bn.num_codebooks, frame_rate);
    } else {
        r.kl_per_frame = kl_sum / frames;
        r.bitrate_bps = kl_to_bitrate(r.kl_per_frame, frame_rate);
        r.per_dim_kl.resize(dim_sum.size());
        for (std::size_t d = 0; d < dim_sum.size(); ++d) r.per_dim_kl[d] = dim_sum[d] / frames;
    }
    if (with_mel) {
        r.mel_distance = mel_sum / static_cast<double>(items.size());
    }
    return r;
}

}  // namespace

json MetricsRow::to_json() const {
    json j = {{"step", step},
              {"total", loss.total},
              {"recon", loss.recon},
              {"rate", loss.rate},
              {"adv", loss.adv},
              {"feature_match", loss.feature_match},
              {"commitment", loss.commitment},
              {"batch_kl_per_frame", loss.measured_kl_per_frame},
              {"rate_excluded", loss.rate_excluded},
              {"passthrough", passthrough},
              {"measured_kl_per_frame", measured_kl_per_frame},
              {"measured_bitrate_bps", measured_bitrate_bps},
              {"components", loss.components}};
    if (eval) {
        j["eval"] = eval_json(*eval);
    }
    return j;
}

EvalResult measure_kl_bitrate(Codec & codec, const std::vector<const std::vector<float> *> & items,
                              int sample_rate_hz) {
    return evaluate_impl(codec, items, sample_rate_hz, false);
}

EvalResult evaluate_codec(Codec & codec, const std::vector<const std::vector<float> *> & items, int sample_rate_hz) {
    return evaluate_impl(codec, items, sample_rate_hz, true);
}

struct Trainer::Adversary {
    SpectralDiscriminator disc;
    std::unique_ptr<nn::AdamW> opt;
};

Trainer::Trainer(const TrainConfig & cfg) : cfg_(cfg) {
    cfg_.validate();
    data_ = load_dataset(cfg_.data, cfg_.model.sample_rate_hz, cfg_.model.hop);
    init();
}

Trainer::Trainer(const TrainConfig & cfg, Dataset data) : cfg_(cfg), data_(std::move(data)) {
    cfg_.validate();
    init();
}

Trainer::~Trainer() = default;
Trainer::Trainer(Trainer &&) noexcept = default;
Trainer & Trainer::operator=(Trainer &&) noexcept = default;

void Trainer::init() {
    if (data_.sample_rate_hz != cfg_.model.sample_rate_hz) {
        throw std::invalid_argument("dataset sample rate " + std::to_string(data_.sample_rate_hz) +
                                    " differs from model.sample_rate_hz");
    }
    split_ = split_dataset(data_.items.size(), cfg_.data.eval_fraction, cfg_.data.seed);
    codec_ = std::make_unique<Codec>(seeded_model(cfg_), cfg_.bottleneck);
    codec_->check_rate_spec(cfg_.rate_spec());
    opt_ = std::make_unique<nn::AdamW>(codec_->model().parameters(),
                                       nn::AdamWOptions{cfg_.lr, 0.9, 0.999, 1e-8, cfg_.weight_decay});
    if (adversarial_enabled(cfg_)) {
        adv_ = std::make_unique<Adversary>();
        nn::Rng rng(derive_seed(cfg_.seed, kDiscStream));
        adv_->disc = SpectralDiscriminator(cfg_.adversarial.ffts, cfg_.adversarial.channels, rng);
        adv_->opt = std::make_unique<nn::AdamW>(
            adv_->disc.parameters(), nn::AdamWOptions{cfg_.adversarial.lr, 0.8, 0.99, 1e-8, cfg_.weight_decay});
    }
    vq_rng_.seed(derive_seed(cfg_.seed, kVqStream));
}

std::vector<const std::vector<float> *> Trainer::eval_items() const {
    std::vector<const std::vector<float> *> out;
    for (std::size_t i : split_.eval) out.push_back(&data_.items[i].samples);
    return out;
}

std::vector<std::size_t> Trainer::batch_indices(std::int64_t step) const {
    const std::size_t n = split_.train.size();
    const std::size_t B = static_cast<std::size_t>(cfg_.batch_size);
    std::vector<std::size_t> out;
    out.reserve(B);
    std::int64_t cached_epoch = -1;
    std::vector<std::size_t> perm;
    for (std::size_t i = 0; i < B; ++i) {
        const std::uint64_t pos = static_cast<std::uint64_t>(step) * B + i;
        const auto epoch = static_cast<std::int64_t>(pos / n);
        if (epoch != cached_epoch) {
            perm = split_.train;
            std::mt19937_64 rng(derive_seed(cfg_.seed, kDataStream, static_cast<std::uint64_t>(epoch)));
            std::shuffle(perm.begin(), perm.end(), rng);
            cached_epoch = epoch;
        }
        out.push_back(perm[pos % n]);
    }
    return out;
}

MetricsRow Trainer::train_step() {
    std::vector<const std::vector<float> *> items;
    for (std::size_t i : batch_indices(step_)) items.push_back(&data_.items[i].samples);
    return train_step(make_batch(items, data_.sample_rate_hz));
}

MetricsRow Trainer::train_step(const AudioBatch & batch, std::optional<bool> force_passthrough) {
    batch.validate(cfg_.model.hop);
    const auto & bn = cfg_.bottleneck;
    bool passthrough = false;
    if (bn.kind == BottleneckKind::gaussian) {
        passthrough = force_passthrough ? *force_passthrough
                                        : choose_passthrough(static_cast<std::uint64_t>(step_), bn.passthrough_prob,
                                                             derive_seed(cfg_.seed, kPassthroughStream));
    }
    // Blown-up weights would otherwise surface as a bad-posterior argument error deep in the forward pass.
    const auto params = codec_->model().parameters();
    for (const auto & [name, p] : params.items()) {
        if (!p.value().all_finite()) {
            const json snap = {{"step", step_}, {"parameter", name}};
            throw TrainingDiverged("non-finite weights at step " + std::to_string(step_) + ": " + snap.dump());
        }
    }
    Codec::ForwardOptions fo;
    fo.training = true;
    fo.passthrough = passthrough;
    fo.noise_seed = derive_seed(cfg_.seed, kNoiseStream, static_cast<std::uint64_t>(step_));
    fo.vq_rng = &vq_rng_;
    const Codec::Output out = codec_->forward(batch, fo);

    const ReconTerms recon =
        recon_terms(out.reconstruction, batch.waveform, static_cast<double>(batch.sample_rate_hz), cfg_.weights);
    ObjectiveInputs in;
    in.recon = recon.combined;
    in.rate = rate_term(out.bottleneck, bn.rate_loss, cfg_.rate_spec(), bn.free_bits_lambda);
    if (auto it = out.bottleneck.aux_losses.find("commitment"); it != out.bottleneck.aux_losses.end()) {
        in.commitment = it->second;
    }
    std::optional<double> batch_kl;
    if (out.bottleneck.has_rate()) {
        batch_kl = out.bottleneck.mean_kl();
    } else if (out.bottleneck.constant_kl) {
        batch_kl = *out.bottleneck.constant_kl;
    }
    in.measured_kl_per_frame = batch_kl.value_or(0.0);
    if (adv_) {
        const GeneratorAdvLoss g = generator_adv_loss(batch.waveform, out.reconstruction, adv_->disc);
        in.adv = g.adv;
        in.feature_match = g.feature_match;
    }
    Objective obj = total_objective(in, cfg_.weights);
    obj.report.components["mel"] = recon.mel.value().item();
    obj.report.components["stft"] = recon.stft.value().item();
    obj.report.components["waveform"] = recon.waveform.value().item();

    if (!std::isfinite(obj.report.total)) {
        json snap = {{"step", step_}, {"passthrough", passthrough}, {"components", obj.report.components}};
        throw TrainingDiverged("non-finite loss at step " + std::to_string(step_) + ": " + snap.dump());
    }

    opt_->zero_grad();
    obj.total.backward();
    if (cfg_.grad_clip > 0.0) {
        const double norm = std::sqrt(opt_->params().grad_norm_sq());
        obj.report.components["grad_norm"] = norm;
        if (norm > cfg_.grad_clip) {
            opt_->params().scale_grads(static_cast<float>(cfg_.grad_clip / norm));
        }
    }
    opt_->step();

    if (adv_) {
        adv_->opt->zero_grad();
        nn::Var dl = discriminator_loss(batch.waveform, out.reconstruction.value(), adv_->disc);
        obj.report.components["discriminator"] = dl.value().item();
        dl.backward();
        adv_->opt->step();
    }

    if (batch_kl) {
        kl_ema_ = kl_ema_count_ == 0 ? *batch_kl : cfg_.kl_ema_decay * kl_ema_ + (1.0 - cfg_.kl_ema_decay) * *batch_kl;
        ++kl_ema_count_;
    }
    ++step_;

    MetricsRow row;
    row.step = step_;
    row.loss = obj.report;
    row.passthrough = passthrough;
    row.measured_kl_per_frame = kl_ema_;
    row.measured_bitrate_bps = kl_to_bitrate(kl_ema_, codec_->frame_rate_hz());
    return row;
}

EvalResult Trainer::evaluate() { return evaluate_codec(*codec_, eval_items(), data_.sample_rate_hz); }

void Trainer::run(const std::function<void(const MetricsRow &)> & sink) {
    while (step_ < cfg_.steps) {
        MetricsRow row = train_step();
        const bool eval_now = step_ % cfg_.eval_every == 0 || step_ == cfg_.steps;
        if (eval_now) {
            row.eval = evaluate();
        }
        if (eval_now || step_ % cfg_.log_every == 0) {
            sink(row);
        }
    }
}

void Trainer::run(const std::filesystem::path & metrics_path) {
    if (metrics_path.has_parent_path()) std::filesystem::create_directories(metrics_path.parent_path());
    std::ofstream out(metrics_path, std::ios::app);
    if (!out) {
        throw std::invalid_argument("cannot open metrics file " + metrics_path.string());
    }
    run([&out](const MetricsRow & row) { out << row.to_json().dump() << '\n' << std::flush; });
}

void Trainer::save(const std::filesystem::path & path) const {
    Checkpoint ck;
    std::ostringstream rng_state;
    rng_state << vq_rng_;
    ck.meta = {{"kind", "trainer"},
               {"config", to_json(cfg_)},
               {"step", step_},
               {"kl_ema", kl_ema_},
               {"kl_ema_count", kl_ema_count_},
               {"vq_rng", rng_state.str()},
               {"data_hash", content_hash(data_)},
               {"frame_rate_hz", codec_->frame_rate_hz()}};
    put_params(ck, "param.", codec_->model().parameters());
    put_optimizer(ck, "opt.", *opt_);
    if (cfg_.bottleneck.kind == BottleneckKind::vq && codec_->vq().initialized()) {
        for (auto & [k, t] : codec_->vq().state()) ck.tensors[k] = t;
    }
    if (adv_) {
        put_params(ck, "disc_param.", adv_->disc.parameters());
        put_optimizer(ck, "disc_opt.", *adv_->opt);
    }
    write_checkpoint(path, ck);
}

namespace {

TrainConfig config_from_meta(const json & meta, const std::filesystem::path & path) {
    if (!meta.contains("config") || !meta.contains("step")) {
        throw std::invalid_argument("checkpoint " + path.string() + " has no training metadata");
    }
    return train_config_from_json(meta.at("config"));
}

void restore_vq(const Checkpoint & ck, Codec & codec) {
    if (codec.bottleneck_config().kind != BottleneckKind::vq) return;
    std::map<std::string, nn::Tensor> state;
    for (const auto & [k, t] : ck.tensors) {
        if (k.rfind("vq.", 0) == 0) state[k] = t;
    }
    if (!state.empty()) codec.vq().load_state(state);
}

}  // namespace

Trainer Trainer::load(const std::filesystem::path & path) {
    const Checkpoint ck = read_checkpoint(path);
    Trainer t(config_from_meta(ck.meta, path));
    if (ck.meta.value("data_hash", std::string()) != content_hash(t.data_)) {
        throw std::invalid_argument("checkpoint " + path.string() + " was trained on different data");
    }
    t.step_ = ck.meta.at("step").get<std::int64_t>();
    t.kl_ema_ = ck.meta.at("kl_ema").get<double>();
    t.kl_ema_count_ = ck.meta.at("kl_ema_count").get<std::int64_t>();
    std::istringstream rng_state(ck.meta.at("vq_rng").get<std::string>());
    rng_state >> t.vq_rng_;
    get_params(ck, "param.", t.codec_->model().parameters());
    get_optimizer(ck, "opt.", *t.opt_, t.step_);
    restore_vq(ck, *t.codec_);
    if (t.adv_) {
        get_params(ck, "disc_param.", t.adv_->disc.parameters());
        get_optimizer(ck, "disc_opt.", *t.adv_->opt, t.step_);
    }
    return t;
}

LoadedModel load_model(const std::filesystem::path & path) {
    const Checkpoint ck = read_checkpoint(path);
    LoadedModel m;
    m.config = config_from_meta(ck.meta, path);
    m.codec = std::make_unique<Codec>(seeded_model(m.config), m.config.bottleneck);
    get_params(ck, "param.", m.codec->model().parameters());
    restore_vq(ck, *m.codec);
    m.step = ck.meta.at("step").get<std::int64_t>();
    m.kl_ema = ck.meta.value("kl_ema", 0.0);
    m.meta = ck.meta;
    return m;
}

}  // namespace ratebench
