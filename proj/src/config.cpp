#include "ratebench/config.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace ratebench {

using nlohmann::json;

RateSpec TrainConfig::rate_spec() const {
    return RateSpec::from_target_kl(model.sample_rate_hz, model.hop, model.latent_dim, target_kl);
}

void TrainConfig::validate() const {
    model.validate();
    bottleneck.validate();
    weights.validate();
    data.validate();
    if (bottleneck.latent_dim != model.latent_dim) {
        throw std::invalid_argument("bottleneck.latent_dim must equal model.latent_dim");
    }
    if (!(target_kl >= 0.0) || !std::isfinite(target_kl)) throw std::invalid_argument("train.target_kl must be >= 0");
    if (steps < 1) throw std::invalid_argument("train.steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (!(lr >= 0.0)) throw std::invalid_argument("train.lr must be >= 0");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("train.weight_decay must be >= 0");
    if (!(grad_clip >= 0.0)) throw std::invalid_argument("train.grad_clip must be >= 0");
    if (eval_every < 1) throw std::invalid_argument("train.eval_every must be >= 1");
    if (log_every < 1) throw std::invalid_argument("train.log_every must be >= 1");
    if (!(kl_ema_decay >= 0.0 && kl_ema_decay < 1.0)) throw std::invalid_argument("train.kl_ema_decay must lie in [0, 1)");
    if (adversarial.ffts.empty() || adversarial.channels == 0) {
        throw std::invalid_argument("adversarial.ffts and adversarial.channels must be non-empty");
    }
    if (!(adversarial.lr >= 0.0)) throw std::invalid_argument("adversarial.lr must be >= 0");
}

void SweepConfig::validate() const {
    if (families.empty()) throw std::invalid_argument("sweep.families must not be empty");
    if (seeds.empty()) throw std::invalid_argument("sweep.seeds must not be empty");
    for (const auto & f : families) {
        if (f != "gaussian" && f != "vq") throw std::invalid_argument("sweep.families: unknown family '" + f + "'");
        if (f == "gaussian") {
            if (target_kls.empty()) throw std::invalid_argument("sweep.target_kls must not be empty");
            if (lambda_weights.empty()) throw std::invalid_argument("sweep.lambda_weights must not be empty");
            if (passthrough_probs.empty()) throw std::invalid_argument("sweep.passthrough_probs must not be empty");
            if (adversarial.empty()) throw std::invalid_argument("sweep.adversarial must not be empty");
        }
        if (f == "vq" && vq_points.empty()) throw std::invalid_argument("sweep.vq_points must not be empty");
    }
    for (double t : target_kls) {
        if (!(t >= 0.0)) throw std::invalid_argument("sweep.target_kls entries must be >= 0");
    }
    for (double l : lambda_weights) {
        if (!(l >= 0.0)) throw std::invalid_argument("sweep.lambda_weights entries must be >= 0");
    }
    for (double p : passthrough_probs) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("sweep.passthrough_probs entries must lie in [0, 1]");
    }
    for (const auto & v : vq_points) {
        if (v.codebook_size < 2 || v.num_codebooks < 1) {
            throw std::invalid_argument("sweep.vq_points need codebook_size >= 2 and num_codebooks >= 1");
        }
    }
    if (output_dir.empty()) throw std::invalid_argument("sweep.output_dir must not be empty");
}

void DiffusionConfig::validate() const {
    if (width < 1 || depth < 1) throw std::invalid_argument("diffusion.width and diffusion.depth must be >= 1");
    if (steps < 0) throw std::invalid_argument("diffusion.steps must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("diffusion.batch_size must be >= 1");
    if (!(lr >= 0.0)) throw std::invalid_argument("diffusion.lr must be >= 0");
    if (sampler_steps < 1) throw std::invalid_argument("diffusion.sampler_steps must be >= 1");
    if (!std::isfinite(shift)) throw std::invalid_argument("diffusion.shift must be finite");
}

namespace {

json model_json(const ModelConfig & m) {
    return {{"sample_rate_hz", m.sample_rate_hz}, {"hop", m.hop},
            {"strides", m.strides},               {"encoder_channels", m.encoder_channels},
            {"decoder_channels", m.decoder_channels}, {"latent_dim", m.latent_dim},
            {"residual_units", m.residual_units}, {"n_mels", m.n_mels},
            {"mel_n_fft", m.mel_n_fft},           {"mel_projection", m.mel_projection},
            {"seed", m.seed}};
}

ModelConfig model_from(const json & j) {
    ModelConfig m;
    m.sample_rate_hz = j.at("sample_rate_hz").get<int>();
    m.hop = j.at("hop").get<int>();
    m.strides = j.at("strides").get<std::vector<int>>();
    m.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
    m.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
    m.latent_dim = j.at("latent_dim").get<int>();
    m.residual_units = j.at("residual_units").get<bool>();
    m.n_mels = j.at("n_mels").get<int>();
    m.mel_n_fft = j.at("mel_n_fft").get<int>();
    m.mel_projection = j.at("mel_projection").get<bool>();
    m.seed = j.at("seed").get<std::uint64_t>();
    return m;
}

json bottleneck_json(const BottleneckConfig & b) {
    return {{"kind", to_string(b.kind)},
            {"latent_dim", b.latent_dim},
            {"rate_loss", to_string(b.rate_loss)},
            {"passthrough_prob", b.passthrough_prob},
            {"free_bits_lambda", b.free_bits_lambda},
            {"codebook_size", b.codebook_size},
            {"num_codebooks", b.num_codebooks},
            {"ema_decay", b.ema_decay},
            {"dead_code_threshold", b.dead_code_threshold}};
}

BottleneckConfig bottleneck_from(const json & j) {
    BottleneckConfig b;
    b.kind = parse_bottleneck_kind(j.at("kind").get<std::string>());
    b.latent_dim = j.at("latent_dim").get<int>();
    b.rate_loss = parse_rate_loss_kind(j.at("rate_loss").get<std::string>());
    b.passthrough_prob = j.at("passthrough_prob").get<double>();
    b.free_bits_lambda = j.at("free_bits_lambda").get<double>();
    b.codebook_size = j.at("codebook_size").get<int>();
    b.num_codebooks = j.at("num_codebooks").get<int>();
    b.ema_decay = j.at("ema_decay").get<double>();
    b.dead_code_threshold = j.at("dead_code_threshold").get<double>();
    return b;
}

json weights_json(const LossWeights & w) {
    return {{"recon_weight", w.recon_weight},       {"rate_weight", w.rate_weight},
            {"adv_weight", w.adv_weight},           {"feature_match_weight", w.feature_match_weight},
            {"mel_weight", w.mel_weight},           {"stft_weight", w.stft_weight},
            {"waveform_weight", w.waveform_weight}, {"commitment_weight", w.commitment_weight}};
}

LossWeights weights_from(const json & j) {
    LossWeights w;
    w.recon_weight = j.at("recon_weight").get<double>();
    w.rate_weight = j.at("rate_weight").get<double>();
    w.adv_weight = j.at("adv_weight").get<double>();
    w.feature_match_weight = j.at("feature_match_weight").get<double>();
    w.mel_weight = j.at("mel_weight").get<double>();
    w.stft_weight = j.at("stft_weight").get<double>();
    w.waveform_weight = j.at("waveform_weight").get<double>();
    w.commitment_weight = j.at("commitment_weight").get<double>();
    return w;
}

json data_json(const DatasetSpec & d) {
    return {{"source", to_string(d.source)}, {"n_items", d.n_items},     {"classes", d.classes},
            {"seed", d.seed},                {"wav_dir", d.wav_dir},     {"segment_s", d.segment_s},
            {"eval_fraction", d.eval_fraction}};
}

DatasetSpec data_from(const json & j) {
    DatasetSpec d;
    d.source = parse_data_source(j.at("source").get<std::string>());
    d.n_items = j.at("n_items").get<int>();
    d.classes = j.at("classes").get<std::vector<std::string>>();
    d.seed = j.at("seed").get<std::uint64_t>();
    d.wav_dir = j.at("wav_dir").get<std::string>();
    d.segment_s = j.at("segment_s").get<double>();
    d.eval_fraction = j.at("eval_fraction").get<double>();
    return d;
}

std::string to_string(Conditioning c) { return c == Conditioning::none ? "none" : "class_label"; }

Conditioning parse_conditioning(const std::string & s) {
    if (s == "none") return Conditioning::none;
    if (s == "class_label") return Conditioning::class_label;
    throw std::invalid_argument("diffusion.conditioning: unknown value '" + s + "'");
}

std::string type_name(const json & j) {
    if (j.is_number()) return "number";
    return j.type_name();
}

// Rejects keys absent from `defaults` and values whose type differs from the default's.
void check_against(const json & user, const json & defaults, const std::string & path) {
    const std::string where = path.empty() ? "<root>" : path;
    if (defaults.is_object()) {
        if (!user.is_object()) {
            throw std::invalid_argument("key '" + where + "': expected object, got " + type_name(user));
        }
        for (const auto & [key, value] : user.items()) {
            const std::string sub = path.empty() ? key : path + "." + key;
            if (!defaults.contains(key)) {
                throw std::invalid_argument("unknown key '" + sub + "'");
            }
            check_against(value, defaults.at(key), sub);
        }
        return;
    }
    if (defaults.is_array()) {
        if (!user.is_array()) {
            throw std::invalid_argument("key '" + where + "': expected array, got " + type_name(user));
        }
        if (!defaults.empty()) {
            for (std::size_t i = 0; i < user.size(); ++i) {
                check_against(user[i], defaults[0], path + "[" + std::to_string(i) + "]");
            }
        }
        return;
    }
    if (defaults.is_number()) {
        if (!user.is_number()) {
            throw std::invalid_argument("key '" + where + "': expected number, got " + type_name(user));
        }
        if (!defaults.is_number_float() && user.is_number_float()) {
            const double v = user.get<double>();
            if (v != std::floor(v)) {
                throw std::invalid_argument("key '" + where + "': expected an integer, got " + user.dump());
            }
        }
        if (defaults.is_number_unsigned() && user.get<double>() < 0) {
            throw std::invalid_argument("key '" + where + "': expected a non-negative integer");
        }
        return;
    }
    if (defaults.type() != user.type()) {
        throw std::invalid_argument("key '" + where + "': expected " + type_name(defaults) + ", got " +
                                    type_name(user));
    }
}

// Integers written as 3.0 are normalized so typed getters accept them.
void normalize_numbers(json & merged, const json & defaults) {
    if (defaults.is_object() && merged.is_object()) {
        for (auto & [key, value] : merged.items()) {
            if (defaults.contains(key)) normalize_numbers(value, defaults.at(key));
        }
    } else if (defaults.is_array() && merged.is_array() && !defaults.empty()) {
        for (auto & v : merged) normalize_numbers(v, defaults[0]);
    } else if (defaults.is_number_integer() && merged.is_number_float()) {
        const double v = merged.get<double>();
        if (defaults.is_number_unsigned()) merged = static_cast<std::uint64_t>(v);
        else merged = static_cast<std::int64_t>(v);
    }
}

// Recursive merge that replaces arrays wholesale.
void merge_into(json & base, const json & patch) {
    for (const auto & [key, value] : patch.items()) {
        if (value.is_object() && base.contains(key) && base[key].is_object()) {
            merge_into(base[key], value);
        } else {
            base[key] = value;
        }
    }
}

json train_section(const TrainConfig & t) {
    return {{"target_kl", t.target_kl},       {"steps", t.steps},
            {"batch_size", t.batch_size},     {"lr", t.lr},
            {"weight_decay", t.weight_decay}, {"grad_clip", t.grad_clip},
            {"seed", t.seed},                 {"eval_every", t.eval_every},
            {"log_every", t.log_every},       {"kl_ema_decay", t.kl_ema_decay}};
}

TrainConfig train_from_merged(const json & j) {
    TrainConfig t;
    t.model = model_from(j.at("model"));
    t.bottleneck = bottleneck_from(j.at("bottleneck"));
    t.weights = weights_from(j.at("weights"));
    t.data = data_from(j.at("data"));
    const json & a = j.at("adversarial");
    t.adversarial.ffts = a.at("ffts").get<std::vector<std::size_t>>();
    t.adversarial.channels = a.at("channels").get<std::size_t>();
    t.adversarial.lr = a.at("lr").get<double>();
    const json & s = j.at("train");
    t.target_kl = s.at("target_kl").get<double>();
    t.steps = s.at("steps").get<int>();
    t.batch_size = s.at("batch_size").get<int>();
    t.lr = s.at("lr").get<double>();
    t.weight_decay = s.at("weight_decay").get<double>();
    t.grad_clip = s.at("grad_clip").get<double>();
    t.seed = s.at("seed").get<std::uint64_t>();
    t.eval_every = s.at("eval_every").get<int>();
    t.log_every = s.at("log_every").get<int>();
    t.kl_ema_decay = s.at("kl_ema_decay").get<double>();
    return t;
}

json strict_merge(const json & defaults, const json & user) {
    check_against(user, defaults, "");
    json merged = defaults;
    merge_into(merged, user);
    normalize_numbers(merged, defaults);
    return merged;
}

}  // namespace

json to_json(const TrainConfig & cfg) {
    return {{"model", model_json(cfg.model)},
            {"bottleneck", bottleneck_json(cfg.bottleneck)},
            {"weights", weights_json(cfg.weights)},
            {"data", data_json(cfg.data)},
            {"adversarial", {{"ffts", cfg.adversarial.ffts}, {"channels", cfg.adversarial.channels},
                             {"lr", cfg.adversarial.lr}}},
            {"train", train_section(cfg)}};
}

TrainConfig train_config_from_json(const json & doc) {
    const json merged = strict_merge(to_json(TrainConfig{}), doc);
    TrainConfig t = train_from_merged(merged);
    t.validate();
    return t;
}

json to_json(const RunConfig & cfg) {
    json j = to_json(cfg.train);
    json vq = json::array();
    for (const auto & v : cfg.sweep.vq_points) {
        vq.push_back({{"codebook_size", v.codebook_size}, {"num_codebooks", v.num_codebooks}});
    }
    j["sweep"] = {{"target_kls", cfg.sweep.target_kls},
                  {"lambda_weights", cfg.sweep.lambda_weights},
                  {"families", cfg.sweep.families},
                  {"seeds", cfg.sweep.seeds},
                  {"passthrough_probs", cfg.sweep.passthrough_probs},
                  {"adversarial", cfg.sweep.adversarial},
                  {"vq_points", vq},
                  {"output_dir", cfg.sweep.output_dir}};
    const auto & d = cfg.diffusion;
    j["diffusion"] = {{"width", d.width},
                      {"depth", d.depth},
                      {"steps", d.steps},
                      {"batch_size", d.batch_size},
                      {"lr", d.lr},
                      {"sampler_steps", d.sampler_steps},
                      {"conditioning", to_string(d.conditioning)},
                      {"shift", d.shift},
                      {"seed", d.seed},
                      {"vae_checkpoint", d.vae_checkpoint}};
    j["output_root"] = cfg.output_root;
    return j;
}

RunConfig run_config_from_json(const json & doc) {
    const json merged = strict_merge(to_json(RunConfig{}), doc);
    RunConfig cfg;
    cfg.train = train_from_merged(merged);
    const json & s = merged.at("sweep");
    cfg.sweep.target_kls = s.at("target_kls").get<std::vector<double>>();
    cfg.sweep.lambda_weights = s.at("lambda_weights").get<std::vector<double>>();
    cfg.sweep.families = s.at("families").get<std::vector<std::string>>();
    cfg.sweep.seeds = s.at("seeds").get<std::vector<std::uint64_t>>();
    cfg.sweep.passthrough_probs = s.at("passthrough_probs").get<std::vector<double>>();
    cfg.sweep.adversarial = s.at("adversarial").get<std::vector<bool>>();
    cfg.sweep.vq_points.clear();
    for (const auto & v : s.at("vq_points")) {
        cfg.sweep.vq_points.push_back({v.at("codebook_size").get<int>(), v.at("num_codebooks").get<int>()});
    }
    cfg.sweep.output_dir = s.at("output_dir").get<std::string>();
    const json & d = merged.at("diffusion");
    cfg.diffusion.width = d.at("width").get<int>();
    cfg.diffusion.depth = d.at("depth").get<int>();
    cfg.diffusion.steps = d.at("steps").get<int>();
    cfg.diffusion.batch_size = d.at("batch_size").get<int>();
    cfg.diffusion.lr = d.at("lr").get<double>();
    cfg.diffusion.sampler_steps = d.at("sampler_steps").get<int>();
    cfg.diffusion.conditioning = parse_conditioning(d.at("conditioning").get<std::string>());
    cfg.diffusion.shift = d.at("shift").get<double>();
    cfg.diffusion.seed = d.at("seed").get<std::uint64_t>();
    cfg.diffusion.vae_checkpoint = d.at("vae_checkpoint").get<std::string>();
    cfg.output_root = merged.at("output_root").get<std::string>();
    cfg.train.validate();
    cfg.sweep.validate();
    cfg.diffusion.validate();
    return cfg;
}

RunConfig parse_config(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw std::invalid_argument("cannot open config file " + path.string());
    }
    json doc;
    try {
        doc = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error & e) {
        throw std::invalid_argument("config " + path.string() + ": " + e.what());
    }
    return run_config_from_json(doc);
}

RunConfig apply_overrides(const RunConfig & cfg, const std::vector<std::string> & overrides) {
    json doc = to_json(cfg);
    for (const auto & o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw std::invalid_argument("override '" + o + "' is not of the form key=value");
        }
        const std::string key = o.substr(0, eq);
        const std::string raw = o.substr(eq + 1);
        json value = json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;
        json * node = &doc;
        std::size_t start = 0;
        while (true) {
            const auto dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (!node->is_object() || !node->contains(part)) {
                throw std::invalid_argument("unknown key '" + key + "'");
            }
            node = &(*node)[part];
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        *node = value;
    }
    return run_config_from_json(doc);
}

}  // namespace ratebench
