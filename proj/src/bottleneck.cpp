#include "ratebench/bottleneck.hpp"

#include "ratebench/errors.hpp"
#include "ratebench/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ratebench {

namespace {

constexpr std::uint64_t kPassthroughStream = 0x7061737374687275ULL;

// Value q, gradient passed unchanged to `features`.
nn::Var straight_through(const nn::Var & features, nn::Tensor quantized) {
    return nn::make_op(std::move(quantized), {features}, [](nn::Node & node) {
        auto & gi = node.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < gi.numel(); ++i) {
            gi[i] += node.grad[i];
        }
    });
}

void require_features(const nn::Var & features, std::size_t channels, const char * op) {
    const auto & v = features.value();
    if (v.rank() != 3 || v.dim(1) != channels) {
        throw std::invalid_argument(std::string(op) + ": expected [B, " + std::to_string(channels) +
                                    ", F] features, got " + nn::shape_str(v.shape()));
    }
}

}  // namespace

std::string to_string(BottleneckKind kind) {
    return kind == BottleneckKind::gaussian ? "gaussian" : "vq";
}

std::string to_string(RateLossKind kind) {
    switch (kind) {
        case RateLossKind::target_kl: return "target_kl";
        case RateLossKind::free_bits: return "free_bits";
        case RateLossKind::none: return "none";
    }
    return "none";
}

BottleneckKind parse_bottleneck_kind(const std::string & s) {
    if (s == "gaussian") return BottleneckKind::gaussian;
    if (s == "vq") return BottleneckKind::vq;
    throw std::invalid_argument("unknown bottleneck kind '" + s + "'");
}

RateLossKind parse_rate_loss_kind(const std::string & s) {
    if (s == "target_kl") return RateLossKind::target_kl;
    if (s == "free_bits") return RateLossKind::free_bits;
    if (s == "none") return RateLossKind::none;
    throw std::invalid_argument("unknown rate loss '" + s + "'");
}

void BottleneckConfig::validate() const {
    if (latent_dim < 1) {
        throw std::invalid_argument("bottleneck.latent_dim must be >= 1");
    }
    if (!(passthrough_prob >= 0.0 && passthrough_prob <= 1.0)) {
        throw std::invalid_argument("bottleneck.passthrough_prob must be in [0, 1]");
    }
    if (free_bits_lambda < 0.0) {
        throw std::invalid_argument("bottleneck.free_bits_lambda must be >= 0");
    }
    if (kind == BottleneckKind::vq) {
        if (rate_loss != RateLossKind::none) {
            throw std::invalid_argument("bottleneck.rate_loss must be 'none' for vq bottlenecks");
        }
        if (codebook_size < 1 || num_codebooks < 1) {
            throw std::invalid_argument("bottleneck.codebook_size and num_codebooks must be >= 1");
        }
        if (!(ema_decay > 0.0 && ema_decay < 1.0)) {
            throw std::invalid_argument("bottleneck.ema_decay must be in (0, 1)");
        }
    }
}

double BottleneckResult::mean_kl() const {
    if (!has_rate()) {
        throw FailedPrecondition("batch carries no rate statistics");
    }
    double acc = 0.0;
    for (float v : per_frame_kl.value().values()) {
        acc += v;
    }
    return acc / static_cast<double>(per_frame_kl.value().numel());
}

nn::Var gaussian_kl_elements(const nn::Var & mu, const nn::Var & log_var) {
    if (mu.shape() != log_var.shape()) {
        throw std::invalid_argument("gaussian_kl_elements: mu and log_var shapes differ");
    }
    nn::Tensor out(mu.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const float m = mu.value()[i];
        const float lv = log_var.value()[i];
        if (!std::isfinite(m) || !std::isfinite(lv)) {
            throw std::invalid_argument("gaussian_kl_elements: non-finite posterior parameters");
        }
        out[i] = static_cast<float>(gaussian_kl_term(m, lv));
    }
    return nn::make_op(std::move(out), {mu, log_var}, [](nn::Node & node) {
        auto & m = node.inputs[0];
        auto & lv = node.inputs[1];
        for (std::size_t i = 0; i < node.value.numel(); ++i) {
            const auto g = gaussian_kl_term_grad(m->value[i], lv->value[i]);
            if (m->requires_grad) {
                m->grad_buffer()[i] += node.grad[i] * static_cast<float>(g.d_mu);
            }
            if (lv->requires_grad) {
                lv->grad_buffer()[i] += node.grad[i] * static_cast<float>(g.d_log_var);
            }
        }
    });
}

BottleneckResult gaussian_forward(const nn::Var & features, int latent_dim, bool training, std::uint64_t rng_seed) {
    const auto D = static_cast<std::size_t>(latent_dim);
    require_features(features, 2 * D, "gaussian_forward");

    BottleneckResult r;
    r.mu = nn::slice_channels(features, 0, D);
    r.log_var = nn::clamp(nn::slice_channels(features, D, D), kLogVarMin, kLogVarMax);
    if (training) {
        nn::Rng rng(rng_seed);
        std::normal_distribution<float> normal(0.0f, 1.0f);
        nn::Tensor eps(r.mu.shape());
        for (float & e : eps.values()) {
            e = normal(rng);
        }
        const nn::Var sigma = nn::exp(nn::scale(r.log_var, 0.5f));
        r.z = nn::add(r.mu, nn::mul(sigma, nn::Var(std::move(eps))));
    } else {
        r.z = r.mu;
    }
    const nn::Var kl = gaussian_kl_elements(r.mu, r.log_var);
    r.per_frame_kl = nn::sum_channels(kl);
    r.per_dim_kl = nn::mean_batch_time(kl);
    return r;
}

BottleneckResult passthrough_forward(const nn::Var & features, int latent_dim) {
    const auto D = static_cast<std::size_t>(latent_dim);
    require_features(features, 2 * D, "passthrough_forward");
    BottleneckResult r;
    r.mu = nn::slice_channels(features, 0, D);
    r.z = r.mu;
    r.was_passthrough = true;
    return r;
}

bool choose_passthrough(std::uint64_t batch_index, double passthrough_prob, std::uint64_t rng_seed) {
    if (!(passthrough_prob >= 0.0 && passthrough_prob <= 1.0)) {
        throw std::invalid_argument("passthrough_prob must be in [0, 1]");
    }
    return to_unit_interval(derive_seed(rng_seed, kPassthroughStream, batch_index)) < passthrough_prob;
}

nn::Var rate_term(const BottleneckResult & result, RateLossKind kind, const RateSpec & spec, double free_bits_lambda) {
    if (!result.has_rate() || kind == RateLossKind::none) {
        return {};
    }
    if (kind == RateLossKind::target_kl) {
        const float inv_d = 1.0f / static_cast<float>(spec.latent_dim());
        const nn::Var measured = nn::mean(result.per_frame_kl);
        const nn::Var diff = nn::scale(nn::add_scalar(measured, -static_cast<float>(spec.target_kl_nats())), inv_d);
        return nn::square(diff);
    }
    const float floor = static_cast<float>(free_bits_lambda);
    return nn::sum(nn::clamp(result.per_dim_kl, floor, std::numeric_limits<float>::max()));
}

ResidualVq::ResidualVq(int codebook_size, int num_codebooks, int dim, double ema_decay, double dead_code_threshold)
    : codebook_size_(codebook_size),
      num_codebooks_(num_codebooks),
      dim_(dim),
      ema_decay_(ema_decay),
      dead_code_threshold_(dead_code_threshold) {
    if (codebook_size < 1 || num_codebooks < 1 || dim < 1) {
        throw std::invalid_argument("ResidualVq: sizes must be >= 1");
    }
    const auto K = static_cast<std::size_t>(codebook_size), D = static_cast<std::size_t>(dim);
    codebooks_.assign(num_codebooks, std::vector<float>(K * D, 0.0f));
    ema_count_.assign(num_codebooks, std::vector<double>(K, 0.0));
    ema_sum_.assign(num_codebooks, std::vector<double>(K * D, 0.0));
    stage_set_.assign(num_codebooks, false);
}

int ResidualVq::nearest(int stage, const float * v) const {
    const auto & cb = codebooks_.at(stage);
    const auto D = static_cast<std::size_t>(dim_);
    int best = 0;
    float best_d = std::numeric_limits<float>::infinity();
    for (int k = 0; k < codebook_size_; ++k) {
        const float * c = cb.data() + static_cast<std::size_t>(k) * D;
        float d = 0.0f;
        for (std::size_t j = 0; j < D; ++j) {
            const float diff = v[j] - c[j];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

void ResidualVq::set_codebook(int stage, std::vector<float> codes) {
    const auto K = static_cast<std::size_t>(codebook_size_), D = static_cast<std::size_t>(dim_);
    if (stage < 0 || stage >= num_codebooks_ || codes.size() != K * D) {
        throw std::invalid_argument("ResidualVq::set_codebook: bad stage or size");
    }
    codebooks_[stage] = std::move(codes);
    for (std::size_t i = 0; i < K * D; ++i) {
        ema_sum_[stage][i] = codebooks_[stage][i];
    }
    std::fill(ema_count_[stage].begin(), ema_count_[stage].end(), 1.0);
    stage_set_[stage] = true;
    initialized_ = std::all_of(stage_set_.begin(), stage_set_.end(), [](bool b) { return b; });
}

void ResidualVq::initialize(const nn::Tensor & features, nn::Rng & rng) {
    if (features.rank() != 3 || features.dim(1) != static_cast<std::size_t>(dim_)) {
        throw std::invalid_argument("ResidualVq::initialize: feature shape mismatch");
    }
    const std::size_t B = features.dim(0), D = features.dim(1), F = features.dim(2), N = B * F;
    // Frame-major residual vectors.
    std::vector<float> residual(N * D);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < D; ++j) {
            for (std::size_t f = 0; f < F; ++f) {
                residual[(b * F + f) * D + j] = features[(b * D + j) * F + f];
            }
        }
    }
    std::uniform_int_distribution<std::size_t> pick(0, N - 1);
    for (int s = 0; s < num_codebooks_; ++s) {
        std::vector<float> codes(static_cast<std::size_t>(codebook_size_) * D);
        for (int k = 0; k < codebook_size_; ++k) {
            const std::size_t n = pick(rng);
            std::copy_n(residual.data() + n * D, D, codes.data() + static_cast<std::size_t>(k) * D);
        }
        set_codebook(s, std::move(codes));
        for (std::size_t n = 0; n < N; ++n) {
            const int k = nearest(s, residual.data() + n * D);
            for (std::size_t j = 0; j < D; ++j) {
                residual[n * D + j] -= codebooks_[s][static_cast<std::size_t>(k) * D + j];
            }
        }
    }
}

BottleneckResult ResidualVq::forward(const nn::Var & features, bool training, nn::Rng * rng) {
    if (!initialized_) {
        throw FailedPrecondition("vector quantizer codebooks are not initialized");
    }
    require_features(features, static_cast<std::size_t>(dim_), "vq_forward");
    const auto & fv = features.value();
    const std::size_t B = fv.dim(0), D = fv.dim(1), F = fv.dim(2), N = B * F;
    const auto K = static_cast<std::size_t>(codebook_size_);

    std::vector<float> residual(N * D);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < D; ++j) {
            for (std::size_t f = 0; f < F; ++f) {
                residual[(b * F + f) * D + j] = fv[(b * D + j) * F + f];
            }
        }
    }

    BottleneckResult r;
    std::vector<float> quantized(N * D, 0.0f);
    r.codes.resize(num_codebooks_);
    for (int s = 0; s < num_codebooks_; ++s) {
        auto & codes = r.codes[s];
        codes.resize(N);
        for (std::size_t n = 0; n < N; ++n) {
            codes[n] = nearest(s, residual.data() + n * D);
        }
        if (training && rng != nullptr) {
            // EMA statistics from this stage's residuals, before they are reduced.
            std::vector<double> counts(K, 0.0);
            std::vector<double> sums(K * D, 0.0);
            for (std::size_t n = 0; n < N; ++n) {
                const auto k = static_cast<std::size_t>(codes[n]);
                counts[k] += 1.0;
                for (std::size_t j = 0; j < D; ++j) {
                    sums[k * D + j] += residual[n * D + j];
                }
            }
            auto & ec = ema_count_[s];
            auto & es = ema_sum_[s];
            auto & cb = codebooks_[s];
            for (std::size_t k = 0; k < K; ++k) {
                ec[k] = ema_decay_ * ec[k] + (1.0 - ema_decay_) * counts[k];
                for (std::size_t j = 0; j < D; ++j) {
                    es[k * D + j] = ema_decay_ * es[k * D + j] + (1.0 - ema_decay_) * sums[k * D + j];
                }
            }
            const double total = std::accumulate(ec.begin(), ec.end(), 0.0);
            constexpr double laplace = 1e-5;
            std::uniform_int_distribution<std::size_t> pick(0, N - 1);
            for (std::size_t k = 0; k < K; ++k) {
                if (ec[k] < dead_code_threshold_) {
                    const std::size_t n = pick(*rng);
                    for (std::size_t j = 0; j < D; ++j) {
                        cb[k * D + j] = residual[n * D + j];
                        es[k * D + j] = residual[n * D + j];
                    }
                    ec[k] = 1.0;
                    continue;
                }
                const double smoothed = (ec[k] + laplace) / (total + static_cast<double>(K) * laplace) * total;
                for (std::size_t j = 0; j < D; ++j) {
                    cb[k * D + j] = static_cast<float>(es[k * D + j] / smoothed);
                }
            }
        }
        const auto & cb = codebooks_[s];
        for (std::size_t n = 0; n < N; ++n) {
            const float * c = cb.data() + static_cast<std::size_t>(codes[n]) * D;
            for (std::size_t j = 0; j < D; ++j) {
                quantized[n * D + j] += c[j];
                residual[n * D + j] -= c[j];
            }
        }
    }

    nn::Tensor q({B, D, F});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < D; ++j) {
            for (std::size_t f = 0; f < F; ++f) {
                q[(b * D + j) * F + f] = quantized[(b * F + f) * D + j];
            }
        }
    }
    const nn::Var q_const(q);
    r.aux_losses["commitment"] = nn::mse_loss(features, q_const);
    r.aux_losses["codebook"] = nn::mse_loss(nn::detach(features), q_const);
    r.z = straight_through(features, std::move(q));
    r.constant_kl = vq_kl_nats(codebook_size_, num_codebooks_);
    return r;
}

std::map<std::string, nn::Tensor> ResidualVq::state() const {
    std::map<std::string, nn::Tensor> out;
    const auto K = static_cast<std::size_t>(codebook_size_), D = static_cast<std::size_t>(dim_);
    for (int s = 0; s < num_codebooks_; ++s) {
        const std::string p = "vq." + std::to_string(s) + ".";
        out[p + "codebook"] = nn::Tensor({K, D}, codebooks_[s]);
        std::vector<float> ec(ema_count_[s].begin(), ema_count_[s].end());
        std::vector<float> es(ema_sum_[s].begin(), ema_sum_[s].end());
        out[p + "ema_count"] = nn::Tensor({K}, std::move(ec));
        out[p + "ema_sum"] = nn::Tensor({K, D}, std::move(es));
    }
    return out;
}

void ResidualVq::load_state(const std::map<std::string, nn::Tensor> & state) {
    const auto K = static_cast<std::size_t>(codebook_size_), D = static_cast<std::size_t>(dim_);
    for (int s = 0; s < num_codebooks_; ++s) {
        const std::string p = "vq." + std::to_string(s) + ".";
        const auto find = [&](const std::string & name, std::size_t size) -> const nn::Tensor & {
            auto it = state.find(p + name);
            if (it == state.end() || it->second.numel() != size) {
                throw std::invalid_argument("vq state missing or malformed: " + p + name);
            }
            return it->second;
        };
        const auto & cb = find("codebook", K * D);
        const auto & ec = find("ema_count", K);
        const auto & es = find("ema_sum", K * D);
        codebooks_[s] = cb.storage();
        ema_count_[s].assign(ec.storage().begin(), ec.storage().end());
        ema_sum_[s].assign(es.storage().begin(), es.storage().end());
        stage_set_[s] = true;
    }
    initialized_ = true;
}

}  // namespace ratebench
