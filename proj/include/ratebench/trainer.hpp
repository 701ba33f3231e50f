#pragma once

#include "ratebench/audio_model.hpp"
#include "ratebench/config.hpp"
#include "ratebench/data.hpp"
#include "ratebench/objectives.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ratebench {

struct EvalResult {
    double kl_per_frame = 0.0;
    double bitrate_bps = 0.0;
    double mel_distance = 0.0;
    /// Mean KL per latent dimension (gaussian only).
    std::vector<double> per_dim_kl;
    std::size_t items = 0;
};

struct MetricsRow {
    std::int64_t step = 0;
    LossReport loss;
    bool passthrough = false;
    /// Running KL (EMA over batches that carry a rate), nats per frame.
    double measured_kl_per_frame = 0.0;
    double measured_bitrate_bps = 0.0;
    std::optional<EvalResult> eval;

    nlohmann::json to_json() const;
};

/// Mean eval-mode KL per frame over `items` and the matching bitrate.
/// Throws std::invalid_argument for an empty set.
EvalResult measure_kl_bitrate(Codec & codec, const std::vector<const std::vector<float> *> & items,
                              int sample_rate_hz);

/// measure_kl_bitrate plus mel distance of eval-mode reconstructions.
EvalResult evaluate_codec(Codec & codec, const std::vector<const std::vector<float> *> & items, int sample_rate_hz);

class Trainer {
public:
    /// Builds the model and split from `cfg`; the dataset is generated from cfg.data.
    explicit Trainer(const TrainConfig & cfg);
    Trainer(const TrainConfig & cfg, Dataset data);
    ~Trainer();
    Trainer(Trainer &&) noexcept;
    Trainer & operator=(Trainer &&) noexcept;

    const TrainConfig & config() const { return cfg_; }
    Codec & codec() { return *codec_; }
    const Dataset & dataset() const { return data_; }
    const Split & split() const { return split_; }
    std::int64_t step() const { return step_; }
    /// True once at least one batch with a rate term was seen.
    bool has_kl_estimate() const { return kl_ema_count_ > 0; }
    double kl_ema() const { return kl_ema_; }

    std::vector<const std::vector<float> *> eval_items() const;

    /// Items of the batch used at `step`; a pure function of (seed, step).
    std::vector<std::size_t> batch_indices(std::int64_t step) const;

    /// One optimizer step on the next batch of the fixed data order.
    MetricsRow train_step();
    /// Same on an explicit batch; `force_passthrough` overrides the Bernoulli draw when set.
    MetricsRow train_step(const AudioBatch & batch, std::optional<bool> force_passthrough = std::nullopt);

    EvalResult evaluate();

    /// Runs until config().steps, calling `sink` for each logged row. Rows are logged every
    /// log_every steps, and on eval steps (every eval_every steps and the last step) with eval filled in.
    void run(const std::function<void(const MetricsRow &)> & sink);
    /// run() appending JSON lines to `metrics_path`.
    void run(const std::filesystem::path & metrics_path);

    /// Weights, optimizer moments, counters and config.
    void save(const std::filesystem::path & path) const;
    /// Restores a trainer saved with save(); the dataset is regenerated from the stored config.
    static Trainer load(const std::filesystem::path & path);

private:
    struct Adversary;

    void init();
    double adam_lr() const;

    TrainConfig cfg_;
    Dataset data_;
    Split split_;
    std::unique_ptr<Codec> codec_;
    std::unique_ptr<nn::AdamW> opt_;
    std::unique_ptr<Adversary> adv_;
    nn::Rng vq_rng_;
    std::int64_t step_ = 0;
    double kl_ema_ = 0.0;
    std::int64_t kl_ema_count_ = 0;
};

/// A trained model restored for evaluation.
struct LoadedModel {
    TrainConfig config;
    std::unique_ptr<Codec> codec;
    std::int64_t step = 0;
    double kl_ema = 0.0;
    nlohmann::json meta;
};

LoadedModel load_model(const std::filesystem::path & checkpoint);

}  // namespace ratebench
