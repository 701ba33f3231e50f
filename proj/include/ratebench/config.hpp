#pragma once

#include "ratebench/audio_model.hpp"
#include "ratebench/bottleneck.hpp"
#include "ratebench/data.hpp"
#include "ratebench/objectives.hpp"
#include "ratebench/rate_core.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ratebench {

struct AdversarialConfig {
    std::vector<std::size_t> ffts{512, 256};
    std::size_t channels = 16;
    double lr = 1e-4;
};

struct TrainConfig {
    ModelConfig model;
    BottleneckConfig bottleneck;
    LossWeights weights;
    DatasetSpec data;
    AdversarialConfig adversarial;
    /// Per-frame KL target (nats); ignored by vq and free-bits runs.
    double target_kl = 40.0;
    int steps = 5000;
    int batch_size = 4;
    double lr = 1e-4;
    double weight_decay = 0.01;
    /// Global gradient-norm clip; 0 disables.
    double grad_clip = 0.0;
    std::uint64_t seed = 0;
    int eval_every = 500;
    int log_every = 50;
    double kl_ema_decay = 0.99;

    RateSpec rate_spec() const;
    /// Throws std::invalid_argument naming the offending key.
    void validate() const;
};

struct VqPointConfig {
    int codebook_size = 16;
    int num_codebooks = 1;
};

struct SweepConfig {
    std::vector<double> target_kls{10, 20, 40, 80, 160};
    std::vector<double> lambda_weights{1, 2, 10};
    /// "gaussian" and/or "vq".
    std::vector<std::string> families{"gaussian"};
    std::vector<std::uint64_t> seeds{0};
    /// Passthrough probabilities swept for the gaussian family (ablation axis).
    std::vector<double> passthrough_probs{0.0};
    /// Adversarial on/off values swept for the gaussian family (ablation axis).
    std::vector<bool> adversarial{false};
    std::vector<VqPointConfig> vq_points{{16, 1}, {16, 2}};
    std::string output_dir = "sweep";

    void validate() const;
};

enum class Conditioning { none, class_label };

struct DiffusionConfig {
    int width = 64;
    int depth = 4;
    int steps = 2000;
    int batch_size = 16;
    double lr = 1e-3;
    int sampler_steps = 50;
    Conditioning conditioning = Conditioning::class_label;
    double shift = -0.69314718055994531;  // log(0.5)
    std::uint64_t seed = 0;
    std::string vae_checkpoint;

    void validate() const;
};

/// Everything a CLI verb may need, parsed from one document.
struct RunConfig {
    TrainConfig train;
    SweepConfig sweep;
    DiffusionConfig diffusion;
    std::string output_root = "runs";
};

/// Full tree with every default filled in.
nlohmann::json to_json(const RunConfig & cfg);
/// Strict parse: every key must exist in the default tree and match its type.
RunConfig run_config_from_json(const nlohmann::json & doc);
/// Reads a JSON document from disk and parses it strictly.
RunConfig parse_config(const std::filesystem::path & path);
/// Applies "a.b.c=value" overrides; value is read as JSON when it parses, otherwise as a string.
RunConfig apply_overrides(const RunConfig & cfg, const std::vector<std::string> & overrides);

nlohmann::json to_json(const TrainConfig & cfg);
TrainConfig train_config_from_json(const nlohmann::json & doc);

}  // namespace ratebench
