#pragma once

#include "ratebench/config.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ratebench {

/// One trained and evaluated model on the rate-distortion plane.
struct RDPoint {
    std::string model_id;
    /// "gaussian" or "vq".
    std::string family;
    double target_kl = 0.0;
    double lambda = 0.0;
    double measured_kl = 0.0;
    double measured_bitrate_bps = 0.0;
    double mel_distance = 0.0;
    std::uint64_t seed = 0;

    // Variant and geometry tags (not part of the curve CSV).
    double passthrough_prob = 0.0;
    bool adversarial = false;
    int codebook_size = 0;
    int num_codebooks = 0;
    int sample_rate_hz = 0;
    int hop = 0;
    int latent_dim = 0;
    std::optional<double> predictability;

    /// Row label used by ablation reports and plot legends.
    std::string variant() const;

    nlohmann::json to_json() const;
    static RDPoint from_json(const nlohmann::json & j);
};

struct PlannedPoint {
    RDPoint point;  // identity fields only
    TrainConfig train;
};

/// Expands the sweep axes into points in a fixed order.
std::vector<PlannedPoint> plan_sweep(const RunConfig & cfg);

struct SweepOptions {
    /// Stop after training this many new points (simulates an interruption).
    std::optional<std::size_t> max_new_points;
    /// Progress messages; may be empty.
    std::function<void(const std::string &)> log;
};

struct SweepFailure {
    std::string model_id;
    std::string code;
    std::string message;
};

struct SweepResult {
    /// Completed points in plan order.
    std::vector<RDPoint> points;
    std::vector<SweepFailure> failures;
    std::size_t trained = 0;
    std::size_t skipped = 0;
    bool complete = false;
};

/// Trains and evaluates every planned point under `out_dir`. Points whose result already
/// exists are skipped; a point with a checkpoint but no result is evaluated from it.
/// Failures are recorded and the sweep moves on.
SweepResult run_sweep(const RunConfig & cfg, const std::filesystem::path & out_dir, const SweepOptions & opts = {});

/// Reads every completed point below `dir` (sorted by model_id).
std::vector<RDPoint> collect_points(const std::filesystem::path & dir);

/// Directory of one point inside a sweep directory.
std::filesystem::path point_dir(const std::filesystem::path & out_dir, const std::string & model_id);

inline const std::vector<std::string> & curve_columns() {
    static const std::vector<std::string> cols{"model_id",    "family",     "target_kl",
                                               "lambda",      "measured_kl", "measured_bitrate_bps",
                                               "mel_distance", "seed"};
    return cols;
}

enum class CurveFormat { csv, json };

/// Writes the points table and a bitrate (log x) versus mel distance SVG plot with one series
/// per family; `plot_path` + ".json" lists the plotted series. Throws std::invalid_argument when empty.
void emit_curve(const std::vector<RDPoint> & points, CurveFormat format, const std::filesystem::path & table_path,
                const std::filesystem::path & plot_path);

std::string curve_csv(const std::vector<RDPoint> & points);
/// Parses the CSV written by curve_csv (header must match exactly).
std::vector<RDPoint> parse_curve_csv(const std::string & text);

/// Markdown and CSV tables with one row per variant (means over seeds).
struct AblationReport {
    std::string markdown;
    std::string csv;
};

/// Throws std::invalid_argument when points differ in rate geometry or target.
AblationReport ablation_report(const std::vector<RDPoint> & points);

}  // namespace ratebench
