#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ratebench {

enum class DataSource { synthetic, wav_dir };

std::string to_string(DataSource s);
DataSource parse_data_source(const std::string & s);

/// Names accepted in DatasetSpec::classes.
const std::vector<std::string> & synthetic_class_names();

struct DatasetSpec {
    DataSource source = DataSource::synthetic;
    int n_items = 64;
    std::vector<std::string> classes{"sine_mix", "chirp", "noise_burst", "am_tone"};
    std::uint64_t seed = 0;
    std::string wav_dir;
    double segment_s = 0.5;
    double eval_fraction = 0.125;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

struct AudioItem {
    std::vector<float> samples;
    int label = 0;
    std::string class_name;
    /// Generating frequencies in Hz (sine_mix partials, chirp endpoints, am_tone carrier).
    std::vector<double> frequencies;
    /// File path and segment index for WAV items, empty for synthetic ones.
    std::string origin;
};

struct Dataset {
    int sample_rate_hz = 0;
    std::vector<std::string> class_names;
    std::vector<AudioItem> items;
    /// Files skipped during ingestion, one message each.
    std::vector<std::string> warnings;
};

/// Deterministic synthetic corpus; every item is segment_s long, padded to a multiple of hop.
/// Classes are assigned round-robin so all of them are represented.
Dataset generate_synthetic(const DatasetSpec & spec, int sample_rate_hz, int hop);

/// Loads every *.wav file of spec.wav_dir (sorted by name): mono mix, resample, peak-normalize
/// to 0.95 and cut into non-overlapping segment_s segments. Unreadable files become warnings.
Dataset load_wav_dir(const DatasetSpec & spec, int sample_rate_hz, int hop);

/// Dispatches on spec.source.
Dataset load_dataset(const DatasetSpec & spec, int sample_rate_hz, int hop);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> eval;
};

/// Seeded, disjoint split covering all items; eval gets round(fraction * n) items (at least 1).
Split split_dataset(std::size_t n_items, double eval_fraction, std::uint64_t seed);

/// FNV-1a over sample rate, labels and sample bits, as 16 hex digits.
std::string content_hash(const Dataset & ds);

enum class WavFormat { pcm16, pcm24, pcm32, float32 };

struct WavData {
    int sample_rate_hz = 0;
    int channels = 0;
    /// Per-channel samples in [-1, 1].
    std::vector<std::vector<float>> channel_data;
};

/// Throws std::invalid_argument on malformed or unsupported files.
WavData read_wav(const std::filesystem::path & path);
void write_wav(const std::filesystem::path & path, const WavData & wav, WavFormat format);
/// Mono convenience overload.
void write_wav(const std::filesystem::path & path, const std::vector<float> & samples, int sample_rate_hz,
               WavFormat format = WavFormat::pcm16);

/// Channel mean.
std::vector<float> mix_to_mono(const WavData & wav);

}  // namespace ratebench
