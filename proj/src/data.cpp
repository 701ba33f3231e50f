#include "ratebench/data.hpp"

#include "ratebench/audio_model.hpp"
#include "ratebench/dsp.hpp"
#include "ratebench/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ratebench {

std::string to_string(DataSource s) { return s == DataSource::synthetic ? "synthetic" : "wav_dir"; }

DataSource parse_data_source(const std::string & s) {
    if (s == "synthetic") return DataSource::synthetic;
    if (s == "wav_dir") return DataSource::wav_dir;
    throw std::invalid_argument("unknown data source '" + s + "' (expected synthetic or wav_dir)");
}

const std::vector<std::string> & synthetic_class_names() {
    static const std::vector<std::string> names{"sine_mix", "chirp", "noise_burst", "am_tone"};
    return names;
}

void DatasetSpec::validate() const {
    if (!(eval_fraction > 0.0 && eval_fraction <= 0.5)) {
        throw std::invalid_argument("data.eval_fraction must lie in (0, 0.5]");
    }
    if (!(segment_s > 0.0) || !std::isfinite(segment_s)) {
        throw std::invalid_argument("data.segment_s must be positive");
    }
    if (source == DataSource::synthetic) {
        if (n_items < 2) {
            throw std::invalid_argument("data.n_items must be >= 2");
        }
        if (classes.empty()) {
            throw std::invalid_argument("data.classes must not be empty");
        }
        const auto & known = synthetic_class_names();
        for (const auto & c : classes) {
            if (std::find(known.begin(), known.end(), c) == known.end()) {
                throw std::invalid_argument("data.classes: unknown class '" + c + "'");
            }
        }
    } else if (wav_dir.empty()) {
        throw std::invalid_argument("data.wav_dir must be set when data.source is wav_dir");
    }
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void limit_peak(std::vector<float> & x, float peak) {
    float m = 0.0f;
    for (float v : x) m = std::max(m, std::abs(v));
    if (m > peak) {
        const float g = peak / m;
        for (float & v : x) v *= g;
    }
}

AudioItem make_sine_mix(std::mt19937_64 & rng, std::size_t n, double sr) {
    std::uniform_int_distribution<int> count(2, 3);
    std::uniform_real_distribution<double> freq(100.0, 0.25 * sr);
    std::uniform_real_distribution<double> amp(0.15, 0.35);
    std::uniform_real_distribution<double> phase(0.0, kTwoPi);
    AudioItem item;
    const int k = count(rng);
    while (static_cast<int>(item.frequencies.size()) < k) {
        const double f = freq(rng);
        const bool close = std::any_of(item.frequencies.begin(), item.frequencies.end(),
                                       [&](double g) { return std::abs(f - g) < 100.0; });
        if (!close) item.frequencies.push_back(f);
    }
    item.samples.assign(n, 0.0f);
    for (double f : item.frequencies) {
        const double a = amp(rng), ph = phase(rng);
        for (std::size_t i = 0; i < n; ++i) {
            item.samples[i] += static_cast<float>(a * std::sin(kTwoPi * f * static_cast<double>(i) / sr + ph));
        }
    }
    return item;
}

AudioItem make_chirp(std::mt19937_64 & rng, std::size_t n, double sr) {
    std::uniform_real_distribution<double> lo(100.0, 800.0), hi(1000.0, 0.3 * sr);
    std::uniform_real_distribution<double> amp(0.4, 0.7);
    std::bernoulli_distribution down(0.5);
    double f0 = lo(rng), f1 = hi(rng);
    if (down(rng)) std::swap(f0, f1);
    const double a = amp(rng);
    const double dur = static_cast<double>(n) / sr;
    AudioItem item;
    item.frequencies = {f0, f1};
    item.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        item.samples[i] = static_cast<float>(a * std::sin(kTwoPi * (f0 * t + 0.5 * (f1 - f0) / dur * t * t)));
    }
    return item;
}

AudioItem make_noise_burst(std::mt19937_64 & rng, std::size_t n, double sr) {
    std::uniform_int_distribution<int> bursts(1, 3);
    std::uniform_real_distribution<double> onset(0.0, 0.8), decay(0.02, 0.12), amp(0.3, 0.8);
    std::uniform_real_distribution<double> smooth(0.0, 0.9);
    std::normal_distribution<double> white(0.0, 1.0);
    const double pole = smooth(rng);
    const int k = bursts(rng);
    std::vector<double> env(n, 0.0);
    for (int b = 0; b < k; ++b) {
        const std::size_t start = static_cast<std::size_t>(onset(rng) * static_cast<double>(n));
        const double tau = decay(rng) * sr, a = amp(rng);
        for (std::size_t i = start; i < n; ++i) {
            env[i] += a * std::exp(-static_cast<double>(i - start) / tau);
        }
    }
    AudioItem item;
    item.samples.resize(n);
    double state = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        state = pole * state + (1.0 - pole) * white(rng);
        item.samples[i] = static_cast<float>(env[i] * state);
    }
    return item;
}

AudioItem make_am_tone(std::mt19937_64 & rng, std::size_t n, double sr) {
    std::uniform_real_distribution<double> carrier(200.0, 2000.0), mod(2.0, 12.0), depth(0.5, 0.9);
    std::uniform_real_distribution<double> amp(0.4, 0.7), phase(0.0, kTwoPi);
    const double fc = carrier(rng), fm = mod(rng), d = depth(rng), a = amp(rng), ph = phase(rng);
    AudioItem item;
    item.frequencies = {fc};
    item.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        const double env = 1.0 - d * 0.5 * (1.0 + std::sin(kTwoPi * fm * t + ph));
        item.samples[i] = static_cast<float>(a * env * std::sin(kTwoPi * fc * t));
    }
    return item;
}

std::size_t segment_samples(double segment_s, int sample_rate_hz) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(segment_s * sample_rate_hz)));
}

}  // namespace

Dataset generate_synthetic(const DatasetSpec & spec, int sample_rate_hz, int hop) {
    spec.validate();
    if (spec.source != DataSource::synthetic) {
        throw std::invalid_argument("generate_synthetic: data.source is not synthetic");
    }
    if (sample_rate_hz <= 0 || hop <= 0) {
        throw std::invalid_argument("generate_synthetic: sample rate and hop must be positive");
    }
    const std::size_t n = segment_samples(spec.segment_s, sample_rate_hz);
    const double sr = sample_rate_hz;
    Dataset ds;
    ds.sample_rate_hz = sample_rate_hz;
    ds.class_names = spec.classes;
    for (int i = 0; i < spec.n_items; ++i) {
        const int label = i % static_cast<int>(spec.classes.size());
        const std::string & cls = spec.classes[label];
        std::mt19937_64 rng(derive_seed(spec.seed, 0x5eed, static_cast<std::uint64_t>(i)));
        AudioItem item;
        if (cls == "sine_mix") item = make_sine_mix(rng, n, sr);
        else if (cls == "chirp") item = make_chirp(rng, n, sr);
        else if (cls == "noise_burst") item = make_noise_burst(rng, n, sr);
        else item = make_am_tone(rng, n, sr);
        limit_peak(item.samples, 0.95f);
        item.samples = pad_to_hop(std::move(item.samples), hop);
        item.label = label;
        item.class_name = cls;
        ds.items.push_back(std::move(item));
    }
    return ds;
}

namespace {

std::uint32_t read_u32(const unsigned char * p) {
    return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t read_u16(const unsigned char * p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void put_u32(std::string & s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string & s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>(v >> 8));
}

}  // namespace

WavData read_wav(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::invalid_argument("cannot open " + path.string());
    }
    const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = path.string() + ": ";
    if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
        throw std::invalid_argument(where + "not a RIFF/WAVE file");
    }
    int format = -1, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char * data = nullptr;
    std::size_t data_len = 0;
    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const unsigned char * h = buf.data() + pos;
        const std::size_t len = read_u32(h + 4);
        const std::size_t avail = std::min(len, buf.size() - pos - 8);
        if (std::memcmp(h, "fmt ", 4) == 0) {
            if (avail < 16) throw std::invalid_argument(where + "truncated fmt chunk");
            format = read_u16(h + 8);
            channels = read_u16(h + 10);
            rate = read_u32(h + 12);
            bits = read_u16(h + 22);
            if (format == 0xFFFE) {
                if (avail < 26) throw std::invalid_argument(where + "truncated extensible fmt chunk");
                format = read_u16(h + 32);
            }
        } else if (std::memcmp(h, "data", 4) == 0) {
            data = h + 8;
            data_len = avail;
        }
        pos += 8 + len + (len & 1);
    }
    if (format < 0) throw std::invalid_argument(where + "missing fmt chunk");
    if (data == nullptr) throw std::invalid_argument(where + "missing data chunk");
    if (channels < 1 || rate == 0) throw std::invalid_argument(where + "invalid channel count or sample rate");
    const bool pcm = format == 1 && (bits == 16 || bits == 24 || bits == 32);
    const bool flt = format == 3 && bits == 32;
    if (!pcm && !flt) {
        throw std::invalid_argument(where + "unsupported encoding (format " + std::to_string(format) + ", " +
                                    std::to_string(bits) + " bits)");
    }
    const std::size_t bytes = static_cast<std::size_t>(bits / 8);
    const std::size_t frames = data_len / (bytes * channels);
    WavData wav;
    wav.sample_rate_hz = static_cast<int>(rate);
    wav.channels = channels;
    wav.channel_data.assign(channels, std::vector<float>(frames));
    for (std::size_t f = 0; f < frames; ++f) {
        for (int c = 0; c < channels; ++c) {
            const unsigned char * p = data + (f * channels + c) * bytes;
            float v;
            if (flt) {
                std::memcpy(&v, p, 4);
            } else if (bits == 16) {
                v = static_cast<float>(static_cast<std::int16_t>(read_u16(p))) / 32768.0f;
            } else if (bits == 24) {
                std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
                if (s & 0x800000) s -= 0x1000000;
                v = static_cast<float>(s) / 8388608.0f;
            } else {
                v = static_cast<float>(static_cast<double>(static_cast<std::int32_t>(read_u32(p))) / 2147483648.0);
            }
            wav.channel_data[c][f] = v;
        }
    }
    return wav;
}

void write_wav(const std::filesystem::path & path, const WavData & wav, WavFormat format) {
    if (wav.channels < 1 || static_cast<int>(wav.channel_data.size()) != wav.channels || wav.sample_rate_hz <= 0) {
        throw std::invalid_argument("write_wav: inconsistent channel layout or sample rate");
    }
    const std::size_t frames = wav.channel_data[0].size();
    for (const auto & ch : wav.channel_data) {
        if (ch.size() != frames) throw std::invalid_argument("write_wav: channels differ in length");
    }
    const int bits = format == WavFormat::pcm16 ? 16 : format == WavFormat::pcm24 ? 24 : 32;
    const std::size_t bytes = bits / 8;
    const std::uint32_t data_len = static_cast<std::uint32_t>(frames * bytes * wav.channels);
    std::string out;
    out.reserve(44 + data_len);
    out += "RIFF";
    put_u32(out, 36 + data_len);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, format == WavFormat::float32 ? 3 : 1);
    put_u16(out, static_cast<std::uint16_t>(wav.channels));
    put_u32(out, static_cast<std::uint32_t>(wav.sample_rate_hz));
    put_u32(out, static_cast<std::uint32_t>(wav.sample_rate_hz * bytes * wav.channels));
    put_u16(out, static_cast<std::uint16_t>(bytes * wav.channels));
    put_u16(out, static_cast<std::uint16_t>(bits));
    out += "data";
    put_u32(out, data_len);
    for (std::size_t f = 0; f < frames; ++f) {
        for (int c = 0; c < wav.channels; ++c) {
            const float v = wav.channel_data[c][f];
            if (format == WavFormat::float32) {
                char b[4];
                std::memcpy(b, &v, 4);
                out.append(b, 4);
                continue;
            }
            const double x = std::clamp(static_cast<double>(v), -1.0, 1.0);
            const double full = std::ldexp(1.0, bits - 1);
            const auto q = static_cast<std::int64_t>(std::clamp(std::round(x * full), -full, full - 1.0));
            for (std::size_t i = 0; i < bytes; ++i) {
                out.push_back(static_cast<char>((static_cast<std::uint64_t>(q) >> (8 * i)) & 0xff));
            }
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("write_wav: cannot open " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

void write_wav(const std::filesystem::path & path, const std::vector<float> & samples, int sample_rate_hz,
               WavFormat format) {
    write_wav(path, WavData{sample_rate_hz, 1, {samples}}, format);
}

std::vector<float> mix_to_mono(const WavData & wav) {
    if (wav.channel_data.empty()) return {};
    const std::size_t n = wav.channel_data[0].size();
    std::vector<float> out(n, 0.0f);
    for (const auto & ch : wav.channel_data) {
        for (std::size_t i = 0; i < n; ++i) out[i] += ch[i];
    }
    const float inv = 1.0f / static_cast<float>(wav.channel_data.size());
    for (float & v : out) v *= inv;
    return out;
}

Dataset load_wav_dir(const DatasetSpec & spec, int sample_rate_hz, int hop) {
    spec.validate();
    namespace fs = std::filesystem;
    const fs::path dir(spec.wav_dir);
    if (!fs::is_directory(dir)) {
        throw std::invalid_argument("data.wav_dir '" + spec.wav_dir + "' is not a directory");
    }
    std::vector<fs::path> files;
    for (const auto & e : fs::directory_iterator(dir)) {
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (e.is_regular_file() && ext == ".wav") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw std::invalid_argument("data.wav_dir '" + spec.wav_dir + "' contains no .wav files");
    }
    const std::size_t seg = segment_samples(spec.segment_s, sample_rate_hz);
    Dataset ds;
    ds.sample_rate_hz = sample_rate_hz;
    ds.class_names = {"wav"};
    for (const auto & file : files) {
        std::vector<float> mono;
        try {
            const WavData wav = read_wav(file);
            mono = dsp::resample(mix_to_mono(wav), wav.sample_rate_hz, sample_rate_hz);
        } catch (const std::exception & e) {
            ds.warnings.push_back(e.what());
            continue;
        }
        if (mono.empty()) {
            ds.warnings.push_back(file.string() + ": no samples");
            continue;
        }
        float peak = 0.0f;
        for (float v : mono) peak = std::max(peak, std::abs(v));
        if (peak > 0.0f) {
            const float g = 0.95f / peak;
            for (float & v : mono) v *= g;
        }
        if (mono.size() < seg) mono.resize(seg, 0.0f);
        for (std::size_t start = 0, k = 0; start + seg <= mono.size(); start += seg, ++k) {
            AudioItem item;
            item.samples = pad_to_hop(std::vector<float>(mono.begin() + start, mono.begin() + start + seg), hop);
            item.class_name = "wav";
            item.origin = file.string() + "#" + std::to_string(k);
            ds.items.push_back(std::move(item));
        }
    }
    if (ds.items.empty()) {
        throw std::invalid_argument("data.wav_dir '" + spec.wav_dir + "': no readable audio");
    }
    return ds;
}

Dataset load_dataset(const DatasetSpec & spec, int sample_rate_hz, int hop) {
    return spec.source == DataSource::synthetic ? generate_synthetic(spec, sample_rate_hz, hop)
                                                : load_wav_dir(spec, sample_rate_hz, hop);
}

Split split_dataset(std::size_t n_items, double eval_fraction, std::uint64_t seed) {
    if (n_items < 2) {
        throw std::invalid_argument("split_dataset: need at least 2 items");
    }
    if (!(eval_fraction > 0.0 && eval_fraction <= 0.5)) {
        throw std::invalid_argument("split_dataset: eval_fraction must lie in (0, 0.5]");
    }
    std::vector<std::size_t> idx(n_items);
    for (std::size_t i = 0; i < n_items; ++i) idx[i] = i;
    std::mt19937_64 rng(derive_seed(seed, 0x5711));
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_eval =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(eval_fraction * n_items)), 1, n_items - 1);
    Split s;
    s.eval.assign(idx.begin(), idx.begin() + n_eval);
    s.train.assign(idx.begin() + n_eval, idx.end());
    std::sort(s.eval.begin(), s.eval.end());
    std::sort(s.train.begin(), s.train.end());
    return s;
}

std::string content_hash(const Dataset & ds) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void * p, std::size_t n) {
        const auto * b = static_cast<const unsigned char *>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    mix(&ds.sample_rate_hz, sizeof ds.sample_rate_hz);
    for (const auto & item : ds.items) {
        mix(&item.label, sizeof item.label);
        const std::uint64_t n = item.samples.size();
        mix(&n, sizeof n);
        mix(item.samples.data(), item.samples.size() * sizeof(float));
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace ratebench
