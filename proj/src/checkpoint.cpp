#include "ratebench/checkpoint.hpp"

#include "ratebench/errors.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <vector>

namespace ratebench {

namespace {

constexpr char kMagic[8] = {'R', 'B', 'C', 'K', 'P', 'T', '\r', '\n'};

std::uint64_t fnv1a(const char * p, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(p[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename T>
void put(std::string & out, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.append(b, sizeof(T));
}

template <typename T>
T get(const std::vector<char> & buf, std::size_t pos) {
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path & path, const Checkpoint & ckpt) {
    nlohmann::json index = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto & [name, t] : ckpt.tensors) {
        index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.numel();
    }
    const std::string header = nlohmann::json{{"meta", ckpt.meta}, {"tensors", index}}.dump();
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, header.size());
    out += header;
    put<std::uint64_t>(out, offset);
    for (const auto & [name, t] : ckpt.tensors) {
        out.append(reinterpret_cast<const char *>(t.data()), t.numel() * sizeof(float));
    }
    put<std::uint64_t>(out, fnv1a(out.data(), out.size()));

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::invalid_argument("cannot write checkpoint " + tmp.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw std::invalid_argument("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("cannot open checkpoint " + path.string());
    const std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::string where = "checkpoint " + path.string() + ": ";
    constexpr std::size_t kFixed = sizeof kMagic + 4 + 8;
    if (buf.size() < kFixed || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
        throw std::invalid_argument(where + "not a checkpoint archive");
    }
    const auto version = get<std::uint32_t>(buf, sizeof kMagic);
    if (version != kCheckpointVersion) {
        throw UnsupportedVersion(where + "format version " + std::to_string(version) + " (supported: " +
                                 std::to_string(kCheckpointVersion) + ")");
    }
    if (buf.size() < kFixed + 16) throw std::invalid_argument(where + "truncated");
    const std::size_t body = buf.size() - 8;
    if (get<std::uint64_t>(buf, body) != fnv1a(buf.data(), body)) {
        throw std::invalid_argument(where + "checksum mismatch (file is corrupted)");
    }
    const auto header_len = get<std::uint64_t>(buf, sizeof kMagic + 4);
    if (header_len > body - kFixed - 8) throw std::invalid_argument(where + "truncated header");
    nlohmann::json header = nlohmann::json::parse(buf.begin() + kFixed, buf.begin() + kFixed + header_len, nullptr, false);
    if (header.is_discarded() || !header.contains("meta") || !header.contains("tensors")) {
        throw std::invalid_argument(where + "malformed header");
    }
    const std::size_t data_pos = kFixed + header_len + 8;
    const auto n_floats = get<std::uint64_t>(buf, kFixed + header_len);
    if (n_floats > (body - data_pos) / sizeof(float) || data_pos + n_floats * sizeof(float) != body) {
        throw std::invalid_argument(where + "tensor payload size mismatch");
    }
    Checkpoint ckpt;
    ckpt.meta = header.at("meta");
    try {
        for (const auto & e : header.at("tensors")) {
            const auto shape = e.at("shape").get<nn::Shape>();
            const auto off = e.at("offset").get<std::size_t>();
            const std::size_t n = nn::shape_numel(shape);
            if (off > n_floats || n > n_floats - off) throw std::invalid_argument("tensor out of range");
            std::vector<float> data(n);
            std::memcpy(data.data(), buf.data() + data_pos + off * sizeof(float), n * sizeof(float));
            ckpt.tensors.emplace(e.at("name").get<std::string>(), nn::Tensor(shape, std::move(data)));
        }
    } catch (const nlohmann::json::exception & e) {
        throw std::invalid_argument(where + "malformed tensor index: " + e.what());
    } catch (const std::invalid_argument & e) {
        throw std::invalid_argument(where + e.what());
    }
    return ckpt;
}

}  // namespace ratebench
