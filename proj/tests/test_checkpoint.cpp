#include "helpers.hpp"
#include "ratebench/checkpoint.hpp"
#include "ratebench/errors.hpp"

#include <doctest.h>

#include <fstream>
#include <iterator>

using namespace ratebench;
namespace fs = std::filesystem;

namespace {

Checkpoint sample() {
    Checkpoint c;
    c.meta = {{"kind", "test"}, {"step", 12}, {"nested", {{"a", 1.5}}}};
    c.tensors["w"] = testing::random_tensor({3, 4}, 1);
    c.tensors["b"] = testing::random_tensor({4}, 2);
    c.tensors["scalar"] = nn::Tensor::scalar(3.25f);
    return c;
}

std::string slurp(const fs::path & p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

void spit(const fs::path & p, const std::string & s) { std::ofstream(p, std::ios::binary) << s; }

}  // namespace

TEST_CASE("round trip is bitwise") {
    const auto dir = testing::fresh_dir("ckpt_rt");
    const Checkpoint c = sample();
    write_checkpoint(dir / "a.rbck", c);
    const Checkpoint r = read_checkpoint(dir / "a.rbck");
    CHECK(r.meta == c.meta);
    REQUIRE(r.tensors.size() == c.tensors.size());
    for (const auto & [name, t] : c.tensors) CHECK(testing::bit_equal(r.tensors.at(name), t));
    // No temporary files left behind.
    CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator()) == 1);
}

TEST_CASE("damaged files raise errors") {
    const auto dir = testing::fresh_dir("ckpt_bad");
    write_checkpoint(dir / "a.rbck", sample());
    const std::string bytes = slurp(dir / "a.rbck");

    SUBCASE("missing") { CHECK_THROWS_AS(read_checkpoint(dir / "none.rbck"), std::invalid_argument); }
    SUBCASE("truncated") {
        spit(dir / "t.rbck", bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS(read_checkpoint(dir / "t.rbck"), std::invalid_argument);
    }
    SUBCASE("flipped payload byte") {
        std::string b = bytes;
        b[b.size() - 20] ^= 0x5a;
        spit(dir / "f.rbck", b);
        CHECK_THROWS_AS(read_checkpoint(dir / "f.rbck"), std::invalid_argument);
    }
    SUBCASE("bad magic") {
        std::string b = bytes;
        b[0] = 'X';
        spit(dir / "m.rbck", b);
        CHECK_THROWS_AS(read_checkpoint(dir / "m.rbck"), std::invalid_argument);
    }
    SUBCASE("other format version") {
        std::string b = bytes;
        b[8] = static_cast<char>(kCheckpointVersion + 1);
        spit(dir / "v.rbck", b);
        CHECK_THROWS_AS(read_checkpoint(dir / "v.rbck"), UnsupportedVersion);
        try {
            read_checkpoint(dir / "v.rbck");
        } catch (const std::exception & e) {
            CHECK(error_code(e) == "unsupported-version");
        }
    }
    SUBCASE("garbage") {
        spit(dir / "g.rbck", "hello");
        CHECK_THROWS_AS(read_checkpoint(dir / "g.rbck"), std::invalid_argument);
    }
}
