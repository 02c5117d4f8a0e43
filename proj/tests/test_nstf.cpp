#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "neuroswift/nstf.hpp"
#include "neuroswift/rng.hpp"

using namespace neuroswift;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    fs::path d = fs::temp_directory_path() / "neuroswift_nstf_test";
    fs::create_directories(d);
    return d;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("nstf round trip is bit exact") {
    RngStream rng(31337, 0);
    Tensor t = normal_draw(rng, {3, 4, 5});
    t[0] = -0.0;  // sign of zero must survive
    t[1] = 1e-308;
    const fs::path p = temp_dir() / "roundtrip.nstf";
    nstf_write(p, t);
    Tensor back = nstf_read(p);
    REQUIRE(back.dims() == t.dims());
    REQUIRE(bit_equal(back, t));
}

TEST_CASE("nstf rejects bad magic, version, dtype") {
    Tensor t({2}, {1.0, 2.0});
    std::string good = nstf::encode(t);

    std::string bad_magic = good;
    bad_magic.replace(0, 4, "XXXX");
    REQUIRE_THROWS_AS(nstf::decode(bad_magic), FormatError);

    std::string bad_version = good;
    bad_version[4] = 9;
    REQUIRE_THROWS_AS(nstf::decode(bad_version), FormatError);

    std::string bad_dtype = good;
    bad_dtype[8] = 1;
    REQUIRE_THROWS_AS(nstf::decode(bad_dtype), FormatError);
}

TEST_CASE("nstf detects truncation and length mismatch") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    std::string good = nstf::encode(t);

    std::string truncated = good.substr(0, good.size() - 5);
    REQUIRE_THROWS_AS(nstf::decode(truncated), IoError);

    std::string short_header = good.substr(0, 10);
    REQUIRE_THROWS_AS(nstf::decode(short_header), FormatError);

    // declared dims no longer match the payload length
    std::string wrong_dims = good;
    wrong_dims[16] = 3;  // first dim 2 -> 3
    REQUIRE_THROWS_AS(nstf::decode(wrong_dims), IoError);

    const fs::path p = temp_dir() / "trunc.nstf";
    write_bytes(p, truncated);
    REQUIRE_THROWS_AS(nstf_read(p), IoError);
    REQUIRE_THROWS_AS(nstf_read(temp_dir() / "does_not_exist.nstf"), IoError);
}

TEST_CASE("nstf header layout is stable") {
    Tensor t({1}, {0.0});
    std::string bytes = nstf::encode(t);
    REQUIRE(bytes.substr(0, 4) == "NSTF");
    REQUIRE(bytes.size() == 4 + 4 + 4 + 4 + 8 + 8);
    // version 1, dtype 0, ndim 1, dim 1, little endian
    REQUIRE(static_cast<unsigned char>(bytes[4]) == 1);
    REQUIRE(static_cast<unsigned char>(bytes[8]) == 0);
    REQUIRE(static_cast<unsigned char>(bytes[12]) == 1);
    REQUIRE(static_cast<unsigned char>(bytes[16]) == 1);
}
