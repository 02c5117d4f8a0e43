#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "neuroswift/tensor.hpp"

namespace neuroswift {

// NSTF: the on-disk tensor format. Layout, all little-endian:
//   magic "NSTF" (4 bytes) | version u32 | dtype u32 (0 = f64) | ndim u32 |
//   dims u64 x ndim | payload row-major f64
namespace nstf {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF64 = 0;

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& buf, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(buf, v);
}

struct Reader {
    const unsigned char* p;
    std::size_t remaining;

    bool take(void* out, std::size_t n) {
        if (remaining < n) return false;
        std::memcpy(out, p, n);
        p += n;
        remaining -= n;
        return true;
    }
    bool u32(std::uint32_t& v) {
        unsigned char b[4];
        if (!take(b, 4)) return false;
        v = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
            std::uint32_t(b[3]) << 24;
        return true;
    }
    bool u64(std::uint64_t& v) {
        unsigned char b[8];
        if (!take(b, 8)) return false;
        v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return true;
    }
    bool f64(double& d) {
        std::uint64_t v;
        if (!u64(v)) return false;
        std::memcpy(&d, &v, 8);
        return true;
    }
};

}  // namespace detail

inline std::string encode(const Tensor& t) {
    std::string buf;
    buf.reserve(16 + 8 * t.ndim() + 8 * t.numel());
    buf.append("NSTF");
    detail::put_u32(buf, kVersion);
    detail::put_u32(buf, kDtypeF64);
    detail::put_u32(buf, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.dims()) detail::put_u64(buf, d);
    for (std::size_t i = 0; i < t.numel(); ++i) detail::put_f64(buf, t[i]);
    return buf;
}

inline Tensor decode(const std::string& bytes, const std::string& origin = "<memory>") {
    detail::Reader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()};
    char magic[4];
    if (!r.take(magic, 4) || std::memcmp(magic, "NSTF", 4) != 0) {
        throw FormatError("nstf: bad magic in " + origin);
    }
    std::uint32_t version = 0, dtype = 0, ndim = 0;
    if (!r.u32(version) || !r.u32(dtype) || !r.u32(ndim)) {
        throw FormatError("nstf: truncated header in " + origin);
    }
    if (version != kVersion) {
        throw FormatError("nstf: unsupported version " + std::to_string(version) + " in " + origin);
    }
    if (dtype != kDtypeF64) {
        throw FormatError("nstf: unsupported dtype " + std::to_string(dtype) + " in " + origin);
    }
    std::vector<std::size_t> dims(ndim);
    std::size_t numel = ndim == 0 ? 0 : 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        std::uint64_t d = 0;
        if (!r.u64(d)) throw FormatError("nstf: truncated dims in " + origin);
        if (d == 0) throw FormatError("nstf: zero extent in " + origin);
        dims[i] = static_cast<std::size_t>(d);
        numel *= dims[i];
    }
    if (r.remaining != 8 * numel) {
        throw IoError("nstf: payload length " + std::to_string(r.remaining) + " != expected " +
                      std::to_string(8 * numel) + " bytes in " + origin);
    }
    std::vector<double> data(numel);
    for (std::size_t i = 0; i < numel; ++i) r.f64(data[i]);
    return Tensor(std::move(dims), std::move(data));
}

}  // namespace nstf

inline void nstf_write(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("nstf_write: cannot open " + path.string());
    const std::string buf = nstf::encode(t);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("nstf_write: write failed for " + path.string());
}

inline Tensor nstf_read(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("nstf_read: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return nstf::decode(bytes, path.string());
}

}  // namespace neuroswift
