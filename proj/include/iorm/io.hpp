#pragma once

// Little-endian byte buffers, CRC32 and SHA-256 for the on-disk formats.

#include "iorm/errors.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace iorm {

using Bytes = std::vector<std::uint8_t>;

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    return static_cast<std::uint32_t>(crc32(c, data, static_cast<uInt>(n)));
}

inline std::array<std::uint8_t, 32> sha256_of(std::string_view text) {
    std::array<std::uint8_t, 32> out{};
    unsigned int len = 0;
    if (!EVP_Digest(text.data(), text.size(), out.data(), &len, EVP_sha256(), nullptr) || len != 32)
        throw Error("sha256 failed");
    return out;
}

inline std::string hex(const std::uint8_t* data, std::size_t n) {
    std::ostringstream os;
    for (std::size_t i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(data[i]);
    return os.str();
}

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void str(std::string_view s) { raw(s.data(), s.size()); }

    std::size_t size() const { return buf_.size(); }
    const Bytes& bytes() const { return buf_; }
    Bytes take() { return std::move(buf_); }

    /// CRC32 of bytes [from, size()).
    std::uint32_t crc_since(std::size_t from) const { return crc32_of(buf_.data() + from, buf_.size() - from); }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    Bytes buf_;
};

/// Bounds-checked reader; running past the end raises FormatError.
class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t n, std::string what) : p_(data), n_(n), what_(std::move(what)) {}
    explicit ByteReader(const Bytes& b, std::string what = "buffer") : ByteReader(b.data(), b.size(), std::move(what)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
        pos_ += n;
        return s;
    }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return n_ - pos_; }
    const std::uint8_t* at(std::size_t off) const { return p_ + off; }
    std::uint32_t crc_between(std::size_t from, std::size_t to) const { return crc32_of(p_ + from, to - from); }

    void need(std::size_t k) const {
        if (n_ - pos_ < k)
            throw FormatError(what_ + ": truncated (needed " + std::to_string(k) + " bytes at offset " +
                              std::to_string(pos_) + ", " + std::to_string(n_ - pos_) + " left)");
    }

private:
    std::uint64_t get(int k) {
        need(static_cast<std::size_t>(k));
        std::uint64_t v = 0;
        for (int i = 0; i < k; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += static_cast<std::size_t>(k);
        return v;
    }
    const std::uint8_t* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
    std::string what_;
};

inline Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Writes via a temporary sibling and rename, so readers never see a partial file.
inline void write_file(const std::filesystem::path& path, const Bytes& data) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + path.string());
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
        if (!out) throw Error("write failed for " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

} // namespace iorm
