#pragma once

// Private little-endian binary IO helpers for the BFDS/BFMP artifact files.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "biasfix/errors.hpp"

namespace biasfix::detail {

struct Writer {
    std::string buf;

    void raw(const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u16(std::uint16_t v) {
        const unsigned char b[2] = {static_cast<unsigned char>(v),
                                    static_cast<unsigned char>(v >> 8)};
        raw(b, 2);
    }
    void u32(std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        raw(b, 4);
    }
    void u64(std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        raw(b, 8);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
};

struct Reader {
    const unsigned char* p;
    std::size_t n;
    std::size_t off = 0;

    void need(std::size_t k) const {
        if (off + k > n) throw FormatError("truncated file");
    }
    std::uint8_t u8() {
        need(1);
        return p[off++];
    }
    std::uint16_t u16() {
        need(2);
        const std::uint16_t v =
            static_cast<std::uint16_t>(std::uint16_t(p[off]) | (std::uint16_t(p[off + 1]) << 8));
        off += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[off + std::size_t(i)]) << (8 * i);
        off += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[off + std::size_t(i)]) << (8 * i);
        off += 8;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError(path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline std::uint32_t crc_of(const std::string& bytes) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

// Appends the CRC of everything written so far, then writes the file.
inline void write_file_with_crc(const std::string& path, Writer& w) {
    const std::uint32_t crc = crc_of(w.buf);
    w.u32(crc);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

// Loads, checks 4-byte magic and trailing CRC, returns bytes without the CRC.
inline std::string read_file_check_crc(const std::string& path, const char* magic,
                                       std::size_t min_size) {
    std::string bytes = read_file(path);
    if (bytes.size() < min_size || bytes.compare(0, 4, magic) != 0)
        throw FormatError(std::string(magic) + ": bad magic in " + path);
    const std::string body = bytes.substr(0, bytes.size() - 4);
    Reader tail{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(),
                bytes.size() - 4};
    if (tail.u32() != crc_of(body))
        throw FormatError(std::string(magic) + ": checksum mismatch in " + path);
    return body;
}

}  // namespace biasfix::detail
