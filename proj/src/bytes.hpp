#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "kst/error.hpp"

// Little-endian stream helpers shared by the KSEF reader/writer and the
// checkpoint blob.
namespace kst::bytes {

inline void write_u8(std::ostream& os, uint8_t v) { os.put(static_cast<char>(v)); }

inline void write_u32(std::ostream& os, uint32_t v) {
    char b[4];
    b[0] = static_cast<char>(v & 0xFF);
    b[1] = static_cast<char>((v >> 8) & 0xFF);
    b[2] = static_cast<char>((v >> 16) & 0xFF);
    b[3] = static_cast<char>((v >> 24) & 0xFF);
    os.write(b, 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
    write_u32(os, static_cast<uint32_t>(v & 0xFFFFFFFFULL));
    write_u32(os, static_cast<uint32_t>(v >> 32));
}

inline void write_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

inline void write_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

inline void write_bytes(std::ostream& os, const std::string& s) {
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline uint64_t tell_read(std::istream& is) { return static_cast<uint64_t>(is.tellg()); }

inline void read_exact(std::istream& is, char* out, size_t n, const char* what) {
    const uint64_t at = tell_read(is);
    is.read(out, static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n) {
        throw CorruptFileError(std::string("truncated while reading ") + what + " at byte offset " +
                               std::to_string(at));
    }
}

inline uint8_t read_u8(std::istream& is, const char* what) {
    char b;
    read_exact(is, &b, 1, what);
    return static_cast<uint8_t>(b);
}

inline uint32_t read_u32(std::istream& is, const char* what) {
    char b[4];
    read_exact(is, b, 4, what);
    return static_cast<uint32_t>(static_cast<uint8_t>(b[0])) |
           (static_cast<uint32_t>(static_cast<uint8_t>(b[1])) << 8) |
           (static_cast<uint32_t>(static_cast<uint8_t>(b[2])) << 16) |
           (static_cast<uint32_t>(static_cast<uint8_t>(b[3])) << 24);
}

inline uint64_t read_u64(std::istream& is, const char* what) {
    const uint64_t lo = read_u32(is, what);
    const uint64_t hi = read_u32(is, what);
    return lo | (hi << 32);
}

inline float read_f32(std::istream& is, const char* what) {
    uint32_t bits = read_u32(is, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline double read_f64(std::istream& is, const char* what) {
    uint64_t bits = read_u64(is, what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline std::string read_string(std::istream& is, size_t n, const char* what) {
    std::string s(n, '\0');
    if (n > 0) read_exact(is, s.data(), n, what);
    return s;
}

} // namespace kst::bytes
