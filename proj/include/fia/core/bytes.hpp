#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fia/core/error.hpp"

// Little-endian byte packing and whole-file IO. All on-disk formats in this
// project are explicit little-endian regardless of host order.
namespace fia {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<uint8_t>& out, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

inline void put_bytes(std::vector<uint8_t>& out, const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    out.insert(out.end(), b, b + n);
}

inline void put_str(std::vector<uint8_t>& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    put_bytes(out, s.data(), s.size());
}

class ByteReader {
public:
    ByteReader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
    explicit ByteReader(const std::vector<uint8_t>& v) : p_(v.data()), n_(v.size()) {}

    size_t remaining() const { return n_ - off_; }
    size_t offset() const { return off_; }

    void get(void* dst, size_t n) {
        if (off_ + n > n_) throw TruncationError("unexpected end of data at byte " + std::to_string(off_));
        std::memcpy(dst, p_ + off_, n);
        off_ += n;
    }

    uint32_t get_u32() {
        uint8_t b[4];
        get(b, 4);
        return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 | static_cast<uint32_t>(b[2]) << 16 |
               static_cast<uint32_t>(b[3]) << 24;
    }

    float get_f32() {
        uint32_t v = get_u32();
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }

    std::string get_str() {
        uint32_t n = get_u32();
        std::string s(n, '\0');
        get(s.data(), n);
        return s;
    }

private:
    const uint8_t* p_;
    size_t n_, off_ = 0;
};

inline void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw LoadError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw LoadError("write failed: " + path);
}

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw LoadError("cannot open: " + path);
    auto n = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> out(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(out.data()), n);
    if (!f) throw LoadError("read failed: " + path);
    return out;
}

inline void write_file_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw LoadError("cannot open for writing: " + path);
    f << text;
}

inline std::string read_file_text(const std::string& path) {
    auto b = read_file_bytes(path);
    return std::string(b.begin(), b.end());
}

}  // namespace fia
