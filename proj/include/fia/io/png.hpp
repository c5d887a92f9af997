#pragma once

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "fia/core/bytes.hpp"
#include "fia/core/error.hpp"
#include "fia/core/tensor.hpp"

// Minimal 8-bit RGB PNG support: enough to ship inversion results as
// ordinary image files. Writes filter-0 scanlines; reads anything a filter
// 0-4 non-interlaced RGB encoder could have produced.
namespace fia {
namespace io {

// banker's rounding, independent of the FPU rounding mode
inline int round_half_even(double v) {
    double f = std::floor(v);
    double d = v - f;
    if (d < 0.5) return static_cast<int>(f);
    if (d > 0.5) return static_cast<int>(f) + 1;
    int fi = static_cast<int>(f);
    return fi % 2 == 0 ? fi : fi + 1;
}

// [-1,1] -> [0,255]
inline uint8_t quantize_unit(float v) {
    double u = (static_cast<double>(v) + 1.0) * 127.5;
    int q = round_half_even(u);
    return static_cast<uint8_t>(q < 0 ? 0 : q > 255 ? 255 : q);
}

inline float dequantize_unit(uint8_t b) { return static_cast<float>(b / 127.5 - 1.0); }

namespace detail {

inline void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_u32_be(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& body) {
    put_u32_be(out, static_cast<uint32_t>(body.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), body.begin(), body.end());
    uint32_t crc = static_cast<uint32_t>(::crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32_be(out, crc);
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

inline const uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

inline std::vector<uint8_t> encode_png_rgb8(const std::vector<uint8_t>& rgb, int w, int h) {
    if (static_cast<size_t>(w) * h * 3 != rgb.size()) throw InputError("encode_png_rgb8: buffer size mismatch");
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * 3));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), rgb.begin() + static_cast<size_t>(y) * w * 3, rgb.begin() + (static_cast<size_t>(y) + 1) * w * 3);
    }
    uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> packed(bound);
    if (::compress2(packed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw Error("png: deflate failed");
    packed.resize(bound);

    std::vector<uint8_t> out(kPngSignature, kPngSignature + 8);
    std::vector<uint8_t> ihdr;
    detail::put_u32_be(ihdr, static_cast<uint32_t>(w));
    detail::put_u32_be(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace
    detail::put_chunk(out, "IHDR", ihdr);
    detail::put_chunk(out, "IDAT", packed);
    detail::put_chunk(out, "IEND", {});
    return out;
}

struct DecodedPng {
    int width = 0, height = 0;
    std::vector<uint8_t> rgb;  // packed rows, 3 bytes per pixel
};

inline DecodedPng decode_png_rgb8(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSignature, 8) != 0) throw VersionError("not a PNG file");
    size_t pos = 8;
    DecodedPng img;
    std::vector<uint8_t> idat;
    bool saw_ihdr = false, saw_iend = false;
    while (pos + 12 <= bytes.size() && !saw_iend) {
        uint32_t len = detail::get_u32_be(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw TruncationError("png chunk overruns the file");
        std::string type(bytes.begin() + pos + 4, bytes.begin() + pos + 8);
        uint32_t crc = detail::get_u32_be(bytes.data() + pos + 8 + len);
        uint32_t actual = static_cast<uint32_t>(::crc32(0, bytes.data() + pos + 4, static_cast<uInt>(4 + len)));
        if (crc != actual) throw ConsistencyError("png chunk '" + type + "' fails its checksum");
        const uint8_t* body = bytes.data() + pos + 8;
        if (type == "IHDR") {
            if (len != 13) throw ConsistencyError("png IHDR has wrong length");
            img.width = static_cast<int>(detail::get_u32_be(body));
            img.height = static_cast<int>(detail::get_u32_be(body + 4));
            if (body[8] != 8 || body[9] != 2) throw ConsistencyError("png is not 8-bit RGB");
            if (body[12] != 0) throw ConsistencyError("interlaced png is not supported");
            saw_ihdr = true;
        } else if (type == "IDAT") {
            idat.insert(idat.end(), body, body + len);
        } else if (type == "IEND") {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend) throw TruncationError("png is missing required chunks");
    if (img.width <= 0 || img.height <= 0) throw ConsistencyError("png has degenerate dimensions");

    size_t stride = static_cast<size_t>(img.width) * 3;
    std::vector<uint8_t> raw(static_cast<size_t>(img.height) * (1 + stride));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (::uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw ConsistencyError("png image data fails to inflate to the expected size");

    img.rgb.assign(static_cast<size_t>(img.height) * stride, 0);
    for (int y = 0; y < img.height; ++y) {
        const uint8_t* src = raw.data() + static_cast<size_t>(y) * (1 + stride);
        uint8_t filter = src[0];
        uint8_t* cur = img.rgb.data() + static_cast<size_t>(y) * stride;
        const uint8_t* up = y > 0 ? cur - stride : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= 3 ? cur[i - 3] : 0;           // left
            int b = up ? up[i] : 0;                    // above
            int c = (up && i >= 3) ? up[i - 3] : 0;    // upper-left
            int x = src[1 + i];
            switch (filter) {
                case 0: cur[i] = static_cast<uint8_t>(x); break;
                case 1: cur[i] = static_cast<uint8_t>((x + a) & 0xff); break;
                case 2: cur[i] = static_cast<uint8_t>((x + b) & 0xff); break;
                case 3: cur[i] = static_cast<uint8_t>((x + (a + b) / 2) & 0xff); break;
                case 4: cur[i] = static_cast<uint8_t>((x + detail::paeth(a, b, c)) & 0xff); break;
                default: throw ConsistencyError("png row uses an unknown filter type");
            }
        }
    }
    return img;
}

// (3,H,W) image in [-1,1] -> PNG file
inline void write_png(const std::string& path, const TensorF& image) {
    if (image.ndim() != 3 || image.size(0) != 3) throw InputError("write_png: expected a (3,H,W) image");
    int h = image.size(1), w = image.size(2);
    std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                rgb[(static_cast<size_t>(y) * w + x) * 3 + c] = quantize_unit(image.at(c, y, x));
    write_file_bytes(path, encode_png_rgb8(rgb, w, h));
}

inline TensorF read_png(const std::string& path) {
    DecodedPng img = decode_png_rgb8(read_file_bytes(path));
    TensorF out({3, img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) = dequantize_unit(img.rgb[(static_cast<size_t>(y) * img.width + x) * 3 + c]);
    return out;
}

}  // namespace io
}  // namespace fia
