#include <zlib.h>

#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "fia/core/rng.hpp"
#include "fia/io/png.hpp"

using namespace fia;

namespace {

std::string fresh_dir(const std::string& tag) {
    auto d = std::filesystem::temp_directory_path() / ("fia-png-" + tag);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d.string();
}

std::vector<uint8_t> random_rgb(int w, int h, uint64_t seed) {
    Rng rng(seed);
    std::vector<uint8_t> rgb(static_cast<size_t>(w) * h * 3);
    for (auto& b : rgb) b = static_cast<uint8_t>(rng.below(256));
    return rgb;
}

// wrap pre-filtered scanline data in a valid PNG container
std::vector<uint8_t> container(int w, int h, const std::vector<uint8_t>& raw) {
    uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> packed(bound);
    REQUIRE(::compress2(packed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) == Z_OK);
    packed.resize(bound);

    std::vector<uint8_t> out(io::kPngSignature, io::kPngSignature + 8);
    std::vector<uint8_t> ihdr;
    io::detail::put_u32_be(ihdr, static_cast<uint32_t>(w));
    io::detail::put_u32_be(ihdr, static_cast<uint32_t>(h));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
    io::detail::put_chunk(out, "IHDR", ihdr);
    io::detail::put_chunk(out, "IDAT", packed);
    io::detail::put_chunk(out, "IEND", {});
    return out;
}

// reference filter encoder: apply one of the five PNG filters per scanline
std::vector<uint8_t> encode_filtered(const std::vector<uint8_t>& rgb, int w, int h, const std::vector<int>& filters) {
    size_t stride = static_cast<size_t>(w) * 3;
    std::vector<uint8_t> raw;
    for (int y = 0; y < h; ++y) {
        int f = filters[static_cast<size_t>(y) % filters.size()];
        raw.push_back(static_cast<uint8_t>(f));
        for (size_t i = 0; i < stride; ++i) {
            int cur = rgb[static_cast<size_t>(y) * stride + i];
            int a = i >= 3 ? rgb[static_cast<size_t>(y) * stride + i - 3] : 0;
            int b = y > 0 ? rgb[(static_cast<size_t>(y) - 1) * stride + i] : 0;
            int c = (y > 0 && i >= 3) ? rgb[(static_cast<size_t>(y) - 1) * stride + i - 3] : 0;
            int enc = cur;
            switch (f) {
                case 1: enc = cur - a; break;
                case 2: enc = cur - b; break;
                case 3: enc = cur - (a + b) / 2; break;
                case 4: enc = cur - io::detail::paeth(a, b, c); break;
            }
            raw.push_back(static_cast<uint8_t>(enc & 0xff));
        }
    }
    return container(w, h, raw);
}

}  // namespace

TEST_CASE("round half even") {
    REQUIRE(io::round_half_even(0.5) == 0);
    REQUIRE(io::round_half_even(1.5) == 2);
    REQUIRE(io::round_half_even(2.5) == 2);
    REQUIRE(io::round_half_even(-0.5) == 0);
    REQUIRE(io::round_half_even(-1.5) == -2);
    REQUIRE(io::round_half_even(2.4) == 2);
    REQUIRE(io::round_half_even(2.6) == 3);
}

TEST_CASE("quantize and dequantize endpoints") {
    REQUIRE(io::quantize_unit(-1.0f) == 0);
    REQUIRE(io::quantize_unit(1.0f) == 255);
    REQUIRE(io::quantize_unit(0.0f) == 128);  // 127.5 rounds to even
    REQUIRE(io::quantize_unit(-1.3f) == 0);   // clamped
    REQUIRE(io::quantize_unit(1.3f) == 255);
    REQUIRE(io::dequantize_unit(0) == -1.0f);
    REQUIRE(io::dequantize_unit(255) == 1.0f);

    // every byte survives a decode/encode cycle, so re-saving a PNG is lossless
    for (int b = 0; b < 256; ++b)
        REQUIRE(io::quantize_unit(io::dequantize_unit(static_cast<uint8_t>(b))) == b);
}

TEST_CASE("png image round trip") {
    auto dir = fresh_dir("roundtrip");
    Rng rng(17);
    TensorF img({3, 12, 9});
    for (auto& v : img.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    io::write_png(dir + "/a.png", img);
    TensorF back = io::read_png(dir + "/a.png");
    REQUIRE(back.shape == img.shape);
    REQUIRE(max_abs_diff(back, img) <= 1.0f / 255.0f + 1e-6f);

    // once quantized, further write/read cycles are bitwise stable
    io::write_png(dir + "/b.png", back);
    TensorF again = io::read_png(dir + "/b.png");
    REQUIRE(again.data == back.data);

    REQUIRE_THROWS_AS(io::write_png(dir + "/c.png", TensorF::zeros({1, 4, 4})), InputError);
}

TEST_CASE("png decoder handles every filter type") {
    const int w = 5, h = 7;
    auto rgb = random_rgb(w, h, 23);
    for (int f = 0; f <= 4; ++f) {
        auto img = io::decode_png_rgb8(encode_filtered(rgb, w, h, {f}));
        INFO("filter " << f);
        REQUIRE(img.width == w);
        REQUIRE(img.height == h);
        REQUIRE(img.rgb == rgb);
    }
    // mixed filters across scanlines, and a 1-pixel-wide image (no left neighbor)
    REQUIRE(io::decode_png_rgb8(encode_filtered(rgb, w, h, {0, 1, 2, 3, 4})).rgb == rgb);
    auto thin = random_rgb(1, 6, 29);
    REQUIRE(io::decode_png_rgb8(encode_filtered(thin, 1, 6, {4, 3, 1})).rgb == thin);
}

TEST_CASE("png decoder rejects malformed files") {
    auto rgb = random_rgb(4, 4, 31);
    auto good = io::encode_png_rgb8(rgb, 4, 4);

    SECTION("not a png at all") {
        std::vector<uint8_t> junk(64, 0x42);
        REQUIRE_THROWS_AS(io::decode_png_rgb8(junk), VersionError);
    }
    SECTION("chunk overruns the file") {
        std::vector<uint8_t> b(good.begin(), good.begin() + 20);
        REQUIRE_THROWS_AS(io::decode_png_rgb8(b), TruncationError);
    }
    SECTION("missing IEND") {
        std::vector<uint8_t> b(good.begin(), good.end() - 12);
        REQUIRE_THROWS_AS(io::decode_png_rgb8(b), TruncationError);
    }
    SECTION("corrupted chunk crc") {
        auto b = good;
        b[20] ^= 0x01;  // inside IHDR body
        REQUIRE_THROWS_AS(io::decode_png_rgb8(b), ConsistencyError);
    }
    SECTION("non 8-bit-RGB rejected") {
        std::vector<uint8_t> b(io::kPngSignature, io::kPngSignature + 8);
        std::vector<uint8_t> ihdr;
        io::detail::put_u32_be(ihdr, 4);
        io::detail::put_u32_be(ihdr, 4);
        ihdr.insert(ihdr.end(), {16, 2, 0, 0, 0});  // 16-bit depth
        io::detail::put_chunk(b, "IHDR", ihdr);
        io::detail::put_chunk(b, "IEND", {});
        REQUIRE_THROWS_AS(io::decode_png_rgb8(b), ConsistencyError);
    }
    SECTION("unknown filter type") {
        std::vector<uint8_t> raw;
        for (int y = 0; y < 4; ++y) {
            raw.push_back(9);  // invalid filter id
            raw.insert(raw.end(), 12, 0);
        }
        REQUIRE_THROWS_AS(io::decode_png_rgb8(container(4, 4, raw)), ConsistencyError);
    }
    SECTION("image data inflates to the wrong size") {
        std::vector<uint8_t> raw(3 * (1 + 4 * 3), 0);  // three rows for a 4x4 header
        REQUIRE_THROWS_AS(io::decode_png_rgb8(container(4, 4, raw)), ConsistencyError);
    }
}
