#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "fia/core/rng.hpp"
#include "fia/core/serial.hpp"

using namespace fia;

namespace {

Checkpoint sample_checkpoint() {
    Checkpoint c;
    c.meta = {{"kind", "probe"}, {"layers", 2}};
    Rng rng(5);
    // deliberately not alphabetical: order is part of the format
    c.blobs.emplace_back("b.weight", TensorF::randn({3, 4}, rng));
    c.blobs.emplace_back("a.bias", TensorF::randn({4}, rng));
    return c;
}

std::string fresh_dir(const std::string& tag) {
    auto d = std::filesystem::temp_directory_path() / ("fia-serial-" + tag);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d.string();
}

}  // namespace

TEST_CASE("checkpoint serialize round trip preserves meta, order and bits") {
    Checkpoint c = sample_checkpoint();
    Checkpoint d = Checkpoint::deserialize(c.serialize());
    REQUIRE(d.meta == c.meta);
    REQUIRE(d.blobs.size() == 2);
    REQUIRE(d.blobs[0].first == "b.weight");
    REQUIRE(d.blobs[1].first == "a.bias");
    for (size_t i = 0; i < d.blobs.size(); ++i) {
        REQUIRE(d.blobs[i].second.shape == c.blobs[i].second.shape);
        REQUIRE(d.blobs[i].second.data == c.blobs[i].second.data);
    }
    REQUIRE(d.blob("a.bias").shape == Shape{4});
    REQUIRE_THROWS_AS(d.blob("missing"), ConsistencyError);
}

TEST_CASE("checkpoint file round trip is bitwise") {
    auto dir = fresh_dir("file");
    Checkpoint c = sample_checkpoint();
    c.save(dir + "/m.ckpt");
    REQUIRE(read_file_bytes(dir + "/m.ckpt") == c.serialize());
    Checkpoint d = Checkpoint::load(dir + "/m.ckpt");
    REQUIRE(d.meta == c.meta);
    REQUIRE(d.blobs[0].second.data == c.blobs[0].second.data);
}

TEST_CASE("checkpoint rejects malformed bytes") {
    auto bytes = sample_checkpoint().serialize();

    SECTION("buffer shorter than header plus digest") {
        std::vector<uint8_t> b(bytes.begin(), bytes.begin() + 40);
        REQUIRE_THROWS_AS(Checkpoint::deserialize(b), TruncationError);
    }
    SECTION("bad magic") {
        auto b = bytes;
        b[0] ^= 0xff;
        REQUIRE_THROWS_AS(Checkpoint::deserialize(b), VersionError);
    }
    SECTION("payload tamper trips the digest") {
        auto b = bytes;
        b[b.size() - 70] ^= 0x01;  // inside the last tensor, before the digest
        REQUIRE_THROWS_AS(Checkpoint::deserialize(b), DigestError);
    }
    SECTION("digest tamper") {
        auto b = bytes;
        b.back() = b.back() == 'a' ? 'b' : 'a';
        REQUIRE_THROWS_AS(Checkpoint::deserialize(b), DigestError);
    }
    SECTION("trailing bytes survive a recomputed digest but not the parser") {
        std::vector<uint8_t> b(bytes.begin(), bytes.end() - 64);
        put_u32(b, 0xdeadbeef);
        std::string digest = Sha256::hex(b.data(), b.size());
        put_bytes(b, digest.data(), digest.size());
        REQUIRE_THROWS_AS(Checkpoint::deserialize(b), ConsistencyError);
    }
    SECTION("metadata that is not JSON") {
        std::vector<uint8_t> b;
        put_bytes(b, kCheckpointMagic, 8);
        put_str(b, "{not json");
        put_u32(b, 0);
        std::string digest = Sha256::hex(b.data(), b.size());
        put_bytes(b, digest.data(), digest.size());
        REQUIRE_THROWS_AS(Checkpoint::deserialize(b), ConsistencyError);
    }
}

TEST_CASE("param store snapshots restore through a checkpoint") {
    nn::ParamStoreF ps;
    Rng rng(3);
    ps.add("w", TensorF::randn({4, 3}, rng));
    ps.add("b", TensorF::zeros({4}), /*trainable=*/false);
    std::string before = ps.digest();

    Checkpoint c;
    c.meta = {{"kind", "probe"}};
    params_to_checkpoint(ps, c);
    auto bytes = c.serialize();

    ps.set_values("w", TensorF::zeros({4, 3}));
    REQUIRE(ps.digest() != before);
    checkpoint_to_params(Checkpoint::deserialize(bytes), ps);
    REQUIRE(ps.digest() == before);

    REQUIRE_THROWS_AS(ps.set_values("w", TensorF::zeros({5})), ConsistencyError);

    // a store parameter with no matching blob is an error, not a silent skip
    ps.add("extra", TensorF::zeros({2}));
    REQUIRE_THROWS_AS(checkpoint_to_params(c, ps), ConsistencyError);
}
