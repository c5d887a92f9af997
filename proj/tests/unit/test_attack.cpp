#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "fia/attack/bundle.hpp"

using namespace fia;

namespace {

std::string fresh_dir(const std::string& tag) {
    auto d = std::filesystem::temp_directory_path() / ("fia-attack-" + tag);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d.string();
}

// consistent component triple: the field net carries the digests of the
// alignment net and codec it was (notionally) trained against
attack::AttackBundle sample_bundle(uint64_t seed) {
    codec::Codec codec(seed);
    codec.freeze();

    align::AlignConfig acfg;
    acfg.widths = {8, 16};
    acfg.seed = seed;
    align::AlignmentNet alignment({64, 8, 8}, {4, 8, 8}, acfg);

    flow::FlowConfig fcfg;
    fcfg.widths = {4, 6, 8};
    fcfg.emb_dim = 8;
    fcfg.seed = seed;
    flow::VectorFieldNet field({4, 8, 8}, fcfg);
    field.set_dependencies(alignment.params().digest(), codec.frozen_digest(), "pp");

    return attack::make_bundle(std::move(alignment), std::move(field), std::move(codec), "small_cnn", "late", 1);
}

}  // namespace

TEST_CASE("bundle inversion is the advertised composition") {
    attack::AttackBundle b = sample_bundle(80);
    Rng rng(81);
    TensorF f = TensorF::randn({64, 8, 8}, rng);

    TensorF via_parts = b.codec.decode(flow::invert(b.field, b.alignment.align(f), 3));
    REQUIRE(max_abs_diff(b.invert_feature(f, 3), via_parts) == 0.0f);
    REQUIRE(b.invert_feature(f, 3).shape == Shape{3, 64, 64});

    REQUIRE(max_abs_diff(b.invert_align_only(f), b.codec.decode(b.alignment.align(f))) == 0.0f);

    // an untrained field net is the zero field, so refinement changes nothing
    REQUIRE(max_abs_diff(b.invert_feature(f, 1), b.invert_align_only(f)) == 0.0f);
    REQUIRE(max_abs_diff(b.invert_feature(f, 10), b.invert_align_only(f)) == 0.0f);

    // n_steps <= 0 falls back to the bundle default
    b.n_steps_default = 4;
    REQUIRE(max_abs_diff(b.invert_feature(f), b.invert_feature(f, 4)) == 0.0f);
}

TEST_CASE("bundle validation refuses mismatched components") {
    attack::AttackBundle good = sample_bundle(82);
    good.validate();

    attack::AttackBundle no_digests = good;
    no_digests.field.set_dependencies("", "", "");
    REQUIRE_THROWS_AS(no_digests.validate(), ConsistencyError);

    // alignment net swapped out after training
    attack::AttackBundle other_align = good;
    align::AlignConfig acfg;
    acfg.widths = {8, 16};
    acfg.seed = 999;
    other_align.alignment = align::AlignmentNet({64, 8, 8}, {4, 8, 8}, acfg);
    REQUIRE_THROWS_AS(other_align.validate(), DigestError);
    REQUIRE_THROWS_AS(attack::make_bundle(other_align.alignment, good.field, good.codec, "v", "s"), DigestError);

    attack::AttackBundle other_codec = good;
    other_codec.codec = codec::Codec(83);
    other_codec.codec.freeze();
    REQUIRE_THROWS_AS(other_codec.validate(), DigestError);

    // digests agree but the alignment net maps to the wrong grid
    align::AlignmentNet tiny({64, 8, 8}, {4, 4, 4}, acfg);
    attack::AttackBundle warped = good;
    warped.alignment = tiny;
    warped.field.set_dependencies(tiny.params().digest(), good.codec.frozen_digest(), "pp");
    REQUIRE_THROWS_AS(warped.validate(), ConsistencyError);
}

TEST_CASE("bundle file round trip") {
    auto dir = fresh_dir("roundtrip");
    attack::AttackBundle b = sample_bundle(84);
    b.n_steps_default = 2;
    b.save(dir + "/a.bundle");

    attack::AttackBundle back = attack::AttackBundle::load(dir + "/a.bundle");
    REQUIRE(back.victim_id == "small_cnn");
    REQUIRE(back.split_point == "late");
    REQUIRE(back.n_steps_default == 2);
    REQUIRE(back.alignment.params().digest() == b.alignment.params().digest());
    REQUIRE(back.field.params().digest() == b.field.params().digest());
    REQUIRE(back.codec.digest() == b.codec.digest());

    Rng rng(85);
    for (int i = 0; i < 3; ++i) {
        TensorF f = TensorF::randn({64, 8, 8}, rng);
        REQUIRE(max_abs_diff(back.invert_feature(f), b.invert_feature(f)) == 0.0f);
    }

    // loading twice gives interchangeable attackers
    attack::AttackBundle again = attack::AttackBundle::load(dir + "/a.bundle");
    TensorF f = TensorF::randn({64, 8, 8}, rng);
    REQUIRE(max_abs_diff(again.invert_feature(f), back.invert_feature(f)) == 0.0f);
}

TEST_CASE("bundle file damage modes") {
    auto dir = fresh_dir("damage");
    attack::AttackBundle b = sample_bundle(86);
    b.save(dir + "/a.bundle");
    std::vector<uint8_t> bytes = read_file_bytes(dir + "/a.bundle");

    auto reload = [&](const std::vector<uint8_t>& raw) {
        write_file_bytes(dir + "/bad.bundle", raw);
        return attack::AttackBundle::load(dir + "/bad.bundle");
    };

    std::vector<uint8_t> short_file(bytes.begin(), bytes.begin() + 50);
    REQUIRE_THROWS_AS(reload(short_file), TruncationError);

    std::vector<uint8_t> wrong_magic = bytes;
    wrong_magic[0] ^= 0xff;
    REQUIRE_THROWS_AS(reload(wrong_magic), VersionError);

    std::vector<uint8_t> flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x01;
    REQUIRE_THROWS_AS(reload(flipped), DigestError);

    // resigned tampering: append a fresh digest so only structure checks fire
    auto sign = [](std::vector<uint8_t> body) {
        std::string digest = Sha256::hex(body.data(), body.size());
        put_bytes(body, digest.data(), digest.size());
        return body;
    };
    std::vector<uint8_t> body(bytes.begin(), bytes.end() - 64);

    std::vector<uint8_t> trailing = body;
    trailing.push_back(0);
    REQUIRE_THROWS_AS(reload(sign(trailing)), ConsistencyError);

    // drop the last section (the codec): count says 2, structure check fires
    {
        ByteReader r(body.data() + 8, body.size() - 8);
        r.get_str();  // meta
        size_t count_at = 8 + r.offset();
        REQUIRE(r.get_u32() == 3);
        for (int i = 0; i < 2; ++i) {
            r.get_str();
            uint32_t len = r.get_u32();
            std::vector<uint8_t> skip(len);
            r.get(skip.data(), len);
        }
        size_t codec_section = r.remaining();
        std::vector<uint8_t> two = body;
        two[count_at] = 2;  // little-endian count low byte
        two.resize(two.size() - codec_section);
        REQUIRE_THROWS_AS(reload(sign(two)), ConsistencyError);
    }

    // rename a section: unknown names are refused outright
    {
        ByteReader r(body.data() + 8, body.size() - 8);
        r.get_str();
        r.get_u32();
        size_t name_at = 8 + r.offset() + 4;  // skip the name's length prefix
        REQUIRE(r.get_str() == "alignment");
        std::vector<uint8_t> renamed = body;
        renamed[name_at] = 'X';
        REQUIRE_THROWS_AS(reload(sign(renamed)), ConsistencyError);
    }
}
