#pragma once

#include <cstring>
#include <string>
#include <vector>

#include "fia/align/lfsam.hpp"
#include "fia/codec/codec.hpp"
#include "fia/core/serial.hpp"
#include "fia/flow/difm.hpp"

// The portable attack artifact: alignment net, field net and codec in one
// file. Whoever holds a bundle can invert intercepted features with no
// access to the victim — that is the whole point of the exercise.
namespace fia {
namespace attack {

inline constexpr char kBundleMagic[8] = {'F', 'I', 'A', 'B', 'N', 'D', 'L', '1'};

struct AttackBundle {
    align::AlignmentNet alignment;
    flow::VectorFieldNet field;
    codec::Codec codec{0};
    std::string victim_id, split_point;
    int n_steps_default = 1;

    // Cross-checks the recorded training-time digests against the components
    // actually present. A bundle assembled from mismatched checkpoints is
    // useless as evidence, so this refuses early.
    void validate() const {
        if (field.align_digest().empty() || field.codec_digest().empty())
            throw ConsistencyError("bundle field net carries no dependency digests");
        if (field.align_digest() != alignment.params().digest())
            throw DigestError("bundle alignment net does not match the one the field net was trained against");
        if (field.codec_digest() != codec.frozen_digest())
            throw DigestError("bundle codec does not match the one the field net was trained against");
        if (alignment.latent_shape() != codec.latent_shape() || field.latent_shape() != codec.latent_shape())
            throw ConsistencyError("bundle component latent shapes disagree");
    }

    TensorF invert_feature(const TensorF& f, int n_steps = 0) const {
        int n = n_steps > 0 ? n_steps : n_steps_default;
        return codec.decode(flow::invert(field, alignment.align(f), n));
    }

    TensorF invert_align_only(const TensorF& f) const { return codec.decode(alignment.align(f)); }

    void save(const std::string& path) const {
        std::vector<uint8_t> out;
        put_bytes(out, kBundleMagic, 8);
        nlohmann::json meta = {{"victim_id", victim_id},
                               {"split_point", split_point},
                               {"n_steps_default", n_steps_default},
                               {"align_digest", field.align_digest()},
                               {"codec_digest", field.codec_digest()},
                               {"percep_digest", field.percep_digest()}};
        put_str(out, meta.dump());
        const std::pair<const char*, std::vector<uint8_t>> sections[] = {
            {"alignment", alignment.to_checkpoint().serialize()},
            {"field", field.to_checkpoint().serialize()},
            {"codec", codec.to_checkpoint().serialize()},
        };
        put_u32(out, 3);
        for (const auto& [name, bytes] : sections) {
            put_str(out, name);
            put_u32(out, static_cast<uint32_t>(bytes.size()));
            put_bytes(out, bytes.data(), bytes.size());
        }
        std::string digest = Sha256::hex(out.data(), out.size());
        put_bytes(out, digest.data(), digest.size());
        write_file_bytes(path, out);
    }

    static AttackBundle load(const std::string& path) {
        std::vector<uint8_t> bytes = read_file_bytes(path);
        if (bytes.size() < 8 + 64) throw TruncationError("bundle file too short: " + path);
        if (std::memcmp(bytes.data(), kBundleMagic, 8) != 0) throw VersionError("not an attack bundle: " + path);
        std::string stored(bytes.end() - 64, bytes.end());
        std::string actual = Sha256::hex(bytes.data(), bytes.size() - 64);
        if (stored != actual) throw DigestError("bundle digest mismatch (file is damaged): " + path);

        ByteReader r(bytes.data() + 8, bytes.size() - 8 - 64);
        nlohmann::json meta;
        try {
            meta = nlohmann::json::parse(r.get_str());
        } catch (const nlohmann::json::exception& e) {
            throw ConsistencyError(std::string("bundle metadata is not valid JSON: ") + e.what());
        }
        AttackBundle b;
        b.victim_id = meta.value("victim_id", "");
        b.split_point = meta.value("split_point", "");
        b.n_steps_default = meta.value("n_steps_default", 1);

        bool have_align = false, have_field = false, have_codec = false;
        uint32_t n = r.get_u32();
        for (uint32_t i = 0; i < n; ++i) {
            std::string name = r.get_str();
            uint32_t len = r.get_u32();
            std::vector<uint8_t> sec(len);
            r.get(sec.data(), len);
            Checkpoint c = Checkpoint::deserialize(sec);
            if (name == "alignment") {
                b.alignment = align::AlignmentNet::from_checkpoint(c);
                have_align = true;
            } else if (name == "field") {
                b.field = flow::VectorFieldNet::from_checkpoint(c);
                have_field = true;
            } else if (name == "codec") {
                b.codec = codec::Codec::from_checkpoint(c);
                have_codec = true;
            } else {
                throw ConsistencyError("bundle has an unknown section '" + name + "'");
            }
        }
        if (!have_align) throw ConsistencyError("bundle is missing its alignment section");
        if (!have_field) throw ConsistencyError("bundle is missing its field section");
        if (!have_codec) throw ConsistencyError("bundle is missing its codec section");
        if (r.remaining() != 0) throw ConsistencyError("bundle has trailing bytes");
        b.validate();
        return b;
    }
};

inline AttackBundle make_bundle(align::AlignmentNet alignment, flow::VectorFieldNet field, codec::Codec codec,
                                std::string victim_id, std::string split_point, int n_steps_default = 1) {
    AttackBundle b;
    b.alignment = std::move(alignment);
    b.field = std::move(field);
    b.codec = std::move(codec);
    b.victim_id = std::move(victim_id);
    b.split_point = std::move(split_point);
    b.n_steps_default = n_steps_default;
    b.validate();
    return b;
}

}  // namespace attack
}  // namespace fia
