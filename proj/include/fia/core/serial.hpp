#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fia/core/bytes.hpp"
#include "fia/core/sha256.hpp"
#include "fia/core/tensor.hpp"
#include "fia/nn/params.hpp"

// Checkpoint container: magic, a JSON metadata block, named float32 tensors,
// and a trailing SHA-256 over everything before it. Any edit to the payload
// shows up as a digest mismatch on load.
namespace fia {

inline constexpr char kCheckpointMagic[8] = {'F', 'I', 'A', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, TensorF>> blobs;

    const TensorF& blob(const std::string& name) const {
        for (const auto& kv : blobs)
            if (kv.first == name) return kv.second;
        throw ConsistencyError("checkpoint has no tensor named " + name);
    }

    std::vector<uint8_t> serialize() const {
        std::vector<uint8_t> out;
        put_bytes(out, kCheckpointMagic, 8);
        put_str(out, meta.dump());
        put_u32(out, static_cast<uint32_t>(blobs.size()));
        for (const auto& [name, t] : blobs) {
            put_str(out, name);
            put_u32(out, static_cast<uint32_t>(t.shape.size()));
            for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
            for (float v : t.data) put_f32(out, v);
        }
        std::string digest = Sha256::hex(out.data(), out.size());
        put_bytes(out, digest.data(), digest.size());
        return out;
    }

    void save(const std::string& path) const { write_file_bytes(path, serialize()); }

    static Checkpoint deserialize(const std::vector<uint8_t>& bytes) {
        if (bytes.size() < 8 + 64) throw TruncationError("checkpoint shorter than header + digest");
        if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
            throw VersionError("not a recognized checkpoint (bad magic)");
        std::string stored(bytes.end() - 64, bytes.end());
        std::string computed = Sha256::hex(bytes.data(), bytes.size() - 64);
        if (stored != computed) throw DigestError("checkpoint digest mismatch: stored " + stored.substr(0, 12) +
                                                  "..., computed " + computed.substr(0, 12) + "...");
        ByteReader r(bytes.data(), bytes.size() - 64);
        char magic[8];
        r.get(magic, 8);
        Checkpoint c;
        std::string meta_text = r.get_str();
        c.meta = nlohmann::json::parse(meta_text, nullptr, /*allow_exceptions=*/false);
        if (c.meta.is_discarded()) throw ConsistencyError("checkpoint metadata is not valid JSON");
        uint32_t nblobs = r.get_u32();
        for (uint32_t i = 0; i < nblobs; ++i) {
            std::string name = r.get_str();
            uint32_t nd = r.get_u32();
            Shape shape(nd);
            for (uint32_t d = 0; d < nd; ++d) shape[d] = static_cast<int>(r.get_u32());
            TensorF t(shape);
            for (auto& v : t.data) v = r.get_f32();
            c.blobs.emplace_back(std::move(name), std::move(t));
        }
        if (r.remaining() != 0) throw ConsistencyError("checkpoint has trailing bytes after last tensor");
        return c;
    }

    static Checkpoint load(const std::string& path) { return deserialize(read_file_bytes(path)); }
};

// snapshot every parameter of a store into checkpoint blobs
template <typename T>
void params_to_checkpoint(const nn::ParamStore<T>& ps, Checkpoint& c) {
    for (const auto& name : ps.names()) c.blobs.emplace_back(name, ps.get_values(name));
}

// restore parameters by name; every store parameter must be present
template <typename T>
void checkpoint_to_params(const Checkpoint& c, nn::ParamStore<T>& ps) {
    for (const auto& name : ps.names()) ps.set_values(name, c.blob(name));
}

}  // namespace fia
