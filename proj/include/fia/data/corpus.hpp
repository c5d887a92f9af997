#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fia/core/bytes.hpp"
#include "fia/core/tensor.hpp"
#include "fia/data/scenes.hpp"
#include "fia/victim/defense.hpp"

// The attacker's dataset of (image, feature) pairs, persisted as a directory:
// manifest.json describes provenance and shapes, data.bin concatenates
// records. Each record: image dims then feature dims as u32 LE, then the two
// float32 LE payloads. Fixed shapes make the record size constant, which lets
// the loader tell truncation (partial record) from a count mismatch (whole
// records missing).
namespace fia {
namespace data {

inline constexpr int kCorpusFormatVersion = 1;

struct CorpusManifest {
    int format_version = kCorpusFormatVersion;
    std::string victim_id, split_point;
    victim::DefenseConfig defense;
    Shape image_shape, feature_shape;
    int count = 0;
    std::vector<int> labels;       // per-record ground-truth class (optional, may be empty)
    std::vector<SceneMeta> scenes;  // per-record scene metadata (optional)

    bool compatible_with(const CorpusManifest& o) const {
        return victim_id == o.victim_id && split_point == o.split_point && defense == o.defense &&
               image_shape == o.image_shape && feature_shape == o.feature_shape;
    }
};

inline void to_json(nlohmann::json& j, const CorpusManifest& m) {
    j = {{"format_version", m.format_version},
         {"victim_id", m.victim_id},
         {"split_point", m.split_point},
         {"defense", m.defense},
         {"image_shape", m.image_shape},
         {"feature_shape", m.feature_shape},
         {"count", m.count}};
    if (!m.labels.empty()) j["labels"] = m.labels;
    if (!m.scenes.empty()) j["scenes"] = m.scenes;
}
inline void from_json(const nlohmann::json& j, CorpusManifest& m) {
    m.format_version = j.at("format_version");
    m.victim_id = j.at("victim_id");
    m.split_point = j.at("split_point");
    m.defense = j.at("defense");
    m.image_shape = j.at("image_shape").get<Shape>();
    m.feature_shape = j.at("feature_shape").get<Shape>();
    m.count = j.at("count");
    if (j.contains("labels")) m.labels = j.at("labels").get<std::vector<int>>();
    if (j.contains("scenes")) m.scenes = j.at("scenes").get<std::vector<SceneMeta>>();
}

struct PairCorpus {
    CorpusManifest manifest;
    std::vector<TensorF> images;
    std::vector<TensorF> features;

    size_t size() const { return images.size(); }

    void validate() const {
        if (images.size() != features.size() || static_cast<int>(images.size()) != manifest.count)
            throw ConsistencyError("corpus record count disagrees with manifest");
        if (manifest.count < 1) throw ConsistencyError("corpus must hold at least one record");
        for (const auto& x : images) check_shape(x, manifest.image_shape, "corpus image");
        for (const auto& f : features) check_shape(f, manifest.feature_shape, "corpus feature");
        if (!manifest.labels.empty() && manifest.labels.size() != images.size())
            throw ConsistencyError("corpus label count disagrees with record count");
        if (!manifest.scenes.empty() && manifest.scenes.size() != images.size())
            throw ConsistencyError("corpus scene-metadata count disagrees with record count");
    }
};

// Query the oracle once per image, in order. Scenes supply labels + metadata.
inline PairCorpus collect_pairs(const std::function<TensorF(const TensorF&)>& oracle, const std::vector<Scene>& scenes,
                                const victim::DefenseConfig& defense, const std::string& victim_id,
                                const std::string& split_point) {
    if (scenes.empty()) throw InputError("collect_pairs: no images given");
    PairCorpus c;
    c.manifest.victim_id = victim_id;
    c.manifest.split_point = split_point;
    c.manifest.defense = defense;
    c.manifest.image_shape = scenes[0].image.shape;
    for (const auto& s : scenes) {
        check_shape(s.image, c.manifest.image_shape, "collect_pairs image");
        c.images.push_back(s.image);
        c.features.push_back(oracle(s.image));
        c.manifest.labels.push_back(s.meta.label());
        c.manifest.scenes.push_back(s.meta);
    }
    c.manifest.feature_shape = c.features[0].shape;
    c.manifest.count = static_cast<int>(c.images.size());
    c.validate();
    return c;
}

inline size_t corpus_record_bytes(const CorpusManifest& m) {
    return 4 * (m.image_shape.size() + m.feature_shape.size()) + 4 * shape_numel(m.image_shape) +
           4 * shape_numel(m.feature_shape);
}

inline void save_corpus(const PairCorpus& c, const std::string& dir) {
    c.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json j = c.manifest;
    write_file_text(dir + "/manifest.json", j.dump(2) + "\n");
    std::vector<uint8_t> bin;
    bin.reserve(corpus_record_bytes(c.manifest) * c.size());
    for (size_t i = 0; i < c.size(); ++i) {
        for (int d : c.images[i].shape) put_u32(bin, static_cast<uint32_t>(d));
        for (int d : c.features[i].shape) put_u32(bin, static_cast<uint32_t>(d));
        for (float v : c.images[i].data) put_f32(bin, v);
        for (float v : c.features[i].data) put_f32(bin, v);
    }
    write_file_bytes(dir + "/data.bin", bin);
}

inline PairCorpus load_corpus(const std::string& dir) {
    auto j = nlohmann::json::parse(read_file_text(dir + "/manifest.json"), nullptr, false);
    if (j.is_discarded()) throw ConsistencyError("corpus manifest is not valid JSON: " + dir);
    PairCorpus c;
    c.manifest = j.get<CorpusManifest>();
    if (c.manifest.format_version != kCorpusFormatVersion)
        throw VersionError("corpus format version " + std::to_string(c.manifest.format_version) + " unsupported (want " +
                           std::to_string(kCorpusFormatVersion) + ")");
    auto bin = read_file_bytes(dir + "/data.bin");
    size_t rec = corpus_record_bytes(c.manifest);
    if (bin.size() % rec != 0)
        throw TruncationError("corpus payload truncated: " + std::to_string(bin.size()) + " bytes is not a whole number of " +
                              std::to_string(rec) + "-byte records");
    size_t nrec = bin.size() / rec;
    if (nrec != static_cast<size_t>(c.manifest.count))
        throw ConsistencyError("corpus manifest says " + std::to_string(c.manifest.count) + " records, payload holds " +
                               std::to_string(nrec));
    ByteReader r(bin);
    for (size_t i = 0; i < nrec; ++i) {
        Shape is(c.manifest.image_shape.size()), fs(c.manifest.feature_shape.size());
        for (auto& d : is) d = static_cast<int>(r.get_u32());
        for (auto& d : fs) d = static_cast<int>(r.get_u32());
        if (is != c.manifest.image_shape || fs != c.manifest.feature_shape)
            throw ConsistencyError("corpus record " + std::to_string(i) + " shape disagrees with manifest");
        TensorF img(is), feat(fs);
        for (auto& v : img.data) v = r.get_f32();
        for (auto& v : feat.data) v = r.get_f32();
        c.images.push_back(std::move(img));
        c.features.push_back(std::move(feat));
    }
    c.validate();
    return c;
}

// Seeded disjoint partition; record order within each part follows the shuffle.
inline std::pair<PairCorpus, PairCorpus> split_corpus(const PairCorpus& c, int n_train, uint64_t seed) {
    int n = static_cast<int>(c.size());
    if (n_train < 1 || n_train >= n) throw ParameterError("split_corpus: n_train must be in [1, N)");
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = Rng(seed).fork("corpus.split");
    for (int i = n - 1; i > 0; --i) std::swap(idx[static_cast<size_t>(i)], idx[rng.below(static_cast<uint64_t>(i) + 1)]);
    auto take = [&](int lo, int hi) {
        PairCorpus part;
        part.manifest = c.manifest;
        part.manifest.labels.clear();
        part.manifest.scenes.clear();
        for (int k = lo; k < hi; ++k) {
            size_t i = static_cast<size_t>(idx[static_cast<size_t>(k)]);
            part.images.push_back(c.images[i]);
            part.features.push_back(c.features[i]);
            if (!c.manifest.labels.empty()) part.manifest.labels.push_back(c.manifest.labels[i]);
            if (!c.manifest.scenes.empty()) part.manifest.scenes.push_back(c.manifest.scenes[i]);
        }
        part.manifest.count = hi - lo;
        part.validate();
        return part;
    };
    return {take(0, n_train), take(n_train, n)};
}

inline PairCorpus concat_corpora(const PairCorpus& a, const PairCorpus& b) {
    if (!a.manifest.compatible_with(b.manifest))
        throw ConsistencyError("refusing to concatenate corpora with different victim/split/defense manifests");
    PairCorpus out = a;
    out.images.insert(out.images.end(), b.images.begin(), b.images.end());
    out.features.insert(out.features.end(), b.features.begin(), b.features.end());
    // label/scene arrays must stay aligned: either both sides carry them or neither
    if (a.manifest.labels.empty() != b.manifest.labels.empty())
        throw ConsistencyError("refusing to concatenate: one corpus has labels, the other does not");
    out.manifest.labels.insert(out.manifest.labels.end(), b.manifest.labels.begin(), b.manifest.labels.end());
    if (a.manifest.scenes.empty() != b.manifest.scenes.empty())
        throw ConsistencyError("refusing to concatenate: one corpus has scene metadata, the other does not");
    out.manifest.scenes.insert(out.manifest.scenes.end(), b.manifest.scenes.begin(), b.manifest.scenes.end());
    out.manifest.count = static_cast<int>(out.images.size());
    out.validate();
    return out;
}

}  // namespace data
}  // namespace fia
