#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "fia/core/bytes.hpp"
#include "fia/core/error.hpp"
#include "fia/core/tensor.hpp"
#include "fia/data/scenes.hpp"
#include "fia/eval/describer.hpp"
#include "fia/eval/detector.hpp"
#include "fia/eval/metrics.hpp"
#include "fia/percep/extractor.hpp"

// Full leakage report for a set of inversions: per-image records, dataset
// aggregates and enough provenance to reproduce the numbers. Aggregates are
// pure functions of the records, and a test holds us to that.
namespace fia {
namespace eval {

struct MetricSet {
    bool psnr = true, ssim = true, perceptual = true, acc = true, lvlm = true, orr = true;

    static MetricSet parse(const std::string& csv) {
        MetricSet m{false, false, false, false, false, false};
        std::string cur;
        auto take = [&m](const std::string& name) {
            if (name.empty()) return;
            if (name == "psnr") m.psnr = true;
            else if (name == "ssim") m.ssim = true;
            else if (name == "perc" || name == "perceptual") m.perceptual = true;
            else if (name == "acc") m.acc = true;
            else if (name == "lvlm") m.lvlm = true;
            else if (name == "orr") m.orr = true;
            else throw ParameterError("unknown metric '" + name + "' (expected psnr,ssim,perc,acc,lvlm,orr)");
        };
        for (char ch : csv) {
            if (ch == ',') {
                take(cur);
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        take(cur);
        return m;
    }

    std::string str() const {
        std::string out;
        auto add = [&out](bool on, const char* name) {
            if (!on) return;
            if (!out.empty()) out += ",";
            out += name;
        };
        add(psnr, "psnr");
        add(ssim, "ssim");
        add(perceptual, "perc");
        add(acc, "acc");
        add(lvlm, "lvlm");
        add(orr, "orr");
        return out;
    }
};

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

struct EvalRecord {
    int index = 0;
    uint64_t scene_id = 0;
    double psnr = kMissing, ssim = kMissing, perceptual = kMissing;
    int label_original = -1, label_inverted = -1;
    bool describer_ok = true;
    std::string desc_original, desc_inverted;
    int judgment = -1;
    double leakage = kMissing;
    int orr_ref = 0;
    std::vector<int> orr_matched;  // one count per threshold
};

struct EvalAggregates {
    int n = 0;
    double psnr_mean = kMissing, ssim_mean = kMissing, perceptual_mean = kMissing;
    double acc_pct = kMissing, lvlm_c_pct = kMissing, lvlm_pl_mean = kMissing;
    std::vector<double> orr_pct;
    int describer_failures = 0;
};

struct EvalProvenance {
    std::string bundle_digest;
    nlohmann::json corpus_manifest;
    std::string describer_id;
    int n_steps = 1;
    std::string config_hash;  // set by the experiment runner
    uint64_t seed = 0;
};

namespace detail {

inline void put_opt(nlohmann::json& j, const char* key, double v) {
    if (!std::isnan(v)) j[key] = v;
}
inline double get_opt(const nlohmann::json& j, const char* key) {
    return j.contains(key) && !j[key].is_null() ? j[key].get<double>() : kMissing;
}

}  // namespace detail

struct EvalReport {
    int schema_version = 1;
    EvalProvenance provenance;
    MetricSet metrics;
    std::vector<double> orr_taus;
    std::vector<EvalRecord> records;
    EvalAggregates aggregates;

    // Aggregates derive from records alone. Describer failures only shrink
    // the describer-based means; everything else keeps its full denominator.
    static EvalAggregates aggregate(const std::vector<EvalRecord>& records, const MetricSet& m,
                                    const std::vector<double>& taus) {
        EvalAggregates a;
        a.n = static_cast<int>(records.size());
        if (records.empty()) throw InputError("eval aggregate: no records");
        auto mean_of = [&records](double EvalRecord::* field) {
            double s = 0;
            for (const auto& r : records) s += r.*field;
            return s / static_cast<double>(records.size());
        };
        if (m.psnr) a.psnr_mean = mean_of(&EvalRecord::psnr);
        if (m.ssim) a.ssim_mean = mean_of(&EvalRecord::ssim);
        if (m.perceptual) a.perceptual_mean = mean_of(&EvalRecord::perceptual);
        if (m.acc) {
            int hits = 0;
            for (const auto& r : records) hits += r.label_inverted == r.label_original;
            a.acc_pct = 100.0 * hits / static_cast<double>(records.size());
        }
        if (m.lvlm) {
            double c = 0, pl = 0;
            int ok = 0;
            for (const auto& r : records) {
                if (!r.describer_ok) {
                    ++a.describer_failures;
                    continue;
                }
                c += r.judgment;
                pl += r.leakage;
                ++ok;
            }
            if (ok > 0) {
                a.lvlm_c_pct = 100.0 * c / ok;
                a.lvlm_pl_mean = pl / ok;
            }
        }
        if (m.orr) {
            for (size_t t = 0; t < taus.size(); ++t) {
                long ref = 0, matched = 0;
                for (const auto& r : records) {
                    ref += r.orr_ref;
                    matched += t < r.orr_matched.size() ? r.orr_matched[t] : 0;
                }
                a.orr_pct.push_back(ref == 0 ? 100.0 : 100.0 * static_cast<double>(matched) / static_cast<double>(ref));
            }
        }
        return a;
    }

    nlohmann::json to_json() const {
        nlohmann::json recs = nlohmann::json::array();
        for (const auto& r : records) {
            nlohmann::json jr = {{"index", r.index}, {"scene_id", r.scene_id}};
            detail::put_opt(jr, "psnr", r.psnr);
            detail::put_opt(jr, "ssim", r.ssim);
            detail::put_opt(jr, "perceptual", r.perceptual);
            if (metrics.acc) {
                jr["label_original"] = r.label_original;
                jr["label_inverted"] = r.label_inverted;
            }
            if (metrics.lvlm) {
                jr["describer_ok"] = r.describer_ok;
                if (r.describer_ok) {
                    jr["desc_original"] = r.desc_original;
                    jr["desc_inverted"] = r.desc_inverted;
                    jr["judgment"] = r.judgment;
                    jr["leakage"] = r.leakage;
                }
            }
            if (metrics.orr) {
                jr["orr_ref"] = r.orr_ref;
                jr["orr_matched"] = r.orr_matched;
            }
            recs.push_back(std::move(jr));
        }
        nlohmann::json agg = {{"n", aggregates.n}, {"describer_failures", aggregates.describer_failures}};
        detail::put_opt(agg, "psnr_mean", aggregates.psnr_mean);
        detail::put_opt(agg, "ssim_mean", aggregates.ssim_mean);
        detail::put_opt(agg, "perceptual_mean", aggregates.perceptual_mean);
        detail::put_opt(agg, "acc_pct", aggregates.acc_pct);
        detail::put_opt(agg, "lvlm_c_pct", aggregates.lvlm_c_pct);
        detail::put_opt(agg, "lvlm_pl_mean", aggregates.lvlm_pl_mean);
        if (metrics.orr) agg["orr_pct"] = aggregates.orr_pct;
        return {{"schema_version", schema_version},
                {"provenance",
                 {{"bundle_digest", provenance.bundle_digest},
                  {"corpus_manifest", provenance.corpus_manifest},
                  {"describer_id", provenance.describer_id},
                  {"n_steps", provenance.n_steps},
                  {"config_hash", provenance.config_hash},
                  {"seed", provenance.seed}}},
                {"metrics", metrics.str()},
                {"orr_taus", orr_taus},
                {"records", recs},
                {"aggregates", agg}};
    }

    static EvalReport from_json(const nlohmann::json& j) {
        EvalReport rep;
        rep.schema_version = j.at("schema_version");
        if (rep.schema_version != 1) throw VersionError("unsupported report schema version");
        rep.provenance.bundle_digest = j.at("provenance").value("bundle_digest", "");
        rep.provenance.corpus_manifest = j.at("provenance").value("corpus_manifest", nlohmann::json());
        rep.provenance.describer_id = j.at("provenance").value("describer_id", "");
        rep.provenance.n_steps = j.at("provenance").value("n_steps", 1);
        rep.provenance.config_hash = j.at("provenance").value("config_hash", "");
        rep.provenance.seed = j.at("provenance").value("seed", uint64_t{0});
        rep.metrics = MetricSet::parse(j.at("metrics"));
        rep.orr_taus = j.at("orr_taus").get<std::vector<double>>();
        for (const auto& jr : j.at("records")) {
            EvalRecord r;
            r.index = jr.at("index");
            r.scene_id = jr.at("scene_id");
            r.psnr = detail::get_opt(jr, "psnr");
            r.ssim = detail::get_opt(jr, "ssim");
            r.perceptual = detail::get_opt(jr, "perceptual");
            r.label_original = jr.value("label_original", -1);
            r.label_inverted = jr.value("label_inverted", -1);
            r.describer_ok = jr.value("describer_ok", true);
            r.desc_original = jr.value("desc_original", "");
            r.desc_inverted = jr.value("desc_inverted", "");
            r.judgment = jr.value("judgment", -1);
            r.leakage = detail::get_opt(jr, "leakage");
            r.orr_ref = jr.value("orr_ref", 0);
            r.orr_matched = jr.value("orr_matched", std::vector<int>());
            rep.records.push_back(std::move(r));
        }
        rep.aggregates = aggregate(rep.records, rep.metrics, rep.orr_taus);
        return rep;
    }

    void save_json(const std::string& path) const { write_file_text(path, to_json().dump(2) + "\n"); }

    static EvalReport load_json(const std::string& path) {
        try {
            return from_json(nlohmann::json::parse(read_file_text(path)));
        } catch (const nlohmann::json::exception& e) {
            throw ConsistencyError("report is not valid JSON: " + std::string(e.what()));
        }
    }

    std::string to_csv() const {
        auto quote = [](const std::string& s) {
            std::string out = "\"";
            for (char ch : s) {
                if (ch == '"') out += "\"\"";
                else out.push_back(ch);
            }
            return out + "\"";
        };
        auto num = [](double v) { return std::isnan(v) ? std::string() : std::to_string(v); };
        std::string out = "index,scene_id,psnr,ssim,perceptual,label_original,label_inverted,judgment,leakage,orr_ref";
        for (double t : orr_taus) out += ",orr_matched_" + std::to_string(t);
        out += ",desc_original,desc_inverted\n";
        for (const auto& r : records) {
            out += std::to_string(r.index) + "," + std::to_string(r.scene_id) + "," + num(r.psnr) + "," + num(r.ssim) +
                   "," + num(r.perceptual) + "," + std::to_string(r.label_original) + "," +
                   std::to_string(r.label_inverted) + "," + std::to_string(r.judgment) + "," + num(r.leakage) + "," +
                   std::to_string(r.orr_ref);
            for (size_t t = 0; t < orr_taus.size(); ++t)
                out += "," + std::to_string(t < r.orr_matched.size() ? r.orr_matched[t] : 0);
            out += "," + quote(r.desc_original) + "," + quote(r.desc_inverted) + "\n";
        }
        return out;
    }

    void save_csv(const std::string& path) const { write_file_text(path, to_csv()); }
};

struct EvalInputs {
    std::vector<TensorF> originals, inversions;
    std::vector<data::SceneMeta> metas;
    std::function<int(const TensorF&)> classifier;        // full victim top-1, for acc
    Describer* describer = nullptr;                       // for lvlm
    const percep::FeatureExtractor* extractor = nullptr;  // for perceptual
    MetricSet metrics;
    std::vector<double> orr_taus = {0.5, 0.75};
    EvalProvenance provenance;
};

inline EvalReport run_eval(const EvalInputs& in) {
    size_t n = in.originals.size();
    if (n == 0) throw InputError("run_eval: no images");
    if (in.inversions.size() != n || in.metas.size() != n)
        throw InputError("run_eval: originals, inversions and metadata must align");
    if (in.metrics.acc && !in.classifier) throw ConfigError("acc metric requested without a classifier");
    if (in.metrics.lvlm && !in.describer) throw ConfigError("lvlm metrics requested without a describer");
    if (in.metrics.perceptual && !in.extractor) throw ConfigError("perceptual metric requested without an extractor");

    EvalReport rep;
    rep.metrics = in.metrics;
    rep.orr_taus = in.orr_taus;
    rep.provenance = in.provenance;
    if (rep.provenance.describer_id.empty() && in.describer) rep.provenance.describer_id = in.describer->id();

    for (size_t i = 0; i < n; ++i) {
        const TensorF& orig = in.originals[i];
        const TensorF& inv = in.inversions[i];
        EvalRecord r;
        r.index = static_cast<int>(i);
        r.scene_id = in.metas[i].scene_id;
        if (in.metrics.psnr) r.psnr = psnr(orig, inv);
        if (in.metrics.ssim) r.ssim = ssim(orig, inv);
        if (in.metrics.perceptual) r.perceptual = percep::perceptual_distance(orig, inv, *in.extractor);
        if (in.metrics.acc) {
            r.label_original = in.metas[i].label();
            r.label_inverted = in.classifier(inv);
        }
        if (in.metrics.lvlm) {
            try {
                r.desc_original = in.describer->describe(orig, DescribeRole::original);
                r.desc_inverted = in.describer->describe(inv, DescribeRole::inverted);
                r.judgment = in.describer->judge_same_object(r.desc_original, r.desc_inverted);
                r.leakage = token_overlap_f1(r.desc_original, r.desc_inverted);
            } catch (const DescriberError&) {
                r.describer_ok = false;
                r.desc_original.clear();
                r.desc_inverted.clear();
                r.judgment = -1;
                r.leakage = kMissing;
            }
        }
        if (in.metrics.orr) {
            DetectionSet ref = detect_scene(in.metas[i]);
            DetectionSet cand = detect_image(inv);
            r.orr_ref = static_cast<int>(ref.size());
            for (double tau : in.orr_taus) r.orr_matched.push_back(matched_count(ref, cand, tau));
        }
        rep.records.push_back(std::move(r));
    }
    rep.aggregates = EvalReport::aggregate(rep.records, rep.metrics, rep.orr_taus);
    return rep;
}

}  // namespace eval
}  // namespace fia
