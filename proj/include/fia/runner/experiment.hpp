#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "fia/attack/bundle.hpp"
#include "fia/codec/codec.hpp"
#include "fia/data/corpus.hpp"
#include "fia/data/scenes.hpp"
#include "fia/eval/describer.hpp"
#include "fia/eval/endpoint.hpp"
#include "fia/eval/report.hpp"
#include "fia/io/png.hpp"
#include "fia/percep/extractor.hpp"
#include "fia/runner/config.hpp"
#include "fia/victim/victim.hpp"

// Experiment orchestration: collect -> train-codec -> stage 1 -> stage 2 ->
// attack -> eval, with each phase cached on disk under a directory named by
// the config hash. A rerun with the same config (and seed) only replays the
// phases whose artifacts are missing; everything completed logs "cached".
namespace fia {
namespace runner {

inline std::string cache_root(const ExperimentConfig& cfg) {
    const char* env = std::getenv("FIA_CACHE_DIR");
    return env && *env ? std::string(env) : cfg.out_dir;
}

inline std::string experiment_dir(const ExperimentConfig& cfg) { return cache_root(cfg) + "/" + cfg.tag(); }

namespace detail {

template <typename F>
decltype(auto) phase_guard(const std::string& name, F&& body) {
    try {
        return body();
    } catch (const PhaseError&) {
        throw;
    } catch (const std::exception& e) {
        throw PhaseError(name, e.what());
    }
}

// saver writes to a temp path; the rename makes artifact existence mean
// "phase completed", so interrupted runs redo the phase instead of loading
// a half-written file
template <typename Saver>
void save_atomic(const std::string& path, Saver&& saver) {
    std::string tmp = path + ".tmp";
    saver(tmp);
    std::filesystem::rename(tmp, path);
}

inline uint64_t sub_seed(uint64_t seed, const std::string& tag) { return Rng(seed).fork(tag).next_u64(); }

inline std::unique_ptr<eval::Describer> make_describer(const std::string& spec, const data::PairCorpus& eval_corpus) {
    if (spec == "mock") {
        auto mock = std::make_unique<eval::MockDescriber>();
        for (size_t i = 0; i < eval_corpus.size(); ++i)
            mock->register_scene(eval_corpus.images[i], eval_corpus.manifest.scenes[i]);
        return mock;
    }
    // endpoint:<host>:<port>
    std::string rest = spec.substr(std::string("endpoint:").size());
    size_t colon = rest.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size())
        throw ConfigError("describer endpoint must look like endpoint:<host>:<port>");
    eval::EndpointConfig ec;
    ec.host = rest.substr(0, colon);
    ec.port = static_cast<int>(to_int("eval.describer", rest.substr(colon + 1)));
    return std::make_unique<eval::EndpointDescriber>(ec);
}

}  // namespace detail

struct ExperimentResult {
    std::string dir;                         // all artifacts live under here
    std::vector<eval::EvalReport> reports;   // ordered by (seed, n_steps)
    std::vector<std::string> report_paths;
};

// pipeline phases in execution order; run_experiment can stop early so the
// CLI can drive the pipeline one phase at a time against the same cache
enum class Phase { collect, train_codec, stage1, stage2, attack, eval };

// Write the n_steps-run inversions as PNGs plus an index; returns index path.
inline std::string write_inversions(const attack::AttackBundle& bundle, const data::PairCorpus& eval_corpus,
                                    int n_steps, const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json entries = nlohmann::json::array();
    for (size_t i = 0; i < eval_corpus.size(); ++i) {
        TensorF inv = bundle.invert_feature(eval_corpus.features[i], n_steps);
        char name[32];
        std::snprintf(name, sizeof(name), "inv-%04zu.png", i);
        io::write_png(dir + "/" + name, inv);
        entries.push_back({{"index", i},
                           {"file", name},
                           {"scene_id", eval_corpus.manifest.scenes[i].scene_id},
                           {"label", eval_corpus.manifest.labels[i]}});
    }
    nlohmann::json index = {{"n_steps", n_steps},
                            {"count", eval_corpus.size()},
                            {"victim_id", bundle.victim_id},
                            {"split_point", bundle.split_point},
                            {"entries", entries}};
    std::string index_path = dir + "/index.json";
    detail::save_atomic(index_path, [&index](const std::string& p) { write_file_text(p, index.dump(2) + "\n"); });
    return index_path;
}

inline std::vector<TensorF> read_inversions(const std::string& dir) {
    nlohmann::json index = nlohmann::json::parse(read_file_text(dir + "/index.json"));
    std::vector<TensorF> out;
    for (const auto& e : index.at("entries")) out.push_back(io::read_png(dir + "/" + e.at("file").get<std::string>()));
    return out;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream& log = std::cout,
                                       Phase upto = Phase::eval) {
    namespace fs = std::filesystem;
    cfg.validate();
    ExperimentResult result;
    const std::string dir = experiment_dir(cfg);
    result.dir = dir;
    fs::create_directories(dir);
    write_file_text(dir + "/config.txt", cfg.to_text());

    // ---- collect: victim, then the (image, feature) corpora through the oracle
    const std::string victim_ckpt = dir + "/victim.ckpt";
    const std::string train_dir = dir + "/corpus-train", eval_dir = dir + "/corpus-eval";
    auto corpus_done = [](const std::string& d) {
        return fs::exists(d + "/manifest.json") && fs::exists(d + "/data.bin");
    };
    detail::phase_guard("collect", [&] {
        if (!fs::exists(victim_ckpt)) {
            auto scenes = data::make_scenes(detail::sub_seed(cfg.victim_seed, "victim.data"), cfg.victim_data_n);
            std::vector<TensorF> images;
            std::vector<int> labels;
            for (const auto& s : scenes) {
                images.push_back(s.image);
                labels.push_back(s.meta.label());
            }
            victim::VictimModel model(cfg.victim_id, cfg.split, cfg.victim_seed);
            Rng rng = Rng(cfg.victim_seed).fork("victim.train");
            victim::train_victim(model, images, labels, cfg.victim_steps, 16, 1e-3, rng);
            detail::save_atomic(victim_ckpt, [&model](const std::string& p) { model.save(p); });
            log << "[collect] trained victim: " << victim_ckpt << "\n";
        } else {
            log << "[collect] cached: " << victim_ckpt << "\n";
        }
        if (!corpus_done(train_dir) || !corpus_done(eval_dir)) {
            victim::VictimModel model = victim::VictimModel::load(victim_ckpt);
            auto scenes = data::make_scenes(cfg.corpus_seed, cfg.n_train + cfg.n_eval);
            std::vector<data::Scene> train_scenes(scenes.begin(), scenes.begin() + cfg.n_train);
            std::vector<data::Scene> eval_scenes(scenes.begin() + cfg.n_train, scenes.end());
            victim::DefenseConfig train_defense = cfg.train_on_defended ? cfg.defense : victim::DefenseConfig{};
            auto train_oracle = victim::make_oracle(model, train_defense, Rng(cfg.corpus_seed).fork("oracle.train"));
            auto eval_oracle = victim::make_oracle(model, cfg.defense, Rng(cfg.corpus_seed).fork("oracle.eval"));
            data::save_corpus(data::collect_pairs(train_oracle, train_scenes, train_defense, cfg.victim_id, cfg.split),
                              train_dir);
            data::save_corpus(data::collect_pairs(eval_oracle, eval_scenes, cfg.defense, cfg.victim_id, cfg.split),
                              eval_dir);
            log << "[collect] corpora: " << train_dir << ", " << eval_dir << "\n";
        } else {
            log << "[collect] cached: " << train_dir << ", " << eval_dir << "\n";
        }
    });
    if (upto == Phase::collect) return result;

    // ---- train-codec: the attacker's frozen image codec and perceptual net.
    // Neither needs oracle pairs, so they train on the attacker's own scenes.
    const std::string codec_ckpt = dir + "/codec.ckpt", percep_ckpt = dir + "/percep.ckpt";
    detail::phase_guard("train-codec", [&] {
        if (!fs::exists(codec_ckpt)) {
            auto scenes = data::make_scenes(detail::sub_seed(cfg.codec_seed, "codec.data"), cfg.codec_data_n);
            std::vector<TensorF> images;
            for (const auto& s : scenes) images.push_back(s.image);
            codec::CodecConfig ccfg;
            ccfg.steps = cfg.codec_steps;
            ccfg.seed = cfg.codec_seed;
            auto trained = codec::train_codec(images, ccfg);
            detail::save_atomic(codec_ckpt, [&trained](const std::string& p) { trained.codec.save(p); });
            log << "[train-codec] codec held-out psnr " << fmt_g17(trained.held_out_psnr) << " dB: " << codec_ckpt
                << "\n";
        } else {
            log << "[train-codec] cached: " << codec_ckpt << "\n";
        }
        if (!fs::exists(percep_ckpt)) {
            auto scenes = data::make_scenes(detail::sub_seed(cfg.percep_seed, "percep.data"), cfg.percep_data_n);
            std::vector<TensorF> images;
            std::vector<int> labels;
            for (const auto& s : scenes) {
                images.push_back(s.image);
                labels.push_back(s.meta.label());
            }
            auto ex = percep::train_extractor(images, labels, cfg.percep_steps, cfg.percep_seed);
            detail::save_atomic(percep_ckpt, [&ex](const std::string& p) { ex.save(p); });
            log << "[train-codec] perceptual extractor: " << percep_ckpt << "\n";
        } else {
            log << "[train-codec] cached: " << percep_ckpt << "\n";
        }
    });
    if (upto == Phase::train_codec) return result;

    // shared read-only state for the per-seed phases; a load failure is blamed
    // on the phase that produced the artifact
    data::PairCorpus corpus_train = detail::phase_guard("collect", [&] { return data::load_corpus(train_dir); });
    data::PairCorpus corpus_eval = detail::phase_guard("collect", [&] { return data::load_corpus(eval_dir); });
    victim::VictimModel victim_model =
        detail::phase_guard("collect", [&] { return victim::VictimModel::load(victim_ckpt); });
    codec::Codec codec = detail::phase_guard("train-codec", [&] { return codec::Codec::load(codec_ckpt); });
    percep::FeatureExtractor extractor =
        detail::phase_guard("train-codec", [&] { return percep::FeatureExtractor::load(percep_ckpt); });
    auto classify = [&victim_model](const TensorF& img) { return victim_model.classify_full(img); };

    for (uint64_t seed : cfg.seeds) {
        const std::string sdir = dir + "/seed" + std::to_string(seed);
        fs::create_directories(sdir);
        const std::string align_ckpt = sdir + "/align.ckpt";
        const std::string bundle_path = sdir + "/bundle.fiab";

        detail::phase_guard("stage1", [&] {
            if (fs::exists(align_ckpt)) {
                log << "[stage1] cached: " << align_ckpt << "\n";
                return;
            }
            align::AlignConfig acfg;
            acfg.widths = cfg.stage1_widths;
            acfg.steps = cfg.stage1_steps;
            acfg.batch = cfg.stage1_batch;
            acfg.lr = cfg.stage1_lr;
            acfg.seed = seed;
            auto s1 = align::train_stage1(corpus_train, codec, acfg);
            detail::save_atomic(align_ckpt, [&s1](const std::string& p) { s1.net.save(p); });
            log << "[stage1] final loss " << fmt_g17(s1.loss_total.back()) << ": " << align_ckpt << "\n";
        });
        if (upto == Phase::stage1) continue;

        detail::phase_guard("stage2", [&] {
            if (fs::exists(bundle_path)) {
                log << "[stage2] cached: " << bundle_path << "\n";
                return;
            }
            align::AlignmentNet align_net = align::AlignmentNet::load(align_ckpt);
            flow::FlowConfig fcfg;
            fcfg.widths = cfg.stage2_widths;
            fcfg.emb_dim = cfg.stage2_emb_dim;
            fcfg.steps = cfg.stage2_steps;
            fcfg.batch = cfg.stage2_batch;
            fcfg.lr = cfg.stage2_lr;
            fcfg.seed = seed;
            auto s2 = flow::train_stage2(corpus_train, align_net, codec, extractor, fcfg);
            auto bundle = attack::make_bundle(std::move(align_net), std::move(s2.net), codec, cfg.victim_id, cfg.split,
                                              cfg.n_steps.front());
            detail::save_atomic(bundle_path, [&bundle](const std::string& p) { bundle.save(p); });
            log << "[stage2] final loss " << fmt_g17(s2.loss_total.back()) << ": " << bundle_path << "\n";
        });
        if (upto == Phase::stage2) continue;

        for (int n : cfg.n_steps) {
            const std::string ndir = sdir + "/steps" + std::to_string(n);
            const std::string inv_dir = ndir + "/inversions";
            const std::string report_path = ndir + "/report.json";

            detail::phase_guard("attack", [&] {
                if (fs::exists(inv_dir + "/index.json")) {
                    log << "[attack] cached: " << inv_dir << "\n";
                    return;
                }
                attack::AttackBundle bundle = attack::AttackBundle::load(bundle_path);
                write_inversions(bundle, corpus_eval, n, inv_dir);
                log << "[attack] " << corpus_eval.size() << " inversions, " << n << " step(s): " << inv_dir << "\n";
            });
            if (upto == Phase::attack) continue;

            eval::EvalReport report = detail::phase_guard("eval", [&] {
                if (fs::exists(report_path)) {
                    log << "[eval] cached: " << report_path << "\n";
                    return eval::EvalReport::load_json(report_path);
                }
                eval::EvalInputs in;
                in.originals = corpus_eval.images;
                in.inversions = read_inversions(inv_dir);
                in.metas = corpus_eval.manifest.scenes;
                in.classifier = classify;
                in.extractor = &extractor;
                in.metrics = eval::MetricSet::parse(cfg.metrics);
                in.orr_taus = cfg.orr_taus;
                auto describer = detail::make_describer(cfg.describer, corpus_eval);
                in.describer = describer.get();
                in.provenance.bundle_digest = Sha256::hex(read_file_bytes(bundle_path));
                in.provenance.corpus_manifest = corpus_eval.manifest;
                in.provenance.n_steps = n;
                in.provenance.config_hash = cfg.hash();
                in.provenance.seed = seed;
                eval::EvalReport rep = eval::run_eval(in);
                fs::create_directories(ndir);
                detail::save_atomic(report_path, [&rep](const std::string& p) { rep.save_json(p); });
                rep.save_csv(ndir + "/report.csv");
                log << "[eval] " << report_path << "\n";
                return rep;
            });
            result.reports.push_back(std::move(report));
            result.report_paths.push_back(report_path);
        }
    }
    return result;
}

// ---- summary emission --------------------------------------------------

struct SummaryTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string csv() const {
        std::string out = join(header);
        for (const auto& r : rows) out += join(r);
        return out;
    }

    std::string text() const {
        std::vector<size_t> width(header.size());
        auto widen = [&width](const std::vector<std::string>& cells) {
            for (size_t i = 0; i < cells.size(); ++i) width[i] = std::max(width[i], cells[i].size());
        };
        widen(header);
        for (const auto& r : rows) widen(r);
        std::string out;
        auto line = [&](const std::vector<std::string>& cells) {
            for (size_t i = 0; i < cells.size(); ++i) {
                out += cells[i];
                if (i + 1 < cells.size()) out += std::string(width[i] - cells[i].size() + 2, ' ');
            }
            out += "\n";
        };
        line(header);
        for (const auto& r : rows) line(r);
        return out;
    }

private:
    static std::string join(const std::vector<std::string>& cells) {
        std::string out;
        for (size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
        return out + "\n";
    }
};

// One row per report; columns in fixed order, ORR columns as the sorted union
// of thresholds across reports. Empty cell = metric not computed.
inline SummaryTable emit_summary(const std::vector<eval::EvalReport>& reports) {
    if (reports.empty()) throw InputError("emit_summary: no reports");
    for (const auto& r : reports)
        if (r.schema_version != reports.front().schema_version)
            throw VersionError("summary over mixed report schema versions (" +
                               std::to_string(reports.front().schema_version) + " vs " +
                               std::to_string(r.schema_version) + ")");
    std::vector<double> taus;
    for (const auto& r : reports)
        for (double t : r.orr_taus)
            if (std::find(taus.begin(), taus.end(), t) == taus.end()) taus.push_back(t);
    std::sort(taus.begin(), taus.end());

    SummaryTable tbl;
    tbl.header = {"config",   "seed",    "n_steps", "n",       "psnr_mean",    "ssim_mean",
                  "perc_mean", "acc_pct", "lvlm_c_pct", "lvlm_pl_mean", "describer_failures"};
    for (double t : taus) tbl.header.push_back("orr_pct@" + fmt_g17(t));

    for (const auto& r : reports) {
        auto opt = [](double v) { return std::isnan(v) ? std::string() : fmt_g17(v); };
        std::vector<std::string> row = {r.provenance.config_hash.substr(0, 12),
                                        std::to_string(r.provenance.seed),
                                        std::to_string(r.provenance.n_steps),
                                        std::to_string(r.aggregates.n),
                                        opt(r.aggregates.psnr_mean),
                                        opt(r.aggregates.ssim_mean),
                                        opt(r.aggregates.perceptual_mean),
                                        opt(r.aggregates.acc_pct),
                                        opt(r.aggregates.lvlm_c_pct),
                                        opt(r.aggregates.lvlm_pl_mean),
                                        std::to_string(r.aggregates.describer_failures)};
        for (double t : taus) {
            std::string cell;
            for (size_t i = 0; i < r.orr_taus.size(); ++i)
                if (r.orr_taus[i] == t && i < r.aggregates.orr_pct.size()) cell = fmt_g17(r.aggregates.orr_pct[i]);
            row.push_back(cell);
        }
        tbl.rows.push_back(std::move(row));
    }
    return tbl;
}

inline SummaryTable parse_summary_csv(const std::string& csv_text) {
    SummaryTable tbl;
    size_t pos = 0;
    bool first = true;
    while (pos < csv_text.size()) {
        size_t nl = csv_text.find('\n', pos);
        std::string line = csv_text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? csv_text.size() : nl + 1;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                cells.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        cells.push_back(cur);
        if (first) {
            tbl.header = std::move(cells);
            first = false;
        } else {
            if (cells.size() != tbl.header.size()) throw ConsistencyError("summary csv row width disagrees with header");
            tbl.rows.push_back(std::move(cells));
        }
    }
    if (tbl.header.empty()) throw InputError("parse_summary_csv: empty input");
    return tbl;
}

}  // namespace runner
}  // namespace fia
