#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "fia/core/bytes.hpp"
#include "fia/core/error.hpp"
#include "fia/core/sha256.hpp"
#include "fia/eval/report.hpp"
#include "fia/victim/defense.hpp"
#include "fia/victim/victim.hpp"

// Experiment configuration: a flat dotted-key text format, a canonical
// serialization, and a SHA-256 hash over it. The hash prefixes every artifact
// path the runner produces, so two configs can never clobber each other.
namespace fia {
namespace runner {

// shortest representation that round-trips a double through strtod
inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct ExperimentConfig {
    // victim side
    std::string victim_id = "small_cnn";
    std::string split = "mid";
    int victim_steps = 1200;
    int victim_data_n = 768;
    uint64_t victim_seed = 11;
    victim::DefenseConfig defense;  // applied by the oracle at query time

    // attacker side
    bool train_on_defended = true;  // collect the training corpus through the defense too
    std::vector<int> n_steps = {1};
    int n_train = 512, n_eval = 128;
    uint64_t corpus_seed = 7;
    int codec_steps = 3000, codec_data_n = 704;
    uint64_t codec_seed = 21;
    int percep_steps = 600, percep_data_n = 512;
    uint64_t percep_seed = 31;
    int stage1_steps = 5000, stage1_batch = 8;
    double stage1_lr = 1e-4;
    std::vector<int> stage1_widths = {64, 128, 256};
    int stage2_steps = 5000, stage2_batch = 8;
    double stage2_lr = 1e-4;
    std::vector<int> stage2_widths = {48, 96, 128};
    int stage2_emb_dim = 64;

    // evaluation
    std::vector<uint64_t> seeds = {1, 2, 3};
    std::string out_dir = "runs";
    std::string describer = "mock";  // mock | endpoint:<host>:<port>
    std::string metrics = "psnr,ssim,perc,acc,lvlm,orr";
    std::vector<double> orr_taus = {0.5, 0.75};

    // canonical text: every key, fixed order, round-trippable values
    std::string to_text() const {
        std::string s;
        auto put = [&s](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
        auto ints = [](const std::vector<int>& xs) {
            std::string v;
            for (int x : xs) v += (v.empty() ? "" : ",") + std::to_string(x);
            return v;
        };
        auto u64s = [](const std::vector<uint64_t>& xs) {
            std::string v;
            for (uint64_t x : xs) v += (v.empty() ? "" : ",") + std::to_string(x);
            return v;
        };
        auto dbls = [](const std::vector<double>& xs) {
            std::string v;
            for (double x : xs) v += (v.empty() ? "" : ",") + fmt_g17(x);
            return v;
        };
        put("victim.id", victim_id);
        put("victim.split", split);
        put("victim.steps", std::to_string(victim_steps));
        put("victim.data_n", std::to_string(victim_data_n));
        put("victim.seed", std::to_string(victim_seed));
        put("defense", defense.str());
        put("attack.train_on_defended", train_on_defended ? "true" : "false");
        put("attack.n_steps", ints(n_steps));
        put("corpus.n_train", std::to_string(n_train));
        put("corpus.n_eval", std::to_string(n_eval));
        put("corpus.seed", std::to_string(corpus_seed));
        put("codec.steps", std::to_string(codec_steps));
        put("codec.data_n", std::to_string(codec_data_n));
        put("codec.seed", std::to_string(codec_seed));
        put("percep.steps", std::to_string(percep_steps));
        put("percep.data_n", std::to_string(percep_data_n));
        put("percep.seed", std::to_string(percep_seed));
        put("stage1.steps", std::to_string(stage1_steps));
        put("stage1.batch", std::to_string(stage1_batch));
        put("stage1.lr", fmt_g17(stage1_lr));
        put("stage1.widths", ints(stage1_widths));
        put("stage2.steps", std::to_string(stage2_steps));
        put("stage2.batch", std::to_string(stage2_batch));
        put("stage2.lr", fmt_g17(stage2_lr));
        put("stage2.widths", ints(stage2_widths));
        put("stage2.emb_dim", std::to_string(stage2_emb_dim));
        put("seeds", u64s(seeds));
        put("out.dir", out_dir);
        put("eval.describer", describer);
        put("eval.metrics", metrics);
        put("eval.orr_taus", dbls(orr_taus));
        return s;
    }

    std::string hash() const { return Sha256::hex(to_text()); }
    std::string tag() const { return hash().substr(0, 12); }

    void validate() const {
        victim::make_spec(victim_id, split);  // RegistryError on bad id/split
        if (victim_steps < 1 || victim_data_n < 1) throw ConfigError("victim budgets must be positive");
        if (n_train < 1 || n_eval < 1) throw ConfigError("corpus sizes must be positive");
        if (codec_steps < 1 || percep_steps < 1 || stage1_steps < 1 || stage2_steps < 1)
            throw ConfigError("training budgets must be positive");
        if (stage1_batch < 1 || stage2_batch < 1) throw ConfigError("batch sizes must be positive");
        if (stage1_lr <= 0 || stage2_lr <= 0) throw ConfigError("learning rates must be positive");
        if (n_steps.empty()) throw ConfigError("attack.n_steps must list at least one step count");
        for (int n : n_steps)
            if (n < 1) throw ConfigError("attack.n_steps entries must be >= 1");
        if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
        if (out_dir.empty()) throw ConfigError("out.dir must not be empty");
        if (describer != "mock" && describer.rfind("endpoint:", 0) != 0)
            throw ConfigError("eval.describer must be 'mock' or 'endpoint:<host>:<port>'");
        eval::MetricSet::parse(metrics);
        for (double t : orr_taus)
            if (!(t > 0.0 && t < 1.0)) throw ConfigError("eval.orr_taus entries must lie in (0,1)");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline long long to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        long long n = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
    }
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : v) {
        if (ch == ',') {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    parts.push_back(trim(cur));
    return parts;
}

}  // namespace detail

// key = value lines; '#' starts a comment; later lines override earlier ones,
// so presets can be expressed as a base text plus appended overrides
inline ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::string line;
    size_t pos = 0, lineno = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " has no '=': " + line);
        std::string key = detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));
        auto ints = [&key, &val] {
            std::vector<int> out;
            for (const auto& p : detail::split_list(val)) out.push_back(static_cast<int>(detail::to_int(key, p)));
            return out;
        };
        try {
            if (key == "victim.id") cfg.victim_id = val;
            else if (key == "victim.split") cfg.split = val;
            else if (key == "victim.steps") cfg.victim_steps = static_cast<int>(detail::to_int(key, val));
            else if (key == "victim.data_n") cfg.victim_data_n = static_cast<int>(detail::to_int(key, val));
            else if (key == "victim.seed") cfg.victim_seed = static_cast<uint64_t>(detail::to_int(key, val));
            else if (key == "defense") cfg.defense = victim::DefenseConfig::parse(val);
            else if (key == "attack.train_on_defended") cfg.train_on_defended = detail::to_bool(key, val);
            else if (key == "attack.n_steps") cfg.n_steps = ints();
            else if (key == "corpus.n_train") cfg.n_train = static_cast<int>(detail::to_int(key, val));
            else if (key == "corpus.n_eval") cfg.n_eval = static_cast<int>(detail::to_int(key, val));
            else if (key == "corpus.seed") cfg.corpus_seed = static_cast<uint64_t>(detail::to_int(key, val));
            else if (key == "codec.steps") cfg.codec_steps = static_cast<int>(detail::to_int(key, val));
            else if (key == "codec.data_n") cfg.codec_data_n = static_cast<int>(detail::to_int(key, val));
            else if (key == "codec.seed") cfg.codec_seed = static_cast<uint64_t>(detail::to_int(key, val));
            else if (key == "percep.steps") cfg.percep_steps = static_cast<int>(detail::to_int(key, val));
            else if (key == "percep.data_n") cfg.percep_data_n = static_cast<int>(detail::to_int(key, val));
            else if (key == "percep.seed") cfg.percep_seed = static_cast<uint64_t>(detail::to_int(key, val));
            else if (key == "stage1.steps") cfg.stage1_steps = static_cast<int>(detail::to_int(key, val));
            else if (key == "stage1.batch") cfg.stage1_batch = static_cast<int>(detail::to_int(key, val));
            else if (key == "stage1.lr") cfg.stage1_lr = detail::to_double(key, val);
            else if (key == "stage1.widths") cfg.stage1_widths = ints();
            else if (key == "stage2.steps") cfg.stage2_steps = static_cast<int>(detail::to_int(key, val));
            else if (key == "stage2.batch") cfg.stage2_batch = static_cast<int>(detail::to_int(key, val));
            else if (key == "stage2.lr") cfg.stage2_lr = detail::to_double(key, val);
            else if (key == "stage2.widths") cfg.stage2_widths = ints();
            else if (key == "stage2.emb_dim") cfg.stage2_emb_dim = static_cast<int>(detail::to_int(key, val));
            else if (key == "seeds") {
                cfg.seeds.clear();
                for (const auto& p : detail::split_list(val))
                    cfg.seeds.push_back(static_cast<uint64_t>(detail::to_int(key, p)));
            } else if (key == "out.dir") cfg.out_dir = val;
            else if (key == "eval.describer") cfg.describer = val;
            else if (key == "eval.metrics") cfg.metrics = val;
            else if (key == "eval.orr_taus") {
                cfg.orr_taus.clear();
                for (const auto& p : detail::split_list(val)) cfg.orr_taus.push_back(detail::to_double(key, p));
            } else {
                throw ConfigError("unknown config key '" + key + "'");
            }
        } catch (const ParameterError& e) {
            throw ConfigError("config key '" + key + "': " + e.what());
        }
    }
    return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) { return parse_config_text(read_file_text(path)); }

// The paper-table analogues: each preset is a base config plus the one knob
// the table sweeps. "steps" sweeps within a single config (same bundle,
// several sampler budgets); the others produce one config per setting.
inline std::vector<ExperimentConfig> preset_configs(const std::string& name, ExperimentConfig base = {}) {
    std::vector<ExperimentConfig> out;
    if (name == "baseline") {
        out.push_back(base);
    } else if (name == "defense") {
        base.train_on_defended = false;
        for (double b : {0.0, 0.25, 0.5}) {
            ExperimentConfig c = base;
            c.defense.kind = victim::DefenseConfig::Kind::laplace;
            c.defense.laplace_scale = b;
            out.push_back(c);
        }
    } else if (name == "data-efficiency") {
        for (int n : {128, 256, 512}) {
            ExperimentConfig c = base;
            c.n_train = n;
            out.push_back(c);
        }
    } else if (name == "steps") {
        base.n_steps = {1, 5, 10};
        out.push_back(base);
    } else {
        throw ParameterError("unknown preset '" + name + "' (expected baseline, defense, data-efficiency, steps)");
    }
    for (auto& c : out) c.validate();
    return out;
}

}  // namespace runner
}  // namespace fia
