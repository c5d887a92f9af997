#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "fia/core/rng.hpp"
#include "fia/core/tensor.hpp"

// Defense configuration and the feature-side transforms. Deliberately split
// from the victim models: corpus manifests record the defense they were
// collected under, and nothing in here touches model parameters, so
// attacker-side code may include this header without crossing the black-box
// boundary.
namespace fia {
namespace victim {

struct DefenseConfig {
    enum class Kind { none, laplace, suppress };
    Kind kind = Kind::none;
    double laplace_scale = 0.0;
    double keep_ratio = 1.0;

    bool operator==(const DefenseConfig& o) const {
        return kind == o.kind && laplace_scale == o.laplace_scale && keep_ratio == o.keep_ratio;
    }

    std::string str() const {
        switch (kind) {
            case Kind::none: return "none";
            case Kind::laplace: return "laplace:" + std::to_string(laplace_scale);
            case Kind::suppress: return "suppress:" + std::to_string(keep_ratio);
        }
        return "none";
    }

    static DefenseConfig parse(const std::string& s) {
        DefenseConfig d;
        auto colon = s.find(':');
        std::string kind = s.substr(0, colon);
        std::string arg = colon == std::string::npos ? "" : s.substr(colon + 1);
        if (kind == "none") {
            d.kind = Kind::none;
        } else if (kind == "laplace") {
            d.kind = Kind::laplace;
            d.laplace_scale = arg.empty() ? 0.5 : std::stod(arg);
            if (d.laplace_scale < 0) throw ParameterError("laplace scale must be nonnegative");
        } else if (kind == "suppress") {
            d.kind = Kind::suppress;
            d.keep_ratio = arg.empty() ? 0.5 : std::stod(arg);
            if (d.keep_ratio <= 0 || d.keep_ratio > 1) throw ParameterError("keep ratio must be in (0,1]");
        } else {
            throw ParameterError("unknown defense kind '" + kind + "' (expected none, laplace:<b>, suppress:<keep>)");
        }
        return d;
    }
};

inline void to_json(nlohmann::json& j, const DefenseConfig& d) {
    j = {{"kind", d.kind == DefenseConfig::Kind::none        ? "none"
                  : d.kind == DefenseConfig::Kind::laplace   ? "laplace"
                                                             : "suppress"},
         {"laplace_scale", d.laplace_scale},
         {"keep_ratio", d.keep_ratio}};
}
inline void from_json(const nlohmann::json& j, DefenseConfig& d) {
    std::string k = j.at("kind");
    d.kind = k == "none"      ? DefenseConfig::Kind::none
             : k == "laplace" ? DefenseConfig::Kind::laplace
                              : DefenseConfig::Kind::suppress;
    d.laplace_scale = j.at("laplace_scale");
    d.keep_ratio = j.at("keep_ratio");
}

// Zero the ceil((1-keep_ratio)*C) channels with the lowest mean |activation|
// (ties broken toward the lower channel index). f is a single (C,H,W) feature.
inline TensorF apply_suppress(const TensorF& f, double keep_ratio) {
    if (keep_ratio <= 0 || keep_ratio > 1) throw ParameterError("keep ratio must be in (0,1]");
    if (f.ndim() != 3) throw InputError("apply_suppress: expected (C,H,W), got " + shape_str(f.shape));
    int c_ = f.size(0), hw = f.size(1) * f.size(2);
    int drop = static_cast<int>(std::ceil((1.0 - keep_ratio) * c_));
    if (drop <= 0) return f;
    std::vector<std::pair<double, int>> mag(static_cast<size_t>(c_));
    for (int c = 0; c < c_; ++c) {
        double acc = 0;
        for (int i = 0; i < hw; ++i) acc += std::abs(static_cast<double>(f.data[static_cast<size_t>(c) * hw + i]));
        mag[static_cast<size_t>(c)] = {acc / hw, c};
    }
    std::sort(mag.begin(), mag.end());
    TensorF out = f;
    for (int k = 0; k < drop; ++k) {
        int c = mag[static_cast<size_t>(k)].second;
        std::fill_n(&out.data[static_cast<size_t>(c) * hw], hw, 0.0f);
    }
    return out;
}

inline TensorF apply_defense(const TensorF& f, const DefenseConfig& d, Rng& rng) {
    switch (d.kind) {
        case DefenseConfig::Kind::none: return f;
        case DefenseConfig::Kind::laplace: {
            TensorF out = f;
            for (auto& v : out.data) v += static_cast<float>(rng.laplace(d.laplace_scale));
            return out;
        }
        case DefenseConfig::Kind::suppress: return apply_suppress(f, d.keep_ratio);
    }
    return f;
}

}  // namespace victim
}  // namespace fia
