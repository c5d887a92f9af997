#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "fia/core/rng.hpp"
#include "fia/core/tensor.hpp"

// Procedural 64x64 scenes: a few solid geometric objects over a smooth
// textured background. Every image carries full ground-truth metadata
// (shapes, colors, boxes), which downstream stands in for human labels,
// detector output and describer text.
namespace fia {
namespace data {

constexpr int kImageSize = 64;
constexpr int kNumShapes = 4;
constexpr int kNumColors = 6;
constexpr int kNumClasses = kNumShapes * kNumColors;

inline const char* shape_name(int s) {
    static const char* names[kNumShapes] = {"circle", "square", "triangle", "cross"};
    return names[s];
}

inline const char* color_name(int c) {
    static const char* names[kNumColors] = {"red", "green", "blue", "yellow", "magenta", "cyan"};
    return names[c];
}

inline std::array<float, 3> color_rgb(int c) {
    static const float table[kNumColors][3] = {
        {0.9f, -0.9f, -0.9f}, {-0.9f, 0.9f, -0.9f}, {-0.9f, -0.9f, 0.9f},
        {0.9f, 0.9f, -0.9f},  {0.9f, -0.9f, 0.9f},  {-0.9f, 0.9f, 0.9f},
    };
    return {table[c][0], table[c][1], table[c][2]};
}

struct SceneObject {
    int shape = 0, color = 0;
    float cx = 0, cy = 0, radius = 0;

    // tight box around the drawn pixels
    std::array<float, 4> bbox() const {
        float hx = radius, hy = radius;
        if (shape == 1) hx = hy = 0.85f * radius;
        if (shape == 2) {  // apex-up triangle
            hx = 0.9f * radius;
            return {cx - hx, cy - radius, cx + hx, cy + 0.8f * radius};
        }
        return {cx - hx, cy - hy, cx + hx, cy + hy};
    }
};

struct SceneMeta {
    uint64_t scene_id = 0;
    std::vector<SceneObject> objects;  // sorted by radius descending; [0] is the primary object

    int label() const { return objects.at(0).shape * kNumColors + objects.at(0).color; }

    std::string description() const {
        std::string out;
        for (size_t i = 0; i < objects.size(); ++i) {
            if (i) out += i + 1 == objects.size() ? " and " : ", ";
            out += std::string(color_name(objects[i].color)) + " " + shape_name(objects[i].shape);
        }
        return out;
    }
};

inline void to_json(nlohmann::json& j, const SceneObject& o) {
    j = {{"shape", o.shape}, {"color", o.color}, {"cx", o.cx}, {"cy", o.cy}, {"radius", o.radius}};
}
inline void from_json(const nlohmann::json& j, SceneObject& o) {
    o.shape = j.at("shape");
    o.color = j.at("color");
    o.cx = j.at("cx");
    o.cy = j.at("cy");
    o.radius = j.at("radius");
}
inline void to_json(nlohmann::json& j, const SceneMeta& m) { j = {{"scene_id", m.scene_id}, {"objects", m.objects}}; }
inline void from_json(const nlohmann::json& j, SceneMeta& m) {
    m.scene_id = j.at("scene_id");
    m.objects = j.at("objects").get<std::vector<SceneObject>>();
}

struct Scene {
    TensorF image;  // (3, 64, 64) in [-1, 1]
    SceneMeta meta;
};

namespace detail {

// coverage of a pixel-sized region by an object, 2x2 supersampled
inline float object_coverage(const SceneObject& o, float px, float py) {
    int hits = 0;
    for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
            float x = px + 0.25f + 0.5f * sx - o.cx;
            float y = py + 0.25f + 0.5f * sy - o.cy;
            bool in = false;
            switch (o.shape) {
                case 0: in = x * x + y * y <= o.radius * o.radius; break;
                case 1: in = std::max(std::abs(x), std::abs(y)) <= 0.85f * o.radius; break;
                case 2: in = y <= 0.8f * o.radius && y >= -o.radius && std::abs(x) <= 0.45f * (y + o.radius); break;
                case 3:
                    in = (std::abs(x) <= 0.33f * o.radius && std::abs(y) <= o.radius) ||
                         (std::abs(y) <= 0.33f * o.radius && std::abs(x) <= o.radius);
                    break;
            }
            hits += in;
        }
    return static_cast<float>(hits) / 4.0f;
}

}  // namespace detail

inline Scene make_scene(uint64_t seed) {
    Rng rng(seed);
    Scene s;
    s.meta.scene_id = seed;
    s.image = TensorF({3, kImageSize, kImageSize});

    // background: dim base tone + two low-frequency waves + light grain
    float base[3], amp[3][2], fx[3][2], fy[3][2], ph[3][2];
    for (int c = 0; c < 3; ++c) {
        base[c] = static_cast<float>(rng.uniform(-0.55, -0.15));
        for (int k = 0; k < 2; ++k) {
            amp[c][k] = static_cast<float>(rng.uniform(0.04, 0.12));
            fx[c][k] = static_cast<float>(rng.uniform(0.5, 2.5));
            fy[c][k] = static_cast<float>(rng.uniform(0.5, 2.5));
            ph[c][k] = static_cast<float>(rng.uniform(0.0, 6.283185));
        }
    }
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < kImageSize; ++y)
            for (int x = 0; x < kImageSize; ++x) {
                float v = base[c];
                for (int k = 0; k < 2; ++k)
                    v += amp[c][k] * std::cos(6.283185f * (fx[c][k] * x + fy[c][k] * y) / kImageSize + ph[c][k]);
                v += static_cast<float>(rng.normal()) * 0.02f;
                s.image.at(c, y, x) = std::max(-1.0f, std::min(1.0f, v));
            }

    // 2-4 objects, rejection-sampled so centers keep some separation
    int count = 2 + static_cast<int>(rng.below(3));
    for (int i = 0; i < count; ++i) {
        SceneObject o;
        for (int attempt = 0; attempt < 50; ++attempt) {
            o.radius = static_cast<float>(rng.uniform(6.0, 13.0));
            o.cx = static_cast<float>(rng.uniform(o.radius + 2.0, kImageSize - o.radius - 2.0));
            o.cy = static_cast<float>(rng.uniform(o.radius + 2.0, kImageSize - o.radius - 2.0));
            bool ok = true;
            for (const auto& prev : s.meta.objects) {
                float dx = prev.cx - o.cx, dy = prev.cy - o.cy;
                if (std::sqrt(dx * dx + dy * dy) < 0.8f * (prev.radius + o.radius)) ok = false;
            }
            if (ok) break;
        }
        o.shape = static_cast<int>(rng.below(kNumShapes));
        o.color = static_cast<int>(rng.below(kNumColors));
        s.meta.objects.push_back(o);
    }
    std::stable_sort(s.meta.objects.begin(), s.meta.objects.end(),
                     [](const SceneObject& a, const SceneObject& b) { return a.radius > b.radius; });

    for (const auto& o : s.meta.objects) {
        auto rgb = color_rgb(o.color);
        auto bb = o.bbox();
        int x0 = std::max(0, static_cast<int>(bb[0]) - 1), x1 = std::min(kImageSize - 1, static_cast<int>(bb[2]) + 1);
        int y0 = std::max(0, static_cast<int>(bb[1]) - 1), y1 = std::min(kImageSize - 1, static_cast<int>(bb[3]) + 1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                float cov = detail::object_coverage(o, static_cast<float>(x), static_cast<float>(y));
                if (cov <= 0) continue;
                for (int c = 0; c < 3; ++c) s.image.at(c, y, x) = (1 - cov) * s.image.at(c, y, x) + cov * rgb[c];
            }
    }
    return s;
}

inline std::vector<Scene> make_scenes(uint64_t seed, int count) {
    Rng base(seed);
    std::vector<Scene> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(make_scene(base.fork("scene." + std::to_string(i)).next_u64()));
    return out;
}

}  // namespace data
}  // namespace fia
