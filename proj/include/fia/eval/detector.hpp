#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "fia/core/error.hpp"
#include "fia/core/tensor.hpp"
#include "fia/data/scenes.hpp"

// Object-level leakage scoring. Detections are matched greedily per class
// under an IoU threshold; the desk detector reads ground truth for source
// scenes and falls back to color segmentation + shape templates for
// reconstructed images, which is as much detector as 64x64 blobs deserve.
namespace fia {
namespace eval {

struct Detection {
    int class_id = 0;
    std::array<double, 4> box{};  // x1, y1, x2, y2
    double score = 1.0;
};

using DetectionSet = std::vector<Detection>;

inline void check_box(const Detection& d) {
    if (!(d.box[0] < d.box[2]) || !(d.box[1] < d.box[3]))
        throw InputError("detection box is degenerate (needs x1<x2 and y1<y2)");
    if (!(d.score >= 0.0 && d.score <= 1.0)) throw InputError("detection score outside [0,1]");
}

inline double iou(const Detection& a, const Detection& b) {
    check_box(a);
    check_box(b);
    double ix = std::max(0.0, std::min(a.box[2], b.box[2]) - std::max(a.box[0], b.box[0]));
    double iy = std::max(0.0, std::min(a.box[3], b.box[3]) - std::max(a.box[1], b.box[1]));
    double inter = ix * iy;
    double area_a = (a.box[2] - a.box[0]) * (a.box[3] - a.box[1]);
    double area_b = (b.box[2] - b.box[0]) * (b.box[3] - b.box[1]);
    return inter / (area_a + area_b - inter);
}

// Greedy matching: walk the reference objects by descending score (ties by
// list order) and give each the unmatched same-class candidate with the
// highest IoU, provided it clears the threshold. Returns the match count.
inline int matched_count(const DetectionSet& reference, const DetectionSet& candidate, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ParameterError("IoU threshold must lie in (0,1), got " + std::to_string(tau));
    for (const auto& d : reference) check_box(d);
    for (const auto& d : candidate) check_box(d);

    std::vector<size_t> order(reference.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return reference[a].score > reference[b].score; });

    std::vector<bool> used(candidate.size(), false);
    int matched = 0;
    for (size_t r : order) {
        double best = -1.0;
        size_t best_j = candidate.size();
        for (size_t j = 0; j < candidate.size(); ++j) {
            if (used[j] || candidate[j].class_id != reference[r].class_id) continue;
            double v = iou(reference[r], candidate[j]);
            if (v > best) {
                best = v;
                best_j = j;
            }
        }
        if (best_j < candidate.size() && best >= tau) {
            used[best_j] = true;
            ++matched;
        }
    }
    return matched;
}

// percentage of reference objects recovered; an empty reference leaks nothing
// and scores 100 by definition
inline double orr(const DetectionSet& reference, const DetectionSet& candidate, double tau) {
    if (reference.empty()) {
        if (!(tau > 0.0 && tau < 1.0)) throw ParameterError("IoU threshold must lie in (0,1)");
        return 100.0;
    }
    return 100.0 * matched_count(reference, candidate, tau) / static_cast<double>(reference.size());
}

// ground-truth detections for a scene we generated ourselves
inline DetectionSet detect_scene(const data::SceneMeta& meta) {
    DetectionSet out;
    for (const auto& o : meta.objects) {
        Detection d;
        d.class_id = o.shape * data::kNumColors + o.color;
        auto bb = o.bbox();
        d.box = {bb[0], bb[1], bb[2], bb[3]};
        d.score = 1.0;
        out.push_back(d);
    }
    return out;
}

namespace detail {

// nearest palette color if the pixel is saturated enough, else -1
inline int pixel_color(const TensorF& img, int y, int x) {
    double best = 1e9;
    int who = -1;
    for (int c = 0; c < data::kNumColors; ++c) {
        auto rgb = data::color_rgb(c);
        double d = 0;
        for (int ch = 0; ch < 3; ++ch) {
            double e = static_cast<double>(img.at(ch, y, x)) - rgb[static_cast<size_t>(ch)];
            d += e * e;
        }
        if (d < best) {
            best = d;
            who = c;
        }
    }
    return best < 0.81 ? who : -1;  // within 0.9 of a palette entry
}

struct Component {
    std::vector<int> pixels;  // y * W + x
    int min_x = 1 << 30, min_y = 1 << 30, max_x = -1, max_y = -1;
};

inline float shape_radius_from_box(int shape, double w, double h) {
    switch (shape) {
        case 1: return static_cast<float>((w + h) / (2 * 1.7));
        case 2: return static_cast<float>((w + h) / 3.6);
        default: return static_cast<float>((w + h) / 4.0);
    }
}

}  // namespace detail

// Color segmentation into connected components, then pick the analytic shape
// template with the best pixel-mask IoU. Scores are that IoU, so clean
// renders score near 1 and mush scores low.
inline DetectionSet detect_image(const TensorF& image, int min_area = 15) {
    if (image.ndim() != 3 || image.size(0) != 3) throw InputError("detect_image: expected a (3,H,W) image");
    int h = image.size(1), w = image.size(2);

    std::vector<int> color(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) color[static_cast<size_t>(y) * w + x] = detail::pixel_color(image, y, x);

    DetectionSet out;
    std::vector<bool> seen(color.size(), false);
    for (int start = 0; start < h * w; ++start) {
        if (seen[static_cast<size_t>(start)] || color[static_cast<size_t>(start)] < 0) continue;
        int col = color[static_cast<size_t>(start)];
        detail::Component comp;
        std::vector<int> queue{start};
        seen[static_cast<size_t>(start)] = true;
        while (!queue.empty()) {
            int p = queue.back();
            queue.pop_back();
            comp.pixels.push_back(p);
            int py = p / w, px = p % w;
            comp.min_x = std::min(comp.min_x, px);
            comp.max_x = std::max(comp.max_x, px);
            comp.min_y = std::min(comp.min_y, py);
            comp.max_y = std::max(comp.max_y, py);
            const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                int ny = py + dy[k], nx = px + dx[k];
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                size_t q = static_cast<size_t>(ny) * w + nx;
                if (seen[q] || color[q] != col) continue;
                seen[q] = true;
                queue.push_back(static_cast<int>(q));
            }
        }
        if (static_cast<int>(comp.pixels.size()) < min_area) continue;

        double bw = comp.max_x - comp.min_x + 1, bh = comp.max_y - comp.min_y + 1;
        double cx = (comp.min_x + comp.max_x + 1) / 2.0, cy = (comp.min_y + comp.max_y + 1) / 2.0;
        int best_shape = 0;
        double best_iou = -1.0;
        for (int shape = 0; shape < data::kNumShapes; ++shape) {
            data::SceneObject probe;
            probe.shape = shape;
            probe.radius = detail::shape_radius_from_box(shape, bw, bh);
            probe.cx = static_cast<float>(cx) - 0.5f;
            probe.cy = static_cast<float>(cy) - 0.5f;
            if (shape == 2) probe.cy += 0.1f * probe.radius;  // triangle box sits off-center
            // mask IoU over the union's bounding region
            auto bb = probe.bbox();
            int x0 = std::min(comp.min_x, std::max(0, static_cast<int>(bb[0])));
            int x1 = std::max(comp.max_x, std::min(w - 1, static_cast<int>(bb[2]) + 1));
            int y0 = std::min(comp.min_y, std::max(0, static_cast<int>(bb[1])));
            int y1 = std::max(comp.max_y, std::min(h - 1, static_cast<int>(bb[3]) + 1));
            std::vector<bool> in_comp(static_cast<size_t>((y1 - y0 + 1)) * (x1 - x0 + 1), false);
            for (int p : comp.pixels) {
                int py = p / w, px = p % w;
                in_comp[static_cast<size_t>(py - y0) * (x1 - x0 + 1) + (px - x0)] = true;
            }
            int inter = 0, uni = 0;
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    bool a = in_comp[static_cast<size_t>(y - y0) * (x1 - x0 + 1) + (x - x0)];
                    bool b = data::detail::object_coverage(probe, static_cast<float>(x), static_cast<float>(y)) > 0.5f;
                    inter += a && b;
                    uni += a || b;
                }
            double v = uni > 0 ? static_cast<double>(inter) / uni : 0.0;
            if (v > best_iou) {
                best_iou = v;
                best_shape = shape;
            }
        }

        Detection d;
        d.class_id = best_shape * data::kNumColors + col;
        d.box = {static_cast<double>(comp.min_x), static_cast<double>(comp.min_y), comp.max_x + 1.0, comp.max_y + 1.0};
        d.score = std::max(0.0, std::min(1.0, best_iou));
        out.push_back(d);
    }

    // highest-confidence first, deterministic tie-break on geometry
    std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return out;
}

// assemble a text description from detections, largest object first,
// mirroring the phrasing of the scene generator
inline std::string describe_detections(const DetectionSet& dets) {
    if (dets.empty()) return "nothing recognizable";
    std::vector<size_t> order(dets.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        double aa = (dets[a].box[2] - dets[a].box[0]) * (dets[a].box[3] - dets[a].box[1]);
        double ab = (dets[b].box[2] - dets[b].box[0]) * (dets[b].box[3] - dets[b].box[1]);
        return aa > ab;
    });
    std::string out;
    for (size_t i = 0; i < order.size(); ++i) {
        if (i) out += i + 1 == order.size() ? " and " : ", ";
        const auto& d = dets[order[i]];
        out += std::string(data::color_name(d.class_id % data::kNumColors)) + " " +
               data::shape_name(d.class_id / data::kNumColors);
    }
    return out;
}

}  // namespace eval
}  // namespace fia
