#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "fia/core/tensor.hpp"

namespace fia {
namespace eval {

// 10*log10(range^2 / MSE), capped at 100 dB for (near-)identical images.
inline double psnr(const TensorF& a, const TensorF& b, double range = 2.0) {
    if (!a.same_shape(b)) throw InputError("psnr: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double mse = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(range * range / mse);
}

// Rec.601 luminance of a (3,H,W) image; values stay in the input range.
inline TensorF luminance(const TensorF& img) {
    if (img.ndim() != 3 || img.size(0) != 3) throw InputError("luminance: expected (3,H,W)");
    int h = img.size(1), w = img.size(2);
    TensorF y({h, w});
    for (int i = 0; i < h * w; ++i)
        y.data[static_cast<size_t>(i)] = 0.299f * img.data[static_cast<size_t>(i)] +
                                         0.587f * img.data[static_cast<size_t>(i) + static_cast<size_t>(h) * w] +
                                         0.114f * img.data[static_cast<size_t>(i) + 2 * static_cast<size_t>(h) * w];
    return y;
}

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<size_t>(size));
    double sum = 0, c = (size - 1) / 2.0;
    for (int i = 0; i < size; ++i) {
        w[static_cast<size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
        sum += w[static_cast<size_t>(i)];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// Mean local SSIM over the luminance channel: 11x11 Gaussian window
// (sigma 1.5), K1=0.01, K2=0.03, valid positions only. Implemented with a
// separable window; the test suite holds a dense 2-D reference against it.
inline double ssim(const TensorF& a, const TensorF& b, double range = 2.0) {
    if (!a.same_shape(b)) throw InputError("ssim: shape mismatch");
    TensorF ya = luminance(a), yb = luminance(b);
    const int win = 11;
    int h = ya.size(0), w = ya.size(1);
    if (h < win || w < win) throw InputError("ssim: image smaller than the 11x11 window");
    auto g = gaussian_window(win, 1.5);

    // separable weighted moments: horizontal pass then vertical
    auto blur = [&](const std::vector<double>& src, int sh, int sw, std::vector<double>& tmp, std::vector<double>& dst) {
        int ow = sw - win + 1, oh = sh - win + 1;
        tmp.assign(static_cast<size_t>(sh) * ow, 0.0);
        for (int y = 0; y < sh; ++y)
            for (int x = 0; x < ow; ++x) {
                double acc = 0;
                for (int k = 0; k < win; ++k) acc += g[static_cast<size_t>(k)] * src[static_cast<size_t>(y) * sw + x + k];
                tmp[static_cast<size_t>(y) * ow + x] = acc;
            }
        dst.assign(static_cast<size_t>(oh) * ow, 0.0);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double acc = 0;
                for (int k = 0; k < win; ++k) acc += g[static_cast<size_t>(k)] * tmp[static_cast<size_t>(y + k) * ow + x];
                dst[static_cast<size_t>(y) * ow + x] = acc;
            }
    };

    size_t n = static_cast<size_t>(h) * w;
    std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n);
    for (size_t i = 0; i < n; ++i) {
        pa[i] = ya.data[i];
        pb[i] = yb.data[i];
        paa[i] = pa[i] * pa[i];
        pbb[i] = pb[i] * pb[i];
        pab[i] = pa[i] * pb[i];
    }
    std::vector<double> tmp, mu_a, mu_b, m_aa, m_bb, m_ab;
    blur(pa, h, w, tmp, mu_a);
    blur(pb, h, w, tmp, mu_b);
    blur(paa, h, w, tmp, m_aa);
    blur(pbb, h, w, tmp, m_bb);
    blur(pab, h, w, tmp, m_ab);

    double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);
    double total = 0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        double va = m_aa[i] - mu_a[i] * mu_a[i];
        double vb = m_bb[i] - mu_b[i] * mu_b[i];
        double cov = m_ab[i] - mu_a[i] * mu_b[i];
        total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) / ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

inline std::vector<std::string> word_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// Default semantic-similarity scorer: harmonic mean of token-multiset overlap
// precision and recall. 1.0 for identical texts, 0.0 for disjoint vocabulary.
inline double token_overlap_f1(const std::string& desc_a, const std::string& desc_b) {
    auto ta = word_tokens(desc_a), tb = word_tokens(desc_b);
    if (ta.empty() || tb.empty()) throw InputError("similarity scorer given an empty description");
    std::map<std::string, int> ca, cb;
    for (const auto& t : ta) ++ca[t];
    for (const auto& t : tb) ++cb[t];
    int overlap = 0;
    for (const auto& [tok, n] : ca) {
        auto it = cb.find(tok);
        if (it != cb.end()) overlap += std::min(n, it->second);
    }
    if (overlap == 0) return 0.0;
    double p = static_cast<double>(overlap) / static_cast<double>(tb.size());
    double r = static_cast<double>(overlap) / static_cast<double>(ta.size());
    return 2 * p * r / (p + r);
}

// 100 * mean of {0,1} same-object judgments
inline double lvlm_consistency(const std::vector<int>& judgments) {
    if (judgments.empty()) throw InputError("lvlm_consistency: empty judgment list");
    double s = 0;
    for (int j : judgments) s += j ? 1.0 : 0.0;
    return 100.0 * s / static_cast<double>(judgments.size());
}

// 100 * fraction of predictions hitting the ground-truth label
inline double top1_consistency(const std::vector<int>& gt_labels, const std::vector<int>& predictions) {
    if (gt_labels.empty() || gt_labels.size() != predictions.size())
        throw InputError("top1_consistency: label/prediction count mismatch");
    int hit = 0;
    for (size_t i = 0; i < gt_labels.size(); ++i) hit += gt_labels[i] == predictions[i];
    return 100.0 * hit / static_cast<double>(gt_labels.size());
}

}  // namespace eval
}  // namespace fia
