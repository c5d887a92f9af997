#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "fia/core/attn.hpp"
#include "fia/core/conv.hpp"
#include "fia/core/ops.hpp"
#include "fia/core/serial.hpp"
#include "fia/nn/layers.hpp"
#include "fia/nn/optim.hpp"
#include "fia/nn/params.hpp"

// Attacker-side perceptual feature extractor: a small conv classifier trained
// once on the proxy scenes, then frozen. Its three stage outputs back both
// the perceptual metric and the reconstruction loss. Deliberately separate
// from any victim network — the attack must not borrow victim features.
namespace fia {
namespace percep {

// x normalized to a unit vector along the channel axis at every (n,h,w)
template <typename T>
ag::Var<T> channel_unit_norm(const ag::Var<T>& x, T eps = T(1e-8)) {
    const auto& s = x->value.shape;
    if (s.size() != 4) throw InputError("channel_unit_norm: expected (N,C,H,W)");
    int n_ = s[0], c_ = s[1], hw = s[2] * s[3];
    Tensor<T> out(s);
    std::vector<T> inv(static_cast<size_t>(n_) * hw);
    for (int n = 0; n < n_; ++n)
        for (int i = 0; i < hw; ++i) {
            double acc = 0;
            for (int c = 0; c < c_; ++c) {
                double v = x->value.data[(static_cast<size_t>(n) * c_ + c) * hw + i];
                acc += v * v;
            }
            T iv = static_cast<T>(1.0 / std::sqrt(acc + static_cast<double>(eps)));
            inv[static_cast<size_t>(n) * hw + i] = iv;
            for (int c = 0; c < c_; ++c) {
                size_t idx = (static_cast<size_t>(n) * c_ + c) * hw + i;
                out.data[idx] = x->value.data[idx] * iv;
            }
        }
    return ag::make_op<T>(std::move(out), {x}, [x, n_, c_, hw, inv = std::move(inv)](ag::Node<T>& nd) {
        x->ensure_grad();
        for (int n = 0; n < n_; ++n)
            for (int i = 0; i < hw; ++i) {
                T iv = inv[static_cast<size_t>(n) * hw + i];
                double dot = 0;
                for (int c = 0; c < c_; ++c) {
                    size_t idx = (static_cast<size_t>(n) * c_ + c) * hw + i;
                    dot += static_cast<double>(nd.grad.data[idx]) * nd.value.data[idx];
                }
                for (int c = 0; c < c_; ++c) {
                    size_t idx = (static_cast<size_t>(n) * c_ + c) * hw + i;
                    x->grad.data[idx] += (nd.grad.data[idx] - nd.value.data[idx] * static_cast<T>(dot)) * iv;
                }
            }
    });
}

class FeatureExtractor {
public:
    explicit FeatureExtractor(uint64_t seed, int num_classes = 24) {
        Rng rng = Rng(seed).fork("percep.init");
        int widths[] = {3, 24, 48, 96};
        for (int i = 0; i < 3; ++i) {
            std::string nm = "stage" + std::to_string(i);
            conv_[i] = nn::Conv2d<float>(params_, rng, nm + ".conv", widths[i], widths[i + 1], 3, 2, 1);
            norm_[i] = nn::GroupNorm<float>(params_, nm + ".norm", widths[i + 1]);
        }
        fc_ = nn::Linear<float>(params_, rng, "fc", 96, num_classes);
    }

    nn::ParamStoreF& params() { return params_; }

    // stage activations at 3 depths for an (N,3,64,64) batch
    std::array<ag::Var<float>, 3> features_graph(const ag::Var<float>& x) const {
        std::array<ag::Var<float>, 3> out;
        auto h = x;
        for (int i = 0; i < 3; ++i) {
            h = ag::silu(norm_[i](conv_[i](h)));
            out[static_cast<size_t>(i)] = h;
        }
        return out;
    }

    ag::Var<float> logits_graph(const ag::Var<float>& x) const {
        return fc_(ag::global_avg_pool(features_graph(x)[2]));
    }

    void freeze() {
        params_.set_trainable(false);
        frozen_digest_ = params_.digest();
    }
    bool frozen() const { return !frozen_digest_.empty(); }
    const std::string& frozen_digest() const { return frozen_digest_; }

    void check_frozen() const {
        if (!frozen()) throw FreezeViolation("perceptual extractor is not frozen");
        if (params_.digest() != frozen_digest_) throw FreezeViolation("perceptual extractor changed after freeze");
    }

    void save(const std::string& path) const {
        Checkpoint c;
        c.meta = {{"kind", "percep"}, {"frozen_digest", frozen_digest_}};
        params_to_checkpoint(params_, c);
        c.save(path);
    }

    static FeatureExtractor load(const std::string& path) {
        Checkpoint c = Checkpoint::load(path);
        if (c.meta.value("kind", "") != "percep") throw ConsistencyError("checkpoint is not a perceptual extractor: " + path);
        FeatureExtractor out(0);
        checkpoint_to_params(c, out.params_);
        std::string fd = c.meta.value("frozen_digest", "");
        if (!fd.empty()) {
            out.params_.set_trainable(false);
            out.frozen_digest_ = out.params_.digest();
            if (out.frozen_digest_ != fd) throw DigestError("perceptual extractor does not match its frozen digest");
        }
        return out;
    }

private:
    nn::ParamStoreF params_;
    nn::Conv2d<float> conv_[3];
    nn::GroupNorm<float> norm_[3];
    nn::Linear<float> fc_;
    std::string frozen_digest_;
};

inline FeatureExtractor train_extractor(const std::vector<TensorF>& images, const std::vector<int>& labels, int steps,
                                        uint64_t seed, int batch = 16, double lr = 1e-3) {
    if (images.empty() || images.size() != labels.size()) throw InputError("train_extractor: images/labels mismatch");
    FeatureExtractor ex(seed);
    Rng rng = Rng(seed).fork("percep.train");
    nn::Adam<float> opt(ex.params().trainable(), lr);
    for (int step = 0; step < steps; ++step) {
        std::vector<TensorF> xs;
        std::vector<int> ys;
        for (int b = 0; b < batch; ++b) {
            size_t i = static_cast<size_t>(rng.below(images.size()));
            xs.push_back(images[i]);
            ys.push_back(labels[i]);
        }
        auto loss = ag::cross_entropy(ex.logits_graph(ag::constant(stack_batch(xs))), ys);
        if (!std::isfinite(loss->value.data[0])) throw TrainingError("extractor training diverged", step);
        opt.zero_grad();
        ag::backward(loss);
        opt.step();
    }
    ex.freeze();
    return ex;
}

// mean over depths of MSE between channel-unit-normalized feature maps,
// as a graph (used inside the reconstruction loss)
inline ag::Var<float> perceptual_graph(const ag::Var<float>& a, const ag::Var<float>& b, const FeatureExtractor& ex) {
    ex.check_frozen();
    auto fa = ex.features_graph(a), fb = ex.features_graph(b);
    ag::Var<float> total;
    for (int i = 0; i < 3; ++i) {
        auto d = ag::mse(channel_unit_norm(fa[static_cast<size_t>(i)]), channel_unit_norm(fb[static_cast<size_t>(i)]));
        total = total ? ag::add(total, d) : d;
    }
    return ag::scale(total, 1.0f / 3.0f);
}

// value-level metric for single (3,H,W) images
inline double perceptual_distance(const TensorF& a, const TensorF& b, const FeatureExtractor& ex) {
    if (!a.same_shape(b)) throw InputError("perceptual_distance: shape mismatch");
    if (a.ndim() != 3) throw InputError("perceptual_distance: expected (3,H,W)");
    auto va = ag::constant(stack_batch<float>({a}));
    auto vb = ag::constant(stack_batch<float>({b}));
    return perceptual_graph(va, vb, ex)->value.data[0];
}

}  // namespace percep
}  // namespace fia
