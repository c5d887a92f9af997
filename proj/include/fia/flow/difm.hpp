#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fia/align/lfsam.hpp"
#include "fia/codec/codec.hpp"
#include "fia/core/ops.hpp"
#include "fia/core/serial.hpp"
#include "fia/data/corpus.hpp"
#include "fia/nn/layers.hpp"
#include "fia/nn/optim.hpp"
#include "fia/nn/params.hpp"
#include "fia/percep/extractor.hpp"

// Flow-matching refinement over the codec latent. A field net is trained so
// that Euler integration from an aligned latent lands on the codec's own
// encoding of the original image; at inference a single step is usually
// enough and more steps are a knob, not a requirement.
namespace fia {
namespace flow {

struct FlowPath {
    TensorF z_s, z_x, z_t, u_t;
    double t = 0.0;
};

inline TensorF interpolate(const TensorF& z_s, const TensorF& z_x, double t) {
    if (!z_s.same_shape(z_x))
        throw InputError("interpolate: shape mismatch " + shape_str(z_s.shape) + " vs " + shape_str(z_x.shape));
    if (!(t >= 0.0 && t <= 1.0)) throw ParameterError("interpolate: t must lie in [0,1], got " + std::to_string(t));
    TensorF out(z_s.shape);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<float>(t * z_x.data[i] + (1.0 - t) * z_s.data[i]);
    return out;
}

inline TensorF target_field(const TensorF& z_s, const TensorF& z_x) {
    if (!z_s.same_shape(z_x))
        throw InputError("target_field: shape mismatch " + shape_str(z_s.shape) + " vs " + shape_str(z_x.shape));
    TensorF out(z_s.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = z_x.data[i] - z_s.data[i];
    return out;
}

inline FlowPath make_path(const TensorF& z_s, const TensorF& z_x, double t) {
    FlowPath p;
    p.z_s = z_s;
    p.z_x = z_x;
    p.t = t;
    p.z_t = interpolate(z_s, z_x, t);
    p.u_t = target_field(z_s, z_x);
    return p;
}

struct FlowConfig {
    std::vector<int> widths = {48, 96, 128};  // U-Net widths, 8x8 / 4x4 / 2x2
    int emb_dim = 64;
    int steps = 5000;
    int batch = 8;
    double lr = 1e-4;
    double w_fm = 1.0;  // term weights; defaults add the two losses as-is
    double w_rec = 1.0;
    uint64_t seed = 1;

    nlohmann::json to_json() const {
        return {{"widths", widths}, {"emb_dim", emb_dim}, {"steps", steps}, {"batch", batch},
                {"lr", lr},         {"w_fm", w_fm},       {"w_rec", w_rec}, {"seed", seed}};
    }
    static FlowConfig from_json(const nlohmann::json& j) {
        FlowConfig c;
        c.widths = j.value("widths", c.widths);
        c.emb_dim = j.value("emb_dim", c.emb_dim);
        c.steps = j.value("steps", c.steps);
        c.batch = j.value("batch", c.batch);
        c.lr = j.value("lr", c.lr);
        c.w_fm = j.value("w_fm", c.w_fm);
        c.w_rec = j.value("w_rec", c.w_rec);
        c.seed = j.value("seed", c.seed);
        return c;
    }
    std::string hash() const { return Sha256::hex(to_json().dump()); }
};

// Small U-Net over the latent, time embedding injected at every block.
// The output conv starts at zero so the untrained field is the zero field.
template <typename T>
class VectorFieldNetT {
public:
    VectorFieldNetT() = default;

    VectorFieldNetT(const Shape& latent_shape, const FlowConfig& cfg) : latent_shape_(latent_shape), cfg_(cfg) {
        if (cfg.widths.size() != 3) throw ConfigError("field net expects exactly 3 widths");
        Rng rng = Rng(cfg.seed).fork("flow.init");
        int w1 = cfg.widths[0], w2 = cfg.widths[1], w3 = cfg.widths[2];
        temb_ = nn::TimeEmbed<T>(params_, rng, "temb", cfg.emb_dim);
        in_ = nn::Conv2d<T>(params_, rng, "in", latent_shape[0], w1, 3);
        b1_ = nn::ConvBlock<T>(params_, rng, "b1", w1, w1, cfg.emb_dim);
        down1_ = nn::Conv2d<T>(params_, rng, "down1", w1, w2, 3, 2, 1);
        b2_ = nn::ConvBlock<T>(params_, rng, "b2", w2, w2, cfg.emb_dim);
        down2_ = nn::Conv2d<T>(params_, rng, "down2", w2, w3, 3, 2, 1);
        mid_ = nn::ConvBlock<T>(params_, rng, "mid", w3, w3, cfg.emb_dim);
        up2_ = nn::ConvBlock<T>(params_, rng, "up2", w3 + w2, w2, cfg.emb_dim);
        up1_ = nn::ConvBlock<T>(params_, rng, "up1", w2 + w1, w1, cfg.emb_dim);
        out_ = nn::Conv2d<T>(params_, rng, "out", w1, latent_shape[0], 3, 1, 1, /*zero_init=*/true);
    }

    const Shape& latent_shape() const { return latent_shape_; }
    const FlowConfig& config() const { return cfg_; }
    nn::ParamStore<T>& params() { return params_; }
    const nn::ParamStore<T>& params() const { return params_; }

    // digests of the frozen pieces this net was trained against
    void set_dependencies(std::string align_digest, std::string codec_digest, std::string percep_digest) {
        align_digest_ = std::move(align_digest);
        codec_digest_ = std::move(codec_digest);
        percep_digest_ = std::move(percep_digest);
    }
    const std::string& align_digest() const { return align_digest_; }
    const std::string& codec_digest() const { return codec_digest_; }
    const std::string& percep_digest() const { return percep_digest_; }

    ag::Var<T> predict_graph(const ag::Var<T>& z, const std::vector<T>& t) const {
        const auto& s = z->value.shape;
        if (s.size() != 4 || s[1] != latent_shape_[0] || s[2] != latent_shape_[1] || s[3] != latent_shape_[2])
            throw InputError("field net expects latent " + shape_str(latent_shape_) + ", got " + shape_str(s));
        if (static_cast<int>(t.size()) != s[0]) throw InputError("field net: one t per sample required");
        for (T tv : t)
            if (!(tv >= 0 && tv <= 1)) throw ParameterError("field net: t must lie in [0,1]");
        auto e = temb_(t);
        auto h1 = b1_(in_(z), e);
        auto h2 = b2_(down1_(h1), e);
        auto h3 = mid_(down2_(h2), e);
        auto u2 = up2_(ag::concat_c(ag::upsample_nearest2(h3), h2), e);
        auto u1 = up1_(ag::concat_c(ag::upsample_nearest2(u2), h1), e);
        return out_(u1);
    }

    // single latent, scalar t
    Tensor<T> predict(const Tensor<T>& z, double t) const {
        if (z.shape != latent_shape_) throw InputError("field net expects latent " + shape_str(latent_shape_));
        Tensor<T> v = predict_graph(ag::constant(stack_batch<T>({z})), {static_cast<T>(t)})->value;
        Tensor<T> out(latent_shape_);
        std::copy(v.data.begin(), v.data.end(), out.data.begin());
        return out;
    }

    Checkpoint to_checkpoint() const {
        Checkpoint c;
        c.meta = {{"kind", "difm"},
                  {"latent_shape", latent_shape_},
                  {"config", cfg_.to_json()},
                  {"config_hash", cfg_.hash()},
                  {"align_digest", align_digest_},
                  {"codec_digest", codec_digest_},
                  {"percep_digest", percep_digest_}};
        params_to_checkpoint(params_, c);
        return c;
    }

    void save(const std::string& path) const { to_checkpoint().save(path); }

    static VectorFieldNetT from_checkpoint(const Checkpoint& c) {
        if (c.meta.value("kind", "") != "difm") throw ConsistencyError("checkpoint is not a field net");
        VectorFieldNetT net(c.meta.at("latent_shape").get<Shape>(), FlowConfig::from_json(c.meta.at("config")));
        checkpoint_to_params(c, net.params_);
        net.align_digest_ = c.meta.value("align_digest", "");
        net.codec_digest_ = c.meta.value("codec_digest", "");
        net.percep_digest_ = c.meta.value("percep_digest", "");
        return net;
    }

    static VectorFieldNetT load(const std::string& path) { return from_checkpoint(Checkpoint::load(path)); }

private:
    Shape latent_shape_;
    FlowConfig cfg_;
    nn::ParamStore<T> params_;
    nn::TimeEmbed<T> temb_;
    nn::Conv2d<T> in_, down1_, down2_, out_;
    nn::ConvBlock<T> b1_, b2_, mid_, up2_, up1_;
    std::string align_digest_, codec_digest_, percep_digest_;
};

using VectorFieldNet = VectorFieldNetT<float>;

// Forward Euler from t=0 to t=1 with uniform steps. `field(z, t)` must
// return a tensor of z's shape; any callable works, which keeps the solver
// testable against closed-form fields.
template <typename Field>
TensorF euler_invert(const TensorF& z_s, int n_steps, Field&& field) {
    if (n_steps < 1) throw ParameterError("euler_invert: n_steps must be >= 1, got " + std::to_string(n_steps));
    TensorF z = z_s;
    double dt = 1.0 / n_steps;
    for (int i = 0; i < n_steps; ++i) {
        TensorF v = field(z, static_cast<double>(i) * dt);
        if (!v.same_shape(z)) throw InputError("euler_invert: field changed the state shape");
        for (size_t j = 0; j < z.data.size(); ++j) z.data[j] += static_cast<float>(dt * v.data[j]);
        if (!z.all_finite()) throw NumericalError("inversion state went non-finite", i);
    }
    return z;
}

inline TensorF invert(const VectorFieldNet& net, const TensorF& z_s, int n_steps) {
    return euler_invert(z_s, n_steps, [&net](const TensorF& z, double t) { return net.predict(z, t); });
}

// one-sample field-matching loss, as a graph so training can reuse it
template <typename T>
ag::Var<T> fm_loss_graph(const VectorFieldNetT<T>& net, const Tensor<T>& z_t, const std::vector<T>& t,
                         const Tensor<T>& u_t) {
    auto v = net.predict_graph(ag::constant(z_t), t);
    if (!v->value.all_finite()) throw TrainingError("field prediction went non-finite", 0);
    return ag::mse(v, ag::constant(u_t));
}

inline double fm_loss(const VectorFieldNet& net, const FlowPath& path) {
    return fm_loss_graph(net, stack_batch<float>({path.z_t}), {static_cast<float>(path.t)},
                         stack_batch<float>({path.u_t}))
        ->value.data[0];
}

struct RecLoss {
    ag::Var<float> total, l_percep, l_l1;
};

// perceptual + mean-absolute pixel error against a frozen extractor
inline RecLoss rec_loss(const ag::Var<float>& x_hat, const TensorF& x, const percep::FeatureExtractor& ex) {
    ex.check_frozen();
    if (x_hat->value.shape != x.shape) throw InputError("rec_loss: shape mismatch");
    RecLoss out;
    auto xc = ag::constant(x);
    out.l_percep = percep::perceptual_graph(x_hat, xc, ex);
    out.l_l1 = ag::l1(x_hat, xc);
    out.total = ag::add(out.l_percep, out.l_l1);
    return out;
}

// estimate of the terminal latent from a point on the path; exact under the
// linear path, and at t=0 it is precisely the one-step inversion rule
template <typename T>
ag::Var<T> terminal_estimate(const VectorFieldNetT<T>& net, const Tensor<T>& z_t, const std::vector<T>& t) {
    std::vector<T> coef(t.size());
    for (size_t i = 0; i < t.size(); ++i) coef[i] = static_cast<T>(1) - t[i];
    return ag::add(ag::constant(z_t), ag::scale_per_sample(net.predict_graph(ag::constant(z_t), t), coef));
}

struct Stage2Result {
    VectorFieldNet net;
    std::vector<double> loss_total, loss_fm, loss_rec;
};

inline Stage2Result train_stage2(const data::PairCorpus& corpus, const align::AlignmentNet& align_net, const codec::Codec& codec,
                                 const percep::FeatureExtractor& extractor, const FlowConfig& cfg) {
    codec.check_frozen();
    extractor.check_frozen();
    if (corpus.images.empty()) throw InputError("train_stage2: empty corpus");
    std::string align_before = align_net.params().digest();
    std::string codec_before = codec.digest();

    Stage2Result res{VectorFieldNet(codec.latent_shape(), cfg), {}, {}, {}};
    res.net.set_dependencies(align_before, codec.frozen_digest(), extractor.frozen_digest());
    Rng rng = Rng(cfg.seed).fork("flow.train");
    nn::Adam<float> opt(res.net.params().trainable(), cfg.lr);

    // both path endpoints come from frozen nets, so encode the corpus once
    std::vector<TensorF> z_s(corpus.images.size()), z_x(corpus.images.size());
    for (size_t i = 0; i < corpus.images.size(); ++i) {
        z_s[i] = align_net.align(corpus.features[i]);
        z_x[i] = codec.encode(corpus.images[i]);
    }

    const Shape& ls = codec.latent_shape();
    size_t latent_n = static_cast<size_t>(ls[0]) * ls[1] * ls[2];
    for (int step = 0; step < cfg.steps; ++step) {
        int nb = cfg.batch;
        TensorF z_t({nb, ls[0], ls[1], ls[2]}), u_t({nb, ls[0], ls[1], ls[2]});
        std::vector<float> t(static_cast<size_t>(nb));
        std::vector<TensorF> xs;
        for (int b = 0; b < nb; ++b) {
            size_t i = static_cast<size_t>(rng.below(corpus.images.size()));
            double tb = rng.uniform();
            t[static_cast<size_t>(b)] = static_cast<float>(tb);
            xs.push_back(corpus.images[i]);
            for (size_t j = 0; j < latent_n; ++j) {
                size_t o = static_cast<size_t>(b) * latent_n + j;
                z_t.data[o] = static_cast<float>(tb * z_x[i].data[j] + (1.0 - tb) * z_s[i].data[j]);
                u_t.data[o] = z_x[i].data[j] - z_s[i].data[j];
            }
        }
        auto l_fm = fm_loss_graph(res.net, z_t, t, u_t);
        auto x_hat = codec.decode_graph(terminal_estimate(res.net, z_t, t));
        auto l_rec = rec_loss(x_hat, stack_batch(xs), extractor);
        auto wf = cfg.w_fm == 1.0 ? l_fm : ag::scale(l_fm, static_cast<float>(cfg.w_fm));
        auto wr = cfg.w_rec == 1.0 ? l_rec.total : ag::scale(l_rec.total, static_cast<float>(cfg.w_rec));
        auto total = ag::add(wf, wr);
        double lv = total->value.data[0];
        if (!std::isfinite(lv)) throw TrainingError("stage-2 training diverged", step);
        res.loss_total.push_back(lv);
        res.loss_fm.push_back(l_fm->value.data[0]);
        res.loss_rec.push_back(l_rec.total->value.data[0]);
        opt.zero_grad();
        ag::backward(total);
        opt.step();
    }

    if (align_net.params().digest() != align_before) throw FreezeViolation("alignment net changed during stage-2 training");
    if (codec.digest() != codec_before) throw FreezeViolation("codec changed during stage-2 training");
    return res;
}

}  // namespace flow
}  // namespace fia
