#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fia/codec/codec.hpp"
#include "fia/core/attn.hpp"
#include "fia/core/conv.hpp"
#include "fia/core/ops.hpp"
#include "fia/core/serial.hpp"
#include "fia/data/corpus.hpp"
#include "fia/nn/layers.hpp"
#include "fia/nn/optim.hpp"
#include "fia/nn/params.hpp"

// Alignment network: maps one victim split's feature tensor to the codec
// latent grid. A pixel-shuffle front end normalizes resolution, a small
// U-shaped encoder/decoder gives local structure, and a flat aggregation
// branch re-injects every scale at the latent grid before the output map.
namespace fia {
namespace align {

struct AlignConfig {
    std::vector<int> widths = {64, 128, 256};  // one per level, shallow to deep
    int steps = 5000;
    int batch = 8;
    double lr = 1e-4;
    double w_fea = 1.0;  // loss term weights; defaults sum the two terms as-is
    double w_img = 1.0;
    uint64_t seed = 1;

    nlohmann::json to_json() const {
        return {{"widths", widths}, {"steps", steps},   {"batch", batch}, {"lr", lr},
                {"w_fea", w_fea},   {"w_img", w_img},   {"seed", seed}};
    }
    static AlignConfig from_json(const nlohmann::json& j) {
        AlignConfig c;
        c.widths = j.value("widths", c.widths);
        c.steps = j.value("steps", c.steps);
        c.batch = j.value("batch", c.batch);
        c.lr = j.value("lr", c.lr);
        c.w_fea = j.value("w_fea", c.w_fea);
        c.w_img = j.value("w_img", c.w_img);
        c.seed = j.value("seed", c.seed);
        return c;
    }
    std::string hash() const { return Sha256::hex(to_json().dump()); }
};

// Smallest upsample factor that puts the feature grid at or above the
// latent grid. 8x8 features pass through untouched; 4x4 features get r=2.
inline int pick_shuffle_factor(const Shape& feature_shape, const Shape& latent_shape) {
    if (feature_shape.size() != 3) throw InputError("expected a (C,H,W) feature shape, got " + shape_str(feature_shape));
    int r = 1;
    while (feature_shape[1] * r < latent_shape[1] || feature_shape[2] * r < latent_shape[2]) ++r;
    return r;
}

// Pure rearrangement: out[c, r*h+a, r*w+b] = in[c*r*r + a*r + b, h, w].
// Channels short of a multiple of r*r are zero-padded first.
inline ag::Var<float> shuffle_rearrange(const ag::Var<float>& x, int r) {
    if (r == 1) return x;
    int c = x->value.size(1);
    int pad = (r * r - c % (r * r)) % (r * r);
    auto padded = x;
    if (pad > 0) {
        auto zeros = ag::constant(TensorF({x->value.size(0), pad, x->value.size(2), x->value.size(3)}));
        padded = ag::concat_c(x, zeros);
    }
    return ag::pixel_shuffle(padded, r);
}

class AlignmentNet {
public:
    AlignmentNet() = default;

    AlignmentNet(const Shape& feature_shape, const Shape& latent_shape, const AlignConfig& cfg)
        : feature_shape_(feature_shape), latent_shape_(latent_shape), cfg_(cfg) {
        if (cfg.widths.size() < 2) throw ConfigError("alignment net needs at least 2 levels");
        levels_ = static_cast<int>(cfg.widths.size());
        r_ = pick_shuffle_factor(feature_shape, latent_shape);
        int c_in = feature_shape[0];
        int c_pad = ((c_in + r_ * r_ - 1) / (r_ * r_)) * (r_ * r_);
        c_sp_ = c_pad / (r_ * r_);
        grid_h_ = feature_shape[1] * r_;
        grid_w_ = feature_shape[2] * r_;

        Rng rng = Rng(cfg.seed).fork("align.init");
        refine_ = nn::Conv2d<float>(params_, rng, "refine", c_sp_, c_sp_, 3, 1, 1, /*zero_init=*/true);
        set_identity_("refine.w", c_sp_);

        // encoder: level 1 keeps the grid, deeper levels halve it
        int prev = c_sp_;
        for (int i = 0; i < levels_; ++i) {
            std::string nm = "enc" + std::to_string(i);
            enc_conv_.emplace_back(params_, rng, nm + ".conv", prev, cfg.widths[static_cast<size_t>(i)], 3, i == 0 ? 1 : 2, 1);
            enc_norm_.emplace_back(params_, nm + ".norm", cfg.widths[static_cast<size_t>(i)]);
            prev = cfg.widths[static_cast<size_t>(i)];
        }
        attn_ = nn::SelfAttention2d<float>(params_, rng, "enc_attn", cfg.widths.back());

        // decoder: deepest level first, one stage per level, skip concat per stage
        int c_mid = cfg.widths[0];
        for (int i = levels_ - 1; i >= 0; --i) {
            int skip = cfg.widths[static_cast<size_t>(i)];
            int ci = (i == levels_ - 1) ? skip : dec_out_(i + 1) + skip;
            dec_.emplace_back(params_, rng, "dec" + std::to_string(i), ci, dec_out_(i));
        }

        for (int i = 0; i < levels_; ++i)
            fan_proj_.emplace_back(params_, rng, "fan" + std::to_string(i), cfg.widths[static_cast<size_t>(i)], c_mid, 1, 1, 0);
        fan_fuse_ = nn::Conv2d<float>(params_, rng, "fan_fuse", levels_ * c_mid, c_mid, 1, 1, 0);
        out_conv_ = nn::Conv2d<float>(params_, rng, "out", c_mid, latent_shape[0], 3, 1, 1);
    }

    int shuffle_factor() const { return r_; }
    int levels() const { return levels_; }
    const Shape& feature_shape() const { return feature_shape_; }
    const Shape& latent_shape() const { return latent_shape_; }
    const AlignConfig& config() const { return cfg_; }
    nn::ParamStoreF& params() { return params_; }
    const nn::ParamStoreF& params() const { return params_; }

    ag::Var<float> spatialize(const ag::Var<float>& f) const { return refine_(shuffle_rearrange(f, r_)); }

    std::vector<ag::Var<float>> encode_levels(const ag::Var<float>& g) const {
        std::vector<ag::Var<float>> e;
        auto h = g;
        for (int i = 0; i < levels_; ++i) {
            h = ag::silu(enc_norm_[static_cast<size_t>(i)](enc_conv_[static_cast<size_t>(i)](h)));
            if (i == levels_ - 1) h = attn_(h);
            e.push_back(h);
        }
        return e;
    }

    ag::Var<float> decode_skip(const std::vector<ag::Var<float>>& e) const {
        if (static_cast<int>(e.size()) != levels_)
            throw ConfigError("decode_skip: got " + std::to_string(e.size()) + " levels, net has " + std::to_string(levels_));
        ag::Var<float> d;
        for (int i = levels_ - 1; i >= 0; --i) {
            auto in = d ? ag::concat_c(ag::upsample_nearest2(d), e[static_cast<size_t>(i)]) : e[static_cast<size_t>(i)];
            d = dec_[static_cast<size_t>(levels_ - 1 - i)](in);
        }
        return ag::resize_bilinear(d, latent_shape_[1], latent_shape_[2]);
    }

    ag::Var<float> fan_aggregate(const std::vector<ag::Var<float>>& e) const {
        if (static_cast<int>(e.size()) != levels_)
            throw ConfigError("fan_aggregate: got " + std::to_string(e.size()) + " levels, net has " + std::to_string(levels_));
        ag::Var<float> cat;
        for (int i = 0; i < levels_; ++i) {
            auto p = ag::resize_bilinear(fan_proj_[static_cast<size_t>(i)](e[static_cast<size_t>(i)]), latent_shape_[1],
                                         latent_shape_[2]);
            cat = cat ? ag::concat_c(cat, p) : p;
        }
        return fan_fuse_(cat);
    }

    ag::Var<float> output_map(const ag::Var<float>& h) const { return out_conv_(h); }

    ag::Var<float> align_graph(const ag::Var<float>& f) const {
        const auto& s = f->value.shape;
        if (s.size() != 4 || s[1] != feature_shape_[0] || s[2] != feature_shape_[1] || s[3] != feature_shape_[2])
            throw ConfigError("alignment net built for " + shape_str(feature_shape_) + ", got " + shape_str(s));
        auto e = encode_levels(spatialize(f));
        return output_map(ag::add(decode_skip(e), fan_aggregate(e)));
    }

    // value-level: single (C,H,W) feature or a batch of them
    TensorF align(const TensorF& f) const {
        bool single = f.ndim() == 3;
        TensorF batch = single ? stack_batch<float>({f}) : f;
        TensorF z = align_graph(ag::constant(batch))->value;
        if (!single) return z;
        TensorF out(latent_shape_);
        std::copy(z.data.begin(), z.data.end(), out.data.begin());
        return out;
    }

    Checkpoint to_checkpoint() const {
        Checkpoint c;
        c.meta = {{"kind", "lfsam"},
                  {"feature_shape", feature_shape_},
                  {"latent_shape", latent_shape_},
                  {"config", cfg_.to_json()},
                  {"config_hash", cfg_.hash()}};
        params_to_checkpoint(params_, c);
        return c;
    }

    void save(const std::string& path) const { to_checkpoint().save(path); }

    static AlignmentNet from_checkpoint(const Checkpoint& c) {
        if (c.meta.value("kind", "") != "lfsam") throw ConsistencyError("checkpoint is not an alignment net");
        AlignmentNet net(c.meta.at("feature_shape").get<Shape>(), c.meta.at("latent_shape").get<Shape>(),
                         AlignConfig::from_json(c.meta.at("config")));
        checkpoint_to_params(c, net.params_);
        return net;
    }

    static AlignmentNet load(const std::string& path) { return from_checkpoint(Checkpoint::load(path)); }

private:
    int dec_out_(int level) const { return cfg_.widths[static_cast<size_t>(level > 0 ? level - 1 : 0)]; }

    void set_identity_(const std::string& weight_name, int c) {
        TensorF w({c, c, 3, 3});
        for (int i = 0; i < c; ++i) w.at(i, i, 1, 1) = 1.0f;
        params_.set_values(weight_name, w);
    }

    Shape feature_shape_, latent_shape_;
    AlignConfig cfg_;
    int levels_ = 0, r_ = 1, c_sp_ = 0, grid_h_ = 0, grid_w_ = 0;
    nn::ParamStoreF params_;
    nn::Conv2d<float> refine_;
    std::vector<nn::Conv2d<float>> enc_conv_;
    std::vector<nn::GroupNorm<float>> enc_norm_;
    nn::SelfAttention2d<float> attn_;
    std::vector<nn::ConvBlock<float>> dec_;
    std::vector<nn::Conv2d<float>> fan_proj_;
    nn::Conv2d<float> fan_fuse_, out_conv_;
};

template <typename T>
struct Stage1LossT {
    ag::Var<T> total, l_fea, l_img;
};
using Stage1Loss = Stage1LossT<float>;

// l_fea pulls the aligned latent onto the codec's latent; l_img keeps its
// decode close to the original image. Summed with unit weights by default.
template <typename T>
Stage1LossT<T> stage1_loss(const ag::Var<T>& z_s, const Tensor<T>& z_x, const Tensor<T>& x,
                           const codec::CodecT<T>& codec, double w_fea = 1.0, double w_img = 1.0) {
    if (!z_s->value.all_finite() || !z_x.all_finite() || !x.all_finite())
        throw TrainingError("alignment loss saw a non-finite input", 0);
    Stage1LossT<T> out;
    out.l_fea = ag::mse(z_s, ag::constant(z_x));
    out.l_img = ag::l1(codec.decode_graph(z_s), ag::constant(x));
    auto wf = w_fea == 1.0 ? out.l_fea : ag::scale(out.l_fea, static_cast<T>(w_fea));
    auto wi = w_img == 1.0 ? out.l_img : ag::scale(out.l_img, static_cast<T>(w_img));
    out.total = ag::add(wf, wi);
    return out;
}

struct Stage1Result {
    AlignmentNet net;
    std::vector<double> loss_total, loss_fea, loss_img;
};

inline Stage1Result train_stage1(const data::PairCorpus& corpus, const codec::Codec& codec, const AlignConfig& cfg) {
    codec.check_frozen();
    if (corpus.images.empty()) throw InputError("train_stage1: empty corpus");
    std::string codec_before = codec.digest();

    Stage1Result res{AlignmentNet(corpus.manifest.feature_shape, codec.latent_shape(), cfg), {}, {}, {}};
    Rng rng = Rng(cfg.seed).fork("align.train");
    nn::Adam<float> opt(res.net.params().trainable(), cfg.lr);

    // codec targets are fixed throughout; encode the corpus once
    std::vector<TensorF> z_x(corpus.images.size());
    for (size_t i = 0; i < corpus.images.size(); ++i) z_x[i] = codec.encode(corpus.images[i]);

    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<TensorF> fs, xs, zs;
        for (int b = 0; b < cfg.batch; ++b) {
            size_t i = static_cast<size_t>(rng.below(corpus.images.size()));
            fs.push_back(corpus.features[i]);
            xs.push_back(corpus.images[i]);
            zs.push_back(z_x[i]);
        }
        auto z_s = res.net.align_graph(ag::constant(stack_batch(fs)));
        auto loss = stage1_loss(z_s, stack_batch(zs), stack_batch(xs), codec, cfg.w_fea, cfg.w_img);
        double lv = loss.total->value.data[0];
        if (!std::isfinite(lv)) throw TrainingError("stage-1 training diverged", step);
        res.loss_total.push_back(lv);
        res.loss_fea.push_back(loss.l_fea->value.data[0]);
        res.loss_img.push_back(loss.l_img->value.data[0]);
        opt.zero_grad();
        ag::backward(loss.total);
        opt.step();
    }

    if (codec.digest() != codec_before) throw FreezeViolation("codec changed during stage-1 training");
    return res;
}

}  // namespace align
}  // namespace fia
