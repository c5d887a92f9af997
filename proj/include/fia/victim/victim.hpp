#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "fia/core/attn.hpp"
#include "fia/core/conv.hpp"
#include "fia/core/ops.hpp"
#include "fia/core/serial.hpp"
#include "fia/nn/layers.hpp"
#include "fia/nn/optim.hpp"
#include "fia/nn/params.hpp"
#include "fia/victim/defense.hpp"

// Split-DNN victims. The attacker-facing surface is the feature oracle
// (query_head / make_oracle); everything else here exists to build, train and
// evaluate the victims themselves. Attack-side modules must not include this
// header — they consume recorded features only.
namespace fia {
namespace victim {

struct VictimSpec {
    std::string victim_id;
    std::string split_point;
    Shape input_shape;    // (3,H,W)
    Shape feature_shape;  // (C_f,H_f,W_f)
    int num_classes = 0;
};

struct SplitInfo {
    std::string name;
    int head_stages;  // stages included in the head
    Shape feature_shape;
};

struct VictimInfo {
    std::string id;
    Shape input_shape;
    int num_classes;
    std::vector<SplitInfo> splits;
};

inline const std::vector<VictimInfo>& victim_registry() {
    static const std::vector<VictimInfo> reg = {
        {"small_cnn",
         {3, 64, 64},
         24,
         {{"early", 1, {16, 32, 32}}, {"mid", 2, {32, 16, 16}}, {"late", 3, {64, 8, 8}}, {"deep", 4, {128, 4, 4}}}},
        {"small_resnet", {3, 64, 64}, 24, {{"s1", 1, {16, 32, 32}}, {"s2", 2, {32, 16, 16}}}},
    };
    return reg;
}

inline const VictimInfo& find_victim_info(const std::string& victim_id) {
    for (const auto& v : victim_registry())
        if (v.id == victim_id) return v;
    std::string valid;
    for (const auto& v : victim_registry()) valid += (valid.empty() ? "" : ", ") + v.id;
    throw RegistryError("unknown victim '" + victim_id + "'; valid: " + valid);
}

inline const SplitInfo& find_split_info(const VictimInfo& info, const std::string& split_point) {
    for (const auto& s : info.splits)
        if (s.name == split_point) return s;
    std::string valid;
    for (const auto& s : info.splits) valid += (valid.empty() ? "" : ", ") + s.name;
    throw RegistryError("unknown split point '" + split_point + "' for " + info.id + "; valid: " + valid);
}

inline VictimSpec make_spec(const std::string& victim_id, const std::string& split_point) {
    const auto& info = find_victim_info(victim_id);
    const auto& split = find_split_info(info, split_point);
    return {victim_id, split_point, info.input_shape, split.feature_shape, info.num_classes};
}

class VictimModel {
public:
    VictimModel(const std::string& victim_id, const std::string& split_point, uint64_t seed)
        : spec_(make_spec(victim_id, split_point)) {
        const auto& info = find_victim_info(victim_id);
        split_stages_ = find_split_info(info, split_point).head_stages;
        Rng rng = Rng(seed).fork("victim." + victim_id);
        if (victim_id == "small_cnn") {
            int widths[] = {3, 16, 32, 64, 128};
            for (int i = 0; i < 4; ++i) {
                Stage st;
                std::string nm = "stage" + std::to_string(i);
                st.down = nn::Conv2d<float>(params_, rng, nm + ".down", widths[i], widths[i + 1], 3, 2, 1);
                st.norm = nn::GroupNorm<float>(params_, nm + ".norm", widths[i + 1]);
                stages_.push_back(std::move(st));
            }
            fc_ = nn::Linear<float>(params_, rng, "fc", 128, spec_.num_classes);
        } else {  // small_resnet
            int widths[] = {3, 16, 32, 64};
            for (int i = 0; i < 3; ++i) {
                Stage st;
                std::string nm = "stage" + std::to_string(i);
                st.down = nn::Conv2d<float>(params_, rng, nm + ".down", widths[i], widths[i + 1], 3, 2, 1);
                st.norm = nn::GroupNorm<float>(params_, nm + ".norm", widths[i + 1]);
                st.block = nn::ConvBlock<float>(params_, rng, nm + ".res", widths[i + 1], widths[i + 1]);
                st.has_block = true;
                stages_.push_back(std::move(st));
            }
            fc_ = nn::Linear<float>(params_, rng, "fc", 64, spec_.num_classes);
        }
    }

    const VictimSpec& spec() const { return spec_; }
    nn::ParamStoreF& params() { return params_; }
    const nn::ParamStoreF& params() const { return params_; }

    // full differentiable graph, used by the trainer
    ag::Var<float> logits_graph(const ag::Var<float>& x) const {
        return classifier(run_stages(x, 0, static_cast<int>(stages_.size())));
    }

    // (N,3,H,W) -> features at the split, inference only
    TensorF head(const TensorF& x_batch) const {
        return run_stages(ag::constant(x_batch), 0, split_stages_)->value;
    }

    // features at the split -> logits
    TensorF tail_logits(const TensorF& f_batch) const {
        auto h = run_stages(ag::constant(f_batch), split_stages_, static_cast<int>(stages_.size()));
        return classifier(h)->value;
    }

    TensorF full_logits(const TensorF& x_batch) const {
        return classifier(run_stages(ag::constant(x_batch), 0, static_cast<int>(stages_.size())))->value;
    }

    // the black-box oracle: one (3,H,W) image in [-1,1] -> one defended feature
    TensorF query_head(const TensorF& image, const DefenseConfig& d, Rng& rng) const {
        check_shape(image, spec_.input_shape, "victim input");
        for (float v : image.data)
            if (v < -1.0001f || v > 1.0001f) throw InputError("victim input outside [-1,1]");
        TensorF batch({1, spec_.input_shape[0], spec_.input_shape[1], spec_.input_shape[2]});
        batch.data = image.data;
        TensorF f = unstack_one(head(batch), 0);
        return apply_defense(f, d, rng);
    }

    int classify_full(const TensorF& image) const {
        check_shape(image, spec_.input_shape, "victim input");
        TensorF batch({1, spec_.input_shape[0], spec_.input_shape[1], spec_.input_shape[2]});
        batch.data = image.data;
        TensorF lg = full_logits(batch);
        return argmax_row(lg, 0);
    }

    Checkpoint to_checkpoint() const {
        Checkpoint c;
        c.meta = {{"kind", "victim"}, {"victim_id", spec_.victim_id}, {"split_point", spec_.split_point}};
        params_to_checkpoint(params_, c);
        return c;
    }

    void save(const std::string& path) const { to_checkpoint().save(path); }

    static VictimModel from_checkpoint(const Checkpoint& c) {
        if (c.meta.value("kind", "") != "victim") throw ConsistencyError("checkpoint is not a victim model");
        VictimModel m(c.meta.at("victim_id").get<std::string>(), c.meta.at("split_point").get<std::string>(), 0);
        checkpoint_to_params(c, m.params_);
        return m;
    }

    static VictimModel load(const std::string& path) { return from_checkpoint(Checkpoint::load(path)); }

    // argmax with ties broken toward the lowest index
    static int argmax_row(const TensorF& logits, int row) {
        int k = logits.size(1), best = 0;
        for (int j = 1; j < k; ++j)
            if (logits.data[static_cast<size_t>(row) * k + j] > logits.data[static_cast<size_t>(row) * k + best]) best = j;
        return best;
    }

private:
    struct Stage {
        nn::Conv2d<float> down;
        nn::GroupNorm<float> norm;
        nn::ConvBlock<float> block;
        bool has_block = false;
    };

    ag::Var<float> run_stages(ag::Var<float> h, int from, int to) const {
        for (int i = from; i < to; ++i) {
            const Stage& st = stages_[static_cast<size_t>(i)];
            h = ag::silu(st.norm(st.down(h)));
            if (st.has_block) h = st.block(h);
        }
        return h;
    }

    ag::Var<float> classifier(const ag::Var<float>& h) const { return fc_(ag::global_avg_pool(h)); }

    VictimSpec spec_;
    nn::ParamStoreF params_;
    std::vector<Stage> stages_;
    nn::Linear<float> fc_;
    int split_stages_ = 0;
};

// Oracle closure handed to corpus collection: the only path from attacker
// data to the victim.
inline std::function<TensorF(const TensorF&)> make_oracle(const VictimModel& model, const DefenseConfig& defense, Rng rng) {
    return [&model, defense, rng](const TensorF& image) mutable { return model.query_head(image, defense, rng); };
}

struct TrainStats {
    std::vector<float> losses;
    double final_accuracy = 0.0;
};

// quick supervised training on scene images; enough signal for Acc to mean something
inline TrainStats train_victim(VictimModel& model, const std::vector<TensorF>& images, const std::vector<int>& labels,
                               int steps, int batch, double lr, Rng& rng) {
    if (images.empty() || images.size() != labels.size()) throw InputError("train_victim: images/labels mismatch");
    nn::Adam<float> opt(model.params().trainable(), lr);
    TrainStats stats;
    for (int step = 0; step < steps; ++step) {
        std::vector<TensorF> xs;
        std::vector<int> ys;
        for (int b = 0; b < batch; ++b) {
            size_t i = static_cast<size_t>(rng.below(images.size()));
            xs.push_back(images[i]);
            ys.push_back(labels[i]);
        }
        auto x = ag::constant(stack_batch(xs));
        auto loss = ag::cross_entropy(model.logits_graph(x), ys);
        if (!std::isfinite(loss->value.data[0])) throw TrainingError("victim training diverged", step);
        opt.zero_grad();
        ag::backward(loss);
        opt.step();
        stats.losses.push_back(loss->value.data[0]);
    }
    int correct = 0;
    const int eval_n = std::min<int>(256, static_cast<int>(images.size()));
    for (int i = 0; i < eval_n; ++i)
        if (model.classify_full(images[static_cast<size_t>(i)]) == labels[static_cast<size_t>(i)]) ++correct;
    stats.final_accuracy = 100.0 * correct / eval_n;
    return stats;
}

inline std::string victims_list_text() {
    std::string out;
    for (const auto& v : victim_registry()) {
        out += v.id + "  input " + shape_str(v.input_shape) + ", " + std::to_string(v.num_classes) + " classes\n";
        for (const auto& s : v.splits) out += "  split " + s.name + "  feature " + shape_str(s.feature_shape) + "\n";
    }
    return out;
}

}  // namespace victim
}  // namespace fia
