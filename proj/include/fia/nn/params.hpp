#pragma once

#include <map>
#include <string>
#include <vector>

#include "fia/core/autograd.hpp"
#include "fia/core/sha256.hpp"

namespace fia {
namespace nn {

// Named parameter registry for one model. Insertion order is part of the
// contract: digests, checkpoints and optimizer slots all walk it in order.
template <typename T>
class ParamStore {
public:
    ag::Var<T> add(const std::string& name, Tensor<T> init, bool trainable = true) {
        if (map_.count(name)) throw RegistryError("parameter already registered: " + name);
        auto v = ag::leaf(std::move(init), trainable);
        order_.push_back(name);
        map_[name] = v;
        return v;
    }

    ag::Var<T> get(const std::string& name) const {
        auto it = map_.find(name);
        if (it == map_.end()) throw RegistryError("no such parameter: " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return map_.count(name) != 0; }
    const std::vector<std::string>& names() const { return order_; }

    std::vector<ag::Var<T>> all() const {
        std::vector<ag::Var<T>> out;
        out.reserve(order_.size());
        for (const auto& n : order_) out.push_back(map_.at(n));
        return out;
    }

    std::vector<ag::Var<T>> trainable() const {
        std::vector<ag::Var<T>> out;
        for (const auto& n : order_)
            if (map_.at(n)->needs_grad) out.push_back(map_.at(n));
        return out;
    }

    void set_trainable(bool on) {
        for (auto& kv : map_) kv.second->needs_grad = on;
    }

    size_t total_params() const {
        size_t n = 0;
        for (const auto& kv : map_) n += kv.second->value.numel();
        return n;
    }

    // Values are hashed as float32 little-endian regardless of T, so a store
    // and its checkpoint on disk always agree.
    std::string digest() const {
        Sha256 h;
        for (const auto& name : order_) {
            const auto& t = map_.at(name)->value;
            h.update(name.data(), name.size());
            uint32_t nd = static_cast<uint32_t>(t.shape.size());
            h.update(&nd, sizeof nd);
            for (int d : t.shape) {
                uint32_t u = static_cast<uint32_t>(d);
                h.update(&u, sizeof u);
            }
            for (T v : t.data) {
                float f = static_cast<float>(v);
                h.update(&f, sizeof f);
            }
        }
        return h.finish_hex();
    }

    void set_values(const std::string& name, const TensorF& vals) {
        auto v = get(name);
        if (shape_numel(vals.shape) != v->value.numel())
            throw ConsistencyError("parameter size mismatch for " + name + ": stored " + shape_str(vals.shape) +
                                   ", model wants " + shape_str(v->value.shape));
        for (size_t i = 0; i < vals.data.size(); ++i) v->value.data[i] = static_cast<T>(vals.data[i]);
    }

    TensorF get_values(const std::string& name) const {
        auto v = get(name);
        TensorF out(v->value.shape);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(v->value.data[i]);
        return out;
    }

private:
    std::vector<std::string> order_;
    std::map<std::string, ag::Var<T>> map_;
};

using ParamStoreF = ParamStore<float>;

}  // namespace nn
}  // namespace fia
