#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fia/core/autograd.hpp"

// Central-difference gradient checking, double precision only: float loses
// too many digits for a meaningful comparison.
namespace gradcheck {

using fia::ag::Var;

struct Result {
    double max_rel_err = 0.0;
    size_t checked = 0;
};

// build() must construct a fresh scalar graph from the leaves' current values.
inline Result check(std::vector<Var<double>> leaves, const std::function<Var<double>()>& build, double h = 1e-5) {
    for (auto& leaf : leaves) leaf->grad = fia::Tensor<double>();  // drop accumulation from earlier checks
    auto root = build();
    if (root->value.numel() != 1) throw std::logic_error("gradcheck: root must be scalar");
    fia::ag::backward(root);
    Result r;
    for (auto& leaf : leaves) {
        if (!leaf->needs_grad) continue;
        for (size_t i = 0; i < leaf->value.data.size(); ++i) {
            double keep = leaf->value.data[i];
            leaf->value.data[i] = keep + h;
            double up = build()->value.data[0];
            leaf->value.data[i] = keep - h;
            double dn = build()->value.data[0];
            leaf->value.data[i] = keep;
            double num = (up - dn) / (2.0 * h);
            double ana = leaf->grad.data.empty() ? 0.0 : leaf->grad.data[i];
            double err = std::abs(num - ana) / std::max({1e-6, std::abs(num), std::abs(ana)});
            r.max_rel_err = std::max(r.max_rel_err, err);
            ++r.checked;
        }
    }
    return r;
}

}  // namespace gradcheck
