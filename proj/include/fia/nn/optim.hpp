#pragma once

#include <cmath>
#include <vector>

#include "fia/core/autograd.hpp"

namespace fia {
namespace nn {

// Plain Adam. Moment buffers are allocated on construction, one slot per
// parameter in the order given, so the pairing is stable across steps.
template <typename T>
class Adam {
public:
    explicit Adam(std::vector<ag::Var<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->value.numel(), 0.0);
            v_[i].assign(params_[i]->value.numel(), 0.0);
        }
    }

    void zero_grad() { ag::zero_grad(params_); }

    void step() {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            if (p.grad.data.empty()) continue;  // parameter unused this step
            for (size_t j = 0; j < p.value.data.size(); ++j) {
                double g = static_cast<double>(p.grad.data[j]);
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
                double mh = m_[i][j] / bc1;
                double vh = v_[i][j] / bc2;
                p.value.data[j] -= static_cast<T>(lr_ * mh / (std::sqrt(vh) + eps_));
            }
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    long steps_taken() const { return t_; }

private:
    std::vector<ag::Var<T>> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

using AdamF = Adam<float>;

}  // namespace nn
}  // namespace fia
