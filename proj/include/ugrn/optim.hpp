#pragma once

// First-order optimisers over a fixed list of parameter tensors.

#include <cmath>
#include <vector>

#include "ugrn/autodiff.hpp"

namespace ugrn::optim {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
  public:
    Adam(std::vector<ad::Tensor*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (auto* p : params_) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }

    /// grads[k] must match params[k] in size.
    void step(const std::vector<ad::Tensor>& grads) {
        ensure(grads.size() == params_.size(), "Adam::step: gradient count mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k]->values;
            const auto& g = grads[k].values;
            ensure(g.size() == p.size(), "Adam::step: gradient shape mismatch");
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t q = 0; q < p.size(); ++q) {
                m[q] = cfg_.beta1 * m[q] + (1.0 - cfg_.beta1) * g[q];
                v[q] = cfg_.beta2 * v[q] + (1.0 - cfg_.beta2) * g[q] * g[q];
                const double mh = m[q] / bc1;
                const double vh = v[q] / bc2;
                p[q] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
            }
        }
    }

    long steps() const { return t_; }

  private:
    std::vector<ad::Tensor*> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

/// Plain gradient descent: p -= lr * g.
class GradientDescent {
  public:
    GradientDescent(std::vector<ad::Tensor*> params, double lr) : params_(std::move(params)), lr_(lr) {}

    void step(const std::vector<ad::Tensor>& grads) {
        ensure(grads.size() == params_.size(), "GradientDescent::step: gradient count mismatch");
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k]->values;
            const auto& g = grads[k].values;
            for (std::size_t q = 0; q < p.size(); ++q) p[q] -= lr_ * g[q];
        }
    }

  private:
    std::vector<ad::Tensor*> params_;
    double lr_;
};

}  // namespace ugrn::optim
