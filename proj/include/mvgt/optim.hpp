#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mvgt/errors.hpp"
#include "mvgt/tensor.hpp"

namespace mvgt::numkit {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

// AdamW with decoupled weight decay: the decay term is applied directly to
// the parameter, never folded into the gradient moments.
class AdamW {
public:
    struct NamedParam {
        std::string name;
        Tensor tensor;
    };

    AdamW(std::vector<NamedParam> params, AdamWConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].tensor.numel(), 0.0);
            v_[i].assign(params_[i].tensor.numel(), 0.0);
        }
    }

    std::size_t step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    void step() {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& t = params_[pi].tensor;
            auto& val = t.data();
            const auto& grad = t.grad();
            if (grad.size() != val.size())
                throw NumericError("adamw: parameter '" + params_[pi].name +
                                   "' has no gradient buffer");
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (std::size_t i = 0; i < val.size(); ++i) {
                const double g = grad[i];
                if (std::isnan(g))
                    throw NumericError("adamw: NaN gradient in parameter '" +
                                       params_[pi].name + "' at element " +
                                       std::to_string(i));
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                val[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                     cfg_.weight_decay * val[i]);
            }
        }
    }

private:
    std::vector<NamedParam> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t step_ = 0;
};

} // namespace mvgt::numkit
