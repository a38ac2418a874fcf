#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "lms2s/tensor.hpp"

namespace lms2s {

// Adam over a fixed set of tensors. Each trained parameter set owns its own
// instance; moment buffers are keyed by position in the construction list.
template <typename S>
class Adam {
public:
    struct Options {
        double lr = 0.001;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam(std::vector<Tensor<S>> params, Options opt = {}) : params_(std::move(params)), opt_(opt) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].numel(), S(0));
            v_[i].assign(params_[i].numel(), S(0));
        }
    }

    // One update from the accumulated grads. Parameters without grads
    // (requires_grad off, e.g. frozen groups) are left byte-identical.
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, t_);
        const double bc2 = 1.0 - std::pow(opt_.beta2, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor<S>& p = params_[i];
            if (!p.requires_grad()) continue;
            auto g = p.grad();
            auto d = p.data();
            for (std::size_t j = 0; j < d.size(); ++j) {
                m_[i][j] = S(opt_.beta1) * m_[i][j] + S(1.0 - opt_.beta1) * g[j];
                v_[i][j] = S(opt_.beta2) * v_[i][j] + S(1.0 - opt_.beta2) * g[j] * g[j];
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                d[j] -= S(opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_)
            if (p.requires_grad()) p.zero_grad();
    }

    // Global-norm gradient clipping over the whole parameter set.
    void clip_grad_norm(double max_norm) {
        if (max_norm <= 0.0) return;
        double total = 0.0;
        for (auto& p : params_)
            if (p.requires_grad())
                for (S g : p.grad()) total += static_cast<double>(g) * static_cast<double>(g);
        total = std::sqrt(total);
        if (total <= max_norm) return;
        const S scale = static_cast<S>(max_norm / total);
        for (auto& p : params_)
            if (p.requires_grad())
                for (S& g : p.grad()) g *= scale;
    }

private:
    std::vector<Tensor<S>> params_;
    Options opt_;
    std::vector<std::vector<S>> m_, v_;
    long t_ = 0;
};

}  // namespace lms2s
