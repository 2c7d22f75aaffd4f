#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "biasblend/tensor.hpp"

namespace bb {

// Adam with bias correction. Defaults per the training setup: lr 1e-4,
// beta1 0.9, beta2 0.999, eps 1e-8. One state per parameter tensor; the
// step counter is shared so all tensors see the same bias correction.
struct AdamConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

class AdamState {
public:
    AdamState() = default;
    AdamState(std::vector<Shape> shapes, AdamConfig cfg = {}) : cfg_(cfg) {
        for (auto& s : shapes) {
            m_.emplace_back(s);
            v_.emplace_back(s);
        }
    }

    std::size_t size() const { return m_.size(); }
    std::int64_t step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    // One optimizer step over aligned parameter/gradient lists.
    void step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads) {
        check(params.size() == m_.size() && grads.size() == m_.size(),
              "adam_step: expected ", m_.size(), " tensors, got ", params.size(), " params / ",
              grads.size(), " grads");
        ++t_;
        const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
        for (std::size_t p = 0; p < params.size(); ++p) {
            Tensor& w = *params[p];
            const Tensor& g = *grads[p];
            Tensor& m = m_[p];
            Tensor& v = v_[p];
            check(w.shape == m.shape && g.shape == m.shape, "adam_step: tensor ", p,
                  " shape mismatch: param ", shape_str(w.shape), " vs state ", shape_str(m.shape));
            const std::int64_t n = w.numel();
            float* pw = w.data.data();
            const float* pg = g.data.data();
            float* pm = m.data.data();
            float* pv = v.data.data();
#pragma omp parallel for schedule(static)
            for (std::int64_t i = 0; i < n; ++i) {
                pm[i] = cfg_.beta1 * pm[i] + (1.0f - cfg_.beta1) * pg[i];
                pv[i] = cfg_.beta2 * pv[i] + (1.0f - cfg_.beta2) * pg[i] * pg[i];
                const double mhat = pm[i] / bc1;
                const double vhat = pv[i] / bc2;
                pw[i] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace bb
