#pragma once

#include "csunet/network.hpp"

namespace csunet {

// Warmup-then-cosine learning rate. Linear ramp (epoch+1)/warmup * base over
// the first `warmup` epochs, cosine decay to 0 over the remainder.
inline double lr_schedule(int64_t epoch, int64_t total, double base_lr, int64_t warmup = 10) {
    if (epoch < 0 || epoch >= total) throw UsageError("lr_schedule: epoch out of range");
    if (epoch < warmup) return base_lr * double(epoch + 1) / double(warmup);
    if (total <= warmup) return base_lr;
    const double t = double(epoch - warmup) / double(total - warmup);
    return 0.5 * base_lr * (1.0 + std::cos(M_PI * t));
}

// AdamW with decoupled weight decay applied before the Adam update:
// p <- p*(1 - lr*wd); then bias-corrected moment step.
template <typename T>
class AdamW {
public:
    struct Hyper {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 5e-4;
    };

    AdamW(ParamStore<T>& params, Hyper hp = {}) : params_(&params), hp_(hp) {
        for (const auto& name : params.order()) {
            const Tensor<T>& p = params.at(name);
            m_.emplace(name, Tensor<T>::zeros(p.shape()));
            v_.emplace(name, Tensor<T>::zeros(p.shape()));
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(hp_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(hp_.beta2, double(t_));
        for (const auto& name : params_->order()) {
            Tensor<T>& p = params_->at(name);
            if (!p.has_grad())
                throw UsageError("adamw: parameter " + name + " has no gradient");
            T* pd = p.ptr();
            const auto g = p.grad();
            T* pm = m_.at(name).ptr();
            T* pv = v_.at(name).ptr();
            const int64_t n = p.size();
            for (int64_t i = 0; i < n; ++i) {
                pd[i] *= T(1.0 - lr * hp_.weight_decay);
                pm[i] = T(hp_.beta1) * pm[i] + T(1.0 - hp_.beta1) * g[i];
                pv[i] = T(hp_.beta2) * pv[i] + T(1.0 - hp_.beta2) * g[i] * g[i];
                const double mhat = double(pm[i]) / bc1;
                const double vhat = double(pv[i]) / bc2;
                pd[i] -= T(lr * mhat / (std::sqrt(vhat) + hp_.eps));
            }
        }
    }

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    const Hyper& hyper() const { return hp_; }
    std::map<std::string, Tensor<T>>& moments1() { return m_; }
    std::map<std::string, Tensor<T>>& moments2() { return v_; }

private:
    ParamStore<T>* params_;
    Hyper hp_;
    int64_t t_ = 0;
    std::map<std::string, Tensor<T>> m_, v_;
};

}  // namespace csunet
