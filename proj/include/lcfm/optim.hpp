#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "lcfm/autodiff.hpp"

namespace lcfm {

/// Adam moment buffers, one pair per parameter, in parameter order.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t t = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    explicit AdamState(const std::vector<ad::Param>& params) {
        m.reserve(params.size());
        v.reserve(params.size());
        for (const auto& p : params) {
            m.push_back(Tensor::zeros(p.value.shape));
            v.push_back(Tensor::zeros(p.value.shape));
        }
    }
};

/// One bias-corrected Adam update from the gradients currently in
/// Param::grad. Gradients are left untouched; callers zero them per batch.
inline void adam_step(std::vector<ad::Param>& params, AdamState& st, double lr) {
    if (st.m.size() != params.size())
        raise(ErrorCode::ShapeMismatch, "adam_step: state does not match parameter list");
    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    using Arr = Eigen::Map<Eigen::ArrayXd>;
    using ConstArr = Eigen::Map<const Eigen::ArrayXd>;
    for (std::size_t i = 0; i < params.size(); ++i) {
        ad::Param& p = params[i];
        const auto n = static_cast<Eigen::Index>(p.value.numel());
        ConstArr g(p.grad.data.data(), n);
        Arr m(st.m[i].data.data(), n);
        Arr v(st.v[i].data.data(), n);
        Arr x(p.value.data.data(), n);
        m = st.beta1 * m + (1.0 - st.beta1) * g;
        v = st.beta2 * v + (1.0 - st.beta2) * g.square();
        x -= lr * (m / bc1) / ((v / bc2).sqrt() + st.eps);
    }
}

/// Scales every gradient by max_norm/g when the global L2 norm g exceeds
/// max_norm. Returns the scale actually applied (1.0 when untouched).
inline double clip_global_norm(std::vector<ad::Param>& params, double max_norm = 0.5) {
    double sq = 0.0;
    for (const auto& p : params) sq += squared_norm(p.grad);
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return 1.0;
    const double scale = max_norm / norm;
    for (auto& p : params)
        for (double& g : p.grad.data) g *= scale;
    return scale;
}

/// Replays the plateau rule over a validation-loss history: the rate halves
/// (times `factor`) whenever `patience` consecutive epochs fail to improve on
/// the best loss by more than `min_delta`; any improvement resets the count.
inline double plateau_lr(const std::vector<double>& history, double initial_lr, double factor = 0.5,
                         std::size_t patience = 5, double min_delta = 1e-6) {
    if (history.empty()) raise(ErrorCode::EmptyDataset, "plateau_lr: empty history");
    double lr = initial_lr;
    double best = history[0];
    std::size_t bad = 0;
    for (std::size_t i = 1; i < history.size(); ++i) {
        if (history[i] < best - min_delta) {
            best = history[i];
            bad = 0;
        } else if (++bad >= patience) {
            lr *= factor;
            bad = 0;
        }
    }
    return lr;
}

/// True iff the best epoch lies more than `patience` epochs in the past.
inline bool early_stop(const std::vector<double>& history, std::size_t patience = 50) {
    if (history.empty()) raise(ErrorCode::EmptyDataset, "early_stop: empty history");
    std::size_t best = 0;
    for (std::size_t i = 1; i < history.size(); ++i)
        if (history[i] < history[best]) best = i;
    return history.size() - 1 - best > patience;
}

}  // namespace lcfm
