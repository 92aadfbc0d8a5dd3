#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "lcfm/model.hpp"
#include "lcfm/ssl.hpp"

namespace lcfm {

/// One scored curve: reconstruction error is the unsupervised anomaly score.
struct AnomalyRecord {
    std::string id;
    double error = 0.0;
    std::optional<double> prob_anomaly;  // binary classifier head, when present
    CurveMeta meta;
};

/// Eval-mode (eps = 0) reconstruction error against the input, per the plain
/// MSE contract. Pure function of (params, curve).
inline double recon_error(const ModelParams& params, const LightCurve& curve) {
    const ForwardOut out = forward(params, curve);
    return loss_recon(curve.values, std::vector<double>(out.recon.data.begin(), out.recon.data.end()));
}

inline AnomalyRecord score_curve(const ModelParams& params, const LightCurve& curve) {
    AnomalyRecord rec;
    rec.id = curve.id;
    rec.meta = curve.meta;
    const ForwardOut out = forward(params, curve);
    rec.error = loss_recon(curve.values, std::vector<double>(out.recon.data.begin(), out.recon.data.end()));
    if (out.class_probs && params.cfg.n_classes == 2 && params.vocab.find("ANOMALY"))
        rec.prob_anomaly = (*out.class_probs)[*params.vocab.find("ANOMALY")];
    return rec;
}

struct RankedAnomalies {
    std::vector<AnomalyRecord> top;     // highest errors, descending
    std::vector<AnomalyRecord> bottom;  // lowest errors, ascending
    std::vector<AnomalyRecord> all;     // descending by error
};

/// Scores every curve and returns both extremes, mirroring the highest- and
/// lowest-error audits. Ties are broken by id so rankings are reproducible.
inline RankedAnomalies rank_anomalies(const ModelParams& params, const std::vector<LightCurve>& curves,
                                      std::size_t k) {
    if (curves.empty()) raise(ErrorCode::EmptySet, "no curves to rank");
    k = std::min(k, curves.size());
    RankedAnomalies out;
    out.all.reserve(curves.size());
    for (const auto& c : curves) out.all.push_back(score_curve(params, c));
    std::sort(out.all.begin(), out.all.end(), [](const AnomalyRecord& a, const AnomalyRecord& b) {
        if (a.error != b.error) return a.error > b.error;
        return a.id < b.id;
    });
    out.top.assign(out.all.begin(), out.all.begin() + static_cast<std::ptrdiff_t>(k));
    out.bottom.assign(out.all.rbegin(), out.all.rbegin() + static_cast<std::ptrdiff_t>(k));
    return out;
}

struct ForecastResult {
    std::vector<double> predicted_tail;   // reconstruction on the masked indices
    std::vector<std::size_t> tail_indices;
    double error = 0.0;  // MSE against the ground-truth tail
};

/// Zeroes the value channel on the final `fraction` of the curve, runs an
/// eval-mode pass, and reads the tail back out of the reconstruction. The
/// ground-truth tail is only ever touched to compute the reported error.
inline ForecastResult forecast(const ModelParams& params, const LightCurve& curve, double fraction = 0.25) {
    const MaskSpec f = make_forecast_mask(fraction);
    LightCurve masked = curve;
    masked.values = apply_value_mask(curve.values, f);
    const ForwardOut out = forward(params, masked);

    ForecastResult res;
    res.tail_indices = f.indices;
    res.predicted_tail.reserve(f.indices.size());
    for (std::size_t i : f.indices) res.predicted_tail.push_back(out.recon[i]);
    res.error = loss_forecast(curve.values, std::vector<double>(out.recon.data.begin(), out.recon.data.end()), f);
    return res;
}

}  // namespace lcfm
