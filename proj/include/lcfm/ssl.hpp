#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <thread>
#include <optional>
#include <vector>

#include "lcfm/model.hpp"
#include "lcfm/optim.hpp"

namespace lcfm {

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

struct MaskSpec {
    enum class Kind { random_block, forecast_tail };
    Kind kind = Kind::random_block;
    double fraction = 0.25;
    std::vector<std::size_t> indices;

    std::size_t block_len() const {
        return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(kCurveLen)));
    }
};

/// The final round(fraction * 128) indices; 0.25 gives exactly {96..127}.
inline MaskSpec make_forecast_mask(double fraction = 0.25) {
    if (fraction <= 0.0 || fraction >= 1.0) raise(ErrorCode::BadFraction, "fraction must lie in (0,1)");
    MaskSpec m;
    m.kind = MaskSpec::Kind::forecast_tail;
    m.fraction = fraction;
    const std::size_t len = m.block_len();
    for (std::size_t i = kCurveLen - len; i < kCurveLen; ++i) m.indices.push_back(i);
    return m;
}

/// One contiguous block of round(fraction * 128) indices at a seeded-random
/// start position.
inline MaskSpec make_random_block_mask(double fraction, Rng& rng) {
    if (fraction <= 0.0 || fraction >= 1.0) raise(ErrorCode::BadFraction, "fraction must lie in (0,1)");
    MaskSpec m;
    m.kind = MaskSpec::Kind::random_block;
    m.fraction = fraction;
    const std::size_t len = m.block_len();
    const std::size_t start = static_cast<std::size_t>(rng.below(kCurveLen - len + 1));
    for (std::size_t i = start; i < start + len; ++i) m.indices.push_back(i);
    return m;
}

/// Zeroes the value channel on masked positions; positional features are
/// attached later by build_input and stay untouched.
inline std::vector<double> apply_value_mask(const std::vector<double>& values, const MaskSpec& m) {
    std::vector<double> out = values;
    for (std::size_t i : m.indices) out[i] = 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Loss components (value level; the tape has matching differentiable ops)
// ---------------------------------------------------------------------------

/// Mean squared error over all points.
inline double loss_recon(const std::vector<double>& x, const std::vector<double>& xhat) {
    if (x.size() != xhat.size()) raise(ErrorCode::ShapeMismatch, "loss_recon length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - xhat[i];
        acc += d * d;
    }
    return acc / static_cast<double>(x.size());
}

/// Mean squared error restricted to the masked index set.
inline double loss_masked(const std::vector<double>& x, const std::vector<double>& xhat, const MaskSpec& m) {
    if (x.size() != xhat.size()) raise(ErrorCode::ShapeMismatch, "loss_masked length mismatch");
    if (m.indices.empty()) raise(ErrorCode::EmptyMask, "mask has no indices");
    double acc = 0.0;
    for (std::size_t i : m.indices) {
        const double d = x[i] - xhat[i];
        acc += d * d;
    }
    return acc / static_cast<double>(m.indices.size());
}

/// Masked MSE over the forecast tail; rejects non-tail masks.
inline double loss_forecast(const std::vector<double>& x, const std::vector<double>& xhat, const MaskSpec& m) {
    if (m.kind != MaskSpec::Kind::forecast_tail)
        raise(ErrorCode::BadMaskKind, "forecast loss requires a forecast_tail mask");
    return loss_masked(x, xhat, m);
}

/// -1/2 sum_j (1 + logvar_j - mu_j^2 - exp(logvar_j)).
inline double loss_kl(const Tensor& mu, const Tensor& logvar) {
    check_same_shape(mu, logvar, "loss_kl");
    double acc = 0.0;
    for (std::size_t j = 0; j < mu.numel(); ++j)
        acc += 1.0 + logvar[j] - mu[j] * mu[j] - std::exp(logvar[j]);
    return -0.5 * acc;
}

/// Per-epoch loss components. `total` is always recomposed from the parts,
/// so the additivity identity holds exactly.
struct LossBreakdown {
    double total = 0.0;
    double recon = 0.0;
    double mask = 0.0;
    double forecast = 0.0;
    double kl = 0.0;
    double alpha = 0.001;

    void recompose() { total = recon + alpha * kl + mask + forecast; }
};

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

/// Pre-training hyperparameters (see the pretrain.* config keys).
struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch = 32;
    double alpha = 0.001;
    double clip = 0.5;
    double sched_factor = 0.5;
    std::size_t sched_patience = 5;
    std::size_t early_patience = 50;
    std::size_t max_epochs = 200;
    double mask_fraction = 0.25;
    double forecast_fraction = 0.25;
    double val_fraction = 0.1;
};

struct EpochRecord {
    std::size_t epoch = 0;
    LossBreakdown train;
    LossBreakdown val;
    double lr = 0.0;
    double train_class = 0.0;   // classification loss, when a head is active
    double val_class = 0.0;
    double val_accuracy = -1.0;  // -1 when classification is off
};

struct TrainResult {
    ModelParams params;  // best-epoch snapshot
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
};

// ---------------------------------------------------------------------------
// The shared optimisation loop
// ---------------------------------------------------------------------------

/// Everything the loop needs, whether pre-training (classification off) or
/// fine-tuning (classification on). Fine-tuning with class_weight = 0 is
/// numerically identical to pre-training on the same seed by construction.
struct LoopOptions {
    double lr = 1e-3;
    std::size_t batch = 32;
    double alpha = 0.001;
    double clip = 0.5;
    double sched_factor = 0.5;
    std::size_t sched_patience = 5;   // 0 disables the scheduler
    std::size_t early_patience = 50;  // 0 disables early stopping
    std::size_t max_epochs = 200;
    double mask_fraction = 0.25;
    double forecast_fraction = 0.25;
    bool classification = false;
    double class_weight = 1.0;
    bool stratified_batches = false;
    bool select_by_accuracy = false;
    bool sample_latent = true;  // false trains through z = mu (debug/ablation)
    double stop_when_train_recon_below = 0.0;  // 0 disables the convergence exit
    std::size_t threads = 0;                   // workers per batch; 0 = auto (max 2)

    /// Called once per epoch with eval-mode class probabilities of the
    /// validation set (classification mode only).
    std::function<void(std::size_t, const std::vector<Tensor>&, const std::vector<std::size_t>&)>
        epoch_observer;
};

namespace detail {

struct CurveTerms {
    double recon = 0.0, mask = 0.0, forecast = 0.0, kl = 0.0, cls = 0.0;
    std::optional<Tensor> probs;  // full simplex, eval reporting
};

/// Randomness for one curve's three passes, drawn up front so graph
/// execution can run on any thread without touching the loop rng.
struct PassPlan {
    Tensor eps_full, eps_mask, eps_forecast;
    MaskSpec mask;
};

inline PassPlan make_pass_plan(const LoopOptions& opt, std::size_t z_dim, Rng& rng, bool train_mode) {
    const bool sample = train_mode && opt.sample_latent;
    PassPlan plan;
    plan.eps_full = sample ? draw_eps(z_dim, rng) : Tensor::zeros({z_dim});
    plan.mask = make_random_block_mask(opt.mask_fraction, rng);
    plan.eps_mask = sample ? draw_eps(z_dim, rng) : Tensor::zeros({z_dim});
    plan.eps_forecast = sample ? draw_eps(z_dim, rng) : Tensor::zeros({z_dim});
    return plan;
}

/// Three SSL passes (full, masked, tail-masked) for one curve, plus the
/// optional classification term on the full pass's z.
inline CurveTerms curve_pass(ad::Tape& t, ParamSource& ps, const LightCurve& curve,
                             const LoopOptions& opt, const PassPlan& plan, ad::Tape::Id* loss_out) {
    const ModelConfig& cfg = ps.model().cfg;
    const Tensor target = Tensor::vector(curve.values);

    // full reconstruction pass; KL comes from this pass's latent statistics
    const auto full = forward_on_tape(t, ps, build_input(curve, cfg.enc), plan.eps_full, opt.classification);
    const auto recon_id = t.mse(full.recon, target);
    const auto kl_id = t.kl_std_normal(full.mu, full.logvar);

    // masked pass
    LightCurve masked = curve;
    masked.values = apply_value_mask(curve.values, plan.mask);
    const auto mp_pass = forward_on_tape(t, ps, build_input(masked, cfg.enc), plan.eps_mask, false);
    const auto mask_id = t.mse_indices(mp_pass.recon, target, plan.mask.indices);

    // forecast pass
    const MaskSpec f = make_forecast_mask(opt.forecast_fraction);
    LightCurve tail = curve;
    tail.values = apply_value_mask(curve.values, f);
    const auto fc_pass = forward_on_tape(t, ps, build_input(tail, cfg.enc), plan.eps_forecast, false);
    const auto forecast_id = t.mse_indices(fc_pass.recon, target, f.indices);

    std::vector<ad::Tape::Id> terms{recon_id, kl_id, mask_id, forecast_id};
    std::vector<double> weights{1.0, opt.alpha, 1.0, 1.0};

    CurveTerms out;
    out.recon = t.val(recon_id)[0];
    out.kl = t.val(kl_id)[0];
    out.mask = t.val(mask_id)[0];
    out.forecast = t.val(forecast_id)[0];

    if (opt.classification) {
        if (!curve.label) raise(ErrorCode::UnlabelledData, "curve " + curve.id + " has no label");
        ad::Tape::Id cls_id;
        if (cfg.n_classes == 2) {
            cls_id = t.bce(*full.probs, Tensor::vector({*curve.label == 1 ? 1.0 : 0.0}));
        } else {
            cls_id = t.nll_categorical(*full.probs, {*curve.label});
        }
        terms.push_back(cls_id);
        weights.push_back(opt.class_weight);
        out.cls = t.val(cls_id)[0];
        const Tensor& p = t.val(*full.probs);
        out.probs = cfg.n_classes == 2 ? expand_binary_probs(p) : p;
    }

    if (loss_out) *loss_out = t.weighted_sum(terms, weights);
    return out;
}

inline void check_finite(const CurveTerms& c, std::size_t epoch, const std::string& curve_id) {
    const double probe = c.recon + c.mask + c.forecast + c.kl + c.cls;
    if (!std::isfinite(probe))
        raise(ErrorCode::NonFiniteLoss, "non-finite loss at epoch " + std::to_string(epoch) +
                                            ", curve " + curve_id);
}

/// Class-balanced batches: quotas per batch follow the remaining class
/// proportions with largest-remainder rounding, so every batch's histogram
/// stays within one sample of the stratified ideal while queues last.
inline std::vector<std::vector<std::size_t>> stratified_batches(
    const std::vector<LightCurve>& curves, const std::vector<std::size_t>& train_idx,
    std::size_t n_classes, std::size_t batch, Rng& rng) {
    std::vector<std::vector<std::size_t>> queues(n_classes);
    for (std::size_t i : train_idx) queues[*curves[i].label].push_back(i);
    for (auto& q : queues) rng.shuffle(q);
    std::vector<std::size_t> taken(n_classes, 0);

    std::size_t remaining = train_idx.size();
    std::vector<std::vector<std::size_t>> batches;
    while (remaining > 0) {
        const std::size_t size_b = std::min(batch, remaining);
        std::vector<std::size_t> quota(n_classes, 0);
        std::vector<double> frac(n_classes, 0.0);
        std::size_t assigned = 0;
        for (std::size_t c = 0; c < n_classes; ++c) {
            const std::size_t left = queues[c].size() - taken[c];
            const double exact =
                static_cast<double>(size_b) * static_cast<double>(left) / static_cast<double>(remaining);
            quota[c] = std::min(left, static_cast<std::size_t>(std::floor(exact)));
            frac[c] = exact - std::floor(exact);
            assigned += quota[c];
        }
        while (assigned < size_b) {
            std::size_t best = n_classes;
            for (std::size_t c = 0; c < n_classes; ++c) {
                const std::size_t left = queues[c].size() - taken[c];
                if (quota[c] >= left) continue;
                if (best == n_classes || frac[c] > frac[best]) best = c;
            }
            quota[best] += 1;
            frac[best] = -1.0;
            assigned += 1;
        }
        std::vector<std::size_t> b;
        b.reserve(size_b);
        for (std::size_t c = 0; c < n_classes; ++c)
            for (std::size_t k = 0; k < quota[c]; ++k) b.push_back(queues[c][taken[c]++]);
        remaining -= size_b;
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace detail

/// Runs the optimisation loop from `initial` over the given train/val index
/// sets. Deterministic: identical (curves, indices, options, seed) produce
/// bit-identical histories and parameters.
inline TrainResult train_loop(const ModelParams& initial, const std::vector<LightCurve>& curves,
                              const std::vector<std::size_t>& train_idx,
                              const std::vector<std::size_t>& val_idx, const LoopOptions& opt,
                              std::uint64_t seed) {
    if (train_idx.empty()) raise(ErrorCode::EmptyDataset, "no training curves");
    if (opt.classification && initial.cfg.n_classes == 0)
        raise(ErrorCode::NoHead, "classification requested without a classifier head");

    ModelParams params = initial;
    AdamState adam(params.params);
    Rng rng(seed);

    TrainResult result;
    result.params = params;
    double best_objective = std::numeric_limits<double>::infinity();
    double best_accuracy = -1.0;
    std::vector<double> val_objective_history;

    for (std::size_t epoch = 0; epoch < opt.max_epochs; ++epoch) {
        const double lr = val_objective_history.empty()
                              ? opt.lr
                              : (opt.sched_patience > 0
                                     ? plateau_lr(val_objective_history, opt.lr, opt.sched_factor,
                                                  opt.sched_patience)
                                     : opt.lr);

        // assemble batches
        std::vector<std::vector<std::size_t>> batches;
        if (opt.stratified_batches) {
            batches = detail::stratified_batches(curves, train_idx, params.cfg.n_classes,
                                                 opt.batch, rng);
        } else {
            std::vector<std::size_t> order = train_idx;
            rng.shuffle(order);
            for (std::size_t at = 0; at < order.size(); at += opt.batch) {
                const std::size_t end = std::min(order.size(), at + opt.batch);
                batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train.alpha = opt.alpha;
        rec.val.alpha = opt.alpha;

        // optimise; curve gradients inside a batch may be computed on worker
        // threads, with the merge into Param::grad done in curve order so the
        // result is bit-identical whatever the thread count
        const std::size_t n_threads =
            opt.threads > 0 ? opt.threads
                            : std::max<std::size_t>(1, std::min<std::size_t>(
                                                           2, std::thread::hardware_concurrency()));
        for (const auto& batch : batches) {
            params.zero_grads();
            const double inv_b = 1.0 / static_cast<double>(batch.size());
            std::vector<detail::PassPlan> plans;
            plans.reserve(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i)
                plans.push_back(detail::make_pass_plan(opt, params.cfg.z_dim, rng, /*train_mode=*/true));

            for (std::size_t at = 0; at < batch.size(); at += n_threads) {
                const std::size_t wave = std::min(n_threads, batch.size() - at);
                std::vector<std::unique_ptr<ad::Tape>> tapes(wave);
                std::vector<detail::CurveTerms> terms(wave);
                std::vector<std::exception_ptr> errors(wave);
                auto run_one = [&](std::size_t w) {
                    try {
                        tapes[w] = std::make_unique<ad::Tape>();
                        ParamSource ps(*tapes[w], params);
                        ad::Tape::Id loss_id;
                        terms[w] = detail::curve_pass(*tapes[w], ps, curves[batch[at + w]], opt,
                                                      plans[at + w], &loss_id);
                        tapes[w]->backward(tapes[w]->scale(loss_id, inv_b), /*accumulate_params=*/false);
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                };
                if (wave == 1) {
                    run_one(0);
                } else {
                    std::vector<std::thread> pool;
                    pool.reserve(wave);
                    for (std::size_t w = 0; w < wave; ++w) pool.emplace_back(run_one, w);
                    for (auto& th : pool) th.join();
                }
                for (std::size_t w = 0; w < wave; ++w) {
                    if (errors[w]) std::rethrow_exception(errors[w]);
                    detail::check_finite(terms[w], epoch, curves[batch[at + w]].id);
                    tapes[w]->merge_param_grads();
                    rec.train.recon += terms[w].recon;
                    rec.train.mask += terms[w].mask;
                    rec.train.forecast += terms[w].forecast;
                    rec.train.kl += terms[w].kl;
                    rec.train_class += terms[w].cls;
                }
            }
            clip_global_norm(params.params, opt.clip);
            adam_step(params.params, adam, lr);
        }
        const double inv_n = 1.0 / static_cast<double>(train_idx.size());
        rec.train.recon *= inv_n;
        rec.train.mask *= inv_n;
        rec.train.forecast *= inv_n;
        rec.train.kl *= inv_n;
        rec.train_class *= inv_n;
        rec.train.recompose();

        // validation (eval mode: eps = 0, fixed epoch-stable mask positions)
        std::vector<Tensor> val_probs;
        std::vector<std::size_t> val_labels;
        std::size_t val_correct = 0;
        {
            Rng val_rng(seed ^ 0x76616cull);  // same masks every epoch
            const auto& eval_idx = val_idx.empty() ? train_idx : val_idx;
            for (std::size_t idx : eval_idx) {
                ad::Tape t;
                ParamSource ps(t, std::as_const(params));
                const auto plan = detail::make_pass_plan(opt, params.cfg.z_dim, val_rng, false);
                const auto terms = detail::curve_pass(t, ps, curves[idx], opt, plan, nullptr);
                rec.val.recon += terms.recon;
                rec.val.mask += terms.mask;
                rec.val.forecast += terms.forecast;
                rec.val.kl += terms.kl;
                rec.val_class += terms.cls;
                if (opt.classification) {
                    const Tensor& p = *terms.probs;
                    std::size_t arg = 0;
                    for (std::size_t k = 1; k < p.numel(); ++k)
                        if (p[k] > p[arg]) arg = k;
                    val_correct += arg == *curves[idx].label ? 1 : 0;
                    val_probs.push_back(p);
                    val_labels.push_back(*curves[idx].label);
                }
            }
            const double inv_v = 1.0 / static_cast<double>(eval_idx.size());
            rec.val.recon *= inv_v;
            rec.val.mask *= inv_v;
            rec.val.forecast *= inv_v;
            rec.val.kl *= inv_v;
            rec.val_class *= inv_v;
            rec.val.recompose();
            if (opt.classification)
                rec.val_accuracy = static_cast<double>(val_correct) / static_cast<double>(eval_idx.size());
        }

        const double objective = rec.val.total + (opt.classification ? opt.class_weight * rec.val_class : 0.0);
        val_objective_history.push_back(objective);
        result.history.push_back(rec);
        if (opt.epoch_observer && opt.classification) opt.epoch_observer(epoch, val_probs, val_labels);

        const bool better = opt.select_by_accuracy
                                ? (rec.val_accuracy > best_accuracy ||
                                   (rec.val_accuracy == best_accuracy && objective < best_objective))
                                : objective < best_objective;
        if (better) {
            best_objective = objective;
            best_accuracy = rec.val_accuracy;
            result.params = params;
            result.best_epoch = epoch;
        }

        if (opt.stop_when_train_recon_below > 0.0 && rec.train.recon < opt.stop_when_train_recon_below)
            break;
        if (opt.early_patience > 0 && early_stop(val_objective_history, opt.early_patience)) break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Pre-training entry point
// ---------------------------------------------------------------------------

namespace detail {

/// Plain two-way split for the pre-training validation signal.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(std::size_t n,
                                                                                   double val_fraction,
                                                                                   Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
    n_val = std::min(n_val, n - 1);
    std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    return {std::move(train), std::move(val)};
}

inline LoopOptions loop_options_from(const TrainConfig& cfg) {
    LoopOptions opt;
    opt.lr = cfg.lr;
    opt.batch = cfg.batch;
    opt.alpha = cfg.alpha;
    opt.clip = cfg.clip;
    opt.sched_factor = cfg.sched_factor;
    opt.sched_patience = cfg.sched_patience;
    opt.early_patience = cfg.early_patience;
    opt.max_epochs = cfg.max_epochs;
    opt.mask_fraction = cfg.mask_fraction;
    opt.forecast_fraction = cfg.forecast_fraction;
    return opt;
}

}  // namespace detail

/// Self-supervised pre-training: fresh model, 90/10 holdout for the
/// scheduler and early-stop signals, best-validation-loss parameters out.
inline TrainResult pretrain(const std::vector<LightCurve>& curves, const ModelConfig& model_cfg,
                            const TrainConfig& cfg, std::uint64_t seed) {
    if (curves.size() < 2) raise(ErrorCode::EmptyDataset, "pre-training needs at least 2 curves");
    ModelParams params = init_model(model_cfg, seed);
    Rng master(seed);
    Rng split_rng = master.fork(1);
    const auto [train_idx, val_idx] = detail::holdout_split(curves.size(), cfg.val_fraction, split_rng);
    return train_loop(params, curves, train_idx, val_idx, detail::loop_options_from(cfg), master.raw());
}

}  // namespace lcfm
