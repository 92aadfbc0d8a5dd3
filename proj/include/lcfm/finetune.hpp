#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "lcfm/metrics.hpp"
#include "lcfm/ssl.hpp"

namespace lcfm {

// ---------------------------------------------------------------------------
// Classification losses (value level; tape ops mirror these)
// ---------------------------------------------------------------------------

/// Binary cross-entropy: -(1/m) sum [y log p + (1-y) log(1-p)], probabilities
/// clamped to [1e-12, 1-1e-12].
inline double loss_class_binary(const std::vector<double>& y, const std::vector<double>& yhat) {
    if (y.size() != yhat.size() || y.empty()) raise(ErrorCode::ShapeMismatch, "y/yhat length mismatch");
    constexpr double kLo = 1e-12, kHi = 1.0 - 1e-12;
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double p = std::min(kHi, std::max(kLo, yhat[i]));
        acc += y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
    }
    return -acc / static_cast<double>(y.size());
}

/// Categorical cross-entropy: mean over samples of -log p[true class], with
/// one-hot targets and simplex prediction rows.
inline double loss_class_categorical(const Tensor& y_onehot, const Tensor& yhat) {
    check_same_shape(y_onehot, yhat, "loss_class_categorical");
    const std::size_t m = y_onehot.rows(), k = y_onehot.cols();
    double acc = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        std::size_t truth = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (y_onehot.at(r, c) > y_onehot.at(r, truth)) truth = c;
        acc += -std::log(std::max(1e-12, yhat.at(r, truth)));
    }
    return acc / static_cast<double>(m);
}

// ---------------------------------------------------------------------------
// Fine-tuning
// ---------------------------------------------------------------------------

/// Pre-trained backbone plus a zero-initialised classifier head for the
/// given vocabulary. Re-attaching the same vocabulary keeps an existing
/// head; a different one is refused.
inline ModelParams add_classifier_head(const ModelParams& pretrained, const ClassVocab& vocab) {
    if (vocab.size() < 2) raise(ErrorCode::BadConfig, "classification needs at least 2 classes");
    if (pretrained.cfg.n_classes > 0) {
        if (pretrained.vocab == vocab) return pretrained;
        raise(ErrorCode::VocabMismatch, "checkpoint already carries a different class vocabulary");
    }
    ModelConfig cfg = pretrained.cfg;
    cfg.n_classes = vocab.size();
    ModelParams out = init_model(cfg, 0);  // head layers are zero-initialised
    out.vocab = vocab;
    for (auto& p : out.params)
        if (pretrained.has(p.name)) p.value = pretrained.at(p.name).value;
    return out;
}

/// Fine-tuning hyperparameters (the finetune.* config keys). The scheduler
/// patience defaults to the motion-task setting; pass 0 to disable.
struct FinetuneConfig {
    double lr = 1e-4;
    std::size_t batch = 32;
    double alpha = 0.001;
    double clip = 0.5;
    double sched_factor = 0.5;
    std::size_t sched_patience = 10;
    std::size_t early_patience = 0;  // off unless configured
    std::size_t max_epochs = 100;
    double mask_fraction = 0.25;
    double forecast_fraction = 0.25;
    double class_weight = 1.0;
    bool stratified_batches = true;
    std::array<double, 3> split{0.70, 0.15, 0.15};
};

struct FinetuneResult {
    ModelParams params;  // best-epoch snapshot (by validation accuracy)
    std::vector<EpochRecord> history;
    std::vector<MetricsReport> epoch_reports;  // validation metrics per epoch
    Splits splits;
    std::size_t best_epoch = 0;
};

/// Eval-mode class probabilities for the given curves.
inline std::vector<Tensor> predict_probs(const ModelParams& params, const std::vector<LightCurve>& curves,
                                         const std::vector<std::size_t>& indices) {
    std::vector<Tensor> probs;
    probs.reserve(indices.size());
    for (std::size_t i : indices) {
        const ForwardOut out = forward(params, curves[i]);
        if (!out.class_probs) raise(ErrorCode::NoHead, "model has no classifier head");
        probs.push_back(*out.class_probs);
    }
    return probs;
}

/// Metrics of the model on the indexed subset (labels required).
inline MetricsReport evaluate_classifier(const ModelParams& params, const std::vector<LightCurve>& curves,
                                         const std::vector<std::size_t>& indices) {
    std::vector<std::size_t> labels;
    labels.reserve(indices.size());
    for (std::size_t i : indices) {
        if (!curves[i].label) raise(ErrorCode::UnlabelledData, "curve " + curves[i].id + " has no label");
        labels.push_back(*curves[i].label);
    }
    return compute_metrics(labels, predict_probs(params, curves, indices), params.cfg.n_classes);
}

/// Supervised fine-tuning: optimises the full SSL objective plus the
/// classification term on stratified class-balanced batches, keeping the
/// best validation-accuracy epoch (ties broken by lower validation loss).
inline FinetuneResult finetune(const ModelParams& pretrained, const std::vector<LightCurve>& curves,
                               const ClassVocab& vocab, const FinetuneConfig& cfg, std::uint64_t seed) {
    if (curves.empty()) raise(ErrorCode::EmptyDataset, "fine-tuning needs labelled curves");
    for (const auto& c : curves) {
        if (!c.label) raise(ErrorCode::UnlabelledData, "curve " + c.id + " has no label");
        if (*c.label >= vocab.size())
            raise(ErrorCode::VocabMismatch, "curve " + c.id + " labelled outside the vocabulary");
    }

    ModelParams params = add_classifier_head(pretrained, vocab);

    FinetuneResult result;
    result.splits = split_dataset(curves, cfg.split, seed, /*stratify=*/true);

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
    opt.classification = true;
    opt.class_weight = cfg.class_weight;
    opt.stratified_batches = cfg.stratified_batches;
    opt.select_by_accuracy = true;
    opt.epoch_observer = [&](std::size_t, const std::vector<Tensor>& probs,
                             const std::vector<std::size_t>& labels) {
        result.epoch_reports.push_back(compute_metrics(labels, probs, vocab.size()));
    };

    Rng master(seed);
    master.fork(1);  // mirror the pretrain seed schedule
    TrainResult tr = train_loop(params, curves, result.splits.train, result.splits.val, opt, master.raw());
    result.params = std::move(tr.params);
    result.history = std::move(tr.history);
    result.best_epoch = tr.best_epoch;
    return result;
}

}  // namespace lcfm
