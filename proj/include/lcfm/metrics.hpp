#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcfm/errors.hpp"
#include "lcfm/tensor.hpp"
#include "lcfm/vocab.hpp"

namespace lcfm {

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double roc_auc = 0.0;
    std::size_t support = 0;
    bool zero_division = false;  // precision/recall hit an empty denominator
};

struct MetricsReport {
    double accuracy = 0.0;
    double roc_auc = 0.0;  // binary AUC, or unweighted macro one-vs-rest mean
    std::vector<ClassMetrics> per_class;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    std::size_t n = 0;
};

inline double metric_accuracy(const std::vector<std::size_t>& labels,
                              const std::vector<std::size_t>& predictions) {
    if (labels.size() != predictions.size() || labels.empty())
        raise(ErrorCode::ShapeMismatch, "labels/predictions length mismatch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += labels[i] == predictions[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

inline std::vector<std::vector<std::size_t>> metric_confusion(const std::vector<std::size_t>& labels,
                                                              const std::vector<std::size_t>& predictions,
                                                              std::size_t n_classes) {
    if (labels.size() != predictions.size())
        raise(ErrorCode::ShapeMismatch, "labels/predictions length mismatch");
    std::vector<std::vector<std::size_t>> m(n_classes, std::vector<std::size_t>(n_classes, 0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= n_classes || predictions[i] >= n_classes)
            raise(ErrorCode::VocabMismatch, "class index outside vocabulary");
        m[labels[i]][predictions[i]] += 1;
    }
    return m;
}

/// One-vs-rest precision/recall/F1 from a confusion matrix; empty
/// denominators yield 0 with the zero_division flag set.
inline std::vector<ClassMetrics> metric_prf1(const std::vector<std::vector<std::size_t>>& confusion) {
    const std::size_t k = confusion.size();
    std::vector<ClassMetrics> out(k);
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t tp = confusion[c][c], fp = 0, fn = 0;
        for (std::size_t r = 0; r < k; ++r) {
            if (r == c) continue;
            fp += confusion[r][c];
            fn += confusion[c][r];
        }
        ClassMetrics& m = out[c];
        m.support = tp + fn;
        if (tp + fp == 0) {
            m.precision = 0.0;
            m.zero_division = true;
        } else {
            m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        }
        if (tp + fn == 0) {
            m.recall = 0.0;
            m.zero_division = true;
        } else {
            m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        }
        m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    }
    return out;
}

/// Probability that a random positive outranks a random negative, ties
/// counted half (Mann-Whitney). Counting over sorted tie groups keeps every
/// term a multiple of 0.5, so the result agrees exactly with the O(n^2)
/// pairwise definition.
inline double metric_roc_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
    if (labels.size() != scores.size() || labels.empty())
        raise(ErrorCode::ShapeMismatch, "labels/scores length mismatch");
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += y ? 1 : 0;
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) raise(ErrorCode::SingleClass, "ROC AUC needs both classes present");

    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double numerator = 0.0;
    std::size_t neg_below = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i, pos_in_group = 0, neg_in_group = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            pos_in_group += labels[order[j]] ? 1 : 0;
            neg_in_group += labels[order[j]] ? 0 : 1;
            ++j;
        }
        numerator += static_cast<double>(pos_in_group) * static_cast<double>(neg_below);
        numerator += 0.5 * static_cast<double>(pos_in_group) * static_cast<double>(neg_in_group);
        neg_below += neg_in_group;
        i = j;
    }
    return numerator / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Unweighted mean of one-vs-rest AUCs over the classes present in labels.
inline double macro_roc_auc(const std::vector<std::size_t>& labels, const std::vector<Tensor>& probs,
                            std::size_t n_classes) {
    if (labels.size() != probs.size() || labels.empty())
        raise(ErrorCode::ShapeMismatch, "labels/probs length mismatch");
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::vector<int> y(labels.size());
        std::vector<double> s(labels.size());
        std::size_t pos = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            y[i] = labels[i] == c ? 1 : 0;
            pos += y[i];
            s[i] = probs[i][c];
        }
        if (pos == 0 || pos == labels.size()) continue;  // class absent: OvR undefined
        sum += metric_roc_auc(y, s);
        counted += 1;
    }
    if (counted == 0) raise(ErrorCode::SingleClass, "no class admits a one-vs-rest AUC");
    return sum / static_cast<double>(counted);
}

/// Full report from per-sample class probabilities; predictions are argmax.
inline MetricsReport compute_metrics(const std::vector<std::size_t>& labels,
                                     const std::vector<Tensor>& probs, std::size_t n_classes) {
    if (labels.size() != probs.size() || labels.empty())
        raise(ErrorCode::ShapeMismatch, "labels/probs length mismatch");
    std::vector<std::size_t> preds(labels.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        std::size_t arg = 0;
        for (std::size_t k = 1; k < probs[i].numel(); ++k)
            if (probs[i][k] > probs[i][arg]) arg = k;
        preds[i] = arg;
    }
    MetricsReport rep;
    rep.n = labels.size();
    rep.accuracy = metric_accuracy(labels, preds);
    rep.confusion = metric_confusion(labels, preds, n_classes);
    rep.per_class = metric_prf1(rep.confusion);
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::vector<int> y(labels.size());
        std::vector<double> s(labels.size());
        std::size_t pos = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            y[i] = labels[i] == c ? 1 : 0;
            pos += y[i];
            s[i] = probs[i][c];
        }
        rep.per_class[c].roc_auc = pos == 0 || pos == labels.size() ? 0.0 : metric_roc_auc(y, s);
    }
    if (n_classes == 2) {
        std::vector<int> y(labels.size());
        std::vector<double> s(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            y[i] = labels[i] == 1 ? 1 : 0;
            s[i] = probs[i][1];
        }
        rep.roc_auc = metric_roc_auc(y, s);
    } else {
        rep.roc_auc = macro_roc_auc(labels, probs, n_classes);
    }
    return rep;
}

inline nlohmann::json metrics_to_json(const MetricsReport& rep, const ClassVocab& vocab) {
    nlohmann::json per_class = nlohmann::json::array();
    for (std::size_t c = 0; c < rep.per_class.size(); ++c) {
        const auto& m = rep.per_class[c];
        per_class.push_back({{"class", vocab.name(c)},
                             {"precision", m.precision},
                             {"recall", m.recall},
                             {"f1", m.f1},
                             {"roc_auc", m.roc_auc},
                             {"support", m.support},
                             {"zero_division", m.zero_division}});
    }
    return nlohmann::json{{"accuracy", rep.accuracy},
                          {"roc_auc", rep.roc_auc},
                          {"n", rep.n},
                          {"per_class", per_class},
                          {"confusion", rep.confusion}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j, const ClassVocab& vocab) {
    MetricsReport rep;
    rep.accuracy = j.at("accuracy").get<double>();
    rep.roc_auc = j.at("roc_auc").get<double>();
    rep.n = j.at("n").get<std::size_t>();
    rep.per_class.resize(vocab.size());
    for (const auto& e : j.at("per_class")) {
        const std::size_t c = vocab.index_of(e.at("class").get<std::string>());
        rep.per_class[c].precision = e.at("precision").get<double>();
        rep.per_class[c].recall = e.at("recall").get<double>();
        rep.per_class[c].f1 = e.at("f1").get<double>();
        rep.per_class[c].roc_auc = e.at("roc_auc").get<double>();
        rep.per_class[c].support = e.at("support").get<std::size_t>();
    }
    if (j.contains("confusion")) rep.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
    return rep;
}

/// Plain-text table in the usual classification-report layout:
/// class rows with Precision / Recall / F1-Score / ROC AUC / n, then the
/// overall AUC and accuracy.
inline std::string metrics_table(const MetricsReport& rep, const ClassVocab& vocab) {
    char buf[256];
    std::string out;
    out += "Class        Precision  Recall  F1-Score  ROC AUC       n\n";
    for (std::size_t c = 0; c < rep.per_class.size(); ++c) {
        const auto& m = rep.per_class[c];
        std::snprintf(buf, sizeof buf, "%-12s    %6.4f  %6.4f    %6.4f   %6.4f  %6zu\n",
                      vocab.name(c).c_str(), m.precision, m.recall, m.f1, m.roc_auc, m.support);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "%-12s    %6s  %6s    %6s   %6.4f  %6zu\n", "Overall", "-", "-", "-",
                  rep.roc_auc, rep.n);
    out += buf;
    std::snprintf(buf, sizeof buf, "Accuracy     %6.4f\n", rep.accuracy);
    out += buf;
    return out;
}

}  // namespace lcfm
