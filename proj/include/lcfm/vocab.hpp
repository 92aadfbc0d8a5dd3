#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lcfm/errors.hpp"

namespace lcfm {

/// Ordered class vocabulary. Index order is fixed and travels with
/// checkpoints so label indices stay stable across runs.
struct ClassVocab {
    std::vector<std::string> names;

    std::size_t size() const { return names.size(); }

    const std::string& name(std::size_t idx) const {
        if (idx >= names.size()) raise(ErrorCode::VocabMismatch, "class index out of range");
        return names[idx];
    }

    std::optional<std::size_t> find(const std::string& n) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == n) return i;
        return std::nullopt;
    }

    std::size_t index_of(const std::string& n) const {
        auto idx = find(n);
        if (!idx) raise(ErrorCode::VocabMismatch, "unknown class name '" + n + "'");
        return *idx;
    }

    bool operator==(const ClassVocab&) const = default;
};

/// Six grouped attitude motion modes.
inline ClassVocab motion_vocab() {
    return ClassVocab{{"INERTIAL", "SAFE", "SPIN", "SUN", "TUMBLING", "YAW"}};
}

/// Binary anomaly vocabulary; ANOMALY is the positive class.
inline ClassVocab anomaly_vocab() {
    return ClassVocab{{"NORMAL", "ANOMALY"}};
}

}  // namespace lcfm
