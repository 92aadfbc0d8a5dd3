#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcfm/errors.hpp"
#include "lcfm/rng.hpp"
#include "lcfm/vocab.hpp"

namespace lcfm {

/// Every curve entering the model is resampled to this length.
constexpr std::size_t kCurveLen = 128;

/// One observation track as read from disk, before resampling.
struct RawCurve {
    std::string id;
    std::optional<std::string> object_name;
    std::optional<std::int64_t> norad;
    std::vector<double> timestamps;  // seconds since track start, strictly increasing
    std::vector<double> magnitudes;
    std::optional<std::string> label;
};

/// Provenance carried alongside a standardised curve.
struct CurveMeta {
    std::optional<std::string> name;
    std::optional<std::int64_t> norad;
    std::optional<std::string> generator;
    std::optional<std::string> reference_id;
    std::optional<double> noise_scale;

    bool empty_extra() const { return !generator && !reference_id && !noise_scale; }
};

/// Fixed-length standardised magnitude sequence; the model's input unit.
struct LightCurve {
    std::string id;
    std::vector<double> values;  // length kCurveLen, every value in [0,1]
    std::optional<std::size_t> label;
    CurveMeta meta;
};

// ---------------------------------------------------------------------------
// MMT-style whitespace-columned track text
// ---------------------------------------------------------------------------

struct ParseCounts {
    std::size_t accepted_lines = 0;
    std::size_t skipped_lines = 0;
    std::size_t tracks = 0;
};

struct ParseResult {
    std::vector<RawCurve> curves;
    ParseCounts counts;
};

namespace detail {

inline std::optional<double> parse_finite(const std::string& tok) {
    double v = 0.0;
    const char* begin = tok.data();
    const char* end = begin + tok.size();
    if (begin != end && *begin == '+') ++begin;  // from_chars rejects a leading '+'
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
    return v;
}

}  // namespace detail

/// Tolerant reader for MMT-style tracks: '#' comments, whitespace columns
/// (first two are time-seconds and magnitude, extras ignored), blank lines
/// separating tracks. Unparseable data lines and single-point tracks are
/// skipped with a count. Throws NonMonotonicTime when time runs backwards
/// inside a track and EmptyFile when nothing parseable remains.
inline ParseResult parse_track_file(std::istream& in) {
    ParseResult result;
    RawCurve current;
    auto flush = [&]() {
        if (current.timestamps.size() >= 2) {
            current.id = "track_" + std::to_string(result.counts.tracks);
            result.counts.tracks += 1;
            result.curves.push_back(std::move(current));
        } else if (current.timestamps.size() == 1) {
            result.counts.accepted_lines -= 1;
            result.counts.skipped_lines += 1;  // too short to resample
        }
        current = RawCurve{};
    };

    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos) {
            flush();
            continue;
        }
        if (line[first] == '#') continue;

        std::istringstream fields(line);
        std::string t_tok, m_tok;
        fields >> t_tok >> m_tok;
        const auto t = detail::parse_finite(t_tok);
        const auto m = m_tok.empty() ? std::nullopt : detail::parse_finite(m_tok);
        if (!t || !m) {
            result.counts.skipped_lines += 1;
            continue;
        }
        if (!current.timestamps.empty() && *t <= current.timestamps.back())
            raise(ErrorCode::NonMonotonicTime,
                  "timestamp " + t_tok + " does not increase within track " +
                      std::to_string(result.counts.tracks));
        current.timestamps.push_back(*t);
        current.magnitudes.push_back(*m);
        result.counts.accepted_lines += 1;
    }
    flush();

    if (result.curves.empty()) raise(ErrorCode::EmptyFile, "no parseable records");
    return result;
}

// ---------------------------------------------------------------------------
// Resampling and standardisation
// ---------------------------------------------------------------------------

/// Linear interpolation onto n uniformly spaced times over [t_first, t_last];
/// endpoints are preserved exactly.
inline std::vector<double> resample(const RawCurve& curve, std::size_t n = kCurveLen) {
    const std::size_t m = curve.timestamps.size();
    if (m < 2) raise(ErrorCode::TooFewPoints, "resample needs at least 2 samples");
    if (curve.magnitudes.size() != m)
        raise(ErrorCode::ShapeMismatch, "timestamps/magnitudes length mismatch");
    const double t0 = curve.timestamps.front();
    const double t1 = curve.timestamps.back();
    std::vector<double> out(n);
    std::size_t seg = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = t0 + (t1 - t0) * static_cast<double>(k) / static_cast<double>(n - 1);
        while (seg + 2 < m && curve.timestamps[seg + 1] < t) ++seg;
        const double ta = curve.timestamps[seg], tb = curve.timestamps[seg + 1];
        const double va = curve.magnitudes[seg], vb = curve.magnitudes[seg + 1];
        const double w = (t - ta) / (tb - ta);
        out[k] = va + w * (vb - va);
    }
    out.front() = curve.magnitudes.front();
    out.back() = curve.magnitudes.back();
    return out;
}

/// (v - min) / (max - min); a flat curve maps to all 0.5.
inline std::vector<double> standardize(const std::vector<double>& values) {
    const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    const double mn = *mn_it, mx = *mx_it;
    std::vector<double> out(values.size());
    if (mx == mn) {
        std::fill(out.begin(), out.end(), 0.5);
        return out;
    }
    const double inv = 1.0 / (mx - mn);
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mn) * inv;
    return out;
}

/// resample + standardize + metadata carry-over.
inline LightCurve to_light_curve(const RawCurve& raw, const ClassVocab* vocab = nullptr) {
    LightCurve lc;
    lc.id = raw.id;
    lc.values = standardize(resample(raw));
    lc.meta.name = raw.object_name;
    lc.meta.norad = raw.norad;
    if (raw.label) {
        if (!vocab) raise(ErrorCode::VocabMismatch, "labelled curve but no vocabulary supplied");
        lc.label = vocab->index_of(*raw.label);
    }
    return lc;
}

// ---------------------------------------------------------------------------
// Deterministic splits
// ---------------------------------------------------------------------------

struct Splits {
    std::vector<std::size_t> train, val, test;
    std::uint64_t seed = 0;
    std::array<double, 3> ratios{};
};

namespace detail {

/// Largest-remainder apportionment of n items over the given ratios.
inline std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios) {
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rema{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        const double exact = ratios[s] * static_cast<double>(n);
        counts[s] = static_cast<std::size_t>(std::floor(exact));
        rema[s] = exact - std::floor(exact);
        assigned += counts[s];
    }
    while (assigned < n) {
        std::size_t best = 0;
        for (std::size_t s = 1; s < 3; ++s)
            if (rema[s] > rema[best]) best = s;
        counts[best] += 1;
        rema[best] = -1.0;
        assigned += 1;
    }
    return counts;
}

}  // namespace detail

/// Disjoint, exhaustive train/val/test indices. Stratified mode keeps each
/// split's class proportions within one sample of the global proportions.
inline Splits split_dataset(const std::vector<LightCurve>& curves, const std::array<double, 3>& ratios,
                            std::uint64_t seed, bool stratify) {
    double sum = 0.0;
    for (double r : ratios) {
        if (r <= 0.0) raise(ErrorCode::BadRatios, "ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) raise(ErrorCode::BadRatios, "ratios must sum to 1");

    Splits out;
    out.seed = seed;
    out.ratios = ratios;
    Rng rng(seed);

    std::vector<std::vector<std::size_t>> groups;
    if (stratify) {
        std::size_t n_classes = 0;
        for (const auto& c : curves) {
            if (!c.label) raise(ErrorCode::MissingLabels, "stratified split requires labels on every curve");
            n_classes = std::max(n_classes, *c.label + 1);
        }
        groups.resize(n_classes);
        for (std::size_t i = 0; i < curves.size(); ++i) groups[*curves[i].label].push_back(i);
    } else {
        groups.resize(1);
        for (std::size_t i = 0; i < curves.size(); ++i) groups[0].push_back(i);
    }

    for (auto& group : groups) {
        rng.shuffle(group);
        const auto counts = detail::apportion(group.size(), ratios);
        std::size_t pos = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            auto& dst = s == 0 ? out.train : (s == 1 ? out.val : out.test);
            for (std::size_t i = 0; i < counts[s]; ++i) dst.push_back(group[pos++]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON-lines and CSV formats
// ---------------------------------------------------------------------------

struct ReadCounts {
    std::size_t curves = 0;
    std::size_t labels_ignored = 0;
};

/// One object per line: keys id, values; optional label, norad, name, meta.
inline void write_jsonl(std::ostream& out, const std::vector<LightCurve>& curves,
                        const ClassVocab* vocab = nullptr) {
    for (const auto& c : curves) {
        nlohmann::json j;
        j["id"] = c.id;
        j["values"] = c.values;
        if (c.label) {
            if (!vocab) raise(ErrorCode::VocabMismatch, "labelled curve but no vocabulary supplied");
            j["label"] = vocab->name(*c.label);
        }
        if (c.meta.norad) j["norad"] = *c.meta.norad;
        if (c.meta.name) j["name"] = *c.meta.name;
        if (!c.meta.empty_extra()) {
            nlohmann::json m;
            if (c.meta.generator) m["generator"] = *c.meta.generator;
            if (c.meta.reference_id) m["reference_id"] = *c.meta.reference_id;
            if (c.meta.noise_scale) m["noise_scale"] = *c.meta.noise_scale;
            j["meta"] = m;
        }
        out << j.dump() << '\n';
    }
}

inline void write_jsonl_file(const std::string& path, const std::vector<LightCurve>& curves,
                             const ClassVocab* vocab = nullptr) {
    std::ofstream f(path);
    if (!f) raise(ErrorCode::IoError, "cannot open " + path + " for writing");
    write_jsonl(f, curves, vocab);
}

/// Reads the JSON-lines format. With a vocabulary, labels are mapped to
/// indices (unknown names raise VocabMismatch); without one, labels in the
/// file are ignored and counted.
inline std::pair<std::vector<LightCurve>, ReadCounts> read_jsonl(std::istream& in,
                                                                 const ClassVocab* vocab = nullptr) {
    std::vector<LightCurve> curves;
    ReadCounts counts;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            raise(ErrorCode::IoError, "line " + std::to_string(lineno) + ": " + e.what());
        }
        LightCurve c;
        c.id = j.at("id").get<std::string>();
        c.values = j.at("values").get<std::vector<double>>();
        if (c.values.size() != kCurveLen)
            raise(ErrorCode::ShapeMismatch,
                  "line " + std::to_string(lineno) + ": expected " + std::to_string(kCurveLen) + " values");
        if (j.contains("label")) {
            if (vocab)
                c.label = vocab->index_of(j["label"].get<std::string>());
            else
                counts.labels_ignored += 1;
        }
        if (j.contains("norad")) c.meta.norad = j["norad"].get<std::int64_t>();
        if (j.contains("name")) c.meta.name = j["name"].get<std::string>();
        if (j.contains("meta")) {
            const auto& m = j["meta"];
            if (m.contains("generator")) c.meta.generator = m["generator"].get<std::string>();
            if (m.contains("reference_id")) c.meta.reference_id = m["reference_id"].get<std::string>();
            if (m.contains("noise_scale")) c.meta.noise_scale = m["noise_scale"].get<double>();
        }
        curves.push_back(std::move(c));
        counts.curves += 1;
    }
    return {std::move(curves), counts};
}

inline std::pair<std::vector<LightCurve>, ReadCounts> read_jsonl_file(const std::string& path,
                                                                      const ClassVocab* vocab = nullptr) {
    std::ifstream f(path);
    if (!f) raise(ErrorCode::IoError, "cannot open " + path);
    return read_jsonl(f, vocab);
}

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf, static_cast<std::size_t>(n));
}

}  // namespace detail

/// CSV labelled format: header id,label,v0..v127.
inline void write_csv(std::ostream& out, const std::vector<LightCurve>& curves, const ClassVocab& vocab) {
    out << "id,label";
    for (std::size_t i = 0; i < kCurveLen; ++i) out << ",v" << i;
    out << '\n';
    for (const auto& c : curves) {
        if (!c.label) raise(ErrorCode::UnlabelledData, "CSV format requires a label on every curve");
        out << c.id << ',' << vocab.name(*c.label);
        for (double v : c.values) out << ',' << detail::format_double(v);
        out << '\n';
    }
}

inline std::vector<LightCurve> read_csv(std::istream& in, const ClassVocab& vocab) {
    std::vector<LightCurve> curves;
    std::string line;
    if (!std::getline(in, line)) raise(ErrorCode::EmptyFile, "empty CSV");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (cells.size() != 2 + kCurveLen)
            raise(ErrorCode::ShapeMismatch, "line " + std::to_string(lineno) + ": expected " +
                                                std::to_string(2 + kCurveLen) + " columns");
        LightCurve c;
        c.id = cells[0];
        c.label = vocab.index_of(cells[1]);
        c.values.reserve(kCurveLen);
        for (std::size_t i = 0; i < kCurveLen; ++i) {
            const auto v = detail::parse_finite(cells[2 + i]);
            if (!v) raise(ErrorCode::IoError, "line " + std::to_string(lineno) + ": bad value " + cells[2 + i]);
            c.values.push_back(*v);
        }
        curves.push_back(std::move(c));
    }
    return curves;
}

inline std::vector<LightCurve> read_csv_file(const std::string& path, const ClassVocab& vocab) {
    std::ifstream f(path);
    if (!f) raise(ErrorCode::IoError, "cannot open " + path);
    return read_csv(f, vocab);
}

}  // namespace lcfm
