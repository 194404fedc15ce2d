#pragma once

// Feature-table ingestion, cleaning, normalization and deterministic splits.

#include "refined/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace refined {

/// n samples by p features plus one scalar response per sample.
/// Missing cells are stored as NaN until clean_samples imputes them.
struct FeatureTable {
    std::vector<std::string> sample_ids;
    std::vector<std::string> feature_names;
    Matrix values;    // n x p
    Vector response;  // n

    Index n() const { return values.rows(); }
    Index p() const { return values.cols(); }

    /// Column j as a length-n vector.
    Vector feature(Index j) const { return values.col(j); }
};

inline bool is_missing(double v) { return std::isnan(v); }

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

/// Splits one delimited line, honouring double-quoted fields.
inline std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == delim) {
            out.push_back(std::string(trim(cur)));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(std::string(trim(cur)));
    return out;
}

inline bool is_missing_code(std::string_view cell) {
    return cell.empty() || cell == "NA" || cell == "NaN";
}

/// Parses a finite real; returns false on trailing garbage, inf or nan text.
inline bool parse_real(const std::string& cell, double& out) {
    if (cell.empty()) return false;
    const char* begin = cell.c_str();
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(begin, &end);
    if (end != begin + cell.size() || errno == ERANGE || !std::isfinite(v)) return false;
    out = v;
    return true;
}

inline std::string format_real(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace detail

/// Parses a delimited table. The first column holds sample ids, the column
/// named `response_column` holds the response, every other column is a feature.
inline FeatureTable parse_feature_table(std::istream& in, const std::string& response_column,
                                        char delim = ',') {
    std::string line;
    if (!std::getline(in, line)) throw data_error("EmptyFile", "no header row");
    auto header = detail::split_line(line, delim);
    if (header.size() < 2) throw data_error("MalformedHeader", "need an id column and at least one more");

    Index response_pos = -1;
    std::vector<std::size_t> feature_pos;
    FeatureTable t;
    std::unordered_set<std::string> seen;
    for (std::size_t c = 1; c < header.size(); ++c) {
        if (header[c] == response_column) {
            if (response_pos >= 0) throw data_error("DuplicateResponse", "response column appears twice");
            response_pos = static_cast<Index>(c);
            continue;
        }
        if (!seen.insert(header[c]).second)
            throw data_error("DuplicateFeature", "feature name '" + header[c] + "' appears more than once");
        feature_pos.push_back(c);
        t.feature_names.push_back(header[c]);
    }
    if (response_pos < 0)
        throw data_error("MissingResponseColumn", "response column '" + response_column + "' not in header");

    std::vector<std::vector<double>> rows;
    std::vector<double> resp;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_line(line, delim);
        if (cells.size() != header.size())
            throw data_error("RaggedRow", "line " + std::to_string(line_no) + " has " +
                                              std::to_string(cells.size()) + " cells, expected " +
                                              std::to_string(header.size()));
        t.sample_ids.push_back(cells[0]);
        std::vector<double> row;
        row.reserve(feature_pos.size());
        for (auto c : feature_pos) {
            double v;
            if (detail::is_missing_code(cells[c])) {
                v = std::numeric_limits<double>::quiet_NaN();
            } else if (!detail::parse_real(cells[c], v)) {
                throw data_error("NonNumericCell", "line " + std::to_string(line_no) + ", column '" +
                                                       header[c] + "': '" + cells[c] + "'");
            }
            row.push_back(v);
        }
        double y;
        const auto& rc = cells[static_cast<std::size_t>(response_pos)];
        if (!detail::parse_real(rc, y))
            throw data_error("BadResponse", "line " + std::to_string(line_no) + ": response '" + rc + "'");
        rows.push_back(std::move(row));
        resp.push_back(y);
    }

    const auto n = static_cast<Index>(rows.size());
    const auto p = static_cast<Index>(feature_pos.size());
    t.values.resize(n, p);
    t.response.resize(n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < p; ++j) t.values(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        t.response(i) = resp[static_cast<std::size_t>(i)];
    }
    return t;
}

inline FeatureTable load_feature_table(const std::string& path, const std::string& response_column,
                                       char delim = ',') {
    std::ifstream in(path);
    if (!in) throw data_error("Unreadable", "cannot open " + path);
    return parse_feature_table(in, response_column, delim);
}

inline void save_feature_table(const FeatureTable& t, const std::string& path,
                               const std::string& response_column = "y", char delim = ',') {
    std::ofstream out(path);
    if (!out) throw data_error("Unwritable", "cannot write " + path);
    out << "sample_id";
    for (const auto& f : t.feature_names) out << delim << f;
    out << delim << response_column << '\n';
    for (Index i = 0; i < t.n(); ++i) {
        out << t.sample_ids[static_cast<std::size_t>(i)];
        for (Index j = 0; j < t.p(); ++j) {
            out << delim;
            if (!is_missing(t.values(i, j))) out << detail::format_real(t.values(i, j));
        }
        out << delim << detail::format_real(t.response(i)) << '\n';
    }
}

inline FeatureTable subset_rows(const FeatureTable& t, const std::vector<Index>& rows) {
    FeatureTable s;
    s.feature_names = t.feature_names;
    s.values.resize(static_cast<Index>(rows.size()), t.p());
    s.response.resize(static_cast<Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const Index i = rows[r];
        if (i < 0 || i >= t.n()) throw std::out_of_range("subset_rows: row index out of range");
        s.sample_ids.push_back(t.sample_ids[static_cast<std::size_t>(i)]);
        s.values.row(static_cast<Index>(r)) = t.values.row(i);
        s.response(static_cast<Index>(r)) = t.response(i);
    }
    return s;
}

/// Throws unless the table is usable for a 2D embedding: n >= 3, p >= 4,
/// finite values and unique feature names.
inline void require_embeddable(const FeatureTable& t) {
    if (t.n() < 3) throw data_error("TooFewSamples", "need at least 3 samples, have " + std::to_string(t.n()));
    if (t.p() < 4) throw data_error("TooFewFeatures", "need at least 4 features, have " + std::to_string(t.p()));
    if (!t.values.allFinite()) throw data_error("NonFinite", "table contains missing or non-finite values");
    std::unordered_set<std::string> names(t.feature_names.begin(), t.feature_names.end());
    if (names.size() != t.feature_names.size()) throw data_error("DuplicateFeature", "feature names not unique");
}

/// Drops samples whose fraction of zero-or-missing features is strictly above
/// `threshold`, then imputes remaining missing cells with the per-feature
/// median of the retained samples.
inline FeatureTable clean_samples(const FeatureTable& t, double threshold = 0.10) {
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw config_error("BadThreshold", "clean threshold must lie in [0,1]");
    std::vector<Index> keep;
    for (Index i = 0; i < t.n(); ++i) {
        Index bad = 0;
        for (Index j = 0; j < t.p(); ++j) {
            const double v = t.values(i, j);
            if (is_missing(v) || v == 0.0) ++bad;
        }
        // bad/p > threshold, evaluated without dividing
        if (static_cast<double>(bad) <= threshold * static_cast<double>(t.p()) + 1e-9) keep.push_back(i);
    }
    if (keep.empty()) throw data_error("EmptyTable", "every sample exceeded the zero/missing threshold");

    FeatureTable out = subset_rows(t, keep);
    for (Index j = 0; j < out.p(); ++j) {
        std::vector<double> present;
        bool any_missing = false;
        for (Index i = 0; i < out.n(); ++i) {
            if (is_missing(out.values(i, j))) any_missing = true;
            else present.push_back(out.values(i, j));
        }
        if (!any_missing) continue;
        double median = 0.0;
        if (!present.empty()) {
            std::sort(present.begin(), present.end());
            const std::size_t m = present.size();
            median = (m % 2 == 1) ? present[m / 2] : 0.5 * (present[m / 2 - 1] + present[m / 2]);
        } else {
            warn("feature '" + out.feature_names[static_cast<std::size_t>(j)] +
                 "' is missing in every retained sample; imputing 0");
        }
        for (Index i = 0; i < out.n(); ++i)
            if (is_missing(out.values(i, j))) out.values(i, j) = median;
    }
    return out;
}

enum class NormalizationMode { minmax01, zscore };

inline std::string to_string(NormalizationMode m) { return m == NormalizationMode::minmax01 ? "minmax01" : "zscore"; }

inline NormalizationMode parse_normalization_mode(const std::string& s) {
    if (s == "minmax01") return NormalizationMode::minmax01;
    if (s == "zscore") return NormalizationMode::zscore;
    throw config_error("BadNormalization", "unknown normalization mode '" + s + "'");
}

/// Per-feature affine map z = (x - offset) / scale. Features flagged constant
/// map to 0.5 (minmax01) or 0 (zscore).
struct NormalizationParams {
    NormalizationMode mode = NormalizationMode::minmax01;
    Vector offset;
    Vector scale;
    std::vector<bool> constant;
};

inline void to_json(nlohmann::json& j, const NormalizationParams& np) {
    j = nlohmann::json{{"mode", to_string(np.mode)},
                       {"offset", std::vector<double>(np.offset.data(), np.offset.data() + np.offset.size())},
                       {"scale", std::vector<double>(np.scale.data(), np.scale.data() + np.scale.size())},
                       {"constant", np.constant}};
}

inline void from_json(const nlohmann::json& j, NormalizationParams& np) {
    np.mode = parse_normalization_mode(j.at("mode").get<std::string>());
    auto off = j.at("offset").get<std::vector<double>>();
    auto sc = j.at("scale").get<std::vector<double>>();
    np.offset = Eigen::Map<Vector>(off.data(), static_cast<Index>(off.size()));
    np.scale = Eigen::Map<Vector>(sc.data(), static_cast<Index>(sc.size()));
    np.constant = j.at("constant").get<std::vector<bool>>();
}

/// Fits parameters on the given rows (all rows when `rows` is empty).
/// zscore uses the sample standard deviation (n - 1 denominator).
inline NormalizationParams fit_normalization(const FeatureTable& t, NormalizationMode mode,
                                             const std::vector<Index>& rows = {}) {
    std::vector<Index> use = rows;
    if (use.empty()) {
        use.resize(static_cast<std::size_t>(t.n()));
        std::iota(use.begin(), use.end(), Index{0});
    }
    NormalizationParams np;
    np.mode = mode;
    np.offset.resize(t.p());
    np.scale.resize(t.p());
    np.constant.assign(static_cast<std::size_t>(t.p()), false);
    for (Index j = 0; j < t.p(); ++j) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
        for (auto i : use) {
            const double v = t.values(i, j);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            sum += v;
        }
        const auto& name = t.feature_names[static_cast<std::size_t>(j)];
        if (mode == NormalizationMode::minmax01) {
            np.offset(j) = lo;
            np.scale(j) = hi - lo;
        } else {
            const double mean = sum / static_cast<double>(use.size());
            double ss = 0.0;
            for (auto i : use) ss += (t.values(i, j) - mean) * (t.values(i, j) - mean);
            np.offset(j) = mean;
            np.scale(j) = use.size() > 1 ? std::sqrt(ss / static_cast<double>(use.size() - 1)) : 0.0;
        }
        if (!(np.scale(j) > 0.0)) {
            np.constant[static_cast<std::size_t>(j)] = true;
            warn("feature '" + name + "' is constant on the fitting rows; mapped to " +
                 (mode == NormalizationMode::minmax01 ? std::string("0.5") : std::string("0")));
        }
    }
    return np;
}

inline FeatureTable apply_normalization(const FeatureTable& t, const NormalizationParams& np) {
    if (np.offset.size() != t.p()) throw data_error("ShapeMismatch", "normalization parameters do not match table width");
    FeatureTable out = t;
    const double constant_value = np.mode == NormalizationMode::minmax01 ? 0.5 : 0.0;
    for (Index j = 0; j < t.p(); ++j) {
        if (np.constant[static_cast<std::size_t>(j)]) {
            out.values.col(j).setConstant(constant_value);
        } else {
            out.values.col(j) = (t.values.col(j).array() - np.offset(j)) / np.scale(j);
        }
    }
    return out;
}

/// Inverse of apply_normalization. Constant features come back as their offset.
inline FeatureTable denormalize(const FeatureTable& t, const NormalizationParams& np) {
    FeatureTable out = t;
    for (Index j = 0; j < t.p(); ++j) {
        if (np.constant[static_cast<std::size_t>(j)]) {
            out.values.col(j).setConstant(np.offset(j));
        } else {
            out.values.col(j) = t.values.col(j).array() * np.scale(j) + np.offset(j);
        }
    }
    return out;
}

inline std::pair<FeatureTable, NormalizationParams> normalize_features(
    const FeatureTable& t, NormalizationMode mode, const std::vector<Index>& fit_rows = {}) {
    auto np = fit_normalization(t, mode, fit_rows);
    return {apply_normalization(t, np), np};
}

/// Clamps every value into [0,1]; rows outside the fitting partition can
/// overshoot the train-set range.
inline FeatureTable clip_to_unit(const FeatureTable& t) {
    FeatureTable out = t;
    out.values = t.values.cwiseMax(0.0).cwiseMin(1.0);
    return out;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitIndex {
    std::vector<Index> train;
    std::vector<Index> validation;
    std::vector<Index> test;
    std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const SplitIndex& s) {
    j = nlohmann::json{{"seed", s.seed}, {"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

inline void from_json(const nlohmann::json& j, SplitIndex& s) {
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train = j.at("train").get<std::vector<Index>>();
    s.validation = j.at("validation").get<std::vector<Index>>();
    s.test = j.at("test").get<std::vector<Index>>();
}

/// Partition sizes: floor(r_i * n), remainder handed out by largest fractional
/// part (lower index wins ties), then any empty partition takes one sample from
/// the currently largest partition.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
    double total = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0)) throw config_error("BadRatios", "split ratios must be non-negative");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw config_error("BadRatios", "split ratios must sum to 1");
    if (n < 3) throw data_error("EmptyPartition", "need at least 3 samples for a three-way split");

    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> frac{};
    std::size_t used = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = ratios[i] * static_cast<double>(n);
        sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        frac[i] = exact - static_cast<double>(sizes[i]);
        used += sizes[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return frac[a] > frac[b]; });
    for (std::size_t r = 0; used < n; ++r, ++used) ++sizes[order[r % 3]];

    for (std::size_t i = 0; i < 3; ++i) {
        if (sizes[i] > 0) continue;
        if (ratios[i] == 0.0) throw config_error("EmptyPartition", "split ratio " + std::to_string(i) + " is zero");
        auto largest = static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
        if (sizes[largest] < 2) throw data_error("EmptyPartition", "too few samples for the requested split");
        --sizes[largest];
        ++sizes[i];
    }
    return sizes;
}

/// Seeded shuffle followed by a contiguous train/validation/test partition.
inline SplitIndex split_samples(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed) {
    const auto sizes = split_sizes(n, ratios);
    std::vector<Index> perm(n);
    std::iota(perm.begin(), perm.end(), Index{0});
    Rng rng(seed);
    rng.shuffle(perm);
    SplitIndex s;
    s.seed = seed;
    s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
    s.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
                        perm.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
    s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), perm.end());
    return s;
}

}  // namespace refined
