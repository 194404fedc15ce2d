#pragma once

#include "refined/common.hpp"
#include "refined/dataio.hpp"

#include <fstream>
#include <string>
#include <vector>

namespace refined {

/// Predictions of A models for the same n samples; column a belongs to model_tags[a].
struct PredictionSet {
    std::vector<std::string> model_tags;
    Matrix yhat;  // n x A
    std::vector<std::string> sample_ids;

    Index n() const { return yhat.rows(); }
    Index models() const { return yhat.cols(); }

    Index column(const std::string& tag) const {
        for (std::size_t a = 0; a < model_tags.size(); ++a)
            if (model_tags[a] == tag) return static_cast<Index>(a);
        throw data_error("UnknownModel", "no prediction column '" + tag + "'");
    }
};

inline void validate(const PredictionSet& ps) {
    if (static_cast<Index>(ps.model_tags.size()) != ps.yhat.cols())
        throw data_error("ShapeMismatch", "one tag per prediction column required");
    if (!ps.sample_ids.empty() && static_cast<Index>(ps.sample_ids.size()) != ps.yhat.rows())
        throw data_error("ShapeMismatch", "one sample id per prediction row required");
    if (!ps.yhat.allFinite()) throw data_error("NonFinite", "predictions contain NaN or Inf");
}

/// CSV layout: sample_id, then one column per model tag.
inline void save_predictions(const PredictionSet& ps, const std::string& path) {
    validate(ps);
    std::ofstream out(path);
    if (!out) throw data_error("Unwritable", "cannot write " + path);
    out << "sample_id";
    for (const auto& t : ps.model_tags) out << ',' << t;
    out << '\n';
    for (Index i = 0; i < ps.n(); ++i) {
        out << (ps.sample_ids.empty() ? std::to_string(i) : ps.sample_ids[static_cast<std::size_t>(i)]);
        for (Index a = 0; a < ps.models(); ++a) out << ',' << detail::format_real(ps.yhat(i, a));
        out << '\n';
    }
}

inline PredictionSet load_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("Unreadable", "cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw data_error("EmptyFile", path + " has no header");
    auto header = detail::split_line(line, ',');
    if (header.size() < 2) throw data_error("MalformedHeader", path + " needs sample_id and at least one model column");
    PredictionSet ps;
    ps.model_tags.assign(header.begin() + 1, header.end());
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_line(line, ',');
        if (cells.size() != header.size()) throw data_error("RaggedRow", path + ": row width mismatch");
        ps.sample_ids.push_back(cells[0]);
        std::vector<double> r;
        for (std::size_t c = 1; c < cells.size(); ++c) {
            double v;
            if (!detail::parse_real(cells[c], v)) throw data_error("NonNumericCell", path + ": '" + cells[c] + "'");
            r.push_back(v);
        }
        rows.push_back(std::move(r));
    }
    ps.yhat.resize(static_cast<Index>(rows.size()), static_cast<Index>(ps.model_tags.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t a = 0; a < rows[i].size(); ++a) ps.yhat(static_cast<Index>(i), static_cast<Index>(a)) = rows[i][a];
    return ps;
}

}  // namespace refined
