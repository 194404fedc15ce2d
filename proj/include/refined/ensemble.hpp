#pragma once

// Combining per-projection predictors: linear stacking of predictions,
// channel stacking of images, and a ridge reference regressor on images.

#include "refined/common.hpp"
#include "refined/predictions.hpp"
#include "refined/refined.hpp"

#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace refined {

/// y_f = sum_a gamma_a yhat_a + b
struct StackingModel {
    std::vector<std::string> tags;
    Vector gamma;
    double b = 0.0;
};

inline void to_json(nlohmann::json& j, const StackingModel& m) {
    j = nlohmann::json{{"tags", m.tags}, {"gamma", std::vector<double>(m.gamma.data(), m.gamma.data() + m.gamma.size())},
                       {"intercept", m.b}};
}

inline void from_json(const nlohmann::json& j, StackingModel& m) {
    m.tags = j.at("tags").get<std::vector<std::string>>();
    auto g = j.at("gamma").get<std::vector<double>>();
    m.gamma = Eigen::Map<Vector>(g.data(), static_cast<Index>(g.size()));
    m.b = j.at("intercept").get<double>();
}

/// Ordinary least squares of y on [yhat, 1]. Rank-deficient designs get the
/// minimum-norm solution and a warning naming the dependent columns.
inline StackingModel fit_stacking(const PredictionSet& ps, const Vector& y) {
    validate(ps);
    const Index n = ps.n(), A = ps.models();
    if (y.size() != n) throw data_error("ShapeMismatch", "responses and predictions differ in length");
    if (n <= A) throw data_error("TooFewSamples", "stacking needs more samples than models (n=" + std::to_string(n) +
                                                      ", A=" + std::to_string(A) + ")");
    Matrix x(n, A + 1);
    x.leftCols(A) = ps.yhat;
    x.col(A).setOnes();

    Eigen::ColPivHouseholderQR<Matrix> qr(x);
    if (qr.rank() < A + 1) {
        std::string names;
        for (Index r = qr.rank(); r < A + 1; ++r) {
            const Index c = qr.colsPermutation().indices()(r);
            names += (names.empty() ? "" : ", ") + (c == A ? std::string("intercept") : ps.model_tags[static_cast<std::size_t>(c)]);
        }
        warn("stacking design is rank deficient; collinear: " + names + " (minimum-norm solution used)");
    }
    const Vector coef = Eigen::CompleteOrthogonalDecomposition<Matrix>(x).solve(y);
    StackingModel m;
    m.tags = ps.model_tags;
    m.gamma = coef.head(A);
    m.b = coef(A);
    if (!m.gamma.allFinite() || !std::isfinite(m.b)) throw numerical_error("NonFinite", "stacking coefficients are not finite");
    return m;
}

inline Vector predict_stacked(const StackingModel& m, const PredictionSet& ps) {
    validate(ps);
    if (ps.model_tags != m.tags) throw data_error("TagMismatch", "prediction columns do not match the stacking model");
    return (ps.yhat * m.gamma).array() + m.b;
}

// ---------------------------------------------------------------------------
// Image stacking

/// Per-sample g x g x A tensors; tensors[i][a] is channel a of sample i.
struct ImageTensorSet {
    int grid_size = 0;
    std::vector<std::string> channel_tags;
    std::vector<std::vector<Matrix>> tensors;
    std::vector<std::string> sample_ids;

    Index samples() const { return static_cast<Index>(tensors.size()); }
    Index channels() const { return static_cast<Index>(channel_tags.size()); }
    const Matrix& channel(Index i, Index a) const { return tensors[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)]; }
};

inline ImageTensorSet stack_images(const std::vector<RefinedImageSet>& sets, const std::vector<std::string>& tags) {
    if (sets.empty()) throw data_error("NoImages", "stack_images needs at least one image set");
    if (tags.size() != sets.size()) throw data_error("ShapeMismatch", "one channel tag per image set required");
    const auto& first = sets.front();
    for (const auto& s : sets) {
        if (s.grid_size() != first.grid_size()) throw data_error("GridMismatch", "image sets differ in grid size");
        if (s.images.size() != first.images.size()) throw data_error("SampleMismatch", "image sets differ in sample count");
        if (s.sample_ids != first.sample_ids) throw data_error("SampleMismatch", "image sets differ in sample order");
    }
    ImageTensorSet out;
    out.grid_size = first.grid_size();
    out.channel_tags = tags;
    out.sample_ids = first.sample_ids;
    out.tensors.resize(first.images.size());
    for (std::size_t i = 0; i < first.images.size(); ++i)
        for (const auto& s : sets) out.tensors[i].push_back(s.images[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Reference regressor
//
// Ridge regression on box-filtered pixel intensities. The fixed local filter
// (odd width `window`, zero padding, same output size) makes the model depend
// on which features share a neighbourhood; window = 1 gives plain ridge on
// raw pixels, which is invariant to pixel permutations.

/// Average of the window x window block centred on every pixel (zero padding).
inline Matrix box_filter(const Matrix& img, int window) {
    if (window < 1 || window % 2 == 0) throw config_error("BadWindow", "smoothing window must be a positive odd number");
    if (window == 1) return img;
    const int h = window / 2;
    const Index g = img.rows(), w = img.cols();
    Matrix out = Matrix::Zero(g, w);
    for (Index r = 0; r < g; ++r)
        for (Index c = 0; c < w; ++c) {
            double s = 0.0;
            for (Index dr = -h; dr <= h; ++dr)
                for (Index dc = -h; dc <= h; ++dc) {
                    const Index rr = r + dr, cc = c + dc;
                    if (rr >= 0 && rr < g && cc >= 0 && cc < w) s += img(rr, cc);
                }
            out(r, c) = s / static_cast<double>(window * window);
        }
    return out;
}

/// Design matrix: one row per sample, channels concatenated, each channel
/// box-filtered then flattened row-major.
inline Matrix image_features(const std::vector<std::vector<Matrix>>& samples, int window) {
    if (samples.empty()) return Matrix(0, 0);
    const Index per = samples.front().front().size();
    const Index chans = static_cast<Index>(samples.front().size());
    Matrix x(static_cast<Index>(samples.size()), per * chans);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (static_cast<Index>(samples[i].size()) != chans) throw data_error("ShapeMismatch", "channel count differs between samples");
        for (Index a = 0; a < chans; ++a) {
            const Matrix f = box_filter(samples[i][static_cast<std::size_t>(a)], window);
            if (f.size() != per) throw data_error("ShapeMismatch", "image size differs between samples");
            for (Index r = 0; r < f.rows(); ++r)
                for (Index c = 0; c < f.cols(); ++c) x(static_cast<Index>(i), a * per + r * f.cols() + c) = f(r, c);
        }
    }
    return x;
}

inline Matrix image_features(const RefinedImageSet& set, int window) {
    std::vector<std::vector<Matrix>> s;
    s.reserve(set.images.size());
    for (const auto& img : set.images) s.push_back({img});
    return image_features(s, window);
}

inline Matrix image_features(const ImageTensorSet& set, int window) { return image_features(set.tensors, window); }

struct RegressorModel {
    double lambda = 1.0;
    int window = 1;
    int grid_size = 0;
    Index channels = 1;
    Vector weights;     // on filtered features
    double intercept = 0.0;
    std::vector<std::string> channel_tags;
};

inline void to_json(nlohmann::json& j, const RegressorModel& m) {
    j = nlohmann::json{{"lambda", m.lambda},
                       {"window", m.window},
                       {"grid_size", m.grid_size},
                       {"channels", m.channels},
                       {"channel_tags", m.channel_tags},
                       {"intercept", m.intercept},
                       {"weights", std::vector<double>(m.weights.data(), m.weights.data() + m.weights.size())}};
}

inline void from_json(const nlohmann::json& j, RegressorModel& m) {
    m.lambda = j.at("lambda").get<double>();
    m.window = j.at("window").get<int>();
    m.grid_size = j.at("grid_size").get<int>();
    m.channels = j.at("channels").get<Index>();
    m.channel_tags = j.at("channel_tags").get<std::vector<std::string>>();
    m.intercept = j.at("intercept").get<double>();
    auto w = j.at("weights").get<std::vector<double>>();
    m.weights = Eigen::Map<Vector>(w.data(), static_cast<Index>(w.size()));
}

/// Ridge with an unpenalised intercept: centre X and y, solve
/// (Xc'Xc + lambda I) w = Xc'yc, intercept = ybar - xbar'w. lambda = 0 gives
/// the minimum-norm least-squares solution.
inline std::pair<Vector, double> ridge_fit(const Matrix& x, const Vector& y, double lambda) {
    if (!(lambda >= 0.0)) throw config_error("BadLambda", "ridge lambda must be >= 0");
    if (x.rows() != y.size()) throw data_error("ShapeMismatch", "design rows and responses differ");
    if (x.rows() < 1) throw data_error("TooFewSamples", "ridge needs at least one sample");
    const Eigen::RowVectorXd xm = x.colwise().mean();
    const double ym = y.mean();
    const Matrix xc = x.rowwise() - xm;
    const Vector yc = y.array() - ym;
    Vector w;
    if (lambda == 0.0) {
        w = Eigen::CompleteOrthogonalDecomposition<Matrix>(xc).solve(yc);
    } else if (xc.rows() < xc.cols()) {
        Matrix k = xc * xc.transpose();
        k.diagonal().array() += lambda;
        w = xc.transpose() * k.ldlt().solve(yc);
    } else {
        Matrix k = xc.transpose() * xc;
        k.diagonal().array() += lambda;
        w = k.ldlt().solve(xc.transpose() * yc);
    }
    return {w, ym - xm.dot(w)};
}

/// Counts trained predictors; the CLI reports it in the run manifest.
struct PipelineCounters {
    int projections_run = 0;
    int hill_climbs_run = 0;
    int regressors_trained = 0;
};

inline void to_json(nlohmann::json& j, const PipelineCounters& c) {
    j = nlohmann::json{{"projections_run", c.projections_run},
                       {"hill_climbs_run", c.hill_climbs_run},
                       {"regressors_trained", c.regressors_trained}};
}

inline RegressorModel fit_reference_regressor(const RefinedImageSet& x, const Vector& y, double lambda, int window = 1,
                                              PipelineCounters* counters = nullptr) {
    RegressorModel m;
    m.lambda = lambda;
    m.window = window;
    m.grid_size = x.grid_size();
    m.channels = 1;
    std::tie(m.weights, m.intercept) = ridge_fit(image_features(x, window), y, lambda);
    if (counters) ++counters->regressors_trained;
    return m;
}

inline RegressorModel fit_reference_regressor(const ImageTensorSet& x, const Vector& y, double lambda, int window = 1,
                                              PipelineCounters* counters = nullptr) {
    RegressorModel m;
    m.lambda = lambda;
    m.window = window;
    m.grid_size = x.grid_size;
    m.channels = x.channels();
    m.channel_tags = x.channel_tags;
    std::tie(m.weights, m.intercept) = ridge_fit(image_features(x, window), y, lambda);
    if (counters) ++counters->regressors_trained;
    return m;
}

inline Vector predict_reference(const RegressorModel& m, const Matrix& features) {
    if (features.cols() != m.weights.size()) throw data_error("ShapeMismatch", "feature width does not match the regressor");
    return (features * m.weights).array() + m.intercept;
}

inline Vector predict_reference(const RegressorModel& m, const RefinedImageSet& x) {
    if (x.grid_size() != m.grid_size || m.channels != 1) throw data_error("ShapeMismatch", "image set does not match the regressor");
    return predict_reference(m, image_features(x, m.window));
}

inline Vector predict_reference(const RegressorModel& m, const ImageTensorSet& x) {
    if (x.grid_size != m.grid_size || x.channels() != m.channels) throw data_error("ShapeMismatch", "tensor set does not match the regressor");
    return predict_reference(m, image_features(x, m.window));
}

}  // namespace refined
