#pragma once

// Two-dimensional feature embeddings: classical MDS, Isomap, locally linear
// embedding, Laplacian eigenmaps and SMACOF stress refinement.
//
// Spectral outputs carry an arbitrary sign per axis; every routine here fixes
// it so that the largest-magnitude coordinate of each axis is positive.

#include "refined/common.hpp"
#include "refined/dataio.hpp"
#include "refined/distances.hpp"
#include "refined/embedding.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace refined {

/// Flips each column so its largest-magnitude entry (first one on ties) is positive.
inline void fix_signs(Matrix& coords) {
    for (Index c = 0; c < coords.cols(); ++c) {
        Index arg = 0;
        double best = -1.0;
        for (Index r = 0; r < coords.rows(); ++r)
            if (std::abs(coords(r, c)) > best) {
                best = std::abs(coords(r, c));
                arg = r;
            }
        if (coords.rows() > 0 && coords(arg, c) < 0.0) coords.col(c) *= -1.0;
    }
}

/// Per-axis min-max map onto [0,1]; a zero-range axis maps to 0.5.
inline Embedding normalize_to_unit_square(const Embedding& e) {
    if (!e.coords.allFinite()) throw numerical_error("NonFinite", "embedding contains non-finite coordinates");
    Embedding out = e;
    for (Index c = 0; c < e.coords.cols(); ++c) {
        const double lo = e.coords.col(c).minCoeff();
        const double hi = e.coords.col(c).maxCoeff();
        if (hi > lo) out.coords.col(c) = ((e.coords.col(c).array() - lo) / (hi - lo)).matrix();
        else out.coords.col(c).setConstant(0.5);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Procrustes alignment (translation + orthogonal map, no scaling)

struct ProcrustesFit {
    Matrix aligned;        // `moving` mapped onto `target`
    double residual = 0;   // largest per-point Euclidean deviation after alignment
};

inline ProcrustesFit procrustes(const Matrix& target, const Matrix& moving) {
    if (target.rows() != moving.rows() || target.cols() != moving.cols())
        throw data_error("ShapeMismatch", "procrustes: configurations differ in shape");
    const Eigen::RowVectorXd mt = target.colwise().mean();
    const Eigen::RowVectorXd mm = moving.colwise().mean();
    const Matrix tc = target.rowwise() - mt;
    const Matrix mc = moving.rowwise() - mm;
    Eigen::JacobiSVD<Matrix> svd(mc.transpose() * tc, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Matrix rot = svd.matrixU() * svd.matrixV().transpose();
    ProcrustesFit fit;
    fit.aligned = (mc * rot).rowwise() + mt;
    fit.residual = (fit.aligned - target).rowwise().norm().maxCoeff();
    return fit;
}

// ---------------------------------------------------------------------------
// Classical MDS

namespace detail {

/// Top-two eigenpairs of the double-centred squared-distance matrix.
inline Matrix classical_scaling(const Matrix& d) {
    const Index p = d.rows();
    const Matrix d2 = d.array().square().matrix();
    const Vector row_mean = d2.rowwise().mean();
    const double grand = d2.mean();
    Matrix b(p, p);
    for (Index j = 0; j < p; ++j)
        for (Index k = 0; k < p; ++k) b(j, k) = -0.5 * (d2(j, k) - row_mean(j) - row_mean(k) + grand);

    Eigen::SelfAdjointEigenSolver<Matrix> es(b);
    if (es.info() != Eigen::Success) throw numerical_error("EigenFailure", "classical MDS eigensolver failed");
    const Vector& vals = es.eigenvalues();  // ascending
    const double scale = std::max(vals.cwiseAbs().maxCoeff(), 1e-300);
    Matrix coords = Matrix::Zero(p, 2);
    int positive = 0;
    for (int axis = 0; axis < 2; ++axis) {
        const Index idx = p - 1 - axis;
        if (idx >= 0 && vals(idx) > 1e-10 * scale) {
            coords.col(axis) = es.eigenvectors().col(idx) * std::sqrt(vals(idx));
            ++positive;
        }
    }
    if (positive < 2)
        warn("classical MDS found " + std::to_string(positive) + " positive eigenvalue(s); missing axis padded with zeros");
    fix_signs(coords);
    return coords;
}

}  // namespace detail

inline Embedding classical_mds(const DistanceMatrix& d) {
    if (d.p() < 3) throw data_error("TooFewFeatures", "classical MDS needs p >= 3");
    return {d.labels, detail::classical_scaling(d.d), "mds"};
}

inline Embedding isomap(const DistanceMatrix& d, Index k) {
    auto e = classical_mds(geodesic_distances(d, k));
    e.method_tag = "isomap";
    return e;
}

// ---------------------------------------------------------------------------
// Locally linear embedding

/// Points are the feature columns of `t`. Exact duplicate features are
/// collapsed before fitting and receive identical coordinates.
inline Embedding lle(const FeatureTable& t, Index k, double ridge = 1e-3) {
    if (k < 2) throw config_error("BadNeighbors", "LLE needs k >= 2");
    if (k >= t.p()) throw config_error("BadNeighbors", "LLE needs k < p");
    const Matrix pts = t.values.transpose();  // p x n

    // Collapse duplicates (lexicographic map on exact row contents).
    std::map<std::vector<double>, Index> first_seen;
    std::vector<Index> rep(static_cast<std::size_t>(pts.rows()));
    std::vector<Index> uniq;
    for (Index j = 0; j < pts.rows(); ++j) {
        std::vector<double> key(static_cast<std::size_t>(pts.cols()));
        for (Index c = 0; c < pts.cols(); ++c) key[static_cast<std::size_t>(c)] = pts(j, c);
        auto [it, fresh] = first_seen.emplace(std::move(key), static_cast<Index>(uniq.size()));
        if (fresh) uniq.push_back(j);
        rep[static_cast<std::size_t>(j)] = it->second;
    }
    const auto u = static_cast<Index>(uniq.size());
    if (k >= u) throw config_error("BadNeighbors", "LLE needs k < number of distinct features (" + std::to_string(u) + ")");

    Matrix up(u, pts.cols());
    for (Index i = 0; i < u; ++i) up.row(i) = pts.row(uniq[static_cast<std::size_t>(i)]);
    const Matrix dist = pairwise_euclidean_rows(up);

    Matrix w = Matrix::Zero(u, u);
    std::vector<Index> order(static_cast<std::size_t>(u));
    for (Index i = 0; i < u; ++i) {
        std::iota(order.begin(), order.end(), Index{0});
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return dist(i, a) < dist(i, b); });
        std::vector<Index> nb;
        for (Index c : order) {
            if (c == i) continue;
            nb.push_back(c);
            if (static_cast<Index>(nb.size()) == k) break;
        }
        Matrix z(k, up.cols());
        for (Index r = 0; r < k; ++r) z.row(r) = up.row(nb[static_cast<std::size_t>(r)]) - up.row(i);
        Matrix gram = z * z.transpose();
        const double tr = gram.trace();
        gram.diagonal().array() += ridge * (tr > 0.0 ? tr : 1.0);
        Vector wi = gram.ldlt().solve(Vector::Ones(k));
        wi /= wi.sum();
        for (Index r = 0; r < k; ++r) w(i, nb[static_cast<std::size_t>(r)]) = wi(r);
    }

    const Matrix iw = Matrix::Identity(u, u) - w;
    Matrix m = iw.transpose() * iw;
    // Lift the constant direction out of the bottom of the spectrum so the two
    // smallest eigenvectors are orthogonal to the all-ones vector.
    const double lift = m.trace() + 1.0;
    m.array() += lift / static_cast<double>(u);
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    if (es.info() != Eigen::Success) throw numerical_error("EigenFailure", "LLE eigensolver failed");
    Matrix coords_u = es.eigenvectors().leftCols(2);
    fix_signs(coords_u);

    Matrix coords(pts.rows(), 2);
    for (Index j = 0; j < pts.rows(); ++j) coords.row(j) = coords_u.row(rep[static_cast<std::size_t>(j)]);
    return {t.feature_names, coords, "lle"};
}

// ---------------------------------------------------------------------------
// Laplacian eigenmaps

/// Edge weighting for Laplacian eigenmaps: heat kernel exp(-d^2/sigma^2), or
/// unit weights. With no sigma given, the median off-diagonal distance is used.
struct HeatKernel {
    bool binary = false;
    std::optional<double> sigma;

    static HeatKernel unit() { return {true, std::nullopt}; }
    static HeatKernel with_sigma(double s) { return {false, s}; }
};

struct SpectralResult {
    Matrix coords;   // p x 2 generalized eigenvectors (unit D-norm)
    Vector eigenvalues;
    Vector degrees;
};

inline SpectralResult laplacian_spectrum(const DistanceMatrix& d, Index k, const HeatKernel& heat) {
    const Index p = d.p();
    if (p < 3) throw data_error("TooFewFeatures", "Laplacian eigenmaps needs p >= 3");
    auto adj = knn_graph(d.d, k);
    require_connected(adj, "Laplacian eigenmaps");

    double sigma = 1.0;
    if (!heat.binary) {
        if (heat.sigma) {
            sigma = *heat.sigma;
        } else {
            auto tri = d.upper_triangle();
            std::nth_element(tri.begin(), tri.begin() + static_cast<std::ptrdiff_t>(tri.size() / 2), tri.end());
            sigma = tri[tri.size() / 2];
        }
        if (!(sigma > 0.0)) throw config_error("BadHeatSigma", "heat kernel sigma must be positive");
    }
    Matrix w = Matrix::Zero(p, p);
    for (Index j = 0; j < p; ++j)
        for (auto [c, dist] : adj[static_cast<std::size_t>(j)])
            w(j, c) = heat.binary ? 1.0 : std::exp(-(dist * dist) / (sigma * sigma));
    const Vector deg = w.rowwise().sum();
    if ((deg.array() <= 0.0).any()) throw numerical_error("ZeroDegree", "heat kernel underflow produced an isolated node");

    // L v = lambda D v  <=>  (I - D^-1/2 W D^-1/2) u = lambda u,  v = D^-1/2 u
    const Vector isd = deg.cwiseSqrt().cwiseInverse();
    Matrix nl = -(isd.asDiagonal() * w * isd.asDiagonal());
    nl.diagonal().array() += 1.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(nl);
    if (es.info() != Eigen::Success) throw numerical_error("EigenFailure", "Laplacian eigensolver failed");
    SpectralResult r;
    r.coords = isd.asDiagonal() * es.eigenvectors().middleCols(1, 2);
    fix_signs(r.coords);
    r.eigenvalues = es.eigenvalues();
    r.degrees = deg;
    return r;
}

inline Embedding laplacian_eigenmaps(const DistanceMatrix& d, Index k, const HeatKernel& heat = {}) {
    return {d.labels, laplacian_spectrum(d, k, heat).coords, "le"};
}

// ---------------------------------------------------------------------------
// SMACOF

struct SmacofResult {
    Embedding embedding;
    std::vector<double> stress;  // stress[0] is the initial value
    int iterations = 0;
};

/// Raw stress: sum over pairs j<k of (d_jk - ||x_j - x_k||)^2.
inline double raw_stress(const Matrix& d, const Matrix& x) {
    double s = 0.0;
    for (Index j = 0; j < x.rows(); ++j)
        for (Index k = j + 1; k < x.rows(); ++k) {
            const double r = d(j, k) - (x.row(j) - x.row(k)).norm();
            s += r * r;
        }
    return s;
}

/// Guttman-transform iterations on unit-weight raw stress. Stops when the
/// relative stress drop falls below `tol`, the stress is numerically zero, or
/// an update would not decrease it; the returned trace is non-increasing.
inline SmacofResult smacof_refine(const DistanceMatrix& d, const Embedding& init, int max_iter = 1000,
                                  double tol = 1e-10) {
    const Index p = d.p();
    if (init.p() != p || init.coords.cols() != 2) throw data_error("ShapeMismatch", "SMACOF init does not match distances");
    if (!init.coords.allFinite()) throw data_error("BadEmbedding", "SMACOF init has non-finite coordinates");

    Matrix x = init.coords;
    SmacofResult res;
    double cur = raw_stress(d.d, x);
    res.stress.push_back(cur);
    const double floor = 1e-24 * std::max(1.0, d.d.squaredNorm());

    Matrix b(p, p), next(p, 2);
    for (int it = 0; it < max_iter && cur > floor; ++it) {
        // Separate coincident points by a tiny deterministic offset.
        for (Index j = 0; j < p; ++j)
            for (Index k = j + 1; k < p; ++k)
                if ((x.row(j) - x.row(k)).squaredNorm() == 0.0 && d.d(j, k) > 0.0) {
                    const double ang = static_cast<double>(k) * 2.399963229728653;
                    x(k, 0) += 1e-9 * std::cos(ang);
                    x(k, 1) += 1e-9 * std::sin(ang);
                }
        b.setZero();
        for (Index j = 0; j < p; ++j)
            for (Index k = j + 1; k < p; ++k) {
                const double dist = (x.row(j) - x.row(k)).norm();
                const double v = dist > 0.0 ? -d.d(j, k) / dist : 0.0;
                b(j, k) = v;
                b(k, j) = v;
            }
        for (Index j = 0; j < p; ++j) b(j, j) = -b.row(j).sum();
        next = b * x / static_cast<double>(p);
        const double s = raw_stress(d.d, next);
        if (!(s <= cur)) break;
        x = next;
        res.iterations = it + 1;
        res.stress.push_back(s);
        const double drop = cur - s;
        cur = s;
        if (drop <= tol * res.stress[res.stress.size() - 2]) break;
    }
    res.embedding = {init.labels, x, init.method_tag.empty() ? "smacof" : init.method_tag + "+smacof"};
    return res;
}

}  // namespace refined
