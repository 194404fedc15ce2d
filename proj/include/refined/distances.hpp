#pragma once

// Feature dissimilarities and their precision-weighted fusion.
//
// Fusion of A candidate matrices d_1..d_A uses weights W_a = 1/sigma2_a:
//   arithmetic  d[j][k] = sum_a W_a d_a[j][k] / sum_a W_a
//   geometric   d[j][k] = exp(sum_a W_a log d_a[j][k] / sum_a W_a)
// which are the location parameters of the conditional posterior of the
// shared configuration under truncated-normal and log-normal distance models.

#include "refined/common.hpp"
#include "refined/dataio.hpp"
#include "refined/embedding.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

namespace refined {

struct DistanceMatrix {
    std::vector<std::string> labels;
    Matrix d;  // p x p, symmetric, zero diagonal

    Index p() const { return d.rows(); }

    /// Number of unordered pairs, p(p-1)/2.
    Index pairs() const { return p() * (p() - 1) / 2; }

    /// Upper-triangle entries in row-major (j < k) order.
    std::vector<double> upper_triangle() const {
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(pairs()));
        for (Index j = 0; j < p(); ++j)
            for (Index k = j + 1; k < p(); ++k) out.push_back(d(j, k));
        return out;
    }
};

inline void validate(const DistanceMatrix& m) {
    if (m.d.rows() != m.d.cols()) throw data_error("NotSquare", "distance matrix is not square");
    if (static_cast<Index>(m.labels.size()) != m.p())
        throw data_error("LabelMismatch", "label count does not match matrix size");
    for (Index j = 0; j < m.p(); ++j) {
        if (m.d(j, j) != 0.0) throw data_error("NonZeroDiagonal", "diagonal entry " + std::to_string(j) + " is not 0");
        for (Index k = j + 1; k < m.p(); ++k) {
            const double a = m.d(j, k);
            if (!std::isfinite(a) || a < 0.0)
                throw data_error("BadDistance", "entry (" + std::to_string(j) + "," + std::to_string(k) +
                                                    ") is negative or non-finite");
            if (a != m.d(k, j)) throw data_error("Asymmetric", "distance matrix is not symmetric");
        }
    }
}

/// Euclidean distances between the rows of `points`.
inline Matrix pairwise_euclidean_rows(const Matrix& points) {
    const Index p = points.rows();
    Matrix d = Matrix::Zero(p, p);
    for (Index j = 0; j < p; ++j)
        for (Index k = j + 1; k < p; ++k) {
            const double v = (points.row(j) - points.row(k)).norm();
            d(j, k) = v;
            d(k, j) = v;
        }
    return d;
}

/// Distances between feature columns; each feature is a point in R^n.
inline DistanceMatrix pairwise_euclidean(const FeatureTable& t) {
    if (t.p() < 2) throw data_error("TooFewFeatures", "need at least 2 features for distances");
    return {t.feature_names, pairwise_euclidean_rows(t.values.transpose())};
}

inline DistanceMatrix embedding_distances(const Embedding& e) {
    if (e.coords.cols() != 2) throw data_error("BadEmbedding", "embedding must have 2 columns");
    if (static_cast<Index>(e.labels.size()) != e.p()) throw data_error("LabelMismatch", "embedding labels");
    if (!e.coords.allFinite()) throw data_error("BadEmbedding", "embedding contains non-finite coordinates");
    return {e.labels, pairwise_euclidean_rows(e.coords)};
}

// ---------------------------------------------------------------------------
// Neighbourhood graphs

/// Adjacency list: for each node, (neighbour, weight) pairs sorted by neighbour.
using Adjacency = std::vector<std::vector<std::pair<Index, double>>>;

/// k-nearest-neighbour graph, symmetrized by union. Distance ties are broken
/// by the lower index.
inline Adjacency knn_graph(const Matrix& d, Index k) {
    const Index p = d.rows();
    if (k < 1 || k >= p) throw config_error("BadNeighbors", "k must satisfy 1 <= k < p (k=" + std::to_string(k) +
                                                                  ", p=" + std::to_string(p) + ")");
    std::vector<std::map<Index, double>> nb(static_cast<std::size_t>(p));
    std::vector<Index> order(static_cast<std::size_t>(p));
    for (Index j = 0; j < p; ++j) {
        std::iota(order.begin(), order.end(), Index{0});
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return d(j, a) < d(j, b); });
        Index taken = 0;
        for (Index c : order) {
            if (c == j) continue;
            nb[static_cast<std::size_t>(j)][c] = d(j, c);
            nb[static_cast<std::size_t>(c)][j] = d(j, c);
            if (++taken == k) break;
        }
    }
    Adjacency adj(static_cast<std::size_t>(p));
    for (Index j = 0; j < p; ++j)
        for (auto [c, w] : nb[static_cast<std::size_t>(j)]) adj[static_cast<std::size_t>(j)].emplace_back(c, w);
    return adj;
}

/// Sizes of connected components, largest first.
inline std::vector<Index> component_sizes(const Adjacency& adj) {
    const auto p = adj.size();
    std::vector<int> seen(p, 0);
    std::vector<Index> sizes;
    for (std::size_t s = 0; s < p; ++s) {
        if (seen[s]) continue;
        Index count = 0;
        std::vector<std::size_t> stack{s};
        seen[s] = 1;
        while (!stack.empty()) {
            auto u = stack.back();
            stack.pop_back();
            ++count;
            for (auto [v, w] : adj[u]) {
                (void)w;
                if (!seen[static_cast<std::size_t>(v)]) {
                    seen[static_cast<std::size_t>(v)] = 1;
                    stack.push_back(static_cast<std::size_t>(v));
                }
            }
        }
        sizes.push_back(count);
    }
    std::sort(sizes.rbegin(), sizes.rend());
    return sizes;
}

inline void require_connected(const Adjacency& adj, const std::string& what) {
    auto sizes = component_sizes(adj);
    if (sizes.size() <= 1) return;
    std::ostringstream os;
    os << what << " neighbourhood graph is disconnected; component sizes:";
    for (auto s : sizes) os << ' ' << s;
    os << " (increase k)";
    throw data_error("DisconnectedGraph", os.str());
}

/// Shortest-path lengths over the symmetrized k-NN graph (Dijkstra per source).
inline DistanceMatrix geodesic_distances(const DistanceMatrix& in, Index k) {
    const Index p = in.p();
    auto adj = knn_graph(in.d, k);
    require_connected(adj, "geodesic");
    Matrix out = Matrix::Zero(p, p);
    using Item = std::pair<double, Index>;
    std::vector<double> dist(static_cast<std::size_t>(p));
    for (Index s = 0; s < p; ++s) {
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
        dist[static_cast<std::size_t>(s)] = 0.0;
        pq.emplace(0.0, s);
        while (!pq.empty()) {
            auto [du, u] = pq.top();
            pq.pop();
            if (du > dist[static_cast<std::size_t>(u)]) continue;
            for (auto [v, w] : adj[static_cast<std::size_t>(u)]) {
                const double nd = du + w;
                if (nd < dist[static_cast<std::size_t>(v)]) {
                    dist[static_cast<std::size_t>(v)] = nd;
                    pq.emplace(nd, v);
                }
            }
        }
        for (Index t = 0; t < p; ++t) out(s, t) = dist[static_cast<std::size_t>(t)];
    }
    // Dijkstra from each end may differ in the last ulp; keep the result symmetric.
    for (Index j = 0; j < p; ++j)
        for (Index t = j + 1; t < p; ++t) {
            const double v = std::min(out(j, t), out(t, j));
            out(j, t) = v;
            out(t, j) = v;
        }
    return {in.labels, out};
}

/// Divides every entry by the mean off-diagonal entry.
inline DistanceMatrix rescale_unit_mean(const DistanceMatrix& m) {
    const Index p = m.p();
    if (p < 2) return m;
    const double mean = m.d.sum() / static_cast<double>(p * (p - 1));
    if (!(mean > 0.0)) throw data_error("ZeroDistances", "cannot rescale an all-zero distance matrix");
    return {m.labels, m.d / mean};
}

// ---------------------------------------------------------------------------
// Fusion

enum class FusionMode { arithmetic, geometric };

inline std::string to_string(FusionMode m) { return m == FusionMode::arithmetic ? "arithmetic" : "geometric"; }

inline FusionMode parse_fusion_mode(const std::string& s) {
    if (s == "arithmetic") return FusionMode::arithmetic;
    if (s == "geometric") return FusionMode::geometric;
    throw config_error("BadFusionMode", "unknown fusion mode '" + s + "'");
}

/// One variance per candidate metric; the fusion weight is its precision.
struct PrecisionWeights {
    Vector sigma2;

    Vector weights() const { return sigma2.cwiseInverse(); }
    double total() const { return weights().sum(); }
};

inline void validate(const PrecisionWeights& w) {
    if (w.sigma2.size() == 0) throw data_error("NoWeights", "empty precision weights");
    for (Index a = 0; a < w.sigma2.size(); ++a)
        if (!(w.sigma2(a) > 0.0) || !std::isfinite(w.sigma2(a)))
            throw data_error("BadWeights", "variance " + std::to_string(a) + " must be positive and finite");
}

struct FusedDistance {
    DistanceMatrix d_bar;
    PrecisionWeights weights;
    FusionMode mode = FusionMode::arithmetic;
};

namespace detail {

inline void check_compatible(const std::vector<DistanceMatrix>& ds) {
    if (ds.empty()) throw data_error("NoMatrices", "need at least one distance matrix");
    for (const auto& m : ds) {
        if (m.labels != ds.front().labels)
            throw data_error("LabelMismatch", "distance matrices do not share labels");
        if (m.p() != ds.front().p()) throw data_error("ShapeMismatch", "distance matrices differ in size");
    }
}

inline void check_positive_offdiag(const std::vector<DistanceMatrix>& ds) {
    for (std::size_t a = 0; a < ds.size(); ++a)
        for (Index j = 0; j < ds[a].p(); ++j)
            for (Index k = j + 1; k < ds[a].p(); ++k)
                if (!(ds[a].d(j, k) > 0.0))
                    throw data_error("ZeroDistance", "geometric fusion needs positive off-diagonal distances; matrix " +
                                                         std::to_string(a) + " has " + std::to_string(ds[a].d(j, k)) +
                                                         " at (" + std::to_string(j) + "," + std::to_string(k) + ")");
}

}  // namespace detail

/// Weighted arithmetic or geometric mean of the candidate matrices. Entries
/// on which all candidates agree are copied verbatim, and every entry is kept
/// inside [min_a, max_a] so rounding cannot leave the bracket.
inline FusedDistance fuse_distances(const std::vector<DistanceMatrix>& ds, const PrecisionWeights& w,
                                    FusionMode mode) {
    detail::check_compatible(ds);
    validate(w);
    if (static_cast<std::size_t>(w.sigma2.size()) != ds.size())
        throw data_error("ShapeMismatch", "one variance per distance matrix required");
    if (mode == FusionMode::geometric) detail::check_positive_offdiag(ds);

    const Vector W = w.weights();
    const double V = W.sum();
    const Index p = ds.front().p();
    Matrix out = Matrix::Zero(p, p);
    for (Index j = 0; j < p; ++j)
        for (Index k = j + 1; k < p; ++k) {
            double lo = ds[0].d(j, k), hi = lo;
            for (const auto& m : ds) {
                lo = std::min(lo, m.d(j, k));
                hi = std::max(hi, m.d(j, k));
            }
            double v;
            if (lo == hi) {
                v = lo;
            } else if (mode == FusionMode::arithmetic) {
                double acc = 0.0;
                for (std::size_t a = 0; a < ds.size(); ++a) acc += W(static_cast<Index>(a)) * ds[a].d(j, k);
                v = acc / V;
            } else {
                double acc = 0.0;
                for (std::size_t a = 0; a < ds.size(); ++a) acc += W(static_cast<Index>(a)) * std::log(ds[a].d(j, k));
                v = std::exp(acc / V);
            }
            v = std::clamp(v, lo, hi);
            out(j, k) = v;
            out(k, j) = v;
        }
    return {{ds.front().labels, out}, w, mode};
}

/// Result of the alternating weight/centre estimation.
struct PrecisionEstimate {
    PrecisionWeights weights;
    FusedDistance fused;
    int iterations = 0;
    bool converged = false;
    /// Sum over metrics of residual^2/sigma2 + m log sigma2 after each update,
    /// on the original (arithmetic) or log (geometric) scale.
    std::vector<double> objective;
};

inline constexpr double kVarianceFloor = 1e-12;

namespace detail {

inline double residual_ss(const DistanceMatrix& da, const Matrix& centre, FusionMode mode) {
    double ss = 0.0;
    for (Index j = 0; j < da.p(); ++j)
        for (Index k = j + 1; k < da.p(); ++k) {
            const double r = mode == FusionMode::arithmetic ? da.d(j, k) - centre(j, k)
                                                            : std::log(da.d(j, k)) - std::log(centre(j, k));
            ss += r * r;
        }
    return ss;
}

}  // namespace detail

/// Alternates between the fused centre (weighted mean under the current
/// variances) and per-metric variances (mean squared residual about the
/// centre), starting from unit variances. Each half-step minimises
/// sum_a [RSS_a / sigma2_a + m log sigma2_a], so the objective never rises.
inline PrecisionEstimate estimate_precisions(const std::vector<DistanceMatrix>& ds, FusionMode mode,
                                             int max_iter = 200, double tol = 1e-12) {
    detail::check_compatible(ds);
    if (ds.size() < 2) throw data_error("TooFewMetrics", "precision estimation needs at least 2 distance matrices");
    if (mode == FusionMode::geometric) detail::check_positive_offdiag(ds);
    const auto A = static_cast<Index>(ds.size());
    const double m = static_cast<double>(ds.front().pairs());
    if (m < 1) throw data_error("TooFewFeatures", "need at least 2 features");

    PrecisionEstimate est;
    est.weights.sigma2 = Vector::Ones(A);
    std::vector<bool> clamped(static_cast<std::size_t>(A), false);
    for (int it = 0; it < max_iter; ++it) {
        auto fused = fuse_distances(ds, est.weights, mode);
        Vector next(A);
        for (Index a = 0; a < A; ++a) {
            const double s2 = detail::residual_ss(ds[static_cast<std::size_t>(a)], fused.d_bar.d, mode) / m;
            clamped[static_cast<std::size_t>(a)] = s2 < kVarianceFloor;
            next(a) = std::max(s2, kVarianceFloor);
        }
        const double change = (next - est.weights.sigma2).cwiseAbs().maxCoeff();
        est.weights.sigma2 = next;
        est.iterations = it + 1;

        double obj = 0.0;
        for (Index a = 0; a < A; ++a)
            obj += detail::residual_ss(ds[static_cast<std::size_t>(a)], fused.d_bar.d, mode) / next(a) +
                   m * std::log(next(a));
        est.objective.push_back(obj);

        if (change < tol) {
            est.converged = true;
            break;
        }
    }
    for (Index a = 0; a < A; ++a)
        if (clamped[static_cast<std::size_t>(a)])
            warn("metric " + std::to_string(a) + " coincides with the fused centre; variance clamped to 1e-12");
    est.fused = fuse_distances(ds, est.weights, mode);
    return est;
}

// ---------------------------------------------------------------------------
// Serialization: CSV (header row of labels, then p rows) and a little-endian
// binary form (u64 p, then per label u64 length + bytes, then p*p f64 row-major).

inline void write_distance_csv(const DistanceMatrix& m, std::ostream& out) {
    for (std::size_t j = 0; j < m.labels.size(); ++j) out << (j ? "," : "") << m.labels[j];
    out << '\n';
    for (Index j = 0; j < m.p(); ++j) {
        for (Index k = 0; k < m.p(); ++k) out << (k ? "," : "") << detail::format_real(m.d(j, k));
        out << '\n';
    }
}

inline void save_distance_csv(const DistanceMatrix& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("Unwritable", "cannot write " + path);
    write_distance_csv(m, out);
}

inline DistanceMatrix read_distance_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw data_error("EmptyFile", "distance CSV has no header");
    DistanceMatrix m;
    m.labels = detail::split_line(line, ',');
    const auto p = static_cast<Index>(m.labels.size());
    m.d.resize(p, p);
    for (Index j = 0; j < p; ++j) {
        if (!std::getline(in, line)) throw data_error("Truncated", "distance CSV has too few rows");
        auto cells = detail::split_line(line, ',');
        if (static_cast<Index>(cells.size()) != p) throw data_error("RaggedRow", "distance CSV row width");
        for (Index k = 0; k < p; ++k)
            if (!detail::parse_real(cells[static_cast<std::size_t>(k)], m.d(j, k)))
                throw data_error("NonNumericCell", "distance CSV cell '" + cells[static_cast<std::size_t>(k)] + "'");
    }
    validate(m);
    return m;
}

inline DistanceMatrix load_distance_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("Unreadable", "cannot open " + path);
    return read_distance_csv(in);
}

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw data_error("Truncated", "binary distance matrix truncated");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

}  // namespace detail

inline void write_distance_binary(const DistanceMatrix& m, std::ostream& out) {
    detail::put_u64(out, static_cast<std::uint64_t>(m.p()));
    for (const auto& l : m.labels) {
        detail::put_u64(out, l.size());
        out.write(l.data(), static_cast<std::streamsize>(l.size()));
    }
    for (Index j = 0; j < m.p(); ++j)
        for (Index k = 0; k < m.p(); ++k) {
            std::uint64_t bits;
            const double v = m.d(j, k);
            std::memcpy(&bits, &v, 8);
            detail::put_u64(out, bits);
        }
}

inline DistanceMatrix read_distance_binary(std::istream& in) {
    DistanceMatrix m;
    const auto p = detail::get_u64(in);
    if (p > (1u << 20)) throw data_error("Malformed", "implausible matrix size in binary header");
    for (std::uint64_t j = 0; j < p; ++j) {
        const auto len = detail::get_u64(in);
        if (len > (1u << 20)) throw data_error("Malformed", "implausible label length");
        std::string l(len, '\0');
        if (!in.read(l.data(), static_cast<std::streamsize>(len))) throw data_error("Truncated", "label block");
        m.labels.push_back(std::move(l));
    }
    m.d.resize(static_cast<Index>(p), static_cast<Index>(p));
    for (Index j = 0; j < m.p(); ++j)
        for (Index k = 0; k < m.p(); ++k) {
            const auto bits = detail::get_u64(in);
            std::memcpy(&m.d(j, k), &bits, 8);
        }
    validate(m);
    return m;
}

inline void save_distance_binary(const DistanceMatrix& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("Unwritable", "cannot write " + path);
    write_distance_binary(m, out);
}

inline DistanceMatrix load_distance_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("Unreadable", "cannot open " + path);
    return read_distance_binary(in);
}

}  // namespace refined
