#pragma once

// Prediction metrics, bootstrap model comparison, gap-statistic model
// improvement test and distance-distribution diagnostics.

#include "refined/common.hpp"
#include "refined/distances.hpp"
#include "refined/predictions.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace refined {

// ---------------------------------------------------------------------------
// Point metrics

struct MetricReport {
    double nrmse = 0, nmae = 0, pcc = 0, bias = 0;
    Index n_test = 0;
    double ybar_ref = 0;
};

inline void to_json(nlohmann::json& j, const MetricReport& r) {
    j = nlohmann::json{{"nrmse", r.nrmse}, {"nmae", r.nmae}, {"pcc", r.pcc},
                       {"bias", r.bias},   {"n_test", r.n_test}, {"ybar_ref", r.ybar_ref}};
}

enum class Metric { nrmse, nmae, pcc, bias };

inline constexpr std::array<Metric, 4> kAllMetrics{Metric::nrmse, Metric::nmae, Metric::pcc, Metric::bias};

inline std::string to_string(Metric m) {
    switch (m) {
        case Metric::nrmse: return "nrmse";
        case Metric::nmae: return "nmae";
        case Metric::pcc: return "pcc";
        case Metric::bias: return "bias";
    }
    return "?";
}

inline Metric parse_metric(const std::string& s) {
    for (auto m : kAllMetrics)
        if (to_string(m) == s) return m;
    throw config_error("BadMetric", "unknown metric '" + s + "'");
}

/// True when larger values are better.
inline bool higher_is_better(Metric m) { return m == Metric::pcc; }

inline double get(const MetricReport& r, Metric m) {
    switch (m) {
        case Metric::nrmse: return r.nrmse;
        case Metric::nmae: return r.nmae;
        case Metric::pcc: return r.pcc;
        case Metric::bias: return r.bias;
    }
    return 0.0;
}

/// NRMSE and NMAE normalise by the error of predicting `ybar_ref` (the
/// non-test mean) for every sample. Bias is arctan(|slope|) in radians, the
/// slope coming from regressing residuals y - yhat on yhat.
template <typename VecY, typename VecP>
MetricReport score(const VecY& y, const VecP& yhat, double ybar_ref) {
    const Index n = static_cast<Index>(y.size());
    if (static_cast<Index>(yhat.size()) != n) throw data_error("ShapeMismatch", "y and yhat differ in length");
    if (n < 2) throw data_error("TooFewSamples", "need at least 2 test samples");
    double se = 0, se_ref = 0, ae = 0, ae_ref = 0, my = 0, mp = 0;
    for (Index i = 0; i < n; ++i) {
        const double e = y[i] - yhat[i];
        const double e0 = y[i] - ybar_ref;
        se += e * e;
        se_ref += e0 * e0;
        ae += std::abs(e);
        ae_ref += std::abs(e0);
        my += y[i];
        mp += yhat[i];
    }
    if (!(se_ref > 0.0)) throw numerical_error("ZeroVariance", "test responses all equal the reference mean");
    my /= static_cast<double>(n);
    mp /= static_cast<double>(n);
    double syy = 0, spp = 0, syp = 0, spr = 0;
    for (Index i = 0; i < n; ++i) {
        const double dy = y[i] - my, dp = yhat[i] - mp;
        const double dr = (y[i] - yhat[i]) - (my - mp);
        syy += dy * dy;
        spp += dp * dp;
        syp += dy * dp;
        spr += dp * dr;
    }
    MetricReport r;
    r.n_test = n;
    r.ybar_ref = ybar_ref;
    r.nrmse = std::sqrt(se / se_ref);
    r.nmae = ae / ae_ref;
    if (spp > 0.0 && syy > 0.0) {
        r.pcc = std::clamp(syp / std::sqrt(syy * spp), -1.0, 1.0);
    } else {
        r.pcc = 0.0;
        warn("zero-variance predictions or responses; PCC reported as 0");
    }
    const double slope = spp > 0.0 ? spr / spp : 0.0;
    r.bias = std::atan(std::abs(slope));
    return r;
}

// ---------------------------------------------------------------------------
// Quantiles and intervals

/// Linear-interpolation quantile of sorted data: h = (N - 1) q,
/// Q = x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h]).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw data_error("Empty", "quantile of empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Percentile interval of bootstrap replicates at quantiles (1-level)/2 and
/// 1-(1-level)/2, using quantile_sorted.
inline std::pair<double, double> jackknife_bootstrap_ci(std::vector<double> replicates, double level = 0.95) {
    if (replicates.size() < 100) throw data_error("TooFewReplicates", "need at least 100 replicates for an interval");
    if (!(level > 0.0 && level < 1.0)) throw config_error("BadLevel", "confidence level must lie in (0,1)");
    std::sort(replicates.begin(), replicates.end());
    const double a = (1.0 - level) / 2.0;
    return {quantile_sorted(replicates, a), quantile_sorted(replicates, 1.0 - a)};
}

// ---------------------------------------------------------------------------
// Bootstrap

struct BootstrapSummary {
    std::string model_tag;
    int B = 0;
    std::uint64_t seed = 0;
    std::map<std::string, std::vector<double>> replicates;          // keyed by metric name
    std::map<std::string, std::pair<double, double>> ci95;
    std::vector<std::uint64_t> index_hashes;                         // one per replicate

    const std::vector<double>& values(Metric m) const { return replicates.at(to_string(m)); }
};

inline void to_json(nlohmann::json& j, const BootstrapSummary& s) {
    nlohmann::json ci = nlohmann::json::object();
    for (const auto& [k, v] : s.ci95) ci[k] = {v.first, v.second};
    nlohmann::json mean = nlohmann::json::object();
    for (const auto& [k, v] : s.replicates)
        mean[k] = v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    j = nlohmann::json{{"model", s.model_tag}, {"B", s.B}, {"seed", s.seed}, {"ci95", ci}, {"replicate_mean", mean}};
}

namespace detail {

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Each index is
/// processed exactly once and writes only its own slot.
template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < count; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// B paired resamples of (y, yhat) with replacement; replicate r uses the same
/// indices for every model and its own RNG stream derived from (seed, r).
/// Replicates whose responses all equal ybar_ref are redrawn (up to 10 times).
inline std::vector<BootstrapSummary> bootstrap_metrics(const Vector& y, const PredictionSet& preds, double ybar_ref,
                                                       int B, std::uint64_t seed, int threads = 1) {
    validate(preds);
    if (B < 100) throw config_error("TooFewReplicates", "bootstrap needs B >= 100");
    const Index n = y.size();
    if (preds.n() != n) throw data_error("ShapeMismatch", "predictions and responses differ in length");
    const Index A = preds.models();

    std::vector<std::vector<MetricReport>> reps(static_cast<std::size_t>(B), std::vector<MetricReport>(static_cast<std::size_t>(A)));
    std::vector<std::uint64_t> hashes(static_cast<std::size_t>(B));
    detail::parallel_for(static_cast<std::size_t>(B), threads, [&](std::size_t r) {
        ScopedWarningMute mute;
        Rng rng(derive_seed(seed, r));
        std::vector<Index> idx(static_cast<std::size_t>(n));
        bool ok = false;
        for (int attempt = 0; attempt <= 10 && !ok; ++attempt) {
            for (auto& v : idx) v = static_cast<Index>(rng.index(static_cast<std::size_t>(n)));
            double ss = 0.0;
            for (auto i : idx) ss += (y(i) - ybar_ref) * (y(i) - ybar_ref);
            ok = ss > 0.0;
        }
        if (!ok) throw numerical_error("DegenerateBootstrap", "replicate " + std::to_string(r) + " stayed degenerate after 10 redraws");
        hashes[r] = fnv1a(idx.data(), idx.size() * sizeof(Index));
        Vector yb(n), pb(n);
        for (Index a = 0; a < A; ++a) {
            for (Index i = 0; i < n; ++i) {
                yb(i) = y(idx[static_cast<std::size_t>(i)]);
                pb(i) = preds.yhat(idx[static_cast<std::size_t>(i)], a);
            }
            reps[r][static_cast<std::size_t>(a)] = score(yb, pb, ybar_ref);
        }
    });

    std::vector<BootstrapSummary> out;
    for (Index a = 0; a < A; ++a) {
        BootstrapSummary s;
        s.model_tag = preds.model_tags[static_cast<std::size_t>(a)];
        s.B = B;
        s.seed = seed;
        s.index_hashes = hashes;
        for (auto m : kAllMetrics) {
            auto& v = s.replicates[to_string(m)];
            v.reserve(static_cast<std::size_t>(B));
            for (int r = 0; r < B; ++r) v.push_back(get(reps[static_cast<std::size_t>(r)][static_cast<std::size_t>(a)], m));
            s.ci95[to_string(m)] = jackknife_bootstrap_ci(v, 0.95);
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// Each prediction is drawn uniformly, with replacement, from the training responses.
inline Vector null_model_predictions(const Vector& y_train, Index n_test, std::uint64_t seed) {
    if (y_train.size() == 0) throw data_error("Empty", "null model needs training responses");
    Rng rng(seed);
    Vector out(n_test);
    for (Index i = 0; i < n_test; ++i) out(i) = y_train(static_cast<Index>(rng.index(static_cast<std::size_t>(y_train.size()))));
    return out;
}

/// Fraction of paired replicates where `a` strictly beats `b` on `metric`.
inline double robustness_wins(const BootstrapSummary& a, const BootstrapSummary& b, Metric metric) {
    if (a.B != b.B) throw data_error("ReplicateMismatch", "bootstrap summaries have different B");
    if (a.index_hashes != b.index_hashes)
        throw data_error("ReplicateMismatch", "bootstrap summaries were not drawn with paired indices");
    const auto& va = a.values(metric);
    const auto& vb = b.values(metric);
    long wins = 0;
    for (std::size_t r = 0; r < va.size(); ++r)
        wins += higher_is_better(metric) ? (va[r] > vb[r]) : (va[r] < vb[r]);
    return static_cast<double>(wins) / static_cast<double>(va.size());
}

// ---------------------------------------------------------------------------
// k-means

struct KMeansResult {
    std::vector<int> labels;
    Matrix centroids;  // k x m
    double inertia = 0;
};

namespace detail {

inline double sq_dist(const Matrix& pts, Index i, const Matrix& cents, Index c) {
    return (pts.row(i) - cents.row(c)).squaredNorm();
}

inline KMeansResult lloyd(const Matrix& pts, int k, Rng& rng, int max_iter) {
    const Index n = pts.rows();
    KMeansResult res;
    res.centroids.resize(k, pts.cols());
    // k-means++ seeding
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    res.centroids.row(0) = pts.row(static_cast<Index>(rng.index(static_cast<std::size_t>(n))));
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (Index i = 0; i < n; ++i) {
            d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], sq_dist(pts, i, res.centroids, c - 1));
            total += d2[static_cast<std::size_t>(i)];
        }
        Index pick = n - 1;
        if (total > 0.0) {
            double u = rng.uniform() * total;
            for (Index i = 0; i < n; ++i) {
                u -= d2[static_cast<std::size_t>(i)];
                if (u < 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<Index>(rng.index(static_cast<std::size_t>(n)));
        }
        res.centroids.row(c) = pts.row(pick);
    }

    res.labels.assign(static_cast<std::size_t>(n), -1);
    for (int it = 0; it < max_iter; ++it) {
        bool changed = false;
        for (Index i = 0; i < n; ++i) {
            int best = 0;
            double bd = sq_dist(pts, i, res.centroids, 0);
            for (int c = 1; c < k; ++c) {
                const double dd = sq_dist(pts, i, res.centroids, c);
                if (dd < bd) {
                    bd = dd;
                    best = c;
                }
            }
            if (res.labels[static_cast<std::size_t>(i)] != best) {
                res.labels[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        Matrix sums = Matrix::Zero(k, pts.cols());
        std::vector<Index> counts(static_cast<std::size_t>(k), 0);
        for (Index i = 0; i < n; ++i) {
            sums.row(res.labels[static_cast<std::size_t>(i)]) += pts.row(i);
            ++counts[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                res.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
                continue;
            }
            // Empty cluster: re-seed at the point farthest from its centroid.
            Index far = 0;
            double fd = -1.0;
            for (Index i = 0; i < n; ++i) {
                const double dd = sq_dist(pts, i, res.centroids, res.labels[static_cast<std::size_t>(i)]);
                if (dd > fd) {
                    fd = dd;
                    far = i;
                }
            }
            res.centroids.row(c) = pts.row(far);
            res.labels[static_cast<std::size_t>(far)] = c;
            changed = true;
        }
        if (!changed) break;
    }
    res.inertia = 0.0;
    for (Index i = 0; i < n; ++i) res.inertia += sq_dist(pts, i, res.centroids, res.labels[static_cast<std::size_t>(i)]);
    return res;
}

inline Index distinct_rows(const Matrix& pts) {
    std::set<std::vector<double>> seen;
    for (Index i = 0; i < pts.rows(); ++i) {
        std::vector<double> r(static_cast<std::size_t>(pts.cols()));
        for (Index c = 0; c < pts.cols(); ++c) r[static_cast<std::size_t>(c)] = pts(i, c);
        seen.insert(std::move(r));
    }
    return static_cast<Index>(seen.size());
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding; best of `restarts` by inertia.
/// Points are rows of `pts`.
inline KMeansResult kmeans(const Matrix& pts, int k, std::uint64_t seed, int restarts = 5, int max_iter = 300) {
    if (k < 1) throw config_error("BadK", "k must be positive");
    if (k > detail::distinct_rows(pts)) throw data_error("TooFewPoints", "k exceeds the number of distinct points");
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, restarts); ++r) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
        auto res = detail::lloyd(pts, k, rng, max_iter);
        if (res.inertia < best.inertia) best = std::move(res);
    }
    return best;
}

// ---------------------------------------------------------------------------
// Gap statistic

struct GapResult {
    std::vector<double> gap;       // index k-1
    std::vector<double> sk;
    std::vector<double> log_w;
    int chosen_k = 1;
    double cluster_overlap = -1;   // set when chosen_k >= 2 and sources are known
};

inline void to_json(nlohmann::json& j, const GapResult& g) {
    j = nlohmann::json{{"gap", g.gap}, {"sk", g.sk}, {"log_w", g.log_w}, {"chosen_k", g.chosen_k}};
    if (g.cluster_overlap >= 0) j["cluster_overlap"] = g.cluster_overlap;
}

struct GapOptions {
    int kmax = 4;
    int b_ref = 20;
    std::uint64_t seed = 1;
    int restarts = 3;
    int threads = 1;
};

/// Tibshirani gap statistic with uniform reference sets over the data's
/// bounding box. Rows [0, n_candidate) are taken to come from the candidate
/// model and the rest from the null model; when n_candidate > 0 and two or
/// more clusters are chosen, the k=2 partition's disagreement with that split
/// (best of the two label permutations) is reported as cluster_overlap.
inline GapResult gap_statistic(const Matrix& pts, const GapOptions& opt, Index n_candidate = 0) {
    if (opt.kmax < 2) throw config_error("BadKmax", "gap statistic needs kmax >= 2");
    if (opt.b_ref < 10) throw config_error("BadReferences", "gap statistic needs at least 10 reference sets");
    const Index distinct = detail::distinct_rows(pts);
    if (distinct < 2) throw data_error("TooFewPoints", "gap statistic needs at least 2 distinct points");
    const int kmax = static_cast<int>(std::min<Index>(opt.kmax, distinct));
    const Index n = pts.rows(), m = pts.cols();
    const Eigen::RowVectorXd lo = pts.colwise().minCoeff(), hi = pts.colwise().maxCoeff();

    auto log_w = [&](const Matrix& x, int k, std::uint64_t s) {
        if (k == 1) {
            const Eigen::RowVectorXd mu = x.colwise().mean();
            return std::log(std::max((x.rowwise() - mu).squaredNorm(), 1e-300));
        }
        return std::log(std::max(kmeans(x, k, s, opt.restarts).inertia, 1e-300));
    };

    GapResult res;
    res.log_w.resize(static_cast<std::size_t>(kmax));
    for (int k = 1; k <= kmax; ++k)
        res.log_w[static_cast<std::size_t>(k - 1)] = log_w(pts, k, derive_seed(opt.seed, 1000000 + static_cast<std::uint64_t>(k)));

    Matrix ref_logw(opt.b_ref, kmax);
    detail::parallel_for(static_cast<std::size_t>(opt.b_ref), opt.threads, [&](std::size_t b) {
        Rng rng(derive_seed(opt.seed, b));
        Matrix ref(n, m);
        for (Index i = 0; i < n; ++i)
            for (Index c = 0; c < m; ++c) ref(i, c) = rng.uniform(lo(c), hi(c));
        for (int k = 1; k <= kmax; ++k)
            ref_logw(static_cast<Index>(b), k - 1) = log_w(ref, std::min<int>(k, static_cast<int>(detail::distinct_rows(ref))),
                                                       derive_seed(opt.seed, (b + 1) * 1000 + static_cast<std::uint64_t>(k)));
    });

    for (int k = 1; k <= kmax; ++k) {
        const Vector col = ref_logw.col(k - 1);
        const double mean = col.mean();
        const double sd = std::sqrt((col.array() - mean).square().mean());
        res.gap.push_back(mean - res.log_w[static_cast<std::size_t>(k - 1)]);
        res.sk.push_back(sd * std::sqrt(1.0 + 1.0 / opt.b_ref));
    }
    res.chosen_k = kmax;
    for (int k = 1; k < kmax; ++k)
        if (res.gap[static_cast<std::size_t>(k - 1)] >= res.gap[static_cast<std::size_t>(k)] - res.sk[static_cast<std::size_t>(k)]) {
            res.chosen_k = k;
            break;
        }

    if (res.chosen_k >= 2 && n_candidate > 0) {
        auto km = kmeans(pts, 2, derive_seed(opt.seed, 999999), opt.restarts);
        Index mismatch = 0;
        for (Index i = 0; i < n; ++i) mismatch += (km.labels[static_cast<std::size_t>(i)] == 1) != (i >= n_candidate);
        res.cluster_overlap = static_cast<double>(std::min(mismatch, n - mismatch)) / static_cast<double>(n);
    }
    return res;
}

/// Stacks candidate and null replicate metric vectors (rows: replicates,
/// columns: the four metrics) for gap_statistic.
inline Matrix replicate_points(const BootstrapSummary& candidate, const BootstrapSummary& null_model) {
    const Index B1 = candidate.B, B2 = null_model.B;
    Matrix pts(B1 + B2, 4);
    for (int c = 0; c < 4; ++c) {
        const auto& a = candidate.values(kAllMetrics[static_cast<std::size_t>(c)]);
        const auto& b = null_model.values(kAllMetrics[static_cast<std::size_t>(c)]);
        for (Index r = 0; r < B1; ++r) pts(r, c) = a[static_cast<std::size_t>(r)];
        for (Index r = 0; r < B2; ++r) pts(B1 + r, c) = b[static_cast<std::size_t>(r)];
    }
    return pts;
}

// ---------------------------------------------------------------------------
// Rank correlation and divergence between distance matrices

namespace detail {

/// Number of tied pairs within runs of equal values in sorted data.
template <typename It, typename Eq>
long long tied_pairs(It first, It last, Eq eq) {
    long long total = 0;
    while (first != last) {
        It run = first;
        long long len = 0;
        while (run != last && eq(*run, *first)) {
            ++run;
            ++len;
        }
        total += len * (len - 1) / 2;
        first = run;
    }
    return total;
}

inline long long merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = (lo + hi) / 2;
    long long swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            swaps += static_cast<long long>(mid - i);
            buf[k++] = v[j++];
        } else {
            buf[k++] = v[i++];
        }
    }
    while (i < mid) buf[k++] = v[i++];
    while (j < hi) buf[k++] = v[j++];
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return swaps;
}

}  // namespace detail

/// Kendall tau-b in O(n log n) (Knight's merge-sort method).
inline double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (y.size() != n) throw data_error("ShapeMismatch", "kendall: inputs differ in length");
    if (n < 2) throw data_error("TooFewPairs", "kendall tau needs at least 2 observations");
    std::vector<std::size_t> ord(n);
    std::iota(ord.begin(), ord.end(), std::size_t{0});
    std::sort(ord.begin(), ord.end(), [&](auto a, auto b) { return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]); });
    std::vector<std::pair<double, double>> xy(n);
    for (std::size_t i = 0; i < n; ++i) xy[i] = {x[ord[i]], y[ord[i]]};

    const long long n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
    const long long n1 = detail::tied_pairs(xy.begin(), xy.end(), [](const auto& a, const auto& b) { return a.first == b.first; });
    const long long n3 = detail::tied_pairs(xy.begin(), xy.end(), [](const auto& a, const auto& b) { return a == b; });
    std::vector<double> ys(n), buf(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = xy[i].second;
    const long long swaps = detail::merge_count(ys, buf, 0, n);
    const long long n2 = detail::tied_pairs(ys.begin(), ys.end(), [](double a, double b) { return a == b; });

    const double denom = std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2));
    if (!(denom > 0.0)) {
        warn("kendall tau undefined for constant input; reporting 0");
        return 0.0;
    }
    const long long concordant_minus_discordant = n0 - n1 - n2 + n3 - 2 * swaps;
    return static_cast<double>(concordant_minus_discordant) / denom;
}

/// Kendall tau-b over the p(p-1)/2 upper-triangle entries of two matrices.
inline double kendall_tau_distances(const DistanceMatrix& d1, const DistanceMatrix& d2) {
    if (d1.labels != d2.labels) throw data_error("LabelMismatch", "kendall: matrices have different labels");
    if (d1.pairs() < 2) throw data_error("TooFewPairs", "kendall tau needs at least 2 pairs");
    return kendall_tau_b(d1.upper_triangle(), d2.upper_triangle());
}

/// D_KL(p1 || p2) between histograms of the two upper triangles on their
/// shared range (optionally of log distances), with +1 smoothing per bin.
inline double kl_divergence_distances(const DistanceMatrix& d1, const DistanceMatrix& d2, bool log_scale = false,
                                      int bins = 50) {
    if (bins < 1) throw config_error("BadBins", "bins must be positive");
    auto a = d1.upper_triangle(), b = d2.upper_triangle();
    if (a.empty() || b.empty()) throw data_error("Empty", "KL divergence of an empty triangle");
    if (log_scale) {
        for (auto* v : {&a, &b})
            for (auto& x : *v) {
                if (!(x > 0.0)) throw data_error("ZeroDistance", "log-scale KL needs positive distances");
                x = std::log(x);
            }
    }
    const double lo = std::min(*std::min_element(a.begin(), a.end()), *std::min_element(b.begin(), b.end()));
    const double hi = std::max(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
    auto histogram = [&](const std::vector<double>& v) {
        std::vector<double> h(static_cast<std::size_t>(bins), 1.0);
        for (double x : v) {
            int bin = hi > lo ? static_cast<int>(std::floor((x - lo) / (hi - lo) * bins)) : 0;
            bin = std::clamp(bin, 0, bins - 1);
            h[static_cast<std::size_t>(bin)] += 1.0;
        }
        const double total = static_cast<double>(v.size()) + bins;
        for (auto& c : h) c /= total;
        return h;
    };
    const auto p1 = histogram(a), p2 = histogram(b);
    double kl = 0.0;
    for (int i = 0; i < bins; ++i) kl += p1[static_cast<std::size_t>(i)] * std::log(p1[static_cast<std::size_t>(i)] / p2[static_cast<std::size_t>(i)]);
    return std::max(kl, 0.0);
}

}  // namespace refined
