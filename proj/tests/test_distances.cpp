#include "support.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

using namespace refined;
using namespace refined::testing;

namespace {

DistanceMatrix constant_matrix(Index p, double v) {
    Matrix d = Matrix::Constant(p, p, v);
    d.diagonal().setZero();
    return {make_labels(p), d};
}

// Closed-form weighted mean, written without the library.
Matrix weighted_mean_oracle(const std::vector<DistanceMatrix>& ds, const std::vector<double>& sigma2, bool geometric) {
    const Index p = ds.front().p();
    Matrix out = Matrix::Zero(p, p);
    double V = 0.0;
    for (double s : sigma2) V += 1.0 / s;
    for (Index j = 0; j < p; ++j)
        for (Index k = 0; k < p; ++k) {
            if (j == k) continue;
            double acc = 0.0;
            for (std::size_t a = 0; a < ds.size(); ++a)
                acc += (geometric ? std::log(ds[a].d(j, k)) : ds[a].d(j, k)) / sigma2[a];
            out(j, k) = geometric ? std::exp(acc / V) : acc / V;
        }
    return out;
}

}  // namespace

TEST(PairwiseEuclidean, IdenticalColumnsHaveZeroDistance) {
    FeatureTable t = random_table(5, 4, 1);
    t.values.col(2) = t.values.col(0);
    auto d = pairwise_euclidean(t);
    EXPECT_EQ(d.d(0, 2), 0.0);
    EXPECT_EQ(d.d(2, 0), 0.0);
}

TEST(PairwiseEuclidean, ThreeFourFive) {
    FeatureTable t = random_table(2, 2, 1);
    t.values << 0, 3, 0, 4;
    auto d = pairwise_euclidean(t);
    EXPECT_DOUBLE_EQ(d.d(0, 1), 5.0);
    EXPECT_EQ(d.labels, t.feature_names);
}

TEST(PairwiseEuclidean, MatchesDoubleLoopOracle) {
    FeatureTable t = random_table(6, 4, 9);
    auto d = pairwise_euclidean(t);
    for (Index j = 0; j < 4; ++j)
        for (Index k = 0; k < 4; ++k) {
            double s = 0.0;
            for (Index i = 0; i < 6; ++i) s += (t.values(i, j) - t.values(i, k)) * (t.values(i, j) - t.values(i, k));
            EXPECT_NEAR(d.d(j, k), std::sqrt(s), 1e-12);
        }
    EXPECT_NO_THROW(validate(d));
}

TEST(PairwiseEuclidean, NeedsTwoFeatures) {
    EXPECT_REFINED_ERROR(pairwise_euclidean(random_table(4, 1, 1)), "TooFewFeatures");
}

TEST(GeodesicDistances, ChainPassesThroughMiddle) {
    Matrix pts(3, 1);
    pts << 0, 1, 2;
    DistanceMatrix d{make_labels(3), pairwise_euclidean_rows(pts)};
    auto g = geodesic_distances(d, 1);
    EXPECT_DOUBLE_EQ(g.d(0, 2), 2.0);
    EXPECT_DOUBLE_EQ(g.d(0, 1), 1.0);
}

TEST(GeodesicDistances, CompleteGraphReproducesMetricInput) {
    auto d = realizable(8, 4);
    auto g = geodesic_distances(d, 7);
    EXPECT_LT((g.d - d.d).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GeodesicDistances, CircleArcMatchesPolylineLength) {
    const int p = 10;
    Matrix pts(p, 2);
    for (int i = 0; i < p; ++i) {
        const double t = 0.1 * i;  // arc of 0.9 rad on the unit circle
        pts(i, 0) = std::cos(t);
        pts(i, 1) = std::sin(t);
    }
    DistanceMatrix d{make_labels(p), pairwise_euclidean_rows(pts)};
    auto g = geodesic_distances(d, 2);
    // Oracle: union 2-NN graph found by sorting each row, then Floyd-Warshall.
    const double inf = std::numeric_limits<double>::infinity();
    Matrix fw = Matrix::Constant(p, p, inf);
    for (int i = 0; i < p; ++i) {
        fw(i, i) = 0.0;
        std::vector<int> others;
        for (int j = 0; j < p; ++j)
            if (j != i) others.push_back(j);
        std::sort(others.begin(), others.end(), [&](int a, int b) { return d.d(i, a) < d.d(i, b); });
        for (int s = 0; s < 2; ++s) fw(i, others[s]) = fw(others[s], i) = d.d(i, others[s]);
    }
    for (int m = 0; m < p; ++m)
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < p; ++j) fw(i, j) = std::min(fw(i, j), fw(i, m) + fw(m, j));
    EXPECT_LT((g.d - fw).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(g.d(0, p - 1), 0.9, 0.9 * 1e-3);
}

TEST(GeodesicDistances, DisconnectedGraphListsComponents) {
    Matrix pts(4, 1);
    pts << 0, 1, 100, 101;
    DistanceMatrix d{make_labels(4), pairwise_euclidean_rows(pts)};
    try {
        geodesic_distances(d, 1);
        FAIL() << "expected DisconnectedGraph";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "DisconnectedGraph");
        EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
    }
}

TEST(GeodesicDistances, BadK) {
    auto d = realizable(5, 1);
    EXPECT_REFINED_ERROR(geodesic_distances(d, 0), "BadNeighbors");
    EXPECT_REFINED_ERROR(geodesic_distances(d, 5), "BadNeighbors");
}

TEST(EmbeddingDistances, SimpleCases) {
    Matrix c(3, 2);
    c << 0, 0, 1, 0, 1, 1;
    auto d = embedding_distances(embedding_of(c));
    EXPECT_DOUBLE_EQ(d.d(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(d.d(0, 2), std::sqrt(2.0));
}

TEST(EmbeddingDistances, MatchesDoubleLoopOracle) {
    Matrix c = random_points(5, 2, 17);
    auto d = embedding_distances(embedding_of(c));
    for (Index j = 0; j < 5; ++j)
        for (Index k = 0; k < 5; ++k)
            EXPECT_NEAR(d.d(j, k), std::hypot(c(j, 0) - c(k, 0), c(j, 1) - c(k, 1)), 1e-12);
}

TEST(FuseDistances, EqualWeights) {
    auto a = constant_matrix(4, 1.0), b = constant_matrix(4, 4.0);
    PrecisionWeights w{Vector::Ones(2)};
    EXPECT_DOUBLE_EQ(fuse_distances({a, b}, w, FusionMode::arithmetic).d_bar.d(0, 1), 2.5);
    EXPECT_DOUBLE_EQ(fuse_distances({a, b}, w, FusionMode::geometric).d_bar.d(0, 1), 2.0);
}

TEST(FuseDistances, UnequalWeights) {
    auto a = constant_matrix(4, 2.0), b = constant_matrix(4, 4.0);
    PrecisionWeights w{Vector(2)};
    w.sigma2 << 1.0, 4.0;
    EXPECT_NEAR(fuse_distances({a, b}, w, FusionMode::arithmetic).d_bar.d(1, 3), (2.0 * 1 + 4.0 * 0.25) / 1.25, 1e-15);
}

TEST(FuseDistances, GeometricIsArithmeticOfLogs) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        std::vector<DistanceMatrix> ds{random_distances(6, seed), random_distances(6, seed + 100), random_distances(6, seed + 200)};
        PrecisionWeights w{Vector(3)};
        w.sigma2 << 0.5, 1.5, 3.0;
        auto geo = fuse_distances(ds, w, FusionMode::geometric);
        std::vector<DistanceMatrix> logs = ds;
        for (auto& m : logs)
            for (Index j = 0; j < 6; ++j)
                for (Index k = 0; k < 6; ++k)
                    if (j != k) m.d(j, k) = std::log(m.d(j, k));
        auto arith_of_logs = fuse_distances(logs, w, FusionMode::arithmetic);
        for (Index j = 0; j < 6; ++j)
            for (Index k = j + 1; k < 6; ++k)
                EXPECT_NEAR(std::log(geo.d_bar.d(j, k)), arith_of_logs.d_bar.d(j, k), 1e-12);
    }
}

TEST(FuseDistances, IdenticalInputsReturnedExactly) {
    auto d = random_distances(7, 3);
    PrecisionWeights w{Vector(3)};
    w.sigma2 << 0.3, 1.7, 2.9;
    for (auto mode : {FusionMode::arithmetic, FusionMode::geometric})
        EXPECT_EQ(fuse_distances({d, d, d}, w, mode).d_bar.d, d.d);
}

TEST(FuseDistances, Errors) {
    auto a = random_distances(4, 1);
    auto b = random_distances(4, 2);
    b.labels[0] = "other";
    PrecisionWeights w{Vector::Ones(2)};
    EXPECT_REFINED_ERROR(fuse_distances({a, b}, w, FusionMode::arithmetic), "LabelMismatch");
    auto z = random_distances(4, 3);
    z.d(0, 1) = z.d(1, 0) = 0.0;
    EXPECT_REFINED_ERROR(fuse_distances({a, z}, w, FusionMode::geometric), "ZeroDistance");
    PrecisionWeights bad{Vector(2)};
    bad.sigma2 << 1.0, -1.0;
    EXPECT_REFINED_ERROR(fuse_distances({a, a}, bad, FusionMode::arithmetic), "BadWeights");
}

TEST(FuseDistances, MinMaxBoundsProperty) {
    Rng rng(99);
    for (int rep = 0; rep < 100; ++rep) {
        const Index A = 2 + static_cast<Index>(rng.index(3));
        const Index p = 4 + static_cast<Index>(rng.index(9));
        std::vector<DistanceMatrix> ds;
        for (Index a = 0; a < A; ++a) ds.push_back(random_distances(p, rng.engine()()));
        PrecisionWeights w{Vector(A)};
        for (Index a = 0; a < A; ++a) w.sigma2(a) = rng.uniform(0.01, 10.0);
        for (auto mode : {FusionMode::arithmetic, FusionMode::geometric}) {
            auto f = fuse_distances(ds, w, mode);
            for (Index j = 0; j < p; ++j)
                for (Index k = 0; k < p; ++k) {
                    double lo = ds[0].d(j, k), hi = lo;
                    for (const auto& m : ds) lo = std::min(lo, m.d(j, k)), hi = std::max(hi, m.d(j, k));
                    ASSERT_GE(f.d_bar.d(j, k), lo);
                    ASSERT_LE(f.d_bar.d(j, k), hi);
                }
        }
    }
}

TEST(EstimatePrecisions, IdenticalMatricesClampAndWarn) {
    auto d = random_distances(5, 8);
    ScopedWarningCapture cap;
    auto est = estimate_precisions({d, d}, FusionMode::arithmetic);
    EXPECT_EQ(est.fused.d_bar.d, d.d);
    EXPECT_EQ(est.weights.sigma2(0), kVarianceFloor);
    EXPECT_EQ(est.weights.sigma2(1), kVarianceFloor);
    EXPECT_TRUE(cap.contains("clamped"));
}

TEST(EstimatePrecisions, SymmetricFixedPoint) {
    auto a = constant_matrix(5, 2.0), b = constant_matrix(5, 4.0);
    auto ar = estimate_precisions({a, b}, FusionMode::arithmetic);
    EXPECT_NEAR(ar.fused.d_bar.d(0, 1), 3.0, 1e-12);
    EXPECT_NEAR(ar.weights.sigma2(0), ar.weights.sigma2(1), 1e-12);
    auto geo = estimate_precisions({a, b}, FusionMode::geometric);
    EXPECT_NEAR(geo.fused.d_bar.d(2, 4), std::sqrt(8.0), 1e-12);
}

TEST(EstimatePrecisions, FusedMatchesClosedFormUnderFinalWeights) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::vector<DistanceMatrix> ds{random_distances(5, seed), random_distances(5, seed + 10), random_distances(5, seed + 20)};
        for (auto mode : {FusionMode::arithmetic, FusionMode::geometric}) {
            auto est = estimate_precisions(ds, mode);
            std::vector<double> s2(est.weights.sigma2.data(), est.weights.sigma2.data() + 3);
            Matrix oracle = weighted_mean_oracle(ds, s2, mode == FusionMode::geometric);
            EXPECT_LT((est.fused.d_bar.d - oracle).cwiseAbs().maxCoeff(), 1e-10);
        }
    }
}

TEST(EstimatePrecisions, VariancesAreMeanSquaredResiduals) {
    std::vector<DistanceMatrix> ds{random_distances(6, 1), random_distances(6, 2)};
    auto est = estimate_precisions(ds, FusionMode::arithmetic, 1000, 1e-14);
    ASSERT_TRUE(est.converged);
    for (std::size_t a = 0; a < 2; ++a) {
        double s = 0.0;
        int m = 0;
        for (Index j = 0; j < 6; ++j)
            for (Index k = j + 1; k < 6; ++k, ++m) s += std::pow(ds[a].d(j, k) - est.fused.d_bar.d(j, k), 2);
        EXPECT_NEAR(est.weights.sigma2(static_cast<Index>(a)), s / m, 1e-10);
    }
}

TEST(EstimatePrecisions, ObjectiveNonIncreasing) {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        std::vector<DistanceMatrix> ds;
        for (int a = 0; a < 3; ++a) ds.push_back(random_distances(7, seed * 10 + static_cast<std::uint64_t>(a)));
        auto est = estimate_precisions(ds, FusionMode::arithmetic);
        for (std::size_t i = 1; i < est.objective.size(); ++i)
            ASSERT_LE(est.objective[i], est.objective[i - 1] + 1e-9 * std::abs(est.objective[i - 1])) << "seed " << seed;
    }
}

TEST(EstimatePrecisions, ScaleEquivariance) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        std::vector<DistanceMatrix> ds{random_distances(6, seed), random_distances(6, seed + 50), random_distances(6, seed + 90)};
        const double c = 3.7;
        auto scaled = ds;
        for (auto& m : scaled) m.d *= c;
        for (auto mode : {FusionMode::arithmetic, FusionMode::geometric}) {
            auto base = estimate_precisions(ds, mode);
            auto big = estimate_precisions(scaled, mode);
            EXPECT_LT((big.fused.d_bar.d - c * base.fused.d_bar.d).cwiseAbs().maxCoeff(), 1e-8);
        }
    }
}

TEST(EstimatePrecisions, Errors) {
    auto d = random_distances(4, 1);
    EXPECT_REFINED_ERROR(estimate_precisions({d}, FusionMode::arithmetic), "TooFewMetrics");
    auto z = d;
    z.d(0, 2) = z.d(2, 0) = 0.0;
    EXPECT_REFINED_ERROR(estimate_precisions({d, z}, FusionMode::geometric), "ZeroDistance");
}

TEST(RescaleUnitMean, MeanOffDiagonalIsOne) {
    auto d = random_distances(6, 4, 1.0, 9.0);
    auto r = rescale_unit_mean(d);
    double s = 0.0;
    for (double v : r.upper_triangle()) s += v;
    EXPECT_NEAR(s / static_cast<double>(r.pairs()), 1.0, 1e-14);
}

TEST(DistanceSerialization, CsvAndBinaryRoundTripExactly) {
    auto d = random_distances(6, 12);
    d.d(1, 2) = d.d(2, 1) = 1.0 / 3.0;
    auto dir = scratch_dir("distance_io");
    save_distance_csv(d, (dir / "d.csv").string());
    save_distance_binary(d, (dir / "d.bin").string());
    auto c = load_distance_csv((dir / "d.csv").string());
    auto b = load_distance_binary((dir / "d.bin").string());
    EXPECT_EQ(c.d, d.d);
    EXPECT_EQ(c.labels, d.labels);
    EXPECT_EQ(b.d, d.d);
    EXPECT_EQ(b.labels, d.labels);
}

TEST(DistanceValidate, RejectsBrokenMatrices) {
    auto d = random_distances(4, 1);
    auto asym = d;
    asym.d(0, 1) += 0.1;
    EXPECT_REFINED_ERROR(validate(asym), "Asymmetric");
    auto diag = d;
    diag.d(2, 2) = 1.0;
    EXPECT_REFINED_ERROR(validate(diag), "NonZeroDiagonal");
    auto neg = d;
    neg.d(0, 3) = neg.d(3, 0) = -1.0;
    EXPECT_REFINED_ERROR(validate(neg), "BadDistance");
}
