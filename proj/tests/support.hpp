#pragma once

// Synthetic data shared by the unit and acceptance tests.

#include "refined/all.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

// Asserts that `stmt` throws refined::Error with the given code.
#define EXPECT_REFINED_ERROR(stmt, expected_code)                                  \
    do {                                                                         \
        try {                                                                    \
            stmt;                                                                \
            ADD_FAILURE() << "expected error " << (expected_code);               \
        } catch (const ::refined::Error& e) {                                    \
            EXPECT_EQ(e.code(), (expected_code)) << e.what();                    \
        }                                                                        \
    } while (0)

namespace refined::testing {

inline std::vector<std::string> make_labels(Index p, const std::string& prefix = "f") {
    std::vector<std::string> out;
    for (Index j = 0; j < p; ++j) out.push_back(prefix + std::to_string(j));
    return out;
}

inline Matrix random_points(Index p, Index dim, std::uint64_t seed) {
    Rng rng(seed);
    Matrix x(p, dim);
    for (Index i = 0; i < p; ++i)
        for (Index c = 0; c < dim; ++c) x(i, c) = rng.uniform();
    return x;
}

/// Distances of random points in the plane (Euclidean-realizable in 2D).
inline DistanceMatrix realizable(Index p, std::uint64_t seed, Matrix* points = nullptr) {
    Matrix x = random_points(p, 2, seed);
    if (points) *points = x;
    return DistanceMatrix{make_labels(p), pairwise_euclidean_rows(x)};
}

/// Symmetric matrix with off-diagonal entries uniform on [lo, hi).
inline DistanceMatrix random_distances(Index p, std::uint64_t seed, double lo = 0.1, double hi = 2.0) {
    Rng rng(seed);
    Matrix d = Matrix::Zero(p, p);
    for (Index j = 0; j < p; ++j)
        for (Index k = j + 1; k < p; ++k) d(j, k) = d(k, j) = rng.uniform(lo, hi);
    return DistanceMatrix{make_labels(p), d};
}

inline FeatureTable random_table(Index n, Index p, std::uint64_t seed) {
    Rng rng(seed);
    FeatureTable t;
    t.feature_names = make_labels(p);
    for (Index i = 0; i < n; ++i) t.sample_ids.push_back("s" + std::to_string(i));
    t.values.resize(n, p);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < p; ++j) t.values(i, j) = rng.uniform();
    t.response.resize(n);
    for (Index i = 0; i < n; ++i) t.response(i) = rng.normal();
    return t;
}

inline Embedding embedding_of(const Matrix& coords, const std::string& tag = "test") {
    return Embedding{make_labels(coords.rows()), coords, tag};
}

/// Features in `groups` blocks; each block shares a latent factor per sample
/// plus independent noise. The response is a sum over the first
/// `signal_groups` latent factors plus noise. Values lie roughly in [0,1].
struct GroupedData {
    FeatureTable table;
    std::vector<int> group_of;  // per feature
};

inline GroupedData grouped_table(Index n, Index groups, Index per_group, Index signal_groups, double feature_noise,
                                 double response_noise, std::uint64_t seed) {
    Rng rng(seed);
    const Index p = groups * per_group;
    GroupedData g;
    auto& t = g.table;
    t.feature_names = make_labels(p);
    for (Index i = 0; i < n; ++i) t.sample_ids.push_back("s" + std::to_string(i));
    t.values.resize(n, p);
    t.response.resize(n);
    // Shuffle feature order so the layout has to discover the groups.
    std::vector<int> order(static_cast<std::size_t>(p));
    for (Index j = 0; j < p; ++j) order[static_cast<std::size_t>(j)] = static_cast<int>(j / per_group);
    rng.shuffle(order);
    g.group_of = order;
    for (Index i = 0; i < n; ++i) {
        std::vector<double> z(static_cast<std::size_t>(groups));
        for (auto& v : z) v = rng.normal();
        double y = 0.0;
        for (Index s = 0; s < signal_groups; ++s) y += z[static_cast<std::size_t>(s)];
        t.response(i) = y + response_noise * rng.normal();
        for (Index j = 0; j < p; ++j)
            t.values(i, j) = 0.5 + 0.15 * (z[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] + feature_noise * rng.normal());
    }
    return g;
}

inline double r_squared(const Vector& y, const Vector& pred) {
    const double ss_res = (y - pred).squaredNorm();
    const double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
    return 1.0 - ss_res / ss_tot;
}

/// Fresh scratch directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("refined_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace refined::testing
