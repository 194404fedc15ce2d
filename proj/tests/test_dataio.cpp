#include "support.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <set>
#include <sstream>

using namespace refined;
using namespace refined::testing;

namespace {

FeatureTable parse(const std::string& text, const std::string& response = "y", char delim = ',') {
    std::istringstream in(text);
    return parse_feature_table(in, response, delim);
}

FeatureTable column_table(const std::vector<double>& col) {
    FeatureTable t;
    t.feature_names = {"a"};
    t.values.resize(static_cast<Index>(col.size()), 1);
    t.response = Vector::Zero(static_cast<Index>(col.size()));
    for (std::size_t i = 0; i < col.size(); ++i) {
        t.values(static_cast<Index>(i), 0) = col[i];
        t.sample_ids.push_back("s" + std::to_string(i));
    }
    return t;
}

}  // namespace

TEST(LoadFeatureTable, ParsesFourRowsFiveFeatures) {
    auto t = parse(
        "id,f1,f2,f3,f4,f5,y\n"
        "a,1,2,3,4,5,0.5\n"
        "b,6,7,8,9,10,1.5\n"
        "c,1,1,1,1,1,2.5\n"
        "d,0.5,0.25,3,2,1,3.5\n");
    EXPECT_EQ(t.n(), 4);
    EXPECT_EQ(t.p(), 5);
    EXPECT_EQ(t.sample_ids, (std::vector<std::string>{"a", "b", "c", "d"}));
    EXPECT_EQ(t.feature_names, (std::vector<std::string>{"f1", "f2", "f3", "f4", "f5"}));
    EXPECT_DOUBLE_EQ(t.values(1, 2), 8.0);
    EXPECT_DOUBLE_EQ(t.response(3), 3.5);
}

TEST(LoadFeatureTable, ResponseColumnMayAppearAnywhere) {
    auto t = parse("id,y,f1,f2\na,9,1,2\n");
    EXPECT_EQ(t.feature_names, (std::vector<std::string>{"f1", "f2"}));
    EXPECT_DOUBLE_EQ(t.response(0), 9.0);
    EXPECT_DOUBLE_EQ(t.values(0, 1), 2.0);
}

TEST(LoadFeatureTable, MissingCodesBecomeNaN) {
    auto t = parse("id,f1,f2,f3,y\na,NA,2,,1\nb,NaN,5,6,2\n");
    EXPECT_TRUE(std::isnan(t.values(0, 0)));
    EXPECT_TRUE(std::isnan(t.values(0, 2)));
    EXPECT_TRUE(std::isnan(t.values(1, 0)));
    EXPECT_DOUBLE_EQ(t.values(1, 2), 6.0);
}

TEST(LoadFeatureTable, TabDelimiter) {
    auto t = parse("id\tf1\tf2\ty\na\t1\t2\t3\n", "y", '\t');
    EXPECT_EQ(t.p(), 2);
    EXPECT_DOUBLE_EQ(t.response(0), 3.0);
}

TEST(LoadFeatureTable, Errors) {
    EXPECT_REFINED_ERROR(parse("id,f1,f1,y\na,1,2,3\n"), "DuplicateFeature");
    EXPECT_REFINED_ERROR(parse("id,f1,f2\na,1,2\n"), "MissingResponseColumn");
    EXPECT_REFINED_ERROR(parse("id,f1,f2,y\na,1,abc,3\n"), "NonNumericCell");
    EXPECT_REFINED_ERROR(parse("id,f1,f2,y\na,1,2\n"), "RaggedRow");
    EXPECT_REFINED_ERROR(parse(""), "EmptyFile");
    EXPECT_REFINED_ERROR(load_feature_table("/nonexistent/table.csv", "y"), "Unreadable");
}

TEST(LoadFeatureTable, SaveLoadRoundTrip) {
    auto t = random_table(6, 5, 3);
    auto dir = scratch_dir("dataio_roundtrip");
    save_feature_table(t, (dir / "t.csv").string());
    auto back = load_feature_table((dir / "t.csv").string(), "y");
    EXPECT_EQ(back.sample_ids, t.sample_ids);
    EXPECT_EQ(back.feature_names, t.feature_names);
    EXPECT_EQ(back.values, t.values);
    EXPECT_EQ(back.response, t.response);
}

TEST(CleanSamples, DropsSampleOverThreshold) {
    // 10 features; sample "bad" has 2 missing (20% > 10%).
    std::string text = "id,f0,f1,f2,f3,f4,f5,f6,f7,f8,f9,y\n";
    text += "good,1,2,3,4,5,6,7,8,9,10,1\n";
    text += "bad,NA,NA,3,4,5,6,7,8,9,10,2\n";
    text += "ok,2,3,4,5,6,7,8,9,10,11,3\n";
    auto c = clean_samples(parse(text), 0.10);
    EXPECT_EQ(c.sample_ids, (std::vector<std::string>{"good", "ok"}));
}

TEST(CleanSamples, ExactlyAtThresholdIsRetained) {
    std::string text = "id,f0,f1,f2,f3,f4,f5,f6,f7,f8,f9,y\n";
    text += "edge,NA,2,3,4,5,6,7,8,9,10,1\n";
    text += "zero,0,2,3,4,5,6,7,8,9,10,1\n";
    text += "full,3,2,3,4,5,6,7,8,9,10,1\n";
    auto c = clean_samples(parse(text), 0.10);
    EXPECT_EQ(c.n(), 3);
    // Missing cell imputed with the median of the retained samples (0, 3).
    EXPECT_DOUBLE_EQ(c.values(0, 0), 1.5);
}

TEST(CleanSamples, ZerosCountTowardThreshold) {
    std::string text = "id,f0,f1,f2,f3,f4,f5,f6,f7,f8,f9,y\n";
    text += "zeros,0,0,3,4,5,6,7,8,9,10,1\n";
    text += "full,3,2,3,4,5,6,7,8,9,10,1\n";
    auto c = clean_samples(parse(text), 0.10);
    EXPECT_EQ(c.sample_ids, (std::vector<std::string>{"full"}));
}

TEST(CleanSamples, CleanTableUnchanged) {
    auto t = random_table(8, 6, 11);
    auto c = clean_samples(t);
    EXPECT_EQ(c.values, t.values);
    EXPECT_EQ(c.sample_ids, t.sample_ids);
    EXPECT_EQ(c.response, t.response);
}

TEST(CleanSamples, EmptyTableError) {
    auto t = parse("id,f1,f2,y\na,NA,NA,1\nb,0,0,2\n");
    EXPECT_REFINED_ERROR(clean_samples(t, 0.10), "EmptyTable");
}

TEST(CleanSamples, IdempotentOnRandomTablesWithGaps) {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        auto t = random_table(12, 10, seed);
        Rng rng(seed * 7);
        for (int k = 0; k < 15; ++k) {
            const auto i = static_cast<Index>(rng.index(12)), j = static_cast<Index>(rng.index(10));
            t.values(i, j) = rng.uniform() < 0.5 ? std::numeric_limits<double>::quiet_NaN() : 0.0;
        }
        FeatureTable once;
        try {
            once = clean_samples(t, 0.1);
        } catch (const Error&) {
            continue;
        }
        auto twice = clean_samples(once, 0.1);
        EXPECT_EQ(once.sample_ids, twice.sample_ids) << "seed " << seed;
        EXPECT_EQ(once.values, twice.values) << "seed " << seed;
        EXPECT_TRUE(once.values.allFinite());
    }
}

TEST(NormalizeFeatures, MinMaxLinearMap) {
    auto [out, params] = normalize_features(column_table({0, 5, 10}), NormalizationMode::minmax01);
    EXPECT_DOUBLE_EQ(out.values(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(out.values(1, 0), 0.5);
    EXPECT_DOUBLE_EQ(out.values(2, 0), 1.0);
}

TEST(NormalizeFeatures, ConstantColumnMapsToHalfWithWarning) {
    ScopedWarningCapture cap;
    auto [out, params] = normalize_features(column_table({7, 7, 7}), NormalizationMode::minmax01);
    for (Index i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out.values(i, 0), 0.5);
    EXPECT_FALSE(cap.messages().empty());
    EXPECT_TRUE(params.constant[0]);
}

TEST(NormalizeFeatures, ZScoreUsesSampleSd) {
    auto [out, params] = normalize_features(column_table({1, 2, 3}), NormalizationMode::zscore);
    // Hand oracle: mean 2, sample sd sqrt(((1)^2 + 0 + (1)^2) / 2) = 1.
    const double sd = std::sqrt((1.0 + 0.0 + 1.0) / 2.0);
    EXPECT_NEAR(out.values(0, 0), -1.0 / sd, 1e-15);
    EXPECT_NEAR(out.values(1, 0), 0.0, 1e-15);
    EXPECT_NEAR(out.values(2, 0), 1.0 / sd, 1e-15);
}

TEST(NormalizeFeatures, ParamsFittedOnTrainRowsOnly) {
    auto t = column_table({0, 10, 100});
    auto np = fit_normalization(t, NormalizationMode::minmax01, {0, 1});
    auto out = apply_normalization(t, np);
    EXPECT_DOUBLE_EQ(out.values(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(out.values(2, 0), 10.0);
    EXPECT_DOUBLE_EQ(clip_to_unit(out).values(2, 0), 1.0);
}

TEST(NormalizeFeatures, RoundTripProperty) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto t = random_table(9, 7, seed);
        t.values = t.values * 50.0 - Matrix::Constant(9, 7, 20.0);
        for (auto mode : {NormalizationMode::minmax01, NormalizationMode::zscore}) {
            auto [out, np] = normalize_features(t, mode);
            auto back = denormalize(out, np);
            for (Index i = 0; i < t.n(); ++i)
                for (Index j = 0; j < t.p(); ++j)
                    EXPECT_LE(std::abs(back.values(i, j) - t.values(i, j)), 1e-9 * std::max(1.0, std::abs(t.values(i, j))));
        }
    }
}

TEST(NormalizeFeatures, ParamsJsonRoundTrip) {
    auto t = random_table(5, 4, 2);
    auto np = fit_normalization(t, NormalizationMode::zscore);
    nlohmann::json j = np;
    auto back = j.get<NormalizationParams>();
    EXPECT_EQ(back.offset, np.offset);
    EXPECT_EQ(back.scale, np.scale);
    EXPECT_EQ(back.mode, np.mode);
}

TEST(SplitSamples, TenSamplesEightyTenTen) {
    auto s = split_samples(10, {0.8, 0.1, 0.1}, 1);
    EXPECT_EQ(s.train.size(), 8u);
    EXPECT_EQ(s.validation.size(), 1u);
    EXPECT_EQ(s.test.size(), 1u);
    EXPECT_EQ(s.seed, 1u);
}

TEST(SplitSamples, Deterministic) {
    auto a = split_samples(50, {0.8, 0.1, 0.1}, 42);
    auto b = split_samples(50, {0.8, 0.1, 0.1}, 42);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.validation, b.validation);
    EXPECT_EQ(a.test, b.test);
    auto c = split_samples(50, {0.8, 0.1, 0.1}, 43);
    EXPECT_NE(a.train, c.train);
}

TEST(SplitSamples, SmallestValidCase) {
    auto s = split_samples(3, {0.8, 0.1, 0.1}, 5);
    EXPECT_EQ(s.train.size(), 1u);
    EXPECT_EQ(s.validation.size(), 1u);
    EXPECT_EQ(s.test.size(), 1u);
}

TEST(SplitSamples, Errors) {
    EXPECT_REFINED_ERROR(split_samples(2, {0.8, 0.1, 0.1}, 1), "EmptyPartition");
    EXPECT_REFINED_ERROR(split_samples(10, {0.5, 0.1, 0.1}, 1), "BadRatios");
}

TEST(SplitSamples, PartitionPropertyAllN) {
    const std::array<double, 3> ratios{0.8, 0.1, 0.1};
    for (std::size_t n = 3; n <= 1000; ++n) {
        auto s = split_samples(n, ratios, n * 31 + 7);
        std::vector<Index> all;
        for (const auto* part : {&s.train, &s.validation, &s.test}) {
            ASSERT_FALSE(part->empty()) << "n=" << n;
            all.insert(all.end(), part->begin(), part->end());
        }
        std::sort(all.begin(), all.end());
        std::vector<Index> expected(n);
        std::iota(expected.begin(), expected.end(), Index{0});
        ASSERT_EQ(all, expected) << "n=" << n;
        // Non-empty partitions take precedence when an ideal share is below one sample.
        if (static_cast<double>(n) * 0.1 < 1.0) continue;
        const std::size_t sizes[3] = {s.train.size(), s.validation.size(), s.test.size()};
        for (int k = 0; k < 3; ++k)
            ASSERT_LE(std::abs(static_cast<double>(sizes[k]) - ratios[static_cast<std::size_t>(k)] * static_cast<double>(n)), 1.0 + 1e-9)
                << "n=" << n << " part " << k;
    }
}

TEST(SplitSamples, JsonShape) {
    nlohmann::json j = split_samples(10, {0.8, 0.1, 0.1}, 1);
    EXPECT_EQ(j.at("seed"), 1);
    EXPECT_EQ(j.at("train").size(), 8u);
    auto back = j.get<SplitIndex>();
    EXPECT_EQ(back.test, j.at("test").get<std::vector<Index>>());
}

TEST(RequireEmbeddable, RejectsTooSmall) {
    EXPECT_REFINED_ERROR(require_embeddable(random_table(2, 5, 1)), "TooFewSamples");
    EXPECT_REFINED_ERROR(require_embeddable(random_table(5, 3, 1)), "TooFewFeatures");
    EXPECT_NO_THROW(require_embeddable(random_table(3, 4, 1)));
}
