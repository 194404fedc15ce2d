#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace refined;
using namespace refined::testing;

namespace {

RefinedImageSet sample_set(Index n, int p, std::uint64_t seed) {
    auto t = random_table(n, p, seed);
    auto a = rasterize(embedding_of(random_points(p, 2, seed + 1)));
    return render_images(a, t, 0.0);
}

void expect_same_assignment(const PixelAssignment& x, const PixelAssignment& y) {
    EXPECT_EQ(x.grid_size, y.grid_size);
    EXPECT_EQ(x.labels, y.labels);
    EXPECT_EQ(x.cells, y.cells);
}

}  // namespace

TEST(ImageIo, CsvRoundTripIsExact) {
    const auto dir = scratch_dir("imgcsv").string();
    auto set = sample_set(6, 11, 3);
    auto written = save_images(set, dir, ImageFormat::csv);
    EXPECT_EQ(written.size(), 6u + 2u);
    auto back = load_images(dir);
    ASSERT_EQ(back.images.size(), set.images.size());
    for (std::size_t i = 0; i < set.images.size(); ++i) EXPECT_EQ(back.images[i], set.images[i]);
    EXPECT_EQ(back.sample_ids, set.sample_ids);
    expect_same_assignment(back.assignment, set.assignment);
}

TEST(ImageIo, PngRoundTripWithinOneLevel) {
    const auto dir = scratch_dir("imgpng").string();
    auto set = sample_set(5, 20, 8);
    save_images(set, dir, ImageFormat::png);
    auto back = load_images(dir);
    ASSERT_EQ(back.images.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i)
        EXPECT_LE((back.images[i] - set.images[i]).cwiseAbs().maxCoeff(), 1.0 / 255.0 + 1e-12);
}

TEST(ImageIo, PngExtremesExact) {
    const auto path = scratch_dir("imgext").string() + "/x.png";
    Matrix m(2, 2);
    m << 0, 1, 1, 0;
    write_png(m, path);
    EXPECT_EQ(read_png(path), m);
}

TEST(ImageIo, AssignmentJsonRoundTrip) {
    auto a = random_assignment(make_labels(7, "gene_"), 3, 12);
    const auto path = scratch_dir("asg").string() + "/assignment.json";
    save_assignment(a, path);
    expect_same_assignment(load_assignment(path), a);
    auto j = assignment_to_json(a);
    EXPECT_EQ(j["grid_size"], 3);
    EXPECT_EQ(j["cells"]["gene_2"][0], a.cells[2].row);
}

TEST(ImageIo, MalformedAssignmentRejected) {
    const auto dir = scratch_dir("badasg").string();
    auto write = [&](const std::string& text) {
        std::ofstream(dir + "/a.json") << text;
        return dir + "/a.json";
    };
    EXPECT_REFINED_ERROR(load_assignment(write("{not json")), "MalformedAssignment");
    EXPECT_REFINED_ERROR(load_assignment(write(R"({"cells":{}})")), "MalformedAssignment");
    EXPECT_REFINED_ERROR(load_assignment(write(R"({"grid_size":2,"cells":{"a":[0]}})")), "MalformedAssignment");
    EXPECT_REFINED_ERROR(load_assignment(write(R"({"grid_size":2,"cells":{"a":[0,0],"b":[0,0]}})")), "BadAssignment");
    EXPECT_REFINED_ERROR(load_assignment(write(R"({"grid_size":2,"cells":{"a":[0,5]}})")), "BadAssignment");
    EXPECT_REFINED_ERROR(load_assignment(dir + "/missing.json"), "Unreadable");
}

TEST(ImageIo, LoadImagesDetectsDamage) {
    const auto dir = scratch_dir("imgdamage").string();
    save_images(sample_set(2, 4, 1), dir, ImageFormat::csv);
    std::ofstream(dir + "/images/00001.csv") << "0.1,0.2\n";
    EXPECT_REFINED_ERROR(load_images(dir), "Truncated");
    std::filesystem::remove(dir + "/imageset.json");
    EXPECT_REFINED_ERROR(load_images(dir), "Unreadable");
}

TEST(ImageIo, FormatNames) {
    EXPECT_EQ(parse_image_format("png"), ImageFormat::png);
    EXPECT_EQ(parse_image_format("csv"), ImageFormat::csv);
    EXPECT_REFINED_ERROR(parse_image_format("tiff"), "BadImageFormat");
    EXPECT_EQ(image_file_name(7, ImageFormat::png), "00007.png");
}
