#pragma once

// On-disk layout of a rendered image set:
//
//   <dir>/assignment.json   {"grid_size": g, "cells": {"<label>": [row, col], ...}}
//   <dir>/imageset.json     {"format", "fill", "grid_size", "samples": [{"id", "file"}]}
//   <dir>/images/NNNNN.png  8-bit grayscale, value round(255 v)      (png)
//   <dir>/images/NNNNN.csv  g rows of g full-precision values        (csv)
//
// Requires libpng.

#include "refined/common.hpp"
#include "refined/refined.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace refined {

enum class ImageFormat { png, csv };

inline std::string to_string(ImageFormat f) { return f == ImageFormat::png ? "png" : "csv"; }

inline ImageFormat parse_image_format(const std::string& s) {
    if (s == "png") return ImageFormat::png;
    if (s == "csv") return ImageFormat::csv;
    throw config_error("BadImageFormat", "unknown image format '" + s + "'");
}

// ---------------------------------------------------------------------------
// Assignment JSON

inline nlohmann::ordered_json assignment_to_json(const PixelAssignment& a) {
    nlohmann::ordered_json cells = nlohmann::ordered_json::object();
    for (Index j = 0; j < a.p(); ++j)
        cells[a.labels[static_cast<std::size_t>(j)]] = {a.cells[static_cast<std::size_t>(j)].row,
                                                        a.cells[static_cast<std::size_t>(j)].col};
    nlohmann::ordered_json j;
    j["grid_size"] = a.grid_size;
    j["cells"] = std::move(cells);
    return j;
}

inline PixelAssignment assignment_from_json(const nlohmann::ordered_json& j) {
    PixelAssignment a;
    try {
        a.grid_size = j.at("grid_size").get<int>();
        for (const auto& [label, rc] : j.at("cells").items()) {
            if (!rc.is_array() || rc.size() != 2) throw data_error("MalformedAssignment", "cell for '" + label + "' is not [row, col]");
            a.labels.push_back(label);
            a.cells.push_back({rc[0].get<int>(), rc[1].get<int>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw data_error("MalformedAssignment", e.what());
    }
    validate(a);
    return a;
}

inline void save_assignment(const PixelAssignment& a, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("Unwritable", "cannot write " + path);
    out << assignment_to_json(a).dump(2) << '\n';
}

inline PixelAssignment load_assignment(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("Unreadable", "cannot open " + path);
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("MalformedAssignment", e.what());
    }
    return assignment_from_json(j);
}

// ---------------------------------------------------------------------------
// PNG

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

inline void write_png(const Matrix& image, const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw data_error("Unwritable", "cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw data_error("PngError", "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw data_error("PngError", "libpng failed writing " + path);
    }
    const auto h = static_cast<png_uint_32>(image.rows()), w = static_cast<png_uint_32>(image.cols());
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(w);
    for (png_uint_32 r = 0; r < h; ++r) {
        for (png_uint_32 c = 0; c < w; ++c) row[c] = detail::quantize(image(r, c));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Reads an 8-bit grayscale PNG into values v = byte / 255.
inline Matrix read_png(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw data_error("Unreadable", "cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw data_error("PngError", "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw data_error("PngError", "libpng failed reading " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw data_error("PngError", path + " is not 8-bit grayscale");
    }
    const auto w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    Matrix img(h, w);
    std::vector<png_byte> row(w);
    for (png_uint_32 r = 0; r < h; ++r) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 c = 0; c < w; ++c) img(r, c) = row[c] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

// ---------------------------------------------------------------------------
// CSV images

inline void write_image_csv(const Matrix& image, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("Unwritable", "cannot write " + path);
    for (Index r = 0; r < image.rows(); ++r) {
        for (Index c = 0; c < image.cols(); ++c) out << (c ? "," : "") << detail::format_real(image(r, c));
        out << '\n';
    }
}

inline Matrix read_image_csv(const std::string& path, int g) {
    std::ifstream in(path);
    if (!in) throw data_error("Unreadable", "cannot open " + path);
    Matrix img(g, g);
    std::string line;
    for (int r = 0; r < g; ++r) {
        if (!std::getline(in, line)) throw data_error("Truncated", path + ": too few rows");
        auto cells = detail::split_line(line, ',');
        if (static_cast<int>(cells.size()) != g) throw data_error("RaggedRow", path + ": wrong row width");
        for (int c = 0; c < g; ++c)
            if (!detail::parse_real(cells[static_cast<std::size_t>(c)], img(r, c)))
                throw data_error("NonNumericCell", path + ": '" + cells[static_cast<std::size_t>(c)] + "'");
    }
    return img;
}

// ---------------------------------------------------------------------------
// Image sets

inline std::string image_file_name(std::size_t index, ImageFormat f) {
    std::ostringstream os;
    os << std::setw(5) << std::setfill('0') << index << '.' << to_string(f);
    return os.str();
}

/// Writes images plus assignment.json and imageset.json; returns the written
/// paths relative to `dir`.
inline std::vector<std::string> save_images(const RefinedImageSet& set, const std::string& dir, ImageFormat fmt) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    if (ec) throw data_error("Unwritable", "cannot create " + dir + ": " + ec.message());
    std::vector<std::string> written;
    save_assignment(set.assignment, (fs::path(dir) / "assignment.json").string());
    written.push_back("assignment.json");

    nlohmann::ordered_json meta;
    meta["format"] = to_string(fmt);
    meta["fill"] = set.fill;
    meta["grid_size"] = set.grid_size();
    meta["samples"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < set.images.size(); ++i) {
        const std::string rel = "images/" + image_file_name(i, fmt);
        const std::string full = (fs::path(dir) / rel).string();
        if (fmt == ImageFormat::png) write_png(set.images[i], full);
        else write_image_csv(set.images[i], full);
        meta["samples"].push_back({{"id", i < set.sample_ids.size() ? set.sample_ids[i] : std::to_string(i)}, {"file", rel}});
        written.push_back(rel);
    }
    std::ofstream out(fs::path(dir) / "imageset.json");
    if (!out) throw data_error("Unwritable", "cannot write imageset.json in " + dir);
    out << meta.dump(2) << '\n';
    written.push_back("imageset.json");
    return written;
}

inline RefinedImageSet load_images(const std::string& dir) {
    namespace fs = std::filesystem;
    RefinedImageSet set;
    set.assignment = load_assignment((fs::path(dir) / "assignment.json").string());
    std::ifstream in(fs::path(dir) / "imageset.json");
    if (!in) throw data_error("Unreadable", "missing imageset.json in " + dir);
    nlohmann::ordered_json meta;
    try {
        in >> meta;
        const auto fmt = parse_image_format(meta.at("format").get<std::string>());
        set.fill = meta.at("fill").get<double>();
        const int g = meta.at("grid_size").get<int>();
        if (g != set.assignment.grid_size) throw data_error("GridMismatch", "imageset and assignment disagree on grid size");
        for (const auto& s : meta.at("samples")) {
            set.sample_ids.push_back(s.at("id").get<std::string>());
            const auto full = (fs::path(dir) / s.at("file").get<std::string>()).string();
            Matrix img = fmt == ImageFormat::png ? read_png(full) : read_image_csv(full, g);
            if (img.rows() != g || img.cols() != g) throw data_error("GridMismatch", full + " has the wrong size");
            set.images.push_back(std::move(img));
        }
    } catch (const nlohmann::json::exception& e) {
        throw data_error("MalformedImageSet", e.what());
    }
    return set;
}

}  // namespace refined
