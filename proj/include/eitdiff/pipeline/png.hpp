#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "eitdiff/core/error.hpp"
#include "eitdiff/phantom/raster.hpp"

namespace eitdiff::png {

struct Gray8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels; // row-major

    Gray8() = default;
    Gray8(int w, int h, std::uint8_t fill = 0) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}
    std::uint8_t& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void chunk(std::vector<std::uint8_t>& out, const char type[4], const std::vector<std::uint8_t>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = ::crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

} // namespace detail

// 8-bit grayscale, no interlace, filter type 0 on every row.
inline std::vector<std::uint8_t> encode(const Gray8& img) {
    require(img.width > 0 && img.height > 0, "png: empty image");
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(img.width + 1) * img.height);
    for (int r = 0; r < img.height; ++r) {
        raw.push_back(0);
        const auto* row = img.pixels.data() + static_cast<std::size_t>(r) * img.width;
        raw.insert(raw.end(), row, row + img.width);
    }
    uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> z(zlen);
    if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK)
        throw IoError("png: compression failed");
    z.resize(zlen);

    std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<std::uint8_t> ihdr;
    detail::put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    detail::put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0}); // depth 8, grayscale, deflate, filter 0, no interlace
    detail::chunk(out, "IHDR", ihdr);
    detail::chunk(out, "IDAT", z);
    detail::chunk(out, "IEND", {});
    return out;
}

inline void write(const std::filesystem::path& path, const Gray8& img) {
    const auto bytes = encode(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

// Width and height read back from an encoded file's IHDR.
inline std::pair<int, int> read_size(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::uint8_t h[24] = {};
    in.read(reinterpret_cast<char*>(h), 24);
    if (!in || h[0] != 0x89 || h[1] != 'P' || h[12] != 'I' || h[13] != 'H') throw IoError(path.string() + ": not a PNG");
    auto u32 = [&](int o) {
        return static_cast<int>((std::uint32_t{h[o]} << 24) | (std::uint32_t{h[o + 1]} << 16) | (std::uint32_t{h[o + 2]} << 8) | h[o + 3]);
    };
    return {u32(16), u32(20)};
}

struct GridLayout {
    int panel = 32;  // image pixels per side
    int zoom = 4;    // each image pixel becomes zoom x zoom
    int gap = 2;     // separator width between panels and rows
    int cols = 4;
    int rows = 1;

    int tile() const { return panel * zoom; }
    int width() const { return cols * tile() + (cols + 1) * gap; }
    int height() const { return rows * tile() + (rows + 1) * gap; }
};

// One row per record, one column per panel. Each row shares a gray scale
// fitted to its panels; pixels outside the disk are drawn white.
inline Gray8 image_grid(const std::vector<std::vector<const PixelImage*>>& rows, int zoom = 4, int gap = 2) {
    require(!rows.empty() && !rows.front().empty(), "png: empty grid");
    GridLayout L;
    L.panel = rows.front().front()->size;
    L.zoom = zoom;
    L.gap = gap;
    L.cols = static_cast<int>(rows.front().size());
    L.rows = static_cast<int>(rows.size());
    Gray8 out(L.width(), L.height(), 255);
    for (int r = 0; r < L.rows; ++r) {
        const auto& row = rows[static_cast<std::size_t>(r)];
        require(static_cast<int>(row.size()) == L.cols, "png: rows have different panel counts");
        double lo = 0.0, hi = 0.0;
        for (const auto* img : row) {
            require(img->size == L.panel, "png: panels differ in size");
            for (double v : img->values)
                if (std::isfinite(v)) {
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
        }
        const double span = hi > lo ? hi - lo : 1.0;
        for (int c = 0; c < L.cols; ++c) {
            const PixelImage& img = *row[static_cast<std::size_t>(c)];
            const int y0 = L.gap + r * (L.tile() + L.gap), x0 = L.gap + c * (L.tile() + L.gap);
            for (int pr = 0; pr < L.panel; ++pr)
                for (int pc = 0; pc < L.panel; ++pc) {
                    std::uint8_t g = 255;
                    if (img.in_disk(pr, pc)) {
                        const double v = std::isfinite(img.at(pr, pc)) ? img.at(pr, pc) : lo;
                        g = static_cast<std::uint8_t>(std::lround(std::clamp((v - lo) / span, 0.0, 1.0) * 230.0));
                    }
                    for (int dy = 0; dy < L.zoom; ++dy)
                        for (int dx = 0; dx < L.zoom; ++dx) out.at(y0 + pr * L.zoom + dy, x0 + pc * L.zoom + dx) = g;
                }
        }
    }
    return out;
}

} // namespace eitdiff::png
