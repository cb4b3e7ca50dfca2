#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "scope/geometry.hpp"
#include "scope/metrics.hpp"

namespace scope::imageio {

namespace fs = std::filesystem;

// ============================================================================
// Minimal PNG writer: 8-bit RGB, zlib stream with stored (uncompressed)
// deflate blocks. Enough for crop-sized visualizations without a codec
// dependency.
// ============================================================================

namespace detail {

inline void push_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline void push_chunk(std::vector<uint8_t>& out, const char type[4],
                       const std::vector<uint8_t>& payload) {
    push_u32(out, static_cast<uint32_t>(payload.size()));
    std::vector<uint8_t> body(type, type + 4);
    body.insert(body.end(), payload.begin(), payload.end());
    out.insert(out.end(), body.begin(), body.end());
    push_u32(out, crc32(body.data(), body.size()));
}

inline uint32_t adler32(const uint8_t* data, size_t n) {
    uint32_t a = 1, b = 0;
    for (size_t i = 0; i < n; ++i) {
        a = (a + data[i]) % 65521;
        b = (b + a) % 65521;
    }
    return (b << 16) | a;
}

}  // namespace detail

// rgb: interleaved 8-bit, row-major, height*width*3 bytes
inline void write_png(const fs::path& path, const std::vector<uint8_t>& rgb, int width, int height) {
    if (rgb.size() != static_cast<size_t>(width) * height * 3)
        throw DataError("write_png: buffer size does not match dimensions");
    std::vector<uint8_t> png{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

    std::vector<uint8_t> ihdr;
    detail::push_u32(ihdr, static_cast<uint32_t>(width));
    detail::push_u32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    detail::push_chunk(png, "IHDR", ihdr);

    // raw scanlines with filter byte 0
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(height) * (1 + static_cast<size_t>(width) * 3));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const uint8_t* row = rgb.data() + static_cast<size_t>(y) * width * 3;
        raw.insert(raw.end(), row, row + static_cast<size_t>(width) * 3);
    }

    std::vector<uint8_t> idat{0x78, 0x01};  // zlib header, no compression preset
    size_t pos = 0;
    while (pos < raw.size()) {
        const size_t chunk = std::min<size_t>(65535, raw.size() - pos);
        const bool last = pos + chunk == raw.size();
        idat.push_back(last ? 1 : 0);
        idat.push_back(static_cast<uint8_t>(chunk & 0xff));
        idat.push_back(static_cast<uint8_t>(chunk >> 8));
        idat.push_back(static_cast<uint8_t>(~chunk & 0xff));
        idat.push_back(static_cast<uint8_t>((~chunk >> 8) & 0xff));
        idat.insert(idat.end(), raw.begin() + static_cast<long>(pos), raw.begin() + static_cast<long>(pos + chunk));
        pos += chunk;
    }
    detail::push_u32(idat, detail::adler32(raw.data(), raw.size()));
    detail::push_chunk(png, "IDAT", idat);
    detail::push_chunk(png, "IEND", {});

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_png: cannot open " + path.string());
    out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
    if (!out) throw DataError("write_png: short write to " + path.string());
}

// ============================================================================
// Visualization canvases
// ============================================================================

class Canvas {
public:
    Canvas(int width, int height) : width_(width), height_(height), rgb_(static_cast<size_t>(width) * height * 3, 0) {}

    static Canvas from_float_rgb(const std::vector<float>& rgb, int width, int height, int upscale) {
        Canvas canvas(width * upscale, height * upscale);
        for (int y = 0; y < height * upscale; ++y)
            for (int x = 0; x < width * upscale; ++x) {
                const size_t src = (static_cast<size_t>(y / upscale) * width + x / upscale) * 3;
                const size_t dst = (static_cast<size_t>(y) * width * upscale + x) * 3;
                for (int c = 0; c < 3; ++c)
                    canvas.rgb_[dst + c] = static_cast<uint8_t>(
                        std::clamp(static_cast<int>(rgb[src + c] * 255.0f + 0.5f), 0, 255));
            }
        return canvas;
    }

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
        const size_t idx = (static_cast<size_t>(y) * width_ + x) * 3;
        rgb_[idx] = r;
        rgb_[idx + 1] = g;
        rgb_[idx + 2] = b;
    }

    void line(double x0, double y0, double x1, double y1, uint8_t r, uint8_t g, uint8_t b) {
        int ix0 = static_cast<int>(std::lround(x0)), iy0 = static_cast<int>(std::lround(y0));
        const int ix1 = static_cast<int>(std::lround(x1)), iy1 = static_cast<int>(std::lround(y1));
        const int dx = std::abs(ix1 - ix0), dy = -std::abs(iy1 - iy0);
        const int sx = ix0 < ix1 ? 1 : -1, sy = iy0 < iy1 ? 1 : -1;
        int err = dx + dy;
        for (int guard = 0; guard < 100000; ++guard) {
            set(ix0, iy0, r, g, b);
            if (ix0 == ix1 && iy0 == iy1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                ix0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                iy0 += sy;
            }
        }
    }

    void save(const fs::path& path) const { write_png(path, rgb_, width_, height_); }

    int width() const { return width_; }
    int height() const { return height_; }

private:
    int width_, height_;
    std::vector<uint8_t> rgb_;
};

// Projects an oriented box wireframe with the crop intrinsics and draws the
// 12 edges. Ground truth draws blue, estimates green.
inline void draw_box_wireframe(Canvas& canvas, const metrics::OrientedBox& box,
                               const std::array<double, 9>& intrinsics, int upscale,
                               uint8_t r, uint8_t g, uint8_t b) {
    const double fx = intrinsics[0], cx = intrinsics[2], fy = intrinsics[4], cy = intrinsics[5];
    std::array<geo::Vec3, 8> corners;
    std::array<bool, 8> in_front{};
    std::array<std::pair<double, double>, 8> px;
    for (int i = 0; i < 8; ++i) {
        corners[static_cast<size_t>(i)] = box.corner(i & 1, (i >> 1) & 1, (i >> 2) & 1);
        const auto& p = corners[static_cast<size_t>(i)];
        in_front[static_cast<size_t>(i)] = p[2] > 1e-6;
        if (in_front[static_cast<size_t>(i)])
            px[static_cast<size_t>(i)] = {(fx * p[0] / p[2] + cx) * upscale, (fy * p[1] / p[2] + cy) * upscale};
    }
    static const int edges[12][2] = {{0, 1}, {0, 2}, {1, 3}, {2, 3}, {4, 5}, {4, 6},
                                     {5, 7}, {6, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
    for (const auto& e : edges) {
        if (!in_front[static_cast<size_t>(e[0])] || !in_front[static_cast<size_t>(e[1])]) continue;
        canvas.line(px[static_cast<size_t>(e[0])].first, px[static_cast<size_t>(e[0])].second,
                    px[static_cast<size_t>(e[1])].first, px[static_cast<size_t>(e[1])].second, r, g, b);
    }
}

inline void save_nocs_png(const fs::path& path, const std::vector<float>& nocs, int width,
                          int height, int upscale = 4) {
    Canvas canvas = Canvas::from_float_rgb(nocs, width, height, upscale);
    canvas.save(path);
}

}  // namespace scope::imageio
