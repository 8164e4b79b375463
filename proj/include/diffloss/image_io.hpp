#pragma once

// Minimal lossless raster I/O and plotting: 8-bit PNG read/write over zlib,
// batch-to-grid montage, and a small bitmap-font bar-chart renderer used for
// metric reports. Images are float tensors in [0,1], (C,H,W) with C = 1 or 3.

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "diffloss/core/fileio.hpp"
#include "diffloss/core/tensor.hpp"

namespace diffloss {

namespace detail {

inline void put_be32(std::string& out, uint32_t v) {
    char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                 static_cast<char>(v)};
    out.append(b, 4);
}

inline uint32_t get_be32(const unsigned char* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void png_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_be32(out, static_cast<uint32_t>(payload.size()));
    size_t start = out.size();
    out.append(type, 4);
    out += payload;
    uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(out.data() + start), static_cast<uInt>(out.size() - start));
    put_be32(out, static_cast<uint32_t>(crc));
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

// Apply one scanline filter; prev is null for the first row.
inline void png_filter_row(int type, const unsigned char* row, const unsigned char* prev, int64_t n,
                           int64_t bpp, unsigned char* out) {
    for (int64_t i = 0; i < n; ++i) {
        int x = row[i];
        int a = i >= bpp ? row[i - bpp] : 0;
        int b = prev ? prev[i] : 0;
        int c = (prev && i >= bpp) ? prev[i - bpp] : 0;
        int v = 0;
        switch (type) {
            case 0: v = x; break;
            case 1: v = x - a; break;
            case 2: v = x - b; break;
            case 3: v = x - (a + b) / 2; break;
            case 4: v = x - paeth(a, b, c); break;
        }
        out[i] = static_cast<unsigned char>(v & 0xff);
    }
}

inline void png_unfilter_row(int type, unsigned char* row, const unsigned char* prev, int64_t n, int64_t bpp) {
    for (int64_t i = 0; i < n; ++i) {
        int a = i >= bpp ? row[i - bpp] : 0;
        int b = prev ? prev[i] : 0;
        int c = (prev && i >= bpp) ? prev[i - bpp] : 0;
        int v = row[i];
        switch (type) {
            case 0: break;
            case 1: v += a; break;
            case 2: v += b; break;
            case 3: v += (a + b) / 2; break;
            case 4: v += paeth(a, b, c); break;
            default: throw DataError("png: unknown filter type " + std::to_string(type));
        }
        row[i] = static_cast<unsigned char>(v & 0xff);
    }
}

inline constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

}  // namespace detail

// Encode a (C,H,W) image, C = 1 (grayscale) or 3 (RGB), values clamped to
// [0,1] and quantized to 8 bits. Row filters are chosen per scanline by the
// usual minimum-sum-of-absolute-differences heuristic.
inline std::string encode_png(const Tensor& img) {
    if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
        throw ArgumentError("encode_png: want (C,H,W) with C in {1,3}, got " + shape_str(img.shape()));
    int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    int64_t bpp = C, stride = W * C;

    // interleave + quantize
    std::vector<unsigned char> pix(static_cast<size_t>(H * stride));
    const float* p = img.data();
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < C; ++c) {
                float v = p[(c * H + y) * W + x];
                v = std::min(1.f, std::max(0.f, v));
                pix[y * stride + x * C + c] = static_cast<unsigned char>(std::lround(v * 255.f));
            }

    // filter each row, picking the cheapest of the five standard filters
    std::vector<unsigned char> raw(static_cast<size_t>(H * (stride + 1)));
    std::vector<unsigned char> trial(static_cast<size_t>(stride));
    for (int64_t y = 0; y < H; ++y) {
        const unsigned char* row = pix.data() + y * stride;
        const unsigned char* prev = y ? pix.data() + (y - 1) * stride : nullptr;
        int best_type = 0;
        long best_cost = -1;
        unsigned char* dst = raw.data() + y * (stride + 1) + 1;
        for (int type = 0; type < 5; ++type) {
            detail::png_filter_row(type, row, prev, stride, bpp, trial.data());
            long cost = 0;
            for (int64_t i = 0; i < stride; ++i) {
                signed char s = static_cast<signed char>(trial[i]);
                cost += std::abs(static_cast<int>(s));
            }
            if (best_cost < 0 || cost < best_cost) {
                best_cost = cost;
                best_type = type;
                std::memcpy(dst, trial.data(), static_cast<size_t>(stride));
            }
        }
        raw[y * (stride + 1)] = static_cast<unsigned char>(best_type);
    }

    uLongf zcap = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> z(zcap);
    if (compress2(z.data(), &zcap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("encode_png: deflate failed");

    std::string out(reinterpret_cast<const char*>(detail::kPngSig), 8);
    std::string ihdr;
    detail::put_be32(ihdr, static_cast<uint32_t>(W));
    detail::put_be32(ihdr, static_cast<uint32_t>(H));
    ihdr += static_cast<char>(8);                  // bit depth
    ihdr += static_cast<char>(C == 1 ? 0 : 2);     // color type: gray | rgb
    ihdr += '\0';                                  // compression
    ihdr += '\0';                                  // filter method
    ihdr += '\0';                                  // no interlace
    detail::png_chunk(out, "IHDR", ihdr);
    detail::png_chunk(out, "IDAT", std::string(reinterpret_cast<const char*>(z.data()), zcap));
    detail::png_chunk(out, "IEND", "");
    return out;
}

// Decode an 8-bit PNG into (C,H,W) floats in [0,1]. Grayscale stays 1
// channel, RGB stays 3, RGBA drops alpha. Palette, 16-bit and interlaced
// files are rejected.
inline Tensor decode_png(const std::string& bytes) {
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 8 || std::memcmp(u, detail::kPngSig, 8) != 0)
        throw DataError("png: bad signature");

    int64_t W = 0, H = 0;
    int color_type = -1;
    std::string idat;
    size_t off = 8;
    bool saw_end = false;
    while (off + 12 <= bytes.size()) {
        uint32_t len = detail::get_be32(u + off);
        if (off + 12 + len > bytes.size()) throw DataError("png: truncated chunk");
        const char* type = bytes.data() + off + 4;
        const unsigned char* payload = u + off + 8;
        uLong crc = crc32(0L, u + off + 4, len + 4);
        if (static_cast<uint32_t>(crc) != detail::get_be32(u + off + 8 + len))
            throw DataError("png: chunk crc mismatch");
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw DataError("png: bad IHDR");
            W = detail::get_be32(payload);
            H = detail::get_be32(payload + 4);
            int bit_depth = payload[8];
            color_type = payload[9];
            if (bit_depth != 8) throw DataError("png: unsupported bit depth " + std::to_string(bit_depth));
            if (color_type != 0 && color_type != 2 && color_type != 6)
                throw DataError("png: unsupported color type " + std::to_string(color_type));
            if (payload[12] != 0) throw DataError("png: interlaced files unsupported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.append(reinterpret_cast<const char*>(payload), len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_end = true;
            break;
        }
        off += 12 + len;
    }
    if (W <= 0 || H <= 0 || color_type < 0) throw DataError("png: missing IHDR");
    if (!saw_end) throw DataError("png: missing IEND");
    if (idat.empty()) throw DataError("png: missing IDAT");

    int64_t nch = color_type == 0 ? 1 : color_type == 2 ? 3 : 4;
    int64_t stride = W * nch;
    std::vector<unsigned char> raw(static_cast<size_t>(H * (stride + 1)));
    uLongf rlen = static_cast<uLongf>(raw.size());
    int zr = uncompress(raw.data(), &rlen, reinterpret_cast<const Bytef*>(idat.data()),
                        static_cast<uLong>(idat.size()));
    if (zr != Z_OK || rlen != raw.size()) throw DataError("png: inflate failed");

    int64_t out_c = nch == 4 ? 3 : nch;
    Tensor img({out_c, H, W});
    float* q = img.data();
    unsigned char* prev = nullptr;
    for (int64_t y = 0; y < H; ++y) {
        unsigned char* row = raw.data() + y * (stride + 1);
        detail::png_unfilter_row(row[0], row + 1, prev, stride, nch);
        prev = row + 1;
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < out_c; ++c)
                q[(c * H + y) * W + x] = static_cast<float>(row[1 + x * nch + c]) / 255.f;
    }
    return img;
}

inline void write_png(const std::filesystem::path& path, const Tensor& img) {
    write_file_atomic(path, encode_png(img));
}

inline Tensor read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

// Tile a batch (N,C,H,W) into one (C,·,·) montage, row-major, `pad` pixels of
// `fill` between and around tiles.
inline Tensor make_grid(const Tensor& batch, int64_t ncol, int64_t pad = 2, float fill = 1.f) {
    if (batch.rank() != 4) throw ArgumentError("make_grid: want (N,C,H,W), got " + shape_str(batch.shape()));
    if (ncol <= 0) throw ArgumentError("make_grid: ncol must be positive");
    int64_t N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    ncol = std::min(ncol, N);
    int64_t nrow = (N + ncol - 1) / ncol;
    Tensor out({C, nrow * H + (nrow + 1) * pad, ncol * W + (ncol + 1) * pad});
    out.fill(fill);
    int64_t oh = out.dim(1), ow = out.dim(2);
    for (int64_t n = 0; n < N; ++n) {
        int64_t r = n / ncol, col = n % ncol;
        int64_t y0 = pad + r * (H + pad), x0 = pad + col * (W + pad);
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < H; ++y)
                std::memcpy(out.data() + (c * oh + y0 + y) * ow + x0,
                            batch.data() + ((n * C + c) * H + y) * W, static_cast<size_t>(W) * sizeof(float));
    }
    return out;
}

inline void write_image_grid(const std::filesystem::path& path, const Tensor& batch, int64_t ncol,
                             int64_t pad = 2, float fill = 1.f) {
    write_png(path, make_grid(batch, ncol, pad, fill));
}

// ---- tiny raster plotting --------------------------------------------------

struct Rgb {
    float r = 0, g = 0, b = 0;
};

inline constexpr Rgb kChartPalette[] = {
    {0.27f, 0.51f, 0.71f},  // steel blue
    {1.00f, 0.59f, 0.16f},  // orange
    {0.24f, 0.63f, 0.29f},  // green
    {0.86f, 0.27f, 0.27f},  // red
    {0.55f, 0.35f, 0.78f},  // purple
    {0.47f, 0.47f, 0.47f},  // gray
};

inline void fill_rect(Tensor& rgb, int64_t x0, int64_t y0, int64_t w, int64_t h, Rgb c) {
    int64_t H = rgb.dim(1), W = rgb.dim(2);
    int64_t x1 = std::min(W, x0 + w), y1 = std::min(H, y0 + h);
    x0 = std::max<int64_t>(0, x0);
    y0 = std::max<int64_t>(0, y0);
    float* p = rgb.data();
    for (int64_t y = y0; y < y1; ++y)
        for (int64_t x = x0; x < x1; ++x) {
            p[(0 * H + y) * W + x] = c.r;
            p[(1 * H + y) * W + x] = c.g;
            p[(2 * H + y) * W + x] = c.b;
        }
}

namespace detail {

// 5x7 bitmap glyphs, one byte per row, bit 4 = leftmost column. Lowercase is
// folded to uppercase; anything missing renders as a hollow box.
inline const unsigned char* glyph5x7(char ch) {
    static const struct {
        char ch;
        unsigned char rows[7];
    } table[] = {
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
        {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}}, {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
        {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}}, {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
        {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}}, {'%', {0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}}, {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}}, {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    };
    static const unsigned char box[7] = {0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F};
    if (ch >= 'a' && ch <= 'z') ch = static_cast<char>(ch - 'a' + 'A');
    for (const auto& g : table)
        if (g.ch == ch) return g.rows;
    return box;
}

}  // namespace detail

// Draw `text` with its top-left corner at (x, y); advance is 6*scale px.
inline void draw_text(Tensor& rgb, int64_t x, int64_t y, const std::string& text, Rgb color = {0, 0, 0},
                      int64_t scale = 1) {
    for (char ch : text) {
        const unsigned char* rows = detail::glyph5x7(ch);
        for (int64_t ry = 0; ry < 7; ++ry)
            for (int64_t rx = 0; rx < 5; ++rx)
                if (rows[ry] & (0x10 >> rx))
                    fill_rect(rgb, x + rx * scale, y + ry * scale, scale, scale, color);
        x += 6 * scale;
    }
}

inline int64_t text_width(const std::string& text, int64_t scale = 1) {
    return static_cast<int64_t>(text.size()) * 6 * scale;
}

// One bar per group; optional per-group whisker half-lengths (e.g. std dev).
struct BarSeries {
    std::string name;
    std::vector<double> values;
    std::vector<double> spread;  // empty or same length as values
};

// Grouped bar chart with y ticks, group labels and a series legend. Values
// must be finite and non-negative. Returns an RGB canvas.
inline Tensor render_grouped_bars(const std::vector<std::string>& group_labels,
                                  const std::vector<BarSeries>& series, const std::string& title,
                                  int64_t width = 720, int64_t height = 400) {
    if (series.empty() || group_labels.empty())
        throw ArgumentError("render_grouped_bars: need at least one series and one group");
    size_t ng = group_labels.size();
    double vmax = 0;
    for (const auto& s : series) {
        if (s.values.size() != ng)
            throw ArgumentError("render_grouped_bars: series '" + s.name + "' has " +
                                std::to_string(s.values.size()) + " values, want " + std::to_string(ng));
        if (!s.spread.empty() && s.spread.size() != ng)
            throw ArgumentError("render_grouped_bars: spread length mismatch in '" + s.name + "'");
        for (size_t g = 0; g < ng; ++g) {
            double v = s.values[g], w = s.spread.empty() ? 0 : s.spread[g];
            if (!std::isfinite(v) || !std::isfinite(w) || v < 0 || w < 0)
                throw ArgumentError("render_grouped_bars: values must be finite and non-negative");
            vmax = std::max(vmax, v + w);
        }
    }
    if (vmax <= 0) vmax = 1;

    // round the tick step to 1/2/5 x 10^k
    double raw_step = vmax / 4;
    double mag = std::pow(10.0, std::floor(std::log10(raw_step)));
    double norm = raw_step / mag;
    double step = (norm < 1.5 ? 1.0 : norm < 3.0 ? 2.0 : norm < 7.0 ? 5.0 : 10.0) * mag;
    double ymax = std::ceil(vmax / step) * step;

    Tensor canvas({3, height, width});
    canvas.fill(1.f);
    const Rgb black{0, 0, 0}, grid{0.85f, 0.85f, 0.85f};
    int64_t ml = 64, mr = 16, mt = 26, mb = 40;
    int64_t pw = width - ml - mr, ph = height - mt - mb;
    auto ypix = [&](double v) { return mt + ph - static_cast<int64_t>(std::llround(v / ymax * ph)); };

    draw_text(canvas, 8, 8, title, black);
    for (double v = 0; v <= ymax * (1 + 1e-9); v += step) {
        int64_t y = ypix(v);
        fill_rect(canvas, ml, y, pw, 1, v == 0 ? black : grid);
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", v);
        std::string label(buf);
        draw_text(canvas, ml - 6 - text_width(label), y - 3, label, black);
    }
    fill_rect(canvas, ml, mt, 1, ph, black);

    size_t ns = series.size();
    int64_t cell = pw / static_cast<int64_t>(ng);
    int64_t group_w = cell * 3 / 4;
    int64_t bar_w = std::max<int64_t>(1, group_w / static_cast<int64_t>(ns) - 1);
    for (size_t g = 0; g < ng; ++g) {
        int64_t gx = ml + static_cast<int64_t>(g) * cell + (cell - group_w) / 2;
        for (size_t s = 0; s < ns; ++s) {
            Rgb c = kChartPalette[s % std::size(kChartPalette)];
            double v = series[s].values[g];
            int64_t x = gx + static_cast<int64_t>(s) * (bar_w + 1);
            int64_t ytop = ypix(v);
            fill_rect(canvas, x, ytop, bar_w, mt + ph - ytop, c);
            if (!series[s].spread.empty() && series[s].spread[g] > 0) {
                int64_t ylo = ypix(std::max(0.0, v - series[s].spread[g]));
                int64_t yhi = ypix(v + series[s].spread[g]);
                int64_t xm = x + bar_w / 2;
                fill_rect(canvas, xm, yhi, 1, ylo - yhi + 1, black);
                fill_rect(canvas, xm - 2, yhi, 5, 1, black);
                fill_rect(canvas, xm - 2, ylo, 5, 1, black);
            }
        }
        const std::string& gl = group_labels[g];
        draw_text(canvas, gx + group_w / 2 - text_width(gl) / 2, mt + ph + 8, gl, black);
    }

    int64_t lx = ml + 8, ly = mt + 4;
    for (size_t s = 0; s < ns; ++s) {
        fill_rect(canvas, lx, ly + 1, 6, 6, kChartPalette[s % std::size(kChartPalette)]);
        draw_text(canvas, lx + 9, ly, series[s].name, black);
        lx += 9 + text_width(series[s].name) + 14;
    }
    return canvas;
}

}  // namespace diffloss
