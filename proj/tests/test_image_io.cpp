#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>

#include "diffloss/image_io.hpp"

using namespace diffloss;
namespace fs = std::filesystem;

namespace {

#include "png_fixtures.inc"

// fixtures use value(x, y, c) = (7x + 13y + 31c) mod 256
float fixture_val(int64_t x, int64_t y, int64_t c) {
    return static_cast<float>((x * 7 + y * 13 + c * 31) % 256) / 255.f;
}

std::string to_string_bytes(const unsigned char* p, size_t n) {
    return std::string(reinterpret_cast<const char*>(p), n);
}

void check_fixture(const Tensor& img, int64_t C, int64_t H, int64_t W) {
    REQUIRE(img.shape() == Shape{C, H, W});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                REQUIRE(img[(c * H + y) * W + x] == fixture_val(x, y, c));
}

// recompute a chunk's trailing crc after test surgery on its payload
void fix_chunk_crc(std::string& bytes, size_t chunk_off) {
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
    uint32_t len = detail::get_be32(u + chunk_off);
    uLong crc = crc32(0L, u + chunk_off + 4, len + 4);
    std::string c;
    detail::put_be32(c, static_cast<uint32_t>(crc));
    bytes.replace(chunk_off + 8 + len, 4, c);
}

fs::path temp_dir() {
    fs::path d = fs::temp_directory_path() / "diffloss_test_img";
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("png round-trip is exact on the 8-bit grid") {
    Rng rng(7);
    SECTION("rgb") {
        Tensor img({3, 13, 21});
        for (int64_t i = 0; i < img.numel(); ++i)
            img[i] = static_cast<float>(rng.uniform_int(0, 255)) / 255.f;
        Tensor back = decode_png(encode_png(img));
        REQUIRE(back.shape() == img.shape());
        REQUIRE(std::memcmp(back.data(), img.data(), img.numel() * sizeof(float)) == 0);
    }
    SECTION("grayscale") {
        Tensor img({1, 6, 9});
        for (int64_t i = 0; i < img.numel(); ++i)
            img[i] = static_cast<float>(rng.uniform_int(0, 255)) / 255.f;
        Tensor back = decode_png(encode_png(img));
        REQUIRE(back.shape() == img.shape());
        REQUIRE(std::memcmp(back.data(), img.data(), img.numel() * sizeof(float)) == 0);
    }
    SECTION("out-of-range values clamp") {
        Tensor img({1, 1, 3});
        img[0] = -0.4f;
        img[1] = 0.5f;
        img[2] = 1.7f;
        Tensor back = decode_png(encode_png(img));
        REQUIRE(back[0] == 0.f);
        REQUIRE(back[1] == 128.f / 255.f);  // 127.5 rounds away from zero
        REQUIRE(back[2] == 1.f);
    }
    SECTION("file round-trip") {
        Tensor img({3, 8, 8});
        for (int64_t i = 0; i < img.numel(); ++i)
            img[i] = static_cast<float>(rng.uniform_int(0, 255)) / 255.f;
        fs::path p = temp_dir() / "rt.png";
        write_png(p, img);
        Tensor back = read_png(p);
        REQUIRE(std::memcmp(back.data(), img.data(), img.numel() * sizeof(float)) == 0);
    }
}

TEST_CASE("png reader handles every scanline filter") {
    check_fixture(decode_png(to_string_bytes(kPngRgbFilter0, sizeof kPngRgbFilter0)), 3, 4, 5);
    check_fixture(decode_png(to_string_bytes(kPngRgbFilter1, sizeof kPngRgbFilter1)), 3, 4, 5);
    check_fixture(decode_png(to_string_bytes(kPngRgbFilter2, sizeof kPngRgbFilter2)), 3, 4, 5);
    check_fixture(decode_png(to_string_bytes(kPngRgbFilter3, sizeof kPngRgbFilter3)), 3, 4, 5);
    check_fixture(decode_png(to_string_bytes(kPngRgbFilter4, sizeof kPngRgbFilter4)), 3, 4, 5);
}

TEST_CASE("png reader handles grayscale, alpha and foreign writers") {
    SECTION("grayscale with paeth filter") {
        check_fixture(decode_png(to_string_bytes(kPngGrayPaeth, sizeof kPngGrayPaeth)), 1, 5, 6);
    }
    SECTION("rgba drops alpha") {
        check_fixture(decode_png(to_string_bytes(kPngRgbaUp, sizeof kPngRgbaUp)), 3, 4, 4);
    }
    SECTION("file from another encoder") {
        check_fixture(decode_png(to_string_bytes(kPngPil, sizeof kPngPil)), 3, 6, 8);
    }
}

TEST_CASE("png reader rejects malformed input") {
    std::string good = to_string_bytes(kPngRgbFilter0, sizeof kPngRgbFilter0);

    SECTION("bad signature") {
        std::string bad = good;
        bad[0] = 'X';
        REQUIRE_THROWS_AS(decode_png(bad), DataError);
    }
    SECTION("truncated") {
        REQUIRE_THROWS_AS(decode_png(good.substr(0, good.size() - 10)), DataError);
    }
    SECTION("corrupt payload fails crc") {
        std::string bad = good;
        bad[8 + 25 + 10] ^= 0x40;  // a byte inside the IDAT payload
        REQUIRE_THROWS_AS(decode_png(bad), DataError);
    }
    SECTION("unsupported color type") {
        std::string bad = good;
        bad[8 + 8 + 9] = 3;  // palette
        fix_chunk_crc(bad, 8);
        REQUIRE_THROWS_WITH(decode_png(bad), Catch::Matchers::ContainsSubstring("color type"));
    }
    SECTION("unsupported bit depth") {
        std::string bad = good;
        bad[8 + 8 + 8] = 16;
        fix_chunk_crc(bad, 8);
        REQUIRE_THROWS_WITH(decode_png(bad), Catch::Matchers::ContainsSubstring("bit depth"));
    }
    SECTION("not an image at all") {
        REQUIRE_THROWS_AS(decode_png("definitely not a png"), DataError);
    }
}

TEST_CASE("grid montage geometry") {
    int64_t N = 5, C = 3, H = 4, W = 6, pad = 2;
    Tensor batch({N, C, H, W});
    for (int64_t i = 0; i < batch.numel(); ++i) batch[i] = static_cast<float>(i % 97) / 96.f;

    Tensor grid = make_grid(batch, 2, pad, 0.25f);
    REQUIRE(grid.shape() == Shape{C, 3 * H + 4 * pad, 2 * W + 3 * pad});

    // tile n=3 sits at row 1, column 1
    int64_t oh = grid.dim(1), ow = grid.dim(2);
    int64_t y0 = pad + 1 * (H + pad), x0 = pad + 1 * (W + pad);
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                REQUIRE(grid[(c * oh + y0 + y) * ow + x0 + x] == batch[((3 * C + c) * H + y) * W + x]);

    // padding and the empty cell keep the fill value
    REQUIRE(grid[0] == 0.25f);
    int64_t ye = pad + 2 * (H + pad) + H / 2, xe = pad + 1 * (W + pad) + W / 2;  // cell (2,1): unused
    REQUIRE(grid[(0 * oh + ye) * ow + xe] == 0.25f);

    SECTION("ncol larger than batch clamps") {
        Tensor g2 = make_grid(batch, 64, 1, 0.f);
        REQUIRE(g2.shape() == Shape{C, H + 2, 5 * W + 6});
    }
    SECTION("bad input rejected") {
        REQUIRE_THROWS_AS(make_grid(Tensor({3, 4, 5}), 2), ArgumentError);
        REQUIRE_THROWS_AS(make_grid(batch, 0), ArgumentError);
    }
}

TEST_CASE("text raster places glyphs deterministically") {
    Tensor canvas({3, 16, 24});
    canvas.fill(1.f);
    draw_text(canvas, 0, 0, "I", {0, 0, 0});
    int64_t oh = canvas.dim(1), ow = canvas.dim(2);
    // 'I' top row lights columns 1..3 and leaves column 0 empty
    REQUIRE(canvas[(0 * oh + 0) * ow + 1] == 0.f);
    REQUIRE(canvas[(0 * oh + 0) * ow + 2] == 0.f);
    REQUIRE(canvas[(0 * oh + 0) * ow + 3] == 0.f);
    REQUIRE(canvas[(0 * oh + 0) * ow + 0] == 1.f);

    Tensor again({3, 16, 24});
    again.fill(1.f);
    draw_text(again, 0, 0, "I", {0, 0, 0});
    REQUIRE(again.checksum() == canvas.checksum());

    // scale doubles every lit pixel
    Tensor big({3, 16, 24});
    big.fill(1.f);
    draw_text(big, 0, 0, "I", {0, 0, 0}, 2);
    REQUIRE(big[(0 * oh + 0) * ow + 2] == 0.f);
    REQUIRE(big[(0 * oh + 1) * ow + 2] == 0.f);
}

TEST_CASE("bar chart renders a sane canvas") {
    std::vector<std::string> groups = {"0", "0.5", "1.0"};
    std::vector<BarSeries> series = {
        {"with", {1.0, 2.0, 3.0}, {0.1, 0.2, 0.3}},
        {"without", {1.5, 2.5, 3.5}, {}},
    };
    Tensor chart = render_grouped_bars(groups, series, "distance by delta", 320, 200);
    REQUIRE(chart.shape() == Shape{3, 200, 320});
    for (int64_t i = 0; i < chart.numel(); ++i) {
        REQUIRE(chart[i] >= 0.f);
        REQUIRE(chart[i] <= 1.f);
    }
    // corners stay background white
    int64_t oh = chart.dim(1), ow = chart.dim(2);
    REQUIRE(chart[(0 * oh + 0) * ow + (ow - 1)] == 1.f);
    REQUIRE(chart[(0 * oh + (oh - 1)) * ow + (ow - 1)] == 1.f);

    // both series' palette colors appear somewhere
    for (size_t s = 0; s < series.size(); ++s) {
        Rgb c = kChartPalette[s];
        bool found = false;
        for (int64_t y = 0; y < oh && !found; ++y)
            for (int64_t x = 0; x < ow && !found; ++x)
                found = chart[(0 * oh + y) * ow + x] == c.r && chart[(1 * oh + y) * ow + x] == c.g &&
                        chart[(2 * oh + y) * ow + x] == c.b;
        REQUIRE(found);
    }

    SECTION("invalid input rejected") {
        REQUIRE_THROWS_AS(render_grouped_bars({}, series, "t"), ArgumentError);
        REQUIRE_THROWS_AS(render_grouped_bars(groups, {}, "t"), ArgumentError);
        REQUIRE_THROWS_AS(render_grouped_bars(groups, {{"a", {1.0, 2.0}, {}}}, "t"), ArgumentError);
        REQUIRE_THROWS_AS(render_grouped_bars(groups, {{"a", {1.0, -2.0, 1.0}, {}}}, "t"), ArgumentError);
        double nan = std::numeric_limits<double>::quiet_NaN();
        REQUIRE_THROWS_AS(render_grouped_bars(groups, {{"a", {1.0, nan, 1.0}, {}}}, "t"), ArgumentError);
    }
}
