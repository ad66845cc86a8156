#include <gtest/gtest.h>
#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "hipa/dataset.hpp"
#include "hipa/synthetic.hpp"

using namespace hipa;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "hipa_test_data";
    fs::create_directories(dir);
    return dir / name;
}

/// Writes raw rows with an arbitrary libpng colour type.
void write_raw_png(const fs::path& path, int w, int h, int color_type, int depth, const std::vector<png_byte>& pixels,
                   int row_bytes) {
    std::FILE* fp = std::fopen(path.string().c_str(), "wb");
    ASSERT_NE(fp, nullptr);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    png_init_io(png, fp);
    png_set_IHDR(png, info, w, h, depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
        png_color palette[2] = {{0, 0, 0}, {255, 0, 0}};
        png_set_PLTE(png, info, palette, 2);
    }
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) png_write_row(png, const_cast<png_bytep>(pixels.data() + y * row_bytes));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Image ramp_image(Index h, Index w) {
    Image x(Shape{3, h, w});
    for (Index c = 0; c < 3; ++c)
        for (Index y = 0; y < h; ++y)
            for (Index xx = 0; xx < w; ++xx) x.at(c, y, xx) = static_cast<float>(0.01 * xx + 0.1 * c);
    return x;
}

} // namespace

TEST(Png, WhiteAndGray) {
    const auto white = scratch("white.png");
    save_png(white, Image(Shape{3, 1, 1}, 1.0f));
    EXPECT_EQ(load_png(white).values(), (std::vector<float>{1, 1, 1}));

    const auto gray = scratch("gray.png");
    write_raw_png(gray, 1, 1, PNG_COLOR_TYPE_GRAY, 8, {128}, 1);
    const auto g = load_png(gray);
    EXPECT_EQ(g.shape(), (Shape{3, 1, 1}));
    for (float v : g.data()) EXPECT_FLOAT_EQ(v, 128.0f / 255.0f);
}

TEST(Png, RoundTripsAndDepths) {
    Rng rng(1);
    Image x(Shape{3, 5, 7});
    for (float& v : x.data()) v = static_cast<float>(rng.below(256)) / 255.0f;
    const auto p8 = scratch("rt8.png");
    save_png(p8, x);
    EXPECT_EQ(load_png(p8).values(), x.values());

    Image y(Shape{3, 4, 3});
    for (float& v : y.data()) v = static_cast<float>(rng.below(65536)) / 65535.0f;
    const auto p16 = scratch("rt16.png");
    save_png(p16, y, 16);
    EXPECT_EQ(load_png(p16).values(), y.values());
}

TEST(Png, AlphaDroppedAndUnsupportedInputs) {
    const auto rgba = scratch("rgba.png");
    write_raw_png(rgba, 2, 1, PNG_COLOR_TYPE_RGB_ALPHA, 8, {255, 0, 0, 10, 0, 255, 0, 200}, 8);
    EXPECT_EQ(load_png(rgba).values(), (std::vector<float>{1, 0, 0, 1, 0, 0}));

    const auto pal = scratch("palette.png");
    write_raw_png(pal, 2, 1, PNG_COLOR_TYPE_PALETTE, 8, {0, 1}, 2);
    EXPECT_THROW(load_png(pal), UnsupportedColorType);

    const auto bad = scratch("corrupt.png");
    {
        const auto good = scratch("good.png");
        save_png(good, ramp_image(16, 16));
        std::ifstream in(good, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        bytes.resize(bytes.size() / 2);
        std::ofstream(bad, std::ios::binary) << bytes;
    }
    EXPECT_THROW(load_png(bad), DecodeError);
    std::ofstream(scratch("text.png")) << "not an image";
    EXPECT_THROW(load_png(scratch("text.png")), DecodeError);
    EXPECT_THROW(load_png(scratch("missing.png")), DecodeError);
}

TEST(Bicubic, KernelProperties) {
    for (int i = 0; i <= 100; ++i) {
        const auto w = cubic_weights(i / 100.0);
        EXPECT_NEAR(w[0] + w[1] + w[2] + w[3], 1.0, 1e-12);
    }
    const auto at0 = cubic_weights(0.0);
    EXPECT_EQ(at0[0], 0.0);
    EXPECT_EQ(at0[1], 1.0);
    EXPECT_EQ(at0[2], 0.0);
    EXPECT_EQ(at0[3], 0.0);
}

TEST(Bicubic, ResizeExamples) {
    const auto c = bicubic_resize(Image(Shape{3, 7, 9}, 0.4f), 3, 20);
    for (float v : c.data()) EXPECT_NEAR(v, 0.4f, 1e-6f);

    const auto src = ramp_image(6, 8);
    EXPECT_EQ(bicubic_resize(src, 6, 8).values(), src.values());

    // Downscaling a ramp samples it at (2j + 0.5) in source coordinates.
    const auto down = bicubic_resize(ramp_image(16, 32), 8, 16);
    for (Index c0 = 0; c0 < 3; ++c0)
        for (Index y = 0; y < 8; ++y)
            for (Index x = 2; x < 14; ++x)
                EXPECT_NEAR(down.at(c0, y, x), 0.01 * (2 * x + 0.5) + 0.1 * c0, 1e-4);
    EXPECT_THROW(bicubic_resize(src, 0, 4), InvalidSize);
}

TEST(Pairs, MakePair) {
    const auto p = make_pair(Image(Shape{3, 9, 9}, 0.7f), 4, "x");
    EXPECT_EQ(p.hr.shape(), (Shape{3, 8, 8}));
    EXPECT_EQ(p.lr.shape(), (Shape{3, 2, 2}));
    for (float v : p.lr.data()) EXPECT_NEAR(v, 0.7f, 1e-6f);
    EXPECT_THROW(make_pair(Image(Shape{3, 2, 5}), 3), TooSmall);
}

TEST(Pairs, CropAlignmentAndCoverage) {
    const auto images = synthetic_images(1, 64, 3);
    const auto pair = make_pair(images[0], 2, "toy");
    Rng rng(4);
    const auto full = sample_crop(pair, 32, rng);
    EXPECT_EQ(full.lr.values(), pair.lr.values());

    std::set<std::pair<Index, Index>> seen;
    for (int i = 0; i < 1000; ++i) {
        const auto c = pick_crop(pair, 4, rng);
        const auto cp = crop_pair(pair, c);
        EXPECT_EQ(cp.hr.values(), crop(pair.hr, 2 * c.top, 2 * c.left, 8, 8).values());
    }
    // 64 x 64 LR image, 48-pixel crops: 17 x 17 valid offsets.
    const auto big = make_pair(synthetic_images(1, 128, 3)[0], 2, "big");
    for (int i = 0; i < 1000; ++i) {
        const auto c = pick_crop(big, 48, rng);
        seen.insert({c.top, c.left});
    }
    EXPECT_GE(static_cast<double>(seen.size()) / (17.0 * 17.0), 0.9);
    EXPECT_THROW(pick_crop(pair, 33, rng), TooSmall);
}

TEST(Augment, DihedralGroup) {
    Rng rng(5);
    Image x(Shape{3, 4, 6});
    for (float& v : x.data()) v = static_cast<float>(rng.uniform(0, 1));
    Image r = x;
    for (int i = 0; i < 4; ++i) r = rotate90(r);
    EXPECT_EQ(r.values(), x.values());
    EXPECT_EQ(flip_horizontal(flip_horizontal(x)).values(), x.values());
    std::set<std::vector<float>> distinct;
    for (int k = 0; k < 8; ++k) distinct.insert(dihedral(x, k).values());
    EXPECT_EQ(distinct.size(), 8u);

    const auto pair = make_pair(synthetic_images(1, 16, 1)[0], 2);
    for (int i = 0; i < 16; ++i) {
        const auto a = augment(pair, rng);
        EXPECT_EQ(a.hr.dim(1), 2 * a.lr.dim(1));
        EXPECT_EQ(a.hr.dim(2), 2 * a.lr.dim(2));
    }
}

TEST(Luma, Bt601) {
    const auto black = rgb_to_y(Image(Shape{3, 1, 1}, 0.0f));
    EXPECT_FLOAT_EQ(black[0], 16.0f / 255.0f);
    const auto white = rgb_to_y(Image(Shape{3, 1, 1}, 1.0f));
    EXPECT_NEAR(65.481 + 128.553 + 24.966, 219.0, 1e-9);
    EXPECT_FLOAT_EQ(white[0], 235.0f / 255.0f);
    Rng rng(6);
    Image x(Shape{3, 8, 8});
    for (float& v : x.data()) v = static_cast<float>(rng.uniform(0, 1));
    const auto y = rgb_to_y(x);
    for (float v : y.data()) {
        EXPECT_GE(v, 16.0f / 255.0f - 1e-7f);
        EXPECT_LE(v, 235.0f / 255.0f + 1e-7f);
    }
    EXPECT_THROW(rgb_to_y(Image(Shape{1, 2, 2})), ShapeMismatch);
}

TEST(Manifest, LoadsAndRejects) {
    const fs::path dir = scratch("manifest");
    fs::create_directories(dir / "sub");
    save_png(dir / "a.png", ramp_image(8, 8));
    save_png(dir / "sub" / "b.png", ramp_image(12, 8));
    std::ofstream(dir / "list.txt") << "# toy set\na.png\n\n  sub/b.png  # second\n";
    const auto m = load_manifest(dir / "list.txt", 2);
    EXPECT_EQ(m.entries, (std::vector<std::string>{"a.png", "sub/b.png"}));
    const auto data = load_dataset(m);
    ASSERT_EQ(data.size(), 2u);
    EXPECT_EQ(data[1].lr.shape(), (Shape{3, 6, 4}));
    EXPECT_EQ(data[1].id, "sub/b.png");

    std::ofstream(dir / "dup.txt") << "a.png\na.png\n";
    EXPECT_THROW(load_manifest(dir / "dup.txt", 2), DataError);
    std::ofstream(dir / "gone.txt") << "nope.png\n";
    EXPECT_THROW(load_manifest(dir / "gone.txt", 2), DataError);
    std::ofstream(dir / "empty.txt") << "# nothing\n";
    EXPECT_THROW(load_manifest(dir / "empty.txt", 2), DataError);
    EXPECT_THROW(load_manifest(dir / "absent.txt", 2), DataError);
}

TEST(Batches, StackAndDeterministicSampling) {
    const auto data = synthetic_dataset(4, 32, 2, 9);
    std::vector<ImagePair> crops;
    Rng rng(7);
    for (int i = 0; i < 3; ++i) crops.push_back(sample_crop(data[static_cast<std::size_t>(i)], 8, rng));
    const auto b = stack_pairs(crops);
    EXPECT_EQ(b.lr.shape(), (Shape{3, 3, 8, 8}));
    EXPECT_EQ(b.hr.shape(), (Shape{3, 3, 16, 16}));
    EXPECT_EQ(b.ids, (std::vector<std::string>{"toy0", "toy1", "toy2"}));
    crops.push_back(sample_crop(data[3], 4, rng));
    EXPECT_THROW(stack_pairs(crops), ShapeMismatch);

    auto draw = [&](std::uint64_t seed) {
        Rng r(seed);
        std::vector<float> out;
        for (int i = 0; i < 5; ++i) {
            const auto p = augment(sample_crop(data[r.below(4)], 8, r), r);
            out.insert(out.end(), p.lr.data().begin(), p.lr.data().end());
        }
        return out;
    };
    EXPECT_EQ(draw(11), draw(11));
    EXPECT_NE(draw(11), draw(12));
}

TEST(Synthetic, DeterministicStructuredImages) {
    const auto a = synthetic_images(8, 64, 0), b = synthetic_images(8, 64, 0);
    ASSERT_EQ(a.size(), 8u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].values(), b[i].values());
        EXPECT_EQ(a[i].shape(), (Shape{3, 64, 64}));
        for (float v : a[i].data()) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
        }
    }
    EXPECT_NE(synthetic_images(1, 64, 1)[0].values(), a[0].values());
    const auto pairs = synthetic_dataset(8, 64, 2, 0);
    EXPECT_EQ(pairs[5].id, "toy5");
    EXPECT_EQ(pairs[5].lr.shape(), (Shape{3, 32, 32}));
}
