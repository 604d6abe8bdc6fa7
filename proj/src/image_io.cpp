#include "derain/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "derain/util.hpp"

namespace derain {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

constexpr double kLumR = 0.299, kLumG = 0.587, kLumB = 0.114;

} // namespace

Tensor read_png(const std::string& path, int want_channels) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open PNG '" + path + "'");

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw IoError("'" + path + "' is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    std::vector<png_bytep> rows;
    std::vector<png_byte> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
        png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int ch = static_cast<int>(png_get_channels(png, info));
    if (ch != 1 && ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported channel count in '" + path + "'");
    }

    pixels.resize(static_cast<size_t>(h) * w * ch);
    rows.resize(h);
    for (int y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<size_t>(y) * w * ch;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    const int out_c = want_channels == 0 ? ch : want_channels;
    Tensor img(out_c, h, w);
    for (int y = 0; y < h; ++y) {
        const png_byte* row = pixels.data() + static_cast<size_t>(y) * w * ch;
        for (int x = 0; x < w; ++x) {
            double r, g, b;
            if (ch == 1) {
                r = g = b = row[x] / 255.0;
            } else {
                r = row[3 * x + 0] / 255.0;
                g = row[3 * x + 1] / 255.0;
                b = row[3 * x + 2] / 255.0;
            }
            if (out_c == 1) {
                img.at(0, y, x) = ch == 1 ? r : std::clamp(kLumR * r + kLumG * g + kLumB * b, 0.0, 1.0);
            } else {
                img.at(0, y, x) = r;
                img.at(1, y, x) = g;
                img.at(2, y, x) = b;
            }
        }
    }
    return img;
}

void write_png(const std::string& path, const Tensor& img) {
    if (img.c != 1 && img.c != 3)
        throw ValidationError("write_png: image must have 1 or 3 channels, got " +
                              std::to_string(img.c));
    if (img.h <= 0 || img.w <= 0) throw ValidationError("write_png: empty image");

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open '" + path + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    std::vector<png_byte> pixels(static_cast<size_t>(img.h) * img.w * img.c);
    std::vector<png_bytep> rows(img.h);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode PNG '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.w, img.h, 8,
                 img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);

    for (int y = 0; y < img.h; ++y) {
        png_byte* row = pixels.data() + static_cast<size_t>(y) * img.w * img.c;
        for (int x = 0; x < img.w; ++x)
            for (int ci = 0; ci < img.c; ++ci) {
                const double v = std::clamp(img.at(ci, y, x), 0.0, 1.0);
                row[img.c * x + ci] = static_cast<png_byte>(std::lround(v * 255.0));
            }
        rows[y] = row;
    }
    png_set_rows(png, info, rows.data());
    png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor quantize8(const Tensor& img) {
    Tensor out = img;
    for (double& v : out.v) v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    return out;
}

} // namespace derain
