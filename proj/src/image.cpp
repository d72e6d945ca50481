#include "cavad/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace cavad {

namespace {

struct FileCloser {
    FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

}  // namespace

ImageU8 read_png(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("read_png: cannot open " + path);
    FileCloser closer{f};

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("read_png: init failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("read_png: init failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: decode failure in " + path);
    }
    png_init_io(png, f);
    png_read_info(png, info);

    png_set_expand(png);  // palette/gray bit depths to 8-bit
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: could not normalize " + path + " to RGB");
    }

    ImageU8 img(h, w);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<size_t>(y)] = img.px.data() + static_cast<size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::string& path, const ImageU8& img) {
    if (img.h <= 0 || img.w <= 0 || img.px.size() != static_cast<size_t>(img.h) * img.w * 3)
        throw std::runtime_error("write_png: malformed image");
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("write_png: cannot open " + path);
    FileCloser closer{f};

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("write_png: init failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("write_png: init failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: encode failure for " + path);
    }
    png_init_io(png, f);
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(img.h));
    for (int y = 0; y < img.h; ++y)
        rows[static_cast<size_t>(y)] =
            const_cast<png_bytep>(img.px.data() + static_cast<size_t>(y) * img.w * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor preprocess_frame(const ImageU8& img, int frame_size) {
    if (img.px.size() != static_cast<size_t>(img.h) * img.w * 3 || img.h <= 0 || img.w <= 0)
        throw std::runtime_error("preprocess_frame: input is not an 8-bit RGB image");
    Tensor out({frame_size, frame_size, 3});
    const real sy = static_cast<real>(img.h) / frame_size;
    const real sx = static_cast<real>(img.w) / frame_size;
    for (int y = 0; y < frame_size; ++y) {
        real fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<real>(img.h - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, img.h - 1);
        const real wy = fy - y0;
        for (int x = 0; x < frame_size; ++x) {
            real fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<real>(img.w - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, img.w - 1);
            const real wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const real v00 = img.at(y0, x0, c), v01 = img.at(y0, x1, c);
                const real v10 = img.at(y1, x0, c), v11 = img.at(y1, x1, c);
                const real top = v00 + (v01 - v00) * wx;
                const real bot = v10 + (v11 - v10) * wx;
                const real v = top + (bot - top) * wy;
                out.at(y, x, c) = v / 127.5 - 1.0;
            }
        }
    }
    return out;
}

}  // namespace cavad
