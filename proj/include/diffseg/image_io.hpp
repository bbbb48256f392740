#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "diffseg/errors.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

namespace detail {

struct file_closer {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using file_ptr = std::unique_ptr<std::FILE, file_closer>;

inline void png_error_fn(png_structp png, png_const_charp msg) {
    (void)msg;
    longjmp(png_jmpbuf(png), 1);
}
inline void png_warn_fn(png_structp, png_const_charp) {}

}  // namespace detail

inline std::uint16_t quantize16(double v) {
    if (v <= 0.0) return 0;
    if (v >= 1.0) return 65535;
    return static_cast<std::uint16_t>(std::lround(v * 65535.0));
}

// Writes (h, w, c) values in [0,1] as a 16-bit PNG. c = 1 gives grayscale,
// c = 3 gives RGB. Values map linearly, 0.0 <-> 0 and 1.0 <-> 65535.
inline void write_png16(const std::string& path, const tensor& img) {
    if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3))
        throw shape_error("write_png16: expected (h,w,1) or (h,w,3), got " + img.shape_str());
    const int h = img.dim(0), w = img.dim(1), c = img.dim(2);

    detail::file_ptr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw io_error("write_png16: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                              detail::png_error_fn, detail::png_warn_fn);
    if (!png) throw io_error("write_png16: png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw io_error("write_png16: png_create_info_struct failed");
    }

    std::vector<std::uint16_t> rows(static_cast<size_t>(h) * w * c);
    for (long i = 0; i < img.size(); ++i) rows[static_cast<size_t>(i)] = quantize16(img[i]);
    std::vector<png_bytep> row_ptrs(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y)
        row_ptrs[static_cast<size_t>(y)] =
            reinterpret_cast<png_bytep>(rows.data() + static_cast<size_t>(y) * w * c);

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("write_png16: libpng failure writing " + path);
    }

    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 16,
                 c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_set_swap(png);  // rows are host little-endian
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Reads an 8- or 16-bit grayscale/RGB PNG into (h, w, c) doubles in [0,1].
inline tensor read_png(const std::string& path) {
    detail::file_ptr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw io_error("read_png: cannot open " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw format_error("read_png: not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                             detail::png_error_fn, detail::png_warn_fn);
    if (!png) throw io_error("read_png: png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw io_error("read_png: png_create_info_struct failed");
    }

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw format_error("read_png: libpng failure reading " + path);
    }

    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_uint_32 w = 0, h = 0;
    int bit_depth = 0, color_type = 0;
    png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (bit_depth == 16) png_set_swap(png);
    png_read_update_info(png, info);

    png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);
    const int c = (color_type == PNG_COLOR_TYPE_GRAY) ? 1 : 3;
    if (color_type != PNG_COLOR_TYPE_GRAY && color_type != PNG_COLOR_TYPE_RGB) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw format_error("read_png: unsupported color type in " + path);
    }

    tensor out({static_cast<int>(h), static_cast<int>(w), c});
    if (bit_depth == 16) {
        std::vector<std::uint16_t> rows(static_cast<size_t>(h) * w * c);
        std::vector<png_bytep> row_ptrs(h);
        for (png_uint_32 y = 0; y < h; ++y)
            row_ptrs[y] = reinterpret_cast<png_bytep>(rows.data() + static_cast<size_t>(y) * w * c);
        png_read_image(png, row_ptrs.data());
        for (long i = 0; i < out.size(); ++i) out[i] = rows[static_cast<size_t>(i)] / 65535.0;
    } else {
        std::vector<std::uint8_t> rows(static_cast<size_t>(h) * w * c);
        std::vector<png_bytep> row_ptrs(h);
        for (png_uint_32 y = 0; y < h; ++y)
            row_ptrs[y] = rows.data() + static_cast<size_t>(y) * w * c;
        png_read_image(png, row_ptrs.data());
        for (long i = 0; i < out.size(); ++i) out[i] = rows[static_cast<size_t>(i)] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

// 8-bit RGB writer for rendered charts.
inline void write_png8_rgb(const std::string& path, const std::vector<std::uint8_t>& rgb,
                           int h, int w) {
    if (rgb.size() != static_cast<size_t>(h) * w * 3)
        throw shape_error("write_png8_rgb: buffer size mismatch");
    detail::file_ptr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw io_error("write_png8_rgb: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                              detail::png_error_fn, detail::png_warn_fn);
    if (!png) throw io_error("write_png8_rgb: png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw io_error("write_png8_rgb: png_create_info_struct failed");
    }
    std::vector<png_bytep> row_ptrs(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y)
        row_ptrs[static_cast<size_t>(y)] =
            const_cast<png_bytep>(rgb.data() + static_cast<size_t>(y) * w * 3);

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("write_png8_rgb: libpng failure writing " + path);
    }
    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace diffseg
