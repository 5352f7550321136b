#include "geossl/evalkit.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

namespace geossl::io {

void write_png_gray(const std::string& path, const Tensor& img) {
    GEOSSL_CHECK(img.ndim() == 2, "write_png_gray: 2-D tensor required");
    const int h = img.rows(), w = img.cols();

    std::FILE* fp = std::fopen(path.c_str(), "wb");
    GEOSSL_CHECK(fp != nullptr, "cannot open PNG for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        fail("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        fail("libpng write failed for " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(static_cast<size_t>(w));
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double v = img.at(r, c);
            v = v < 0 ? 0 : (v > 1 ? 1 : v);
            row[static_cast<size_t>(c)] = static_cast<unsigned char>(v * 255.0 + 0.5);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace geossl::io
