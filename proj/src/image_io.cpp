#include "sad/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

namespace sad {
namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint8_t to_byte(double v) {
    if (!(v > 0)) return 0;
    if (v >= 1) return 255;
    return static_cast<uint8_t>(std::lround(v * 255.0));
}

int ppm_next_token(FILE* f) {
    // skips whitespace and '#' comments, returns a nonnegative integer
    int c;
    for (;;) {
        c = std::fgetc(f);
        if (c == '#') {
            while (c != '\n' && c != EOF) c = std::fgetc(f);
        } else if (c != EOF && !std::isspace(c)) {
            break;
        } else if (c == EOF) {
            throw format_error("ppm: truncated header");
        }
    }
    int val = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        val = val * 10 + (c - '0');
        any = true;
        c = std::fgetc(f);
    }
    if (!any) throw format_error("ppm: malformed header");
    return val;
}

ImageBuffer load_pnm(FILE* f, char kind) {
    int w = ppm_next_token(f);
    int h = ppm_next_token(f);
    int maxval = ppm_next_token(f);
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw format_error("ppm: bad header");
    int channels = kind == '6' ? 3 : 1;
    size_t samples = static_cast<size_t>(w) * h * channels;
    int bytes_per = maxval > 255 ? 2 : 1;
    std::vector<uint8_t> raw(samples * bytes_per);
    if (std::fread(raw.data(), 1, raw.size(), f) != raw.size())
        throw format_error("ppm: truncated pixel data");
    ImageBuffer img;
    img.resize(w, h);
    double inv = 1.0 / maxval;
    for (size_t i = 0; i < static_cast<size_t>(w) * h; i++) {
        for (int c = 0; c < 3; c++) {
            size_t s = i * channels + (channels == 3 ? c : 0);
            int v = bytes_per == 1 ? raw[s] : (raw[2 * s] << 8 | raw[2 * s + 1]);
            img.data[3 * i + c] = v * inv;
        }
    }
    return img;
}

ImageBuffer load_png_file(FILE* f, const std::string& path) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw format_error("png: init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw format_error("png: init failed");
    }
    std::vector<uint8_t> pixels;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw format_error("png: failed to read " + path);
    }
    png_init_io(png, f);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int depth = png_get_bit_depth(png, info);
    int color = png_get_color_type(png, info);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    size_t stride = png_get_rowbytes(png, info);
    pixels.resize(stride * h);
    rows.resize(h);
    for (png_uint_32 yy = 0; yy < h; yy++) rows[yy] = pixels.data() + stride * yy;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    if (stride < static_cast<size_t>(w) * 3) throw format_error("png: unexpected row layout");
    ImageBuffer img;
    img.resize(static_cast<int>(w), static_cast<int>(h));
    for (png_uint_32 yy = 0; yy < h; yy++)
        for (png_uint_32 xx = 0; xx < w; xx++)
            for (int c = 0; c < 3; c++)
                img.at(xx, yy)[c] = pixels[stride * yy + 3 * xx + c] / 255.0;
    return img;
}

} // namespace

ImageBuffer load_image(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw format_error("cannot open " + path);
    uint8_t magic[2] = {0, 0};
    if (std::fread(magic, 1, 2, f.get()) != 2) throw format_error("empty file " + path);
    if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6'))
        return load_pnm(f.get(), static_cast<char>(magic[1]));
    if (magic[0] == 0x89 && magic[1] == 'P') {
        std::rewind(f.get());
        return load_png_file(f.get(), path);
    }
    throw format_error("unsupported image format: " + path);
}

void save_png(const std::string& path, const ImageBuffer& img) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw format_error("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        throw format_error("png: init failed");
    }
    std::vector<uint8_t> row(3 * static_cast<size_t>(img.width));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw format_error("png: failed to write " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int yy = 0; yy < img.height; yy++) {
        for (int xx = 0; xx < img.width; xx++)
            for (int c = 0; c < 3; c++) row[3 * xx + c] = to_byte(img.at(xx, yy)[c]);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void save_ppm(const std::string& path, const ImageBuffer& img) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw format_error("cannot write " + path);
    std::fprintf(f.get(), "P6\n%d %d\n255\n", img.width, img.height);
    std::vector<uint8_t> row(3 * static_cast<size_t>(img.width));
    for (int yy = 0; yy < img.height; yy++) {
        for (int xx = 0; xx < img.width; xx++)
            for (int c = 0; c < 3; c++) row[3 * xx + c] = to_byte(img.at(xx, yy)[c]);
        if (std::fwrite(row.data(), 1, row.size(), f.get()) != row.size())
            throw format_error("short write: " + path);
    }
}

void save_png_gray(const std::string& path, const std::vector<double>& v, int w, int h) {
    ImageBuffer img;
    img.resize(w, h);
    for (size_t i = 0; i < static_cast<size_t>(w) * h; i++)
        img.data[3 * i] = img.data[3 * i + 1] = img.data[3 * i + 2] = v[i];
    save_png(path, img);
}

void save_pgm(const std::string& path, const std::vector<double>& v, int w, int h) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw format_error("cannot write " + path);
    std::fprintf(f.get(), "P5\n%d %d\n255\n", w, h);
    std::vector<uint8_t> row(static_cast<size_t>(w));
    for (int yy = 0; yy < h; yy++) {
        for (int xx = 0; xx < w; xx++) row[xx] = to_byte(v[static_cast<size_t>(yy) * w + xx]);
        if (std::fwrite(row.data(), 1, row.size(), f.get()) != row.size())
            throw format_error("short write: " + path);
    }
}

bool has_suffix(const std::string& path, const std::string& suffix) {
    if (path.size() < suffix.size()) return false;
    for (size_t i = 0; i < suffix.size(); i++) {
        char a = path[path.size() - suffix.size() + i];
        char b = suffix[i];
        if (std::tolower(static_cast<unsigned char>(a)) != std::tolower(static_cast<unsigned char>(b)))
            return false;
    }
    return true;
}

void save_image(const std::string& path, const ImageBuffer& img) {
    if (has_suffix(path, ".ppm"))
        save_ppm(path, img);
    else
        save_png(path, img);
}

} // namespace sad
