#pragma once
#include "sad/types.hpp"

#include <string>
#include <vector>

namespace sad {

// Reads PNG (any color type, 8/16 bit) or binary PPM/PGM, selected by file
// magic. Values are mapped to [0,1] by dividing by the sample maximum; no
// transfer-function conversion is applied.
ImageBuffer load_image(const std::string& path);

// 8-bit RGB output; values clamped to [0,1] and rounded.
void save_png(const std::string& path, const ImageBuffer& img);
void save_ppm(const std::string& path, const ImageBuffer& img);

// Grayscale helpers for diagnostic maps (values clamped to [0,1]).
void save_png_gray(const std::string& path, const std::vector<double>& v, int w, int h);
void save_pgm(const std::string& path, const std::vector<double>& v, int w, int h);

bool has_suffix(const std::string& path, const std::string& suffix);

// Writes PNG or PPM depending on the path suffix (defaults to PNG).
void save_image(const std::string& path, const ImageBuffer& img);

} // namespace sad
