#pragma once

#include <string>

#include "derain/tensor.hpp"

namespace derain {

// Reads a PNG into [0,1] doubles. want_channels: 0 keeps the file's natural
// channel count (1 or 3), 1 forces grayscale, 3 forces RGB. Palette, 16-bit
// and alpha variants are converted on the fly.
Tensor read_png(const std::string& path, int want_channels = 0);

// Writes a 1- or 3-channel tensor as an 8-bit PNG. Values are clamped to
// [0,1] and quantized to k/255.
void write_png(const std::string& path, const Tensor& img);

// Snaps values onto the 8-bit grid (round(v*255)/255) without touching disk.
Tensor quantize8(const Tensor& img);

} // namespace derain
