// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// Lossless 8-bit grayscale PNG I/O (libpng).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mffu {

struct GrayImage {
  int w = 0, h = 0;
  std::vector<std::uint8_t> pixels;  // row-major, h*w entries
};

// Throws std::runtime_error on missing files or anything that is not an
// 8-bit single-channel grayscale PNG.
GrayImage load_gray8(const std::string& path);
void save_gray8(const std::string& path, const GrayImage& img);

}  // namespace mffu
