#pragma once

#include <string>

#include "ctld/tensor.hpp"

namespace ctld {

/// H x W x 3 float image in [0,1] <-> 8-bit RGB PNG.
Tensor<float> read_png_rgb(const std::string& path);
void write_png_rgb(const std::string& path, const Tensor<float>& image);

}  // namespace ctld
