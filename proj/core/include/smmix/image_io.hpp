#pragma once

#include <algorithm>
#include <fstream>
#include <string>

#include "smmix/error.hpp"
#include "smmix/tensor.hpp"

namespace smmix {

// Writes a [C x H x W] tensor with values in [0,1] as binary PPM (C == 3)
// or PGM (C == 1).
template <class S>
void write_image(const Tensor<S>& image, const std::string& path) {
  if (image.ndim() != 3) throw DimensionError("write_image: expects [C x H x W]");
  const int C = image.shape()[0], H = image.shape()[1], W = image.shape()[2];
  if (C != 1 && C != 3) throw DimensionError("write_image: 1 or 3 channels only");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << (C == 3 ? "P6" : "P5") << '\n' << W << ' ' << H << "\n255\n";
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        double v = static_cast<double>(image.value()[(static_cast<std::size_t>(c) * H + y) * W + x]);
        os.put(static_cast<char>(std::clamp(static_cast<int>(v * 255.0 + 0.5), 0, 255)));
      }
  if (!os) throw IoError("write failure on " + path);
}

}  // namespace smmix
