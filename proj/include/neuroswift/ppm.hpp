#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "neuroswift/tensor.hpp"

namespace neuroswift {

// 8-bit binary PPM (P6) after min-max normalization of the [3 x H x W]
// image to [0, 255]. A constant image maps to mid-gray.
inline void write_ppm(const std::filesystem::path& path, const Tensor& img) {
    if (img.ndim() != 3 || img.dim(0) != 3) throw DimensionError("write_ppm: expected [3 x H x W]");
    const std::size_t h = img.dim(1), w = img.dim(2);
    double lo = img[0], hi = img[0];
    for (std::size_t i = 0; i < img.numel(); ++i) {
        lo = std::min(lo, img[i]);
        hi = std::max(hi, img[i]);
    }
    const double span = hi - lo;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("write_ppm: cannot open " + path.string());
    f << "P6\n" << w << " " << h << "\n255\n";
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = span > 0.0 ? (img.at3(c, i, j) - lo) / span : 0.5;
                const int byte = static_cast<int>(std::lround(v * 255.0));
                f.put(static_cast<char>(std::clamp(byte, 0, 255)));
            }
    if (!f) throw IoError("write_ppm: write failed for " + path.string());
}

}  // namespace neuroswift
