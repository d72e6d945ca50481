#pragma once

// 8-bit RGB image I/O (PNG) and bilinear resize into normalized frames.

#include <string>
#include <vector>

#include "cavad/tensor.hpp"

namespace cavad {

struct ImageU8 {
    int h = 0;
    int w = 0;
    std::vector<unsigned char> px;  // row-major, 3 bytes per pixel (RGB)

    ImageU8() = default;
    ImageU8(int h_, int w_) : h(h_), w(w_), px(static_cast<size_t>(h_) * w_ * 3, 0) {}
    unsigned char& at(int y, int x, int c) {
        return px[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(c)];
    }
    unsigned char at(int y, int x, int c) const {
        return px[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(c)];
    }
};

// Decodes any 8/16-bit PNG into RGB8 (palette expanded, alpha stripped).
ImageU8 read_png(const std::string& path);

// Encodes RGB8 with fixed settings so identical pixels give identical bytes.
void write_png(const std::string& path, const ImageU8& img);

// Bilinear resize (half-pixel centers) to size x size x 3, then [0,255] -> [-1,1].
Tensor preprocess_frame(const ImageU8& img, int frame_size);

}  // namespace cavad
