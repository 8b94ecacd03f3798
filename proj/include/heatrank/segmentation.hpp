#pragma once

#include <cstdint>
#include <vector>

#include "heatrank/tensor.hpp"

namespace heatrank {

struct SegmentationParams {
    // Gaussian bandwidth of the density estimate, in joint feature units.
    double kernel_size = 25.0;
    // Maximum joint-space distance for a link; pixels with no higher-density
    // neighbor within this radius become tree roots.
    double max_dist = 10.0;
    // Color weight. Features are (x, y, ratio*255*r, ratio*255*g, ratio*255*b);
    // the 8-bit color scale keeps kernel_size/max_dist meaningful for
    // unit-range float images.
    double ratio = 0.5;
    // When a foreground yields fewer segments than this, the linking is
    // retried with max_dist halved until the floor is met. 0 disables.
    int min_foreground_segments = 0;
};

struct SegmentMap {
    int h = 0, w = 0;
    std::vector<int> ids;  // per pixel; 0 is reserved for background
    int count = 0;         // foreground segments carry ids 1..count
};

// Quickshift over the foreground: mode-seeking on a Gaussian density in the
// joint (space, color) feature space. Each pixel links to its nearest
// neighbor of higher density within max_dist; ties in density order and in
// distance resolve toward the lower linear pixel index, so the result is a
// pure function of (image, mask, params).
SegmentMap quickshift(const Tensor& image, const std::vector<uint8_t>& fg,
                      const SegmentationParams& params);

// Pixel indices per segment id (index 0 collects background pixels).
std::vector<std::vector<int>> segment_members(const SegmentMap& map);

}  // namespace heatrank
