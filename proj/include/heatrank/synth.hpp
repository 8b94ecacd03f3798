#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace heatrank {

enum class DefectKind { discolor, skin_patch };

DefectKind defect_kind_from_string(const std::string& s);
std::string to_string(DefectKind k);

struct KernelParams {
    DefectKind kind = DefectKind::discolor;
    double severity = 0.0;        // <= 0 renders a healthy kernel
    bool negative_region = false; // add an annotator counter-evidence region
    int h = 64, w = 64;
};

// One rendered grain kernel. The image is channel-planar RGB in [0,1],
// stored as float32 (the on-disk precision, so round trips are exact).
// Background pixels are exactly 0 in all channels; foreground pixels are
// >= 0.02 in every channel, which is what makes the foreground mask
// recoverable from the image alone.
struct SynthKernel {
    std::vector<float> image;  // 3*h*w
    std::vector<uint8_t> fg;   // h*w, 1 = foreground
    std::vector<int8_t> ann;   // h*w, -1 negative / 0 neutral / +1 positive
    int label = 0;             // 1 when any positive annotation exists
    int h = 64, w = 64;
};

// Deterministic in (seed, params): equal calls return identical kernels.
// Positive annotations cover 2..40% of the foreground for severity > 0.
SynthKernel generate_kernel(uint64_t seed, const KernelParams& params);

}  // namespace heatrank
