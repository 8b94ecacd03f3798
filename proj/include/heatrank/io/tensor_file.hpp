#pragma once

#include <string>

#include "heatrank/tensor.hpp"

namespace heatrank::tio {

// Float-tensor sidecar container: magic, little-endian dims, JSON metadata,
// then the payload as little-endian float32. Values written from a double
// tensor are quantized to float32 once; re-loading reproduces those floats
// bit-identically.
void save_f32(const std::string& path, const Tensor& t, const std::string& meta_json = "{}");

struct LoadedTensor {
    Tensor t;
    std::string meta_json;
};

LoadedTensor load(const std::string& path);

}  // namespace heatrank::tio
