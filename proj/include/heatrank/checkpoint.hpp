#pragma once

#include <string>

#include "heatrank/model.hpp"

namespace heatrank {

// Single-file container: 8-byte magic, little-endian u64 JSON length, JSON
// header (format version, layer list with shapes, metadata), then all
// parameters as little-endian 64-bit floats in layer order. Weights load
// back bit-identical.
void save_model(const std::string& path, const Model& m, const std::string& meta_json = "{}");

struct LoadedModel {
    Model model;
    std::string meta_json;
};

// Throws IoError naming the path for missing files, bad magic, version or
// shape mismatches, and truncated payloads.
LoadedModel load_model(const std::string& path);

}  // namespace heatrank
