#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heatrank/synth.hpp"
#include "heatrank/tensor.hpp"

namespace heatrank {

struct DatasetConfig {
    std::string root;
    // Either explicit per-split counts, or a single total split 60:20:20
    // (train gets total*6/10, val total*2/10, test the remainder).
    int train_count = 0, val_count = 0, test_count = 0;
    int total = 0;
    DefectKind kind = DefectKind::discolor;
    double severity_lo = 0.4, severity_hi = 1.0;
    double negative_fraction = 0.25;  // of defect images
    uint64_t seed = 0;
    int h = 64, w = 64;
    std::string config_hash;  // recorded in the manifest and PNG text chunks
};

struct ItemRecord {
    std::string id;
    int label = 0;
    double severity = 0.0;
    bool has_negative = false;
    std::string png, sidecar, mask;  // paths relative to the dataset root
};

struct DatasetManifest {
    int schema_version = 1;
    std::string root;
    std::string defect_kind;
    uint64_t seed = 0;
    int h = 64, w = 64;
    std::string config_hash;
    std::vector<ItemRecord> train, val, test;

    const std::vector<ItemRecord>& split(const std::string& name) const;
    std::vector<ItemRecord>& split(const std::string& name);
};

// In-memory sample; image values are the float32 on-disk precision.
struct Sample {
    std::string id;
    int label = 0;
    double severity = 0.0;
    std::vector<float> image;  // 3*h*w planar
    std::vector<uint8_t> fg;
    std::vector<int8_t> ann;

    Tensor tensor(int h, int w) const;  // double [3,h,w]
};

struct SampleSet {
    int ch = 3, h = 64, w = 64;
    std::vector<Sample> items;
};

// Renders every item, writes PNG + float sidecar + annotation mask under
// <root>/{train,val,test}/, and writes <root>/manifest.json. Two builds
// with the same config produce identical manifests and tensors.
DatasetManifest build_dataset(const DatasetConfig& cfg);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// Loads one split's tensors from the sidecars; the foreground mask is
// recomputed from the image, the annotation comes from the mask PNG.
SampleSet load_split(const DatasetManifest& m, const std::string& split);

// {0,128,255} <-> {-1,0,+1} annotation encoding used by the mask PNGs.
uint8_t encode_annotation(int8_t v);
int8_t decode_annotation(uint8_t v, const std::string& context);

}  // namespace heatrank
