#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heatrank/heatmap.hpp"
#include "heatrank/lrp.hpp"
#include "heatrank/model.hpp"
#include "heatrank/segmentation.hpp"
#include "heatrank/tensor.hpp"

namespace heatrank {

// A method id plus its hyperparameters. method_spec() fills the documented
// defaults; callers override fields afterwards (e.g. fewer path steps).
struct MethodSpec {
    std::string id;
    int ig_steps = 64;          // path integration steps, midpoint rule
    int occlusion_window = 3;   // odd spatial window edge, all channels at once
    int lime_samples = 1000;
    int shap_samples = 1000;
    double lime_kernel_width = 0.25;  // exponential kernel on cosine distance
    double ridge_lambda = 1e-3;
    double anchor_weight = 1e6;  // weight of the all-on/all-off rows
    LrpParams lrp;
};

MethodSpec method_spec(const std::string& id);

// Every method id, aggregation last.
const std::vector<std::string>& all_method_ids();

bool method_needs_segments(const std::string& id);  // lime, kernel-shap
// Perturbation methods attribute the softmax probability; gradient and
// relevance methods attribute the logit.
bool method_uses_probability(const std::string& id);
bool method_is_lrp(const std::string& id);

// One heatmap for (model, image, target). segments may be null unless the
// method needs them. mean-aggregate is not computable per image and is
// rejected; the batch evaluator derives it from the other methods' pooled
// maps. Pure given (spec, model, image, seed); background forced to 0.
Heatmap explain(const MethodSpec& spec, const Model& m, const Tensor& image,
                const std::vector<uint8_t>& fg, int target, const SegmentMap* segments,
                uint64_t seed);

// Bilinear plane resize, pixel-center alignment, edge clamped.
std::vector<double> bilinear_resize(const std::vector<double>& src, int sh, int sw, int dh, int dw);

}  // namespace heatrank
