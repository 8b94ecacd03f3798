#pragma once

#include <string>
#include <vector>

#include "heatrank/model.hpp"
#include "heatrank/tensor.hpp"

namespace heatrank {

// Relevance redistribution rules for convolution layers. Stabilizer is
// sign(z)*epsilon on every denominator; bias never enters a denominator,
// which keeps each layer conservative up to the stabilizer.
enum class ConvRule { epsilon, zplus, gamma, alpha2beta1, flat, zbox };

struct LrpParams {
    double epsilon = 1e-6;
    double gamma = 0.25;
    double box_lo = 0.0, box_hi = 1.0;  // input value bounds for the box rule
};

// Composite: one rule for the convolution closest to the input, one for the
// remaining convolutions; dense layers always use the epsilon rule.
struct LrpComposite {
    ConvRule first_conv = ConvRule::flat;
    ConvRule other_conv = ConvRule::zplus;
    LrpParams params;
};

// Maps an explainer method id to its composite.
LrpComposite lrp_composite_from_id(const std::string& method_id);

// Per-layer relevance propagation on batch-of-one tensors ([1,C,H,W] in,
// matching output shapes).
Tensor lrp_conv(const Conv2d& l, const Tensor& in, const Tensor& rel_out, ConvRule rule,
                const LrpParams& p);
Tensor lrp_dense_epsilon(const Dense& l, const Tensor& in, const Tensor& rel_out, double epsilon);
Tensor lrp_gap(const Tensor& in, const Tensor& rel_out, double epsilon);
Tensor lrp_maxpool(const Tensor& in, const Tensor& rel_out, const std::vector<int>& argmax);

// Full backward relevance pass seeded with the target logit. The model must
// not contain BatchNorm layers (canonize first). Returns [C,H,W] relevance.
Tensor lrp_explain(const Model& m, const Tensor& image, int target, const LrpComposite& comp);

}  // namespace heatrank
