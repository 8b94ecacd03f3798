#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "heatrank/error.hpp"
#include "heatrank/heatmap.hpp"
#include "heatrank/model.hpp"
#include "heatrank/segmentation.hpp"
#include "heatrank/tensor.hpp"

namespace heatrank {

// Thrown when a metric is undefined for a particular input (near-zero
// target probability, single-class annotation, no positive relevance).
// Callers skip the image and record the reason; this never signals a bug.
class MetricUndefined : public Error {
  public:
    using Error::Error;
};

enum class Direction { higher_better, lower_better };

std::string to_string(Direction d);
Direction direction_from_string(const std::string& s);

// One aggregated cell of the metric table.
struct MetricScore {
    std::string metric;
    std::string method;
    std::string pooling;
    double mean = 0.0;
    double sem = 0.0;
    int n = 0;
    Direction direction = Direction::higher_better;
};

// Normalized probability curve of a flipping run. x is strictly
// increasing with x[0] == 0, v[0] == 1, and every v in [0, 1].
struct FlipCurve {
    std::vector<double> x;
    std::vector<double> v;
};

struct FlipResult {
    double score = 0.0;
    FlipCurve curve;
};

// Area under 1 - curve over [0, x_max] divided by x_max, with the final
// partial segment interpolated linearly. Exposed for the flipping tests.
double flip_area(const FlipCurve& curve, double x_max);

// Pixel flipping: sorts foreground pixels of the pooled map by relevance
// (descending, ties broken by seeded uniform noise of width 1e-9 times the
// value range), replaces them in batches of 1% of the foreground with the
// per-channel foreground mean, and scores the area lost from the clamped
// normalized probability curve over the first `fraction` of pixels.
// Higher is better. Throws MetricUndefined when p_target(image) is ~0.
FlipResult pixel_flipping(const Model& m, const Tensor& image, const PooledMap& map, int target,
                          std::uint64_t seed, double fraction = 0.2);

// IROF: flips whole segments in order of descending mean relevance (ties
// broken by lower segment id) and integrates 1 - curve over the normalized
// segment count in [0, 1]. Higher is better. Requires at least two
// foreground segments.
FlipResult irof(const Model& m, const Tensor& image, const PooledMap& map, const SegmentMap& segments,
                int target);

// Average sensitivity: mean over `samples` draws of
// ||e(x + delta) - e(x)||_2 / ||e(x)||_2 where delta is uniform in the
// L-inf ball of `radius` on foreground pixels (all channels) and e is
// whatever map `explainer` returns (per-channel or pooled). Lower is
// better. Throws MetricUndefined when ||e(x)|| == 0.
double avg_sensitivity(const Tensor& image, const std::vector<std::uint8_t>& fg,
                       const std::function<Tensor(const Tensor&)>& explainer, double radius,
                       int samples, std::uint64_t seed);

// Shannon entropy (nats) of |relevance| normalized to a distribution over
// the foreground. Lower is better. Throws MetricUndefined when the map is
// all zero.
double complexity(const PooledMap& map);

// Rank-based AUC of the pooled map against a per-pixel annotation in
// {-1, 0, +1} (negative, neutral, positive), restricted to the foreground.
// With two classes present this is the mid-rank Mann-Whitney AUC treating
// the higher class as positive; with three it is the Hand-Till mean of the
// three pairwise AUCs under the ordering negative < neutral < positive.
// Higher is better. Throws MetricUndefined when only one class is present.
double roc_auc(const PooledMap& map, const std::vector<std::int8_t>& annotation);

// Fraction of the positive relevance mass that falls inside the positive
// annotation mask. Higher is better. Throws MetricUndefined when the map
// has no positive relevance.
double relevance_mass_accuracy(const PooledMap& map, const std::vector<std::uint8_t>& positive_mask);

// Mean and standard error (ddof-1 standard deviation over sqrt(n)); the
// sem of a single observation is 0. Rejects empty input.
std::pair<double, double> mean_sem(const std::vector<double>& xs);

}  // namespace heatrank
