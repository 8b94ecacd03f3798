#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "heatrank/error.hpp"
#include "heatrank/model.hpp"
#include "heatrank/tensor.hpp"

namespace heatrank {

enum class AugKind { brightness, hue, saturation, rotate, scale, translate };

AugKind aug_kind_from_string(const std::string& s);
std::string to_string(AugKind k);
const std::vector<AugKind>& all_aug_kinds();

// Geometric kinds move pixels, so the reference explanation is warped the
// same way (equivariance); color kinds leave it unchanged (invariance).
bool aug_is_geometric(AugKind k);

// Parameter value that leaves the image untouched (1 for scale, else 0).
double aug_identity(AugKind k);

// Largest half-width the calibration search may reach.
double aug_domain_bound(AugKind k);

struct AugImage {
    Tensor image;
    std::vector<std::uint8_t> fg;
};

// Applies one augmentation at the given parameter value.
//   brightness: adds value/255 to every foreground channel, clamped to [0,1]
//   hue:        rotates the foreground hue by value degrees in HSV space
//   saturation: scales the foreground saturation by (1 + value/255), clamped
//   rotate:     rotates by value degrees about the image center
//   scale:      scales by the factor value about the image center
//   translate:  shifts by (value*W, value*H) pixels
// Geometric kinds resample bilinearly (zero outside), re-threshold the
// warped mask at 0.5, and zero the image outside the new mask. The identity
// value returns the input bit for bit.
AugImage apply_augmentation(const Tensor& image, const std::vector<std::uint8_t>& fg, AugKind kind,
                            double value);

// The identical geometric warp applied to one relevance plane (bilinear,
// zero outside); color kinds return the plane unchanged.
std::vector<double> warp_plane(const std::vector<double>& plane, int h, int w, AugKind kind,
                               double value);

// k equidistant parameter values centered exactly on the identity and
// spanning [identity - half_width, identity + half_width]. k must be odd
// and at least 3 so the identity lands on the grid.
std::vector<double> augmentation_grid(AugKind kind, double half_width, int k = 11);

struct CalibrationResult {
    double half_width = 0.0;
    // Set when even the full domain never reaches the target drop (for
    // example on a constant model); half_width is then the domain bound.
    bool hit_domain_bound = false;
    // Mean probability drop at the worse endpoint of the returned interval.
    double achieved_drop = 0.0;
};

// Bisects the half-width of a symmetric parameter interval until the mean
// probability drop at the worse endpoint reaches target_drop (within
// 0.005). Callers pass correctly classified images with their labels as
// targets. target_drop must be positive.
CalibrationResult calibrate_interval(const Model& m, const std::vector<Tensor>& images,
                                     const std::vector<std::vector<std::uint8_t>>& fgs,
                                     const std::vector<int>& targets, AugKind kind,
                                     double target_drop = 0.1);

// Pearson correlation; throws MetricUndefined (declared with the metrics)
// when either side has zero variance or fewer than two points.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct RobustnessOutcome {
    double score = 0.0;
    std::vector<double> grid;
    // Both curves are shifted additively so their maximum is exactly 1.
    std::vector<double> correlation;
    std::vector<double> probability;
};

// Mean-pooled explanation plane for an image and its mask.
using PlaneExplainer =
    std::function<std::vector<double>(const Tensor&, const std::vector<std::uint8_t>&)>;

// Sweeps the augmentation grid, correlates the explanation of each
// augmented image with the reference (the base explanation, warped for
// geometric kinds) over the foreground intersection, shifts the curve so
// its maximum is exactly 1, and divides its area by the area of the
// equally shifted clamped probability curve. The score is clamped at 0.
// Zero-variance explanations and ~0 target probability raise
// MetricUndefined so callers can skip the image with a reason.
RobustnessOutcome robustness_score(const Model& m, const Tensor& image,
                                   const std::vector<std::uint8_t>& fg, int target,
                                   const PlaneExplainer& explainer, AugKind kind,
                                   double half_width, int k = 11);

}  // namespace heatrank
