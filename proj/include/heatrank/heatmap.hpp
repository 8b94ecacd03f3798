#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heatrank/tensor.hpp"

namespace heatrank {

// Per-pixel relevance for one image and one target class, one value per
// input channel. The foreground mask travels with the map so pooled maps
// and statistics know which pixels count.
struct Heatmap {
    Tensor values;  // [3,H,W]
    std::string method;
    int target = 0;
    std::vector<uint8_t> fg;  // H*W
};

enum class Pooling { mean, max, max_abs, l2 };

Pooling pooling_from_string(const std::string& s);
std::string to_string(Pooling p);

// Whether maps pooled this way keep the sign of the relevance.
inline bool pooling_signed(Pooling p) { return p == Pooling::mean || p == Pooling::max; }

struct PooledMap {
    std::vector<double> v;  // H*W
    int h = 0, w = 0;
    Pooling pooling = Pooling::mean;
    bool signed_values = true;
    std::vector<uint8_t> fg;
};

// mean: (1/C) sum_c R_c; max: max_c R_c; max-abs: max_c |R_c|;
// l2: sqrt((1/C) sum_c R_c^2).
PooledMap pool_channels(const Heatmap& map, Pooling pooling);

enum class NormStat { max, percentile99 };
enum class NormScope { per_image, per_set };

NormStat norm_stat_from_string(const std::string& s);
NormScope norm_scope_from_string(const std::string& s);

// The statistic over |values| of the foreground pixels. percentile-99 is
// the order statistic at ceil(0.99*n)-1 of the ascending sorted values.
double norm_statistic(const std::vector<double>& abs_fg_values, NormStat stat);

// Divides by the statistic and clips to [-1,1]. per_set uses one statistic
// pooled over every map's foreground. A zero statistic zeroes the output.
void normalize_maps(std::vector<PooledMap>& maps, NormStat stat, NormScope scope);

// Rank-transform aggregation: foreground values of each map are ranked
// (ties broken by uniform noise of magnitude 1e-9 times the map's value
// range), ranks map through the standard normal quantile at (r-0.5)/n, and
// the transformed maps are averaged pixelwise. Maps must share dimensions,
// foreground, and sign class; mixing signed with sign-less maps is
// rejected. Deterministic in (inputs, seed).
PooledMap aggregate_maps(const std::vector<PooledMap>& maps, uint64_t seed);

// Standard normal quantile (Acklam's approximation plus one Halley
// refinement); |p| in (0,1).
double normal_quantile(double p);

// Per-channel mean of a [C,H,W] image over the foreground pixels. The
// shared fill value for occlusion, masking, and flipping perturbations.
std::vector<double> foreground_channel_means(const Tensor& image, const std::vector<uint8_t>& fg);

// Red (-1) over white (0) to green (+1); values are assumed normalized.
// Rounding is half away from zero, so 0.5 renders as (128,255,128).
std::vector<uint8_t> render_rgb(const PooledMap& map);

}  // namespace heatrank
