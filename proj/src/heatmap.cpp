#include "heatrank/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "heatrank/error.hpp"
#include "heatrank/rng.hpp"

namespace heatrank {

Pooling pooling_from_string(const std::string& s) {
    if (s == "mean") return Pooling::mean;
    if (s == "max") return Pooling::max;
    if (s == "max-abs") return Pooling::max_abs;
    if (s == "l2") return Pooling::l2;
    throw InvalidArgument("unknown pooling: " + s);
}

std::string to_string(Pooling p) {
    switch (p) {
        case Pooling::mean: return "mean";
        case Pooling::max: return "max";
        case Pooling::max_abs: return "max-abs";
        case Pooling::l2: return "l2";
    }
    throw InvalidArgument("bad pooling enum");
}

NormStat norm_stat_from_string(const std::string& s) {
    if (s == "max") return NormStat::max;
    if (s == "percentile-99") return NormStat::percentile99;
    throw InvalidArgument("unknown normalization statistic: " + s);
}

NormScope norm_scope_from_string(const std::string& s) {
    if (s == "per-image") return NormScope::per_image;
    if (s == "per-set") return NormScope::per_set;
    throw InvalidArgument("unknown normalization scope: " + s);
}

PooledMap pool_channels(const Heatmap& map, Pooling pooling) {
    if (map.values.rank() != 3 || map.values.dim(0) != 3)
        throw InvalidArgument("pool_channels expects a [3,H,W] map, got " + map.values.shape_str());
    const int h = map.values.dim(1), w = map.values.dim(2);
    const int plane = h * w;
    if (!map.fg.empty() && static_cast<int>(map.fg.size()) != plane)
        throw InvalidArgument("foreground mask size does not match map");

    PooledMap out;
    out.h = h;
    out.w = w;
    out.pooling = pooling;
    out.signed_values = pooling_signed(pooling);
    out.fg = map.fg;
    out.v.assign(plane, 0.0);
    const double* d = map.values.data();
    for (int i = 0; i < plane; ++i) {
        const double a = d[i], b = d[plane + i], c = d[2 * plane + i];
        switch (pooling) {
            case Pooling::mean: out.v[i] = (a + b + c) / 3.0; break;
            case Pooling::max: out.v[i] = std::max(a, std::max(b, c)); break;
            case Pooling::max_abs:
                out.v[i] = std::max(std::fabs(a), std::max(std::fabs(b), std::fabs(c)));
                break;
            case Pooling::l2: out.v[i] = std::sqrt((a * a + b * b + c * c) / 3.0); break;
        }
    }
    return out;
}

double norm_statistic(const std::vector<double>& abs_fg_values, NormStat stat) {
    if (abs_fg_values.empty()) return 0.0;
    if (stat == NormStat::max) return *std::max_element(abs_fg_values.begin(), abs_fg_values.end());
    std::vector<double> sorted = abs_fg_values;
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<long>(sorted.size());
    long idx = static_cast<long>(std::ceil(0.99 * static_cast<double>(n))) - 1;
    idx = std::clamp(idx, 0L, n - 1);
    return sorted[static_cast<size_t>(idx)];
}

namespace {

std::vector<double> abs_fg(const PooledMap& m) {
    std::vector<double> out;
    out.reserve(m.v.size());
    for (size_t i = 0; i < m.v.size(); ++i) {
        if (m.fg.empty() || m.fg[i]) out.push_back(std::fabs(m.v[i]));
    }
    return out;
}

void scale_clip(PooledMap& m, double stat) {
    if (stat <= 0.0) {
        std::fill(m.v.begin(), m.v.end(), 0.0);
        return;
    }
    for (double& x : m.v) x = std::clamp(x / stat, -1.0, 1.0);
}

}  // namespace

void normalize_maps(std::vector<PooledMap>& maps, NormStat stat, NormScope scope) {
    if (maps.empty()) return;
    if (scope == NormScope::per_image) {
        for (auto& m : maps) scale_clip(m, norm_statistic(abs_fg(m), stat));
        return;
    }
    std::vector<double> all;
    for (const auto& m : maps) {
        auto v = abs_fg(m);
        all.insert(all.end(), v.begin(), v.end());
    }
    const double s = norm_statistic(all, stat);
    for (auto& m : maps) scale_clip(m, s);
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("normal_quantile needs p in (0,1)");

    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1.0 - plow;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= phigh) {
        const double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // One Halley step against the exact CDF tightens the tails.
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    x = x - u / (1.0 + x * u / 2.0);
    return x;
}

PooledMap aggregate_maps(const std::vector<PooledMap>& maps, uint64_t seed) {
    if (maps.size() < 2) throw InvalidArgument("aggregate_maps needs at least two maps");
    const PooledMap& first = maps.front();
    for (const auto& m : maps) {
        if (m.h != first.h || m.w != first.w)
            throw InvalidArgument("aggregate_maps: maps differ in size");
        if (m.fg != first.fg) throw InvalidArgument("aggregate_maps: maps differ in foreground");
        if (m.signed_values != first.signed_values)
            throw InvalidArgument("aggregate_maps: cannot mix signed and sign-less maps");
    }

    std::vector<int> fg_idx;
    for (size_t i = 0; i < first.v.size(); ++i) {
        if (first.fg.empty() || first.fg[i]) fg_idx.push_back(static_cast<int>(i));
    }
    const size_t n = fg_idx.size();
    if (n == 0) throw InvalidArgument("aggregate_maps: empty foreground");

    PooledMap out;
    out.h = first.h;
    out.w = first.w;
    out.pooling = first.pooling;
    out.signed_values = first.signed_values;
    out.fg = first.fg;
    out.v.assign(first.v.size(), 0.0);

    std::vector<double> keyed(n);
    std::vector<int> order(n);
    std::vector<double> transformed(n);
    for (size_t mi = 0; mi < maps.size(); ++mi) {
        const PooledMap& m = maps[mi];
        double lo = m.v[static_cast<size_t>(fg_idx[0])], hi = lo;
        for (int id : fg_idx) {
            lo = std::min(lo, m.v[static_cast<size_t>(id)]);
            hi = std::max(hi, m.v[static_cast<size_t>(id)]);
        }
        const double eta = 1e-9 * (hi - lo);
        Rng rng(seed_mix(seed, "aggregate", mi));
        for (size_t k = 0; k < n; ++k) {
            double noise = rng.uniform(-1.0, 1.0) * eta;
            keyed[k] = m.v[static_cast<size_t>(fg_idx[k])] + noise;
        }
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int x, int y) { return keyed[static_cast<size_t>(x)] < keyed[static_cast<size_t>(y)]; });
        for (size_t r = 0; r < n; ++r) {
            const double p = (static_cast<double>(r) + 0.5) / static_cast<double>(n);
            transformed[static_cast<size_t>(order[r])] = normal_quantile(p);
        }
        for (size_t k = 0; k < n; ++k)
            out.v[static_cast<size_t>(fg_idx[k])] += transformed[k] / static_cast<double>(maps.size());
    }
    return out;
}

std::vector<double> foreground_channel_means(const Tensor& image, const std::vector<uint8_t>& fg) {
    if (image.rank() != 3) throw InvalidArgument("image must be [C,H,W]");
    const int ch = image.dim(0);
    const size_t plane = static_cast<size_t>(image.dim(1)) * image.dim(2);
    if (fg.size() != plane) throw InvalidArgument("mask size does not match image");
    std::vector<double> means(static_cast<size_t>(ch), 0.0);
    size_t count = 0;
    for (size_t i = 0; i < plane; ++i) {
        if (!fg[i]) continue;
        ++count;
        for (int c = 0; c < ch; ++c) means[static_cast<size_t>(c)] += image[static_cast<size_t>(c) * plane + i];
    }
    if (count == 0) throw InvalidArgument("empty foreground mask");
    for (auto& m : means) m /= static_cast<double>(count);
    return means;
}

std::vector<uint8_t> render_rgb(const PooledMap& map) {
    std::vector<uint8_t> rgb(map.v.size() * 3, 0);
    for (size_t i = 0; i < map.v.size(); ++i) {
        if (!map.fg.empty() && !map.fg[i]) continue;  // background stays black
        const double v = std::clamp(map.v[i], -1.0, 1.0);
        const double fade = 255.0 * (1.0 - std::fabs(v));
        const auto q = static_cast<uint8_t>(std::lround(fade));
        if (v >= 0.0) {
            rgb[3 * i + 0] = q;
            rgb[3 * i + 1] = 255;
            rgb[3 * i + 2] = q;
        } else {
            rgb[3 * i + 0] = 255;
            rgb[3 * i + 1] = q;
            rgb[3 * i + 2] = q;
        }
    }
    return rgb;
}

}  // namespace heatrank
