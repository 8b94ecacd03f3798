#include "heatrank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "heatrank/rng.hpp"

namespace heatrank {

namespace {

constexpr double kTinyProb = 1e-12;

bool in_fg(const std::vector<std::uint8_t>& fg, size_t i) { return fg.empty() || fg[i] != 0; }

std::vector<int> fg_indices(const std::vector<std::uint8_t>& fg, size_t plane) {
    std::vector<int> idx;
    idx.reserve(plane);
    for (size_t i = 0; i < plane; ++i)
        if (in_fg(fg, i)) idx.push_back(static_cast<int>(i));
    return idx;
}

// Foreground pixel indices sorted by map value descending; ties are broken
// by seeded uniform noise of width 1e-9 times the value range so equal
// values flip in a reproducible but unbiased order.
std::vector<int> noisy_desc_order(const std::vector<double>& v, const std::vector<int>& idx,
                                  std::uint64_t seed) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (int i : idx) {
        lo = std::min(lo, v[static_cast<size_t>(i)]);
        hi = std::max(hi, v[static_cast<size_t>(i)]);
    }
    const double eta = 1e-9 * (hi - lo);
    Rng rng(seed);
    std::vector<double> key(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) {
        const double noise = eta > 0.0 ? rng.uniform(-eta, eta) : 0.0;
        key[k] = v[static_cast<size_t>(idx[k])] + noise;
    }
    std::vector<int> order(idx.size());
    for (size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return key[a] > key[b]; });
    std::vector<int> out(idx.size());
    for (size_t k = 0; k < order.size(); ++k) out[k] = idx[static_cast<size_t>(order[k])];
    return out;
}

double checked_p0(const Model& m, const Tensor& image, int target) {
    if (target < 0 || target >= m.classes)
        throw InvalidArgument("target class " + std::to_string(target) + " out of range");
    const double p0 = predict_probs(m, image)[static_cast<size_t>(target)];
    if (p0 <= kTinyProb)
        throw MetricUndefined("target probability is ~0, flipping curve undefined");
    return p0;
}

void check_map_matches(const Tensor& image, const PooledMap& map) {
    if (image.rank() != 3) throw InvalidArgument("image must be [C,H,W]");
    if (map.h != image.dim(1) || map.w != image.dim(2))
        throw InvalidArgument("pooled map does not match image size");
    if (map.v.size() != static_cast<size_t>(map.h) * map.w)
        throw InvalidArgument("pooled map value count does not match its size");
}

}  // namespace

std::string to_string(Direction d) {
    return d == Direction::higher_better ? "higher-better" : "lower-better";
}

Direction direction_from_string(const std::string& s) {
    if (s == "higher-better") return Direction::higher_better;
    if (s == "lower-better") return Direction::lower_better;
    throw InvalidArgument("unknown direction: " + s);
}

double flip_area(const FlipCurve& curve, double x_max) {
    if (curve.x.size() != curve.v.size() || curve.x.empty())
        throw InvalidArgument("malformed flip curve");
    if (!(x_max > 0.0)) throw InvalidArgument("integration bound must be positive");
    double area = 0.0;
    for (size_t j = 0; j + 1 < curve.x.size(); ++j) {
        const double x0 = curve.x[j], x1 = curve.x[j + 1];
        if (x1 <= x0) throw InvalidArgument("flip curve x must be strictly increasing");
        if (x0 >= x_max) break;
        const double hi = std::min(x1, x_max);
        const auto vat = [&](double x) {
            const double t = (x - x0) / (x1 - x0);
            return curve.v[j] + t * (curve.v[j + 1] - curve.v[j]);
        };
        area += 0.5 * ((1.0 - vat(x0)) + (1.0 - vat(hi))) * (hi - x0);
    }
    if (x_max > curve.x.back()) area += (1.0 - curve.v.back()) * (x_max - curve.x.back());
    return area / x_max;
}

FlipResult pixel_flipping(const Model& m, const Tensor& image, const PooledMap& map, int target,
                          std::uint64_t seed, double fraction) {
    check_map_matches(image, map);
    if (!(fraction > 0.0) || fraction > 1.0)
        throw InvalidArgument("flip fraction must be in (0, 1]");
    const size_t plane = map.v.size();
    const std::vector<int> idx = fg_indices(map.fg, plane);
    const int n = static_cast<int>(idx.size());
    if (n == 0) throw InvalidArgument("empty foreground mask");

    const double p0 = checked_p0(m, image, target);
    const std::vector<int> order = noisy_desc_order(map.v, idx, seed_mix(seed, "pixel-flipping"));
    const std::vector<double> fill = foreground_channel_means(
        image, map.fg.empty() ? std::vector<std::uint8_t>(plane, 1) : map.fg);

    const int batch = std::max(1, n / 100);
    const int need = std::min(n, static_cast<int>(std::ceil(fraction * n)));
    const int nbatches = (need + batch - 1) / batch;
    const int ch = image.dim(0);

    Tensor scratch = image;
    std::vector<Tensor> flips;
    flips.reserve(static_cast<size_t>(nbatches));
    std::vector<double> xs;
    int flipped = 0;
    for (int b = 0; b < nbatches; ++b) {
        const int end = std::min(n, flipped + batch);
        for (; flipped < end; ++flipped) {
            const size_t pix = static_cast<size_t>(order[static_cast<size_t>(flipped)]);
            for (int c = 0; c < ch; ++c)
                scratch[static_cast<size_t>(c) * plane + pix] = fill[static_cast<size_t>(c)];
        }
        flips.push_back(scratch);
        xs.push_back(static_cast<double>(flipped) / n);
    }

    const std::vector<double> probs = batched_target_probs(m, flips, target);
    FlipResult r;
    r.curve.x = {0.0};
    r.curve.v = {1.0};
    for (size_t j = 0; j < probs.size(); ++j) {
        r.curve.x.push_back(xs[j]);
        r.curve.v.push_back(std::clamp(probs[j] / p0, 0.0, 1.0));
    }
    r.score = flip_area(r.curve, fraction);
    return r;
}

FlipResult irof(const Model& m, const Tensor& image, const PooledMap& map,
                const SegmentMap& segments, int target) {
    check_map_matches(image, map);
    if (segments.h != map.h || segments.w != map.w)
        throw InvalidArgument("segment map does not match image size");
    if (segments.count < 2) throw MetricUndefined("needs at least two foreground segments");

    const std::vector<std::vector<int>> members = segment_members(segments);
    std::vector<double> seg_mean(static_cast<size_t>(segments.count) + 1, 0.0);
    for (int s = 1; s <= segments.count; ++s) {
        const auto& px = members[static_cast<size_t>(s)];
        if (px.empty()) throw InvalidArgument("segment map has an empty segment");
        double acc = 0.0;
        for (int i : px) acc += map.v[static_cast<size_t>(i)];
        seg_mean[static_cast<size_t>(s)] = acc / static_cast<double>(px.size());
    }
    std::vector<int> order(static_cast<size_t>(segments.count));
    for (int s = 0; s < segments.count; ++s) order[static_cast<size_t>(s)] = s + 1;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return seg_mean[static_cast<size_t>(a)] > seg_mean[static_cast<size_t>(b)];
    });

    const double p0 = checked_p0(m, image, target);
    const size_t plane = map.v.size();
    const std::vector<double> fill = foreground_channel_means(
        image, map.fg.empty() ? std::vector<std::uint8_t>(plane, 1) : map.fg);
    const int ch = image.dim(0);

    Tensor scratch = image;
    std::vector<Tensor> flips;
    flips.reserve(order.size());
    for (int s : order) {
        for (int i : members[static_cast<size_t>(s)])
            for (int c = 0; c < ch; ++c)
                scratch[static_cast<size_t>(c) * plane + static_cast<size_t>(i)] =
                    fill[static_cast<size_t>(c)];
        flips.push_back(scratch);
    }

    const std::vector<double> probs = batched_target_probs(m, flips, target);
    FlipResult r;
    r.curve.x = {0.0};
    r.curve.v = {1.0};
    for (size_t j = 0; j < probs.size(); ++j) {
        r.curve.x.push_back(static_cast<double>(j + 1) / segments.count);
        r.curve.v.push_back(std::clamp(probs[j] / p0, 0.0, 1.0));
    }
    r.score = flip_area(r.curve, 1.0);
    return r;
}

double avg_sensitivity(const Tensor& image, const std::vector<std::uint8_t>& fg,
                       const std::function<Tensor(const Tensor&)>& explainer, double radius,
                       int samples, std::uint64_t seed) {
    if (image.rank() != 3) throw InvalidArgument("image must be [C,H,W]");
    if (samples < 1) throw InvalidArgument("sensitivity needs at least one sample");
    if (radius < 0.0) throw InvalidArgument("perturbation radius must be >= 0");
    const size_t plane = static_cast<size_t>(image.dim(1)) * image.dim(2);
    if (!fg.empty() && fg.size() != plane)
        throw InvalidArgument("mask size does not match image");
    const int ch = image.dim(0);

    const Tensor e0 = explainer(image);
    double n0 = 0.0;
    for (size_t i = 0; i < e0.size(); ++i) n0 += e0[i] * e0[i];
    n0 = std::sqrt(n0);
    if (n0 == 0.0) throw MetricUndefined("explanation norm is zero");

    Rng rng(seed_mix(seed, "sensitivity"));
    double acc = 0.0;
    for (int s = 0; s < samples; ++s) {
        Tensor xp = image;
        for (size_t i = 0; i < plane; ++i) {
            if (!in_fg(fg, i)) continue;
            for (int c = 0; c < ch; ++c)
                xp[static_cast<size_t>(c) * plane + i] += rng.uniform(-radius, radius);
        }
        const Tensor e1 = explainer(xp);
        if (e1.size() != e0.size())
            throw InvalidArgument("explainer returned maps of different sizes");
        double d = 0.0;
        for (size_t i = 0; i < e0.size(); ++i) {
            const double diff = e1[i] - e0[i];
            d += diff * diff;
        }
        acc += std::sqrt(d) / n0;
    }
    return acc / static_cast<double>(samples);
}

double complexity(const PooledMap& map) {
    double total = 0.0;
    for (size_t i = 0; i < map.v.size(); ++i)
        if (in_fg(map.fg, i)) total += std::fabs(map.v[i]);
    if (total <= 0.0) throw MetricUndefined("map has no relevance mass");
    double h = 0.0;
    for (size_t i = 0; i < map.v.size(); ++i) {
        if (!in_fg(map.fg, i)) continue;
        const double p = std::fabs(map.v[i]) / total;
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

double roc_auc(const PooledMap& map, const std::vector<std::int8_t>& annotation) {
    if (annotation.size() != map.v.size())
        throw InvalidArgument("annotation size does not match map");
    std::vector<std::pair<double, int>> entries;  // (value, class)
    bool present[3] = {false, false, false};
    for (size_t i = 0; i < map.v.size(); ++i) {
        if (!in_fg(map.fg, i)) continue;
        const int c = annotation[i];
        if (c < -1 || c > 1) throw InvalidArgument("annotation values must be in {-1, 0, +1}");
        present[c + 1] = true;
        entries.emplace_back(map.v[i], c);
    }
    const int npresent = present[0] + present[1] + present[2];
    if (npresent < 2) throw MetricUndefined("annotation has a single class, AUC undefined");

    // Mid-rank Mann-Whitney AUC of class hi against class lo.
    const auto pair_auc = [&](int lo, int hi) {
        std::vector<std::pair<double, bool>> xs;
        double n_hi = 0.0, n_lo = 0.0;
        for (const auto& e : entries) {
            if (e.second == hi) {
                xs.emplace_back(e.first, true);
                n_hi += 1.0;
            } else if (e.second == lo) {
                xs.emplace_back(e.first, false);
                n_lo += 1.0;
            }
        }
        std::sort(xs.begin(), xs.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        double sum_hi = 0.0;
        size_t i = 0;
        while (i < xs.size()) {
            size_t j = i;
            while (j < xs.size() && xs[j].first == xs[i].first) ++j;
            const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
            for (size_t k = i; k < j; ++k)
                if (xs[k].second) sum_hi += midrank;
            i = j;
        }
        return (sum_hi - n_hi * (n_hi + 1.0) / 2.0) / (n_hi * n_lo);
    };

    std::vector<int> classes;
    for (int c = -1; c <= 1; ++c)
        if (present[c + 1]) classes.push_back(c);
    if (classes.size() == 2) return pair_auc(classes[0], classes[1]);
    return (pair_auc(-1, 0) + pair_auc(-1, 1) + pair_auc(0, 1)) / 3.0;
}

double relevance_mass_accuracy(const PooledMap& map,
                               const std::vector<std::uint8_t>& positive_mask) {
    if (positive_mask.size() != map.v.size())
        throw InvalidArgument("annotation mask size does not match map");
    double inside = 0.0, total = 0.0;
    for (size_t i = 0; i < map.v.size(); ++i) {
        if (!in_fg(map.fg, i)) continue;
        const double v = map.v[i];
        if (v <= 0.0) continue;
        total += v;
        if (positive_mask[i]) inside += v;
    }
    if (total <= 0.0) throw MetricUndefined("map has no positive relevance");
    return inside / total;
}

std::pair<double, double> mean_sem(const std::vector<double>& xs) {
    if (xs.empty()) throw InvalidArgument("mean of an empty sample");
    // Identical observations have zero spread even when the rounded mean
    // drifts an ulp off the common value.
    if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); }))
        return {xs.front(), 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() == 1) return {mean, 0.0};
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size() - 1);
    return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

}  // namespace heatrank
