#include "heatrank/segmentation.hpp"

#include <cmath>

#include "heatrank/error.hpp"

namespace heatrank {

namespace {

struct Features {
    // Parallel arrays per foreground pixel, plus the flat pixel index.
    std::vector<int> px, py, pidx;
    std::vector<double> c0, c1, c2;
};

Features collect_features(const Tensor& image, const std::vector<uint8_t>& fg, double ratio) {
    const int H = image.dim(1), W = image.dim(2);
    const size_t plane = static_cast<size_t>(H) * W;
    Features f;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const size_t p = static_cast<size_t>(y) * W + x;
            if (!fg[p]) continue;
            f.px.push_back(x);
            f.py.push_back(y);
            f.pidx.push_back(static_cast<int>(p));
            f.c0.push_back(ratio * 255.0 * image[p]);
            f.c1.push_back(ratio * 255.0 * image[plane + p]);
            f.c2.push_back(ratio * 255.0 * image[2 * plane + p]);
        }
    return f;
}

std::vector<double> joint_density(const Features& f, double kernel_size) {
    const size_t n = f.px.size();
    std::vector<double> density(n, 0.0);
    const double inv = 1.0 / (2.0 * kernel_size * kernel_size);
    for (size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < n; ++j) {
            const double dx = f.px[i] - f.px[j], dy = f.py[i] - f.py[j];
            const double d0 = f.c0[i] - f.c0[j], d1 = f.c1[i] - f.c1[j], d2 = f.c2[i] - f.c2[j];
            acc += std::exp(-(dx * dx + dy * dy + d0 * d0 + d1 * d1 + d2 * d2) * inv);
        }
        density[i] = acc;
    }
    return density;
}

// Density order is made strict by index so roots are unique even under
// exact floating-point ties (symmetric images produce them).
inline bool denser(const std::vector<double>& d, size_t j, size_t i) {
    return d[j] > d[i] || (d[j] == d[i] && j < i);
}

}  // namespace

SegmentMap quickshift(const Tensor& image, const std::vector<uint8_t>& fg,
                      const SegmentationParams& params) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw InvalidArgument("quickshift expects a [3,H,W] image, got " + image.shape_str());
    const int H = image.dim(1), W = image.dim(2);
    if (fg.size() != static_cast<size_t>(H) * W)
        throw InvalidArgument("quickshift mask size does not match image");
    if (params.kernel_size <= 0 || params.max_dist <= 0 || params.ratio < 0)
        throw InvalidArgument("quickshift parameters must be positive");

    Features f = collect_features(image, fg, params.ratio);
    const size_t n = f.px.size();
    if (n == 0) throw InvalidArgument("quickshift: empty foreground");

    // Map from flat pixel index to feature index, for windowed search.
    std::vector<int> lookup(static_cast<size_t>(H) * W, -1);
    for (size_t i = 0; i < n; ++i) lookup[static_cast<size_t>(f.pidx[i])] = static_cast<int>(i);

    const std::vector<double> density = joint_density(f, params.kernel_size);

    SegmentMap map;
    map.h = H;
    map.w = W;
    map.ids.assign(static_cast<size_t>(H) * W, 0);

    double max_dist = params.max_dist;
    while (true) {
        // Link each pixel to the nearest strictly-denser neighbor within
        // max_dist. The joint distance includes color, so the spatial
        // search window of ceil(max_dist) is a superset of candidates.
        std::vector<int> parent(n);
        const int r = static_cast<int>(std::ceil(max_dist));
        const double max_d2 = max_dist * max_dist;
        for (size_t i = 0; i < n; ++i) {
            parent[static_cast<size_t>(i)] = static_cast<int>(i);
            double best_d2 = max_d2;
            int best = -1;
            for (int dy = -r; dy <= r; ++dy) {
                const int yy = f.py[i] + dy;
                if (yy < 0 || yy >= H) continue;
                for (int dx = -r; dx <= r; ++dx) {
                    const int xx = f.px[i] + dx;
                    if (xx < 0 || xx >= W) continue;
                    const int j = lookup[static_cast<size_t>(yy) * W + xx];
                    if (j < 0 || static_cast<size_t>(j) == i) continue;
                    if (!denser(density, static_cast<size_t>(j), i)) continue;
                    const double d0 = f.c0[i] - f.c0[static_cast<size_t>(j)];
                    const double d1 = f.c1[i] - f.c1[static_cast<size_t>(j)];
                    const double d2c = f.c2[i] - f.c2[static_cast<size_t>(j)];
                    const double d2 = static_cast<double>(dx) * dx + static_cast<double>(dy) * dy +
                                      d0 * d0 + d1 * d1 + d2c * d2c;
                    // Strict < keeps the lowest linear index among ties
                    // because the scan runs in linear pixel order.
                    if (d2 <= max_d2 && (best < 0 || d2 < best_d2 ||
                                         (d2 == best_d2 && f.pidx[static_cast<size_t>(j)] < f.pidx[static_cast<size_t>(best)]))) {
                        best_d2 = d2;
                        best = j;
                    }
                }
            }
            if (best >= 0) parent[i] = best;
        }

        // Path-compress to roots, then number the trees in linear order.
        std::vector<int> root(n);
        for (size_t i = 0; i < n; ++i) {
            int cur = static_cast<int>(i);
            while (parent[static_cast<size_t>(cur)] != cur) cur = parent[static_cast<size_t>(cur)];
            root[i] = cur;
        }
        std::vector<int> seg_of_root(n, 0);
        int count = 0;
        for (size_t i = 0; i < n; ++i)
            if (root[i] == static_cast<int>(i)) seg_of_root[i] = ++count;
        map.count = count;
        for (size_t i = 0; i < n; ++i)
            map.ids[static_cast<size_t>(f.pidx[i])] = seg_of_root[static_cast<size_t>(root[i])];

        if (params.min_foreground_segments <= 0 || count >= params.min_foreground_segments ||
            max_dist < 1.0)
            break;
        max_dist /= 2.0;
    }
    return map;
}

std::vector<std::vector<int>> segment_members(const SegmentMap& map) {
    std::vector<std::vector<int>> members(static_cast<size_t>(map.count) + 1);
    for (size_t p = 0; p < map.ids.size(); ++p)
        members[static_cast<size_t>(map.ids[p])].push_back(static_cast<int>(p));
    return members;
}

}  // namespace heatrank
