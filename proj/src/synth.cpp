#include "heatrank/synth.hpp"

#include <algorithm>
#include <cmath>

#include "heatrank/error.hpp"
#include "heatrank/rng.hpp"

namespace heatrank {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Bilinear value noise on a coarse lattice; one independent field per call.
struct ValueNoise {
    int gw, gh, spacing;
    std::vector<double> grid;

    ValueNoise(Rng& rng, int w, int h, int spacing_) : spacing(spacing_) {
        gw = w / spacing + 2;
        gh = h / spacing + 2;
        grid.resize(static_cast<size_t>(gw) * gh);
        for (double& v : grid) v = rng.uniform(-1.0, 1.0);
    }

    double at(int x, int y) const {
        const double fx = static_cast<double>(x) / spacing, fy = static_cast<double>(y) / spacing;
        const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
        const double tx = fx - x0, ty = fy - y0;
        auto g = [&](int gx, int gy) { return grid[static_cast<size_t>(gy) * gw + gx]; };
        const double a = g(x0, y0) * (1 - tx) + g(x0 + 1, y0) * tx;
        const double b = g(x0, y0 + 1) * (1 - tx) + g(x0 + 1, y0 + 1) * tx;
        return a * (1 - ty) + b * ty;
    }
};

struct Ellipse {
    double cx, cy, a, b, cos_t, sin_t;

    // Normalized elliptical radius; <= 1 means inside.
    double radius(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double u = dx * cos_t + dy * sin_t;
        const double v = -dx * sin_t + dy * cos_t;
        return std::sqrt((u / a) * (u / a) + (v / b) * (v / b));
    }
};

size_t count_positive(const std::vector<int8_t>& ann) {
    size_t n = 0;
    for (int8_t v : ann) n += v > 0;
    return n;
}

}  // namespace

DefectKind defect_kind_from_string(const std::string& s) {
    if (s == "discolor") return DefectKind::discolor;
    if (s == "skin-patch") return DefectKind::skin_patch;
    throw InvalidArgument("unknown defect kind '" + s + "' (expected discolor or skin-patch)");
}

std::string to_string(DefectKind k) {
    return k == DefectKind::discolor ? "discolor" : "skin-patch";
}

SynthKernel generate_kernel(uint64_t seed, const KernelParams& params) {
    const int W = params.w, H = params.h;
    if (W < 16 || H < 16) throw InvalidArgument("kernel canvas too small");
    Rng rng(seed);

    SynthKernel out;
    out.h = H;
    out.w = W;
    out.image.assign(static_cast<size_t>(3) * H * W, 0.0f);
    out.fg.assign(static_cast<size_t>(H) * W, 0);
    out.ann.assign(static_cast<size_t>(H) * W, 0);

    // Kernel silhouette: a tilted ellipse with low-frequency boundary wobble.
    const double cx = W / 2.0 + rng.uniform(-3.0, 3.0);
    const double cy = H / 2.0 + rng.uniform(-3.0, 3.0);
    const double a = rng.uniform(0.33, 0.40) * W;
    const double b = rng.uniform(0.19, 0.24) * H;
    const double theta = rng.uniform(-25.0, 25.0) * kPi / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double ph1 = rng.uniform(0, 2 * kPi), ph2 = rng.uniform(0, 2 * kPi);

    const double base_r = 0.63 + rng.uniform(-0.05, 0.05);
    const double base_g = 0.52 + rng.uniform(-0.05, 0.05);
    const double base_b = 0.33 + rng.uniform(-0.04, 0.04);
    const double shade_dir = rng.uniform() < 0.5 ? 1.0 : -1.0;

    ValueNoise coarse(rng, W, H, 8);
    ValueNoise medium(rng, W, H, 3);
    Rng fine_rng(seed_mix(seed, "fine"));

    std::vector<double> img(static_cast<size_t>(3) * H * W, 0.0);
    const size_t plane = static_cast<size_t>(H) * W;

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double u = dx * ct + dy * st;
            const double v = -dx * st + dy * ct;
            const double r = std::sqrt((u / a) * (u / a) + (v / b) * (v / b));
            const double phi = std::atan2(v / b, u / a);
            const double rlim = 1.0 + 0.07 * std::sin(3 * phi + ph1) + 0.05 * std::sin(5 * phi + ph2);
            // Fine noise is drawn for every pixel so the stream position
            // does not depend on the silhouette.
            const double f0 = fine_rng.uniform(-1.0, 1.0);
            const double f1 = fine_rng.uniform(-1.0, 1.0);
            if (r > rlim) continue;

            const size_t p = static_cast<size_t>(y) * W + x;
            out.fg[p] = 1;

            const double shade = 0.92 + 0.10 * shade_dir * (u / a);
            const double vignette = 1.0 - 0.22 * (r / rlim) * (r / rlim);
            const double crease = 1.0 - 0.16 * std::exp(-(v * v) / (1.8 * 1.8));
            const double tex = 0.05 * coarse.at(x, y) + 0.03 * medium.at(x, y) + 0.012 * f0;
            const double mul = shade * vignette * crease;
            img[p] = base_r * mul + tex + 0.006 * f1;
            img[plane + p] = base_g * mul + tex;
            img[2 * plane + p] = base_b * mul + tex - 0.006 * f1;
        }
    }

    const auto fg_count = static_cast<double>(std::count(out.fg.begin(), out.fg.end(), uint8_t{1}));
    if (fg_count < 64) throw InvalidArgument("degenerate kernel silhouette");

    auto random_fg_point = [&]() -> std::pair<double, double> {
        for (int tries = 0; tries < 1000; ++tries) {
            const int x = rng.index(W), y = rng.index(H);
            if (out.fg[static_cast<size_t>(y) * W + x]) return {static_cast<double>(x), static_cast<double>(y)};
        }
        return {cx, cy};
    };

    const bool defect = params.severity > 0.0;
    if (defect) {
        const double sev = std::min(params.severity, 1.0);
        double target_frac;
        std::vector<Ellipse> blobs;
        if (params.kind == DefectKind::discolor) {
            target_frac = std::clamp(0.04 + 0.30 * sev, 0.02, 0.38);
            const int nblobs = 1 + (rng.uniform() < 0.4 ? 1 : 0);
            for (int i = 0; i < nblobs; ++i) {
                auto [bx, by] = random_fg_point();
                const double ratio = rng.uniform(0.6, 1.6);
                const double bt = rng.uniform(0, kPi);
                const double area = target_frac * fg_count / nblobs;
                const double rb = std::sqrt(area / (kPi * ratio));
                blobs.push_back({bx, by, std::max(1.5, rb * ratio), std::max(1.5, rb),
                                 std::cos(bt), std::sin(bt)});
            }
        } else {
            // Skin patch sits near one end of the major axis.
            target_frac = std::clamp(0.06 + 0.26 * sev, 0.02, 0.38);
            const double end = rng.uniform() < 0.5 ? 0.55 : -0.55;
            const double ex = cx + end * a * ct, ey = cy + end * a * st;
            const double area = target_frac * fg_count;
            const double rb = std::sqrt(area / (kPi * 1.3));
            blobs.push_back({ex, ey, std::max(2.0, rb * 1.3), std::max(2.0, rb), ct, st});
        }

        // Scale blob radii until the positive fraction hits the target band.
        std::vector<double> rmin(plane, 1e9);
        auto measure = [&]() {
            std::fill(rmin.begin(), rmin.end(), 1e9);
            size_t inside = 0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const size_t p = static_cast<size_t>(y) * W + x;
                    if (!out.fg[p]) continue;
                    for (const Ellipse& e : blobs) rmin[p] = std::min(rmin[p], e.radius(x, y));
                    inside += rmin[p] <= 1.0;
                }
            return inside / fg_count;
        };
        double frac = measure();
        for (int iter = 0; iter < 10 && !(frac >= std::max(0.02, target_frac * 0.8) && frac <= 0.40); ++iter) {
            const double scale = std::sqrt(target_frac / std::max(frac, 1.0 / fg_count));
            const double capped = std::clamp(scale, 0.6, 2.5);
            for (Ellipse& e : blobs) {
                e.a *= capped;
                e.b *= capped;
            }
            frac = measure();
        }
        // The 40% ceiling is a hard contract; shrink until it holds.
        while (frac > 0.40) {
            for (Ellipse& e : blobs) {
                e.a *= 0.85;
                e.b *= 0.85;
            }
            frac = measure();
        }

        const bool skin = params.kind == DefectKind::skin_patch;
        const double pink[3] = {0.94, 0.56, 0.68};
        const double pale[3] = {0.88, 0.82, 0.70};
        const double* dst = skin ? pale : pink;
        Rng patch_rng(seed_mix(seed, "patch"));
        for (size_t p = 0; p < plane; ++p) {
            if (!out.fg[p] || rmin[p] > 1.0) continue;
            out.ann[p] = 1;
            const double fall = 1.0 - rmin[p];
            const double w = sev * (skin ? 0.5 + 0.5 * fall : 0.4 + 0.6 * fall * fall);
            for (int c = 0; c < 3; ++c) {
                double& px = img[static_cast<size_t>(c) * plane + p];
                px += w * (dst[c] - px);
                if (skin) px += 0.008 * patch_rng.uniform(-1.0, 1.0);
            }
        }

        // The labeling contract needs at least a sliver of positive area.
        if (count_positive(out.ann) < static_cast<size_t>(0.02 * fg_count)) {
            // Grow the first blob until the floor is met.
            Ellipse& e = blobs[0];
            while (count_positive(out.ann) < static_cast<size_t>(0.02 * fg_count) && e.a < W) {
                e.a *= 1.3;
                e.b *= 1.3;
                for (size_t p = 0; p < plane; ++p) {
                    if (!out.fg[p] || out.ann[p]) continue;
                    const int x = static_cast<int>(p % static_cast<size_t>(W));
                    const int y = static_cast<int>(p / static_cast<size_t>(W));
                    if (e.radius(x, y) <= 1.0) {
                        out.ann[p] = 1;
                        const double w = sev * 0.4;
                        for (int c = 0; c < 3; ++c) {
                            double& px = img[static_cast<size_t>(c) * plane + p];
                            px += w * (dst[c] - px);
                        }
                    }
                }
            }
        }

        if (params.negative_region) {
            // A healthy-looking region the annotator marked as counter
            // evidence; pixels keep their appearance.
            for (int tries = 0; tries < 40; ++tries) {
                auto [nx, ny] = random_fg_point();
                const double nr = rng.uniform(3.0, 6.0);
                Ellipse neg{nx, ny, nr * 1.2, nr, 1.0, 0.0};
                bool clean = true;
                std::vector<size_t> hits;
                for (size_t p = 0; p < plane; ++p) {
                    if (!out.fg[p]) continue;
                    const int x = static_cast<int>(p % static_cast<size_t>(W));
                    const int y = static_cast<int>(p / static_cast<size_t>(W));
                    if (neg.radius(x, y) <= 1.0) {
                        if (out.ann[p] != 0) {
                            clean = false;
                            break;
                        }
                        hits.push_back(p);
                    }
                }
                if (clean && hits.size() >= 12) {
                    for (size_t p : hits) out.ann[p] = -1;
                    break;
                }
            }
        }
    }

    // Foreground pixels stay strictly positive so the mask is recoverable
    // from the image; background stays exactly zero.
    for (size_t p = 0; p < plane; ++p) {
        for (int c = 0; c < 3; ++c) {
            double& px = img[static_cast<size_t>(c) * plane + p];
            px = out.fg[p] ? std::clamp(px, 0.02, 1.0) : 0.0;
            out.image[static_cast<size_t>(c) * plane + p] = static_cast<float>(px);
        }
    }

    out.label = count_positive(out.ann) > 0 ? 1 : 0;
    return out;
}

}  // namespace heatrank
