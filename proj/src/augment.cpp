#include "heatrank/augment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "heatrank/metrics.hpp"

namespace heatrank {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTinyProb = 1e-12;

struct Hsv {
    double h, s, v;
};

Hsv rgb_to_hsv(double r, double g, double b) {
    const double maxc = std::max({r, g, b});
    const double minc = std::min({r, g, b});
    const double d = maxc - minc;
    Hsv out{0.0, 0.0, maxc};
    if (maxc > 0.0) out.s = d / maxc;
    if (d > 0.0) {
        if (maxc == r)
            out.h = 60.0 * std::fmod((g - b) / d, 6.0);
        else if (maxc == g)
            out.h = 60.0 * ((b - r) / d + 2.0);
        else
            out.h = 60.0 * ((r - g) / d + 4.0);
        if (out.h < 0.0) out.h += 360.0;
    }
    return out;
}

void hsv_to_rgb(const Hsv& in, double* r, double* g, double* b) {
    const double c = in.v * in.s;
    const double hp = in.h / 60.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double rr = 0.0, gg = 0.0, bb = 0.0;
    switch (static_cast<int>(std::floor(hp)) % 6) {
        case 0: rr = c; gg = x; break;
        case 1: rr = x; gg = c; break;
        case 2: gg = c; bb = x; break;
        case 3: gg = x; bb = c; break;
        case 4: rr = x; bb = c; break;
        default: rr = c; bb = x; break;
    }
    const double mm = in.v - c;
    *r = std::clamp(rr + mm, 0.0, 1.0);
    *g = std::clamp(gg + mm, 0.0, 1.0);
    *b = std::clamp(bb + mm, 0.0, 1.0);
}

double bilinear_at(const double* plane, int h, int w, double sy, double sx) {
    if (sx <= -1.0 || sy <= -1.0 || sx >= static_cast<double>(w) || sy >= static_cast<double>(h))
        return 0.0;
    const int x0 = static_cast<int>(std::floor(sx));
    const int y0 = static_cast<int>(std::floor(sy));
    const double tx = sx - x0, ty = sy - y0;
    double acc = 0.0;
    for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
            const int yy = y0 + dy, xx = x0 + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            acc += (dy ? ty : 1.0 - ty) * (dx ? tx : 1.0 - tx) *
                   plane[static_cast<size_t>(yy) * w + xx];
        }
    return acc;
}

// Source coordinates of the output pixel (y, x) under the inverse warp.
void source_coords(AugKind kind, double value, int h, int w, int y, int x, double* sy,
                   double* sx) {
    const double cx = (w - 1) * 0.5, cy = (h - 1) * 0.5;
    const double dx = x - cx, dy = y - cy;
    switch (kind) {
        case AugKind::rotate: {
            const double a = value * kPi / 180.0;
            const double c = std::cos(a), s = std::sin(a);
            *sx = cx + c * dx + s * dy;
            *sy = cy - s * dx + c * dy;
            break;
        }
        case AugKind::scale:
            *sx = cx + dx / value;
            *sy = cy + dy / value;
            break;
        case AugKind::translate:
            *sx = x - value * w;
            *sy = y - value * h;
            break;
        default:
            *sx = x;
            *sy = y;
            break;
    }
}

std::vector<double> warped_plane(const std::vector<double>& plane, int h, int w, AugKind kind,
                                 double value) {
    std::vector<double> out(plane.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double sy, sx;
            source_coords(kind, value, h, w, y, x, &sy, &sx);
            out[static_cast<size_t>(y) * w + x] = bilinear_at(plane.data(), h, w, sy, sx);
        }
    return out;
}

// Per-image target probabilities with one model pass per chunk.
std::vector<double> probs_multi(const Model& m, const std::vector<Tensor>& images,
                                const std::vector<int>& targets) {
    std::vector<double> out;
    out.reserve(images.size());
    const size_t isz = static_cast<size_t>(m.in_ch) * m.in_h * m.in_w;
    const size_t chunk = 64;
    for (size_t start = 0; start < images.size(); start += chunk) {
        const size_t n = std::min(chunk, images.size() - start);
        Tensor batch({static_cast<int>(n), m.in_ch, m.in_h, m.in_w});
        for (size_t i = 0; i < n; ++i)
            std::copy(images[start + i].data(), images[start + i].data() + isz,
                      batch.data() + i * isz);
        ForwardTrace t = forward(m, batch, BnMode::inference);
        for (size_t i = 0; i < n; ++i)
            out.push_back(t.probs[i * static_cast<size_t>(m.classes) +
                                  static_cast<size_t>(targets[start + i])]);
    }
    return out;
}

// Shifts a curve additively so its maximum is exactly 1.
void shift_to_one(std::vector<double>& curve) {
    size_t am = 0;
    for (size_t i = 1; i < curve.size(); ++i)
        if (curve[i] > curve[am]) am = i;
    const double shift = 1.0 - curve[am];
    for (double& v : curve) v += shift;
    curve[am] = 1.0;
}

// Trapezoid over a uniformly spaced grid.
double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
    double area = 0.0;
    for (size_t i = 0; i + 1 < x.size(); ++i)
        area += 0.5 * (y[i] + y[i + 1]) * (x[i + 1] - x[i]);
    return area;
}

}  // namespace

AugKind aug_kind_from_string(const std::string& s) {
    for (AugKind k : all_aug_kinds())
        if (to_string(k) == s) return k;
    throw InvalidArgument("unknown augmentation: " + s);
}

std::string to_string(AugKind k) {
    switch (k) {
        case AugKind::brightness: return "brightness";
        case AugKind::hue: return "hue";
        case AugKind::saturation: return "saturation";
        case AugKind::rotate: return "rotate";
        case AugKind::scale: return "scale";
        case AugKind::translate: return "translate";
    }
    throw InvalidArgument("unknown augmentation kind");
}

const std::vector<AugKind>& all_aug_kinds() {
    static const std::vector<AugKind> kinds = {AugKind::brightness, AugKind::hue,
                                               AugKind::saturation, AugKind::rotate,
                                               AugKind::scale,      AugKind::translate};
    return kinds;
}

bool aug_is_geometric(AugKind k) {
    return k == AugKind::rotate || k == AugKind::scale || k == AugKind::translate;
}

double aug_identity(AugKind k) { return k == AugKind::scale ? 1.0 : 0.0; }

double aug_domain_bound(AugKind k) {
    switch (k) {
        case AugKind::brightness: return 255.0;
        case AugKind::hue: return 180.0;
        case AugKind::saturation: return 255.0;
        case AugKind::rotate: return 180.0;
        case AugKind::scale: return 0.9;  // factors stay in [0.1, 1.9]
        case AugKind::translate: return 0.5;
    }
    throw InvalidArgument("unknown augmentation kind");
}

AugImage apply_augmentation(const Tensor& image, const std::vector<std::uint8_t>& fg, AugKind kind,
                            double value) {
    if (image.rank() != 3) throw InvalidArgument("image must be [C,H,W]");
    const int ch = image.dim(0), h = image.dim(1), w = image.dim(2);
    const size_t plane = static_cast<size_t>(h) * w;
    if (fg.size() != plane) throw InvalidArgument("mask size does not match image");
    if (kind == AugKind::scale && !(value > 0.0))
        throw InvalidArgument("scale factor must be positive");
    if (!std::isfinite(value)) throw InvalidArgument("augmentation value must be finite");

    AugImage out{image, fg};
    if (value == aug_identity(kind)) return out;

    if (kind == AugKind::brightness) {
        const double d = value / 255.0;
        for (size_t i = 0; i < plane; ++i) {
            if (!fg[i]) continue;
            for (int c = 0; c < ch; ++c) {
                double& px = out.image[static_cast<size_t>(c) * plane + i];
                px = std::clamp(px + d, 0.0, 1.0);
            }
        }
        return out;
    }
    if (kind == AugKind::hue || kind == AugKind::saturation) {
        if (ch != 3) throw InvalidArgument("color augmentations need a 3-channel image");
        for (size_t i = 0; i < plane; ++i) {
            if (!fg[i]) continue;
            Hsv hsv = rgb_to_hsv(out.image[i], out.image[plane + i], out.image[2 * plane + i]);
            if (kind == AugKind::hue) {
                hsv.h = std::fmod(hsv.h + value, 360.0);
                if (hsv.h < 0.0) hsv.h += 360.0;
            } else {
                hsv.s = std::clamp(hsv.s * (1.0 + value / 255.0), 0.0, 1.0);
            }
            hsv_to_rgb(hsv, &out.image[i], &out.image[plane + i], &out.image[2 * plane + i]);
        }
        return out;
    }

    // Geometric warp of every channel and the mask.
    std::vector<double> mask_plane(plane);
    for (size_t i = 0; i < plane; ++i) mask_plane[i] = fg[i] ? 1.0 : 0.0;
    const std::vector<double> warped_mask = warped_plane(mask_plane, h, w, kind, value);
    for (size_t i = 0; i < plane; ++i) out.fg[i] = warped_mask[i] >= 0.5 ? 1 : 0;

    for (int c = 0; c < ch; ++c) {
        std::vector<double> src(image.data() + static_cast<size_t>(c) * plane,
                                image.data() + static_cast<size_t>(c + 1) * plane);
        const std::vector<double> dst = warped_plane(src, h, w, kind, value);
        for (size_t i = 0; i < plane; ++i)
            out.image[static_cast<size_t>(c) * plane + i] = out.fg[i] ? dst[i] : 0.0;
    }
    return out;
}

std::vector<double> warp_plane(const std::vector<double>& plane, int h, int w, AugKind kind,
                               double value) {
    if (plane.size() != static_cast<size_t>(h) * w)
        throw InvalidArgument("plane size does not match its dimensions");
    if (!aug_is_geometric(kind) || value == aug_identity(kind)) return plane;
    if (kind == AugKind::scale && !(value > 0.0))
        throw InvalidArgument("scale factor must be positive");
    return warped_plane(plane, h, w, kind, value);
}

std::vector<double> augmentation_grid(AugKind kind, double half_width, int k) {
    if (k < 3 || k % 2 == 0) throw InvalidArgument("grid size must be odd and at least 3");
    if (!(half_width > 0.0)) throw InvalidArgument("half width must be positive");
    const double id = aug_identity(kind);
    const int half = k / 2;
    const double step = half_width / half;
    std::vector<double> grid(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) grid[static_cast<size_t>(i)] = id + (i - half) * step;
    return grid;
}

CalibrationResult calibrate_interval(const Model& m, const std::vector<Tensor>& images,
                                     const std::vector<std::vector<std::uint8_t>>& fgs,
                                     const std::vector<int>& targets, AugKind kind,
                                     double target_drop) {
    if (!(target_drop > 0.0)) throw InvalidArgument("target drop must be positive");
    if (images.empty() || images.size() != fgs.size() || images.size() != targets.size())
        throw InvalidArgument("calibration inputs must align");
    const double id = aug_identity(kind);
    const std::vector<double> p0 = probs_multi(m, images, targets);

    const auto drop_at = [&](double a) {
        double worst = -std::numeric_limits<double>::infinity();
        for (int sign : {1, -1}) {
            std::vector<Tensor> augs;
            augs.reserve(images.size());
            for (size_t i = 0; i < images.size(); ++i)
                augs.push_back(
                    apply_augmentation(images[i], fgs[i], kind, id + sign * a).image);
            const std::vector<double> p = probs_multi(m, augs, targets);
            double mean = 0.0;
            for (size_t i = 0; i < p.size(); ++i) mean += p0[i] - p[i];
            worst = std::max(worst, mean / static_cast<double>(p.size()));
        }
        return worst;
    };

    const double bound = aug_domain_bound(kind);
    const double fb = drop_at(bound);
    if (fb < target_drop) return {bound, true, fb};

    double lo = 0.0, hi = bound;
    for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = drop_at(mid);
        if (std::fabs(fm - target_drop) <= 0.005) return {mid, false, fm};
        (fm < target_drop ? lo : hi) = mid;
    }
    return {hi, false, drop_at(hi)};
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw InvalidArgument("correlation inputs must align");
    const size_t n = a.size();
    if (n < 2) throw MetricUndefined("too few points for a correlation");
    // An exactly constant side has zero variance even when the mean rounds.
    const auto [alo, ahi] = std::minmax_element(a.begin(), a.end());
    const auto [blo, bhi] = std::minmax_element(b.begin(), b.end());
    if (*alo == *ahi || *blo == *bhi)
        throw MetricUndefined("zero variance, correlation undefined");
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va <= 0.0 || vb <= 0.0) throw MetricUndefined("zero variance, correlation undefined");
    return cov / std::sqrt(va * vb);
}

RobustnessOutcome robustness_score(const Model& m, const Tensor& image,
                                   const std::vector<std::uint8_t>& fg, int target,
                                   const PlaneExplainer& explainer, AugKind kind,
                                   double half_width, int k) {
    if (image.rank() != 3 || image.dim(0) != m.in_ch || image.dim(1) != m.in_h ||
        image.dim(2) != m.in_w)
        throw InvalidArgument("image does not match the model input");
    if (target < 0 || target >= m.classes)
        throw InvalidArgument("target class " + std::to_string(target) + " out of range");
    const int h = image.dim(1), w = image.dim(2);
    const size_t plane = static_cast<size_t>(h) * w;
    if (fg.size() != plane) throw InvalidArgument("mask size does not match image");

    RobustnessOutcome out;
    out.grid = augmentation_grid(kind, half_width, k);
    const double id = aug_identity(kind);

    const double p0 = predict_probs(m, image)[static_cast<size_t>(target)];
    if (p0 <= kTinyProb) throw MetricUndefined("target probability is ~0");

    const std::vector<double> base = explainer(image, fg);
    if (base.size() != plane) throw InvalidArgument("explainer returned a mismatched plane");

    for (double v : out.grid) {
        if (v == id) {
            std::vector<double> xs, ys;
            for (size_t i = 0; i < plane; ++i) {
                if (!fg[i]) continue;
                xs.push_back(base[i]);
                ys.push_back(base[i]);
            }
            out.correlation.push_back(pearson(xs, ys));
            out.probability.push_back(1.0);
            continue;
        }
        const AugImage aug = apply_augmentation(image, fg, kind, v);
        bool any = false;
        for (size_t i = 0; i < plane; ++i)
            if (aug.fg[i]) {
                any = true;
                break;
            }
        if (!any) throw MetricUndefined("augmentation removed the whole foreground");

        const std::vector<double> ev = explainer(aug.image, aug.fg);
        if (ev.size() != plane) throw InvalidArgument("explainer returned a mismatched plane");
        const bool geo = aug_is_geometric(kind);
        const std::vector<double> ref = geo ? warp_plane(base, h, w, kind, v) : base;
        const std::vector<std::uint8_t>& ref_fg = geo ? aug.fg : fg;

        std::vector<double> xs, ys;
        for (size_t i = 0; i < plane; ++i) {
            if (!aug.fg[i] || !ref_fg[i]) continue;
            xs.push_back(ev[i]);
            ys.push_back(ref[i]);
        }
        out.correlation.push_back(pearson(xs, ys));
        const double p = predict_probs(m, aug.image)[static_cast<size_t>(target)];
        out.probability.push_back(std::min(1.0, p / p0));
    }

    shift_to_one(out.correlation);
    shift_to_one(out.probability);
    const double num = trapezoid(out.grid, out.correlation);
    const double den = trapezoid(out.grid, out.probability);
    if (den <= 0.0) throw MetricUndefined("probability curve collapsed");
    out.score = std::max(0.0, num / den);
    return out;
}

}  // namespace heatrank
