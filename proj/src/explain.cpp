#include "heatrank/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "heatrank/error.hpp"
#include "heatrank/rng.hpp"

namespace heatrank {

namespace {

const std::vector<std::string> kMethodIds = {
    "gradients",
    "input-x-gradients",
    "integrated-gradients",
    "deconvolution",
    "guided-backprop",
    "guided-gradcam",
    "occlusion",
    "lime",
    "kernel-shap",
    "lrp-epsilon-plus-flat",
    "lrp-epsilon-gamma-box",
    "lrp-epsilon-alpha2beta1-flat",
    "mean-aggregate",
};

Tensor integrated_gradients(const MethodSpec& spec, const Model& m, const Tensor& image,
                            int target) {
    const int S = spec.ig_steps;
    if (S < 1) throw InvalidArgument("integrated-gradients needs at least one step");
    const int C = m.in_ch, H = m.in_h, W = m.in_w;
    const size_t isz = static_cast<size_t>(C) * H * W;

    Tensor mean_grad({C, H, W});
    const int chunk = 64;
    for (int start = 0; start < S; start += chunk) {
        const int n = std::min(chunk, S - start);
        Tensor batch({n, C, H, W});
        for (int s = 0; s < n; ++s) {
            const double alpha = (static_cast<double>(start + s) + 0.5) / static_cast<double>(S);
            double* dst = batch.data() + static_cast<size_t>(s) * isz;
            for (size_t i = 0; i < isz; ++i) dst[i] = alpha * image[i];
        }
        ForwardTrace t = forward(m, batch, BnMode::inference);
        std::vector<int> targets(static_cast<size_t>(n), target);
        std::vector<Tensor> grads = backward_trace(m, t, targets, ReluGrad::standard);
        const Tensor& g = grads[0];
        for (int s = 0; s < n; ++s)
            for (size_t i = 0; i < isz; ++i)
                mean_grad[i] += g[static_cast<size_t>(s) * isz + i] / static_cast<double>(S);
    }
    for (size_t i = 0; i < isz; ++i) mean_grad[i] *= image[i];  // baseline is 0
    return mean_grad;
}

Tensor guided_gradcam(const Model& m, const Tensor& image, int target) {
    const int li = m.last_conv_index();
    if (li < 0 || li + 1 >= static_cast<int>(m.layers.size()))
        throw InvalidArgument("guided-gradcam needs a convolution before the head");

    ForwardTrace trace = forward(m, image, BnMode::inference);
    std::vector<Tensor> grads = backward_trace(m, trace, {target}, ReluGrad::standard);

    const Tensor& act = trace.inputs[static_cast<size_t>(li) + 1];   // conv output
    const Tensor& gact = grads[static_cast<size_t>(li) + 1];
    const int K = act.dim(1), sh = act.dim(2), sw = act.dim(3);
    const size_t plane = static_cast<size_t>(sh) * sw;

    std::vector<double> cam(plane, 0.0);
    for (int k = 0; k < K; ++k) {
        const double* a = act.data() + static_cast<size_t>(k) * plane;
        const double* g = gact.data() + static_cast<size_t>(k) * plane;
        double alpha = 0.0;
        for (size_t i = 0; i < plane; ++i) alpha += g[i];
        alpha /= static_cast<double>(plane);
        for (size_t i = 0; i < plane; ++i) cam[i] += alpha * a[i];
    }
    for (double& v : cam) v = std::max(v, 0.0);

    std::vector<double> up = bilinear_resize(cam, sh, sw, m.in_h, m.in_w);

    Tensor heat = input_gradient(m, image, target, ReluGrad::guided);
    const size_t iplane = static_cast<size_t>(m.in_h) * m.in_w;
    for (int c = 0; c < m.in_ch; ++c)
        for (size_t i = 0; i < iplane; ++i) heat[static_cast<size_t>(c) * iplane + i] *= up[i];
    return heat;
}

Tensor occlusion(const MethodSpec& spec, const Model& m, const Tensor& image,
                 const std::vector<uint8_t>& fg, int target) {
    const int win = spec.occlusion_window;
    if (win < 1 || win % 2 == 0) throw InvalidArgument("occlusion window must be odd and positive");
    const int r = win / 2;
    const int C = m.in_ch, H = m.in_h, W = m.in_w;
    const size_t plane = static_cast<size_t>(H) * W;

    const double p0 = predict_probs(m, image)[static_cast<size_t>(target)];
    const std::vector<double> fill = foreground_channel_means(image, fg);

    std::vector<double> acc(plane, 0.0);
    const int chunk = 64;
    std::vector<std::pair<int, int>> centers;
    centers.reserve(plane);
    for (int cy = 0; cy < H; ++cy)
        for (int cx = 0; cx < W; ++cx) centers.emplace_back(cy, cx);

    for (size_t start = 0; start < centers.size(); start += static_cast<size_t>(chunk)) {
        const size_t n = std::min(static_cast<size_t>(chunk), centers.size() - start);
        Tensor batch({static_cast<int>(n), C, H, W});
        for (size_t s = 0; s < n; ++s) {
            double* dst = batch.data() + s * static_cast<size_t>(C) * plane;
            std::memcpy(dst, image.data(), static_cast<size_t>(C) * plane * sizeof(double));
            const auto [cy, cx] = centers[start + s];
            for (int y = std::max(0, cy - r); y <= std::min(H - 1, cy + r); ++y)
                for (int x = std::max(0, cx - r); x <= std::min(W - 1, cx + r); ++x)
                    for (int c = 0; c < C; ++c)
                        dst[static_cast<size_t>(c) * plane + static_cast<size_t>(y) * W + x] =
                            fill[static_cast<size_t>(c)];
        }
        ForwardTrace t = forward(m, batch, BnMode::inference);
        for (size_t s = 0; s < n; ++s) {
            const double delta =
                p0 - t.probs[s * static_cast<size_t>(m.classes) + static_cast<size_t>(target)];
            const auto [cy, cx] = centers[start + s];
            for (int y = std::max(0, cy - r); y <= std::min(H - 1, cy + r); ++y)
                for (int x = std::max(0, cx - r); x <= std::min(W - 1, cx + r); ++x)
                    acc[static_cast<size_t>(y) * W + x] += delta;
        }
    }

    Tensor heat({C, H, W});
    for (int c = 0; c < C; ++c)
        for (size_t i = 0; i < plane; ++i) heat[static_cast<size_t>(c) * plane + i] = acc[i];
    return heat;
}

// Solves (X^T W X + lambda*I') beta = X^T W y with the intercept column
// unregularized, via Cholesky. X columns: [1, z_1..z_k].
std::vector<double> wls_ridge(const std::vector<std::vector<uint8_t>>& rows,
                              const std::vector<double>& y, const std::vector<double>& w,
                              double lambda) {
    const size_t n = rows.size();
    const size_t k = rows.empty() ? 0 : rows[0].size();
    const size_t d = k + 1;
    std::vector<double> ata(d * d, 0.0), aty(d, 0.0), x(d);
    for (size_t i = 0; i < n; ++i) {
        if (w[i] == 0.0) continue;
        x[0] = 1.0;
        for (size_t j = 0; j < k; ++j) x[j + 1] = rows[i][j] ? 1.0 : 0.0;
        for (size_t a = 0; a < d; ++a) {
            if (x[a] == 0.0) continue;
            const double wa = w[i] * x[a];
            for (size_t b = a; b < d; ++b) ata[a * d + b] += wa * x[b];
            aty[a] += wa * y[i];
        }
    }
    for (size_t a = 1; a < d; ++a) ata[a * d + a] += lambda;
    for (size_t a = 0; a < d; ++a)
        for (size_t b = 0; b < a; ++b) ata[a * d + b] = ata[b * d + a];

    // Cholesky in place: ata = L L^T.
    for (size_t i = 0; i < d; ++i) {
        for (size_t j = 0; j <= i; ++j) {
            double s = ata[i * d + j];
            for (size_t p = 0; p < j; ++p) s -= ata[i * d + p] * ata[j * d + p];
            if (i == j) {
                if (s <= 0.0) throw Error("surrogate fit is singular");
                ata[i * d + i] = std::sqrt(s);
            } else {
                ata[i * d + j] = s / ata[j * d + j];
            }
        }
    }
    std::vector<double> beta(d);
    for (size_t i = 0; i < d; ++i) {
        double s = aty[i];
        for (size_t p = 0; p < i; ++p) s -= ata[i * d + p] * beta[p];
        beta[i] = s / ata[i * d + i];
    }
    for (size_t ii = d; ii-- > 0;) {
        double s = beta[ii];
        for (size_t p = ii + 1; p < d; ++p) s -= ata[p * d + ii] * beta[p];
        beta[ii] = s / ata[ii * d + ii];
    }
    return beta;
}

Tensor masked_image(const Tensor& image, const std::vector<std::vector<int>>& members,
                    const std::vector<uint8_t>& on, const std::vector<double>& fill) {
    Tensor out = image;
    const size_t plane = static_cast<size_t>(image.dim(1)) * image.dim(2);
    for (size_t s = 0; s < on.size(); ++s) {
        if (on[s]) continue;
        for (int px : members[s + 1])
            for (int c = 0; c < image.dim(0); ++c)
                out[static_cast<size_t>(c) * plane + static_cast<size_t>(px)] =
                    fill[static_cast<size_t>(c)];
    }
    return out;
}

double log_binom(int n, int k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

Tensor surrogate_explain(const MethodSpec& spec, const Model& m, const Tensor& image,
                         const std::vector<uint8_t>& fg, int target, const SegmentMap& segments,
                         uint64_t seed, bool shapley) {
    const int k = segments.count;
    if (k < 1) throw InvalidArgument("surrogate explainers need at least one segment");
    const auto members = segment_members(segments);
    const std::vector<double> fill = foreground_channel_means(image, fg);
    const int n = shapley ? spec.shap_samples : spec.lime_samples;
    if (n < 1) throw InvalidArgument("surrogate explainers need at least one sample");

    Rng rng(seed_mix(seed, shapley ? "kernel-shap" : "lime"));
    std::vector<std::vector<uint8_t>> rows;
    rows.reserve(static_cast<size_t>(n) + 2);
    for (int i = 0; i < n; ++i) {
        std::vector<uint8_t> z(static_cast<size_t>(k));
        for (auto& b : z) b = rng.uniform() < 0.5 ? 1 : 0;
        rows.push_back(std::move(z));
    }

    std::vector<double> weights(rows.size());
    if (shapley) {
        // Shapley kernel; the degenerate coalitions get weight through the
        // anchor rows below, so sampled duplicates are zeroed here.
        double total = 0.0;
        for (size_t i = 0; i < rows.size(); ++i) {
            int s = 0;
            for (uint8_t b : rows[i]) s += b;
            if (s == 0 || s == k) {
                weights[i] = 0.0;
                continue;
            }
            weights[i] = std::exp(std::log(static_cast<double>(k - 1)) - log_binom(k, s) -
                                  std::log(static_cast<double>(s)) -
                                  std::log(static_cast<double>(k - s)));
            total += weights[i];
        }
        if (total > 0.0)
            for (double& wv : weights) wv *= static_cast<double>(rows.size()) / total;
    } else {
        const double sigma = spec.lime_kernel_width;
        double total = 0.0;
        for (size_t i = 0; i < rows.size(); ++i) {
            int s = 0;
            for (uint8_t b : rows[i]) s += b;
            // Cosine distance between the mask and the all-on vector.
            const double d = s == 0 ? 1.0 : 1.0 - std::sqrt(static_cast<double>(s) / k);
            weights[i] = std::exp(-(d * d) / (sigma * sigma));
            total += weights[i];
        }
        for (double& wv : weights) wv *= static_cast<double>(rows.size()) / total;
    }
    if (shapley) {
        rows.emplace_back(static_cast<size_t>(k), uint8_t{1});
        rows.emplace_back(static_cast<size_t>(k), uint8_t{0});
        weights.push_back(spec.anchor_weight);
        weights.push_back(spec.anchor_weight);
    }

    std::vector<Tensor> images;
    images.reserve(rows.size());
    for (const auto& z : rows) images.push_back(masked_image(image, members, z, fill));
    const std::vector<double> y = batched_target_probs(m, images, target);

    const std::vector<double> beta = wls_ridge(rows, y, weights, spec.ridge_lambda);

    const int C = m.in_ch;
    const size_t plane = static_cast<size_t>(m.in_h) * m.in_w;
    Tensor heat({C, m.in_h, m.in_w});
    for (int s = 0; s < k; ++s)
        for (int px : members[static_cast<size_t>(s) + 1])
            for (int c = 0; c < C; ++c)
                heat[static_cast<size_t>(c) * plane + static_cast<size_t>(px)] =
                    beta[static_cast<size_t>(s) + 1];
    return heat;
}

}  // namespace

std::vector<double> bilinear_resize(const std::vector<double>& src, int sh, int sw, int dh,
                                    int dw) {
    if (static_cast<int>(src.size()) != sh * sw) throw InvalidArgument("bilinear_resize: bad src size");
    std::vector<double> dst(static_cast<size_t>(dh) * dw);
    for (int y = 0; y < dh; ++y) {
        double sy = (static_cast<double>(y) + 0.5) * sh / dh - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(sh - 1));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, sh - 1);
        const double fy = sy - y0;
        for (int x = 0; x < dw; ++x) {
            double sx = (static_cast<double>(x) + 0.5) * sw / dw - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(sw - 1));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, sw - 1);
            const double fx = sx - x0;
            const double top = src[static_cast<size_t>(y0) * sw + x0] * (1 - fx) +
                               src[static_cast<size_t>(y0) * sw + x1] * fx;
            const double bot = src[static_cast<size_t>(y1) * sw + x0] * (1 - fx) +
                               src[static_cast<size_t>(y1) * sw + x1] * fx;
            dst[static_cast<size_t>(y) * dw + x] = top * (1 - fy) + bot * fy;
        }
    }
    return dst;
}

MethodSpec method_spec(const std::string& id) {
    if (std::find(kMethodIds.begin(), kMethodIds.end(), id) == kMethodIds.end())
        throw InvalidArgument("unknown method id: " + id);
    MethodSpec s;
    s.id = id;
    return s;
}

const std::vector<std::string>& all_method_ids() { return kMethodIds; }

bool method_needs_segments(const std::string& id) { return id == "lime" || id == "kernel-shap"; }

bool method_uses_probability(const std::string& id) {
    return id == "occlusion" || id == "lime" || id == "kernel-shap";
}

bool method_is_lrp(const std::string& id) { return id.rfind("lrp-", 0) == 0; }

Heatmap explain(const MethodSpec& spec, const Model& m, const Tensor& image,
                const std::vector<uint8_t>& fg, int target, const SegmentMap* segments,
                uint64_t seed) {
    if (image.rank() != 3 || image.dim(0) != m.in_ch || image.dim(1) != m.in_h ||
        image.dim(2) != m.in_w)
        throw InvalidArgument("explain: image shape " + image.shape_str() + " does not match model");
    if (target < 0 || target >= m.classes) throw InvalidArgument("explain: target class out of range");
    const size_t plane = static_cast<size_t>(m.in_h) * m.in_w;
    if (!fg.empty() && fg.size() != plane) throw InvalidArgument("explain: foreground mask size mismatch");
    if (spec.id == "mean-aggregate")
        throw InvalidArgument("mean-aggregate is derived from the other methods by the evaluator");
    if (method_needs_segments(spec.id)) {
        if (segments == nullptr) throw InvalidArgument(spec.id + " requires a segment map");
        if (segments->h != m.in_h || segments->w != m.in_w)
            throw InvalidArgument("segment map size does not match the image");
    }
    if (method_is_lrp(spec.id) && m.has_batchnorm())
        throw InvalidArgument(spec.id + " requires a canonized model (merge batchnorm first)");

    Tensor values;
    if (spec.id == "gradients") {
        values = input_gradient(m, image, target, ReluGrad::standard);
    } else if (spec.id == "input-x-gradients") {
        values = input_gradient(m, image, target, ReluGrad::standard);
        for (size_t i = 0; i < values.size(); ++i) values[i] *= image[i];
    } else if (spec.id == "integrated-gradients") {
        values = integrated_gradients(spec, m, image, target);
    } else if (spec.id == "deconvolution") {
        values = input_gradient(m, image, target, ReluGrad::deconv);
    } else if (spec.id == "guided-backprop") {
        values = input_gradient(m, image, target, ReluGrad::guided);
    } else if (spec.id == "guided-gradcam") {
        values = guided_gradcam(m, image, target);
    } else if (spec.id == "occlusion") {
        values = occlusion(spec, m, image, fg, target);
    } else if (spec.id == "lime" || spec.id == "kernel-shap") {
        values = surrogate_explain(spec, m, image, fg, target, *segments, seed,
                                   spec.id == "kernel-shap");
    } else if (method_is_lrp(spec.id)) {
        values = lrp_explain(m, image, target, lrp_composite_from_id(spec.id));
    } else {
        throw InvalidArgument("unknown method id: " + spec.id);
    }

    if (!fg.empty()) {
        for (int c = 0; c < m.in_ch; ++c)
            for (size_t i = 0; i < plane; ++i)
                if (!fg[i]) values[static_cast<size_t>(c) * plane + i] = 0.0;
    }
    if (!values.all_finite()) throw Error("explain produced non-finite values for " + spec.id);

    Heatmap h;
    h.values = std::move(values);
    h.method = spec.id;
    h.target = target;
    h.fg = fg;
    return h;
}

}  // namespace heatrank
